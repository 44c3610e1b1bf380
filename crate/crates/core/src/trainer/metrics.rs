//! Confusion matrix and the OA / AA / Kappa summary.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// `confusion[t][p]` counts samples of true class `t` predicted as `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub confusion: Vec<Vec<u64>>,
    /// Recall per class; `NaN` for classes absent from the evaluated set.
    pub per_class: Vec<f64>,
    pub oa: f64,
    /// Mean recall over classes present in the evaluated set.
    pub aa: f64,
    pub kappa: f64,
}

pub fn confusion_matrix(truth: &[usize], pred: &[usize], k: usize) -> Result<Vec<Vec<u64>>> {
    if truth.len() != pred.len() {
        return Err(Error::Shape(format!("{} labels vs {} predictions", truth.len(), pred.len())));
    }
    let mut m = vec![vec![0u64; k]; k];
    for (&t, &p) in truth.iter().zip(pred) {
        if t >= k || p >= k {
            return Err(Error::Range(format!("class index ({t}, {p}) outside [0, {k})")));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

impl EvalReport {
    /// Kappa is `(p_o − p_e) / (1 − p_e)`. When `p_e = 1` (one class in both
    /// truth and predictions) it is 1 for perfect agreement, else 0.
    pub fn from_confusion(confusion: Vec<Vec<u64>>) -> Result<Self> {
        let k = confusion.len();
        if confusion.iter().any(|r| r.len() != k) {
            return Err(Error::Shape("confusion matrix must be square".into()));
        }
        let total: u64 = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(Error::Config("cannot evaluate an empty set".into()));
        }
        let n = total as f64;
        let trace: u64 = (0..k).map(|i| confusion[i][i]).sum();
        let rows: Vec<u64> = confusion.iter().map(|r| r.iter().sum()).collect();
        let cols: Vec<u64> = (0..k).map(|j| confusion.iter().map(|r| r[j]).sum()).collect();

        let per_class: Vec<f64> = (0..k)
            .map(|i| {
                if rows[i] == 0 {
                    f64::NAN
                } else {
                    confusion[i][i] as f64 / rows[i] as f64
                }
            })
            .collect();
        let present: Vec<f64> = per_class.iter().copied().filter(|v| !v.is_nan()).collect();
        let aa = present.iter().sum::<f64>() / present.len() as f64;
        let oa = trace as f64 / n;
        let pe = rows.iter().zip(&cols).map(|(&r, &c)| r as f64 * c as f64).sum::<f64>() / (n * n);
        let kappa = if pe >= 1.0 {
            if trace == total {
                1.0
            } else {
                0.0
            }
        } else {
            (oa - pe) / (1.0 - pe)
        };
        Ok(EvalReport {
            confusion,
            per_class,
            oa,
            aa,
            kappa,
        })
    }

    pub fn from_predictions(truth: &[usize], pred: &[usize], k: usize) -> Result<Self> {
        Self::from_confusion(confusion_matrix(truth, pred, k)?)
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{:<8} {:>8} {:>8}", "class", "samples", "acc%").unwrap();
        for (i, acc) in self.per_class.iter().enumerate() {
            let n: u64 = self.confusion[i].iter().sum();
            writeln!(s, "{:<8} {:>8} {:>8.2}", i + 1, n, acc * 100.0).unwrap();
        }
        writeln!(s, "{:<8} {:>8} {:>8.2}", "OA", self.total(), self.oa * 100.0).unwrap();
        writeln!(s, "{:<8} {:>8} {:>8.2}", "AA", "", self.aa * 100.0).unwrap();
        writeln!(s, "{:<8} {:>8} {:>8.2}", "Kappa", "", self.kappa * 100.0).unwrap();
        s.push_str("\nconfusion (rows = truth, columns = prediction)\n");
        for row in &self.confusion {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:>6}")).collect();
            writeln!(s, "{}", cells.join("")).unwrap();
        }
        s
    }

    /// `metric,value`: one row per class, then OA, AA and Kappa, all ×100.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        for (i, acc) in self.per_class.iter().enumerate() {
            writeln!(s, "class{},{:.4}", i + 1, acc * 100.0).unwrap();
        }
        writeln!(s, "OA,{:.4}", self.oa * 100.0).unwrap();
        writeln!(s, "AA,{:.4}", self.aa * 100.0).unwrap();
        writeln!(s, "Kappa,{:.4}", self.kappa * 100.0).unwrap();
        s
    }
}
