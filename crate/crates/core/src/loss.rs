//! Cross entropy, balanced cross entropy and focal loss.
//!
//! The binary forms follow the piecewise convention `F_y(t) = t` for
//! `y = 1` and `1 - t` otherwise:
//!
//! ```text
//! CEL(p, y)          = -ln F_y(p)
//! BCEL(p, α, y)      = -F_y(α) ln F_y(p)
//! FL(p, α, γ, y)     = -F_y(α) (1 - F_y(p))^γ ln F_y(p)
//! ```
//!
//! The multi-class forms apply the same expressions to the softmax
//! probability of the true class with a per-class weight `α_c`, averaged
//! over the batch.

use crate::error::{Error, Result};
use crate::ops::softmax;
use crate::tensor::{Real, Tensor};

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    Cel,
    Bcel,
    Focal,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Cel => "cel",
            LossKind::Bcel => "bcel",
            LossKind::Focal => "focal",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cel" => Ok(LossKind::Cel),
            "bcel" => Ok(LossKind::Bcel),
            "focal" | "fl" => Ok(LossKind::Focal),
            _ => Err(Error::Config(format!("unknown loss `{s}` (expected cel, bcel or focal)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AlphaMode {
    /// Use [`LossConfig::alpha`] as given.
    Fixed,
    /// Derive α from training-set class counts with [`alpha_from_frequency`].
    InverseFrequency,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Per-class weights; a single value is broadcast to every class.
    pub alpha: Vec<f64>,
    pub alpha_mode: AlphaMode,
    pub gamma: f64,
}

impl LossConfig {
    pub fn cel() -> Self {
        LossConfig {
            kind: LossKind::Cel,
            alpha: vec![1.0],
            alpha_mode: AlphaMode::Fixed,
            gamma: 0.0,
        }
    }

    pub fn bcel(alpha: Vec<f64>) -> Self {
        LossConfig {
            kind: LossKind::Bcel,
            alpha,
            alpha_mode: AlphaMode::Fixed,
            gamma: 0.0,
        }
    }

    pub fn focal(alpha: Vec<f64>, gamma: f64) -> Self {
        LossConfig {
            kind: LossKind::Focal,
            alpha,
            alpha_mode: AlphaMode::Fixed,
            gamma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::Range(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if let Some(a) = self.alpha.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::Range(format!("alpha entries must lie in [0, 1], got {a}")));
        }
        if self.alpha.is_empty() {
            return Err(Error::Config("alpha must hold at least one value".into()));
        }
        Ok(())
    }

    /// Per-class weights for `k` classes.
    pub fn alpha_for(&self, k: usize) -> Result<Vec<f64>> {
        match self.alpha.len() {
            1 => Ok(vec![self.alpha[0]; k]),
            n if n == k => Ok(self.alpha.clone()),
            n => Err(Error::Config(format!("{n} alpha values supplied for {k} classes"))),
        }
    }
}

/// `F_y(t)`.
pub fn piecewise_f(y: u8, t: f64) -> f64 {
    if y == 1 {
        t
    } else {
        1.0 - t
    }
}

fn check_binary(p: f64, y: u8) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Range(format!("probability must lie in [0, 1], got {p}")));
    }
    if y > 1 {
        return Err(Error::Range(format!("binary label must be 0 or 1, got {y}")));
    }
    Ok(p.clamp(EPS, 1.0 - EPS))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::Range(format!("alpha must lie in [0, 1], got {alpha}")))
    }
}

pub fn cel_binary(p: f64, y: u8) -> Result<f64> {
    let p = check_binary(p, y)?;
    Ok(-piecewise_f(y, p).ln())
}

pub fn bcel_binary(p: f64, alpha: f64, y: u8) -> Result<f64> {
    let p = check_binary(p, y)?;
    check_alpha(alpha)?;
    Ok(-piecewise_f(y, alpha) * piecewise_f(y, p).ln())
}

pub fn focal_binary(p: f64, alpha: f64, gamma: f64, y: u8) -> Result<f64> {
    let p = check_binary(p, y)?;
    check_alpha(alpha)?;
    if !(gamma >= 0.0) {
        return Err(Error::Range(format!("gamma must be >= 0, got {gamma}")));
    }
    let fp = piecewise_f(y, p);
    Ok(-piecewise_f(y, alpha) * (1.0 - fp).powf(gamma) * fp.ln())
}

/// Batch-mean loss and its gradient with respect to the logits.
#[derive(Debug, Clone)]
pub struct LossOutput<T> {
    pub loss: f64,
    pub grad: Tensor<T>,
}

pub fn loss_multiclass<T: Real>(
    logits: &Tensor<T>,
    labels: &[usize],
    cfg: &LossConfig,
) -> Result<LossOutput<T>> {
    cfg.validate()?;
    let (n, k) = logits.shape2()?;
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} logit rows", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&c| c >= k) {
        return Err(Error::Range(format!("label {bad} outside [0, {k})")));
    }
    let (alpha, gamma) = match cfg.kind {
        LossKind::Cel => (vec![1.0; k], 0.0),
        LossKind::Bcel => (cfg.alpha_for(k)?, 0.0),
        LossKind::Focal => (cfg.alpha_for(k)?, cfg.gamma),
    };

    let probs = softmax(logits)?;
    let p = probs.data();
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(n * k);
    for (i, &c) in labels.iter().enumerate() {
        let row = &p[i * k..(i + 1) * k];
        let q = row[c].clamp(EPS, 1.0 - EPS);
        let a = alpha[c];
        let modulating = (1.0 - q).powf(gamma);
        total += -a * modulating * q.ln();
        // dL/dz_j = -a [ (1-q)^γ - γ (1-q)^(γ-1) q ln q ] (δ_cj - p_j)
        let focus = if gamma == 0.0 {
            modulating
        } else {
            modulating - gamma * (1.0 - q).powf(gamma - 1.0) * q * q.ln()
        };
        let scale = -a * focus / n as f64;
        for (j, &pj) in row.iter().enumerate() {
            let delta = if j == c { 1.0 } else { 0.0 };
            grad.push(T::from_f64(scale * (delta - pj)));
        }
    }
    let loss = total / n as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    Ok(LossOutput {
        loss,
        grad: Tensor::from_vec(&[n, k], grad)?,
    })
}

/// `α_c = min_count / count_c`: inversely proportional to class frequency,
/// largest weight exactly 1.
pub fn alpha_from_frequency(counts: &[usize]) -> Result<Vec<f64>> {
    if counts.is_empty() {
        return Err(Error::Config("no classes".into()));
    }
    if let Some(c) = counts.iter().position(|&v| v == 0) {
        return Err(Error::Range(format!("class {c} has zero samples")));
    }
    let min = *counts.iter().min().expect("non-empty") as f64;
    Ok(counts.iter().map(|&c| min / c as f64).collect())
}
