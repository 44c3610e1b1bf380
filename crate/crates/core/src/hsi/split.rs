//! Seeded per-class stratified splitting.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::scene::HsiScene;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pixel {
    pub row: usize,
    pub col: usize,
    /// Raster label, `1..=K`.
    pub label: i32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Format(format!("unknown split `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    pub train: Vec<Pixel>,
    pub val: Vec<Pixel>,
    pub test: Vec<Pixel>,
    pub seed: u64,
    pub train_ratio: f64,
    pub val_ratio: f64,
    pub min_per_class: usize,
    /// Classes that were too small for the requested minimum.
    pub warnings: Vec<String>,
}

impl SplitPlan {
    pub fn pixels(&self, split: Split) -> &[Pixel] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    /// Per-class counts of one split, index `c - 1` for class `c`.
    pub fn class_counts(&self, split: Split, num_classes: usize) -> Vec<usize> {
        let mut counts = vec![0; num_classes];
        for p in self.pixels(split) {
            counts[p.label as usize - 1] += 1;
        }
        counts
    }

    /// `split,row,col,label` with one row per pixel.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("split,row,col,label\n");
        for split in Split::ALL {
            for p in self.pixels(split) {
                writeln!(s, "{},{},{},{}", split.name(), p.row, p.col, p.label).unwrap();
            }
        }
        s
    }

    /// Parses the CSV written by [`SplitPlan::to_csv`]. Ratios and seed are
    /// not stored in the CSV and come back as zero.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("split,row,col,label") {
            return Err(Error::Format("split plan must start with `split,row,col,label`".into()));
        }
        let mut plan = SplitPlan {
            train: vec![],
            val: vec![],
            test: vec![],
            seed: 0,
            train_ratio: 0.0,
            val_ratio: 0.0,
            min_per_class: 0,
            warnings: vec![],
        };
        for (i, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::Format(format!("split plan line {}: `{line}`", i + 2));
            if f.len() != 4 {
                return Err(bad());
            }
            let split: Split = f[0].parse()?;
            let p = Pixel {
                row: f[1].parse().map_err(|_| bad())?,
                col: f[2].parse().map_err(|_| bad())?,
                label: f[3].parse().map_err(|_| bad())?,
            };
            if p.label < 1 {
                return Err(bad());
            }
            match split {
                Split::Train => plan.train.push(p),
                Split::Val => plan.val.push(p),
                Split::Test => plan.test.push(p),
            }
        }
        Ok(plan)
    }

    /// Checks that every pixel lies in `scene` with a matching label.
    pub fn check_against(&self, scene: &HsiScene) -> Result<()> {
        for split in Split::ALL {
            for p in self.pixels(split) {
                if p.row >= scene.h || p.col >= scene.w {
                    return Err(Error::Range(format!(
                        "pixel ({}, {}) outside {}×{} scene",
                        p.row, p.col, scene.h, scene.w
                    )));
                }
                if scene.label_at(p.row, p.col) != p.label {
                    return Err(Error::Format(format!(
                        "pixel ({}, {}) has label {} in the plan but {} in the raster",
                        p.row,
                        p.col,
                        p.label,
                        scene.label_at(p.row, p.col)
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Per class `c` with `n` pixels: `train = max(min, ⌊train_ratio·n⌋)`,
/// `val = max(min, ⌊val_ratio·n⌋)` (none when `val_ratio == 0`), rest test.
/// Every class keeps at least one training pixel.
/// Each class list is shuffled with its own ChaCha8 stream of `seed`.
/// A class with `n <= min` goes wholly to train and is reported in
/// [`SplitPlan::warnings`].
pub fn stratified_split(
    scene: &HsiScene,
    train_ratio: f64,
    val_ratio: f64,
    min_per_class: usize,
    seed: u64,
) -> Result<SplitPlan> {
    if !(train_ratio > 0.0 && train_ratio < 1.0) {
        return Err(Error::Range(format!("train ratio must lie in (0, 1), got {train_ratio}")));
    }
    if !(0.0..1.0).contains(&val_ratio) {
        return Err(Error::Range(format!("val ratio must lie in [0, 1), got {val_ratio}")));
    }
    if train_ratio + val_ratio >= 1.0 {
        return Err(Error::Range(format!(
            "train + val ratios must be < 1, got {}",
            train_ratio + val_ratio
        )));
    }

    let mut by_class: Vec<Vec<Pixel>> = vec![Vec::new(); scene.num_classes];
    for row in 0..scene.h {
        for col in 0..scene.w {
            let label = scene.label_at(row, col);
            if label > 0 {
                by_class[label as usize - 1].push(Pixel { row, col, label });
            }
        }
    }

    let mut plan = SplitPlan {
        train: vec![],
        val: vec![],
        test: vec![],
        seed,
        train_ratio,
        val_ratio,
        min_per_class,
        warnings: vec![],
    };
    for (c, mut pixels) in by_class.into_iter().enumerate() {
        let n = pixels.len();
        if n == 0 {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c as u64 + 1);
        pixels.shuffle(&mut rng);

        let n_train = min_per_class.max((train_ratio * n as f64).floor() as usize).max(1);
        if n_train >= n {
            plan.warnings.push(format!(
                "class {} has {n} pixels, not more than the minimum {min_per_class}; all assigned to train",
                c + 1
            ));
            plan.train.extend(pixels);
            continue;
        }
        let n_val = if val_ratio == 0.0 {
            0
        } else {
            min_per_class.max((val_ratio * n as f64).floor() as usize)
        }
        .min(n - n_train);
        let mut rest = pixels.split_off(n_train);
        let test = rest.split_off(n_val);
        plan.train.extend(pixels);
        plan.val.extend(rest);
        plan.test.extend(test);
    }
    if plan.train.is_empty() {
        return Err(Error::Config("scene has no labeled pixels".into()));
    }
    Ok(plan)
}
