//! Constructed scenes with known spectral signatures, for tests and demos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scene::HsiScene;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Classes are stacked as horizontal stripes: class `c` fills
/// `class_rows[c]` full rows of width `width`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub class_rows: Vec<usize>,
    pub width: usize,
    pub bands: usize,
    /// Half-width of the uniform per-value noise.
    pub noise: f64,
    /// Scales the distance between class signatures; 1 keeps them far apart.
    pub separation: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Three well separated classes, 280 / 280 / 240 pixels on a 20×40 grid.
    pub fn separable(bands: usize, seed: u64) -> Self {
        SyntheticSpec {
            class_rows: vec![7, 7, 6],
            width: 40,
            bands,
            noise: 0.15,
            separation: 1.0,
            seed,
        }
    }

    /// Two overlapping classes with a 20:1 pixel ratio (800 vs 40).
    pub fn imbalanced(bands: usize, seed: u64) -> Self {
        SyntheticSpec {
            class_rows: vec![40, 2],
            width: 20,
            bands,
            noise: 0.5,
            separation: 0.25,
            seed,
        }
    }
}

/// Mean spectrum of class `c`: a distinct sinusoid per class.
pub fn signature(c: usize, bands: usize, separation: f64) -> Vec<f64> {
    let freq = (c + 1) as f64;
    let phase = 0.9 * c as f64;
    (0..bands)
        .map(|b| {
            let t = b as f64 / bands as f64;
            0.5 + 0.4 * separation * (std::f64::consts::TAU * freq * t + phase).sin()
        })
        .collect()
}

pub fn synthetic_scene(spec: &SyntheticSpec) -> Result<HsiScene> {
    if spec.class_rows.is_empty() || spec.class_rows.contains(&0) {
        return Err(Error::Config("every class needs at least one row".into()));
    }
    if spec.width == 0 || spec.bands == 0 {
        return Err(Error::Config("width and bands must be positive".into()));
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(Error::Range(format!("noise must be >= 0, got {}", spec.noise)));
    }
    let h: usize = spec.class_rows.iter().sum();
    let sigs: Vec<Vec<f64>> = (0..spec.class_rows.len())
        .map(|c| signature(c, spec.bands, spec.separation))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut data = Vec::with_capacity(h * spec.width * spec.bands);
    let mut labels = Vec::with_capacity(h * spec.width);
    for (c, &rows) in spec.class_rows.iter().enumerate() {
        for _ in 0..rows * spec.width {
            labels.push(c as i32 + 1);
            for &m in &sigs[c] {
                let e = if spec.noise > 0.0 {
                    rng.gen_range(-spec.noise..=spec.noise)
                } else {
                    0.0
                };
                data.push((m + e) as f32);
            }
        }
    }
    HsiScene::new(Tensor::from_vec(&[h, spec.width, spec.bands], data)?, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_counts() {
        let s = synthetic_scene(&SyntheticSpec::separable(16, 1)).unwrap();
        assert_eq!((s.h, s.w, s.bands), (20, 40, 16));
        assert_eq!(s.class_counts(), vec![280, 280, 240]);
        let s = synthetic_scene(&SyntheticSpec::imbalanced(16, 1)).unwrap();
        assert_eq!(s.class_counts(), vec![800, 40]);
    }

    #[test]
    fn seeded() {
        let a = synthetic_scene(&SyntheticSpec::separable(8, 5)).unwrap();
        assert_eq!(a, synthetic_scene(&SyntheticSpec::separable(8, 5)).unwrap());
        assert_ne!(a, synthetic_scene(&SyntheticSpec::separable(8, 6)).unwrap());
    }

    /// Nearest-signature classification of the raw pixels is already
    /// near perfect, so the classes are linearly separable with margin.
    #[test]
    fn nearest_mean_probe() {
        let spec = SyntheticSpec::separable(16, 2);
        let s = synthetic_scene(&spec).unwrap();
        let sigs: Vec<Vec<f64>> = (0..3).map(|c| signature(c, 16, 1.0)).collect();
        let mut correct = 0;
        for r in 0..s.h {
            for c in 0..s.w {
                let x = s.spectrum(r, c);
                let best = (0..3)
                    .min_by(|&a, &b| {
                        let d = |k: usize| -> f64 {
                            x.iter().zip(&sigs[k]).map(|(&v, &m)| (v as f64 - m).powi(2)).sum()
                        };
                        d(a).total_cmp(&d(b))
                    })
                    .unwrap();
                correct += (best as i32 + 1 == s.label_at(r, c)) as usize;
            }
        }
        assert!(correct as f64 / 800.0 >= 0.9);
    }
}
