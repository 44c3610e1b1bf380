//! Independent oracles shared by the integration tests and the acceptance
//! suite. Nothing here calls into the kernels it checks.

#![allow(dead_code)]

pub mod gradcheck;

use ldwnet_core::hsi::{HsiScene, Pixel};
use ldwnet_core::ops::Conv3dSpec;
use ldwnet_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

// ---------------------------------------------------------------- conv ----

#[derive(Debug, Clone, Copy)]
pub struct ConvCase {
    pub n: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub groups: usize,
    pub extent: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
    pub bias: bool,
}

impl ConvCase {
    pub fn spec(&self) -> Conv3dSpec {
        Conv3dSpec::new(self.c_in, self.c_out, self.kernel)
            .with_groups(self.groups)
            .with_stride(self.stride)
            .with_padding(self.pad)
            .with_bias(self.bias)
    }

    pub fn input_shape(&self) -> [usize; 5] {
        [self.n, self.c_in, self.extent[0], self.extent[1], self.extent[2]]
    }
}

/// Random geometry with extents ≤ 6, groups ∈ {1, 2, 3, C}, strides ≤ 2,
/// pads ≤ 1, and at least one output voxel.
pub fn random_conv_case(rng: &mut ChaCha8Rng) -> ConvCase {
    loop {
        let groups = [1usize, 2, 3, 0][rng.gen_range(0..4)];
        let (c_in, c_out, groups) = if groups == 0 {
            let c = rng.gen_range(1..=6);
            (c, c, c)
        } else {
            (groups * rng.gen_range(1..=2), groups * rng.gen_range(1..=2), groups)
        };
        let extent = [rng.gen_range(1..=6), rng.gen_range(1..=6), rng.gen_range(1..=6)];
        let kernel = [rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(1..=4)];
        let stride = [rng.gen_range(1..=2), rng.gen_range(1..=2), rng.gen_range(1..=2)];
        let pad = [rng.gen_range(0..=1), rng.gen_range(0..=1), rng.gen_range(0..=1)];
        if (0..3).all(|i| extent[i] + 2 * pad[i] >= kernel[i]) {
            return ConvCase {
                n: rng.gen_range(1..=2),
                c_in,
                c_out,
                groups,
                extent,
                kernel,
                stride,
                pad,
                bias: rng.gen_bool(0.5),
            };
        }
    }
}

/// Direct nested-loop cross-correlation with zero padding. Terms are summed
/// in `(ci, kh, kw, kd)` order, then the bias is added.
pub fn direct_conv3d(
    x: &[f64],
    xs: [usize; 5],
    w: &[f64],
    bias: Option<&[f64]>,
    c: &ConvCase,
) -> (Vec<f64>, [usize; 5]) {
    let [n, ci_n, h, wd, d] = xs;
    let out_ext = |i: usize, len: usize| (len + 2 * c.pad[i] - c.kernel[i]) / c.stride[i] + 1;
    let (oh_n, ow_n, od_n) = (out_ext(0, h), out_ext(1, wd), out_ext(2, d));
    let cin_g = ci_n / c.groups;
    let cout_g = c.c_out / c.groups;
    let [kh, kw, kd] = c.kernel;
    let xi = |b: usize, ch: usize, i: usize, j: usize, k: usize| (((b * ci_n + ch) * h + i) * wd + j) * d + k;
    let wi = |co: usize, cl: usize, a: usize, bb: usize, cc: usize| (((co * cin_g + cl) * kh + a) * kw + bb) * kd + cc;
    let mut out = Vec::with_capacity(n * c.c_out * oh_n * ow_n * od_n);
    for b in 0..n {
        for co in 0..c.c_out {
            let g = co / cout_g;
            for oh in 0..oh_n {
                for ow in 0..ow_n {
                    for od in 0..od_n {
                        let mut acc = 0.0f64;
                        for cl in 0..cin_g {
                            for a in 0..kh {
                                for bb in 0..kw {
                                    for cc in 0..kd {
                                        let ih = (oh * c.stride[0] + a) as isize - c.pad[0] as isize;
                                        let iw = (ow * c.stride[1] + bb) as isize - c.pad[1] as isize;
                                        let id = (od * c.stride[2] + cc) as isize - c.pad[2] as isize;
                                        if ih < 0
                                            || iw < 0
                                            || id < 0
                                            || ih >= h as isize
                                            || iw >= wd as isize
                                            || id >= d as isize
                                        {
                                            continue;
                                        }
                                        acc += w[wi(co, cl, a, bb, cc)]
                                            * x[xi(b, g * cin_g + cl, ih as usize, iw as usize, id as usize)];
                                    }
                                }
                            }
                        }
                        out.push(acc + bias.map_or(0.0, |bv| bv[co]));
                    }
                }
            }
        }
    }
    (out, [n, c.c_out, oh_n, ow_n, od_n])
}

// ------------------------------------------------------ finite differences ----

/// Relative error with a floor of `1e-6` on the denominator, so that
/// near-zero gradients are compared absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Central difference of `f` with respect to `x[i]`.
pub fn central_diff(x: &mut [f64], i: usize, h: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = x[i];
    x[i] = orig + h;
    let up = f(x);
    x[i] = orig - h;
    let down = f(x);
    x[i] = orig;
    (up - down) / (2.0 * h)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ---------------------------------------------------------------- metrics ----

pub struct MetricOracle {
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
}

/// Expands the confusion matrix into individual `(truth, prediction)`
/// samples and applies the textbook definitions to that list.
pub fn metric_oracle(conf: &[Vec<u64>]) -> MetricOracle {
    let k = conf.len();
    let mut samples = Vec::new();
    for (t, row) in conf.iter().enumerate() {
        for (p, &n) in row.iter().enumerate() {
            for _ in 0..n {
                samples.push((t, p));
            }
        }
    }
    let n = samples.len() as f64;
    let agree = samples.iter().filter(|(t, p)| t == p).count() as f64;
    let oa = agree / n;
    let mut recalls = Vec::new();
    let mut pe = 0.0;
    for c in 0..k {
        let truth_c = samples.iter().filter(|(t, _)| *t == c).count();
        let pred_c = samples.iter().filter(|(_, p)| *p == c).count();
        let hit_c = samples.iter().filter(|(t, p)| *t == c && *p == c).count();
        if truth_c > 0 {
            recalls.push(hit_c as f64 / truth_c as f64);
        }
        pe += (truth_c as f64 / n) * (pred_c as f64 / n);
    }
    let aa = recalls.iter().sum::<f64>() / recalls.len() as f64;
    let kappa = (oa - pe) / (1.0 - pe);
    MetricOracle { oa, aa, kappa }
}

/// Random `k×k` matrix with entries in `0..=30`, at least two distinct
/// predicted and true classes so that chance agreement is below one.
pub fn random_confusion(rng: &mut ChaCha8Rng) -> Vec<Vec<u64>> {
    loop {
        let k = rng.gen_range(2..=9);
        let m: Vec<Vec<u64>> = (0..k)
            .map(|_| (0..k).map(|_| if rng.gen_bool(0.3) { 0 } else { rng.gen_range(0..=30) }).collect())
            .collect();
        let rows = m.iter().filter(|r| r.iter().sum::<u64>() > 0).count();
        let cols = (0..k).filter(|&j| m.iter().map(|r| r[j]).sum::<u64>() > 0).count();
        if rows >= 2 && cols >= 2 {
            return m;
        }
    }
}

// -------------------------------------------------------------- reference ----

/// Per-class pixel counts of the 145×145 Indian Pines ground truth.
pub const IP_CLASS_TOTALS: [usize; 16] = [
    46, 1428, 830, 237, 483, 730, 28, 478, 20, 972, 2455, 593, 205, 1265, 386, 93,
];

/// Published per-class training counts at 5 % with a minimum of five.
pub const IP_TRAIN_COUNTS: [usize; 16] = [5, 71, 41, 12, 24, 37, 5, 24, 5, 49, 109, 30, 12, 63, 19, 6];

pub const IP_TRAIN_TOTAL: usize = 512;

/// A 145×145 raster with exactly the Indian Pines class totals. Pixels are
/// placed by a seeded shuffle; only the counts matter for the split rule.
pub fn ip_like_labels(seed: u64) -> HsiScene {
    use rand::seq::SliceRandom;
    let mut labels = vec![0i32; 145 * 145];
    let mut i = 0;
    for (c, &n) in IP_CLASS_TOTALS.iter().enumerate() {
        for _ in 0..n {
            labels[i] = c as i32 + 1;
            i += 1;
        }
    }
    labels.shuffle(&mut rng(seed));
    HsiScene::new(Tensor::zeros(&[145, 145, 1]), labels).unwrap()
}

/// Published per-layer output sizes for a 9×9×200 input with 16 classes, keyed by
/// the layer whose output the row describes.
pub const REFERENCE_SHAPES: [(&str, &str); 14] = [
    ("input", "(9×9×200,1)"),
    ("stem.relu", "(9×9×97,24)"),
    ("branch1.group.relu", "(9×9×97,48)"),
    ("branch1.dw1", "(9×9×97,48)"),
    ("branch1.pw1.relu", "(9×9×97,12)"),
    ("branch2.group.relu", "(9×9×97,48)"),
    ("branch2.dw1", "(9×9×97,48)"),
    ("branch2.pw1.relu", "(9×9×97,12)"),
    ("branch2.dw2", "(9×9×97,12)"),
    ("branch2.pw2.relu", "(9×9×97,12)"),
    ("concat", "(9×9×97,48)"),
    ("head.dw", "(9×9×1,48)"),
    ("head.pw.relu", "(9×9×1,60)"),
    ("pool", "(1×60)"),
];

pub const REFERENCE_FC_SHAPE: (&str, &str) = ("fc", "(1×16)");

pub fn pixel_at(scene: &HsiScene, row: usize, col: usize) -> Pixel {
    Pixel { row, col, label: scene.label_at(row, col) }
}
