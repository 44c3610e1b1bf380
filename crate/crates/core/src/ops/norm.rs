//! Per-channel batch normalization over `(n, h, w, d)`.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchNormSpec {
    pub channels: usize,
    pub epsilon: f64,
    /// Weight of the new batch statistic in the running average.
    pub momentum: f64,
}

impl BatchNormSpec {
    pub fn new(channels: usize) -> Self {
        BatchNormSpec {
            channels,
            epsilon: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::Config("batch norm needs at least one channel".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.momentum > 0.0 && self.momentum < 1.0) {
            return Err(Error::Config(format!(
                "momentum must lie in (0, 1), got {}",
                self.momentum
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Learned affine parameters plus running statistics, each of length `channels`.
#[derive(Debug, Clone, PartialEq)]
pub struct BnState<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
}

impl<T: Real> BnState<T> {
    pub fn new(channels: usize) -> Self {
        BnState {
            gamma: Tensor::full(&[channels], T::ONE),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::ONE),
        }
    }
}

/// Saved by the forward pass for [`batchnorm_backward`].
#[derive(Debug, Clone)]
pub struct BnCache {
    mode: Mode,
    x_hat: Vec<f64>,
    inv_std: Vec<f64>,
}

fn check<T: Real>(input: &Tensor<T>, state: &BnState<T>, spec: &BatchNormSpec) -> Result<()> {
    spec.validate()?;
    let s = input.shape5()?;
    if s.c != spec.channels {
        return Err(Error::Shape(format!(
            "input has {} channels, batch norm expects {}",
            s.c, spec.channels
        )));
    }
    for t in [&state.gamma, &state.beta, &state.running_mean, &state.running_var] {
        if t.shape() != [spec.channels] {
            return Err(Error::Shape(format!(
                "batch-norm state {:?}, expected [{}]",
                t.shape(),
                spec.channels
            )));
        }
    }
    Ok(())
}

pub fn batchnorm_forward<T: Real>(
    input: &Tensor<T>,
    state: &mut BnState<T>,
    spec: &BatchNormSpec,
    mode: Mode,
) -> Result<(Tensor<T>, BnCache)> {
    check(input, state, spec)?;
    let s = input.shape5()?;
    let vol = s.volume();
    let m = s.n * vol;
    if mode == Mode::Train && m < 2 {
        return Err(Error::Shape(
            "training-mode batch norm needs at least two values per channel".into(),
        ));
    }
    let x = input.data();
    let mut out = vec![T::ZERO; x.len()];
    let mut x_hat = vec![0.0f64; x.len()];
    let mut inv_stds = Vec::with_capacity(s.c);

    for c in 0..s.c {
        let (mean, var) = match mode {
            Mode::Train => {
                let mut sum = 0.0;
                for n in 0..s.n {
                    let base = (n * s.c + c) * vol;
                    for v in &x[base..base + vol] {
                        sum += v.to_f64();
                    }
                }
                let mean = sum / m as f64;
                let mut sq = 0.0;
                for n in 0..s.n {
                    let base = (n * s.c + c) * vol;
                    for v in &x[base..base + vol] {
                        let d = v.to_f64() - mean;
                        sq += d * d;
                    }
                }
                let var = sq / m as f64;
                let rm = &mut state.running_mean.data_mut()[c];
                *rm = T::from_f64((1.0 - spec.momentum) * rm.to_f64() + spec.momentum * mean);
                let unbiased = sq / (m - 1) as f64;
                let rv = &mut state.running_var.data_mut()[c];
                *rv = T::from_f64((1.0 - spec.momentum) * rv.to_f64() + spec.momentum * unbiased);
                (mean, var)
            }
            Mode::Infer => (
                state.running_mean.data()[c].to_f64(),
                state.running_var.data()[c].to_f64(),
            ),
        };
        let inv_std = 1.0 / (var + spec.epsilon).sqrt();
        let g = state.gamma.data()[c].to_f64();
        let b = state.beta.data()[c].to_f64();
        for n in 0..s.n {
            let base = (n * s.c + c) * vol;
            for i in base..base + vol {
                let xh = (x[i].to_f64() - mean) * inv_std;
                x_hat[i] = xh;
                out[i] = T::from_f64(g * xh + b);
            }
        }
        inv_stds.push(inv_std);
    }

    Ok((
        Tensor::from_vec(input.shape(), out)?,
        BnCache {
            mode,
            x_hat,
            inv_std: inv_stds,
        },
    ))
}

#[derive(Debug, Clone)]
pub struct BnGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

pub fn batchnorm_backward<T: Real>(
    grad_out: &Tensor<T>,
    cache: &BnCache,
    gamma: &Tensor<T>,
) -> Result<BnGrads<T>> {
    let s = grad_out.shape5()?;
    if cache.x_hat.len() != grad_out.numel() || gamma.shape() != [s.c] {
        return Err(Error::Shape(format!(
            "batch-norm backward: grad_out {:?} does not match the forward pass",
            grad_out.shape()
        )));
    }
    let vol = s.volume();
    let m = (s.n * vol) as f64;
    let gy = grad_out.data();
    let mut gx = vec![T::ZERO; gy.len()];
    let mut gg = Vec::with_capacity(s.c);
    let mut gb = Vec::with_capacity(s.c);

    for c in 0..s.c {
        let g = gamma.data()[c].to_f64();
        let inv_std = cache.inv_std[c];
        let mut sum_dy = 0.0;
        let mut sum_dy_xh = 0.0;
        for n in 0..s.n {
            let base = (n * s.c + c) * vol;
            for i in base..base + vol {
                let dy = gy[i].to_f64();
                sum_dy += dy;
                sum_dy_xh += dy * cache.x_hat[i];
            }
        }
        gg.push(T::from_f64(sum_dy_xh));
        gb.push(T::from_f64(sum_dy));
        for n in 0..s.n {
            let base = (n * s.c + c) * vol;
            for i in base..base + vol {
                let dy = gy[i].to_f64();
                let dx = match cache.mode {
                    Mode::Train => {
                        g * inv_std / m * (m * dy - sum_dy - cache.x_hat[i] * sum_dy_xh)
                    }
                    Mode::Infer => g * inv_std * dy,
                };
                gx[i] = T::from_f64(dx);
            }
        }
    }
    Ok(BnGrads {
        input: Tensor::from_vec(grad_out.shape(), gx)?,
        gamma: Tensor::from_vec(&[s.c], gg)?,
        beta: Tensor::from_vec(&[s.c], gb)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(shape: &[usize], seed: u64) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|i| ((i as u64 * 2654435761 + seed) % 1000) as f64 / 100.0 - 3.0)
            .collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn train_mode_standardizes() {
        let x = sample(&[2, 3, 2, 3, 4], 5);
        let spec = BatchNormSpec::new(3);
        let mut st = BnState::new(3);
        let (y, _) = batchnorm_forward(&x, &mut st, &spec, Mode::Train).unwrap();
        for c in 0..3 {
            let vals: Vec<f64> = (0..2)
                .flat_map(|n| {
                    let base = (n * 3 + c) * 24;
                    y.data()[base..base + 24].to_vec()
                })
                .collect();
            let mean = vals.iter().sum::<f64>() / 48.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 48.0;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-3, "var {var}");
        }
    }

    #[test]
    fn infer_with_unit_stats_is_near_identity() {
        let x = sample(&[1, 2, 2, 2, 2], 9);
        let spec = BatchNormSpec::new(2);
        let mut st = BnState::new(2);
        let (y, _) = batchnorm_forward(&x, &mut st, &spec, Mode::Infer).unwrap();
        let k = 1.0 / (1.0 + spec.epsilon).sqrt();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b * k).abs() < 1e-12);
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn running_stats_follow_momentum() {
        let x = Tensor::from_vec(&[1, 1, 1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let spec = BatchNormSpec::new(1);
        let mut st = BnState::<f64>::new(1);
        batchnorm_forward(&x, &mut st, &spec, Mode::Train).unwrap();
        assert!((st.running_mean.data()[0] - 0.25).abs() < 1e-12);
        // unbiased batch var = 5/3
        assert!((st.running_var.data()[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn rejects_channel_mismatch_and_tiny_batch() {
        let spec = BatchNormSpec::new(2);
        let mut st = BnState::new(2);
        assert!(batchnorm_forward(&Tensor::<f64>::zeros(&[1, 3, 1, 1, 2]), &mut st, &spec, Mode::Train).is_err());
        let mut st1 = BnState::new(1);
        let one = Tensor::<f64>::zeros(&[1, 1, 1, 1, 1]);
        assert!(batchnorm_forward(&one, &mut st1, &BatchNormSpec::new(1), Mode::Train).is_err());
        assert!(batchnorm_forward(&one, &mut st1, &BatchNormSpec::new(1), Mode::Infer).is_ok());
    }

    #[test]
    fn matches_scalar_reference() {
        let x = sample(&[2, 2, 3, 1, 5], 77);
        let spec = BatchNormSpec::new(2);
        let mut st = BnState::new(2);
        st.gamma = Tensor::from_vec(&[2], vec![0.7, -1.3]).unwrap();
        st.beta = Tensor::from_vec(&[2], vec![0.2, 0.05]).unwrap();
        let (y, _) = batchnorm_forward(&x, &mut st, &spec, Mode::Train).unwrap();
        let s = x.shape5().unwrap();
        for c in 0..2 {
            let mut vals = Vec::new();
            for n in 0..2 {
                for h in 0..3 {
                    for d in 0..5 {
                        vals.push(x.data()[s.index(n, c, h, 0, d)]);
                    }
                }
            }
            let mut sum = 0.0;
            for v in &vals {
                sum += v;
            }
            let mean = sum / 30.0;
            let mut sq = 0.0;
            for v in &vals {
                sq += (v - mean) * (v - mean);
            }
            let inv = 1.0 / (sq / 30.0 + 1e-5f64).sqrt();
            let (g, b) = ([0.7, -1.3][c], [0.2, 0.05][c]);
            for n in 0..2 {
                for h in 0..3 {
                    for d in 0..5 {
                        let i = s.index(n, c, h, 0, d);
                        assert_eq!(y.data()[i], g * ((x.data()[i] - mean) * inv) + b);
                    }
                }
            }
        }
    }
}
