//! ReLU, global average pooling, fully connected layer and softmax.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// `grad_out` masked by `input > 0`.
pub fn relu_backward<T: Real>(grad_out: &Tensor<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    if grad_out.shape() != input.shape() {
        return Err(Error::Shape(format!(
            "relu backward: {:?} vs {:?}",
            grad_out.shape(),
            input.shape()
        )));
    }
    let data = grad_out
        .data()
        .iter()
        .zip(input.data())
        .map(|(&g, &x)| if x > T::ZERO { g } else { T::ZERO })
        .collect();
    Tensor::from_vec(input.shape(), data)
}

/// Mean over `(h, w, d)` for each `(n, c)`; output shape `(n, c)`.
pub fn global_avg_pool<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let s = input.shape5()?;
    let vol = s.volume();
    let out = input
        .data()
        .chunks(vol)
        .map(|plane| {
            let mut sum = 0.0f64;
            for v in plane {
                sum += v.to_f64();
            }
            T::from_f64(sum / vol as f64)
        })
        .collect();
    Tensor::from_vec(&[s.n, s.c], out)
}

pub fn global_avg_pool_backward<T: Real>(grad_out: &Tensor<T>, input_shape: &[usize]) -> Result<Tensor<T>> {
    let (n, c) = grad_out.shape2()?;
    match *input_shape {
        [n2, c2, h, w, d] if n2 == n && c2 == c => {
            let vol = h * w * d;
            let mut out = Vec::with_capacity(n * c * vol);
            for &g in grad_out.data() {
                let v = T::from_f64(g.to_f64() / vol as f64);
                out.extend(std::iter::repeat(v).take(vol));
            }
            Tensor::from_vec(input_shape, out)
        }
        _ => Err(Error::Shape(format!(
            "pool backward: grad {:?} incompatible with input {:?}",
            grad_out.shape(),
            input_shape
        ))),
    }
}

fn check_fc<T: Real>(input: &Tensor<T>, weights: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<(usize, usize, usize)> {
    let (n, fin) = input.shape2()?;
    let (rows, fout) = weights.shape2()?;
    if rows != fin {
        return Err(Error::Shape(format!(
            "fully connected: input width {fin} but weights have {rows} rows"
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [fout] {
            return Err(Error::Shape(format!("fully connected bias {:?}, expected [{fout}]", b.shape())));
        }
    }
    Ok((n, fin, fout))
}

/// `y = x W + b` with `x: (n, in)`, `W: (in, out)`.
pub fn fully_connected_forward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let (n, fin, fout) = check_fc(input, weights, bias)?;
    let x = input.data();
    let w = weights.data();
    let mut out = Vec::with_capacity(n * fout);
    for i in 0..n {
        for j in 0..fout {
            let mut acc = 0.0f64;
            for k in 0..fin {
                acc += x[i * fin + k].to_f64() * w[k * fout + j].to_f64();
            }
            if let Some(b) = bias {
                acc += b.data()[j].to_f64();
            }
            out.push(T::from_f64(acc));
        }
    }
    Tensor::from_vec(&[n, fout], out)
}

#[derive(Debug, Clone)]
pub struct FcGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn fully_connected_backward<T: Real>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weights: &Tensor<T>,
) -> Result<FcGrads<T>> {
    let (n, fin, fout) = check_fc(input, weights, None)?;
    if grad_out.shape() != [n, fout] {
        return Err(Error::Shape(format!(
            "fully connected backward: grad {:?}, expected [{n}, {fout}]",
            grad_out.shape()
        )));
    }
    let x = input.data();
    let w = weights.data();
    let gy = grad_out.data();

    let mut gx = Vec::with_capacity(n * fin);
    for i in 0..n {
        for k in 0..fin {
            let mut acc = 0.0f64;
            for j in 0..fout {
                acc += gy[i * fout + j].to_f64() * w[k * fout + j].to_f64();
            }
            gx.push(T::from_f64(acc));
        }
    }
    let mut gw = Vec::with_capacity(fin * fout);
    for k in 0..fin {
        for j in 0..fout {
            let mut acc = 0.0f64;
            for i in 0..n {
                acc += x[i * fin + k].to_f64() * gy[i * fout + j].to_f64();
            }
            gw.push(T::from_f64(acc));
        }
    }
    let mut gb = Vec::with_capacity(fout);
    for j in 0..fout {
        let mut acc = 0.0f64;
        for i in 0..n {
            acc += gy[i * fout + j].to_f64();
        }
        gb.push(T::from_f64(acc));
    }
    Ok(FcGrads {
        input: Tensor::from_vec(&[n, fin], gx)?,
        weights: Tensor::from_vec(&[fin, fout], gw)?,
        bias: Tensor::from_vec(&[fout], gb)?,
    })
}

/// Row-wise softmax of `(n, k)` logits, computed in `f64` with the row max
/// subtracted first.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Result<Tensor<f64>> {
    let (n, k) = logits.shape2()?;
    logits.ensure_finite("softmax logits")?;
    let mut out = Vec::with_capacity(n * k);
    for row in logits.data().chunks(k) {
        let max = row
            .iter()
            .map(|v| v.to_f64())
            .fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v.to_f64() - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        out.extend(exps.into_iter().map(|e| e / sum));
    }
    Tensor::from_vec(&[n, k], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_constant_and_shape() {
        let t = Tensor::<f64>::full(&[1, 60, 9, 9, 1], 2.5);
        let p = global_avg_pool(&t).unwrap();
        assert_eq!(p.shape(), &[1, 60]);
        assert!(p.data().iter().all(|&v| (v - 2.5).abs() < 1e-15));
    }

    #[test]
    fn pool_matches_loop() {
        let t = Tensor::from_vec(&[2, 3, 2, 2, 3], (0..72).map(|i| (i as f64 * 1.7).sin()).collect())
            .unwrap();
        let p = global_avg_pool(&t).unwrap();
        let s = t.shape5().unwrap();
        for n in 0..2 {
            for c in 0..3 {
                let mut sum = 0.0;
                for h in 0..2 {
                    for w in 0..2 {
                        for d in 0..3 {
                            sum += t.data()[s.index(n, c, h, w, d)];
                        }
                    }
                }
                assert_eq!(p.data()[n * 3 + c], sum / 12.0);
            }
        }
    }

    #[test]
    fn fc_identity_and_shape() {
        let mut w = Tensor::<f64>::zeros(&[3, 3]);
        for i in 0..3 {
            w.data_mut()[i * 3 + i] = 1.0;
        }
        let x = Tensor::from_vec(&[2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 7.0]).unwrap();
        assert_eq!(fully_connected_forward(&x, &w, Some(&Tensor::zeros(&[3]))).unwrap(), x);

        let x = Tensor::<f32>::zeros(&[1, 60]);
        let w = Tensor::<f32>::zeros(&[60, 16]);
        assert_eq!(fully_connected_forward(&x, &w, None).unwrap().shape(), &[1, 16]);
        assert!(fully_connected_forward(&x, &Tensor::zeros(&[59, 16]), None).is_err());
    }

    #[test]
    fn softmax_symmetry_and_shift() {
        let p = softmax(&Tensor::<f64>::zeros(&[1, 3])).unwrap();
        for v in p.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let a = Tensor::from_vec(&[1, 4], vec![0.3, -1.2, 2.0, 0.9]).unwrap();
        let b = a.map(|v| v + 123.4);
        let (pa, pb) = (softmax(&a).unwrap(), softmax(&b).unwrap());
        for (x, y) in pa.data().iter().zip(pb.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_matches_direct_evaluation() {
        let logits: Vec<f64> = (0..12).map(|i| ((i * 37) % 11) as f64 * 0.4 - 2.0).collect();
        let t = Tensor::from_vec(&[3, 4], logits.clone()).unwrap();
        let p = softmax(&t).unwrap();
        for r in 0..3 {
            let row = &logits[r * 4..r * 4 + 4];
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            let mut total = 0.0;
            for j in 0..4 {
                let q = p.data()[r * 4 + j];
                assert!((q - row[j].exp() / z).abs() < 1e-14);
                assert!(q > 0.0 && q < 1.0);
                total += q;
            }
            assert!((total - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let t = Tensor::from_vec(&[1, 2], vec![0.0, f64::NAN]).unwrap();
        assert!(matches!(softmax(&t), Err(Error::NonFinite(_))));
    }

    #[test]
    fn relu_backward_masks() {
        let x = Tensor::from_vec(&[4], vec![-1.0, 0.0, 0.5, 3.0]).unwrap();
        let g = Tensor::from_vec(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(relu_backward(&g, &x).unwrap().data(), &[0.0, 0.0, 3.0, 4.0]);
    }
}
