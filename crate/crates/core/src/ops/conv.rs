//! Grouped 3D convolution (cross-correlation, zero padding).
//!
//! Standard, grouped, depthwise and pointwise convolutions are all the same
//! kernel with different `groups` / kernel extents. Inner products are
//! accumulated in `f64` whatever the engine precision, and every output
//! element sums its terms in `(in_channel, kh, kw, kd)` order so results are
//! independent of thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Real, Shape5, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Conv3dSpec {
    /// `(kh, kw, kd)`
    pub kernel: [usize; 3],
    pub in_channels: usize,
    pub out_channels: usize,
    pub groups: usize,
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub has_bias: bool,
}

impl Conv3dSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: [usize; 3]) -> Self {
        Conv3dSpec {
            kernel,
            in_channels,
            out_channels,
            groups: 1,
            stride: [1, 1, 1],
            padding: [0, 0, 0],
            has_bias: false,
        }
    }

    /// One filter per channel.
    pub fn depthwise(channels: usize, kernel: [usize; 3], padding: [usize; 3]) -> Self {
        Conv3dSpec {
            groups: channels,
            padding,
            ..Self::new(channels, channels, kernel)
        }
    }

    /// `1×1×1` channel mixing.
    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        Self::new(in_channels, out_channels, [1, 1, 1])
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn with_stride(mut self, stride: [usize; 3]) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_padding(mut self, padding: [usize; 3]) -> Self {
        self.padding = padding;
        self
    }

    pub fn with_bias(mut self, has_bias: bool) -> Self {
        self.has_bias = has_bias;
        self
    }

    pub fn is_depthwise(&self) -> bool {
        self.groups == self.in_channels && self.in_channels == self.out_channels
    }

    pub fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.groups == 1
    }

    pub fn in_per_group(&self) -> usize {
        self.in_channels / self.groups
    }

    pub fn out_per_group(&self) -> usize {
        self.out_channels / self.groups
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    /// `(out, in/groups, kh, kw, kd)`
    pub fn weight_shape(&self) -> [usize; 5] {
        [
            self.out_channels,
            self.in_per_group(),
            self.kernel[0],
            self.kernel[1],
            self.kernel[2],
        ]
    }

    pub fn weight_count(&self) -> usize {
        self.weight_shape().iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        let ext = self
            .kernel
            .iter()
            .chain(&self.stride)
            .chain([&self.in_channels, &self.out_channels, &self.groups]);
        if ext.into_iter().any(|&v| v == 0) {
            return Err(Error::Config(format!(
                "convolution extents, strides and channel counts must be positive: {self:?}"
            )));
        }
        if self.in_channels % self.groups != 0 || self.out_channels % self.groups != 0 {
            return Err(Error::Config(format!(
                "groups {} must divide in_channels {} and out_channels {}",
                self.groups, self.in_channels, self.out_channels
            )));
        }
        Ok(())
    }

    /// Output `(h, w, d)` for an input volume; errors when any extent would be < 1.
    pub fn output_extents(&self, h: usize, w: usize, d: usize) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for (i, &ext) in [h, w, d].iter().enumerate() {
            let padded = ext + 2 * self.padding[i];
            if padded < self.kernel[i] {
                return Err(Error::Shape(format!(
                    "kernel {:?} larger than padded input ({h},{w},{d}) with padding {:?}",
                    self.kernel, self.padding
                )));
            }
            out[i] = (padded - self.kernel[i]) / self.stride[i] + 1;
        }
        Ok(out)
    }

    pub fn output_shape(&self, input: Shape5) -> Result<Shape5> {
        self.validate()?;
        if input.c != self.in_channels {
            return Err(Error::Shape(format!(
                "input has {} channels, convolution expects {}",
                input.c, self.in_channels
            )));
        }
        let [h, w, d] = self.output_extents(input.h, input.w, input.d)?;
        Shape5::new(input.n, self.out_channels, h, w, d)
    }

    fn check_params<T: Real>(&self, weights: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<()> {
        if weights.shape() != self.weight_shape() {
            return Err(Error::Shape(format!(
                "weights {:?}, expected {:?}",
                weights.shape(),
                self.weight_shape()
            )));
        }
        match (self.has_bias, bias) {
            (true, Some(b)) if b.shape() == [self.out_channels] => Ok(()),
            (true, Some(b)) => Err(Error::Shape(format!(
                "bias {:?}, expected [{}]",
                b.shape(),
                self.out_channels
            ))),
            (true, None) => Err(Error::Shape("convolution declares a bias but none given".into())),
            (false, Some(_)) => Err(Error::Shape(
                "bias supplied to a convolution declared without one".into(),
            )),
            (false, None) => Ok(()),
        }
    }
}

/// Range of output indices `o` with `0 <= o*stride + tap - pad < len`.
#[inline]
fn valid_range(out_len: usize, stride: usize, tap: usize, pad: usize, len: usize) -> (usize, usize) {
    // o*stride + tap >= pad
    let lo = if tap >= pad {
        0
    } else {
        (pad - tap).div_ceil(stride)
    };
    // o*stride + tap - pad <= len - 1
    let hi = if tap > pad + len - 1 {
        0
    } else {
        ((pad + len - 1 - tap) / stride + 1).min(out_len)
    };
    (lo, hi.max(lo))
}

pub fn conv3d_forward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &Conv3dSpec,
) -> Result<Tensor<T>> {
    let is = input.shape5()?;
    let os = spec.output_shape(is)?;
    spec.check_params(weights, bias)?;

    let x = input.data();
    let wt = weights.data();
    let [kh, kw, kd] = spec.kernel;
    let [sh, sw, sd] = spec.stride;
    let [ph, pw, pd] = spec.padding;
    let cin_g = spec.in_per_group();
    let cout_g = spec.out_per_group();
    let out_vol = os.volume();

    let mut out = vec![T::ZERO; os.numel()];
    out.par_chunks_mut(out_vol)
        .enumerate()
        .for_each(|(plane, dst)| {
            let n = plane / os.c;
            let co = plane % os.c;
            let g = co / cout_g;
            let b = bias.map_or(0.0, |b| b.data()[co].to_f64());
            let mut acc = vec![0.0f64; os.d];
            for oh in 0..os.h {
                for ow in 0..os.w {
                    acc.iter_mut().for_each(|a| *a = 0.0);
                    for cl in 0..cin_g {
                        let ci = g * cin_g + cl;
                        for a in 0..kh {
                            let ih = (oh * sh + a) as isize - ph as isize;
                            if ih < 0 || ih >= is.h as isize {
                                continue;
                            }
                            for bb in 0..kw {
                                let iw = (ow * sw + bb) as isize - pw as isize;
                                if iw < 0 || iw >= is.w as isize {
                                    continue;
                                }
                                let xrow = is.index(n, ci, ih as usize, iw as usize, 0);
                                let wrow = (((co * cin_g + cl) * kh + a) * kw + bb) * kd;
                                for c in 0..kd {
                                    let wv = wt[wrow + c].to_f64();
                                    let (lo, hi) = valid_range(os.d, sd, c, pd, is.d);
                                    for od in lo..hi {
                                        let id = od * sd + c - pd;
                                        acc[od] += wv * x[xrow + id].to_f64();
                                    }
                                }
                            }
                        }
                    }
                    let row = (oh * os.w + ow) * os.d;
                    for od in 0..os.d {
                        dst[row + od] = T::from_f64(acc[od] + b);
                    }
                }
            }
        });
    Tensor::from_vec(&os.dims(), out)
}

/// Gradients of [`conv3d_forward`].
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

pub fn conv3d_backward<T: Real>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weights: &Tensor<T>,
    spec: &Conv3dSpec,
) -> Result<ConvGrads<T>> {
    let is = input.shape5()?;
    let os = spec.output_shape(is)?;
    if grad_out.shape() != os.dims() {
        return Err(Error::Shape(format!(
            "grad_out {:?}, forward output is {:?}",
            grad_out.shape(),
            os.dims()
        )));
    }
    if weights.shape() != spec.weight_shape() {
        return Err(Error::Shape(format!(
            "weights {:?}, expected {:?}",
            weights.shape(),
            spec.weight_shape()
        )));
    }

    let x = input.data();
    let gy = grad_out.data();
    let wt = weights.data();
    let [kh, kw, kd] = spec.kernel;
    let [sh, sw, sd] = spec.stride;
    let [ph, pw, pd] = spec.padding;
    let cin_g = spec.in_per_group();
    let cout_g = spec.out_per_group();
    let kvol = spec.kernel_volume();
    let in_vol = is.volume();
    let out_vol = os.volume();

    // d/dx: scatter each output gradient back through the kernel, one batch
    // entry per task.
    let mut gx = vec![T::ZERO; is.numel()];
    gx.par_chunks_mut(is.c * in_vol)
        .enumerate()
        .for_each(|(n, dst)| {
            let mut acc = vec![0.0f64; is.c * in_vol];
            for co in 0..os.c {
                let g = co / cout_g;
                for oh in 0..os.h {
                    for ow in 0..os.w {
                        let gyrow = os.index(n, co, oh, ow, 0);
                        for cl in 0..cin_g {
                            let ci = g * cin_g + cl;
                            for a in 0..kh {
                                let ih = (oh * sh + a) as isize - ph as isize;
                                if ih < 0 || ih >= is.h as isize {
                                    continue;
                                }
                                for bb in 0..kw {
                                    let iw = (ow * sw + bb) as isize - pw as isize;
                                    if iw < 0 || iw >= is.w as isize {
                                        continue;
                                    }
                                    let xrow = ((ci * is.h + ih as usize) * is.w + iw as usize)
                                        * is.d;
                                    let wrow = (((co * cin_g + cl) * kh + a) * kw + bb) * kd;
                                    for c in 0..kd {
                                        let wv = wt[wrow + c].to_f64();
                                        let (lo, hi) = valid_range(os.d, sd, c, pd, is.d);
                                        for od in lo..hi {
                                            let id = od * sd + c - pd;
                                            acc[xrow + id] += wv * gy[gyrow + od].to_f64();
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            for (d, a) in dst.iter_mut().zip(acc) {
                *d = T::from_f64(a);
            }
        });

    // d/dw: correlate input with output gradient, one output channel per task.
    let mut gw = vec![T::ZERO; spec.weight_count()];
    gw.par_chunks_mut(cin_g * kvol)
        .enumerate()
        .for_each(|(co, dst)| {
            let g = co / cout_g;
            let mut acc = vec![0.0f64; cin_g * kvol];
            for n in 0..is.n {
                for cl in 0..cin_g {
                    let ci = g * cin_g + cl;
                    for a in 0..kh {
                        for bb in 0..kw {
                            for c in 0..kd {
                                let (dlo, dhi) = valid_range(os.d, sd, c, pd, is.d);
                                let mut s = 0.0f64;
                                for oh in 0..os.h {
                                    let ih = (oh * sh + a) as isize - ph as isize;
                                    if ih < 0 || ih >= is.h as isize {
                                        continue;
                                    }
                                    for ow in 0..os.w {
                                        let iw = (ow * sw + bb) as isize - pw as isize;
                                        if iw < 0 || iw >= is.w as isize {
                                            continue;
                                        }
                                        let xrow = is.index(n, ci, ih as usize, iw as usize, 0);
                                        let gyrow = os.index(n, co, oh, ow, 0);
                                        for od in dlo..dhi {
                                            let id = od * sd + c - pd;
                                            s += gy[gyrow + od].to_f64() * x[xrow + id].to_f64();
                                        }
                                    }
                                }
                                acc[((cl * kh + a) * kw + bb) * kd + c] += s;
                            }
                        }
                    }
                }
            }
            for (d, a) in dst.iter_mut().zip(acc) {
                *d = T::from_f64(a);
            }
        });

    let gb = if spec.has_bias {
        let mut gb = Vec::with_capacity(os.c);
        for co in 0..os.c {
            let mut s = 0.0f64;
            for n in 0..os.n {
                let base = (n * os.c + co) * out_vol;
                s += gy[base..base + out_vol].iter().map(|v| v.to_f64()).sum::<f64>();
            }
            gb.push(T::from_f64(s));
        }
        Some(Tensor::from_vec(&[os.c], gb)?)
    } else {
        None
    };

    Ok(ConvGrads {
        input: Tensor::from_vec(&is.dims(), gx)?,
        weights: Tensor::from_vec(&spec.weight_shape(), gw)?,
        bias: gb,
    })
}

/// Depthwise stage followed directly by a pointwise stage, with nothing in
/// between (no normalization, no activation).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeparableSpec {
    pub depthwise: Conv3dSpec,
    pub pointwise: Conv3dSpec,
}

impl SeparableSpec {
    pub fn new(channels: usize, out_channels: usize, kernel: [usize; 3], padding: [usize; 3]) -> Self {
        SeparableSpec {
            depthwise: Conv3dSpec::depthwise(channels, kernel, padding),
            pointwise: Conv3dSpec::pointwise(channels, out_channels),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.depthwise.validate()?;
        self.pointwise.validate()?;
        if !self.depthwise.is_depthwise() {
            return Err(Error::Config(
                "first stage must have groups == in_channels == out_channels".into(),
            ));
        }
        if !self.pointwise.is_pointwise() {
            return Err(Error::Config("second stage must be a 1x1x1 ungrouped convolution".into()));
        }
        if self.pointwise.in_channels != self.depthwise.out_channels {
            return Err(Error::Config(format!(
                "pointwise expects {} channels, depthwise produces {}",
                self.pointwise.in_channels, self.depthwise.out_channels
            )));
        }
        Ok(())
    }
}

pub fn depthwise_separable_forward<T: Real>(
    input: &Tensor<T>,
    dw_weights: &Tensor<T>,
    dw_bias: Option<&Tensor<T>>,
    pw_weights: &Tensor<T>,
    pw_bias: Option<&Tensor<T>>,
    spec: &SeparableSpec,
) -> Result<Tensor<T>> {
    spec.validate()?;
    let mid = conv3d_forward(input, dw_weights, dw_bias, &spec.depthwise)?;
    conv3d_forward(&mid, pw_weights, pw_bias, &spec.pointwise)
}
