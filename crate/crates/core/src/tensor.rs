//! Dense row-major tensors.
//!
//! Layout is `(n, c, h, w, d)`: batch, channel, spatial height, spatial
//! width, spectral depth. The spectral axis is innermost so per-channel
//! depthwise loops walk contiguous memory.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// Scalar type of the engine. Implemented for `f32` (speed) and `f64`
/// (gradient checks).
pub trait Real:
    Copy
    + Debug
    + Default
    + PartialOrd
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
{
    const ZERO: Self;
    const ONE: Self;
    const NAME: &'static str;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn is_finite(self) -> bool;
}

impl Real for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    const NAME: &'static str = "single";

    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
}

impl Real for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    const NAME: &'static str = "double";

    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

/// Canonical 5-D extents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape5 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub d: usize,
}

impl Shape5 {
    pub fn new(n: usize, c: usize, h: usize, w: usize, d: usize) -> Result<Self> {
        if [n, c, h, w, d].contains(&0) {
            return Err(Error::Shape(format!(
                "extents must be positive, got ({n},{c},{h},{w},{d})"
            )));
        }
        Ok(Shape5 { n, c, h, w, d })
    }

    pub fn dims(&self) -> [usize; 5] {
        [self.n, self.c, self.h, self.w, self.d]
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w * self.d
    }

    /// Elements in one `(h, w, d)` volume.
    pub fn volume(&self) -> usize {
        self.h * self.w * self.d
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize, d: usize) -> usize {
        (((n * self.c + c) * self.h + h) * self.w + w) * self.d + d
    }
}

/// Dense N-D array (rank 1 to 5) with a flat row-major buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f64> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        check_shape(shape)?;
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} holds {} elements but {} were supplied",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::ZERO)
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn zeros5(s: Shape5) -> Self {
        Self::zeros(&s.dims())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// View as `(n, c, h, w, d)`; rank must be exactly 5.
    pub fn shape5(&self) -> Result<Shape5> {
        match self.shape[..] {
            [n, c, h, w, d] => Shape5::new(n, c, h, w, d),
            _ => Err(Error::Shape(format!(
                "expected a rank-5 tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn shape2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::Shape(format!(
                "expected a rank-2 tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn reshape(&self, new_shape: &[usize]) -> Result<Self> {
        self.clone().into_reshape(new_shape)
    }

    pub fn into_reshape(self, new_shape: &[usize]) -> Result<Self> {
        check_shape(new_shape)?;
        let numel: usize = new_shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} ({} elements) to {:?} ({} elements)",
                self.shape,
                self.data.len(),
                new_shape,
                numel
            )));
        }
        Ok(Tensor {
            shape: new_shape.to_vec(),
            data: self.data,
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_with(&self, other: &Self, op: &str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "{op}: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|v| v * k)
    }

    pub fn relu(&self) -> Self {
        self.map(|v| if v > T::ZERO { v } else { T::ZERO })
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "add_assign: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Errors with `context` when any element is NaN or infinite.
    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(context.to_string()))
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    /// Copy of channels `[start, start + len)` of a rank-5 tensor.
    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Self> {
        let s = self.shape5()?;
        if len == 0 || start + len > s.c {
            return Err(Error::Shape(format!(
                "channel slice [{start}, {}) outside 0..{}",
                start + len,
                s.c
            )));
        }
        let vol = s.volume();
        let mut data = Vec::with_capacity(s.n * len * vol);
        for n in 0..s.n {
            let base = (n * s.c + start) * vol;
            data.extend_from_slice(&self.data[base..base + len * vol]);
        }
        Ok(Tensor {
            shape: vec![s.n, len, s.h, s.w, s.d],
            data,
        })
    }

    /// Copy of batch entries `[start, start + len)` along axis 0.
    pub fn slice_batch(&self, start: usize, len: usize) -> Result<Self> {
        let n = self.shape[0];
        if len == 0 || start + len > n {
            return Err(Error::Shape(format!(
                "batch slice [{start}, {}) outside 0..{n}",
                start + len
            )));
        }
        let per = self.data.len() / n;
        let mut shape = self.shape.clone();
        shape[0] = len;
        Ok(Tensor {
            shape,
            data: self.data[start * per..(start + len) * per].to_vec(),
        })
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.len() > 5 {
        return Err(Error::Shape(format!(
            "rank must be between 1 and 5, got {}",
            shape.len()
        )));
    }
    if shape.contains(&0) {
        return Err(Error::Shape(format!(
            "extents must be positive, got {shape:?}"
        )));
    }
    Ok(())
}

/// Concatenate rank-5 tensors along the channel axis, preserving input order.
pub fn concat_channels<T: Real>(ts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = ts
        .first()
        .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?
        .shape5()?;
    let mut total_c = 0;
    for t in ts {
        let s = t.shape5()?;
        if (s.n, s.h, s.w, s.d) != (first.n, first.h, first.w, first.d) {
            return Err(Error::Shape(format!(
                "concat: {:?} does not match {:?} outside the channel axis",
                s.dims(),
                first.dims()
            )));
        }
        total_c += s.c;
    }
    let vol = first.volume();
    let mut data = Vec::with_capacity(first.n * total_c * vol);
    for n in 0..first.n {
        for t in ts {
            let c = t.shape[1];
            let base = n * c * vol;
            data.extend_from_slice(&t.data[base..base + c * vol]);
        }
    }
    Ok(Tensor {
        shape: vec![first.n, total_c, first.h, first.w, first.d],
        data,
    })
}
