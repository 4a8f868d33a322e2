//! Dense row-major tensor.
//!
//! Shapes are dynamic (`Vec<usize>`); the networks only ever use rank 1, 2
//! and 4. Layout is row-major ("C order"): for a 4-D tensor `[N, C, H, W]`
//! the element `(n, c, h, w)` lives at `((n*C + c)*H + h)*W + w`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    /// Build a tensor from a shape and matching flat data.
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::config(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); numel],
        }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    /// Element-wise construction in row-major order of the flat index.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..numel).map(&mut f).collect(),
        }
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

    /// Size of dimension `i`.
    pub fn dim(&self, i: usize) -> usize {
        self.shape[i]
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

    /// Reinterpret the flat data under a new shape with the same element
    /// count.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::config(format!(
                "cannot reshape {:?} ({} elements) to {:?}",
                self.shape,
                self.data.len(),
                shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Flat index of `(n, c, h, w)` in a rank-4 tensor.
    #[inline(always)]
    pub fn idx4(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        debug_assert_eq!(self.rank(), 4);
        ((n * self.shape[1] + c) * self.shape[2] + h) * self.shape[3] + w
    }

    #[inline(always)]
    pub fn at4(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.idx4(n, c, h, w)]
    }

    /// Flat index of `(r, c)` in a rank-2 tensor.
    #[inline(always)]
    pub fn idx2(&self, r: usize, c: usize) -> usize {
        debug_assert_eq!(self.rank(), 2);
        r * self.shape[1] + c
    }

    #[inline(always)]
    pub fn at2(&self, r: usize, c: usize) -> T {
        self.data[self.idx2(r, c)]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Element-wise sum; shapes must match exactly.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::config(format!(
                "add: shape mismatch {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a + b)
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    /// In-place element-wise accumulate; shapes must match exactly.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::config(format!(
                "add_assign: shape mismatch {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: T) {
        for v in &mut self.data {
            *v = *v * factor;
        }
    }

    pub fn fill(&mut self, value: T) {
        for v in &mut self.data {
            *v = value;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Error out (with `context` in the message) if any element is NaN or
    /// infinite.
    pub fn assert_finite(&self, context: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::numeric(format!("non-finite values in {context}")))
        }
    }

    /// Convert the element type (e.g. `f32` model to `f64` for checking).
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    /// Copy channels `[c0, c1)` of a rank-4 tensor into a new tensor.
    pub fn slice_channels(&self, c0: usize, c1: usize) -> Result<Self> {
        if self.rank() != 4 {
            return Err(Error::config("slice_channels expects a rank-4 tensor"));
        }
        let (n, c, h, w) = (self.shape[0], self.shape[1], self.shape[2], self.shape[3]);
        if c0 >= c1 || c1 > c {
            return Err(Error::config(format!(
                "slice_channels: invalid range {c0}..{c1} for {c} channels"
            )));
        }
        let cw = c1 - c0;
        let plane = h * w;
        let mut data = Vec::with_capacity(n * cw * plane);
        for ni in 0..n {
            let base = (ni * c + c0) * plane;
            data.extend_from_slice(&self.data[base..base + cw * plane]);
        }
        Tensor::new(vec![n, cw, h, w], data)
    }

    /// Concatenate rank-4 tensors along the channel axis.
    pub fn concat_channels(parts: &[Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::config("concat_channels: no inputs"))?;
        if first.rank() != 4 {
            return Err(Error::config("concat_channels expects rank-4 tensors"));
        }
        let (n, h, w) = (first.shape[0], first.shape[2], first.shape[3]);
        let mut c_total = 0;
        for p in parts {
            if p.rank() != 4 || p.shape[0] != n || p.shape[2] != h || p.shape[3] != w {
                return Err(Error::config(format!(
                    "concat_channels: incompatible shapes {:?} vs {:?}",
                    first.shape, p.shape
                )));
            }
            c_total += p.shape[1];
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * c_total * plane);
        for ni in 0..n {
            for p in parts {
                let pc = p.shape[1];
                let base = ni * pc * plane;
                data.extend_from_slice(&p.data[base..base + pc * plane]);
            }
        }
        Tensor::new(vec![n, c_total, h, w], data)
    }
}
