use alloc::vec;
use alloc::vec::Vec;

use crate::error::{config_err, Result};
use crate::real::Real;

/// Dense row-major array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(config_err!("tensor shape {:?} has a zero dimension", shape));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(config_err!(
                "tensor shape {:?} needs {} values, got {}",
                shape,
                n,
                data.len()
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![F::zero(); n],
        }
    }

    pub fn full(shape: &[usize], v: F) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![v; n],
        }
    }

    /// Builds a `[rows, cols]` matrix from `f64` values.
    pub fn from_f64(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::new(
            shape.to_vec(),
            values.iter().map(|&v| F::from_f64(v)).collect(),
        )
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Size of the last axis.
    pub fn last_dim(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    /// Product of every axis but the last.
    pub fn rows(&self) -> usize {
        self.data.len() / self.last_dim().max(1)
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(config_err!(
                "cannot reshape {:?} into {:?}",
                self.shape,
                shape
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn row(&self, i: usize) -> &[F] {
        let d = self.last_dim();
        &self.data[i * d..(i + 1) * d]
    }

    /// Concatenates two tensors along their last axis. Leading axes must agree.
    pub fn concat_last(a: &Self, b: &Self) -> Result<Self> {
        if a.shape[..a.shape.len() - 1] != b.shape[..b.shape.len() - 1] {
            return Err(config_err!(
                "cannot concatenate {:?} and {:?} along the last axis",
                a.shape,
                b.shape
            ));
        }
        let (da, db) = (a.last_dim(), b.last_dim());
        let rows = a.rows();
        let mut data = Vec::with_capacity(rows * (da + db));
        for r in 0..rows {
            data.extend_from_slice(&a.data[r * da..(r + 1) * da]);
            data.extend_from_slice(&b.data[r * db..(r + 1) * db]);
        }
        let mut shape = a.shape.clone();
        *shape.last_mut().unwrap() = da + db;
        Ok(Self { shape, data })
    }

    /// Splits the last axis at `at`; inverse of [`Tensor::concat_last`].
    pub fn split_last(&self, at: usize) -> (Self, Self) {
        let d = self.last_dim();
        assert!(at > 0 && at < d, "split point {at} outside (0, {d})");
        let rows = self.rows();
        let mut a = Vec::with_capacity(rows * at);
        let mut b = Vec::with_capacity(rows * (d - at));
        for r in 0..rows {
            let row = &self.data[r * d..(r + 1) * d];
            a.extend_from_slice(&row[..at]);
            b.extend_from_slice(&row[at..]);
        }
        let mut sa = self.shape.clone();
        *sa.last_mut().unwrap() = at;
        let mut sb = self.shape.clone();
        *sb.last_mut().unwrap() = d - at;
        (Self { shape: sa, data: a }, Self { shape: sb, data: b })
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: F) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn sum_sq(&self) -> F {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn cast<G: Real>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| G::from_f64(v.as_f64())).collect(),
        }
    }
}
