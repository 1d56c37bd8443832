//! Dense row-major tensors of rank 1 to 4.
//!
//! Activations use the `N x C x H x W` convention with the batch outermost.
//! Everything is `f64`; gradient checking depends on it.

use std::fmt;

use crate::error::{shape_err, Result};

pub const MAX_RANK: usize = 4;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

fn check_dims(dims: &[usize]) -> Result<usize> {
    if dims.is_empty() || dims.len() > MAX_RANK {
        return Err(shape_err!("rank must be 1..={MAX_RANK}, got dims {dims:?}"));
    }
    if dims.contains(&0) {
        return Err(shape_err!("zero-sized dimension in {dims:?}"));
    }
    Ok(dims.iter().product())
}

impl Tensor {
    /// Tensor of the given dims with every entry set to `fill`.
    pub fn new(dims: &[usize], fill: f64) -> Result<Tensor> {
        let len = check_dims(dims)?;
        Ok(Tensor {
            dims: dims.to_vec(),
            data: vec![fill; len],
        })
    }

    pub fn zeros(dims: &[usize]) -> Result<Tensor> {
        Tensor::new(dims, 0.0)
    }

    pub fn from_vec(dims: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let len = check_dims(dims)?;
        if data.len() != len {
            return Err(shape_err!(
                "dims {dims:?} need {len} values, got {}",
                data.len()
            ));
        }
        Ok(Tensor {
            dims: dims.to_vec(),
            data,
        })
    }

    /// Build a rank-2 tensor from nested rows. All rows must have equal length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Tensor> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        if rows.iter().any(|r| r.as_ref().len() != cols) {
            return Err(shape_err!("ragged rows"));
        }
        let data = rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect();
        Tensor::from_vec(&[rows.len(), cols], data)
    }

    pub fn zeros_like(other: &Tensor) -> Tensor {
        Tensor {
            dims: other.dims.clone(),
            data: vec![0.0; other.data.len()],
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Same data under new dims; the element count must not change.
    pub fn reshape(&self, dims: &[usize]) -> Result<Tensor> {
        Tensor::from_vec(dims, self.data.clone())
    }

    fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len());
        idx.iter()
            .zip(&self.dims)
            .fold(0, |acc, (&i, &d)| {
                debug_assert!(i < d);
                acc * d + i
            })
    }

    /// Element at a full multi-index. Panics on rank mismatch or out-of-range index.
    pub fn at(&self, idx: &[usize]) -> f64 {
        assert_eq!(idx.len(), self.dims.len(), "index rank mismatch");
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        assert_eq!(idx.len(), self.dims.len(), "index rank mismatch");
        let o = self.offset(idx);
        self.data[o] = value;
    }

    /// Rows x cols for a rank-2 tensor.
    pub fn shape2(&self) -> Result<(usize, usize)> {
        match self.dims[..] {
            [r, c] => Ok((r, c)),
            _ => Err(shape_err!("expected rank 2, got dims {:?}", self.dims)),
        }
    }

    /// Dense product of two rank-2 tensors.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (m, k) = self.shape2()?;
        let (k2, n) = rhs.shape2()?;
        if k != k2 {
            return Err(shape_err!(
                "matmul inner dims disagree: {:?} x {:?}",
                self.dims,
                rhs.dims
            ));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let b_row = &rhs.data[p * n..(p + 1) * n];
                for (o, &b) in row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Tensor::from_vec(&[m, n], out)
    }

    pub fn transpose2(&self) -> Result<Tensor> {
        let (r, c) = self.shape2()?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::from_vec(&[c, r], out)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Extracts the rectangle `[y, y+h) x [x, x+w)` from a rank-2 tensor.
    pub fn crop2(&self, x: usize, y: usize, w: usize, h: usize) -> Result<Tensor> {
        let (rows, cols) = self.shape2()?;
        if w == 0 || h == 0 || x + w > cols || y + h > rows {
            return Err(crate::Error::Bounds(format!(
                "crop ({x},{y},{w},{h}) outside {cols}x{rows} image"
            )));
        }
        let mut data = Vec::with_capacity(w * h);
        for r in y..y + h {
            data.extend_from_slice(&self.data[r * cols + x..r * cols + x + w]);
        }
        Tensor::from_vec(&[h, w], data)
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?} ", self.dims)?;
        let head = &self.data[..self.data.len().min(SHOWN)];
        if self.data.len() > SHOWN {
            write!(f, "{head:?}..")
        } else {
            write!(f, "{head:?}")
        }
    }
}
