use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![S::zero(); len],
        }
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::shape("tensor construction", &[len], &[data.len()]));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Builds a matrix from row slices; all rows must share a length.
    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::shape("tensor rows", &[cols], &[row.len()]));
            }
            data.extend_from_slice(row);
        }
        Self::from_vec(&[rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[1]
    }

    pub fn row(&self, r: usize) -> &[S] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [S] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> S {
        self.data[r * self.shape[1] + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut S {
        let cols = self.shape[1];
        &mut self.data[r * cols + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Column `c` of a matrix as an owned vector.
    pub fn column(&self, c: usize) -> Vec<S> {
        (0..self.rows()).map(|r| self.at(r, c)).collect()
    }

    /// `self · rhs` for `[m x k] · [k x n]`.
    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        let (m, k) = (self.rows(), self.cols());
        if rhs.rows() != k {
            return Err(Error::shape("matmul", &[k, rhs.cols()], rhs.shape()));
        }
        let n = rhs.cols();
        let mut out = Self::zeros(&[m, n]);
        gemm(
            m,
            k,
            n,
            (&self.data, k as isize, 1),
            (&rhs.data, n as isize, 1),
            S::zero(),
            &mut out.data,
        );
        Ok(out)
    }

    /// `selfᵀ · rhs` for `[k x m]ᵀ · [k x n]`.
    pub fn matmul_tn(&self, rhs: &Self) -> Result<Self> {
        let (k, m) = (self.rows(), self.cols());
        if rhs.rows() != k {
            return Err(Error::shape("matmul_tn", &[k, rhs.cols()], rhs.shape()));
        }
        let n = rhs.cols();
        let mut out = Self::zeros(&[m, n]);
        gemm(
            m,
            k,
            n,
            (&self.data, 1, m as isize),
            (&rhs.data, n as isize, 1),
            S::zero(),
            &mut out.data,
        );
        Ok(out)
    }

    /// `self · rhsᵀ` for `[m x k] · [n x k]ᵀ`.
    pub fn matmul_nt(&self, rhs: &Self) -> Result<Self> {
        let (m, k) = (self.rows(), self.cols());
        if rhs.cols() != k {
            return Err(Error::shape("matmul_nt", &[rhs.rows(), k], rhs.shape()));
        }
        let n = rhs.rows();
        let mut out = Self::zeros(&[m, n]);
        gemm(
            m,
            k,
            n,
            (&self.data, k as isize, 1),
            (&rhs.data, 1, k as isize),
            S::zero(),
            &mut out.data,
        );
        Ok(out)
    }

    /// Adds `bias` to every row.
    pub fn add_row_vector(&mut self, bias: &[S]) {
        let c = self.cols();
        debug_assert_eq!(c, bias.len());
        for row in self.data.chunks_exact_mut(c) {
            for (v, &b) in row.iter_mut().zip(bias) {
                *v += b;
            }
        }
    }

    /// Column sums of a matrix.
    pub fn sum_rows(&self) -> Vec<S> {
        let c = self.cols();
        let mut out = vec![S::zero(); c];
        for row in self.data.chunks_exact(c) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }

    /// Column means of a matrix.
    pub fn mean_rows(&self) -> Vec<S> {
        let n = S::of(self.rows() as f64);
        self.sum_rows().into_iter().map(|v| v / n).collect()
    }

    /// Rows selected by index, in order.
    pub fn gather_rows(&self, idx: &[usize]) -> Self {
        let c = self.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            shape: vec![idx.len(), c],
            data,
        }
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| T::of(v.as_f64())).collect(),
        }
    }
}

/// Row-major product into a contiguous `m x n` output; operands carry their strides.
fn gemm<S: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: (&[S], isize, isize),
    b: (&[S], isize, isize),
    beta: S,
    c: &mut [S],
) {
    assert!(a.0.len() >= m * k && b.0.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    // SAFETY: bounds asserted above; strides describe the slices' layouts and
    // `c` is a distinct mutable borrow.
    unsafe {
        S::gemm_raw(
            m,
            k,
            n,
            S::one(),
            a.0.as_ptr(),
            a.1,
            a.2,
            b.0.as_ptr(),
            b.1,
            b.2,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
