//! Dense f64 matrices and a minimal reverse-mode differentiation tape.
//!
//! The matrix type is deliberately small: row-major storage, deterministic
//! left-to-right accumulation, and a finiteness check after every public
//! operation so NaN/Inf never propagate silently into training state.

mod tape;

pub use tape::{LinearMap, NodeId, Tape};

/// Errors raised by matrix and tape operations.
#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: left is {left_rows}x{left_cols}, right is {right_rows}x{right_cols}")]
    ShapeMismatch {
        op: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },
    #[error("{op}: data length {len} does not match {rows}x{cols}")]
    DataLength { op: &'static str, len: usize, rows: usize, cols: usize },
    #[error("{op} produced a non-finite entry")]
    NonFinite { op: &'static str },
    #[error("{op}: row index {index} out of range for {rows} rows")]
    RowOutOfRange { op: &'static str, index: usize, rows: usize },
    #[error("backward root must be 1x1, got {rows}x{cols}")]
    NonScalarRoot { rows: usize, cols: usize },
    #[error("node {0} does not exist on this tape")]
    UnknownNode(usize),
}

pub type TensorResult<T> = Result<T, TensorError>;

/// Row-major dense matrix of 64-bit floats.
///
/// Instances are immutable after construction and safe to share across
/// worker threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

fn check_finite(op: &'static str, data: &[f64]) -> TensorResult<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(TensorError::NonFinite { op })
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> TensorResult<Self> {
        if data.len() != rows * cols {
            return Err(TensorError::DataLength { op: "new", len: data.len(), rows, cols });
        }
        check_finite("new", &data)?;
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> TensorResult<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::new(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
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

    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    fn same_shape(&self, other: &Self, op: &'static str) -> TensorResult<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(TensorError::ShapeMismatch {
                op,
                left_rows: self.rows,
                left_cols: self.cols,
                right_rows: other.rows,
                right_cols: other.cols,
            });
        }
        Ok(())
    }

    /// Standard matrix product. Accumulation runs row-major, left to right,
    /// so results are bit-reproducible for identical inputs.
    pub fn matmul(&self, other: &Self) -> TensorResult<Self> {
        if self.cols != other.rows {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left_rows: self.rows,
                left_cols: self.cols,
                right_rows: other.rows,
                right_cols: other.cols,
            });
        }
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let arow = &self.data[i * k..(i + 1) * k];
            let orow = &mut out[i * m..(i + 1) * m];
            for (kk, &aik) in arow.iter().enumerate() {
                let brow = &other.data[kk * m..(kk + 1) * m];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += aik * b;
                }
            }
        }
        check_finite("matmul", &out)?;
        Ok(Self { rows: n, cols: m, data: out })
    }

    pub fn add(&self, other: &Self) -> TensorResult<Self> {
        self.same_shape(other, "add")?;
        let data: Vec<f64> = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        check_finite("add", &data)?;
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    pub fn sub(&self, other: &Self) -> TensorResult<Self> {
        self.same_shape(other, "sub")?;
        let data: Vec<f64> = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        check_finite("sub", &data)?;
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    pub fn hadamard(&self, other: &Self) -> TensorResult<Self> {
        self.same_shape(other, "hadamard")?;
        let data: Vec<f64> = self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect();
        check_finite("hadamard", &data)?;
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    pub fn scale(&self, factor: f64) -> TensorResult<Self> {
        let data: Vec<f64> = self.data.iter().map(|a| a * factor).collect();
        check_finite("scale", &data)?;
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    /// Elementwise map. The closure must keep values finite.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> TensorResult<Self> {
        let data: Vec<f64> = self.data.iter().map(|&a| f(a)).collect();
        check_finite("map", &data)?;
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    pub fn transpose(&self) -> Self {
        let mut data = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        Self { rows: self.cols, cols: self.rows, data }
    }

    /// self * other^T without materializing the transpose.
    pub fn matmul_bt(&self, other: &Self) -> TensorResult<Self> {
        if self.cols != other.cols {
            return Err(TensorError::ShapeMismatch {
                op: "matmul_bt",
                left_rows: self.rows,
                left_cols: self.cols,
                right_rows: other.cols,
                right_cols: other.rows,
            });
        }
        let (n, k, m) = (self.rows, self.cols, other.rows);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let arow = &self.data[i * k..(i + 1) * k];
            let orow = &mut out[i * m..(i + 1) * m];
            for (j, o) in orow.iter_mut().enumerate() {
                let brow = &other.data[j * k..(j + 1) * k];
                let mut acc = 0.0;
                for (a, b) in arow.iter().zip(brow) {
                    acc += a * b;
                }
                *o = acc;
            }
        }
        check_finite("matmul_bt", &out)?;
        Ok(Self { rows: n, cols: m, data: out })
    }

    /// self^T * other without materializing the transpose.
    pub fn matmul_at(&self, other: &Self) -> TensorResult<Self> {
        if self.rows != other.rows {
            return Err(TensorError::ShapeMismatch {
                op: "matmul_at",
                left_rows: self.cols,
                left_cols: self.rows,
                right_rows: other.rows,
                right_cols: other.cols,
            });
        }
        let (k, n, m) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; n * m];
        for kk in 0..k {
            let arow = &self.data[kk * n..(kk + 1) * n];
            let brow = &other.data[kk * m..(kk + 1) * m];
            for (i, &a) in arow.iter().enumerate() {
                let orow = &mut out[i * m..(i + 1) * m];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        check_finite("matmul_at", &out)?;
        Ok(Self { rows: n, cols: m, data: out })
    }

    /// Adds a 1xC row vector to every row.
    pub fn add_row_broadcast(&self, row: &Self) -> TensorResult<Self> {
        if row.rows != 1 || row.cols != self.cols {
            return Err(TensorError::ShapeMismatch {
                op: "add_row_broadcast",
                left_rows: self.rows,
                left_cols: self.cols,
                right_rows: row.rows,
                right_cols: row.cols,
            });
        }
        let mut data = self.data.clone();
        for r in 0..self.rows {
            for c in 0..self.cols {
                data[r * self.cols + c] += row.data[c];
            }
        }
        check_finite("add_row_broadcast", &data)?;
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    /// New matrix made of the given rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> TensorResult<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            if i >= self.rows {
                return Err(TensorError::RowOutOfRange { op: "select_rows", index: i, rows: self.rows });
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(Self { rows: indices.len(), cols: self.cols, data })
    }

    /// Vertical concatenation.
    pub fn vcat(&self, other: &Self) -> TensorResult<Self> {
        if self.cols != other.cols {
            return Err(TensorError::ShapeMismatch {
                op: "vcat",
                left_rows: self.rows,
                left_cols: self.cols,
                right_rows: other.rows,
                right_cols: other.cols,
            });
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Self { rows: self.rows + other.rows, cols: self.cols, data })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0_f64, |acc, (a, b)| acc.max((a - b).abs()))
    }

    /// self + factor * other, shapes must match.
    pub fn add_scaled(&self, other: &Self, factor: f64) -> TensorResult<Self> {
        self.same_shape(other, "add_scaled")?;
        let data: Vec<f64> =
            self.data.iter().zip(&other.data).map(|(a, b)| a + factor * b).collect();
        check_finite("add_scaled", &data)?;
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, v: &[f64]) -> Matrix {
        Matrix::new(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_left() {
        let a = m(2, 2, &[3.0, -1.5, 0.25, 7.0]);
        let out = Matrix::identity(2).matmul(&a).unwrap();
        assert_eq!(out, a);
    }

    #[test]
    fn matmul_hand_example() {
        let a = m(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = m(2, 1, &[5.0, 6.0]);
        let out = a.matmul(&b).unwrap();
        assert_eq!(out.data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_zero_annihilates() {
        let a = m(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let z = Matrix::zeros(3, 2);
        let out = a.matmul(&z).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_shape_error() {
        let a = m(2, 3, &[0.0; 6]);
        let b = m(2, 2, &[0.0; 4]);
        assert!(matches!(a.matmul(&b), Err(TensorError::ShapeMismatch { .. })));
    }

    #[test]
    fn non_finite_rejected() {
        assert!(matches!(
            Matrix::new(1, 2, vec![1.0, f64::NAN]),
            Err(TensorError::NonFinite { .. })
        ));
        let a = m(1, 1, &[1e308]);
        assert!(matches!(a.add(&a), Err(TensorError::NonFinite { .. })));
    }

    #[test]
    fn transpose_and_select() {
        let a = m(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let t = a.transpose();
        assert_eq!(t.shape(), (3, 2));
        assert_eq!(t.row(1), &[2.0, 5.0]);
        let s = a.select_rows(&[1, 0]).unwrap();
        assert_eq!(s.row(0), &[4.0, 5.0, 6.0]);
        assert!(a.select_rows(&[2]).is_err());
    }

    #[test]
    fn matmul_deterministic_repeat() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let a = Matrix::from_fn(13, 17, |_, _| rng.gen_range(-1.0..1.0)).unwrap();
        let b = Matrix::from_fn(17, 9, |_, _| rng.gen_range(-1.0..1.0)).unwrap();
        let c1 = a.matmul(&b).unwrap();
        let c2 = a.matmul(&b).unwrap();
        assert_eq!(c1.data(), c2.data());
    }
}
