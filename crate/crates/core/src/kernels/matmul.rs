use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, v: f32) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![v; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let data = (0..rows * cols).map(|i| f(i / cols.max(1), i % cols.max(1))).collect();
        Matrix { rows, cols, data }
    }

    pub fn at(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }
}

pub(crate) fn check_dims(a: &Matrix, b: &Matrix) -> Result<()> {
    if a.cols != b.rows {
        return Err(Error::DimMismatch {
            lhs_rows: a.rows,
            lhs_cols: a.cols,
            rhs_rows: b.rows,
            rhs_cols: b.cols,
        });
    }
    Ok(())
}

/// `c = a * b` over strided row-major views, `a` is `n x k`, `b` is `k x m`.
///
/// Every output accumulates its `k` products in ascending order starting
/// from zero; the i-k-j loop nest keeps that order while streaming rows of `b`.
#[allow(clippy::too_many_arguments)]
pub fn gemm_direct(n: usize, k: usize, m: usize, a: &[f32], lda: usize, b: &[f32], ldb: usize, c: &mut [f32], ldc: usize) {
    for i in 0..n {
        let crow = &mut c[i * ldc..][..m];
        crow.fill(0.0);
        let arow = &a[i * lda..][..k];
        for (kk, &aik) in arow.iter().enumerate() {
            let brow = &b[kk * ldb..][..m];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += aik * bv;
            }
        }
    }
}

pub fn matmul_direct(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    check_dims(a, b)?;
    let mut c = Matrix::zeros(a.rows, b.cols);
    gemm_direct(a.rows, a.cols, b.cols, &a.data, a.cols, &b.data, b.cols, &mut c.data, b.cols);
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_left() {
        let a = Matrix::from_fn(5, 3, |r, c| (r * 3 + c) as f32 - 4.0);
        assert_eq!(matmul_direct(&Matrix::identity(5), &a).unwrap(), a);
    }

    #[test]
    fn scalar() {
        let c = matmul_direct(&Matrix::filled(1, 1, 2.0), &Matrix::filled(1, 1, 3.0)).unwrap();
        assert_eq!(c.data, [6.0]);
    }

    #[test]
    fn small_known_product() {
        let a = Matrix::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Matrix::new(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        assert_eq!(matmul_direct(&a, &b).unwrap().data, [58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn mismatch_rejected() {
        let err = matmul_direct(&Matrix::zeros(2, 3), &Matrix::zeros(2, 3)).unwrap_err();
        assert!(matches!(
            err,
            Error::DimMismatch {
                lhs_cols: 3,
                rhs_rows: 2,
                ..
            }
        ));
    }

    #[test]
    fn empty_operands() {
        let c = matmul_direct(&Matrix::zeros(3, 0), &Matrix::zeros(0, 4)).unwrap();
        assert_eq!(c, Matrix::zeros(3, 4));
    }
}
