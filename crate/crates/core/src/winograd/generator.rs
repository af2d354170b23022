//! Cook–Toom construction of Winograd minimal-filtering transforms.
//!
//! For an output tile of `n` and a kernel of `k`, `alpha = n + k - 1`
//! interpolation points are used: the `alpha - 1` finite points
//! `0, f, -f, 2f, -2f, ...` and the point at infinity. With `H` (alpha x n)
//! and `E` (alpha x k) the evaluation matrices of degree `n - 1` and `k - 1`
//! polynomials at those points and `V` (alpha x alpha) the evaluation matrix
//! for degree `alpha - 1`, the 1-D correlation of a length-`alpha` signal `d`
//! with a kernel `g` is `y = H^T [(E g) ⊙ (V^-T d)]`. The returned matrices
//! are `A = H`, `G = E` and `B = V^-1`, with row `j` of `G` divided by
//! `prod_{m != j} (p_j - p_m)` and column `j` of `B` multiplied by the same
//! factor, which keeps `B` integral for integer points.
//!
//! Everything is computed in exact rational arithmetic and rounded to
//! floating point once. For `F(2, 3)` with `f = 1` the rows of `B^T` are the
//! familiar `[1 0 -1 0] [0 1 1 0] [0 -1 1 0] [0 1 0 -1]` up to sign.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};

/// Largest supported `n + k - 1`; beyond it the transforms lose too much
/// precision in 32-bit arithmetic.
pub const MAX_ALPHA: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct WinogradTransform {
    pub n: usize,
    pub k: usize,
    pub alpha: usize,
    pub f: f64,
    /// `alpha x n`, row-major.
    pub a: Vec<f64>,
    /// `alpha x alpha`, row-major.
    pub b: Vec<f64>,
    /// `alpha x k`, row-major.
    pub g: Vec<f64>,
}

impl WinogradTransform {
    pub fn a_at(&self, r: usize, c: usize) -> f64 {
        self.a[r * self.n + c]
    }

    pub fn b_at(&self, r: usize, c: usize) -> f64 {
        self.b[r * self.alpha + c]
    }

    pub fn g_at(&self, r: usize, c: usize) -> f64 {
        self.g[r * self.k + c]
    }

    /// `A^T` as nested rows (n x alpha).
    pub fn a_t_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| (0..self.alpha).map(|r| self.a_at(r, i)).collect()).collect()
    }

    /// `B^T` as nested rows (alpha x alpha).
    pub fn b_t_rows(&self) -> Vec<Vec<f64>> {
        (0..self.alpha)
            .map(|i| (0..self.alpha).map(|r| self.b_at(r, i)).collect())
            .collect()
    }

    pub fn g_rows(&self) -> Vec<Vec<f64>> {
        (0..self.alpha).map(|r| self.g[r * self.k..][..self.k].to_vec()).collect()
    }

    /// `G w G^T` for a row-major `k x k` kernel, in f64.
    pub fn kernel_transform(&self, w: &[f64]) -> Vec<f64> {
        let (al, k) = (self.alpha, self.k);
        let mut tmp = vec![0.0; al * k];
        for r in 0..al {
            for c in 0..k {
                tmp[r * k + c] = (0..k).map(|u| self.g_at(r, u) * w[u * k + c]).sum();
            }
        }
        let mut out = vec![0.0; al * al];
        for r in 0..al {
            for c in 0..al {
                out[r * al + c] = (0..k).map(|v| tmp[r * k + v] * self.g_at(c, v)).sum();
            }
        }
        out
    }

    /// `B^T x B` for a row-major `alpha x alpha` tile, in f64.
    pub fn input_transform(&self, x: &[f64]) -> Vec<f64> {
        let al = self.alpha;
        let mut tmp = vec![0.0; al * al];
        for r in 0..al {
            for c in 0..al {
                tmp[r * al + c] = (0..al).map(|a| self.b_at(a, r) * x[a * al + c]).sum();
            }
        }
        let mut out = vec![0.0; al * al];
        for r in 0..al {
            for c in 0..al {
                out[r * al + c] = (0..al).map(|b| tmp[r * al + b] * self.b_at(b, c)).sum();
            }
        }
        out
    }

    /// `A^T m A` for a row-major `alpha x alpha` product, giving `n x n`.
    pub fn output_transform(&self, m: &[f64]) -> Vec<f64> {
        let (al, n) = (self.alpha, self.n);
        let mut tmp = vec![0.0; n * al];
        for i in 0..n {
            for c in 0..al {
                tmp[i * al + c] = (0..al).map(|r| self.a_at(r, i) * m[r * al + c]).sum();
            }
        }
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = (0..al).map(|c| tmp[i * al + c] * self.a_at(c, j)).sum();
            }
        }
        out
    }

    /// Full single-tile Winograd evaluation in f64.
    pub fn convolve_tile(&self, w: &[f64], x: &[f64]) -> Vec<f64> {
        let u = self.kernel_transform(w);
        let v = self.input_transform(x);
        let m: Vec<f64> = u.iter().zip(&v).map(|(p, q)| p * q).collect();
        self.output_transform(&m)
    }
}

/// The finite interpolation points `0, f, -f, 2f, -2f, ...`, `count` of them.
fn finite_points(count: usize, f: &BigRational) -> Vec<BigRational> {
    (0..count)
        .map(|i| {
            let mag = BigRational::from_integer(BigInt::from(i.div_ceil(2))) * f;
            if i % 2 == 0 {
                -mag
            } else {
                mag
            }
        })
        .collect()
}

fn pow(x: &BigRational, e: usize) -> BigRational {
    (0..e).fold(BigRational::one(), |acc, _| acc * x)
}

/// Evaluation matrix of polynomials of `cols` coefficients at the points,
/// with a final row selecting the leading coefficient (the point at infinity).
fn evaluation(points: &[BigRational], cols: usize) -> Vec<Vec<BigRational>> {
    let mut rows: Vec<Vec<BigRational>> = points.iter().map(|p| (0..cols).map(|e| pow(p, e)).collect()).collect();
    let mut inf = vec![BigRational::zero(); cols];
    inf[cols - 1] = BigRational::one();
    rows.push(inf);
    rows
}

fn invert(mut m: Vec<Vec<BigRational>>) -> Vec<Vec<BigRational>> {
    let n = m.len();
    let mut inv: Vec<Vec<BigRational>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if i == j { BigRational::one() } else { BigRational::zero() })
                .collect()
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .find(|&r| !m[r][col].is_zero())
            .expect("distinct interpolation points give an invertible Vandermonde matrix");
        m.swap(col, pivot);
        inv.swap(col, pivot);
        let p = m[col][col].clone();
        for j in 0..n {
            m[col][j] = &m[col][j] / &p;
            inv[col][j] = &inv[col][j] / &p;
        }
        for r in 0..n {
            if r == col || m[r][col].is_zero() {
                continue;
            }
            let factor = m[r][col].clone();
            for j in 0..n {
                let a = &m[col][j] * &factor;
                m[r][j] = &m[r][j] - a;
                let b = &inv[col][j] * &factor;
                inv[r][j] = &inv[r][j] - b;
            }
        }
    }
    inv
}

fn to_f64(x: &BigRational) -> f64 {
    x.to_f64().unwrap_or_else(|| {
        let sign = if x.is_negative() { -1.0 } else { 1.0 };
        sign * f64::INFINITY
    })
}

fn flatten(m: &[Vec<BigRational>]) -> Vec<f64> {
    m.iter().flat_map(|row| row.iter().map(to_f64)).collect()
}

/// Builds the `(A, B, G)` triple for `F(n x n, k x k)` with point spacing `f`.
pub fn generate_transforms(n: usize, k: usize, f: f64) -> Result<WinogradTransform> {
    if n == 0 || k == 0 {
        return Err(Error::InvalidParam(format!("tile {n} and kernel {k} must be positive")));
    }
    if !(f.is_finite() && f > 0.0) {
        return Err(Error::InvalidParam(format!("point spacing {f} must be a positive number")));
    }
    let alpha = n + k - 1;
    if alpha > MAX_ALPHA {
        return Err(Error::UnsupportedWinograd { n, k, alpha });
    }
    if alpha == 1 {
        return Ok(WinogradTransform {
            n,
            k,
            alpha,
            f,
            a: vec![1.0],
            b: vec![1.0],
            g: vec![1.0],
        });
    }

    let spacing = BigRational::from_float(f).expect("finite f");
    let points = finite_points(alpha - 1, &spacing);
    let h = evaluation(&points, n);
    let e = evaluation(&points, k);
    let mut b = invert(evaluation(&points, alpha));
    let mut g = e;

    for (j, pj) in points.iter().enumerate() {
        let scale = points
            .iter()
            .enumerate()
            .filter(|(m, _)| *m != j)
            .fold(BigRational::one(), |acc, (_, pm)| acc * (pj - pm));
        for v in g[j].iter_mut() {
            *v = &*v / &scale;
        }
        for row in b.iter_mut() {
            row[j] = &row[j] * &scale;
        }
    }

    Ok(WinogradTransform {
        n,
        k,
        alpha,
        f,
        a: flatten(&h),
        b: flatten(&b),
        g: flatten(&g),
    })
}
