//! Strassen multiplication in the Winograd form (7 products, 15 additions:
//! 4 on `A` blocks, 4 on `B` blocks, 7 on product blocks), recursing only
//! while the saved multiplications outnumber the extra additions.

use super::matmul::{check_dims, gemm_direct, Matrix};
use super::MatDims;
use crate::error::Result;

/// True when one more Strassen level pays off:
/// `mnk - 7(m/2)(n/2)(k/2) > 4(m/2)(k/2) + 4(n/2)(k/2) + 7(m/2)(n/2)`.
///
/// Odd extents are padded to the next even size first, so `x/2` is
/// `ceil(x/2)` and the left-hand product uses the padded sizes.
pub fn strassen_should_recurse(d: MatDims) -> bool {
    let (nh, kh, mh) = (half(d.n), half(d.k), half(d.m));
    let (n, k, m) = (2 * nh, 2 * kh, 2 * mh);
    let saved = m * n * k - 7 * mh * nh * kh;
    let extra = 4 * mh * kh + 4 * nh * kh + 7 * mh * nh;
    saved > extra
}

fn half(x: usize) -> u128 {
    x.div_ceil(2) as u128
}

/// Number of levels the recursion takes for `d`, found by iterating the
/// cutoff on halved sizes.
pub fn strassen_depth(mut d: MatDims) -> usize {
    let mut depth = 0;
    while strassen_should_recurse(d) {
        depth += 1;
        d = MatDims::new(d.n.div_ceil(2), d.k.div_ceil(2), d.m.div_ceil(2));
    }
    depth
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StrassenStats {
    /// Deepest recursion level reached.
    pub depth: usize,
    /// Products delegated to the direct kernel.
    pub leaf_products: usize,
}

/// A Strassen multiplication of fixed size with its scratch requirement known
/// up front, so repeated runs never allocate.
#[derive(Debug, Clone, Copy)]
pub struct StrassenGemm {
    dims: MatDims,
    threads: usize,
}

impl StrassenGemm {
    pub fn new(dims: MatDims, threads: usize) -> Self {
        StrassenGemm {
            dims,
            threads: threads.max(1),
        }
    }

    pub fn dims(&self) -> MatDims {
        self.dims
    }

    /// Scratch floats needed by [`StrassenGemm::run`].
    pub fn scratch_len(&self) -> usize {
        scratch_len(self.dims, self.threads > 1)
    }

    /// `c = a * b` over strided row-major views.
    #[allow(clippy::too_many_arguments)]
    pub fn run(&self, a: &[f32], lda: usize, b: &[f32], ldb: usize, c: &mut [f32], ldc: usize, scratch: &mut [f32]) -> StrassenStats {
        let d = self.dims;
        assert!(scratch.len() >= self.scratch_len(), "strassen scratch too small");
        recurse(
            d.n,
            d.k,
            d.m,
            Operand { data: a, ld: lda },
            Operand { data: b, ld: ldb },
            c,
            ldc,
            scratch,
            self.threads,
        )
    }
}

fn scratch_len(d: MatDims, parallel: bool) -> usize {
    if !strassen_should_recurse(d) {
        return 0;
    }
    let (nh, kh, mh) = (d.n.div_ceil(2), d.k.div_ceil(2), d.m.div_ceil(2));
    let pad = if d.n % 2 + d.k % 2 + d.m % 2 > 0 {
        4 * (nh * kh + kh * mh + nh * mh)
    } else {
        0
    };
    let child = scratch_len(MatDims::new(nh, kh, mh), false);
    pad + 4 * nh * kh + 4 * kh * mh + 7 * nh * mh + child * if parallel { 7 } else { 1 }
}

#[derive(Clone, Copy)]
struct Operand<'a> {
    data: &'a [f32],
    ld: usize,
}

impl<'a> Operand<'a> {
    fn offset(self, rows: usize, cols: usize) -> Operand<'a> {
        Operand {
            data: &self.data[rows * self.ld + cols..],
            ld: self.ld,
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn recurse(
    n: usize,
    k: usize,
    m: usize,
    a: Operand,
    b: Operand,
    c: &mut [f32],
    ldc: usize,
    ws: &mut [f32],
    threads: usize,
) -> StrassenStats {
    if !strassen_should_recurse(MatDims::new(n, k, m)) {
        gemm_direct(n, k, m, a.data, a.ld, b.data, b.ld, c, ldc);
        return StrassenStats {
            depth: 0,
            leaf_products: 1,
        };
    }
    if n % 2 + k % 2 + m % 2 == 0 {
        return even_level(n, k, m, a, b, c, ldc, ws, threads);
    }
    // zero-pad to even sizes, multiply, strip
    let (pn, pk, pm) = (n.div_ceil(2) * 2, k.div_ceil(2) * 2, m.div_ceil(2) * 2);
    let (ap, rest) = ws.split_at_mut(pn * pk);
    let (bp, rest) = rest.split_at_mut(pk * pm);
    let (cp, rest) = rest.split_at_mut(pn * pm);
    copy_padded(a, n, k, ap, pn, pk);
    copy_padded(b, k, m, bp, pk, pm);
    let stats = even_level(
        pn,
        pk,
        pm,
        Operand { data: ap, ld: pk },
        Operand { data: bp, ld: pm },
        cp,
        pm,
        rest,
        threads,
    );
    for i in 0..n {
        c[i * ldc..][..m].copy_from_slice(&cp[i * pm..][..m]);
    }
    stats
}

fn copy_padded(src: Operand, rows: usize, cols: usize, dst: &mut [f32], prows: usize, pcols: usize) {
    for i in 0..prows {
        let row = &mut dst[i * pcols..][..pcols];
        if i < rows {
            row[..cols].copy_from_slice(&src.data[i * src.ld..][..cols]);
            row[cols..].fill(0.0);
        } else {
            row.fill(0.0);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn even_level(
    n: usize,
    k: usize,
    m: usize,
    a: Operand,
    b: Operand,
    c: &mut [f32],
    ldc: usize,
    ws: &mut [f32],
    threads: usize,
) -> StrassenStats {
    let (nh, kh, mh) = (n / 2, k / 2, m / 2);
    let (sbuf, rest) = ws.split_at_mut(4 * nh * kh);
    let (tbuf, rest) = rest.split_at_mut(4 * kh * mh);
    let (mbuf, child) = rest.split_at_mut(7 * nh * mh);

    {
        let (s1, r) = sbuf.split_at_mut(nh * kh);
        let (s2, r) = r.split_at_mut(nh * kh);
        let (s3, s4) = r.split_at_mut(nh * kh);
        for i in 0..nh {
            for j in 0..kh {
                let a11 = a.data[i * a.ld + j];
                let a12 = a.data[i * a.ld + kh + j];
                let a21 = a.data[(i + nh) * a.ld + j];
                let a22 = a.data[(i + nh) * a.ld + kh + j];
                let x = i * kh + j;
                s1[x] = a21 + a22;
                s2[x] = s1[x] - a11;
                s3[x] = a11 - a21;
                s4[x] = a12 - s2[x];
            }
        }
    }
    {
        let (t1, r) = tbuf.split_at_mut(kh * mh);
        let (t2, r) = r.split_at_mut(kh * mh);
        let (t3, t4) = r.split_at_mut(kh * mh);
        for i in 0..kh {
            for j in 0..mh {
                let b11 = b.data[i * b.ld + j];
                let b12 = b.data[i * b.ld + mh + j];
                let b21 = b.data[(i + kh) * b.ld + j];
                let b22 = b.data[(i + kh) * b.ld + mh + j];
                let x = i * mh + j;
                t1[x] = b12 - b11;
                t2[x] = b22 - t1[x];
                t3[x] = b22 - b12;
                t4[x] = t2[x] - b21;
            }
        }
    }

    let s = |i: usize| Operand {
        data: &sbuf[i * nh * kh..][..nh * kh],
        ld: kh,
    };
    let t = |i: usize| Operand {
        data: &tbuf[i * kh * mh..][..kh * mh],
        ld: mh,
    };
    let operands: [(Operand, Operand); 7] = [
        (a, b),                             // M1 = A11 B11
        (a.offset(0, kh), b.offset(kh, 0)), // M2 = A12 B21
        (s(3), b.offset(kh, mh)),           // M3 = S4 B22
        (a.offset(nh, kh), t(3)),           // M4 = A22 T4
        (s(0), t(0)),                       // M5 = S1 T1
        (s(1), t(1)),                       // M6 = S2 T2
        (s(2), t(2)),                       // M7 = S3 T3
    ];

    let mut stats = StrassenStats::default();
    let mut merge = |st: StrassenStats| {
        stats.depth = stats.depth.max(st.depth + 1);
        stats.leaf_products += st.leaf_products;
    };
    let products = mbuf.chunks_mut(nh * mh);
    if threads > 1 {
        let child_len = child.len() / 7;
        let workers = threads.min(7);
        let mut tasks: Vec<Vec<_>> = (0..workers).map(|_| Vec::new()).collect();
        let mut rest = child;
        for (i, (ops, out)) in operands.into_iter().zip(products).enumerate() {
            let (ws, tail) = rest.split_at_mut(child_len);
            rest = tail;
            tasks[i % workers].push((ops, out, ws));
        }
        let results: Vec<StrassenStats> = std::thread::scope(|sc| {
            let handles: Vec<_> = tasks
                .into_iter()
                .map(|list| {
                    sc.spawn(move || {
                        list.into_iter()
                            .map(|((x, y), out, ws)| recurse(nh, kh, mh, x, y, out, mh, ws, 1))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("strassen worker panicked"))
                .collect()
        });
        results.into_iter().for_each(&mut merge);
    } else {
        for ((x, y), out) in operands.into_iter().zip(products) {
            merge(recurse(nh, kh, mh, x, y, out, mh, child, 1));
        }
    }

    let mm = |i: usize| &mbuf[i * nh * mh..][..nh * mh];
    let (m1, m2, m3, m4, m5, m6, m7) = (mm(0), mm(1), mm(2), mm(3), mm(4), mm(5), mm(6));
    for i in 0..nh {
        for j in 0..mh {
            let x = i * mh + j;
            let u2 = m1[x] + m6[x];
            let u3 = u2 + m7[x];
            let u4 = u2 + m5[x];
            c[i * ldc + j] = m1[x] + m2[x];
            c[i * ldc + mh + j] = u4 + m3[x];
            c[(i + nh) * ldc + j] = u3 - m4[x];
            c[(i + nh) * ldc + mh + j] = u3 + m5[x];
        }
    }
    stats
}

pub fn matmul_strassen(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    matmul_strassen_with(a, b, 1).map(|(c, _)| c)
}

/// Strassen product using `threads` workers for the top-level products.
pub fn matmul_strassen_with(a: &Matrix, b: &Matrix, threads: usize) -> Result<(Matrix, StrassenStats)> {
    check_dims(a, b)?;
    let gemm = StrassenGemm::new(MatDims::new(a.rows, a.cols, b.cols), threads);
    let mut scratch = vec![0.0; gemm.scratch_len()];
    let mut c = Matrix::zeros(a.rows, b.cols);
    let stats = gemm.run(&a.data, a.cols, &b.data, b.cols, &mut c.data, b.cols, &mut scratch);
    Ok((c, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::matmul_direct;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn rel_dev(x: &Matrix, y: &Matrix) -> f32 {
        let scale = y.data.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        x.data.iter().zip(&y.data).fold(0.0f32, |m, (p, q)| m.max((p - q).abs())) / (scale + f32::EPSILON)
    }

    #[test]
    fn cutoff_hand_values() {
        // 256^3 - 7*128^3 = 2,097,152 > 15 * 128^2 = 245,760
        assert!(strassen_should_recurse(MatDims::new(256, 256, 256)));
        // 16^3 - 7*8^3 = 512 <= 15 * 8^2 = 960
        assert!(!strassen_should_recurse(MatDims::new(16, 16, 16)));
        assert!(!strassen_should_recurse(MatDims::new(0, 100, 100)));
        assert!(!strassen_should_recurse(MatDims::new(1, 1, 1)));
        // square crossover sits between 30 and 32
        assert!(strassen_should_recurse(MatDims::new(32, 32, 32)));
        assert!(!strassen_should_recurse(MatDims::new(30, 30, 30)));
    }

    #[test]
    fn depth_prediction() {
        assert_eq!(strassen_depth(MatDims::new(16, 16, 16)), 0);
        assert_eq!(strassen_depth(MatDims::new(32, 32, 32)), 1);
        assert_eq!(strassen_depth(MatDims::new(1024, 1024, 1024)), 6);
    }

    #[test]
    fn ones_exact() {
        let a = Matrix::filled(256, 256, 1.0);
        let (c, stats) = matmul_strassen_with(&a, &a, 1).unwrap();
        assert!(c.data.iter().all(|&v| v == 256.0));
        assert_eq!(c, matmul_direct(&a, &a).unwrap());
        assert_eq!(stats.depth, strassen_depth(MatDims::new(256, 256, 256)));
        assert_eq!(stats.leaf_products, 7usize.pow(stats.depth as u32));
    }

    #[test]
    fn odd_and_rectangular_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (n, k, m) in [(33, 65, 47), (100, 1, 100), (1, 200, 200), (97, 97, 97), (64, 130, 3)] {
            let a = random(n, k, &mut rng);
            let b = random(k, m, &mut rng);
            let (c, stats) = matmul_strassen_with(&a, &b, 1).unwrap();
            assert_eq!(stats.depth, strassen_depth(MatDims::new(n, k, m)));
            assert!(rel_dev(&c, &matmul_direct(&a, &b).unwrap()) <= 1e-4, "{n}x{k}x{m}");
        }
    }

    #[test]
    fn threads_bitwise_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random(130, 96, &mut rng);
        let b = random(96, 70, &mut rng);
        let one = matmul_strassen_with(&a, &b, 1).unwrap().0;
        for t in [2, 4, 8] {
            assert_eq!(matmul_strassen_with(&a, &b, t).unwrap().0, one);
        }
    }

    #[test]
    fn dim_mismatch() {
        assert!(matmul_strassen(&Matrix::zeros(4, 5), &Matrix::zeros(4, 5)).is_err());
    }
}
