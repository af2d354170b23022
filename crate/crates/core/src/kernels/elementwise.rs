use crate::graph::{Pool2dAttrs, PoolMode};

pub fn relu_in_place(x: &mut [f32]) {
    for v in x {
        *v = v.max(0.0);
    }
}

pub fn add_into(a: &[f32], b: &[f32], out: &mut [f32]) {
    for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
        *o = x + y;
    }
}

/// Pooling over NCHW planes. Average pooling divides by the number of
/// in-bounds taps.
pub fn pool_into(x: &[f32], (n, c, h, w): (usize, usize, usize, usize), attrs: &Pool2dAttrs, out: &mut [f32]) {
    let (k_h, k_w, stride, pad) = if attrs.global {
        (h, w, 1, 0)
    } else {
        (attrs.kernel, attrs.kernel, attrs.stride, attrs.pad)
    };
    let oh = (h + 2 * pad - k_h) / stride + 1;
    let ow = (w + 2 * pad - k_w) / stride + 1;
    for plane in 0..n * c {
        let src = &x[plane * h * w..][..h * w];
        let dst = &mut out[plane * oh * ow..][..oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let y0 = (oy * stride) as isize - pad as isize;
                let x0 = (ox * stride) as isize - pad as isize;
                let mut acc = match attrs.mode {
                    PoolMode::Max => f32::NEG_INFINITY,
                    PoolMode::Avg => 0.0,
                };
                let mut count = 0usize;
                for u in 0..k_h as isize {
                    let yy = y0 + u;
                    if yy < 0 || yy >= h as isize {
                        continue;
                    }
                    for v in 0..k_w as isize {
                        let xx = x0 + v;
                        if xx < 0 || xx >= w as isize {
                            continue;
                        }
                        let val = src[yy as usize * w + xx as usize];
                        acc = match attrs.mode {
                            PoolMode::Max => acc.max(val),
                            PoolMode::Avg => acc + val,
                        };
                        count += 1;
                    }
                }
                dst[oy * ow + ox] = match attrs.mode {
                    PoolMode::Max => acc,
                    PoolMode::Avg => acc / count.max(1) as f32,
                };
            }
        }
    }
}

/// Softmax along axis 1 of an `(n, c, inner)` view.
pub fn softmax_into(x: &[f32], n: usize, c: usize, inner: usize, out: &mut [f32]) {
    for b in 0..n {
        for i in 0..inner {
            let at = |ch: usize| (b * c + ch) * inner + i;
            let max = (0..c).map(|ch| x[at(ch)]).fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0f32;
            for ch in 0..c {
                let e = (x[at(ch)] - max).exp();
                out[at(ch)] = e;
                sum += e;
            }
            for ch in 0..c {
                out[at(ch)] /= sum;
            }
        }
    }
}
