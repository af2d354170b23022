use super::{activate, for_each_chunk, ConvParams};
use crate::error::{Error, Result};
use crate::tensor::{channel_blocks, Layout, Shape, Tensor, LANES};

/// Re-lays OIHW weights as `[oc_block][ic_per_group][kh][kw][4]`, output
/// channels in the vector lanes. Lanes past `out_channels` are zero.
pub fn pack_conv_weights(weights: &[f32], p: &ConvParams) -> Vec<f32> {
    let icg = p.in_channels / p.groups;
    let taps = p.kernel_h * p.kernel_w;
    let ocb = channel_blocks(p.out_channels);
    let mut packed = vec![0.0; ocb * icg * taps * LANES];
    for o in 0..p.out_channels {
        let (ob, lane) = (o / LANES, o % LANES);
        for c in 0..icg {
            for t in 0..taps {
                packed[((ob * icg + c) * taps + t) * LANES + lane] = weights[(o * icg + c) * taps + t];
            }
        }
    }
    packed
}

/// Direct convolution over NC4HW4 buffers.
///
/// `x` has logical dims `(n, in_channels, h, w)`; `out` receives
/// `(n, out_channels, oh, ow)`, pad lanes written as zero. Each output pixel
/// accumulates over (input channel, kernel row, kernel column) in ascending
/// order, so results do not depend on `threads`.
#[allow(clippy::too_many_arguments)]
pub fn conv_sliding_into(
    x: &[f32],
    dims: (usize, usize, usize, usize),
    packed_weights: &[f32],
    bias: &[f32],
    p: &ConvParams,
    threads: usize,
    out: &mut [f32],
) -> Result<()> {
    let (n, ic, h, w) = dims;
    if ic != p.in_channels || p.groups == 0 || !ic.is_multiple_of(p.groups) || !p.out_channels.is_multiple_of(p.groups) {
        return Err(Error::ShapeMismatch(format!(
            "input has {ic} channels, conv expects {} in {} groups",
            p.in_channels, p.groups
        )));
    }
    let (oh, ow) = p
        .output_hw(h, w)
        .ok_or_else(|| Error::ShapeMismatch(format!("kernel {}x{} exceeds padded input {h}x{w}", p.kernel_h, p.kernel_w)))?;
    let icb = channel_blocks(ic);
    let ocb = channel_blocks(p.out_channels);
    if x.len() != n * icb * h * w * LANES || out.len() != n * ocb * oh * ow * LANES {
        return Err(Error::ShapeMismatch("packed buffer lengths do not match dims".into()));
    }
    if bias.len() != p.out_channels {
        return Err(Error::ShapeMismatch(format!(
            "bias has {} values, expected {}",
            bias.len(),
            p.out_channels
        )));
    }
    let icg = ic / p.groups;
    let ocg = p.out_channels / p.groups;
    let taps = p.kernel_h * p.kernel_w;
    let (kh, kw, s) = (p.kernel_h, p.kernel_w, p.stride);
    let (ph, pw) = (p.pad_h as isize, p.pad_w as isize);
    let plane = h * w * LANES;

    for_each_chunk(out, oh * ow * LANES, threads, |chunk, dst| {
        let (b, ob) = (chunk / ocb, chunk % ocb);
        let image = &x[b * icb * plane..][..icb * plane];
        let wblock = &packed_weights[ob * icg * taps * LANES..][..icg * taps * LANES];
        // input channel feeding lane `l` for local channel 0, or None for pad lanes
        let mut base = [None; LANES];
        for (l, slot) in base.iter_mut().enumerate() {
            let o = ob * LANES + l;
            if o < p.out_channels {
                *slot = Some((o / ocg) * icg);
            }
        }
        let mut lane_bias = [0.0f32; LANES];
        for l in 0..LANES {
            if base[l].is_some() {
                lane_bias[l] = bias[ob * LANES + l];
            }
        }
        for oy in 0..oh {
            let iy0 = (oy * s) as isize - ph;
            let u0 = (-iy0).max(0) as usize;
            let u1 = ((h as isize - iy0).min(kh as isize)).max(0) as usize;
            for ox in 0..ow {
                let ix0 = (ox * s) as isize - pw;
                let v0 = (-ix0).max(0) as usize;
                let v1 = ((w as isize - ix0).min(kw as isize)).max(0) as usize;
                let mut acc = [0.0f32; LANES];
                if p.groups == 1 {
                    for c in 0..icg {
                        let src = &image[(c / LANES) * plane..][..plane];
                        let cl = c % LANES;
                        for u in u0..u1 {
                            let row = ((iy0 + u as isize) as usize) * w;
                            for v in v0..v1 {
                                let xv = src[(row + (ix0 + v as isize) as usize) * LANES + cl];
                                let wv = &wblock[((c * taps) + u * kw + v) * LANES..][..LANES];
                                for l in 0..LANES {
                                    acc[l] += wv[l] * xv;
                                }
                            }
                        }
                    }
                } else {
                    for c in 0..icg {
                        for u in u0..u1 {
                            let row = ((iy0 + u as isize) as usize) * w;
                            for v in v0..v1 {
                                let pix = row + (ix0 + v as isize) as usize;
                                let wv = &wblock[((c * taps) + u * kw + v) * LANES..][..LANES];
                                for l in 0..LANES {
                                    if let Some(c0) = base[l] {
                                        let ch = c0 + c;
                                        acc[l] += wv[l] * image[(ch / LANES) * plane + pix * LANES + ch % LANES];
                                    }
                                }
                            }
                        }
                    }
                }
                let o = &mut dst[(oy * ow + ox) * LANES..][..LANES];
                for l in 0..LANES {
                    o[l] = if base[l].is_some() {
                        activate(acc[l] + lane_bias[l], p.activation)
                    } else {
                        0.0
                    };
                }
            }
        }
    });
    Ok(())
}

/// Allocating wrapper over [`conv_sliding_into`]; `x` must be NC4HW4 and
/// `weights` OIHW. Returns an NC4HW4 tensor.
pub fn conv_sliding(x: &Tensor, weights: &[f32], bias: &[f32], p: &ConvParams, threads: usize) -> Result<Tensor> {
    if x.layout() != Layout::Nc4hw4 {
        return Err(Error::ShapeMismatch("conv_sliding expects an NC4HW4 input".into()));
    }
    if weights.len() != p.weight_len() {
        return Err(Error::ShapeMismatch(format!(
            "weights have {} values, expected {}",
            weights.len(),
            p.weight_len()
        )));
    }
    let dims = x.shape().as_nchw();
    let (oh, ow) = p
        .output_hw(dims.2, dims.3)
        .ok_or_else(|| Error::ShapeMismatch("kernel exceeds padded input".into()))?;
    let mut out = Tensor::zeros(Shape::nchw(dims.0, p.out_channels, oh, ow), Layout::Nc4hw4);
    let packed = pack_conv_weights(weights, p);
    conv_sliding_into(x.data(), dims, &packed, bias, p, threads, out.data_mut())?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Activation;
    use crate::tensor::{pack_nc4hw4, unpack_nc4hw4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Plain NCHW loop, the oracle for the packed kernel.
    fn naive(x: &[f32], (n, c, h, w): (usize, usize, usize, usize), wt: &[f32], bias: &[f32], p: &ConvParams) -> Vec<f32> {
        let (oh, ow) = p.output_hw(h, w).unwrap();
        let icg = c / p.groups;
        let ocg = p.out_channels / p.groups;
        let mut y = vec![0.0f64; n * p.out_channels * oh * ow];
        for b in 0..n {
            for o in 0..p.out_channels {
                let g = o / ocg;
                for i in 0..oh {
                    for j in 0..ow {
                        let mut acc = bias[o] as f64;
                        for cl in 0..icg {
                            let ch = g * icg + cl;
                            for u in 0..p.kernel_h {
                                for v in 0..p.kernel_w {
                                    let yy = (i * p.stride + u) as isize - p.pad_h as isize;
                                    let xx = (j * p.stride + v) as isize - p.pad_w as isize;
                                    if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                                        continue;
                                    }
                                    let xv = x[((b * c + ch) * h + yy as usize) * w + xx as usize] as f64;
                                    let wv = wt[((o * icg + cl) * p.kernel_h + u) * p.kernel_w + v] as f64;
                                    acc += xv * wv;
                                }
                            }
                        }
                        if p.activation == Activation::Relu {
                            acc = acc.max(0.0);
                        }
                        y[((b * p.out_channels + o) * oh + i) * ow + j] = acc;
                    }
                }
            }
        }
        y.into_iter().map(|v| v as f32).collect()
    }

    fn random(len: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn run(x: &[f32], dims: (usize, usize, usize, usize), wt: &[f32], bias: &[f32], p: &ConvParams, threads: usize) -> Vec<f32> {
        let t = Tensor::from_vec(Shape::nchw(dims.0, dims.1, dims.2, dims.3), Layout::Nchw, x.to_vec()).unwrap();
        let y = conv_sliding(&pack_nc4hw4(&t).unwrap(), wt, bias, p, threads).unwrap();
        unpack_nc4hw4(&y, p.out_channels).unwrap().into_data()
    }

    fn rel_err(a: &[f32], b: &[f32]) -> f32 {
        let scale = b.iter().fold(0.0f32, |m, v| m.max(v.abs())) + 1e-12;
        a.iter().zip(b).fold(0.0f32, |m, (x, y)| m.max((x - y).abs())) / scale
    }

    #[test]
    fn identity_1x1() {
        let c = 6;
        let mut wt = vec![0.0; c * c];
        for i in 0..c {
            wt[i * c + i] = 1.0;
        }
        let x: Vec<f32> = (0..c * 9).map(|v| v as f32 * 0.5 - 3.0).collect();
        let y = run(&x, (1, c, 3, 3), &wt, &vec![0.0; c], &ConvParams::square(1, 1, 0, c, c), 1);
        assert_eq!(y, x);
    }

    #[test]
    fn sum_of_ones() {
        let y = run(&[1.0; 9], (1, 1, 3, 3), &[1.0; 9], &[0.0], &ConvParams::square(3, 1, 0, 1, 1), 1);
        assert_eq!(y, vec![9.0]);
    }

    #[test]
    fn matches_naive_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let dims = (1, 8, 16, 16);
        let p = ConvParams::square(3, 1, 1, 8, 8);
        let x = random(8 * 256, &mut rng);
        let wt = random(p.weight_len(), &mut rng);
        let bias = random(8, &mut rng);
        assert!(rel_err(&run(&x, dims, &wt, &bias, &p, 2), &naive(&x, dims, &wt, &bias, &p)) <= 1e-5);
    }

    #[test]
    fn matches_naive_grouped_strided_nonsquare() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cases = [
            // depthwise
            ConvParams {
                groups: 6,
                ..ConvParams::square(3, 2, 1, 6, 6)
            },
            ConvParams {
                groups: 2,
                ..ConvParams::square(3, 1, 1, 6, 10)
            },
            ConvParams {
                kernel_h: 1,
                kernel_w: 7,
                pad_h: 0,
                pad_w: 3,
                ..ConvParams::square(1, 1, 0, 5, 3)
            },
            ConvParams {
                kernel_h: 7,
                kernel_w: 1,
                pad_h: 3,
                pad_w: 0,
                ..ConvParams::square(1, 1, 0, 5, 3)
            },
            ConvParams::square(5, 2, 0, 3, 7).with_activation(Activation::Relu),
        ];
        for p in cases {
            let dims = (2, p.in_channels, 11, 9);
            let x = random(2 * p.in_channels * 99, &mut rng);
            let wt = random(p.weight_len(), &mut rng);
            let bias = random(p.out_channels, &mut rng);
            let err = rel_err(&run(&x, dims, &wt, &bias, &p, 3), &naive(&x, dims, &wt, &bias, &p));
            assert!(err <= 1e-5, "{p:?}: {err}");
        }
    }

    #[test]
    fn thread_count_is_bitwise_irrelevant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = ConvParams::square(3, 1, 1, 12, 20);
        let dims = (2, 12, 10, 10);
        let x = random(2 * 12 * 100, &mut rng);
        let wt = random(p.weight_len(), &mut rng);
        let bias = random(20, &mut rng);
        let one = run(&x, dims, &wt, &bias, &p, 1);
        for t in [2, 3, 4, 7] {
            assert_eq!(run(&x, dims, &wt, &bias, &p, t), one);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let x = Tensor::zeros(Shape::nchw(1, 3, 4, 4), Layout::Nc4hw4);
        let p = ConvParams::square(3, 1, 1, 4, 4);
        assert!(conv_sliding(&x, &vec![0.0; p.weight_len()], &[0.0; 4], &p, 1).is_err());
        let p = ConvParams::square(5, 1, 0, 3, 4);
        assert!(conv_sliding(&x, &vec![0.0; p.weight_len()], &[0.0; 4], &p, 1).is_err());
    }
}
