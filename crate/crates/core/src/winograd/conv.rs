//! Blocked Winograd convolution over NC4HW4 tensors.
//!
//! Per batch of tiles: every input tile is transformed (`B^T X B`) into a
//! tile-major buffer, the element-wise product summed over input channels is
//! computed as a small matrix product per tile position against the
//! pre-transformed weights `[alpha^2][oc_block][ic_block][4][4]`, and the
//! output transform (`A^T M A`) writes the result tile.

use super::generator::{WinogradTransform, MAX_ALPHA};
use super::tile::TileSchedule;
use crate::error::{Error, Result};
use crate::kernels::{activate, for_each_chunk, ConvParams};
use crate::tensor::{channel_blocks, Layout, Shape, Tensor, LANES};

/// Kernel-side factor `G W G^T`, computed once and reused by every run.
#[derive(Debug, Clone, PartialEq)]
pub struct WinogradWeights {
    pub alpha: usize,
    pub oc_blocks: usize,
    pub ic_blocks: usize,
    /// `[alpha^2][oc_blocks][ic_blocks][4 in lanes][4 out lanes]`
    pub data: Vec<f32>,
}

impl WinogradWeights {
    pub fn shape(&self) -> [usize; 5] {
        [self.alpha * self.alpha, self.oc_blocks, self.ic_blocks, LANES, LANES]
    }
}

fn check_params(p: &ConvParams, t: &WinogradTransform) -> Result<()> {
    if p.square_kernel() != Some(t.k) {
        return Err(Error::InvalidParam(format!(
            "transform is for {0}x{0} kernels, conv has {1}x{2}",
            t.k, p.kernel_h, p.kernel_w
        )));
    }
    if p.stride != 1 || p.groups != 1 {
        return Err(Error::InvalidParam("Winograd needs stride 1 and a single group".into()));
    }
    Ok(())
}

/// Transforms OIHW weights into the blocked `G W G^T` layout.
pub fn transform_weights(weights: &[f32], p: &ConvParams, t: &WinogradTransform) -> Result<WinogradWeights> {
    check_params(p, t)?;
    if weights.len() != p.weight_len() {
        return Err(Error::ShapeMismatch(format!(
            "weights have {} values, expected {}",
            weights.len(),
            p.weight_len()
        )));
    }
    let (ic, oc, k) = (p.in_channels, p.out_channels, t.k);
    let (icb, ocb) = (channel_blocks(ic), channel_blocks(oc));
    let a2 = t.alpha * t.alpha;
    let mut data = vec![0.0f32; a2 * ocb * icb * LANES * LANES];
    let mut kernel = vec![0.0f64; k * k];
    for o in 0..oc {
        for c in 0..ic {
            for (dst, &src) in kernel.iter_mut().zip(&weights[(o * ic + c) * k * k..][..k * k]) {
                *dst = src as f64;
            }
            let u = t.kernel_transform(&kernel);
            for (xi, &v) in u.iter().enumerate() {
                data[((xi * ocb + o / LANES) * icb + c / LANES) * LANES * LANES + (c % LANES) * LANES + o % LANES] = v as f32;
            }
        }
    }
    Ok(WinogradWeights {
        alpha: t.alpha,
        oc_blocks: ocb,
        ic_blocks: icb,
        data,
    })
}

/// Scratch floats needed by [`conv_winograd_into`].
pub fn winograd_scratch_len(p: &ConvParams, alpha: usize, schedule: &TileSchedule) -> usize {
    schedule.batch * alpha * alpha * (channel_blocks(p.in_channels) + channel_blocks(p.out_channels)) * LANES
}

type Tile = [[[f32; LANES]; MAX_ALPHA]; MAX_ALPHA];

#[allow(clippy::too_many_arguments)]
pub fn conv_winograd_into(
    x: &[f32],
    dims: (usize, usize, usize, usize),
    weights: &WinogradWeights,
    bias: &[f32],
    p: &ConvParams,
    t: &WinogradTransform,
    schedule: &TileSchedule,
    threads: usize,
    scratch: &mut [f32],
    out: &mut [f32],
) -> Result<()> {
    check_params(p, t)?;
    let (n, ic, h, w) = dims;
    if ic != p.in_channels {
        return Err(Error::ShapeMismatch(format!(
            "input has {ic} channels, conv expects {}",
            p.in_channels
        )));
    }
    let (oh, ow) = p
        .output_hw(h, w)
        .ok_or_else(|| Error::ShapeMismatch("kernel exceeds padded input".into()))?;
    let (icb, ocb) = (channel_blocks(ic), channel_blocks(p.out_channels));
    let (al, tn) = (t.alpha, t.n);
    if schedule.n_hat != tn || schedule.tiles_y != oh.div_ceil(tn) || schedule.tiles_x != ow.div_ceil(tn) {
        return Err(Error::ShapeMismatch("tile schedule does not match the output plane".into()));
    }
    if weights.shape() != [al * al, ocb, icb, LANES, LANES] {
        return Err(Error::ShapeMismatch("transformed weights do not match the conv".into()));
    }
    if x.len() != n * icb * h * w * LANES || out.len() != n * ocb * oh * ow * LANES || bias.len() != p.out_channels {
        return Err(Error::ShapeMismatch("buffer lengths do not match dims".into()));
    }
    if scratch.len() < winograd_scratch_len(p, al, schedule) {
        return Err(Error::ShapeMismatch("Winograd scratch too small".into()));
    }

    let mut bt = [[0.0f32; MAX_ALPHA]; MAX_ALPHA];
    for (r, row) in bt.iter_mut().enumerate().take(al) {
        for (c, v) in row.iter_mut().enumerate().take(al) {
            *v = t.b_at(c, r) as f32;
        }
    }
    let mut at = [[0.0f32; MAX_ALPHA]; MAX_ALPHA];
    for (i, row) in at.iter_mut().enumerate().take(tn) {
        for (r, v) in row.iter_mut().enumerate().take(al) {
            *v = t.a_at(r, i) as f32;
        }
    }

    let a2 = al * al;
    let vlen = a2 * icb * LANES;
    let mlen = a2 * ocb * LANES;
    let plane_in = h * w * LANES;
    let plane_out = oh * ow * LANES;
    let (pad_h, pad_w) = (p.pad_h as isize, p.pad_w as isize);
    let (vbuf, rest) = scratch.split_at_mut(schedule.batch * vlen);
    let mbuf = &mut rest[..schedule.batch * mlen];

    for b in 0..n {
        let image = &x[b * icb * plane_in..][..icb * plane_in];
        let out_image = &mut out[b * ocb * plane_out..][..ocb * plane_out];
        let total = schedule.tile_count();
        let mut start = 0;
        while start < total {
            let count = schedule.batch.min(total - start);

            for_each_chunk(&mut vbuf[..count * vlen], vlen, threads, |j, dst| {
                let (oy0, ox0) = schedule.tile_origin(start + j);
                let (iy0, ix0) = (oy0 as isize - pad_h, ox0 as isize - pad_w);
                for cb in 0..icb {
                    let src = &image[cb * plane_in..][..plane_in];
                    let mut patch: Tile = [[[0.0; LANES]; MAX_ALPHA]; MAX_ALPHA];
                    for (u, row) in patch.iter_mut().enumerate().take(al) {
                        let yy = iy0 + u as isize;
                        if yy < 0 || yy >= h as isize {
                            continue;
                        }
                        for (v, px) in row.iter_mut().enumerate().take(al) {
                            let xx = ix0 + v as isize;
                            if xx >= 0 && xx < w as isize {
                                px.copy_from_slice(&src[(yy as usize * w + xx as usize) * LANES..][..LANES]);
                            }
                        }
                    }
                    // tmp = B^T X
                    let mut tmp: Tile = [[[0.0; LANES]; MAX_ALPHA]; MAX_ALPHA];
                    for r in 0..al {
                        for a in 0..al {
                            let coef = bt[r][a];
                            if coef == 0.0 {
                                continue;
                            }
                            for c in 0..al {
                                for l in 0..LANES {
                                    tmp[r][c][l] += coef * patch[a][c][l];
                                }
                            }
                        }
                    }
                    // V = tmp B
                    for r in 0..al {
                        for c in 0..al {
                            let mut acc = [0.0f32; LANES];
                            for bb in 0..al {
                                let coef = bt[c][bb];
                                if coef == 0.0 {
                                    continue;
                                }
                                for l in 0..LANES {
                                    acc[l] += tmp[r][bb][l] * coef;
                                }
                            }
                            dst[((r * al + c) * icb + cb) * LANES..][..LANES].copy_from_slice(&acc);
                        }
                    }
                }
            });

            let vtiles = &vbuf[..count * vlen];
            for_each_chunk(&mut mbuf[..count * mlen], mlen, threads, |j, dst| {
                let v = &vtiles[j * vlen..][..vlen];
                for xi in 0..a2 {
                    let vrow = &v[xi * icb * LANES..][..icb * LANES];
                    for ob in 0..ocb {
                        let u = &weights.data[(xi * ocb + ob) * icb * LANES * LANES..][..icb * LANES * LANES];
                        let mut acc = [0.0f32; LANES];
                        for (vv, uu) in vrow.iter().zip(u.chunks_exact(LANES)) {
                            for l in 0..LANES {
                                acc[l] += uu[l] * vv;
                            }
                        }
                        dst[(xi * ocb + ob) * LANES..][..LANES].copy_from_slice(&acc);
                    }
                }
            });

            let mtiles = &mbuf[..count * mlen];
            for_each_chunk(out_image, plane_out, threads, |ob, plane| {
                let mut lane_bias = [0.0f32; LANES];
                let mut valid = [false; LANES];
                for l in 0..LANES {
                    let o = ob * LANES + l;
                    if o < p.out_channels {
                        valid[l] = true;
                        lane_bias[l] = bias[o];
                    }
                }
                for j in 0..count {
                    let (oy0, ox0) = schedule.tile_origin(start + j);
                    let m = &mtiles[j * mlen..][..mlen];
                    // tmp = A^T M
                    let mut tmp: Tile = [[[0.0; LANES]; MAX_ALPHA]; MAX_ALPHA];
                    for (i, arow) in at.iter().enumerate().take(tn) {
                        for (r, &coef) in arow.iter().enumerate().take(al) {
                            if coef == 0.0 {
                                continue;
                            }
                            for c in 0..al {
                                let mv = &m[((r * al + c) * ocb + ob) * LANES..][..LANES];
                                for l in 0..LANES {
                                    tmp[i][c][l] += coef * mv[l];
                                }
                            }
                        }
                    }
                    for i in 0..tn.min(oh - oy0) {
                        for jj in 0..tn.min(ow - ox0) {
                            let mut acc = [0.0f32; LANES];
                            for c in 0..al {
                                let coef = at[jj][c];
                                if coef == 0.0 {
                                    continue;
                                }
                                for l in 0..LANES {
                                    acc[l] += tmp[i][c][l] * coef;
                                }
                            }
                            let px = &mut plane[((oy0 + i) * ow + ox0 + jj) * LANES..][..LANES];
                            for l in 0..LANES {
                                px[l] = if valid[l] {
                                    activate(acc[l] + lane_bias[l], p.activation)
                                } else {
                                    0.0
                                };
                            }
                        }
                    }
                }
            });

            start += count;
        }
    }
    Ok(())
}

/// Allocating wrapper: NC4HW4 in, NC4HW4 out, weights OIHW.
pub fn conv_winograd(x: &Tensor, weights: &[f32], bias: &[f32], p: &ConvParams, t: &WinogradTransform, threads: usize) -> Result<Tensor> {
    if x.layout() != Layout::Nc4hw4 {
        return Err(Error::ShapeMismatch("conv_winograd expects an NC4HW4 input".into()));
    }
    let dims = x.shape().as_nchw();
    let (oh, ow) = p
        .output_hw(dims.2, dims.3)
        .ok_or_else(|| Error::ShapeMismatch("kernel exceeds padded input".into()))?;
    let u = transform_weights(weights, p, t)?;
    let schedule = TileSchedule::new(t.n, oh, ow);
    let mut scratch = vec![0.0; winograd_scratch_len(p, t.alpha, &schedule)];
    let mut out = Tensor::zeros(Shape::nchw(dims.0, p.out_channels, oh, ow), Layout::Nc4hw4);
    conv_winograd_into(x.data(), dims, &u, bias, p, t, &schedule, threads, &mut scratch, out.data_mut())?;
    Ok(out)
}
