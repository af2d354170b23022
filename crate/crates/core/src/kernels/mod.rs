//! Compute kernels: sliding-window convolution over NC4HW4 tensors, direct
//! matrix multiplication and Strassen multiplication with a cost-based
//! recursion cutoff.

mod conv;
mod elementwise;
mod matmul;
mod strassen;

pub use conv::{conv_sliding, conv_sliding_into, pack_conv_weights};
pub use elementwise::{add_into, pool_into, relu_in_place, softmax_into};
pub use matmul::{gemm_direct, matmul_direct, Matrix};
pub use strassen::{matmul_strassen, matmul_strassen_with, strassen_depth, strassen_should_recurse, StrassenGemm, StrassenStats};

use crate::graph::{Activation, Conv2dAttrs};

/// Operand sizes of `[n, k] x [k, m] => [n, m]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MatDims {
    pub n: usize,
    pub k: usize,
    pub m: usize,
}

impl MatDims {
    pub fn new(n: usize, k: usize, m: usize) -> Self {
        MatDims { n, k, m }
    }

    pub fn multiplications(&self) -> u64 {
        (self.n * self.k * self.m) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvParams {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub groups: usize,
    pub activation: Activation,
}

impl ConvParams {
    pub fn square(k: usize, stride: usize, pad: usize, in_channels: usize, out_channels: usize) -> Self {
        ConvParams {
            kernel_h: k,
            kernel_w: k,
            stride,
            pad_h: pad,
            pad_w: pad,
            in_channels,
            out_channels,
            groups: 1,
            activation: Activation::None,
        }
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    /// Kernel size when square.
    pub fn square_kernel(&self) -> Option<usize> {
        (self.kernel_h == self.kernel_w).then_some(self.kernel_h)
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * (self.in_channels / self.groups) * self.kernel_h * self.kernel_w
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        Some((
            crate::graph::window_out(h, self.kernel_h, self.stride, self.pad_h)?,
            crate::graph::window_out(w, self.kernel_w, self.stride, self.pad_w)?,
        ))
    }
}

impl From<&Conv2dAttrs> for ConvParams {
    fn from(a: &Conv2dAttrs) -> Self {
        ConvParams {
            kernel_h: a.kernel[0],
            kernel_w: a.kernel[1],
            stride: a.stride,
            pad_h: a.pad[0],
            pad_w: a.pad[1],
            in_channels: a.in_channels,
            out_channels: a.out_channels,
            groups: a.groups,
            activation: a.activation,
        }
    }
}

#[inline]
pub(crate) fn activate(v: f32, act: Activation) -> f32 {
    match act {
        Activation::None => v,
        Activation::Relu => v.max(0.0),
    }
}

/// Runs `f(chunk_index, chunk)` over consecutive `chunk_len` pieces of `out`,
/// spreading contiguous runs of chunks over up to `threads` scoped workers.
pub(crate) fn for_each_chunk<F>(out: &mut [f32], chunk_len: usize, threads: usize, f: F)
where
    F: Fn(usize, &mut [f32]) + Sync,
{
    if chunk_len == 0 || out.is_empty() {
        return;
    }
    let chunks = out.len().div_ceil(chunk_len);
    let workers = threads.clamp(1, chunks);
    if workers == 1 {
        for (i, c) in out.chunks_mut(chunk_len).enumerate() {
            f(i, c);
        }
        return;
    }
    let per_worker = chunks.div_ceil(workers);
    std::thread::scope(|s| {
        for (w, span) in out.chunks_mut(per_worker * chunk_len).enumerate() {
            let f = &f;
            s.spawn(move || {
                for (i, c) in span.chunks_mut(chunk_len).enumerate() {
                    f(w * per_worker + i, c);
                }
            });
        }
    });
}
