//! Per-operator executions shared by the CPU and simulated backends.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graph::{OpAttrs, OpKind, OpNode, Pool2dAttrs};
use crate::kernels::{
    activate, add_into, conv_sliding_into, pack_conv_weights, pool_into, softmax_into, ConvParams, MatDims, StrassenGemm,
};
use crate::preinference::SchemeChoice;
use crate::tensor::{channel_blocks, pack_into, unpack_into, Shape, LANES};
use crate::winograd::{conv_winograd_into, winograd_scratch_len, TileSchedule, WinogradTransform, WinogradWeights};

/// Everything an execution needs to know about its op, fixed at planning.
#[derive(Debug, Clone)]
pub struct ExecutionRequest<'a> {
    pub node: &'a OpNode,
    pub input_shapes: Vec<&'a Shape>,
    pub output_shape: &'a Shape,
    pub scheme: Option<SchemeChoice>,
    pub threads: usize,
    pub transform: Option<Arc<WinogradTransform>>,
    pub winograd_weights: Option<Arc<WinogradWeights>>,
}

/// A prepared operator. `run` only writes `outputs` and `scratch`, and may be
/// called any number of times.
pub trait Execution: Send + Sync {
    fn kind(&self) -> OpKind;

    fn scheme(&self) -> Option<SchemeChoice> {
        None
    }

    /// Working memory `run` expects, in f32 elements.
    fn scratch_floats(&self) -> usize {
        0
    }

    /// Winograd-domain weights held by this instance, if any.
    fn transformed_weights(&self) -> Option<&Arc<WinogradWeights>> {
        None
    }

    fn run(&self, inputs: &[&[f32]], outputs: &mut [&mut [f32]], scratch: &mut [f32]) -> Result<()>;
}

type Nchw = (usize, usize, usize, usize);

fn conv_dims(req: &ExecutionRequest<'_>) -> (Nchw, Nchw) {
    (req.input_shapes[0].as_nchw(), req.output_shape.as_nchw())
}

fn packed_len((n, c, h, w): (usize, usize, usize, usize)) -> usize {
    n * channel_blocks(c) * h * w * LANES
}

fn gemm_for(p: &ConvParams, out: (usize, usize, usize, usize), threads: usize) -> StrassenGemm {
    StrassenGemm::new(MatDims::new(p.out_channels, p.in_channels, out.2 * out.3), threads)
}

fn needs_gather(p: &ConvParams) -> bool {
    p.stride != 1 || p.pad_h != 0 || p.pad_w != 0
}

/// Scratch an op will need under `scheme`, known before any execution exists.
pub fn scratch_floats(req: &ExecutionRequest<'_>) -> usize {
    match (&req.node.attrs, req.scheme) {
        (OpAttrs::Conv2D(c), Some(scheme)) => {
            let p = ConvParams::from(c);
            let (x, y) = conv_dims(req);
            match scheme {
                SchemeChoice::SlidingWindow => packed_len(x) + packed_len(y),
                SchemeChoice::Winograd(n) => {
                    let schedule = TileSchedule::new(n, y.2, y.3);
                    packed_len(x) + packed_len(y) + winograd_scratch_len(&p, n + p.kernel_h - 1, &schedule)
                }
                SchemeChoice::MatMulStrassen => {
                    let gather = if needs_gather(&p) { c.in_channels * y.2 * y.3 } else { 0 };
                    gather + gemm_for(&p, y, req.threads).scratch_len()
                }
            }
        }
        (OpAttrs::MatMul(m), _) => {
            let n = req.input_shapes[0].dims()[0];
            StrassenGemm::new(MatDims::new(n, m.in_features, m.out_features), req.threads).scratch_len()
        }
        _ => 0,
    }
}

/// Builds the execution for `req` using the CPU kernels.
pub fn create_cpu_execution(req: &ExecutionRequest<'_>) -> Result<Box<dyn Execution>> {
    let node = req.node;
    let threads = req.threads.max(1);
    Ok(match &node.attrs {
        OpAttrs::Conv2D(c) => {
            let p = ConvParams::from(c);
            let (x, y) = conv_dims(req);
            let scheme = req.scheme.unwrap_or(SchemeChoice::SlidingWindow);
            match scheme {
                SchemeChoice::SlidingWindow => Box::new(ConvSliding {
                    packed_weights: pack_conv_weights(&node.weights, &p),
                    bias: node.bias.clone(),
                    p,
                    x,
                    y,
                    threads,
                }),
                SchemeChoice::Winograd(n) => {
                    let (Some(t), Some(w)) = (req.transform.clone(), req.winograd_weights.clone()) else {
                        return Err(Error::InvalidParam(format!(
                            "winograd conv `{}` planned without transformed weights",
                            node.name
                        )));
                    };
                    if t.n != n || p.square_kernel() != Some(t.k) || p.stride != 1 || p.groups != 1 {
                        return Err(Error::InvalidParam(format!("conv `{}` cannot use {scheme}", node.name)));
                    }
                    Box::new(ConvWinograd {
                        schedule: TileSchedule::new(n, y.2, y.3),
                        bias: node.bias.clone(),
                        p,
                        t,
                        w,
                        x,
                        y,
                        threads,
                    })
                }
                SchemeChoice::MatMulStrassen => {
                    if p.kernel_h != 1 || p.kernel_w != 1 || p.groups != 1 {
                        return Err(Error::InvalidParam(format!("conv `{}` cannot use {scheme}", node.name)));
                    }
                    Box::new(ConvGemm {
                        gemm: gemm_for(&p, y, threads),
                        weights: node.weights.clone(),
                        bias: node.bias.clone(),
                        p,
                        x,
                        y,
                    })
                }
            }
        }
        OpAttrs::MatMul(m) => {
            let n = req.input_shapes[0].dims()[0];
            Box::new(MatMulExec {
                gemm: StrassenGemm::new(MatDims::new(n, m.in_features, m.out_features), threads),
                weights: node.weights.clone(),
                bias: node.bias.clone(),
            })
        }
        OpAttrs::ReLU => Box::new(Elementwise(OpKind::ReLU)),
        OpAttrs::Add => Box::new(Elementwise(OpKind::Add)),
        OpAttrs::Reshape(_) => Box::new(Elementwise(OpKind::Reshape)),
        OpAttrs::Softmax => {
            let (n, c) = (req.input_shapes[0].dims()[0], req.input_shapes[0].dims()[1]);
            Box::new(SoftmaxExec {
                n,
                c,
                inner: req.input_shapes[0].element_count() / (n * c).max(1),
            })
        }
        OpAttrs::Pool2D(a) => Box::new(PoolExec {
            attrs: a.clone(),
            dims: req.input_shapes[0].as_nchw(),
        }),
    })
}

struct ConvSliding {
    p: ConvParams,
    packed_weights: Vec<f32>,
    bias: Vec<f32>,
    x: (usize, usize, usize, usize),
    y: (usize, usize, usize, usize),
    threads: usize,
}

impl Execution for ConvSliding {
    fn kind(&self) -> OpKind {
        OpKind::Conv2D
    }

    fn scheme(&self) -> Option<SchemeChoice> {
        Some(SchemeChoice::SlidingWindow)
    }

    fn scratch_floats(&self) -> usize {
        packed_len(self.x) + packed_len(self.y)
    }

    fn run(&self, inputs: &[&[f32]], outputs: &mut [&mut [f32]], scratch: &mut [f32]) -> Result<()> {
        let (px, rest) = scratch.split_at_mut(packed_len(self.x));
        let py = &mut rest[..packed_len(self.y)];
        pack_into(inputs[0], self.x, px);
        conv_sliding_into(px, self.x, &self.packed_weights, &self.bias, &self.p, self.threads, py)?;
        unpack_into(py, self.y, outputs[0]);
        Ok(())
    }
}

struct ConvWinograd {
    p: ConvParams,
    t: Arc<WinogradTransform>,
    w: Arc<WinogradWeights>,
    bias: Vec<f32>,
    schedule: TileSchedule,
    x: (usize, usize, usize, usize),
    y: (usize, usize, usize, usize),
    threads: usize,
}

impl Execution for ConvWinograd {
    fn kind(&self) -> OpKind {
        OpKind::Conv2D
    }

    fn scheme(&self) -> Option<SchemeChoice> {
        Some(SchemeChoice::Winograd(self.t.n))
    }

    fn scratch_floats(&self) -> usize {
        packed_len(self.x) + packed_len(self.y) + winograd_scratch_len(&self.p, self.t.alpha, &self.schedule)
    }

    fn transformed_weights(&self) -> Option<&Arc<WinogradWeights>> {
        Some(&self.w)
    }

    fn run(&self, inputs: &[&[f32]], outputs: &mut [&mut [f32]], scratch: &mut [f32]) -> Result<()> {
        let (px, rest) = scratch.split_at_mut(packed_len(self.x));
        let (py, rest) = rest.split_at_mut(packed_len(self.y));
        let work = &mut rest[..winograd_scratch_len(&self.p, self.t.alpha, &self.schedule)];
        pack_into(inputs[0], self.x, px);
        conv_winograd_into(
            px,
            self.x,
            &self.w,
            &self.bias,
            &self.p,
            &self.t,
            &self.schedule,
            self.threads,
            work,
            py,
        )?;
        unpack_into(py, self.y, outputs[0]);
        Ok(())
    }
}

/// 1x1 convolution as `W (oc x ic) * X (ic x oh*ow)` per image.
struct ConvGemm {
    p: ConvParams,
    gemm: StrassenGemm,
    weights: Vec<f32>,
    bias: Vec<f32>,
    x: (usize, usize, usize, usize),
    y: (usize, usize, usize, usize),
}

impl ConvGemm {
    fn gather_len(&self) -> usize {
        if needs_gather(&self.p) {
            self.p.in_channels * self.y.2 * self.y.3
        } else {
            0
        }
    }
}

impl Execution for ConvGemm {
    fn kind(&self) -> OpKind {
        OpKind::Conv2D
    }

    fn scheme(&self) -> Option<SchemeChoice> {
        Some(SchemeChoice::MatMulStrassen)
    }

    fn scratch_floats(&self) -> usize {
        self.gather_len() + self.gemm.scratch_len()
    }

    fn run(&self, inputs: &[&[f32]], outputs: &mut [&mut [f32]], scratch: &mut [f32]) -> Result<()> {
        let (_, ic, h, w) = self.x;
        let (n, oc, oh, ow) = self.y;
        let (gathered, work) = scratch.split_at_mut(self.gather_len());
        let work = &mut work[..self.gemm.scratch_len()];
        let plane = oh * ow;
        for b in 0..n {
            let image = &inputs[0][b * ic * h * w..(b + 1) * ic * h * w];
            let x: &[f32] = if needs_gather(&self.p) {
                for c in 0..ic {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let iy = (oy * self.p.stride) as isize - self.p.pad_h as isize;
                            let ix = (ox * self.p.stride) as isize - self.p.pad_w as isize;
                            let inside = iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w;
                            gathered[(c * oh + oy) * ow + ox] = if inside {
                                image[(c * h + iy as usize) * w + ix as usize]
                            } else {
                                0.0
                            };
                        }
                    }
                }
                gathered
            } else {
                image
            };
            let y = &mut outputs[0][b * oc * plane..(b + 1) * oc * plane];
            self.gemm.run(&self.weights, ic, x, plane, y, plane, work);
            for (o, row) in y.chunks_mut(plane.max(1)).enumerate().take(oc) {
                for v in row {
                    *v = activate(*v + self.bias[o], self.p.activation);
                }
            }
        }
        Ok(())
    }
}

struct MatMulExec {
    gemm: StrassenGemm,
    weights: Vec<f32>,
    bias: Vec<f32>,
}

impl Execution for MatMulExec {
    fn kind(&self) -> OpKind {
        OpKind::MatMul
    }

    fn scratch_floats(&self) -> usize {
        self.gemm.scratch_len()
    }

    fn run(&self, inputs: &[&[f32]], outputs: &mut [&mut [f32]], scratch: &mut [f32]) -> Result<()> {
        let d = self.gemm.dims();
        let y = &mut *outputs[0];
        self.gemm
            .run(inputs[0], d.k, &self.weights, d.m, y, d.m, &mut scratch[..self.gemm.scratch_len()]);
        if d.m > 0 {
            for row in y.chunks_mut(d.m) {
                for (v, b) in row.iter_mut().zip(&self.bias) {
                    *v += b;
                }
            }
        }
        Ok(())
    }
}

struct Elementwise(OpKind);

impl Execution for Elementwise {
    fn kind(&self) -> OpKind {
        self.0
    }

    fn run(&self, inputs: &[&[f32]], outputs: &mut [&mut [f32]], _scratch: &mut [f32]) -> Result<()> {
        let out = &mut *outputs[0];
        match self.0 {
            OpKind::Add => add_into(inputs[0], inputs[1], out),
            OpKind::ReLU => {
                for (o, &v) in out.iter_mut().zip(inputs[0]) {
                    *o = v.max(0.0);
                }
            }
            _ => out.copy_from_slice(inputs[0]),
        }
        Ok(())
    }
}

struct SoftmaxExec {
    n: usize,
    c: usize,
    inner: usize,
}

impl Execution for SoftmaxExec {
    fn kind(&self) -> OpKind {
        OpKind::Softmax
    }

    fn run(&self, inputs: &[&[f32]], outputs: &mut [&mut [f32]], _scratch: &mut [f32]) -> Result<()> {
        softmax_into(inputs[0], self.n, self.c, self.inner, outputs[0]);
        Ok(())
    }
}

struct PoolExec {
    attrs: Pool2dAttrs,
    dims: (usize, usize, usize, usize),
}

impl Execution for PoolExec {
    fn kind(&self) -> OpKind {
        OpKind::Pool2D
    }

    fn run(&self, inputs: &[&[f32]], outputs: &mut [&mut [f32]], _scratch: &mut [f32]) -> Result<()> {
        pool_into(inputs[0], self.dims, &self.attrs, outputs[0]);
        Ok(())
    }
}
