//! Runs every convolution of a model under each scheme that applies to it
//! and measures how far the results drift from each other.

use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use crate::backend::{create_cpu_execution, ExecutionRequest};
use crate::error::Result;
use crate::graph::{Conv2dAttrs, Graph};
use crate::kernels::ConvParams;
use crate::preinference::{select_conv_scheme, SchemeChoice};
use crate::reference::evaluate;
use crate::tensor::Tensor;
use crate::winograd::{cached_transform, transform_weights, MAX_ALPHA};

/// Winograd tile sizes exercised by the comparison.
pub const COMPARE_TILES: [usize; 2] = [2, 4];

/// `max |a - b|` over the larger magnitude of the two vectors.
pub fn relative_deviation(a: &[f32], b: &[f32]) -> f64 {
    let scale = a.iter().chain(b).fold(0f64, |m, v| m.max(v.abs() as f64));
    let diff = a.iter().zip(b).fold(0f64, |m, (x, y)| m.max((*x as f64 - *y as f64).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Schemes a conv can run under: the matrix route alone for `1x1`, the
/// sliding window and small Winograd tiles for square stride-1 kernels, the
/// sliding window otherwise.
pub fn applicable_schemes(c: &Conv2dAttrs) -> Vec<SchemeChoice> {
    if c.groups == 1 && c.kernel == [1, 1] {
        return vec![SchemeChoice::MatMulStrassen];
    }
    let mut v = vec![SchemeChoice::SlidingWindow];
    let k = c.kernel[0];
    if c.groups == 1 && c.stride == 1 && c.kernel[1] == k {
        v.extend(
            COMPARE_TILES
                .iter()
                .filter(|&&n| n + k - 1 <= MAX_ALPHA)
                .map(|&n| SchemeChoice::Winograd(n)),
        );
    }
    v
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchemeResult {
    pub scheme: SchemeChoice,
    pub mean_ms: f64,
    /// Deviation from the sliding-window reference output.
    pub deviation: f64,
    /// Whether the engine picks this scheme for the layer.
    pub chosen: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerComparison {
    pub layer: String,
    pub kernel: [usize; 2],
    pub stride: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub engine_scheme: SchemeChoice,
    pub schemes: Vec<SchemeResult>,
    /// Largest deviation between any two outputs, reference included.
    pub max_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub layers: Vec<LayerComparison>,
    pub max_deviation: f64,
}

impl CompareReport {
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<22} {:>7} {:>16} {:>10} {:>11}\n",
            "layer", "kernel", "scheme", "mean ms", "deviation"
        );
        for l in &self.layers {
            for r in &l.schemes {
                s.push_str(&format!(
                    "{:<22} {:>7} {:>16} {:>10.3} {:>11.2e}{}\n",
                    l.layer,
                    format!("{}x{}", l.kernel[0], l.kernel[1]),
                    r.scheme.to_string(),
                    r.mean_ms,
                    r.deviation,
                    if r.chosen { "  *" } else { "" }
                ));
            }
        }
        s.push_str(&format!("max pairwise deviation {:.3e}", self.max_deviation));
        s
    }
}

/// Compares every Conv2D of `g` on `inputs`, timing each scheme over `reps`
/// runs. The engine's own choice is always among the schemes measured.
pub fn compare_schemes(g: &Graph, inputs: &[Tensor], threads: usize, spacing: f64, reps: usize) -> Result<CompareReport> {
    let values = evaluate(g, inputs)?;
    let mut layers = Vec::new();
    for node in g.nodes() {
        let Some(c) = node.conv() else { continue };
        let x = &values[node.inputs[0]];
        let reference = values[node.outputs[0]].data();
        let out_shape = g.shape(node.outputs[0]);
        let (_, _, oh, ow) = out_shape.as_nchw();
        let engine_scheme = select_conv_scheme(c, oh, ow);

        let mut outputs: Vec<Vec<f32>> = vec![reference.to_vec()];
        let mut schemes = Vec::new();
        let mut candidates = applicable_schemes(c);
        // the engine may pick a larger tile than the fixed comparison set
        if !candidates.contains(&engine_scheme) {
            candidates.push(engine_scheme);
        }
        for scheme in candidates {
            let (transform, winograd_weights) = match scheme {
                SchemeChoice::Winograd(n) => {
                    let t = cached_transform(n, c.kernel[0], spacing)?;
                    let u = transform_weights(&node.weights, &ConvParams::from(c), &t)?;
                    (Some(t), Some(Arc::new(u)))
                }
                _ => (None, None),
            };
            let req = ExecutionRequest {
                node,
                input_shapes: vec![x.shape()],
                output_shape: out_shape,
                scheme: Some(scheme),
                threads,
                transform,
                winograd_weights,
            };
            let exec = create_cpu_execution(&req)?;
            let mut scratch = vec![0.0; exec.scratch_floats()];
            let mut y = vec![0.0; reference.len()];
            let reps = reps.max(1);
            let start = Instant::now();
            for _ in 0..reps {
                exec.run(&[x.data()], &mut [&mut y], &mut scratch)?;
            }
            let mean_ms = start.elapsed().as_secs_f64() * 1000.0 / reps as f64;
            schemes.push(SchemeResult {
                scheme,
                mean_ms,
                deviation: relative_deviation(&y, reference),
                chosen: scheme == engine_scheme,
            });
            outputs.push(y);
        }
        let mut max_deviation = 0f64;
        for i in 0..outputs.len() {
            for j in i + 1..outputs.len() {
                max_deviation = max_deviation.max(relative_deviation(&outputs[i], &outputs[j]));
            }
        }
        layers.push(LayerComparison {
            layer: node.name.clone(),
            kernel: c.kernel,
            stride: c.stride,
            in_channels: c.in_channels,
            out_channels: c.out_channels,
            engine_scheme,
            schemes,
            max_deviation,
        });
    }
    let max_deviation = layers.iter().fold(0f64, |m, l| m.max(l.max_deviation));
    Ok(CompareReport { layers, max_deviation })
}
