//! Unplanned interpreter: fresh buffers for every tensor, every convolution
//! through the sliding window, every matrix product computed directly. It
//! shares no planning code with the engine and serves as its oracle.

use crate::error::{Error, Result};
use crate::graph::{Graph, OpAttrs};
use crate::kernels::{add_into, conv_sliding, matmul_direct, pool_into, softmax_into, ConvParams, Matrix};
use crate::tensor::{pack_nc4hw4, unpack_nc4hw4, Layout, Tensor};

/// Values of every tensor in the graph, indexed by tensor id.
pub fn evaluate(g: &Graph, inputs: &[Tensor]) -> Result<Vec<Tensor>> {
    if inputs.len() != g.inputs().len() {
        return Err(Error::ShapeMismatch(format!(
            "graph takes {} inputs, got {}",
            g.inputs().len(),
            inputs.len()
        )));
    }
    let mut values: Vec<Option<Tensor>> = vec![None; g.tensors().len()];
    for (&t, x) in g.inputs().iter().zip(inputs) {
        if x.shape() != g.shape(t) || x.layout() != Layout::Nchw {
            return Err(Error::ShapeMismatch(format!(
                "input `{}` must be an NCHW {}",
                g.tensor(t).name,
                g.shape(t)
            )));
        }
        values[t] = Some(x.clone());
    }
    for node in g.nodes() {
        let arg = |k: usize| values[node.inputs[k]].as_ref().expect("topological order");
        let out_shape = g.shape(node.outputs[0]).clone();
        let x = arg(0);
        let y = match &node.attrs {
            OpAttrs::Conv2D(c) => {
                let p = ConvParams::from(c);
                let packed = conv_sliding(&pack_nc4hw4(x)?, &node.weights, &node.bias, &p, 1)?;
                unpack_nc4hw4(&packed, c.out_channels)?
            }
            OpAttrs::MatMul(m) => {
                let rows = x.shape().dims()[0];
                let a = Matrix::new(rows, m.in_features, x.data().to_vec())?;
                let b = Matrix::new(m.in_features, m.out_features, node.weights.clone())?;
                let mut prod = matmul_direct(&a, &b)?.data;
                for (i, v) in prod.iter_mut().enumerate() {
                    *v += node.bias[i % m.out_features];
                }
                Tensor::from_vec(out_shape, Layout::Nchw, prod)?
            }
            OpAttrs::ReLU => Tensor::from_vec(out_shape, Layout::Nchw, x.data().iter().map(|v| v.max(0.0)).collect())?,
            OpAttrs::Add => {
                let mut out = vec![0.0; x.data().len()];
                add_into(x.data(), arg(1).data(), &mut out);
                Tensor::from_vec(out_shape, Layout::Nchw, out)?
            }
            OpAttrs::Pool2D(p) => {
                let mut out = vec![0.0; out_shape.element_count()];
                pool_into(x.data(), x.shape().as_nchw(), p, &mut out);
                Tensor::from_vec(out_shape, Layout::Nchw, out)?
            }
            OpAttrs::Softmax => {
                let dims = x.shape().dims();
                let (n, c) = (dims[0], dims[1]);
                let mut out = vec![0.0; x.data().len()];
                softmax_into(x.data(), n, c, x.data().len() / (n * c).max(1), &mut out);
                Tensor::from_vec(out_shape, Layout::Nchw, out)?
            }
            OpAttrs::Reshape(_) => Tensor::from_vec(out_shape, Layout::Nchw, x.data().to_vec())?,
        };
        values[node.outputs[0]] = Some(y);
    }
    Ok(values
        .into_iter()
        .map(|v| v.expect("every tensor is an input or an op output"))
        .collect())
}

/// Graph outputs only.
pub fn run_reference(g: &Graph, inputs: &[Tensor]) -> Result<Vec<Tensor>> {
    let values = evaluate(g, inputs)?;
    Ok(g.outputs().iter().map(|&t| values[t].clone()).collect())
}
