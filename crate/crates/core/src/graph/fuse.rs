use super::{Activation, Graph, OpAttrs};
use crate::error::Result;

/// Folds every `Conv2D -> ReLU` pair into a single conv with a fused
/// activation. A conv qualifies only when the ReLU is the sole reader of its
/// output and that output is not itself a graph output.
pub fn fuse(graph: &Graph) -> Result<Graph> {
    let mut def = graph.to_def();
    let mut drop = vec![false; def.nodes.len()];

    for ci in 0..def.nodes.len() {
        let OpAttrs::Conv2D(conv) = &def.nodes[ci].attrs else {
            continue;
        };
        if conv.activation != Activation::None || def.nodes[ci].outputs.len() != 1 {
            continue;
        }
        let out = def.nodes[ci].outputs[0].clone();
        if def.outputs.contains(&out) {
            continue;
        }
        let readers: Vec<usize> = (0..def.nodes.len())
            .filter(|&j| !drop[j] && def.nodes[j].inputs.contains(&out))
            .collect();
        let [ri] = readers[..] else { continue };
        if def.nodes[ri].attrs != OpAttrs::ReLU || def.nodes[ri].inputs.len() != 1 {
            continue;
        }
        let relu_out = def.nodes[ri].outputs.clone();
        let node = &mut def.nodes[ci];
        if let OpAttrs::Conv2D(c) = &mut node.attrs {
            c.activation = Activation::Relu;
        }
        node.outputs = relu_out;
        drop[ri] = true;
    }

    let mut keep = drop.iter().map(|d| !d);
    def.nodes.retain(|_| keep.next().unwrap_or(true));
    Graph::new(def)
}
