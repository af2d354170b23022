use std::fmt;

use serde::{Serialize, Serializer};

use crate::graph::{Conv2dAttrs, Graph, OpAttrs};
use crate::winograd::choose_tile;

/// Convolution algorithm picked for one Conv2D node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemeChoice {
    MatMulStrassen,
    SlidingWindow,
    Winograd(usize),
}

impl fmt::Display for SchemeChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemeChoice::MatMulStrassen => f.write_str("matmul_strassen"),
            SchemeChoice::SlidingWindow => f.write_str("sliding_window"),
            SchemeChoice::Winograd(n) => write!(f, "winograd_f{n}"),
        }
    }
}

impl Serialize for SchemeChoice {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// `k = 1` goes to the matrix-multiply route, otherwise Winograd with the
/// tile from [`choose_tile`] unless that is 1. Grouped, strided and
/// non-square kernels only have the sliding window.
pub fn select_conv_scheme(c: &Conv2dAttrs, out_h: usize, out_w: usize) -> SchemeChoice {
    if c.groups != 1 {
        return SchemeChoice::SlidingWindow;
    }
    if c.kernel == [1, 1] {
        return SchemeChoice::MatMulStrassen;
    }
    if c.kernel[0] != c.kernel[1] || c.stride != 1 {
        return SchemeChoice::SlidingWindow;
    }
    match choose_tile(c.kernel[0], c.in_channels, c.out_channels, out_w, out_h) {
        1 => SchemeChoice::SlidingWindow,
        n => SchemeChoice::Winograd(n),
    }
}

/// Scheme per node, `None` for anything but Conv2D.
pub fn select_schemes(g: &Graph) -> Vec<Option<SchemeChoice>> {
    g.nodes()
        .iter()
        .map(|node| match &node.attrs {
            OpAttrs::Conv2D(c) => {
                let (_, _, oh, ow) = g.shape(node.outputs[0]).as_nchw();
                Some(select_conv_scheme(c, oh, ow))
            }
            _ => None,
        })
        .collect()
}
