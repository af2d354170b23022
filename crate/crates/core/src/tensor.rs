//! Tensor value type and the NCHW <-> NC4HW4 layout conversions.
//!
//! NC4HW4 splits the channel axis into blocks of [`LANES`] contiguous values:
//! element `(n, c, y, x)` lives at `(((n * blocks + c / 4) * h + y) * w + x) * 4 + c % 4`.
//! Lanes past the real channel count are always zero so kernels can run over
//! whole blocks without masking.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vector width of the packed layout.
pub const LANES: usize = 4;

pub fn channel_blocks(channels: usize) -> usize {
    channels.div_ceil(LANES)
}

#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub const MAX_RANK: usize = 4;

    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.len() > Self::MAX_RANK {
            return Err(Error::InvalidParam(format!("rank {} exceeds {}", dims.len(), Self::MAX_RANK)));
        }
        Ok(Shape(dims))
    }

    pub fn nchw(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape(vec![n, c, h, w])
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn element_count(&self) -> usize {
        self.0.iter().product()
    }

    /// Views the shape as `(n, c, h, w)`.
    ///
    /// Lower ranks are widened: `[c, h, w]` gets a unit batch, `[n, c]` gets
    /// unit spatial extents and `[c]` becomes `(1, c, 1, 1)`.
    pub fn as_nchw(&self) -> (usize, usize, usize, usize) {
        match *self.0.as_slice() {
            [n, c, h, w] => (n, c, h, w),
            [c, h, w] => (1, c, h, w),
            [n, c] => (n, c, 1, 1),
            [c] => (1, c, 1, 1),
            _ => (1, 1, 1, 1),
        }
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        write!(f, "{}", parts.join("x"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Layout {
    Nchw,
    Nc4hw4,
}

impl Layout {
    /// Number of stored elements for a logical shape in this layout.
    pub fn padded_len(self, shape: &Shape) -> usize {
        match self {
            Layout::Nchw => shape.element_count(),
            Layout::Nc4hw4 => {
                let (n, c, h, w) = shape.as_nchw();
                n * channel_blocks(c) * h * w * LANES
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    layout: Layout,
    data: Vec<f32>,
}

impl Tensor {
    pub fn from_vec(shape: Shape, layout: Layout, data: Vec<f32>) -> Result<Self> {
        let expected = layout.padded_len(&shape);
        if data.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "{layout:?} tensor of shape {shape} needs {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, layout, data })
    }

    pub fn zeros(shape: Shape, layout: Layout) -> Self {
        let len = layout.padded_len(&shape);
        Tensor {
            shape,
            layout,
            data: vec![0.0; len],
        }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }
}

/// Packs an NCHW buffer of logical shape `(n, c, h, w)` into `dst` (NC4HW4).
/// `dst` is fully overwritten, pad lanes included.
pub fn pack_into(src: &[f32], dims: (usize, usize, usize, usize), dst: &mut [f32]) {
    let (n, c, h, w) = dims;
    let blocks = channel_blocks(c);
    let plane = h * w;
    debug_assert_eq!(src.len(), n * c * plane);
    debug_assert_eq!(dst.len(), n * blocks * plane * LANES);
    for b in 0..n {
        for cb in 0..blocks {
            let out = &mut dst[(b * blocks + cb) * plane * LANES..][..plane * LANES];
            for lane in 0..LANES {
                let ch = cb * LANES + lane;
                if ch < c {
                    let plane_src = &src[(b * c + ch) * plane..][..plane];
                    for (p, &v) in plane_src.iter().enumerate() {
                        out[p * LANES + lane] = v;
                    }
                } else {
                    for p in 0..plane {
                        out[p * LANES + lane] = 0.0;
                    }
                }
            }
        }
    }
}

/// Inverse of [`pack_into`]; pad lanes are dropped.
pub fn unpack_into(src: &[f32], dims: (usize, usize, usize, usize), dst: &mut [f32]) {
    let (n, c, h, w) = dims;
    let blocks = channel_blocks(c);
    let plane = h * w;
    debug_assert_eq!(dst.len(), n * c * plane);
    for b in 0..n {
        for ch in 0..c {
            let (cb, lane) = (ch / LANES, ch % LANES);
            let block = &src[(b * blocks + cb) * plane * LANES..][..plane * LANES];
            let out = &mut dst[(b * c + ch) * plane..][..plane];
            for (p, o) in out.iter_mut().enumerate() {
                *o = block[p * LANES + lane];
            }
        }
    }
}

pub fn pack_nc4hw4(t: &Tensor) -> Result<Tensor> {
    if t.layout != Layout::Nchw {
        return Err(Error::ShapeMismatch("pack expects an NCHW tensor".into()));
    }
    let mut out = Tensor::zeros(t.shape.clone(), Layout::Nc4hw4);
    pack_into(&t.data, t.shape.as_nchw(), &mut out.data);
    Ok(out)
}

/// Unpacks an NC4HW4 tensor, keeping the first `original_c` channels.
pub fn unpack_nc4hw4(t: &Tensor, original_c: usize) -> Result<Tensor> {
    if t.layout != Layout::Nc4hw4 {
        return Err(Error::ShapeMismatch("unpack expects an NC4HW4 tensor".into()));
    }
    let (n, c, h, w) = t.shape.as_nchw();
    let capacity = channel_blocks(c) * LANES;
    if original_c > capacity {
        return Err(Error::PackedCapacity {
            requested: original_c,
            capacity,
        });
    }
    let shape = Shape::nchw(n, original_c, h, w);
    let mut data = vec![0.0; shape.element_count()];
    let blocks = channel_blocks(c);
    let plane = h * w;
    for b in 0..n {
        for ch in 0..original_c {
            let (cb, lane) = (ch / LANES, ch % LANES);
            let block = &t.data[(b * blocks + cb) * plane * LANES..][..plane * LANES];
            for p in 0..plane {
                data[(b * original_c + ch) * plane + p] = block[p * LANES + lane];
            }
        }
    }
    Tensor::from_vec(shape, Layout::Nchw, data)
}
