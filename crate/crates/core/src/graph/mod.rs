//! Operator DAG, shape inference and the topological execution order.

mod fuse;
mod model;

pub use fuse::fuse;
pub use model::{load_model, save_model, MODEL_MAGIC};

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Shape;

pub type TensorId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpKind {
    Conv2D,
    MatMul,
    ReLU,
    Add,
    Pool2D,
    Softmax,
    Reshape,
}

impl OpKind {
    pub const ALL: [OpKind; 7] = [
        OpKind::Conv2D,
        OpKind::MatMul,
        OpKind::ReLU,
        OpKind::Add,
        OpKind::Pool2D,
        OpKind::Softmax,
        OpKind::Reshape,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Conv2D => "Conv2D",
            OpKind::MatMul => "MatMul",
            OpKind::ReLU => "ReLU",
            OpKind::Add => "Add",
            OpKind::Pool2D => "Pool2D",
            OpKind::Softmax => "Softmax",
            OpKind::Reshape => "Reshape",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        OpKind::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    None,
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2dAttrs {
    /// `[kernel_h, kernel_w]`
    pub kernel: [usize; 2],
    pub stride: usize,
    /// `[pad_h, pad_w]`, applied symmetrically.
    pub pad: [usize; 2],
    pub in_channels: usize,
    pub out_channels: usize,
    #[serde(default = "one")]
    pub groups: usize,
    #[serde(default)]
    pub activation: Activation,
}

fn one() -> usize {
    1
}

impl Conv2dAttrs {
    /// Square, ungrouped convolution with "same"-style padding `k / 2`.
    pub fn square(k: usize, stride: usize, in_channels: usize, out_channels: usize) -> Self {
        Conv2dAttrs {
            kernel: [k, k],
            stride,
            pad: [k / 2, k / 2],
            in_channels,
            out_channels,
            groups: 1,
            activation: Activation::None,
        }
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * (self.in_channels / self.groups.max(1)) * self.kernel[0] * self.kernel[1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatMulAttrs {
    pub in_features: usize,
    pub out_features: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    Max,
    Avg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pool2dAttrs {
    pub mode: PoolMode,
    #[serde(default)]
    pub kernel: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub pad: usize,
    /// Pool over the whole spatial extent.
    #[serde(default)]
    pub global: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReshapeAttrs {
    /// Target dims; a single `-1` is inferred from the element count.
    pub shape: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum OpAttrs {
    Conv2D(Conv2dAttrs),
    MatMul(MatMulAttrs),
    ReLU,
    Add,
    Pool2D(Pool2dAttrs),
    Softmax,
    Reshape(ReshapeAttrs),
}

impl OpAttrs {
    pub fn kind(&self) -> OpKind {
        match self {
            OpAttrs::Conv2D(_) => OpKind::Conv2D,
            OpAttrs::MatMul(_) => OpKind::MatMul,
            OpAttrs::ReLU => OpKind::ReLU,
            OpAttrs::Add => OpKind::Add,
            OpAttrs::Pool2D(_) => OpKind::Pool2D,
            OpAttrs::Softmax => OpKind::Softmax,
            OpAttrs::Reshape(_) => OpKind::Reshape,
        }
    }
}

/// A node as declared, with tensors referenced by name.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeDef {
    pub name: String,
    pub attrs: OpAttrs,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

/// Unvalidated graph description, the input to [`Graph::new`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GraphDef {
    pub inputs: Vec<(String, Shape)>,
    pub nodes: Vec<NodeDef>,
    pub outputs: Vec<String>,
}

impl GraphDef {
    pub fn input(&mut self, name: &str, shape: Shape) -> String {
        self.inputs.push((name.to_string(), shape));
        name.to_string()
    }

    /// Appends a node producing a single tensor named after the node.
    pub fn node(&mut self, name: &str, attrs: OpAttrs, inputs: &[&str], weights: Vec<f32>, bias: Vec<f32>) -> String {
        self.nodes.push(NodeDef {
            name: name.to_string(),
            attrs,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            outputs: vec![name.to_string()],
            weights,
            bias,
        });
        name.to_string()
    }

    pub fn output(&mut self, name: &str) {
        self.outputs.push(name.to_string());
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpNode {
    pub name: String,
    pub attrs: OpAttrs,
    pub inputs: Vec<TensorId>,
    pub outputs: Vec<TensorId>,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl OpNode {
    pub fn kind(&self) -> OpKind {
        self.attrs.kind()
    }

    pub fn conv(&self) -> Option<&Conv2dAttrs> {
        match &self.attrs {
            OpAttrs::Conv2D(c) => Some(c),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Shape,
}

/// Validated, topologically ordered graph with every tensor shape known.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    tensors: Vec<TensorInfo>,
    by_name: HashMap<String, TensorId>,
    nodes: Vec<OpNode>,
    inputs: Vec<TensorId>,
    outputs: Vec<TensorId>,
}

impl Graph {
    pub fn new(def: GraphDef) -> Result<Self> {
        let order = topo_order(&def)?;
        let mut by_name = HashMap::new();
        let mut tensors: Vec<TensorInfo> = Vec::new();
        let mut intern = |name: &str, shape: Shape, tensors: &mut Vec<TensorInfo>| -> TensorId {
            let id = tensors.len();
            tensors.push(TensorInfo {
                name: name.to_string(),
                shape,
            });
            by_name.insert(name.to_string(), id);
            id
        };

        let mut inputs = Vec::new();
        for (name, shape) in &def.inputs {
            inputs.push(intern(name, shape.clone(), &mut tensors));
        }

        let mut nodes = Vec::with_capacity(def.nodes.len());
        let mut defs: Vec<Option<NodeDef>> = def.nodes.into_iter().map(Some).collect();
        for idx in order {
            let nd = defs[idx].take().expect("topological order visits each node once");
            let input_ids: Vec<TensorId> = nd
                .inputs
                .iter()
                .map(|n| tensors.iter().position(|t| &t.name == n).expect("checked by topo_order"))
                .collect();
            let in_shapes: Vec<&Shape> = input_ids.iter().map(|&i| &tensors[i].shape).collect();
            let out_shapes = infer_node(&nd, &in_shapes)?;
            if out_shapes.len() != nd.outputs.len() {
                return Err(Error::ShapeInference {
                    node: nd.name.clone(),
                    reason: format!("expects {} outputs, declared {}", out_shapes.len(), nd.outputs.len()),
                });
            }
            let output_ids = nd
                .outputs
                .iter()
                .zip(out_shapes)
                .map(|(name, shape)| intern(name, shape, &mut tensors))
                .collect();
            nodes.push(OpNode {
                name: nd.name,
                attrs: nd.attrs,
                inputs: input_ids,
                outputs: output_ids,
                weights: nd.weights,
                bias: nd.bias,
            });
        }

        let mut outputs = Vec::new();
        for name in &def.outputs {
            let id = *by_name.get(name).ok_or_else(|| Error::DanglingInput {
                node: "<graph outputs>".into(),
                tensor: name.clone(),
            })?;
            outputs.push(id);
        }

        Ok(Graph {
            tensors,
            by_name,
            nodes,
            inputs,
            outputs,
        })
    }

    pub fn nodes(&self) -> &[OpNode] {
        &self.nodes
    }

    pub fn inputs(&self) -> &[TensorId] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[TensorId] {
        &self.outputs
    }

    pub fn tensors(&self) -> &[TensorInfo] {
        &self.tensors
    }

    pub fn tensor(&self, id: TensorId) -> &TensorInfo {
        &self.tensors[id]
    }

    pub fn shape(&self, id: TensorId) -> &Shape {
        &self.tensors[id].shape
    }

    pub fn tensor_id(&self, name: &str) -> Option<TensorId> {
        self.by_name.get(name).copied()
    }

    /// Indices of the nodes reading `id`, in execution order.
    pub fn consumers(&self, id: TensorId) -> Vec<usize> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.inputs.contains(&id))
            .map(|(i, _)| i)
            .collect()
    }

    /// Converts back into a by-name description, in execution order.
    pub fn to_def(&self) -> GraphDef {
        let name = |id: TensorId| self.tensors[id].name.clone();
        GraphDef {
            inputs: self.inputs.iter().map(|&i| (name(i), self.shape(i).clone())).collect(),
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeDef {
                    name: n.name.clone(),
                    attrs: n.attrs.clone(),
                    inputs: n.inputs.iter().map(|&i| name(i)).collect(),
                    outputs: n.outputs.iter().map(|&i| name(i)).collect(),
                    weights: n.weights.clone(),
                    bias: n.bias.clone(),
                })
                .collect(),
            outputs: self.outputs.iter().map(|&i| name(i)).collect(),
        }
    }
}

/// Kahn's algorithm; among ready nodes the earliest declared runs first.
fn topo_order(def: &GraphDef) -> Result<Vec<usize>> {
    let mut producer: HashMap<&str, usize> = HashMap::new();
    let mut seen_names = BTreeSet::new();
    for (name, _) in &def.inputs {
        if !seen_names.insert(name.as_str()) {
            return Err(Error::MalformedModel(format!("tensor `{name}` declared twice")));
        }
    }
    for (i, n) in def.nodes.iter().enumerate() {
        for o in &n.outputs {
            if !seen_names.insert(o.as_str()) {
                return Err(Error::MalformedModel(format!("tensor `{o}` produced twice")));
            }
            producer.insert(o.as_str(), i);
        }
    }

    let mut pending = vec![0usize; def.nodes.len()];
    let mut dependents: Vec<Vec<usize>> = vec![Vec::new(); def.nodes.len()];
    for (i, n) in def.nodes.iter().enumerate() {
        for inp in &n.inputs {
            if let Some(&p) = producer.get(inp.as_str()) {
                pending[i] += 1;
                dependents[p].push(i);
            } else if !def.inputs.iter().any(|(name, _)| name == inp) {
                return Err(Error::DanglingInput {
                    node: n.name.clone(),
                    tensor: inp.clone(),
                });
            }
        }
    }

    let mut ready: BTreeSet<usize> = (0..def.nodes.len()).filter(|&i| pending[i] == 0).collect();
    let mut order = Vec::with_capacity(def.nodes.len());
    while let Some(i) = ready.pop_first() {
        order.push(i);
        for &d in &dependents[i] {
            pending[d] -= 1;
            if pending[d] == 0 {
                ready.insert(d);
            }
        }
    }
    if order.len() != def.nodes.len() {
        let stuck = (0..def.nodes.len()).find(|i| pending[*i] > 0).unwrap_or(0);
        return Err(Error::Cycle(def.nodes[stuck].name.clone()));
    }
    Ok(order)
}

/// Output spatial extent of a sliding window.
pub fn window_out(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if padded < kernel || stride == 0 {
        None
    } else {
        Some((padded - kernel) / stride + 1)
    }
}

fn infer_node(nd: &NodeDef, ins: &[&Shape]) -> Result<Vec<Shape>> {
    let fail = |reason: String| Error::ShapeInference {
        node: nd.name.clone(),
        reason,
    };
    let arity = match nd.attrs {
        OpAttrs::Add => 2,
        _ => 1,
    };
    if ins.len() != arity {
        return Err(fail(format!("expects {arity} inputs, got {}", ins.len())));
    }
    let x = ins[0];
    let out = match &nd.attrs {
        OpAttrs::Conv2D(c) => {
            let [n, ic, h, w] = rank4(x).ok_or_else(|| fail(format!("conv input must be rank 4, got {x}")))?;
            if c.groups == 0 || c.in_channels % c.groups != 0 || c.out_channels % c.groups != 0 {
                return Err(fail(format!(
                    "channels {}/{} not divisible by groups {}",
                    c.in_channels, c.out_channels, c.groups
                )));
            }
            if ic != c.in_channels {
                return Err(fail(format!("input has {ic} channels, attrs say {}", c.in_channels)));
            }
            if c.kernel[0] == 0 || c.kernel[1] == 0 || c.stride == 0 {
                return Err(fail("kernel and stride must be positive".into()));
            }
            if nd.weights.len() != c.weight_len() {
                return Err(fail(format!("weight length {} != {}", nd.weights.len(), c.weight_len())));
            }
            if nd.bias.len() != c.out_channels {
                return Err(fail(format!("bias length {} != {}", nd.bias.len(), c.out_channels)));
            }
            let oh = window_out(h, c.kernel[0], c.stride, c.pad[0]).ok_or_else(|| fail("kernel exceeds padded height".into()))?;
            let ow = window_out(w, c.kernel[1], c.stride, c.pad[1]).ok_or_else(|| fail("kernel exceeds padded width".into()))?;
            Shape::nchw(n, c.out_channels, oh, ow)
        }
        OpAttrs::MatMul(m) => {
            let [n, k] = *x.dims() else {
                return Err(fail(format!("matmul input must be rank 2, got {x}")));
            };
            if k != m.in_features {
                return Err(fail(format!("inner dim {k} != in_features {}", m.in_features)));
            }
            if nd.weights.len() != m.in_features * m.out_features || nd.bias.len() != m.out_features {
                return Err(fail("weight or bias length mismatch".into()));
            }
            Shape::new(vec![n, m.out_features])?
        }
        OpAttrs::ReLU => x.clone(),
        OpAttrs::Add => {
            if ins[0] != ins[1] {
                return Err(fail(format!("operand shapes {} and {} differ", ins[0], ins[1])));
            }
            x.clone()
        }
        OpAttrs::Pool2D(p) => {
            let [n, c, h, w] = rank4(x).ok_or_else(|| fail(format!("pool input must be rank 4, got {x}")))?;
            if p.global {
                Shape::nchw(n, c, 1, 1)
            } else {
                if p.kernel == 0 || p.stride == 0 || p.pad >= p.kernel {
                    return Err(fail("pool needs kernel > pad and positive stride".into()));
                }
                let oh = window_out(h, p.kernel, p.stride, p.pad).ok_or_else(|| fail("pool kernel too large".into()))?;
                let ow = window_out(w, p.kernel, p.stride, p.pad).ok_or_else(|| fail("pool kernel too large".into()))?;
                Shape::nchw(n, c, oh, ow)
            }
        }
        OpAttrs::Softmax => {
            if x.rank() < 2 {
                return Err(fail("softmax over channels needs rank >= 2".into()));
            }
            x.clone()
        }
        OpAttrs::Reshape(r) => {
            let total = x.element_count();
            let known: usize = r.shape.iter().filter(|&&d| d >= 0).map(|&d| d as usize).product();
            let wildcards = r.shape.iter().filter(|&&d| d == -1).count();
            if r.shape.iter().any(|&d| d < -1) || wildcards > 1 {
                return Err(fail(format!("bad reshape target {:?}", r.shape)));
            }
            let dims: Vec<usize> = if wildcards == 1 {
                if known == 0 || !total.is_multiple_of(known) {
                    return Err(fail(format!("cannot infer -1 reshaping {x} to {:?}", r.shape)));
                }
                r.shape.iter().map(|&d| if d == -1 { total / known } else { d as usize }).collect()
            } else {
                r.shape.iter().map(|&d| d as usize).collect()
            };
            let s = Shape::new(dims).map_err(|e| fail(e.to_string()))?;
            if s.element_count() != total {
                return Err(fail(format!("reshape {x} -> {s} changes element count")));
            }
            s
        }
    };
    Ok(vec![out])
}

fn rank4(s: &Shape) -> Option<[usize; 4]> {
    match *s.dims() {
        [n, c, h, w] => Some([n, c, h, w]),
        _ => None,
    }
}
