//! Native single-file model container.
//!
//! Layout: 8-byte magic `NINF0001`, u64 little-endian JSON length, the UTF-8
//! JSON document, then the weight section of little-endian f32 values. Each
//! node's `weight_offset`/`weight_len` are byte ranges into the weight
//! section; a node's range holds its weights followed by its bias.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Graph, GraphDef, NodeDef, OpAttrs, OpKind};
use crate::error::{Error, Result};
use crate::tensor::Shape;

pub const MODEL_MAGIC: &[u8; 8] = b"NINF0001";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    version: u32,
    inputs: Vec<InputDoc>,
    nodes: Vec<NodeDoc>,
    outputs: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct InputDoc {
    id: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct NodeDoc {
    id: String,
    kind: String,
    #[serde(default)]
    attrs: Value,
    inputs: Vec<String>,
    outputs: Vec<String>,
    #[serde(default)]
    weight_offset: usize,
    #[serde(default)]
    weight_len: usize,
}

pub fn save_model(graph: &Graph) -> Result<Vec<u8>> {
    let def = graph.to_def();
    let mut blob: Vec<u8> = Vec::new();
    let mut nodes = Vec::with_capacity(def.nodes.len());
    for n in &def.nodes {
        let offset = blob.len();
        for v in n.weights.iter().chain(&n.bias) {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        nodes.push(NodeDoc {
            id: n.name.clone(),
            kind: n.attrs.kind().name().to_string(),
            attrs: attrs_to_json(&n.attrs)?,
            inputs: n.inputs.clone(),
            outputs: n.outputs.clone(),
            weight_offset: offset,
            weight_len: blob.len() - offset,
        });
    }
    let doc = ModelDoc {
        version: FORMAT_VERSION,
        inputs: def
            .inputs
            .iter()
            .map(|(id, s)| InputDoc {
                id: id.clone(),
                shape: s.dims().to_vec(),
            })
            .collect(),
        nodes,
        outputs: def.outputs.clone(),
    };
    let json = serde_json::to_vec(&doc)?;
    let mut out = Vec::with_capacity(16 + json.len() + blob.len());
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob);
    Ok(out)
}

pub fn load_model(bytes: &[u8]) -> Result<Graph> {
    if bytes.len() < 16 || &bytes[..8] != MODEL_MAGIC {
        return Err(Error::MalformedModel("missing NINF0001 header".into()));
    }
    let json_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let json_end = 16usize
        .checked_add(json_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::MalformedModel("JSON length exceeds file".into()))?;
    let doc: ModelDoc =
        serde_json::from_slice(&bytes[16..json_end]).map_err(|e| Error::MalformedModel(format!("bad JSON document: {e}")))?;
    if doc.version != FORMAT_VERSION {
        return Err(Error::MalformedModel(format!("unsupported version {}", doc.version)));
    }
    let blob = &bytes[json_end..];

    let mut def = GraphDef::default();
    for inp in doc.inputs {
        let shape = Shape::new(inp.shape).map_err(|e| Error::MalformedModel(e.to_string()))?;
        def.inputs.push((inp.id, shape));
    }
    for n in doc.nodes {
        let kind = OpKind::from_name(&n.kind).ok_or_else(|| Error::UnknownOpKind(n.kind.clone()))?;
        let attrs = attrs_from_json(kind, n.attrs).map_err(|e| Error::MalformedModel(format!("node `{}`: {e}", n.id)))?;
        let end = n
            .weight_offset
            .checked_add(n.weight_len)
            .filter(|&e| e <= blob.len() && n.weight_len % 4 == 0)
            .ok_or_else(|| Error::MalformedModel(format!("node `{}`: weight range out of bounds", n.id)))?;
        let mut values: Vec<f32> = blob[n.weight_offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let bias_len = match &attrs {
            OpAttrs::Conv2D(c) => c.out_channels,
            OpAttrs::MatMul(m) => m.out_features,
            _ => 0,
        };
        if values.len() < bias_len {
            return Err(Error::MalformedModel(format!("node `{}`: weight section too short", n.id)));
        }
        let bias = values.split_off(values.len() - bias_len);
        def.nodes.push(NodeDef {
            name: n.id,
            attrs,
            inputs: n.inputs,
            outputs: n.outputs,
            weights: values,
            bias,
        });
    }
    def.outputs = doc.outputs;
    Graph::new(def)
}

fn attrs_to_json(attrs: &OpAttrs) -> Result<Value> {
    Ok(match attrs {
        OpAttrs::Conv2D(a) => serde_json::to_value(a)?,
        OpAttrs::MatMul(a) => serde_json::to_value(a)?,
        OpAttrs::Pool2D(a) => serde_json::to_value(a)?,
        OpAttrs::Reshape(a) => serde_json::to_value(a)?,
        OpAttrs::ReLU | OpAttrs::Add | OpAttrs::Softmax => Value::Object(Default::default()),
    })
}

fn attrs_from_json(kind: OpKind, v: Value) -> serde_json::Result<OpAttrs> {
    Ok(match kind {
        OpKind::Conv2D => OpAttrs::Conv2D(serde_json::from_value(v)?),
        OpKind::MatMul => OpAttrs::MatMul(serde_json::from_value(v)?),
        OpKind::Pool2D => OpAttrs::Pool2D(serde_json::from_value(v)?),
        OpKind::Reshape => OpAttrs::Reshape(serde_json::from_value(v)?),
        OpKind::ReLU => OpAttrs::ReLU,
        OpKind::Add => OpAttrs::Add,
        OpKind::Softmax => OpAttrs::Softmax,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Conv2dAttrs;

    fn container(json: &str, blob: &[u8]) -> Vec<u8> {
        let mut out = MODEL_MAGIC.to_vec();
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(json.as_bytes());
        out.extend_from_slice(blob);
        out
    }

    #[test]
    fn single_conv_from_handwritten_json() {
        let attrs = Conv2dAttrs::square(3, 1, 3, 16);
        let n = attrs.weight_len() + 16;
        let json = format!(
            r#"{{"version":1,"inputs":[{{"id":"img","shape":[1,3,224,224]}}],
               "nodes":[{{"id":"c","kind":"Conv2D","attrs":{{"kernel":[3,3],"stride":1,"pad":[1,1],"in_channels":3,"out_channels":16}},
                          "inputs":["img"],"outputs":["y"],"weight_offset":0,"weight_len":{}}}],
               "outputs":["y"]}}"#,
            n * 4
        );
        let g = load_model(&container(&json, &vec![0u8; n * 4])).unwrap();
        assert_eq!(g.nodes().len(), 1);
        assert_eq!(g.shape(g.outputs()[0]), &Shape::nchw(1, 16, 224, 224));
        assert_eq!(g.nodes()[0].bias.len(), 16);
    }

    #[test]
    fn distinct_errors() {
        assert!(matches!(load_model(b"garbage"), Err(Error::MalformedModel(_))));

        let unknown = r#"{"version":1,"inputs":[{"id":"x","shape":[1]}],"nodes":[{"id":"n","kind":"Gelu","inputs":["x"],"outputs":["y"]}],"outputs":["y"]}"#;
        assert!(matches!(load_model(&container(unknown, &[])), Err(Error::UnknownOpKind(k)) if k == "Gelu"));

        let dangling = r#"{"version":1,"inputs":[{"id":"x","shape":[1,1]}],"nodes":[{"id":"n","kind":"ReLU","inputs":["z"],"outputs":["y"]}],"outputs":["y"]}"#;
        assert!(matches!(load_model(&container(dangling, &[])), Err(Error::DanglingInput { .. })));

        let bad_shape = r#"{"version":1,"inputs":[{"id":"a","shape":[1,2]},{"id":"b","shape":[1,3]}],"nodes":[{"id":"n","kind":"Add","inputs":["a","b"],"outputs":["y"]}],"outputs":["y"]}"#;
        assert!(matches!(load_model(&container(bad_shape, &[])), Err(Error::ShapeInference { .. })));

        let dynamic = r#"{"version":1,"inputs":[{"id":"x","shape":[-1,3]}],"nodes":[],"outputs":["x"]}"#;
        assert!(matches!(load_model(&container(dynamic, &[])), Err(Error::MalformedModel(_))));
    }

    #[test]
    fn truncated_weights_rejected() {
        let json = r#"{"version":1,"inputs":[{"id":"x","shape":[1,2]}],"nodes":[{"id":"fc","kind":"MatMul","attrs":{"in_features":2,"out_features":1},"inputs":["x"],"outputs":["y"],"weight_offset":0,"weight_len":12}],"outputs":["y"]}"#;
        assert!(matches!(load_model(&container(json, &[0u8; 8])), Err(Error::MalformedModel(_))));
        let g = load_model(&container(json, &[0u8; 12])).unwrap();
        assert_eq!(g.nodes()[0].weights.len(), 2);
    }
}
