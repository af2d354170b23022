//! Backend cost constants and per-operator cost.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, OpAttrs};

/// CPU throughput used when the processor cannot be probed.
pub const DEFAULT_CPU_FLOPS: f64 = 2e9;
/// Throughput assumed for GPUs missing from [`GPU_FLOPS`].
pub const DEFAULT_GPU_FLOPS: f64 = 4e9;

/// Measured mobile GPU throughput, in FLOPS.
pub const GPU_FLOPS: [(&str, f64); 17] = [
    ("Mali-T860", 6.83e9),
    ("Mali-T880", 6.83e9),
    ("Mali-G51", 6.83e9),
    ("Mali-G52", 6.83e9),
    ("Mali-G71", 31.61e9),
    ("Mali-G72", 31.61e9),
    ("Mali-G76", 31.61e9),
    ("Adreno (TM) 505", 3.19e9),
    ("Adreno (TM) 506", 4.74e9),
    ("Adreno (TM) 512", 14.23e9),
    ("Adreno (TM) 530", 25.40e9),
    ("Adreno (TM) 540", 42.74e9),
    ("Adreno (TM) 615", 16.77e9),
    ("Adreno (TM) 616", 18.77e9),
    ("Adreno (TM) 618", 18.77e9),
    ("Adreno (TM) 630", 42.74e9),
    ("Adreno (TM) 640", 42.74e9),
];

pub fn gpu_flops(device: &str) -> f64 {
    GPU_FLOPS
        .iter()
        .find(|(name, _)| *name == device)
        .map_or(DEFAULT_GPU_FLOPS, |&(_, f)| f)
}

/// Graphics APIs and their per-dispatch overhead.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphicsApi {
    OpenCl,
    OpenGl,
    Vulkan,
}

impl GraphicsApi {
    pub fn t_schedule_ms(self) -> f64 {
        match self {
            GraphicsApi::OpenCl | GraphicsApi::OpenGl => 0.05,
            GraphicsApi::Vulkan => 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceKind {
    Cpu,
    Gpu,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackendCost {
    pub kind: DeviceKind,
    pub flops: f64,
    pub t_schedule_ms: f64,
}

impl BackendCost {
    pub fn cpu(flops: f64) -> Self {
        BackendCost {
            kind: DeviceKind::Cpu,
            flops,
            t_schedule_ms: 0.0,
        }
    }

    pub fn gpu(flops: f64, t_schedule_ms: f64) -> Self {
        BackendCost {
            kind: DeviceKind::Gpu,
            flops,
            t_schedule_ms,
        }
    }

    pub fn gpu_device(device: &str, api: GraphicsApi) -> Self {
        Self::gpu(gpu_flops(device), api.t_schedule_ms())
    }

    fn validate(&self, name: &str) -> Result<()> {
        let valid = self.flops > 0.0 && self.flops.is_finite() && self.t_schedule_ms >= 0.0;
        if !valid {
            return Err(Error::InvalidParam(format!(
                "cost model `{name}` needs flops > 0 and t_schedule >= 0"
            )));
        }
        Ok(())
    }
}

/// Milliseconds for an operator of `mul` multiplications: `mul / FLOPS * 1000`,
/// plus the dispatch overhead on GPU-like backends.
pub fn op_cost(mul: u64, cost: &BackendCost) -> f64 {
    let compute = mul as f64 / cost.flops * 1000.0;
    match cost.kind {
        DeviceKind::Cpu => compute,
        DeviceKind::Gpu => compute + cost.t_schedule_ms,
    }
}

/// Multiplication count used for costing node `idx`.
///
/// Conv: `o_w o_h o_c (i_c / groups) k_h k_w` per image; MatMul: `n k m`;
/// pooling: output elements times window taps; other element-wise ops: the
/// element count; Reshape is free.
pub fn op_mul(g: &Graph, idx: usize) -> u64 {
    let node = &g.nodes()[idx];
    let out = g.shape(node.outputs[0]);
    let elems = out.element_count() as u64;
    match &node.attrs {
        OpAttrs::Conv2D(c) => elems * (c.in_channels / c.groups) as u64 * (c.kernel[0] * c.kernel[1]) as u64,
        OpAttrs::MatMul(m) => elems * m.in_features as u64,
        OpAttrs::Pool2D(p) => {
            let taps = if p.global {
                let (_, _, h, w) = g.shape(node.inputs[0]).as_nchw();
                h * w
            } else {
                p.kernel * p.kernel
            };
            elems * taps as u64
        }
        OpAttrs::ReLU | OpAttrs::Add | OpAttrs::Softmax => elems,
        OpAttrs::Reshape(_) => 0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct CostEntryDoc {
    flops: f64,
    #[serde(default)]
    t_schedule_ms: f64,
}

/// Named backend cost entries; `cpu` is always present.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    entries: BTreeMap<String, BackendCost>,
}

impl Default for CostModel {
    /// CPU at the fallback rate; `sim` as an unlisted GPU behind OpenCL; every
    /// measured GPU behind OpenCL.
    fn default() -> Self {
        let mut entries = BTreeMap::new();
        entries.insert("cpu".to_string(), BackendCost::cpu(DEFAULT_CPU_FLOPS));
        entries.insert(
            "sim".to_string(),
            BackendCost::gpu(DEFAULT_GPU_FLOPS, GraphicsApi::OpenCl.t_schedule_ms()),
        );
        for (name, flops) in GPU_FLOPS {
            entries.insert(name.to_string(), BackendCost::gpu(flops, GraphicsApi::OpenCl.t_schedule_ms()));
        }
        CostModel { entries }
    }
}

impl CostModel {
    pub fn get(&self, backend: &str) -> Option<&BackendCost> {
        self.entries.get(backend)
    }

    pub fn set(&mut self, backend: &str, cost: BackendCost) {
        self.entries.insert(backend.to_string(), cost);
    }

    pub fn entries(&self) -> &BTreeMap<String, BackendCost> {
        &self.entries
    }

    /// Parses `{name: {flops, t_schedule_ms}}`, overriding the defaults.
    /// `cpu` entries are CPU-kind; every other name is GPU-like.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: BTreeMap<String, CostEntryDoc> = serde_json::from_str(text)?;
        let mut model = CostModel::default();
        for (name, e) in doc {
            let cost = if name == "cpu" {
                BackendCost::cpu(e.flops)
            } else {
                BackendCost::gpu(e.flops, e.t_schedule_ms)
            };
            cost.validate(&name)?;
            model.entries.insert(name, cost);
        }
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc: BTreeMap<&String, CostEntryDoc> = self
            .entries
            .iter()
            .map(|(k, c)| {
                (
                    k,
                    CostEntryDoc {
                        flops: c.flops,
                        t_schedule_ms: c.t_schedule_ms,
                    },
                )
            })
            .collect();
        Ok(serde_json::to_string_pretty(&doc)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-9 * b.abs().max(1.0)
    }

    #[test]
    fn cpu_default() {
        assert!(close(op_cost(200_000_000, &BackendCost::cpu(DEFAULT_CPU_FLOPS)), 100.0));
    }

    #[test]
    fn mali_g71_opencl() {
        let c = BackendCost::gpu_device("Mali-G71", GraphicsApi::OpenCl);
        // 2e8 / 31.61e9 * 1000 + 0.05 = 6.3771...
        let ms = op_cost(200_000_000, &c);
        assert!((ms - 6.377).abs() < 5e-4, "{ms}");
    }

    #[test]
    fn zero_work_costs_dispatch_only() {
        let c = BackendCost::gpu(1e9, 0.05);
        assert_eq!(op_cost(0, &c), 0.05);
        assert_eq!(op_cost(0, &BackendCost::cpu(1e9)), 0.0);
    }

    #[test]
    fn table_lookup() {
        assert_eq!(gpu_flops("Adreno (TM) 540"), 42.74e9);
        assert_eq!(gpu_flops("Mystery GPU"), DEFAULT_GPU_FLOPS);
        assert_eq!(GraphicsApi::Vulkan.t_schedule_ms(), 0.01);
        let m = CostModel::default();
        assert_eq!(m.entries().len(), 19);
        assert_eq!(m.get("cpu").unwrap().flops, 2e9);
    }

    #[test]
    fn json_overrides() {
        let m = CostModel::from_json(r#"{"sim": {"flops": 1e10, "t_schedule_ms": 0.01}, "cpu": {"flops": 3e9}}"#).unwrap();
        assert_eq!(m.get("sim"), Some(&BackendCost::gpu(1e10, 0.01)));
        assert_eq!(m.get("cpu"), Some(&BackendCost::cpu(3e9)));
        assert!(CostModel::from_json(r#"{"cpu": {"flops": 0}}"#).is_err());
        let round = CostModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(round, m);
    }
}
