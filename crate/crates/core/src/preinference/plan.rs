use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;
use serde_json::{json, Value};

use super::cost::{op_cost, op_mul};
use super::memory::{assign_offsets, BufferRole, LiveRange, MemoryPlan, DEFAULT_ALIGNMENT};
use super::scheme::{select_schemes, SchemeChoice};
use super::select::{force_backend, select_backend, BackendAssignment, BackendProfile};
use crate::backend::{scratch_floats, ExecutionRequest};
use crate::error::{Error, Result};
use crate::graph::{Graph, OpKind, TensorId};
use crate::kernels::ConvParams;
use crate::winograd::{cached_transform, WeightTransformCache, WinogradTransform, WinogradWeights, DEFAULT_SPACING};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendPolicy {
    /// Cheapest hybrid plan.
    Auto,
    /// Hybrid plan of the backend at this index.
    Force(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanOptions {
    pub threads: usize,
    /// Winograd interpolation point spacing.
    pub spacing: f64,
    pub alignment: usize,
    pub policy: BackendPolicy,
}

impl Default for PlanOptions {
    fn default() -> Self {
        PlanOptions {
            threads: 4,
            spacing: DEFAULT_SPACING,
            alignment: DEFAULT_ALIGNMENT,
            policy: BackendPolicy::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlannedOp {
    pub node: usize,
    pub name: String,
    pub kind: OpKind,
    pub scheme: Option<SchemeChoice>,
    pub backend: usize,
    pub mul: u64,
    pub cost_ms: f64,
    /// Position among the plan steps.
    pub step: usize,
    pub scratch_bytes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanStep {
    Op(usize),
    Transfer { tensor: TensorId, from: usize, to: usize },
}

/// Everything fixed before the first inference: schemes, backends, the
/// step sequence with its transfers, transformed weights and one memory
/// plan per backend.
#[derive(Debug)]
pub struct ExecutionPlan {
    graph: Graph,
    profiles: Vec<BackendProfile>,
    options: PlanOptions,
    assignment: BackendAssignment,
    ops: Vec<PlannedOp>,
    steps: Vec<PlanStep>,
    memory: Vec<MemoryPlan>,
    winograd: Vec<Option<(Arc<WinogradTransform>, Arc<WinogradWeights>)>>,
    weight_cache: WeightTransformCache,
    total_cost_ms: f64,
}

impl ExecutionPlan {
    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn profiles(&self) -> &[BackendProfile] {
        &self.profiles
    }

    pub fn options(&self) -> &PlanOptions {
        &self.options
    }

    pub fn assignment(&self) -> &BackendAssignment {
        &self.assignment
    }

    /// Name of the backend whose hybrid plan was chosen.
    pub fn chosen_backend(&self) -> &str {
        &self.profiles[self.assignment.candidate].name
    }

    pub fn ops(&self) -> &[PlannedOp] {
        &self.ops
    }

    pub fn steps(&self) -> &[PlanStep] {
        &self.steps
    }

    pub fn transfers(&self) -> impl Iterator<Item = (usize, TensorId, usize, usize)> + '_ {
        self.steps.iter().enumerate().filter_map(|(s, st)| match *st {
            PlanStep::Transfer { tensor, from, to } => Some((s, tensor, from, to)),
            PlanStep::Op(_) => None,
        })
    }

    pub fn memory(&self, backend: usize) -> &MemoryPlan {
        &self.memory[backend]
    }

    pub fn pool_size(&self) -> usize {
        self.memory.iter().map(|m| m.pool_size).sum()
    }

    pub fn weight_cache(&self) -> &WeightTransformCache {
        &self.weight_cache
    }

    pub fn total_cost_ms(&self) -> f64 {
        self.total_cost_ms
    }

    pub fn winograd(&self, op: usize) -> Option<&(Arc<WinogradTransform>, Arc<WinogradWeights>)> {
        self.winograd[op].as_ref()
    }

    pub fn execution_request(&self, op: usize) -> ExecutionRequest<'_> {
        let node = &self.graph.nodes()[op];
        let w = self.winograd[op].as_ref();
        ExecutionRequest {
            node,
            input_shapes: node.inputs.iter().map(|&t| self.graph.shape(t)).collect(),
            output_shape: self.graph.shape(node.outputs[0]),
            scheme: self.ops[op].scheme,
            threads: self.options.threads,
            transform: w.map(|(t, _)| Arc::clone(t)),
            winograd_weights: w.map(|(_, u)| Arc::clone(u)),
        }
    }

    /// JSON summary: per-op scheme, backend, multiply count and cost, the
    /// transfer steps and the pool sizes.
    pub fn dump(&self) -> Value {
        let name = |b: usize| self.profiles[b].name.as_str();
        let ops: Vec<Value> = self
            .ops
            .iter()
            .map(|o| {
                json!({
                    "id": o.name,
                    "kind": o.kind.name(),
                    "scheme": o.scheme.map(|s| s.to_string()),
                    "backend": name(o.backend),
                    "mul": o.mul,
                    "cost_ms": o.cost_ms,
                })
            })
            .collect();
        let transfers: Vec<Value> = self
            .transfers()
            .map(|(step, t, from, to)| {
                json!({
                    "step": step,
                    "tensor": self.graph.tensor(t).name,
                    "from": name(from),
                    "to": name(to),
                })
            })
            .collect();
        let pools: BTreeMap<&str, usize> = self.memory.iter().enumerate().map(|(b, m)| (name(b), m.pool_size)).collect();
        let plan_costs: BTreeMap<&str, f64> = self.assignment.plan_costs.iter().enumerate().map(|(b, &c)| (name(b), c)).collect();
        json!({
            "backend": self.chosen_backend(),
            "ops": ops,
            "transfers": transfers,
            "pool_size": self.pool_size(),
            "pools": pools,
            "plan_costs": plan_costs,
            "total_cost_ms": self.total_cost_ms,
        })
    }
}

/// Steps in node order, with a transfer in front of every op whose input
/// lives elsewhere and after the last op for outputs not on the host.
fn build_steps(g: &Graph, per_op: &[usize]) -> (Vec<PlanStep>, Vec<usize>) {
    let mut resident: Vec<Vec<usize>> = vec![Vec::new(); g.tensors().len()];
    for &t in g.inputs() {
        resident[t].push(0);
    }
    let mut steps = Vec::new();
    let mut op_step = Vec::with_capacity(per_op.len());
    for (i, node) in g.nodes().iter().enumerate() {
        let b = per_op[i];
        for &t in &node.inputs {
            if !resident[t].contains(&b) {
                steps.push(PlanStep::Transfer {
                    tensor: t,
                    from: resident[t][0],
                    to: b,
                });
                resident[t].push(b);
            }
        }
        op_step.push(steps.len());
        steps.push(PlanStep::Op(i));
        for &t in &node.outputs {
            resident[t] = vec![b];
        }
    }
    for &t in g.outputs() {
        if !resident[t].contains(&0) {
            steps.push(PlanStep::Transfer {
                tensor: t,
                from: resident[t][0],
                to: 0,
            });
            resident[t].push(0);
        }
    }
    (steps, op_step)
}

struct RangeTable<'g> {
    graph: &'g Graph,
    /// (tensor, backend) -> index into `ranges[backend]`
    index: BTreeMap<(TensorId, usize), usize>,
    ranges: Vec<Vec<LiveRange>>,
}

impl RangeTable<'_> {
    fn open(&mut self, t: TensorId, b: usize, step: usize) {
        self.index.insert((t, b), self.ranges[b].len());
        self.ranges[b].push(LiveRange {
            role: BufferRole::Tensor(t),
            bytes: self.graph.shape(t).element_count() * 4,
            first: step,
            last: step,
        });
    }

    fn touch(&mut self, t: TensorId, b: usize, step: usize) {
        let r = &mut self.ranges[b][self.index[&(t, b)]];
        r.last = r.last.max(step);
    }
}

/// Live ranges per backend over the step sequence.
fn live_ranges(g: &Graph, steps: &[PlanStep], ops: &[PlannedOp], backends: usize) -> Vec<Vec<LiveRange>> {
    let mut table = RangeTable {
        graph: g,
        index: BTreeMap::new(),
        ranges: vec![Vec::new(); backends],
    };
    for &t in g.inputs() {
        table.open(t, 0, 0);
    }
    for (s, step) in steps.iter().enumerate() {
        match *step {
            PlanStep::Transfer { tensor, from, to } => {
                table.open(tensor, to, s);
                table.touch(tensor, from, s);
            }
            PlanStep::Op(i) => {
                let node = &g.nodes()[i];
                let b = ops[i].backend;
                for &t in &node.inputs {
                    table.touch(t, b, s);
                }
                for &t in &node.outputs {
                    table.open(t, b, s);
                }
                if ops[i].scratch_bytes > 0 {
                    table.ranges[b].push(LiveRange {
                        role: BufferRole::Scratch(s),
                        bytes: ops[i].scratch_bytes,
                        first: s,
                        last: s,
                    });
                }
            }
        }
    }
    for &t in g.outputs() {
        table.touch(t, 0, steps.len());
    }
    table.ranges
}

/// Fixes schemes, backend assignment, transformed weights, transfers and
/// memory offsets for `g`. `profiles[0]` must be the CPU.
pub fn pre_infer(g: Graph, profiles: &[BackendProfile], options: PlanOptions) -> Result<ExecutionPlan> {
    if options.threads == 0 || options.spacing.is_nan() || options.spacing <= 0.0 {
        return Err(Error::InvalidParam("threads and spacing must be positive".into()));
    }
    let schemes = select_schemes(&g);
    let assignment = match options.policy {
        BackendPolicy::Auto => select_backend(&g, profiles)?,
        BackendPolicy::Force(b) => force_backend(&g, profiles, b)?,
    };

    let weight_cache = WeightTransformCache::new();
    let mut winograd = Vec::with_capacity(g.nodes().len());
    for (node, scheme) in g.nodes().iter().zip(&schemes) {
        winograd.push(match (scheme, node.conv()) {
            (Some(SchemeChoice::Winograd(n)), Some(c)) => {
                let t = cached_transform(*n, c.kernel[0], options.spacing)?;
                let u = weight_cache.get_or_compute(&node.name, &node.weights, &ConvParams::from(c), &t)?;
                Some((t, u))
            }
            _ => None,
        });
    }

    let (steps, op_step) = build_steps(&g, &assignment.per_op);
    let mut ops = Vec::with_capacity(g.nodes().len());
    for (i, node) in g.nodes().iter().enumerate() {
        let backend = assignment.per_op[i];
        let mul = op_mul(&g, i);
        let req = ExecutionRequest {
            node,
            input_shapes: node.inputs.iter().map(|&t| g.shape(t)).collect(),
            output_shape: g.shape(node.outputs[0]),
            scheme: schemes[i],
            threads: options.threads,
            transform: None,
            winograd_weights: None,
        };
        ops.push(PlannedOp {
            node: i,
            name: node.name.clone(),
            kind: node.kind(),
            scheme: schemes[i],
            backend,
            mul,
            cost_ms: op_cost(mul, &profiles[backend].cost),
            step: op_step[i],
            scratch_bytes: scratch_floats(&req) * 4,
        });
    }
    let memory = live_ranges(&g, &steps, &ops, profiles.len())
        .iter()
        .map(|r| assign_offsets(r, options.alignment))
        .collect();
    let total_cost_ms = ops.iter().map(|o| o.cost_ms).sum();
    for o in &ops {
        log::debug!(
            "{} {} on {}: mul {} cost {:.4} ms scratch {} B",
            o.name,
            o.scheme.map_or_else(|| o.kind.name().to_string(), |s| s.to_string()),
            profiles[o.backend].name,
            o.mul,
            o.cost_ms,
            o.scratch_bytes
        );
    }
    log::info!(
        "planned {} ops on `{}` ({} transfers), estimated {:.3} ms",
        ops.len(),
        profiles[assignment.candidate].name,
        steps.iter().filter(|s| matches!(s, PlanStep::Transfer { .. })).count(),
        total_cost_ms
    );
    Ok(ExecutionPlan {
        graph: g,
        profiles: profiles.to_vec(),
        options,
        assignment,
        ops,
        steps,
        memory,
        winograd,
        weight_cache,
        total_cost_ms,
    })
}
