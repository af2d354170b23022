use serde::Serialize;

use super::cost::{op_cost, op_mul, BackendCost, DeviceKind};
use crate::error::{Error, Result};
use crate::graph::{Graph, OpKind};

/// What the planner knows about a backend: its name, cost entry and the op
/// kinds it can execute.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendProfile {
    pub name: String,
    pub cost: BackendCost,
    supports: Vec<OpKind>,
}

impl BackendProfile {
    pub fn new(name: &str, cost: BackendCost, supports: &[OpKind]) -> Self {
        let mut supports = supports.to_vec();
        supports.sort();
        supports.dedup();
        BackendProfile {
            name: name.to_string(),
            cost,
            supports,
        }
    }

    pub fn all_kinds(name: &str, cost: BackendCost) -> Self {
        Self::new(name, cost, &OpKind::ALL)
    }

    pub fn supports(&self, kind: OpKind) -> bool {
        self.supports.binary_search(&kind).is_ok()
    }

    pub fn supported_kinds(&self) -> &[OpKind] {
        &self.supports
    }
}

/// Backend index per node plus the cost of every candidate plan.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BackendAssignment {
    /// Candidate whose hybrid plan was chosen.
    pub candidate: usize,
    pub per_op: Vec<usize>,
    pub plan_costs: Vec<f64>,
    pub total_ms: f64,
}

fn check_profiles(profiles: &[BackendProfile]) -> Result<()> {
    match profiles.first() {
        Some(p) if p.cost.kind == DeviceKind::Cpu && OpKind::ALL.iter().all(|&k| p.supports(k)) => Ok(()),
        _ => Err(Error::InvalidParam(
            "the first backend must be a CPU backend supporting every op kind".into(),
        )),
    }
}

/// Plan that runs every node on `candidate` when it can, on the CPU
/// (profile 0) otherwise. Returns the assignment and its total cost.
pub fn hybrid_plan(g: &Graph, muls: &[u64], profiles: &[BackendProfile], candidate: usize) -> (Vec<usize>, f64) {
    let mut total = 0.0;
    let per_op = g
        .nodes()
        .iter()
        .zip(muls)
        .map(|(node, &mul)| {
            let b = if profiles[candidate].supports(node.kind()) { candidate } else { 0 };
            total += op_cost(mul, &profiles[b].cost);
            b
        })
        .collect();
    (per_op, total)
}

fn assignment(g: &Graph, profiles: &[BackendProfile], pick: Option<usize>) -> Result<BackendAssignment> {
    check_profiles(profiles)?;
    let muls: Vec<u64> = (0..g.nodes().len()).map(|i| op_mul(g, i)).collect();
    let plans: Vec<(Vec<usize>, f64)> = (0..profiles.len()).map(|c| hybrid_plan(g, &muls, profiles, c)).collect();
    let candidate = match pick {
        Some(c) if c < profiles.len() => c,
        Some(c) => return Err(Error::InvalidParam(format!("no backend with index {c}"))),
        // strict improvement only, so ties stay on the CPU
        None => (1..plans.len()).fold(0, |best, c| if plans[c].1 < plans[best].1 { c } else { best }),
    };
    Ok(BackendAssignment {
        candidate,
        per_op: plans[candidate].0.clone(),
        plan_costs: plans.iter().map(|p| p.1).collect(),
        total_ms: plans[candidate].1,
    })
}

/// Cheapest hybrid plan over all candidate backends. Profile 0 must be a
/// CPU that supports every op kind.
pub fn select_backend(g: &Graph, profiles: &[BackendProfile]) -> Result<BackendAssignment> {
    assignment(g, profiles, None)
}

/// The hybrid plan of one given candidate, regardless of cost.
pub fn force_backend(g: &Graph, profiles: &[BackendProfile], candidate: usize) -> Result<BackendAssignment> {
    assignment(g, profiles, Some(candidate))
}
