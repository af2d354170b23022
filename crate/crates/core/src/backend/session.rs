use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use super::exec::Execution;
use super::store::BufferStats;
use super::{transfer, Backend, BufferHandle, PoolSlot};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::preinference::{pre_infer, BufferRole, ExecutionPlan, PlanOptions, PlanStep};
use crate::tensor::{Layout, Tensor};

/// Timing and traffic of the most recent run.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunReport {
    /// Wall time of each op, in node order.
    pub op_ms: Vec<f64>,
    pub total_ms: f64,
    /// Dispatch overhead charged by simulated devices.
    pub dispatch_ms: f64,
    pub transfers: usize,
    pub transfer_bytes: usize,
}

/// (backend, index into that backend's planned buffers)
type BufRef = (usize, usize);

#[derive(Debug)]
enum StepIo {
    Op {
        op: usize,
        backend: usize,
        inputs: Vec<usize>,
        outputs: Vec<usize>,
        scratch: Option<usize>,
    },
    Transfer {
        from: BufRef,
        to: BufRef,
    },
}

/// A plan bound to backend instances. Buffers come from each backend's pool
/// at the planned offsets, so running never allocates tensor memory.
pub struct Session {
    plan: Arc<ExecutionPlan>,
    backends: Vec<Box<dyn Backend>>,
    executions: Vec<Box<dyn Execution>>,
    handles: Vec<Vec<Option<BufferHandle>>>,
    /// Owner label per planned buffer, for pool diagnostics.
    labels: Vec<Vec<String>>,
    acquire_at: Vec<Vec<BufRef>>,
    release_at: Vec<Vec<BufRef>>,
    steps: Vec<StepIo>,
    input_bufs: Vec<usize>,
    output_bufs: Vec<usize>,
    in_handles: Vec<BufferHandle>,
    out_handles: Vec<BufferHandle>,
    report: RunReport,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("backends", &self.backends.iter().map(|b| b.name().to_string()).collect::<Vec<_>>())
            .field("ops", &self.executions.len())
            .finish()
    }
}

fn buffer_index(plan: &ExecutionPlan, backend: usize, role: BufferRole) -> Result<usize> {
    plan.memory(backend)
        .buffers
        .iter()
        .position(|b| b.role == role)
        .ok_or_else(|| Error::InvalidParam(format!("plan has no buffer {role:?} on backend {backend}")))
}

impl Session {
    /// Plans `graph` for `backends` (the first must be the CPU) and binds the
    /// result.
    pub fn build(graph: Graph, backends: Vec<Box<dyn Backend>>, options: PlanOptions) -> Result<Self> {
        let profiles: Vec<_> = backends.iter().map(|b| b.profile().clone()).collect();
        let plan = pre_infer(graph, &profiles, options)?;
        Session::new(Arc::new(plan), backends)
    }

    pub fn new(plan: Arc<ExecutionPlan>, mut backends: Vec<Box<dyn Backend>>) -> Result<Self> {
        if backends.len() != plan.profiles().len() || backends.iter().zip(plan.profiles()).any(|(b, p)| b.name() != p.name) {
            return Err(Error::InvalidParam("backends do not match the plan's profiles".into()));
        }
        let g = plan.graph();
        for (b, backend) in backends.iter_mut().enumerate() {
            let m = plan.memory(b);
            backend.reserve(m.pool_size, m.buffers.len());
        }

        let mut executions = Vec::with_capacity(plan.ops().len());
        for (i, op) in plan.ops().iter().enumerate() {
            let exec = backends[op.backend].create_execution(&plan.execution_request(i))?;
            if exec.scratch_floats() * 4 != op.scratch_bytes {
                return Err(Error::InvalidParam(format!("scratch of `{}` differs from its plan", op.name)));
            }
            executions.push(exec);
        }

        let n = plan.steps().len();
        let mut acquire_at = vec![Vec::new(); n + 1];
        let mut release_at = vec![Vec::new(); n + 1];
        let mut labels = Vec::with_capacity(backends.len());
        for b in 0..backends.len() {
            let mut names = Vec::new();
            for (i, buf) in plan.memory(b).buffers.iter().enumerate() {
                acquire_at[buf.first].push((b, i));
                release_at[buf.last].push((b, i));
                names.push(match buf.role {
                    BufferRole::Tensor(t) => g.tensor(t).name.clone(),
                    BufferRole::Scratch(s) => match plan.steps()[s] {
                        PlanStep::Op(op) => format!("{} (scratch)", g.nodes()[op].name),
                        PlanStep::Transfer { .. } => format!("step {s} (scratch)"),
                    },
                });
            }
            labels.push(names);
        }

        let mut steps = Vec::with_capacity(n);
        for (s, step) in plan.steps().iter().enumerate() {
            steps.push(match *step {
                PlanStep::Op(op) => {
                    let b = plan.ops()[op].backend;
                    let node = &g.nodes()[op];
                    let find = |t| buffer_index(&plan, b, BufferRole::Tensor(t));
                    StepIo::Op {
                        op,
                        backend: b,
                        inputs: node.inputs.iter().map(|&t| find(t)).collect::<Result<_>>()?,
                        outputs: node.outputs.iter().map(|&t| find(t)).collect::<Result<_>>()?,
                        scratch: buffer_index(&plan, b, BufferRole::Scratch(s)).ok(),
                    }
                }
                PlanStep::Transfer { tensor, from, to } => StepIo::Transfer {
                    from: (from, buffer_index(&plan, from, BufferRole::Tensor(tensor))?),
                    to: (to, buffer_index(&plan, to, BufferRole::Tensor(tensor))?),
                },
            });
        }
        let input_bufs = g
            .inputs()
            .iter()
            .map(|&t| buffer_index(&plan, 0, BufferRole::Tensor(t)))
            .collect::<Result<_>>()?;
        let output_bufs = g
            .outputs()
            .iter()
            .map(|&t| buffer_index(&plan, 0, BufferRole::Tensor(t)))
            .collect::<Result<_>>()?;

        Ok(Session {
            handles: (0..backends.len()).map(|b| vec![None; plan.memory(b).buffers.len()]).collect(),
            report: RunReport {
                op_ms: vec![0.0; plan.ops().len()],
                ..RunReport::default()
            },
            in_handles: Vec::with_capacity(4),
            out_handles: Vec::with_capacity(4),
            plan,
            backends,
            executions,
            labels,
            acquire_at,
            release_at,
            steps,
            input_bufs,
            output_bufs,
        })
    }

    pub fn plan(&self) -> &Arc<ExecutionPlan> {
        &self.plan
    }

    pub fn backends(&self) -> &[Box<dyn Backend>] {
        &self.backends
    }

    pub fn execution(&self, op: usize) -> &dyn Execution {
        &*self.executions[op]
    }

    pub fn report(&self) -> &RunReport {
        &self.report
    }

    pub fn buffer_stats(&self) -> Vec<BufferStats> {
        self.backends.iter().map(|b| b.stats()).collect()
    }

    /// Heap blocks created for buffers over the session's lifetime.
    pub fn allocations(&self) -> usize {
        self.backends.iter().map(|b| b.stats().allocations).sum()
    }

    /// Buffers currently acquired and not yet released.
    pub fn live_buffers(&self) -> usize {
        self.backends.iter().map(|b| b.stats().live()).sum()
    }

    fn handle(&self, (b, i): BufRef) -> BufferHandle {
        self.handles[b][i].expect("planned buffer acquired before use")
    }

    fn acquire(&mut self, (b, i): BufRef) -> Result<()> {
        let buf = &self.plan.memory(b).buffers[i];
        let slot = PoolSlot {
            offset: buf.offset,
            op: &self.labels[b][i],
        };
        self.handles[b][i] = Some(self.backends[b].acquire_buffer(buf.bytes, Some(slot))?);
        Ok(())
    }

    fn release(&mut self, (b, i): BufRef) -> Result<()> {
        match self.handles[b][i].take() {
            Some(h) => self.backends[b].release_buffer(h),
            None => Ok(()),
        }
    }

    fn release_everything(&mut self) {
        for b in 0..self.handles.len() {
            for i in 0..self.handles[b].len() {
                let _ = self.release((b, i));
            }
        }
    }

    fn run_step(&mut self, s: usize) -> Result<()> {
        match &self.steps[s] {
            StepIo::Op {
                op,
                backend,
                inputs,
                outputs,
                scratch,
            } => {
                let (op, b) = (*op, *backend);
                self.in_handles.clear();
                self.out_handles.clear();
                for &i in inputs {
                    self.in_handles.push(self.handles[b][i].expect("input acquired"));
                }
                for &i in outputs {
                    self.out_handles.push(self.handles[b][i].expect("output acquired"));
                }
                let scratch = scratch.map(|i| self.handle((b, i)));
                let start = Instant::now();
                self.backends[b].execute(&*self.executions[op], &self.in_handles, &self.out_handles, scratch)?;
                self.report.op_ms[op] = start.elapsed().as_secs_f64() * 1000.0;
            }
            &StepIo::Transfer { from, to } => {
                let (src, dst) = (self.handle(from), self.handle(to));
                self.report.transfer_bytes += transfer(&mut self.backends, from.0, src, to.0, dst)?;
                self.report.transfers += 1;
            }
        }
        Ok(())
    }

    fn run_steps(&mut self, inputs: &[&[f32]], outputs: &mut [&mut [f32]]) -> Result<()> {
        let n = self.steps.len();
        for s in 0..=n {
            for k in 0..self.acquire_at[s].len() {
                self.acquire(self.acquire_at[s][k])?;
            }
            if s == 0 {
                for (k, data) in inputs.iter().enumerate() {
                    let h = self.handle((0, self.input_bufs[k]));
                    self.backends[0].upload(h, data)?;
                }
            }
            if s < n {
                self.run_step(s)?;
            } else {
                for (k, out) in outputs.iter_mut().enumerate() {
                    let h = self.handle((0, self.output_bufs[k]));
                    self.backends[0].download(h, out)?;
                }
            }
            for k in 0..self.release_at[s].len() {
                self.release(self.release_at[s][k])?;
            }
        }
        Ok(())
    }

    /// Runs the plan on NCHW input data, writing NCHW outputs.
    pub fn run_into(&mut self, inputs: &[&[f32]], outputs: &mut [&mut [f32]]) -> Result<()> {
        let g = self.plan.graph();
        if inputs.len() != g.inputs().len() || outputs.len() != g.outputs().len() {
            return Err(Error::ShapeMismatch(format!(
                "graph takes {} inputs and {} outputs, got {} and {}",
                g.inputs().len(),
                g.outputs().len(),
                inputs.len(),
                outputs.len()
            )));
        }
        for (k, (&t, x)) in g.inputs().iter().zip(inputs).enumerate() {
            if x.len() != g.shape(t).element_count() {
                return Err(Error::ShapeMismatch(format!(
                    "input {k} `{}` needs {} values for shape {}, got {}",
                    g.tensor(t).name,
                    g.shape(t).element_count(),
                    g.shape(t),
                    x.len()
                )));
            }
        }
        for (k, (&t, y)) in g.outputs().iter().zip(outputs.iter()).enumerate() {
            if y.len() != g.shape(t).element_count() {
                return Err(Error::ShapeMismatch(format!(
                    "output {k} needs {} values",
                    g.shape(t).element_count()
                )));
            }
        }

        let dispatch_before: f64 = self.backends.iter().map(|b| b.dispatch_ms()).sum();
        self.report.op_ms.iter_mut().for_each(|t| *t = 0.0);
        self.report.transfers = 0;
        self.report.transfer_bytes = 0;
        let start = Instant::now();
        let result = self.run_steps(inputs, outputs);
        if result.is_err() {
            self.release_everything();
        }
        self.report.total_ms = start.elapsed().as_secs_f64() * 1000.0;
        self.report.dispatch_ms = self.backends.iter().map(|b| b.dispatch_ms()).sum::<f64>() - dispatch_before;
        result
    }

    /// Like [`Session::run_into`], checking input shapes and returning fresh
    /// output tensors.
    pub fn run(&mut self, inputs: &[Tensor]) -> Result<Vec<Tensor>> {
        let g = self.plan.graph();
        for (t, x) in g.inputs().iter().zip(inputs) {
            if x.shape() != g.shape(*t) {
                return Err(Error::ShapeMismatch(format!(
                    "input `{}` expects shape {}, got {}",
                    g.tensor(*t).name,
                    g.shape(*t),
                    x.shape()
                )));
            }
        }
        let mut outs: Vec<Tensor> = g
            .outputs()
            .iter()
            .map(|&t| Tensor::zeros(g.shape(t).clone(), Layout::Nchw))
            .collect();
        let ins: Vec<&[f32]> = inputs.iter().map(|t| t.data()).collect();
        let mut out_slices: Vec<&mut [f32]> = outs.iter_mut().map(|t| t.data_mut()).collect();
        self.run_into(&ins, &mut out_slices)?;
        Ok(outs)
    }
}
