//! Planning done once before inference: convolution schemes, backend
//! assignment, weight transforms and the static memory pool.

mod cost;
mod memory;
mod plan;
mod scheme;
mod select;

pub use cost::{
    gpu_flops, op_cost, op_mul, BackendCost, CostModel, DeviceKind, GraphicsApi, DEFAULT_CPU_FLOPS, DEFAULT_GPU_FLOPS, GPU_FLOPS,
};
pub use memory::{
    assign_offsets, plan_memory, plan_memory_with, tensor_ranges, BufferRole, LiveRange, MemoryPlan, PlannedBuffer, DEFAULT_ALIGNMENT,
};
pub use plan::{pre_infer, BackendPolicy, ExecutionPlan, PlanOptions, PlanStep, PlannedOp};
pub use scheme::{select_conv_scheme, select_schemes, SchemeChoice};
pub use select::{force_backend, hybrid_plan, select_backend, BackendAssignment, BackendProfile};
