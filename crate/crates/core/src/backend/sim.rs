use std::time::{Duration, Instant};

use super::exec::{create_cpu_execution, Execution, ExecutionRequest};
use super::store::{BufferStats, BufferStore};
use super::{check_len, Backend, BufferHandle, MemoryMode, PoolSlot};
use crate::error::{Error, Result};
use crate::graph::OpKind;
use crate::preinference::{BackendCost, BackendProfile, GraphicsApi, DEFAULT_GPU_FLOPS};

/// Stand-in for a GPU: runs the CPU kernels on memory the host cannot touch
/// directly and charges a fixed dispatch cost per op.
#[derive(Debug)]
pub struct SimBackend {
    profile: BackendProfile,
    store: BufferStore,
    /// Busy-wait for `t_schedule` on every dispatch.
    inject_latency: bool,
    dispatch_ms: f64,
}

impl SimBackend {
    pub fn new(mode: MemoryMode) -> Self {
        Self::with_profile(
            BackendProfile::all_kinds("sim", BackendCost::gpu(DEFAULT_GPU_FLOPS, GraphicsApi::OpenCl.t_schedule_ms())),
            mode,
        )
    }

    pub fn with_profile(profile: BackendProfile, mode: MemoryMode) -> Self {
        SimBackend {
            profile,
            store: BufferStore::new(mode),
            inject_latency: false,
            dispatch_ms: 0.0,
        }
    }

    /// Same backend restricted to `kinds`.
    pub fn supporting(mut self, kinds: &[OpKind]) -> Self {
        self.profile = BackendProfile::new(&self.profile.name, self.profile.cost, kinds);
        self
    }

    pub fn with_latency(mut self, inject: bool) -> Self {
        self.inject_latency = inject;
        self
    }
}

impl Backend for SimBackend {
    fn profile(&self) -> &BackendProfile {
        &self.profile
    }

    fn host_visible(&self) -> bool {
        false
    }

    fn memory_mode(&self) -> MemoryMode {
        self.store.mode()
    }

    fn reserve(&mut self, pool_bytes: usize, handles: usize) {
        self.store.reserve(pool_bytes, handles);
    }

    fn acquire_buffer(&mut self, bytes: usize, at: Option<PoolSlot<'_>>) -> Result<BufferHandle> {
        self.store.acquire(bytes, at)
    }

    fn release_buffer(&mut self, handle: BufferHandle) -> Result<()> {
        self.store.release(handle)
    }

    fn create_execution(&self, req: &ExecutionRequest<'_>) -> Result<Box<dyn Execution>> {
        let kind = req.node.kind();
        if !self.profile.supports(kind) {
            return Err(Error::Unsupported {
                backend: self.profile.name.clone(),
                kind: kind.name().into(),
            });
        }
        create_cpu_execution(req)
    }

    fn execute(
        &mut self,
        exec: &dyn Execution,
        inputs: &[BufferHandle],
        outputs: &[BufferHandle],
        scratch: Option<BufferHandle>,
    ) -> Result<()> {
        let t = self.profile.cost.t_schedule_ms;
        self.dispatch_ms += t;
        if self.inject_latency {
            let until = Instant::now() + Duration::from_secs_f64(t / 1000.0);
            while Instant::now() < until {
                std::hint::spin_loop();
            }
        }
        self.store.with_io(inputs, outputs, scratch, |i, o, s| exec.run(i, o, s))?
    }

    fn upload(&mut self, handle: BufferHandle, data: &[f32]) -> Result<()> {
        let dst = self.store.view_mut(handle)?;
        check_len(dst.len(), data.len())?;
        dst.copy_from_slice(data);
        Ok(())
    }

    fn download(&self, handle: BufferHandle, out: &mut [f32]) -> Result<()> {
        let src = self.store.view(handle)?;
        check_len(src.len(), out.len())?;
        out.copy_from_slice(src);
        Ok(())
    }

    fn host_view(&self, handle: BufferHandle) -> Result<&[f32]> {
        Err(Error::NotHostVisible(handle.id))
    }

    fn host_view_mut(&mut self, handle: BufferHandle) -> Result<&mut [f32]> {
        Err(Error::NotHostVisible(handle.id))
    }

    fn stats(&self) -> BufferStats {
        self.store.stats()
    }

    fn dispatch_ms(&self) -> f64 {
        self.dispatch_ms
    }
}
