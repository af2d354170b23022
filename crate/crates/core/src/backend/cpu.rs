use super::exec::{create_cpu_execution, Execution, ExecutionRequest};
use super::store::{BufferStats, BufferStore};
use super::{check_len, Backend, BufferHandle, MemoryMode, PoolSlot};
use crate::error::Result;
use crate::preinference::{BackendCost, BackendProfile, DEFAULT_CPU_FLOPS};

/// Host backend running the portable kernels.
#[derive(Debug)]
pub struct CpuBackend {
    profile: BackendProfile,
    store: BufferStore,
}

impl CpuBackend {
    pub fn new(mode: MemoryMode) -> Self {
        Self::with_cost(BackendCost::cpu(DEFAULT_CPU_FLOPS), mode)
    }

    pub fn with_cost(cost: BackendCost, mode: MemoryMode) -> Self {
        CpuBackend {
            profile: BackendProfile::all_kinds("cpu", cost),
            store: BufferStore::new(mode),
        }
    }
}

impl Backend for CpuBackend {
    fn profile(&self) -> &BackendProfile {
        &self.profile
    }

    fn host_visible(&self) -> bool {
        true
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
        create_cpu_execution(req)
    }

    fn execute(
        &mut self,
        exec: &dyn Execution,
        inputs: &[BufferHandle],
        outputs: &[BufferHandle],
        scratch: Option<BufferHandle>,
    ) -> Result<()> {
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
        self.store.view(handle)
    }

    fn host_view_mut(&mut self, handle: BufferHandle) -> Result<&mut [f32]> {
        self.store.view_mut(handle)
    }

    fn stats(&self) -> BufferStats {
        self.store.stats()
    }
}
