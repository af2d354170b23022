//! Uniform backend interface, the CPU backend, a simulated device backend and
//! the session that runs an execution plan over them.

mod cpu;
mod exec;
mod session;
#[cfg(feature = "sim")]
mod sim;
mod store;

pub use cpu::CpuBackend;
pub use exec::{create_cpu_execution, scratch_floats, Execution, ExecutionRequest};
pub use session::{RunReport, Session};
#[cfg(feature = "sim")]
pub use sim::SimBackend;
pub use store::BufferStats;

use crate::error::{Error, Result};
use crate::preinference::BackendProfile;

/// Opaque reference to a buffer owned by one backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BufferHandle {
    id: u32,
    generation: u32,
}

/// Where buffer memory comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MemoryMode {
    /// Planned offsets into one pool allocated up front.
    #[default]
    Pooled,
    /// A separate heap block per acquire.
    Fresh,
}

/// Planned placement of a buffer inside the pool, with the op that owns it
/// for diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct PoolSlot<'a> {
    pub offset: usize,
    pub op: &'a str,
}

pub trait Backend: Send {
    fn profile(&self) -> &BackendProfile;

    fn name(&self) -> &str {
        &self.profile().name
    }

    /// Whether host code can read and write this backend's buffers directly.
    fn host_visible(&self) -> bool;

    fn memory_mode(&self) -> MemoryMode;

    /// Sizes the pool once, before execution starts.
    fn reserve(&mut self, pool_bytes: usize, handles: usize);

    /// A buffer of `bytes`, at the planned slot when one is given and the
    /// backend is pooled.
    fn acquire_buffer(&mut self, bytes: usize, at: Option<PoolSlot<'_>>) -> Result<BufferHandle>;

    fn release_buffer(&mut self, handle: BufferHandle) -> Result<()>;

    fn create_execution(&self, req: &ExecutionRequest<'_>) -> Result<Box<dyn Execution>>;

    fn execute(
        &mut self,
        exec: &dyn Execution,
        inputs: &[BufferHandle],
        outputs: &[BufferHandle],
        scratch: Option<BufferHandle>,
    ) -> Result<()>;

    fn upload(&mut self, handle: BufferHandle, data: &[f32]) -> Result<()>;

    fn download(&self, handle: BufferHandle, out: &mut [f32]) -> Result<()>;

    fn host_view(&self, handle: BufferHandle) -> Result<&[f32]>;

    fn host_view_mut(&mut self, handle: BufferHandle) -> Result<&mut [f32]>;

    fn stats(&self) -> BufferStats;

    /// Simulated dispatch time charged so far, in milliseconds.
    fn dispatch_ms(&self) -> f64 {
        0.0
    }
}

fn two_mut<T: ?Sized>(v: &mut [Box<T>], a: usize, b: usize) -> (&mut T, &mut T) {
    assert_ne!(a, b);
    if a < b {
        let (l, r) = v.split_at_mut(b);
        (&mut *l[a], &mut *r[0])
    } else {
        let (l, r) = v.split_at_mut(a);
        (&mut *r[0], &mut *l[b])
    }
}

/// Copies `src` on backend `from` into `dst` on backend `to` and returns the
/// bytes moved. Within one backend the data is already where it needs to be,
/// so nothing is copied.
pub fn transfer(backends: &mut [Box<dyn Backend>], from: usize, src: BufferHandle, to: usize, dst: BufferHandle) -> Result<usize> {
    if from == to {
        return Ok(0);
    }
    let (f, t) = two_mut(backends, from, to);
    if f.host_visible() {
        let data = f.host_view(src)?;
        t.upload(dst, data)?;
        Ok(data.len() * 4)
    } else if t.host_visible() {
        let out = t.host_view_mut(dst)?;
        f.download(src, out)?;
        Ok(out.len() * 4)
    } else {
        Err(Error::Unsupported {
            backend: format!("{} -> {}", f.name(), t.name()),
            kind: "device-to-device transfer".into(),
        })
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::ShapeMismatch(format!("buffer holds {expected} values, got {got}")));
    }
    Ok(())
}
