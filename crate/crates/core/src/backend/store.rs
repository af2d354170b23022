//! Handle table over one backend's memory: a single pre-sized pool, or one
//! heap block per buffer.

use serde::Serialize;

use super::{BufferHandle, MemoryMode, PoolSlot};
use crate::error::{Error, Result};

/// 64-byte aligned storage unit of the pool.
#[derive(Debug, Clone, Copy)]
#[repr(C, align(64))]
struct Block([f32; 16]);

const BLOCK_FLOATS: usize = 16;

/// Counters of buffer traffic on one backend.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BufferStats {
    /// Heap blocks created for buffer memory, the pool included.
    pub allocations: usize,
    pub acquires: usize,
    pub releases: usize,
}

impl BufferStats {
    pub fn live(&self) -> usize {
        self.acquires - self.releases
    }
}

#[derive(Debug)]
enum Backing {
    /// Float offset into the pool.
    Pool(usize),
    Heap(Box<[f32]>),
}

#[derive(Debug)]
struct Slot {
    generation: u32,
    live: bool,
    len: usize,
    backing: Backing,
}

#[derive(Debug)]
pub(crate) struct BufferStore {
    mode: MemoryMode,
    pool: Vec<Block>,
    pool_floats: usize,
    slots: Vec<Slot>,
    free: Vec<u32>,
    stats: BufferStats,
}

impl BufferStore {
    pub fn new(mode: MemoryMode) -> Self {
        BufferStore {
            mode,
            pool: Vec::new(),
            pool_floats: 0,
            slots: Vec::new(),
            free: Vec::new(),
            stats: BufferStats::default(),
        }
    }

    pub fn mode(&self) -> MemoryMode {
        self.mode
    }

    pub fn stats(&self) -> BufferStats {
        self.stats
    }

    pub fn pool_bytes(&self) -> usize {
        self.pool_floats * 4
    }

    /// Sizes the pool to `bytes` and makes room for `handles` live buffers.
    /// Only pooled stores keep a pool.
    pub fn reserve(&mut self, bytes: usize, handles: usize) {
        if self.mode == MemoryMode::Pooled && bytes.div_ceil(4) != self.pool_floats {
            self.pool_floats = bytes.div_ceil(4);
            self.pool = vec![Block([0.0; BLOCK_FLOATS]); self.pool_floats.div_ceil(BLOCK_FLOATS)];
            self.stats.allocations += 1;
        }
        self.slots.reserve(handles.saturating_sub(self.slots.len()));
        self.free.reserve(handles.saturating_sub(self.free.len()));
    }

    fn pool_base(&mut self) -> *mut f32 {
        self.pool.as_mut_ptr().cast::<f32>()
    }

    pub fn acquire(&mut self, bytes: usize, at: Option<PoolSlot<'_>>) -> Result<BufferHandle> {
        let len = bytes.div_ceil(4);
        let backing = match (self.mode, at) {
            (MemoryMode::Pooled, Some(slot)) => {
                let end = slot.offset + bytes;
                if slot.offset % 4 != 0 || end > self.pool_bytes() {
                    return Err(Error::PoolExhausted {
                        op: slot.op.to_string(),
                        offset: slot.offset,
                        end,
                        pool: self.pool_bytes(),
                    });
                }
                Backing::Pool(slot.offset / 4)
            }
            _ => {
                self.stats.allocations += 1;
                Backing::Heap(vec![0.0; len].into_boxed_slice())
            }
        };
        self.stats.acquires += 1;
        let id = match self.free.pop() {
            Some(id) => {
                let s = &mut self.slots[id as usize];
                s.live = true;
                s.len = len;
                s.backing = backing;
                id
            }
            None => {
                self.slots.push(Slot {
                    generation: 0,
                    live: true,
                    len,
                    backing,
                });
                (self.slots.len() - 1) as u32
            }
        };
        Ok(BufferHandle {
            id,
            generation: self.slots[id as usize].generation,
        })
    }

    fn slot(&self, h: BufferHandle) -> Result<&Slot> {
        match self.slots.get(h.id as usize) {
            Some(s) if s.live && s.generation == h.generation => Ok(s),
            _ => Err(Error::UseAfterRelease(h.id)),
        }
    }

    pub fn release(&mut self, h: BufferHandle) -> Result<()> {
        self.slot(h)?;
        let poison = cfg!(debug_assertions);
        let s = &mut self.slots[h.id as usize];
        s.live = false;
        s.generation = s.generation.wrapping_add(1);
        let backing = std::mem::replace(&mut s.backing, Backing::Pool(0));
        let len = s.len;
        if let (Backing::Pool(off), true) = (backing, poison) {
            // catches reads of memory whose owner has gone
            self.pool_slice_mut(off, len).fill(f32::NAN);
        }
        self.free.push(h.id);
        self.stats.releases += 1;
        Ok(())
    }

    fn pool_slice_mut(&mut self, off: usize, len: usize) -> &mut [f32] {
        debug_assert!(off + len <= self.pool_floats);
        // SAFETY: the pool holds at least `pool_floats` contiguous f32 and the
        // range was bounds-checked on acquire.
        unsafe { std::slice::from_raw_parts_mut(self.pool_base().add(off), len) }
    }

    pub fn view(&self, h: BufferHandle) -> Result<&[f32]> {
        let s = self.slot(h)?;
        Ok(match &s.backing {
            // SAFETY: as in `pool_slice_mut`; shared borrow of self.
            Backing::Pool(off) => unsafe { std::slice::from_raw_parts(self.pool.as_ptr().cast::<f32>().add(*off), s.len) },
            Backing::Heap(b) => b,
        })
    }

    pub fn view_mut(&mut self, h: BufferHandle) -> Result<&mut [f32]> {
        let (len, off) = {
            let s = self.slot(h)?;
            match &s.backing {
                Backing::Pool(off) => (s.len, Some(*off)),
                Backing::Heap(_) => (s.len, None),
            }
        };
        match off {
            Some(off) => Ok(self.pool_slice_mut(off, len)),
            None => match &mut self.slots[h.id as usize].backing {
                Backing::Heap(b) => Ok(b),
                Backing::Pool(_) => unreachable!(),
            },
        }
    }

    /// Raw (pointer, len) of a live buffer, for handing out disjoint borrows.
    fn region(&mut self, h: BufferHandle) -> Result<(*mut f32, usize)> {
        let len = self.slot(h)?.len;
        let base = self.pool_base();
        Ok(match &mut self.slots[h.id as usize].backing {
            // SAFETY: in bounds, checked on acquire.
            Backing::Pool(off) => (unsafe { base.add(*off) }, len),
            Backing::Heap(b) => (b.as_mut_ptr(), len),
        })
    }

    /// Borrows `inputs` shared and `outputs` plus `scratch` exclusively, then
    /// calls `f`. Fails if a written buffer overlaps any other one.
    pub fn with_io<R>(
        &mut self,
        inputs: &[BufferHandle],
        outputs: &[BufferHandle],
        scratch: Option<BufferHandle>,
        f: impl FnOnce(&[&[f32]], &mut [&mut [f32]], &mut [f32]) -> R,
    ) -> Result<R> {
        let ins: Vec<(*mut f32, usize)> = inputs.iter().map(|&h| self.region(h)).collect::<Result<_>>()?;
        let mut outs: Vec<(*mut f32, usize)> = outputs.iter().map(|&h| self.region(h)).collect::<Result<_>>()?;
        if let Some(s) = scratch {
            outs.push(self.region(s)?);
        }
        let disjoint = |a: (*mut f32, usize), b: (*mut f32, usize)| {
            let (a0, b0) = (a.0 as usize, b.0 as usize);
            a.1 == 0 || b.1 == 0 || a0 + a.1 * 4 <= b0 || b0 + b.1 * 4 <= a0
        };
        for (i, &w) in outs.iter().enumerate() {
            if !ins.iter().chain(&outs[i + 1..]).all(|&o| disjoint(w, o)) {
                return Err(Error::InvalidParam("an op writes a buffer it also reads".into()));
            }
        }
        // SAFETY: every region is live and in bounds, and each exclusively
        // borrowed region was just shown not to overlap any other region.
        // All borrows end before `self` can be touched again.
        let in_slices: Vec<&[f32]> = ins
            .iter()
            .map(|&(p, n)| unsafe { std::slice::from_raw_parts(p as *const f32, n) })
            .collect();
        let mut out_slices: Vec<&mut [f32]> = outs.iter().map(|&(p, n)| unsafe { std::slice::from_raw_parts_mut(p, n) }).collect();
        let mut empty: [f32; 0] = [];
        let scratch_slice: &mut [f32] = if scratch.is_some() {
            out_slices.pop().expect("scratch pushed above")
        } else {
            &mut empty
        };
        Ok(f(&in_slices, &mut out_slices, scratch_slice))
    }
}
