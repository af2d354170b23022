//! Static memory pool planning.

use serde::Serialize;

use crate::graph::{Graph, TensorId};

/// Offset alignment used unless a caller asks otherwise.
pub const DEFAULT_ALIGNMENT: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BufferRole {
    Tensor(TensorId),
    /// Working memory of the op at this plan step.
    Scratch(usize),
}

/// A buffer live from step `first` through step `last`, inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LiveRange {
    pub role: BufferRole,
    pub bytes: usize,
    pub first: usize,
    pub last: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PlannedBuffer {
    pub role: BufferRole,
    pub bytes: usize,
    pub offset: usize,
    pub first: usize,
    pub last: usize,
}

impl PlannedBuffer {
    pub fn end(&self) -> usize {
        self.offset + self.bytes
    }

    fn lives_with(&self, other: &PlannedBuffer) -> bool {
        self.first <= other.last && other.first <= self.last
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MemoryPlan {
    pub pool_size: usize,
    pub alignment: usize,
    pub buffers: Vec<PlannedBuffer>,
}

fn align_up(v: usize, a: usize) -> usize {
    v.div_ceil(a) * a
}

impl MemoryPlan {
    pub fn buffer(&self, role: BufferRole) -> Option<&PlannedBuffer> {
        self.buffers.iter().find(|b| b.role == role)
    }

    pub fn offset_of(&self, tensor: TensorId) -> Option<usize> {
        self.buffer(BufferRole::Tensor(tensor)).map(|b| b.offset)
    }

    pub fn lifetime(&self, tensor: TensorId) -> Option<(usize, usize)> {
        self.buffer(BufferRole::Tensor(tensor)).map(|b| (b.first, b.last))
    }

    /// Sum of all buffer sizes, each rounded up to the alignment.
    pub fn total_bytes(&self) -> usize {
        self.buffers.iter().map(|b| align_up(b.bytes, self.alignment)).sum()
    }

    /// First pair of simultaneously live buffers whose byte ranges intersect.
    pub fn find_overlap(&self) -> Option<(BufferRole, BufferRole)> {
        let mut live: Vec<&PlannedBuffer> = self.buffers.iter().filter(|b| b.bytes > 0).collect();
        live.sort_by_key(|b| b.offset);
        for (i, a) in live.iter().enumerate() {
            for b in &live[i + 1..] {
                if b.offset >= a.end() {
                    break;
                }
                if a.lives_with(b) {
                    return Some((a.role, b.role));
                }
            }
        }
        None
    }
}

/// First-fit placement over a simulated timeline. Ranges are visited by
/// `first` step (ties in input order); before each placement every buffer
/// whose `last` step is already over is freed, then the new buffer takes the
/// lowest aligned offset with room for it. The pool is the high watermark.
pub fn assign_offsets(ranges: &[LiveRange], alignment: usize) -> MemoryPlan {
    let alignment = alignment.max(1);
    let mut order: Vec<usize> = (0..ranges.len()).collect();
    order.sort_by_key(|&i| ranges[i].first);

    let mut offsets = vec![0; ranges.len()];
    // (offset, end, last) sorted by offset
    let mut live: Vec<(usize, usize, usize)> = Vec::new();
    let mut pool = 0;
    for i in order {
        let r = &ranges[i];
        live.retain(|&(_, _, last)| last >= r.first);
        if r.bytes == 0 {
            continue;
        }
        let mut at = 0;
        let mut slot = live.len();
        for (j, &(start, end, _)) in live.iter().enumerate() {
            if at + r.bytes <= start {
                slot = j;
                break;
            }
            at = at.max(align_up(end, alignment));
        }
        live.insert(slot, (at, at + r.bytes, r.last));
        offsets[i] = at;
        pool = pool.max(at + r.bytes);
    }

    let buffers = ranges
        .iter()
        .zip(offsets)
        .map(|(r, offset)| PlannedBuffer {
            role: r.role,
            bytes: r.bytes,
            offset,
            first: r.first,
            last: r.last,
        })
        .collect();
    MemoryPlan {
        pool_size: pool,
        alignment,
        buffers,
    }
}

/// Live ranges of every tensor when the nodes run in `order`. Graph inputs
/// are written before step 0; graph outputs stay live through step
/// `order.len()`.
pub fn tensor_ranges(g: &Graph, order: &[usize]) -> Vec<LiveRange> {
    let end = order.len();
    let mut first: Vec<Option<usize>> = vec![None; g.tensors().len()];
    let mut last = vec![0; g.tensors().len()];
    for &t in g.inputs() {
        first[t] = Some(0);
    }
    for (step, &n) in order.iter().enumerate() {
        let node = &g.nodes()[n];
        for &t in &node.inputs {
            last[t] = last[t].max(step);
        }
        for &t in &node.outputs {
            first[t] = Some(step);
            last[t] = last[t].max(step);
        }
    }
    for &t in g.outputs() {
        last[t] = end;
    }
    first
        .iter()
        .enumerate()
        .filter_map(|(t, f)| {
            f.map(|f| LiveRange {
                role: BufferRole::Tensor(t),
                bytes: g.shape(t).element_count() * 4,
                first: f,
                last: last[t].max(f),
            })
        })
        .collect()
}

/// Plans the pool for running `order` with the default alignment and no
/// scratch memory.
pub fn plan_memory(g: &Graph, order: &[usize]) -> MemoryPlan {
    plan_memory_with(g, order, &[], DEFAULT_ALIGNMENT)
}

/// Like [`plan_memory`], with `scratch_bytes[step]` of working memory live
/// only during that step.
pub fn plan_memory_with(g: &Graph, order: &[usize], scratch_bytes: &[usize], alignment: usize) -> MemoryPlan {
    let mut ranges = tensor_ranges(g, order);
    for (step, &bytes) in scratch_bytes.iter().enumerate() {
        if bytes > 0 {
            ranges.push(LiveRange {
                role: BufferRole::Scratch(step),
                bytes,
                first: step,
                last: step,
            });
        }
    }
    assign_offsets(&ranges, alignment)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{GraphDef, OpAttrs, ReshapeAttrs};
    use crate::tensor::Shape;
    use proptest::prelude::*;

    fn range(t: usize, bytes: usize, first: usize, last: usize) -> LiveRange {
        LiveRange {
            role: BufferRole::Tensor(t),
            bytes,
            first,
            last,
        }
    }

    #[test]
    fn chain_reuses_first_slot() {
        // A (input) -> B -> C: A dies after the first op, C lands on it
        let r = [range(0, 100, 0, 0), range(1, 200, 0, 1), range(2, 100, 1, 2)];
        let p = assign_offsets(&r, 1);
        assert_eq!(p.pool_size, 300);
        assert_eq!(p.buffers[2].offset, p.buffers[0].offset);
        let p = assign_offsets(&r, 64);
        assert_eq!(p.pool_size, 328);
        assert_eq!(p.buffers[1].offset, 128);
        assert_eq!(p.buffers[2].offset, 0);
        assert_eq!(p.find_overlap(), None);
    }

    #[test]
    fn single_output() {
        let p = assign_offsets(&[range(0, 48, 0, 1)], 64);
        assert_eq!(p.pool_size, 48);
    }

    #[test]
    fn zero_sized_buffers_take_no_space() {
        let p = assign_offsets(&[range(0, 0, 0, 3), range(1, 8, 0, 3)], 64);
        assert_eq!(p.pool_size, 8);
        assert_eq!(p.buffers[1].offset, 0);
    }

    #[test]
    fn diamond_keeps_shared_input_alive() {
        let mut d = GraphDef::default();
        let x = d.input("x", Shape::nchw(1, 2, 4, 4));
        let a = d.node("a", OpAttrs::ReLU, &[&x], vec![], vec![]);
        let l = d.node("l", OpAttrs::ReLU, &[&a], vec![], vec![]);
        let r = d.node("r", OpAttrs::ReLU, &[&a], vec![], vec![]);
        let r2 = d.node("r2", OpAttrs::ReLU, &[&r], vec![], vec![]);
        let s = d.node("s", OpAttrs::Add, &[&l, &r2], vec![], vec![]);
        d.output(&s);
        let g = Graph::new(d).unwrap();
        let order: Vec<usize> = (0..g.nodes().len()).collect();
        let p = plan_memory(&g, &order);
        let a = g.tensor_id("a").unwrap();
        // a is read by l (step 1) and r (step 2)
        assert_eq!(p.lifetime(a), Some((0, 2)));
        assert_eq!(p.find_overlap(), None);
        let a_buf = p.buffer(BufferRole::Tensor(a)).unwrap();
        for name in ["l", "r"] {
            let b = p.buffer(BufferRole::Tensor(g.tensor_id(name).unwrap())).unwrap();
            assert!(b.offset >= a_buf.end() || b.end() <= a_buf.offset);
        }
        assert_eq!(p.lifetime(g.tensor_id("s").unwrap()), Some((4, 5)));
    }

    #[test]
    fn scratch_is_short_lived() {
        let mut d = GraphDef::default();
        let x = d.input("x", Shape::new(vec![2, 8]).unwrap());
        let y = d.node("y", OpAttrs::Reshape(ReshapeAttrs { shape: vec![16] }), &[&x], vec![], vec![]);
        d.output(&y);
        let g = Graph::new(d).unwrap();
        let p = plan_memory_with(&g, &[0], &[256], 64);
        let s = p.buffer(BufferRole::Scratch(0)).unwrap();
        assert_eq!((s.first, s.last), (0, 0));
        assert_eq!(p.pool_size, 64 + 64 + 256);
    }

    fn arb_ranges() -> impl Strategy<Value = Vec<LiveRange>> {
        prop::collection::vec((0usize..400, 0usize..12, 0usize..6), 1..40).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (bytes, first, len))| range(i, bytes * 4, first, first + len))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn never_overlaps(ranges in arb_ranges(), align in prop::sample::select(vec![1usize, 4, 64])) {
            let p = assign_offsets(&ranges, align);
            prop_assert_eq!(p.find_overlap(), None);
            prop_assert!(p.pool_size <= p.total_bytes());
            for b in &p.buffers {
                prop_assert_eq!(b.offset % align, 0);
            }
        }

        #[test]
        fn equal_chain_needs_two_slots(n in 2usize..30, bytes in 1usize..100) {
            let ranges: Vec<_> = (0..n).map(|i| range(i, bytes * 4, i.saturating_sub(1), i)).collect();
            let p = assign_offsets(&ranges, 4);
            prop_assert!(p.pool_size <= 2 * bytes * 4);
        }
    }
}
