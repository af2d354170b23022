//! Runtime Winograd generator, tile-size choice and the blocked Winograd
//! convolution.

mod conv;
mod generator;
mod tile;

pub use conv::{conv_winograd, conv_winograd_into, transform_weights, winograd_scratch_len, WinogradWeights};
pub use generator::{generate_transforms, WinogradTransform, MAX_ALPHA};
pub use tile::{choose_tile, tile_candidates, winograd_cost, TileSchedule, TILE_CANDIDATES};

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::Result;
use crate::kernels::ConvParams;

/// Default interpolation point spacing.
pub const DEFAULT_SPACING: f64 = 0.5;

type TransformKey = (usize, usize, u64);

fn transform_table() -> &'static Mutex<HashMap<TransformKey, Arc<WinogradTransform>>> {
    static TABLE: OnceLock<Mutex<HashMap<TransformKey, Arc<WinogradTransform>>>> = OnceLock::new();
    TABLE.get_or_init(Default::default)
}

/// Memoized [`generate_transforms`], keyed by `(n, k, f)`.
pub fn cached_transform(n: usize, k: usize, f: f64) -> Result<Arc<WinogradTransform>> {
    let key = (n, k, f.to_bits());
    if let Some(t) = transform_table().lock().expect("transform table poisoned").get(&key) {
        return Ok(Arc::clone(t));
    }
    let t = Arc::new(generate_transforms(n, k, f)?);
    Ok(Arc::clone(
        transform_table().lock().expect("transform table poisoned").entry(key).or_insert(t),
    ))
}

/// Transformed conv weights keyed by node name, filled during planning and
/// read by executions.
#[derive(Debug, Default)]
pub struct WeightTransformCache {
    entries: Mutex<HashMap<String, Arc<WinogradWeights>>>,
    computed: AtomicUsize,
    hits: AtomicUsize,
}

impl WeightTransformCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_compute(&self, node: &str, weights: &[f32], p: &ConvParams, t: &WinogradTransform) -> Result<Arc<WinogradWeights>> {
        let mut entries = self.entries.lock().expect("weight cache poisoned");
        if let Some(u) = entries.get(node) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(Arc::clone(u));
        }
        let u = Arc::new(transform_weights(weights, p, t)?);
        self.computed.fetch_add(1, Ordering::Relaxed);
        entries.insert(node.to_string(), Arc::clone(&u));
        Ok(u)
    }

    pub fn get(&self, node: &str) -> Option<Arc<WinogradWeights>> {
        let u = self.entries.lock().expect("weight cache poisoned").get(node).cloned();
        if u.is_some() {
            self.hits.fetch_add(1, Ordering::Relaxed);
        }
        u
    }

    pub fn computed(&self) -> usize {
        self.computed.load(Ordering::Relaxed)
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("weight cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
