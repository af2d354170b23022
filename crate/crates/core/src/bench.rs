//! Latency measurement over a built session.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use serde::Serialize;

use crate::backend::Session;
use crate::error::{Error, Result};
use crate::tensor::{Layout, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub backend: String,
    pub threads: usize,
    pub warmup: usize,
    /// Timed runs only; warm-up runs are never recorded.
    pub latencies_ms: Vec<f64>,
    pub mean_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub p50_ms: f64,
    pub p90_ms: f64,
    /// Simulated dispatch overhead per run.
    pub dispatch_ms: f64,
    /// Conv count per scheme.
    pub schemes: BTreeMap<String, usize>,
    pub output_hash: String,
}

/// Nearest-rank percentile of ascending `sorted`.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// CRC-32 over the little-endian bytes of every output.
pub fn output_hash(outputs: &[Tensor]) -> String {
    let mut h = crc32fast::Hasher::new();
    for t in outputs {
        for v in t.data() {
            h.update(&v.to_le_bytes());
        }
    }
    format!("{:08x}", h.finalize())
}

impl BenchReport {
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "backend      {}", self.backend);
        let _ = writeln!(s, "threads      {}", self.threads);
        let _ = writeln!(s, "runs         {} (+{} warm-up)", self.latencies_ms.len(), self.warmup);
        let _ = writeln!(s, "mean         {:.3} ms", self.mean_ms);
        let _ = writeln!(s, "min / max    {:.3} / {:.3} ms", self.min_ms, self.max_ms);
        let _ = writeln!(s, "p50 / p90    {:.3} / {:.3} ms", self.p50_ms, self.p90_ms);
        if self.dispatch_ms > 0.0 {
            let _ = writeln!(s, "dispatch     {:.3} ms (simulated)", self.dispatch_ms);
        }
        for (scheme, n) in &self.schemes {
            let _ = writeln!(s, "scheme       {scheme} x{n}");
        }
        let _ = write!(s, "output hash  {}", self.output_hash);
        s
    }
}

/// `warmup` untimed runs, then `runs` timed ones on the same session.
pub fn benchmark(session: &mut Session, inputs: &[Tensor], runs: usize, warmup: usize) -> Result<(BenchReport, Vec<Tensor>)> {
    if runs == 0 {
        return Err(Error::InvalidParam("at least one timed run is needed".into()));
    }
    let g = session.plan().graph();
    let mut outputs: Vec<Tensor> = g
        .outputs()
        .iter()
        .map(|&t| Tensor::zeros(g.shape(t).clone(), Layout::Nchw))
        .collect();
    let ins: Vec<&[f32]> = inputs.iter().map(|t| t.data()).collect();
    for _ in 0..warmup {
        session.run(inputs)?;
    }
    let mut latencies = Vec::with_capacity(runs);
    let mut dispatch = 0.0;
    for _ in 0..runs {
        let mut outs: Vec<&mut [f32]> = outputs.iter_mut().map(|t| t.data_mut()).collect();
        let start = Instant::now();
        session.run_into(&ins, &mut outs)?;
        latencies.push(start.elapsed().as_secs_f64() * 1000.0);
        dispatch += session.report().dispatch_ms;
    }
    let mut sorted = latencies.clone();
    sorted.sort_by(f64::total_cmp);
    let plan = session.plan();
    let mut schemes = BTreeMap::new();
    for op in plan.ops() {
        if let Some(s) = op.scheme {
            *schemes.entry(s.to_string()).or_insert(0) += 1;
        }
    }
    let report = BenchReport {
        backend: plan.chosen_backend().to_string(),
        threads: plan.options().threads,
        warmup,
        mean_ms: latencies.iter().sum::<f64>() / runs as f64,
        min_ms: sorted[0],
        max_ms: sorted[runs - 1],
        p50_ms: percentile(&sorted, 50.0),
        p90_ms: percentile(&sorted, 90.0),
        dispatch_ms: dispatch / runs as f64,
        latencies_ms: latencies,
        schemes,
        output_hash: output_hash(&outputs),
    };
    Ok((report, outputs))
}
