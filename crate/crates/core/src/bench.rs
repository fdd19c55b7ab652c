//! Microbenchmarks behind `fitbench bench`: collection traversal and histogram-model
//! build scaling. The likelihood ladder lives in [`crate::likelihood::benchmark_ladder`].

use std::hint::black_box;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::collections::{NodeCollection, SharedCollection};
use crate::graph::NodeId;
use crate::histfactory::{build_model, histogram_count, synthetic_measurement, CopyCounters, HfError};
use crate::likelihood::median;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectionsReport {
    pub elements: usize,
    pub repeats: usize,
    pub native_median_ms: f64,
    pub legacy_median_ms: f64,
    /// Elements per second.
    pub native_throughput: f64,
    pub legacy_throughput: f64,
    pub native_vs_legacy: f64,
    pub same_sequence: bool,
}

/// Times a full forward traversal of an `elements`-long collection, natively and
/// through a legacy cursor. Each repeat runs both once.
pub fn collections_benchmark(elements: usize, repeats: usize) -> CollectionsReport {
    let repeats = repeats.max(1);
    let mut coll = NodeCollection::with_capacity(elements);
    for i in 0..elements {
        coll.insert(NodeId::new(i), &format!("n{i}"));
    }
    let shared = SharedCollection::new(coll);

    let mut native = Vec::with_capacity(repeats);
    let mut legacy = Vec::with_capacity(repeats);
    let mut same = true;
    for _ in 0..repeats {
        let c = shared.borrow();
        let t = Instant::now();
        let mut a = 0usize;
        for id in &*c {
            a = a.wrapping_mul(31).wrapping_add(black_box(id).index());
        }
        native.push(t.elapsed().as_secs_f64() * 1e3);
        drop(c);

        let t = Instant::now();
        let mut cursor = shared.legacy_cursor();
        let mut b = 0usize;
        while let Some(id) = cursor.legacy_next() {
            b = b.wrapping_mul(31).wrapping_add(black_box(id).index());
        }
        legacy.push(t.elapsed().as_secs_f64() * 1e3);
        same &= black_box(a) == black_box(b);
    }
    let native_median_ms = median(&mut native);
    let legacy_median_ms = median(&mut legacy);
    let per_second = |ms: f64| elements as f64 / (ms.max(1e-9) * 1e-3);
    CollectionsReport {
        elements,
        repeats,
        native_median_ms,
        legacy_median_ms,
        native_throughput: per_second(native_median_ms),
        legacy_throughput: per_second(legacy_median_ms),
        native_vs_legacy: legacy_median_ms / native_median_ms.max(1e-9),
        same_sequence: same,
    }
}

/// Shape of the smallest synthetic measurement; sizes scale the channel count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HfBase {
    pub channels: usize,
    pub samples: usize,
    pub systematics: usize,
    pub bins: usize,
}

impl Default for HfBase {
    fn default() -> Self {
        Self {
            channels: 4,
            samples: 6,
            systematics: 12,
            bins: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HfScalingEntry {
    pub factor: usize,
    pub channels: usize,
    pub histograms: usize,
    pub nodes: usize,
    pub median_build_ms: f64,
    /// Build time relative to the previous size.
    pub growth: Option<f64>,
    pub copy_counters: CopyCounters,
    pub copies_within_bound: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HfScalingReport {
    pub base: HfBase,
    pub repeats: usize,
    pub sizes: Vec<HfScalingEntry>,
}

/// Builds synthetic measurements at each `factor` times the base channel count.
pub fn hf_scaling_benchmark(base: HfBase, factors: &[usize], repeats: usize) -> Result<HfScalingReport, HfError> {
    let repeats = repeats.max(1);
    let mut sizes: Vec<HfScalingEntry> = Vec::with_capacity(factors.len());
    for &factor in factors {
        let channels = base.channels * factor;
        let spec = synthetic_measurement(channels, base.samples, base.systematics, base.bins);
        let histograms = histogram_count(&spec);
        // Untimed warm-up.
        drop(build_model(&spec)?);
        let mut times = Vec::with_capacity(repeats);
        let mut last = None;
        for _ in 0..repeats {
            let t = Instant::now();
            let model = build_model(&spec)?;
            times.push(t.elapsed().as_secs_f64() * 1e3);
            last = Some(model);
        }
        let model = last.expect("at least one repeat");
        let median_build_ms = median(&mut times);
        let growth = sizes.last().map(|p| median_build_ms / p.median_build_ms);
        sizes.push(HfScalingEntry {
            factor,
            channels,
            histograms,
            nodes: model.graph.len(),
            median_build_ms,
            growth,
            copy_counters: model.copy_counters,
            copies_within_bound: model.copy_counters.histogram_deep_copies <= histograms as u64,
        });
    }
    Ok(HfScalingReport { base, repeats, sizes })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collections_smoke() {
        let r = collections_benchmark(10_000, 3);
        assert!(r.same_sequence);
        assert!(r.native_throughput.is_finite() && r.legacy_throughput.is_finite());
    }

    #[test]
    fn hf_scaling_smoke() {
        let base = HfBase {
            channels: 1,
            samples: 2,
            systematics: 2,
            bins: 3,
        };
        let r = hf_scaling_benchmark(base, &[1, 2], 1).unwrap();
        assert_eq!(r.sizes.len(), 2);
        assert!(r.sizes.iter().all(|s| s.copies_within_bound));
        assert_eq!(r.sizes[1].histograms, 2 * r.sizes[0].histograms);
        assert!(r.sizes[0].growth.is_none() && r.sizes[1].growth.is_some());
    }
}
