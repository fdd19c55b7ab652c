use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::DataSet;
use crate::fastmath::{simd_features, vectorizing_build};
use crate::graph::{EvalCounters, Graph, NodeId};

use super::{fit, EvalMode, FitOptions, LikelihoodError, Nll};

/// Timing of one evaluation mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderEntry {
    pub mode: EvalMode,
    pub median_wall_ms: f64,
    pub speedup_vs_scalar: f64,
    /// Counters of the last repeat.
    pub counters: EvalCounters,
    pub converged: bool,
    pub min_nll: f64,
    pub parameter_values: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderReport {
    pub events: usize,
    pub repeats: usize,
    pub vectorizing_build: bool,
    pub simd_features: Vec<String>,
    /// Set when the fast-math bar cannot be judged against the vectorized target.
    pub note: Option<String>,
    pub modes: Vec<LadderEntry>,
}

impl LadderReport {
    pub fn entry(&self, mode: EvalMode) -> Option<&LadderEntry> {
        self.modes.iter().find(|e| e.mode == mode)
    }
}

/// Median of `values`; NaN for an empty slice.
pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

/// Fits `model` to `data` `repeats` times in each mode from the same starting point.
///
/// Each repeat starts from a fresh copy of the graph. One NLL evaluation per repeat
/// is run untimed first to warm caches; the timed span is the fit itself.
pub fn benchmark_ladder(
    model: &Graph,
    top: NodeId,
    data: &DataSet,
    repeats: usize,
    options: &FitOptions,
) -> Result<LadderReport, LikelihoodError> {
    let repeats = repeats.max(1);
    let mut modes: Vec<LadderEntry> = Vec::new();
    for mode in EvalMode::ALL {
        let mut times = Vec::with_capacity(repeats);
        let mut last = None;
        for _ in 0..repeats {
            let mut nll = Nll::new(model.clone(), top, data, mode)?;
            nll.evaluate()?;
            let t = Instant::now();
            let result = fit(&mut nll, options)?;
            times.push(t.elapsed().as_secs_f64() * 1e3);
            last = Some(result);
        }
        let result = last.expect("at least one repeat");
        modes.push(LadderEntry {
            mode,
            median_wall_ms: median(&mut times),
            speedup_vs_scalar: f64::NAN,
            counters: result.counters,
            converged: result.converged,
            min_nll: result.min_nll,
            parameter_values: result.parameter_values,
        });
    }
    let scalar = modes[0].median_wall_ms;
    for e in &mut modes {
        e.speedup_vs_scalar = scalar / e.median_wall_ms;
    }
    let vectorizing = vectorizing_build();
    Ok(LadderReport {
        events: data.len(),
        repeats,
        vectorizing_build: vectorizing,
        simd_features: simd_features().into_iter().map(String::from).collect(),
        note: (!vectorizing).then(|| {
            "build cannot vectorize; fast-math mode is only required to beat batch mode".to_string()
        }),
        modes,
    })
}
