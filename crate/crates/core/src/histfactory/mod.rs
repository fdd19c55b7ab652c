//! Binned template measurements: channels of samples with norm factors and ±1σ shape
//! systematics, turned into a likelihood graph.
//!
//! Measurement JSON:
//!
//! ```json
//! {
//!   "name": "example",
//!   "poi": "mu",
//!   "channels": [{
//!     "name": "signal_region",
//!     "observed": {"edges": [0, 1, 2], "contents": [12, 9]},
//!     "samples": [{
//!       "name": "signal",
//!       "nominal": {"edges": [0, 1, 2], "contents": [5, 3]},
//!       "normFactors": [{"name": "mu", "initial": 1, "lo": 0, "hi": 10}],
//!       "histoSys": [{"name": "jes",
//!                     "up": {"edges": [0, 1, 2], "contents": [6, 3.5]},
//!                     "down": {"edges": [0, 1, 2], "contents": [4, 2.6]}}]
//!     }]
//!   }]
//! }
//! ```

mod build;

use std::cell::Cell;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::GraphError;

pub use build::{build_model, build_model_owned, interpolate_bin, HfModel, YIELD_FLOOR};

thread_local! {
    static DEEP_COPIES: Cell<u64> = const { Cell::new(0) };
    static MOVES: Cell<u64> = const { Cell::new(0) };
}

/// Histogram copy instrumentation, per thread.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CopyCounters {
    pub histogram_deep_copies: u64,
    pub histogram_moves: u64,
}

impl CopyCounters {
    /// Current values for this thread.
    pub fn snapshot() -> Self {
        Self {
            histogram_deep_copies: DEEP_COPIES.with(Cell::get),
            histogram_moves: MOVES.with(Cell::get),
        }
    }

    pub fn since(self, earlier: CopyCounters) -> Self {
        Self {
            histogram_deep_copies: self.histogram_deep_copies - earlier.histogram_deep_copies,
            histogram_moves: self.histogram_moves - earlier.histogram_moves,
        }
    }
}

pub(crate) fn record_move() {
    MOVES.with(|m| m.set(m.get() + 1));
}

/// Binned contents over strictly increasing edges. Cloning is counted.
#[derive(Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Histogram {
    edges: Vec<f64>,
    contents: Vec<f64>,
}

impl Clone for Histogram {
    fn clone(&self) -> Self {
        DEEP_COPIES.with(|c| c.set(c.get() + 1));
        Self {
            edges: self.edges.clone(),
            contents: self.contents.clone(),
        }
    }
}

impl Histogram {
    pub fn new(edges: Vec<f64>, contents: Vec<f64>) -> Result<Self, HfError> {
        let h = Self { edges, contents };
        h.check_shape("histogram")?;
        h.check_contents("histogram")?;
        Ok(h)
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn contents(&self) -> &[f64] {
        &self.contents
    }

    pub fn bins(&self) -> usize {
        self.contents.len()
    }

    fn check_shape(&self, location: &str) -> Result<(), HfError> {
        let ok = self.edges.len() >= 2
            && self.edges.len() == self.contents.len() + 1
            && self.edges.iter().all(|e| e.is_finite())
            && self.edges.windows(2).all(|w| w[0] < w[1]);
        if ok {
            Ok(())
        } else {
            Err(HfError::InvalidEdges(location.to_string()))
        }
    }

    fn check_contents(&self, location: &str) -> Result<(), HfError> {
        if self.contents.iter().all(|c| c.is_finite() && *c >= 0.0) {
            Ok(())
        } else {
            Err(HfError::NegativeBinContent(location.to_string()))
        }
    }

    fn compatible(&self, other: &Histogram) -> bool {
        self.edges == other.edges
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormFactor {
    pub name: String,
    pub initial: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistoSys {
    pub name: String,
    pub up: Histogram,
    pub down: Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Sample {
    pub name: String,
    pub nominal: Histogram,
    #[serde(default)]
    pub norm_factors: Vec<NormFactor>,
    #[serde(default)]
    pub histo_sys: Vec<HistoSys>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Channel {
    pub name: String,
    pub observed: Histogram,
    pub samples: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementSpec {
    pub name: String,
    pub poi: String,
    pub channels: Vec<Channel>,
}

#[derive(Debug, Error)]
pub enum HfError {
    #[error("schema error at {path}: {message}")]
    SchemaError { path: String, message: String },
    #[error("bin mismatch in channel '{channel}', sample '{sample}'{}", systematic.as_ref().map(|s| format!(", systematic '{s}'")).unwrap_or_default())]
    BinMismatch {
        channel: String,
        sample: String,
        systematic: Option<String>,
    },
    #[error("negative or non-finite bin content in {0}")]
    NegativeBinContent(String),
    #[error("bin edges must be finite and strictly increasing, one more than contents, in {0}")]
    InvalidEdges(String),
    #[error("norm factor '{name}': initial {initial} outside [{lo}, {hi}]")]
    InvalidNormFactor { name: String, initial: f64, lo: f64, hi: f64 },
    #[error("parameter of interest '{0}' is not a declared norm factor")]
    UnknownPoi(String),
    #[error("'{0}' is used both as a norm factor and as a systematic")]
    NameClash(String),
    #[error("all expected yields are zero")]
    DegenerateModel,
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Parses and validates a measurement.
pub fn parse_measurement(json: &str) -> Result<MeasurementSpec, HfError> {
    let de = &mut serde_json::Deserializer::from_str(json);
    let spec: MeasurementSpec = serde_path_to_error::deserialize(de).map_err(|e| HfError::SchemaError {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    validate(&spec)?;
    Ok(spec)
}

/// Checks edges, contents, bin compatibility, norm factors and the POI.
pub fn validate(spec: &MeasurementSpec) -> Result<(), HfError> {
    let mut norm_names = Vec::new();
    let mut sys_names = Vec::new();
    for ch in &spec.channels {
        let loc = format!("channels/{}/observed", ch.name);
        ch.observed.check_shape(&loc)?;
        ch.observed.check_contents(&loc)?;
        for s in &ch.samples {
            let mismatch = |systematic: Option<&str>| HfError::BinMismatch {
                channel: ch.name.clone(),
                sample: s.name.clone(),
                systematic: systematic.map(String::from),
            };
            let loc = format!("channels/{}/samples/{}", ch.name, s.name);
            if !s.nominal.compatible(&ch.observed) {
                return Err(mismatch(None));
            }
            s.nominal.check_contents(&format!("{loc}/nominal"))?;
            for sys in &s.histo_sys {
                if !sys.up.compatible(&s.nominal) || !sys.down.compatible(&s.nominal) {
                    return Err(mismatch(Some(&sys.name)));
                }
                sys.up.check_contents(&format!("{loc}/histoSys/{}/up", sys.name))?;
                sys.down.check_contents(&format!("{loc}/histoSys/{}/down", sys.name))?;
                sys_names.push(sys.name.as_str());
            }
            for nf in &s.norm_factors {
                if !(nf.lo <= nf.initial && nf.initial <= nf.hi) {
                    return Err(HfError::InvalidNormFactor {
                        name: nf.name.clone(),
                        initial: nf.initial,
                        lo: nf.lo,
                        hi: nf.hi,
                    });
                }
                norm_names.push(nf.name.as_str());
            }
        }
    }
    if let Some(clash) = sys_names.iter().find(|n| norm_names.contains(n)) {
        return Err(HfError::NameClash(clash.to_string()));
    }
    if !norm_names.contains(&spec.poi.as_str()) {
        return Err(HfError::UnknownPoi(spec.poi.clone()));
    }
    Ok(())
}

/// Number of histograms in a measurement: observed, nominal, and two per systematic.
pub fn histogram_count(spec: &MeasurementSpec) -> usize {
    spec.channels
        .iter()
        .map(|c| 1 + c.samples.iter().map(|s| 1 + 2 * s.histo_sys.len()).sum::<usize>())
        .sum()
}

/// Deterministic synthetic measurement of the given size.
///
/// Every channel has `samples` samples over `bins` unit bins; the first sample carries
/// the POI `mu`. Sample `j` has `systematics` shape systematics named `sys_j_k`,
/// shared by all channels. Observed data equals the nominal total.
pub fn synthetic_measurement(channels: usize, samples: usize, systematics: usize, bins: usize) -> MeasurementSpec {
    let edges: Vec<f64> = (0..=bins).map(|b| b as f64).collect();
    let hist = |contents: Vec<f64>| Histogram {
        edges: edges.clone(),
        contents,
    };
    let channels = (0..channels)
        .map(|c| {
            let samples: Vec<Sample> = (0..samples)
                .map(|j| {
                    let nominal: Vec<f64> = (0..bins)
                        .map(|b| 10.0 + ((c * 7 + j * 13 + b * 3) % 17) as f64)
                        .collect();
                    let histo_sys = (0..systematics)
                        .map(|k| {
                            let f = 0.02 * (1 + k % 5) as f64;
                            HistoSys {
                                name: format!("sys_{j}_{k}"),
                                up: hist(nominal.iter().map(|v| v * (1.0 + f)).collect()),
                                down: hist(nominal.iter().map(|v| v * (1.0 - 0.8 * f)).collect()),
                            }
                        })
                        .collect();
                    Sample {
                        name: format!("sample_{j}"),
                        nominal: hist(nominal),
                        norm_factors: if j == 0 {
                            vec![NormFactor {
                                name: "mu".into(),
                                initial: 1.0,
                                lo: 0.0,
                                hi: 10.0,
                            }]
                        } else {
                            Vec::new()
                        },
                        histo_sys,
                    }
                })
                .collect();
            let observed = (0..bins)
                .map(|b| samples.iter().map(|s| s.nominal.contents[b]).sum())
                .collect();
            Channel {
                name: format!("channel_{c}"),
                observed: hist(observed),
                samples,
            }
        })
        .collect();
    MeasurementSpec {
        name: "synthetic".into(),
        poi: "mu".into(),
        channels,
    }
}
