use std::collections::HashMap;
use std::sync::Arc;

use crate::graph::{FunctionOp, Graph, NodeId, ScalarFunction};
use crate::likelihood::GraphObjective;

use super::{record_move, validate, CopyCounters, HfError, Histogram, MeasurementSpec, NormFactor};

/// Lower limit applied to every interpolated sample yield.
pub const YIELD_FLOOR: f64 = 1e-9;

const ALPHA_BOUND: f64 = 5.0;

/// Piecewise-linear template interpolation, floored at [`YIELD_FLOOR`].
///
/// `alpha = 0, 1, -1` reproduce `nominal`, `up` and `down` exactly.
pub fn interpolate_bin(nominal: f64, up: f64, down: f64, alpha: f64) -> f64 {
    shape(nominal, up, down, alpha).max(YIELD_FLOOR)
}

// Written as a convex combination of the anchors so the ends are hit without rounding.
#[inline]
fn shape(nominal: f64, up: f64, down: f64, alpha: f64) -> f64 {
    if alpha >= 0.0 {
        nominal * (1.0 - alpha) + alpha * up
    } else {
        nominal * (1.0 + alpha) - alpha * down
    }
}

#[derive(Debug)]
struct SystematicTerm {
    input: usize,
    up: Histogram,
    down: Histogram,
}

#[derive(Debug)]
struct SampleTerm {
    nominal: Histogram,
    norm_inputs: Vec<usize>,
    systematics: Vec<SystematicTerm>,
}

/// Everything one channel's likelihood needs, shared by reference with its graph node.
#[derive(Debug)]
struct ChannelData {
    name: String,
    observed: Histogram,
    samples: Vec<SampleTerm>,
}

impl ChannelData {
    #[inline]
    fn sample_yield(s: &SampleTerm, b: usize, inputs: &[f64]) -> f64 {
        let nom = s.nominal.contents[b];
        // The first shifted template is taken as is, so a single active systematic
        // reproduces its anchors exactly; further ones add their difference to nominal.
        let mut acc: Option<f64> = None;
        for sys in &s.systematics {
            let alpha = inputs[sys.input];
            if alpha == 0.0 {
                continue;
            }
            let v = shape(nom, sys.up.contents[b], sys.down.contents[b], alpha);
            acc = Some(match acc {
                None => v,
                Some(a) => a + (v - nom),
            });
        }
        let acc = acc.unwrap_or(nom);
        let norm: f64 = s.norm_inputs.iter().map(|&i| inputs[i]).product();
        norm * acc.max(YIELD_FLOOR)
    }

    fn expected(&self, inputs: &[f64]) -> Vec<f64> {
        (0..self.observed.bins())
            .map(|b| self.samples.iter().map(|s| Self::sample_yield(s, b, inputs)).sum())
            .collect()
    }

    // Poisson NLL without the log n! constant.
    fn nll(&self, inputs: &[f64]) -> f64 {
        let mut total = 0.0;
        for (b, &n) in self.observed.contents.iter().enumerate() {
            let nu: f64 = self.samples.iter().map(|s| Self::sample_yield(s, b, inputs)).sum();
            total += if n > 0.0 { nu - n * nu.ln() } else { nu };
        }
        total
    }
}

#[derive(Debug)]
struct ChannelNll(Arc<ChannelData>);

impl ScalarFunction for ChannelNll {
    fn label(&self) -> &str {
        "BinnedPoissonNll"
    }

    fn evaluate(&self, inputs: &[f64]) -> f64 {
        self.0.nll(inputs)
    }
}

/// Graph of a binned measurement. The top node is the full NLL, including one
/// `alpha^2 / 2` term per distinct systematic.
#[derive(Debug)]
pub struct HfModel {
    pub graph: Graph,
    pub top: NodeId,
    pub poi: NodeId,
    pub norm_factors: Vec<NodeId>,
    pub alphas: Vec<NodeId>,
    /// Histogram copies and moves made while building.
    pub copy_counters: CopyCounters,
    channels: Vec<(Arc<ChannelData>, Vec<NodeId>)>,
}

impl HfModel {
    pub fn channel_names(&self) -> Vec<&str> {
        self.channels.iter().map(|(c, _)| c.name.as_str()).collect()
    }

    /// Expected yields per bin of channel `index` at the current parameter values.
    pub fn expected_yields(&self, index: usize) -> Vec<f64> {
        let (data, inputs) = &self.channels[index];
        let values: Vec<f64> = inputs
            .iter()
            .map(|&id| self.graph.nodes()[id.index()].cached_value())
            .collect();
        data.expected(&values)
    }

    pub fn into_objective(self) -> GraphObjective {
        GraphObjective::new(self.graph, self.top)
    }
}

struct RawSample {
    name: String,
    nominal: Histogram,
    norm_factors: Vec<NormFactor>,
    systematics: Vec<(String, Histogram, Histogram)>,
}

struct RawChannel {
    name: String,
    observed: Histogram,
    samples: Vec<RawSample>,
}

/// Builds the model from a borrowed measurement, deep-copying each input histogram once.
pub fn build_model(spec: &MeasurementSpec) -> Result<HfModel, HfError> {
    validate(spec)?;
    let start = CopyCounters::snapshot();
    let channels = spec
        .channels
        .iter()
        .map(|c| RawChannel {
            name: c.name.clone(),
            observed: c.observed.clone(),
            samples: c
                .samples
                .iter()
                .map(|s| RawSample {
                    name: s.name.clone(),
                    nominal: s.nominal.clone(),
                    norm_factors: s.norm_factors.clone(),
                    systematics: s
                        .histo_sys
                        .iter()
                        .map(|h| (h.name.clone(), h.up.clone(), h.down.clone()))
                        .collect(),
                })
                .collect(),
        })
        .collect();
    assemble(&spec.poi, channels, start)
}

/// Builds the model by taking ownership of the histograms; no copies are made.
pub fn build_model_owned(spec: MeasurementSpec) -> Result<HfModel, HfError> {
    validate(&spec)?;
    let start = CopyCounters::snapshot();
    let take = |h: Histogram| {
        record_move();
        h
    };
    let channels = spec
        .channels
        .into_iter()
        .map(|c| RawChannel {
            name: c.name,
            observed: take(c.observed),
            samples: c
                .samples
                .into_iter()
                .map(|s| RawSample {
                    name: s.name,
                    nominal: take(s.nominal),
                    norm_factors: s.norm_factors,
                    systematics: s
                        .histo_sys
                        .into_iter()
                        .map(|h| (h.name, take(h.up), take(h.down)))
                        .collect(),
                })
                .collect(),
        })
        .collect();
    assemble(&spec.poi, channels, start)
}

fn assemble(poi: &str, raw: Vec<RawChannel>, start: CopyCounters) -> Result<HfModel, HfError> {
    let mut graph = Graph::new();
    let mut params: HashMap<String, NodeId> = HashMap::new();
    let mut norm_factors = Vec::new();
    let mut alphas = Vec::new();
    let mut channels = Vec::with_capacity(raw.len());
    let mut channel_nodes = Vec::with_capacity(raw.len() + 1);
    let mut any_yield = false;

    for ch in raw {
        let mut inputs: Vec<NodeId> = Vec::new();
        let slot = |id: NodeId, inputs: &mut Vec<NodeId>| match inputs.iter().position(|&i| i == id) {
            Some(p) => p,
            None => {
                inputs.push(id);
                inputs.len() - 1
            }
        };
        let mut samples = Vec::with_capacity(ch.samples.len());
        for s in ch.samples {
            let mut norm_inputs = Vec::new();
            for nf in &s.norm_factors {
                let id = match params.get(&nf.name) {
                    Some(&id) => id,
                    None => {
                        let id = graph.add_parameter(&nf.name, nf.initial, nf.lo, nf.hi)?;
                        params.insert(nf.name.clone(), id);
                        norm_factors.push(id);
                        id
                    }
                };
                norm_inputs.push(slot(id, &mut inputs));
            }
            let mut systematics = Vec::with_capacity(s.systematics.len());
            for (name, up, down) in s.systematics {
                let id = match params.get(&name) {
                    Some(&id) => id,
                    None => {
                        let id = graph.add_parameter(&name, 0.0, -ALPHA_BOUND, ALPHA_BOUND)?;
                        params.insert(name, id);
                        alphas.push(id);
                        id
                    }
                };
                systematics.push(SystematicTerm {
                    input: slot(id, &mut inputs),
                    up,
                    down,
                });
            }
            let _ = s.name;
            samples.push(SampleTerm {
                nominal: s.nominal,
                norm_inputs,
                systematics,
            });
        }
        let data = Arc::new(ChannelData {
            name: ch.name,
            observed: ch.observed,
            samples,
        });
        let values: Vec<f64> = inputs
            .iter()
            .map(|&id| graph.nodes()[id.index()].cached_value())
            .collect();
        any_yield |= data.samples.iter().any(|s| {
            let norm: f64 = s.norm_inputs.iter().map(|&i| values[i]).product();
            norm > 0.0 && s.nominal.contents.iter().any(|&c| c > 0.0)
        });
        let node = graph.add_function(
            &format!("nll_{}", data.name),
            FunctionOp::Custom(Arc::new(ChannelNll(Arc::clone(&data)))),
            inputs.clone(),
        )?;
        channel_nodes.push(node);
        channels.push((data, inputs));
    }
    if !any_yield {
        return Err(HfError::DegenerateModel);
    }
    if !alphas.is_empty() {
        channel_nodes.push(graph.add_function("constraints", FunctionOp::HalfSquareSum, alphas.clone())?);
    }
    let top = graph.add_function("nll", FunctionOp::Sum, channel_nodes)?;
    let poi = *params.get(poi).ok_or_else(|| HfError::UnknownPoi(poi.to_string()))?;
    Ok(HfModel {
        graph,
        top,
        poi,
        norm_factors,
        alphas,
        copy_counters: CopyCounters::snapshot().since(start),
        channels,
    })
}
