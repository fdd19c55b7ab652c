//! Negative log-likelihood in three evaluation strategies, and the fit driver.

mod batch;
mod ladder;
mod minimize;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Bindings, DataError, DataSet};
use crate::fastmath::{ExpLog, MathProfile, ReferenceMath};
use crate::graph::{Graph, GraphError, NodeId, NodeKind};

pub use batch::BatchPlan;
pub use ladder::{benchmark_ladder, median, LadderEntry, LadderReport};
pub use minimize::{fit, minimize, FitOptions, FitResult, Minimum};

/// How an NLL evaluates the model over the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EvalMode {
    /// Load each event into the graph and evaluate with caching.
    #[serde(rename = "scalar")]
    ScalarCached,
    /// One kernel call per observable-dependent node over whole columns.
    #[serde(rename = "batch")]
    Batch,
    /// As `Batch`, with the fast `exp`/`log` kernels.
    #[serde(rename = "batch-fast")]
    BatchFast,
}

impl EvalMode {
    pub const ALL: [EvalMode; 3] = [EvalMode::ScalarCached, EvalMode::Batch, EvalMode::BatchFast];

    pub fn as_str(self) -> &'static str {
        match self {
            EvalMode::ScalarCached => "scalar",
            EvalMode::Batch => "batch",
            EvalMode::BatchFast => "batch-fast",
        }
    }

    /// Math profile of the batch kernels; `None` for scalar mode.
    pub fn profile(self) -> Option<MathProfile> {
        match self {
            EvalMode::ScalarCached => None,
            EvalMode::Batch => Some(MathProfile::Reference),
            EvalMode::BatchFast => Some(MathProfile::Fast),
        }
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EvalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        EvalMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode '{s}' (expected scalar, batch or batch-fast)"))
    }
}

#[derive(Debug, Error)]
pub enum LikelihoodError {
    #[error("density {value} is not positive at event {event}")]
    NonPositiveDensity { event: usize, value: f64 },
    #[error("event {event}: {observable} = {value} is outside its range")]
    EventOutOfRange { event: usize, observable: String, value: f64 },
    #[error("'{0}' does not depend on any observable")]
    ConstantModel(String),
    #[error("chunk size must be positive")]
    ZeroChunk,
    #[error("no free parameters to fit")]
    NoFreeParameters,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Compensated summation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KahanSum {
    sum: f64,
    compensation: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline(always)]
    pub fn add(&mut self, x: f64) {
        let y = x - self.compensation;
        let t = self.sum + y;
        self.compensation = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

/// Anything the fit driver can minimize: a graph whose free parameters are varied and a
/// scalar that depends on them.
pub trait Objective {
    fn graph(&self) -> &Graph;
    fn graph_mut(&mut self) -> &mut Graph;
    fn top(&self) -> NodeId;
    fn value(&mut self) -> Result<f64, LikelihoodError>;
    fn label(&self) -> &str;
}

/// A node whose value is itself the objective, e.g. a binned likelihood.
#[derive(Debug, Clone)]
pub struct GraphObjective {
    graph: Graph,
    top: NodeId,
}

impl GraphObjective {
    pub fn new(graph: Graph, top: NodeId) -> Self {
        Self { graph, top }
    }

    pub fn into_graph(self) -> Graph {
        self.graph
    }
}

impl Objective for GraphObjective {
    fn graph(&self) -> &Graph {
        &self.graph
    }

    fn graph_mut(&mut self) -> &mut Graph {
        &mut self.graph
    }

    fn top(&self) -> NodeId {
        self.top
    }

    fn value(&mut self) -> Result<f64, LikelihoodError> {
        Ok(self.graph.evaluate_scalar(self.top)?)
    }

    fn label(&self) -> &str {
        "scalar"
    }
}

/// Unbinned negative log-likelihood `-Σ w_i log p(x_i)` of a PDF over a dataset.
///
/// Every mode sums the per-event terms with Kahan compensation in ascending event
/// order, so results do not depend on chunking.
#[derive(Debug)]
pub struct Nll<'d> {
    graph: Graph,
    top: NodeId,
    data: &'d DataSet,
    bindings: Bindings,
    mode: EvalMode,
    plan: Option<BatchPlan>,
}

impl<'d> Nll<'d> {
    /// Binds observables by name and checks that every event lies in its observable's range.
    pub fn new(mut graph: Graph, top: NodeId, data: &'d DataSet, mode: EvalMode) -> Result<Self, LikelihoodError> {
        let node = graph.node(top)?;
        if !node.is_observable_dependent() || node.kind() == NodeKind::Observable {
            return Err(LikelihoodError::ConstantModel(node.name().to_string()));
        }
        let bindings = Bindings::by_name(&mut graph, top, data)?;
        for &(column, obs) in bindings.pairs() {
            let node = graph.node(obs)?;
            let range = node.observable_range().expect("bound to an observable");
            if let Some((event, &value)) = data.column(column).iter().enumerate().find(|(_, &v)| !range.contains(v)) {
                return Err(LikelihoodError::EventOutOfRange {
                    event,
                    observable: node.name().to_string(),
                    value,
                });
            }
        }
        let plan = match mode.profile() {
            Some(profile) => Some(BatchPlan::new(&mut graph, top, &bindings, data.len(), profile)?),
            None => None,
        };
        Ok(Self {
            graph,
            top,
            data,
            bindings,
            mode,
            plan,
        })
    }

    /// Evaluates batch modes in chunks of `chunk` events. The result is bit-identical
    /// to the unchunked one; each chunk counts as one kernel call per node.
    pub fn with_chunk_size(mut self, chunk: usize) -> Result<Self, LikelihoodError> {
        if chunk == 0 {
            return Err(LikelihoodError::ZeroChunk);
        }
        if let Some(plan) = self.plan.as_mut() {
            plan.set_chunk_size(chunk);
        }
        Ok(self)
    }

    pub fn mode(&self) -> EvalMode {
        self.mode
    }

    pub fn data(&self) -> &DataSet {
        self.data
    }

    pub fn into_graph(self) -> Graph {
        self.graph
    }

    /// Number of observable-dependent nodes evaluated per batch call sequence.
    pub fn batch_node_count(&self) -> Option<usize> {
        self.plan.as_ref().map(BatchPlan::step_count)
    }

    pub fn evaluate(&mut self) -> Result<f64, LikelihoodError> {
        match self.plan.as_mut() {
            Some(plan) => plan.nll(&mut self.graph, self.data),
            None => self.scalar_nll(),
        }
    }

    fn scalar_nll(&mut self) -> Result<f64, LikelihoodError> {
        let mut acc = KahanSum::new();
        let weights = self.data.weights();
        for event in 0..self.data.len() {
            for &(column, obs) in self.bindings.pairs() {
                self.graph.set_observable_value(obs, self.data.column(column)[event])?;
            }
            let p = self.graph.evaluate_scalar(self.top)?;
            if !(p > 0.0) {
                return Err(LikelihoodError::NonPositiveDensity { event, value: p });
            }
            let term = ReferenceMath::ln(p);
            acc.add(match weights {
                Some(w) => w[event] * term,
                None => term,
            });
        }
        Ok(-acc.value())
    }
}

impl Objective for Nll<'_> {
    fn graph(&self) -> &Graph {
        &self.graph
    }

    fn graph_mut(&mut self) -> &mut Graph {
        &mut self.graph
    }

    fn top(&self) -> NodeId {
        self.top
    }

    fn value(&mut self) -> Result<f64, LikelihoodError> {
        self.evaluate()
    }

    fn label(&self) -> &str {
        self.mode.as_str()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::PdfSpec;
    use crate::pdf::{gaussian_density, ObservableRange};

    fn gauss() -> (Graph, NodeId) {
        let mut g = Graph::new();
        let x = g.add_observable("x", ObservableRange::new(-5.0, 5.0).unwrap()).unwrap();
        let m = g.add_parameter("mean", 0.2, -5.0, 5.0).unwrap();
        let s = g.add_parameter("sigma", 1.3, 0.1, 10.0).unwrap();
        let pdf = g.add_pdf("g", PdfSpec::Gaussian { x, mean: m, sigma: s }).unwrap();
        (g, pdf)
    }

    #[test]
    fn mode_names_round_trip() {
        for m in EvalMode::ALL {
            assert_eq!(m.as_str().parse::<EvalMode>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.as_str()));
        }
        assert!("fast".parse::<EvalMode>().is_err());
    }

    #[test]
    fn kahan_recovers_small_terms() {
        let mut k = KahanSum::new();
        k.add(1.0);
        for _ in 0..10 {
            k.add(1e-16);
        }
        assert_eq!(k.value(), 1.0 + 1e-15);
    }

    #[test]
    fn identical_events() {
        let (g, top) = gauss();
        let ds = DataSet::new(vec!["x".into()], vec![vec![0.7; 50]]).unwrap();
        let p = gaussian_density(0.7, 0.2, 1.3, ObservableRange::new(-5.0, 5.0).unwrap()).unwrap();
        for mode in EvalMode::ALL {
            let v = Nll::new(g.clone(), top, &ds, mode).unwrap().evaluate().unwrap();
            assert!((v + 50.0 * p.ln()).abs() <= 1e-12 * v.abs(), "{mode}");
        }
    }

    #[test]
    fn empty_dataset_is_zero() {
        let (g, top) = gauss();
        let ds = DataSet::new(vec!["x".into()], vec![vec![]]).unwrap();
        for mode in EvalMode::ALL {
            assert_eq!(Nll::new(g.clone(), top, &ds, mode).unwrap().evaluate().unwrap(), 0.0);
        }
    }

    #[test]
    fn scalar_and_batch_reference_are_bit_identical() {
        let (g, top) = gauss();
        let xs: Vec<f64> = (0..999).map(|i| -4.99 + i as f64 * 0.01).collect();
        let ds = DataSet::new(vec!["x".into()], vec![xs]).unwrap();
        let a = Nll::new(g.clone(), top, &ds, EvalMode::ScalarCached).unwrap().evaluate().unwrap();
        let b = Nll::new(g.clone(), top, &ds, EvalMode::Batch).unwrap().evaluate().unwrap();
        let c = Nll::new(g, top, &ds, EvalMode::Batch).unwrap().with_chunk_size(7).unwrap().evaluate().unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert_eq!(b.to_bits(), c.to_bits());
    }

    #[test]
    fn weights_scale_terms() {
        let (g, top) = gauss();
        let plain = DataSet::new(vec!["x".into()], vec![vec![0.1, 0.1]]).unwrap();
        let weighted = DataSet::with_weights(vec!["x".into()], vec![vec![0.1]], Some(vec![2.0])).unwrap();
        for mode in EvalMode::ALL {
            let a = Nll::new(g.clone(), top, &plain, mode).unwrap().evaluate().unwrap();
            let b = Nll::new(g.clone(), top, &weighted, mode).unwrap().evaluate().unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn construction_errors() {
        let (g, top) = gauss();
        let outside = DataSet::new(vec!["x".into()], vec![vec![0.0, 6.0]]).unwrap();
        assert!(matches!(
            Nll::new(g.clone(), top, &outside, EvalMode::Batch),
            Err(LikelihoodError::EventOutOfRange { event: 1, .. })
        ));
        let wrong = DataSet::new(vec!["y".into()], vec![vec![0.0]]).unwrap();
        assert!(matches!(
            Nll::new(g.clone(), top, &wrong, EvalMode::ScalarCached),
            Err(LikelihoodError::Data(DataError::MissingColumn(_)))
        ));
        let mean = g.find("mean").unwrap();
        let ok = DataSet::new(vec!["x".into()], vec![vec![0.0]]).unwrap();
        assert!(matches!(
            Nll::new(g, mean, &ok, EvalMode::Batch),
            Err(LikelihoodError::ConstantModel(_))
        ));
    }
}
