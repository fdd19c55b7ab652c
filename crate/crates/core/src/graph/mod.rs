//! Computation graph of parameters, observables, functions and PDFs.
//!
//! Nodes are appended and never removed, and a node may only depend on nodes that
//! already exist. Node ids are therefore a topological order of the whole graph.
//!
//! Every node caches its last value. Writing a leaf eagerly marks all transitive
//! clients dirty; scalar evaluation then recomputes only dirty nodes. Parameter
//! writes additionally mark PDF normalizations stale, observable writes do not, so
//! normalization integrals are rebuilt per parameter change and never per event.

mod dot;

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pdf::{
    ExponentialTerms, GaussianTerms, ObservableRange, PdfError, PdfTerms, PoissonTerms, PolynomialTerms,
    SumTerms,
};

/// Dense index of a node within one graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(usize);

impl NodeId {
    pub fn new(index: usize) -> Self {
        NodeId(index)
    }

    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    Parameter,
    Observable,
    Function,
    Pdf,
}

impl NodeKind {
    pub fn is_leaf(self) -> bool {
        matches!(self, NodeKind::Parameter | NodeKind::Observable)
    }
}

/// A real-valued function of a node's inputs, for node types defined outside this module.
pub trait ScalarFunction: fmt::Debug + Send + Sync {
    /// Short label used in DOT output.
    fn label(&self) -> &str;
    fn evaluate(&self, inputs: &[f64]) -> f64;
}

/// Behavior of a function node.
#[derive(Debug, Clone)]
pub enum FunctionOp {
    /// Sum of all inputs.
    Sum,
    /// Product of all inputs.
    Product,
    /// `Σ x_i^2 / 2`, the negative log of a product of unit Gaussian constraints.
    HalfSquareSum,
    Custom(Arc<dyn ScalarFunction>),
}

impl FunctionOp {
    pub fn label(&self) -> &str {
        match self {
            FunctionOp::Sum => "Sum",
            FunctionOp::Product => "Product",
            FunctionOp::HalfSquareSum => "HalfSquareSum",
            FunctionOp::Custom(f) => f.label(),
        }
    }

    /// Applies the op to one event's input values.
    #[inline]
    pub fn apply(&self, inputs: &[f64]) -> f64 {
        match self {
            FunctionOp::Sum => fold_first(inputs, 0.0, |acc, v| acc + v),
            FunctionOp::Product => fold_first(inputs, 1.0, |acc, v| acc * v),
            FunctionOp::HalfSquareSum => inputs.iter().map(|v| 0.5 * v * v).sum(),
            FunctionOp::Custom(f) => f.evaluate(inputs),
        }
    }
}

// Starts from the first element rather than the identity, so the batch path, which
// initializes its buffer with the first input, performs the same operations.
#[inline]
fn fold_first(values: &[f64], empty: f64, f: impl Fn(f64, f64) -> f64) -> f64 {
    match values.split_first() {
        Some((&first, rest)) => rest.iter().fold(first, |acc, &v| f(acc, v)),
        None => empty,
    }
}

/// Which PDF a node computes and where its inputs come from.
#[derive(Debug, Clone, PartialEq)]
pub enum PdfSpec {
    Gaussian { x: NodeId, mean: NodeId, sigma: NodeId },
    Exponential { x: NodeId, rate: NodeId },
    Poisson { k: NodeId, lambda: NodeId },
    /// Coefficients of `(x - midpoint)^0, ^1, ...`.
    Polynomial { x: NodeId, coefficients: Vec<NodeId> },
    /// `n` component PDFs with `n - 1` fractions; the last fraction is `1 - Σ others`.
    Sum { components: Vec<NodeId>, coefficients: Vec<NodeId> },
}

impl PdfSpec {
    pub fn label(&self) -> &'static str {
        match self {
            PdfSpec::Gaussian { .. } => "Gaussian",
            PdfSpec::Exponential { .. } => "Exponential",
            PdfSpec::Poisson { .. } => "Poisson",
            PdfSpec::Polynomial { .. } => "Polynomial",
            PdfSpec::Sum { .. } => "SumPdf",
        }
    }

    /// Servers in canonical order: per-event inputs first, then parameters.
    pub fn servers(&self) -> Vec<NodeId> {
        match self {
            PdfSpec::Gaussian { x, mean, sigma } => vec![*x, *mean, *sigma],
            PdfSpec::Exponential { x, rate } => vec![*x, *rate],
            PdfSpec::Poisson { k, lambda } => vec![*k, *lambda],
            PdfSpec::Polynomial { x, coefficients } => {
                std::iter::once(*x).chain(coefficients.iter().copied()).collect()
            }
            PdfSpec::Sum {
                components,
                coefficients,
            } => components.iter().chain(coefficients).copied().collect(),
        }
    }

    /// Servers whose values vary per event.
    pub fn event_inputs(&self) -> Vec<NodeId> {
        match self {
            PdfSpec::Gaussian { x, .. } | PdfSpec::Exponential { x, .. } | PdfSpec::Polynomial { x, .. } => {
                vec![*x]
            }
            PdfSpec::Poisson { k, .. } => vec![*k],
            PdfSpec::Sum { components, .. } => components.clone(),
        }
    }

    /// Number of leading entries of [`PdfSpec::servers`] that are per-event inputs.
    pub fn event_input_count(&self) -> usize {
        match self {
            PdfSpec::Sum { components, .. } => components.len(),
            _ => 1,
        }
    }

    /// Servers that feed the normalization / fractions.
    pub fn shape_parameters(&self) -> Vec<NodeId> {
        match self {
            PdfSpec::Gaussian { mean, sigma, .. } => vec![*mean, *sigma],
            PdfSpec::Exponential { rate, .. } => vec![*rate],
            PdfSpec::Poisson { lambda, .. } => vec![*lambda],
            PdfSpec::Polynomial { coefficients, .. } | PdfSpec::Sum { coefficients, .. } => {
                coefficients.clone()
            }
        }
    }
}

/// Bounds and constness of a parameter; the value itself is the node's cached value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub is_constant: bool,
}

/// Declarative description of a node to add.
#[derive(Debug, Clone)]
pub enum NodeSpec {
    Parameter { value: f64, lower_bound: f64, upper_bound: f64 },
    Observable { range: ObservableRange },
    Function { op: FunctionOp, servers: Vec<NodeId> },
    Pdf(PdfSpec),
}

#[derive(Debug, Clone)]
pub(crate) enum NodeDef {
    Parameter(Parameter),
    Observable { range: ObservableRange, loaded: bool },
    Function(FunctionOp),
    Pdf { spec: PdfSpec, terms: Option<PdfTerms> },
}

#[derive(Debug, Clone)]
pub struct GraphNode {
    id: NodeId,
    name: String,
    kind: NodeKind,
    pub(crate) def: NodeDef,
    servers: Vec<NodeId>,
    clients: Vec<NodeId>,
    value: f64,
    dirty: bool,
    norm_dirty: bool,
    observable_dependent: bool,
    evaluations: u64,
}

impl GraphNode {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> NodeKind {
        self.kind
    }

    pub fn servers(&self) -> &[NodeId] {
        &self.servers
    }

    pub fn clients(&self) -> &[NodeId] {
        &self.clients
    }

    pub fn cached_value(&self) -> f64 {
        self.value
    }

    pub fn is_dirty(&self) -> bool {
        self.dirty
    }

    /// True iff some transitive server is an observable.
    pub fn is_observable_dependent(&self) -> bool {
        self.observable_dependent
    }

    /// Scalar recomputations of this node since the counters were last reset.
    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    pub fn parameter(&self) -> Option<&Parameter> {
        match &self.def {
            NodeDef::Parameter(p) => Some(p),
            _ => None,
        }
    }

    pub fn observable_range(&self) -> Option<ObservableRange> {
        match &self.def {
            NodeDef::Observable { range, .. } => Some(*range),
            _ => None,
        }
    }

    pub fn function_op(&self) -> Option<&FunctionOp> {
        match &self.def {
            NodeDef::Function(op) => Some(op),
            _ => None,
        }
    }

    pub fn pdf_spec(&self) -> Option<&PdfSpec> {
        match &self.def {
            NodeDef::Pdf { spec, .. } => Some(spec),
            _ => None,
        }
    }

    /// Operation label shown in DOT output.
    pub fn label(&self) -> &str {
        match &self.def {
            NodeDef::Parameter(_) => "Parameter",
            NodeDef::Observable { .. } => "Observable",
            NodeDef::Function(op) => op.label(),
            NodeDef::Pdf { spec, .. } => spec.label(),
        }
    }
}

/// Evaluation instrumentation, reset with [`Graph::reset_counters`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCounters {
    pub scalar_node_evaluations: u64,
    pub batch_node_evaluations: u64,
    pub cache_hits: u64,
    pub dirty_propagations: u64,
    /// PDF normalizations (and sum fractions) rebuilt after a parameter change.
    pub normalizations: u64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("a node named '{0}' already exists")]
    DuplicateName(String),
    #[error("server {0} does not exist")]
    UnknownServer(NodeId),
    #[error("node {0} does not exist")]
    UnknownNode(NodeId),
    #[error("node '{name}' would depend on itself")]
    CycleDetected { name: String },
    #[error("'{0}' is not a parameter")]
    NotAParameter(String),
    #[error("'{0}' is not an observable")]
    NotAnObservable(String),
    #[error("value {value} for '{name}' is outside [{lower}, {upper}]")]
    OutOfBounds {
        name: String,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("observable '{0}' has no value loaded")]
    UnsetObservable(String),
    #[error("invalid server for '{node}': {reason}")]
    InvalidServer { node: String, reason: String },
    #[error("pdf '{node}': {source}")]
    Pdf {
        node: String,
        #[source]
        source: PdfError,
    },
    #[error("graph invariant violated: {0}")]
    Invariant(String),
}

/// Append-only computation graph with per-node value caching.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<GraphNode>,
    by_name: HashMap<String, NodeId>,
    // Ancestor set of each top node in topological order, built on first use.
    // Never stale: a new node cannot become a server of an existing one.
    orders: Vec<Option<Vec<NodeId>>>,
    // Transitive clients of each node, built on first write.
    // Tagged with the node count they were built at; adding a node makes them stale.
    client_closures: Vec<Option<(usize, Vec<NodeId>)>>,
    counters: EvalCounters,
    scratch: Vec<f64>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Result<&GraphNode, GraphError> {
        self.nodes.get(id.0).ok_or(GraphError::UnknownNode(id))
    }

    pub fn find(&self, name: &str) -> Option<NodeId> {
        self.by_name.get(name).copied()
    }

    pub fn counters(&self) -> EvalCounters {
        self.counters
    }

    pub(crate) fn counters_mut(&mut self) -> &mut EvalCounters {
        &mut self.counters
    }

    /// Zeroes the global counters and every node's evaluation count.
    pub fn reset_counters(&mut self) {
        self.counters = EvalCounters::default();
        for node in &mut self.nodes {
            node.evaluations = 0;
        }
    }

    pub fn add_parameter(&mut self, name: &str, value: f64, lower: f64, upper: f64) -> Result<NodeId, GraphError> {
        self.add_node(
            name,
            NodeSpec::Parameter {
                value,
                lower_bound: lower,
                upper_bound: upper,
            },
        )
    }

    pub fn add_observable(&mut self, name: &str, range: ObservableRange) -> Result<NodeId, GraphError> {
        self.add_node(name, NodeSpec::Observable { range })
    }

    pub fn add_function(&mut self, name: &str, op: FunctionOp, servers: Vec<NodeId>) -> Result<NodeId, GraphError> {
        self.add_node(name, NodeSpec::Function { op, servers })
    }

    pub fn add_pdf(&mut self, name: &str, spec: PdfSpec) -> Result<NodeId, GraphError> {
        self.add_node(name, NodeSpec::Pdf(spec))
    }

    /// Appends a node. The new node starts dirty; servers gain it as a client.
    pub fn add_node(&mut self, name: &str, spec: NodeSpec) -> Result<NodeId, GraphError> {
        if self.by_name.contains_key(name) {
            return Err(GraphError::DuplicateName(name.to_string()));
        }
        let id = NodeId(self.nodes.len());
        let (kind, def, servers, value) = match spec {
            NodeSpec::Parameter {
                value,
                lower_bound,
                upper_bound,
            } => {
                if !(lower_bound <= value && value <= upper_bound) {
                    return Err(GraphError::OutOfBounds {
                        name: name.to_string(),
                        value,
                        lower: lower_bound,
                        upper: upper_bound,
                    });
                }
                let p = Parameter {
                    lower_bound,
                    upper_bound,
                    is_constant: false,
                };
                (NodeKind::Parameter, NodeDef::Parameter(p), Vec::new(), value)
            }
            NodeSpec::Observable { range } => (
                NodeKind::Observable,
                NodeDef::Observable { range, loaded: false },
                Vec::new(),
                f64::NAN,
            ),
            NodeSpec::Function { op, servers } => {
                self.check_servers(name, id, &servers)?;
                (NodeKind::Function, NodeDef::Function(op), servers, f64::NAN)
            }
            NodeSpec::Pdf(spec) => {
                let servers = spec.servers();
                self.check_servers(name, id, &servers)?;
                self.check_pdf(name, &spec)?;
                (NodeKind::Pdf, NodeDef::Pdf { spec, terms: None }, servers, f64::NAN)
            }
        };
        let observable_dependent = servers
            .iter()
            .any(|s| self.nodes[s.0].kind == NodeKind::Observable || self.nodes[s.0].observable_dependent);
        for s in &servers {
            // Clients are appended in id order, so a repeated server shows up as the last entry.
            let clients = &mut self.nodes[s.0].clients;
            if clients.last() != Some(&id) {
                clients.push(id);
            }
        }
        self.nodes.push(GraphNode {
            id,
            name: name.to_string(),
            kind,
            def,
            servers,
            clients: Vec::new(),
            value,
            dirty: true,
            norm_dirty: true,
            observable_dependent,
            evaluations: 0,
        });
        self.by_name.insert(name.to_string(), id);
        self.orders.push(None);
        self.client_closures.push(None);
        Ok(id)
    }

    fn check_servers(&self, name: &str, id: NodeId, servers: &[NodeId]) -> Result<(), GraphError> {
        for &s in servers {
            if s == id {
                return Err(GraphError::CycleDetected { name: name.to_string() });
            }
            if s.0 >= self.nodes.len() {
                return Err(GraphError::UnknownServer(s));
            }
        }
        Ok(())
    }

    fn check_pdf(&self, name: &str, spec: &PdfSpec) -> Result<(), GraphError> {
        let invalid = |reason: String| GraphError::InvalidServer {
            node: name.to_string(),
            reason,
        };
        match spec {
            PdfSpec::Sum {
                components,
                coefficients,
            } => {
                if components.is_empty() || coefficients.len() + 1 != components.len() {
                    return Err(invalid(format!(
                        "{} components need {} fractions, got {}",
                        components.len(),
                        components.len().saturating_sub(1),
                        coefficients.len()
                    )));
                }
                for c in components {
                    if self.nodes[c.0].kind != NodeKind::Pdf {
                        return Err(invalid(format!("component '{}' is not a pdf", self.nodes[c.0].name)));
                    }
                }
            }
            _ => {
                for x in spec.event_inputs() {
                    if self.nodes[x.0].kind != NodeKind::Observable {
                        return Err(invalid(format!(
                            "per-event input '{}' must be an observable",
                            self.nodes[x.0].name
                        )));
                    }
                }
            }
        }
        for p in spec.shape_parameters() {
            let node = &self.nodes[p.0];
            if node.kind == NodeKind::Observable || node.observable_dependent {
                return Err(invalid(format!("shape parameter '{}' depends on an observable", node.name)));
            }
        }
        Ok(())
    }

    /// Marks a parameter constant (excluded from fits) or floating.
    pub fn set_constant(&mut self, id: NodeId, constant: bool) -> Result<(), GraphError> {
        let node = self.nodes.get_mut(id.0).ok_or(GraphError::UnknownNode(id))?;
        match &mut node.def {
            NodeDef::Parameter(p) => {
                p.is_constant = constant;
                Ok(())
            }
            _ => Err(GraphError::NotAParameter(node.name.clone())),
        }
    }

    /// Changes the bounds of a parameter; the current value must lie inside them.
    pub fn set_parameter_bounds(&mut self, id: NodeId, lower: f64, upper: f64) -> Result<(), GraphError> {
        let node = self.nodes.get_mut(id.0).ok_or(GraphError::UnknownNode(id))?;
        let value = node.value;
        match &mut node.def {
            NodeDef::Parameter(p) => {
                if !(lower <= value && value <= upper) {
                    return Err(GraphError::OutOfBounds {
                        name: node.name.clone(),
                        value,
                        lower,
                        upper,
                    });
                }
                p.lower_bound = lower;
                p.upper_bound = upper;
                Ok(())
            }
            _ => Err(GraphError::NotAParameter(node.name.clone())),
        }
    }

    /// Sets a parameter value. Returns the number of nodes that became dirty; an
    /// unchanged value dirties nothing.
    pub fn set_parameter_value(&mut self, id: NodeId, value: f64) -> Result<usize, GraphError> {
        let node = self.nodes.get(id.0).ok_or(GraphError::UnknownNode(id))?;
        let NodeDef::Parameter(p) = &node.def else {
            return Err(GraphError::NotAParameter(node.name.clone()));
        };
        if !(p.lower_bound <= value && value <= p.upper_bound) {
            return Err(GraphError::OutOfBounds {
                name: node.name.clone(),
                value,
                lower: p.lower_bound,
                upper: p.upper_bound,
            });
        }
        if node.value.to_bits() == value.to_bits() {
            return Ok(0);
        }
        self.nodes[id.0].value = value;
        Ok(self.propagate(id, true))
    }

    /// Loads one event's value into an observable. Returns the number of newly dirty nodes.
    pub fn set_observable_value(&mut self, id: NodeId, value: f64) -> Result<usize, GraphError> {
        let node = self.nodes.get_mut(id.0).ok_or(GraphError::UnknownNode(id))?;
        let NodeDef::Observable { loaded, .. } = &mut node.def else {
            return Err(GraphError::NotAnObservable(node.name.clone()));
        };
        if *loaded && node.value.to_bits() == value.to_bits() {
            return Ok(0);
        }
        *loaded = true;
        node.value = value;
        Ok(self.propagate(id, false))
    }

    fn propagate(&mut self, from: NodeId, invalidates_norm: bool) -> usize {
        let len = self.nodes.len();
        if !matches!(&self.client_closures[from.0], Some((built, _)) if *built == len) {
            self.client_closures[from.0] = Some((len, self.collect_clients(from)));
        }
        self.counters.dirty_propagations += 1;
        let (_, closure) = self.client_closures[from.0].take().unwrap_or_default();
        let mut newly = 0;
        for &c in &closure {
            let node = &mut self.nodes[c.0];
            if !node.dirty {
                node.dirty = true;
                newly += 1;
            }
            if invalidates_norm {
                node.norm_dirty = true;
            }
        }
        self.client_closures[from.0] = Some((len, closure));
        newly
    }

    fn collect_clients(&self, from: NodeId) -> Vec<NodeId> {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![from];
        let mut out = Vec::new();
        while let Some(n) = stack.pop() {
            for &c in &self.nodes[n.0].clients {
                if !seen[c.0] {
                    seen[c.0] = true;
                    out.push(c);
                    stack.push(c);
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Ids of all currently dirty function and PDF nodes.
    pub fn dirty_nodes(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|n| n.dirty && !n.kind.is_leaf())
            .map(|n| n.id)
            .collect()
    }

    /// `top` and all of its transitive servers, servers first.
    pub fn topological_order(&mut self, top: NodeId) -> Result<Vec<NodeId>, GraphError> {
        self.node(top)?;
        self.ensure_order(top);
        Ok(self.orders[top.0].clone().unwrap_or_default())
    }

    fn ensure_order(&mut self, top: NodeId) {
        if self.orders[top.0].is_some() {
            return;
        }
        let mut seen = vec![false; top.0 + 1];
        let mut stack = vec![top];
        seen[top.0] = true;
        while let Some(n) = stack.pop() {
            for &s in &self.nodes[n.0].servers {
                if !seen[s.0] {
                    seen[s.0] = true;
                    stack.push(s);
                }
            }
        }
        // Servers always have smaller ids than their clients.
        let order = seen
            .iter()
            .enumerate()
            .filter(|(_, &s)| s)
            .map(|(i, _)| NodeId(i))
            .collect();
        self.orders[top.0] = Some(order);
    }

    /// Value of `top` for the currently loaded event and parameters, recomputing only
    /// dirty nodes in topological order.
    pub fn evaluate_scalar(&mut self, top: NodeId) -> Result<f64, GraphError> {
        let node = self.node(top)?;
        if !node.dirty && !matches!(node.def, NodeDef::Observable { loaded: false, .. }) {
            let value = node.value;
            self.counters.cache_hits += 1;
            return Ok(value);
        }
        self.ensure_order(top);
        let order = self.orders[top.0].take().unwrap_or_default();
        let result = self.evaluate_order(&order);
        self.orders[top.0] = Some(order);
        result?;
        Ok(self.nodes[top.0].value)
    }

    fn evaluate_order(&mut self, order: &[NodeId]) -> Result<(), GraphError> {
        for &id in order {
            let node = &self.nodes[id.0];
            if let NodeDef::Observable { loaded: false, .. } = node.def {
                return Err(GraphError::UnsetObservable(node.name.clone()));
            }
            if !node.dirty {
                self.counters.cache_hits += 1;
                continue;
            }
            if node.kind.is_leaf() {
                self.nodes[id.0].dirty = false;
                continue;
            }
            let value = self.compute(id)?;
            let node = &mut self.nodes[id.0];
            node.value = value;
            node.dirty = false;
            node.evaluations += 1;
            self.counters.scalar_node_evaluations += 1;
        }
        Ok(())
    }

    fn compute(&mut self, id: NodeId) -> Result<f64, GraphError> {
        if self.nodes[id.0].kind == NodeKind::Pdf {
            self.refresh_terms(id)?;
        }
        let mut inputs = std::mem::take(&mut self.scratch);
        inputs.clear();
        let node = &self.nodes[id.0];
        let result = match &node.def {
            NodeDef::Function(op) => {
                inputs.extend(node.servers.iter().map(|s| self.nodes[s.0].value));
                Ok(op.apply(&inputs))
            }
            NodeDef::Pdf { spec, terms } => {
                let event_inputs = &node.servers[..spec.event_input_count()];
                inputs.extend(event_inputs.iter().map(|s| self.nodes[s.0].value));
                let terms = terms.as_ref().expect("terms refreshed above");
                terms.eval_scalar(&inputs).map_err(|source| GraphError::Pdf {
                    node: node.name.clone(),
                    source,
                })
            }
            NodeDef::Parameter(_) | NodeDef::Observable { .. } => Ok(node.value),
        };
        self.scratch = inputs;
        result
    }

    /// Rebuilds a PDF's normalization/fractions if a parameter changed since the last
    /// build. Shape parameters are evaluated first when they are function nodes.
    pub(crate) fn refresh_terms(&mut self, id: NodeId) -> Result<(), GraphError> {
        let node = &self.nodes[id.0];
        let NodeDef::Pdf { spec, terms } = &node.def else {
            return Ok(());
        };
        if !node.norm_dirty && terms.is_some() {
            return Ok(());
        }
        let spec = spec.clone();
        let mut values = Vec::new();
        for p in spec.shape_parameters() {
            values.push(self.evaluate_scalar(p)?);
        }
        let terms = self.build_terms(&spec, &values).map_err(|source| GraphError::Pdf {
            node: self.nodes[id.0].name.clone(),
            source,
        })?;
        self.counters.normalizations += 1;
        let node = &mut self.nodes[id.0];
        node.def = NodeDef::Pdf {
            spec,
            terms: Some(terms),
        };
        node.norm_dirty = false;
        Ok(())
    }

    fn build_terms(&self, spec: &PdfSpec, params: &[f64]) -> Result<PdfTerms, PdfError> {
        let range_of = |x: &NodeId| {
            self.nodes[x.0]
                .observable_range()
                .expect("pdf inputs are validated to be observables")
        };
        Ok(match spec {
            PdfSpec::Gaussian { x, .. } => PdfTerms::Gaussian(GaussianTerms::new(params[0], params[1], range_of(x))?),
            PdfSpec::Exponential { x, .. } => PdfTerms::Exponential(ExponentialTerms::new(params[0], range_of(x))?),
            PdfSpec::Poisson { .. } => PdfTerms::Poisson(PoissonTerms::new(params[0])?),
            PdfSpec::Polynomial { x, .. } => {
                PdfTerms::Polynomial(PolynomialTerms::new(params.to_vec(), range_of(x))?)
            }
            PdfSpec::Sum { components, .. } => PdfTerms::Sum(SumTerms::new(components.len(), params)?),
        })
    }

    /// Prepared terms of a PDF node, rebuilt if stale.
    pub(crate) fn pdf_terms(&mut self, id: NodeId) -> Result<&PdfTerms, GraphError> {
        self.refresh_terms(id)?;
        match &self.nodes[id.0].def {
            NodeDef::Pdf { terms: Some(t), .. } => Ok(t),
            _ => Err(GraphError::InvalidServer {
                node: self.nodes[id.0].name.clone(),
                reason: "not a pdf".into(),
            }),
        }
    }

    /// Free (non-constant) parameters in id order.
    pub fn free_parameters(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|n| matches!(&n.def, NodeDef::Parameter(p) if !p.is_constant))
            .map(|n| n.id)
            .collect()
    }

    /// Observables reachable from `top`, in id order.
    pub fn observables_of(&mut self, top: NodeId) -> Result<Vec<NodeId>, GraphError> {
        Ok(self
            .topological_order(top)?
            .into_iter()
            .filter(|id| self.nodes[id.0].kind == NodeKind::Observable)
            .collect())
    }

    /// Structural self-check: inverse client lists, servers older than clients, leaves
    /// without servers, and observable dependence matching brute-force reachability.
    pub fn check_invariants(&self) -> Result<(), GraphError> {
        for node in &self.nodes {
            if node.kind.is_leaf() && !node.servers.is_empty() {
                return Err(GraphError::Invariant(format!("leaf '{}' has servers", node.name)));
            }
            for s in &node.servers {
                if s.0 >= node.id.0 {
                    return Err(GraphError::Invariant(format!("'{}' depends on a newer node", node.name)));
                }
                if !self.nodes[s.0].clients.contains(&node.id) {
                    return Err(GraphError::Invariant(format!(
                        "'{}' missing from clients of '{}'",
                        node.name, self.nodes[s.0].name
                    )));
                }
            }
            for c in &node.clients {
                if !self.nodes[c.0].servers.contains(&node.id) {
                    return Err(GraphError::Invariant(format!(
                        "'{}' lists client '{}' that does not use it",
                        node.name, self.nodes[c.0].name
                    )));
                }
            }
            let mut stack: Vec<NodeId> = node.servers.clone();
            let mut seen = vec![false; self.nodes.len()];
            let mut reaches = false;
            while let Some(s) = stack.pop() {
                if std::mem::replace(&mut seen[s.0], true) {
                    continue;
                }
                reaches |= self.nodes[s.0].kind == NodeKind::Observable;
                stack.extend(&self.nodes[s.0].servers);
            }
            if reaches != node.observable_dependent {
                return Err(GraphError::Invariant(format!(
                    "observable dependence of '{}' is stale",
                    node.name
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> (Graph, NodeId, NodeId, NodeId) {
        let mut g = Graph::new();
        let p = g.add_parameter("p", 1.0, -10.0, 10.0).unwrap();
        let f = g.add_function("f", FunctionOp::Product, vec![p, p]).unwrap();
        let h = g.add_function("h", FunctionOp::Sum, vec![f, p]).unwrap();
        (g, p, f, h)
    }

    #[test]
    fn first_id_is_zero() {
        let mut g = Graph::new();
        assert_eq!(g.add_parameter("mean", 0.0, -1.0, 1.0).unwrap(), NodeId::new(0));
    }

    #[test]
    fn duplicate_name() {
        let mut g = Graph::new();
        g.add_parameter("mean", 0.0, -1.0, 1.0).unwrap();
        assert_eq!(
            g.add_parameter("mean", 0.0, -1.0, 1.0),
            Err(GraphError::DuplicateName("mean".into()))
        );
    }

    #[test]
    fn unknown_server_and_self_reference() {
        let mut g = Graph::new();
        g.add_parameter("a", 0.0, -1.0, 1.0).unwrap();
        assert_eq!(
            g.add_function("f", FunctionOp::Sum, vec![NodeId::new(7)]),
            Err(GraphError::UnknownServer(NodeId::new(7)))
        );
        assert_eq!(
            g.add_function("f", FunctionOp::Sum, vec![NodeId::new(1)]),
            Err(GraphError::CycleDetected { name: "f".into() })
        );
    }

    #[test]
    fn chain_dirty_set_and_caching() {
        let (mut g, p, f, h) = chain();
        assert_eq!(g.evaluate_scalar(h).unwrap(), 2.0);
        assert!(g.dirty_nodes().is_empty());
        assert_eq!(g.set_parameter_value(p, 1.0).unwrap(), 0);
        assert!(g.dirty_nodes().is_empty());
        assert_eq!(g.set_parameter_value(p, 3.0).unwrap(), 2);
        assert_eq!(g.dirty_nodes(), vec![f, h]);
        assert_eq!(g.evaluate_scalar(h).unwrap(), 12.0);

        let before = g.counters().scalar_node_evaluations;
        g.evaluate_scalar(h).unwrap();
        assert_eq!(g.counters().scalar_node_evaluations, before);
    }

    #[test]
    fn parameter_errors() {
        let (mut g, p, f, _) = chain();
        assert!(matches!(g.set_parameter_value(p, 11.0), Err(GraphError::OutOfBounds { .. })));
        assert!(matches!(g.set_parameter_value(p, f64::NAN), Err(GraphError::OutOfBounds { .. })));
        assert_eq!(g.set_parameter_value(f, 1.0), Err(GraphError::NotAParameter("f".into())));
        assert!(matches!(
            g.add_parameter("q", 5.0, 0.0, 1.0),
            Err(GraphError::OutOfBounds { .. })
        ));
    }

    #[test]
    fn unset_observable() {
        let mut g = Graph::new();
        let x = g.add_observable("x", ObservableRange::new(0.0, 1.0).unwrap()).unwrap();
        let r = g.add_parameter("r", 1.0, 0.0, 2.0).unwrap();
        let e = g.add_pdf("e", PdfSpec::Exponential { x, rate: r }).unwrap();
        assert_eq!(g.evaluate_scalar(e), Err(GraphError::UnsetObservable("x".into())));
        g.set_observable_value(x, 0.5).unwrap();
        assert!(g.evaluate_scalar(e).unwrap() > 0.0);
        assert_eq!(g.set_observable_value(r, 0.1), Err(GraphError::NotAnObservable("r".into())));
    }

    #[test]
    fn pdf_inputs_are_validated() {
        let mut g = Graph::new();
        let x = g.add_observable("x", ObservableRange::new(0.0, 1.0).unwrap()).unwrap();
        let m = g.add_parameter("m", 0.5, 0.0, 1.0).unwrap();
        let s = g.add_parameter("s", 0.1, 0.01, 1.0).unwrap();
        let shifted = g.add_function("shifted", FunctionOp::Sum, vec![x, m]).unwrap();
        assert!(matches!(
            g.add_pdf("bad_x", PdfSpec::Gaussian { x: m, mean: m, sigma: s }),
            Err(GraphError::InvalidServer { .. })
        ));
        assert!(matches!(
            g.add_pdf("bad_mean", PdfSpec::Gaussian { x, mean: shifted, sigma: s }),
            Err(GraphError::InvalidServer { .. })
        ));
        let gauss = g.add_pdf("gauss", PdfSpec::Gaussian { x, mean: m, sigma: s }).unwrap();
        assert!(matches!(
            g.add_pdf(
                "sum",
                PdfSpec::Sum {
                    components: vec![gauss, m],
                    coefficients: vec![m]
                }
            ),
            Err(GraphError::InvalidServer { .. })
        ));
        assert!(matches!(
            g.add_pdf(
                "sum",
                PdfSpec::Sum {
                    components: vec![gauss],
                    coefficients: vec![m]
                }
            ),
            Err(GraphError::InvalidServer { .. })
        ));
        g.check_invariants().unwrap();
    }

    #[test]
    fn normalization_recomputed_only_on_parameter_change() {
        let mut g = Graph::new();
        let x = g.add_observable("x", ObservableRange::new(-5.0, 5.0).unwrap()).unwrap();
        let m = g.add_parameter("m", 0.0, -1.0, 1.0).unwrap();
        let s = g.add_parameter("s", 1.0, 0.1, 2.0).unwrap();
        let gauss = g.add_pdf("gauss", PdfSpec::Gaussian { x, mean: m, sigma: s }).unwrap();
        for i in 0..100 {
            g.set_observable_value(x, -4.0 + 0.08 * i as f64).unwrap();
            g.evaluate_scalar(gauss).unwrap();
        }
        assert_eq!(g.counters().normalizations, 1);
        assert_eq!(g.node(gauss).unwrap().evaluations(), 100);
        g.set_parameter_value(s, 1.5).unwrap();
        g.evaluate_scalar(gauss).unwrap();
        assert_eq!(g.counters().normalizations, 2);
    }

    #[test]
    fn invalid_sigma_surfaces_as_pdf_error() {
        let mut g = Graph::new();
        let x = g.add_observable("x", ObservableRange::new(-5.0, 5.0).unwrap()).unwrap();
        let m = g.add_parameter("m", 0.0, -1.0, 1.0).unwrap();
        let s = g.add_parameter("s", 0.0, -1.0, 2.0).unwrap();
        let gauss = g.add_pdf("gauss", PdfSpec::Gaussian { x, mean: m, sigma: s }).unwrap();
        g.set_observable_value(x, 0.0).unwrap();
        assert!(matches!(
            g.evaluate_scalar(gauss),
            Err(GraphError::Pdf {
                source: PdfError::NonPositiveSigma(_),
                ..
            })
        ));
    }
}
