use crate::data::{Bindings, DataSet};
use crate::fastmath::{batch_map, MapFn, MathProfile};
use crate::graph::{FunctionOp, Graph, GraphError, NodeId, NodeKind};
use crate::pdf::eval_batch;

use super::{KahanSum, LikelihoodError};

#[derive(Debug, Clone, Copy)]
enum Source {
    Column(usize),
    Constant,
    Buffer(usize),
}

#[derive(Debug)]
enum StepKind {
    Pdf { inputs: Vec<NodeId> },
    Function { op: FunctionOp, inputs: Vec<NodeId> },
}

#[derive(Debug)]
struct Step {
    node: NodeId,
    buffer: usize,
    kind: StepKind,
}

#[derive(Clone, Copy)]
enum View<'a> {
    Slice(&'a [f64]),
    Constant(f64),
}

impl View<'_> {
    #[inline(always)]
    fn at(&self, i: usize) -> f64 {
        match self {
            View::Slice(s) => s[i],
            View::Constant(c) => *c,
        }
    }
}

/// Evaluation schedule for the batch modes.
///
/// Observables are read straight from the dataset columns. Parameter-only nodes are
/// evaluated once per call through the scalar cache and broadcast. Every
/// observable-dependent node gets one output buffer, allocated here and reused by
/// every NLL call.
#[derive(Debug)]
pub struct BatchPlan {
    top: NodeId,
    profile: MathProfile,
    sources: Vec<Source>,
    constants: Vec<f64>,
    broadcast: Vec<NodeId>,
    steps: Vec<Step>,
    buffers: Vec<Vec<f64>>,
    logs: Vec<f64>,
    chunk: usize,
}

impl BatchPlan {
    pub(crate) fn new(
        graph: &mut Graph,
        top: NodeId,
        bindings: &Bindings,
        events: usize,
        profile: MathProfile,
    ) -> Result<Self, LikelihoodError> {
        let order = graph.topological_order(top)?;
        let mut sources = vec![Source::Constant; graph.len()];
        let mut steps = Vec::new();
        let mut broadcast = Vec::new();
        for &id in &order {
            let node = graph.node(id)?;
            match node.kind() {
                NodeKind::Observable => {
                    let column = bindings
                        .pairs()
                        .iter()
                        .find(|(_, o)| *o == id)
                        .map(|(c, _)| *c)
                        .ok_or_else(|| GraphError::UnsetObservable(node.name().to_string()))?;
                    sources[id.index()] = Source::Column(column);
                }
                _ if !node.is_observable_dependent() => {}
                NodeKind::Function => {
                    let op = node.function_op().expect("function node").clone();
                    let inputs = node.servers().to_vec();
                    for s in &inputs {
                        if matches!(sources[s.index()], Source::Constant) && !broadcast.contains(s) {
                            broadcast.push(*s);
                        }
                    }
                    sources[id.index()] = Source::Buffer(steps.len());
                    steps.push(Step {
                        node: id,
                        buffer: steps.len(),
                        kind: StepKind::Function { op, inputs },
                    });
                }
                NodeKind::Pdf => {
                    let spec = node.pdf_spec().expect("pdf node");
                    let inputs = node.servers()[..spec.event_input_count()].to_vec();
                    sources[id.index()] = Source::Buffer(steps.len());
                    steps.push(Step {
                        node: id,
                        buffer: steps.len(),
                        kind: StepKind::Pdf { inputs },
                    });
                }
                NodeKind::Parameter => {}
            }
        }
        broadcast.sort_unstable();
        let chunk = events.max(1);
        Ok(Self {
            top,
            profile,
            constants: vec![0.0; graph.len()],
            sources,
            broadcast,
            buffers: (0..steps.len()).map(|_| vec![0.0; chunk]).collect(),
            steps,
            logs: vec![0.0; chunk],
            chunk,
        })
    }

    pub(crate) fn set_chunk_size(&mut self, chunk: usize) {
        if chunk < self.chunk {
            self.chunk = chunk;
            for b in &mut self.buffers {
                b.truncate(chunk);
                b.shrink_to_fit();
            }
            self.logs.truncate(chunk);
        }
    }

    /// Observable-dependent nodes, each evaluated with one kernel call per chunk.
    pub fn step_count(&self) -> usize {
        self.steps.len()
    }

    pub(crate) fn nll(&mut self, graph: &mut Graph, data: &DataSet) -> Result<f64, LikelihoodError> {
        for &id in &self.broadcast {
            self.constants[id.index()] = graph.evaluate_scalar(id)?;
        }
        let n = data.len();
        let mut acc = KahanSum::new();
        let mut start = 0;
        while start < n {
            let end = (start + self.chunk).min(n);
            self.eval_chunk(graph, data, start, end)?;
            self.reduce_chunk(data, start, end, &mut acc)?;
            start = end;
        }
        Ok(-acc.value())
    }

    fn eval_chunk(&mut self, graph: &mut Graph, data: &DataSet, start: usize, end: usize) -> Result<(), LikelihoodError> {
        let len = end - start;
        let Self {
            steps,
            buffers,
            sources,
            constants,
            profile,
            ..
        } = self;
        for step in steps.iter() {
            let mut out = std::mem::take(&mut buffers[step.buffer]);
            let result = {
                let view = |id: &NodeId| match sources[id.index()] {
                    Source::Column(c) => View::Slice(&data.column(c)[start..end]),
                    Source::Buffer(b) => View::Slice(&buffers[b][..len]),
                    Source::Constant => View::Constant(constants[id.index()]),
                };
                match &step.kind {
                    StepKind::Pdf { inputs } => {
                        let views: Vec<&[f64]> = inputs
                            .iter()
                            .map(|id| match view(id) {
                                View::Slice(s) => s,
                                View::Constant(_) => unreachable!("pdf event inputs are observable-dependent"),
                            })
                            .collect();
                        match graph.pdf_terms(step.node) {
                            Ok(terms) => eval_batch(terms, &views, &mut out[..len], *profile).map_err(|source| {
                                GraphError::Pdf {
                                    node: graph.nodes()[step.node.index()].name().to_string(),
                                    source,
                                }
                            }),
                            Err(e) => Err(e),
                        }
                    }
                    StepKind::Function { op, inputs } => {
                        let views: Vec<View<'_>> = inputs.iter().map(view).collect();
                        apply_batch(op, &views, &mut out[..len]);
                        Ok(())
                    }
                }
            };
            buffers[step.buffer] = out;
            result?;
            graph.counters_mut().batch_node_evaluations += 1;
        }
        Ok(())
    }

    fn reduce_chunk(&mut self, data: &DataSet, start: usize, end: usize, acc: &mut KahanSum) -> Result<(), LikelihoodError> {
        let len = end - start;
        let Source::Buffer(b) = self.sources[self.top.index()] else {
            unreachable!("top is observable-dependent");
        };
        let density = &self.buffers[b][..len];
        if let Some(i) = density.iter().position(|&p| !(p > 0.0)) {
            return Err(LikelihoodError::NonPositiveDensity {
                event: start + i,
                value: density[i],
            });
        }
        let f = match self.profile {
            MathProfile::Reference => MapFn::ReferenceLog,
            MathProfile::Fast => MapFn::FastLog,
        };
        let logs = &mut self.logs[..len];
        batch_map(f, density, logs).expect("equal lengths");
        match data.weights() {
            Some(w) => {
                for (&l, &w) in logs.iter().zip(&w[start..end]) {
                    acc.add(w * l);
                }
            }
            None => {
                for &l in logs.iter() {
                    acc.add(l);
                }
            }
        }
        Ok(())
    }
}

// Mirrors `FunctionOp::apply` operation for operation, so each element matches the
// scalar path exactly.
fn apply_batch(op: &FunctionOp, inputs: &[View<'_>], out: &mut [f64]) {
    let combine = |out: &mut [f64], f: fn(f64, f64) -> f64| {
        match inputs.first() {
            Some(View::Slice(s)) => out.copy_from_slice(s),
            Some(View::Constant(c)) => out.fill(*c),
            None => {}
        }
        for v in inputs.iter().skip(1) {
            match v {
                View::Slice(s) => {
                    for (o, &x) in out.iter_mut().zip(*s) {
                        *o = f(*o, x);
                    }
                }
                View::Constant(c) => {
                    for o in out.iter_mut() {
                        *o = f(*o, *c);
                    }
                }
            }
        }
    };
    match op {
        FunctionOp::Sum if !inputs.is_empty() => combine(out, |a, b| a + b),
        FunctionOp::Product if !inputs.is_empty() => combine(out, |a, b| a * b),
        _ => {
            let mut scratch = vec![0.0; inputs.len()];
            for (i, o) in out.iter_mut().enumerate() {
                for (s, v) in scratch.iter_mut().zip(inputs) {
                    *s = v.at(i);
                }
                *o = op.apply(&scratch);
            }
        }
    }
}
