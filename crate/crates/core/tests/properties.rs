use std::rc::Rc;

use proptest::prelude::*;

use fitbench::collections::{NodeCollection, SharedCollection};
use fitbench::data::generate_toy;
use fitbench::fastmath::{fast_exp, fast_log};
use fitbench::histfactory::{build_model, build_model_owned, histogram_count, interpolate_bin, synthetic_measurement};
use fitbench::likelihood::{EvalMode, Nll};
use fitbench::models::{self, ModelKind};
use fitbench::{FunctionOp, Graph, NodeId, NodeKind, ObservableRange};

#[derive(Debug, Clone)]
struct Recipe {
    params: Vec<f64>,
    functions: Vec<(u8, Vec<usize>)>,
}

fn recipe() -> impl Strategy<Value = Recipe> {
    (
        prop::collection::vec(-2.0f64..2.0, 1..6),
        prop::collection::vec((0u8..3, prop::collection::vec(any::<usize>(), 1..4)), 1..12),
    )
        .prop_map(|(params, functions)| Recipe { params, functions })
}

fn op(code: u8) -> FunctionOp {
    match code {
        0 => FunctionOp::Sum,
        1 => FunctionOp::Product,
        _ => FunctionOp::HalfSquareSum,
    }
}

fn build(r: &Recipe) -> Graph {
    let mut g = Graph::new();
    for (i, &v) in r.params.iter().enumerate() {
        g.add_parameter(&format!("p{i}"), v, -10.0, 10.0).unwrap();
    }
    for (i, (code, raw)) in r.functions.iter().enumerate() {
        let n = g.len();
        let servers = raw.iter().map(|&s| NodeId::new(s % n)).collect();
        g.add_function(&format!("f{i}"), op(*code), servers).unwrap();
    }
    g
}

// Recomputes every node from scratch in id order.
fn oracle_values(g: &Graph) -> Vec<f64> {
    let mut values: Vec<f64> = Vec::with_capacity(g.len());
    for node in g.nodes() {
        let v = match node.kind() {
            NodeKind::Parameter => node.cached_value(),
            _ => {
                let inputs: Vec<f64> = node.servers().iter().map(|s| values[s.index()]).collect();
                node.function_op().unwrap().apply(&inputs)
            }
        };
        values.push(v);
    }
    values
}

fn transitive_clients(g: &Graph, from: NodeId) -> Vec<NodeId> {
    let mut hit = vec![false; g.len()];
    hit[from.index()] = true;
    let mut out = Vec::new();
    for node in g.nodes() {
        if node.id() != from && node.servers().iter().any(|s| hit[s.index()]) {
            hit[node.id().index()] = true;
            out.push(node.id());
        }
    }
    out
}

fn evaluate_all(g: &mut Graph) -> Vec<f64> {
    (0..g.len()).map(|i| g.evaluate_scalar(NodeId::new(i)).unwrap()).collect()
}

proptest! {
    #[test]
    fn cached_values_match_fresh_recomputation(
        r in recipe(),
        edits in prop::collection::vec((any::<usize>(), -3.0f64..3.0), 0..10),
    ) {
        let mut g = build(&r);
        g.check_invariants().unwrap();
        evaluate_all(&mut g);
        for (p, v) in edits {
            g.set_parameter_value(NodeId::new(p % r.params.len()), v).unwrap();
            let cached = evaluate_all(&mut g);
            let fresh = oracle_values(&g);
            for (a, b) in cached.iter().zip(&fresh) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn dirty_set_is_exactly_the_client_closure(r in recipe(), p in any::<usize>(), v in -3.0f64..3.0) {
        let mut g = build(&r);
        evaluate_all(&mut g);
        prop_assert!(g.dirty_nodes().is_empty());
        let p = NodeId::new(p % r.params.len());
        let old = g.node(p).unwrap().cached_value();

        prop_assert_eq!(g.set_parameter_value(p, old).unwrap(), 0);
        prop_assert!(g.dirty_nodes().is_empty());

        prop_assume!(v.to_bits() != old.to_bits());
        g.set_parameter_value(p, v).unwrap();
        prop_assert_eq!(g.dirty_nodes(), transitive_clients(&g, p));
    }

    #[test]
    fn legacy_drain_equals_native(n in 0usize..200, removals in prop::collection::vec(any::<usize>(), 0..20)) {
        let mut c = NodeCollection::new();
        for i in 0..n {
            c.insert(NodeId::new(i), &format!("e{i}"));
        }
        for r in removals {
            if !c.is_empty() {
                let name = c.name_at(r % c.len()).unwrap().to_string();
                c.remove(&name);
            }
        }
        let native: Vec<NodeId> = c.iter().collect();
        let snapshot: Rc<[NodeId]> = native.clone().into();
        let shared = SharedCollection::new(c);
        let drained: Vec<NodeId> = shared.legacy_cursor().collect();
        prop_assert_eq!(&drained, &native);
        let from_snapshot: Vec<NodeId> = fitbench::collections::LegacyCursor::new(Box::new(snapshot)).collect();
        prop_assert_eq!(from_snapshot, native);
    }

    #[test]
    fn find_agrees_with_linear_scan(names in prop::collection::vec("[a-d]{1,4}", 0..150), probe in "[a-d]{1,4}") {
        let mut c = NodeCollection::new();
        let mut oracle: Vec<(String, NodeId)> = Vec::new();
        for (i, name) in names.iter().enumerate() {
            let fresh = !oracle.iter().any(|(n, _)| n == name);
            prop_assert_eq!(c.insert(NodeId::new(i), name), fresh);
            if fresh {
                oracle.push((name.clone(), NodeId::new(i)));
            }
        }
        let want = oracle.iter().find(|(n, _)| *n == probe).map(|(_, id)| *id);
        prop_assert_eq!(c.find(&probe), want);
    }

    #[test]
    fn fast_math_within_bound(x in -700.0f64..700.0, y in 1e-300f64..1e300) {
        prop_assert!(((fast_exp(x) - x.exp()) / x.exp()).abs() <= 1e-9);
        let l = y.ln();
        if l != 0.0 {
            prop_assert!(((fast_log(y) - l) / l).abs() <= 1e-9);
        }
    }

    #[test]
    fn interpolation_anchors_and_monotonicity(nom in 0.0f64..100.0, up in 0.0f64..100.0, down in 0.0f64..100.0, a in 0.0f64..1.0) {
        prop_assert_eq!(interpolate_bin(nom, up, down, 0.0), nom.max(1e-9));
        prop_assert_eq!(interpolate_bin(nom, up, down, 1.0), up.max(1e-9));
        prop_assert_eq!(interpolate_bin(nom, up, down, -1.0), down.max(1e-9));
        let v = interpolate_bin(nom, up, down, a);
        prop_assert!(v >= nom.min(up).max(1e-9) - 1e-12 && v <= nom.max(up).max(1e-9) + 1e-12);
    }

    #[test]
    fn copy_bound_holds(channels in 1usize..4, samples in 1usize..4, systematics in 0usize..4, bins in 1usize..6) {
        let spec = synthetic_measurement(channels, samples, systematics, bins);
        let h = histogram_count(&spec) as u64;
        prop_assert!(build_model(&spec).unwrap().copy_counters.histogram_deep_copies <= h);
        prop_assert_eq!(build_model_owned(spec).unwrap().copy_counters.histogram_deep_copies, 0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn modes_agree_on_random_models(
        kind in prop::sample::select(ModelKind::ALL.to_vec()),
        lo in -5.0f64..5.0,
        width in 1.0f64..20.0,
        seed in any::<u64>(),
        chunk in 1usize..300,
        n in 1usize..400,
    ) {
        let range = ObservableRange::new(lo, lo + width).unwrap();
        let mut m = models::build(kind, Some(range)).unwrap();
        let data = generate_toy(&mut m.graph, m.top, n, seed).unwrap();
        let scalar = Nll::new(m.graph.clone(), m.top, &data, EvalMode::ScalarCached).unwrap().evaluate().unwrap();
        let batch = Nll::new(m.graph.clone(), m.top, &data, EvalMode::Batch).unwrap().evaluate().unwrap();
        let chunked = Nll::new(m.graph.clone(), m.top, &data, EvalMode::Batch)
            .unwrap()
            .with_chunk_size(chunk)
            .unwrap()
            .evaluate()
            .unwrap();
        let fast = Nll::new(m.graph.clone(), m.top, &data, EvalMode::BatchFast).unwrap().evaluate().unwrap();
        prop_assert_eq!(scalar.to_bits(), batch.to_bits());
        prop_assert_eq!(batch.to_bits(), chunked.to_bits());
        prop_assert!((fast - batch).abs() <= 1e-8 * (1.0 + batch.abs()));
    }
}
