use fitbench::data::{generate_toy, read_csv, read_csv_weighted, write_csv, DataSet};
use fitbench::histfactory::{build_model_owned, parse_measurement};
use fitbench::likelihood::{fit, EvalMode, FitOptions, GraphObjective, Nll};
use fitbench::models::{self, ModelKind};

#[test]
fn csv_round_trip_preserves_events_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = models::build(ModelKind::PolySum, None).unwrap();
    let data = generate_toy(&mut m.graph, m.top, 2000, 8).unwrap();
    let path = dir.path().join("toy.csv");
    write_csv(&data, &path).unwrap();
    let back = read_csv(&path, &["x"]).unwrap();
    assert_eq!(back.column(0), data.column(0));
}

#[test]
fn weights_survive_csv_and_scale_the_nll() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = models::build(ModelKind::Expo, None).unwrap();
    let toy = generate_toy(&mut m.graph, m.top, 300, 1).unwrap();
    let weighted = DataSet::with_weights(vec!["x".into()], vec![toy.column(0).to_vec()], Some(vec![2.0; 300])).unwrap();
    let path = dir.path().join("w.csv");
    write_csv(&weighted, &path).unwrap();
    let back = read_csv_weighted(&path, &["x"], Some("weight")).unwrap();
    let plain = Nll::new(m.graph.clone(), m.top, &toy, EvalMode::Batch).unwrap().evaluate().unwrap();
    let doubled = Nll::new(m.graph.clone(), m.top, &back, EvalMode::Batch).unwrap().evaluate().unwrap();
    assert!((doubled - 2.0 * plain).abs() <= 1e-9 * plain.abs());
}

#[test]
fn fit_from_file_matches_in_memory_fit() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = models::build(ModelKind::GaussExpoSum, None).unwrap();
    let toy = generate_toy(&mut m.graph, m.top, 3000, 21).unwrap();
    let path = dir.path().join("toy.csv");
    write_csv(&toy, &path).unwrap();
    let from_file = read_csv(&path, &["x"]).unwrap();
    let fresh = models::build(ModelKind::GaussExpoSum, None).unwrap();
    let a = fit(
        &mut Nll::new(fresh.graph.clone(), fresh.top, &toy, EvalMode::BatchFast).unwrap(),
        &FitOptions::default(),
    )
    .unwrap();
    let b = fit(
        &mut Nll::new(fresh.graph, fresh.top, &from_file, EvalMode::BatchFast).unwrap(),
        &FitOptions::default(),
    )
    .unwrap();
    assert!(a.converged);
    assert_eq!(a.parameter_values, b.parameter_values);
    assert_eq!(a.min_nll.to_bits(), b.min_nll.to_bits());
}

#[test]
fn binned_fit_finds_injected_signal() {
    // Observed = 2 x signal + background.
    let spec = parse_measurement(
        r#"{"name": "inj", "poi": "mu", "channels": [
            {"name": "a", "observed": {"edges": [0, 1, 2, 3], "contents": [24, 40, 18]},
             "samples": [
                {"name": "s", "nominal": {"edges": [0, 1, 2, 3], "contents": [2, 10, 1]},
                 "normFactors": [{"name": "mu", "initial": 1, "lo": 0, "hi": 5}]},
                {"name": "b", "nominal": {"edges": [0, 1, 2, 3], "contents": [20, 20, 16]}}]}]}"#,
    )
    .unwrap();
    let model = build_model_owned(spec).unwrap();
    assert_eq!(model.copy_counters.histogram_deep_copies, 0);
    let mut objective = GraphObjective::new(model.graph, model.top);
    let r = fit(&mut objective, &FitOptions::default()).unwrap();
    assert!(r.converged);
    assert!((r.parameter_values["mu"] - 2.0).abs() < 1e-6, "{:?}", r.parameter_values);
}

#[test]
fn dot_export_is_stable() {
    let mut a = models::signal_background().unwrap();
    let mut b = models::signal_background().unwrap();
    let da = a.graph.export_dot(a.top).unwrap();
    assert_eq!(da, b.graph.export_dot(b.top).unwrap());
    assert_eq!(da.matches(" -> ").count(), a.graph.nodes().iter().map(|n| n.servers().len()).sum::<usize>());
}
