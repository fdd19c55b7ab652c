//! `fitbench`: toy generation, fits, benchmarks and DOT export.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 fit did not converge.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use fitbench::bench::{collections_benchmark, hf_scaling_benchmark, HfBase};
use fitbench::collections::set_debug_checks;
use fitbench::data::{generate_toy, read_csv, write_csv};
use fitbench::histfactory::{build_model_owned, parse_measurement, HfModel};
use fitbench::likelihood::{benchmark_ladder, fit, EvalMode, FitOptions, FitResult, GraphObjective, Nll};
use fitbench::models::{self, Model, ModelKind};
use fitbench::{Graph, NodeId, ObservableRange};

const EXIT_INPUT: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "fitbench", version, about = "Likelihood fits over computation graphs, in three evaluation modes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a toy dataset from a built-in model.
    Gen(GenArgs),
    /// Fit a model to data and write the result as JSON.
    Fit(FitArgs),
    /// Run a benchmark suite and write its report as JSON.
    Bench(BenchArgs),
    /// Write the model graph in DOT format.
    Dot(DotArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    model: ModelKind,
    #[arg(long)]
    events: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Observable range as lo:hi.
    #[arg(long, value_parser = parse_range)]
    range: Option<ObservableRange>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
#[group(id = "source", required = true, multiple = false, args = ["model", "hf_spec"])]
struct ModelSource {
    /// Built-in model: gauss, expo, gauss_expo_sum or poly_sum.
    #[arg(long)]
    model: Option<ModelKind>,
    /// Binned measurement JSON.
    #[arg(long)]
    hf_spec: Option<PathBuf>,
    /// Observable range of a built-in model as lo:hi.
    #[arg(long, value_parser = parse_range, conflicts_with = "hf_spec")]
    range: Option<ObservableRange>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    source: ModelSource,
    /// CSV dataset; required with --model.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "batch")]
    mode: EvalMode,
    /// Override a parameter's bounds as NAME=LO:HI; the start value is clamped into them.
    #[arg(long = "bound", value_parser = parse_bound)]
    bounds: Vec<(String, f64, f64)>,
    #[arg(long, default_value_t = FitOptions::default().max_iterations)]
    max_iterations: u64,
    /// Output JSON; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Ladder,
    Collections,
    HfScaling,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_enum)]
    suite: Suite,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
    repeats: u64,
    /// Ladder: toy events to fit.
    #[arg(long, default_value_t = 2_000_000)]
    events: usize,
    /// Ladder: model to fit.
    #[arg(long, default_value = "gauss_expo_sum")]
    model: ModelKind,
    /// Ladder: toy seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Collections: elements to traverse.
    #[arg(long, default_value_t = 1_000_000)]
    elements: usize,
    /// Hf-scaling: size multipliers of the base measurement.
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 4, 8])]
    sizes: Vec<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DotArgs {
    #[command(flatten)]
    source: ModelSource,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_range(s: &str) -> Result<ObservableRange, String> {
    let (lo, hi) = s.split_once(':').ok_or("expected lo:hi")?;
    let lo: f64 = lo.trim().parse().map_err(|_| format!("bad lower bound '{lo}'"))?;
    let hi: f64 = hi.trim().parse().map_err(|_| format!("bad upper bound '{hi}'"))?;
    ObservableRange::new(lo, hi).map_err(|e| e.to_string())
}

fn parse_bound(s: &str) -> Result<(String, f64, f64), String> {
    let (name, range) = s.split_once('=').ok_or("expected NAME=LO:HI")?;
    let (lo, hi) = range.split_once(':').ok_or("expected NAME=LO:HI")?;
    let lo: f64 = lo.parse().map_err(|_| format!("bad lower bound '{lo}'"))?;
    let hi: f64 = hi.parse().map_err(|_| format!("bad upper bound '{hi}'"))?;
    if lo.partial_cmp(&hi).is_none_or(|o| o.is_gt()) {
        return Err(format!("empty bound {lo}:{hi}"));
    }
    Ok((name.to_string(), lo, hi))
}

enum Loaded {
    Unbinned(Model),
    Binned(HfModel),
}

impl Loaded {
    fn graph_mut(&mut self) -> (&mut Graph, NodeId) {
        match self {
            Loaded::Unbinned(m) => (&mut m.graph, m.top),
            Loaded::Binned(m) => (&mut m.graph, m.top),
        }
    }
}

fn load(source: &ModelSource, debug: bool) -> Result<Loaded, String> {
    let mut loaded = if let Some(kind) = source.model {
        Loaded::Unbinned(models::build(kind, source.range).map_err(|e| e.to_string())?)
    } else {
        let path = source.hf_spec.as_ref().expect("clap enforces one source");
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let spec = parse_measurement(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        Loaded::Binned(build_model_owned(spec).map_err(|e| format!("{}: {e}", path.display()))?)
    };
    if debug {
        loaded.graph_mut().0.check_invariants().map_err(|e| e.to_string())?;
    }
    Ok(loaded)
}

fn write_output(out: Option<&Path>, text: &str) -> Result<(), String> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| format!("{}: {e}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn write_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<(), String> {
    let text = serde_json::to_string_pretty(value).map_err(|e| e.to_string())?;
    write_output(out, &text)
}

fn run_gen(args: GenArgs) -> Result<u8, String> {
    let mut model = models::build(args.model, args.range).map_err(|e| e.to_string())?;
    let data = generate_toy(&mut model.graph, model.top, args.events, args.seed).map_err(|e| e.to_string())?;
    write_csv(&data, &args.out).map_err(|e| format!("{}: {e}", args.out.display()))?;
    println!("{}", data.len());
    Ok(0)
}

fn apply_bounds(graph: &mut Graph, bounds: &[(String, f64, f64)]) -> Result<(), String> {
    for (name, lo, hi) in bounds {
        let id = graph.find(name).ok_or_else(|| format!("unknown parameter '{name}'"))?;
        let value = graph.node(id).map_err(|e| e.to_string())?.cached_value();
        graph.set_parameter_bounds(id, *lo, *hi).map_err(|e| e.to_string())?;
        graph
            .set_parameter_value(id, value.clamp(*lo, *hi))
            .map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn run_fit(args: FitArgs, debug: bool) -> Result<u8, String> {
    let options = FitOptions {
        max_iterations: args.max_iterations,
        ..FitOptions::default()
    };
    let result: FitResult = match load(&args.source, debug)? {
        Loaded::Unbinned(mut model) => {
            let path = args.data.as_ref().ok_or("--data is required with --model")?;
            apply_bounds(&mut model.graph, &args.bounds)?;
            let names: Vec<String> = model
                .graph
                .observables_of(model.top)
                .map_err(|e| e.to_string())?
                .into_iter()
                .map(|o| model.graph.nodes()[o.index()].name().to_string())
                .collect();
            let schema: Vec<&str> = names.iter().map(String::as_str).collect();
            let data = read_csv(path, &schema).map_err(|e| format!("{}: {e}", path.display()))?;
            let mut nll = Nll::new(model.graph, model.top, &data, args.mode).map_err(|e| e.to_string())?;
            fit(&mut nll, &options).map_err(|e| e.to_string())?
        }
        Loaded::Binned(mut model) => {
            if args.data.is_some() {
                return Err("--data cannot be used with --hf-spec; observed counts come from the measurement file".into());
            }
            apply_bounds(&mut model.graph, &args.bounds)?;
            let mut objective = GraphObjective::new(model.graph, model.top);
            fit(&mut objective, &options).map_err(|e| e.to_string())?
        }
    };
    write_json(args.out.as_deref(), &result)?;
    Ok(if result.converged { 0 } else { EXIT_NOT_CONVERGED })
}

fn run_bench(args: BenchArgs) -> Result<u8, String> {
    let repeats = args.repeats as usize;
    let out = args.out.as_deref();
    match args.suite {
        Suite::Ladder => {
            let mut model = models::build(args.model, None).map_err(|e| e.to_string())?;
            let data = generate_toy(&mut model.graph, model.top, args.events, args.seed).map_err(|e| e.to_string())?;
            let report = benchmark_ladder(&model.graph, model.top, &data, repeats, &FitOptions::default())
                .map_err(|e| e.to_string())?;
            for e in &report.modes {
                eprintln!("{:<10} {:>12.1} ms  x{:.2}", e.mode, e.median_wall_ms, e.speedup_vs_scalar);
            }
            if let Some(note) = &report.note {
                eprintln!("note: {note}");
            }
            write_json(out, &report)?;
        }
        Suite::Collections => {
            let report = collections_benchmark(args.elements, repeats);
            eprintln!(
                "native {:.3e}/s  legacy {:.3e}/s  ratio {:.2}",
                report.native_throughput, report.legacy_throughput, report.native_vs_legacy
            );
            write_json(out, &report)?;
        }
        Suite::HfScaling => {
            let report = hf_scaling_benchmark(HfBase::default(), &args.sizes, repeats).map_err(|e| e.to_string())?;
            for s in &report.sizes {
                eprintln!(
                    "x{:<3} {:>7} histograms {:>10.2} ms  copies {}",
                    s.factor, s.histograms, s.median_build_ms, s.copy_counters.histogram_deep_copies
                );
            }
            write_json(out, &report)?;
        }
    }
    Ok(0)
}

fn run_dot(args: DotArgs, debug: bool) -> Result<u8, String> {
    let mut loaded = load(&args.source, debug)?;
    let (graph, top) = loaded.graph_mut();
    let dot = graph.export_dot(top).map_err(|e| e.to_string())?;
    match args.out.as_deref() {
        Some(p) => fs::write(p, dot).map_err(|e| format!("{}: {e}", p.display()))?,
        None => print!("{dot}"),
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let debug = std::env::var("FITBENCH_DEBUG_CHECKS").is_ok_and(|v| v == "1");
    if debug {
        set_debug_checks(true);
    }
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Gen(a) => run_gen(a),
        Command::Fit(a) => run_fit(a, debug),
        Command::Bench(a) => run_bench(a),
        Command::Dot(a) => run_dot(a, debug),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(EXIT_INPUT)
        }
    }
}
