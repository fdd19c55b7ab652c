use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::graph::{EvalCounters, NodeId, NodeKind};

use super::{LikelihoodError, Objective};

/// Nelder-Mead settings.
#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub max_iterations: u64,
    /// Converged when the simplex value spread is below `f_tolerance * (1 + |f_best|)`...
    pub f_tolerance: f64,
    /// ...and every vertex is within `x_tolerance * (1 + |x_best|)` of the best, per coordinate.
    pub x_tolerance: f64,
    /// Initial simplex step as a fraction of each finite parameter range.
    pub initial_step: f64,
    /// Upper limit on fresh simplices started from a converged point.
    pub max_restarts: u32,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 10_000,
            f_tolerance: 1e-10,
            x_tolerance: 1e-8,
            initial_step: 0.1,
            max_restarts: 5,
        }
    }
}

/// Outcome of [`minimize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: u64,
    pub evaluations: u64,
    pub converged: bool,
    /// Best simplex value after each iteration.
    pub best_history: Vec<f64>,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;
// Restarts use a smaller simplex than the first run.
const RESTART_SCALE: f64 = 0.1;

/// Bounded Nelder-Mead. Trial points outside the box are mirrored back in at the
/// violated bound. Non-finite objective values count as `+inf`.
pub fn minimize(
    mut f: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    bounds: &[(f64, f64)],
    options: &FitOptions,
) -> Minimum {
    assert_eq!(x0.len(), bounds.len(), "one bound pair per parameter");
    let mut evaluations = 0u64;
    let mut eval = |x: &[f64]| {
        evaluations += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let x0: Vec<f64> = x0.iter().zip(bounds).map(|(&x, &(lo, hi))| x.clamp(lo, hi)).collect();
    if x0.is_empty() {
        let v = eval(&x0);
        return Minimum {
            x: x0,
            f: v,
            iterations: 0,
            evaluations,
            converged: true,
            best_history: vec![v],
        };
    }

    let mut history = Vec::new();
    let mut iterations = 0;
    let mut best_x = x0;
    let mut best_f = f64::INFINITY;
    let mut converged = false;
    let mut scale = options.initial_step;
    // A simplex can collapse onto a face, e.g. after mirroring at a bound; restarting
    // from the best point until a run no longer improves recovers from that.
    for restart in 0..=options.max_restarts {
        let run = nelder_mead(&mut eval, &best_x, bounds, scale, options, &mut iterations, &mut history);
        let improved = run.1 < best_f - options.f_tolerance * (1.0 + best_f.abs());
        if run.1 <= best_f {
            best_x = run.0;
            best_f = run.1;
        }
        converged = run.2;
        if !converged || (restart > 0 && !improved) {
            break;
        }
        scale = options.initial_step * RESTART_SCALE;
    }
    Minimum {
        x: best_x,
        f: best_f,
        iterations,
        evaluations,
        converged,
        best_history: history,
    }
}

fn nelder_mead(
    eval: &mut impl FnMut(&[f64]) -> f64,
    start: &[f64],
    bounds: &[(f64, f64)],
    scale: f64,
    options: &FitOptions,
    iterations: &mut u64,
    history: &mut Vec<f64>,
) -> (Vec<f64>, f64, bool) {
    let n = start.len();
    let mut simplex = vec![start.to_vec()];
    for i in 0..n {
        let (lo, hi) = bounds[i];
        let width = hi - lo;
        let step = if width.is_finite() && width > 0.0 {
            scale * width
        } else {
            scale * start[i].abs().max(1.0)
        };
        let mut v = start.to_vec();
        v[i] = if start[i] + step <= hi { start[i] + step } else { start[i] - step };
        v[i] = v[i].clamp(lo, hi);
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v)).collect();
    let mut order: Vec<usize> = (0..=n).collect();
    let mut centroid = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut trial2 = vec![0.0; n];

    loop {
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        let (best, second_worst, worst) = (order[0], order[n - 1], order[n]);
        history.push(values[best]);
        if is_converged(&simplex, &values, best, worst, options) {
            return (simplex[best].clone(), values[best], true);
        }
        if *iterations >= options.max_iterations {
            return (simplex[best].clone(), values[best], false);
        }
        *iterations += 1;

        centroid.fill(0.0);
        for &i in &order[..n] {
            for (c, &x) in centroid.iter_mut().zip(&simplex[i]) {
                *c += x;
            }
        }
        for c in centroid.iter_mut() {
            *c /= n as f64;
        }

        along(&centroid, &simplex[worst], -REFLECT, bounds, &mut trial);
        let fr = eval(&trial);
        if fr < values[best] {
            along(&centroid, &trial, EXPAND, bounds, &mut trial2);
            let fe = eval(&trial2);
            if fe < fr {
                simplex[worst].copy_from_slice(&trial2);
                values[worst] = fe;
            } else {
                simplex[worst].copy_from_slice(&trial);
                values[worst] = fr;
            }
            continue;
        }
        if fr < values[second_worst] {
            simplex[worst].copy_from_slice(&trial);
            values[worst] = fr;
            continue;
        }
        let (accept, fc) = if fr < values[worst] {
            along(&centroid, &trial, CONTRACT, bounds, &mut trial2);
            let fc = eval(&trial2);
            (fc <= fr, fc)
        } else {
            along(&centroid, &simplex[worst], CONTRACT, bounds, &mut trial2);
            let fc = eval(&trial2);
            (fc < values[worst], fc)
        };
        if accept {
            simplex[worst].copy_from_slice(&trial2);
            values[worst] = fc;
            continue;
        }
        let anchor = simplex[best].clone();
        for i in 0..=n {
            if i == best {
                continue;
            }
            for (x, &b) in simplex[i].iter_mut().zip(&anchor) {
                *x = b + SHRINK * (*x - b);
            }
            values[i] = eval(&simplex[i]);
        }
    }
}

fn is_converged(simplex: &[Vec<f64>], values: &[f64], best: usize, worst: usize, options: &FitOptions) -> bool {
    let fb = values[best];
    if !fb.is_finite() || values[worst] - fb > options.f_tolerance * (1.0 + fb.abs()) {
        return false;
    }
    let xb = &simplex[best];
    simplex.iter().all(|v| {
        v.iter()
            .zip(xb)
            .all(|(&x, &b)| (x - b).abs() <= options.x_tolerance * (1.0 + b.abs()))
    })
}

// out = c + t (p - c), mirrored into the box.
fn along(c: &[f64], p: &[f64], t: f64, bounds: &[(f64, f64)], out: &mut [f64]) {
    for i in 0..c.len() {
        let (lo, hi) = bounds[i];
        let mut x = c[i] + t * (p[i] - c[i]);
        if x > hi {
            x = hi - (x - hi);
        }
        if x < lo {
            x = lo + (lo - x);
        }
        out[i] = x.clamp(lo, hi);
    }
}

/// Result of [`fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub mode: String,
    pub parameter_values: BTreeMap<String, f64>,
    pub min_nll: f64,
    pub converged: bool,
    pub n_iterations: u64,
    pub n_evaluations: u64,
    pub counters: EvalCounters,
    /// Milliseconds spent in `setup` (start-point evaluation), `minimize` and `total`.
    pub wall_time_ms: BTreeMap<String, f64>,
}

/// Minimizes `objective` over the free parameters its top node depends on, leaving
/// the graph at the best point found. Counters are reset at the start.
pub fn fit<O: Objective>(objective: &mut O, options: &FitOptions) -> Result<FitResult, LikelihoodError> {
    let start = Instant::now();
    let top = objective.top();
    let graph = objective.graph_mut();
    let order = graph.topological_order(top)?;
    let mut params: Vec<NodeId> = Vec::new();
    let mut names = Vec::new();
    let mut x0 = Vec::new();
    let mut bounds = Vec::new();
    for id in order {
        let node = graph.node(id)?;
        if node.kind() != NodeKind::Parameter {
            continue;
        }
        let p = node.parameter().expect("parameter node");
        if p.is_constant {
            continue;
        }
        params.push(id);
        names.push(node.name().to_string());
        x0.push(node.cached_value());
        bounds.push((p.lower_bound, p.upper_bound));
    }
    graph.reset_counters();
    objective.value()?;
    let setup = start.elapsed();

    let min_start = Instant::now();
    let minimum = minimize(
        |x| {
            let graph = objective.graph_mut();
            for (&id, &v) in params.iter().zip(x) {
                if graph.set_parameter_value(id, v).is_err() {
                    return f64::INFINITY;
                }
            }
            objective.value().unwrap_or(f64::INFINITY)
        },
        &x0,
        &bounds,
        options,
    );
    let graph = objective.graph_mut();
    for (&id, &v) in params.iter().zip(&minimum.x) {
        graph.set_parameter_value(id, v)?;
    }
    let minimize_time = min_start.elapsed();
    let counters = objective.graph().counters();

    let ms = |d: std::time::Duration| d.as_secs_f64() * 1e3;
    let wall_time_ms = BTreeMap::from([
        ("setup".to_string(), ms(setup)),
        ("minimize".to_string(), ms(minimize_time)),
        ("total".to_string(), ms(start.elapsed())),
    ]);
    Ok(FitResult {
        mode: objective.label().to_string(),
        parameter_values: names.into_iter().zip(minimum.x.iter().copied()).collect(),
        min_nll: minimum.f,
        converged: minimum.converged,
        n_iterations: minimum.iterations,
        n_evaluations: minimum.evaluations,
        counters,
        wall_time_ms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_one_dimension() {
        let m = minimize(|x| (x[0] - 3.0).powi(2), &[0.0], &[(-10.0, 10.0)], &FitOptions::default());
        assert!(m.converged);
        assert!((m.x[0] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let m = minimize(f, &[-1.2, 1.0], &[(-5.0, 5.0), (-5.0, 5.0)], &FitOptions::default());
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6, "{:?}", m.x);
    }

    #[test]
    fn minimum_on_bound() {
        let m = minimize(|x| x[0], &[0.5], &[(0.0, 1.0)], &FitOptions::default());
        assert!(m.converged);
        assert!(m.x[0] < 1e-7, "{m:?}");
    }

    #[test]
    fn best_value_never_increases() {
        let f = |x: &[f64]| (x[0] - 0.3).powi(2) + (x[1] + 0.7).powi(4) + x[0] * x[1];
        let m = minimize(f, &[2.0, 2.0], &[(-3.0, 3.0), (-3.0, 3.0)], &FitOptions::default());
        assert!(m.best_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let options = FitOptions {
            max_iterations: 5,
            ..FitOptions::default()
        };
        let m = minimize(|x| (x[0] - 3.0).powi(2), &[0.0], &[(-10.0, 10.0)], &options);
        assert!(!m.converged);
        assert_eq!(m.iterations, 5);
    }

    #[test]
    fn infeasible_points_are_avoided() {
        let f = |x: &[f64]| if x[0] < 1.0 { f64::NAN } else { (x[0] - 2.0).powi(2) };
        let m = minimize(f, &[4.0], &[(-10.0, 10.0)], &FitOptions::default());
        assert!((m.x[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn deterministic() {
        let f = |x: &[f64]| (x[0] - 0.1).powi(2) + 3.0 * (x[1] - 0.2).powi(2);
        let b = [(-1.0, 1.0), (-1.0, 1.0)];
        assert_eq!(
            minimize(f, &[0.5, 0.5], &b, &FitOptions::default()),
            minimize(f, &[0.5, 0.5], &b, &FitOptions::default())
        );
    }
}
