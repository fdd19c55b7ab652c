//! Built-in unbinned models used by the CLI, the benchmarks and the tests.
//!
//! Parameter defaults scale with the observable range `[lo, hi]` (width `w`,
//! midpoint `m`):
//!
//! | model            | observable | defaults                                                   |
//! |------------------|------------|------------------------------------------------------------|
//! | `gauss`          | x in [-5, 5] | mean = m, sigma = w/10                                   |
//! | `expo`           | x in [0, 10] | rate = 3/w                                               |
//! | `gauss_expo_sum` | x in [0, 10] | mean = lo + w/2, sigma = w/10, rate = 3/w, frac = 0.4    |
//! | `poly_sum`       | x in [0, 10] | mean = lo + 0.6w, sigma = w/12, c0 = 1 (fixed), c1 = 0.2/w, c2 = 0.8/w², frac = 0.3 |

use std::fmt;
use std::str::FromStr;

use crate::graph::{FunctionOp, Graph, GraphError, NodeId, PdfSpec};
use crate::pdf::ObservableRange;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Gauss,
    Expo,
    GaussExpoSum,
    PolySum,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Gauss, ModelKind::Expo, ModelKind::GaussExpoSum, ModelKind::PolySum];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Gauss => "gauss",
            ModelKind::Expo => "expo",
            ModelKind::GaussExpoSum => "gauss_expo_sum",
            ModelKind::PolySum => "poly_sum",
        }
    }

    pub fn default_range(self) -> ObservableRange {
        let (lo, hi) = match self {
            ModelKind::Gauss => (-5.0, 5.0),
            _ => (0.0, 10.0),
        };
        ObservableRange::new(lo, hi).expect("valid default range")
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        ModelKind::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            format!("unknown model '{s}' (expected gauss, expo, gauss_expo_sum or poly_sum)")
        })
    }
}

/// A graph with its top PDF.
#[derive(Debug, Clone)]
pub struct Model {
    pub graph: Graph,
    pub top: NodeId,
}

/// Builds a named model; `range` overrides the default observable range.
pub fn build(kind: ModelKind, range: Option<ObservableRange>) -> Result<Model, GraphError> {
    let r = range.unwrap_or_else(|| kind.default_range());
    let (lo, hi, w) = (r.lo(), r.hi(), r.width());
    let mut g = Graph::new();
    let x = g.add_observable("x", r)?;
    let top = match kind {
        ModelKind::Gauss => {
            let mean = g.add_parameter("mean", r.midpoint(), lo, hi)?;
            let sigma = g.add_parameter("sigma", w / 10.0, w / 1000.0, w)?;
            g.add_pdf("gauss", PdfSpec::Gaussian { x, mean, sigma })?
        }
        ModelKind::Expo => {
            let rate = g.add_parameter("rate", 3.0 / w, -10.0 / w, 50.0 / w)?;
            g.add_pdf("expo", PdfSpec::Exponential { x, rate })?
        }
        ModelKind::GaussExpoSum => {
            let mean = g.add_parameter("mean", lo + 0.5 * w, lo, hi)?;
            let sigma = g.add_parameter("sigma", w / 10.0, w / 1000.0, w / 2.0)?;
            let gauss = g.add_pdf("gauss", PdfSpec::Gaussian { x, mean, sigma })?;
            let rate = g.add_parameter("rate", 3.0 / w, -10.0 / w, 50.0 / w)?;
            let expo = g.add_pdf("expo", PdfSpec::Exponential { x, rate })?;
            let frac = g.add_parameter("frac", 0.4, 0.0, 1.0)?;
            g.add_pdf(
                "model",
                PdfSpec::Sum {
                    components: vec![gauss, expo],
                    coefficients: vec![frac],
                },
            )?
        }
        ModelKind::PolySum => {
            let h = w / 2.0;
            let mean = g.add_parameter("mean", lo + 0.6 * w, lo, hi)?;
            let sigma = g.add_parameter("sigma", w / 12.0, w / 1000.0, w / 2.0)?;
            let gauss = g.add_pdf("gauss", PdfSpec::Gaussian { x, mean, sigma })?;
            // Bounds keep 1 + c1 u + c2 u^2 positive for |u| <= w/2.
            let c0 = g.add_parameter("c0", 1.0, 1.0, 1.0)?;
            g.set_constant(c0, true)?;
            let c1 = g.add_parameter("c1", 0.2 / w, -0.6 / h, 0.6 / h)?;
            let c2 = g.add_parameter("c2", 0.8 / (w * w), 0.0, 2.0 / (h * h))?;
            let poly = g.add_pdf(
                "poly",
                PdfSpec::Polynomial {
                    x,
                    coefficients: vec![c0, c1, c2],
                },
            )?;
            let frac = g.add_parameter("frac", 0.3, 0.0, 1.0)?;
            g.add_pdf(
                "model",
                PdfSpec::Sum {
                    components: vec![gauss, poly],
                    coefficients: vec![frac],
                },
            )?
        }
    };
    Ok(Model { graph: g, top })
}

/// Thirteen-node signal-plus-background graph over observable `t`: a Gaussian whose
/// mean is `mean0 + shift` and a cubic polynomial background, mixed by `frac`.
pub fn signal_background() -> Result<Model, GraphError> {
    let mut g = Graph::new();
    let t = g.add_observable("t", ObservableRange::new(0.0, 10.0).expect("valid range"))?;
    let mean0 = g.add_parameter("mean0", 5.0, 0.0, 10.0)?;
    let shift = g.add_parameter("shift", 0.0, -1.0, 1.0)?;
    let mean = g.add_function("mean", FunctionOp::Sum, vec![mean0, shift])?;
    let sigma = g.add_parameter("sigma", 0.7, 0.05, 5.0)?;
    let signal = g.add_pdf("signal", PdfSpec::Gaussian { x: t, mean, sigma })?;
    let c0 = g.add_parameter("c0", 1.0, 0.5, 2.0)?;
    let c1 = g.add_parameter("c1", 0.02, -0.05, 0.05)?;
    let c2 = g.add_parameter("c2", 0.005, 0.0, 0.02)?;
    let c3 = g.add_parameter("c3", 0.0, -0.001, 0.001)?;
    let background = g.add_pdf(
        "background",
        PdfSpec::Polynomial {
            x: t,
            coefficients: vec![c0, c1, c2, c3],
        },
    )?;
    let frac = g.add_parameter("frac", 0.3, 0.0, 1.0)?;
    let top = g.add_pdf(
        "model",
        PdfSpec::Sum {
            components: vec![signal, background],
            coefficients: vec![frac],
        },
    )?;
    Ok(Model { graph: g, top })
}
