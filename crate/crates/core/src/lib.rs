//! Likelihood fitting over computation graphs, evaluated per event with caching,
//! in per-node batches, or in batches with vectorizable `exp`/`log`.

// NaN-rejecting checks are written as `!(x > 0.0)` throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod collections;
pub mod data;
pub mod error;
pub mod fastmath;
pub mod graph;
pub mod histfactory;
pub mod likelihood;
pub mod models;
pub mod pdf;

pub use error::LengthMismatch;
pub use fastmath::MathProfile;
pub use graph::{EvalCounters, FunctionOp, Graph, GraphError, NodeId, NodeKind, NodeSpec, PdfSpec};
pub use pdf::{ObservableRange, PdfError};
