//! Columnar event storage, CSV I/O, toy generation and event loading.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::rngs::ChaCha8Rng;
use rand::{RngExt, SeedableRng};
use thiserror::Error;

use crate::graph::{Graph, GraphError, NodeId, NodeKind};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("duplicate column name '{0}'")]
    DuplicateName(String),
    #[error("column '{name}' has {found} entries, expected {expected}")]
    ColumnLength { name: String, expected: usize, found: usize },
    #[error("weight {value} at event {index} is not positive")]
    NonPositiveWeight { index: usize, value: f64 },
    #[error("event index {index} out of range for {len} events")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("missing column '{0}'")]
    MissingColumn(String),
    #[error("malformed number at line {line}, column {column}")]
    MalformedNumber { line: u64, column: usize },
    #[error("file has no header line")]
    EmptyFile,
    #[error("density is zero everywhere on the observable range")]
    DegenerateDensity,
    #[error("toy generation needs at least one observable")]
    NoObservables,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Immutable column store: one contiguous array per observable, plus optional weights.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DataSet {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    weights: Option<Vec<f64>>,
}

impl DataSet {
    pub fn new(names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self, DataError> {
        Self::with_weights(names, columns, None)
    }

    pub fn with_weights(
        names: Vec<String>,
        columns: Vec<Vec<f64>>,
        weights: Option<Vec<f64>>,
    ) -> Result<Self, DataError> {
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(DataError::DuplicateName(n.clone()));
            }
        }
        if names.len() != columns.len() {
            return Err(DataError::ColumnLength {
                name: "<columns>".into(),
                expected: names.len(),
                found: columns.len(),
            });
        }
        let len = columns.first().map_or(0, Vec::len);
        for (n, c) in names.iter().zip(&columns) {
            if c.len() != len {
                return Err(DataError::ColumnLength {
                    name: n.clone(),
                    expected: len,
                    found: c.len(),
                });
            }
        }
        if let Some(w) = &weights {
            if w.len() != len {
                return Err(DataError::ColumnLength {
                    name: "<weights>".into(),
                    expected: len,
                    found: w.len(),
                });
            }
            if let Some((index, &value)) = w.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
                return Err(DataError::NonPositiveWeight { index, value });
            }
        }
        Ok(Self {
            names,
            columns,
            weights,
        })
    }

    /// Number of events.
    pub fn len(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, index: usize) -> &[f64] {
        &self.columns[index]
    }

    pub fn column_by_name(&self, name: &str) -> Option<&[f64]> {
        self.column_index(name).map(|i| self.column(i))
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }
}

/// Maps dataset columns to observable nodes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Bindings {
    pairs: Vec<(usize, NodeId)>,
}

impl Bindings {
    /// Binds every observable reachable from `top` to the column of the same name.
    pub fn by_name(graph: &mut Graph, top: NodeId, data: &DataSet) -> Result<Self, DataError> {
        let mut pairs = Vec::new();
        for obs in graph.observables_of(top)? {
            let name = graph.node(obs)?.name();
            let column = data
                .column_index(name)
                .ok_or_else(|| DataError::MissingColumn(name.to_string()))?;
            pairs.push((column, obs));
        }
        Ok(Self { pairs })
    }

    /// Explicit `(column, observable)` pairs; each target must be an observable.
    pub fn from_pairs(graph: &Graph, pairs: Vec<(usize, NodeId)>) -> Result<Self, DataError> {
        for &(_, id) in &pairs {
            let node = graph.node(id)?;
            if node.kind() != NodeKind::Observable {
                return Err(GraphError::NotAnObservable(node.name().to_string()).into());
            }
        }
        Ok(Self { pairs })
    }

    pub fn pairs(&self) -> &[(usize, NodeId)] {
        &self.pairs
    }
}

/// Loads event `index` into the bound observables.
pub fn load_event(data: &DataSet, index: usize, graph: &mut Graph, bindings: &Bindings) -> Result<(), DataError> {
    if index >= data.len() {
        return Err(DataError::IndexOutOfRange {
            index,
            len: data.len(),
        });
    }
    for &(column, id) in &bindings.pairs {
        graph.set_observable_value(id, data.columns[column][index])?;
    }
    Ok(())
}

/// Reads the `schema` columns, in that order, from a headed CSV file.
///
/// Values use a dot decimal separator and must be finite. A row with the wrong field
/// count is reported at its first missing or surplus field.
pub fn read_csv(path: impl AsRef<Path>, schema: &[&str]) -> Result<DataSet, DataError> {
    read_csv_weighted(path, schema, None)
}

/// As [`read_csv`], additionally taking per-event weights from `weight_column`.
pub fn read_csv_weighted(
    path: impl AsRef<Path>,
    schema: &[&str],
    weight_column: Option<&str>,
) -> Result<DataSet, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut records = reader.records();
    let header = match records.next() {
        Some(h) => h?,
        None => return Err(DataError::EmptyFile),
    };
    let header: Vec<&str> = header.iter().collect();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let picks = schema.iter().map(|n| find(n)).collect::<Result<Vec<_>, _>>()?;
    let weight_pick = weight_column.map(find).transpose()?;

    let mut columns = vec![Vec::new(); schema.len()];
    let mut weights = weight_pick.map(|_| Vec::new());
    for record in records {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(DataError::MalformedNumber {
                line,
                column: record.len().min(header.len()) + 1,
            });
        }
        let parse = |i: usize| -> Result<f64, DataError> {
            record[i]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or(DataError::MalformedNumber { line, column: i + 1 })
        };
        for (col, &i) in columns.iter_mut().zip(&picks) {
            col.push(parse(i)?);
        }
        if let (Some(w), Some(i)) = (weights.as_mut(), weight_pick) {
            w.push(parse(i)?);
        }
    }
    DataSet::with_weights(schema.iter().map(|s| s.to_string()).collect(), columns, weights)
}

/// Writes a headed CSV with LF line endings. Weights, if present, go to a `weight` column.
pub fn write_csv(data: &DataSet, path: impl AsRef<Path>) -> Result<(), DataError> {
    let mut out = BufWriter::new(File::create(path)?);
    let mut header = data.names.join(",");
    if data.weights.is_some() {
        if !header.is_empty() {
            header.push(',');
        }
        header.push_str("weight");
    }
    writeln!(out, "{header}")?;
    let mut line = String::new();
    for i in 0..data.len() {
        line.clear();
        let values = data.columns.iter().map(|c| c[i]).chain(data.weights.as_ref().map(|w| w[i]));
        for (j, v) in values.enumerate() {
            if j > 0 {
                line.push(',');
            }
            // Display for f64 prints the shortest representation that round-trips.
            line.push_str(&v.to_string());
        }
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Grid points per axis used to estimate the density maximum.
const SCAN_POINTS: usize = 2001;
const SAFETY_FACTOR: f64 = 1.1;

/// Draws `n` events from the density of `top` by accept-reject sampling.
///
/// Candidates are uniform over the box spanned by the observable ranges; the envelope
/// is the maximum found on a regular grid times 1.1. The generator is ChaCha8 seeded
/// from `seed`, so a fixed seed reproduces the same dataset. Parameters are left as
/// they are; the observables end up holding the last candidate.
pub fn generate_toy(graph: &mut Graph, top: NodeId, n: usize, seed: u64) -> Result<DataSet, DataError> {
    let observables = graph.observables_of(top)?;
    if observables.is_empty() {
        return Err(DataError::NoObservables);
    }
    let names: Vec<String> = observables
        .iter()
        .map(|&o| graph.node(o).map(|n| n.name().to_string()))
        .collect::<Result<_, _>>()?;
    let ranges: Vec<_> = observables
        .iter()
        .map(|&o| graph.node(o).ok().and_then(|n| n.observable_range()).expect("observable"))
        .collect();

    let dims = observables.len();
    let per_axis = ((SCAN_POINTS as f64).powf(1.0 / dims as f64).ceil() as usize).max(2);
    let mut max = 0.0f64;
    let mut index = vec![0usize; dims];
    'scan: loop {
        for (d, &o) in observables.iter().enumerate() {
            let r = ranges[d];
            let x = r.lo() + r.width() * index[d] as f64 / (per_axis - 1) as f64;
            graph.set_observable_value(o, x)?;
        }
        let v = graph.evaluate_scalar(top)?;
        if v.is_finite() {
            max = max.max(v);
        }
        for slot in index.iter_mut() {
            *slot += 1;
            if *slot < per_axis {
                continue 'scan;
            }
            *slot = 0;
        }
        break;
    }
    if !(max > 0.0) {
        return Err(DataError::DegenerateDensity);
    }
    let mut envelope = max * SAFETY_FACTOR;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut columns = vec![Vec::with_capacity(n); dims];
    let mut point = vec![0.0; dims];
    while columns[0].len() < n {
        for (d, &o) in observables.iter().enumerate() {
            let r = ranges[d];
            point[d] = r.lo() + r.width() * rng.random::<f64>();
            graph.set_observable_value(o, point[d])?;
        }
        let v = graph.evaluate_scalar(top)?;
        if v > envelope {
            log::warn!("density {v} exceeds sampling envelope {envelope}; raising it");
            envelope = v * SAFETY_FACTOR;
        }
        if rng.random::<f64>() * envelope < v {
            for (c, &x) in columns.iter_mut().zip(&point) {
                c.push(x);
            }
        }
    }
    DataSet::new(names, columns)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::PdfSpec;
    use crate::pdf::ObservableRange;

    fn uniform_model() -> (Graph, NodeId) {
        let mut g = Graph::new();
        let x = g.add_observable("x", ObservableRange::new(0.0, 10.0).unwrap()).unwrap();
        let rate = g.add_parameter("rate", 0.0, -1.0, 1.0).unwrap();
        let pdf = g.add_pdf("model", PdfSpec::Exponential { x, rate }).unwrap();
        (g, pdf)
    }

    #[test]
    fn dataset_validation() {
        assert!(matches!(
            DataSet::new(vec!["a".into(), "a".into()], vec![vec![], vec![]]),
            Err(DataError::DuplicateName(_))
        ));
        assert!(matches!(
            DataSet::new(vec!["a".into(), "b".into()], vec![vec![1.0], vec![]]),
            Err(DataError::ColumnLength { .. })
        ));
        assert!(matches!(
            DataSet::with_weights(vec!["a".into()], vec![vec![1.0]], Some(vec![0.0])),
            Err(DataError::NonPositiveWeight { index: 0, .. })
        ));
    }

    #[test]
    fn load_event_sets_value_and_is_idempotent() {
        let (mut g, top) = uniform_model();
        let ds = DataSet::new(vec!["x".into()], vec![vec![1.5, 2.5]]).unwrap();
        let b = Bindings::by_name(&mut g, top, &ds).unwrap();
        load_event(&ds, 1, &mut g, &b).unwrap();
        let x = g.find("x").unwrap();
        assert_eq!(g.node(x).unwrap().cached_value(), 2.5);
        g.evaluate_scalar(top).unwrap();
        load_event(&ds, 1, &mut g, &b).unwrap();
        assert!(g.dirty_nodes().is_empty());
        assert!(matches!(
            load_event(&ds, 2, &mut g, &b),
            Err(DataError::IndexOutOfRange { index: 2, len: 2 })
        ));
    }

    #[test]
    fn bindings_require_observables() {
        let (mut g, top) = uniform_model();
        let rate = g.find("rate").unwrap();
        assert!(matches!(
            Bindings::from_pairs(&g, vec![(0, rate)]),
            Err(DataError::Graph(GraphError::NotAnObservable(_)))
        ));
        let ds = DataSet::new(vec!["y".into()], vec![vec![1.0]]).unwrap();
        assert!(matches!(Bindings::by_name(&mut g, top, &ds), Err(DataError::MissingColumn(_))));
    }

    #[test]
    fn csv_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "").unwrap();
        assert!(matches!(read_csv(&p, &["x"]), Err(DataError::EmptyFile)));
        std::fs::write(&p, "x\n1.0\n2.0\n1,0e0\n").unwrap();
        assert!(matches!(read_csv(&p, &["x"]), Err(DataError::MalformedNumber { line: 4, .. })));
        std::fs::write(&p, "x,y\n1.0,abc\n").unwrap();
        assert!(matches!(
            read_csv(&p, &["x", "y"]),
            Err(DataError::MalformedNumber { line: 2, column: 2 })
        ));
        std::fs::write(&p, "x\nnan\n").unwrap();
        assert!(matches!(read_csv(&p, &["x"]), Err(DataError::MalformedNumber { line: 2, column: 1 })));
        std::fs::write(&p, "x\n1\n").unwrap();
        assert!(matches!(read_csv(&p, &["t"]), Err(DataError::MissingColumn(c)) if c == "t"));
    }

    #[test]
    fn csv_header_only_and_column_selection() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "x,y\n").unwrap();
        assert_eq!(read_csv(&p, &["x"]).unwrap().len(), 0);
        std::fs::write(&p, "a,x,w\n9,1.5,2\n8,2.5,3\n").unwrap();
        let ds = read_csv_weighted(&p, &["x"], Some("w")).unwrap();
        assert_eq!(ds.column(0), &[1.5, 2.5]);
        assert_eq!(ds.weights(), Some(&[2.0, 3.0][..]));
    }

    #[test]
    fn toy_generation() {
        let (mut g, top) = uniform_model();
        assert!(generate_toy(&mut g, top, 0, 1).unwrap().is_empty());
        let a = generate_toy(&mut g, top, 500, 7).unwrap();
        let b = generate_toy(&mut g, top, 500, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_toy(&mut g, top, 500, 8).unwrap());
        assert!(a.column(0).iter().all(|&x| (0.0..10.0).contains(&x)));
    }

    #[test]
    fn degenerate_density() {
        use crate::graph::FunctionOp;
        let mut g = Graph::new();
        let x = g.add_observable("x", ObservableRange::new(0.0, 1.0).unwrap()).unwrap();
        let zero = g.add_parameter("zero", 0.0, -1.0, 1.0).unwrap();
        let f = g.add_function("f", FunctionOp::Product, vec![x, zero]).unwrap();
        assert!(matches!(generate_toy(&mut g, f, 10, 1), Err(DataError::DegenerateDensity)));
    }
}
