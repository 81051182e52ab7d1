//! Files: panels (CSV, DREAM3-style TSV), graphs, sweeps, models, curves and
//! run configurations. Every writer goes through a temporary file and an
//! atomic rename.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::clstm::{ClstmNet, ClstmShape};
use crate::cmlp::{CmlpNet, CmlpShape};
use crate::error::{Error, Result};
use crate::eval::{
    CurveSummary, ModelTemplate, SweepResult, DEFAULT_GRID_POINTS, DEFAULT_GRID_RATIO,
};
use crate::granger::{AnyNet, GrangerGraph, ModelFamily, StandardizedGraph};
use crate::nn::{Activation, RngSeed, Scalar};
use crate::optimizer::FitConfig;
use crate::panel::{Scaling, TimeSeriesPanel};
use crate::penalty::{PenaltyFamily, PenaltySpec};

pub const FORMAT_VERSION: u32 = 1;
const GRAPH_FORMAT: &str = "neurogranger-graph";
const STANDARDIZED_FORMAT: &str = "neurogranger-standardized-graph";
const SWEEP_FORMAT: &str = "neurogranger-sweep";
const MODELS_FORMAT: &str = "neurogranger-models";
const CURVE_HEADER: &str = "# neurogranger-curve 1";

/// Writes `bytes` to `path` via a sibling temporary file and rename, so a
/// failed write never leaves a partial file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------- panels

/// Reads a comma-separated panel: a header of series names, an optional
/// `replicate` column whose value changes start a new replicate, and
/// numeric cells.
pub fn load_panel_csv<T: Scalar>(path: &Path) -> Result<TimeSeriesPanel<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_panel(path, file, b',', None)
}

fn parse_panel<T: Scalar, R: std::io::Read>(
    path: &Path,
    reader: R,
    delimiter: u8,
    time_column: Option<&str>,
) -> Result<TimeSeriesPanel<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(Error::EmptyPanel);
    }
    let rep_col = header
        .iter()
        .position(|h| h.eq_ignore_ascii_case("replicate"));
    let value_cols: Vec<usize> = (0..header.len()).filter(|&c| Some(c) != rep_col).collect();
    let names: Vec<String> = value_cols.iter().map(|&c| header[c].to_string()).collect();
    if let Some(time) = time_column {
        if names.first().map(|n| n.as_str()) != Some(time) {
            return Err(Error::format(
                path,
                format!("first column must be `{time}`"),
            ));
        }
    }

    let mut groups: Vec<(String, Vec<Vec<f64>>)> = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let line = idx + 2;
        let record = record.map_err(|e| Error::format(path, format!("line {line}: {e}")))?;
        let mut row = Vec::with_capacity(value_cols.len());
        for (k, &c) in value_cols.iter().enumerate() {
            let cell = &record[c];
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                row: line,
                col: c + 1,
                msg: format!("`{cell}` is not a number (column `{}`)", names[k]),
            })?;
            row.push(v);
        }
        let key = rep_col.map(|c| record[c].to_string()).unwrap_or_default();
        match groups.last_mut() {
            Some((last, rows)) if *last == key => rows.push(row),
            _ => groups.push((key, vec![row])),
        }
    }
    if groups.is_empty() {
        return Err(Error::EmptyPanel);
    }
    let to_array = |rows: &[Vec<f64>]| {
        Array2::from_shape_fn((rows.len(), rows[0].len()), |(t, j)| T::of(rows[t][j]))
    };
    let replicates = groups.iter().map(|(_, rows)| to_array(rows)).collect();
    TimeSeriesPanel::new(names, replicates)
}

/// Writes a panel as CSV; a `replicate` column (1-based) is added when the
/// panel has more than one replicate.
pub fn save_panel_csv<T: Scalar>(panel: &TimeSeriesPanel<T>, path: &Path) -> Result<()> {
    write_atomic(path, panel_csv_string(panel).as_bytes())
}

pub fn panel_csv_string<T: Scalar>(panel: &TimeSeriesPanel<T>) -> String {
    let multi = panel.num_replicates() > 1;
    let mut out = String::new();
    if multi {
        out.push_str("replicate,");
    }
    out.push_str(&panel.names().join(","));
    out.push('\n');
    for (r, rep) in panel.replicates().iter().enumerate() {
        for row in rep.rows() {
            if multi {
                let _ = write!(out, "{},", r + 1);
            }
            let cells: Vec<String> = row.iter().map(|v| format_float(v.as_f64())).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
    }
    out
}

/// Shortest decimal that parses back to the same `f64`.
fn format_float(v: f64) -> String {
    format!("{v:?}")
}

/// Reads a tab-separated file whose first column is `Time`; a decrease of
/// the time value starts a new replicate. Returns the panel (without the
/// time column) and any warnings, such as unequal replicate lengths.
pub fn load_dream3_tsv<T: Scalar>(path: &Path) -> Result<(TimeSeriesPanel<T>, Vec<String>)> {
    let text = read_text(path)?;
    let raw: TimeSeriesPanel<f64> = parse_panel(path, text.as_bytes(), b'\t', Some("Time"))?;
    let data = &raw.replicates()[0];
    if raw.num_replicates() != 1 {
        return Err(Error::format(
            path,
            "`replicate` column is not expected in a Time-indexed file",
        ));
    }
    let names = raw.names()[1..].to_vec();
    if names.is_empty() {
        return Err(Error::format(path, "no series columns after `Time`"));
    }
    let times = data.column(0);
    let mut starts = vec![0];
    for t in 1..times.len() {
        if times[t] < times[t - 1] {
            starts.push(t);
        }
    }
    starts.push(times.len());
    let mut replicates = Vec::new();
    for (r, w) in starts.windows(2).enumerate() {
        let block = data.slice(ndarray::s![w[0]..w[1], ..]);
        let tt = block.column(0);
        if tt.len() > 2 {
            let step = tt[1] - tt[0];
            let tol = 1e-9 * step.abs().max(1.0);
            if tt
                .windows(2)
                .into_iter()
                .any(|d| ((d[1] - d[0]) - step).abs() > tol)
            {
                return Err(Error::format(
                    path,
                    format!("replicate {} has unequally spaced time points", r + 1),
                ));
            }
        }
        replicates.push(block.slice(ndarray::s![.., 1..]).mapv(T::of));
    }
    let mut warnings = Vec::new();
    let first_len = replicates[0].nrows();
    if replicates.iter().any(|r| r.nrows() != first_len) {
        let lens: Vec<String> = replicates.iter().map(|r| r.nrows().to_string()).collect();
        warnings.push(format!("replicate lengths differ: {}", lens.join(", ")));
    }
    Ok((TimeSeriesPanel::new(names, replicates)?, warnings))
}

// ---------------------------------------------------------------- JSON

/// Pretty JSON with every array of scalars kept on one line.
fn to_pretty(value: &Value) -> String {
    fn scalar(v: &Value) -> bool {
        !matches!(v, Value::Array(_) | Value::Object(_))
    }
    fn go(v: &Value, indent: usize, out: &mut String) {
        let pad = "  ".repeat(indent + 1);
        match v {
            Value::Array(items) if items.iter().all(scalar) => {
                out.push_str(&serde_json::to_string(v).unwrap());
            }
            Value::Array(items) => {
                out.push_str("[\n");
                for (k, item) in items.iter().enumerate() {
                    out.push_str(&pad);
                    go(item, indent + 1, out);
                    out.push_str(if k + 1 < items.len() { ",\n" } else { "\n" });
                }
                out.push_str(&"  ".repeat(indent));
                out.push(']');
            }
            Value::Object(map) if !map.is_empty() => {
                out.push_str("{\n");
                for (k, (key, item)) in map.iter().enumerate() {
                    out.push_str(&pad);
                    out.push_str(&serde_json::to_string(key).unwrap());
                    out.push_str(": ");
                    go(item, indent + 1, out);
                    out.push_str(if k + 1 < map.len() { ",\n" } else { "\n" });
                }
                out.push_str(&"  ".repeat(indent));
                out.push('}');
            }
            other => out.push_str(&serde_json::to_string(other).unwrap()),
        }
    }
    let mut out = String::new();
    go(value, 0, &mut out);
    out.push('\n');
    out
}

fn write_json<S: Serialize>(doc: &S, path: &Path) -> Result<()> {
    let value = serde_json::to_value(doc).map_err(|e| Error::format(path, e.to_string()))?;
    write_atomic(path, to_pretty(&value).as_bytes())
}

#[derive(Deserialize)]
struct Header {
    format: String,
    version: u32,
}

fn read_json<D: for<'de> Deserialize<'de>>(path: &Path, format: &str) -> Result<D> {
    let text = read_text(path)?;
    let header: Header =
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    if header.format != format {
        return Err(Error::format(
            path,
            format!("expected a `{format}` document, found `{}`", header.format),
        ));
    }
    if header.version != FORMAT_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported version {}", header.version),
        ));
    }
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

fn rows<T: Clone>(m: &Array2<T>) -> Vec<Vec<T>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn matrix<T: Clone>(rows: &[Vec<T>], p: usize, what: &str) -> Result<Array2<T>> {
    if rows.len() != p || rows.iter().any(|r| r.len() != p) {
        return Err(Error::Shape(format!("{what} must be {p} x {p}")));
    }
    Ok(Array2::from_shape_fn((p, p), |(i, j)| rows[i][j].clone()))
}

#[derive(Serialize, Deserialize)]
struct GraphBody {
    edge_stats: Vec<Vec<f64>>,
    adjacency: Vec<Vec<bool>>,
    selected_lag: Vec<Vec<usize>>,
}

impl GraphBody {
    fn of(g: &GrangerGraph) -> Self {
        GraphBody {
            edge_stats: rows(&g.edge_stats),
            adjacency: rows(&g.adjacency),
            selected_lag: rows(&g.selected_lag),
        }
    }

    fn into_graph(self, names: Vec<String>) -> Result<GrangerGraph> {
        let p = names.len();
        let g = GrangerGraph::from_parts(
            names,
            matrix(&self.edge_stats, p, "edge_stats")?,
            matrix(&self.selected_lag, p, "selected_lag")?,
        )?;
        if g.adjacency != matrix(&self.adjacency, p, "adjacency")? {
            return Err(Error::InvalidArgument(
                "adjacency disagrees with nonzero edge statistics".into(),
            ));
        }
        Ok(g)
    }
}

#[derive(Serialize, Deserialize)]
struct GraphDoc {
    format: String,
    version: u32,
    p: usize,
    names: Vec<String>,
    #[serde(flatten)]
    body: GraphBody,
}

pub fn export_graph(graph: &GrangerGraph, path: &Path) -> Result<()> {
    write_json(&graph_doc(graph), path)
}

fn graph_doc(graph: &GrangerGraph) -> GraphDoc {
    GraphDoc {
        format: GRAPH_FORMAT.into(),
        version: FORMAT_VERSION,
        p: graph.p(),
        names: graph.names.clone(),
        body: GraphBody::of(graph),
    }
}

pub fn graph_to_string(graph: &GrangerGraph) -> String {
    to_pretty(&serde_json::to_value(graph_doc(graph)).expect("graph serializes"))
}

pub fn import_graph(path: &Path) -> Result<GrangerGraph> {
    let doc: GraphDoc = read_json(path, GRAPH_FORMAT)?;
    if doc.names.len() != doc.p {
        return Err(Error::format(path, "names do not match p"));
    }
    doc.body
        .into_graph(doc.names)
        .map_err(|e| Error::format(path, e.to_string()))
}

#[derive(Serialize, Deserialize)]
struct StandardizedDoc {
    format: String,
    version: u32,
    labels: Vec<String>,
    grouping: Vec<usize>,
    edge_weights: Vec<Vec<f64>>,
}

pub fn export_standardized_graph(graph: &StandardizedGraph, path: &Path) -> Result<()> {
    write_json(
        &StandardizedDoc {
            format: STANDARDIZED_FORMAT.into(),
            version: FORMAT_VERSION,
            labels: graph.labels.clone(),
            grouping: graph.grouping.clone(),
            edge_weights: rows(&graph.edge_weights),
        },
        path,
    )
}

pub fn import_standardized_graph(path: &Path) -> Result<StandardizedGraph> {
    let doc: StandardizedDoc = read_json(path, STANDARDIZED_FORMAT)?;
    let q = doc.labels.len();
    if doc.grouping.iter().any(|&g| g >= q) {
        return Err(Error::format(path, "grouping refers to a missing label"));
    }
    Ok(StandardizedGraph {
        edge_weights: matrix(&doc.edge_weights, q, "edge_weights")
            .map_err(|e| Error::format(path, e.to_string()))?,
        labels: doc.labels,
        grouping: doc.grouping,
    })
}

#[derive(Serialize, Deserialize)]
struct SweepDoc {
    format: String,
    version: u32,
    p: usize,
    names: Vec<String>,
    include_diagonal: bool,
    lambdas: Vec<f64>,
    iterations: Vec<Vec<usize>>,
    graphs: Vec<GraphBody>,
    ground_truth: Option<GraphBody>,
}

pub fn export_sweep(sweep: &SweepResult, path: &Path) -> Result<()> {
    write_json(&sweep_doc(sweep)?, path)
}

fn sweep_doc(sweep: &SweepResult) -> Result<SweepDoc> {
    sweep.validate()?;
    let names = sweep.graphs[0].names.clone();
    Ok(SweepDoc {
        format: SWEEP_FORMAT.into(),
        version: FORMAT_VERSION,
        p: names.len(),
        names,
        include_diagonal: sweep.include_diagonal,
        lambdas: sweep.lambdas.clone(),
        iterations: sweep.iterations.clone(),
        graphs: sweep.graphs.iter().map(GraphBody::of).collect(),
        ground_truth: sweep.ground_truth.as_ref().map(GraphBody::of),
    })
}

pub fn sweep_to_string(sweep: &SweepResult) -> Result<String> {
    Ok(to_pretty(
        &serde_json::to_value(sweep_doc(sweep)?).expect("sweep serializes"),
    ))
}

pub fn import_sweep(path: &Path) -> Result<SweepResult> {
    let doc: SweepDoc = read_json(path, SWEEP_FORMAT)?;
    let bad = |e: Error| Error::format(path, e.to_string());
    let graphs = doc
        .graphs
        .into_iter()
        .map(|g| g.into_graph(doc.names.clone()))
        .collect::<Result<Vec<_>>>()
        .map_err(bad)?;
    let ground_truth = doc
        .ground_truth
        .map(|g| g.into_graph(doc.names.clone()))
        .transpose()
        .map_err(bad)?;
    let sweep = SweepResult {
        lambdas: doc.lambdas,
        graphs,
        ground_truth,
        include_diagonal: doc.include_diagonal,
        iterations: doc.iterations,
    };
    sweep.validate().map_err(bad)?;
    Ok(sweep)
}

// ---------------------------------------------------------------- models

#[derive(Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
enum NetDoc {
    Cmlp {
        shape: CmlpShape,
        first_layer: Vec<Vec<f64>>,
        hidden_layers: Vec<Vec<Vec<f64>>>,
        biases: Vec<Vec<f64>>,
        output: Vec<f64>,
    },
    Clstm {
        shape: ClstmShape,
        input: Vec<Vec<f64>>,
        recurrent: Vec<Vec<f64>>,
        bias: Vec<f64>,
        output: Vec<f64>,
    },
}

fn vec_f64<T: Scalar>(a: &Array1<T>) -> Vec<f64> {
    a.iter().map(|v| v.as_f64()).collect()
}

fn mat_f64<T: Scalar>(a: &Array2<T>) -> Vec<Vec<f64>> {
    a.rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v.as_f64()).collect())
        .collect()
}

fn arr1<T: Scalar>(v: &[f64]) -> Array1<T> {
    v.iter().map(|x| T::of(*x)).collect()
}

fn arr2<T: Scalar>(rows: &[Vec<f64>]) -> Result<Array2<T>> {
    let ncols = rows.first().map(|r| r.len()).unwrap_or(0);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Shape("ragged matrix".into()));
    }
    Ok(Array2::from_shape_fn((rows.len(), ncols), |(i, j)| {
        T::of(rows[i][j])
    }))
}

impl NetDoc {
    fn of<T: Scalar>(net: &AnyNet<T>) -> Self {
        match net {
            AnyNet::Cmlp(n) => NetDoc::Cmlp {
                shape: n.shape(),
                first_layer: mat_f64(n.first_layer()),
                hidden_layers: n.hidden_layers().iter().map(mat_f64).collect(),
                biases: n.biases().iter().map(vec_f64).collect(),
                output: vec_f64(n.output_weights()),
            },
            AnyNet::Clstm(n) => NetDoc::Clstm {
                shape: n.shape(),
                input: mat_f64(n.input_weights()),
                recurrent: mat_f64(n.recurrent_weights()),
                bias: vec_f64(n.gate_biases()),
                output: vec_f64(n.output_weights()),
            },
        }
    }

    fn into_net<T: Scalar>(self) -> Result<AnyNet<T>> {
        Ok(match self {
            NetDoc::Cmlp {
                shape,
                first_layer,
                hidden_layers,
                biases,
                output,
            } => CmlpNet::from_parts(
                shape,
                arr2(&first_layer)?,
                hidden_layers
                    .iter()
                    .map(|h| arr2(h))
                    .collect::<Result<_>>()?,
                biases.iter().map(|b| arr1(b)).collect(),
                arr1(&output),
            )?
            .into(),
            NetDoc::Clstm {
                shape,
                input,
                recurrent,
                bias,
                output,
            } => ClstmNet::from_parts(
                shape,
                arr2(&input)?,
                arr2(&recurrent)?,
                arr1(&bias),
                arr1(&output),
            )?
            .into(),
        })
    }
}

/// The `p` networks of one fit together with how they were obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSet<T> {
    pub names: Vec<String>,
    pub penalty: PenaltyFamily,
    pub lambda: f64,
    pub scaling: Option<Scaling<f64>>,
    pub models: Vec<AnyNet<T>>,
}

#[derive(Serialize, Deserialize)]
struct ModelsDoc {
    format: String,
    version: u32,
    names: Vec<String>,
    penalty: PenaltyFamily,
    lambda: f64,
    scaling: Option<Scaling<f64>>,
    models: Vec<NetDoc>,
}

pub fn export_models<T: Scalar>(set: &ModelSet<T>, path: &Path) -> Result<()> {
    write_json(
        &ModelsDoc {
            format: MODELS_FORMAT.into(),
            version: FORMAT_VERSION,
            names: set.names.clone(),
            penalty: set.penalty,
            lambda: set.lambda,
            scaling: set.scaling.clone(),
            models: set.models.iter().map(NetDoc::of).collect(),
        },
        path,
    )
}

pub fn import_models<T: Scalar>(path: &Path) -> Result<ModelSet<T>> {
    let doc: ModelsDoc = read_json(path, MODELS_FORMAT)?;
    let models = doc
        .models
        .into_iter()
        .map(NetDoc::into_net)
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::format(path, e.to_string()))?;
    if models.iter().any(|m| m.p() != doc.names.len()) {
        return Err(Error::format(
            path,
            "model input count does not match names",
        ));
    }
    Ok(ModelSet {
        names: doc.names,
        penalty: doc.penalty,
        lambda: doc.lambda,
        scaling: doc.scaling,
        models,
    })
}

// ---------------------------------------------------------------- curves

/// Curve file: a header line, `auroc=` and `aupr=` lines, then a
/// `kind,x,y` table with `roc` rows `(fpr, tpr)` and `pr` rows
/// `(recall, precision)`.
pub fn curve_to_string(curve: &CurveSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{CURVE_HEADER}");
    let _ = writeln!(out, "auroc={}", format_float(curve.auroc));
    let _ = writeln!(out, "aupr={}", format_float(curve.aupr));
    out.push_str("kind,x,y\n");
    for (kind, points) in [("roc", &curve.roc_points), ("pr", &curve.pr_points)] {
        for (x, y) in points {
            let _ = writeln!(out, "{kind},{},{}", format_float(*x), format_float(*y));
        }
    }
    out
}

pub fn export_curve(curve: &CurveSummary, path: &Path) -> Result<()> {
    write_atomic(path, curve_to_string(curve).as_bytes())
}

pub fn import_curve(path: &Path) -> Result<CurveSummary> {
    let text = read_text(path)?;
    let bad = |line: usize, msg: &str| Error::format(path, format!("line {line}: {msg}"));
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    if lines.next().map(|(_, l)| l) != Some(CURVE_HEADER) {
        return Err(bad(1, "missing curve header"));
    }
    let mut area = |key: &str| -> Result<f64> {
        let (n, l) = lines.next().ok_or_else(|| bad(0, "truncated file"))?;
        l.strip_prefix(key)
            .and_then(|v| v.strip_prefix('='))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad(n, &format!("expected `{key}=<number>`")))
    };
    let auroc = area("auroc")?;
    let aupr = area("aupr")?;
    match lines.next() {
        Some((_, "kind,x,y")) => {}
        other => {
            return Err(bad(
                other.map(|(n, _)| n).unwrap_or(0),
                "expected `kind,x,y`",
            ))
        }
    }
    let (mut roc_points, mut pr_points) = (Vec::new(), Vec::new());
    for (n, l) in lines {
        let parts: Vec<&str> = l.split(',').collect();
        let [kind, x, y] = parts[..] else {
            return Err(bad(n, "expected three fields"));
        };
        let point = (
            x.parse().map_err(|_| bad(n, "bad x"))?,
            y.parse().map_err(|_| bad(n, "bad y"))?,
        );
        match kind {
            "roc" => roc_points.push(point),
            "pr" => pr_points.push(point),
            _ => return Err(bad(n, "kind must be roc or pr")),
        }
    }
    Ok(CurveSummary {
        roc_points,
        pr_points,
        auroc,
        aupr,
    })
}

// ---------------------------------------------------------------- config

/// Everything a CLI run needs besides file paths.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub family: ModelFamily,
    pub hidden: usize,
    pub lag: usize,
    pub layers: usize,
    pub activation: Activation,
    pub forget_bias: f64,
    pub penalty: PenaltyFamily,
    pub mixed_alpha: Option<f64>,
    /// Penalty strength for single fits.
    pub lambda: Option<f64>,
    /// Explicit sweep grid; when absent a default grid is built from λ_max.
    pub lambdas: Option<Vec<f64>>,
    pub grid_points: usize,
    pub grid_ratio: f64,
    pub fit: FitConfig,
    pub segment_len: Option<usize>,
    pub include_diagonal: bool,
    pub standardize: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            family: ModelFamily::Cmlp,
            hidden: 10,
            lag: 5,
            layers: 1,
            activation: Activation::Tanh,
            forget_bias: 0.0,
            penalty: PenaltyFamily::Hier,
            mixed_alpha: None,
            lambda: None,
            lambdas: None,
            grid_points: DEFAULT_GRID_POINTS,
            grid_ratio: DEFAULT_GRID_RATIO,
            fit: FitConfig::default(),
            segment_len: None,
            include_diagonal: false,
            standardize: true,
        }
    }
}

pub const RUN_CONFIG_KEYS: &[&str] = &[
    "family",
    "hidden",
    "lag",
    "layers",
    "activation",
    "forget_bias",
    "penalty",
    "mixed_alpha",
    "lambda",
    "lambdas",
    "grid_points",
    "grid_ratio",
    "max_iters",
    "initial_step",
    "backtrack_factor",
    "growth_factor",
    "tolerance",
    "window",
    "max_halvings",
    "seed",
    "segment_len",
    "include_diagonal",
    "standardize",
];

fn parse_value<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("invalid value `{value}` for `{key}`")))
}

fn parse_optional<V: std::str::FromStr>(key: &str, value: &str) -> Result<Option<V>> {
    match value.trim() {
        "" | "none" => Ok(None),
        v => parse_value(key, v).map(Some),
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        v => Err(Error::InvalidArgument(format!(
            "invalid value `{v}` for `{key}`"
        ))),
    }
}

impl RunConfig {
    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "family" => self.family = value.trim().parse()?,
            "hidden" => self.hidden = parse_value(key, value)?,
            "lag" => self.lag = parse_value(key, value)?,
            "layers" => self.layers = parse_value(key, value)?,
            "activation" => self.activation = value.trim().parse()?,
            "forget_bias" => self.forget_bias = parse_value(key, value)?,
            "penalty" => self.penalty = value.trim().parse()?,
            "mixed_alpha" => self.mixed_alpha = parse_optional(key, value)?,
            "lambda" => self.lambda = parse_optional(key, value)?,
            "lambdas" => {
                self.lambdas = match value.trim() {
                    "" | "none" => None,
                    v => Some(
                        v.split(',')
                            .map(|x| parse_value(key, x))
                            .collect::<Result<_>>()?,
                    ),
                }
            }
            "grid_points" => self.grid_points = parse_value(key, value)?,
            "grid_ratio" => self.grid_ratio = parse_value(key, value)?,
            "max_iters" => self.fit.max_iters = parse_value(key, value)?,
            "initial_step" => self.fit.initial_step = parse_value(key, value)?,
            "backtrack_factor" => self.fit.backtrack_factor = parse_value(key, value)?,
            "growth_factor" => self.fit.growth_factor = parse_value(key, value)?,
            "tolerance" => self.fit.tolerance = parse_value(key, value)?,
            "window" => self.fit.window = parse_value(key, value)?,
            "max_halvings" => self.fit.max_halvings = parse_value(key, value)?,
            "seed" => self.fit.seed = RngSeed(parse_value(key, value)?),
            "segment_len" => self.segment_len = parse_optional(key, value)?,
            "include_diagonal" => self.include_diagonal = parse_bool(key, value)?,
            "standardize" => self.standardize = parse_bool(key, value)?,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown config key `{other}`"
                )))
            }
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults; `#` starts a comment.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("line {}: expected `key = value`", n + 1))
            })?;
            cfg.set(key.trim(), value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse_str(&read_text(path)?).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn to_text(&self) -> String {
        let opt = |v: Option<String>| v.unwrap_or_else(|| "none".into());
        let mut out = String::new();
        for key in RUN_CONFIG_KEYS {
            let value = match *key {
                "family" => self.family.to_string(),
                "hidden" => self.hidden.to_string(),
                "lag" => self.lag.to_string(),
                "layers" => self.layers.to_string(),
                "activation" => self.activation.to_string(),
                "forget_bias" => format_float(self.forget_bias),
                "penalty" => self.penalty.to_string(),
                "mixed_alpha" => opt(self.mixed_alpha.map(format_float)),
                "lambda" => opt(self.lambda.map(format_float)),
                "lambdas" => opt(self.lambdas.as_ref().map(|ls| {
                    ls.iter()
                        .map(|l| format_float(*l))
                        .collect::<Vec<_>>()
                        .join(",")
                })),
                "grid_points" => self.grid_points.to_string(),
                "grid_ratio" => format_float(self.grid_ratio),
                "max_iters" => self.fit.max_iters.to_string(),
                "initial_step" => format_float(self.fit.initial_step),
                "backtrack_factor" => format_float(self.fit.backtrack_factor),
                "growth_factor" => format_float(self.fit.growth_factor),
                "tolerance" => format_float(self.fit.tolerance),
                "window" => self.fit.window.to_string(),
                "max_halvings" => self.fit.max_halvings.to_string(),
                "seed" => self.fit.seed.0.to_string(),
                "segment_len" => opt(self.segment_len.map(|s| s.to_string())),
                "include_diagonal" => self.include_diagonal.to_string(),
                "standardize" => self.standardize.to_string(),
                _ => unreachable!(),
            };
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.fit.validate()?;
        let invalid = |msg: &str| Err(Error::InvalidArgument(msg.into()));
        if self.hidden == 0 || self.lag == 0 || self.layers == 0 {
            return invalid("hidden, lag and layers must be at least 1");
        }
        if self.family == ModelFamily::Clstm && self.penalty != PenaltyFamily::Group {
            return invalid("the clstm family supports only the group penalty");
        }
        if self.mixed_alpha.is_some() && self.penalty != PenaltyFamily::Mixed {
            return invalid("mixed_alpha applies only to the mixed penalty");
        }
        self.penalty_spec::<f64>(0.0)?;
        if let Some(l) = self.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return invalid("lambda must be finite and nonnegative");
            }
        }
        if let Some(ls) = &self.lambdas {
            if ls.is_empty()
                || ls.iter().any(|l| !(*l > 0.0 && l.is_finite()))
                || ls.windows(2).any(|w| w[1] >= w[0])
            {
                return invalid("lambdas must be positive and strictly decreasing");
            }
        }
        if self.grid_points == 0 || !(self.grid_ratio > 1.0) {
            return invalid("grid_points must be at least 1 and grid_ratio above 1");
        }
        if matches!(self.segment_len, Some(s) if s < 2) {
            return invalid("segment_len must be at least 2");
        }
        if !self.forget_bias.is_finite() {
            return invalid("forget_bias must be finite");
        }
        Ok(())
    }

    pub fn template(&self) -> ModelTemplate {
        match self.family {
            ModelFamily::Cmlp => ModelTemplate::Cmlp {
                lag: self.lag,
                hidden: self.hidden,
                layers: self.layers,
                activation: self.activation,
            },
            ModelFamily::Clstm => ModelTemplate::Clstm {
                hidden: self.hidden,
                forget_bias: self.forget_bias,
                segment_len: self.segment_len,
            },
        }
    }

    pub fn penalty_spec<T: Scalar>(&self, lambda: f64) -> Result<PenaltySpec<T>> {
        PenaltySpec::new(self.penalty, T::of(lambda), self.mixed_alpha.map(T::of))
    }
}
