//! Granger-causality structure read off fitted componentwise networks.

use ndarray::Array2;

use crate::clstm::ClstmNet;
use crate::cmlp::CmlpNet;
use crate::error::{Error, Result};
use crate::nn::Scalar;
use crate::panel::default_names;
use crate::penalty::group_norms;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    Cmlp,
    Clstm,
}

impl std::str::FromStr for ModelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cmlp" | "mlp" => Ok(ModelFamily::Cmlp),
            "clstm" | "lstm" => Ok(ModelFamily::Clstm),
            other => Err(Error::InvalidArgument(format!(
                "unknown model family `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelFamily::Cmlp => "cmlp",
            ModelFamily::Clstm => "clstm",
        })
    }
}

/// A fitted network of either family.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyNet<T> {
    Cmlp(CmlpNet<T>),
    Clstm(ClstmNet<T>),
}

impl<T: Scalar> AnyNet<T> {
    pub fn family(&self) -> ModelFamily {
        match self {
            AnyNet::Cmlp(_) => ModelFamily::Cmlp,
            AnyNet::Clstm(_) => ModelFamily::Clstm,
        }
    }

    pub fn p(&self) -> usize {
        match self {
            AnyNet::Cmlp(n) => n.shape().p,
            AnyNet::Clstm(n) => n.shape().p,
        }
    }

    fn edge_row(&self) -> (Vec<f64>, Vec<usize>) {
        match self {
            AnyNet::Cmlp(net) => {
                let stats: Vec<f64> = group_norms(&net.input_groups())
                    .iter()
                    .map(|v| v.as_f64())
                    .collect();
                let lags = (0..stats.len()).map(|j| net.selected_lag(j)).collect();
                (stats, lags)
            }
            AnyNet::Clstm(net) => {
                let stats: Vec<f64> = group_norms(&net.input_groups())
                    .iter()
                    .map(|v| v.as_f64())
                    .collect();
                // recurrent models carry no explicit lag; mark present edges with 1
                let lags = stats.iter().map(|&s| usize::from(s > 0.0)).collect();
                (stats, lags)
            }
        }
    }
}

impl<T> From<CmlpNet<T>> for AnyNet<T> {
    fn from(net: CmlpNet<T>) -> Self {
        AnyNet::Cmlp(net)
    }
}

impl<T> From<ClstmNet<T>> for AnyNet<T> {
    fn from(net: ClstmNet<T>) -> Self {
        AnyNet::Clstm(net)
    }
}

/// Edge statistics and decisions; row `i` is the output series, column `j`
/// the input series.
#[derive(Debug, Clone, PartialEq)]
pub struct GrangerGraph {
    pub names: Vec<String>,
    pub edge_stats: Array2<f64>,
    pub adjacency: Array2<bool>,
    /// Largest lag with a nonzero input block; 0 when there is no edge.
    pub selected_lag: Array2<usize>,
}

impl GrangerGraph {
    pub fn empty(names: Vec<String>) -> Self {
        let p = names.len();
        GrangerGraph {
            names,
            edge_stats: Array2::zeros((p, p)),
            adjacency: Array2::from_elem((p, p), false),
            selected_lag: Array2::zeros((p, p)),
        }
    }

    /// Builds a graph from statistics and lags, deriving the adjacency.
    pub fn from_parts(
        names: Vec<String>,
        edge_stats: Array2<f64>,
        selected_lag: Array2<usize>,
    ) -> Result<Self> {
        let p = names.len();
        if edge_stats.dim() != (p, p) || selected_lag.dim() != (p, p) {
            return Err(Error::Shape(format!("graph matrices must be {p} x {p}")));
        }
        if edge_stats.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "edge statistics must be finite and nonnegative".into(),
            ));
        }
        let adjacency = edge_stats.mapv(|v| v > 0.0);
        if adjacency
            .iter()
            .zip(selected_lag.iter())
            .any(|(&a, &l)| a != (l > 0))
        {
            return Err(Error::InvalidArgument(
                "selected lag must be zero exactly where there is no edge".into(),
            ));
        }
        Ok(GrangerGraph {
            names,
            edge_stats,
            adjacency,
            selected_lag,
        })
    }

    pub fn p(&self) -> usize {
        self.names.len()
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.iter().filter(|a| **a).count()
    }

    /// Graph with series relabeled so that new index `k` is old `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let p = self.p();
        GrangerGraph {
            names: perm.iter().map(|&k| self.names[k].clone()).collect(),
            edge_stats: Array2::from_shape_fn((p, p), |(i, j)| self.edge_stats[[perm[i], perm[j]]]),
            adjacency: Array2::from_shape_fn((p, p), |(i, j)| self.adjacency[[perm[i], perm[j]]]),
            selected_lag: Array2::from_shape_fn((p, p), |(i, j)| {
                self.selected_lag[[perm[i], perm[j]]]
            }),
        }
    }
}

/// Collects per-output edge statistics from `p` fitted networks, network
/// `i` modelling series `i`.
pub fn extract_graph<T: Scalar>(
    models: &[AnyNet<T>],
    names: Option<&[String]>,
) -> Result<GrangerGraph> {
    let p = models.len();
    if p == 0 {
        return Err(Error::InvalidArgument("no models given".into()));
    }
    let family = models[0].family();
    if models.iter().any(|m| m.family() != family) {
        return Err(Error::InvalidArgument(
            "models mix cMLP and cLSTM families".into(),
        ));
    }
    if let Some(bad) = models.iter().position(|m| m.p() != p) {
        return Err(Error::Shape(format!(
            "model {bad} has {} inputs but {p} models were given",
            models[bad].p()
        )));
    }
    let names = match names {
        Some(n) if n.len() == p => n.to_vec(),
        Some(n) => {
            return Err(Error::Shape(format!("{} names for {p} series", n.len())));
        }
        None => default_names(p),
    };
    let mut graph = GrangerGraph::empty(names);
    for (i, model) in models.iter().enumerate() {
        let (stats, lags) = model.edge_row();
        for j in 0..p {
            graph.edge_stats[[i, j]] = stats[j];
            graph.adjacency[[i, j]] = stats[j] > 0.0;
            graph.selected_lag[[i, j]] = lags[j];
        }
    }
    Ok(graph)
}

/// Row-standardized edge weights, optionally averaged over merged nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedGraph {
    /// Node labels after merging.
    pub labels: Vec<String>,
    /// Merged node of every raw series.
    pub grouping: Vec<usize>,
    pub edge_weights: Array2<f64>,
}

/// Divides every row by its maximum (all-zero rows stay zero).
pub fn standardize_rows(stats: &Array2<f64>) -> Array2<f64> {
    let mut out = stats.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(0.0, f64::max);
        if max > 0.0 {
            row.mapv_inplace(|v| v / max);
        }
    }
    out
}

/// Standardizes each output row by its largest edge, then averages edges
/// over merged groups of series. `groups` must partition `0..p`.
pub fn standardize_graph(
    graph: &GrangerGraph,
    groups: Option<&[(String, Vec<usize>)]>,
) -> Result<StandardizedGraph> {
    let p = graph.p();
    let rows = standardize_rows(&graph.edge_stats);
    let Some(groups) = groups else {
        return Ok(StandardizedGraph {
            labels: graph.names.clone(),
            grouping: (0..p).collect(),
            edge_weights: rows,
        });
    };
    let mut grouping = vec![usize::MAX; p];
    for (g, (_, members)) in groups.iter().enumerate() {
        if members.is_empty() {
            return Err(Error::InvalidArgument(format!("group {g} is empty")));
        }
        for &j in members {
            if j >= p || grouping[j] != usize::MAX {
                return Err(Error::InvalidArgument(format!(
                    "grouping is not a partition of the {p} series (index {j})"
                )));
            }
            grouping[j] = g;
        }
    }
    if grouping.contains(&usize::MAX) {
        return Err(Error::InvalidArgument(
            "grouping does not cover every series".into(),
        ));
    }
    let q = groups.len();
    let rows = &rows;
    let edge_weights = Array2::from_shape_fn((q, q), |(a, b)| {
        let (ra, rb) = (&groups[a].1, &groups[b].1);
        let sum: f64 = ra
            .iter()
            .flat_map(|&i| rb.iter().map(move |&j| rows[[i, j]]))
            .sum();
        sum / (ra.len() * rb.len()) as f64
    });
    Ok(StandardizedGraph {
        labels: groups.iter().map(|(l, _)| l.clone()).collect(),
        grouping,
        edge_weights,
    })
}
