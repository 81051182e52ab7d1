//! λ sweeps over all componentwise fits and ROC/PR evaluation.

use ndarray::Array2;
use rayon::prelude::*;

use crate::clstm::{segment_panel, ClstmNet, ClstmShape};
use crate::cmlp::{CmlpNet, CmlpShape};
use crate::error::{Error, Result};
use crate::granger::{extract_graph, AnyNet, GrangerGraph, ModelFamily};
use crate::model::ComponentwiseModel;
use crate::nn::{Activation, RngSeed, Scalar};
use crate::optimizer::{fit_prepared, lambda_max, FitConfig};
use crate::panel::TimeSeriesPanel;
use crate::penalty::PenaltySpec;

pub const DEFAULT_GRID_POINTS: usize = 20;
pub const DEFAULT_GRID_RATIO: f64 = 100.0;

/// Architecture of the `p` networks fitted in a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelTemplate {
    Cmlp {
        lag: usize,
        hidden: usize,
        layers: usize,
        activation: Activation,
    },
    Clstm {
        hidden: usize,
        forget_bias: f64,
        /// Truncation length for BPTT; `None` trains on whole replicates.
        segment_len: Option<usize>,
    },
}

impl ModelTemplate {
    pub fn cmlp(lag: usize, hidden: usize) -> Self {
        ModelTemplate::Cmlp {
            lag,
            hidden,
            layers: 1,
            activation: Activation::Tanh,
        }
    }

    pub fn clstm(hidden: usize) -> Self {
        ModelTemplate::Clstm {
            hidden,
            forget_bias: 0.0,
            segment_len: None,
        }
    }

    pub fn family(&self) -> ModelFamily {
        match self {
            ModelTemplate::Cmlp { .. } => ModelFamily::Cmlp,
            ModelTemplate::Clstm { .. } => ModelFamily::Clstm,
        }
    }

    fn cmlp_shape(&self, p: usize) -> Option<CmlpShape> {
        match *self {
            ModelTemplate::Cmlp {
                lag,
                hidden,
                layers,
                activation,
            } => Some(
                CmlpShape::new(p, lag, hidden)
                    .with_layers(layers)
                    .with_activation(activation),
            ),
            ModelTemplate::Clstm { .. } => None,
        }
    }

    fn clstm_shape(&self, p: usize) -> Option<ClstmShape> {
        match *self {
            ModelTemplate::Clstm {
                hidden,
                forget_bias,
                ..
            } => Some(ClstmShape::new(p, hidden).with_forget_bias(forget_bias)),
            ModelTemplate::Cmlp { .. } => None,
        }
    }

    /// Freshly initialized network for output series `target`.
    pub fn init<T: Scalar>(&self, p: usize, target: usize, seed: RngSeed) -> Result<AnyNet<T>> {
        let seed = seed.derive(target as u64);
        match self {
            ModelTemplate::Cmlp { .. } => {
                Ok(CmlpNet::init(self.cmlp_shape(p).unwrap(), seed)?.into())
            }
            ModelTemplate::Clstm { .. } => {
                Ok(ClstmNet::init(self.clstm_shape(p).unwrap(), seed)?.into())
            }
        }
    }

    fn training_panel<T: Scalar>(&self, panel: &TimeSeriesPanel<T>) -> Result<TimeSeriesPanel<T>> {
        match *self {
            ModelTemplate::Clstm {
                segment_len: Some(len),
                ..
            } => segment_panel(panel, len),
            _ => Ok(panel.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// Strictly decreasing.
    pub lambdas: Vec<f64>,
    pub graphs: Vec<GrangerGraph>,
    pub ground_truth: Option<GrangerGraph>,
    pub include_diagonal: bool,
    /// `iterations[l][i]`: optimizer iterations for series `i` at `lambdas[l]`.
    pub iterations: Vec<Vec<usize>>,
}

impl SweepResult {
    pub fn with_ground_truth(mut self, truth: GrangerGraph) -> Self {
        self.ground_truth = Some(truth);
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_grid(&self.lambdas)?;
        if self.graphs.len() != self.lambdas.len() {
            return Err(Error::Shape(format!(
                "{} graphs for {} lambdas",
                self.graphs.len(),
                self.lambdas.len()
            )));
        }
        let p = self.graphs[0].p();
        let truth_p = self.ground_truth.iter().map(|g| g.p());
        if self
            .graphs
            .iter()
            .map(|g| g.p())
            .chain(truth_p)
            .any(|q| q != p)
        {
            return Err(Error::Shape("sweep graphs differ in p".into()));
        }
        Ok(())
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("lambda grid is empty".into()));
    }
    if grid.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
        return Err(Error::InvalidArgument(
            "lambda grid must be positive and finite".into(),
        ));
    }
    if grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument(
            "lambda grid must be strictly decreasing".into(),
        ));
    }
    Ok(())
}

/// `n` log-spaced values from `max` down to `max / ratio`.
pub fn log_grid(max: f64, ratio: f64, n: usize) -> Result<Vec<f64>> {
    if !(max > 0.0 && max.is_finite()) || !(ratio > 1.0) || n == 0 {
        return Err(Error::InvalidArgument(format!(
            "cannot build a grid from max {max}, ratio {ratio}, {n} points"
        )));
    }
    if n == 1 {
        return Ok(vec![max]);
    }
    let step = ratio.ln() / (n - 1) as f64;
    Ok((0..n).map(|i| max * (-(i as f64) * step).exp()).collect())
}

fn series_lambda_max<T: Scalar, M: ComponentwiseModel<T>>(
    model: &M,
    panel: &TimeSeriesPanel<T>,
    target: usize,
    spec: &PenaltySpec<T>,
    config: &FitConfig,
) -> Result<f64> {
    let data = model.prepare(panel, target)?;
    Ok(lambda_max(model, &data, spec, config)?.as_f64())
}

/// Largest per-series λ_max over all output series, with networks
/// initialized as in [`lambda_sweep`].
pub fn dataset_lambda_max<T: Scalar>(
    panel: &TimeSeriesPanel<T>,
    template: &ModelTemplate,
    spec: &PenaltySpec<T>,
    config: &FitConfig,
) -> Result<f64> {
    let train = template.training_panel(panel)?;
    let p = panel.p();
    let per_series: Vec<f64> = (0..p)
        .into_par_iter()
        .map(|i| match template.init::<T>(p, i, config.seed)? {
            AnyNet::Cmlp(net) => series_lambda_max(&net, &train, i, spec, config),
            AnyNet::Clstm(net) => series_lambda_max(&net, &train, i, spec, config),
        })
        .collect::<Result<_>>()?;
    Ok(per_series.into_iter().fold(0.0, f64::max))
}

/// The default grid: [`DEFAULT_GRID_POINTS`] values from the dataset λ_max
/// down to λ_max / [`DEFAULT_GRID_RATIO`].
pub fn default_lambda_grid<T: Scalar>(
    panel: &TimeSeriesPanel<T>,
    template: &ModelTemplate,
    spec: &PenaltySpec<T>,
    config: &FitConfig,
) -> Result<Vec<f64>> {
    let max = dataset_lambda_max(panel, template, spec, config)?;
    if max <= 0.0 {
        return Err(Error::InvalidArgument(
            "lambda_max is zero; the inputs carry no signal for any series".into(),
        ));
    }
    log_grid(max, DEFAULT_GRID_RATIO, DEFAULT_GRID_POINTS)
}

fn series_path<T: Scalar, M: ComponentwiseModel<T> + Into<AnyNet<T>>>(
    model: M,
    panel: &TimeSeriesPanel<T>,
    target: usize,
    spec: &PenaltySpec<T>,
    grid: &[f64],
    config: &FitConfig,
) -> Result<Vec<(AnyNet<T>, usize)>> {
    let data = model.prepare(panel, target)?;
    let mut current = model;
    let mut path = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let spec_l = spec.with_lambda(T::of(lambda))?;
        let fit = fit_prepared(&current, &data, &spec_l, config).map_err(|e| Error::Fit {
            lambda,
            series: target,
            source: Box::new(e),
        })?;
        current = fit.model;
        path.push((current.clone().into(), fit.iterations));
    }
    Ok(path)
}

/// Fits every output series along `grid` (descending, each fit started from
/// the previous solution) and extracts one graph per λ.
pub fn lambda_sweep<T: Scalar>(
    panel: &TimeSeriesPanel<T>,
    template: &ModelTemplate,
    spec: &PenaltySpec<T>,
    grid: &[f64],
    config: &FitConfig,
) -> Result<SweepResult> {
    Ok(lambda_sweep_models(panel, template, spec, grid, config)?.0)
}

/// As [`lambda_sweep`], also returning the fitted networks:
/// `models[l][i]` is series `i` at `grid[l]`.
pub fn lambda_sweep_models<T: Scalar>(
    panel: &TimeSeriesPanel<T>,
    template: &ModelTemplate,
    spec: &PenaltySpec<T>,
    grid: &[f64],
    config: &FitConfig,
) -> Result<(SweepResult, Vec<Vec<AnyNet<T>>>)> {
    check_grid(grid)?;
    config.validate()?;
    let train = template.training_panel(panel)?;
    let p = panel.p();
    let paths: Vec<Vec<(AnyNet<T>, usize)>> = (0..p)
        .into_par_iter()
        .map(|i| match template.init::<T>(p, i, config.seed)? {
            AnyNet::Cmlp(net) => series_path(net, &train, i, spec, grid, config),
            AnyNet::Clstm(net) => series_path(net, &train, i, spec, grid, config),
        })
        .collect::<Result<_>>()?;

    let mut graphs = Vec::with_capacity(grid.len());
    let mut iterations = Vec::with_capacity(grid.len());
    let mut models = Vec::with_capacity(grid.len());
    for l in 0..grid.len() {
        let nets: Vec<AnyNet<T>> = paths.iter().map(|path| path[l].0.clone()).collect();
        graphs.push(extract_graph(&nets, Some(panel.names()))?);
        iterations.push(paths.iter().map(|path| path[l].1).collect());
        models.push(nets);
    }
    let result = SweepResult {
        lambdas: grid.to_vec(),
        graphs,
        ground_truth: None,
        include_diagonal: false,
        iterations,
    };
    Ok((result, models))
}

/// Fits every output series once at the strength in `spec`, each from its
/// fresh initialization, and returns the networks with their iteration
/// counts.
pub fn fit_all<T: Scalar>(
    panel: &TimeSeriesPanel<T>,
    template: &ModelTemplate,
    spec: &PenaltySpec<T>,
    config: &FitConfig,
) -> Result<Vec<(AnyNet<T>, usize)>> {
    config.validate()?;
    let train = template.training_panel(panel)?;
    let p = panel.p();
    let lambda = [spec.lambda().as_f64()];
    let paths: Vec<Vec<(AnyNet<T>, usize)>> = (0..p)
        .into_par_iter()
        .map(|i| match template.init::<T>(p, i, config.seed)? {
            AnyNet::Cmlp(net) => series_path(net, &train, i, spec, &lambda, config),
            AnyNet::Clstm(net) => series_path(net, &train, i, spec, &lambda, config),
        })
        .collect::<Result<_>>()?;
    Ok(paths.into_iter().map(|mut path| path.remove(0)).collect())
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CurveSummary {
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`.
    pub roc_points: Vec<(f64, f64)>,
    /// `(recall, precision)`, recall nondecreasing.
    pub pr_points: Vec<(f64, f64)>,
    pub auroc: f64,
    pub aupr: f64,
}

fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) * 0.5)
        .sum()
}

/// ROC and PR curves from real-valued scores; higher means more likely an
/// edge. Tied scores form a single operating point.
pub fn roc_pr_from_scores(scores: &[f64], labels: &[bool]) -> Result<CurveSummary> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("NaN edge score".into()));
    }
    let pos = labels.iter().filter(|l| **l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidArgument(format!(
            "ground truth needs positive and negative candidate edges (got {pos} and {neg})"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let (mut tp, mut fp) = (0usize, 0usize);
    let mut roc_points = vec![(0.0, 0.0)];
    let mut pr_points = Vec::new();
    let mut idx = 0;
    while idx < order.len() {
        let level = scores[order[idx]];
        while idx < order.len() && scores[order[idx]] == level {
            if labels[order[idx]] {
                tp += 1;
            } else {
                fp += 1;
            }
            idx += 1;
        }
        roc_points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
        pr_points.push((tp as f64 / pos as f64, tp as f64 / (tp + fp) as f64));
    }
    // Extend the first operating point's precision back to zero recall.
    let first_precision = pr_points[0].1;
    pr_points.insert(0, (0.0, first_precision));
    Ok(CurveSummary {
        auroc: trapezoid(&roc_points),
        aupr: trapezoid(&pr_points),
        roc_points,
        pr_points,
    })
}

/// Survival score of every candidate edge: `(largest λ at which the edge is
/// present, edge statistic at the smallest λ)`, compared lexicographically.
pub fn survival_scores(sweep: &SweepResult) -> Result<Array2<(f64, f64)>> {
    sweep.validate()?;
    let p = sweep.graphs[0].p();
    let last = sweep.graphs.last().unwrap();
    Ok(Array2::from_shape_fn((p, p), |(i, j)| {
        let survive = sweep
            .lambdas
            .iter()
            .zip(&sweep.graphs)
            .find(|(_, g)| g.adjacency[[i, j]])
            .map(|(l, _)| *l)
            .unwrap_or(0.0);
        (survive, last.edge_stats[[i, j]])
    }))
}

/// Scores the sweep against its ground truth.
pub fn score_sweep(sweep: &SweepResult) -> Result<CurveSummary> {
    let truth = sweep
        .ground_truth
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("sweep has no ground truth".into()))?;
    let pairs = survival_scores(sweep)?;
    let p = truth.p();
    let mut keys = Vec::new();
    let mut labels = Vec::new();
    for i in 0..p {
        for j in 0..p {
            if i != j || sweep.include_diagonal {
                keys.push(pairs[[i, j]]);
                labels.push(truth.adjacency[[i, j]]);
            }
        }
    }
    // Replace the lexicographic keys by their ranks.
    let mut sorted = keys.clone();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    sorted.dedup();
    let scores: Vec<f64> = keys
        .iter()
        .map(|k| {
            sorted
                .binary_search_by(|s| s.0.total_cmp(&k.0).then(s.1.total_cmp(&k.1)))
                .unwrap() as f64
        })
        .collect();
    roc_pr_from_scores(&scores, &labels)
}
