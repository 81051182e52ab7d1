//! Proximal gradient descent with backtracking line search.

use ndarray::Array1;

use crate::error::{Error, Result};
use crate::model::ComponentwiseModel;
use crate::nn::{RngSeed, Scalar};
use crate::panel::TimeSeriesPanel;
use crate::penalty::{
    penalty_value, prox, zeroing_threshold, GroupLayout, PenaltyFamily, PenaltySpec,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub max_iters: usize,
    /// Largest step tried at any iteration.
    pub initial_step: f64,
    pub backtrack_factor: f64,
    /// Growth applied to the previously accepted step before the next search.
    pub growth_factor: f64,
    /// Relative objective decrease over `window` iterations below which the
    /// fit is declared converged.
    pub tolerance: f64,
    pub window: usize,
    pub max_halvings: usize,
    pub seed: RngSeed,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_iters: 5000,
            initial_step: 1.0,
            backtrack_factor: 0.5,
            growth_factor: 2.0,
            tolerance: 1e-6,
            window: 10,
            max_halvings: 50,
            seed: RngSeed(0),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.initial_step > 0.0
            && self.initial_step.is_finite()
            && self.backtrack_factor > 0.0
            && self.backtrack_factor < 1.0
            && self.growth_factor >= 1.0
            && self.tolerance >= 0.0
            && self.window >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid optimizer settings {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry<T> {
    pub iteration: usize,
    pub smooth: T,
    pub penalty: T,
}

impl<T: Scalar> TraceEntry<T> {
    pub fn total(&self) -> T {
        self.smooth + self.penalty
    }
}

#[derive(Debug, Clone)]
pub struct FitResult<M, T> {
    pub model: M,
    pub trace: Vec<TraceEntry<T>>,
    pub converged: bool,
    pub iterations: usize,
}

impl<M, T: Scalar> FitResult<M, T> {
    pub fn final_objective(&self) -> T {
        self.trace.last().map(|e| e.total()).unwrap_or_else(T::nan)
    }
}

/// What the proximal step does to the input groups.
#[derive(Debug, Clone, Copy)]
enum GroupStep<T> {
    Penalized(PenaltySpec<T>),
    /// Keep every input group at zero (the null model), optionally tracking
    /// the penalty strength that would do the same.
    Frozen {
        track: Option<(PenaltyFamily, T)>,
    },
}

/// Smooth loss and penalty value of `model` on `panel`.
pub fn objective<T: Scalar, M: ComponentwiseModel<T>>(
    model: &M,
    panel: &TimeSeriesPanel<T>,
    target: usize,
    spec: &PenaltySpec<T>,
) -> Result<(T, T)> {
    let data = model.prepare(panel, target)?;
    let smooth = model.loss(&data);
    let penalty = penalty_value(spec, &model.group_layout().gather(&model.params()))?;
    Ok((smooth, penalty))
}

/// Minimizes squared prediction error plus the structured penalty on the
/// input groups, starting from `model`.
pub fn prox_grad_fit<T: Scalar, M: ComponentwiseModel<T>>(
    model: &M,
    panel: &TimeSeriesPanel<T>,
    target: usize,
    spec: &PenaltySpec<T>,
    config: &FitConfig,
) -> Result<FitResult<M, T>> {
    let data = model.prepare(panel, target)?;
    fit_prepared(model, &data, spec, config)
}

/// As [`prox_grad_fit`] with data already prepared for the target series.
pub fn fit_prepared<T: Scalar, M: ComponentwiseModel<T>>(
    model: &M,
    data: &M::Data,
    spec: &PenaltySpec<T>,
    config: &FitConfig,
) -> Result<FitResult<M, T>> {
    Ok(run(model, data, GroupStep::Penalized(*spec), false, config)?.0)
}

/// Smallest penalty strength at which a fit started from `model` keeps every
/// input group at zero from the first proximal step on.
///
/// The fit is replayed with the input groups clamped to zero; along the way
/// the largest strength needed for the prox to zero every group, over all
/// step sizes tried, is recorded. At or above the returned value
/// [`fit_prepared`] with the same `config` follows the clamped path exactly.
pub fn lambda_max<T: Scalar, M: ComponentwiseModel<T>>(
    model: &M,
    data: &M::Data,
    spec: &PenaltySpec<T>,
    config: &FitConfig,
) -> Result<T> {
    let alpha = spec.mixed_alpha().unwrap_or_else(T::one);
    let step = GroupStep::Frozen {
        track: Some((spec.family(), alpha)),
    };
    Ok(run(model, data, step, false, config)?.1)
}

/// Fits the non-input parameters with every input group held at zero.
pub fn fit_null<T: Scalar, M: ComponentwiseModel<T>>(
    model: &M,
    data: &M::Data,
    config: &FitConfig,
) -> Result<FitResult<M, T>> {
    let mut null_config = *config;
    null_config.tolerance = config.tolerance.min(1e-9);
    Ok(run(
        model,
        data,
        GroupStep::Frozen { track: None },
        true,
        &null_config,
    )?
    .0)
}

/// Applies the group part of a step; returns the penalty of the result and,
/// when tracking, the strength that would have zeroed every group.
fn apply_group_step<T: Scalar>(
    step: &GroupStep<T>,
    layout: &GroupLayout,
    flat: &mut Array1<T>,
    step_size: T,
) -> Result<(T, T)> {
    match step {
        GroupStep::Penalized(spec) => {
            let view = prox(spec, &layout.gather(flat), step_size * spec.lambda())?;
            layout.scatter(&view, flat);
            Ok((penalty_value(spec, &view)?, T::zero()))
        }
        GroupStep::Frozen { track } => {
            let needed = match track {
                Some((family, alpha)) => layout
                    .gather(flat)
                    .series
                    .iter()
                    .map(|blocks| zeroing_threshold(*family, *alpha, blocks) / step_size)
                    .fold(T::zero(), T::max),
                None => T::zero(),
            };
            for i in layout.series.iter().flatten().flatten() {
                flat[*i] = T::zero();
            }
            Ok((T::zero(), needed))
        }
    }
}

fn run<T: Scalar, M: ComponentwiseModel<T>>(
    model: &M,
    data: &M::Data,
    group_step: GroupStep<T>,
    zero_first: bool,
    config: &FitConfig,
) -> Result<(FitResult<M, T>, T)> {
    config.validate()?;
    let layout = model.group_layout();
    let mut current = model.clone();
    let mut theta = current.params();
    let mut penalty = match group_step {
        GroupStep::Penalized(spec) => penalty_value(&spec, &layout.gather(&theta))?,
        // Stands in for the penalty of the starting point, which any strength
        // that zeroes every group makes dominate the first steps.
        GroupStep::Frozen { track: Some(_) } => T::infinity(),
        GroupStep::Frozen { track: None } => T::zero(),
    };
    if zero_first {
        for i in layout.series.iter().flatten().flatten() {
            theta[*i] = T::zero();
        }
        current.set_params(&theta)?;
    }
    let mut needed = T::zero();
    let (mut smooth, mut grad) = current.loss_and_grad(data);
    if !smooth.is_finite() || !grad.iter().all(|g| g.is_finite()) {
        return Err(Error::NonFiniteIterate { iteration: 0 });
    }
    let mut trace = vec![TraceEntry {
        iteration: 0,
        smooth,
        penalty,
    }];

    let initial = T::of(config.initial_step);
    let growth = T::of(config.growth_factor);
    let shrink = T::of(config.backtrack_factor);
    let half = T::of(0.5);
    let slack_scale = T::epsilon() * T::of(16.0);
    let tol = T::of(config.tolerance);
    let mut step = initial;
    let mut probe = current.clone();
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=config.max_iters {
        let mut trial = (step * growth).min(initial);
        let mut accepted = None;
        for _ in 0..=config.max_halvings {
            let mut cand = &theta - &(&grad * trial);
            let (cand_penalty, cand_needed) =
                apply_group_step(&group_step, &layout, &mut cand, trial)?;
            needed = needed.max(cand_needed);
            probe.set_params(&cand)?;
            let cand_smooth = probe.loss(data);
            if cand_smooth.is_finite() {
                let diff = &cand - &theta;
                let bound = smooth
                    + grad.dot(&diff)
                    + diff.dot(&diff) * half / trial
                    + slack_scale * (smooth.abs() + cand_smooth.abs());
                if cand_smooth <= bound {
                    accepted = Some((cand, cand_smooth, cand_penalty));
                    break;
                }
            }
            trial = trial * shrink;
        }
        let Some((cand, cand_smooth, cand_penalty)) = accepted else {
            return Err(Error::LineSearchExhausted {
                iteration: it,
                halvings: config.max_halvings,
            });
        };
        if cand_smooth + cand_penalty > smooth + penalty {
            // Only rounding separates the step from a stationary point.
            converged = true;
            break;
        }
        theta = cand;
        step = trial;
        current.set_params(&theta)?;
        let (s, g) = current.loss_and_grad(data);
        if !s.is_finite() || !g.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteIterate { iteration: it });
        }
        smooth = s;
        grad = g;
        penalty = cand_penalty;
        iterations = it;
        trace.push(TraceEntry {
            iteration: it,
            smooth,
            penalty,
        });
        if it >= config.window {
            let past = trace[it - config.window].total();
            let now = smooth + penalty;
            if past - now <= tol * now.abs().max(T::min_positive_value()) {
                converged = true;
                break;
            }
        }
    }

    let result = FitResult {
        model: current,
        trace,
        converged,
        iterations,
    };
    Ok((result, needed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmlp::{CmlpNet, CmlpShape};
    use crate::nn::Activation;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ar_panel(n: usize, seed: u64) -> TimeSeriesPanel<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Array2::<f64>::zeros((n, 2));
        for t in 1..n {
            x[[t, 0]] = 0.6 * x[[t - 1, 0]] + rng.random_range(-1.0..1.0);
            x[[t, 1]] = 0.5 * x[[t - 1, 0]] + rng.random_range(-1.0..1.0);
        }
        TimeSeriesPanel::from_replicates(vec![x]).unwrap()
    }

    #[test]
    fn objective_components() {
        let net = CmlpNet::<f64>::zeros(CmlpShape::new(2, 1, 2)).unwrap();
        let zeros = TimeSeriesPanel::from_replicates(vec![Array2::zeros((5, 2))]).unwrap();
        let (s, p) = objective(&net, &zeros, 0, &PenaltySpec::group(3.0).unwrap()).unwrap();
        assert_eq!((s, p), (0.0, 0.0));

        let net = CmlpNet::<f64>::init(CmlpShape::new(2, 1, 2), RngSeed(1)).unwrap();
        let (_, p) =
            objective(&net, &ar_panel(20, 1), 0, &PenaltySpec::hier(0.0).unwrap()).unwrap();
        assert_eq!(p, 0.0);
    }

    #[test]
    fn objective_hand_computed() {
        // p=2, K=1, H=1: prediction w_O tanh(a x0 + b x1 + c)
        let shape = CmlpShape::new(2, 1, 1);
        let net = CmlpNet::from_parts(
            shape,
            ndarray::array![[0.5, -1.0]],
            vec![],
            vec![ndarray::array![0.1]],
            ndarray::array![2.0],
        )
        .unwrap();
        let data = ndarray::array![[1.0, 0.0], [0.5, 1.0], [-1.0, 2.0], [0.0, -0.5], [2.0, 1.5]];
        let panel = TimeSeriesPanel::from_replicates(vec![data.clone()]).unwrap();
        let mut smooth = 0.0;
        for t in 1..5 {
            let z: f64 = 0.5 * data[[t - 1, 0]] - 1.0 * data[[t - 1, 1]] + 0.1;
            smooth += (data[[t, 1]] - 2.0 * z.tanh()).powi(2);
        }
        let penalty = 0.7 * (0.5f64 + 1.0);
        let (s, p) = objective(&net, &panel, 1, &PenaltySpec::group(0.7).unwrap()).unwrap();
        assert!((s - smooth).abs() < 1e-10);
        assert!((p - penalty).abs() < 1e-10);
    }

    #[test]
    fn trace_is_monotone() {
        let panel = ar_panel(80, 2);
        let net = CmlpNet::<f64>::init(CmlpShape::new(2, 3, 4), RngSeed(2)).unwrap();
        for spec in [
            PenaltySpec::group(2.0).unwrap(),
            PenaltySpec::hier(2.0).unwrap(),
            PenaltySpec::mixed(2.0, 0.5).unwrap(),
        ] {
            let fit = prox_grad_fit(&net, &panel, 1, &spec, &FitConfig::default()).unwrap();
            for w in fit.trace.windows(2) {
                assert!(w[1].total() <= w[0].total() + 1e-10);
            }
            assert!(fit.trace.len() > 2);
        }
    }

    #[test]
    fn huge_penalty_zeroes_everything() {
        let panel = ar_panel(60, 3);
        let net = CmlpNet::<f64>::init(CmlpShape::new(2, 2, 3), RngSeed(3)).unwrap();
        let fit = prox_grad_fit(
            &net,
            &panel,
            0,
            &PenaltySpec::group(1e6).unwrap(),
            &FitConfig::default(),
        )
        .unwrap();
        assert!(fit.model.first_layer().iter().all(|v| v.to_bits() == 0));
    }

    #[test]
    fn lambda_max_zeroes_all_groups() {
        let panel = ar_panel(60, 4);
        let net = CmlpNet::<f64>::init(CmlpShape::new(2, 2, 3), RngSeed(4)).unwrap();
        let data = crate::model::ComponentwiseModel::prepare(&net, &panel, 1).unwrap();
        let config = FitConfig::default();
        for spec in [
            PenaltySpec::group(1.0).unwrap(),
            PenaltySpec::hier(1.0).unwrap(),
        ] {
            let lmax = lambda_max(&net, &data, &spec, &config).unwrap();
            assert!(lmax > 0.0);
            let at = fit_prepared(
                &net,
                &data,
                &spec.with_lambda(lmax * 1.01).unwrap(),
                &config,
            )
            .unwrap();
            assert!(at.model.first_layer().iter().all(|v| *v == 0.0));
            let exact =
                fit_prepared(&net, &data, &spec.with_lambda(lmax).unwrap(), &config).unwrap();
            assert!(exact.model.first_layer().iter().all(|v| *v == 0.0));
            // tight for a single step
            let one = FitConfig {
                max_iters: 1,
                ..config
            };
            let lmax1 = lambda_max(&net, &data, &spec, &one).unwrap();
            let below =
                fit_prepared(&net, &data, &spec.with_lambda(lmax1 * 0.99).unwrap(), &one).unwrap();
            assert!(below.model.first_layer().iter().any(|v| *v != 0.0));
        }
    }

    #[test]
    fn unpenalized_linear_fit_reaches_least_squares() {
        // single series AR(1): pred = w (a x_{t-1} + b), optimum = OLS with intercept
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 60;
        let mut x = Array2::<f64>::zeros((n, 1));
        for t in 1..n {
            x[[t, 0]] = 0.7 * x[[t - 1, 0]] + 0.3 + rng.random_range(-0.5..0.5);
        }
        let panel = TimeSeriesPanel::from_replicates(vec![x.clone()]).unwrap();

        let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
        for t in 1..n {
            let (u, v) = (x[[t - 1, 0]], x[[t, 0]]);
            sx += u;
            sy += v;
            sxx += u * u;
            sxy += u * v;
        }
        let m = (n - 1) as f64;
        let slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
        let icpt = (sy - slope * sx) / m;
        let optimum: f64 = (1..n)
            .map(|t| (x[[t, 0]] - slope * x[[t - 1, 0]] - icpt).powi(2))
            .sum();

        let shape = CmlpShape::new(1, 1, 1).with_activation(Activation::Linear);
        let net = CmlpNet::<f64>::init(shape, RngSeed(6)).unwrap();
        let config = FitConfig {
            tolerance: 1e-14,
            max_iters: 50_000,
            ..FitConfig::default()
        };
        let fit =
            prox_grad_fit(&net, &panel, 0, &PenaltySpec::group(0.0).unwrap(), &config).unwrap();
        assert!(
            (fit.final_objective() - optimum).abs() < 1e-6,
            "{} vs {optimum}",
            fit.final_objective()
        );
    }

    #[test]
    fn rerun_is_bit_identical() {
        let panel = ar_panel(50, 7);
        let net = CmlpNet::<f64>::init(CmlpShape::new(2, 2, 3), RngSeed(7)).unwrap();
        let spec = PenaltySpec::hier(1.5).unwrap();
        let a = prox_grad_fit(&net, &panel, 0, &spec, &FitConfig::default()).unwrap();
        let b = prox_grad_fit(&net, &panel, 0, &spec, &FitConfig::default()).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn invalid_config_rejected() {
        let panel = ar_panel(20, 1);
        let net = CmlpNet::<f64>::init(CmlpShape::new(2, 1, 2), RngSeed(1)).unwrap();
        let bad = FitConfig {
            backtrack_factor: 1.5,
            ..FitConfig::default()
        };
        assert!(prox_grad_fit(&net, &panel, 0, &PenaltySpec::group(1.0).unwrap(), &bad).is_err());
    }
}
