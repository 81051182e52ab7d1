//! Structured sparsity penalties on input-weight groups and their exact
//! proximal operators.
//!
//! Every series `j` owns one group of input weights. For the cMLP the group
//! is split into `K` lag blocks `W^{1k}_{:j}`; for the cLSTM it is the single
//! column `W_{:j}`.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyFamily {
    /// One norm over all lags of a series.
    Group,
    /// Whole-group norm mixed with per-lag block norms (sparse group lasso).
    Mixed,
    /// Nested suffix groups over lags `k..K`.
    Hier,
}

impl std::str::FromStr for PenaltyFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "group" => Ok(PenaltyFamily::Group),
            "mixed" => Ok(PenaltyFamily::Mixed),
            "hier" | "hierarchical" => Ok(PenaltyFamily::Hier),
            other => Err(Error::InvalidArgument(format!("unknown penalty `{other}`"))),
        }
    }
}

impl std::fmt::Display for PenaltyFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PenaltyFamily::Group => "group",
            PenaltyFamily::Mixed => "mixed",
            PenaltyFamily::Hier => "hier",
        })
    }
}

pub const DEFAULT_MIXED_ALPHA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltySpec<T> {
    family: PenaltyFamily,
    lambda: T,
    mixed_alpha: Option<T>,
}

impl<T: Scalar> PenaltySpec<T> {
    pub fn new(family: PenaltyFamily, lambda: T, mixed_alpha: Option<T>) -> Result<Self> {
        if !(lambda >= T::zero()) || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "penalty strength must be finite and nonnegative, got {lambda}"
            )));
        }
        let mixed_alpha = match (family, mixed_alpha) {
            (PenaltyFamily::Mixed, None) => Some(T::of(DEFAULT_MIXED_ALPHA)),
            (PenaltyFamily::Mixed, Some(a)) if a >= T::zero() && a <= T::one() => Some(a),
            (PenaltyFamily::Mixed, Some(a)) => {
                return Err(Error::InvalidArgument(format!(
                    "mixing weight must lie in [0, 1], got {a}"
                )))
            }
            (_, Some(_)) => {
                return Err(Error::InvalidArgument(
                    "mixing weight is only meaningful for the mixed penalty".into(),
                ))
            }
            (_, None) => None,
        };
        Ok(PenaltySpec {
            family,
            lambda,
            mixed_alpha,
        })
    }

    pub fn group(lambda: T) -> Result<Self> {
        Self::new(PenaltyFamily::Group, lambda, None)
    }

    pub fn hier(lambda: T) -> Result<Self> {
        Self::new(PenaltyFamily::Hier, lambda, None)
    }

    pub fn mixed(lambda: T, alpha: T) -> Result<Self> {
        Self::new(PenaltyFamily::Mixed, lambda, Some(alpha))
    }

    pub fn family(&self) -> PenaltyFamily {
        self.family
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn mixed_alpha(&self) -> Option<T> {
        self.mixed_alpha
    }

    /// Same family and mixing weight at a different strength.
    pub fn with_lambda(&self, lambda: T) -> Result<Self> {
        Self::new(self.family, lambda, self.mixed_alpha)
    }

    fn check_kind(&self, kind: GroupKind) -> Result<()> {
        if kind == GroupKind::Column && self.family != PenaltyFamily::Group {
            return Err(Error::InvalidArgument(format!(
                "the {} penalty needs lagged input groups; recurrent models admit only `group`",
                self.family
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupKind {
    /// One block per lag, ordered from lag 1 to lag K.
    Lagged,
    /// A single block (a column of the stacked recurrent input matrix).
    Column,
}

/// Flat parameter indices of every input-weight block: `series[j][k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupLayout {
    pub kind: GroupKind,
    pub series: Vec<Vec<Vec<usize>>>,
}

impl GroupLayout {
    pub fn gather<T: Scalar>(&self, flat: &Array1<T>) -> InputGroupView<T> {
        InputGroupView {
            kind: self.kind,
            series: self
                .series
                .iter()
                .map(|blocks| {
                    blocks
                        .iter()
                        .map(|idx| idx.iter().map(|&i| flat[i]).collect())
                        .collect()
                })
                .collect(),
        }
    }

    pub fn scatter<T: Scalar>(&self, view: &InputGroupView<T>, flat: &mut Array1<T>) {
        for (blocks, vblocks) in self.series.iter().zip(&view.series) {
            for (idx, vals) in blocks.iter().zip(vblocks) {
                for (&i, &v) in idx.iter().zip(vals) {
                    flat[i] = v;
                }
            }
        }
    }

    /// Mask of parameters belonging to some input group.
    pub fn membership(&self, num_params: usize) -> Vec<bool> {
        let mut mask = vec![false; num_params];
        for i in self.series.iter().flatten().flatten() {
            mask[*i] = true;
        }
        mask
    }
}

/// Values of the input-weight groups, `series[j][k]` being block `k` of series `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputGroupView<T> {
    pub kind: GroupKind,
    pub series: Vec<Vec<Vec<T>>>,
}

impl<T: Scalar> InputGroupView<T> {
    /// View of lagged blocks: `series[j][k]` holds `W^{1,k+1}_{:j}`.
    pub fn lagged(series: Vec<Vec<Vec<T>>>) -> Self {
        InputGroupView {
            kind: GroupKind::Lagged,
            series,
        }
    }

    /// View of single-column groups.
    pub fn columns(columns: Vec<Vec<T>>) -> Self {
        InputGroupView {
            kind: GroupKind::Column,
            series: columns.into_iter().map(|c| vec![c]).collect(),
        }
    }

    pub fn p(&self) -> usize {
        self.series.len()
    }

    fn map_series(&self, f: impl Fn(&mut [Vec<T>])) -> Self {
        let mut out = self.clone();
        for blocks in out.series.iter_mut() {
            f(blocks);
        }
        out
    }
}

fn sq_norm<T: Scalar>(blocks: &[Vec<T>]) -> T {
    blocks.iter().flatten().map(|&v| v * v).sum()
}

/// Group soft-thresholding of the concatenation of `blocks`.
///
/// Groups with norm at most `tau` become exact zeros.
fn soft_threshold<T: Scalar>(blocks: &mut [Vec<T>], tau: T) {
    let norm = sq_norm(blocks).sqrt();
    if norm <= tau {
        for v in blocks.iter_mut().flatten() {
            *v = T::zero();
        }
    } else if tau > T::zero() {
        let scale = T::one() - tau / norm;
        for v in blocks.iter_mut().flatten() {
            *v = *v * scale;
        }
    }
}

fn prox_hier_blocks<T: Scalar>(blocks: &mut [Vec<T>], tau: T) {
    for k in (0..blocks.len()).rev() {
        soft_threshold(&mut blocks[k..], tau);
    }
}

fn prox_mixed_blocks<T: Scalar>(blocks: &mut [Vec<T>], tau: T, alpha: T) {
    let inner = (T::one() - alpha) * tau;
    for block in blocks.iter_mut() {
        soft_threshold(std::slice::from_mut(block), inner);
    }
    soft_threshold(blocks, alpha * tau);
}

fn series_penalty<T: Scalar>(family: PenaltyFamily, alpha: T, blocks: &[Vec<T>]) -> T {
    match family {
        PenaltyFamily::Group => sq_norm(blocks).sqrt(),
        PenaltyFamily::Hier => (0..blocks.len())
            .map(|k| sq_norm(&blocks[k..]).sqrt())
            .sum(),
        PenaltyFamily::Mixed => {
            let per_lag: T = blocks
                .iter()
                .map(|b| sq_norm(std::slice::from_ref(b)).sqrt())
                .sum();
            alpha * sq_norm(blocks).sqrt() + (T::one() - alpha) * per_lag
        }
    }
}

pub fn penalty_value<T: Scalar>(spec: &PenaltySpec<T>, view: &InputGroupView<T>) -> Result<T> {
    spec.check_kind(view.kind)?;
    if spec.lambda == T::zero() {
        return Ok(T::zero());
    }
    let alpha = spec.mixed_alpha.unwrap_or_else(T::one);
    let total: T = view
        .series
        .iter()
        .map(|blocks| series_penalty(spec.family, alpha, blocks))
        .sum();
    Ok(spec.lambda * total)
}

pub fn prox_group<T: Scalar>(view: &InputGroupView<T>, tau: T) -> InputGroupView<T> {
    view.map_series(|blocks| soft_threshold(blocks, tau))
}

/// Nested-group prox: soft-threshold the suffix groups from the smallest
/// (lag `K` alone) to the largest (all lags).
pub fn prox_hier<T: Scalar>(view: &InputGroupView<T>, tau: T) -> InputGroupView<T> {
    view.map_series(|blocks| prox_hier_blocks(blocks, tau))
}

/// Sparse-group prox: per-lag thresholding at `(1 - alpha) tau`, then the
/// whole group at `alpha tau`.
pub fn prox_mixed<T: Scalar>(view: &InputGroupView<T>, tau: T, alpha: T) -> InputGroupView<T> {
    view.map_series(|blocks| prox_mixed_blocks(blocks, tau, alpha))
}

/// Prox of `tau * Ω` for the family in `spec`; `spec.lambda` is ignored.
pub fn prox<T: Scalar>(
    spec: &PenaltySpec<T>,
    view: &InputGroupView<T>,
    tau: T,
) -> Result<InputGroupView<T>> {
    spec.check_kind(view.kind)?;
    Ok(match spec.family {
        PenaltyFamily::Group => prox_group(view, tau),
        PenaltyFamily::Hier => prox_hier(view, tau),
        PenaltyFamily::Mixed => prox_mixed(view, tau, spec.mixed_alpha.unwrap_or_else(T::one)),
    })
}

/// Euclidean norm of each series' full group; the Granger edge statistics.
pub fn group_norms<T: Scalar>(view: &InputGroupView<T>) -> Array1<T> {
    view.series
        .iter()
        .map(|blocks| sq_norm(blocks).sqrt())
        .collect()
}

/// Smallest `lambda` for which the prox of `tau = lambda` maps `blocks` to zero.
///
/// Applied to a gradient `g`, this is the strength above which a zero group
/// stays zero after a proximal gradient step of any size.
pub fn zeroing_threshold<T: Scalar>(family: PenaltyFamily, alpha: T, blocks: &[Vec<T>]) -> T {
    let norm = sq_norm(blocks).sqrt();
    if family == PenaltyFamily::Group || norm == T::zero() {
        return norm;
    }
    let is_zero = |lambda: T| {
        let mut b = blocks.to_vec();
        match family {
            PenaltyFamily::Hier => prox_hier_blocks(&mut b, lambda),
            _ => prox_mixed_blocks(&mut b, lambda, alpha),
        }
        b.iter().flatten().all(|v| *v == T::zero())
    };
    // `norm` always zeroes the group for these families
    let (mut lo, mut hi) = (T::zero(), norm);
    for _ in 0..200 {
        let mid = (lo + hi) / T::of(2.0);
        if mid <= lo || mid >= hi {
            break;
        }
        if is_zero(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lagged(blocks: &[&[f64]]) -> InputGroupView<f64> {
        InputGroupView::lagged(vec![blocks.iter().map(|b| b.to_vec()).collect()])
    }

    #[test]
    fn penalty_values() {
        let v = lagged(&[&[3.0], &[4.0]]);
        assert_eq!(
            penalty_value(&PenaltySpec::group(0.0).unwrap(), &v).unwrap(),
            0.0
        );
        assert_eq!(
            penalty_value(&PenaltySpec::group(1.0).unwrap(), &v).unwrap(),
            5.0
        );
        assert_eq!(
            penalty_value(&PenaltySpec::hier(1.0).unwrap(), &v).unwrap(),
            9.0
        );
        // 0.5 * 5 + 0.5 * (3 + 4)
        let m = penalty_value(&PenaltySpec::mixed(1.0, 0.5).unwrap(), &v).unwrap();
        assert!((m - 6.0).abs() < 1e-15);
    }

    #[test]
    fn recurrent_view_admits_group_only() {
        let v = InputGroupView::columns(vec![vec![1.0f64, 2.0, 2.0]]);
        assert!(penalty_value(&PenaltySpec::hier(1.0).unwrap(), &v).is_err());
        assert!(penalty_value(&PenaltySpec::mixed(1.0, 0.3).unwrap(), &v).is_err());
        assert!(prox(&PenaltySpec::hier(1.0).unwrap(), &v, 0.1).is_err());
        assert_eq!(group_norms(&v)[0], 3.0);
    }

    #[test]
    fn spec_validation() {
        assert!(PenaltySpec::group(-1.0f64).is_err());
        assert!(PenaltySpec::mixed(1.0f64, 1.5).is_err());
        assert!(PenaltySpec::new(PenaltyFamily::Group, 1.0f64, Some(0.5)).is_err());
        let m = PenaltySpec::new(PenaltyFamily::Mixed, 1.0f64, None).unwrap();
        assert_eq!(m.mixed_alpha(), Some(DEFAULT_MIXED_ALPHA));
    }

    #[test]
    fn group_prox_examples() {
        let out = prox_group(&lagged(&[&[3.0, 4.0]]), 2.0);
        assert!((out.series[0][0][0] - 1.8).abs() < 1e-15);
        assert!((out.series[0][0][1] - 2.4).abs() < 1e-15);

        let out = prox_group(&lagged(&[&[3.0, 4.0]]), 5.0);
        assert_eq!(out.series[0][0], vec![0.0, 0.0]);
        assert!(out.series[0][0].iter().all(|v| v.to_bits() == 0));

        let out = prox_group(&lagged(&[&[0.0, 0.0]]), 1.0);
        assert_eq!(out.series[0][0], vec![0.0, 0.0]);
    }

    #[test]
    fn hier_prox_example() {
        let out = prox_hier(&lagged(&[&[0.0], &[5.0]]), 2.0);
        assert_eq!(out.series[0][0][0], 0.0);
        assert!((out.series[0][1][0] - 1.0).abs() < 1e-12);

        let zero = prox_hier(&lagged(&[&[0.0], &[0.0], &[0.0]]), 2.0);
        assert!(zero.series[0].iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn mixed_prox_example_and_reductions() {
        let out = prox_mixed(&lagged(&[&[3.0], &[0.5]]), 1.0, 0.5);
        assert!((out.series[0][0][0] - 2.0).abs() < 1e-12);
        assert_eq!(out.series[0][1][0], 0.0);

        let v = lagged(&[&[1.0, -2.0], &[0.3, 0.1], &[2.0, 0.0]]);
        assert_eq!(prox_mixed(&v, 0.7, 1.0), prox_group(&v, 0.7));
        let per_lag = prox_mixed(&v, 0.7, 0.0);
        for (k, block) in v.series[0].iter().enumerate() {
            let single = prox_group(&lagged(&[block]), 0.7);
            assert_eq!(per_lag.series[0][k], single.series[0][0]);
        }
    }

    #[test]
    fn group_norms_after_total_shrinkage() {
        let v = InputGroupView::lagged(vec![
            vec![vec![1.0f64, 2.0], vec![0.5, 0.0]],
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            vec![vec![-3.0, 1.0], vec![2.0, 2.0]],
        ]);
        assert_eq!(group_norms(&prox_group(&v, 0.0)), group_norms(&v));
        let max = group_norms(&v).iter().cloned().fold(0.0, f64::max);
        assert!(group_norms(&prox_group(&v, max)).iter().all(|v| *v == 0.0));
        assert_eq!(group_norms(&v)[1], 0.0);
    }

    #[test]
    fn zeroing_threshold_is_tight() {
        let blocks = vec![vec![0.4, -1.0], vec![2.0, 0.1], vec![0.0, 0.7]];
        for family in [
            PenaltyFamily::Group,
            PenaltyFamily::Hier,
            PenaltyFamily::Mixed,
        ] {
            let lam = zeroing_threshold(family, 0.5, &blocks);
            let spec =
                PenaltySpec::new(family, 1.0, (family == PenaltyFamily::Mixed).then_some(0.5))
                    .unwrap();
            let view = InputGroupView::lagged(vec![blocks.clone()]);
            let at = prox(&spec, &view, lam).unwrap();
            assert!(group_norms(&at)[0] == 0.0, "{family}");
            let below = prox(&spec, &view, lam * (1.0 - 1e-9)).unwrap();
            assert!(group_norms(&below)[0] > 0.0, "{family}");
        }
    }
}
