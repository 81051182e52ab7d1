//! Ground-truth generators: sparse VAR(K) processes and Lorenz-96 dynamics.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::granger::GrangerGraph;
use crate::nn::RngSeed;
use crate::panel::{default_names, TimeSeriesPanel};

const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct VarSpec {
    pub p: usize,
    /// `coefficients[k-1]` is `A^{(k)}`, row `i` driving series `i`.
    pub coefficients: Vec<Array2<f64>>,
    pub noise_std: f64,
    /// Number of retained samples.
    pub t: usize,
    pub burn_in: usize,
    pub seed: RngSeed,
}

impl VarSpec {
    pub fn new(coefficients: Vec<Array2<f64>>, t: usize, seed: RngSeed) -> Result<Self> {
        let p = coefficients.first().map(|a| a.nrows()).unwrap_or(0);
        let spec = VarSpec {
            p,
            coefficients,
            noise_std: 1.0,
            t,
            burn_in: 200,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn lag_order(&self) -> usize {
        self.coefficients.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.coefficients.is_empty() {
            return Err(Error::InvalidArgument(
                "VAR needs p >= 1 and at least one lag".into(),
            ));
        }
        if self
            .coefficients
            .iter()
            .any(|a| a.dim() != (self.p, self.p))
        {
            return Err(Error::Shape(format!(
                "VAR coefficients must be {0} x {0}",
                self.p
            )));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(Error::InvalidArgument(
                "noise std must be finite and nonnegative".into(),
            ));
        }
        if self.t < 2 {
            return Err(Error::InvalidArgument(
                "VAR length must be at least 2".into(),
            ));
        }
        if self.spectral_radius() >= 1.0 {
            return Err(Error::InvalidArgument(format!(
                "VAR companion matrix has spectral radius {} >= 1",
                self.spectral_radius()
            )));
        }
        Ok(())
    }

    /// Spectral radius of the companion matrix.
    pub fn spectral_radius(&self) -> f64 {
        let (p, k) = (self.p, self.lag_order());
        let n = p * k;
        let mut companion = DMatrix::<f64>::zeros(n, n);
        for (lag, a) in self.coefficients.iter().enumerate() {
            for i in 0..p {
                for j in 0..p {
                    companion[(i, lag * p + j)] = a[[i, j]];
                }
            }
        }
        for i in p..n {
            companion[(i, i - p)] = 1.0;
        }
        companion
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    pub fn ground_truth(&self) -> GrangerGraph {
        let mut g = GrangerGraph::empty(default_names(self.p));
        for i in 0..self.p {
            for j in 0..self.p {
                let lag = (1..=self.lag_order())
                    .rev()
                    .find(|&k| self.coefficients[k - 1][[i, j]] != 0.0)
                    .unwrap_or(0);
                if lag > 0 {
                    g.edge_stats[[i, j]] = 1.0;
                    g.adjacency[[i, j]] = true;
                    g.selected_lag[[i, j]] = lag;
                }
            }
        }
        g
    }
}

/// Sparse VAR with self loops and `edges_per_row` random inputs per series,
/// every active coefficient equal to `coef` at every lag.
pub fn make_sparse_var(
    p: usize,
    lag_order: usize,
    edges_per_row: usize,
    coef: f64,
    t: usize,
    seed: RngSeed,
) -> Result<VarSpec> {
    if p == 0 || lag_order == 0 {
        return Err(Error::InvalidArgument(
            "VAR needs p >= 1 and lag order >= 1".into(),
        ));
    }
    if edges_per_row + 1 > p {
        return Err(Error::InvalidArgument(format!(
            "{edges_per_row} inputs per row need at least {} series",
            edges_per_row + 1
        )));
    }
    const RETRIES: usize = 100;
    for attempt in 0..RETRIES {
        let mut rng = seed.derive(attempt as u64).rng();
        let mut a = Array2::<f64>::zeros((p, p));
        for i in 0..p {
            a[[i, i]] = coef;
            for idx in sample(&mut rng, p - 1, edges_per_row).iter() {
                let j = if idx >= i { idx + 1 } else { idx };
                a[[i, j]] = coef;
            }
        }
        let spec = VarSpec {
            p,
            coefficients: vec![a; lag_order],
            noise_std: 1.0,
            t,
            burn_in: 200,
            seed,
        };
        if spec.spectral_radius() < 1.0 {
            spec.validate()?;
            return Ok(spec);
        }
    }
    Err(Error::NonStationary(RETRIES))
}

/// Simulates from a zero initial history.
pub fn simulate_var(spec: &VarSpec) -> Result<(TimeSeriesPanel<f64>, GrangerGraph)> {
    let history = Array2::zeros((spec.lag_order(), spec.p));
    simulate_var_with_history(spec, &history)
}

/// Simulates with `history` holding `x_{-K}, …, x_{-1}` as rows.
pub fn simulate_var_with_history(
    spec: &VarSpec,
    history: &Array2<f64>,
) -> Result<(TimeSeriesPanel<f64>, GrangerGraph)> {
    spec.validate()?;
    let (p, k) = (spec.p, spec.lag_order());
    if history.dim() != (k, p) {
        return Err(Error::Shape(format!("history must be {k} x {p}")));
    }
    let total = spec.burn_in + spec.t;
    let mut x = Array2::<f64>::zeros((k + total, p));
    x.slice_mut(ndarray::s![..k, ..]).assign(history);
    let mut rng = spec.seed.rng();
    let normal = Normal::new(0.0, spec.noise_std.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    for t in k..k + total {
        let mut next = Array1::<f64>::zeros(p);
        for (lag, a) in spec.coefficients.iter().enumerate() {
            next = next + a.dot(&x.row(t - lag - 1));
        }
        if spec.noise_std > 0.0 {
            for v in next.iter_mut() {
                *v += normal.sample(&mut rng);
            }
        }
        if next
            .iter()
            .any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT)
        {
            return Err(Error::Divergence(format!(
                "VAR state exceeded {DIVERGENCE_LIMIT} at step {}",
                t - k
            )));
        }
        x.row_mut(t).assign(&next);
    }
    let kept = x.slice(ndarray::s![k + spec.burn_in.., ..]).to_owned();
    Ok((
        TimeSeriesPanel::from_replicates(vec![kept])?,
        spec.ground_truth(),
    ))
}

/// `replicates` independent realizations of the same process.
pub fn simulate_var_replicates(
    spec: &VarSpec,
    replicates: usize,
) -> Result<(TimeSeriesPanel<f64>, GrangerGraph)> {
    if replicates == 0 {
        return Err(Error::InvalidArgument("need at least one replicate".into()));
    }
    let mut reps = Vec::with_capacity(replicates);
    for r in 0..replicates {
        let spec_r = VarSpec {
            seed: spec.seed.derive(r as u64),
            ..spec.clone()
        };
        let (panel, _) = simulate_var(&spec_r)?;
        reps.extend(panel.replicates().iter().cloned());
    }
    Ok((TimeSeriesPanel::from_replicates(reps)?, spec.ground_truth()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LorenzSpec {
    pub p: usize,
    pub forcing: f64,
    /// Sampling interval.
    pub delta_t: f64,
    pub t: usize,
    /// Discarded leading samples.
    pub burn_in: usize,
    pub noise_std: f64,
    /// RK4 steps per sampling interval.
    pub substeps: usize,
    /// Half-width of the uniform perturbation of the `F·1` initial state.
    pub perturbation: f64,
    pub seed: RngSeed,
}

impl LorenzSpec {
    pub fn new(p: usize, forcing: f64, t: usize, seed: RngSeed) -> Self {
        LorenzSpec {
            p,
            forcing,
            delta_t: 0.05,
            t,
            burn_in: 100,
            noise_std: 0.0,
            substeps: 10,
            perturbation: 0.01,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < 4 {
            return Err(Error::InvalidArgument("Lorenz-96 needs p >= 4".into()));
        }
        if !(self.delta_t > 0.0) || self.substeps == 0 || self.t < 2 {
            return Err(Error::InvalidArgument(
                "Lorenz-96 needs delta_t > 0, substeps >= 1 and t >= 2".into(),
            ));
        }
        if !(self.noise_std >= 0.0) || !(self.perturbation >= 0.0) {
            return Err(Error::InvalidArgument(
                "noise and perturbation must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// Series `i` is driven by `i-2, i-1, i, i+1` (cyclic).
    pub fn ground_truth(&self) -> GrangerGraph {
        let p = self.p;
        let mut g = GrangerGraph::empty(default_names(p));
        for i in 0..p {
            for off in [p - 2, p - 1, 0, 1] {
                let j = (i + off) % p;
                g.edge_stats[[i, j]] = 1.0;
                g.adjacency[[i, j]] = true;
                g.selected_lag[[i, j]] = 1;
            }
        }
        g
    }
}

fn lorenz_rhs(x: &[f64], forcing: f64, out: &mut [f64]) {
    let p = x.len();
    for i in 0..p {
        let ip1 = x[(i + 1) % p];
        let im1 = x[(i + p - 1) % p];
        let im2 = x[(i + p - 2) % p];
        out[i] = (ip1 - im2) * im1 - x[i] + forcing;
    }
}

fn rk4_step(x: &mut [f64], forcing: f64, h: f64, scratch: &mut [Vec<f64>; 5]) {
    let p = x.len();
    let [k1, k2, k3, k4, tmp] = scratch;
    lorenz_rhs(x, forcing, k1);
    for i in 0..p {
        tmp[i] = x[i] + 0.5 * h * k1[i];
    }
    lorenz_rhs(tmp, forcing, k2);
    for i in 0..p {
        tmp[i] = x[i] + 0.5 * h * k2[i];
    }
    lorenz_rhs(tmp, forcing, k3);
    for i in 0..p {
        tmp[i] = x[i] + h * k3[i];
    }
    lorenz_rhs(tmp, forcing, k4);
    for i in 0..p {
        x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Integrates Lorenz-96 with fixed-step RK4 and samples every `delta_t`.
pub fn simulate_lorenz96(spec: &LorenzSpec) -> Result<(TimeSeriesPanel<f64>, GrangerGraph)> {
    spec.validate()?;
    let p = spec.p;
    let mut rng = spec.seed.rng();
    let mut x: Vec<f64> = (0..p)
        .map(|_| {
            let eps = if spec.perturbation > 0.0 {
                rng.random_range(-spec.perturbation..=spec.perturbation)
            } else {
                0.0
            };
            spec.forcing + eps
        })
        .collect();
    let h = spec.delta_t / spec.substeps as f64;
    let mut scratch: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; p]);
    let mut out = Array2::<f64>::zeros((spec.t, p));
    let normal = Normal::new(0.0, spec.noise_std.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    for sample_idx in 0..spec.burn_in + spec.t {
        if sample_idx >= spec.burn_in {
            let row = sample_idx - spec.burn_in;
            for i in 0..p {
                let noise = if spec.noise_std > 0.0 {
                    normal.sample(&mut rng)
                } else {
                    0.0
                };
                out[[row, i]] = x[i] + noise;
            }
        }
        for _ in 0..spec.substeps {
            rk4_step(&mut x, spec.forcing, h, &mut scratch);
        }
        if x.iter()
            .any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT)
        {
            return Err(Error::Divergence(format!(
                "Lorenz-96 state exceeded {DIVERGENCE_LIMIT} after sample {sample_idx}"
            )));
        }
    }
    Ok((
        TimeSeriesPanel::from_replicates(vec![out])?,
        spec.ground_truth(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Axis;

    #[test]
    fn sparse_var_structure() {
        let spec = make_sparse_var(10, 3, 2, 0.096, 100, RngSeed(1)).unwrap();
        let truth = spec.ground_truth();
        for i in 0..10 {
            assert_eq!(truth.adjacency.row(i).iter().filter(|a| **a).count(), 3);
            assert!(truth.adjacency[[i, i]]);
        }
        assert!(truth.selected_lag.iter().all(|&l| l == 0 || l == 3));
        assert!(spec.spectral_radius() < 1.0);

        let diag = make_sparse_var(5, 2, 0, 0.3, 50, RngSeed(2)).unwrap();
        assert_eq!(diag.ground_truth().num_edges(), 5);

        assert_eq!(
            spec,
            make_sparse_var(10, 3, 2, 0.096, 100, RngSeed(1)).unwrap()
        );
        assert!(make_sparse_var(3, 1, 3, 0.1, 10, RngSeed(1)).is_err());
    }

    #[test]
    fn explosive_var_rejected() {
        assert!(matches!(
            make_sparse_var(4, 1, 3, 0.5, 10, RngSeed(1)),
            Err(Error::NonStationary(_))
        ));
        let a = Array2::from_diag(&Array1::from_elem(2, 1.2));
        assert!(VarSpec::new(vec![a], 10, RngSeed(1)).is_err());
    }

    #[test]
    fn noiseless_zero_var_is_zero() {
        let mut spec = VarSpec::new(vec![Array2::zeros((3, 3))], 50, RngSeed(3)).unwrap();
        spec.noise_std = 0.0;
        let (panel, truth) = simulate_var(&spec).unwrap();
        assert!(panel.replicates()[0].iter().all(|v| *v == 0.0));
        assert_eq!(truth.num_edges(), 0);
    }

    #[test]
    fn impulse_decays_geometrically() {
        let a = Array2::from_diag(&Array1::from_elem(2, 0.5));
        let mut spec = VarSpec::new(vec![a], 20, RngSeed(0)).unwrap();
        spec.noise_std = 0.0;
        spec.burn_in = 0;
        let history = ndarray::array![[1.0, 0.0]];
        let (panel, _) = simulate_var_with_history(&spec, &history).unwrap();
        let x = &panel.replicates()[0];
        for t in 0..20 {
            assert_eq!(x[[t, 0]], 0.5f64.powi(t as i32 + 1));
            assert_eq!(x[[t, 1]], 0.0);
        }
    }

    #[test]
    fn sparse_var_is_positively_autocorrelated() {
        let spec = make_sparse_var(10, 3, 2, 0.096, 2000, RngSeed(5)).unwrap();
        let (panel, _) = simulate_var(&spec).unwrap();
        let x = &panel.replicates()[0];
        let mean = x.mean_axis(Axis(0)).unwrap();
        for j in 0..10 {
            let c: Vec<f64> = x.column(j).iter().map(|v| v - mean[j]).collect();
            let lag1: f64 = c.windows(2).map(|w| w[0] * w[1]).sum();
            assert!(lag1 > 0.0, "series {j}");
        }
    }

    #[test]
    fn var_is_deterministic() {
        let spec = make_sparse_var(4, 2, 1, 0.2, 30, RngSeed(9)).unwrap();
        assert_eq!(
            simulate_var(&spec).unwrap().0,
            simulate_var(&spec).unwrap().0
        );
        let mut quiet = spec.clone();
        quiet.noise_std = 0.0;
        let (p1, _) = simulate_var(&quiet).unwrap();
        quiet.seed = RngSeed(1234);
        assert_eq!(p1, simulate_var(&quiet).unwrap().0);
    }

    #[test]
    fn lorenz_equilibrium() {
        let mut spec = LorenzSpec::new(6, 8.0, 50, RngSeed(0));
        spec.perturbation = 0.0;
        let (panel, _) = simulate_lorenz96(&spec).unwrap();
        assert!(panel.replicates()[0].iter().all(|v| (v - 8.0).abs() < 1e-9));
    }

    #[test]
    fn lorenz_truth_stencil() {
        let truth = LorenzSpec::new(20, 10.0, 10, RngSeed(0)).ground_truth();
        for i in 0..20 {
            assert_eq!(truth.adjacency.row(i).iter().filter(|a| **a).count(), 4);
            assert!(truth.adjacency[[i, (i + 18) % 20]]);
            assert!(truth.adjacency[[i, (i + 19) % 20]]);
            assert!(truth.adjacency[[i, i]]);
            assert!(truth.adjacency[[i, (i + 1) % 20]]);
        }
        assert!(LorenzSpec::new(3, 10.0, 10, RngSeed(0)).validate().is_err());
    }

    fn sup_diff(a: &TimeSeriesPanel<f64>, b: &TimeSeriesPanel<f64>, samples: usize) -> f64 {
        let (a, b) = (&a.replicates()[0], &b.replicates()[0]);
        (0..samples)
            .flat_map(|t| (0..a.ncols()).map(move |j| (t, j)))
            .map(|(t, j)| (a[[t, j]] - b[[t, j]]).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn lorenz_step_size_convergence() {
        let spec = LorenzSpec {
            burn_in: 0,
            ..LorenzSpec::new(10, 10.0, 100, RngSeed(4))
        };
        let run = |substeps| {
            simulate_lorenz96(&LorenzSpec { substeps, ..spec })
                .unwrap()
                .0
        };
        let (r10, r20, r40) = (run(10), run(20), run(40));
        // before the perturbation has grown into the chaotic regime
        assert!(sup_diff(&r10, &r20, 10) < 1e-5);
        // fourth order: halving the step cuts the error about 16x
        let ratio = sup_diff(&r10, &r20, 50) / sup_diff(&r20, &r40, 50);
        assert!((10.0..25.0).contains(&ratio), "ratio={ratio}");
    }

    #[test]
    fn stronger_forcing_is_wilder() {
        let var = |f: f64| {
            let (panel, _) = simulate_lorenz96(&LorenzSpec::new(10, f, 500, RngSeed(2))).unwrap();
            panel.replicates()[0].var_axis(Axis(0), 0.0).mean().unwrap()
        };
        assert!(var(40.0) > var(10.0));
    }
}
