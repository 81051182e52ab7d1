//! Independent oracles shared by the property tests and the acceptance suite.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};
use neurogranger::clstm::{ClstmNet, ClstmShape};
use neurogranger::cmlp::{CmlpNet, CmlpShape};
use neurogranger::nn::finite_diff_grad;
use neurogranger::panel::TimeSeriesPanel;
use neurogranger::penalty::{prox_group, prox_hier, prox_mixed, InputGroupView, PenaltyFamily};
use neurogranger::{Activation, ComponentwiseModel, RngSeed};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// `(weight, block indices)` pairs making up one series' penalty.
pub fn groups(family: PenaltyFamily, k: usize, alpha: f64) -> Vec<(f64, Vec<usize>)> {
    match family {
        PenaltyFamily::Group => vec![(1.0, (0..k).collect())],
        PenaltyFamily::Hier => (0..k).map(|s| (1.0, (s..k).collect())).collect(),
        PenaltyFamily::Mixed => {
            let mut g = vec![(alpha, (0..k).collect())];
            g.extend((0..k).map(|b| (1.0 - alpha, vec![b])));
            g
        }
    }
}

fn block_sq(z: &[Vec<f64>], members: &[usize]) -> f64 {
    members
        .iter()
        .flat_map(|&b| z[b].iter())
        .map(|v| v * v)
        .sum()
}

/// `½‖z − v‖² + τ Ω(z)`.
pub fn prox_objective(z: &[Vec<f64>], v: &[Vec<f64>], tau: f64, gs: &[(f64, Vec<usize>)]) -> f64 {
    let fit: f64 = z
        .iter()
        .flatten()
        .zip(v.iter().flatten())
        .map(|(a, b)| 0.5 * (a - b) * (a - b))
        .sum();
    fit + tau
        * gs.iter()
            .map(|(w, m)| w * block_sq(z, m).sqrt())
            .sum::<f64>()
}

/// Minimizer of `½‖z − v‖² + τ Ω(z)` by enumerating which lag blocks are
/// nonzero and solving each smooth restricted problem with damped Newton.
pub fn brute_force_prox(v: &[Vec<f64>], tau: f64, gs: &[(f64, Vec<usize>)]) -> Vec<Vec<f64>> {
    let k = v.len();
    let zero: Vec<Vec<f64>> = v.iter().map(|b| vec![0.0; b.len()]).collect();
    let mut best = (prox_objective(&zero, v, tau, gs), zero.clone());
    for mask in 1u32..(1 << k) {
        let support: Vec<usize> = (0..k).filter(|b| mask & (1 << b) != 0).collect();
        if let Some(z) = restricted_newton(v, tau, gs, &support) {
            let f = prox_objective(&z, v, tau, gs);
            if f < best.0 {
                best = (f, z);
            }
        }
    }
    best.1
}

fn restricted_newton(
    v: &[Vec<f64>],
    tau: f64,
    gs: &[(f64, Vec<usize>)],
    support: &[usize],
) -> Option<Vec<Vec<f64>>> {
    // flatten the supported blocks
    let mut offsets = vec![usize::MAX; v.len()];
    let mut n = 0;
    for &b in support {
        offsets[b] = n;
        n += v[b].len();
    }
    if n == 0 {
        return None;
    }
    let active: Vec<(f64, Vec<usize>)> = gs
        .iter()
        .filter_map(|(w, m)| {
            let idx: Vec<usize> = m
                .iter()
                .filter(|&&b| offsets[b] != usize::MAX)
                .flat_map(|&b| (offsets[b]..offsets[b] + v[b].len()).collect::<Vec<_>>())
                .collect();
            (!idx.is_empty()).then_some((*w, idx))
        })
        .collect();
    let target = DVector::from_iterator(n, support.iter().flat_map(|&b| v[b].iter().copied()));
    let objective = |z: &DVector<f64>| -> Option<f64> {
        let mut f = 0.5 * (z - &target).norm_squared();
        for (w, idx) in &active {
            let norm = idx.iter().map(|&i| z[i] * z[i]).sum::<f64>().sqrt();
            if norm == 0.0 {
                return None;
            }
            f += tau * w * norm;
        }
        Some(f)
    };
    // a block may not cross its own origin within one step: the restricted
    // problem is smooth only on each side of it
    let same_side = |z: &DVector<f64>, cand: &DVector<f64>| {
        support.iter().all(|&b| {
            let r = offsets[b]..offsets[b] + v[b].len();
            r.map(|i| z[i] * cand[i]).sum::<f64>() > 0.0
        })
    };
    let mut z = target.clone();
    objective(&z)?;
    for _ in 0..200 {
        let mut grad = &z - &target;
        let mut hess = DMatrix::<f64>::identity(n, n);
        for (w, idx) in &active {
            let norm = idx.iter().map(|&i| z[i] * z[i]).sum::<f64>().sqrt();
            for &i in idx {
                grad[i] += tau * w * z[i] / norm;
                for &j in idx {
                    let delta = if i == j { 1.0 } else { 0.0 };
                    hess[(i, j)] += tau * w * (delta - z[i] * z[j] / (norm * norm)) / norm;
                }
            }
        }
        if grad.norm() < 1e-12 * (1.0 + target.norm()) {
            let mut out: Vec<Vec<f64>> = v.iter().map(|b| vec![0.0; b.len()]).collect();
            for &b in support {
                for (e, slot) in out[b].iter_mut().enumerate() {
                    *slot = z[offsets[b] + e];
                }
            }
            return Some(out);
        }
        let step = hess.lu().solve(&grad)?;
        // near the solution take plain Newton steps; roundoff defeats Armijo there
        if grad.norm() < 1e-6 {
            let cand = &z - &step;
            if same_side(&z, &cand) && objective(&cand).is_some() {
                z = cand;
                continue;
            }
        }
        let f0 = objective(&z)?;
        let mut t = 1.0;
        loop {
            let cand = &z - &step * t;
            if !same_side(&z, &cand) {
                t *= 0.5;
                continue;
            }
            if let Some(f) = objective(&cand) {
                if f <= f0 - 1e-4 * t * grad.dot(&step) || t < 1e-12 {
                    z = cand;
                    break;
                }
            }
            t *= 0.5;
            if t < 1e-16 {
                return None;
            }
        }
    }
    None
}

/// Smallest directional derivative of the prox objective at `z` over a set
/// of unit directions; nonnegative (up to roundoff) at the minimizer.
pub fn min_directional_derivative(
    z: &[Vec<f64>],
    v: &[Vec<f64>],
    tau: f64,
    gs: &[(f64, Vec<usize>)],
    rng: &mut ChaCha8Rng,
) -> f64 {
    let dims: Vec<usize> = z.iter().map(|b| b.len()).collect();
    let n: usize = dims.iter().sum();
    let mut dirs: Vec<Vec<f64>> = Vec::new();
    for i in 0..n {
        for s in [1.0, -1.0] {
            let mut d = vec![0.0; n];
            d[i] = s;
            dirs.push(d);
        }
    }
    for _ in 0..200 {
        let d: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
        dirs.push(d.iter().map(|x| x / norm).collect());
    }
    let unflatten = |flat: &[f64]| {
        let mut out = Vec::new();
        let mut at = 0;
        for &len in &dims {
            out.push(flat[at..at + len].to_vec());
            at += len;
        }
        out
    };
    dirs.iter()
        .map(|flat| {
            let d = unflatten(flat);
            let mut deriv: f64 = z
                .iter()
                .flatten()
                .zip(v.iter().flatten())
                .zip(d.iter().flatten())
                .map(|((a, b), c)| (a - b) * c)
                .sum();
            for (w, m) in gs {
                let zn = block_sq(z, m).sqrt();
                let term = if zn > 0.0 {
                    m.iter()
                        .flat_map(|&b| z[b].iter().zip(&d[b]))
                        .map(|(a, c)| a * c)
                        .sum::<f64>()
                        / zn
                } else {
                    block_sq(&d, m).sqrt()
                };
                deriv += tau * w * term;
            }
            deriv
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn apply_prox(family: PenaltyFamily, v: &[Vec<f64>], tau: f64, alpha: f64) -> Vec<Vec<f64>> {
    let view = InputGroupView::lagged(vec![v.to_vec()]);
    let out = match family {
        PenaltyFamily::Group => prox_group(&view, tau),
        PenaltyFamily::Hier => prox_hier(&view, tau),
        PenaltyFamily::Mixed => prox_mixed(&view, tau, alpha),
    };
    out.series.into_iter().next().unwrap()
}

/// Random lag blocks with total dimension at most 4.
pub fn random_blocks(rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let k = rng.random_range(1..=4usize);
    let h = rng.random_range(1..=4 / k);
    (0..k)
        .map(|_| (0..h).map(|_| rng.random_range(-3.0..3.0)).collect())
        .collect()
}

pub fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn random_panel(rng: &mut ChaCha8Rng, p: usize, lens: &[usize]) -> TimeSeriesPanel<f64> {
    let reps = lens
        .iter()
        .map(|&n| Array2::from_shape_fn((n, p), |_| rng.random_range(-1.5..1.5)))
        .collect();
    TimeSeriesPanel::from_replicates(reps).unwrap()
}

fn relative_error(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let diff = (a - b).mapv(|x| x * x).sum().sqrt();
    let scale = a.dot(a).sqrt().max(b.dot(b).sqrt()).max(1e-12);
    diff / scale
}

/// Relative error between the analytic gradient and central differences.
pub fn gradient_error<M: ComponentwiseModel<f64>>(
    model: &M,
    panel: &TimeSeriesPanel<f64>,
    target: usize,
) -> f64 {
    let data = model.prepare(panel, target).unwrap();
    let (_, grad) = model.loss_and_grad(&data);
    let mut probe = model.clone();
    let fd = finite_diff_grad(
        |theta: &Array1<f64>| {
            probe.set_params(theta).unwrap();
            probe.loss(&data)
        },
        &model.params(),
        1e-5,
    )
    .unwrap();
    relative_error(&grad, &fd)
}

pub fn random_cmlp_case(
    rng: &mut ChaCha8Rng,
    activation: Activation,
) -> (CmlpNet<f64>, TimeSeriesPanel<f64>, usize) {
    let p = rng.random_range(1..=5usize);
    let lag = rng.random_range(1..=3usize);
    let hidden = rng.random_range(1..=8usize);
    let shape = CmlpShape::new(p, lag, hidden).with_activation(activation);
    let net = CmlpNet::init(shape, RngSeed(rng.random())).unwrap();
    let len = rng.random_range(lag + 2..lag + 12);
    let panel = random_panel(rng, p, &[len]);
    (net, panel, rng.random_range(0..p))
}

pub fn random_clstm_case(rng: &mut ChaCha8Rng) -> (ClstmNet<f64>, TimeSeriesPanel<f64>, usize) {
    let p = rng.random_range(1..=3usize);
    let hidden = rng.random_range(1..=4usize);
    let mut net = ClstmNet::init(ClstmShape::new(p, hidden), RngSeed(rng.random())).unwrap();
    // non-trivial biases exercise every gate path
    for b in net.gate_biases_mut().iter_mut() {
        *b = rng.random_range(-0.5..0.5);
    }
    let len = rng.random_range(2..=15usize);
    let panel = random_panel(rng, p, &[len]);
    (net, panel, rng.random_range(0..p))
}

/// Mann–Whitney statistic by brute force over all positive/negative pairs.
pub fn pairwise_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                wins += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}
