//! Componentwise multilayer perceptron predicting one series from `K`
//! lags of all `p` series.

use ndarray::{s, Array1, Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::ComponentwiseModel;
use crate::nn::{init_params_with, Activation, InitScheme, RngSeed, Scalar};
use crate::panel::TimeSeriesPanel;
use crate::penalty::{GroupKind, GroupLayout, InputGroupView};

/// Architecture of a [`CmlpNet`].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CmlpShape {
    pub p: usize,
    pub lag: usize,
    pub hidden: usize,
    pub layers: usize,
    pub activation: Activation,
}

impl CmlpShape {
    pub fn new(p: usize, lag: usize, hidden: usize) -> Self {
        CmlpShape {
            p,
            lag,
            hidden,
            layers: 1,
            activation: Activation::Tanh,
        }
    }

    pub fn with_layers(mut self, layers: usize) -> Self {
        self.layers = layers;
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.p == 0 || self.lag == 0 || self.hidden == 0 || self.layers == 0 {
            return Err(Error::InvalidArgument(format!(
                "cMLP dimensions must be positive: p={}, K={}, H={}, L={}",
                self.p, self.lag, self.hidden, self.layers
            )));
        }
        Ok(())
    }
}

/// Per-output MLP.
///
/// The first layer is stored as one `H × (K·p)` matrix whose column
/// `(k-1)·p + j` multiplies `x_{t-k, j}`; [`CmlpNet::lag_weights`] exposes
/// the `W^{1k}` blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct CmlpNet<T> {
    shape: CmlpShape,
    first_layer: Array2<T>,
    hidden_layers: Vec<Array2<T>>,
    biases: Vec<Array1<T>>,
    output: Array1<T>,
}

/// `x_{t-1}, …, x_{t-K}` for a single prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct LaggedInput<T> {
    pub lags: Vec<Array1<T>>,
}

impl<T: Scalar> LaggedInput<T> {
    /// Window predicting row `t` of `series` (`t >= K`).
    pub fn from_series(series: &Array2<T>, t: usize, lag: usize) -> Result<Self> {
        if t < lag || t > series.nrows() {
            return Err(Error::InvalidArgument(format!(
                "cannot take {lag} lags before row {t} of a length {} series",
                series.nrows()
            )));
        }
        Ok(LaggedInput {
            lags: (1..=lag).map(|k| series.row(t - k).to_owned()).collect(),
        })
    }
}

impl<T: Scalar> CmlpNet<T> {
    pub fn zeros(shape: CmlpShape) -> Result<Self> {
        shape.validate()?;
        let h = shape.hidden;
        Ok(CmlpNet {
            shape,
            first_layer: Array2::zeros((h, shape.lag * shape.p)),
            hidden_layers: vec![Array2::zeros((h, h)); shape.layers - 1],
            biases: vec![Array1::zeros(h); shape.layers],
            output: Array1::zeros(h),
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(shape: CmlpShape, seed: RngSeed) -> Result<Self> {
        let mut rng = seed.rng();
        Self::init_with(shape, &mut rng)
    }

    pub(crate) fn init_with<R: Rng>(shape: CmlpShape, rng: &mut R) -> Result<Self> {
        shape.validate()?;
        let h = shape.hidden;
        let scheme = InitScheme::GlorotUniform;
        let first_layer = init_params_with(h, shape.lag * shape.p, scheme, rng)?;
        let hidden_layers = (1..shape.layers)
            .map(|_| init_params_with(h, h, scheme, rng))
            .collect::<Result<Vec<_>>>()?;
        let output = init_params_with(1, h, scheme, rng)?.row(0).to_owned();
        Ok(CmlpNet {
            shape,
            first_layer,
            hidden_layers,
            biases: vec![Array1::zeros(h); shape.layers],
            output,
        })
    }

    pub fn from_parts(
        shape: CmlpShape,
        first_layer: Array2<T>,
        hidden_layers: Vec<Array2<T>>,
        biases: Vec<Array1<T>>,
        output: Array1<T>,
    ) -> Result<Self> {
        shape.validate()?;
        let h = shape.hidden;
        let ok = first_layer.dim() == (h, shape.lag * shape.p)
            && hidden_layers.len() == shape.layers - 1
            && hidden_layers.iter().all(|w| w.dim() == (h, h))
            && biases.len() == shape.layers
            && biases.iter().all(|b| b.len() == h)
            && output.len() == h;
        if !ok {
            return Err(Error::Shape(
                "cMLP parameter shapes do not match architecture".into(),
            ));
        }
        Ok(CmlpNet {
            shape,
            first_layer,
            hidden_layers,
            biases,
            output,
        })
    }

    pub fn shape(&self) -> CmlpShape {
        self.shape
    }

    pub fn lag(&self) -> usize {
        self.shape.lag
    }

    pub fn hidden(&self) -> usize {
        self.shape.hidden
    }

    pub fn activation(&self) -> Activation {
        self.shape.activation
    }

    pub fn first_layer(&self) -> &Array2<T> {
        &self.first_layer
    }

    /// `W^{1k}` (`H × p`), `k` in `1..=K`.
    pub fn lag_weights(&self, k: usize) -> ArrayView2<'_, T> {
        assert!(k >= 1 && k <= self.shape.lag, "lag {k} out of range");
        let p = self.shape.p;
        self.first_layer.slice(s![.., (k - 1) * p..k * p])
    }

    pub fn lag_weights_mut(&mut self, k: usize) -> ArrayViewMut2<'_, T> {
        assert!(k >= 1 && k <= self.shape.lag, "lag {k} out of range");
        let p = self.shape.p;
        self.first_layer.slice_mut(s![.., (k - 1) * p..k * p])
    }

    pub fn hidden_layers(&self) -> &[Array2<T>] {
        &self.hidden_layers
    }

    pub fn hidden_layers_mut(&mut self) -> &mut [Array2<T>] {
        &mut self.hidden_layers
    }

    pub fn biases(&self) -> &[Array1<T>] {
        &self.biases
    }

    pub fn biases_mut(&mut self) -> &mut [Array1<T>] {
        &mut self.biases
    }

    pub fn output_weights(&self) -> &Array1<T> {
        &self.output
    }

    pub fn output_weights_mut(&mut self) -> &mut Array1<T> {
        &mut self.output
    }

    /// Lagged input blocks `W^{1k}_{:j}` for every series.
    pub fn input_groups(&self) -> InputGroupView<T> {
        self.group_layout().gather(&self.params())
    }

    /// Largest lag whose block for series `j` is nonzero, 0 if none.
    pub fn selected_lag(&self, j: usize) -> usize {
        (1..=self.shape.lag)
            .rev()
            .find(|&k| {
                self.lag_weights(k)
                    .column(j)
                    .iter()
                    .any(|v| *v != T::zero())
            })
            .unwrap_or(0)
    }

    /// One-step prediction `w_O · h^L`.
    pub fn forward(&self, input: &LaggedInput<T>) -> Result<T> {
        if input.lags.len() != self.shape.lag || input.lags.iter().any(|x| x.len() != self.shape.p)
        {
            return Err(Error::Shape(format!(
                "expected {} lags of length {}",
                self.shape.lag, self.shape.p
            )));
        }
        let row: Vec<T> = input.lags.iter().flat_map(|x| x.iter().copied()).collect();
        let design =
            Array2::from_shape_vec((1, row.len()), row).map_err(|e| Error::Shape(e.to_string()))?;
        let acts = self.activations(&design);
        Ok(acts
            .last()
            .expect("at least one layer")
            .row(0)
            .dot(&self.output))
    }

    /// Hidden activations of every layer for a batch of design rows.
    fn activations(&self, design: &Array2<T>) -> Vec<Array2<T>> {
        let act = self.shape.activation;
        let mut out = Vec::with_capacity(self.shape.layers);
        let mut z = design.dot(&self.first_layer.t()) + &self.biases[0];
        z.mapv_inplace(|v| act.apply(v));
        out.push(z);
        for (w, b) in self.hidden_layers.iter().zip(&self.biases[1..]) {
            let mut z = out.last().unwrap().dot(&w.t()) + b;
            z.mapv_inplace(|v| act.apply(v));
            out.push(z);
        }
        out
    }

    fn predict(&self, design: &Array2<T>) -> Array1<T> {
        self.activations(design).last().unwrap().dot(&self.output)
    }

    fn backward(&self, data: &CmlpData<T>) -> (T, CmlpNet<T>) {
        let act = self.shape.activation;
        let acts = self.activations(&data.design);
        let last = acts.last().unwrap();
        let resid = last.dot(&self.output) - &data.target;
        let loss = resid.dot(&resid);
        let dpred = resid * T::of(2.0);

        let mut grad = CmlpNet::zeros(self.shape).expect("valid shape");
        grad.output = last.t().dot(&dpred);

        // dZ for the last layer: (dpred ⊗ w_O) ⊙ σ'
        let mut dz = Array2::from_shape_fn(last.dim(), |(t, h)| {
            dpred[t] * self.output[h] * act.derivative_from_output(last[[t, h]])
        });
        for l in (1..self.shape.layers).rev() {
            grad.biases[l] = dz.sum_axis(Axis(0));
            grad.hidden_layers[l - 1] = dz.t().dot(&acts[l - 1]);
            let da = dz.dot(&self.hidden_layers[l - 1]);
            let prev = &acts[l - 1];
            dz = Array2::from_shape_fn(prev.dim(), |(t, h)| {
                da[[t, h]] * act.derivative_from_output(prev[[t, h]])
            });
        }
        grad.biases[0] = dz.sum_axis(Axis(0));
        grad.first_layer = dz.t().dot(&data.design);
        (loss, grad)
    }

    /// Squared one-step-ahead error summed over `t = K+1..T` of every
    /// replicate.
    pub fn loss(&self, panel: &TimeSeriesPanel<T>, target: usize) -> Result<T> {
        let data = self.prepare(panel, target)?;
        Ok(ComponentwiseModel::loss(self, &data))
    }

    /// Exact gradient of [`CmlpNet::loss`], returned in the same layout as
    /// the network's parameters.
    pub fn grad(&self, panel: &TimeSeriesPanel<T>, target: usize) -> Result<CmlpNet<T>> {
        let data = self.prepare(panel, target)?;
        Ok(self.backward(&data).1)
    }
}

/// Lagged design matrix and targets for one output series.
#[derive(Debug, Clone)]
pub struct CmlpData<T> {
    /// Rows `[x_{t-1}, …, x_{t-K}]`, windows never crossing replicates.
    pub design: Array2<T>,
    pub target: Array1<T>,
}

impl<T: Scalar> ComponentwiseModel<T> for CmlpNet<T> {
    type Data = CmlpData<T>;

    fn p(&self) -> usize {
        self.shape.p
    }

    fn prepare(&self, panel: &TimeSeriesPanel<T>, target: usize) -> Result<CmlpData<T>> {
        let (p, lag) = (self.shape.p, self.shape.lag);
        if panel.p() != p {
            return Err(Error::Shape(format!(
                "panel has {} series, network expects {p}",
                panel.p()
            )));
        }
        if target >= p {
            return Err(Error::InvalidArgument(format!(
                "target series {target} out of range"
            )));
        }
        for (r, rep) in panel.replicates().iter().enumerate() {
            if rep.nrows() <= lag {
                return Err(Error::ReplicateTooShort {
                    replicate: r,
                    len: rep.nrows(),
                    min: lag + 1,
                });
            }
        }
        let n = self.num_loss_terms(panel);
        let mut design = Array2::zeros((n, lag * p));
        let mut y = Array1::zeros(n);
        let mut row = 0;
        for rep in panel.replicates() {
            for t in lag..rep.nrows() {
                for k in 1..=lag {
                    design
                        .slice_mut(s![row, (k - 1) * p..k * p])
                        .assign(&rep.row(t - k));
                }
                y[row] = rep[[t, target]];
                row += 1;
            }
        }
        Ok(CmlpData { design, target: y })
    }

    fn loss(&self, data: &CmlpData<T>) -> T {
        let resid = self.predict(&data.design) - &data.target;
        resid.dot(&resid)
    }

    fn loss_and_grad(&self, data: &CmlpData<T>) -> (T, Array1<T>) {
        let (loss, grad) = self.backward(data);
        (loss, grad.params())
    }

    fn params(&self) -> Array1<T> {
        let mut flat = Vec::with_capacity(self.num_params());
        flat.extend(self.first_layer.iter().copied());
        for w in &self.hidden_layers {
            flat.extend(w.iter().copied());
        }
        for b in &self.biases {
            flat.extend(b.iter().copied());
        }
        flat.extend(self.output.iter().copied());
        Array1::from(flat)
    }

    fn set_params(&mut self, flat: &Array1<T>) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut it = flat.iter().copied();
        for v in self.first_layer.iter_mut() {
            *v = it.next().unwrap();
        }
        for w in self.hidden_layers.iter_mut() {
            for v in w.iter_mut() {
                *v = it.next().unwrap();
            }
        }
        for b in self.biases.iter_mut() {
            for v in b.iter_mut() {
                *v = it.next().unwrap();
            }
        }
        for v in self.output.iter_mut() {
            *v = it.next().unwrap();
        }
        Ok(())
    }

    fn group_layout(&self) -> GroupLayout {
        let CmlpShape { p, lag, hidden, .. } = self.shape;
        let cols = lag * p;
        let series = (0..p)
            .map(|j| {
                (1..=lag)
                    .map(|k| (0..hidden).map(|h| h * cols + (k - 1) * p + j).collect())
                    .collect()
            })
            .collect();
        GroupLayout {
            kind: GroupKind::Lagged,
            series,
        }
    }

    fn num_loss_terms(&self, panel: &TimeSeriesPanel<T>) -> usize {
        panel
            .replicates()
            .iter()
            .map(|r| r.nrows().saturating_sub(self.shape.lag))
            .sum()
    }
}

impl<T: Scalar> CmlpNet<T> {
    pub fn num_params(&self) -> usize {
        let h = self.shape.hidden;
        h * self.shape.lag * self.shape.p
            + (self.shape.layers - 1) * h * h
            + self.shape.layers * h
            + h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::finite_diff_grad;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_panel(p: usize, lens: &[usize], seed: u64) -> TimeSeriesPanel<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let reps = lens
            .iter()
            .map(|&n| Array2::from_shape_simple_fn((n, p), || rng.random_range(-1.0..1.0)))
            .collect();
        TimeSeriesPanel::from_replicates(reps).unwrap()
    }

    #[test]
    fn zero_net_predicts_zero() {
        let net = CmlpNet::<f64>::zeros(CmlpShape::new(3, 2, 4)).unwrap();
        let input = LaggedInput {
            lags: vec![array![1.0, -2.0, 3.0], array![0.5, 0.5, 9.0]],
        };
        assert_eq!(net.forward(&input).unwrap(), 0.0);
    }

    #[test]
    fn zero_first_layer_is_input_invariant() {
        let mut net = CmlpNet::<f64>::zeros(CmlpShape::new(2, 2, 3)).unwrap();
        net.output_weights_mut().fill(1.0);
        for x in [-3.0, 0.0, 7.5] {
            let input = LaggedInput {
                lags: vec![array![x, 1.0], array![2.0 * x, -x]],
            };
            assert_eq!(net.forward(&input).unwrap(), 0.0);
        }
    }

    #[test]
    fn scalar_forward() {
        let mut net = CmlpNet::<f64>::zeros(CmlpShape::new(1, 1, 1)).unwrap();
        net.lag_weights_mut(1)[[0, 0]] = 2.0;
        net.output_weights_mut()[0] = 1.0;
        let y = net
            .forward(&LaggedInput {
                lags: vec![array![0.5]],
            })
            .unwrap();
        assert!((y - 1.0f64.tanh()).abs() < 1e-15);
        assert!((y - 0.761594).abs() < 1e-6);
    }

    #[test]
    fn forward_rejects_bad_shapes() {
        let net = CmlpNet::<f64>::zeros(CmlpShape::new(2, 2, 3)).unwrap();
        assert!(net
            .forward(&LaggedInput {
                lags: vec![array![1.0, 2.0]]
            })
            .is_err());
        assert!(net
            .forward(&LaggedInput {
                lags: vec![array![1.0], array![2.0]]
            })
            .is_err());
    }

    #[test]
    fn loss_of_zero_net() {
        let net = CmlpNet::<f64>::zeros(CmlpShape::new(2, 1, 2)).unwrap();
        let zeros = TimeSeriesPanel::from_replicates(vec![Array2::zeros((6, 2))]).unwrap();
        assert_eq!(net.loss(&zeros, 0).unwrap(), 0.0);

        let c = 1.5;
        let constant =
            TimeSeriesPanel::from_replicates(vec![Array2::from_elem((6, 2), c)]).unwrap();
        let n = 6 - 1;
        assert!((net.loss(&constant, 1).unwrap() - n as f64 * c * c).abs() < 1e-12);
    }

    #[test]
    fn term_counts_respect_replicates() {
        let net = CmlpNet::<f64>::zeros(CmlpShape::new(2, 2, 2)).unwrap();
        let panel = random_panel(2, &[21, 21], 3);
        assert_eq!(net.num_loss_terms(&panel), 38);
        assert_eq!(net.prepare(&panel, 0).unwrap().design.nrows(), 38);
    }

    #[test]
    fn short_replicate_is_named() {
        let net = CmlpNet::<f64>::zeros(CmlpShape::new(2, 3, 2)).unwrap();
        let panel = random_panel(2, &[10, 3], 1);
        match net.loss(&panel, 0) {
            Err(Error::ReplicateTooShort {
                replicate,
                len,
                min,
            }) => {
                assert_eq!((replicate, len, min), (1, 3, 4));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn loss_additive_over_replicates() {
        let net = CmlpNet::<f64>::init(CmlpShape::new(3, 2, 4), RngSeed(5)).unwrap();
        let a = random_panel(3, &[12], 1);
        let b = random_panel(3, &[9, 15], 2);
        let joint = net.loss(&a.concat(&b).unwrap(), 1).unwrap();
        let sum = net.loss(&a, 1).unwrap() + net.loss(&b, 1).unwrap();
        assert!((joint - sum).abs() < 1e-12 * joint.abs().max(1.0));
    }

    #[test]
    fn windows_match_single_forward() {
        let net = CmlpNet::<f64>::init(CmlpShape::new(3, 2, 4), RngSeed(9)).unwrap();
        let panel = random_panel(3, &[8], 4);
        let rep = &panel.replicates()[0];
        let mut expected = 0.0;
        for t in 2..8 {
            let pred = net
                .forward(&LaggedInput::from_series(rep, t, 2).unwrap())
                .unwrap();
            expected += (rep[[t, 0]] - pred).powi(2);
        }
        assert!((net.loss(&panel, 0).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for (layers, act) in [
            (1, Activation::Tanh),
            (2, Activation::Sigmoid),
            (3, Activation::Tanh),
        ] {
            let shape = CmlpShape::new(3, 2, 4)
                .with_layers(layers)
                .with_activation(act);
            let mut net = CmlpNet::<f64>::init(shape, RngSeed(11)).unwrap();
            for b in net.biases_mut() {
                b.mapv_inplace(|_| 0.1);
            }
            let panel = random_panel(3, &[20], 8);
            let data = net.prepare(&panel, 2).unwrap();
            let (_, grad) = net.loss_and_grad(&data);
            let theta = net.params();
            let mut probe = net.clone();
            let fd = finite_diff_grad(
                |t| {
                    probe.set_params(t).unwrap();
                    ComponentwiseModel::loss(&probe, &data)
                },
                &theta,
                1e-5,
            )
            .unwrap();
            let rel = (&grad - &fd).mapv(f64::abs).sum() / fd.mapv(f64::abs).sum();
            assert!(rel < 1e-6, "layers={layers} rel={rel}");
        }
    }

    #[test]
    fn zero_residual_gives_zero_gradient() {
        let net = CmlpNet::<f64>::init(CmlpShape::new(2, 2, 3), RngSeed(2)).unwrap();
        let mut rep = random_panel(2, &[10], 5).replicates()[0].clone();
        // overwrite the target with the net's own predictions, in time order
        for t in 2..10 {
            rep[[t, 0]] = net
                .forward(&LaggedInput::from_series(&rep, t, 2).unwrap())
                .unwrap();
        }
        let fitted = TimeSeriesPanel::from_replicates(vec![rep]).unwrap();
        let g = net.grad(&fitted, 0).unwrap().params();
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn silent_series_has_zero_input_gradient() {
        let net = CmlpNet::<f64>::init(CmlpShape::new(3, 2, 4), RngSeed(3)).unwrap();
        let mut rep = random_panel(3, &[15], 6).replicates()[0].clone();
        rep.column_mut(1).fill(0.0);
        let panel = TimeSeriesPanel::from_replicates(vec![rep]).unwrap();
        let grad = net.grad(&panel, 0).unwrap();
        for k in 1..=2 {
            assert!(grad.lag_weights(k).column(1).iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn selected_lag_is_largest_nonzero_block() {
        let mut net = CmlpNet::<f64>::zeros(CmlpShape::new(2, 3, 2)).unwrap();
        assert_eq!(net.selected_lag(0), 0);
        net.lag_weights_mut(2)[[1, 0]] = 0.3;
        assert_eq!(net.selected_lag(0), 2);
        assert_eq!(net.selected_lag(1), 0);
    }

    #[test]
    fn layout_round_trip() {
        let net = CmlpNet::<f64>::init(CmlpShape::new(3, 2, 2), RngSeed(1)).unwrap();
        let view = net.input_groups();
        for j in 0..3 {
            for k in 1..=2 {
                assert_eq!(view.series[j][k - 1], net.lag_weights(k).column(j).to_vec());
            }
        }
        let mut flat = net.params();
        net.group_layout().scatter(&view, &mut flat);
        assert_eq!(flat, net.params());
    }
}
