//! Componentwise LSTM predicting one series from the full past of all
//! `p` series.
//!
//! Gate rows of the stacked matrices are ordered forget, input, output,
//! cell: rows `0..m` forget, `m..2m` input, `2m..3m` output, `3m..4m` cell
//! candidate.

use std::collections::BTreeMap;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::ComponentwiseModel;
use crate::nn::{init_params_with, sigmoid, InitScheme, RngSeed, Scalar};
use crate::panel::TimeSeriesPanel;
use crate::penalty::{GroupKind, GroupLayout, InputGroupView};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ClstmShape {
    pub p: usize,
    pub hidden: usize,
    /// Initial value of the forget-gate bias block.
    pub forget_bias: f64,
}

impl ClstmShape {
    pub fn new(p: usize, hidden: usize) -> Self {
        ClstmShape {
            p,
            hidden,
            forget_bias: 0.0,
        }
    }

    pub fn with_forget_bias(mut self, forget_bias: f64) -> Self {
        self.forget_bias = forget_bias;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.p == 0 || self.hidden == 0 {
            return Err(Error::InvalidArgument(format!(
                "cLSTM dimensions must be positive: p={}, m={}",
                self.p, self.hidden
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClstmNet<T> {
    shape: ClstmShape,
    /// `W`, `4m × p`.
    input: Array2<T>,
    /// `U`, `4m × m`.
    recurrent: Array2<T>,
    bias: Array1<T>,
    output: Array1<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState<T> {
    pub h: Array1<T>,
    pub c: Array1<T>,
}

impl<T: Scalar> LstmState<T> {
    pub fn zeros(m: usize) -> Self {
        LstmState {
            h: Array1::zeros(m),
            c: Array1::zeros(m),
        }
    }
}

impl<T: Scalar> ClstmNet<T> {
    pub fn zeros(shape: ClstmShape) -> Result<Self> {
        shape.validate()?;
        let m = shape.hidden;
        Ok(ClstmNet {
            shape,
            input: Array2::zeros((4 * m, shape.p)),
            recurrent: Array2::zeros((4 * m, m)),
            bias: Array1::zeros(4 * m),
            output: Array1::zeros(m),
        })
    }

    pub fn init(shape: ClstmShape, seed: RngSeed) -> Result<Self> {
        let mut rng = seed.rng();
        Self::init_with(shape, &mut rng)
    }

    pub(crate) fn init_with<R: Rng>(shape: ClstmShape, rng: &mut R) -> Result<Self> {
        shape.validate()?;
        let m = shape.hidden;
        let scheme = InitScheme::GlorotUniform;
        let input = init_params_with(4 * m, shape.p, scheme, rng)?;
        let recurrent = init_params_with(4 * m, m, scheme, rng)?;
        let output = init_params_with(1, m, scheme, rng)?.row(0).to_owned();
        let mut bias = Array1::zeros(4 * m);
        bias.slice_mut(s![0..m]).fill(T::of(shape.forget_bias));
        Ok(ClstmNet {
            shape,
            input,
            recurrent,
            bias,
            output,
        })
    }

    pub fn from_parts(
        shape: ClstmShape,
        input: Array2<T>,
        recurrent: Array2<T>,
        bias: Array1<T>,
        output: Array1<T>,
    ) -> Result<Self> {
        shape.validate()?;
        let m = shape.hidden;
        if input.dim() != (4 * m, shape.p)
            || recurrent.dim() != (4 * m, m)
            || bias.len() != 4 * m
            || output.len() != m
        {
            return Err(Error::Shape(
                "cLSTM parameter shapes do not match architecture".into(),
            ));
        }
        Ok(ClstmNet {
            shape,
            input,
            recurrent,
            bias,
            output,
        })
    }

    pub fn shape(&self) -> ClstmShape {
        self.shape
    }

    pub fn hidden(&self) -> usize {
        self.shape.hidden
    }

    pub fn input_weights(&self) -> &Array2<T> {
        &self.input
    }

    pub fn input_weights_mut(&mut self) -> &mut Array2<T> {
        &mut self.input
    }

    pub fn recurrent_weights(&self) -> &Array2<T> {
        &self.recurrent
    }

    pub fn recurrent_weights_mut(&mut self) -> &mut Array2<T> {
        &mut self.recurrent
    }

    pub fn gate_biases(&self) -> &Array1<T> {
        &self.bias
    }

    pub fn gate_biases_mut(&mut self) -> &mut Array1<T> {
        &mut self.bias
    }

    pub fn output_weights(&self) -> &Array1<T> {
        &self.output
    }

    pub fn output_weights_mut(&mut self) -> &mut Array1<T> {
        &mut self.output
    }

    pub fn input_groups(&self) -> InputGroupView<T> {
        InputGroupView::columns(
            self.input
                .columns()
                .into_iter()
                .map(|c| c.to_vec())
                .collect(),
        )
    }

    pub fn lstm_step(&self, x: &Array1<T>, state: &LstmState<T>) -> Result<LstmState<T>> {
        let m = self.shape.hidden;
        if x.len() != self.shape.p || state.h.len() != m || state.c.len() != m {
            return Err(Error::Shape(format!(
                "expected input of length {} and state of length {m}",
                self.shape.p
            )));
        }
        let a = self.input.dot(x) + self.recurrent.dot(&state.h) + &self.bias;
        let mut next = LstmState::zeros(m);
        for k in 0..m {
            let f = sigmoid(a[k]);
            let i = sigmoid(a[m + k]);
            let o = sigmoid(a[2 * m + k]);
            let g = a[3 * m + k].tanh();
            let c = f * state.c[k] + i * g;
            next.c[k] = c;
            next.h[k] = o * c.tanh();
        }
        Ok(next)
    }

    /// Predictions of `x_{i,2..T}`; the prediction for time `t` sees
    /// `x_1..x_{t-1}` starting from a zero state.
    pub fn forward(&self, series: &Array2<T>) -> Result<Array1<T>> {
        if series.nrows() < 2 {
            return Err(Error::ReplicateTooShort {
                replicate: 0,
                len: series.nrows(),
                min: 2,
            });
        }
        if series.ncols() != self.shape.p {
            return Err(Error::Shape(format!(
                "series has {} columns, network expects {}",
                series.ncols(),
                self.shape.p
            )));
        }
        let mut state = LstmState::zeros(self.shape.hidden);
        let mut preds = Array1::zeros(series.nrows() - 1);
        for t in 0..series.nrows() - 1 {
            state = self.lstm_step(&series.row(t).to_owned(), &state)?;
            preds[t] = state.h.dot(&self.output);
        }
        Ok(preds)
    }

    pub fn loss(&self, panel: &TimeSeriesPanel<T>, target: usize) -> Result<T> {
        let data = self.prepare(panel, target)?;
        Ok(ComponentwiseModel::loss(self, &data))
    }

    /// Exact full-BPTT gradient of [`ClstmNet::loss`], per replicate and summed.
    pub fn grad(&self, panel: &TimeSeriesPanel<T>, target: usize) -> Result<ClstmNet<T>> {
        let data = self.prepare(panel, target)?;
        let (_, flat) = self.loss_and_grad(&data);
        let mut grad = ClstmNet::zeros(self.shape)?;
        grad.set_params(&flat)?;
        Ok(grad)
    }

    pub fn num_params(&self) -> usize {
        let m = self.shape.hidden;
        4 * m * self.shape.p + 4 * m * m + 4 * m + m
    }

    fn run_batch(&self, batch: &SeqBatch<T>) -> BatchTrace<T> {
        let m = self.shape.hidden;
        let b = batch.batch;
        let steps = batch.steps;
        let proj = batch.inputs.dot(&self.input.t()) + &self.bias;
        let mut gates = Array2::zeros((steps * b, 4 * m));
        let mut cells = Array2::zeros((steps * b, m));
        let mut hiddens = Array2::zeros((steps * b, m));
        let mut resid = Array2::zeros((steps, b));
        let mut h_prev = Array2::<T>::zeros((b, m));
        let mut c_prev = Array2::<T>::zeros((b, m));
        for st in 0..steps {
            let rows = st * b..(st + 1) * b;
            let a = &proj.slice(s![rows.clone(), ..]) + &h_prev.dot(&self.recurrent.t());
            for r in 0..b {
                for k in 0..m {
                    let f = sigmoid(a[[r, k]]);
                    let i = sigmoid(a[[r, m + k]]);
                    let o = sigmoid(a[[r, 2 * m + k]]);
                    let g = a[[r, 3 * m + k]].tanh();
                    let c = f * c_prev[[r, k]] + i * g;
                    let row = st * b + r;
                    gates[[row, k]] = f;
                    gates[[row, m + k]] = i;
                    gates[[row, 2 * m + k]] = o;
                    gates[[row, 3 * m + k]] = g;
                    cells[[row, k]] = c;
                    hiddens[[row, k]] = o * c.tanh();
                }
            }
            h_prev = hiddens.slice(s![rows.clone(), ..]).to_owned();
            c_prev = cells.slice(s![rows, ..]).to_owned();
            let preds = h_prev.dot(&self.output);
            for r in 0..b {
                resid[[st, r]] = preds[r] - batch.targets[[st, r]];
            }
        }
        BatchTrace {
            gates,
            cells,
            hiddens,
            resid,
        }
    }

    fn backward_batch(&self, batch: &SeqBatch<T>, trace: &BatchTrace<T>, grad: &mut Array1<T>) {
        let m = self.shape.hidden;
        let p = self.shape.p;
        let b = batch.batch;
        let steps = batch.steps;
        let two = T::of(2.0);
        let mut d_pre = Array2::<T>::zeros((steps * b, 4 * m));
        let mut d_out = Array1::<T>::zeros(m);
        let mut dh_next = Array2::<T>::zeros((b, m));
        let mut dc_next = Array2::<T>::zeros((b, m));
        for st in (0..steps).rev() {
            for r in 0..b {
                let row = st * b + r;
                let dpred = two * trace.resid[[st, r]];
                for k in 0..m {
                    d_out[k] = d_out[k] + trace.hiddens[[row, k]] * dpred;
                    let f = trace.gates[[row, k]];
                    let i = trace.gates[[row, m + k]];
                    let o = trace.gates[[row, 2 * m + k]];
                    let g = trace.gates[[row, 3 * m + k]];
                    let c = trace.cells[[row, k]];
                    let c_prev = if st > 0 {
                        trace.cells[[row - b, k]]
                    } else {
                        T::zero()
                    };
                    let tc = c.tanh();
                    let dh = dpred * self.output[k] + dh_next[[r, k]];
                    let d_o = dh * tc;
                    let dc = dh * o * (T::one() - tc * tc) + dc_next[[r, k]];
                    d_pre[[row, k]] = dc * c_prev * f * (T::one() - f);
                    d_pre[[row, m + k]] = dc * g * i * (T::one() - i);
                    d_pre[[row, 2 * m + k]] = d_o * o * (T::one() - o);
                    d_pre[[row, 3 * m + k]] = dc * i * (T::one() - g * g);
                    dc_next[[r, k]] = dc * f;
                }
            }
            dh_next = d_pre
                .slice(s![st * b..(st + 1) * b, ..])
                .dot(&self.recurrent);
        }
        let d_input = d_pre.t().dot(&batch.inputs);
        let h_prev = shifted_hiddens(&trace.hiddens, b);
        let d_rec = d_pre.t().dot(&h_prev);
        let d_bias = d_pre.sum_axis(Axis(0));

        let (wi, ri, bi) = (4 * m * p, 4 * m * m, 4 * m);
        let mut off = 0;
        for (dst, src) in grad
            .slice_mut(s![off..off + wi])
            .iter_mut()
            .zip(d_input.iter())
        {
            *dst = *dst + *src;
        }
        off += wi;
        for (dst, src) in grad
            .slice_mut(s![off..off + ri])
            .iter_mut()
            .zip(d_rec.iter())
        {
            *dst = *dst + *src;
        }
        off += ri;
        for (dst, src) in grad
            .slice_mut(s![off..off + bi])
            .iter_mut()
            .zip(d_bias.iter())
        {
            *dst = *dst + *src;
        }
        off += bi;
        for (dst, src) in grad.slice_mut(s![off..]).iter_mut().zip(d_out.iter()) {
            *dst = *dst + *src;
        }
    }
}

/// Hidden state feeding each step: zero for the first step, then the
/// previous step's output.
fn shifted_hiddens<T: Scalar>(hiddens: &Array2<T>, b: usize) -> Array2<T> {
    let mut out = Array2::zeros(hiddens.dim());
    let n = hiddens.nrows();
    if n > b {
        out.slice_mut(s![b.., ..])
            .assign(&hiddens.slice(s![..n - b, ..]));
    }
    out
}

struct BatchTrace<T> {
    gates: Array2<T>,
    cells: Array2<T>,
    hiddens: Array2<T>,
    resid: Array2<T>,
}

/// Equal-length sequences processed in lockstep.
#[derive(Debug, Clone)]
pub struct SeqBatch<T> {
    /// Number of input steps, sequence length minus one.
    pub steps: usize,
    pub batch: usize,
    /// Time-major rows: step `s` of sequence `r` is row `s·batch + r`.
    pub inputs: Array2<T>,
    /// `targets[[s, r]]` is the target series at time `s + 1` of sequence `r`.
    pub targets: Array2<T>,
}

#[derive(Debug, Clone)]
pub struct ClstmData<T> {
    pub batches: Vec<SeqBatch<T>>,
}

impl<T: Scalar> ComponentwiseModel<T> for ClstmNet<T> {
    type Data = ClstmData<T>;

    fn p(&self) -> usize {
        self.shape.p
    }

    fn prepare(&self, panel: &TimeSeriesPanel<T>, target: usize) -> Result<ClstmData<T>> {
        let p = self.shape.p;
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
        let mut by_len: BTreeMap<usize, Vec<&Array2<T>>> = BTreeMap::new();
        for (r, rep) in panel.replicates().iter().enumerate() {
            if rep.nrows() < 2 {
                return Err(Error::ReplicateTooShort {
                    replicate: r,
                    len: rep.nrows(),
                    min: 2,
                });
            }
            by_len.entry(rep.nrows()).or_default().push(rep);
        }
        let batches = by_len
            .into_iter()
            .map(|(len, reps)| {
                let steps = len - 1;
                let b = reps.len();
                let mut inputs = Array2::zeros((steps * b, p));
                let mut targets = Array2::zeros((steps, b));
                for (r, rep) in reps.iter().enumerate() {
                    for st in 0..steps {
                        inputs.row_mut(st * b + r).assign(&rep.row(st));
                        targets[[st, r]] = rep[[st + 1, target]];
                    }
                }
                SeqBatch {
                    steps,
                    batch: b,
                    inputs,
                    targets,
                }
            })
            .collect();
        Ok(ClstmData { batches })
    }

    fn loss(&self, data: &ClstmData<T>) -> T {
        data.batches
            .iter()
            .map(|batch| {
                let trace = self.run_batch(batch);
                trace.resid.iter().map(|&r| r * r).sum::<T>()
            })
            .sum()
    }

    fn loss_and_grad(&self, data: &ClstmData<T>) -> (T, Array1<T>) {
        let mut grad = Array1::zeros(self.num_params());
        let mut loss = T::zero();
        for batch in &data.batches {
            let trace = self.run_batch(batch);
            loss = loss + trace.resid.iter().map(|&r| r * r).sum::<T>();
            self.backward_batch(batch, &trace, &mut grad);
        }
        (loss, grad)
    }

    fn params(&self) -> Array1<T> {
        self.input
            .iter()
            .chain(self.recurrent.iter())
            .chain(self.bias.iter())
            .chain(self.output.iter())
            .copied()
            .collect()
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
        for v in self
            .input
            .iter_mut()
            .chain(self.recurrent.iter_mut())
            .chain(self.bias.iter_mut())
            .chain(self.output.iter_mut())
        {
            *v = it.next().unwrap();
        }
        Ok(())
    }

    fn group_layout(&self) -> GroupLayout {
        let p = self.shape.p;
        let rows = 4 * self.shape.hidden;
        GroupLayout {
            kind: GroupKind::Column,
            series: (0..p)
                .map(|j| vec![(0..rows).map(|r| r * p + j).collect()])
                .collect(),
        }
    }

    fn num_loss_terms(&self, panel: &TimeSeriesPanel<T>) -> usize {
        panel
            .replicates()
            .iter()
            .map(|r| r.nrows().saturating_sub(1))
            .sum()
    }
}

/// Splits a long series into consecutive non-overlapping segments of
/// `segment_len` rows; a shorter tail is kept when it has at least two rows.
pub fn segment_series<T: Scalar>(
    series: ArrayView2<'_, T>,
    segment_len: usize,
) -> Result<Vec<Array2<T>>> {
    if segment_len < 2 {
        return Err(Error::InvalidArgument(format!(
            "segment length must be at least 2, got {segment_len}"
        )));
    }
    let n = series.nrows();
    Ok((0..n)
        .step_by(segment_len)
        .map(|start| {
            series
                .slice(s![start..(start + segment_len).min(n), ..])
                .to_owned()
        })
        .filter(|seg| seg.nrows() >= 2)
        .collect())
}

/// Segments every replicate of `panel`.
pub fn segment_panel<T: Scalar>(
    panel: &TimeSeriesPanel<T>,
    segment_len: usize,
) -> Result<TimeSeriesPanel<T>> {
    let mut segments = Vec::new();
    for rep in panel.replicates() {
        segments.extend(segment_series(rep.view(), segment_len)?);
    }
    TimeSeriesPanel::new(panel.names().to_vec(), segments)
}
