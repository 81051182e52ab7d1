//! Common surface of the componentwise networks, as seen by the optimizer.

use ndarray::Array1;

use crate::error::Result;
use crate::nn::Scalar;
use crate::panel::TimeSeriesPanel;
use crate::penalty::GroupLayout;

/// A network predicting a single output series from the past of all `p`
/// input series, with its input weights arranged in per-series groups.
pub trait ComponentwiseModel<T: Scalar>: Clone + Send + Sync {
    /// Panel data preprocessed for one target series.
    type Data: Send + Sync;

    fn p(&self) -> usize;

    fn prepare(&self, panel: &TimeSeriesPanel<T>, target: usize) -> Result<Self::Data>;

    /// Sum of squared one-step-ahead prediction errors.
    fn loss(&self, data: &Self::Data) -> T;

    /// Loss and its gradient in the flat parameter layout of [`params`].
    ///
    /// [`params`]: ComponentwiseModel::params
    fn loss_and_grad(&self, data: &Self::Data) -> (T, Array1<T>);

    fn params(&self) -> Array1<T>;

    fn set_params(&mut self, flat: &Array1<T>) -> Result<()>;

    /// Flat indices of the input-weight groups.
    fn group_layout(&self) -> GroupLayout;

    fn num_loss_terms(&self, panel: &TimeSeriesPanel<T>) -> usize;
}
