use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Scalar;

/// One or more replicate realizations of a `p`-variate series.
///
/// Each replicate is a `(length × p)` array; rows are time points.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesPanel<T> {
    names: Vec<String>,
    replicates: Vec<Array2<T>>,
}

impl<T: Scalar> TimeSeriesPanel<T> {
    pub fn new(names: Vec<String>, replicates: Vec<Array2<T>>) -> Result<Self> {
        if replicates.is_empty() {
            return Err(Error::EmptyPanel);
        }
        let p = names.len();
        if p == 0 {
            return Err(Error::InvalidArgument("panel has no series".into()));
        }
        for (r, rep) in replicates.iter().enumerate() {
            if rep.ncols() != p {
                return Err(Error::Shape(format!(
                    "replicate {r} has {} columns, expected {p}",
                    rep.ncols()
                )));
            }
            if rep.nrows() < 2 {
                return Err(Error::ReplicateTooShort {
                    replicate: r,
                    len: rep.nrows(),
                    min: 2,
                });
            }
            if let Some((idx, _)) = rep.indexed_iter().find(|(_, v)| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "replicate {r} entry (t={}, series={})",
                    idx.0, idx.1
                )));
            }
        }
        Ok(TimeSeriesPanel { names, replicates })
    }

    /// Panel with default names `x0, x1, …`.
    pub fn from_replicates(replicates: Vec<Array2<T>>) -> Result<Self> {
        let p = replicates.first().map(|r| r.ncols()).unwrap_or(0);
        Self::new(default_names(p), replicates)
    }

    pub fn p(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn replicates(&self) -> &[Array2<T>] {
        &self.replicates
    }

    pub fn num_replicates(&self) -> usize {
        self.replicates.len()
    }

    pub fn total_len(&self) -> usize {
        self.replicates.iter().map(|r| r.nrows()).sum()
    }

    pub fn min_len(&self) -> usize {
        self.replicates.iter().map(|r| r.nrows()).min().unwrap_or(0)
    }

    /// Panel holding the replicates of `self` followed by those of `other`.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.p() != other.p() {
            return Err(Error::Shape("panels have different series counts".into()));
        }
        let mut replicates = self.replicates.clone();
        replicates.extend(other.replicates.iter().cloned());
        Self::new(self.names.clone(), replicates)
    }

    pub fn map_replicates(&self, mut f: impl FnMut(&Array2<T>) -> Array2<T>) -> Result<Self> {
        Self::new(
            self.names.clone(),
            self.replicates.iter().map(|r| f(r)).collect(),
        )
    }

    /// Zero-mean, unit-variance scaling per series, pooled over all replicates.
    pub fn standardize(&self) -> (Self, Scaling<T>) {
        let scaling = Scaling::fit(self);
        let panel = TimeSeriesPanel {
            names: self.names.clone(),
            replicates: self.replicates.iter().map(|r| scaling.apply(r)).collect(),
        };
        (panel, scaling)
    }
}

pub(crate) fn default_names(p: usize) -> Vec<String> {
    (0..p).map(|j| format!("x{j}")).collect()
}

/// Per-series affine scaling used to standardize a panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling<T> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

impl<T: Scalar> Scaling<T> {
    pub fn fit(panel: &TimeSeriesPanel<T>) -> Self {
        let p = panel.p();
        let n = T::of(panel.total_len() as f64);
        let mut sum = Array1::<T>::zeros(p);
        for r in panel.replicates() {
            sum = sum + r.sum_axis(Axis(0));
        }
        let mean = sum / n;
        let mut ss = Array1::<T>::zeros(p);
        for r in panel.replicates() {
            for row in r.rows() {
                let d = &row - &mean;
                ss = ss + &d * &d;
            }
        }
        let std = (ss / n).mapv(|v| {
            let s = v.sqrt();
            // Constant series keep unit scale.
            if s > T::epsilon() {
                s
            } else {
                T::one()
            }
        });
        Scaling {
            mean: mean.to_vec(),
            std: std.to_vec(),
        }
    }

    pub fn apply(&self, data: &Array2<T>) -> Array2<T> {
        let mut out = data.clone();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
        out
    }

    pub fn invert(&self, data: &Array2<T>) -> Array2<T> {
        let mut out = data.clone();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = *v * self.std[j] + self.mean[j];
            }
        }
        out
    }
}
