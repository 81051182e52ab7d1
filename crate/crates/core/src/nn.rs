//! Dense numeric primitives shared by the componentwise networks.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{Array1, Array2, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floating point scalar the networks and optimizers are generic over.
///
/// Implemented for `f32` and `f64`. Matrix products dispatch to the
/// optimized gemm kernels for both.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Seed for every stochastic stream in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub struct RngSeed(pub u64);

impl RngSeed {
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Independent child seed for sub-stream `stream` (splitmix64 mixing).
    pub fn derive(self, stream: u64) -> RngSeed {
        let mut z = self
            .0
            .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(stream.wrapping_add(1)));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        RngSeed(z ^ (z >> 31))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Sigmoid,
    /// Identity; only useful for convex sanity checks.
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            Activation::Linear => x,
        }
    }

    /// Derivative expressed through the activation's output `y = σ(x)`.
    #[inline]
    pub fn derivative_from_output<T: Scalar>(self, y: T) -> T {
        match self {
            Activation::Tanh => T::one() - y * y,
            Activation::Sigmoid => y * (T::one() - y),
            Activation::Linear => T::one(),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            "linear" | "identity" => Ok(Activation::Linear),
            other => Err(Error::InvalidArgument(format!(
                "unknown activation `{other}`"
            ))),
        }
    }
}

impl Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Linear => "linear",
        })
    }
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Elementwise activation of a vector.
pub fn activation<T: Scalar>(kind: Activation, x: &Array1<T>) -> Array1<T> {
    x.mapv(|v| kind.apply(v))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum InitScheme {
    /// Uniform on `[-a, a]` with `a = sqrt(6 / (rows + cols))`.
    #[default]
    GlorotUniform,
    /// Uniform on `[-a, a]` with the given half-width.
    Uniform(f64),
    Zeros,
}

pub fn init_params<T: Scalar>(
    rows: usize,
    cols: usize,
    scheme: InitScheme,
    seed: RngSeed,
) -> Result<Array2<T>> {
    let mut rng = seed.rng();
    init_params_with(rows, cols, scheme, &mut rng)
}

pub(crate) fn init_params_with<T: Scalar, R: Rng>(
    rows: usize,
    cols: usize,
    scheme: InitScheme,
    rng: &mut R,
) -> Result<Array2<T>> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument(format!(
            "parameter shape ({rows}, {cols}) has a zero dimension"
        )));
    }
    let half_width = match scheme {
        InitScheme::GlorotUniform => (6.0 / (rows + cols) as f64).sqrt(),
        InitScheme::Uniform(a) => a,
        InitScheme::Zeros => return Ok(Array2::zeros((rows, cols))),
    };
    Ok(Array2::from_shape_simple_fn((rows, cols), || {
        T::of(rng.random_range(-half_width..=half_width))
    }))
}

/// Central finite-difference gradient of `f` at `theta`.
pub fn finite_diff_grad<T, F>(mut f: F, theta: &Array1<T>, h: T) -> Result<Array1<T>>
where
    T: Scalar,
    F: FnMut(&Array1<T>) -> T,
{
    if !(h > T::zero()) {
        return Err(Error::InvalidArgument(
            "finite-difference step must be positive".into(),
        ));
    }
    let mut probe = theta.clone();
    let mut grad = Array1::zeros(theta.len());
    let two_h = h + h;
    for i in 0..theta.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe);
        probe[i] = orig - h;
        let down = f(&probe);
        probe[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!(
                "objective evaluated to a non-finite value while perturbing coordinate {i}"
            )));
        }
        grad[i] = (up - down) / two_h;
    }
    Ok(grad)
}

pub const DEFAULT_FD_STEP: f64 = 1e-5;
