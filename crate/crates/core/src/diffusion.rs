//! Coefficients `(β, γ)` of the limit equation `dU = β(t, U) dt + γ(t, U) dW`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// `β(t, x)` written into a `d`-vector.
pub type DriftFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
/// `γ(t, x)` written into a row-major `d × r` matrix.
pub type DispersionFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

/// Initial law `η` of the limit process (and of `U_0` in the built-in arrays).
#[derive(Clone, Debug, PartialEq)]
pub enum InitialLaw {
    Point(Vec<f64>),
    /// `mean + L Z` with `L` square, row-major.
    Gaussian { mean: Vec<f64>, loading: Vec<f64> },
}

impl InitialLaw {
    pub fn dim(&self) -> usize {
        match self {
            InitialLaw::Point(x) => x.len(),
            InitialLaw::Gaussian { mean, .. } => mean.len(),
        }
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            InitialLaw::Point(x) => out.copy_from_slice(x),
            InitialLaw::Gaussian { mean, loading } => {
                let d = mean.len();
                out.copy_from_slice(mean);
                for j in 0..d {
                    let z: f64 = rng.sample(StandardNormal);
                    for (i, o) in out.iter_mut().enumerate() {
                        *o += loading[i * d + j] * z;
                    }
                }
            }
        }
    }
}

/// Drift, dispersion, initial law and caller attestations for the limit SDE.
#[derive(Clone)]
pub struct DiffusionSpec {
    name: String,
    dim: usize,
    noise_dim: usize,
    drift: DriftFn,
    dispersion: DispersionFn,
    initial: InitialLaw,
    /// Coefficients do not depend on `t`.
    pub time_homogeneous: bool,
    /// Caller's statement that the equation has a unique weak solution for
    /// every deterministic starting point. Not verified.
    pub uniqueness_asserted: bool,
}

impl fmt::Debug for DiffusionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffusionSpec")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("noise_dim", &self.noise_dim)
            .field("initial", &self.initial)
            .field("time_homogeneous", &self.time_homogeneous)
            .field("uniqueness_asserted", &self.uniqueness_asserted)
            .finish()
    }
}

impl DiffusionSpec {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        noise_dim: usize,
        drift: DriftFn,
        dispersion: DispersionFn,
        initial: InitialLaw,
    ) -> Result<Self> {
        if dim == 0 || noise_dim == 0 {
            return Err(Error::config("diffusion dimensions d and r must be positive"));
        }
        if initial.dim() != dim {
            return Err(Error::config(format!(
                "initial law has dimension {}, diffusion has {dim}",
                initial.dim()
            )));
        }
        Ok(DiffusionSpec {
            name: name.into(),
            dim,
            noise_dim,
            drift,
            dispersion,
            initial,
            time_homogeneous: false,
            uniqueness_asserted: false,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn initial(&self) -> &InitialLaw {
        &self.initial
    }

    pub fn with_initial(mut self, initial: InitialLaw) -> Result<Self> {
        if initial.dim() != self.dim {
            return Err(Error::config("initial law dimension mismatch"));
        }
        self.initial = initial;
        Ok(self)
    }

    #[inline]
    pub fn drift_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.drift)(t, x, out)
    }

    #[inline]
    pub fn dispersion_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.dispersion)(t, x, out)
    }

    pub fn drift(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.drift_into(t, x, &mut out);
        out
    }

    pub fn dispersion(&self, t: f64, x: &[f64]) -> DMatrix<f64> {
        let mut out = vec![0.0; self.dim * self.noise_dim];
        self.dispersion_into(t, x, &mut out);
        DMatrix::from_row_slice(self.dim, self.noise_dim, &out)
    }

    /// `γ γᵀ (t, x)`.
    pub fn diffusion_matrix(&self, t: f64, x: &[f64]) -> DMatrix<f64> {
        let g = self.dispersion(t, x);
        &g * g.transpose()
    }

    fn flags(mut self, homogeneous: bool, unique: bool) -> Self {
        self.time_homogeneous = homogeneous;
        self.uniqueness_asserted = unique;
        self
    }

    /// `β = 0`, `γ = 0`, started at the origin.
    pub fn zero(dim: usize) -> Self {
        DiffusionSpec::new(
            "zero",
            dim,
            1,
            Arc::new(|_, _, out| out.fill(0.0)),
            Arc::new(|_, _, out| out.fill(0.0)),
            InitialLaw::Point(vec![0.0; dim]),
        )
        .expect("valid dimensions")
        .flags(true, true)
    }

    /// `β = 0`, `γ = σ I`: a scaled Wiener process started at the origin.
    pub fn scaled_wiener(dim: usize, sigma: f64) -> Self {
        DiffusionSpec::new(
            "scaled_wiener",
            dim,
            dim,
            Arc::new(|_, _, out| out.fill(0.0)),
            Arc::new(move |_, x, out| {
                let d = x.len();
                out.fill(0.0);
                for i in 0..d {
                    out[i * d + i] = sigma;
                }
            }),
            InitialLaw::Point(vec![0.0; dim]),
        )
        .expect("valid dimensions")
        .flags(true, true)
    }

    /// Scalar Ornstein–Uhlenbeck: `β = rate (level - x)`, `γ = σ`, `U_0 = x0`.
    pub fn ornstein_uhlenbeck(rate: f64, level: f64, sigma: f64, x0: f64) -> Self {
        DiffusionSpec::new(
            "ornstein_uhlenbeck",
            1,
            1,
            Arc::new(move |_, x, out| out[0] = rate * (level - x[0])),
            Arc::new(move |_, _, out| out[0] = sigma),
            InitialLaw::Point(vec![x0]),
        )
        .expect("valid dimensions")
        .flags(true, true)
    }

    /// Constant drift `b` and constant scalar dispersion `σ` in one dimension.
    pub fn drifted_wiener(drift: f64, sigma: f64, x0: f64) -> Self {
        DiffusionSpec::new(
            "drifted_wiener",
            1,
            1,
            Arc::new(move |_, _, out| out[0] = drift),
            Arc::new(move |_, _, out| out[0] = sigma),
            InitialLaw::Point(vec![x0]),
        )
        .expect("valid dimensions")
        .flags(true, true)
    }

    /// Feller-type square-root diffusion `β = a (b - x)`, `γ = σ √(x₊)`.
    pub fn square_root(a: f64, b: f64, sigma: f64, x0: f64) -> Self {
        DiffusionSpec::new(
            "square_root",
            1,
            1,
            Arc::new(move |_, x, out| out[0] = a * (b - x[0])),
            Arc::new(move |_, x, out| out[0] = sigma * x[0].max(0.0).sqrt()),
            InitialLaw::Point(vec![x0]),
        )
        .expect("valid dimensions")
        .flags(true, true)
    }
}
