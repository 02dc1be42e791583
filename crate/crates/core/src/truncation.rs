//! Truncation functions.

use crate::error::{Error, Result};

pub const DEFAULT_SHAPE: f64 = 2.0;

/// Radial linear ramp `h(x) = x ρ(‖x‖)` with `ρ = 1` on `[0, 1/K]`, `ρ = 0` on
/// `[K, ∞)` and linear in between.
///
/// `h` is continuous, equals the identity on the ball of radius `1/K`, vanishes
/// outside the ball of radius `K`, and satisfies `‖h(x)‖ ≤ min(‖x‖, K)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CanonicalTruncation {
    dim: usize,
    shape: f64,
}

impl CanonicalTruncation {
    /// `shape` is the constant `K`; it must exceed 1 for the ramp to exist.
    pub fn new(dim: usize, shape: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::domain("truncation dimension must be positive"));
        }
        if !(shape > 1.0 && shape.is_finite()) {
            return Err(Error::domain(format!(
                "truncation shape constant must be finite and > 1, got {shape}"
            )));
        }
        Ok(CanonicalTruncation { dim, shape })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    /// Radius of the identity region, `1/K`.
    pub fn inner_radius(&self) -> f64 {
        1.0 / self.shape
    }

    /// The radial profile `ρ(r)`.
    pub fn ramp(&self, r: f64) -> f64 {
        let k = self.shape;
        if r <= 1.0 / k {
            1.0
        } else if r >= k {
            0.0
        } else {
            (k - r) / (k - 1.0 / k)
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let rho = self.ramp(norm(x));
        x.iter().map(|v| v * rho).collect()
    }
}

pub fn make_canonical_truncation(dim: usize, shape: f64) -> Result<CanonicalTruncation> {
    CanonicalTruncation::new(dim, shape)
}

/// `g_c(x) = min(max(c‖x‖ - 1, 0), 1)`.
pub fn g_c(x: &[f64], c: f64) -> Result<f64> {
    if c.is_nan() || c <= 0.0 {
        return Err(Error::domain(format!("g_c needs c > 0, got {c}")));
    }
    Ok((c * norm(x) - 1.0).clamp(0.0, 1.0))
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}
