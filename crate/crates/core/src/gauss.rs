//! Scalar distributions with closed-form polynomial expectations over intervals.
//!
//! Everything the conditional-moment oracles need in one dimension reduces to
//! `E[p(X) 1{l < X < u}]` for a polynomial `p` of degree at most four.

use libm::erfc;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

pub fn std_normal_pdf(z: f64) -> f64 {
    if z.is_infinite() {
        return 0.0;
    }
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

pub fn std_normal_sf(z: f64) -> f64 {
    0.5 * erfc(z * FRAC_1_SQRT_2)
}

/// `P(a < Z < b)` for standard normal `Z`, computed on the side that avoids
/// cancellation.
fn normal_mass(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        std_normal_sf(a) - std_normal_sf(b)
    } else {
        std_normal_cdf(b) - std_normal_cdf(a)
    }
}

/// `J_m = ∫_a^b z^m φ(z) dz` for `m = 0..=deg` (bounds may be infinite).
fn normal_partial_moments(a: f64, b: f64, deg: usize) -> Vec<f64> {
    let mut j = vec![0.0; deg + 1];
    let (pa, pb) = (std_normal_pdf(a), std_normal_pdf(b));
    // a^{m-1} φ(a) with the convention that it vanishes at infinite bounds
    let edge = |x: f64, px: f64, p: i32| if x.is_infinite() { 0.0 } else { x.powi(p) * px };
    j[0] = normal_mass(a, b);
    if deg >= 1 {
        j[1] = pa - pb;
    }
    for m in 2..=deg {
        j[m] = (m - 1) as f64 * j[m - 2] + edge(a, pa, m as i32 - 1) - edge(b, pb, m as i32 - 1);
    }
    j
}

/// Coefficients of `p(shift + scale * z)` in powers of `z`.
fn affine_substitute(coeffs: &[f64], shift: f64, scale: f64) -> Vec<f64> {
    let deg = coeffs.len();
    let mut out = vec![0.0; deg];
    for (i, &c) in coeffs.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        // (shift + scale z)^i = Σ_k C(i,k) shift^{i-k} scale^k z^k
        let mut binom = 1.0;
        for (k, o) in out.iter_mut().enumerate().take(i + 1) {
            *o += c * binom * shift.powi((i - k) as i32) * scale.powi(k as i32);
            binom = binom * (i - k) as f64 / (k + 1) as f64;
        }
    }
    out
}

/// Evaluates a polynomial given by ascending coefficients.
pub fn poly_eval(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// A one-dimensional law.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ScalarLaw {
    Point(f64),
    Normal { mean: f64, sd: f64 },
    /// Uniform on `[lo, hi]`.
    Uniform { lo: f64, hi: f64 },
}

impl ScalarLaw {
    /// `E[p(X) 1{l < X < u}]`; `l`, `u` may be infinite. Point masses on the
    /// boundary are excluded (strict inequalities).
    pub fn poly_expect(&self, l: f64, u: f64, coeffs: &[f64]) -> f64 {
        if u <= l {
            return 0.0;
        }
        match *self {
            ScalarLaw::Point(x) => {
                if l < x && x < u {
                    poly_eval(coeffs, x)
                } else {
                    0.0
                }
            }
            ScalarLaw::Normal { mean, sd } => {
                if sd == 0.0 {
                    return ScalarLaw::Point(mean).poly_expect(l, u, coeffs);
                }
                let q = affine_substitute(coeffs, mean, sd);
                let j = normal_partial_moments((l - mean) / sd, (u - mean) / sd, q.len().max(1) - 1);
                q.iter().zip(&j).map(|(a, b)| a * b).sum()
            }
            ScalarLaw::Uniform { lo, hi } => {
                if hi <= lo {
                    return ScalarLaw::Point(lo).poly_expect(l, u, coeffs);
                }
                let (a, b) = (l.max(lo), u.min(hi));
                if b <= a {
                    return 0.0;
                }
                // antiderivative of p
                let anti = |x: f64| {
                    coeffs
                        .iter()
                        .enumerate()
                        .map(|(i, c)| c * x.powi(i as i32 + 1) / (i + 1) as f64)
                        .sum::<f64>()
                };
                (anti(b) - anti(a)) / (hi - lo)
            }
        }
    }

    /// `P(|X| > θ)`.
    pub fn abs_tail(&self, theta: f64) -> f64 {
        match *self {
            ScalarLaw::Normal { mean, sd } if sd > 0.0 => {
                std_normal_sf((theta - mean) / sd) + std_normal_cdf((-theta - mean) / sd)
            }
            _ => {
                self.poly_expect(theta, f64::INFINITY, &[1.0])
                    + self.poly_expect(f64::NEG_INFINITY, -theta, &[1.0])
            }
        }
    }

    /// `E[X² 1{|X| > θ}]`.
    pub fn abs_lindeberg(&self, theta: f64) -> f64 {
        let sq = [0.0, 0.0, 1.0];
        self.poly_expect(theta, f64::INFINITY, &sq) + self.poly_expect(f64::NEG_INFINITY, -theta, &sq)
    }
}
