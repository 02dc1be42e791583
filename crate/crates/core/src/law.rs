//! Conditional laws of one array increment given the past.
//!
//! Every built-in model produces, for each step, an affine law
//! `U = m + L ξ` with `L` a `d × r` loading matrix and `ξ` an `r`-vector of
//! i.i.d. zero-mean unit-variance components (normal, Rademacher or uniform).
//! All oracle answers (mean, covariance, tail, Lindeberg term, truncated
//! moments) are derived from that description.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::ScalarLaw;
use crate::truncation::CanonicalTruncation;

const SQRT3: f64 = 1.732_050_807_568_877_2;
/// Largest noise dimension for which Rademacher laws are enumerated exactly.
const MAX_ENUMERATED: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Noise {
    Normal,
    Rademacher,
    /// Uniform on `[-√3, √3]`.
    Uniform,
}

impl Noise {
    pub fn draw<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            Noise::Normal => rng.sample(StandardNormal),
            Noise::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            Noise::Uniform => rng.random_range(-SQRT3..SQRT3),
        }
    }

    fn fourth_moment(self) -> f64 {
        match self {
            Noise::Normal => 3.0,
            Noise::Rademacher => 1.0,
            Noise::Uniform => 9.0 / 5.0,
        }
    }
}

/// An oracle answer together with whether it is exact or a conservative
/// upper bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub value: f64,
    pub exact: bool,
}

impl Bound {
    fn exact(value: f64) -> Self {
        Bound { value, exact: true }
    }

    fn upper(value: f64) -> Self {
        Bound { value, exact: false }
    }
}

/// Queries a conditional law must answer.
pub trait ConditionalOracle {
    fn dim(&self) -> usize;
    fn mean(&self) -> DVector<f64>;
    fn cov(&self) -> DMatrix<f64>;
    /// `E(‖U‖² 1{‖U‖ > θ})`, exact or an upper bound.
    fn lindeberg(&self, theta: f64) -> Bound;
    /// `P(‖U‖ > θ)`, exact or an upper bound.
    fn tail(&self, theta: f64) -> Bound;
}

#[derive(Clone, Debug, PartialEq)]
pub struct CondLaw {
    mean: Vec<f64>,
    /// `d × r`, row-major.
    loading: Vec<f64>,
    noise_dim: usize,
    noise: Noise,
}

impl CondLaw {
    pub fn point(mean: Vec<f64>) -> Self {
        CondLaw {
            mean,
            loading: Vec::new(),
            noise_dim: 0,
            noise: Noise::Normal,
        }
    }

    pub fn affine(mean: Vec<f64>, loading: Vec<f64>, noise_dim: usize, noise: Noise) -> Result<Self> {
        if loading.len() != mean.len() * noise_dim {
            return Err(Error::contract(format!(
                "loading has {} entries, expected {} x {noise_dim}",
                loading.len(),
                mean.len()
            )));
        }
        Ok(CondLaw {
            mean,
            loading,
            noise_dim,
            noise,
        })
    }

    pub fn noise(&self) -> Noise {
        self.noise
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn mean_slice(&self) -> &[f64] {
        &self.mean
    }

    pub fn loading(&self) -> &[f64] {
        &self.loading
    }

    pub fn is_degenerate(&self) -> bool {
        self.loading.iter().all(|&l| l == 0.0)
    }

    /// Draws one value into `out`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        out.copy_from_slice(&self.mean);
        let r = self.noise_dim;
        for j in 0..r {
            let xi = self.noise.draw(rng);
            for (i, o) in out.iter_mut().enumerate() {
                *o += self.loading[i * r + j] * xi;
            }
        }
    }

    fn loading_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.mean.len(), self.noise_dim, &self.loading)
    }

    /// Marginal law of a one-dimensional increment, when it has a closed form.
    fn scalar(&self) -> Option<ScalarLaw> {
        if self.mean.len() != 1 {
            return None;
        }
        let m = self.mean[0];
        if self.is_degenerate() {
            return Some(ScalarLaw::Point(m));
        }
        match self.noise {
            Noise::Normal => Some(ScalarLaw::Normal {
                mean: m,
                sd: self.loading.iter().map(|l| l * l).sum::<f64>().sqrt(),
            }),
            Noise::Uniform if self.noise_dim == 1 => {
                let w = self.loading[0].abs() * SQRT3;
                Some(ScalarLaw::Uniform { lo: m - w, hi: m + w })
            }
            _ => None,
        }
    }

    /// Atoms `(probability, value)` when the law is finitely supported and small.
    fn atoms(&self) -> Option<Vec<(f64, Vec<f64>)>> {
        if self.is_degenerate() {
            return Some(vec![(1.0, self.mean.clone())]);
        }
        if self.noise != Noise::Rademacher || self.noise_dim > MAX_ENUMERATED {
            return None;
        }
        let r = self.noise_dim;
        let p = 0.5f64.powi(r as i32);
        let out = (0..1usize << r)
            .map(|mask| {
                let mut v = self.mean.clone();
                for j in 0..r {
                    let s = if mask >> j & 1 == 1 { 1.0 } else { -1.0 };
                    for (i, x) in v.iter_mut().enumerate() {
                        *x += self.loading[i * r + j] * s;
                    }
                }
                (p, v)
            })
            .collect();
        Some(out)
    }

    /// Mean-zero normal law with covariance `σ² I`: returns `σ²`.
    fn isotropic_normal(&self) -> Option<f64> {
        if self.noise != Noise::Normal || self.mean.iter().any(|&m| m != 0.0) {
            return None;
        }
        let c = self.cov();
        let s2 = c[(0, 0)];
        let d = self.mean.len();
        let tol = 1e-12 * s2.abs().max(f64::MIN_POSITIVE);
        for i in 0..d {
            for j in 0..d {
                let want = if i == j { s2 } else { 0.0 };
                if (c[(i, j)] - want).abs() > tol {
                    return None;
                }
            }
        }
        Some(s2)
    }

    fn second_moment(&self) -> f64 {
        let m2: f64 = self.mean.iter().map(|m| m * m).sum();
        m2 + self.loading.iter().map(|l| l * l).sum::<f64>()
    }

    /// `E‖U‖⁴`, exact for any of the noise kinds.
    fn fourth_moment(&self) -> f64 {
        let a: f64 = self.mean.iter().map(|m| m * m).sum();
        if self.noise_dim == 0 {
            return a * a;
        }
        let l = self.loading_matrix();
        let m = DVector::from_column_slice(&self.mean);
        let b = l.transpose() * &m * 2.0;
        let gram = l.transpose() * &l;
        let tr = gram.trace();
        let tr2 = (&gram * &gram).trace();
        let diag2: f64 = (0..self.noise_dim).map(|i| gram[(i, i)].powi(2)).sum();
        let quad2 = tr * tr + 2.0 * tr2 + (self.noise.fourth_moment() - 3.0) * diag2;
        a * a + b.norm_squared() + quad2 + 2.0 * a * tr
    }

    fn union_normal_tail(&self, theta: f64) -> Option<f64> {
        if self.noise != Noise::Normal {
            return None;
        }
        let d = self.mean.len();
        let c = self.cov();
        let per = theta / (d as f64).sqrt();
        Some(
            (0..d)
                .map(|i| {
                    ScalarLaw::Normal {
                        mean: self.mean[i],
                        sd: c[(i, i)].sqrt(),
                    }
                    .abs_tail(per)
                })
                .sum(),
        )
    }

    fn tail_bound(&self, theta: f64) -> f64 {
        let m2 = self.second_moment();
        let m4 = self.fourth_moment();
        let mut b = 1.0f64.min(m2 / (theta * theta)).min(m4 / theta.powi(4));
        if let Some(u) = self.union_normal_tail(theta) {
            b = b.min(u);
        }
        b
    }

    /// `E[U ρ(c‖U‖)]` and `E[U Uᵀ ρ(c‖U‖)²]` where `ρ` is the radial profile of
    /// `h`. Needed for conditions phrased with truncated increments.
    pub fn radial_moments(
        &self,
        h: &CanonicalTruncation,
        scale: f64,
        model: &str,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let d = self.mean.len();
        if let Some(atoms) = self.atoms() {
            let mut m1 = DVector::zeros(d);
            let mut m2 = DMatrix::zeros(d, d);
            for (p, v) in atoms {
                let v = DVector::from_vec(v);
                let rho = h.ramp(scale * v.norm());
                m1 += &v * (p * rho);
                m2 += &v * v.transpose() * (p * rho * rho);
            }
            return Ok((m1, m2));
        }
        if let Some(law) = self.scalar() {
            let (m1, m2) = scalar_radial_moments(&law, h.shape(), scale);
            return Ok((DVector::from_element(1, m1), DMatrix::from_element(1, 1, m2)));
        }
        Err(Error::Capability {
            model: model.to_string(),
            what: format!(
                "moments of truncated increments for a {d}-dimensional {:?} law with {} noise components",
                self.noise, self.noise_dim
            ),
        })
    }

    /// Mean and covariance of `h(U)` (`h` applied with radial scale `scale`).
    pub fn truncated_moments(
        &self,
        h: &CanonicalTruncation,
        scale: f64,
        model: &str,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let (m1, m2) = self.radial_moments(h, scale, model)?;
        let cov = m2 - &m1 * m1.transpose();
        Ok((m1, cov))
    }
}

/// Piecewise-polynomial integration of the scalar ramp: returns
/// `(E[U ρ(c|U|)], E[U² ρ(c|U|)²])`.
fn scalar_radial_moments(law: &ScalarLaw, k: f64, c: f64) -> (f64, f64) {
    let a = 1.0 / (k * c);
    let b = k / c;
    let w = k - 1.0 / k;
    // ρ(c|u|) on the ramp: (k - c|u|)/w ; u ρ is a quadratic, u² ρ² a quartic
    let pos1 = [0.0, k / w, -c / w];
    let neg1 = [0.0, k / w, c / w];
    let pos2 = [0.0, 0.0, k * k / (w * w), -2.0 * k * c / (w * w), c * c / (w * w)];
    let neg2 = [0.0, 0.0, k * k / (w * w), 2.0 * k * c / (w * w), c * c / (w * w)];
    let lin = [0.0, 1.0];
    let sq = [0.0, 0.0, 1.0];
    let m1 = law.poly_expect(-a, a, &lin) + law.poly_expect(a, b, &pos1) + law.poly_expect(-b, -a, &neg1)
        + point_on(law, a, &lin)
        + point_on(law, -a, &lin);
    let m2 = law.poly_expect(-a, a, &sq) + law.poly_expect(a, b, &pos2) + law.poly_expect(-b, -a, &neg2)
        + point_on(law, a, &sq)
        + point_on(law, -a, &sq);
    (m1, m2)
}

/// Point masses exactly on a knot are excluded by the open intervals; add them back.
fn point_on(law: &ScalarLaw, x: f64, coeffs: &[f64]) -> f64 {
    match law {
        ScalarLaw::Point(p) if *p == x => crate::gauss::poly_eval(coeffs, x),
        _ => 0.0,
    }
}

impl ConditionalOracle for CondLaw {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn mean(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.mean)
    }

    fn cov(&self) -> DMatrix<f64> {
        if self.noise_dim == 0 {
            let d = self.mean.len();
            return DMatrix::zeros(d, d);
        }
        let l = self.loading_matrix();
        &l * l.transpose()
    }

    fn tail(&self, theta: f64) -> Bound {
        if let Some(atoms) = self.atoms() {
            return Bound::exact(
                atoms
                    .iter()
                    .filter(|(_, v)| norm(v) > theta)
                    .map(|(p, _)| p)
                    .sum(),
            );
        }
        if let Some(law) = self.scalar() {
            return Bound::exact(law.abs_tail(theta));
        }
        if let Some(s2) = self.isotropic_normal() {
            let d = self.mean.len() as f64;
            return Bound::exact(chi2_sf(d, theta * theta / s2));
        }
        Bound::upper(self.tail_bound(theta))
    }

    fn lindeberg(&self, theta: f64) -> Bound {
        if let Some(atoms) = self.atoms() {
            return Bound::exact(
                atoms
                    .iter()
                    .map(|(p, v)| (p, norm(v)))
                    .filter(|(_, r)| *r > theta)
                    .map(|(p, r)| p * r * r)
                    .sum(),
            );
        }
        if let Some(law) = self.scalar() {
            return Bound::exact(law.abs_lindeberg(theta));
        }
        if let Some(s2) = self.isotropic_normal() {
            // E[X 1{X > x}] = d P(χ²_{d+2} > x) for X ~ χ²_d
            let d = self.mean.len() as f64;
            return Bound::exact(s2 * d * chi2_sf(d + 2.0, theta * theta / s2));
        }
        let m2 = self.second_moment();
        let m4 = self.fourth_moment();
        let cs = (m4 * self.tail_bound(theta)).sqrt();
        Bound::upper(m2.min(cs).min(m4 / (theta * theta)))
    }
}

fn chi2_sf(dof: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    statrs::function::gamma::gamma_ur(dof / 2.0, x / 2.0)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauss::{std_normal_pdf, std_normal_sf};
    use crate::rng::{stream, StreamPurpose};

    fn mc<F: Fn(&[f64]) -> f64>(law: &CondLaw, draws: usize, f: F) -> (f64, f64) {
        let mut rng = stream(77, 0, StreamPurpose::Custom(9));
        let mut buf = vec![0.0; law.dim()];
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..draws {
            law.sample_into(&mut rng, &mut buf);
            let v = f(&buf);
            s += v;
            s2 += v * v;
        }
        let m = s / draws as f64;
        let se = ((s2 / draws as f64 - m * m) / draws as f64).sqrt();
        (m, se)
    }

    #[test]
    fn point_mass_oracles() {
        let law = CondLaw::point(vec![0.7]);
        assert_eq!(law.mean()[0], 0.7);
        assert_eq!(law.cov()[(0, 0)], 0.0);
        assert_eq!(law.tail(0.5), Bound::exact(1.0));
        assert_eq!(law.tail(0.7).value, 0.0);
        assert!((law.lindeberg(0.5).value - 0.49).abs() < 1e-16);
    }

    #[test]
    fn scalar_normal_lindeberg_closed_form() {
        let n = 100.0;
        let law = CondLaw::affine(vec![0.0], vec![1.0 / f64::sqrt(n)], 1, Noise::Normal).unwrap();
        let a = 0.5 * n.sqrt();
        let want = (1.0 / n) * 2.0 * (a * std_normal_pdf(a) + std_normal_sf(a));
        let got = law.lindeberg(0.5);
        assert!(got.exact);
        assert!((got.value - want).abs() < 1e-20);
    }

    #[test]
    fn isotropic_radial_formula_matches_monte_carlo() {
        let law = CondLaw::affine(vec![0.0; 3], vec![0.5, 0.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.5], 3, Noise::Normal)
            .unwrap();
        let theta = 1.0;
        let t = law.tail(theta);
        let l = law.lindeberg(theta);
        assert!(t.exact && l.exact);
        let (mt, st) = mc(&law, 400_000, |v| if norm(v) > theta { 1.0 } else { 0.0 });
        let (ml, sl) = mc(&law, 400_000, |v| {
            let r = norm(v);
            if r > theta {
                r * r
            } else {
                0.0
            }
        });
        assert!((t.value - mt).abs() < 4.0 * st, "{} vs {mt}", t.value);
        assert!((l.value - ml).abs() < 4.0 * sl, "{} vs {ml}", l.value);
    }

    #[test]
    fn conservative_bounds_dominate() {
        // correlated, non-centred 2-d normal: only bounds are available
        let law = CondLaw::affine(vec![0.1, -0.2], vec![0.3, 0.1, -0.05, 0.4], 2, Noise::Normal).unwrap();
        for theta in [0.3, 0.6, 1.0] {
            let t = law.tail(theta);
            let l = law.lindeberg(theta);
            assert!(!t.exact && !l.exact);
            let (mt, st) = mc(&law, 200_000, |v| if norm(v) > theta { 1.0 } else { 0.0 });
            let (ml, sl) = mc(&law, 200_000, |v| {
                let r = norm(v);
                if r > theta {
                    r * r
                } else {
                    0.0
                }
            });
            assert!(t.value >= mt - 4.0 * st);
            assert!(l.value >= ml - 4.0 * sl);
        }
    }

    #[test]
    fn fourth_moment_matches_monte_carlo() {
        for noise in [Noise::Normal, Noise::Rademacher, Noise::Uniform] {
            let law = CondLaw::affine(vec![0.3, -0.1], vec![0.5, 0.2, 0.1, -0.4, 0.3, 0.0], 3, noise).unwrap();
            let (m, se) = mc(&law, 400_000, |v| norm(v).powi(4));
            assert!((law.fourth_moment() - m).abs() < 4.0 * se, "{noise:?}");
        }
    }

    #[test]
    fn rademacher_is_enumerated() {
        let law = CondLaw::affine(vec![0.0, 0.0], vec![0.1, 0.0, 0.0, 0.1], 2, Noise::Rademacher).unwrap();
        let r = f64::sqrt(0.02);
        assert_eq!(law.tail(r - 1e-9), Bound::exact(1.0));
        assert_eq!(law.tail(r + 1e-9), Bound::exact(0.0));
        assert!((law.lindeberg(0.1).value - 0.02).abs() < 1e-16);
    }

    #[test]
    fn truncated_moments_match_quadrature_and_atoms() {
        let h = CanonicalTruncation::new(1, 2.0).unwrap();
        let law = CondLaw::affine(vec![0.2], vec![0.6], 1, Noise::Normal).unwrap();
        let (m1, m2) = law.radial_moments(&h, 1.3, "t").unwrap();
        // Simpson oracle over the support of h
        let f = |u: f64, p: i32| {
            let rho = h.ramp(1.3 * u.abs());
            (u * rho).powi(p) * std_normal_pdf((u - 0.2) / 0.6) / 0.6
        };
        let (lo, hi, m) = (-3.0, 3.0, 60_000);
        let step = (hi - lo) / (2 * m) as f64;
        let simpson = |p: i32| {
            let mut s = f(lo, p) + f(hi, p);
            for i in 1..2 * m {
                s += f(lo + i as f64 * step, p) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            s * step / 3.0
        };
        assert!((m1[0] - simpson(1)).abs() < 1e-9);
        assert!((m2[(0, 0)] - simpson(2)).abs() < 1e-9);

        let pm = CondLaw::point(vec![1.0]);
        let (a, b) = pm.radial_moments(&h, 1.0, "t").unwrap();
        assert!((a[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((b[(0, 0)] - 4.0 / 9.0).abs() < 1e-15);

        let multi = CondLaw::affine(vec![0.0, 0.0], vec![1.0, 0.0, 0.0, 1.0], 2, Noise::Normal).unwrap();
        assert!(matches!(multi.radial_moments(&h, 1.0, "m"), Err(Error::Capability { .. })));
    }
}
