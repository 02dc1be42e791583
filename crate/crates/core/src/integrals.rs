//! Integrands, Kronecker products, stochastic integrals of step processes and
//! the stacked coefficients of the joint limit `(U, V ⊗ U)`.

use nalgebra::{DMatrix, DVector};

use crate::diffusion::DiffusionSpec;
use crate::error::{Error, Result};
use crate::law::{Bound, CondLaw, ConditionalOracle};
use crate::paths::{floor_index, sup_norm_diff, SampledPath, StepPath, TimeGrid};
use crate::truncation::CanonicalTruncation;

/// `v ⊗ u` with row blocks of `v`: component `i d + j` is `v_i u_j`.
pub fn kron(v: &[f64], u: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; v.len() * u.len()];
    kron_into(v, u, &mut out);
    out
}

pub fn kron_into(v: &[f64], u: &[f64], out: &mut [f64]) {
    let d = u.len();
    for (i, vi) in v.iter().enumerate() {
        for (o, uj) in out[i * d..(i + 1) * d].iter_mut().zip(u) {
            *o = vi * uj;
        }
    }
}

/// Feeds path values at successive grid times and returns the integrand value
/// at each of them. Implementations may only look at values already pushed.
pub trait CausalEvaluator {
    fn push(&mut self, t: f64, x: &[f64], out: &mut [f64]);
}

/// A causal path functional `Ψ` together with its discretization `Ψ_n`.
///
/// For the built-ins, `Ψ_n(α)(t)` equals `Ψ` applied to the step path
/// `s ↦ α(⌊ns⌋/n)` and evaluated at `t`, so both are served by one evaluator
/// fed either the step path's pieces or a finer solver grid.
pub trait Integrand: Send + Sync {
    fn name(&self) -> &str;
    /// Output dimension `p` for an input path of dimension `d`.
    fn output_dim(&self, d: usize) -> usize;
    fn evaluator(&self, d: usize) -> Box<dyn CausalEvaluator>;
}

/// `Ψ(α) = α`; `V_k = U_0 + ... + U_k`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Identity;

pub fn integrand_identity(_d: usize) -> Identity {
    Identity
}

struct CopyEval;

impl CausalEvaluator for CopyEval {
    fn push(&mut self, _t: f64, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
    }
}

impl Integrand for Identity {
    fn name(&self) -> &str {
        "identity"
    }

    fn output_dim(&self, d: usize) -> usize {
        d
    }

    fn evaluator(&self, _d: usize) -> Box<dyn CausalEvaluator> {
        Box::new(CopyEval)
    }
}

/// `Ψ(α) ≡ c`.
#[derive(Clone, Debug)]
pub struct Constant(pub Vec<f64>);

struct ConstEval(Vec<f64>);

impl CausalEvaluator for ConstEval {
    fn push(&mut self, _t: f64, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.0);
    }
}

impl Integrand for Constant {
    fn name(&self) -> &str {
        "constant"
    }

    fn output_dim(&self, _d: usize) -> usize {
        self.0.len()
    }

    fn evaluator(&self, _d: usize) -> Box<dyn CausalEvaluator> {
        Box::new(ConstEval(self.0.clone()))
    }
}

/// `Ψ(α)(t) = sup_{s ≤ t} ‖α(s)‖` (scalar output).
#[derive(Clone, Copy, Debug, Default)]
pub struct RunningSupNorm;

struct SupEval(f64);

impl CausalEvaluator for SupEval {
    fn push(&mut self, _t: f64, x: &[f64], out: &mut [f64]) {
        self.0 = self.0.max(crate::truncation::norm(x));
        out[0] = self.0;
    }
}

impl Integrand for RunningSupNorm {
    fn name(&self) -> &str {
        "running_sup_norm"
    }

    fn output_dim(&self, _d: usize) -> usize {
        1
    }

    fn evaluator(&self, _d: usize) -> Box<dyn CausalEvaluator> {
        Box::new(SupEval(0.0))
    }
}

/// Looks up a built-in integrand by name.
pub fn integrand_by_name(name: &str, constant: Option<Vec<f64>>) -> Result<Box<dyn Integrand>> {
    match name {
        "identity" => Ok(Box::new(Identity)),
        "running_sup_norm" => Ok(Box::new(RunningSupNorm)),
        "constant" => constant
            .map(|c| Box::new(Constant(c)) as Box<dyn Integrand>)
            .ok_or_else(|| Error::config("integrand `constant` needs a `value` list")),
        other => Err(Error::config(format!("unknown integrand `{other}`"))),
    }
}

/// `V_k = Ψ_n(U^n)(k/n)` for every piece of `path`.
pub fn prelimit_values(integrand: &dyn Integrand, path: &StepPath) -> StepPath {
    let d = path.dim();
    let p = integrand.output_dim(d);
    let grid = *path.grid();
    let mut ev = integrand.evaluator(d);
    let mut values = vec![0.0; grid.pieces() * p];
    for j in 0..grid.pieces() {
        ev.push(grid.piece_start(j), path.piece(j), &mut values[j * p..(j + 1) * p]);
    }
    StepPath::from_values(p, grid, values).expect("lengths match by construction")
}

/// `Ψ_n(α)(t)`: the integrand fed `α(0)` and the increments
/// `α(k/n) - α((k-1)/n)` for `k ≤ ⌊nt⌋`, re-accumulated.
pub fn psi_n(integrand: &dyn Integrand, alpha: impl Fn(f64) -> Vec<f64>, n: usize, t: f64) -> Result<Vec<f64>> {
    if n == 0 || !(t >= 0.0 && t.is_finite()) {
        return Err(Error::domain("psi_n needs n >= 1 and finite t >= 0"));
    }
    let base = alpha(0.0);
    let d = base.len();
    let mut ev = integrand.evaluator(d);
    let mut out = vec![0.0; integrand.output_dim(d)];
    let mut acc = base.clone();
    let mut prev = base;
    ev.push(0.0, &acc, &mut out);
    for k in 1..=floor_index(n, t) {
        let s = k as f64 / n as f64;
        let cur = alpha(s);
        for ((a, c), p) in acc.iter_mut().zip(&cur).zip(&prev) {
            *a += c - p;
        }
        ev.push(s, &acc, &mut out);
        prev = cur;
    }
    Ok(out)
}

/// `Y_j = Σ_{k=1}^{j} V_{k-1} ⊗ (U_k - U_{k-1})` on the pieces of the common grid.
pub fn step_stochastic_integral(v: &StepPath, u: &StepPath) -> Result<StepPath> {
    if !v.grid().same_as(u.grid()) {
        return Err(Error::contract("step_stochastic_integral: paths on different grids"));
    }
    let (p, d) = (v.dim(), u.dim());
    let grid = *u.grid();
    let w = p * d;
    let mut values = vec![0.0; grid.pieces() * w];
    let mut du = vec![0.0; d];
    let mut term = vec![0.0; w];
    for k in 1..grid.pieces() {
        for ((x, a), b) in du.iter_mut().zip(u.piece(k)).zip(u.piece(k - 1)) {
            *x = a - b;
        }
        kron_into(v.piece(k - 1), &du, &mut term);
        let (prev, cur) = values.split_at_mut(k * w);
        for ((c, a), t) in cur[..w].iter_mut().zip(&prev[(k - 1) * w..]).zip(&term) {
            *c = a + t;
        }
    }
    StepPath::from_values(w, grid, values)
}

/// `β'` and `γ'` of the joint process `(U, Y)`, evaluated at `(s, α(s), Ψ(α)(s))`.
#[derive(Clone, Debug)]
pub struct StackedCoefficients {
    spec: DiffusionSpec,
    p: usize,
}

pub fn stacked_coefficients(spec: &DiffusionSpec, integrand: &dyn Integrand) -> StackedCoefficients {
    StackedCoefficients {
        p: integrand.output_dim(spec.dim()),
        spec: spec.clone(),
    }
}

impl StackedCoefficients {
    pub fn new(spec: DiffusionSpec, p: usize) -> Self {
        StackedCoefficients { spec, p }
    }

    /// `d + p d`.
    pub fn width(&self) -> usize {
        self.spec.dim() * (1 + self.p)
    }

    fn check(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.p {
            return Err(Error::config(format!(
                "integrand value has {} components, declared p = {}",
                v.len(),
                self.p
            )));
        }
        Ok(())
    }

    /// `[β; v ⊗ β]`.
    pub fn drift(&self, s: f64, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check(v)?;
        let b = self.spec.drift(s, x);
        let mut out = b.clone();
        out.extend(kron(v, &b));
        Ok(out)
    }

    /// `[γ; v ⊗ γ]` (row block `i` of the lower part is `v_i γ`).
    pub fn dispersion(&self, s: f64, x: &[f64], v: &[f64]) -> Result<DMatrix<f64>> {
        self.check(v)?;
        let g = self.spec.dispersion(s, x);
        Ok(stack_matrix(v, g.nrows()) * g)
    }

    /// `γ' γ'ᵀ = A γγᵀ Aᵀ`.
    pub fn diffusion_matrix(&self, s: f64, x: &[f64], v: &[f64]) -> Result<DMatrix<f64>> {
        let g = self.dispersion(s, x, v)?;
        Ok(&g * g.transpose())
    }
}

/// `A = [I_d; v ⊗ I_d]`, so that `A u = [u; v ⊗ u]`.
pub fn stack_matrix(v: &[f64], d: usize) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(d * (1 + v.len()), d);
    for i in 0..d {
        a[(i, i)] = 1.0;
    }
    for (b, vb) in v.iter().enumerate() {
        for i in 0..d {
            a[((b + 1) * d + i, i)] = *vb;
        }
    }
    a
}

/// Conditional moments of `[U; V ⊗ U]` given the past, from the law of `U`
/// and the realized `V_{k-1}`.
#[derive(Clone, Debug)]
pub struct StackedMoments<'a> {
    base: &'a CondLaw,
    a: DMatrix<f64>,
    vnorm: f64,
}

pub fn stacked_conditional_moments<'a>(base: &'a CondLaw, v: &[f64]) -> StackedMoments<'a> {
    StackedMoments {
        a: stack_matrix(v, base.dim()),
        vnorm: crate::truncation::norm(v),
        base,
    }
}

impl StackedMoments<'_> {
    pub fn stack(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// Mean and covariance of `h'([U; V ⊗ U])` for the canonical ramp `h'` on
    /// the stacked space; `h'(A u) = A u ρ(√(1 + ‖V‖²) ‖u‖)`.
    pub fn truncated_moments(&self, h: &CanonicalTruncation, model: &str) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let c = (1.0 + self.vnorm * self.vnorm).sqrt();
        let (m1, cov) = self.base.truncated_moments(h, c, model)?;
        Ok((&self.a * m1, &self.a * cov * self.a.transpose()))
    }
}

impl ConditionalOracle for StackedMoments<'_> {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn mean(&self) -> DVector<f64> {
        &self.a * self.base.mean()
    }

    fn cov(&self) -> DMatrix<f64> {
        &self.a * self.base.cov() * self.a.transpose()
    }

    /// `(1 + ‖V‖²) L(θ / (1 + ‖V‖))`.
    fn lindeberg(&self, theta: f64) -> Bound {
        let b = self.base.lindeberg(theta / (1.0 + self.vnorm));
        Bound {
            value: (1.0 + self.vnorm * self.vnorm) * b.value,
            exact: b.exact,
        }
    }

    /// `P(‖U‖ (1 + ‖V‖) > θ)`.
    fn tail(&self, theta: f64) -> Bound {
        self.base.tail(theta / (1.0 + self.vnorm))
    }
}

/// Sup-norm distances of a sequence of sampled functions to a limit.
#[derive(Clone, Debug, PartialEq)]
pub struct LuReport {
    pub sups: Vec<f64>,
    /// Whether the distances are nonincreasing along the sequence.
    pub monotone: bool,
}

/// Samples `limit` on each function's grid and reports the sup distance.
pub fn lu_convergence_check(fns: &[SampledPath], limit: impl Fn(f64) -> Vec<f64>) -> Result<LuReport> {
    let sups = fns
        .iter()
        .map(|f| {
            let l = SampledPath::from_fn(*f.grid(), f.width(), &limit)?;
            sup_norm_diff(f, &l)
        })
        .collect::<Result<Vec<_>>>()?;
    let monotone = sups.windows(2).all(|w| w[1] <= w[0]);
    Ok(LuReport { sups, monotone })
}

/// `Ψ_n` of a function sampled on `TimeGrid(n, T)` as a piecewise-constant path.
pub fn psi_n_path(integrand: &dyn Integrand, alpha: impl Fn(f64) -> Vec<f64>, grid: TimeGrid) -> Result<SampledPath> {
    let d = alpha(0.0).len();
    let p = integrand.output_dim(d);
    let mut values = Vec::with_capacity(grid.pieces() * p);
    let mut ev = integrand.evaluator(d);
    let mut out = vec![0.0; p];
    let mut acc = alpha(0.0);
    let mut prev = acc.clone();
    for j in 0..grid.pieces() {
        let s = grid.piece_start(j);
        if j > 0 {
            let cur = alpha(s);
            for ((a, c), q) in acc.iter_mut().zip(&cur).zip(&prev) {
                *a += c - q;
            }
            prev = cur;
        }
        ev.push(s, &acc, &mut out);
        values.extend_from_slice(&out);
    }
    let step = StepPath::from_values(p, grid, values)?;
    Ok(SampledPath::from_step(&step))
}
