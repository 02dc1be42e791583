//! Euler–Maruyama simulation of the limit equation and of the coupled triple
//! `(U, V, Y)` with `Y = ∫ V_{s-} ⊗ dU_s` by the left-point rule.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::diffusion::DiffusionSpec;
use crate::error::{Error, Result};
use crate::integrals::{kron_into, Integrand};
use crate::parallel::map_indexed;
use crate::paths::{PathEnsemble, StepPath, TimeGrid};
use crate::rng::{SeedRecord, StreamPurpose};

const SNAP_TOL: f64 = 1e-9;

/// Solver times `0, Δ, 2Δ, ..., T`; the last step is shortened to land on `T`.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverGrid {
    step: f64,
    horizon: f64,
    times: Vec<f64>,
}

impl SolverGrid {
    pub fn new(step: f64, horizon: f64) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::domain(format!("solver step must be positive, got {step}")));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::domain(format!("horizon must be positive, got {horizon}")));
        }
        let q = horizon / step;
        let r = q.round();
        let full = if (q - r).abs() <= SNAP_TOL * r.max(1.0) { r as usize } else { q.floor() as usize };
        let mut times: Vec<f64> = (0..=full).map(|m| m as f64 * step).collect();
        if let Some(last) = times.last_mut() {
            if (horizon - *last).abs() <= SNAP_TOL * horizon {
                *last = horizon;
            } else {
                times.push(horizon);
            }
        }
        Ok(SolverGrid { step, horizon, times })
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    /// Index of the last solver time not after `t`.
    pub fn index(&self, t: f64) -> Result<usize> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::domain(format!("time {t} outside [0, {}]", self.horizon)));
        }
        let tol = SNAP_TOL * self.horizon;
        let i = self.times.partition_point(|&s| s <= t + tol);
        Ok(i.saturating_sub(1))
    }

    /// `Some(n)` when the grid coincides with `TimeGrid(n, T)` point for point.
    pub fn as_time_grid(&self) -> Option<TimeGrid> {
        let inv = 1.0 / self.step;
        let n = inv.round();
        if n < 1.0 || (inv - n).abs() > SNAP_TOL * n {
            return None;
        }
        let g = TimeGrid::new(n as usize, self.horizon).ok()?;
        (g.count() == self.steps() && (g.piece_start(g.count()) - self.horizon).abs() <= SNAP_TOL * self.horizon)
            .then_some(g)
    }
}

/// One solver path: `d`-vectors at the solver times.
#[derive(Clone, Debug, PartialEq)]
pub struct SdePath {
    dim: usize,
    grid: SolverGrid,
    values: Vec<f64>,
    seed: SeedRecord,
}

impl SdePath {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn grid(&self) -> &SolverGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn seed(&self) -> SeedRecord {
        self.seed
    }

    pub fn at(&self, m: usize) -> &[f64] {
        &self.values[m * self.dim..(m + 1) * self.dim]
    }

    /// Value at the last solver time not after `t`.
    pub fn eval(&self, t: f64) -> Result<&[f64]> {
        Ok(self.at(self.grid.index(t)?))
    }

    pub fn terminal(&self) -> &[f64] {
        self.at(self.grid.steps())
    }

    /// The same values viewed as a step path, when the solver grid is `1/n`-uniform.
    pub fn to_step_path(&self) -> Result<StepPath> {
        let g = self
            .grid
            .as_time_grid()
            .ok_or_else(|| Error::Format(format!("solver step {} is not of the form 1/n", self.grid.step)))?;
        StepPath::from_values(self.dim, g, self.values.clone())
    }
}

fn non_finite(step: usize, state: &[f64], what: &str) -> Error {
    Error::Model {
        step,
        state: state.to_vec(),
        message: format!("non-finite {what}"),
    }
}

struct Stepper<'a> {
    spec: &'a DiffusionSpec,
    drift: Vec<f64>,
    disp: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(spec: &'a DiffusionSpec) -> Self {
        Stepper {
            spec,
            drift: vec![0.0; spec.dim()],
            disp: vec![0.0; spec.dim() * spec.noise_dim()],
        }
    }

    /// `x ← x + β(t, x) h + γ(t, x) √h Z`.
    fn advance<R: Rng + ?Sized>(&mut self, m: usize, t: f64, h: f64, x: &mut [f64], rng: &mut R) -> Result<()> {
        let r = self.spec.noise_dim();
        self.spec.drift_into(t, x, &mut self.drift);
        self.spec.dispersion_into(t, x, &mut self.disp);
        if self.drift.iter().chain(&self.disp).any(|v| !v.is_finite()) {
            return Err(non_finite(m, x, "coefficient"));
        }
        let sq = h.sqrt();
        for (xi, b) in x.iter_mut().zip(&self.drift) {
            *xi += b * h;
        }
        for j in 0..r {
            let z: f64 = rng.sample(StandardNormal);
            for (i, xi) in x.iter_mut().enumerate() {
                *xi += self.disp[i * r + j] * sq * z;
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(non_finite(m + 1, x, "state"));
        }
        Ok(())
    }
}

/// `X_0 ~ η`, `X_{m+1} = X_m + β(t_m, X_m) Δ + γ(t_m, X_m) √Δ Z_m`.
pub fn euler_maruyama(spec: &DiffusionSpec, step: f64, horizon: f64, seed: SeedRecord) -> Result<SdePath> {
    let grid = SolverGrid::new(step, horizon)?;
    let d = spec.dim();
    let mut rng = seed.rng();
    let mut values = vec![0.0; grid.times.len() * d];
    spec.initial().sample_into(&mut rng, &mut values[..d]);
    let mut st = Stepper::new(spec);
    let mut x = values[..d].to_vec();
    for m in 0..grid.steps() {
        let (t, h) = (grid.times[m], grid.times[m + 1] - grid.times[m]);
        st.advance(m, t, h, &mut x, &mut rng)?;
        values[(m + 1) * d..(m + 2) * d].copy_from_slice(&x);
    }
    Ok(SdePath {
        dim: d,
        grid,
        values,
        seed,
    })
}

/// `U` from the solver, `V_m = Ψ(U)(t_m)` and `Y_{m+1} = Y_m + V_m ⊗ (U_{m+1} - U_m)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledPath {
    pub u: SdePath,
    /// `p` entries per solver time.
    pub v: Vec<f64>,
    /// `p d` entries per solver time.
    pub y: Vec<f64>,
    pub p: usize,
}

impl CoupledPath {
    pub fn v_at(&self, m: usize) -> &[f64] {
        &self.v[m * self.p..(m + 1) * self.p]
    }

    pub fn y_at(&self, m: usize) -> &[f64] {
        let w = self.p * self.u.dim;
        &self.y[m * w..(m + 1) * w]
    }
}

pub fn coupled_limit(
    spec: &DiffusionSpec,
    integrand: &dyn Integrand,
    step: f64,
    horizon: f64,
    seed: SeedRecord,
) -> Result<CoupledPath> {
    let u = euler_maruyama(spec, step, horizon, seed)?;
    let d = spec.dim();
    let p = integrand.output_dim(d);
    let w = p * d;
    let points = u.grid.times.len();
    let mut ev = integrand.evaluator(d);
    let mut v = vec![0.0; points * p];
    let mut y = vec![0.0; points * w];
    let mut du = vec![0.0; d];
    let mut term = vec![0.0; w];
    for m in 0..points {
        ev.push(u.grid.times[m], u.at(m), &mut v[m * p..(m + 1) * p]);
        if m + 1 < points {
            for ((a, b), c) in du.iter_mut().zip(u.at(m + 1)).zip(u.at(m)) {
                *a = b - c;
            }
            kron_into(&v[m * p..(m + 1) * p], &du, &mut term);
            let (prev, next) = y.split_at_mut((m + 1) * w);
            for ((n, a), t) in next[..w].iter_mut().zip(&prev[m * w..]).zip(&term) {
                *n = a + t;
            }
        }
    }
    Ok(CoupledPath { u, v, y, p })
}

/// `M` solver paths keyed by `(master, i, Limit)`.
pub fn simulate_limit_ensemble(
    spec: &DiffusionSpec,
    step: f64,
    horizon: f64,
    master: u64,
    paths: usize,
    workers: usize,
) -> Result<Vec<SdePath>> {
    map_indexed(paths, workers, |i| {
        euler_maruyama(spec, step, horizon, SeedRecord::new(master, i as u64, StreamPurpose::Limit))
    })
}

/// Coupled triples for `M` paths keyed by `(master, i, Limit)`; `f` reduces
/// each to what the caller keeps, so the full paths need not be stored.
#[allow(clippy::too_many_arguments)]
pub fn map_coupled<T: Send>(
    spec: &DiffusionSpec,
    integrand: &dyn Integrand,
    step: f64,
    horizon: f64,
    master: u64,
    paths: usize,
    workers: usize,
    f: impl Fn(&CoupledPath) -> T + Send + Sync,
) -> Result<Vec<T>> {
    map_indexed(paths, workers, |i| {
        let seed = SeedRecord::new(master, i as u64, StreamPurpose::Limit);
        coupled_limit(spec, integrand, step, horizon, seed).map(|c| f(&c))
    })
}

/// Solver paths as a [`PathEnsemble`] (requires a `1/n`-uniform solver grid).
pub fn limit_ensemble(paths: &[SdePath]) -> Result<PathEnsemble> {
    let steps = paths.iter().map(SdePath::to_step_path).collect::<Result<Vec<_>>>()?;
    PathEnsemble::new(steps, paths.iter().map(|p| p.seed).collect())
}
