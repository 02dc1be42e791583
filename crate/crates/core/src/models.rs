//! Triangular-array models: sampling one row `(U_k)` and answering
//! conditional-moment queries given the past of the row.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::diffusion::{DiffusionSpec, InitialLaw};
use crate::error::{Error, Result};
use crate::law::{Bound, CondLaw, ConditionalOracle, Noise};
use crate::paths::{PathEnsemble, StepPath, TimeGrid};
use crate::rng::{PathRng, SeedRecord, StreamPurpose};

/// What a model sees of the past before drawing `U_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct History {
    /// Index of the increment about to be drawn (`k >= 1`).
    pub k: usize,
    /// Row parameter `n`.
    pub n: usize,
    /// `U_0 + ... + U_{k-1}`.
    pub prefix: Vec<f64>,
    /// `U_{k-1}`.
    pub last: Vec<f64>,
}

impl History {
    pub fn start(n: usize, initial: &[f64]) -> Self {
        History {
            k: 1,
            n,
            prefix: initial.to_vec(),
            last: initial.to_vec(),
        }
    }

    /// `k/n`.
    pub fn time(&self) -> f64 {
        self.k as f64 / self.n as f64
    }

    pub fn advance(&mut self, u: &[f64]) {
        self.prefix.iter_mut().zip(u).for_each(|(s, x)| *s += x);
        self.last.copy_from_slice(u);
        self.k += 1;
    }
}

/// One row of a triangular array together with its conditional-law oracle.
///
/// Implementations must make [`ArrayModel::conditional_law`] a function of
/// the history only, and [`ArrayModel::sample_next`] a draw from that law.
pub trait ArrayModel: Send + Sync {
    fn name(&self) -> &str;
    fn description(&self) -> String;
    fn dim(&self) -> usize;
    /// Row parameter `n`.
    fn n(&self) -> usize;

    fn sample_initial(&self, rng: &mut PathRng, out: &mut [f64]);

    /// Law of `U_k` given the past summarized by `hist`.
    fn conditional_law(&self, hist: &History) -> Result<CondLaw>;

    fn sample_next(&self, hist: &History, rng: &mut PathRng, out: &mut [f64]) -> Result<()> {
        self.conditional_law(hist)?.sample_into(rng, out);
        Ok(())
    }

    fn cond_mean(&self, hist: &History) -> Result<DVector<f64>> {
        Ok(self.conditional_law(hist)?.mean())
    }

    fn cond_cov(&self, hist: &History) -> Result<DMatrix<f64>> {
        Ok(self.conditional_law(hist)?.cov())
    }

    fn cond_lindeberg(&self, hist: &History, theta: f64) -> Result<Bound> {
        Ok(self.conditional_law(hist)?.lindeberg(theta))
    }

    fn cond_tail(&self, hist: &History, theta: f64) -> Result<Bound> {
        Ok(self.conditional_law(hist)?.tail(theta))
    }
}

/// Distribution of the i.i.d. innovations `ξ` in [`LindebergIid`].
#[derive(Clone, Debug, PartialEq)]
pub enum ScaleLaw {
    /// Mean zero with covariance `Σ` (row-major `d × d`).
    Normal(Vec<f64>),
    /// Independent ±1 components.
    Rademacher,
    /// Independent components uniform on `[-√3, √3]`.
    Uniform,
}

/// `U_k = ξ_k / √n` with i.i.d. centred `ξ_k`; `U_0 ~ η`.
#[derive(Clone, Debug)]
pub struct LindebergIid {
    dim: usize,
    n: usize,
    law: CondLaw,
    initial: InitialLaw,
}

pub fn model_lindeberg_iid(dim: usize, scale_law: ScaleLaw, n: usize) -> Result<LindebergIid> {
    LindebergIid::new(dim, scale_law, n, InitialLaw::Point(vec![0.0; dim]))
}

impl LindebergIid {
    pub fn new(dim: usize, scale_law: ScaleLaw, n: usize, initial: InitialLaw) -> Result<Self> {
        if dim == 0 || n == 0 {
            return Err(Error::config("lindeberg_iid needs d >= 1 and n >= 1"));
        }
        if initial.dim() != dim {
            return Err(Error::config("initial law dimension mismatch"));
        }
        let scale = 1.0 / (n as f64).sqrt();
        let (sigma, noise) = match &scale_law {
            ScaleLaw::Normal(cov) => (isotropic_scale(dim, cov)?, Noise::Normal),
            ScaleLaw::Rademacher => (1.0, Noise::Rademacher),
            ScaleLaw::Uniform => (1.0, Noise::Uniform),
        };
        let mut loading = vec![0.0; dim * dim];
        for i in 0..dim {
            loading[i * dim + i] = sigma * scale;
        }
        Ok(LindebergIid {
            dim,
            n,
            law: CondLaw::affine(vec![0.0; dim], loading, dim, noise)?,
            initial,
        })
    }
}

/// Closed-form tails are available for scalar or isotropic covariances only.
fn isotropic_scale(dim: usize, cov: &[f64]) -> Result<f64> {
    if cov.len() != dim * dim {
        return Err(Error::config(format!("covariance must have {} entries", dim * dim)));
    }
    let s2 = cov[0];
    if !(s2 >= 0.0 && s2.is_finite()) {
        return Err(Error::config("covariance diagonal must be finite and nonnegative"));
    }
    for i in 0..dim {
        for j in 0..dim {
            let want = if i == j { s2 } else { 0.0 };
            if cov[i * dim + j] != want {
                return Err(Error::config(
                    "lindeberg_iid with normal innovations supports Σ = σ² I only",
                ));
            }
        }
    }
    Ok(s2.sqrt())
}

impl ArrayModel for LindebergIid {
    fn name(&self) -> &str {
        "lindeberg_iid"
    }

    fn description(&self) -> String {
        format!(
            "i.i.d. {:?} innovations scaled by n^-1/2 (d = {}, n = {})",
            self.law.noise(),
            self.dim,
            self.n
        )
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn n(&self) -> usize {
        self.n
    }

    fn sample_initial(&self, rng: &mut PathRng, out: &mut [f64]) {
        self.initial.sample_into(rng, out)
    }

    fn conditional_law(&self, _hist: &History) -> Result<CondLaw> {
        Ok(self.law.clone())
    }

    fn sample_next(&self, _hist: &History, rng: &mut PathRng, out: &mut [f64]) -> Result<()> {
        self.law.sample_into(rng, out);
        Ok(())
    }
}

/// Triples `η_j/√n, η_j/√n, -η_j/√n` with `U_0 = 0`: satisfies the
/// diffusion-limit conditions with `β = 0`, `γ = 1/√3` while its quadratic
/// variation converges to `t` rather than `t/3`.
#[derive(Clone, Debug)]
pub struct NongoodTriple {
    n: usize,
    scale: f64,
}

pub fn model_nongood_triple(n: usize) -> Result<NongoodTriple> {
    if n == 0 {
        return Err(Error::config("nongood_triple needs n >= 1"));
    }
    Ok(NongoodTriple {
        n,
        scale: 1.0 / (n as f64).sqrt(),
    })
}

impl ArrayModel for NongoodTriple {
    fn name(&self) -> &str {
        "nongood_triple"
    }

    fn description(&self) -> String {
        format!("repeated-and-negated Gaussian triples (n = {})", self.n)
    }

    fn dim(&self) -> usize {
        1
    }

    fn n(&self) -> usize {
        self.n
    }

    fn sample_initial(&self, _rng: &mut PathRng, out: &mut [f64]) {
        out[0] = 0.0;
    }

    fn conditional_law(&self, hist: &History) -> Result<CondLaw> {
        match hist.k % 3 {
            1 => CondLaw::affine(vec![0.0], vec![self.scale], 1, Noise::Normal),
            2 => Ok(CondLaw::point(vec![hist.last[0]])),
            _ => Ok(CondLaw::point(vec![-hist.last[0]])),
        }
    }

    fn sample_next(&self, hist: &History, rng: &mut PathRng, out: &mut [f64]) -> Result<()> {
        out[0] = match hist.k % 3 {
            1 => self.scale * rng.sample::<f64, _>(StandardNormal),
            2 => hist.last[0],
            _ => -hist.last[0],
        };
        Ok(())
    }
}

/// Euler-type array for a given SDE:
/// `U_k = β(k/n, S_{k-1})/n + γ(k/n, S_{k-1}) ξ_k/√n`, `U_0 ~ η`.
#[derive(Clone, Debug)]
pub struct EulerArray {
    spec: DiffusionSpec,
    noise: Noise,
    n: usize,
    scale: f64,
}

pub fn model_euler_array(spec: DiffusionSpec, noise: Noise, n: usize) -> Result<EulerArray> {
    if n == 0 {
        return Err(Error::config("euler_array needs n >= 1"));
    }
    if noise == Noise::Uniform {
        return Err(Error::config("euler_array supports normal or rademacher noise"));
    }
    Ok(EulerArray {
        spec,
        noise,
        n,
        scale: 1.0 / (n as f64).sqrt(),
    })
}

impl EulerArray {
    pub fn spec(&self) -> &DiffusionSpec {
        &self.spec
    }

    fn coefficients(&self, hist: &History, drift: &mut [f64], disp: &mut [f64]) -> Result<()> {
        let t = hist.time();
        self.spec.drift_into(t, &hist.prefix, drift);
        self.spec.dispersion_into(t, &hist.prefix, disp);
        if drift.iter().chain(disp.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Model {
                step: hist.k,
                state: hist.prefix.clone(),
                message: format!("non-finite coefficient in `{}`", self.spec.name()),
            });
        }
        Ok(())
    }
}

impl ArrayModel for EulerArray {
    fn name(&self) -> &str {
        "euler_array"
    }

    fn description(&self) -> String {
        format!(
            "Euler array for `{}` with {:?} noise (n = {})",
            self.spec.name(),
            self.noise,
            self.n
        )
    }

    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn n(&self) -> usize {
        self.n
    }

    fn sample_initial(&self, rng: &mut PathRng, out: &mut [f64]) {
        self.spec.initial().sample_into(rng, out)
    }

    fn conditional_law(&self, hist: &History) -> Result<CondLaw> {
        let (d, r) = (self.spec.dim(), self.spec.noise_dim());
        let mut drift = vec![0.0; d];
        let mut disp = vec![0.0; d * r];
        self.coefficients(hist, &mut drift, &mut disp)?;
        let inv_n = 1.0 / self.n as f64;
        drift.iter_mut().for_each(|b| *b *= inv_n);
        disp.iter_mut().for_each(|g| *g *= self.scale);
        CondLaw::affine(drift, disp, r, self.noise)
    }

    fn sample_next(&self, hist: &History, rng: &mut PathRng, out: &mut [f64]) -> Result<()> {
        let (d, r) = (self.spec.dim(), self.spec.noise_dim());
        let mut small_drift = [0.0f64; 8];
        let mut small_disp = [0.0f64; 32];
        let mut heap;
        let (drift, disp): (&mut [f64], &mut [f64]) = if d <= 8 && d * r <= 32 {
            (&mut small_drift[..d], &mut small_disp[..d * r])
        } else {
            heap = (vec![0.0; d], vec![0.0; d * r]);
            (&mut heap.0[..], &mut heap.1[..])
        };
        self.coefficients(hist, drift, disp)?;
        let inv_n = 1.0 / self.n as f64;
        for (o, b) in out.iter_mut().zip(drift.iter()) {
            *o = b * inv_n;
        }
        for j in 0..r {
            let xi = self.noise.draw(rng) * self.scale;
            for (i, o) in out.iter_mut().enumerate() {
                *o += disp[i * r + j] * xi;
            }
        }
        Ok(())
    }
}

/// Conditional-law answers recorded for one step, evaluated before the step
/// was drawn.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleEntry {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// One per threshold of the transcript.
    pub lindeberg: Vec<Bound>,
    pub tail: Vec<Bound>,
    pub law: CondLaw,
}

/// Oracle answers for `k = 1..=count`.
#[derive(Clone, Debug, PartialEq)]
pub struct Transcript {
    model: String,
    thetas: Vec<f64>,
    entries: Vec<OracleEntry>,
}

impl Transcript {
    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    /// Entry for step `k >= 1`.
    pub fn get(&self, k: usize) -> Option<&OracleEntry> {
        k.checked_sub(1).and_then(|i| self.entries.get(i))
    }

    pub fn entries(&self) -> &[OracleEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Whether any recorded tail or Lindeberg value is only an upper bound.
    pub fn has_bounds(&self) -> bool {
        self.entries
            .iter()
            .any(|e| e.lindeberg.iter().chain(&e.tail).any(|b| !b.exact))
    }
}

fn check_model_grid(model: &dyn ArrayModel, grid: &TimeGrid) -> Result<()> {
    if model.n() != grid.n() {
        return Err(Error::contract(format!(
            "model row parameter n = {} but grid has n = {}",
            model.n(),
            grid.n()
        )));
    }
    Ok(())
}

/// Draws `U_0, ..., U_count` (row-major) from one stream.
pub fn sample_increments(model: &dyn ArrayModel, grid: &TimeGrid, rng: &mut PathRng) -> Result<Vec<f64>> {
    check_model_grid(model, grid)?;
    let d = model.dim();
    let mut out = vec![0.0; grid.pieces() * d];
    model.sample_initial(rng, &mut out[..d]);
    let mut hist = History::start(model.n(), &out[..d]);
    for k in 1..=grid.count() {
        let (_, rest) = out.split_at_mut(k * d);
        let cur = &mut rest[..d];
        model.sample_next(&hist, rng, cur)?;
        hist.advance(cur);
    }
    Ok(out)
}

/// Samples one row and records, for every `k >= 1`, the oracle answers on the
/// realized history before `U_k` is drawn. Draws are identical to
/// [`sample_increments`] with the same seed.
pub fn sample_row(
    model: &dyn ArrayModel,
    grid: &TimeGrid,
    seed: SeedRecord,
    thetas: &[f64],
) -> Result<(Vec<f64>, Transcript)> {
    check_model_grid(model, grid)?;
    let mut rng = seed.rng();
    let d = model.dim();
    let mut out = vec![0.0; grid.pieces() * d];
    model.sample_initial(&mut rng, &mut out[..d]);
    let mut hist = History::start(model.n(), &out[..d]);
    let mut entries = Vec::with_capacity(grid.count());
    for k in 1..=grid.count() {
        let law = model.conditional_law(&hist)?;
        entries.push(OracleEntry {
            mean: law.mean(),
            cov: law.cov(),
            lindeberg: thetas.iter().map(|&t| law.lindeberg(t)).collect(),
            tail: thetas.iter().map(|&t| law.tail(t)).collect(),
            law,
        });
        let (_, rest) = out.split_at_mut(k * d);
        let cur = &mut rest[..d];
        model.sample_next(&hist, &mut rng, cur)?;
        hist.advance(cur);
    }
    Ok((
        out,
        Transcript {
            model: model.name().to_string(),
            thetas: thetas.to_vec(),
            entries,
        },
    ))
}

/// `M` independent rows as step paths, path `i` keyed by `(master, i, Array)`.
pub fn simulate_ensemble(
    model: &dyn ArrayModel,
    grid: &TimeGrid,
    master: u64,
    paths: usize,
    workers: usize,
) -> Result<PathEnsemble> {
    let d = model.dim();
    let seeds: Vec<SeedRecord> = (0..paths as u64)
        .map(|i| SeedRecord::new(master, i, StreamPurpose::Array))
        .collect();
    let built = crate::parallel::map_indexed(paths, workers, |i| {
        let inc = sample_increments(model, grid, &mut seeds[i].rng())?;
        StepPath::from_increments(d, *grid, &inc)
    })?;
    PathEnsemble::new(built, seeds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use std::sync::Arc;

    fn hist(k: usize, n: usize, prefix: f64, last: f64) -> History {
        History {
            k,
            n,
            prefix: vec![prefix],
            last: vec![last],
        }
    }

    #[test]
    fn nongood_construction() {
        let m = model_nongood_triple(50).unwrap();
        let mut rng = stream(1, 0, StreamPurpose::Custom(0));
        let mut out = [0.0];
        let h2 = hist(2, 50, 0.7, 0.7);
        m.sample_next(&h2, &mut rng, &mut out).unwrap();
        assert_eq!(out[0], 0.7);
        assert_eq!(m.cond_cov(&h2).unwrap()[(0, 0)], 0.0);
        let h3 = hist(3, 50, 1.4, 0.7);
        m.sample_next(&h3, &mut rng, &mut out).unwrap();
        assert_eq!(out[0], -0.7);
        assert_eq!(m.cond_mean(&h3).unwrap()[0], -0.7);
        let h1 = hist(4, 50, 0.7, -0.7);
        assert!((m.cond_cov(&h1).unwrap()[(0, 0)] - 1.0 / 50.0).abs() < 1e-17);
    }

    #[test]
    fn nongood_transcript_pattern_and_counting() {
        let n = 30;
        let m = model_nongood_triple(n).unwrap();
        let grid = TimeGrid::new(n, 1.0).unwrap();
        let (inc, tr) = sample_row(&m, &grid, SeedRecord::new(3, 0, StreamPurpose::Array), &[0.5]).unwrap();
        assert_eq!(inc[0], 0.0);
        for k in 1..=grid.count() {
            let c = tr.get(k).unwrap().cov[(0, 0)];
            let want = if k % 3 == 1 { 1.0 / n as f64 } else { 0.0 };
            assert!((c - want).abs() < 1e-15, "k={k}");
        }
        // cumulative conditional variance vs t/3
        let mut acc = 0.0;
        for k in 1..=grid.count() {
            acc += tr.get(k).unwrap().cov[(0, 0)];
            let t = k as f64 / n as f64;
            assert!((acc - t / 3.0).abs() <= 3.0 / n as f64);
        }
        // telescoping conditional means: partial sums are 0 or the last fresh draw
        let mut s = 0.0;
        for k in 1..=grid.count() {
            s += tr.get(k).unwrap().mean[0];
            let fresh = inc[3 * ((k - 1) / 3) + 1];
            assert!(s == 0.0 || s == fresh, "k={k} s={s} fresh={fresh}");
        }
    }

    #[test]
    fn lindeberg_iid_oracles() {
        let m = model_lindeberg_iid(1, ScaleLaw::Rademacher, 100).unwrap();
        let h = hist(1, 100, 0.0, 0.0);
        assert_eq!(m.cond_tail(&h, 0.1).unwrap().value, 0.0);
        assert_eq!(m.cond_tail(&h, 0.2).unwrap().value, 0.0);
        let g = model_lindeberg_iid(1, ScaleLaw::Normal(vec![1.0]), 100).unwrap();
        assert!((g.cond_cov(&h).unwrap()[(0, 0)] - 0.01).abs() < 1e-16);
        assert!(matches!(
            model_lindeberg_iid(2, ScaleLaw::Normal(vec![1.0, 0.5, 0.5, 1.0]), 10),
            Err(Error::Config(_))
        ));
        assert!(model_lindeberg_iid(2, ScaleLaw::Normal(vec![2.0, 0.0, 0.0, 2.0]), 10).is_ok());
    }

    #[test]
    fn euler_array_moments() {
        let ou = DiffusionSpec::ornstein_uhlenbeck(1.0, 0.0, 1.0, 0.0);
        let m = model_euler_array(ou, Noise::Normal, 100).unwrap();
        let h = hist(7, 100, 2.0, 0.0);
        assert!((m.cond_mean(&h).unwrap()[0] + 0.02).abs() < 1e-17);
        let sq = DiffusionSpec::square_root(1.0, 1.0, 1.0, 0.0);
        let m2 = model_euler_array(sq, Noise::Normal, 100).unwrap();
        assert_eq!(m2.cond_cov(&hist(3, 100, -1.0, 0.0)).unwrap()[(0, 0)], 0.0);
    }

    #[test]
    fn euler_array_reports_non_finite_state() {
        let bad = DiffusionSpec::new(
            "bad",
            1,
            1,
            Arc::new(|_, x, out| out[0] = 1.0 / x[0]),
            Arc::new(|_, _, out| out[0] = 1.0),
            InitialLaw::Point(vec![0.0]),
        )
        .unwrap();
        let m = model_euler_array(bad, Noise::Normal, 10).unwrap();
        let grid = TimeGrid::new(10, 1.0).unwrap();
        let err = sample_increments(&m, &grid, &mut stream(0, 0, StreamPurpose::Array)).unwrap_err();
        match err {
            Error::Model { step, state, .. } => {
                assert_eq!(step, 1);
                assert_eq!(state, vec![0.0]);
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn zero_model_is_zero() {
        let m = model_euler_array(DiffusionSpec::zero(1), Noise::Normal, 20).unwrap();
        let grid = TimeGrid::new(20, 1.0).unwrap();
        let (inc, tr) = sample_row(&m, &grid, SeedRecord::new(1, 0, StreamPurpose::Array), &[0.1]).unwrap();
        assert!(inc.iter().all(|&u| u == 0.0));
        for e in tr.entries() {
            assert_eq!(e.mean[0], 0.0);
            assert_eq!(e.cov[(0, 0)], 0.0);
            assert_eq!(e.lindeberg[0].value, 0.0);
            assert_eq!(e.tail[0].value, 0.0);
        }
    }

    #[test]
    fn transcript_and_fast_path_agree() {
        let ou = DiffusionSpec::ornstein_uhlenbeck(0.5, 0.2, 0.8, 1.0);
        let m = model_euler_array(ou, Noise::Rademacher, 40).unwrap();
        let grid = TimeGrid::new(40, 2.0).unwrap();
        let seed = SeedRecord::new(4, 2, StreamPurpose::Array);
        let (a, _) = sample_row(&m, &grid, seed, &[0.1, 0.2]).unwrap();
        let b = sample_increments(&m, &grid, &mut seed.rng()).unwrap();
        let (c, _) = sample_row(&m, &grid, seed, &[]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn oracle_is_adapted() {
        // the oracle is evaluated from the history alone: drawing the next value
        // with two different streams leaves it unchanged
        let ou = DiffusionSpec::ornstein_uhlenbeck(1.0, 0.0, 1.0, 0.0);
        let m = model_euler_array(ou, Noise::Normal, 10).unwrap();
        let h = hist(4, 10, 0.3, 0.1);
        let before = m.conditional_law(&h).unwrap();
        let mut out = [0.0];
        m.sample_next(&h, &mut stream(1, 0, StreamPurpose::Custom(3)), &mut out).unwrap();
        let mid = m.conditional_law(&h).unwrap();
        m.sample_next(&h, &mut stream(2, 0, StreamPurpose::Custom(3)), &mut out).unwrap();
        assert_eq!(before, mid);
        assert_eq!(before, m.conditional_law(&h).unwrap());
    }

    #[test]
    fn model_grid_mismatch() {
        let m = model_nongood_triple(10).unwrap();
        let grid = TimeGrid::new(11, 1.0).unwrap();
        assert!(matches!(
            sample_increments(&m, &grid, &mut stream(0, 0, StreamPurpose::Array)),
            Err(Error::Contract(_))
        ));
    }
}
