//! Step paths on the uniform grid `k/n`, sampled paths for sup-norm
//! comparisons, and midpoint quadrature of time integrals along a step path.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeedRecord;

/// Relative tolerance under which `n * t` is treated as the nearby integer.
/// Keeps `floor(n t)` from dropping a whole piece when `t` is a grid point that
/// is not representable (e.g. `0.29 * 100 = 28.999999999999996`).
const SNAP_TOL: f64 = 1e-9;

pub(crate) fn floor_index(n: usize, t: f64) -> usize {
    let x = n as f64 * t;
    let r = x.round();
    if (x - r).abs() <= SNAP_TOL * r.max(1.0) {
        r as usize
    } else {
        x.floor() as usize
    }
}

/// Grid `{k/n : 0 <= k <= floor(nT)}` on the horizon `[0, T]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    n: usize,
    horizon: f64,
    count: usize,
}

impl TimeGrid {
    pub fn new(n: usize, horizon: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::domain("grid parameter n must be at least 1"));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::domain(format!("horizon must be positive, got {horizon}")));
        }
        Ok(TimeGrid {
            n,
            horizon,
            count: floor_index(n, horizon),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// `floor(n T)`: index of the last grid point in `[0, T]`.
    pub fn count(&self) -> usize {
        self.count
    }

    /// Number of pieces (`count + 1`); the last one may be partial or a single point.
    pub fn pieces(&self) -> usize {
        self.count + 1
    }

    pub fn mesh(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// `floor(n t)` clamped to `count`.
    pub fn index(&self, t: f64) -> Result<usize> {
        self.check_time(t)?;
        Ok(floor_index(self.n, t).min(self.count))
    }

    pub fn piece_start(&self, j: usize) -> f64 {
        j as f64 / self.n as f64
    }

    /// Right end of piece `j`, clipped at the horizon.
    pub fn piece_end(&self, j: usize) -> f64 {
        if j >= self.count {
            self.horizon
        } else {
            (j + 1) as f64 / self.n as f64
        }
    }

    pub(crate) fn check_time(&self, t: f64) -> Result<()> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::domain(format!(
                "time {t} outside [0, {}]",
                self.horizon
            )));
        }
        Ok(())
    }

    pub(crate) fn same_as(&self, other: &TimeGrid) -> bool {
        self.n == other.n && self.count == other.count && self.horizon == other.horizon
    }
}

/// Piecewise-constant càdlàg path: piece `j` covers `[j/n, (j+1)/n)` and holds
/// the prefix sum `U_0 + ... + U_j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepPath {
    dim: usize,
    grid: TimeGrid,
    /// Row-major, `grid.pieces() * dim` entries.
    values: Vec<f64>,
}

impl StepPath {
    /// Builds the path of prefix sums of `increments` (row-major, `count + 1`
    /// rows of `dim` entries).
    pub fn from_increments(dim: usize, grid: TimeGrid, increments: &[f64]) -> Result<Self> {
        check_len(dim, &grid, increments.len(), "increments")?;
        let mut values = Vec::with_capacity(increments.len());
        let mut acc = vec![0.0; dim];
        for row in increments.chunks_exact(dim) {
            for (a, u) in acc.iter_mut().zip(row) {
                *a += u;
            }
            values.extend_from_slice(&acc);
        }
        Ok(StepPath { dim, grid, values })
    }

    /// Wraps already accumulated piece values.
    pub fn from_values(dim: usize, grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        check_len(dim, &grid, values.len(), "values")?;
        Ok(StepPath { dim, grid, values })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn piece(&self, j: usize) -> &[f64] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }

    /// Right-continuous evaluation: `values[floor(n t)]`.
    pub fn eval(&self, t: f64) -> Result<&[f64]> {
        Ok(self.piece(self.grid.index(t)?))
    }

    /// Recovers `U_0, ..., U_count` by differencing consecutive pieces.
    pub fn increments(&self) -> Vec<f64> {
        let d = self.dim;
        let mut out = Vec::with_capacity(self.values.len());
        out.extend_from_slice(&self.values[..d]);
        for w in self.values.windows(2 * d).step_by(d) {
            out.extend(w[d..].iter().zip(&w[..d]).map(|(b, a)| b - a));
        }
        out
    }
}

fn check_len(dim: usize, grid: &TimeGrid, len: usize, what: &str) -> Result<()> {
    if dim == 0 {
        return Err(Error::contract("path dimension must be positive"));
    }
    let want = grid.pieces() * dim;
    if len != want {
        return Err(Error::contract(format!(
            "{what}: expected {} rows of dimension {dim} ({want} entries), got {len}",
            grid.pieces()
        )));
    }
    Ok(())
}

/// A path (vector- or flattened matrix-valued) sampled at both ends of every
/// grid piece: the value at `j/n` and the left limit at the piece end.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledPath {
    grid: TimeGrid,
    width: usize,
    starts: Vec<f64>,
    ends: Vec<f64>,
}

impl SampledPath {
    pub fn from_parts(grid: TimeGrid, width: usize, starts: Vec<f64>, ends: Vec<f64>) -> Result<Self> {
        check_len(width, &grid, starts.len(), "piece starts")?;
        check_len(width, &grid, ends.len(), "piece ends")?;
        Ok(SampledPath {
            grid,
            width,
            starts,
            ends,
        })
    }

    pub fn from_step(path: &StepPath) -> Self {
        SampledPath {
            grid: path.grid,
            width: path.dim,
            starts: path.values.clone(),
            ends: path.values.clone(),
        }
    }

    /// Samples a continuous function at both ends of each piece.
    pub fn from_fn(grid: TimeGrid, width: usize, mut f: impl FnMut(f64) -> Vec<f64>) -> Result<Self> {
        let mut starts = Vec::with_capacity(grid.pieces() * width);
        let mut ends = Vec::with_capacity(grid.pieces() * width);
        for j in 0..grid.pieces() {
            for (buf, t) in [(&mut starts, grid.piece_start(j)), (&mut ends, grid.piece_end(j))] {
                let v = f(t);
                if v.len() != width {
                    return Err(Error::contract(format!(
                        "sampled function returned {} components, expected {width}",
                        v.len()
                    )));
                }
                buf.extend_from_slice(&v);
            }
        }
        Ok(SampledPath {
            grid,
            width,
            starts,
            ends,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn starts(&self) -> &[f64] {
        &self.starts
    }

    pub fn ends(&self) -> &[f64] {
        &self.ends
    }
}

/// `max` over sampled points of the Euclidean (Frobenius, for flattened
/// matrices) norm of `f - g`.
pub fn sup_norm_diff(f: &SampledPath, g: &SampledPath) -> Result<f64> {
    if !f.grid.same_as(&g.grid) || f.width != g.width {
        return Err(Error::contract("sup_norm_diff: paths are sampled on different grids"));
    }
    let w = f.width;
    let sup = |a: &[f64], b: &[f64]| {
        a.chunks_exact(w)
            .zip(b.chunks_exact(w))
            .map(|(x, y)| norm_diff(x, y))
            .fold(0.0, f64::max)
    };
    Ok(sup(&f.starts, &g.starts).max(sup(&f.ends, &g.ends)))
}

pub(crate) fn norm_diff(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// `∫_0^t f(s, path(s)) ds` by the one-point midpoint rule on every (possibly
/// partial) piece.
pub fn piecewise_time_integral(
    f: impl FnMut(f64, &[f64]) -> Vec<f64>,
    path: &StepPath,
    t: f64,
) -> Result<Vec<f64>> {
    integral_between(f, path, 0.0, t)
}

/// Midpoint-rule integral over `[a, b]`, splitting at grid points.
pub fn integral_between(
    mut f: impl FnMut(f64, &[f64]) -> Vec<f64>,
    path: &StepPath,
    a: f64,
    b: f64,
) -> Result<Vec<f64>> {
    let grid = path.grid;
    grid.check_time(a)?;
    grid.check_time(b)?;
    if b < a {
        return Err(Error::domain(format!("integration bounds reversed: [{a}, {b}]")));
    }
    let mut acc: Option<Vec<f64>> = None;
    let mut lo = a;
    let mut j = grid.index(a)?;
    while lo < b {
        let hi = grid.piece_end(j).min(b);
        let len = hi - lo;
        if len > 0.0 {
            let v = f(lo + 0.5 * len, path.piece(j));
            match acc.as_mut() {
                Some(s) => s.iter_mut().zip(&v).for_each(|(s, x)| *s += len * x),
                None => acc = Some(v.iter().map(|x| len * x).collect()),
            }
        }
        if j >= grid.count() {
            break;
        }
        lo = hi;
        j += 1;
    }
    Ok(acc.unwrap_or_else(|| {
        let w = f(a, path.piece(grid.index(a).unwrap_or(0))).len();
        vec![0.0; w]
    }))
}

/// Cumulative midpoint integrals at `0, 1/n, ..., count/n, T` (row-major,
/// `count + 2` rows of `width`). `f(s, j, x, out)` writes the integrand at time
/// `s` on piece `j` where the path equals `x`.
pub fn cumulative_time_integral(
    path: &StepPath,
    width: usize,
    mut f: impl FnMut(f64, usize, &[f64], &mut [f64]),
) -> Vec<f64> {
    let grid = path.grid;
    let h = grid.mesh();
    let mut out = Vec::with_capacity((grid.count() + 2) * width);
    let mut acc = vec![0.0; width];
    let mut buf = vec![0.0; width];
    out.extend_from_slice(&acc);
    for j in 0..grid.count() {
        f((j as f64 + 0.5) * h, j, path.piece(j), &mut buf);
        acc.iter_mut().zip(&buf).for_each(|(a, b)| *a += h * b);
        out.extend_from_slice(&acc);
    }
    let last = grid.count();
    let len = grid.horizon() - grid.piece_start(last);
    if len > 0.0 {
        f(grid.piece_start(last) + 0.5 * len, last, path.piece(last), &mut buf);
        acc.iter_mut().zip(&buf).for_each(|(a, b)| *a += len * b);
    }
    out.extend_from_slice(&acc);
    out
}

/// Paths of one dimension and grid, each with the seed that regenerates it.
#[derive(Clone, Debug, PartialEq)]
pub struct PathEnsemble {
    dim: usize,
    grid: TimeGrid,
    paths: Vec<StepPath>,
    seeds: Vec<SeedRecord>,
}

impl PathEnsemble {
    pub fn new(paths: Vec<StepPath>, seeds: Vec<SeedRecord>) -> Result<Self> {
        let first = paths
            .first()
            .ok_or_else(|| Error::contract("an ensemble needs at least one path"))?;
        let (dim, grid) = (first.dim, first.grid);
        if paths.iter().any(|p| p.dim != dim || !p.grid.same_as(&grid)) {
            return Err(Error::contract("ensemble paths must share dimension and grid"));
        }
        if seeds.len() != paths.len() {
            return Err(Error::contract(format!(
                "{} seed records for {} paths",
                seeds.len(),
                paths.len()
            )));
        }
        Ok(PathEnsemble {
            dim,
            grid,
            paths,
            seeds,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn paths(&self) -> &[StepPath] {
        &self.paths
    }

    pub fn seeds(&self) -> &[SeedRecord] {
        &self.seeds
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(n: usize, t: f64) -> TimeGrid {
        TimeGrid::new(n, t).unwrap()
    }

    #[test]
    fn grid_count_is_floor() {
        assert_eq!(grid(3, 1.0).count(), 3);
        assert_eq!(grid(10, 0.55).count(), 5);
        assert_eq!(grid(100, 0.29).count(), 29);
        assert!(TimeGrid::new(0, 1.0).is_err());
        assert!(TimeGrid::new(1, 0.0).is_err());
    }

    #[test]
    fn zero_increments_give_zero_path() {
        let g = grid(10, 1.0);
        let p = StepPath::from_increments(1, g, &[0.0; 11]).unwrap();
        assert!(p.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn prefix_sums() {
        let g = grid(3, 1.0);
        // a row at n = 3 holds U_0..U_3; the listed increments are U_0..U_2
        let p = StepPath::from_increments(1, g, &[1.0, 2.0, 3.0, 0.0]).unwrap();
        assert_eq!(&p.values()[..3], &[1.0, 3.0, 6.0]);
        let p2 = StepPath::from_increments(2, grid(2, 1.0), &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(p2.piece(0), &[1.0, 0.0]);
        assert_eq!(p2.piece(1), &[1.0, 1.0]);
    }

    #[test]
    fn length_mismatch_is_contract_error() {
        let e = StepPath::from_increments(1, grid(3, 1.0), &[1.0, 2.0, 3.0]).unwrap_err();
        assert!(matches!(e, Error::Contract(_)));
    }

    #[test]
    fn eval_floor_indexing() {
        let g = grid(3, 1.0);
        let p = StepPath::from_increments(1, g, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(p.eval(0.4).unwrap(), &[3.0]);
        assert_eq!(p.eval(0.0).unwrap(), &[1.0]);
        assert_eq!(p.eval(1.0).unwrap(), &[10.0]);
        assert!(matches!(p.eval(1.5), Err(Error::Domain(_))));
        assert!(matches!(p.eval(-0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn eval_clamps_on_partial_last_piece() {
        let g = grid(4, 0.9);
        assert_eq!(g.count(), 3);
        let p = StepPath::from_increments(1, g, &[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(p.eval(0.9).unwrap(), &[4.0]);
    }

    #[test]
    fn sup_norm_examples() {
        let g = grid(10, 1.0);
        let zero = SampledPath::from_fn(g, 1, |_| vec![0.0]).unwrap();
        let ramp = SampledPath::from_fn(g, 1, |t| vec![t]).unwrap();
        assert_eq!(sup_norm_diff(&ramp, &ramp).unwrap(), 0.0);
        assert_eq!(sup_norm_diff(&zero, &ramp).unwrap(), 1.0);

        let g2 = grid(2, 1.0);
        let ind = StepPath::from_values(1, g2, vec![1.0, 0.0, 0.0]).unwrap();
        let z2 = StepPath::from_values(1, g2, vec![0.0; 3]).unwrap();
        let d = sup_norm_diff(&SampledPath::from_step(&ind), &SampledPath::from_step(&z2)).unwrap();
        assert_eq!(d, 1.0);

        let other = SampledPath::from_fn(grid(5, 1.0), 1, |_| vec![0.0]).unwrap();
        assert!(matches!(sup_norm_diff(&zero, &other), Err(Error::Contract(_))));
    }

    #[test]
    fn sup_norm_uses_frobenius_for_matrices() {
        let g = grid(1, 1.0);
        let a = SampledPath::from_fn(g, 4, |_| vec![1.0, 2.0, 2.0, 0.0]).unwrap();
        let b = SampledPath::from_fn(g, 4, |_| vec![0.0; 4]).unwrap();
        assert_eq!(sup_norm_diff(&a, &b).unwrap(), 3.0);
    }

    #[test]
    fn midpoint_integrals() {
        let g = grid(10, 1.0);
        let p = StepPath::from_values(1, g, vec![2.5; 11]).unwrap();
        assert_eq!(piecewise_time_integral(|_, _| vec![0.0], &p, 0.7).unwrap(), vec![0.0]);
        let c = piecewise_time_integral(|_, x| x.to_vec(), &p, 1.0).unwrap();
        assert!((c[0] - 2.5).abs() < 1e-15);
        // closed form: ∫_0^1 s ds = 1/2; midpoint rule is exact for linear integrands
        let s = piecewise_time_integral(|s, _| vec![s], &p, 1.0).unwrap();
        assert!((s[0] - 0.5).abs() <= 4.0 * f64::EPSILON);
        assert!(piecewise_time_integral(|s, _| vec![s], &p, 1.1).is_err());
    }

    #[test]
    fn cumulative_matches_pointwise() {
        let g = grid(7, 1.3);
        let inc: Vec<f64> = (0..g.pieces()).map(|k| (k as f64 * 0.37).sin()).collect();
        let p = StepPath::from_increments(1, g, &inc).unwrap();
        let f = |s: f64, x: &[f64]| vec![s * s - x[0]];
        let cum = cumulative_time_integral(&p, 1, |s, _, x, out| out[0] = s * s - x[0]);
        for j in 0..=g.count() {
            let direct = piecewise_time_integral(f, &p, g.piece_start(j)).unwrap();
            assert!((direct[0] - cum[j]).abs() < 1e-13);
        }
        let direct = piecewise_time_integral(f, &p, 1.3).unwrap();
        assert!((direct[0] - cum[g.count() + 1]).abs() < 1e-13);
    }

    #[test]
    fn ensemble_validation() {
        let g = grid(2, 1.0);
        let p = StepPath::from_values(1, g, vec![0.0; 3]).unwrap();
        let q = StepPath::from_values(2, g, vec![0.0; 6]).unwrap();
        let seed = SeedRecord::new(1, 0, crate::rng::StreamPurpose::Array);
        assert!(PathEnsemble::new(vec![p.clone(), q], vec![seed, seed]).is_err());
        assert!(PathEnsemble::new(vec![p.clone()], vec![]).is_err());
        assert_eq!(PathEnsemble::new(vec![p], vec![seed]).unwrap().len(), 1);
    }

    proptest! {
        #[test]
        fn increments_round_trip(
            n in 1usize..40,
            dim in 1usize..4,
            seed in any::<u64>(),
        ) {
            let g = grid(n, 1.0);
            let mut state = seed;
            let inc: Vec<f64> = (0..g.pieces() * dim).map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            }).collect();
            let p = StepPath::from_increments(dim, g, &inc).unwrap();
            for (a, b) in p.increments().iter().zip(&inc) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn eval_constant_within_piece(n in 1usize..50, j_frac in 0.0f64..1.0, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let g = grid(n, 1.0);
            let vals: Vec<f64> = (0..g.pieces()).map(|k| k as f64).collect();
            let p = StepPath::from_values(1, g, vals).unwrap();
            let j = ((j_frac * n as f64) as usize).min(n - 1);
            let (lo, hi) = (a.min(b), a.max(b));
            let t1 = (j as f64 + 0.01 + 0.98 * lo) / n as f64;
            let t2 = (j as f64 + 0.01 + 0.98 * hi) / n as f64;
            prop_assert_eq!(p.eval(t1).unwrap(), p.eval(t2).unwrap());
        }

        #[test]
        fn sup_norm_metric_axioms(seed in any::<u64>(), n in 1usize..20) {
            let g = grid(n, 1.0);
            let mk = |k: u64| SampledPath::from_fn(g, 2, move |t| {
                let phase = (k % 97) as f64 * 0.1;
                vec![(t * 3.0 + phase).sin(), (t * 5.0 - phase).cos() * phase]
            }).unwrap();
            let (f, h, q) = (mk(seed), mk(seed / 3 + 1), mk(seed / 7 + 2));
            let fh = sup_norm_diff(&f, &h).unwrap();
            prop_assert_eq!(fh, sup_norm_diff(&h, &f).unwrap());
            prop_assert!(fh <= sup_norm_diff(&f, &q).unwrap() + sup_norm_diff(&q, &h).unwrap() + 1e-12);
        }

        #[test]
        fn integral_additive_at_grid_points(n in 1usize..30, split in 0usize..30, t in 0.0f64..1.0) {
            let g = grid(n, 1.0);
            let vals: Vec<f64> = (0..g.pieces()).map(|k| (k as f64).cos()).collect();
            let p = StepPath::from_values(1, g, vals).unwrap();
            let s = (split.min(n)) as f64 / n as f64;
            let (s, t) = if s <= t { (s, t) } else { (t.min(s), s) };
            let s = g.piece_start(floor_index(n, s));
            if s <= t {
                let f = |u: f64, x: &[f64]| vec![u.exp() * x[0]];
                let whole = integral_between(f, &p, 0.0, t).unwrap()[0];
                let parts = integral_between(f, &p, 0.0, s).unwrap()[0] + integral_between(f, &p, s, t).unwrap()[0];
                prop_assert!((whole - parts).abs() < 1e-12);
            }
        }
    }
}
