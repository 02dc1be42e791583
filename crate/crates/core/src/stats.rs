//! Two-sample and goodness-of-fit comparisons of functional samples.

use rand::seq::index::sample as sample_indices;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::std_normal_cdf;
use crate::rng::{SeedRecord, StreamPurpose};

/// `M` values of a scalar or vector functional of a path ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionalSample {
    pub name: String,
    pub dim: usize,
    /// Row-major, `M * dim` entries.
    pub values: Vec<f64>,
    /// Where the sample came from (model or diffusion, `n` or `Δ`, seed).
    pub provenance: String,
}

impl FunctionalSample {
    pub fn new(name: impl Into<String>, dim: usize, values: Vec<f64>, provenance: impl Into<String>) -> Result<Self> {
        let name = name.into();
        if dim == 0 || !values.len().is_multiple_of(dim) {
            return Err(Error::contract(format!("`{name}`: {} values do not form rows of {dim}", values.len())));
        }
        if values.len() / dim < 2 {
            return Err(Error::domain(format!("`{name}`: need at least 2 observations")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain(format!("`{name}`: non-finite observation")));
        }
        Ok(FunctionalSample {
            name,
            dim,
            values,
            provenance: provenance.into(),
        })
    }

    pub fn scalar(name: impl Into<String>, values: Vec<f64>, provenance: impl Into<String>) -> Result<Self> {
        Self::new(name, 1, values, provenance)
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    fn sorted_scalar(&self) -> Result<Vec<f64>> {
        if self.dim != 1 {
            return Err(Error::contract(format!("`{}` is not scalar", self.name)));
        }
        let mut v = self.values.clone();
        v.sort_by(f64::total_cmp);
        Ok(v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// `P(K > λ)` for the Kolmogorov distribution.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.0 {
        // Jacobi-transformed series converges fast for small λ
        let c = std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let s: f64 = (1..=20)
            .map(|k| (-((2 * k - 1) as f64).powi(2) * c).exp())
            .sum();
        let cdf = (2.0 * std::f64::consts::PI).sqrt() / lambda * s;
        return (1.0 - cdf).clamp(0.0, 1.0);
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-300 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// `sup |F_a - F_b|` by a merged sweep and the asymptotic p-value at the
/// effective size `m k / (m + k)`.
pub fn ks_two_sample(a: &FunctionalSample, b: &FunctionalSample) -> Result<TestResult> {
    let (x, y) = (a.sorted_scalar()?, b.sorted_scalar()?);
    let (m, k) = (x.len(), y.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < m && j < k {
        let v = x[i].min(y[j]);
        while i < m && x[i] <= v {
            i += 1;
        }
        while j < k && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / m as f64 - j as f64 / k as f64).abs());
    }
    let ne = (m * k) as f64 / (m + k) as f64;
    Ok(TestResult {
        statistic: d,
        p_value: kolmogorov_sf(ne.sqrt() * d),
    })
}

/// One-sample test against a continuous CDF.
pub fn ks_one_sample(a: &FunctionalSample, cdf: impl Fn(f64) -> f64) -> Result<TestResult> {
    let x = a.sorted_scalar()?;
    let m = x.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &v) in x.iter().enumerate() {
        let f = cdf(v);
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::domain(format!("cdf returned {f} at {v}")));
        }
        d = d.max((i + 1) as f64 / m - f).max(f - i as f64 / m);
    }
    Ok(TestResult {
        statistic: d,
        p_value: kolmogorov_sf(m.sqrt() * d),
    })
}

/// CDF of `N(mean, sd²)`.
pub fn normal_cdf(mean: f64, sd: f64) -> impl Fn(f64) -> f64 {
    move |x| std_normal_cdf((x - mean) / sd)
}

/// Above this many observations per sample, energy distances use a seeded subsample.
pub const ENERGY_EXACT_LIMIT: usize = 5000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyResult {
    pub value: f64,
    /// Seed of the subsample, when one was drawn.
    pub subsample: Option<SeedRecord>,
}

fn dist(x: &[f64], y: &[f64]) -> f64 {
    crate::paths::norm_diff(x, y)
}

fn mean_cross(a: &[&[f64]], b: &[&[f64]]) -> f64 {
    let mut s = 0.0;
    for x in a {
        for y in b {
            s += dist(x, y);
        }
    }
    s / (a.len() * b.len()) as f64
}

fn subsample(s: &FunctionalSample, limit: usize, seed: SeedRecord) -> Vec<&[f64]> {
    if s.len() <= limit {
        return (0..s.len()).map(|i| s.row(i)).collect();
    }
    let mut idx = sample_indices(&mut seed.rng(), s.len(), limit).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| s.row(i)).collect()
}

/// `2 E‖X - Y‖ - E‖X - X'‖ - E‖Y - Y'‖` with all pairs averaged (V-statistic).
/// Samples longer than `limit` are replaced by seeded subsamples of that size.
pub fn energy_distance_with(a: &FunctionalSample, b: &FunctionalSample, limit: usize, master: u64) -> Result<EnergyResult> {
    if a.dim != b.dim {
        return Err(Error::contract(format!(
            "energy distance between dimensions {} and {}",
            a.dim, b.dim
        )));
    }
    let seed = SeedRecord::new(master, 0, StreamPurpose::Subsample);
    let seed_b = SeedRecord::new(master, 1, StreamPurpose::Subsample);
    let used = (a.len() > limit || b.len() > limit).then_some(seed);
    let xa = subsample(a, limit, seed);
    let xb = subsample(b, limit, seed_b);
    let v = 2.0 * mean_cross(&xa, &xb) - mean_cross(&xa, &xa) - mean_cross(&xb, &xb);
    Ok(EnergyResult {
        value: v.max(0.0),
        subsample: used,
    })
}

pub fn energy_distance(a: &FunctionalSample, b: &FunctionalSample) -> Result<EnergyResult> {
    energy_distance_with(a, b, ENERGY_EXACT_LIMIT, 0)
}

/// Permutation test of equal laws based on the energy statistic, with
/// `p = (1 + #{permuted ≥ observed}) / (1 + permutations)`.
pub fn energy_permutation_test(
    a: &FunctionalSample,
    b: &FunctionalSample,
    permutations: usize,
    master: u64,
) -> Result<TestResult> {
    if a.dim != b.dim {
        return Err(Error::contract("energy permutation test: dimension mismatch"));
    }
    let (m, k) = (a.len(), b.len());
    let n = m + k;
    let rows: Vec<&[f64]> = (0..m).map(|i| a.row(i)).chain((0..k).map(|i| b.row(i))).collect();
    let mut dmat = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = dist(rows[i], rows[j]);
            dmat[i * n + j] = v;
            dmat[j * n + i] = v;
        }
    }
    let total: f64 = dmat.iter().sum();
    let stat = |labels: &[usize]| {
        // labels[..m] index group a, labels[m..] group b
        let block = |ix: &[usize]| {
            let mut s = 0.0;
            for &i in ix {
                let row = &dmat[i * n..(i + 1) * n];
                for &j in ix {
                    s += row[j];
                }
            }
            s
        };
        let (ga, gb) = labels.split_at(m);
        let (saa, sbb) = (block(ga), block(gb));
        let sab = 0.5 * (total - saa - sbb);
        2.0 * sab / (m * k) as f64 - saa / (m * m) as f64 - sbb / (k * k) as f64
    };
    let mut labels: Vec<usize> = (0..n).collect();
    let observed = stat(&labels);
    let mut rng = SeedRecord::new(master, 0, StreamPurpose::Permutation).rng();
    let mut hits = 0usize;
    for _ in 0..permutations {
        rand::seq::SliceRandom::shuffle(labels.as_mut_slice(), &mut rng);
        if stat(&labels) >= observed * (1.0 - 1e-12) {
            hits += 1;
        }
    }
    Ok(TestResult {
        statistic: observed.max(0.0),
        p_value: (1 + hits) as f64 / (1 + permutations) as f64,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentSummary {
    pub count: usize,
    pub mean: Vec<f64>,
    /// Unbiased covariance, row-major.
    pub cov: Vec<f64>,
    /// Standard errors of the mean.
    pub se: Vec<f64>,
    /// Normal-approximation 95% interval for each mean component.
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
}

const Z975: f64 = 1.959_963_984_540_054;

pub fn moment_summary(a: &FunctionalSample) -> MomentSummary {
    let (m, d) = (a.len(), a.dim);
    let mut mean = vec![0.0; d];
    for i in 0..m {
        mean.iter_mut().zip(a.row(i)).for_each(|(s, x)| *s += x);
    }
    mean.iter_mut().for_each(|s| *s /= m as f64);
    let mut cov = vec![0.0; d * d];
    for i in 0..m {
        let r = a.row(i);
        for p in 0..d {
            for q in 0..d {
                cov[p * d + q] += (r[p] - mean[p]) * (r[q] - mean[q]);
            }
        }
    }
    cov.iter_mut().for_each(|c| *c /= (m - 1) as f64);
    let se: Vec<f64> = (0..d).map(|p| (cov[p * d + p] / m as f64).sqrt()).collect();
    MomentSummary {
        count: m,
        ci_low: mean.iter().zip(&se).map(|(x, s)| x - Z975 * s).collect(),
        ci_high: mean.iter().zip(&se).map(|(x, s)| x + Z975 * s).collect(),
        mean,
        cov,
        se,
    }
}

/// Sample quantile by linear interpolation between order statistics
/// (`h = (M - 1) q`); `sorted` must be ascending and nonempty.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, q)
}
