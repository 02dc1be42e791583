//! Experiment pipeline: prelimit ensembles over the `n` ladder, the limit
//! ensemble, condition checks, functional comparisons and assertions.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::conditions::{check_conditions, ConditionParams, ConditionReport};
use crate::config::{Assertion, ConditionName, ExperimentConfig, Expect, FunctionalConfig, FunctionalKind, Source};
use crate::diffusion::DiffusionSpec;
use crate::error::{Error, Result};
use crate::integrals::{prelimit_values, step_stochastic_integral, Integrand};
use crate::io::EnsembleFile;
use crate::limit::{coupled_limit, euler_maruyama, limit_ensemble, simulate_limit_ensemble, SolverGrid};
use crate::models::{sample_increments, simulate_ensemble, ArrayModel};
use crate::parallel::map_indexed;
use crate::paths::{StepPath, TimeGrid};
use crate::rng::{SeedRecord, StreamPurpose};
use crate::stats::{ks_one_sample, ks_two_sample, moment_summary, normal_cdf, quantile, FunctionalSample, MomentSummary};
use crate::truncation::CanonicalTruncation;

pub const SCHEMA_VERSION: u32 = 1;

/// Master seed of rung `n`: the ladder's ensembles use unrelated streams.
pub fn rung_seed(master: u64, n: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = master ^ (n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    /// Write the path ensembles only.
    Simulate,
    /// Condition reports only.
    Conditions,
    /// Functionals and statistical tests only.
    Compare,
    /// Everything, then the assertions.
    Full,
}

#[derive(Clone, Copy, Debug)]
pub struct RunOptions {
    pub workers: usize,
    /// Seconds since the Unix epoch, recorded as `generated_at`; `None` omits it.
    pub generated_at: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionalRecord {
    pub name: String,
    pub kind: FunctionalKind,
    pub time: f64,
    pub source: Source,
    pub n: Option<usize>,
    pub delta: Option<f64>,
    pub seed: u64,
    pub provenance: String,
    pub summary: MomentSummary,
    pub q50: f64,
    pub q95: f64,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestRecord {
    pub functional: String,
    pub n: usize,
    /// `ks_two_sample` (prelimit against limit) or `ks_reference_prelimit` /
    /// `ks_reference_limit` (against the functional's normal reference).
    pub test: String,
    pub statistic: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub reject: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssertionRecord {
    pub index: usize,
    pub assertion: Assertion,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub generated_at: Option<u64>,
    pub name: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub conditions: Vec<ConditionReport>,
    pub functionals: Vec<FunctionalRecord>,
    pub tests: Vec<TestRecord>,
    pub assertions: Vec<AssertionRecord>,
    pub passed: bool,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// JSON with the timestamp removed, for byte comparisons between runs.
    pub fn to_json_without_timestamp(&self) -> String {
        let mut r = self.clone();
        r.generated_at = None;
        r.to_json()
    }

    fn functional(&self, name: &str, source: Source, n: Option<usize>) -> Option<&FunctionalRecord> {
        self.functionals
            .iter()
            .find(|f| f.name == name && f.source == source && (source == Source::Limit || f.n == n))
    }
}

struct Setup {
    spec: DiffusionSpec,
    integrand: Option<Box<dyn Integrand>>,
}

fn setup(cfg: &ExperimentConfig) -> Result<Setup> {
    cfg.validate()?;
    let spec = cfg.build_diffusion()?;
    if cfg.model_dim() != spec.dim() {
        return Err(Error::Config(format!(
            "model.dim: model has dimension {}, diffusion has {}",
            cfg.model_dim(),
            spec.dim()
        )));
    }
    let integrand = cfg.build_integrand()?;
    let d = spec.dim();
    let p = integrand.as_ref().map_or(0, |i| i.output_dim(d));
    for (i, f) in cfg.functionals.iter().enumerate() {
        let width = match f.kind {
            FunctionalKind::Value => d,
            FunctionalKind::Integral => p * d,
            _ => 1,
        };
        if f.component >= width {
            return Err(Error::Config(format!(
                "functionals[{i}].component: {} out of range (width {width})",
                f.component
            )));
        }
    }
    Ok(Setup { spec, integrand })
}

fn center(f: &FunctionalConfig, x: f64) -> f64 {
    match f.center {
        Some(c) => (x - c).abs(),
        None => x,
    }
}

fn prelimit_functionals(
    fns: &[FunctionalConfig],
    model: &dyn ArrayModel,
    integrand: Option<&dyn Integrand>,
    grid: &TimeGrid,
    seed: SeedRecord,
) -> Result<Vec<f64>> {
    let d = model.dim();
    let inc = sample_increments(model, grid, &mut seed.rng())?;
    let u = StepPath::from_increments(d, *grid, &inc)?;
    let y = match integrand {
        Some(ig) if fns.iter().any(|f| f.kind == FunctionalKind::Integral) => {
            Some(step_stochastic_integral(&prelimit_values(ig, &u), &u)?)
        }
        _ => None,
    };
    fns.iter()
        .map(|f| {
            let j = grid.index(f.time)?;
            let raw = match f.kind {
                FunctionalKind::Value => u.piece(j)[f.component],
                FunctionalKind::Integral => y.as_ref().expect("integrand checked").piece(j)[f.component],
                FunctionalKind::SupNorm => (0..=j).map(|i| crate::truncation::norm(u.piece(i))).fold(0.0, f64::max),
                FunctionalKind::QuadraticVariation => inc[d..(j + 1) * d].iter().map(|x| x * x).sum(),
            };
            Ok(center(f, raw))
        })
        .collect()
}

fn limit_functionals(
    fns: &[FunctionalConfig],
    spec: &DiffusionSpec,
    integrand: Option<&dyn Integrand>,
    step: f64,
    horizon: f64,
    seed: SeedRecord,
) -> Result<Vec<f64>> {
    let d = spec.dim();
    let (u, y) = match integrand {
        Some(ig) => {
            let c = coupled_limit(spec, ig, step, horizon, seed)?;
            let w = c.p * d;
            (c.u, Some((c.y, w)))
        }
        None => (euler_maruyama(spec, step, horizon, seed)?, None),
    };
    let grid: &SolverGrid = u.grid();
    fns.iter()
        .map(|f| {
            let m = grid.index(f.time)?;
            let raw = match f.kind {
                FunctionalKind::Value => u.at(m)[f.component],
                FunctionalKind::Integral => {
                    let (y, w) = y.as_ref().expect("integrand checked");
                    y[m * w + f.component]
                }
                FunctionalKind::SupNorm => (0..=m).map(|i| crate::truncation::norm(u.at(i))).fold(0.0, f64::max),
                FunctionalKind::QuadraticVariation => (1..=m)
                    .map(|i| {
                        u.at(i)
                            .iter()
                            .zip(u.at(i - 1))
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                    })
                    .sum(),
            };
            Ok(center(f, raw))
        })
        .collect()
}

fn transpose(rows: Vec<Vec<f64>>, width: usize) -> Vec<Vec<f64>> {
    (0..width).map(|c| rows.iter().map(|r| r[c]).collect()).collect()
}

fn record(
    f: &FunctionalConfig,
    source: Source,
    n: Option<usize>,
    delta: Option<f64>,
    seed: u64,
    provenance: String,
    values: Vec<f64>,
) -> Result<FunctionalRecord> {
    let sample = FunctionalSample::scalar(f.name.clone(), values, provenance.clone())?;
    Ok(FunctionalRecord {
        name: f.name.clone(),
        kind: f.kind,
        time: f.time,
        source,
        n,
        delta,
        seed,
        provenance,
        summary: moment_summary(&sample),
        q50: quantile(&sample.values, 0.5),
        q95: quantile(&sample.values, 0.95),
        values: sample.values,
    })
}

fn condition_params(cfg: &ExperimentConfig, horizon: f64, width: usize) -> Result<ConditionParams> {
    let c = &cfg.conditions;
    let h = if c.variant.truncated() {
        Some(CanonicalTruncation::new(width, c.truncation_k).map_err(|e| Error::Config(format!("conditions.truncation_k: {e}")))?)
    } else {
        None
    };
    ConditionParams::new(horizon, c.thetas.clone(), c.epsilons.clone(), c.variant, h)
}

fn name_variant(e: Error, cfg: &ExperimentConfig) -> Error {
    match e {
        Error::Capability { model, what } => Error::Capability {
            model,
            what: format!("{what} (needed by variant `{}`)", cfg.variant().name()),
        },
        other => other,
    }
}

/// Runs the configured stage and returns the report; nothing is written.
pub fn run_experiment(cfg: &ExperimentConfig, stage: Stage, opts: RunOptions) -> Result<Report> {
    let s = setup(cfg)?;
    let workers = opts.workers.max(1);
    let horizon = cfg.horizon();
    let ig = s.integrand.as_deref();
    let mut report = Report {
        schema_version: SCHEMA_VERSION,
        generated_at: opts.generated_at,
        name: cfg.name.clone(),
        seed: cfg.seed,
        config: cfg.clone(),
        conditions: Vec::new(),
        functionals: Vec::new(),
        tests: Vec::new(),
        assertions: Vec::new(),
        passed: true,
    };

    if matches!(stage, Stage::Conditions | Stage::Full) && cfg.conditions.enabled {
        let p = ig.map_or(0, |i| i.output_dim(s.spec.dim()));
        let width = s.spec.dim() * if cfg.variant().stacked() { 1 + p } else { 1 };
        for &n in &cfg.n_ladder {
            let model = cfg.build_model(n)?;
            for &t in &cfg.horizons {
                let grid = TimeGrid::new(n, t)?;
                let params = condition_params(cfg, t, width)?;
                let integrand = if cfg.variant().stacked() { ig } else { None };
                let r = check_conditions(
                    model.as_ref(),
                    &s.spec,
                    integrand,
                    &grid,
                    &params,
                    cfg.condition_paths(),
                    rung_seed(cfg.seed, n),
                    workers,
                )
                .map_err(|e| name_variant(e, cfg))?;
                report.conditions.push(r);
            }
        }
    }

    if matches!(stage, Stage::Compare | Stage::Full) && !cfg.functionals.is_empty() {
        let fns = &cfg.functionals;
        let limit = if cfg.limit {
            let rows = map_indexed(cfg.paths, workers, |i| {
                let seed = SeedRecord::new(cfg.seed, i as u64, StreamPurpose::Limit);
                limit_functionals(fns, &s.spec, ig, cfg.delta, horizon, seed)
            })?;
            let cols = transpose(rows, fns.len());
            let prov = format!("{} limit, delta = {}, seed = {}", s.spec.name(), cfg.delta, cfg.seed);
            let recs = fns
                .iter()
                .zip(cols)
                .map(|(f, v)| record(f, Source::Limit, None, Some(cfg.delta), cfg.seed, prov.clone(), v))
                .collect::<Result<Vec<_>>>()?;
            report.functionals.extend(recs.iter().cloned());
            Some(recs)
        } else {
            None
        };
        for &n in &cfg.n_ladder {
            let model = cfg.build_model(n)?;
            let grid = TimeGrid::new(n, horizon)?;
            let master = rung_seed(cfg.seed, n);
            let rows = map_indexed(cfg.paths, workers, |i| {
                let seed = SeedRecord::new(master, i as u64, StreamPurpose::Array);
                prelimit_functionals(fns, model.as_ref(), ig, &grid, seed)
            })?;
            let prov = format!("{} n = {n}, seed = {master}", model.name());
            for (k, (f, v)) in fns.iter().zip(transpose(rows, fns.len())).enumerate() {
                let rec = record(f, Source::Prelimit, Some(n), None, master, prov.clone(), v)?;
                let sample = FunctionalSample::scalar(f.name.clone(), rec.values.clone(), "")?;
                if let Some(recs) = &limit {
                    let other = FunctionalSample::scalar(f.name.clone(), recs[k].values.clone(), "")?;
                    let r = ks_two_sample(&sample, &other)?;
                    report.tests.push(test_record(&f.name, n, "ks_two_sample", r.statistic, r.p_value, cfg.alpha));
                }
                if let Some([mean, var]) = f.normal {
                    let r = ks_one_sample(&sample, normal_cdf(mean, var.sqrt()))?;
                    report.tests.push(test_record(&f.name, n, "ks_reference_prelimit", r.statistic, r.p_value, cfg.alpha));
                    if let Some(recs) = &limit {
                        let lim = FunctionalSample::scalar(f.name.clone(), recs[k].values.clone(), "")?;
                        let r = ks_one_sample(&lim, normal_cdf(mean, var.sqrt()))?;
                        report.tests.push(test_record(&f.name, n, "ks_reference_limit", r.statistic, r.p_value, cfg.alpha));
                    }
                }
                report.functionals.push(rec);
            }
        }
    }

    if stage == Stage::Full {
        let records: Vec<AssertionRecord> = cfg
            .assertions
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let (passed, detail) = evaluate_assertion(a, cfg, &report);
                AssertionRecord {
                    index: i,
                    assertion: a.clone(),
                    passed,
                    detail,
                }
            })
            .collect();
        report.passed = records.iter().all(|r| r.passed);
        report.assertions = records;
    }
    Ok(report)
}

fn test_record(functional: &str, n: usize, test: &str, statistic: f64, p_value: f64, alpha: f64) -> TestRecord {
    TestRecord {
        functional: functional.to_string(),
        n,
        test: test.to_string(),
        statistic,
        p_value,
        alpha,
        reject: p_value < alpha,
    }
}

fn condition_values(r: &ConditionReport, c: ConditionName, theta: Option<f64>) -> std::result::Result<(&[f64], f64), String> {
    match c {
        ConditionName::I => Ok((&r.sup_i, r.summary_i.q50)),
        ConditionName::Ii => Ok((&r.sup_ii, r.summary_ii.q50)),
        ConditionName::Iii => {
            let idx = match theta {
                Some(t) => r.thetas.iter().position(|&x| x == t).ok_or(format!("θ = {t} was not evaluated"))?,
                None if !r.thetas.is_empty() => 0,
                None => return Err("no θ evaluated".into()),
            };
            Ok((&r.terminal_iii[idx], r.summary_iii[idx].q50))
        }
    }
}

fn evaluate_assertion(a: &Assertion, cfg: &ExperimentConfig, report: &Report) -> (bool, String) {
    let last = *cfg.n_ladder.last().expect("validated");
    let find = |name: &str, src: Source, n: Option<usize>| report.functional(name, src, Some(n.unwrap_or(last)));
    let decide = |expect: Expect, p: f64, alpha: f64| match expect {
        Expect::Reject => (p < alpha, format!("p = {p:e}, reject when p < {alpha:e}")),
        Expect::Accept => (p > alpha, format!("p = {p:e}, accept when p > {alpha:e}")),
    };
    match a {
        Assertion::MeanWithin {
            functional,
            source,
            n,
            target,
            tolerance,
        } => match find(functional, *source, *n) {
            Some(f) => {
                let m = f.summary.mean[0];
                ((m - target).abs() <= *tolerance, format!("mean = {m}, target {target} ± {tolerance}"))
            }
            None => (false, "functional not computed".into()),
        },
        Assertion::KsTwoSample {
            functional,
            n,
            expect,
            alpha,
        } => {
            let n = n.unwrap_or(last);
            match report.tests.iter().find(|t| t.functional == *functional && t.n == n && t.test == "ks_two_sample") {
                Some(t) => decide(*expect, t.p_value, alpha.unwrap_or(cfg.alpha)),
                None => (false, "test not run".into()),
            }
        }
        Assertion::KsReference {
            functional,
            source,
            n,
            expect,
            alpha,
        } => {
            let n = n.unwrap_or(last);
            let name = match source {
                Source::Prelimit => "ks_reference_prelimit",
                Source::Limit => "ks_reference_limit",
            };
            match report.tests.iter().find(|t| t.functional == *functional && t.n == n && t.test == name) {
                Some(t) => decide(*expect, t.p_value, alpha.unwrap_or(cfg.alpha)),
                None => (false, "no normal reference configured for this functional".into()),
            }
        }
        Assertion::QuantileBelow { functional, n, q, bound } => match find(functional, Source::Prelimit, *n) {
            Some(f) => {
                let v = quantile(&f.values, *q);
                (v <= *bound, format!("quantile({q}) = {v}, bound {bound}"))
            }
            None => (false, "functional not computed".into()),
        },
        Assertion::QuantileDecreasing { functional, q } => {
            let vals: Vec<f64> = cfg
                .n_ladder
                .iter()
                .filter_map(|&n| find(functional, Source::Prelimit, Some(n)).map(|f| quantile(&f.values, *q)))
                .collect();
            let ok = vals.len() == cfg.n_ladder.len() && vals.windows(2).all(|w| w[1] < w[0]);
            (ok, format!("quantiles along the ladder: {vals:?}"))
        }
        Assertion::ConditionMedianBelow {
            condition,
            theta,
            bound,
            per_n,
        }
        | Assertion::ConditionMaxBelow {
            condition,
            theta,
            bound,
            per_n,
        } => {
            let use_max = matches!(a, Assertion::ConditionMaxBelow { .. });
            let mut ok = !report.conditions.is_empty();
            let mut parts = Vec::new();
            for r in &report.conditions {
                match condition_values(r, *condition, *theta) {
                    Ok((vals, median)) => {
                        let b = if *per_n { bound / r.n as f64 } else { *bound };
                        let v = if use_max { vals.iter().cloned().fold(0.0, f64::max) } else { median };
                        ok &= v <= b;
                        parts.push(format!("n = {}, T = {}: {v:e} vs {b:e}", r.n, r.horizon));
                    }
                    Err(e) => {
                        ok = false;
                        parts.push(e);
                    }
                }
            }
            (ok, parts.join("; "))
        }
        Assertion::ConditionDecreasing { condition, theta } => {
            let mut ok = true;
            let mut parts = Vec::new();
            for &t in &cfg.horizons {
                let meds: Vec<f64> = report
                    .conditions
                    .iter()
                    .filter(|r| r.horizon == t)
                    .filter_map(|r| condition_values(r, *condition, *theta).ok().map(|v| v.1))
                    .collect();
                ok &= meds.len() == cfg.n_ladder.len() && meds.windows(2).all(|w| w[1] < w[0]);
                parts.push(format!("T = {t}: medians {meds:?}"));
            }
            (ok, parts.join("; "))
        }
    }
}

/// Writes `report.json` and the CSV tables into `dir`.
pub fn write_report(report: &Report, dir: &Path, json: bool, csv: bool) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    if json {
        let p = dir.join("report.json");
        fs::write(&p, report.to_json() + "\n")?;
        written.push(p);
    }
    if csv {
        for &n in &report.config.n_ladder {
            let rs: Vec<&ConditionReport> = report.conditions.iter().filter(|r| r.n == n).collect();
            if rs.is_empty() {
                continue;
            }
            let p = dir.join(format!("conditions_{n}.csv"));
            let mut w = BufWriter::new(File::create(&p)?);
            for (i, r) in rs.iter().enumerate() {
                r.write_csv(&mut w, i == 0)?;
            }
            w.flush()?;
            written.push(p);
        }
        if !report.functionals.is_empty() {
            let p = dir.join("functionals.csv");
            let mut w = BufWriter::new(File::create(&p)?);
            writeln!(w, "functional,source,n,delta,path,value")?;
            for f in &report.functionals {
                let src = match f.source {
                    Source::Prelimit => "prelimit",
                    Source::Limit => "limit",
                };
                let n = f.n.map(|n| n.to_string()).unwrap_or_default();
                let dl = f.delta.map(|d| d.to_string()).unwrap_or_default();
                for (i, v) in f.values.iter().enumerate() {
                    writeln!(w, "{},{src},{n},{dl},{i},{v}", f.name)?;
                }
            }
            w.flush()?;
            written.push(p);
        }
        if !report.tests.is_empty() {
            let p = dir.join("tests.csv");
            let mut w = BufWriter::new(File::create(&p)?);
            writeln!(w, "functional,n,test,statistic,p_value,alpha,decision")?;
            for t in &report.tests {
                let dec = if t.reject { "reject" } else { "accept" };
                writeln!(w, "{},{},{},{},{},{},{dec}", t.functional, t.n, t.test, t.statistic, t.p_value, t.alpha)?;
            }
            w.flush()?;
            written.push(p);
        }
    }
    Ok(written)
}

/// Simulates and writes `ensemble_<n>.bin` per rung and, when the solver step
/// is of the form `1/n`, `limit.bin`.
pub fn write_ensembles(cfg: &ExperimentConfig, dir: &Path, workers: usize) -> Result<Vec<PathBuf>> {
    let s = setup(cfg)?;
    fs::create_dir_all(dir)?;
    let horizon = cfg.horizon();
    let mut written = Vec::new();
    for &n in &cfg.n_ladder {
        let model = cfg.build_model(n)?;
        let grid = TimeGrid::new(n, horizon)?;
        let e = simulate_ensemble(model.as_ref(), &grid, rung_seed(cfg.seed, n), cfg.paths, workers)?;
        let p = dir.join(format!("ensemble_{n}.bin"));
        EnsembleFile::from_ensemble(&e).write(BufWriter::new(File::create(&p)?))?;
        written.push(p);
    }
    if cfg.limit {
        let paths = simulate_limit_ensemble(&s.spec, cfg.delta, horizon, cfg.seed, cfg.paths, workers)?;
        if let Ok(e) = limit_ensemble(&paths) {
            let p = dir.join("limit.bin");
            EnsembleFile::from_ensemble(&e).write(BufWriter::new(File::create(&p)?))?;
            written.push(p);
        }
    }
    Ok(written)
}
