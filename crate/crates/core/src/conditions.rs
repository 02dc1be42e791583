//! Discrepancy processes for the hypotheses of the diffusion-limit theorems:
//! compensated sums of conditional moments against time integrals of the
//! limit coefficients, and the conditional tail/Lindeberg sums.
//!
//! Sums run over `k = 1..=⌊nt⌋`; `U_0` only enters through the path. Sups over
//! `[0, T]` are taken at both ends of every grid piece.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::diffusion::DiffusionSpec;
use crate::error::{Error, Result};
use crate::integrals::{kron, prelimit_values, stack_matrix, stacked_conditional_moments, Integrand};
use crate::law::{Bound, ConditionalOracle};
use crate::models::{sample_row, ArrayModel, OracleEntry, Transcript};
use crate::parallel::map_indexed;
use crate::paths::{cumulative_time_integral, norm_diff, StepPath, TimeGrid};
use crate::rng::{SeedRecord, StreamPurpose};
use crate::stats::quantile_sorted;
use crate::truncation::CanonicalTruncation;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionVariant {
    /// Truncated conditional moments of `U`, conditional tail sums.
    Thm21,
    /// Plain conditional moments of `U`, conditional Lindeberg sums.
    Cor22,
    /// As `Thm21` for the stacked increments `[U; V ⊗ U]`.
    Thm31,
    /// As `Cor22` for the stacked increments `[U; V ⊗ U]`.
    Cor32,
}

impl ConditionVariant {
    pub fn truncated(self) -> bool {
        matches!(self, ConditionVariant::Thm21 | ConditionVariant::Thm31)
    }

    pub fn stacked(self) -> bool {
        matches!(self, ConditionVariant::Thm31 | ConditionVariant::Cor32)
    }

    pub fn name(self) -> &'static str {
        match self {
            ConditionVariant::Thm21 => "thm21",
            ConditionVariant::Cor22 => "cor22",
            ConditionVariant::Thm31 => "thm31",
            ConditionVariant::Cor32 => "cor32",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "thm21" => Ok(ConditionVariant::Thm21),
            "cor22" => Ok(ConditionVariant::Cor22),
            "thm31" => Ok(ConditionVariant::Thm31),
            "cor32" => Ok(ConditionVariant::Cor32),
            other => Err(Error::config(format!("unknown condition variant `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionParams {
    horizon: f64,
    thetas: Vec<f64>,
    epsilons: Vec<f64>,
    variant: ConditionVariant,
    truncation: Option<CanonicalTruncation>,
}

impl ConditionParams {
    /// `truncation` must be given exactly for the truncated variants, in the
    /// dimension of the increments being truncated (`d`, or `d (1 + p)` when stacked).
    pub fn new(
        horizon: f64,
        thetas: Vec<f64>,
        epsilons: Vec<f64>,
        variant: ConditionVariant,
        truncation: Option<CanonicalTruncation>,
    ) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::config(format!("horizon must be positive, got {horizon}")));
        }
        if thetas.iter().chain(&epsilons).any(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(Error::config("thresholds θ and ε must be positive and finite"));
        }
        if variant.truncated() != truncation.is_some() {
            return Err(Error::config(format!(
                "variant `{}` {} a truncation function",
                variant.name(),
                if variant.truncated() { "needs" } else { "does not take" }
            )));
        }
        Ok(ConditionParams {
            horizon,
            thetas,
            epsilons,
            variant,
            truncation,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    pub fn epsilons(&self) -> &[f64] {
        &self.epsilons
    }

    pub fn variant(&self) -> ConditionVariant {
        self.variant
    }

    pub fn truncation(&self) -> Option<&CanonicalTruncation> {
        self.truncation.as_ref()
    }
}

/// Condition values along one path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathConditions {
    /// Sup discrepancy of condition (i).
    pub sup_i: f64,
    /// Sup discrepancy of condition (ii), Frobenius norm.
    pub sup_ii: f64,
    /// Terminal sums of condition (iii), one per θ.
    pub terminal_iii: Vec<f64>,
    /// Whether any (iii) term is a conservative upper bound.
    pub conservative: bool,
}

/// Conditional quantities of step `k` in the variant's coordinates.
struct StepTerms {
    mean: Vec<f64>,
    cov: Vec<f64>,
    iii: Vec<Bound>,
}

fn step_terms(entry: &OracleEntry, v: Option<&[f64]>, params: &ConditionParams, model: &str) -> Result<StepTerms> {
    let law = &entry.law;
    let thetas = &params.thetas;
    let flat = |m: nalgebra::DMatrix<f64>| m.transpose().as_slice().to_vec();
    match (params.variant, v) {
        (ConditionVariant::Cor22, _) => Ok(StepTerms {
            mean: entry.mean.as_slice().to_vec(),
            cov: flat(entry.cov.clone()),
            iii: thetas.iter().map(|&t| law.lindeberg(t)).collect(),
        }),
        (ConditionVariant::Thm21, _) => {
            let h = params.truncation.as_ref().expect("validated");
            let (m1, cov) = law.truncated_moments(h, 1.0, model)?;
            Ok(StepTerms {
                mean: m1.as_slice().to_vec(),
                cov: flat(cov),
                iii: thetas.iter().map(|&t| law.tail(t)).collect(),
            })
        }
        (ConditionVariant::Cor32, Some(v)) => {
            let sm = stacked_conditional_moments(law, v);
            Ok(StepTerms {
                mean: sm.mean().as_slice().to_vec(),
                cov: flat(sm.cov()),
                iii: thetas.iter().map(|&t| sm.lindeberg(t)).collect(),
            })
        }
        (ConditionVariant::Thm31, Some(v)) => {
            let sm = stacked_conditional_moments(law, v);
            let h = params.truncation.as_ref().expect("validated");
            let (m1, cov) = sm.truncated_moments(h, model)?;
            Ok(StepTerms {
                mean: m1.as_slice().to_vec(),
                cov: flat(cov),
                iii: thetas.iter().map(|&t| sm.tail(t)).collect(),
            })
        }
        (_, None) => Err(Error::config(format!(
            "variant `{}` needs an integrand",
            params.variant.name()
        ))),
    }
}

/// Evaluates conditions (i)–(iii) along one path from its oracle transcript.
pub fn evaluate_path(
    transcript: &Transcript,
    path: &StepPath,
    spec: &DiffusionSpec,
    integrand: Option<&dyn Integrand>,
    params: &ConditionParams,
) -> Result<PathConditions> {
    let grid = *path.grid();
    let d = path.dim();
    if transcript.len() != grid.count() {
        return Err(Error::contract(format!(
            "transcript has {} steps, grid has {}",
            transcript.len(),
            grid.count()
        )));
    }
    if spec.dim() != d {
        return Err(Error::config(format!(
            "diffusion `{}` has dimension {}, path has {d}",
            spec.name(),
            spec.dim()
        )));
    }
    if (grid.horizon() - params.horizon).abs() > 1e-12 * params.horizon {
        return Err(Error::contract("grid horizon differs from condition horizon"));
    }
    let variant = params.variant;
    let vpath = if variant.stacked() {
        let ig = integrand.ok_or_else(|| Error::config(format!("variant `{}` needs an integrand", variant.name())))?;
        Some(prelimit_values(ig, path))
    } else {
        None
    };
    let p = vpath.as_ref().map_or(0, |v| v.dim());
    let w = d * (1 + p);
    if let Some(h) = &params.truncation {
        if h.dim() != w {
            return Err(Error::config(format!(
                "truncation has dimension {}, increments have {w}",
                h.dim()
            )));
        }
    }

    // compensators ∫ β'(s, ·) ds and ∫ γ'γ'ᵀ(s, ·) ds at 0, 1/n, ..., count/n, T
    let r = spec.noise_dim();
    let mut bbuf = vec![0.0; d];
    let mut gbuf = vec![0.0; d * r];
    let drift_int = cumulative_time_integral(path, w, |s, j, x, out| {
        spec.drift_into(s, x, &mut bbuf);
        out[..d].copy_from_slice(&bbuf);
        if let Some(v) = &vpath {
            out[d..].copy_from_slice(&kron(v.piece(j), &bbuf));
        }
    });
    let diff_int = cumulative_time_integral(path, w * w, |s, j, x, out| {
        spec.dispersion_into(s, x, &mut gbuf);
        let g = nalgebra::DMatrix::from_row_slice(d, r, &gbuf);
        let g = match &vpath {
            Some(v) => stack_matrix(v.piece(j), d) * g,
            None => g,
        };
        let gg = &g * g.transpose();
        for a in 0..w {
            for b in 0..w {
                out[a * w + b] = gg[(a, b)];
            }
        }
    });

    let mut cm = vec![0.0; w];
    let mut cc = vec![0.0; w * w];
    let mut iii = vec![0.0; params.thetas.len()];
    let mut conservative = false;
    // piece 0 carries no sum yet; compare with the compensator at both its ends
    let mut sup_i = norm_diff(&cm, &drift_int[w..2 * w]);
    let mut sup_ii = norm_diff(&cc, &diff_int[w * w..2 * w * w]);
    for k in 1..=grid.count() {
        let entry = transcript.get(k).expect("length checked");
        let v = vpath.as_ref().map(|v| v.piece(k - 1));
        let t = step_terms(entry, v, params, transcript.model())?;
        cm.iter_mut().zip(&t.mean).for_each(|(a, b)| *a += b);
        cc.iter_mut().zip(&t.cov).for_each(|(a, b)| *a += b);
        for (s, b) in iii.iter_mut().zip(&t.iii) {
            *s += b.value;
            conservative |= !b.exact;
        }
        for jj in [k, k + 1] {
            sup_i = sup_i.max(norm_diff(&cm, &drift_int[jj * w..(jj + 1) * w]));
            sup_ii = sup_ii.max(norm_diff(&cc, &diff_int[jj * w * w..(jj + 1) * w * w]));
        }
    }
    Ok(PathConditions {
        sup_i,
        sup_ii,
        terminal_iii: iii,
        conservative,
    })
}

/// Sup discrepancy of condition (i) along one path.
pub fn discrepancy_i(transcript: &Transcript, path: &StepPath, spec: &DiffusionSpec, params: &ConditionParams) -> Result<f64> {
    Ok(evaluate_path(transcript, path, spec, None, params)?.sup_i)
}

/// Sup discrepancy of condition (ii) along one path.
pub fn discrepancy_ii(transcript: &Transcript, path: &StepPath, spec: &DiffusionSpec, params: &ConditionParams) -> Result<f64> {
    Ok(evaluate_path(transcript, path, spec, None, params)?.sup_ii)
}

/// Terminal sums of condition (iii), one per θ: conditional Lindeberg terms
/// for the corollary variants, conditional tail probabilities for the theorem
/// variants.
pub fn lindeberg_sum(transcript: &Transcript, params: &ConditionParams) -> Result<Vec<f64>> {
    if params.variant.stacked() {
        return Err(Error::config("stacked variants need the path; use evaluate_path"));
    }
    let mut out = vec![0.0; params.thetas.len()];
    for e in transcript.entries() {
        for (s, &t) in out.iter_mut().zip(&params.thetas) {
            *s += match params.variant {
                ConditionVariant::Thm21 => e.law.tail(t).value,
                _ => e.law.lindeberg(t).value,
            };
        }
    }
    Ok(out)
}

/// Ensemble statistics of one condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub q50: f64,
    pub q90: f64,
    pub q95: f64,
    pub max: f64,
    /// Fraction of paths strictly above each ε.
    pub exceedance: Vec<f64>,
}

impl Summary {
    pub fn of(values: &[f64], epsilons: &[f64]) -> Self {
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        let m = s.len() as f64;
        Summary {
            mean: s.iter().sum::<f64>() / m,
            q50: quantile_sorted(&s, 0.5),
            q90: quantile_sorted(&s, 0.9),
            q95: quantile_sorted(&s, 0.95),
            max: *s.last().expect("nonempty"),
            exceedance: epsilons
                .iter()
                .map(|&e| s.iter().filter(|&&v| v > e).count() as f64 / m)
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub n: usize,
    pub horizon: f64,
    pub model: String,
    pub diffusion: String,
    pub integrand: Option<String>,
    pub variant: ConditionVariant,
    pub paths: usize,
    pub seed: u64,
    pub thetas: Vec<f64>,
    pub epsilons: Vec<f64>,
    /// Some (iii) value is an upper bound rather than exact.
    pub conservative: bool,
    pub sup_i: Vec<f64>,
    pub sup_ii: Vec<f64>,
    /// `terminal_iii[θ index][path index]`.
    pub terminal_iii: Vec<Vec<f64>>,
    pub summary_i: Summary,
    pub summary_ii: Summary,
    pub summary_iii: Vec<Summary>,
}

/// Runs `M` rows (path `i` keyed by `(master, i, Array)`, the same streams as
/// [`crate::models::simulate_ensemble`]) and evaluates every condition.
#[allow(clippy::too_many_arguments)]
pub fn check_conditions(
    model: &dyn ArrayModel,
    spec: &DiffusionSpec,
    integrand: Option<&dyn Integrand>,
    grid: &TimeGrid,
    params: &ConditionParams,
    paths: usize,
    master: u64,
    workers: usize,
) -> Result<ConditionReport> {
    if paths == 0 {
        return Err(Error::config("at least one path is needed"));
    }
    if model.dim() != spec.dim() {
        return Err(Error::config(format!(
            "model `{}` has dimension {}, diffusion `{}` has {}",
            model.name(),
            model.dim(),
            spec.name(),
            spec.dim()
        )));
    }
    let per_path = map_indexed(paths, workers, |i| {
        let seed = SeedRecord::new(master, i as u64, StreamPurpose::Array);
        let (inc, tr) = sample_row(model, grid, seed, &[])?;
        let path = StepPath::from_increments(model.dim(), *grid, &inc)?;
        evaluate_path(&tr, &path, spec, integrand, params)
    })?;
    let sup_i: Vec<f64> = per_path.iter().map(|p| p.sup_i).collect();
    let sup_ii: Vec<f64> = per_path.iter().map(|p| p.sup_ii).collect();
    let terminal_iii: Vec<Vec<f64>> = (0..params.thetas.len())
        .map(|t| per_path.iter().map(|p| p.terminal_iii[t]).collect())
        .collect();
    Ok(ConditionReport {
        n: grid.n(),
        horizon: grid.horizon(),
        model: model.name().to_string(),
        diffusion: spec.name().to_string(),
        integrand: integrand.filter(|_| params.variant.stacked()).map(|i| i.name().to_string()),
        variant: params.variant,
        paths,
        seed: master,
        thetas: params.thetas.clone(),
        epsilons: params.epsilons.clone(),
        conservative: per_path.iter().any(|p| p.conservative),
        summary_i: Summary::of(&sup_i, &params.epsilons),
        summary_ii: Summary::of(&sup_ii, &params.epsilons),
        summary_iii: terminal_iii.iter().map(|v| Summary::of(v, &params.epsilons)).collect(),
        sup_i,
        sup_ii,
        terminal_iii,
    })
}

impl ConditionReport {
    /// One row per condition (and θ for (iii)): mean, quantiles, max and the
    /// exceedance frequency for every ε.
    /// One row per condition (and per θ for (iii)); `header` prepends the column names.
    pub fn write_csv<W: Write>(&self, mut w: W, header: bool) -> Result<()> {
        if header {
            write!(w, "n,horizon,condition,theta,mean,q50,q90,q95,max")?;
            for e in &self.epsilons {
                write!(w, ",exceed_{e}")?;
            }
            writeln!(w)?;
        }
        let mut line = |cond: &str, theta: Option<f64>, s: &Summary| -> Result<()> {
            let th = theta.map(|t| t.to_string()).unwrap_or_default();
            write!(w, "{},{},{cond},{th},{},{},{},{},{}", self.n, self.horizon, s.mean, s.q50, s.q90, s.q95, s.max)?;
            for x in &s.exceedance {
                write!(w, ",{x}")?;
            }
            writeln!(w)?;
            Ok(())
        };
        line("i", None, &self.summary_i)?;
        line("ii", None, &self.summary_ii)?;
        for (t, s) in self.thetas.iter().zip(&self.summary_iii) {
            line("iii", Some(*t), s)?;
        }
        Ok(())
    }
}
