//! Three interactive views over the stepdiff library, exported to JavaScript.
//!
//! Every export returns a flat `Float64Array`; the layouts are documented on
//! the native functions, which are also what the tests call.

use stepdiff::conditions::{check_conditions, ConditionParams, ConditionVariant};
use stepdiff::integrals::{integrand_identity, prelimit_values, step_stochastic_integral};
use stepdiff::limit::coupled_limit;
use stepdiff::models::{model_euler_array, model_lindeberg_iid, model_nongood_triple, sample_increments, ScaleLaw};
use stepdiff::{g_c, ArrayModel, CanonicalTruncation, DiffusionSpec, Noise, Result, SeedRecord, StepPath, StreamPurpose, TimeGrid};
use wasm_bindgen::prelude::*;

/// Rungs used by the condition ladder view.
pub const LADDER: [usize; 5] = [30, 100, 300, 1000, 3000];

/// Terminal values of the integral of U- dU for the repeat-and-cancel triple
/// and for its coupled Ito limit: `paths` prelimit values followed by `paths`
/// limit values. The limit uses solver step `1/max(n, 200)`.
pub fn integral_samples(n: usize, paths: usize, seed: u64) -> Result<Vec<f64>> {
    let model = model_nongood_triple(n)?;
    let grid = TimeGrid::new(n, 1.0)?;
    let id = integrand_identity(1);
    let mut out = Vec::with_capacity(2 * paths);
    for i in 0..paths {
        let mut rng = SeedRecord::new(seed, i as u64, StreamPurpose::Array).rng();
        let inc = sample_increments(&model, &grid, &mut rng)?;
        let u = StepPath::from_increments(1, grid, &inc)?;
        let y = step_stochastic_integral(&prelimit_values(&id, &u), &u)?;
        out.push(y.piece(grid.count())[0]);
    }
    let spec = DiffusionSpec::scaled_wiener(1, 1.0 / 3f64.sqrt());
    let step = 1.0 / n.max(200) as f64;
    for i in 0..paths {
        let c = coupled_limit(&spec, &id, step, 1.0, SeedRecord::new(seed, i as u64, StreamPurpose::Limit))?;
        out.push(c.y_at(c.u.grid().steps())[0]);
    }
    Ok(out)
}

/// Radial profile of the canonical truncation: for `points` radii evenly
/// spaced on `[0, r_max]`, the triple `(r, |h(x)|, g_c(x))` with `|x| = r`.
pub fn truncation_profile(shape: f64, c: f64, r_max: f64, points: usize) -> Result<Vec<f64>> {
    let h = CanonicalTruncation::new(1, shape)?;
    let mut out = Vec::with_capacity(3 * points);
    for i in 0..points {
        let r = r_max * i as f64 / (points.max(2) - 1) as f64;
        out.extend([r, h.apply(&[r])[0].abs(), g_c(&[r], c)?]);
    }
    Ok(out)
}

fn ladder_model(name: &str, n: usize) -> Result<(Box<dyn ArrayModel>, DiffusionSpec)> {
    Ok(match name {
        "nongood" => (Box::new(model_nongood_triple(n)?), DiffusionSpec::scaled_wiener(1, 1.0 / 3f64.sqrt())),
        "donsker" => (Box::new(model_lindeberg_iid(1, ScaleLaw::Normal(vec![1.0]), n)?), DiffusionSpec::scaled_wiener(1, 1.0)),
        "ou" => {
            let spec = DiffusionSpec::ornstein_uhlenbeck(1.0, 0.0, 1.0, 1.0);
            (Box::new(model_euler_array(spec.clone(), Noise::Normal, n)?), spec)
        }
        other => return Err(stepdiff::Error::Config(format!("unknown demo model `{other}`"))),
    })
}

/// Median sup-discrepancies of conditions (i), (ii) and (iii) at `theta` over
/// the rungs in [`LADDER`]: rows `(n, median_i, median_ii, median_iii)`.
/// `model` is one of `nongood`, `donsker`, `ou`.
pub fn condition_ladder(model: &str, theta: f64, paths: usize, seed: u64) -> Result<Vec<f64>> {
    let params = ConditionParams::new(1.0, vec![theta], vec![0.05], ConditionVariant::Cor22, None)?;
    let mut out = Vec::with_capacity(4 * LADDER.len());
    for n in LADDER {
        let (m, spec) = ladder_model(model, n)?;
        let grid = TimeGrid::new(n, 1.0)?;
        let r = check_conditions(m.as_ref(), &spec, None, &grid, &params, paths, seed, 1)?;
        out.extend([n as f64, r.summary_i.q50, r.summary_ii.q50, r.summary_iii[0].q50]);
    }
    Ok(out)
}

fn js(r: Result<Vec<f64>>) -> std::result::Result<Vec<f64>, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = integralSamples)]
pub fn integral_samples_js(n: usize, paths: usize, seed: u64) -> std::result::Result<Vec<f64>, JsError> {
    js(integral_samples(n, paths, seed))
}

#[wasm_bindgen(js_name = truncationProfile)]
pub fn truncation_profile_js(shape: f64, c: f64, r_max: f64, points: usize) -> std::result::Result<Vec<f64>, JsError> {
    js(truncation_profile(shape, c, r_max, points))
}

#[wasm_bindgen(js_name = conditionLadder)]
pub fn condition_ladder_js(model: &str, theta: f64, paths: usize, seed: u64) -> std::result::Result<Vec<f64>, JsError> {
    js(condition_ladder(model, theta, paths, seed))
}
