//! Experiment configuration (TOML).

use serde::{Deserialize, Serialize};

use crate::conditions::ConditionVariant;
use crate::diffusion::DiffusionSpec;
use crate::error::{Error, Result};
use crate::integrals::{integrand_by_name, Integrand};
use crate::law::Noise;
use crate::models::{model_euler_array, model_lindeberg_iid, model_nongood_triple, ArrayModel, ScaleLaw};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub name: String,
    /// Master seed; every random stream is derived from it.
    pub seed: u64,
    /// Paths per ensemble.
    pub paths: usize,
    /// Row parameters `n`, strictly increasing.
    pub n_ladder: Vec<usize>,
    /// Horizons `T`; simulations run to the largest.
    pub horizons: Vec<f64>,
    /// Step of the limit solver.
    pub delta: f64,
    /// Simulate the limit equation and compare against it.
    pub limit: bool,
    /// Significance level for test decisions.
    pub alpha: f64,
    pub out_dir: String,
    pub formats: Formats,
    pub model: ModelConfig,
    pub diffusion: DiffusionConfig,
    pub integrand: IntegrandConfig,
    pub conditions: ConditionsConfig,
    pub functionals: Vec<FunctionalConfig>,
    pub assertions: Vec<Assertion>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            seed: 1,
            paths: 1000,
            n_ladder: vec![100, 1000],
            horizons: vec![1.0],
            delta: 1e-3,
            limit: true,
            alpha: 0.01,
            out_dir: "out".into(),
            formats: Formats::Both,
            model: ModelConfig::default(),
            diffusion: DiffusionConfig::default(),
            integrand: IntegrandConfig::default(),
            conditions: ConditionsConfig::default(),
            functionals: vec![FunctionalConfig::default()],
            assertions: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formats {
    Json,
    Csv,
    Both,
}

impl Formats {
    pub fn json(self) -> bool {
        self != Formats::Csv
    }

    pub fn csv(self) -> bool {
        self != Formats::Json
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Formats::Json),
            "csv" => Ok(Formats::Csv),
            "both" => Ok(Formats::Both),
            other => Err(Error::config(format!("format: expected json|csv|both, got `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// `lindeberg_iid`, `nongood_triple` or `euler_array`.
    pub name: String,
    pub dim: usize,
    /// Innovation law of `lindeberg_iid`: `normal`, `rademacher` or `uniform`.
    pub law: String,
    /// Covariance of normal innovations (row-major); empty means the identity.
    pub cov: Vec<f64>,
    /// Noise of `euler_array`.
    pub noise: Noise,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            name: "lindeberg_iid".into(),
            dim: 1,
            law: "normal".into(),
            cov: Vec::new(),
            noise: Noise::Normal,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionConfig {
    /// `zero`, `scaled_wiener`, `ornstein_uhlenbeck`, `drifted_wiener` or `square_root`.
    pub name: String,
    pub dim: usize,
    pub sigma: f64,
    /// Mean-reversion rate (`ornstein_uhlenbeck`) or `a` (`square_root`).
    pub rate: f64,
    /// Mean-reversion level (`ornstein_uhlenbeck`) or `b` (`square_root`).
    pub level: f64,
    /// Constant drift of `drifted_wiener`.
    pub drift: f64,
    /// Starting point of the one-dimensional built-ins.
    pub x0: f64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        DiffusionConfig {
            name: "scaled_wiener".into(),
            dim: 1,
            sigma: 1.0,
            rate: 1.0,
            level: 0.0,
            drift: 0.0,
            x0: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegrandConfig {
    /// `none`, `identity`, `constant` or `running_sup_norm`.
    pub name: String,
    /// Value of the `constant` integrand.
    pub value: Vec<f64>,
}

impl Default for IntegrandConfig {
    fn default() -> Self {
        IntegrandConfig {
            name: "none".into(),
            value: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConditionsConfig {
    pub enabled: bool,
    pub variant: ConditionVariant,
    pub thetas: Vec<f64>,
    pub epsilons: Vec<f64>,
    /// Shape constant `K` of the truncation for the `thm*` variants.
    pub truncation_k: f64,
    /// Paths for the condition check; 0 uses the experiment's `paths`.
    pub paths: usize,
}

impl Default for ConditionsConfig {
    fn default() -> Self {
        ConditionsConfig {
            enabled: true,
            variant: ConditionVariant::Cor22,
            thetas: vec![0.5],
            epsilons: vec![0.01, 0.05, 0.1],
            truncation_k: crate::truncation::DEFAULT_SHAPE,
            paths: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionalKind {
    /// Component of `U_t`.
    Value,
    /// Component of `Y_t = ∫ V_{s-} ⊗ dU_s`.
    Integral,
    /// `sup_{s ≤ t} ‖U_s‖`.
    SupNorm,
    /// Sum of squared increment norms up to `t`.
    QuadraticVariation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FunctionalConfig {
    pub name: String,
    pub kind: FunctionalKind,
    pub time: f64,
    pub component: usize,
    /// When set, the functional is `|raw - center|`.
    pub center: Option<f64>,
    /// Reference law `N(mean, variance)` for a one-sample KS test.
    pub normal: Option<[f64; 2]>,
}

impl Default for FunctionalConfig {
    fn default() -> Self {
        FunctionalConfig {
            name: "U(1)".into(),
            kind: FunctionalKind::Value,
            time: 1.0,
            component: 0,
            center: None,
            normal: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Prelimit,
    Limit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expect {
    Reject,
    Accept,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionName {
    I,
    Ii,
    Iii,
}

/// Checks evaluated after a run; `n` defaults to the last rung of the ladder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Assertion {
    MeanWithin {
        functional: String,
        source: Source,
        n: Option<usize>,
        target: f64,
        tolerance: f64,
    },
    KsTwoSample {
        functional: String,
        n: Option<usize>,
        expect: Expect,
        alpha: Option<f64>,
    },
    KsReference {
        functional: String,
        source: Source,
        n: Option<usize>,
        expect: Expect,
        alpha: Option<f64>,
    },
    QuantileBelow {
        functional: String,
        n: Option<usize>,
        q: f64,
        bound: f64,
    },
    QuantileDecreasing {
        functional: String,
        q: f64,
    },
    /// Median of a condition below `bound` (or `bound / n` when `per_n`) at every rung.
    ConditionMedianBelow {
        condition: ConditionName,
        theta: Option<f64>,
        bound: f64,
        per_n: bool,
    },
    /// Largest value of a condition below `bound` (or `bound / n`) on every path and rung.
    ConditionMaxBelow {
        condition: ConditionName,
        theta: Option<f64>,
        bound: f64,
        per_n: bool,
    },
    /// Median of a condition strictly decreasing along the ladder.
    ConditionDecreasing {
        condition: ConditionName,
        theta: Option<f64>,
    },
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::Config(format!("{field}: {msg}")));
        if self.paths < 2 {
            return bad("paths", "must be at least 2");
        }
        if self.n_ladder.is_empty() {
            return bad("n_ladder", "must not be empty");
        }
        if self.n_ladder[0] == 0 || self.n_ladder.windows(2).any(|w| w[1] <= w[0]) {
            return bad("n_ladder", "must be positive and strictly increasing");
        }
        if self.horizons.is_empty() || self.horizons.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            return bad("horizons", "must be a nonempty list of positive times");
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad("delta", "must be positive");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha", "must lie in (0, 1)");
        }
        if self.conditions.enabled {
            let c = &self.conditions;
            if c.thetas.iter().chain(&c.epsilons).any(|&x| !(x > 0.0 && x.is_finite())) {
                return bad("conditions", "thetas and epsilons must be positive");
            }
            if c.variant.stacked() && self.integrand.name == "none" {
                return bad("conditions.variant", "stacked variants need an [integrand]");
            }
            if c.paths == 1 {
                return bad("conditions.paths", "must be 0 (inherit) or at least 2");
            }
        }
        let t_max = self.horizon();
        for (i, f) in self.functionals.iter().enumerate() {
            let field = format!("functionals[{i}]");
            if !(f.time >= 0.0 && f.time <= t_max) {
                return bad(&field, "time must lie in [0, max horizon]");
            }
            if f.kind == FunctionalKind::Integral && self.integrand.name == "none" {
                return bad(&field, "integral functionals need an [integrand]");
            }
            if self.functionals[..i].iter().any(|g| g.name == f.name) {
                return bad(&field, "duplicate functional name");
            }
        }
        for (i, a) in self.assertions.iter().enumerate() {
            let field = format!("assertions[{i}]");
            let (name, n) = match a {
                Assertion::MeanWithin { functional, n, .. }
                | Assertion::KsTwoSample { functional, n, .. }
                | Assertion::KsReference { functional, n, .. }
                | Assertion::QuantileBelow { functional, n, .. } => (Some(functional), *n),
                Assertion::QuantileDecreasing { functional, .. } => (Some(functional), None),
                _ => (None, None),
            };
            if let Some(name) = name {
                if !self.functionals.iter().any(|f| &f.name == name) {
                    return bad(&field, &format!("unknown functional `{name}`"));
                }
            }
            if let Some(n) = n {
                if !self.n_ladder.contains(&n) {
                    return bad(&field, &format!("n = {n} is not on the ladder"));
                }
            }
            let needs_limit = matches!(
                a,
                Assertion::KsTwoSample { .. }
                    | Assertion::MeanWithin { source: Source::Limit, .. }
                    | Assertion::KsReference { source: Source::Limit, .. }
            );
            if needs_limit && !self.limit {
                return bad(&field, "needs the limit simulation (limit = true)");
            }
            let needs_conditions = matches!(
                a,
                Assertion::ConditionMedianBelow { .. } | Assertion::ConditionMaxBelow { .. } | Assertion::ConditionDecreasing { .. }
            );
            if needs_conditions && !self.conditions.enabled {
                return bad(&field, "needs conditions.enabled = true");
            }
        }
        self.build_diffusion()?;
        self.build_integrand()?;
        self.build_model(self.n_ladder[0])?;
        Ok(())
    }

    pub fn horizon(&self) -> f64 {
        self.horizons.iter().cloned().fold(0.0, f64::max)
    }

    pub fn condition_paths(&self) -> usize {
        if self.conditions.paths == 0 {
            self.paths
        } else {
            self.conditions.paths
        }
    }

    pub fn build_diffusion(&self) -> Result<DiffusionSpec> {
        let c = &self.diffusion;
        let one_d = || {
            if c.dim != 1 {
                Err(Error::config(format!("diffusion.dim: `{}` is one-dimensional", c.name)))
            } else {
                Ok(())
            }
        };
        match c.name.as_str() {
            "zero" => Ok(DiffusionSpec::zero(c.dim.max(1))),
            "scaled_wiener" => Ok(DiffusionSpec::scaled_wiener(c.dim.max(1), c.sigma)),
            "ornstein_uhlenbeck" => one_d().map(|_| DiffusionSpec::ornstein_uhlenbeck(c.rate, c.level, c.sigma, c.x0)),
            "drifted_wiener" => one_d().map(|_| DiffusionSpec::drifted_wiener(c.drift, c.sigma, c.x0)),
            "square_root" => one_d().map(|_| DiffusionSpec::square_root(c.rate, c.level, c.sigma, c.x0)),
            other => Err(Error::config(format!("diffusion.name: unknown diffusion `{other}`"))),
        }
    }

    pub fn build_integrand(&self) -> Result<Option<Box<dyn Integrand>>> {
        match self.integrand.name.as_str() {
            "none" => Ok(None),
            name => {
                let value = (!self.integrand.value.is_empty()).then(|| self.integrand.value.clone());
                integrand_by_name(name, value)
                    .map(Some)
                    .map_err(|e| Error::Config(format!("integrand.name: {e}")))
            }
        }
    }

    pub fn build_model(&self, n: usize) -> Result<Box<dyn ArrayModel>> {
        let c = &self.model;
        let wrap = |e: Error| match e {
            Error::Config(m) => Error::Config(format!("model: {m}")),
            other => other,
        };
        match c.name.as_str() {
            "lindeberg_iid" => {
                let law = match c.law.as_str() {
                    "normal" => {
                        let cov = if c.cov.is_empty() {
                            let mut id = vec![0.0; c.dim * c.dim];
                            (0..c.dim).for_each(|i| id[i * c.dim + i] = 1.0);
                            id
                        } else {
                            c.cov.clone()
                        };
                        ScaleLaw::Normal(cov)
                    }
                    "rademacher" => ScaleLaw::Rademacher,
                    "uniform" => ScaleLaw::Uniform,
                    other => return Err(Error::config(format!("model.law: unknown law `{other}`"))),
                };
                Ok(Box::new(model_lindeberg_iid(c.dim, law, n).map_err(wrap)?))
            }
            "nongood_triple" => Ok(Box::new(model_nongood_triple(n).map_err(wrap)?)),
            "euler_array" => Ok(Box::new(model_euler_array(self.build_diffusion()?, c.noise, n).map_err(wrap)?)),
            other => Err(Error::config(format!("model.name: unknown model `{other}`"))),
        }
    }

    /// Dimension of the model's increments.
    pub fn model_dim(&self) -> usize {
        match self.model.name.as_str() {
            "nongood_triple" => 1,
            "euler_array" => self.diffusion.dim,
            _ => self.model.dim,
        }
    }

    pub fn variant(&self) -> ConditionVariant {
        self.conditions.variant
    }
}
