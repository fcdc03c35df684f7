//! Experiment configuration: TOML with dotted keys, unknown keys rejected,
//! every default filled in and echoed back.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use schedopt::optimizer::SolverInit;
use schedopt::{
    ArrivalPattern, GradientEstimator, PlanningConfig, PolicySetup, RateBox, SolverConfig,
    StrategyKind,
};

use crate::error::HarnessError;

/// Constant grid swept for `eps_greedy` and `theory_etc` when none is given.
pub const DEFAULT_GRID: [f64; 5] = [0.05, 0.01, 0.1, 0.5, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InstanceSpec {
    /// Item counts to sweep.
    pub items: Vec<usize>,
    pub dim: usize,
    pub pool_size: usize,
    /// Prior mean, shared by every coordinate.
    pub prior_mean: f64,
    pub prior_variance: f64,
    pub noise_std: f64,
    /// Bound on squared user norms.
    pub norm_bound: f64,
}

impl Default for InstanceSpec {
    fn default() -> Self {
        Self {
            items: vec![5],
            dim: 8,
            pool_size: 1000,
            prior_mean: 0.0,
            prior_variance: 1.0,
            noise_std: 1.0,
            norm_bound: schedopt::environment::DEFAULT_NORM_BOUND,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanSpec {
    /// Expected total arrivals `N` to sweep.
    pub scale: Vec<usize>,
    pub patterns: Vec<String>,
    /// Explicit arrival fractions, used instead of `patterns` when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fractions: Option<Vec<f64>>,
    /// Dirichlet concentration for noisy forecasts; exact forecasts when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub forecast_concentration: Option<f64>,
}

impl Default for PlanSpec {
    fn default() -> Self {
        Self {
            scale: vec![2000],
            patterns: vec!["Increasing".into(), "Spike".into(), "Constant".into()],
            fractions: None,
            forecast_concentration: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanningSpec {
    pub user_sample: usize,
    pub paths: usize,
    pub steps: usize,
    pub step_size: f64,
    pub init: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub momentum: Option<f64>,
    pub decay: bool,
    pub normalize: bool,
    /// Mean-zero baseline in the gradient estimate (see `GradientEstimator`).
    pub gradient_baseline: bool,
    pub eval_paths: usize,
    pub sqrt_floor: f64,
    pub record_trace: bool,
    pub ridge_nu: f64,
    pub include_exploit: bool,
}

impl Default for PlanningSpec {
    fn default() -> Self {
        let solver = SolverConfig::<f64>::default();
        let planning = PlanningConfig::default();
        Self {
            user_sample: planning.user_sample,
            paths: planning.paths,
            steps: solver.steps,
            step_size: solver.step_size,
            init: 0.5,
            momentum: None,
            decay: solver.decay,
            normalize: solver.normalize,
            gradient_baseline: solver.estimator == GradientEstimator::Baseline,
            eval_paths: solver.eval_paths,
            sqrt_floor: planning.sqrt_floor,
            record_trace: false,
            ridge_nu: 1.0,
            include_exploit: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySpec {
    pub name: String,
    /// Fixed constant for `eps_greedy` / `theory_etc`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    /// Constants to sweep; best-in-hindsight is reported per cell.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub replications: usize,
    pub workers: usize,
    pub out: PathBuf,
    /// Lower bound on every deployed exploration rate.
    pub min_rate: f64,
    pub instance: InstanceSpec,
    pub plan: PlanSpec,
    pub planning: PlanningSpec,
    #[serde(rename = "strategy")]
    pub strategies: Vec<StrategySpec>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let s = |n: &str| StrategySpec {
            name: n.into(),
            value: None,
            grid: None,
        };
        Self {
            seed: 0,
            replications: 100,
            workers: 1,
            out: PathBuf::from("out"),
            min_rate: 0.0,
            instance: InstanceSpec::default(),
            plan: PlanSpec::default(),
            planning: PlanningSpec::default(),
            strategies: vec![
                s("eps_greedy"),
                s("theory_etc"),
                s("simple_etc"),
                s("planner"),
                s("mpc"),
            ],
        }
    }
}

/// A strategy entry expanded into the concrete variants it runs.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyGroup {
    pub name: String,
    pub variants: Vec<StrategyKind>,
    /// Report best-in-hindsight across `variants`.
    pub swept: bool,
}

/// One arrival scenario: a named pattern or explicit fractions.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub label: String,
    pub fractions: Vec<f64>,
}

fn bad(path: &str, message: impl Into<String>) -> HarnessError {
    HarnessError::Config {
        path: path.into(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    /// Parses TOML text; errors carry the offending key path.
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let de = toml::Deserializer::parse(text).map_err(|e| bad("", e.to_string()))?;
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            bad(&path, e.into_inner().message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Resolved configuration as TOML.
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.replications == 0 {
            return Err(bad("replications", "must be >= 1"));
        }
        if self.workers == 0 {
            return Err(bad("workers", "must be >= 1"));
        }
        RateBox::new(self.min_rate, 1.0).map_err(|e| bad("min_rate", e.to_string()))?;
        let i = &self.instance;
        if i.items.is_empty() || i.items.contains(&0) {
            return Err(bad("instance.items", "need item counts >= 1"));
        }
        if i.dim == 0 {
            return Err(bad("instance.dim", "must be >= 1"));
        }
        if i.pool_size == 0 {
            return Err(bad("instance.pool_size", "must be >= 1"));
        }
        for (key, v) in [
            ("instance.prior_variance", i.prior_variance),
            ("instance.noise_std", i.noise_std),
            ("instance.norm_bound", i.norm_bound),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(bad(key, "must be finite and > 0"));
            }
        }
        if !i.prior_mean.is_finite() {
            return Err(bad("instance.prior_mean", "must be finite"));
        }
        let p = &self.plan;
        if p.scale.is_empty() || p.scale.contains(&0) {
            return Err(bad("plan.scale", "need N values >= 1"));
        }
        if let Some(c) = p.forecast_concentration {
            if !(c > 0.0 && c.is_finite()) {
                return Err(bad("plan.forecast_concentration", "must be > 0"));
            }
        }
        if let Some(f) = &p.fractions {
            schedopt::environment::validate_fractions(f)
                .map_err(|e| bad("plan.fractions", e.to_string()))?;
        } else {
            if p.patterns.is_empty() {
                return Err(bad("plan.patterns", "need at least one pattern"));
            }
            for (idx, name) in p.patterns.iter().enumerate() {
                ArrivalPattern::from_name(name)
                    .map_err(|e| bad(&format!("plan.patterns[{idx}]"), e.to_string()))?;
            }
        }
        let q = &self.planning;
        if q.user_sample == 0 {
            return Err(bad("planning.user_sample", "must be >= 1"));
        }
        if q.paths == 0 {
            return Err(bad("planning.paths", "must be >= 1"));
        }
        if !(q.sqrt_floor > 0.0) {
            return Err(bad("planning.sqrt_floor", "must be > 0"));
        }
        if !(q.ridge_nu > 0.0) {
            return Err(bad("planning.ridge_nu", "must be > 0"));
        }
        self.solver_config(0)
            .validate()
            .map_err(|e| bad("planning", e.to_string()))?;
        if self.strategies.is_empty() {
            return Err(bad("strategy", "need at least one strategy"));
        }
        self.strategy_groups()?;
        Ok(())
    }

    pub fn strategy_groups(&self) -> Result<Vec<StrategyGroup>, HarnessError> {
        self.strategies
            .iter()
            .enumerate()
            .map(|(idx, s)| {
                let path = format!("strategy[{idx}]");
                let takes_param = matches!(s.name.as_str(), "eps_greedy" | "theory_etc");
                if !takes_param && (s.value.is_some() || s.grid.is_some()) {
                    return Err(bad(&path, format!("{} takes no constant", s.name)));
                }
                let (params, swept): (Vec<Option<f64>>, bool) = match (s.value, &s.grid) {
                    (Some(_), Some(_)) => {
                        return Err(bad(&path, "give either value or grid, not both"))
                    }
                    (Some(v), None) => (vec![Some(v)], false),
                    (None, Some(g)) if g.is_empty() => {
                        return Err(bad(&format!("{path}.grid"), "empty grid"))
                    }
                    (None, Some(g)) => (g.iter().copied().map(Some).collect(), true),
                    (None, None) if takes_param => {
                        (DEFAULT_GRID.iter().copied().map(Some).collect(), true)
                    }
                    (None, None) => (vec![None], false),
                };
                let variants = params
                    .into_iter()
                    .map(|p| {
                        StrategyKind::from_name(&s.name, p).map_err(|e| bad(&path, e.to_string()))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(StrategyGroup {
                    name: s.name.clone(),
                    variants,
                    swept,
                })
            })
            .collect()
    }

    pub fn scenarios(&self) -> Vec<Scenario> {
        match &self.plan.fractions {
            Some(f) => vec![Scenario {
                label: "Custom".into(),
                fractions: f.clone(),
            }],
            None => self
                .plan
                .patterns
                .iter()
                .map(|name| {
                    let p = ArrivalPattern::from_name(name).expect("validated pattern");
                    Scenario {
                        label: p.name().into(),
                        fractions: p.fractions(),
                    }
                })
                .collect(),
        }
    }

    pub fn solver_config(&self, seed: u64) -> SolverConfig<f64> {
        let q = &self.planning;
        SolverConfig {
            steps: q.steps,
            step_size: q.step_size,
            bounds: RateBox {
                lower: self.min_rate,
                upper: 1.0,
            },
            init: SolverInit::Constant(q.init),
            seed,
            momentum: q.momentum,
            decay: q.decay,
            normalize: q.normalize,
            eval_paths: q.eval_paths,
            record_trace: q.record_trace,
            estimator: if q.gradient_baseline {
                GradientEstimator::Baseline
            } else {
                GradientEstimator::Pathwise
            },
        }
    }

    /// Policy setup for `items` arms; seeds are filled in per replication.
    pub fn policy_setup(&self, items: usize, solver_seed: u64, policy_seed: u64) -> PolicySetup {
        let i = &self.instance;
        let q = &self.planning;
        PolicySetup {
            items,
            dim: i.dim,
            noise_std: i.noise_std,
            prior_mean: vec![i.prior_mean; i.dim],
            prior_variance: i.prior_variance,
            ridge_nu: q.ridge_nu,
            include_exploit: q.include_exploit,
            min_rate: self.min_rate,
            planning: PlanningConfig {
                user_sample: q.user_sample,
                paths: q.paths,
                sqrt_floor: q.sqrt_floor,
                solver: self.solver_config(solver_seed),
            },
            seed: policy_seed,
        }
    }
}

/// Reads and validates a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    ExperimentConfig::from_toml(&text)
}
