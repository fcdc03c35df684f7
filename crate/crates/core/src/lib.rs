//! Exploration-rate scheduling for batched linear contextual bandits.
//!
//! The numerical core ([`posterior`], [`objective`], [`optimizer`]) is
//! generic over the float type; the simulation layer ([`policies`],
//! [`environment`]) runs in `f64`. Aliases for the common `f64`
//! instantiations live at the crate root.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0)` also rejects NaN

pub mod environment;
pub mod error;
pub mod linalg;
pub mod model;
pub mod objective;
pub mod optimizer;
pub mod policies;
pub mod posterior;
pub mod rng;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

pub use environment::{
    arrival_pattern, noisy_forecast, run_episode, sample_batch_sizes, synth_instance,
    ArrivalPattern, BatchPlan, Episode, MeanSe, RegretReport,
};
pub use model::{
    per_user_regret, BanditInstance, InteractionRecord, ItemEmbeddings, UserEmbedding,
};
pub use objective::{
    bayes_regret, covariance_path, evaluate, evaluate_stochastic, evaluate_with,
    objective_gradient, objective_value, sample_posterior_path, DesignSampling, Estimate,
    ExplorationSchedule, GradientEstimator, NoiseDraws, ObjectiveConfig, RateBox,
};
pub use optimizer::{project, sgd_solve, Solution, SolverConfig, SolverInit};
pub use policies::{
    etc_rate, ridge_fit, theory_etc_budget, uniform_policy_assign, PlanningConfig, Policy,
    PolicySetup, StrategyKind,
};
pub use posterior::{
    empirical_design, make_prior, population_design, CovarianceMode, DesignMatrix,
    GaussianPosterior, PriorVariance,
};

pub type Posterior = GaussianPosterior<f64>;
pub type Schedule = ExplorationSchedule<f64>;
pub type Objective = ObjectiveConfig<f64>;
pub type Solver = SolverConfig<f64>;
pub type Instance = BanditInstance<f64>;
pub type Record = InteractionRecord<f64>;
pub type Design = DesignMatrix<f64>;
