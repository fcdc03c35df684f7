//! Assignment policies and exploration-schedule strategies.
//!
//! Every strategy here deploys one exploration rate per period through the
//! uniform-exploration policy with ridge-greedy exploitation, except
//! batched Thompson sampling which draws one item-embedding sample per period.

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::Hasher;

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::model::{InteractionRecord, UserEmbedding};
use crate::objective::{ObjectiveConfig, RateBox, DEFAULT_SQRT_FLOOR};
use crate::optimizer::{sgd_solve, SolverConfig, SolverInit, TraceRow};
use crate::posterior::{
    make_prior, population_design, CovarianceMode, GaussianPosterior, PriorVariance,
};
use crate::rng::{derive_seed, purpose, std_normal, stream};
use crate::scalar::{argmax, dot, Real};

/// `(X^T X + nu I)^{-1} X^T R` over explore rows assigned to `a`.
pub fn ridge_fit<T: Real>(
    history: &[InteractionRecord<T>],
    a: usize,
    nu: T,
    d: usize,
) -> Result<Vec<T>> {
    if !(nu > T::zero()) {
        return Err(invalid("ridge regularizer must be > 0"));
    }
    let mut gram = linalg::identity::<T>(d);
    gram.iter_mut().for_each(|v| *v *= nu);
    let mut xr = vec![T::zero(); d];
    for r in history.iter().filter(|r| r.explored && r.action == a) {
        if r.x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: r.x.len(),
            });
        }
        accumulate(&mut gram, &mut xr, &r.x, r.reward);
    }
    solve_spd(&gram, d, &xr)
}

fn accumulate<T: Real>(gram: &mut [T], xr: &mut [T], x: &[T], reward: T) {
    let d = x.len();
    for i in 0..d {
        for j in 0..d {
            gram[i * d + j] += x[i] * x[j];
        }
        xr[i] += x[i] * reward;
    }
}

fn solve_spd<T: Real>(a: &[T], d: usize, b: &[T]) -> Result<Vec<T>> {
    let l = linalg::cholesky(a, d).ok_or(Error::NotPositiveDefinite { item: 0 })?;
    Ok(linalg::cholesky_solve(&l, d, b))
}

/// Incremental per-item ridge state.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeEstimate<T> {
    nu: T,
    items: usize,
    dim: usize,
    include_exploit: bool,
    gram: Vec<T>,
    xr: Vec<T>,
    theta: Vec<T>,
}

impl<T: Real> RidgeEstimate<T> {
    pub fn new(items: usize, dim: usize, nu: T, include_exploit: bool) -> Result<Self> {
        if !(nu > T::zero()) {
            return Err(invalid("ridge regularizer must be > 0"));
        }
        let mut gram = Vec::with_capacity(items * dim * dim);
        for _ in 0..items {
            gram.extend(linalg::identity::<T>(dim).into_iter().map(|v| v * nu));
        }
        Ok(Self {
            nu,
            items,
            dim,
            include_exploit,
            gram,
            xr: vec![T::zero(); items * dim],
            theta: vec![T::zero(); items * dim],
        })
    }

    pub fn nu(&self) -> T {
        self.nu
    }

    /// Adds a period's records and refits the touched items.
    pub fn observe(&mut self, batch: &[InteractionRecord<T>]) -> Result<()> {
        let (d, k) = (self.dim, self.items);
        let mut touched = vec![false; k];
        for r in batch.iter().filter(|r| r.explored || self.include_exploit) {
            if r.action >= k {
                return Err(Error::ItemOutOfRange {
                    index: r.action,
                    items: k,
                });
            }
            if r.x.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: r.x.len(),
                });
            }
            let a = r.action;
            let (g, xr) = (
                &mut self.gram[a * d * d..(a + 1) * d * d],
                &mut self.xr[a * d..(a + 1) * d],
            );
            accumulate(g, xr, &r.x, r.reward);
            touched[a] = true;
        }
        for a in (0..k).filter(|a| touched[*a]) {
            let th = solve_spd(
                &self.gram[a * d * d..(a + 1) * d * d],
                d,
                &self.xr[a * d..(a + 1) * d],
            )?;
            self.theta[a * d..(a + 1) * d].copy_from_slice(&th);
        }
        Ok(())
    }

    pub fn coefficients(&self, a: usize) -> &[T] {
        &self.theta[a * self.dim..(a + 1) * self.dim]
    }

    pub fn as_flat(&self) -> &[T] {
        &self.theta
    }

    pub fn greedy(&self, x: &[T]) -> usize {
        greedy_action(x, &self.theta, self.dim)
    }
}

/// Argmax of `x^T theta_a` over a flat `[a][j]` layout, ties to the lowest index.
pub fn greedy_action<T: Real>(x: &[T], theta: &[T], dim: usize) -> usize {
    let scores: Vec<T> = theta.chunks(dim).map(|th| dot(x, th)).collect();
    argmax(&scores).unwrap_or(0)
}

/// Uniform exploration with probability `eps`, otherwise greedy on `theta`.
/// Returns `(action, explored)`.
pub fn uniform_policy_assign<T: Real, R: Rng + ?Sized>(
    x: &[T],
    eps: T,
    theta: &[T],
    dim: usize,
    rng: &mut R,
) -> (usize, bool) {
    let items = theta.len() / dim;
    if rng.random_bool(eps.as_f64().clamp(0.0, 1.0)) {
        (rng.random_range(0..items), true)
    } else {
        (greedy_action(x, theta, dim), false)
    }
}

/// ETC rate for the current period: the remaining budget spread over `n_t`.
pub fn etc_rate<T: Real>(budget: T, explored_so_far: T, n_t: T) -> T {
    if n_t <= T::zero() {
        return T::zero();
    }
    ((budget - explored_so_far) / n_t)
        .max(T::zero())
        .min(T::one())
}

/// `B = c d^{1/3} N^{2/3}`.
pub fn theory_etc_budget<T: Real>(c: T, d: usize, n: usize) -> T {
    let third = T::one() / T::of(3.0);
    c * T::of_usize(d).powf(third) * T::of_usize(n).powf(T::of(2.0) * third)
}

/// Strategy selection addressable by name from configuration files.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StrategyKind {
    EpsGreedy { eps: f64 },
    TheoryEtc { c: f64 },
    SimpleEtc,
    Planner,
    Mpc,
    BatchedTs,
}

impl StrategyKind {
    pub const NAMES: [&'static str; 6] = [
        "eps_greedy",
        "theory_etc",
        "simple_etc",
        "planner",
        "mpc",
        "batched_ts",
    ];

    /// `param` is the constant for `eps_greedy` and `theory_etc`.
    pub fn from_name(name: &str, param: Option<f64>) -> Result<Self> {
        let need =
            |p: Option<f64>| p.ok_or_else(|| invalid(format!("strategy {name} needs a parameter")));
        let kind = match name {
            "eps_greedy" => Self::EpsGreedy { eps: need(param)? },
            "theory_etc" => Self::TheoryEtc { c: need(param)? },
            "simple_etc" => Self::SimpleEtc,
            "planner" => Self::Planner,
            "mpc" => Self::Mpc,
            "batched_ts" => Self::BatchedTs,
            other => return Err(invalid(format!("unknown strategy {other:?}"))),
        };
        kind.validate()?;
        Ok(kind)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::EpsGreedy { eps } if !(0.0..=1.0).contains(&eps) => {
                Err(invalid(format!("eps_greedy rate {eps} outside [0, 1]")))
            }
            Self::TheoryEtc { c } if !(c > 0.0 && c.is_finite()) => {
                Err(invalid(format!("theory_etc constant {c} must be > 0")))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::EpsGreedy { .. } => "eps_greedy",
            Self::TheoryEtc { .. } => "theory_etc",
            Self::SimpleEtc => "simple_etc",
            Self::Planner => "planner",
            Self::Mpc => "mpc",
            Self::BatchedTs => "batched_ts",
        }
    }

    pub fn parameter(&self) -> Option<f64> {
        match *self {
            Self::EpsGreedy { eps } => Some(eps),
            Self::TheoryEtc { c } => Some(c),
            _ => None,
        }
    }

    /// Strategies whose rates come from the schedule optimizer.
    pub fn is_optimized(&self) -> bool {
        matches!(self, Self::Planner | Self::Mpc)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.parameter() {
            Some(p) => write!(f, "{}({p})", self.name()),
            None => f.write_str(self.name()),
        }
    }
}

/// Settings for schedule solves made by the Planner and MPC.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanningConfig {
    /// Users drawn from the pool to form the objective's expectation.
    pub user_sample: usize,
    pub paths: usize,
    pub sqrt_floor: f64,
    pub solver: SolverConfig<f64>,
}

impl Default for PlanningConfig {
    fn default() -> Self {
        Self {
            user_sample: 200,
            paths: 1,
            sqrt_floor: DEFAULT_SQRT_FLOOR,
            solver: SolverConfig::default(),
        }
    }
}

/// Everything a strategy needs besides its kind.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySetup {
    pub items: usize,
    pub dim: usize,
    pub noise_std: f64,
    pub prior_mean: Vec<f64>,
    pub prior_variance: f64,
    pub ridge_nu: f64,
    pub include_exploit: bool,
    /// Lower bound on every deployed rate.
    pub min_rate: f64,
    pub planning: PlanningConfig,
    /// Seed for the strategy's own randomness (Thompson draws).
    pub seed: u64,
}

impl PolicySetup {
    pub fn new(items: usize, dim: usize) -> Self {
        Self {
            items,
            dim,
            noise_std: 1.0,
            prior_mean: vec![0.0; dim],
            prior_variance: 1.0,
            ridge_nu: 1.0,
            include_exploit: false,
            min_rate: 0.0,
            planning: PlanningConfig::default(),
            seed: 0,
        }
    }

    fn bounds(&self) -> Result<RateBox<f64>> {
        RateBox::new(self.min_rate, 1.0)
    }

    fn prior(&self, mode: CovarianceMode) -> Result<GaussianPosterior<f64>> {
        make_prior(
            self.items,
            self.dim,
            &self.prior_mean,
            &PriorVariance::Scalar(self.prior_variance),
            mode,
        )
    }
}

/// What the environment tells a strategy at the start of a period.
#[derive(Debug, Clone, Copy)]
pub struct PeriodContext<'a> {
    /// 1-based period index.
    pub period: usize,
    pub horizon: usize,
    /// Realized arrivals this period.
    pub batch_size: usize,
    /// Forecast arrivals for every period of the horizon.
    pub forecasts: &'a [f64],
    /// Total expected arrivals `N`.
    pub scale: usize,
    pub pool: &'a [UserEmbedding<f64>],
}

#[derive(Debug, Clone, PartialEq)]
enum Exploit {
    Ridge,
    Sample(Vec<f64>),
}

/// A strategy instance: per-replication mutable state advanced period by period.
#[derive(Debug, Clone)]
pub struct Policy {
    kind: StrategyKind,
    setup: PolicySetup,
    bounds: RateBox<f64>,
    ridge: RidgeEstimate<f64>,
    posterior: Option<GaussianPosterior<f64>>,
    trail: Vec<GaussianPosterior<f64>>,
    plan: Vec<f64>,
    user_sample: Vec<Vec<f64>>,
    explored_mass: f64,
    budget: Option<f64>,
    rate: Option<f64>,
    exploit: Exploit,
    rates: Vec<Option<f64>>,
    solves: Vec<(usize, Vec<TraceRow<f64>>)>,
    faults: Vec<String>,
}

impl Policy {
    pub fn new(kind: StrategyKind, setup: PolicySetup) -> Result<Self> {
        kind.validate()?;
        if setup.items == 0 || setup.dim == 0 {
            return Err(invalid("items and dim must be >= 1"));
        }
        if !(setup.noise_std > 0.0) {
            return Err(invalid("noise_std must be > 0"));
        }
        let bounds = setup.bounds()?;
        let ridge = RidgeEstimate::new(
            setup.items,
            setup.dim,
            setup.ridge_nu,
            setup.include_exploit,
        )?;
        let posterior = match kind {
            StrategyKind::Mpc | StrategyKind::BatchedTs => Some(setup.prior(CovarianceMode::Full)?),
            _ => None,
        };
        Ok(Self {
            kind,
            setup,
            bounds,
            ridge,
            posterior,
            trail: Vec::new(),
            plan: Vec::new(),
            user_sample: Vec::new(),
            explored_mass: 0.0,
            budget: None,
            rate: None,
            exploit: Exploit::Ridge,
            rates: Vec::new(),
            solves: Vec::new(),
            faults: Vec::new(),
        })
    }

    pub fn kind(&self) -> StrategyKind {
        self.kind
    }

    /// Rate deployed in each completed or current period (`None` for Thompson sampling).
    pub fn rates(&self) -> &[Option<f64>] {
        &self.rates
    }

    pub fn current_rate(&self) -> Option<f64> {
        self.rate
    }

    /// Solver traces keyed by the period the solve was made in.
    pub fn solves(&self) -> &[(usize, Vec<TraceRow<f64>>)] {
        &self.solves
    }

    pub fn faults(&self) -> &[String] {
        &self.faults
    }

    /// Posteriors after each period's update (MPC and Thompson sampling).
    pub fn posterior_trail(&self) -> &[GaussianPosterior<f64>] {
        &self.trail
    }

    pub fn posterior(&self) -> Option<&GaussianPosterior<f64>> {
        self.posterior.as_ref()
    }

    pub fn ridge(&self) -> &RidgeEstimate<f64> {
        &self.ridge
    }

    /// The remaining open-loop plan (Planner) or latest solution (MPC).
    pub fn plan(&self) -> &[f64] {
        &self.plan
    }

    fn sample_users(&mut self, pool: &[UserEmbedding<f64>]) -> Result<()> {
        if !self.user_sample.is_empty() {
            return Ok(());
        }
        if pool.is_empty() {
            return Err(invalid("planning needs a non-empty user pool"));
        }
        let mut rng = stream(self.setup.planning.solver.seed, &[purpose::USER_SAMPLE]);
        self.user_sample = (0..self.setup.planning.user_sample.max(1))
            .map(|_| pool[rng.random_range(0..pool.len())].as_slice().to_vec())
            .collect();
        Ok(())
    }

    fn solve(
        &mut self,
        post: &GaussianPosterior<f64>,
        forecasts: &[f64],
        seed: u64,
        init: SolverInit<f64>,
        period: usize,
    ) -> Result<Vec<f64>> {
        let planning = &self.setup.planning;
        let design = population_design(
            &self.user_sample,
            self.setup.items,
            self.setup.noise_std,
            CovarianceMode::Diagonal,
        )?;
        let cfg = ObjectiveConfig {
            user_sample: self.user_sample.clone(),
            batch_sizes: forecasts.to_vec(),
            design,
            paths: planning.paths,
            sqrt_floor: planning.sqrt_floor,
            seed,
        };
        let solver = SolverConfig {
            bounds: self.bounds,
            init,
            seed,
            ..planning.solver.clone()
        };
        let sol = sgd_solve(post, &cfg, &solver)?;
        if solver.record_trace {
            self.solves.push((period, sol.trace));
        }
        Ok(sol.schedule.rates)
    }

    /// Fixes this period's rate (or Thompson draw). Must be called before
    /// any assignment in the period.
    pub fn begin_period(&mut self, ctx: &PeriodContext<'_>) -> Result<Option<f64>> {
        if ctx.period == 0 || ctx.period > ctx.horizon || ctx.forecasts.len() != ctx.horizon {
            return Err(invalid(format!(
                "period {} with horizon {} and {} forecasts",
                ctx.period,
                ctx.horizon,
                ctx.forecasts.len()
            )));
        }
        let n_t = ctx.batch_size as f64;
        let rate = match self.kind {
            StrategyKind::EpsGreedy { eps } => Some(eps),
            StrategyKind::TheoryEtc { c } => {
                let b = *self
                    .budget
                    .get_or_insert_with(|| theory_etc_budget(c, self.setup.dim, ctx.scale));
                Some(etc_rate(b, self.explored_mass, n_t))
            }
            StrategyKind::SimpleEtc => {
                let b = *self.budget.get_or_insert(n_t);
                Some(etc_rate(b, self.explored_mass, n_t))
            }
            StrategyKind::Planner => {
                if self.plan.is_empty() {
                    self.sample_users(ctx.pool)?;
                    let prior = self.setup.prior(CovarianceMode::Diagonal)?;
                    let seed = self.setup.planning.solver.seed;
                    let init = self.setup.planning.solver.init.clone();
                    self.plan = self.solve(&prior, ctx.forecasts, seed, init, 1)?;
                }
                Some(self.plan[ctx.period - 1])
            }
            StrategyKind::Mpc => Some(self.mpc_rate(ctx)?),
            StrategyKind::BatchedTs => {
                let post = self
                    .posterior
                    .as_ref()
                    .expect("thompson sampling keeps a posterior");
                let mut rng = stream(self.setup.seed, &[ctx.period as u64, purpose::POLICY]);
                let (k, d) = (post.items(), post.dim());
                let mut theta = Vec::with_capacity(k * d);
                for a in 0..k {
                    let l = linalg::cholesky(&post.covariance(a)?, d)
                        .ok_or(Error::NotPositiveDefinite { item: a })?;
                    let z: Vec<f64> = (0..d).map(|_| std_normal(&mut rng)).collect();
                    let shift = linalg::lower_mat_vec(&l, d, &z);
                    theta.extend(post.mean(a).iter().zip(shift).map(|(m, s)| m + s));
                }
                self.exploit = Exploit::Sample(theta);
                None
            }
        };
        let rate = rate.map(|r| self.bounds.clamp(r));
        if let StrategyKind::EpsGreedy { .. }
        | StrategyKind::TheoryEtc { .. }
        | StrategyKind::SimpleEtc = self.kind
        {
            self.explored_mass += rate.unwrap_or(0.0) * n_t;
        }
        self.rate = rate;
        self.rates.push(rate);
        Ok(rate)
    }

    fn mpc_rate(&mut self, ctx: &PeriodContext<'_>) -> Result<f64> {
        if ctx.period == ctx.horizon {
            // One period left: the objective is affine in the rate with a
            // nonnegative slope, so the lower bound is optimal.
            self.plan = vec![self.bounds.lower];
            return Ok(self.bounds.lower);
        }
        self.sample_users(ctx.pool)?;
        let base = self.setup.planning.solver.seed;
        let seed = if ctx.period == 1 {
            base
        } else {
            derive_seed(base, &[ctx.period as u64])
        };
        let remaining = &ctx.forecasts[ctx.period - 1..];
        let init = if self.plan.len() >= 2 {
            let mut w = self.plan[1..].to_vec();
            w.push(*self.plan.last().expect("non-empty plan"));
            w.truncate(remaining.len());
            SolverInit::WarmStart(w)
        } else {
            self.setup.planning.solver.init.clone()
        };
        let post = self
            .posterior
            .as_ref()
            .expect("mpc keeps a posterior")
            .to_diagonal()?;
        match self.solve(&post, remaining, seed, init, ctx.period) {
            Ok(plan) => {
                self.plan = plan;
                Ok(self.plan[0])
            }
            Err(e) => {
                let fallback = self.plan.get(1).copied().unwrap_or(self.bounds.lower);
                self.faults.push(format!(
                    "period {}: solver failed ({e}); using rate {fallback}",
                    ctx.period
                ));
                self.plan = if self.plan.len() >= 2 {
                    self.plan[1..].to_vec()
                } else {
                    vec![fallback]
                };
                Ok(fallback)
            }
        }
    }

    /// Action for user `x`. Takes `&self`: nothing learned within a period.
    pub fn assign<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> (usize, bool) {
        match &self.exploit {
            Exploit::Sample(theta) => (greedy_action(x, theta, self.setup.dim), false),
            Exploit::Ridge => uniform_policy_assign(
                x,
                self.rate.unwrap_or(0.0),
                self.ridge.as_flat(),
                self.setup.dim,
                rng,
            ),
        }
    }

    /// Probability of each action for user `x` under the current period's policy.
    pub fn action_distribution(&self, x: &[f64]) -> Vec<f64> {
        let k = self.setup.items;
        let (eps, greedy) = match &self.exploit {
            Exploit::Sample(theta) => (0.0, greedy_action(x, theta, self.setup.dim)),
            Exploit::Ridge => (self.rate.unwrap_or(0.0), self.ridge.greedy(x)),
        };
        let mut p = vec![eps / k as f64; k];
        p[greedy] += 1.0 - eps;
        p
    }

    /// Batched feedback: learn from the whole period at once.
    pub fn end_period(&mut self, batch: &[InteractionRecord<f64>]) -> Result<()> {
        match self.kind {
            StrategyKind::BatchedTs => {
                let post = self
                    .posterior
                    .as_ref()
                    .expect("thompson sampling keeps a posterior");
                let next = post.update_all(batch, self.setup.noise_std)?;
                self.trail.push(next.clone());
                self.posterior = Some(next);
            }
            StrategyKind::Mpc => {
                self.ridge.observe(batch)?;
                let post = self.posterior.as_ref().expect("mpc keeps a posterior");
                let next = post.update(batch, self.setup.noise_std)?;
                self.trail.push(next.clone());
                self.posterior = Some(next);
            }
            _ => self.ridge.observe(batch)?,
        }
        Ok(())
    }

    /// Hash of everything that determines assignments in the current period.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.ridge
            .as_flat()
            .iter()
            .for_each(|v| h.write_u64(v.to_bits()));
        if let Exploit::Sample(theta) = &self.exploit {
            theta.iter().for_each(|v| h.write_u64(v.to_bits()));
        }
        h.write_u64(self.rate.map_or(u64::MAX, f64::to_bits));
        h.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::InteractionRecord;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rec(x: &[f64], a: usize, r: f64, explored: bool) -> InteractionRecord<f64> {
        InteractionRecord {
            user: 0,
            x: x.to_vec(),
            action: a,
            reward: r,
            explored,
        }
    }

    #[test]
    fn ridge_examples() {
        let empty: Vec<InteractionRecord<f64>> = Vec::new();
        assert_eq!(ridge_fit(&empty, 0, 1.0, 3).unwrap(), vec![0.0; 3]);
        let one = ridge_fit(&[rec(&[1.0, 0.0, 0.0], 0, 2.0, true)], 0, 1.0, 3).unwrap();
        assert!((one[0] - 1.0).abs() < 1e-12 && one[1] == 0.0 && one[2] == 0.0);
        assert!(ridge_fit(&empty, 0, 0.0, 3).is_err());
    }

    #[test]
    fn ridge_tends_to_least_squares() {
        // rows (1,0), (0,1), (1,1) with rewards (1, 2, 4): normal equations
        // [[2,1],[1,2]] theta = (5, 6) give theta = (4/3, 7/3).
        let rows = [
            rec(&[1.0, 0.0], 0, 1.0, true),
            rec(&[0.0, 1.0], 0, 2.0, true),
            rec(&[1.0, 1.0], 0, 4.0, true),
        ];
        let th = ridge_fit(&rows, 0, 1e-10, 2).unwrap();
        assert!(
            (th[0] - 4.0 / 3.0).abs() < 1e-8 && (th[1] - 7.0 / 3.0).abs() < 1e-8,
            "{th:?}"
        );
    }

    #[test]
    fn incremental_ridge_matches_batch_fit() {
        let rows = vec![
            rec(&[1.0, 0.5], 1, 0.3, true),
            rec(&[-0.2, 1.0], 1, -1.0, true),
            rec(&[0.7, 0.7], 0, 2.0, true),
            rec(&[0.7, 0.7], 1, 9.0, false),
        ];
        let mut est = RidgeEstimate::new(2, 2, 1.0, false).unwrap();
        est.observe(&rows[..2]).unwrap();
        est.observe(&rows[2..]).unwrap();
        for a in 0..2 {
            let want = ridge_fit(&rows, a, 1.0, 2).unwrap();
            for (x, y) in est.coefficients(a).iter().zip(&want) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn exploit_rows_only_with_flag() {
        let explore = vec![rec(&[1.0, 0.0], 0, 1.0, true)];
        let mut with_exploit = explore.clone();
        with_exploit.push(rec(&[0.0, 1.0], 0, 5.0, false));
        assert_eq!(
            ridge_fit(&explore, 0, 1.0, 2).unwrap(),
            ridge_fit(&with_exploit, 0, 1.0, 2).unwrap()
        );
        let mut a = RidgeEstimate::new(1, 2, 1.0, false).unwrap();
        a.observe(&with_exploit).unwrap();
        let mut b = RidgeEstimate::new(1, 2, 1.0, true).unwrap();
        b.observe(&with_exploit).unwrap();
        assert_ne!(a.coefficients(0), b.coefficients(0));
    }

    #[test]
    fn uniform_policy_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let theta = vec![0.0; 6];
        for _ in 0..100 {
            assert_eq!(
                uniform_policy_assign(&[1.0, 2.0], 0.0, &theta, 2, &mut rng),
                (0, false)
            );
        }
        let draws = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..draws {
            let (a, xi) = uniform_policy_assign(&[1.0, 2.0], 1.0, &theta, 2, &mut rng);
            assert!(xi);
            counts[a] += 1;
        }
        let p = 1.0 / 3.0;
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        for c in counts {
            assert!((c as f64 / draws as f64 - p).abs() < 3.0 * se, "{counts:?}");
        }
    }

    #[test]
    fn etc_examples() {
        assert_eq!(etc_rate(150.0, 0.0, 100.0), 1.0);
        assert_eq!(etc_rate(150.0, 100.0, 100.0), 0.5);
        assert_eq!(etc_rate(0.0, 0.0, 100.0), 0.0);
        assert_eq!(etc_rate(500.0, 0.0, 100.0), 1.0);
        assert_eq!(etc_rate(500.0, 100.0, 100.0), 1.0);
        assert_eq!(etc_rate(10.0, 0.0, 0.0), 0.0);
    }

    #[test]
    fn budget_examples() {
        assert!((theory_etc_budget(0.1f64, 8, 1000) - 20.0).abs() < 1e-9);
        assert!((theory_etc_budget(1.0, 1, 1) - 1.0f64).abs() < 1e-12);
        // reference value from a 50-digit evaluation
        assert!((theory_etc_budget(0.5f64, 128, 5000) - 736.806_299_728_077_3).abs() < 1e-9);
    }

    #[test]
    fn strategy_names_round_trip() {
        for name in StrategyKind::NAMES {
            let k = StrategyKind::from_name(name, Some(0.5)).unwrap();
            assert_eq!(k.name(), name);
        }
        assert!(StrategyKind::from_name("ucb", None).is_err());
        assert!(StrategyKind::from_name("eps_greedy", None).is_err());
        assert!(StrategyKind::from_name("eps_greedy", Some(1.5)).is_err());
        assert!(StrategyKind::from_name("theory_etc", Some(0.0)).is_err());
    }

    fn pool() -> Vec<UserEmbedding<f64>> {
        vec![
            UserEmbedding::new(vec![1.0, 0.0], None).unwrap(),
            UserEmbedding::new(vec![0.0, 1.0], None).unwrap(),
        ]
    }

    fn ctx<'a>(
        period: usize,
        n: usize,
        forecasts: &'a [f64],
        pool: &'a [UserEmbedding<f64>],
    ) -> PeriodContext<'a> {
        PeriodContext {
            period,
            horizon: forecasts.len(),
            batch_size: n,
            forecasts,
            scale: forecasts.iter().sum::<f64>() as usize,
            pool,
        }
    }

    #[test]
    fn simple_etc_uses_first_batch_as_budget() {
        let p = pool();
        let f = [100.0, 100.0, 100.0];
        let mut pol = Policy::new(StrategyKind::SimpleEtc, PolicySetup::new(2, 2)).unwrap();
        let sizes = [80usize, 120, 90];
        let mut explored = 0.0;
        for (t, n) in sizes.iter().enumerate() {
            let r = pol.begin_period(&ctx(t + 1, *n, &f, &p)).unwrap().unwrap();
            assert_eq!(r, etc_rate(80.0, explored, *n as f64));
            explored += r * *n as f64;
            pol.end_period(&[]).unwrap();
        }
        assert_eq!(pol.rates(), &[Some(1.0), Some(0.0), Some(0.0)]);
    }

    #[test]
    fn single_period_mpc_deploys_lower_bound() {
        let p = pool();
        let f = [100.0];
        let mut setup = PolicySetup::new(2, 2);
        setup.min_rate = 0.05;
        setup.planning.solver.steps = 50;
        let mut pol = Policy::new(StrategyKind::Mpc, setup).unwrap();
        let r = pol.begin_period(&ctx(1, 100, &f, &p)).unwrap().unwrap();
        assert!((r - 0.05).abs() < 1e-12, "{r}");
    }

    #[test]
    fn mpc_first_rate_equals_planner() {
        let p = pool();
        let f = [20.0, 200.0, 200.0];
        let mut setup = PolicySetup::new(3, 2);
        setup.planning.solver.steps = 60;
        setup.planning.solver.seed = 9;
        let mut planner = Policy::new(StrategyKind::Planner, setup.clone()).unwrap();
        let mut mpc = Policy::new(StrategyKind::Mpc, setup).unwrap();
        let a = planner.begin_period(&ctx(1, 20, &f, &p)).unwrap();
        let b = mpc.begin_period(&ctx(1, 20, &f, &p)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_period_leaves_mpc_posterior_unchanged() {
        let p = pool();
        let f = [50.0, 50.0, 50.0];
        let mut setup = PolicySetup::new(2, 2);
        setup.planning.solver.steps = 10;
        let mut mpc = Policy::new(StrategyKind::Mpc, setup).unwrap();
        let before = mpc.posterior().unwrap().clone();
        mpc.begin_period(&ctx(1, 0, &f, &p)).unwrap();
        mpc.end_period(&[]).unwrap();
        let after = mpc.posterior().unwrap();
        assert_eq!(after.mean(0), before.mean(0));
        assert_eq!(after.precision(1), before.precision(1));
        mpc.begin_period(&ctx(2, 50, &f, &p)).unwrap();
        assert_eq!(mpc.plan().len(), 2);
    }

    #[test]
    fn thompson_symmetric_items_split_evenly() {
        let p = vec![UserEmbedding::new(vec![1.0], None).unwrap()];
        let f = [1.0];
        let draws = 10_000;
        let mut first = 0usize;
        for rep in 0..draws {
            let mut setup = PolicySetup::new(2, 1);
            setup.seed = rep as u64;
            let mut pol = Policy::new(StrategyKind::BatchedTs, setup).unwrap();
            pol.begin_period(&ctx(1, 1, &f, &p)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            if pol.assign(&[1.0], &mut rng).0 == 0 {
                first += 1;
            }
        }
        let se = (0.25 / draws as f64).sqrt();
        assert!((first as f64 / draws as f64 - 0.5).abs() < 3.0 * se);
    }

    #[test]
    fn thompson_single_item_always_plays_it() {
        let p = pool();
        let f = [1.0];
        let mut pol = Policy::new(StrategyKind::BatchedTs, PolicySetup::new(1, 2)).unwrap();
        pol.begin_period(&ctx(1, 1, &f, &p)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(pol.assign(&[0.3, -2.0], &mut rng).0, 0);
    }

    proptest! {
        #[test]
        fn greedy_invariant_to_positive_rescaling(
            theta in prop::collection::vec(-3.0f64..3.0, 6),
            x in prop::collection::vec(-1.0f64..1.0, 2),
            c in 0.01f64..100.0,
        ) {
            let scaled: Vec<f64> = theta.iter().map(|v| v * c).collect();
            prop_assert_eq!(greedy_action(&x, &theta, 2), greedy_action(&x, &scaled, 2));
        }

        #[test]
        fn etc_rate_in_unit_interval(b in 0.0f64..1e4, used in 0.0f64..1e4, n in 0.0f64..1e3) {
            let r = etc_rate(b, used, n);
            prop_assert!((0.0..=1.0).contains(&r));
        }
    }
}
