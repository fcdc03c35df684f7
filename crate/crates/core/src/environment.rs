//! Simulated batched bandit world: instances, arrivals, the period loop and
//! regret accounting.

use std::io::{self, Write};

use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma};

use crate::error::{invalid, Error, Result};
use crate::model::{
    per_user_regret, sample_reward, BanditInstance, InteractionRecord, ItemEmbeddings,
    UserEmbedding,
};
use crate::policies::{PeriodContext, Policy};
use crate::posterior::PriorVariance;
use crate::rng::{purpose, std_normal, stream};

/// Floor applied to zero fractions before forming Dirichlet parameters.
pub const DIRICHLET_FLOOR: f64 = 1e-6;

/// Default squared-norm bound on user embeddings.
pub const DEFAULT_NORM_BOUND: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ArrivalPattern {
    Increasing,
    Spike,
    Constant,
}

impl ArrivalPattern {
    pub const ALL: [ArrivalPattern; 3] = [Self::Increasing, Self::Spike, Self::Constant];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Increasing => "Increasing",
            Self::Spike => "Spike",
            Self::Constant => "Constant",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(name))
            .ok_or_else(|| invalid(format!("unknown arrival pattern {name:?}")))
    }

    pub fn fractions(&self) -> Vec<f64> {
        match self {
            Self::Increasing => vec![0.02, 0.18, 0.20, 0.20, 0.20, 0.20],
            Self::Spike => vec![0.05, 0.35, 0.20, 0.20, 0.20],
            Self::Constant => vec![0.1; 10],
        }
    }
}

/// Arrival fractions for a named pattern.
pub fn arrival_pattern(name: &str) -> Result<Vec<f64>> {
    Ok(ArrivalPattern::from_name(name)?.fractions())
}

pub fn validate_fractions(fractions: &[f64]) -> Result<()> {
    if fractions.is_empty() {
        return Err(invalid("need at least one period"));
    }
    if fractions.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
        return Err(invalid("arrival fractions must be finite and >= 0"));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("arrival fractions sum to {total}, not 1")));
    }
    Ok(())
}

/// Independent `Binomial(N, lambda_t)` arrivals.
pub fn sample_batch_sizes<R: Rng + ?Sized>(
    n: u64,
    fractions: &[f64],
    rng: &mut R,
) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(invalid("N must be >= 1"));
    }
    fractions
        .iter()
        .map(|l| {
            let b = Binomial::new(n, l.clamp(0.0, 1.0))
                .map_err(|e| invalid(format!("binomial({n}, {l}): {e}")))?;
            Ok(b.sample(rng) as usize)
        })
        .collect()
}

/// Dirichlet draw with parameters `concentration * max(lambda, floor)`,
/// built from normalized Gamma variates.
pub fn noisy_forecast<R: Rng + ?Sized>(
    fractions: &[f64],
    concentration: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(concentration > 0.0) || !concentration.is_finite() {
        return Err(invalid("forecast concentration must be > 0"));
    }
    if fractions.len() == 1 {
        return Ok(vec![1.0]);
    }
    let draws = fractions
        .iter()
        .map(|l| {
            let g = Gamma::new(concentration * l.max(DIRICHLET_FLOOR), 1.0)
                .map_err(|e| invalid(format!("gamma: {e}")))?;
            Ok(g.sample(rng))
        })
        .collect::<Result<Vec<f64>>>()?;
    let total: f64 = draws.iter().sum();
    if !(total > 0.0) {
        // every Gamma underflowed; fall back to the mean
        return Ok(fractions.to_vec());
    }
    Ok(draws.into_iter().map(|g| g / total).collect())
}

/// Draws item embeddings from `N(mean, var)` and `pool_size` users from
/// `N(0, I/d)` conditioned on `|x|^2 <= norm_bound`.
#[allow(clippy::too_many_arguments)]
pub fn synth_instance<R: Rng + ?Sized>(
    items: usize,
    dim: usize,
    pool_size: usize,
    prior_mean: &[f64],
    prior_variance: &PriorVariance<f64>,
    norm_bound: f64,
    noise_std: f64,
    rng: &mut R,
) -> Result<BanditInstance<f64>> {
    if items == 0 || dim == 0 || pool_size == 0 {
        return Err(invalid("items, dim and pool size must be >= 1"));
    }
    if prior_mean.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: prior_mean.len(),
        });
    }
    let sd: Vec<f64> = match prior_variance {
        PriorVariance::Scalar(v) => vec![v.sqrt(); dim],
        PriorVariance::PerCoordinate(v) if v.len() == dim => v.iter().map(|x| x.sqrt()).collect(),
        PriorVariance::PerCoordinate(v) => {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: v.len(),
            })
        }
    };
    if sd.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(invalid("prior variances must be finite and > 0"));
    }
    if !(norm_bound > 0.0) {
        return Err(invalid("norm bound must be > 0"));
    }
    let theta: Vec<f64> = (0..items * dim)
        .map(|i| prior_mean[i % dim] + sd[i % dim] * std_normal::<f64, _>(rng))
        .collect();
    let scale = (dim as f64).sqrt().recip();
    let mut users = Vec::with_capacity(pool_size);
    while users.len() < pool_size {
        let x: Vec<f64> = (0..dim)
            .map(|_| scale * std_normal::<f64, _>(rng))
            .collect();
        if x.iter().map(|v| v * v).sum::<f64>() <= norm_bound {
            users.push(UserEmbedding::new(x, Some(norm_bound))?);
        }
    }
    BanditInstance::new(
        ItemEmbeddings::from_flat(items, dim, theta)?,
        users,
        noise_std,
    )
}

/// Arrival plan for one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchPlan {
    pub scale: usize,
    pub fractions: Vec<f64>,
    /// Realized arrivals.
    pub sizes: Vec<usize>,
    /// Forecast arrivals the strategies plan against.
    pub forecasts: Vec<f64>,
}

impl BatchPlan {
    /// Samples realized sizes, and a Dirichlet forecast when `concentration`
    /// is given (otherwise the forecast is exact: `N * lambda`).
    pub fn sample(
        scale: usize,
        fractions: &[f64],
        concentration: Option<f64>,
        seed: u64,
    ) -> Result<Self> {
        validate_fractions(fractions)?;
        let sizes = sample_batch_sizes(
            scale as u64,
            fractions,
            &mut stream(seed, &[purpose::BATCH_SIZES]),
        )?;
        let lambda = match concentration {
            Some(c) => noisy_forecast(fractions, c, &mut stream(seed, &[purpose::FORECAST]))?,
            None => fractions.to_vec(),
        };
        Ok(Self {
            scale,
            fractions: fractions.to_vec(),
            sizes,
            forecasts: lambda.iter().map(|l| l * scale as f64).collect(),
        })
    }

    /// A plan with given realized sizes and exact forecasts.
    pub fn fixed(sizes: Vec<usize>) -> Result<Self> {
        let scale: usize = sizes.iter().sum();
        if sizes.is_empty() {
            return Err(invalid("need at least one period"));
        }
        let denom = scale.max(1) as f64;
        Ok(Self {
            scale,
            fractions: sizes.iter().map(|n| *n as f64 / denom).collect(),
            forecasts: sizes.iter().map(|n| *n as f64).collect(),
            sizes,
        })
    }

    pub fn horizon(&self) -> usize {
        self.sizes.len()
    }

    fn validate(&self) -> Result<()> {
        let h = self.sizes.len();
        if h == 0 || self.forecasts.len() != h || self.fractions.len() != h {
            return Err(invalid(format!(
                "plan horizon mismatch: {} sizes, {} forecasts, {} fractions",
                h,
                self.forecasts.len(),
                self.fractions.len()
            )));
        }
        Ok(())
    }
}

/// One simulated episode.
#[derive(Debug, Clone)]
pub struct Episode {
    pub records: Vec<InteractionRecord<f64>>,
    /// Expected regret of each record's assignment, aligned with `records`.
    pub user_regret: Vec<f64>,
    pub period_of: Vec<usize>,
    /// Total regret per period.
    pub period_regret: Vec<f64>,
    pub sizes: Vec<usize>,
    pub rates: Vec<Option<f64>>,
    /// Estimator fingerprint before and after each period's assignments.
    pub fingerprints: Vec<(u64, u64)>,
}

impl Episode {
    pub fn cumulative_regret(&self) -> f64 {
        self.period_regret.iter().sum()
    }

    /// Cumulative regret per arriving user (0 for an episode with no arrivals).
    pub fn average_regret(&self) -> f64 {
        let users: usize = self.sizes.iter().sum();
        if users == 0 {
            0.0
        } else {
            self.cumulative_regret() / users as f64
        }
    }

    /// CSV interaction log with 1-based periods and a running regret column.
    pub fn write_log<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "period,user,action,reward,explored,running_regret")?;
        let mut running = 0.0;
        for ((r, reg), t) in self
            .records
            .iter()
            .zip(&self.user_regret)
            .zip(&self.period_of)
        {
            running += reg;
            writeln!(
                out,
                "{t},{},{},{},{},{running}",
                r.user,
                r.action,
                r.reward,
                u8::from(r.explored)
            )?;
        }
        Ok(())
    }
}

/// Runs the batched interaction loop. Users, rewards and policy randomness
/// come from separate streams keyed by `(seed, period, purpose)`, so two
/// strategies run on the same seed see the same arrivals.
pub fn run_episode(
    instance: &BanditInstance<f64>,
    policy: &mut Policy,
    plan: &BatchPlan,
    seed: u64,
) -> Result<Episode> {
    plan.validate()?;
    if !policy.rates().is_empty() {
        return Err(invalid(
            "policy has already been advanced; use a fresh instance per episode",
        ));
    }
    let horizon = plan.horizon();
    let pool = &instance.user_pool;
    let mut ep = Episode {
        records: Vec::with_capacity(plan.sizes.iter().sum()),
        user_regret: Vec::new(),
        period_of: Vec::new(),
        period_regret: Vec::with_capacity(horizon),
        sizes: plan.sizes.clone(),
        rates: Vec::with_capacity(horizon),
        fingerprints: Vec::with_capacity(horizon),
    };
    for (t0, &n_t) in plan.sizes.iter().enumerate() {
        let t = t0 + 1;
        let ctx = PeriodContext {
            period: t,
            horizon,
            batch_size: n_t,
            forecasts: &plan.forecasts,
            scale: plan.scale,
            pool,
        };
        let rate = policy.begin_period(&ctx)?;
        ep.rates.push(rate);
        let before = policy.fingerprint();
        let mut users_rng = stream(seed, &[t as u64, purpose::USERS]);
        let mut policy_rng = stream(seed, &[t as u64, purpose::POLICY]);
        let mut reward_rng = stream(seed, &[t as u64, purpose::REWARDS]);
        let mut batch = Vec::with_capacity(n_t);
        let mut regret = 0.0;
        for _ in 0..n_t {
            let user = users_rng.random_range(0..pool.len());
            let x = pool[user].as_slice();
            let (action, explored) = policy.assign(x, &mut policy_rng);
            let reward = sample_reward(x, action, instance, &mut reward_rng)?;
            let r = per_user_regret(x, &policy.action_distribution(x), &instance.items)?;
            regret += r;
            ep.user_regret.push(r);
            ep.period_of.push(t);
            batch.push(InteractionRecord {
                user,
                x: x.to_vec(),
                action,
                reward,
                explored,
            });
        }
        let after = policy.fingerprint();
        if before != after {
            return Err(invalid(format!("estimator changed during period {t}")));
        }
        ep.fingerprints.push((before, after));
        if n_t > 0 {
            policy.end_period(&batch)?;
        }
        ep.period_regret.push(regret);
        ep.records.extend(batch);
    }
    Ok(ep)
}

/// Mean and standard error across replications.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

impl MeanSe {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                se: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let se = if n < 2 {
            0.0
        } else {
            let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
            (ss / (n - 1) as f64 / n as f64).sqrt()
        };
        Self { mean, se }
    }
}

/// Regret statistics aggregated over replications.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretReport {
    pub replications: usize,
    /// Mean total regret in each period.
    pub per_period: Vec<MeanSe>,
    pub cumulative: MeanSe,
    /// Cumulative regret divided by the realized number of users.
    pub average: MeanSe,
}

impl RegretReport {
    pub fn from_episodes<'a, I>(episodes: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Episode>,
    {
        let eps: Vec<&Episode> = episodes.into_iter().collect();
        if eps.is_empty() {
            return Err(invalid("no episodes to aggregate"));
        }
        let h = eps[0].period_regret.len();
        if eps.iter().any(|e| e.period_regret.len() != h) {
            return Err(invalid("episodes have different horizons"));
        }
        let per_period = (0..h)
            .map(|t| MeanSe::of(&eps.iter().map(|e| e.period_regret[t]).collect::<Vec<_>>()))
            .collect();
        let cum: Vec<f64> = eps.iter().map(|e| e.cumulative_regret()).collect();
        let avg: Vec<f64> = eps.iter().map(|e| e.average_regret()).collect();
        Ok(Self {
            replications: eps.len(),
            per_period,
            cumulative: MeanSe::of(&cum),
            average: MeanSe::of(&avg),
        })
    }
}
