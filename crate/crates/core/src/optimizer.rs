//! Projected stochastic gradient descent over exploration schedules.

use std::io::{self, Write};

use crate::error::{invalid, Error, Result};
use crate::objective::{
    evaluate, evaluate_with, Estimate, ExplorationSchedule, GradientEstimator, NoiseDraws,
    ObjectiveConfig, RateBox,
};
use crate::posterior::{CovarianceMode, GaussianPosterior};
use crate::rng::derive_seed;
use crate::scalar::Real;

/// Tag for the held-out evaluation draws; step draws use the step index.
const HELD_OUT_TAG: u64 = u64::MAX;

/// Elementwise clamp onto the box.
pub fn project<T: Real>(v: &[T], bounds: &RateBox<T>) -> Vec<T> {
    v.iter().map(|x| bounds.clamp(*x)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum SolverInit<T> {
    Constant(T),
    WarmStart(Vec<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig<T> {
    pub steps: usize,
    pub step_size: T,
    pub bounds: RateBox<T>,
    pub init: SolverInit<T>,
    pub seed: u64,
    /// Heavy-ball coefficient; `None` runs plain projected SGD.
    pub momentum: Option<T>,
    /// Decay the step size as `1/sqrt(k)` over the second half of the run.
    pub decay: bool,
    /// Divide each gradient coordinate by its period's forecast batch size,
    /// making `step_size` a per-user quantity.
    pub normalize: bool,
    /// Paths for the final held-out evaluation.
    pub eval_paths: usize,
    pub record_trace: bool,
    pub estimator: GradientEstimator,
}

impl<T: Real> Default for SolverConfig<T> {
    fn default() -> Self {
        Self {
            steps: 300,
            step_size: T::of(0.05),
            bounds: RateBox::unit(),
            init: SolverInit::Constant(T::of(0.5)),
            seed: 0,
            momentum: None,
            decay: true,
            normalize: true,
            eval_paths: 256,
            record_trace: false,
            estimator: GradientEstimator::Baseline,
        }
    }
}

impl<T: Real> SolverConfig<T> {
    pub fn validate(&self) -> Result<()> {
        RateBox::new(self.bounds.lower, self.bounds.upper)?;
        if self.steps == 0 {
            return Err(invalid("solver needs at least one step"));
        }
        if !(self.step_size >= T::zero()) || !self.step_size.is_finite() {
            return Err(invalid("step size must be finite and >= 0"));
        }
        if let Some(m) = self.momentum {
            if !(T::zero() <= m && m < T::one()) {
                return Err(invalid("momentum must be in [0, 1)"));
            }
        }
        if self.eval_paths == 0 {
            return Err(invalid("eval_paths must be >= 1"));
        }
        Ok(())
    }

    fn step_size_at(&self, k: usize) -> T {
        let half = self.steps / 2;
        if self.decay && k >= half {
            self.step_size / T::of_usize(k - half + 1).sqrt()
        } else {
            self.step_size
        }
    }

    fn initial(&self, horizon: usize) -> Result<Vec<T>> {
        let v = match &self.init {
            SolverInit::Constant(c) => vec![*c; horizon],
            SolverInit::WarmStart(w) if w.len() == horizon => w.clone(),
            SolverInit::WarmStart(w) => {
                return Err(invalid(format!(
                    "warm start has {} rates, horizon is {horizon}",
                    w.len()
                )))
            }
        };
        Ok(project(&v, &self.bounds))
    }
}

/// One iterate of the solver: objective on that step's draws, before the
/// update, and the rates it was evaluated at.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow<T> {
    pub step: usize,
    pub objective: T,
    pub rates: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct Solution<T> {
    pub schedule: ExplorationSchedule<T>,
    /// Objective of the returned schedule on held-out draws.
    pub objective: Estimate<T>,
    pub trace: Vec<TraceRow<T>>,
}

/// Runs `solver.steps` iterations of `eps <- Proj(eps - alpha * grad J(eps))`
/// with fresh draws each step.
pub fn sgd_solve<T: Real>(
    post: &GaussianPosterior<T>,
    cfg: &ObjectiveConfig<T>,
    solver: &SolverConfig<T>,
) -> Result<Solution<T>> {
    solver.validate()?;
    if post.mode() != CovarianceMode::Diagonal {
        return Err(invalid("sgd_solve needs a diagonal posterior"));
    }
    let horizon = cfg.batch_sizes.len();
    if horizon == 0 {
        return Err(invalid("nothing to solve: empty horizon"));
    }
    let start = post.period();
    let (k, d) = (post.items(), post.dim());
    let scale: Vec<T> = cfg
        .batch_sizes
        .iter()
        .map(|n| {
            if solver.normalize && *n > T::zero() {
                n.recip()
            } else {
                T::one()
            }
        })
        .collect();

    let mut eps = solver.initial(horizon)?;
    let mut velocity = vec![T::zero(); horizon];
    let mut trace = Vec::new();
    for step in 0..solver.steps {
        let sched = ExplorationSchedule::new(eps.clone(), start, &solver.bounds)?;
        let noise = NoiseDraws::sample(
            derive_seed(solver.seed, &[step as u64]),
            cfg.paths,
            horizon,
            k,
            d,
        );
        let eval = evaluate_with(&sched, post, cfg, &noise, solver.estimator)?;
        let grad = eval.gradient.expect("diagonal posterior yields a gradient");
        if let Some(coordinate) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { step, coordinate });
        }
        if solver.record_trace {
            trace.push(TraceRow {
                step,
                objective: eval.value.mean,
                rates: eps.clone(),
            });
        }
        let alpha = solver.step_size_at(step);
        let mut next = Vec::with_capacity(horizon);
        for i in 0..horizon {
            let g = grad[i] * scale[i];
            let dir = match solver.momentum {
                Some(m) => {
                    velocity[i] = m * velocity[i] + g;
                    velocity[i]
                }
                None => g,
            };
            next.push(eps[i] - alpha * dir);
        }
        eps = project(&next, &solver.bounds);
        debug_assert!(eps.iter().all(|v| solver.bounds.contains(*v)));
    }

    let schedule = ExplorationSchedule::new(eps, start, &solver.bounds)?;
    let held_out = NoiseDraws::sample(
        derive_seed(solver.seed, &[HELD_OUT_TAG]),
        solver.eval_paths,
        horizon,
        k,
        d,
    );
    let objective = evaluate(&schedule, post, cfg, &held_out)?.value;
    if solver.record_trace {
        trace.push(TraceRow {
            step: solver.steps,
            objective: objective.mean,
            rates: schedule.rates.clone(),
        });
    }
    Ok(Solution {
        schedule,
        objective,
        trace,
    })
}

/// Writes a trace as CSV: `step,objective,eps_1,...,eps_H`.
pub fn write_trace<T: Real, W: Write>(rows: &[TraceRow<T>], mut out: W) -> io::Result<()> {
    let width = rows.first().map_or(0, |r| r.rates.len());
    write!(out, "step,objective")?;
    for i in 1..=width {
        write!(out, ",eps_{i}")?;
    }
    writeln!(out)?;
    for r in rows {
        write!(out, "{},{}", r.step, r.objective)?;
        for v in &r.rates {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posterior::{make_prior, population_design, PriorVariance};
    use proptest::prelude::*;

    fn setup(k: usize, n: Vec<f64>) -> (GaussianPosterior<f64>, ObjectiveConfig<f64>) {
        let users = vec![
            vec![1.0, 0.3],
            vec![-0.4, 0.9],
            vec![0.6, -0.7],
            vec![0.1, 0.2],
        ];
        let post = make_prior(
            k,
            2,
            &[0.2, -0.1],
            &PriorVariance::Scalar(1.0),
            CovarianceMode::Diagonal,
        )
        .unwrap();
        let design = population_design(&users, k, 1.0, CovarianceMode::Diagonal).unwrap();
        let cfg = ObjectiveConfig {
            user_sample: users,
            batch_sizes: n,
            design,
            paths: 1,
            sqrt_floor: 1e-12,
            seed: 0,
        };
        (post, cfg)
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project(&[-0.2, 1.3], &RateBox::unit()), vec![0.0, 1.0]);
        let b = RateBox::new(0.05, 1.0).unwrap();
        assert_eq!(project(&[0.02, 0.5], &b), vec![0.05, 0.5]);
    }

    #[test]
    fn single_period_goes_to_zero() {
        let (_, mut cfg) = setup(3, vec![100.0]);
        let post = GaussianPosterior::from_precisions(
            CovarianceMode::Diagonal,
            3,
            2,
            1,
            vec![0.2, -0.1, -0.3, 0.4, 0.0, 0.1],
            vec![1.0; 6],
        )
        .unwrap();
        cfg.paths = 8;
        let sol = sgd_solve(&post, &cfg, &SolverConfig::default()).unwrap();
        assert!(sol.schedule.rates[0] < 1e-9, "{:?}", sol.schedule.rates);
    }

    #[test]
    fn zero_step_size_returns_init() {
        let (post, cfg) = setup(2, vec![50.0, 50.0, 50.0]);
        let solver = SolverConfig {
            step_size: 0.0,
            steps: 5,
            init: SolverInit::WarmStart(vec![0.1, 0.7, 0.3]),
            ..SolverConfig::default()
        };
        let sol = sgd_solve(&post, &cfg, &solver).unwrap();
        assert_eq!(sol.schedule.rates, vec![0.1, 0.7, 0.3]);
    }

    #[test]
    fn single_item_schedule_stays_in_box() {
        let (post, cfg) = setup(1, vec![50.0, 50.0]);
        let solver = SolverConfig {
            bounds: RateBox::new(0.1, 0.6).unwrap(),
            steps: 40,
            record_trace: true,
            ..SolverConfig::default()
        };
        let sol = sgd_solve(&post, &cfg, &solver).unwrap();
        assert!(sol
            .trace
            .iter()
            .all(|r| r.rates.iter().all(|v| (0.1..=0.6).contains(v))));
        assert_eq!(sol.trace.len(), 41);
    }

    #[test]
    fn same_seed_same_iterates() {
        let (post, cfg) = setup(3, vec![20.0, 80.0, 40.0]);
        let solver = SolverConfig {
            steps: 30,
            record_trace: true,
            momentum: Some(0.9),
            ..SolverConfig::default()
        };
        let a = sgd_solve(&post, &cfg, &solver).unwrap();
        let b = sgd_solve(&post, &cfg, &solver).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.objective, b.objective);
    }

    #[test]
    fn bad_configs_rejected() {
        let (post, cfg) = setup(2, vec![10.0]);
        let bad = SolverConfig {
            steps: 0,
            ..SolverConfig::default()
        };
        assert!(sgd_solve(&post, &cfg, &bad).is_err());
        let warm = SolverConfig {
            init: SolverInit::WarmStart(vec![0.5, 0.5]),
            ..SolverConfig::default()
        };
        assert!(sgd_solve(&post, &cfg, &warm).is_err());
    }

    #[test]
    fn trace_csv_shape() {
        let rows = vec![TraceRow {
            step: 0,
            objective: -1.5,
            rates: vec![0.5, 0.25],
        }];
        let mut buf = Vec::new();
        write_trace(&rows, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "step,objective,eps_1,eps_2\n0,-1.5,0.5,0.25\n"
        );
    }

    proptest! {
        #[test]
        fn projection_is_idempotent_and_feasible(
            v in prop::collection::vec(-2.0f64..3.0, 1..8),
            lo in 0.0f64..0.5,
            width in 0.0f64..0.5,
        ) {
            let b = RateBox::new(lo, lo + width).unwrap();
            let p = project(&v, &b);
            prop_assert!(p.iter().all(|x| b.contains(*x)));
            prop_assert_eq!(project(&p, &b), p);
        }
    }
}
