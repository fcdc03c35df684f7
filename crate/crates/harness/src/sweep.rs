//! Runs every (strategy, K, N, pattern) cell over the configured replications.

use rayon::prelude::*;

use schedopt::rng::{derive_seed, purpose, stream};
use schedopt::{
    run_episode, synth_instance, BatchPlan, MeanSe, Policy, PriorVariance, StrategyKind,
};

use crate::config::{ExperimentConfig, Scenario};
use crate::error::HarnessError;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey {
    pub strategy: String,
    pub items: usize,
    pub scale: usize,
    pub pattern: String,
}

/// One optimizer iterate from a solve made during a replication.
#[derive(Debug, Clone, PartialEq)]
pub struct TracePoint {
    pub replication: usize,
    pub solve_period: usize,
    pub step: usize,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub key: CellKey,
    pub kind: StrategyKind,
    /// Per-user regret across successful replications.
    pub regret: MeanSe,
    pub cumulative: MeanSe,
    pub replications: usize,
    /// Replication index and message for each failed replication.
    pub failures: Vec<(usize, String)>,
    /// Deployed rates per replication (optimizer strategies only).
    pub schedules: Vec<(usize, Vec<f64>)>,
    pub traces: Vec<TracePoint>,
    /// Solver faults the controller recovered from.
    pub faults: Vec<(usize, String)>,
}

/// Best-in-hindsight constant for a swept strategy in one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct BestConstant {
    pub key: CellKey,
    pub value: f64,
    pub regret: MeanSe,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepResult {
    pub cells: Vec<CellResult>,
    pub best: Vec<BestConstant>,
}

impl SweepResult {
    pub fn cell(
        &self,
        strategy: &str,
        items: usize,
        scale: usize,
        pattern: &str,
    ) -> Option<&CellResult> {
        self.cells.iter().find(|c| {
            c.key.strategy == strategy
                && c.key.items == items
                && c.key.scale == scale
                && c.key.pattern == pattern
        })
    }
}

struct Outcome {
    average: f64,
    cumulative: f64,
    rates: Vec<f64>,
    traces: Vec<TracePoint>,
    faults: Vec<String>,
}

struct Cell {
    items: usize,
    scale: usize,
    scenario: Scenario,
}

fn run_replication(
    cfg: &ExperimentConfig,
    cell: &Cell,
    variants: &[StrategyKind],
    seed: u64,
    replication: usize,
) -> Vec<Result<Outcome, String>> {
    let inst = &cfg.instance;
    let instance = synth_instance(
        cell.items,
        inst.dim,
        inst.pool_size,
        &vec![inst.prior_mean; inst.dim],
        &PriorVariance::Scalar(inst.prior_variance),
        inst.norm_bound,
        inst.noise_std,
        &mut stream(seed, &[purpose::INSTANCE]),
    );
    let plan = BatchPlan::sample(
        cell.scale,
        &cell.scenario.fractions,
        cfg.plan.forecast_concentration,
        derive_seed(seed, &[purpose::BATCH_SIZES]),
    );
    let (instance, plan) = match (instance, plan) {
        (Ok(i), Ok(p)) => (i, p),
        (Err(e), _) | (_, Err(e)) => return variants.iter().map(|_| Err(e.to_string())).collect(),
    };
    let solver_seed = derive_seed(seed, &[purpose::SOLVER]);
    let policy_seed = derive_seed(seed, &[purpose::POLICY]);
    variants
        .iter()
        .map(|kind| {
            let mut policy = Policy::new(
                *kind,
                cfg.policy_setup(cell.items, solver_seed, policy_seed),
            )
            .map_err(|e| e.to_string())?;
            let ep = run_episode(&instance, &mut policy, &plan, seed).map_err(|e| e.to_string())?;
            let traces = policy
                .solves()
                .iter()
                .flat_map(|(period, rows)| {
                    rows.iter().map(move |r| TracePoint {
                        replication,
                        solve_period: *period,
                        step: r.step,
                        objective: r.objective,
                    })
                })
                .collect();
            Ok(Outcome {
                average: ep.average_regret(),
                cumulative: ep.cumulative_regret(),
                rates: ep.rates.iter().map(|r| r.unwrap_or(f64::NAN)).collect(),
                traces,
                faults: policy.faults().to_vec(),
            })
        })
        .collect()
}

/// Runs the whole grid on a pool of `cfg.workers` threads. Replication
/// seeds depend only on the master seed and the (scenario, replication)
/// index, so strategies share instances and arrivals, and results do not
/// depend on the worker count.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepResult, HarnessError> {
    cfg.validate()?;
    let groups = cfg.strategy_groups()?;
    let variants: Vec<StrategyKind> = groups
        .iter()
        .flat_map(|g| g.variants.iter().copied())
        .collect();
    let mut cells = Vec::new();
    for &items in &cfg.instance.items {
        for &scale in &cfg.plan.scale {
            for scenario in cfg.scenarios() {
                cells.push(Cell {
                    items,
                    scale,
                    scenario,
                });
            }
        }
    }
    let tasks: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..cfg.replications).map(move |r| (c, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| HarnessError::Config {
            path: "workers".into(),
            message: e.to_string(),
        })?;
    let outcomes: Vec<Vec<Result<Outcome, String>>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(c, r)| {
                let seed = derive_seed(cfg.seed, &[c as u64, r as u64]);
                run_replication(cfg, &cells[c], &variants, seed, r)
            })
            .collect()
    });

    let mut result = SweepResult::default();
    for (c, cell) in cells.iter().enumerate() {
        let reps = &outcomes[c * cfg.replications..(c + 1) * cfg.replications];
        let mut offset = 0;
        for group in &groups {
            let mut group_cells = Vec::new();
            for (v, kind) in group.variants.iter().enumerate() {
                let idx = offset + v;
                let mut averages = Vec::new();
                let mut cumulative = Vec::new();
                let mut failures = Vec::new();
                let mut schedules = Vec::new();
                let mut traces = Vec::new();
                let mut faults = Vec::new();
                for (r, rep) in reps.iter().enumerate() {
                    match &rep[idx] {
                        Ok(o) => {
                            averages.push(o.average);
                            cumulative.push(o.cumulative);
                            if kind.is_optimized() {
                                schedules.push((r, o.rates.clone()));
                            }
                            traces.extend(o.traces.iter().cloned());
                            faults.extend(o.faults.iter().map(|f| (r, f.clone())));
                        }
                        Err(e) => failures.push((r, e.clone())),
                    }
                }
                group_cells.push(CellResult {
                    key: CellKey {
                        strategy: kind.to_string(),
                        items: cell.items,
                        scale: cell.scale,
                        pattern: cell.scenario.label.clone(),
                    },
                    kind: *kind,
                    regret: MeanSe::of(&averages),
                    cumulative: MeanSe::of(&cumulative),
                    replications: averages.len(),
                    failures,
                    schedules,
                    traces,
                    faults,
                });
            }
            offset += group.variants.len();
            if group.swept {
                let best = group_cells
                    .iter()
                    .filter(|c| c.replications > 0)
                    .min_by(|a, b| a.regret.mean.total_cmp(&b.regret.mean));
                if let Some(b) = best {
                    result.best.push(BestConstant {
                        key: CellKey {
                            strategy: format!("{}*", group.name),
                            ..b.key.clone()
                        },
                        value: b
                            .kind
                            .parameter()
                            .expect("swept strategies take a constant"),
                        regret: b.regret,
                    });
                }
            }
            result.cells.extend(group_cells);
        }
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig::from_toml(
            r#"
seed = 11
replications = 6
instance.items = [3]
instance.dim = 2
instance.pool_size = 30
plan.scale = [200]
plan.patterns = ["Spike"]
planning.steps = 20
planning.user_sample = 20
[[strategy]]
name = "eps_greedy"
grid = [0.0, 0.2, 1.0]
[[strategy]]
name = "planner"
[[strategy]]
name = "mpc"
"#,
        )
        .unwrap()
    }

    #[test]
    fn best_constant_is_never_worse_than_any_constant() {
        let res = run_sweep(&small()).unwrap();
        assert_eq!(res.cells.len(), 5);
        assert_eq!(res.best.len(), 1);
        let best = &res.best[0];
        assert_eq!(best.key.strategy, "eps_greedy*");
        for c in res
            .cells
            .iter()
            .filter(|c| c.key.strategy.starts_with("eps_greedy("))
        {
            assert!(best.regret.mean <= c.regret.mean);
        }
    }

    #[test]
    fn planner_and_mpc_share_first_rate() {
        let res = run_sweep(&small()).unwrap();
        let p = res.cell("planner", 3, 200, "Spike").unwrap();
        let m = res.cell("mpc", 3, 200, "Spike").unwrap();
        assert_eq!(p.schedules.len(), 6);
        for ((_, a), (_, b)) in p.schedules.iter().zip(&m.schedules) {
            assert_eq!(a[0], b[0]);
            assert_eq!(a.len(), 5);
        }
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let mut cfg = small();
        let a = run_sweep(&cfg).unwrap();
        cfg.workers = 3;
        let b = run_sweep(&cfg).unwrap();
        assert_eq!(a, b);
    }
}
