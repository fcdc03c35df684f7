use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use schedopt::rng::{derive_seed, purpose, stream};
use schedopt::{
    population_design, run_episode, sgd_solve, synth_instance, BatchPlan, CovarianceMode,
    ObjectiveConfig, Policy, PriorVariance, StrategyKind,
};
use schedopt_harness::checks::run_checks;
use schedopt_harness::reports::{emit_reports, sig6};
use schedopt_harness::{load_config, run_sweep, ExperimentConfig};

/// Environment variable overriding the config's output directory.
const OUT_ENV: &str = "SCHEDOPT_OUT";

#[derive(Parser)]
#[command(
    name = "schedopt",
    version,
    about = "Exploration-rate scheduling experiments for batched bandits"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// TOML experiment config; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads, overriding the config.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory (beats $SCHEDOPT_OUT, which beats the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full sweep and write CSV reports.
    Run(Common),
    /// Solve one Planner schedule under the prior and print it.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Strategy name (only `planner` and `mpc` plan schedules).
        #[arg(long, default_value = "planner")]
        strategy: String,
    },
    /// Simulate one episode and write its interaction log.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Strategy as `name` or `name:constant`, e.g. `eps_greedy:0.1`.
        #[arg(long)]
        strategy: String,
    },
    /// Run the built-in invariant suites.
    Check {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn resolve(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => load_config(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    } else if let Some(o) = std::env::var_os(OUT_ENV) {
        cfg.out = PathBuf::from(o);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_strategy(spec: &str) -> Result<StrategyKind> {
    let (name, param) = match spec.split_once(':') {
        Some((n, p)) => (
            n,
            Some(
                p.parse::<f64>()
                    .with_context(|| format!("bad constant in {spec:?}"))?,
            ),
        ),
        None => (spec, None),
    };
    Ok(StrategyKind::from_name(name, param)?)
}

fn write_resolved(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(dir.join("config.resolved.toml"), cfg.echo())?;
    Ok(())
}

fn run(common: Common) -> Result<()> {
    let cfg = resolve(&common)?;
    let result = run_sweep(&cfg)?;
    write_resolved(&cfg, &cfg.out)?;
    let files = emit_reports(&result, &cfg.out)?;
    println!(
        "{:<24} {:>4} {:>6} {:<11} {:>12} {:>10}",
        "strategy", "K", "N", "pattern", "mean_regret", "se"
    );
    for c in &result.cells {
        println!(
            "{:<24} {:>4} {:>6} {:<11} {:>12} {:>10}",
            c.key.strategy,
            c.key.items,
            c.key.scale,
            c.key.pattern,
            sig6(c.regret.mean),
            sig6(c.regret.se)
        );
        for (rep, msg) in &c.failures {
            eprintln!("  replication {rep} failed: {msg}");
        }
    }
    for b in &result.best {
        println!(
            "{:<24} {:>4} {:>6} {:<11} {:>12} {:>10}  (constant {})",
            b.key.strategy,
            b.key.items,
            b.key.scale,
            b.key.pattern,
            sig6(b.regret.mean),
            sig6(b.regret.se),
            b.value
        );
    }
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn solve(common: Common, strategy: &str) -> Result<()> {
    let kind = parse_strategy(strategy)?;
    if !kind.is_optimized() {
        bail!("{kind} does not solve schedules; use planner or mpc");
    }
    let cfg = resolve(&common)?;
    let items = cfg.instance.items[0];
    let scale = cfg.plan.scale[0];
    let scenario = &cfg.scenarios()[0];
    let seed = derive_seed(cfg.seed, &[0, 0]);
    let instance = synth_instance(
        items,
        cfg.instance.dim,
        cfg.instance.pool_size,
        &vec![cfg.instance.prior_mean; cfg.instance.dim],
        &PriorVariance::Scalar(cfg.instance.prior_variance),
        cfg.instance.norm_bound,
        cfg.instance.noise_std,
        &mut stream(seed, &[purpose::INSTANCE]),
    )?;
    let setup = cfg.policy_setup(items, derive_seed(seed, &[purpose::SOLVER]), 0);
    let mut rng = stream(setup.planning.solver.seed, &[purpose::USER_SAMPLE]);
    let users: Vec<Vec<f64>> = (0..setup.planning.user_sample)
        .map(|_| {
            use rand::Rng;
            instance.user_pool[rng.random_range(0..instance.user_pool.len())]
                .as_slice()
                .to_vec()
        })
        .collect();
    let prior = schedopt::make_prior(
        items,
        setup.dim,
        &setup.prior_mean,
        &PriorVariance::Scalar(setup.prior_variance),
        CovarianceMode::Diagonal,
    )?;
    let objective = ObjectiveConfig {
        design: population_design(&users, items, setup.noise_std, CovarianceMode::Diagonal)?,
        user_sample: users,
        batch_sizes: scenario
            .fractions
            .iter()
            .map(|l| l * scale as f64)
            .collect(),
        paths: setup.planning.paths,
        sqrt_floor: setup.planning.sqrt_floor,
        seed: setup.planning.solver.seed,
    };
    let sol = sgd_solve(&prior, &objective, &setup.planning.solver)?;
    println!("pattern {} K={items} N={scale}", scenario.label);
    for (t, r) in sol.schedule.rates.iter().enumerate() {
        println!("eps_{} = {}", t + 1, sig6(*r));
    }
    let se = sol
        .objective
        .std_error
        .map(sig6)
        .unwrap_or_else(|| "-".into());
    println!("objective = {} (se {se})", sig6(sol.objective.mean));
    Ok(())
}

fn simulate(common: Common, strategy: &str) -> Result<()> {
    let kind = parse_strategy(strategy)?;
    let cfg = resolve(&common)?;
    let items = cfg.instance.items[0];
    let scale = cfg.plan.scale[0];
    let scenario = &cfg.scenarios()[0];
    let seed = derive_seed(cfg.seed, &[0, 0]);
    let instance = synth_instance(
        items,
        cfg.instance.dim,
        cfg.instance.pool_size,
        &vec![cfg.instance.prior_mean; cfg.instance.dim],
        &PriorVariance::Scalar(cfg.instance.prior_variance),
        cfg.instance.norm_bound,
        cfg.instance.noise_std,
        &mut stream(seed, &[purpose::INSTANCE]),
    )?;
    let plan = BatchPlan::sample(
        scale,
        &scenario.fractions,
        cfg.plan.forecast_concentration,
        derive_seed(seed, &[purpose::BATCH_SIZES]),
    )?;
    let setup = cfg.policy_setup(
        items,
        derive_seed(seed, &[purpose::SOLVER]),
        derive_seed(seed, &[purpose::POLICY]),
    );
    let mut policy = Policy::new(kind, setup)?;
    let ep = run_episode(&instance, &mut policy, &plan, seed)?;
    std::fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let log = cfg.out.join("interactions.csv");
    ep.write_log(std::io::BufWriter::new(std::fs::File::create(&log)?))?;
    println!(
        "strategy {kind}, pattern {}, sizes {:?}",
        scenario.label, ep.sizes
    );
    let rates: Vec<String> = ep
        .rates
        .iter()
        .map(|r| r.map(sig6).unwrap_or_else(|| "-".into()))
        .collect();
    println!("rates [{}]", rates.join(", "));
    println!(
        "cumulative regret {} (per user {})",
        sig6(ep.cumulative_regret()),
        sig6(ep.average_regret())
    );
    for f in policy.faults() {
        eprintln!("fault: {f}");
    }
    println!("wrote {}", log.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Run(c) => run(c),
        Command::Solve { common, strategy } => solve(common, &strategy),
        Command::Simulate { common, strategy } => simulate(common, &strategy),
        Command::Check { seed } => {
            let results = run_checks(seed);
            for r in &results {
                println!(
                    "{} {}: {}",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.name,
                    r.detail
                );
            }
            if results.iter().all(|r| r.passed) {
                Ok(())
            } else {
                return ExitCode::FAILURE;
            }
        }
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
