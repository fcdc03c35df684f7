//! Quick invariant suites behind `schedopt check`.

use rand::Rng;

use schedopt::optimizer::project;
use schedopt::rng::stream;
use schedopt::{
    arrival_pattern, covariance_path, etc_rate, evaluate, make_prior, population_design, ridge_fit,
    theory_etc_budget, CovarianceMode, ExplorationSchedule, NoiseDraws, ObjectiveConfig,
    PriorVariance, RateBox, Record,
};

use crate::config::ExperimentConfig;
use crate::reports::emit_reports;
use crate::sweep::run_sweep;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &'static str, failures: Vec<String>, ok_detail: String) -> CheckOutcome {
    CheckOutcome {
        name,
        passed: failures.is_empty(),
        detail: if failures.is_empty() {
            ok_detail
        } else {
            failures.join("; ")
        },
    }
}

fn exact_formulas() -> CheckOutcome {
    let mut bad = Vec::new();
    let mut expect = |what: &str, got: f64, want: f64| {
        if (got - want).abs() > 1e-9 {
            bad.push(format!("{what}: got {got}, want {want}"));
        }
    };
    expect("etc_rate first", etc_rate(150.0, 0.0, 100.0), 1.0);
    expect("etc_rate second", etc_rate(150.0, 100.0, 100.0), 0.5);
    expect("etc_rate empty", etc_rate(10.0, 0.0, 0.0), 0.0);
    expect("budget", theory_etc_budget(0.1, 8, 1000), 20.0);
    let p = project(
        &[0.02, 0.5],
        &RateBox {
            lower: 0.05,
            upper: 1.0,
        },
    );
    expect("projection", p[0], 0.05);
    let spike = arrival_pattern("Spike").unwrap_or_default();
    expect("spike total", spike.iter().sum(), 1.0);
    let rec = Record {
        user: 0,
        x: vec![1.0, 0.0],
        action: 0,
        reward: 2.0,
        explored: true,
    };
    let th = ridge_fit(&[rec], 0, 1.0, 2).unwrap_or_default();
    expect("ridge", th.first().copied().unwrap_or(f64::NAN), 1.0);
    outcome("exact formulas", bad, "all match".into())
}

fn gradient_vs_finite_differences(seed: u64, configs: usize) -> CheckOutcome {
    let mut rng = stream(seed, &[0x6a]);
    let mut bad = Vec::new();
    let mut compared = 0;
    for c in 0..configs {
        let (d, k, h) = (
            rng.random_range(1..=4),
            rng.random_range(2..=4),
            rng.random_range(1..=4),
        );
        let users: Vec<Vec<f64>> = (0..8)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let mean: Vec<f64> = (0..d).map(|_| rng.random_range(-0.5..0.5)).collect();
        let post = match make_prior(
            k,
            d,
            &mean,
            &PriorVariance::Scalar(1.0),
            CovarianceMode::Diagonal,
        ) {
            Ok(p) => p,
            Err(e) => {
                bad.push(e.to_string());
                continue;
            }
        };
        let design =
            population_design(&users, k, 1.0, CovarianceMode::Diagonal).expect("non-empty users");
        let cfg = ObjectiveConfig {
            user_sample: users,
            batch_sizes: (0..h).map(|_| rng.random_range(10.0..200.0)).collect(),
            design,
            paths: 4,
            sqrt_floor: 1e-12,
            seed: c as u64,
        };
        let rates: Vec<f64> = (0..h).map(|_| rng.random_range(0.05..0.95)).collect();
        let noise = NoiseDraws::sample(c as u64, 4, h, k, d);
        let at = |r: Vec<f64>| {
            let s = ExplorationSchedule::new(r, 1, &RateBox::unit()).expect("rates in box");
            evaluate(&s, &post, &cfg, &noise).expect("valid objective")
        };
        let grad = at(rates.clone()).gradient.expect("diagonal gradient");
        let step = 1e-4;
        for i in 0..h {
            let (mut up, mut down) = (rates.clone(), rates.clone());
            up[i] += step;
            down[i] -= step;
            let fd = (at(up).value.mean - at(down).value.mean) / (2.0 * step);
            let rel = (fd - grad[i]).abs() / grad[i].abs().max(fd.abs()).max(1e-8);
            // an argmax switch inside the stencil makes the difference meaningless
            if rel >= 1e-3 && (fd - grad[i]).abs() > 1e-6 {
                bad.push(format!(
                    "config {c} coordinate {i}: analytic {} vs fd {fd}",
                    grad[i]
                ));
            }
            compared += 1;
        }
    }
    // a few tie crossings are expected; flag only widespread disagreement
    let failures = if bad.len() * 10 > compared {
        bad
    } else {
        Vec::new()
    };
    outcome(
        "gradient vs finite differences",
        failures,
        format!("{compared} coordinates compared"),
    )
}

fn covariance_monotone() -> CheckOutcome {
    let users = vec![vec![1.0, 0.2], vec![-0.5, 0.8]];
    let post = make_prior(
        2,
        2,
        &[0.0, 0.0],
        &PriorVariance::Scalar(1.0),
        CovarianceMode::Diagonal,
    )
    .expect("prior");
    let cfg = ObjectiveConfig {
        design: population_design(&users, 2, 1.0, CovarianceMode::Diagonal).expect("design"),
        user_sample: users,
        batch_sizes: vec![50.0; 4],
        paths: 1,
        sqrt_floor: 1e-12,
        seed: 0,
    };
    let base = ExplorationSchedule::new(vec![0.3; 4], 1, &RateBox::unit()).expect("schedule");
    let mut bumped = base.clone();
    bumped.rates[1] = 0.6;
    let (a, b) = match (
        covariance_path(&post, &base, &cfg),
        covariance_path(&post, &bumped, &cfg),
    ) {
        (Ok(a), Ok(b)) => (a, b),
        _ => {
            return outcome(
                "covariance path monotone",
                vec!["path failed".into()],
                String::new(),
            )
        }
    };
    let mut bad = Vec::new();
    for s in 2..4 {
        for (x, y) in a.variances(s, 0).iter().zip(b.variances(s, 0)) {
            if y >= *x {
                bad.push(format!("offset {s}: {y} !< {x}"));
            }
        }
    }
    outcome(
        "covariance path monotone",
        bad,
        "strictly decreasing".into(),
    )
}

fn sweep_determinism(seed: u64) -> CheckOutcome {
    let text = format!(
        "seed = {seed}\nreplications = 4\ninstance.items = [3]\ninstance.dim = 2\ninstance.pool_size = 20\n\
         plan.scale = [100]\nplan.patterns = [\"Spike\"]\nplanning.steps = 10\nplanning.user_sample = 10\n\
         [[strategy]]\nname = \"eps_greedy\"\n[[strategy]]\nname = \"mpc\"\n"
    );
    let run = |workers: usize| -> Result<Vec<Vec<u8>>, String> {
        let mut cfg = ExperimentConfig::from_toml(&text).map_err(|e| e.to_string())?;
        cfg.workers = workers;
        let dir =
            std::env::temp_dir().join(format!("schedopt-check-{}-{workers}", std::process::id()));
        let files = emit_reports(&run_sweep(&cfg).map_err(|e| e.to_string())?, &dir)
            .map_err(|e| e.to_string())?;
        let bytes = files
            .iter()
            .map(|f| std::fs::read(f).unwrap_or_default())
            .collect();
        let _ = std::fs::remove_dir_all(&dir);
        Ok(bytes)
    };
    let bad = match (run(1), run(2)) {
        (Ok(a), Ok(b)) if a == b => vec![],
        (Ok(_), Ok(_)) => vec!["outputs differ between 1 and 2 workers".into()],
        (Err(e), _) | (_, Err(e)) => vec![e],
    };
    outcome(
        "sweep determinism",
        bad,
        "byte-identical at 1 and 2 workers".into(),
    )
}

pub fn run_checks(seed: u64) -> Vec<CheckOutcome> {
    vec![
        exact_formulas(),
        gradient_vs_finite_differences(seed, 20),
        covariance_monotone(),
        sweep_determinism(seed),
    ]
}
