use schedopt::rng::{derive_seed, purpose, stream};
use schedopt::{per_user_regret, synth_instance, PriorVariance};
use schedopt_harness::{run_sweep, ExperimentConfig};

fn config(extra: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml(&format!(
        r#"
seed = 21
instance.items = [4]
instance.dim = 3
instance.pool_size = 80
plan.scale = [400]
plan.patterns = ["Constant"]
{extra}
"#
    ))
    .unwrap()
}

#[test]
fn standard_error_shrinks_with_replications() {
    let text = "[[strategy]]\nname = \"eps_greedy\"\nvalue = 0.2\n";
    let se = |reps: usize| {
        let mut cfg = config(text);
        cfg.replications = reps;
        run_sweep(&cfg).unwrap().cells[0].regret.se
    };
    let ratio = se(800) / se(400);
    assert!((0.6..=0.8).contains(&ratio), "ratio {ratio}");
}

#[test]
fn pure_greedy_from_zero_estimate_plays_the_first_item() {
    // eps = 0 never explores, so the zero estimate always picks item 0.
    let reps = 40;
    let mut cfg = config("[[strategy]]\nname = \"eps_greedy\"\nvalue = 0.0\n");
    cfg.replications = reps;
    let cell = &run_sweep(&cfg).unwrap().cells[0];

    let (mut total, mut var) = (0.0, 0.0);
    for r in 0..reps {
        let seed = derive_seed(cfg.seed, &[0, r as u64]);
        let i = &cfg.instance;
        let inst = synth_instance(
            4,
            i.dim,
            i.pool_size,
            &vec![i.prior_mean; i.dim],
            &PriorVariance::Scalar(i.prior_variance),
            i.norm_bound,
            i.noise_std,
            &mut stream(seed, &[purpose::INSTANCE]),
        )
        .unwrap();
        let regrets: Vec<f64> = inst
            .user_pool
            .iter()
            .map(|u| per_user_regret(u.as_slice(), &[1.0, 0.0, 0.0, 0.0], &inst.items).unwrap())
            .collect();
        let mean = regrets.iter().sum::<f64>() / regrets.len() as f64;
        let v = regrets.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / regrets.len() as f64;
        total += mean;
        // about 400 users sampled with replacement per replication
        var += v / 400.0;
    }
    let enumerated = total / reps as f64;
    let se = var.sqrt() / reps as f64;
    assert!(
        (cell.regret.mean - enumerated).abs() < 4.0 * se,
        "simulated {} vs enumerated {enumerated} (se {se})",
        cell.regret.mean
    );
}

#[test]
fn reruns_are_identical() {
    let mut cfg = config(
        "[[strategy]]\nname = \"theory_etc\"\nvalue = 1.0\n[[strategy]]\nname = \"batched_ts\"\n",
    );
    cfg.replications = 10;
    assert_eq!(run_sweep(&cfg).unwrap(), run_sweep(&cfg).unwrap());
}
