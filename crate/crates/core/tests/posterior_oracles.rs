use nalgebra::{DMatrix, DVector};
use rand::Rng;

use schedopt::rng::{std_normal, stream};
use schedopt::{
    covariance_path, make_prior, population_design, CovarianceMode, ExplorationSchedule,
    GaussianPosterior, ObjectiveConfig, PriorVariance, RateBox, Record,
};

fn random_records(n: usize, k: usize, d: usize, seed: u64) -> Vec<Record> {
    let mut rng = stream(seed, &[0]);
    (0..n)
        .map(|i| Record {
            user: i,
            x: (0..d).map(|_| std_normal::<f64, _>(&mut rng)).collect(),
            action: rng.random_range(0..k),
            reward: std_normal::<f64, _>(&mut rng),
            explored: rng.random::<f64>() < 0.7,
        })
        .collect()
}

#[test]
fn full_update_matches_closed_form() {
    let (k, d, s) = (3, 4, 0.7);
    let prior = make_prior(
        k,
        d,
        &[0.1, -0.2, 0.0, 0.3],
        &PriorVariance::PerCoordinate(vec![1.0, 2.0, 0.5, 1.5]),
        CovarianceMode::Full,
    )
    .unwrap();
    let batch = random_records(60, k, d, 1);
    let post = prior.update(&batch, s).unwrap();
    for a in 0..k {
        let lam0 = DMatrix::from_row_slice(d, d, prior.precision(a));
        let mu0 = DVector::from_column_slice(prior.mean(a));
        let mut xtx = DMatrix::zeros(d, d);
        let mut xty = DVector::zeros(d);
        for r in batch.iter().filter(|r| r.explored && r.action == a) {
            let x = DVector::from_column_slice(&r.x);
            xtx += &x * x.transpose();
            xty += &x * r.reward;
        }
        let lam = &lam0 + xtx / (s * s);
        let mean = lam.clone().try_inverse().unwrap() * (&lam0 * mu0 + xty / (s * s));
        for (got, want) in post.precision(a).iter().zip(lam.transpose().iter()) {
            assert!((got - want).abs() < 1e-10);
        }
        for (got, want) in post.mean(a).iter().zip(mean.iter()) {
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        }
    }
}

#[test]
fn sequential_updates_equal_one_batch() {
    let prior = make_prior(
        2,
        3,
        &[0.0; 3],
        &PriorVariance::Scalar(1.0),
        CovarianceMode::Full,
    )
    .unwrap();
    let batch = random_records(50, 2, 3, 2);
    let once = prior.update(&batch, 1.0).unwrap();
    let twice = prior
        .update(&batch[..20], 1.0)
        .unwrap()
        .update(&batch[20..], 1.0)
        .unwrap();
    for a in 0..2 {
        for (x, y) in once.mean(a).iter().zip(twice.mean(a)) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn full_covariance_path_matches_matrix_inverse() {
    let (k, d) = (2, 3);
    let mut rng = stream(3, &[0]);
    let users: Vec<Vec<f64>> = (0..25)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let prior = make_prior(
        k,
        d,
        &[0.0; 3],
        &PriorVariance::Scalar(0.8),
        CovarianceMode::Full,
    )
    .unwrap();
    let post = prior.update(&random_records(30, k, d, 4), 1.0).unwrap();
    let design = population_design(&users, k, 1.0, CovarianceMode::Full).unwrap();
    let info = DMatrix::from_row_slice(d, d, &design.to_full());
    let cfg = ObjectiveConfig {
        design,
        user_sample: users,
        batch_sizes: vec![40.0, 80.0, 20.0],
        paths: 1,
        sqrt_floor: 1e-12,
        seed: 0,
    };
    let rates = [0.3, 0.6, 0.9];
    let sched = ExplorationSchedule::new(rates.to_vec(), 1, &RateBox::unit()).unwrap();
    let path = covariance_path(&post, &sched, &cfg).unwrap();
    for s in 0..3 {
        let c: f64 = (0..s).map(|l| rates[l] * cfg.batch_sizes[l]).sum();
        for a in 0..k {
            let lam = DMatrix::from_row_slice(d, d, post.precision(a));
            let want = (lam + &info * c).try_inverse().unwrap();
            for (got, w) in path.block(s, a).iter().zip(want.transpose().iter()) {
                assert!((got - w).abs() < 1e-10, "offset {s} item {a}");
            }
        }
    }
}

#[test]
fn single_precision_agrees_with_double() {
    let (k, d) = (2, 2);
    let users = vec![vec![0.5, -0.3], vec![0.1, 0.9], vec![-0.7, 0.2]];
    let path = |rates: &[f64]| {
        let post = make_prior(
            k,
            d,
            &[0.0; 2],
            &PriorVariance::Scalar(1.0),
            CovarianceMode::Diagonal,
        )
        .unwrap();
        let cfg = ObjectiveConfig {
            design: population_design(&users, k, 1.0, CovarianceMode::Diagonal).unwrap(),
            user_sample: users.clone(),
            batch_sizes: vec![30.0, 60.0],
            paths: 1,
            sqrt_floor: 1e-12,
            seed: 0,
        };
        let s = ExplorationSchedule::new(rates.to_vec(), 1, &RateBox::unit()).unwrap();
        covariance_path(&post, &s, &cfg).unwrap().variances(1, 0)
    };
    let users32: Vec<Vec<f32>> = users
        .iter()
        .map(|u| u.iter().map(|v| *v as f32).collect())
        .collect();
    let post32: GaussianPosterior<f32> = make_prior(
        k,
        d,
        &[0.0f32; 2],
        &PriorVariance::Scalar(1.0f32),
        CovarianceMode::Diagonal,
    )
    .unwrap();
    let cfg32 = ObjectiveConfig {
        design: population_design(&users32, k, 1.0f32, CovarianceMode::Diagonal).unwrap(),
        user_sample: users32.clone(),
        batch_sizes: vec![30.0f32, 60.0],
        paths: 1,
        sqrt_floor: 1e-6,
        seed: 0,
    };
    let s32 = ExplorationSchedule::new(vec![0.4f32, 0.2], 1, &RateBox::unit()).unwrap();
    let single = covariance_path(&post32, &s32, &cfg32)
        .unwrap()
        .variances(1, 0);
    for (a, b) in single.iter().zip(path(&[0.4, 0.2])) {
        assert!((*a as f64 - b).abs() < 1e-6);
    }
}
