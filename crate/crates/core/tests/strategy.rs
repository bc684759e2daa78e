mod common;

use autoweight::exec::Execution;
use autoweight::features::{PhaseDescriptor, FEATURE_COUNT};
use autoweight::nn::Matrix;
use autoweight::seed;
use autoweight::strategy::*;
use common::criteria::*;
use proptest::prelude::*;

#[test]
fn every_transition_gets_en_steps_of_each_kind() {
    let out = fdu_coverage(100, 4, 1);
    assert!(out.pass, "{}", out.detail);
}

#[test]
fn visits_sum_over_workers() {
    let out = fdu_coverage(37, 2, 3);
    assert!(out.pass, "{}", out.detail);
}

#[test]
fn single_transition_three_epochs() {
    let out = fdu_coverage(1, 3, 1);
    assert!(out.pass, "{}", out.detail);
}

#[test]
fn critic_learns_a_constant_reward() {
    let out = critic_regression(500);
    assert!(out.pass, "{}", out.detail);
}

#[test]
fn weights_stay_in_open_interval() {
    let out = weight_range(200_000);
    assert!(out.pass, "{}", out.detail);
}

#[test]
fn extreme_arguments_saturate_inside_the_interval() {
    let f = Matrix::from_vec(1, FEATURE_COUNT, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
    for x in [-1e308, -800.0, -40.0, 40.0, 800.0, 1e308] {
        let k = weight(&f, &[x, 0.0, 0.0, 0.0, 0.0])[0];
        assert!(k > 0.0 && k < 2.0, "x={x}: K={k}");
    }
}

#[test]
fn buffer_evicts_oldest_first() {
    let mut b = ReplayBuffer::new(3);
    let mut rng = seed::rng(0);
    for i in 0..5 {
        b.push(random_transition(&mut rng, 20, i as f64));
    }
    let rewards: Vec<f64> = b.iter().map(|t| t.reward).collect();
    assert_eq!(rewards, vec![2.0, 3.0, 4.0]);
    assert_eq!(b.total_pushed(), 5);
}

#[test]
fn push_round_keeps_worker_order() {
    let mut rng = seed::rng(1);
    let per_worker: Vec<Vec<Transition>> = (0..3)
        .map(|w| (0..2).map(|j| random_transition(&mut rng, 20, (10 * w + j) as f64)).collect())
        .collect();
    let mut b = ReplayBuffer::new(10);
    b.push_round(per_worker);
    let rewards: Vec<f64> = b.iter().map(|t| t.reward).collect();
    assert_eq!(rewards, vec![0.0, 1.0, 10.0, 11.0, 20.0, 21.0]);
}

#[test]
fn checkpoint_roundtrip_is_byte_exact() {
    let mut model = StrategyModel::new(StrategyConfig::default(), 20, &mut seed::rng(3)).unwrap();
    let buffer = fill_buffer(40, 20, 0.2, 4);
    fdu_update(&mut model, &buffer, &mut [seed::rng(5)], &MeanCombiner, Execution::Sequential)
        .unwrap();
    let bytes = model.to_bytes().unwrap();
    let back = StrategyModel::from_bytes(&bytes).unwrap();
    assert_eq!(back.to_bytes().unwrap(), bytes);
    assert_eq!(back, model);
    let phase = PhaseDescriptor {
        stage: 9,
        l_smooth: 0.8,
        acc_smooth: 0.6,
        loss_observed: true,
        acc_observed: true,
    };
    assert_eq!(back.policy(&phase).unwrap(), model.policy(&phase).unwrap());
    for cut in [0, 10, bytes.len() / 2, bytes.len() - 1] {
        assert!(StrategyModel::from_bytes(&bytes[..cut]).is_err(), "cut at {cut}");
    }
}

#[test]
fn checkpoint_file_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    let model = StrategyModel::new(StrategyConfig::default(), 7, &mut seed::rng(9)).unwrap();
    model.save(&path).unwrap();
    assert_eq!(StrategyModel::load(&path).unwrap(), model);
}

#[test]
fn bounded_actor_respects_the_bound() {
    let cfg = StrategyConfig {
        theta_bound: Some(2.5),
        final_layer_scale: 5.0,
        ..StrategyConfig::default()
    };
    let model = StrategyModel::new(cfg, 20, &mut seed::rng(6)).unwrap();
    let mut rng = seed::rng(7);
    for _ in 0..200 {
        let t = random_transition(&mut rng, 20, 0.0);
        let theta = model.policy(&t.s).unwrap();
        assert!(theta.iter().all(|v| v.abs() <= 2.5), "{theta:?}");
    }
}

#[test]
fn fixed_bias_zeroes_the_last_coefficient() {
    let cfg = StrategyConfig {
        learn_bias: false,
        ..StrategyConfig::default()
    };
    let model = StrategyModel::new(cfg, 20, &mut seed::rng(8)).unwrap();
    assert_eq!(model.policy(&PhaseDescriptor::new(5)).unwrap()[FEATURE_COUNT], 0.0);
}

#[test]
fn exploration_noise_has_the_requested_scale() {
    let mut rng = seed::rng(10);
    let n = 20_000;
    let samples: Vec<f64> = (0..n).flat_map(|_| explore(&[0.0; THETA_DIM], 0.3, &mut rng)).collect();
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / samples.len() as f64;
    assert!(mean.abs() < 0.01, "mean {mean}");
    assert!((var.sqrt() - 0.3).abs() < 0.005, "std {}", var.sqrt());
    assert_eq!(explore(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.0, &mut rng), vec![1.0, 2.0, 3.0, 4.0, 5.0]);
}

#[test]
fn exploration_schedule_anneals_linearly() {
    let s = ExplorationSchedule {
        sigma_start: 0.5,
        sigma_min: 0.1,
    };
    assert_eq!(s.sigma(0, 10), 0.5);
    assert!((s.sigma(5, 10) - 0.3).abs() < 1e-15);
    assert!((s.sigma(10, 10) - 0.1).abs() < 1e-15);
}

proptest! {
    #[test]
    fn weight_is_in_open_interval(
        f in prop::collection::vec(-1e12f64..1e12, FEATURE_COUNT),
        theta in prop::collection::vec(-1e12f64..1e12, THETA_DIM),
    ) {
        let m = Matrix::from_vec(1, FEATURE_COUNT, f).unwrap();
        let k = weight(&m, &theta)[0];
        prop_assert!(k > 0.0 && k < 2.0);
    }

    #[test]
    fn weight_is_monotone_in_the_bias(
        f in prop::collection::vec(-3f64..3.0, FEATURE_COUNT),
        theta in prop::collection::vec(-3f64..3.0, THETA_DIM),
        step in 1e-3f64..1.0,
    ) {
        let m = Matrix::from_vec(1, FEATURE_COUNT, f).unwrap();
        let mut up = theta.clone();
        up[FEATURE_COUNT] += step;
        prop_assert!(weight(&m, &up)[0] >= weight(&m, &theta)[0]);
    }

    #[test]
    fn weight_matches_one_plus_tanh(
        f in prop::collection::vec(-3f64..3.0, FEATURE_COUNT),
        theta in prop::collection::vec(-3f64..3.0, THETA_DIM),
    ) {
        let m = Matrix::from_vec(1, FEATURE_COUNT, f.clone()).unwrap();
        let x: f64 = f.iter().zip(&theta).map(|(a, b)| a * b).sum::<f64>() + theta[FEATURE_COUNT];
        prop_assert!((weight(&m, &theta)[0] - (1.0 + x.tanh())).abs() < 1e-14);
    }
}
