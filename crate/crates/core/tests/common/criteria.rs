//! Checks shared by the topical test files and the acceptance harness. Each
//! returns an [`Outcome`] instead of panicking so the harness can report
//! every criterion on its own line.

use std::path::Path;

use autoweight::analysis::{loss_gap, negative_gap_fraction, run_baseline_uniform, weight_means};
use autoweight::data::generate;
use autoweight::episode::*;
use autoweight::exec::Execution;
use autoweight::features::{PhaseDescriptor, FEATURE_COUNT};
use autoweight::nn::Matrix;
use autoweight::search::{replay_policy, search, write_report, PolicyArtifact, SearchConfig};
use autoweight::seed;
use autoweight::strategy::*;
use rand::Rng;

use super::gradcheck;

#[derive(Debug)]
pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

pub fn gradient_suite(cases: u64) -> Outcome {
    let checks: [(&str, f64); 5] = [
        ("classifier", gradcheck::worst_over(cases, |c| gradcheck::classifier_case(c, true))),
        ("weighted-loss", gradcheck::worst_over(cases, |c| gradcheck::classifier_case(c, false))),
        ("actor", gradcheck::worst_over(cases, gradcheck::actor_case)),
        ("critic", gradcheck::worst_over(cases, gradcheck::critic_case)),
        ("focal", gradcheck::worst_over(cases, gradcheck::focal_case)),
    ];
    let detail = checks
        .iter()
        .map(|(n, e)| format!("{n} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    Outcome::new(
        checks.iter().all(|(_, e)| *e < 1e-4),
        format!("{cases} cases each, max rel err: {detail}"),
    )
}

/// Zero policy over a full default-length episode.
pub fn null_policy_episode() -> Outcome {
    let cfg = EpisodeConfig {
        log_batches: true,
        ..EpisodeConfig::default()
    };
    let data = generate(&super::small_dataset(21, 0.3)).unwrap();
    let mut model =
        StrategyModel::new(StrategyConfig::default(), cfg.stages, &mut seed::rng(2)).unwrap();
    model.zero_actor();
    let (trace, transitions) = run_episode(
        &cfg,
        Policy::Strategy(&model),
        &data,
        EpisodeSeeds::from_seed(8),
        Mode::Search,
        0.0,
    )
    .unwrap();
    let identical = trace
        .batches
        .iter()
        .filter(|b| b.checksum_target == b.checksum_reference)
        .count();
    let zero_rewards = transitions.iter().filter(|t| t.reward == 0.0).count();
    Outcome::new(
        identical == cfg.total_steps()
            && trace.batches.len() == cfg.total_steps()
            && transitions.len() == cfg.post_warmup_stages()
            && zero_rewards == transitions.len(),
        format!(
            "{identical}/{} steps bit-identical, {zero_rewards}/{} rewards exactly 0",
            cfg.total_steps(),
            transitions.len()
        ),
    )
}

/// Random `(f, theta)` pairs drawn at several magnitudes, including extremes.
pub fn weight_range(evaluations: usize) -> Outcome {
    let mut rng = seed::rng(0xA6);
    // Up to 1e150 so every product stays finite; larger values can make the
    // argument an indeterminate inf - inf.
    let scales = [1e-3, 1.0, 10.0, 1e3, 1e8, 1e150];
    let chunk = 1000;
    let mut outside = 0usize;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..evaluations.div_ceil(chunk) {
        let scale = scales[i % scales.len()];
        let f = Matrix::from_vec(
            chunk,
            FEATURE_COUNT,
            (0..chunk * FEATURE_COUNT).map(|_| rng.random_range(-1.0..1.0) * scale).collect(),
        )
        .unwrap();
        let theta: Vec<f64> = (0..THETA_DIM).map(|_| rng.random_range(-1.0..1.0) * scale).collect();
        for k in weight(&f, &theta) {
            lo = lo.min(k);
            hi = hi.max(k);
            if !(k > 0.0 && k < 2.0) {
                outside += 1;
            }
        }
    }
    let f = Matrix::from_vec(1, FEATURE_COUNT, vec![3.0, -7.0, 1e6, 0.5]).unwrap();
    let neutral = weight(&f, &[0.0; THETA_DIM])[0];
    Outcome::new(
        outside == 0 && neutral == 1.0,
        format!("{evaluations} evaluations, range [{lo:e}, {hi}], {outside} outside, K(theta=0) = {neutral}"),
    )
}

pub fn random_transition(rng: &mut impl Rng, stages: usize, reward: f64) -> Transition {
    let stage = rng.random_range(1..=stages);
    let phase = |stage: usize, rng: &mut dyn rand::RngCore| PhaseDescriptor {
        stage,
        l_smooth: rng.random_range(0.0..2.0),
        acc_smooth: rng.random_range(0.0..1.0),
        loss_observed: true,
        acc_observed: true,
    };
    Transition {
        s: phase(stage, rng),
        theta: (0..THETA_DIM).map(|_| rng.random_range(-1.0..1.0)).collect(),
        reward,
        s_next: phase((stage + 1).min(stages), rng),
        done: stage == stages,
    }
}

pub fn fill_buffer(n: usize, stages: usize, reward: f64, seed_value: u64) -> ReplayBuffer {
    let mut rng = seed::rng(seed_value);
    let mut buffer = ReplayBuffer::new(n.max(1));
    for _ in 0..n {
        buffer.push(random_transition(&mut rng, stages, reward));
    }
    buffer
}

/// Per-transition step counts for one update over `n` transitions.
pub fn fdu_coverage(n: usize, epochs: usize, workers: usize) -> Outcome {
    let cfg = StrategyConfig {
        epochs,
        ..StrategyConfig::default()
    };
    let mut model = StrategyModel::new(cfg, 20, &mut seed::rng(7)).unwrap();
    let buffer = fill_buffer(n, 20, 0.1, 8);
    let mut shufflers: Vec<_> = (0..workers as u64).map(|w| seed::rng(100 + w)).collect();
    let stats = fdu_update(&mut model, &buffer, &mut shufflers, &MeanCombiner, Execution::Sequential)
        .unwrap();
    let expected = (epochs * workers) as u32;
    let ok = |v: &[u32]| v.len() == n && v.iter().all(|&c| c == expected);
    let range = |v: &[u32]| {
        (
            v.iter().copied().min().unwrap_or(0),
            v.iter().copied().max().unwrap_or(0),
        )
    };
    Outcome::new(
        ok(&stats.critic_visits) && ok(&stats.actor_visits),
        format!(
            "{n} transitions, En={epochs}, {workers} worker(s): critic visits {:?}, actor visits {:?} (min, max), expected {expected}",
            range(&stats.critic_visits),
            range(&stats.actor_visits)
        ),
    )
}

/// Constant-reward regression with `gamma = 0`: every prediction must reach
/// 0.5 within 1e-2 in at most `max_epochs` single-epoch updates. The critic
/// learning rate is raised to 1e-3 so the budget is about the regression,
/// not the default step size.
pub fn critic_regression(max_epochs: usize) -> Outcome {
    let cfg = StrategyConfig {
        gamma: 0.0,
        epochs: 1,
        critic_lr: 1e-3,
        ..StrategyConfig::default()
    };
    let mut model = StrategyModel::new(cfg, 20, &mut seed::rng(11)).unwrap();
    let buffer = fill_buffer(64, 20, 0.5, 12);
    let mut shufflers = vec![seed::rng(13)];
    let worst = |m: &StrategyModel| {
        buffer
            .iter()
            .map(|t| {
                let s = m.state_vector(&t.s).unwrap();
                (m.critic_forward(&s, &t.theta).unwrap() - 0.5).abs()
            })
            .fold(0.0, f64::max)
    };
    let mut epochs = 0;
    let mut err = worst(&model);
    while epochs < max_epochs && err >= 1e-2 {
        fdu_update(&mut model, &buffer, &mut shufflers, &MeanCombiner, Execution::Sequential)
            .unwrap();
        epochs += 1;
        err = worst(&model);
    }
    Outcome::new(
        err < 1e-2,
        format!("max |Q - 0.5| = {err:.2e} after {epochs} epochs (limit {max_epochs})"),
    )
}

/// `compute_reward` against an independent evaluation of the formula.
pub fn reward_formula(cases: usize) -> Outcome {
    let mut rng = seed::rng(0xA10);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let stages = rng.random_range(1..=50);
        let stage = rng.random_range(1..=stages);
        let k = rng.random_range(-3.0..3.0);
        let s = rng.random_range(-5.0..5.0);
        let (at, ar) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        let expected = f64::exp(k * (stage as f64) / (stages as f64)) * s * (at - ar);
        let got = compute_reward(at, ar, stage, stages, k, s);
        worst = worst.max((got - expected).abs());
    }
    Outcome::new(
        worst <= 1e-12,
        format!("{cases} random inputs, max abs diff {worst:e}"),
    )
}

/// Runs `config` twice into separate directories and compares the exported
/// schedule and every checkpoint byte-for-byte.
pub fn search_reproducible(config: &SearchConfig, scratch: &Path) -> Outcome {
    let mut files = Vec::new();
    for run in 0..2 {
        let report = search(config.clone()).unwrap();
        let layout = write_report(&report, &scratch.join(format!("run{run}"))).unwrap();
        let mut paths = vec![layout.schedule(), layout.final_strategy()];
        paths.extend(report.checkpoints.iter().map(|(r, _)| layout.checkpoint(*r)));
        files.push(
            paths
                .iter()
                .map(|p| std::fs::read(p).unwrap())
                .collect::<Vec<_>>(),
        );
    }
    Outcome::new(
        files[0] == files[1],
        format!("{} artifacts compared (schedule, final model, checkpoints)", files[0].len()),
    )
}

/// Search followed by replay of the exported schedule, against the uniform
/// baseline on the same fresh seeds.
pub struct ReplayStudy {
    pub config: SearchConfig,
    pub seeds: Vec<u64>,
    pub baseline: Vec<f64>,
    pub replays: Vec<EpisodeTrace>,
    pub search_secs: f64,
}

impl ReplayStudy {
    pub fn run(mut config: SearchConfig, seeds: &[u64]) -> Self {
        config.execution = Execution::Parallel;
        let t = std::time::Instant::now();
        let report = search(config.clone()).unwrap();
        let search_secs = t.elapsed().as_secs_f64();
        let data = generate(&config.dataset).unwrap();
        let artifact = PolicyArtifact::Static(report.schedule.clone());
        let replays = seeds
            .iter()
            .map(|&s| {
                replay_policy(
                    &artifact,
                    &config.episode,
                    &config.episode.classifier,
                    &data,
                    EpisodeSeeds::from_seed(s),
                )
                .unwrap()
            })
            .collect();
        let baseline = run_baseline_uniform(&config.episode, &data, seeds)
            .unwrap()
            .runs
            .iter()
            .map(|r| r.run.test_acc.unwrap_or(0.0))
            .collect();
        Self {
            config,
            seeds: seeds.to_vec(),
            baseline,
            replays,
            search_secs,
        }
    }

    pub fn mean_replay_acc(&self) -> f64 {
        let accs: Vec<f64> = self
            .replays
            .iter()
            .map(|t| t.test_acc_target.unwrap_or(0.0))
            .collect();
        accs.iter().sum::<f64>() / accs.len() as f64
    }

    pub fn mean_baseline_acc(&self) -> f64 {
        self.baseline.iter().sum::<f64>() / self.baseline.len() as f64
    }

    pub fn accuracy_gain(&self) -> Outcome {
        let (policy, base) = (self.mean_replay_acc(), self.mean_baseline_acc());
        let gain = 100.0 * (policy - base);
        Outcome::new(
            gain >= 2.0,
            format!(
                "replay {:.2}% vs uniform {:.2}% over {} seeds: {gain:+.2} points (search {:.0}s)",
                100.0 * policy,
                100.0 * base,
                self.seeds.len(),
                self.search_secs
            ),
        )
    }

    /// Per post-warmup stage: does a majority of replays have a negative gap?
    /// Passes when that holds in at least 70% of those stages.
    pub fn negative_loss_gap(&self) -> Outcome {
        let warmup = self.config.episode.warmup_stages;
        let series: Vec<_> = self.replays.iter().map(loss_gap).collect();
        let stages = self.config.episode.stages;
        let majority = (warmup..stages)
            .filter(|&i| 2 * series.iter().filter(|s| s.gaps[i] < 0.0).count() > series.len())
            .count();
        let frac = majority as f64 / (stages - warmup) as f64;
        let per_seed: Vec<String> = series
            .iter()
            .map(|s| format!("{:.2}", negative_gap_fraction(s, warmup)))
            .collect();
        Outcome::new(
            frac >= 0.7,
            format!(
                "{majority}/{} post-warmup stages negative by majority ({:.0}%); per-seed fractions [{}]",
                stages - warmup,
                100.0 * frac,
                per_seed.join(", ")
            ),
        )
    }

    /// Minority mean weight above the others' in every final-quarter stage,
    /// where each stage is decided by majority over replays.
    pub fn minority_upweighted(&self, minority: &[usize]) -> Outcome {
        let stages = self.config.episode.stages;
        let first = stages - stages / 4;
        let series: Vec<_> = self
            .replays
            .iter()
            .map(|t| weight_means(t, minority).unwrap())
            .collect();
        let votes: Vec<usize> = (first..stages)
            .map(|i| {
                series
                    .iter()
                    .filter(|s| matches!((s.minority[i], s.other[i]), (Some(m), Some(o)) if m > o))
                    .count()
            })
            .collect();
        let last = |s: &autoweight::analysis::WeightMeanSeries| {
            format!(
                "{:.3}/{:.3}",
                s.minority[stages - 1].unwrap_or(f64::NAN),
                s.other[stages - 1].unwrap_or(f64::NAN)
            )
        };
        Outcome::new(
            votes.iter().all(|&v| 2 * v > series.len()),
            format!(
                "stages {}..={stages}: seeds up-weighting the minority {votes:?} of {}; last-stage minority/other [{}]",
                first + 1,
                series.len(),
                series.iter().map(last).collect::<Vec<_>>().join(", ")
            ),
        )
    }
}
