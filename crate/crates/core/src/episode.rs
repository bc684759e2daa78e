//! One training episode: a target and a reference classifier trained in
//! lock-step on identical batches, the target under stage-wise sample
//! weighting, the reference unweighted. Rewards compare their validation
//! accuracy at the end of every post-warmup stage.

use serde::{Deserialize, Serialize};

use crate::data::{BatchStream, Dataset, Splits};
use crate::error::{Error, Result};
use crate::features::{
    assemble_features, smooth_accuracy, update_smoothed, FeatureConfig, PhaseDescriptor, SmoothingConfig,
};
use crate::nn::{ClassifierNet, ClassifierSpec, LossKind, Optimizer, OptimizerSpec};
use crate::seed::{self, purpose, Rng};
use crate::strategy::{explore, weight, StrategyModel, Transition, THETA_DIM};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    /// Number of stages `T_max`.
    pub stages: usize,
    /// Iterations per stage `t_max`.
    pub steps_per_stage: usize,
    pub batch_size: usize,
    pub warmup_stages: usize,
    pub classifier: ClassifierSpec,
    pub optimizer: OptimizerSpec,
    /// Stages (1-based) from which the learning rate is multiplied by `lr_decay_factor`.
    pub lr_decay_stages: Vec<usize>,
    pub lr_decay_factor: f64,
    /// Reward scale-adjustment rate `k`.
    pub reward_k: f64,
    /// Reward scale `s`.
    pub reward_s: f64,
    /// Reward assigned to the transition of a diverged episode.
    pub failure_penalty: f64,
    pub features: FeatureConfig,
    pub smoothing: SmoothingConfig,
    /// Keep per-batch losses, weights and parameter checksums in the trace.
    pub log_batches: bool,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            stages: 20,
            steps_per_stage: 25,
            batch_size: 32,
            warmup_stages: 4,
            classifier: ClassifierSpec::default(),
            optimizer: OptimizerSpec::sgd(0.1, 0.9, 2e-5),
            lr_decay_stages: vec![10, 13, 16],
            lr_decay_factor: 0.1,
            reward_k: 1.0,
            reward_s: 1.0,
            failure_penalty: -1.0,
            features: FeatureConfig::default(),
            smoothing: SmoothingConfig::default(),
            log_batches: false,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |f: &str, r: &str| Err(Error::config(format!("episode.{f}"), r));
        if self.stages == 0 {
            return err("stages", "must be positive");
        }
        if self.warmup_stages >= self.stages {
            return err("warmup_stages", "must be smaller than stages");
        }
        if self.steps_per_stage == 0 {
            return err("steps_per_stage", "must be positive");
        }
        if self.batch_size == 0 {
            return err("batch_size", "must be positive");
        }
        if !(self.lr_decay_factor > 0.0) || self.lr_decay_stages.contains(&0) {
            return err("lr_decay_stages", "stages are 1-based and the factor positive");
        }
        if !self.reward_k.is_finite() || !self.reward_s.is_finite() {
            return err("reward_k", "reward constants must be finite");
        }
        if !self.failure_penalty.is_finite() {
            return err("failure_penalty", "must be finite");
        }
        if !(0.0..1.0).contains(&self.smoothing.loss_beta)
            || !(0.0..1.0).contains(&self.smoothing.acc_beta)
        {
            return err("smoothing", "betas must lie in [0, 1)");
        }
        self.classifier.validate()?;
        self.optimizer.validate("episode.optimizer")
    }

    /// Total iterations `N = T_max * t_max`.
    pub fn total_steps(&self) -> usize {
        self.stages * self.steps_per_stage
    }

    /// Classifier learning rate during `stage`.
    pub fn learning_rate(&self, stage: usize) -> f64 {
        let decays = self.lr_decay_stages.iter().filter(|&&s| s <= stage).count();
        self.optimizer.learning_rate * self.lr_decay_factor.powi(decays as i32)
    }

    pub fn post_warmup_stages(&self) -> usize {
        self.stages - self.warmup_stages
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Exploration noise on, transitions consumed by the search.
    Search,
    /// Deterministic policy, no noise.
    Eval,
}

/// Seeds of the three randomness sources of one episode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeSeeds {
    pub init: u64,
    pub data_order: u64,
    pub exploration: u64,
}

impl EpisodeSeeds {
    /// Pure function of `(base, worker, round)`.
    pub fn derive(base: u64, worker: u64, round: u64) -> Self {
        Self {
            init: seed::derive(base, &[purpose::INIT, worker, round]),
            data_order: seed::derive(base, &[purpose::DATA_ORDER, worker, round]),
            exploration: seed::derive(base, &[purpose::EXPLORATION, worker, round]),
        }
    }

    /// Seeds for a standalone run (baselines, replays) keyed by one integer.
    pub fn from_seed(seed: u64) -> Self {
        Self::derive(seed, u64::MAX, 0)
    }
}

/// Per-stage `theta` values for `T_max` stages (rows for warmup stages are unused).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaticSchedule {
    pub thetas: Vec<Vec<f64>>,
}

impl StaticSchedule {
    pub fn zeros(stages: usize) -> Self {
        Self {
            thetas: vec![vec![0.0; THETA_DIM]; stages],
        }
    }

    pub fn stages(&self) -> usize {
        self.thetas.len()
    }
}

/// Source of `theta_T` at stage starts.
#[derive(Clone, Copy, Debug)]
pub enum Policy<'a> {
    Strategy(&'a StrategyModel),
    Static(&'a StaticSchedule),
    /// `theta = 0`, i.e. uniform weights.
    Null,
}

impl Policy<'_> {
    fn theta(&self, phase: &PhaseDescriptor) -> Result<Vec<f64>> {
        match self {
            Policy::Strategy(m) => m.policy(phase),
            Policy::Static(s) => Ok(s.thetas[phase.stage - 1].clone()),
            Policy::Null => Ok(vec![0.0; THETA_DIM]),
        }
    }

    fn fixed_bias(&self) -> bool {
        matches!(self, Policy::Strategy(m) if !m.config.learn_bias)
    }

    fn check(&self, cfg: &EpisodeConfig) -> Result<()> {
        match self {
            Policy::Strategy(m) if m.stages() != cfg.stages => Err(Error::config(
                "policy",
                format!("strategy model has {} stages, episode {}", m.stages(), cfg.stages),
            )),
            Policy::Static(s) if s.stages() != cfg.stages => Err(Error::config(
                "policy",
                format!("static schedule has {} stages, episode {}", s.stages(), cfg.stages),
            )),
            Policy::Static(s) if s.thetas.iter().any(|t| t.len() != THETA_DIM) => {
                Err(Error::config("policy", "schedule rows need 5 entries"))
            }
            _ => Ok(()),
        }
    }
}

/// Position of iteration `t` (1-based) within its stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StagePosition {
    WithinStage,
    Boundary,
}

pub fn stage_schedule(t: usize, steps_per_stage: usize) -> StagePosition {
    assert!(t >= 1 && steps_per_stage >= 1);
    if t.is_multiple_of(steps_per_stage) {
        StagePosition::Boundary
    } else {
        StagePosition::WithinStage
    }
}

/// `exp(k * T / T_max) * s * (acc_target - acc_reference)`.
pub fn compute_reward(
    acc_target: f64,
    acc_reference: f64,
    stage: usize,
    stages: usize,
    k: f64,
    s: f64,
) -> f64 {
    (k * stage as f64 / stages as f64).exp() * s * (acc_target - acc_reference)
}

/// Fraction of argmax-correct predictions on `split`.
pub fn evaluate_accuracy(net: &ClassifierNet, split: &Dataset) -> Result<f64> {
    if split.is_empty() {
        return Err(Error::InvalidInput("evaluation split is empty".into()));
    }
    let predictions = net.predict(&split.inputs())?;
    let correct = predictions.iter().zip(&split.y).filter(|(p, y)| p == y).count();
    Ok(correct as f64 / split.len() as f64)
}

/// Aggregates of one stage of an episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    pub acc_target: f64,
    pub acc_reference: f64,
    /// `None` during warmup.
    pub reward: Option<f64>,
    pub theta: Vec<f64>,
    /// Mean over the stage's batches of `mean_i(K_i l_i^target) - mean_i(l_i^reference)`.
    pub mean_loss_gap: f64,
    /// Per observed class: mean weight (`None` when the class never appeared).
    pub weight_mean: Vec<Option<f64>>,
    pub weight_count: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchLog {
    pub stage: usize,
    pub step: usize,
    pub ids: Vec<u64>,
    pub labels: Vec<usize>,
    pub weights: Vec<f64>,
    pub loss_target: Vec<f64>,
    pub loss_reference: Vec<f64>,
    /// Parameter checksums after the step.
    pub checksum_target: u64,
    pub checksum_reference: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub episode: u64,
    pub worker: usize,
    pub mode: Mode,
    pub failed: bool,
    pub stages: Vec<StageRecord>,
    pub batches: Vec<BatchLog>,
    pub test_acc_target: Option<f64>,
    pub test_acc_reference: Option<f64>,
}

impl EpisodeTrace {
    pub fn final_acc_target(&self) -> Option<f64> {
        self.stages.last().map(|r| r.acc_target)
    }
}

struct StageOutcome {
    gap_sum: f64,
    batches: usize,
    weight_sum: Vec<f64>,
    weight_count: Vec<usize>,
}

/// A worker's episode, advanced one stage at a time so that the search can
/// hold a barrier at every stage boundary.
pub struct Episode {
    cfg: EpisodeConfig,
    mode: Mode,
    target: ClassifierNet,
    reference: ClassifierNet,
    opt_target: Optimizer,
    opt_reference: Optimizer,
    stream: BatchStream,
    explore_rng: Rng,
    phase: PhaseDescriptor,
    next_stage: usize,
    failed: bool,
    trace: EpisodeTrace,
}

impl Episode {
    pub fn new(
        cfg: &EpisodeConfig,
        data: &Splits,
        seeds: EpisodeSeeds,
        mode: Mode,
        episode: u64,
        worker: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        check_data(cfg, data)?;
        let target = ClassifierNet::new(cfg.classifier.clone(), &mut seed::rng(seeds.init))?;
        let reference = target.copy_parameters();
        let n = target.params().len();
        Ok(Self {
            mode,
            opt_target: Optimizer::new(cfg.optimizer.clone(), n),
            opt_reference: Optimizer::new(cfg.optimizer.clone(), n),
            stream: BatchStream::new(data.train.len(), cfg.batch_size, seeds.data_order)?,
            explore_rng: seed::rng(seeds.exploration),
            phase: PhaseDescriptor::new(1),
            next_stage: 1,
            failed: false,
            trace: EpisodeTrace {
                episode,
                worker,
                mode,
                failed: false,
                stages: Vec::with_capacity(cfg.stages),
                batches: Vec::new(),
                test_acc_target: None,
                test_acc_reference: None,
            },
            cfg: cfg.clone(),
            target,
            reference,
        })
    }

    pub fn is_finished(&self) -> bool {
        self.failed || self.next_stage > self.cfg.stages
    }

    pub fn failed(&self) -> bool {
        self.failed
    }

    /// Stage that the next call to [`Episode::run_stage`] executes.
    pub fn next_stage(&self) -> usize {
        self.next_stage
    }

    pub fn phase(&self) -> &PhaseDescriptor {
        &self.phase
    }

    pub fn target(&self) -> &ClassifierNet {
        &self.target
    }

    pub fn reference(&self) -> &ClassifierNet {
        &self.reference
    }

    pub fn trace(&self) -> &EpisodeTrace {
        &self.trace
    }

    /// Runs one stage. Returns the emitted transition for post-warmup stages
    /// (or a failure transition when training diverges), `None` otherwise.
    /// `sigma` is the exploration scale and is ignored in eval mode.
    pub fn run_stage(
        &mut self,
        policy: Policy<'_>,
        data: &Splits,
        sigma: f64,
    ) -> Result<Option<Transition>> {
        if self.is_finished() {
            return Ok(None);
        }
        policy.check(&self.cfg)?;
        let stage = self.next_stage;
        let weighted = stage > self.cfg.warmup_stages;
        let s_t = self.phase.with_stage(stage);
        let theta = if weighted {
            let mut theta = policy.theta(&s_t)?;
            if self.mode == Mode::Search && sigma > 0.0 {
                theta = explore(&theta, sigma, &mut self.explore_rng);
                if policy.fixed_bias() {
                    theta[THETA_DIM - 1] = 0.0;
                }
            }
            theta
        } else {
            vec![0.0; THETA_DIM]
        };

        let lr = self.cfg.learning_rate(stage);
        self.opt_target.set_learning_rate(lr);
        self.opt_reference.set_learning_rate(lr);

        let outcome = match self.train_stage(stage, weighted, &theta, data) {
            Ok(o) => o,
            Err(Error::NonFinite(_)) => return Ok(self.fail(stage, s_t, theta, weighted)),
            Err(e) => return Err(e),
        };

        let acc_target = evaluate_accuracy(&self.target, &data.val)?;
        let acc_reference = evaluate_accuracy(&self.reference, &data.val)?;
        self.phase = smooth_accuracy(&self.phase, acc_target, &self.cfg.smoothing);
        let reward = weighted.then(|| {
            compute_reward(
                acc_target,
                acc_reference,
                stage,
                self.cfg.stages,
                self.cfg.reward_k,
                self.cfg.reward_s,
            )
        });
        let weight_mean = outcome
            .weight_sum
            .iter()
            .zip(&outcome.weight_count)
            .map(|(&s, &n)| (n > 0).then(|| s / n as f64))
            .collect();
        self.trace.stages.push(StageRecord {
            stage,
            acc_target,
            acc_reference,
            reward,
            theta: theta.clone(),
            mean_loss_gap: outcome.gap_sum / outcome.batches as f64,
            weight_mean,
            weight_count: outcome.weight_count,
        });
        self.next_stage += 1;
        let done = stage == self.cfg.stages;
        Ok(reward.map(|reward| Transition {
            s: s_t,
            theta,
            reward,
            s_next: self.phase.with_stage((stage + 1).min(self.cfg.stages)),
            done,
        }))
    }

    fn train_stage(
        &mut self,
        stage: usize,
        weighted: bool,
        theta: &[f64],
        data: &Splits,
    ) -> Result<StageOutcome> {
        let classes = self.cfg.classifier.class_count;
        let mut out = StageOutcome {
            gap_sum: 0.0,
            batches: 0,
            weight_sum: vec![0.0; classes],
            weight_count: vec![0; classes],
        };
        for step in 1..=self.cfg.steps_per_stage {
            let positions = self.stream.next_batch();
            let (x, y) = data.train.gather(&positions);
            let b = y.len() as f64;

            let ref_cache = self.reference.forward_cached(&x)?;
            let ref_sm = ClassifierNet::per_sample_loss(ref_cache.output(), &y)?;
            let ones = vec![1.0; y.len()];
            let ref_grad = self.reference.backward_from_cache(&ref_cache, &ref_sm, &y, &ones)?;

            let cache = self.target.forward_cached(&x)?;
            let sm = ClassifierNet::per_sample_loss(cache.output(), &y)?;
            let mean_loss = sm.losses.iter().sum::<f64>() / b;
            if !mean_loss.is_finite() {
                return Err(Error::NonFinite(format!("target loss at stage {stage}")));
            }
            let weights = if weighted {
                let f = assemble_features(
                    &sm.losses,
                    &sm.probs,
                    cache.output(),
                    &y,
                    classes,
                    &self.cfg.features,
                )?;
                weight(&f, theta)
            } else {
                ones
            };
            let grad = self.target.backward_from_cache(&cache, &sm, &y, &weights)?;

            self.opt_reference.step(&mut self.reference.params_mut().values, &ref_grad.values)?;
            self.opt_target.step(&mut self.target.params_mut().values, &grad.values)?;
            self.phase = update_smoothed(&self.phase, mean_loss, None, &self.cfg.smoothing);

            let weighted_loss: f64 =
                weights.iter().zip(&sm.losses).map(|(w, l)| w * l).sum::<f64>() / b;
            let ref_loss = ref_sm.losses.iter().sum::<f64>() / b;
            out.gap_sum += weighted_loss - ref_loss;
            out.batches += 1;
            for (&c, &w) in y.iter().zip(&weights) {
                out.weight_sum[c] += w;
                out.weight_count[c] += 1;
            }
            if self.cfg.log_batches {
                self.trace.batches.push(BatchLog {
                    stage,
                    step,
                    ids: positions.iter().map(|&p| data.train.ids[p]).collect(),
                    labels: y,
                    weights,
                    loss_target: sm.losses,
                    loss_reference: ref_sm.losses,
                    checksum_target: self.target.params().checksum(),
                    checksum_reference: self.reference.params().checksum(),
                });
            }
        }
        Ok(out)
    }

    fn fail(
        &mut self,
        stage: usize,
        s_t: PhaseDescriptor,
        theta: Vec<f64>,
        weighted: bool,
    ) -> Option<Transition> {
        self.failed = true;
        self.trace.failed = true;
        let classes = self.cfg.classifier.class_count;
        let reward = weighted.then_some(self.cfg.failure_penalty);
        self.trace.stages.push(StageRecord {
            stage,
            acc_target: f64::NAN,
            acc_reference: f64::NAN,
            reward,
            theta: theta.clone(),
            mean_loss_gap: f64::NAN,
            weight_mean: vec![None; classes],
            weight_count: vec![0; classes],
        });
        reward.map(|reward| Transition {
            s_next: s_t.with_stage((stage + 1).min(self.cfg.stages)),
            s: s_t,
            theta,
            reward,
            done: true,
        })
    }

    /// Runs the remaining stages with `policy` and no exploration.
    pub fn run_to_end(&mut self, policy: Policy<'_>, data: &Splits) -> Result<Vec<Transition>> {
        let mut out = Vec::new();
        while !self.is_finished() {
            out.extend(self.run_stage(policy, data, 0.0)?);
        }
        Ok(out)
    }

    /// Closes the episode, recording test accuracies of both networks.
    pub fn finish(mut self, data: &Splits) -> Result<EpisodeTrace> {
        if !self.failed {
            self.trace.test_acc_target = Some(evaluate_accuracy(&self.target, &data.test)?);
            self.trace.test_acc_reference = Some(evaluate_accuracy(&self.reference, &data.test)?);
        }
        Ok(self.trace)
    }
}

fn check_data(cfg: &EpisodeConfig, data: &Splits) -> Result<()> {
    for (name, split) in [("train", &data.train), ("val", &data.val), ("test", &data.test)] {
        if split.is_empty() {
            return Err(Error::InvalidInput(format!("{name} split is empty")));
        }
        if split.input_dim != cfg.classifier.input_dim {
            return Err(Error::config(
                "classifier.input_dim",
                format!("{} but the data has {} inputs", cfg.classifier.input_dim, split.input_dim),
            ));
        }
        if split.class_count != cfg.classifier.class_count {
            return Err(Error::config(
                "classifier.class_count",
                format!("{} but the data has {} classes", cfg.classifier.class_count, split.class_count),
            ));
        }
    }
    if cfg.batch_size > data.train.len() {
        return Err(Error::config("episode.batch_size", "larger than the training split"));
    }
    Ok(())
}

/// A full episode in one call: `(trace, transitions)`.
pub fn run_episode(
    cfg: &EpisodeConfig,
    policy: Policy<'_>,
    data: &Splits,
    seeds: EpisodeSeeds,
    mode: Mode,
    sigma: f64,
) -> Result<(EpisodeTrace, Vec<Transition>)> {
    let mut ep = Episode::new(cfg, data, seeds, mode, 0, 0)?;
    let mut transitions = Vec::new();
    while !ep.is_finished() {
        transitions.extend(ep.run_stage(policy, data, sigma)?);
    }
    Ok((ep.finish(data)?, transitions))
}

/// Result of plain (unweighted) training of a single network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingleRun {
    pub failed: bool,
    pub val_acc: Option<f64>,
    pub test_acc: Option<f64>,
    pub checksum: u64,
}

/// Trains one network exactly as the reference network of an episode with
/// the same seeds would be trained, optionally under a different loss.
pub fn train_single(
    cfg: &EpisodeConfig,
    data: &Splits,
    seeds: EpisodeSeeds,
    loss: LossKind,
) -> Result<SingleRun> {
    cfg.validate()?;
    check_data(cfg, data)?;
    let mut net = ClassifierNet::new(cfg.classifier.clone(), &mut seed::rng(seeds.init))?;
    let mut opt = Optimizer::new(cfg.optimizer.clone(), net.params().len());
    let mut stream = BatchStream::new(data.train.len(), cfg.batch_size, seeds.data_order)?;
    for stage in 1..=cfg.stages {
        opt.set_learning_rate(cfg.learning_rate(stage));
        for _ in 0..cfg.steps_per_stage {
            let (x, y) = data.train.gather(&stream.next_batch());
            let step = net
                .backward_loss(&x, &y, &vec![1.0; y.len()], loss)
                .and_then(|g| opt.step(&mut net.params_mut().values, &g.values));
            match step {
                Ok(()) => {}
                Err(Error::NonFinite(_)) => {
                    return Ok(SingleRun {
                        failed: true,
                        val_acc: None,
                        test_acc: None,
                        checksum: net.params().checksum(),
                    })
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(SingleRun {
        failed: false,
        val_acc: Some(evaluate_accuracy(&net, &data.val)?),
        test_acc: Some(evaluate_accuracy(&net, &data.test)?),
        checksum: net.params().checksum(),
    })
}
