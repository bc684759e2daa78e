//! Multi-worker strategy search. `N_a` workers run episodes in lock-step
//! against one shared strategy model; at every post-warmup stage boundary
//! their transitions enter the shared buffer in worker order and a
//! full-buffer update with per-step gradient averaging is applied before any
//! worker continues.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{generate, DatasetSpec, Splits, SplitSizes};
use crate::episode::{
    run_episode, Episode, EpisodeConfig, EpisodeSeeds, EpisodeTrace, Mode, Policy, StaticSchedule,
};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::nn::ClassifierSpec;
use crate::seed::{self, purpose, Rng};
use crate::strategy::{
    fdu_update, ExplorationSchedule, MeanCombiner, ReplayBuffer, StrategyConfig, StrategyModel,
    THETA_DIM,
};
use crate::trace;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Number of search rounds `L`; each round runs one episode per worker.
    pub rounds: usize,
    #[serde(default)]
    pub seed: u64,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub episode: EpisodeConfig,
    #[serde(default)]
    pub strategy: StrategyConfig,
    #[serde(default)]
    pub exploration: ExplorationSchedule,
    /// Eval-mode episodes after the search, averaged into the static schedule.
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    /// Keep a strategy checkpoint every this many rounds (0: final only).
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub execution: Execution,
}

fn default_workers() -> usize {
    8
}

fn default_eval_episodes() -> usize {
    3
}

impl SearchConfig {
    /// A small configuration on balanced 2-D blobs.
    pub fn desk_default() -> Self {
        Self {
            workers: default_workers(),
            rounds: 40,
            seed: 0,
            dataset: DatasetSpec::blobs(
                4,
                SplitSizes {
                    train: 500,
                    val: 125,
                    test: 500,
                },
                0,
            ),
            episode: EpisodeConfig::default(),
            strategy: StrategyConfig::default(),
            exploration: ExplorationSchedule::default(),
            eval_episodes: default_eval_episodes(),
            checkpoint_every: 0,
            execution: Execution::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::config("workers", "need at least one worker"));
        }
        if self.rounds == 0 {
            return Err(Error::config("rounds", "need at least one round"));
        }
        if self.eval_episodes == 0 {
            return Err(Error::config("eval_episodes", "need at least one"));
        }
        let e = &self.exploration;
        if !(e.sigma_start >= 0.0) || !(e.sigma_min >= 0.0) {
            return Err(Error::config("exploration", "sigmas must be nonnegative"));
        }
        self.dataset.validate()?;
        self.episode.validate()?;
        self.strategy.validate()?;
        let spec = &self.episode.classifier;
        if spec.input_dim != self.dataset.input_dim || spec.class_count != self.dataset.class_count
        {
            return Err(Error::config(
                "episode.classifier",
                "input_dim/class_count must match the dataset",
            ));
        }
        Ok(())
    }

    /// Seeds of the `j`-th post-search evaluation episode.
    pub fn eval_seeds(&self, j: usize) -> EpisodeSeeds {
        EpisodeSeeds::derive(seed::derive(self.seed, &[purpose::EVAL]), j as u64, 0)
    }
}

/// Per-round aggregates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub sigma: f64,
    pub failed_workers: usize,
    pub mean_reward: f64,
    pub mean_final_acc_target: f64,
    pub mean_final_acc_reference: f64,
    pub buffer_len: usize,
    pub mean_critic_loss: f64,
    pub mean_q: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestPolicy {
    pub episode: u64,
    pub worker: usize,
    pub acc_target: f64,
}

pub struct SearchReport {
    pub config: SearchConfig,
    pub rounds: Vec<RoundSummary>,
    pub traces: Vec<EpisodeTrace>,
    pub eval_traces: Vec<EpisodeTrace>,
    /// `(round, checkpoint bytes)` for periodic checkpoints.
    pub checkpoints: Vec<(usize, Vec<u8>)>,
    pub model: StrategyModel,
    pub schedule: StaticSchedule,
    pub best: BestPolicy,
    pub elapsed_secs: f64,
}

/// Drives `search` one barrier at a time; exposed so the barrier protocol
/// can be inspected.
pub struct Searcher {
    pub config: SearchConfig,
    pub data: Splits,
    pub model: StrategyModel,
    pub buffer: ReplayBuffer,
    shufflers: Vec<Rng>,
}

impl Searcher {
    pub fn new(config: SearchConfig) -> Result<Self> {
        config.validate()?;
        let data = generate(&config.dataset)?;
        Self::with_data(config, data)
    }

    pub fn with_data(config: SearchConfig, data: Splits) -> Result<Self> {
        config.validate()?;
        let model = StrategyModel::new(
            config.strategy.clone(),
            config.episode.stages,
            &mut seed::rng(seed::derive(config.seed, &[purpose::STRATEGY_INIT])),
        )?;
        let shufflers = (0..config.workers)
            .map(|i| seed::rng(seed::derive(config.seed, &[purpose::FDU_SHUFFLE, i as u64])))
            .collect();
        Ok(Self {
            buffer: ReplayBuffer::new(config.strategy.buffer_capacity),
            model,
            data,
            shufflers,
            config,
        })
    }

    /// One search round: every worker runs a full search-mode episode with
    /// seeds from `(seed, worker, round)`, updating the model at each barrier.
    pub fn run_round(&mut self, round: usize) -> Result<(RoundSummary, Vec<EpisodeTrace>)> {
        let cfg = &self.config;
        let sigma = cfg.exploration.sigma(round, cfg.rounds);
        let mut episodes = (0..cfg.workers)
            .map(|w| {
                let seeds = EpisodeSeeds::derive(cfg.seed, w as u64, round as u64);
                Episode::new(&cfg.episode, &self.data, seeds, Mode::Search, round as u64, w)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut reward_sum = 0.0;
        let mut reward_count = 0usize;
        let mut loss_sum = 0.0;
        let mut q_sum = 0.0;
        let mut updates = 0usize;
        for stage in 1..=cfg.episode.stages {
            let model = &self.model;
            let data = &self.data;
            let outputs = cfg.execution.map_mut(&mut episodes, |_, ep| {
                ep.run_stage(Policy::Strategy(model), data, sigma)
            });
            let per_worker: Vec<Vec<_>> = outputs
                .into_iter()
                .map(|r| r.map(|t| t.into_iter().collect()))
                .collect::<Result<_>>()?;
            if stage <= cfg.episode.warmup_stages {
                continue;
            }
            for t in per_worker.iter().flatten() {
                reward_sum += t.reward;
                reward_count += 1;
            }
            self.buffer.push_round(per_worker);
            if !self.buffer.is_empty() {
                let stats = fdu_update(
                    &mut self.model,
                    &self.buffer,
                    &mut self.shufflers,
                    &MeanCombiner,
                    cfg.execution,
                )?;
                loss_sum += stats.mean_critic_loss;
                q_sum += stats.mean_q;
                updates += 1;
            }
        }
        let failed = episodes.iter().filter(|e| e.failed()).count();
        if failed == cfg.workers {
            return Err(Error::AllWorkersFailed {
                round,
                workers: cfg.workers,
            });
        }
        self.model.episode_counter += 1;
        let traces = episodes
            .into_iter()
            .map(|e| e.finish(&self.data))
            .collect::<Result<Vec<_>>>()?;
        let ok: Vec<&EpisodeTrace> = traces.iter().filter(|t| !t.failed).collect();
        let mean = |f: &dyn Fn(&EpisodeTrace) -> f64| {
            ok.iter().map(|t| f(t)).sum::<f64>() / ok.len() as f64
        };
        let summary = RoundSummary {
            round,
            sigma,
            failed_workers: failed,
            mean_reward: if reward_count > 0 {
                reward_sum / reward_count as f64
            } else {
                0.0
            },
            mean_final_acc_target: mean(&|t| t.stages.last().unwrap().acc_target),
            mean_final_acc_reference: mean(&|t| t.stages.last().unwrap().acc_reference),
            buffer_len: self.buffer.len(),
            mean_critic_loss: if updates > 0 {
                loss_sum / updates as f64
            } else {
                0.0
            },
            mean_q: if updates > 0 { q_sum / updates as f64 } else { 0.0 },
        };
        Ok((summary, traces))
    }

    /// Eval-mode episodes with the current model; no exploration, no updates.
    pub fn evaluate(&self) -> Result<Vec<EpisodeTrace>> {
        let cfg = &self.config;
        let mut out = Vec::with_capacity(cfg.eval_episodes);
        for j in 0..cfg.eval_episodes {
            let (mut t, _) = run_episode(
                &cfg.episode,
                Policy::Strategy(&self.model),
                &self.data,
                cfg.eval_seeds(j),
                Mode::Eval,
                0.0,
            )?;
            t.episode = j as u64;
            out.push(t);
        }
        Ok(out)
    }
}

/// Runs the full search followed by the evaluation episodes.
pub fn search(config: SearchConfig) -> Result<SearchReport> {
    search_with_progress(config, |_| {})
}

pub fn search_with_progress(
    config: SearchConfig,
    mut progress: impl FnMut(&RoundSummary),
) -> Result<SearchReport> {
    let start = Instant::now();
    let mut s = Searcher::new(config)?;
    let mut rounds = Vec::new();
    let mut traces = Vec::new();
    let mut checkpoints = Vec::new();
    for round in 0..s.config.rounds {
        let (summary, t) = s.run_round(round)?;
        progress(&summary);
        rounds.push(summary);
        traces.extend(t);
        let every = s.config.checkpoint_every;
        if every > 0 && (round + 1) % every == 0 && round + 1 < s.config.rounds {
            checkpoints.push((round, s.model.to_bytes()?));
        }
    }
    let eval_traces = s.evaluate()?;
    let schedule = static_schedule(&eval_traces, s.config.episode.stages)?;
    let best = eval_traces
        .iter()
        .filter_map(|t| t.final_acc_target().map(|a| (t, a)))
        .fold(None::<BestPolicy>, |best, (t, a)| match best {
            Some(b) if b.acc_target >= a => Some(b),
            _ => Some(BestPolicy {
                episode: t.episode,
                worker: t.worker,
                acc_target: a,
            }),
        })
        .ok_or_else(|| Error::NonFinite("every evaluation episode diverged".into()))?;
    Ok(SearchReport {
        rounds,
        traces,
        eval_traces,
        checkpoints,
        schedule,
        best,
        model: s.model,
        elapsed_secs: start.elapsed().as_secs_f64(),
        config: s.config,
    })
}

/// Averages `theta_T` per stage over the (non-failed) evaluation traces.
pub fn static_schedule(eval_traces: &[EpisodeTrace], stages: usize) -> Result<StaticSchedule> {
    let usable: Vec<&EpisodeTrace> = eval_traces
        .iter()
        .filter(|t| !t.failed && t.stages.len() == stages)
        .collect();
    if usable.is_empty() {
        return Err(Error::InvalidInput("no complete evaluation episode to export".into()));
    }
    let mut thetas = vec![vec![0.0; THETA_DIM]; stages];
    for t in &usable {
        for (row, rec) in thetas.iter_mut().zip(&t.stages) {
            for (a, b) in row.iter_mut().zip(&rec.theta) {
                *a += b;
            }
        }
    }
    let n = usable.len() as f64;
    thetas.iter_mut().flatten().for_each(|v| *v /= n);
    Ok(StaticSchedule { thetas })
}

/// Exported policy in either form.
pub enum PolicyArtifact {
    Strategy(StrategyModel),
    Static(StaticSchedule),
}

impl PolicyArtifact {
    /// Loads a `.bin` strategy checkpoint or a schedule CSV (by extension).
    pub fn load(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Ok(PolicyArtifact::Static(trace::load_schedule(path)?)),
            _ => Ok(PolicyArtifact::Strategy(StrategyModel::load(path)?)),
        }
    }

    pub fn policy(&self) -> Policy<'_> {
        match self {
            PolicyArtifact::Strategy(m) => Policy::Strategy(m),
            PolicyArtifact::Static(s) => Policy::Static(s),
        }
    }
}

/// Eval-mode episode applying `policy` on `data` with a classifier of
/// architecture `classifier`. Stage-count mismatches are rejected.
pub fn replay_policy(
    policy: &PolicyArtifact,
    episode: &EpisodeConfig,
    classifier: &ClassifierSpec,
    data: &Splits,
    seeds: EpisodeSeeds,
) -> Result<EpisodeTrace> {
    let mut cfg = episode.clone();
    cfg.classifier = classifier.clone();
    Ok(run_episode(&cfg, policy.policy(), data, seeds, Mode::Eval, 0.0)?.0)
}

/// Paths of the report directory layout.
pub struct ReportLayout {
    pub root: PathBuf,
}

impl ReportLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn report_json(&self) -> PathBuf {
        self.root.join("report.json")
    }

    pub fn traces_dir(&self) -> PathBuf {
        self.root.join("traces")
    }

    pub fn trace(&self, worker: usize, episode: u64) -> PathBuf {
        self.traces_dir().join(format!("worker{worker}_ep{episode}.csv"))
    }

    pub fn eval_trace(&self, episode: u64) -> PathBuf {
        self.traces_dir().join(format!("eval_ep{episode}.csv"))
    }

    pub fn checkpoint(&self, round: usize) -> PathBuf {
        self.root.join("checkpoints").join(format!("strategy_ep{round}.bin"))
    }

    pub fn schedule(&self) -> PathBuf {
        self.root.join("policy").join("static_schedule.csv")
    }

    pub fn final_strategy(&self) -> PathBuf {
        self.root.join("policy").join("strategy_final.bin")
    }
}

#[derive(Serialize)]
struct ReportJson<'a> {
    config: &'a SearchConfig,
    rounds: &'a [RoundSummary],
    best: &'a BestPolicy,
    eval_final_acc_target: Vec<Option<f64>>,
    eval_test_acc_target: Vec<Option<f64>>,
    eval_test_acc_reference: Vec<Option<f64>>,
    strategy_checksum: String,
    elapsed_secs: f64,
}

/// Writes the report directory; returns the layout used.
pub fn write_report(report: &SearchReport, root: &Path) -> Result<ReportLayout> {
    let layout = ReportLayout::new(root);
    let classes = report.config.dataset.class_count;
    for t in &report.traces {
        trace::save_trace(t, classes, &layout.trace(t.worker, t.episode))?;
    }
    for t in &report.eval_traces {
        trace::save_trace(t, classes, &layout.eval_trace(t.episode))?;
    }
    for (round, bytes) in &report.checkpoints {
        trace::write_bytes(&layout.checkpoint(*round), bytes)?;
    }
    let last = report.config.rounds - 1;
    let final_bytes = report.model.to_bytes()?;
    trace::write_bytes(&layout.checkpoint(last), &final_bytes)?;
    trace::write_bytes(&layout.final_strategy(), &final_bytes)?;
    trace::save_schedule(&report.schedule, &layout.schedule())?;
    let json = ReportJson {
        config: &report.config,
        rounds: &report.rounds,
        best: &report.best,
        eval_final_acc_target: report.eval_traces.iter().map(|t| t.final_acc_target()).collect(),
        eval_test_acc_target: report.eval_traces.iter().map(|t| t.test_acc_target).collect(),
        eval_test_acc_reference: report.eval_traces.iter().map(|t| t.test_acc_reference).collect(),
        strategy_checksum: format!("{:016x}", report.model.checksum()),
        elapsed_secs: report.elapsed_secs,
    };
    trace::write_bytes(&layout.report_json(), &serde_json::to_vec_pretty(&json)?)?;
    Ok(layout)
}
