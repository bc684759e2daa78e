//! Command-line driver: search, policy replay, baselines, analysis and data
//! generation, each writing a manifest and its artifacts under `--out`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use autoweight::analysis::{
    analyze_run_dir, analyze_traces, run_baseline_focal, run_baseline_uniform, AnalysisSummary,
    MeanStd,
};
use autoweight::data::generate;
use autoweight::episode::{EpisodeSeeds, StaticSchedule};
use autoweight::search::{
    replay_policy, search_with_progress, write_report, PolicyArtifact, SearchConfig,
};
use autoweight::trace::save_trace;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "autoweight", version, about = "Learned stage-dependent sample weighting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search a weighting policy and export it.
    Search {
        #[command(flatten)]
        run: RunArgs,
        /// Base seed for initialization, data order, exploration and updates.
        #[arg(long)]
        seed: Option<u64>,
        /// Number of parallel workers (episodes per round).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Replay an exported policy (`.csv` schedule, `.bin` strategy, or `null`).
    Replay {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        policy: String,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        seeds: Vec<u64>,
        /// Minority classes for the weight-mean analysis.
        #[arg(long, value_delimiter = ',')]
        minority: Option<Vec<usize>>,
    },
    /// Train unweighted (uniform) or focal-loss baselines.
    Baseline {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum)]
        kind: BaselineKind,
        /// Focal exponent.
        #[arg(long, default_value_t = 2.0)]
        gamma: f64,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        seeds: Vec<u64>,
    },
    /// Regenerate analysis CSVs and summary.json from a run directory's traces.
    Analyze {
        run_dir: PathBuf,
        /// Minority classes; defaults to the classes the dataset subsamples, else class 0.
        #[arg(long, value_delimiter = ',')]
        minority: Option<Vec<usize>>,
    },
    /// Generate the configured dataset and write its splits.
    GenData {
        #[command(flatten)]
        run: RunArgs,
        /// Dataset seed override.
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overwrite an existing output directory.
    #[arg(long)]
    force: bool,
    /// Override a config field, e.g. `--set strategy.gamma=0.9`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineKind {
    Uniform,
    Focal,
}

/// Everything needed to reproduce a command's outputs.
#[derive(Serialize, Deserialize)]
struct RunManifest {
    tool: String,
    version: String,
    command: String,
    config: SearchConfig,
    seeds: Vec<u64>,
    artifacts: Vec<String>,
    elapsed_secs: Option<f64>,
}

const MANIFEST: &str = "manifest.json";

/// Failure classes of the exit-code contract.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        let usage = e
            .chain()
            .any(|c| c.downcast_ref::<autoweight::Error>().is_some_and(|e| e.is_usage()));
        if usage {
            Failure::Usage(e)
        } else {
            Failure::Runtime(e)
        }
    }
}

impl From<autoweight::Error> for Failure {
    fn from(e: autoweight::Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

type CmdResult<T = ()> = Result<T, Failure>;

fn usage(msg: impl std::fmt::Display) -> Failure {
    Failure::Usage(anyhow!("{msg}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Search { run, seed, workers } => cmd_search(&run, seed, workers),
        Command::Replay {
            run,
            policy,
            seeds,
            minority,
        } => cmd_replay(&run, &policy, &seeds, minority),
        Command::Baseline {
            run,
            kind,
            gamma,
            seeds,
        } => cmd_baseline(&run, kind, gamma, &seeds),
        Command::Analyze { run_dir, minority } => cmd_analyze(&run_dir, minority),
        Command::GenData { run, seed } => cmd_gen_data(&run, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// Applies one `key.path=value` override; the value is parsed as JSON and
/// falls back to a plain string.
fn apply_override(config: &mut serde_json::Value, assignment: &str) -> CmdResult {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got {assignment:?}")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.into()));
    let mut cur = config;
    for part in key.split('.') {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| usage(format!("--set {key}: `{part}` is not inside an object")))?;
        cur = obj.entry(part).or_insert(serde_json::Value::Null);
    }
    *cur = value;
    Ok(())
}

fn load_config(run: &RunArgs) -> CmdResult<SearchConfig> {
    let text = std::fs::read_to_string(&run.config)
        .map_err(|e| usage(format!("cannot read config {}: {e}", run.config.display())))?;
    let mut json: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| usage(format!("{}: {e}", run.config.display())))?;
    for o in &run.overrides {
        apply_override(&mut json, o)?;
    }
    let config: SearchConfig = serde_json::from_value(json)
        .map_err(|e| usage(format!("{}: {e}", run.config.display())))?;
    config.validate()?;
    Ok(config)
}

fn prepare_out(out: &Path, force: bool) -> CmdResult {
    if out.exists() {
        if !force {
            return Err(usage(format!(
                "output directory {} exists; pass --force to overwrite",
                out.display()
            )));
        }
        std::fs::remove_dir_all(out)
            .with_context(|| format!("clearing {}", out.display()))
            .map_err(Failure::Runtime)?;
    }
    std::fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(Failure::Runtime)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CmdResult {
    let bytes = serde_json::to_vec_pretty(value).map_err(|e| Failure::Runtime(e.into()))?;
    std::fs::write(path, bytes)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::Runtime)
}

struct Run {
    out: PathBuf,
    manifest: RunManifest,
    started: Instant,
}

impl Run {
    /// Prepares the output directory and writes the manifest before any work.
    fn start(args: &RunArgs, command: &str, config: SearchConfig, seeds: Vec<u64>) -> CmdResult<Self> {
        prepare_out(&args.out, args.force)?;
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config,
            seeds,
            artifacts: Vec::new(),
            elapsed_secs: None,
        };
        write_json(&args.out.join(MANIFEST), &manifest)?;
        Ok(Self {
            out: args.out.clone(),
            manifest,
            started: Instant::now(),
        })
    }

    fn finish(mut self, artifacts: Vec<String>) -> CmdResult {
        self.manifest.artifacts = artifacts;
        self.manifest.elapsed_secs = Some(self.started.elapsed().as_secs_f64());
        write_json(&self.out.join(MANIFEST), &self.manifest)
    }
}

/// Paths below `root`, relative and sorted, excluding the manifest.
fn list_artifacts(root: &Path) -> Vec<String> {
    fn walk(dir: &Path, root: &Path, out: &mut Vec<String>) {
        let Ok(entries) = std::fs::read_dir(dir) else { return };
        for e in entries.flatten() {
            let p = e.path();
            if p.is_dir() {
                walk(&p, root, out);
            } else if let Ok(rel) = p.strip_prefix(root) {
                if rel != Path::new(MANIFEST) {
                    out.push(rel.to_string_lossy().replace('\\', "/"));
                }
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}

fn default_minority(config: &SearchConfig) -> Vec<usize> {
    let f = &config.dataset.imbalance_fractions;
    let reduced: Vec<usize> = (0..f.len()).filter(|&c| f[c] < 1.0).collect();
    if reduced.is_empty() {
        vec![0]
    } else {
        reduced
    }
}

fn cmd_search(run: &RunArgs, seed: Option<u64>, workers: Option<usize>) -> CmdResult {
    let mut config = load_config(run)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(w) = workers {
        config.workers = w;
    }
    config.validate()?;
    let seed = config.seed;
    let session = Run::start(run, "search", config.clone(), vec![seed])?;
    let report = search_with_progress(config, |r| {
        eprintln!(
            "round {:>3}  sigma {:.3}  reward {:+.4}  acc target {:.4} reference {:.4}  failed {}",
            r.round, r.sigma, r.mean_reward, r.mean_final_acc_target, r.mean_final_acc_reference,
            r.failed_workers
        );
    })?;
    write_report(&report, &run.out)?;
    eprintln!(
        "best episode: worker {} episode {} final acc {:.4}",
        report.best.worker, report.best.episode, report.best.acc_target
    );
    session.finish(list_artifacts(&run.out))
}

#[derive(Serialize)]
struct ReplayRow {
    seed: u64,
    failed: bool,
    test_acc_target: Option<f64>,
    test_acc_reference: Option<f64>,
}

#[derive(Serialize)]
struct ReplaySummary {
    policy: String,
    runs: Vec<ReplayRow>,
    test_acc_target: Option<MeanStd>,
    test_acc_reference: Option<MeanStd>,
    analysis: AnalysisSummary,
}

fn load_policy(spec: &str, stages: usize) -> CmdResult<PolicyArtifact> {
    if spec == "null" {
        return Ok(PolicyArtifact::Static(StaticSchedule::zeros(stages)));
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(usage(format!("policy file {} not found", path.display())));
    }
    PolicyArtifact::load(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn cmd_replay(
    run: &RunArgs,
    policy: &str,
    seeds: &[u64],
    minority: Option<Vec<usize>>,
) -> CmdResult {
    let config = load_config(run)?;
    if seeds.is_empty() {
        return Err(usage("--seeds must list at least one seed"));
    }
    let artifact = load_policy(policy, config.episode.stages)?;
    let minority = minority.unwrap_or_else(|| default_minority(&config));
    let session = Run::start(run, "replay", config.clone(), seeds.to_vec())?;
    let data = generate(&config.dataset)?;
    let classes = config.dataset.class_count;
    let mut traces = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut t = replay_policy(
            &artifact,
            &config.episode,
            &config.episode.classifier,
            &data,
            EpisodeSeeds::from_seed(seed),
        )?;
        t.episode = seed;
        save_trace(&t, classes, &run.out.join(format!("traces/replay_seed{seed}.csv")))?;
        eprintln!(
            "seed {seed}: test acc target {:?} reference {:?}",
            t.test_acc_target, t.test_acc_reference
        );
        traces.push(t);
    }
    let analysis = analyze_traces(
        &traces,
        config.episode.warmup_stages,
        &minority,
        &run.out.join("analysis"),
    )?;
    let ok: Vec<_> = traces.iter().filter(|t| !t.failed).collect();
    let summary = ReplaySummary {
        policy: policy.to_string(),
        runs: traces
            .iter()
            .map(|t| ReplayRow {
                seed: t.episode,
                failed: t.failed,
                test_acc_target: t.test_acc_target,
                test_acc_reference: t.test_acc_reference,
            })
            .collect(),
        test_acc_target: MeanStd::of(&ok.iter().filter_map(|t| t.test_acc_target).collect::<Vec<_>>()),
        test_acc_reference: MeanStd::of(
            &ok.iter().filter_map(|t| t.test_acc_reference).collect::<Vec<_>>(),
        ),
        analysis,
    };
    write_json(&run.out.join("summary.json"), &summary)?;
    session.finish(list_artifacts(&run.out))
}

fn cmd_baseline(run: &RunArgs, kind: BaselineKind, gamma: f64, seeds: &[u64]) -> CmdResult {
    let config = load_config(run)?;
    if seeds.is_empty() {
        return Err(usage("--seeds must list at least one seed"));
    }
    if matches!(kind, BaselineKind::Focal) && !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(usage("--gamma must be a finite value >= 0"));
    }
    let session = Run::start(run, "baseline", config.clone(), seeds.to_vec())?;
    let data = generate(&config.dataset)?;
    let summary = match kind {
        BaselineKind::Uniform => run_baseline_uniform(&config.episode, &data, seeds)?,
        BaselineKind::Focal => run_baseline_focal(&config.episode, &data, gamma, seeds)?,
    };
    if let Some(acc) = &summary.test_acc {
        eprintln!("{} baseline: test acc {:.4} ± {:.4} over {} runs", summary.kind, acc.mean, acc.std, acc.n);
    }
    write_json(&run.out.join("summary.json"), &summary)?;
    session.finish(list_artifacts(&run.out))
}

fn cmd_analyze(run_dir: &Path, minority: Option<Vec<usize>>) -> CmdResult {
    let manifest_path = run_dir.join(MANIFEST);
    let text = std::fs::read_to_string(&manifest_path)
        .map_err(|e| usage(format!("cannot read {}: {e}", manifest_path.display())))?;
    let manifest: RunManifest = serde_json::from_str(&text)
        .map_err(|e| usage(format!("{}: {e}", manifest_path.display())))?;
    let traces = run_dir.join("traces");
    if !traces.is_dir() {
        return Err(usage(format!("no traces directory under {}", run_dir.display())));
    }
    let minority = minority.unwrap_or_else(|| default_minority(&manifest.config));
    let summary = analyze_run_dir(run_dir, manifest.config.episode.warmup_stages, &minority)?;
    if let Some(g) = &summary.negative_gap_fraction {
        eprintln!(
            "{} traces; negative loss-gap share after warmup {:.3} ± {:.3}",
            summary.traces, g.mean, g.std
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct DataSummary {
    train: usize,
    val: usize,
    test: usize,
    train_label_histogram: Vec<usize>,
    train_corrupted: usize,
}

fn cmd_gen_data(run: &RunArgs, seed: Option<u64>) -> CmdResult {
    let mut config = load_config(run)?;
    if let Some(s) = seed {
        config.dataset.seed = s;
    }
    let session = Run::start(run, "gen-data", config.clone(), vec![config.dataset.seed])?;
    let data = generate(&config.dataset)?;
    data.train.save(&run.out.join("train.bin"))?;
    data.val.save(&run.out.join("val.bin"))?;
    data.test.save(&run.out.join("test.bin"))?;
    write_json(
        &run.out.join("summary.json"),
        &DataSummary {
            train: data.train.len(),
            val: data.val.len(),
            test: data.test.len(),
            train_label_histogram: data.train.label_histogram(),
            train_corrupted: data.train.corrupted_count(),
        },
    )?;
    session.finish(list_artifacts(&run.out))
}
