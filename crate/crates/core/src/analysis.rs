//! Baselines (uniform and focal-loss training) and the post-processing
//! series: per-stage loss gap between target and reference, and per-stage
//! mean weights of a minority class subset versus the rest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::Splits;
use crate::episode::{train_single, BatchLog, EpisodeConfig, EpisodeSeeds, EpisodeTrace, SingleRun};
use crate::error::{Error, Result};
use crate::nn::LossKind;
use crate::trace;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (0 for a single value).
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, std, n })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineRun {
    pub seed: u64,
    #[serde(flatten)]
    pub run: SingleRun,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineSummary {
    pub kind: String,
    pub runs: Vec<BaselineRun>,
    /// Test accuracy over the non-failed runs.
    pub test_acc: Option<MeanStd>,
    pub failed_runs: usize,
}

fn run_baseline(
    kind: &str,
    cfg: &EpisodeConfig,
    data: &Splits,
    loss: LossKind,
    seeds: &[u64],
) -> Result<BaselineSummary> {
    let runs = seeds
        .iter()
        .map(|&seed| {
            train_single(cfg, data, EpisodeSeeds::from_seed(seed), loss)
                .map(|run| BaselineRun { seed, run })
        })
        .collect::<Result<Vec<_>>>()?;
    let accs: Vec<f64> = runs.iter().filter_map(|r| r.run.test_acc).collect();
    Ok(BaselineSummary {
        kind: kind.to_string(),
        failed_runs: runs.iter().filter(|r| r.run.failed).count(),
        test_acc: MeanStd::of(&accs),
        runs,
    })
}

/// Unweighted cross-entropy training; per seed it follows exactly the
/// trajectory of an episode's reference network with the same seeds.
pub fn run_baseline_uniform(
    cfg: &EpisodeConfig,
    data: &Splits,
    seeds: &[u64],
) -> Result<BaselineSummary> {
    run_baseline("uniform", cfg, data, LossKind::CrossEntropy, seeds)
}

/// Focal-loss training, `-(1 - p_t)^gamma log p_t` per sample.
pub fn run_baseline_focal(
    cfg: &EpisodeConfig,
    data: &Splits,
    gamma: f64,
    seeds: &[u64],
) -> Result<BaselineSummary> {
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(Error::config("focal_gamma", "must be a finite value >= 0"));
    }
    run_baseline("focal", cfg, data, LossKind::Focal { gamma }, seeds)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossGapSeries {
    pub episode: u64,
    /// One value per stage of the trace.
    pub gaps: Vec<f64>,
}

pub fn loss_gap(trace: &EpisodeTrace) -> LossGapSeries {
    LossGapSeries {
        episode: trace.episode,
        gaps: trace.stages.iter().map(|s| s.mean_loss_gap).collect(),
    }
}

/// Recomputes per-stage loss gaps from raw batch logs.
pub fn loss_gap_from_batches(batches: &[BatchLog], stages: usize) -> Vec<f64> {
    let mut sum = vec![0.0; stages];
    let mut n = vec![0usize; stages];
    for b in batches {
        let m = b.weights.len() as f64;
        let weighted: f64 = b.weights.iter().zip(&b.loss_target).map(|(w, l)| w * l).sum();
        let reference: f64 = b.loss_reference.iter().sum();
        sum[b.stage - 1] += weighted / m - reference / m;
        n[b.stage - 1] += 1;
    }
    sum.iter()
        .zip(&n)
        .map(|(s, &k)| if k > 0 { s / k as f64 } else { f64::NAN })
        .collect()
}

/// Fraction of stages after `warmup` whose gap is strictly negative.
pub fn negative_gap_fraction(series: &LossGapSeries, warmup: usize) -> f64 {
    let post = &series.gaps[warmup.min(series.gaps.len())..];
    if post.is_empty() {
        return 0.0;
    }
    post.iter().filter(|g| **g < 0.0).count() as f64 / post.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightMeanSeries {
    pub episode: u64,
    /// Per stage; `None` where no minority sample was seen.
    pub minority: Vec<Option<f64>>,
    pub other: Vec<Option<f64>>,
}

fn pooled_mean(sums_counts: impl Iterator<Item = (f64, usize)>) -> Option<f64> {
    let (s, n) = sums_counts.fold((0.0, 0usize), |(s, n), (a, b)| (s + a, n + b));
    (n > 0).then(|| s / n as f64)
}

/// Pools the per-class stage means of `trace` into minority and others.
pub fn weight_means(trace: &EpisodeTrace, minority: &[usize]) -> Result<WeightMeanSeries> {
    let mut out = WeightMeanSeries {
        episode: trace.episode,
        minority: Vec::with_capacity(trace.stages.len()),
        other: Vec::with_capacity(trace.stages.len()),
    };
    for rec in &trace.stages {
        let classes = rec.weight_count.len();
        if let Some(&c) = minority.iter().find(|&&c| c >= classes) {
            return Err(Error::InvalidInput(format!("minority class {c} out of range")));
        }
        let per_class = |c: usize| (rec.weight_mean[c].unwrap_or(0.0) * rec.weight_count[c] as f64, rec.weight_count[c]);
        out.minority.push(pooled_mean(minority.iter().map(|&c| per_class(c))));
        out.other.push(pooled_mean(
            (0..classes).filter(|c| !minority.contains(c)).map(per_class),
        ));
    }
    Ok(out)
}

/// Same series computed directly from raw batch logs.
pub fn weight_means_from_batches(
    batches: &[BatchLog],
    minority: &[usize],
    stages: usize,
) -> (Vec<Option<f64>>, Vec<Option<f64>>) {
    let mut acc = vec![[(0.0, 0usize); 2]; stages];
    for b in batches {
        for (&y, &w) in b.labels.iter().zip(&b.weights) {
            let slot = &mut acc[b.stage - 1][usize::from(!minority.contains(&y))];
            slot.0 += w;
            slot.1 += 1;
        }
    }
    let mean = |(s, n): (f64, usize)| (n > 0).then(|| s / n as f64);
    (
        acc.iter().map(|a| mean(a[0])).collect(),
        acc.iter().map(|a| mean(a[1])).collect(),
    )
}

pub fn write_loss_gap_csv(series: &[LossGapSeries], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["episode", "stage", "gap"])?;
    for s in series {
        for (i, g) in s.gaps.iter().enumerate() {
            w.write_record([s.episode.to_string(), (i + 1).to_string(), g.to_string()])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
    trace::write_bytes(path, &bytes)
}

pub fn write_weight_means_csv(series: &[WeightMeanSeries], path: &Path) -> Result<()> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["episode", "stage", "minority_mean", "other_mean"])?;
    for s in series {
        for (i, (m, o)) in s.minority.iter().zip(&s.other).enumerate() {
            w.write_record([s.episode.to_string(), (i + 1).to_string(), opt(*m), opt(*o)])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
    trace::write_bytes(path, &bytes)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSummary {
    pub traces: usize,
    pub final_acc_target: Option<MeanStd>,
    pub final_acc_reference: Option<MeanStd>,
    /// Per trace: share of post-warmup stages with a negative loss gap.
    pub negative_gap_fraction: Option<MeanStd>,
    pub minority_classes: Vec<usize>,
}

/// Trace files (`*.csv`) of `traces_dir` in lexicographic order.
pub fn list_traces(traces_dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(traces_dir).map_err(|e| Error::io(traces_dir, e))?;
    let mut paths = Vec::new();
    for e in entries {
        let p = e.map_err(|e| Error::io(traces_dir, e))?.path();
        if p.extension().is_some_and(|x| x == "csv") {
            paths.push(p);
        }
    }
    paths.sort();
    Ok(paths)
}

/// Regenerates `analysis/loss_gap.csv`, `analysis/weight_means.csv` and
/// `summary.json` under `run_dir` from its `traces/` directory. Episode ids in
/// the outputs are positions in the sorted trace list.
pub fn analyze_run_dir(run_dir: &Path, warmup: usize, minority: &[usize]) -> Result<AnalysisSummary> {
    let paths = list_traces(&run_dir.join("traces"))?;
    if paths.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no traces under {}",
            run_dir.join("traces").display()
        )));
    }
    let mut traces = Vec::with_capacity(paths.len());
    for (i, p) in paths.iter().enumerate() {
        let mut t = trace::load_trace(p)?;
        t.episode = i as u64;
        traces.push(t);
    }
    let summary = analyze_traces(&traces, warmup, minority, &run_dir.join("analysis"))?;
    trace::write_bytes(&run_dir.join("summary.json"), &serde_json::to_vec_pretty(&summary)?)?;
    Ok(summary)
}

/// Writes the two analysis CSVs for `traces` into `out_dir`.
pub fn analyze_traces(
    traces: &[EpisodeTrace],
    warmup: usize,
    minority: &[usize],
    out_dir: &Path,
) -> Result<AnalysisSummary> {
    let gaps: Vec<LossGapSeries> = traces.iter().map(loss_gap).collect();
    let weights = traces
        .iter()
        .map(|t| weight_means(t, minority))
        .collect::<Result<Vec<_>>>()?;
    write_loss_gap_csv(&gaps, &out_dir.join("loss_gap.csv"))?;
    write_weight_means_csv(&weights, &out_dir.join("weight_means.csv"))?;
    let ok: Vec<&EpisodeTrace> = traces.iter().filter(|t| !t.failed).collect();
    let last = |f: fn(&crate::episode::StageRecord) -> f64| {
        MeanStd::of(&ok.iter().filter_map(|t| t.stages.last().map(f)).collect::<Vec<_>>())
    };
    Ok(AnalysisSummary {
        traces: traces.len(),
        final_acc_target: last(|r| r.acc_target),
        final_acc_reference: last(|r| r.acc_reference),
        negative_gap_fraction: MeanStd::of(
            &gaps
                .iter()
                .zip(traces)
                .filter(|(_, t)| !t.failed)
                .map(|(g, _)| negative_gap_fraction(g, warmup))
                .collect::<Vec<_>>(),
        ),
        minority_classes: minority.to_vec(),
    })
}
