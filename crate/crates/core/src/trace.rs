//! CSV forms of episode traces, static schedules and the analysis series.

use std::io::{Read, Write};
use std::path::Path;

use crate::episode::{EpisodeTrace, Mode, StageRecord, StaticSchedule};
use crate::error::{Error, Result};
use crate::strategy::THETA_DIM;

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_f64(field: &str, what: &str) -> Result<f64> {
    field
        .parse()
        .map_err(|_| Error::InvalidInput(format!("{what}: cannot parse {field:?}")))
}

fn parse_opt(field: &str, what: &str) -> Result<Option<f64>> {
    if field.is_empty() {
        Ok(None)
    } else {
        parse_f64(field, what).map(Some)
    }
}

/// Header of a trace CSV for `classes` classes.
pub fn trace_header(classes: usize) -> Vec<String> {
    let mut h: Vec<String> = ["episode", "stage", "acc_target", "acc_reference", "reward"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((0..THETA_DIM).map(|i| format!("theta_{i}")));
    h.push("mean_loss_gap".into());
    h.extend((0..classes).map(|c| format!("weight_mean_class_{c}")));
    h.extend((0..classes).map(|c| format!("weight_count_class_{c}")));
    h
}

/// One row per stage. Rows carry no worker/mode columns; those live in the
/// file name and the run report.
pub fn write_trace<W: Write>(trace: &EpisodeTrace, classes: usize, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trace_header(classes))?;
    for r in &trace.stages {
        let mut row = vec![
            trace.episode.to_string(),
            r.stage.to_string(),
            r.acc_target.to_string(),
            r.acc_reference.to_string(),
            fmt_opt(r.reward),
        ];
        row.extend(r.theta.iter().map(|t| t.to_string()));
        row.push(r.mean_loss_gap.to_string());
        row.extend(r.weight_mean.iter().map(|m| fmt_opt(*m)));
        row.extend(r.weight_count.iter().map(|n| n.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

pub fn read_trace<R: Read>(input: R) -> Result<EpisodeTrace> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers()?.clone();
    let fixed = 5 + THETA_DIM + 1;
    if header.len() < fixed + 2 || !(header.len() - fixed).is_multiple_of(2) {
        return Err(Error::InvalidInput(format!(
            "trace header has {} columns",
            header.len()
        )));
    }
    let classes = (header.len() - fixed) / 2;
    if header.iter().collect::<Vec<_>>() != trace_header(classes) {
        return Err(Error::InvalidInput("unexpected trace header".into()));
    }
    let mut episode = 0;
    let mut stages = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let f = |i: usize| &rec[i];
        episode = f(0)
            .parse()
            .map_err(|_| Error::InvalidInput(format!("bad episode id {:?}", f(0))))?;
        let stage = f(1)
            .parse()
            .map_err(|_| Error::InvalidInput(format!("bad stage {:?}", f(1))))?;
        let theta = (0..THETA_DIM)
            .map(|i| parse_f64(f(5 + i), "theta"))
            .collect::<Result<Vec<_>>>()?;
        let weight_mean = (0..classes)
            .map(|c| parse_opt(f(fixed + c), "weight mean"))
            .collect::<Result<Vec<_>>>()?;
        let weight_count = (0..classes)
            .map(|c| {
                f(fixed + classes + c)
                    .parse()
                    .map_err(|_| Error::InvalidInput("bad weight count".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        stages.push(StageRecord {
            stage,
            acc_target: parse_f64(f(2), "acc_target")?,
            acc_reference: parse_f64(f(3), "acc_reference")?,
            reward: parse_opt(f(4), "reward")?,
            theta,
            mean_loss_gap: parse_f64(f(5 + THETA_DIM), "mean_loss_gap")?,
            weight_mean,
            weight_count,
        });
    }
    let failed = stages.iter().any(|s| s.acc_target.is_nan());
    Ok(EpisodeTrace {
        episode,
        worker: 0,
        mode: Mode::Eval,
        failed,
        stages,
        batches: Vec::new(),
        test_acc_target: None,
        test_acc_reference: None,
    })
}

pub fn save_trace(trace: &EpisodeTrace, classes: usize, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_trace(trace, classes, &mut buf)?;
    write_bytes(path, &buf)
}

pub fn load_trace(path: &Path) -> Result<EpisodeTrace> {
    read_trace(std::fs::File::open(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_schedule<W: Write>(schedule: &StaticSchedule, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["stage".to_string()];
    header.extend((0..THETA_DIM).map(|i| format!("theta_{i}")));
    w.write_record(&header)?;
    for (i, theta) in schedule.thetas.iter().enumerate() {
        let mut row = vec![(i + 1).to_string()];
        row.extend(theta.iter().map(|t| t.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

/// Parses a schedule; stages must be listed as `1..=T_max` in order.
pub fn read_schedule<R: Read>(input: R) -> Result<StaticSchedule> {
    let mut rd = csv::Reader::from_reader(input);
    if rd.headers()?.len() != 1 + THETA_DIM {
        return Err(Error::InvalidInput("schedule needs stage + 5 theta columns".into()));
    }
    let mut thetas = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let stage: usize = rec[0]
            .parse()
            .map_err(|_| Error::InvalidInput(format!("bad stage {:?}", &rec[0])))?;
        if stage != thetas.len() + 1 {
            return Err(Error::InvalidInput(format!(
                "schedule stage {stage} out of order"
            )));
        }
        let theta = (1..=THETA_DIM)
            .map(|i| parse_f64(&rec[i], "theta"))
            .collect::<Result<Vec<_>>>()?;
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite(format!("schedule stage {stage}")));
        }
        thetas.push(theta);
    }
    if thetas.is_empty() {
        return Err(Error::InvalidInput("schedule has no stages".into()));
    }
    Ok(StaticSchedule { thetas })
}

pub fn save_schedule(schedule: &StaticSchedule, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_schedule(schedule, &mut buf)?;
    write_bytes(path, &buf)
}

pub fn load_schedule(path: &Path) -> Result<StaticSchedule> {
    read_schedule(std::fs::File::open(path).map_err(|e| Error::io(path, e))?)
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_trace() -> EpisodeTrace {
        EpisodeTrace {
            episode: 3,
            worker: 0,
            mode: Mode::Eval,
            failed: false,
            stages: (1..=3)
                .map(|s| StageRecord {
                    stage: s,
                    acc_target: 0.1 * s as f64,
                    acc_reference: 0.7,
                    reward: (s > 1).then_some(-0.012_345_678_9 * s as f64),
                    theta: vec![0.1, -0.2, 1e-17, 0.0, 3.5],
                    mean_loss_gap: -1.0 / 3.0,
                    weight_mean: vec![Some(1.0), None],
                    weight_count: vec![7, 0],
                })
                .collect(),
            batches: Vec::new(),
            test_acc_target: None,
            test_acc_reference: None,
        }
    }

    #[test]
    fn trace_roundtrip_is_exact() {
        let t = sample_trace();
        let mut buf = Vec::new();
        write_trace(&t, 2, &mut buf).unwrap();
        let back = read_trace(buf.as_slice()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn schedule_roundtrip_and_order_check() {
        let s = StaticSchedule {
            thetas: vec![vec![0.5, -0.25, 0.0, 1e-300, 2.0]; 4],
        };
        let mut buf = Vec::new();
        write_schedule(&s, &mut buf).unwrap();
        assert_eq!(read_schedule(buf.as_slice()).unwrap(), s);
        let bad = "stage,theta_0,theta_1,theta_2,theta_3,theta_4\n2,0,0,0,0,0\n";
        assert!(read_schedule(bad.as_bytes()).is_err());
    }
}
