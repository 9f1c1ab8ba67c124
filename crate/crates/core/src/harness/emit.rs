use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde_json::json;

use super::metrics::RoundMetrics;
use super::sim::SimReport;
use crate::error::Result;
use crate::ledger::HASH_ALGORITHM;

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const EVENTS_FILE: &str = "events.jsonl";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_metrics_csv(metrics: &[RoundMetrics], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["round", "ma", "ba", "tpr", "tnr", "wall_time"])?;
    for m in metrics {
        w.write_record([
            m.round.to_string(),
            m.ma.to_string(),
            m.ba.to_string(),
            opt(m.tpr),
            opt(m.tnr),
            m.wall_time.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn summary(report: &SimReport) -> serde_json::Value {
    let last = report.final_metrics();
    json!({
        "config": report.config,
        "seed": report.config.seed,
        "hash": HASH_ALGORITHM,
        "rounds": report.metrics.len(),
        "attackers": report.attackers,
        "bad_verifiers": report.bad_verifiers,
        "final": {
            "ma": last.ma,
            "ba": last.ba,
            "tpr": last.tpr,
            "tnr": last.tnr,
            "global_digest": report.traces.last().map(|t| t.global_digest),
        },
        "mean_round_time": report.mean_round_time(),
    })
}

/// Write `metrics.csv`, `summary.json` and `events.jsonl` into `dir`.
pub fn emit(report: &SimReport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_metrics_csv(&report.metrics, BufWriter::new(File::create(dir.join(METRICS_FILE))?))?;
    let mut s = BufWriter::new(File::create(dir.join(SUMMARY_FILE))?);
    serde_json::to_writer_pretty(&mut s, &summary(report))?;
    s.write_all(b"\n")?;
    s.flush()?;
    let mut e = BufWriter::new(File::create(dir.join(EVENTS_FILE))?);
    for ev in &report.events {
        serde_json::to_writer(&mut e, ev)?;
        e.write_all(b"\n")?;
    }
    e.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_leaves_absent_rates_empty() {
        let rows = vec![
            RoundMetrics { round: 1, ma: 0.5, ba: 0.25, tpr: None, tnr: Some(1.0), wall_time: 0.1 },
            RoundMetrics { round: 2, ma: 0.75, ba: 0.0, tpr: Some(0.5), tnr: None, wall_time: 0.2 },
        ];
        let mut buf = Vec::new();
        write_metrics_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "round,ma,ba,tpr,tnr,wall_time\n1,0.5,0.25,,1,0.1\n2,0.75,0,0.5,,0.2\n");
    }
}
