use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use super::round::{RoundRecord, ScoreRow};
use crate::error::Result;
use crate::fed::Strategy;

fn join(ids: &[usize]) -> String {
    ids.iter().map(usize::to_string).collect::<Vec<_>>().join(";")
}

pub const CSV_HEADER: [&str; 8] = [
    "round",
    "strategy",
    "portion",
    "global_ppl",
    "local_ppl",
    "num_selected_tensors",
    "selected_block_ids",
    "participants",
];

/// Serialises records as CSV with [`CSV_HEADER`] columns.
pub fn report_csv(records: &[RoundRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::with_capacity(64 * (records.len() + 1)));
    // Writing to an in-memory buffer cannot fail.
    w.write_record(CSV_HEADER).expect("in-memory write");
    for r in records {
        w.write_record([
            r.round.to_string(),
            r.strategy.to_string(),
            r.portion.to_string(),
            r.global_ppl.to_string(),
            r.local_ppl.to_string(),
            r.num_selected_tensors.to_string(),
            join(&r.selected_block_ids),
            join(&r.participants),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii fields")
}

pub fn write_report(records: &[RoundRecord], path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, report_csv(records))?;
    Ok(())
}

pub fn write_score_dump(rows: &[ScoreRow], path: impl AsRef<Path>) -> Result<()> {
    let mut out = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut out, row)?;
        out.push(b'\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Minimum perplexities reached during one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub min_global_ppl: f64,
    pub min_local_ppl: f64,
}

/// `None` for an empty record list.
pub fn summarize(records: &[RoundRecord]) -> Option<Summary> {
    if records.is_empty() {
        return None;
    }
    let min = |f: fn(&RoundRecord) -> f64| records.iter().map(f).fold(f64::INFINITY, f64::min);
    Some(Summary { min_global_ppl: min(|r| r.global_ppl), min_local_ppl: min(|r| r.local_ppl) })
}

/// Arithmetic mean of per-run minima.
pub fn average_minima(runs: &[Summary]) -> Option<Summary> {
    if runs.is_empty() {
        return None;
    }
    let n = runs.len() as f64;
    Some(Summary {
        min_global_ppl: runs.iter().map(|s| s.min_global_ppl).sum::<f64>() / n,
        min_local_ppl: runs.iter().map(|s| s.min_local_ppl).sum::<f64>() / n,
    })
}

/// Per-strategy rows of a comparison summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategySummary {
    pub strategy: Strategy,
    pub per_seed: Vec<Summary>,
    pub mean: Summary,
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}
