//! Per-sample records and aggregate counting metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompt::Level;
use crate::strategies::{Method, RunResult};

/// One CSV row: a single (item, method) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: u32,
    pub method: Method,
    pub level: Level,
    pub k: u32,
    pub c1: Option<u32>,
    pub c2: Option<u32>,
    pub final_count: u32,
    pub gamma_used: f64,
    pub denoiser_evals: u64,
    pub counter_calls: u64,
    pub wall_time_s: f64,
    pub seed: u64,
}

impl SampleRecord {
    pub fn from_run(id: u32, level: Level, run: &RunResult) -> Self {
        Self {
            id,
            method: run.method,
            level,
            k: run.target,
            c1: run.c1,
            c2: run.c2,
            final_count: run.final_count,
            gamma_used: run.gamma_used,
            denoiser_evals: run.denoiser_evals,
            counter_calls: run.counter_calls,
            wall_time_s: run.wall_time,
            seed: run.seed,
        }
    }

    fn error(&self) -> f64 {
        f64::from(self.final_count) - f64::from(self.k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountBreakdown {
    pub n: usize,
    pub accuracy: f64,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: Method,
    pub n: usize,
    /// Exact-match count accuracy in `[0, 1]`.
    pub accuracy: f64,
    pub mae: f64,
    pub rmse: f64,
    pub mean_denoiser_evals: f64,
    pub mean_counter_calls: f64,
    pub mean_wall_time: f64,
    pub per_count: BTreeMap<u32, CountBreakdown>,
}

impl MetricsReport {
    /// Mean accuracy over the per-count entries for `counts` that are present.
    pub fn accuracy_over(&self, counts: &[u32]) -> Option<f64> {
        let accs: Vec<f64> = counts
            .iter()
            .filter_map(|k| self.per_count.get(k).map(|b| b.accuracy))
            .collect();
        (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64)
    }
}

pub fn evaluate(results: &[RunResult]) -> Result<MetricsReport> {
    let records: Vec<SampleRecord> = results
        .iter()
        .enumerate()
        .map(|(i, r)| SampleRecord::from_run(i as u32, Level::L1, r))
        .collect();
    evaluate_records(&records)
}

/// Aggregates one method's records. Errors on empty or mixed input.
pub fn evaluate_records(records: &[SampleRecord]) -> Result<MetricsReport> {
    let first = records
        .first()
        .ok_or_else(|| Error::invalid("cannot evaluate an empty result set"))?;
    if records.iter().any(|r| r.method != first.method) {
        return Err(Error::invalid("results mix several methods"));
    }
    let n = records.len() as f64;
    let mean = |f: &dyn Fn(&SampleRecord) -> f64| records.iter().map(f).sum::<f64>() / n;

    let mut groups: BTreeMap<u32, Vec<&SampleRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.k).or_default().push(r);
    }
    let per_count = groups
        .into_iter()
        .map(|(k, rs)| {
            let m = rs.len() as f64;
            let hits = rs.iter().filter(|r| r.final_count == r.k).count() as f64;
            let abs = rs.iter().map(|r| r.error().abs()).sum::<f64>();
            (k, CountBreakdown { n: rs.len(), accuracy: hits / m, mae: abs / m })
        })
        .collect();

    Ok(MetricsReport {
        method: first.method,
        n: records.len(),
        accuracy: mean(&|r| if r.final_count == r.k { 1.0 } else { 0.0 }),
        mae: mean(&|r| r.error().abs()),
        rmse: mean(&|r| r.error().powi(2)).sqrt(),
        mean_denoiser_evals: mean(&|r| r.denoiser_evals as f64),
        mean_counter_calls: mean(&|r| r.counter_calls as f64),
        mean_wall_time: mean(&|r| r.wall_time_s),
        per_count,
    })
}
