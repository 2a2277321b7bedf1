use std::collections::BTreeMap;
use std::io;

use rayon::prelude::*;
use serde::Serialize;

use super::metrics::RunSummary;
use super::scenario::CompiledScenario;
use super::sim::{run, RunOutput, SimError};
use crate::types::InstanceId;

pub const AGGREGATE_CSV_HEADER: [&str; 12] = [
    "phase",
    "window_start",
    "window_end",
    "instance",
    "host",
    "runs",
    "mean",
    "median",
    "q1",
    "q3",
    "min",
    "max",
];

/// Five-number summary plus mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoxStats {
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

impl BoxStats {
    /// Quartiles by linear interpolation between order statistics.
    pub fn from_samples(samples: &[f64]) -> Option<BoxStats> {
        if samples.is_empty() {
            return None;
        }
        let mut v = samples.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let h = (v.len() - 1) as f64 * p;
            let lo = h.floor() as usize;
            let hi = h.ceil() as usize;
            v[lo] + (h - lo as f64) * (v[hi] - v[lo])
        };
        Some(BoxStats {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            median: q(0.5),
            q1: q(0.25),
            q3: q(0.75),
            min: v[0],
            max: v[v.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub phase: String,
    pub window_start: f64,
    pub window_end: f64,
    pub instance: InstanceId,
    pub instance_name: String,
    pub host: String,
    /// Runs in which the share was defined.
    pub runs: usize,
    pub stats: Option<BoxStats>,
}

#[derive(Debug, Clone)]
pub struct BatchOutput {
    pub runs: Vec<RunOutput>,
    pub aggregate: Vec<AggregateRow>,
}

impl BatchOutput {
    pub fn summaries(&self) -> impl Iterator<Item = &RunSummary> {
        self.runs.iter().map(|r| &r.summary)
    }

    pub fn row(&self, phase: &str, instance: InstanceId) -> Option<&AggregateRow> {
        self.aggregate
            .iter()
            .find(|r| r.phase == phase && r.instance == instance)
    }
}

/// Runs `runs` independent replications in parallel. Run `k` uses the seed
/// derived from the scenario seed and `k`; results are in run order.
pub fn run_batch(scenario: &CompiledScenario, runs: u32) -> Result<BatchOutput, SimError> {
    let outputs = (0..runs.max(1))
        .into_par_iter()
        .map(|k| run(scenario, k))
        .collect::<Result<Vec<_>, _>>()?;
    let summaries: Vec<RunSummary> = outputs.iter().map(|o| o.summary.clone()).collect();
    Ok(BatchOutput {
        aggregate: aggregate(&summaries),
        runs: outputs,
    })
}

/// Per phase and instance statistics of the per-run mean shares.
pub fn aggregate(summaries: &[RunSummary]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(String, InstanceId), (AggregateRow, Vec<f64>)> = BTreeMap::new();
    for s in summaries {
        for p in &s.phase_shares {
            let entry = groups
                .entry((p.phase.clone(), p.instance))
                .or_insert_with(|| {
                    (
                        AggregateRow {
                            phase: p.phase.clone(),
                            window_start: p.window_start,
                            window_end: p.window_end,
                            instance: p.instance,
                            instance_name: p.instance_name.clone(),
                            host: p.host.clone(),
                            runs: 0,
                            stats: None,
                        },
                        Vec::new(),
                    )
                });
            if let Some(x) = p.mean_share {
                entry.1.push(x);
            }
        }
    }
    groups
        .into_values()
        .map(|(mut row, samples)| {
            row.runs = samples.len();
            row.stats = BoxStats::from_samples(&samples);
            row
        })
        .collect()
}

pub fn write_aggregate_csv<W: io::Write>(rows: &[AggregateRow], out: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(AGGREGATE_CSV_HEADER)?;
    let f = |x: f64| format!("{x:.6}");
    for r in rows {
        let mut rec = vec![
            r.phase.clone(),
            r.window_start.to_string(),
            r.window_end.to_string(),
            r.instance_name.clone(),
            r.host.clone(),
            r.runs.to_string(),
        ];
        match r.stats {
            Some(s) => rec.extend([s.mean, s.median, s.q1, s.q3, s.min, s.max].map(f)),
            None => rec.extend(std::iter::repeat_n(String::new(), 6)),
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}
