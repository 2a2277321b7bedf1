use std::collections::BTreeMap;
use std::io;

use serde::Serialize;

use super::scenario::{CompiledScenario, PhaseWindow};
use crate::dataplane::DropCause;
use crate::types::{InstanceId, NodeId, SimTime};

pub const METRICS_CSV_HEADER: [&str; 9] = [
    "time",
    "instance",
    "host",
    "admitted_pps",
    "share",
    "drops_overload",
    "drops_unroutable",
    "lsa_tx_total",
    "generation",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceSample {
    pub instance: InstanceId,
    pub host: NodeId,
    pub admitted_pps: f64,
    /// `None` when nothing was admitted anywhere during the sample.
    pub share: Option<f64>,
    /// Cumulative.
    pub drops_overload: u64,
}

/// One metrics sample; counters are cumulative since t = 0.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsFrame {
    pub time: SimTime,
    pub instances: Vec<InstanceSample>,
    pub drops: BTreeMap<DropCause, u64>,
    pub lsa_tx_total: u64,
    pub generations: BTreeMap<NodeId, u64>,
}

impl MetricsFrame {
    pub fn total_admitted_pps(&self) -> f64 {
        self.instances.iter().map(|i| i.admitted_pps).sum()
    }

    pub fn share_of(&self, instance: InstanceId) -> Option<f64> {
        self.instances
            .iter()
            .find(|i| i.instance == instance)
            .and_then(|i| i.share)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseShare {
    pub phase: String,
    pub window_start: f64,
    pub window_end: f64,
    pub instance: InstanceId,
    pub instance_name: String,
    pub host: String,
    /// Mean over samples with traffic; `None` if there were none.
    pub mean_share: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub run_index: u32,
    pub seed: u64,
    pub packets_in: u64,
    pub delivered: u64,
    pub drops: BTreeMap<DropCause, u64>,
    pub flows_started: u64,
    pub flows_completed: u64,
    pub flows_active: u64,
    pub lsa_tx_total: u64,
    /// Simulated time at which the connectors first chose each instance.
    pub first_steered: BTreeMap<InstanceId, f64>,
    /// Delivered packets whose hop trace did not match their chain.
    pub trace_violations: u64,
    pub mean_latency: Option<f64>,
    pub phase_shares: Vec<PhaseShare>,
}

impl RunSummary {
    pub fn total_drops(&self) -> u64 {
        self.drops.values().sum()
    }

    pub fn phase_share(&self, phase: &str, instance: InstanceId) -> Option<f64> {
        self.phase_shares
            .iter()
            .find(|p| p.phase == phase && p.instance == instance)
            .and_then(|p| p.mean_share)
    }
}

/// Mean share of every instance alive in `window`. Samples with no traffic
/// are skipped; an instance missing from a sample counts as 0.
pub fn phase_shares(
    scenario: &CompiledScenario,
    frames: &[MetricsFrame],
    window: &PhaseWindow,
) -> Vec<PhaseShare> {
    let in_window: Vec<&MetricsFrame> = frames
        .iter()
        .filter(|f| f.time > window.start && f.time <= window.end)
        .collect();
    // Windows never straddle a timed event, so the first sample fixes the
    // instance set. A sample landing on the end bound may already show an
    // instance created at that instant.
    let hosts: BTreeMap<InstanceId, NodeId> = in_window
        .first()
        .map(|f| f.instances.iter().map(|s| (s.instance, s.host)).collect())
        .unwrap_or_default();
    let with_traffic: Vec<&&MetricsFrame> = in_window
        .iter()
        .filter(|f| f.total_admitted_pps() > 0.0)
        .collect();
    let names: BTreeMap<InstanceId, String> = scenario
        .all_instances()
        .into_iter()
        .map(|v| (v.instance, v.name))
        .collect();
    hosts
        .into_iter()
        .map(|(instance, host)| {
            let mean_share = (!with_traffic.is_empty()).then(|| {
                with_traffic
                    .iter()
                    .map(|f| f.share_of(instance).unwrap_or(0.0))
                    .sum::<f64>()
                    / with_traffic.len() as f64
            });
            PhaseShare {
                phase: window.name.clone(),
                window_start: window.start.as_secs_f64(),
                window_end: window.end.as_secs_f64(),
                instance,
                instance_name: names.get(&instance).cloned().unwrap_or_default(),
                host: scenario.node_name(host),
                mean_share,
            }
        })
        .collect()
}

/// Writes the per-run time series. A sample without instances still gets
/// one row so that control-plane counters remain visible.
pub fn write_metrics_csv<W: io::Write>(
    scenario: &CompiledScenario,
    frames: &[MetricsFrame],
    out: W,
) -> csv::Result<()> {
    let names: BTreeMap<InstanceId, String> = scenario
        .all_instances()
        .into_iter()
        .map(|v| (v.instance, v.name))
        .collect();
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(METRICS_CSV_HEADER)?;
    for f in frames {
        let time = format_secs(f.time);
        let unroutable = f.drops.get(&DropCause::Unroutable).copied().unwrap_or(0);
        if f.instances.is_empty() {
            wtr.write_record([
                time.as_str(),
                "",
                "",
                "0",
                "",
                "0",
                &unroutable.to_string(),
                &f.lsa_tx_total.to_string(),
                "",
            ])?;
            continue;
        }
        for s in &f.instances {
            wtr.write_record([
                time.clone(),
                names
                    .get(&s.instance)
                    .cloned()
                    .unwrap_or_else(|| s.instance.to_string()),
                scenario.node_name(s.host),
                s.admitted_pps.to_string(),
                s.share.map(|x| format!("{x:.6}")).unwrap_or_default(),
                s.drops_overload.to_string(),
                unroutable.to_string(),
                f.lsa_tx_total.to_string(),
                f.generations.get(&s.host).copied().unwrap_or(0).to_string(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub(crate) fn format_secs(t: SimTime) -> String {
    let s = t.as_secs_f64();
    if s.fract() == 0.0 {
        format!("{s:.0}")
    } else {
        format!("{s:.3}")
    }
}
