//! Fluid model of the closed control loop, used as an independent
//! reference for the simulator's steady state.
//!
//! Flows are replaced by their mean rate and time advances one control
//! cycle per step. The offered share vector `p(k)` chosen at step `k` stays
//! in the system for `W = flow_duration / cycle_period` steps, so the load
//! on instance `i` is `L * sum(p_i over the W steps) / W` where `L` is the
//! total offered load. Costs reach the ingress one cycle after they were
//! measured, which is why the newest share vector is not part of the
//! window used for the next step.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::Serialize;
use thiserror::Error;

use super::scenario::{CompiledEvent, CompiledScenario};
use crate::dmano::CostPolicy;
use crate::serviceplane::spf::{shortest_path_tree, Graph};
use crate::types::{InstanceId, NodeId};

pub const MAX_ITERATIONS: usize = 10_000;
pub const TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("unsupported by oracle: {0}")]
    UnsupportedByOracle(String),
    #[error("no reachable instance in {phase}")]
    Unroutable { phase: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleShare {
    pub instance: InstanceId,
    pub name: String,
    pub host: String,
    /// Fraction of new flows steered to the instance.
    pub offered_share: f64,
    /// Fraction of the admitted load processed by the instance.
    pub admitted_share: f64,
    /// Range of `admitted_share` over the trajectory tail.
    pub tail_min: f64,
    pub tail_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OraclePhase {
    pub phase: String,
    pub converged: bool,
    pub iterations: usize,
    pub shares: Vec<OracleShare>,
}

impl OraclePhase {
    pub fn share(&self, instance: InstanceId) -> Option<&OracleShare> {
        self.shares.iter().find(|s| s.instance == instance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleResult {
    pub cost_policy: CostPolicy,
    pub total_load: f64,
    pub phases: Vec<OraclePhase>,
}

impl OracleResult {
    pub fn phase(&self, name: &str) -> Option<&OraclePhase> {
        self.phases.iter().find(|p| p.phase == name)
    }
}

struct Inst {
    id: InstanceId,
    name: String,
    host: NodeId,
    capacity: f64,
    n: f64,
}

/// Predicted steady-state share vector of every phase.
pub fn oracle_distribution(
    sc: &CompiledScenario,
    policy: CostPolicy,
) -> Result<OracleResult, OracleError> {
    let services: BTreeSet<_> = sc
        .catalog
        .iter()
        .flat_map(|(_, chain)| chain.iter().copied())
        .collect();
    if services.len() != 1 || sc.catalog.iter().any(|(_, c)| c.len() != 1) {
        return Err(OracleError::UnsupportedByOracle(
            "needs exactly one service type and single-hop chains".into(),
        ));
    }
    let Some(first) = sc.traffic.first() else {
        return Err(OracleError::UnsupportedByOracle("no traffic".into()));
    };
    if sc
        .traffic
        .iter()
        .any(|t| t.ingress != first.ingress || t.flow_duration != first.flow_duration)
    {
        return Err(OracleError::UnsupportedByOracle(
            "traffic classes differ in ingress or flow duration".into(),
        ));
    }
    let total_load: f64 = sc.traffic.iter().map(|t| t.steady_state_pps()).sum();
    if total_load <= 0.0 {
        return Err(OracleError::UnsupportedByOracle("no traffic".into()));
    }
    let period = sc.source.dmano.cycle_period;
    let ceiling = f64::from(sc.source.dmano.cost_ceiling);
    let window = ((first.flow_duration.as_secs_f64() / period).round() as usize).max(1);

    let mut graph: Graph = sc.node_ids().map(|n| (n, Vec::new())).collect();
    for l in &sc.links {
        graph.entry(l.a).or_default().push((l.b, u64::from(l.cost)));
        graph.entry(l.b).or_default().push((l.a, u64::from(l.cost)));
    }
    let dist = shortest_path_tree(&graph, first.ingress).dist;

    let all = sc.all_instances();
    let mut history: VecDeque<BTreeMap<InstanceId, f64>> =
        std::iter::repeat_n(BTreeMap::new(), window + 1).collect();
    let mut phases = Vec::new();

    for w in &sc.phases {
        let mut alive: BTreeSet<InstanceId> = sc.vnfs.iter().map(|v| v.instance).collect();
        for e in sc.events.iter().filter(|e| e.at <= w.start) {
            match &e.event {
                CompiledEvent::Instantiate(v) => {
                    alive.insert(v.instance);
                }
                CompiledEvent::Withdraw { instance, .. } => {
                    alive.remove(instance);
                }
            }
        }
        let insts: Vec<Inst> = all
            .iter()
            .filter(|v| alive.contains(&v.instance))
            .filter_map(|v| {
                dist.get(&v.host).map(|&n| Inst {
                    id: v.instance,
                    name: v.name.clone(),
                    host: v.host,
                    capacity: v.capacity,
                    n: n as f64,
                })
            })
            .collect();
        if insts.is_empty() {
            return Err(OracleError::Unroutable {
                phase: w.name.clone(),
            });
        }
        phases.push(iterate(
            sc,
            &w.name,
            &insts,
            &mut history,
            total_load,
            window,
            policy,
            ceiling,
        ));
    }

    Ok(OracleResult {
        cost_policy: policy,
        total_load,
        phases,
    })
}

#[allow(clippy::too_many_arguments)]
fn iterate(
    sc: &CompiledScenario,
    phase: &str,
    insts: &[Inst],
    history: &mut VecDeque<BTreeMap<InstanceId, f64>>,
    total_load: f64,
    window: usize,
    policy: CostPolicy,
    ceiling: f64,
) -> OraclePhase {
    // Admitted load of each instance given the flows in the window.
    let admitted = |h: &VecDeque<BTreeMap<InstanceId, f64>>| -> Vec<f64> {
        insts
            .iter()
            .map(|i| {
                let sum: f64 = h.iter().take(window).filter_map(|p| p.get(&i.id)).sum();
                (total_load * sum / window as f64).min(i.capacity)
            })
            .collect()
    };
    let shares_of = |a: &[f64]| -> Vec<f64> {
        let t: f64 = a.iter().sum();
        a.iter()
            .map(|x| if t > 0.0 { x / t } else { 0.0 })
            .collect()
    };

    let tail_len = 10 * window;
    let mut tail: VecDeque<(Vec<f64>, Vec<f64>)> = VecDeque::with_capacity(tail_len + 1);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let loads = admitted(history);
        let weights: Vec<f64> = insts
            .iter()
            .zip(&loads)
            .map(|(i, &pps)| {
                let v = match policy {
                    CostPolicy::RemainingCapacity => i.capacity - pps,
                    CostPolicy::ConsumedLoad => pps,
                }
                .clamp(0.0, ceiling);
                1.0 / (1.0 + i.n + v)
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let p: BTreeMap<InstanceId, f64> = insts
            .iter()
            .zip(&weights)
            .map(|(i, w)| (i.id, w / total))
            .collect();
        history.pop_front();
        history.push_back(p);

        let offered: Vec<f64> = insts.iter().map(|i| history[window][&i.id]).collect();
        tail.push_back((offered, shares_of(&admitted(history))));
        if tail.len() > tail_len {
            tail.pop_front();
        }
        let stationary = insts.iter().all(|i| {
            let values: Option<Vec<f64>> = history.iter().map(|p| p.get(&i.id).copied()).collect();
            values.is_some_and(|v| {
                let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                hi - lo < TOLERANCE
            })
        });
        if stationary {
            converged = true;
            break;
        }
    }

    let last = tail.back().expect("at least one iteration");
    let shares = insts
        .iter()
        .enumerate()
        .map(|(k, i)| {
            let (offered, admitted_share, lo, hi) = if converged {
                (last.0[k], last.1[k], last.1[k], last.1[k])
            } else {
                let n = tail.len() as f64;
                let col = tail.iter().map(|t| t.1[k]);
                (
                    tail.iter().map(|t| t.0[k]).sum::<f64>() / n,
                    col.clone().sum::<f64>() / n,
                    col.clone().fold(f64::INFINITY, f64::min),
                    col.fold(f64::NEG_INFINITY, f64::max),
                )
            };
            OracleShare {
                instance: i.id,
                name: i.name.clone(),
                host: sc.node_name(i.host),
                offered_share: offered,
                admitted_share,
                tail_min: lo,
                tail_max: hi,
            }
        })
        .collect();
    OraclePhase {
        phase: phase.to_string(),
        converged,
        iterations,
        shares,
    }
}
