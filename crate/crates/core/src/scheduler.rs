//! Per-round device selection.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::net::LinkState;

/// PF moving-average smoothing factor.
pub const DEFAULT_PF_SMOOTHING: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Policy {
    RoundRobin,
    BestChannel,
    ProportionalFair,
    All,
}

impl Policy {
    pub fn as_str(self) -> &'static str {
        match self {
            Policy::RoundRobin => "round_robin",
            Policy::BestChannel => "best_channel",
            Policy::ProportionalFair => "proportional_fair",
            Policy::All => "all",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "round_robin" => Ok(Policy::RoundRobin),
            "best_channel" => Ok(Policy::BestChannel),
            "proportional_fair" => Ok(Policy::ProportionalFair),
            "all" => Ok(Policy::All),
            other => Err(format!(
                "unknown policy `{other}` (expected round_robin, best_channel, proportional_fair or all)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScheduleDecision {
    pub round_index: u64,
    /// Ascending device ids.
    pub scheduled: Vec<usize>,
    pub ratio: f64,
}

/// `max(1, round(ratio·K))`.
pub fn scheduled_count(k: usize, ratio: f64) -> usize {
    ((ratio * k as f64).round() as usize).clamp(1, k.max(1))
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidArgument(format!("ratio must be in (0, 1], got {ratio}")));
    }
    Ok(())
}

/// Devices `(round·n + j) mod K` for `j < n`.
pub fn round_robin(k: usize, round_index: u64, n_sched: usize) -> Result<ScheduleDecision> {
    if n_sched == 0 || n_sched > k {
        return Err(Error::InvalidArgument(format!(
            "round robin needs 1 <= n <= K, got n = {n_sched}, K = {k}"
        )));
    }
    let start = (round_index % k as u64) as usize * n_sched;
    let mut scheduled: Vec<usize> = (0..n_sched).map(|j| (start + j) % k).collect();
    scheduled.sort_unstable();
    Ok(ScheduleDecision {
        round_index,
        scheduled,
        ratio: n_sched as f64 / k as f64,
    })
}

/// Top `n` devices by `score`, ties to the lower id.
fn top_by(links: &[LinkState], n: usize, score: impl Fn(&LinkState) -> f64) -> Vec<usize> {
    let mut ranked: Vec<(f64, usize)> = links.iter().map(|l| (score(l), l.device_id)).collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut chosen: Vec<usize> = ranked.into_iter().take(n).map(|(_, id)| id).collect();
    chosen.sort_unstable();
    chosen
}

pub fn best_channel(links: &[LinkState], ratio: f64, round_index: u64) -> Result<ScheduleDecision> {
    check_ratio(ratio)?;
    if links.is_empty() {
        return Err(Error::InvalidArgument("no link states to schedule from".into()));
    }
    let n = scheduled_count(links.len(), ratio);
    Ok(ScheduleDecision {
        round_index,
        scheduled: top_by(links, n, |l| l.uplink_rate_bps),
        ratio,
    })
}

/// Exponential moving averages of served uplink rate, one per device.
#[derive(Clone, Debug, PartialEq)]
pub struct PfState {
    pub avg_rates: Vec<f64>,
    pub smoothing: f64,
}

impl PfState {
    /// Averages start at the devices' first observed rates.
    pub fn new(initial: &[LinkState], smoothing: f64) -> Self {
        PfState {
            avg_rates: initial.iter().map(|l| l.uplink_rate_bps).collect(),
            smoothing,
        }
    }

    pub fn metric(&self, link: &LinkState) -> f64 {
        link.uplink_rate_bps / self.avg_rates[link.device_id]
    }
}

/// Top devices by instantaneous/average rate; then
/// `R̄ ← (1−β)R̄ + β·r·1[scheduled]` for every device.
pub fn proportional_fair(
    links: &[LinkState],
    state: &mut PfState,
    ratio: f64,
    round_index: u64,
) -> Result<ScheduleDecision> {
    check_ratio(ratio)?;
    if links.is_empty() {
        return Err(Error::InvalidArgument("no link states to schedule from".into()));
    }
    if state.avg_rates.len() != links.len() || state.avg_rates.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::InvalidArgument(
            "PF averages must be positive, one per device".into(),
        ));
    }
    let n = scheduled_count(links.len(), ratio);
    let scheduled = top_by(links, n, |l| state.metric(l));
    let beta = state.smoothing;
    for link in links {
        let served = if scheduled.binary_search(&link.device_id).is_ok() {
            link.uplink_rate_bps
        } else {
            0.0
        };
        let avg = &mut state.avg_rates[link.device_id];
        *avg = (1.0 - beta) * *avg + beta * served;
    }
    Ok(ScheduleDecision {
        round_index,
        scheduled,
        ratio,
    })
}

/// Stateful front end used by the orchestrator.
#[derive(Clone, Debug)]
pub struct Scheduler {
    pub policy: Policy,
    pub ratio: f64,
    pub pf_smoothing: f64,
    pf: Option<PfState>,
}

impl Scheduler {
    pub fn new(policy: Policy, ratio: f64, pf_smoothing: f64) -> Result<Self> {
        check_ratio(ratio)?;
        Ok(Scheduler {
            policy,
            ratio,
            pf_smoothing,
            pf: None,
        })
    }

    pub fn decide(&mut self, links: &[LinkState], round_index: u64) -> Result<ScheduleDecision> {
        let k = links.len();
        match self.policy {
            Policy::All => Ok(ScheduleDecision {
                round_index,
                scheduled: (0..k).collect(),
                ratio: 1.0,
            }),
            Policy::RoundRobin => round_robin(k, round_index, scheduled_count(k, self.ratio)),
            Policy::BestChannel => best_channel(links, self.ratio, round_index),
            Policy::ProportionalFair => {
                let smoothing = self.pf_smoothing;
                let state = self.pf.get_or_insert_with(|| PfState::new(links, smoothing));
                proportional_fair(links, state, self.ratio, round_index)
            }
        }
    }
}
