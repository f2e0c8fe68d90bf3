//! Base-station MAC/PHY model: per-subframe PRB scheduling, per-user downlink
//! buffers and the telemetry the rate controllers consume.
//!
//! One subframe is 1 ms. MCS rates are expressed as net bits per PRB per
//! subframe; the cell's `efficiency` converts them to payload bits.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::packet::Packet;

pub const SUBFRAMES_PER_SECOND: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UserId(pub u32);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RanError {
    #[error("cell has no registered users")]
    NoUsers,
    #[error("unknown user {0}")]
    UnknownUser(u32),
    #[error("no subframe reports for user {0}")]
    NoReports(u32),
    #[error("invalid cell configuration: {0}")]
    Config(String),
}

/// Physical-layer telemetry of one user for one completed subframe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubframeReport {
    pub subframe: u64,
    pub user_id: UserId,
    pub prb_allocated: u32,
    /// Cell-wide unallocated PRBs.
    pub prb_idle: u32,
    pub prb_total: u32,
    pub n_users: u32,
    /// Bits per PRB per subframe.
    pub mcs_rate: f64,
}

impl SubframeReport {
    /// `P_allocated + P_idle / N_user`.
    pub fn prb_term(&self) -> f64 {
        self.prb_allocated as f64 + self.prb_idle as f64 / self.n_users.max(1) as f64
    }

    /// Physical-layer capacity of this subframe in bits/s at the given MCS.
    pub fn capacity_bps(&self, mcs_rate: f64) -> f64 {
        self.prb_term() * mcs_rate * SUBFRAMES_PER_SECOND
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SchedulerKind {
    RoundRobin,
    ProportionalFair {
        /// EWMA horizon of the served-throughput average, in subframes.
        ewma_horizon: u32,
    },
}

impl SchedulerKind {
    pub fn validate(&self) -> Result<(), RanError> {
        match self {
            SchedulerKind::ProportionalFair { ewma_horizon } if *ewma_horizon < 1 => Err(
                RanError::Config("proportional fair ewma_horizon must be >= 1".into()),
            ),
            _ => Ok(()),
        }
    }
}

impl Default for SchedulerKind {
    fn default() -> Self {
        SchedulerKind::RoundRobin
    }
}

/// Smallest PRB count whose payload capacity covers `bytes`.
pub fn prbs_for_bytes(bytes: u64, bits_per_prb: f64) -> u64 {
    if bytes == 0 {
        return 0;
    }
    let mut prbs = ((bytes as f64 * 8.0) / bits_per_prb).ceil() as u64;
    while drain_capacity_bytes(prbs, bits_per_prb) < bytes {
        prbs += 1;
    }
    prbs
}

/// Payload bytes carried by `prbs` PRBs in one subframe.
pub fn drain_capacity_bytes(prbs: u64, bits_per_prb: f64) -> u64 {
    (prbs as f64 * bits_per_prb / 8.0).floor() as u64
}

/// Integer water-filling of `prb_total` PRBs over per-user PRB demands.
///
/// Users whose remaining demand fits under their weighted share are served in
/// full and the surplus is redistributed. When nobody fits, shares are floored
/// and the leftover PRBs go to the largest fractional parts; ties go to the
/// lowest user slot counted from `rotation`.
fn water_fill(demand: &[u64], weights: &[f64], prb_total: u32, rotation: usize) -> Vec<u32> {
    let n = demand.len();
    let mut alloc = vec![0u64; n];
    let mut remaining = prb_total as u64;
    let mut active: Vec<usize> = (0..n).filter(|&i| demand[i] > 0).collect();

    while remaining > 0 && !active.is_empty() {
        let wsum: f64 = active.iter().map(|&i| weights[i]).sum();
        let ideal = |i: usize| remaining as f64 * weights[i] / wsum;

        let (satisfied, unsatisfied): (Vec<usize>, Vec<usize>) = active
            .iter()
            .partition(|&&i| (demand[i] - alloc[i]) as f64 <= ideal(i) + 1e-9);
        if !satisfied.is_empty() {
            for i in satisfied {
                let need = (demand[i] - alloc[i]).min(remaining);
                alloc[i] += need;
                remaining -= need;
            }
            active = unsatisfied;
            continue;
        }

        let shares: Vec<(usize, f64)> = active.iter().map(|&i| (i, ideal(i))).collect();
        let mut given = 0u64;
        for &(i, share) in &shares {
            let whole = share.floor() as u64;
            alloc[i] += whole;
            given += whole;
        }
        let mut leftover = remaining.saturating_sub(given);
        let mut order = shares.clone();
        order.sort_by(|a, b| {
            let fa = a.1 - a.1.floor();
            let fb = b.1 - b.1.floor();
            if (fa - fb).abs() > 1e-9 {
                fb.partial_cmp(&fa).unwrap_or(std::cmp::Ordering::Equal)
            } else {
                let ra = (a.0 + n - rotation % n) % n;
                let rb = (b.0 + n - rotation % n) % n;
                ra.cmp(&rb)
            }
        });
        for (i, _) in order {
            if leftover == 0 {
                break;
            }
            if alloc[i] < demand[i] {
                alloc[i] += 1;
                leftover -= 1;
            }
        }
        break;
    }
    alloc.into_iter().map(|a| a as u32).collect()
}

/// PRB scheduler state: the tie-break rotation and, for proportional fair,
/// per-user EWMA served throughput (bits per subframe).
#[derive(Debug, Clone)]
pub struct Scheduler {
    kind: SchedulerKind,
    prb_total: u32,
    rotation: usize,
    throughput: Vec<Option<f64>>,
}

impl Scheduler {
    pub fn new(kind: SchedulerKind, prb_total: u32) -> Result<Self, RanError> {
        kind.validate()?;
        if prb_total == 0 {
            return Err(RanError::Config("prb_total must be > 0".into()));
        }
        Ok(Self {
            kind,
            prb_total,
            rotation: 0,
            throughput: Vec::new(),
        })
    }

    pub fn kind(&self) -> SchedulerKind {
        self.kind
    }

    pub fn prb_total(&self) -> u32 {
        self.prb_total
    }

    fn ensure_users(&mut self, n: usize) {
        if self.throughput.len() < n {
            self.throughput.resize(n, None);
        }
    }

    fn pf_weights(&self, rates: &[f64]) -> Vec<f64> {
        let n = rates.len();
        (0..n)
            .map(|i| {
                let fair = self.prb_total as f64 / n as f64 * rates[i];
                let avg = self.throughput.get(i).copied().flatten().unwrap_or(fair);
                rates[i] / avg.max(1e-6)
            })
            .collect()
    }

    /// Allocates PRBs for one subframe.
    ///
    /// `demands` are queued payload bytes per user slot, `bits_per_prb` the
    /// payload bits one PRB carries for that user this subframe.
    pub fn schedule_subframe(
        &mut self,
        demands: &[u64],
        bits_per_prb: &[f64],
    ) -> Result<Vec<u32>, RanError> {
        if demands.is_empty() {
            return Err(RanError::NoUsers);
        }
        self.ensure_users(demands.len());
        let prb_demand: Vec<u64> = demands
            .iter()
            .zip(bits_per_prb)
            .map(|(&b, &r)| prbs_for_bytes(b, r).min(self.prb_total as u64))
            .collect();
        let weights = match self.kind {
            SchedulerKind::RoundRobin => vec![1.0; demands.len()],
            SchedulerKind::ProportionalFair { .. } => self.pf_weights(bits_per_prb),
        };
        let alloc = water_fill(&prb_demand, &weights, self.prb_total, self.rotation);

        if let SchedulerKind::ProportionalFair { ewma_horizon } = self.kind {
            let a = 1.0 / ewma_horizon as f64;
            for (i, &prbs) in alloc.iter().enumerate() {
                let served = prbs as f64 * bits_per_prb[i];
                let fair = self.prb_total as f64 / demands.len() as f64 * bits_per_prb[i];
                let prev = self.throughput[i].unwrap_or(fair);
                self.throughput[i] = Some((1.0 - a) * prev + a * served);
            }
        }
        self.rotation = self.rotation.wrapping_add(1);
        Ok(alloc)
    }

    /// Share of the cell the PF metric currently assigns to `slot` among the
    /// slots in `connected` (which must contain `slot`).
    pub fn pf_share(&self, slot: usize, connected: &[usize], rates: &[f64]) -> f64 {
        let weights = self.pf_weights(rates);
        let total: f64 = connected.iter().map(|&i| weights[i]).sum();
        if total <= 0.0 {
            return 1.0 / connected.len().max(1) as f64;
        }
        (weights[slot] / total).clamp(0.0, 1.0)
    }
}

/// Fair-share capacity `C_f` in bits/s.
///
/// Round robin: `P_total / N_user * R_mcs,now`. Proportional fair: the
/// PF-metric share of `P_total` (`pf_share`) times `R_mcs,now`; without a
/// share it degrades to the round-robin value. Always capped at the full cell.
pub fn fair_share(
    kind: &SchedulerKind,
    reports: &[SubframeReport],
    pf_share: Option<f64>,
    mcs_now: f64,
) -> Result<f64, RanError> {
    let last = reports.last().ok_or(RanError::NoReports(0))?;
    let total = last.prb_total as f64;
    let rr = total / last.n_users.max(1) as f64;
    let prbs = match kind {
        SchedulerKind::RoundRobin => rr,
        SchedulerKind::ProportionalFair { .. } => pf_share.map_or(rr, |s| s * total),
    };
    Ok(prbs.min(total) * mcs_now * SUBFRAMES_PER_SECOND)
}

/// Arrivals recorded in one subframe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrivalRecord {
    pub subframe: u64,
    pub bytes: u64,
    pub packets: u32,
}

/// Subframe-ordered log of enqueue events, pruned to a retention horizon.
#[derive(Debug, Clone, Default)]
pub struct ArrivalLog {
    records: VecDeque<ArrivalRecord>,
    retention: u64,
}

impl ArrivalLog {
    pub fn new(retention: u64) -> Self {
        Self {
            records: VecDeque::new(),
            retention,
        }
    }

    pub fn record(&mut self, subframe: u64, bytes: u64, packets: u32) {
        match self.records.back_mut() {
            Some(last) if last.subframe == subframe => {
                last.bytes += bytes;
                last.packets += packets;
            }
            Some(last) => {
                debug_assert!(last.subframe < subframe, "arrival log must be ordered");
                self.records.push_back(ArrivalRecord {
                    subframe,
                    bytes,
                    packets,
                });
            }
            None => self.records.push_back(ArrivalRecord {
                subframe,
                bytes,
                packets,
            }),
        }
        while let Some(front) = self.records.front() {
            if self.retention > 0 && front.subframe + self.retention < subframe {
                self.records.pop_front();
            } else {
                break;
            }
        }
    }

    pub fn records(&self) -> impl DoubleEndedIterator<Item = &ArrivalRecord> {
        self.records.iter()
    }

    /// Records with `from <= subframe <= to`.
    pub fn window(&self, from: u64, to: u64) -> impl Iterator<Item = &ArrivalRecord> {
        self.records
            .iter()
            .filter(move |r| r.subframe >= from && r.subframe <= to)
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn first_subframe(&self) -> Option<u64> {
        self.records.front().map(|r| r.subframe)
    }

    pub fn last_subframe(&self) -> Option<u64> {
        self.records.back().map(|r| r.subframe)
    }
}

impl FromIterator<(u64, u64, u32)> for ArrivalLog {
    fn from_iter<I: IntoIterator<Item = (u64, u64, u32)>>(iter: I) -> Self {
        let mut log = ArrivalLog::new(0);
        for (t, bytes, packets) in iter {
            log.record(t, bytes, packets);
        }
        log
    }
}

/// Result of draining a buffer for one subframe.
#[derive(Debug, Default)]
pub struct Drained {
    pub bytes: u64,
    pub packets: Vec<Packet>,
}

/// Per-user downlink buffer at the base station.
#[derive(Debug, Clone)]
pub struct DlBuffer {
    user_id: UserId,
    packets: VecDeque<Packet>,
    head_sent: u32,
    queued_bytes: u64,
    saturating: bool,
    arrivals: ArrivalLog,
    last_arrival: Option<u64>,
    last_idle_gap: u64,
}

impl DlBuffer {
    pub fn new(user_id: UserId, log_retention: u64) -> Self {
        Self {
            user_id,
            packets: VecDeque::new(),
            head_sent: 0,
            queued_bytes: 0,
            saturating: false,
            arrivals: ArrivalLog::new(log_retention),
            last_arrival: None,
            last_idle_gap: 0,
        }
    }

    pub fn user_id(&self) -> UserId {
        self.user_id
    }

    pub fn queued_bytes(&self) -> u64 {
        self.queued_bytes
    }

    pub fn arrival_log(&self) -> &ArrivalLog {
        &self.arrivals
    }

    /// Idle run (in subframes) between the two most recent arrivals.
    pub fn last_idle_gap(&self) -> u64 {
        self.last_idle_gap
    }

    pub fn last_arrival(&self) -> Option<u64> {
        self.last_arrival
    }

    /// Saturating buffers always have more data than the cell can carry.
    pub fn set_saturating(&mut self, on: bool, now: u64) {
        self.saturating = on;
        if on {
            self.last_arrival = Some(now);
        }
    }

    pub fn is_saturating(&self) -> bool {
        self.saturating
    }

    pub fn enqueue(&mut self, mut packet: Packet, now: u64) {
        packet.arrived_bs_at = now;
        self.queued_bytes += packet.size as u64;
        self.arrivals.record(now, packet.size as u64, 1);
        if let Some(prev) = self.last_arrival {
            if now > prev + 1 {
                self.last_idle_gap = now - prev - 1;
            }
        }
        self.last_arrival = Some(now);
        self.packets.push_back(packet);
    }

    /// Bytes the scheduler should try to serve this subframe.
    pub fn demand_bytes(&self, saturation_bytes: u64) -> u64 {
        if self.saturating {
            saturation_bytes.max(self.queued_bytes)
        } else {
            self.queued_bytes
        }
    }

    pub fn is_connected(&self, now: u64, inactivity: u64) -> bool {
        self.saturating
            || self.queued_bytes > 0
            || self.last_arrival.is_some_and(|t| now < t + inactivity)
    }

    /// Transmits `min(queued, allocation * bits_per_prb / 8)` bytes.
    /// Fully transmitted packets are returned with `delivered_at = now + 1`.
    pub fn drain(&mut self, allocation: u32, bits_per_prb: f64, now: u64) -> Drained {
        let capacity = drain_capacity_bytes(allocation as u64, bits_per_prb);
        if self.saturating && self.queued_bytes == 0 {
            return Drained {
                bytes: capacity,
                packets: Vec::new(),
            };
        }
        let mut budget = capacity.min(self.queued_bytes);
        let mut out = Drained {
            bytes: budget,
            packets: Vec::new(),
        };
        while budget > 0 {
            let Some(head) = self.packets.front() else {
                break;
            };
            let left = (head.size - self.head_sent) as u64;
            if budget >= left {
                budget -= left;
                self.head_sent = 0;
                let mut p = self.packets.pop_front().expect("head exists");
                p.delivered_at = Some(now + 1);
                out.packets.push(p);
            } else {
                self.head_sent += budget as u32;
                budget = 0;
            }
        }
        self.queued_bytes -= out.bytes;
        if self.saturating {
            // Saturating users also soak up whatever capacity their packets left.
            out.bytes = capacity;
        }
        out
    }

    /// Packets still queued, head first.
    pub fn queued_packets(&self) -> impl Iterator<Item = &Packet> {
        self.packets.iter()
    }
}

/// Drains one subframe of `buffer` and returns the bytes transmitted.
pub fn drain_dl(buffer: &mut DlBuffer, allocation: u32, mcs_rate: f64, now: u64) -> u64 {
    buffer.drain(allocation, mcs_rate, now).bytes
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellConfig {
    pub prb_total: u32,
    #[serde(default)]
    pub scheduler: SchedulerKind,
    /// Payload fraction of the PHY rate (IP/RTP/MAC header overhead).
    #[serde(default = "default_efficiency")]
    pub efficiency: f64,
    /// A user stays counted in `N_user` this many subframes after its last arrival.
    #[serde(default = "default_inactivity")]
    pub inactivity_timeout: u64,
}

fn default_efficiency() -> f64 {
    0.94
}

fn default_inactivity() -> u64 {
    100
}

impl Default for CellConfig {
    fn default() -> Self {
        Self {
            prb_total: 51,
            scheduler: SchedulerKind::RoundRobin,
            efficiency: default_efficiency(),
            inactivity_timeout: default_inactivity(),
        }
    }
}

/// What happened in one subframe.
#[derive(Debug, Default)]
pub struct SubframeOutcome {
    pub allocations: Vec<u32>,
    pub idle: u32,
    pub drained_bytes: Vec<u64>,
    /// Delivered packets per user slot.
    pub delivered: Vec<Vec<Packet>>,
}

/// A cell: users (in slot order), their buffers, the scheduler and the
/// reports of the last completed subframe.
#[derive(Debug, Clone)]
pub struct Cell {
    config: CellConfig,
    scheduler: Scheduler,
    users: Vec<DlBuffer>,
    reports: Vec<Option<SubframeReport>>,
    last_rates: Vec<f64>,
}

pub const ARRIVAL_LOG_RETENTION: u64 = 2048;

impl Cell {
    pub fn new(config: CellConfig, users: &[UserId]) -> Result<Self, RanError> {
        if users.is_empty() {
            return Err(RanError::NoUsers);
        }
        if !(config.efficiency > 0.0 && config.efficiency <= 1.0) {
            return Err(RanError::Config("efficiency must be in (0, 1]".into()));
        }
        let scheduler = Scheduler::new(config.scheduler, config.prb_total)?;
        let mut ids = users.to_vec();
        ids.sort();
        ids.dedup();
        if ids.len() != users.len() {
            return Err(RanError::Config("duplicate user ids".into()));
        }
        Ok(Self {
            scheduler,
            users: ids
                .iter()
                .map(|&id| DlBuffer::new(id, ARRIVAL_LOG_RETENTION))
                .collect(),
            reports: vec![None; ids.len()],
            last_rates: vec![0.0; ids.len()],
            config,
        })
    }

    pub fn config(&self) -> &CellConfig {
        &self.config
    }

    pub fn slot(&self, user: UserId) -> Result<usize, RanError> {
        self.users
            .binary_search_by_key(&user, |b| b.user_id())
            .map_err(|_| RanError::UnknownUser(user.0))
    }

    pub fn user_ids(&self) -> Vec<UserId> {
        self.users.iter().map(|b| b.user_id()).collect()
    }

    pub fn buffer(&self, user: UserId) -> Result<&DlBuffer, RanError> {
        let s = self.slot(user)?;
        Ok(&self.users[s])
    }

    pub fn buffer_mut(&mut self, user: UserId) -> Result<&mut DlBuffer, RanError> {
        let s = self.slot(user)?;
        Ok(&mut self.users[s])
    }

    /// Slots counted in `N_user` at `now`.
    pub fn connected_slots(&self, now: u64) -> Vec<usize> {
        (0..self.users.len())
            .filter(|&i| self.users[i].is_connected(now, self.config.inactivity_timeout))
            .collect()
    }

    /// `N_user` as seen by `slot`: connected users, counting `slot` itself.
    fn n_users_for(&self, slot: usize, connected: &[usize]) -> u32 {
        let extra = if connected.contains(&slot) { 0 } else { 1 };
        (connected.len() + extra) as u32
    }

    /// Schedules and drains one subframe. `mcs` holds each slot's MCS rate
    /// (bits/PRB/subframe) for subframe `now`.
    pub fn run_subframe(&mut self, now: u64, mcs: &[f64]) -> Result<SubframeOutcome, RanError> {
        assert_eq!(mcs.len(), self.users.len(), "one MCS rate per user slot");
        let eff = self.config.efficiency;
        let payload: Vec<f64> = mcs.iter().map(|m| m * eff).collect();
        let demands: Vec<u64> = self
            .users
            .iter()
            .zip(&payload)
            .map(|(b, &r)| b.demand_bytes(drain_capacity_bytes(self.config.prb_total as u64, r) + 1))
            .collect();
        let connected = self.connected_slots(now);
        let allocations = self.scheduler.schedule_subframe(&demands, &payload)?;
        let used: u32 = allocations.iter().sum();
        let idle = self.config.prb_total - used;

        let mut out = SubframeOutcome {
            idle,
            ..Default::default()
        };
        for (i, buf) in self.users.iter_mut().enumerate() {
            let d = buf.drain(allocations[i], payload[i], now);
            out.drained_bytes.push(d.bytes);
            out.delivered.push(d.packets);
        }
        for i in 0..self.users.len() {
            self.reports[i] = Some(SubframeReport {
                subframe: now,
                user_id: self.users[i].user_id(),
                prb_allocated: allocations[i],
                prb_idle: idle,
                prb_total: self.config.prb_total,
                n_users: self.n_users_for(i, &connected),
                mcs_rate: mcs[i],
            });
        }
        self.last_rates.copy_from_slice(mcs);
        out.allocations = allocations;
        Ok(out)
    }

    /// Report of the last completed subframe for `user`.
    pub fn subframe_report(&self, user: UserId) -> Result<&SubframeReport, RanError> {
        let s = self.slot(user)?;
        self.reports[s].as_ref().ok_or(RanError::NoReports(user.0))
    }

    /// `C_f` for `user` at the current MCS, in raw PHY bits/s.
    pub fn fair_share(&self, user: UserId, mcs_now: f64, now: u64) -> Result<f64, RanError> {
        let s = self.slot(user)?;
        let report = self.reports[s].as_ref().ok_or(RanError::NoReports(user.0))?;
        let pf = match self.scheduler.kind() {
            SchedulerKind::RoundRobin => None,
            SchedulerKind::ProportionalFair { .. } => {
                let mut connected = self.connected_slots(now);
                if !connected.contains(&s) {
                    connected.push(s);
                }
                let mut rates = self.last_rates.clone();
                rates[s] = mcs_now;
                Some(self.scheduler.pf_share(s, &connected, &rates))
            }
        };
        fair_share(&self.scheduler.kind(), std::slice::from_ref(report), pf, mcs_now)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packet::FlowId;

    fn pkt(size: u32) -> Packet {
        Packet::new(FlowId(0), 1, 0, size, 0)
    }

    /// Brute-force round-robin oracle: hand out PRBs one at a time, cycling
    /// over users that still have demand, starting from `start`.
    fn rr_oracle(demand: &[u64], total: u32, start: usize) -> Vec<u32> {
        let n = demand.len();
        let mut alloc = vec![0u32; n];
        let mut left = total;
        let mut i = start;
        let mut idle_rounds = 0;
        while left > 0 && idle_rounds < n {
            if (alloc[i] as u64) < demand[i] {
                alloc[i] += 1;
                left -= 1;
                idle_rounds = 0;
            } else {
                idle_rounds += 1;
            }
            i = (i + 1) % n;
        }
        alloc
    }

    #[test]
    fn two_saturating_users_split_51_prbs() {
        let mut s = Scheduler::new(SchedulerKind::RoundRobin, 51).unwrap();
        let a = s.schedule_subframe(&[1_000_000, 1_000_000], &[1000.0, 1000.0]).unwrap();
        assert_eq!(a, vec![26, 25]);
        // The extra PRB rotates on the next subframe.
        let a = s.schedule_subframe(&[1_000_000, 1_000_000], &[1000.0, 1000.0]).unwrap();
        assert_eq!(a, vec![25, 26]);
    }

    #[test]
    fn zero_demand_gets_nothing() {
        let mut s = Scheduler::new(SchedulerKind::RoundRobin, 51).unwrap();
        assert_eq!(s.schedule_subframe(&[0], &[1000.0]).unwrap(), vec![0]);
    }

    #[test]
    fn small_user_served_exactly_large_takes_rest() {
        let mut s = Scheduler::new(SchedulerKind::RoundRobin, 51).unwrap();
        // 2 PRBs worth at 1000 bits/PRB = 250 bytes.
        let demand = [1_000_000u64, 250, 0];
        let a = s.schedule_subframe(&demand, &[1000.0; 3]).unwrap();
        let prb_demand: Vec<u64> = demand.iter().map(|&b| prbs_for_bytes(b, 1000.0).min(51)).collect();
        assert_eq!(a, rr_oracle(&prb_demand, 51, 0));
        assert_eq!(a, vec![49, 2, 0]);
    }

    #[test]
    fn empty_user_set_is_config_error() {
        let mut s = Scheduler::new(SchedulerKind::RoundRobin, 51).unwrap();
        assert_eq!(s.schedule_subframe(&[], &[]), Err(RanError::NoUsers));
        assert!(Cell::new(CellConfig::default(), &[]).is_err());
    }

    #[test]
    fn drain_examples() {
        let mut b = DlBuffer::new(UserId(0), 64);
        for _ in 0..10 {
            b.enqueue(pkt(1000), 0);
        }
        assert_eq!(drain_dl(&mut b, 20, 1000.0, 0), 2500);
        assert_eq!(b.queued_bytes(), 7500);

        let mut empty = DlBuffer::new(UserId(0), 64);
        assert_eq!(drain_dl(&mut empty, 20, 1000.0, 0), 0);

        let mut small = DlBuffer::new(UserId(0), 64);
        small.enqueue(pkt(100), 0);
        let d = small.drain(20, 1000.0, 5);
        assert_eq!(d.bytes, 100);
        assert_eq!(small.queued_bytes(), 0);
        assert_eq!(d.packets[0].delivered_at, Some(6));
    }

    #[test]
    fn partial_packets_complete_later() {
        let mut b = DlBuffer::new(UserId(0), 64);
        b.enqueue(pkt(1200), 3);
        let d = b.drain(4, 1000.0, 3);
        assert_eq!(d.bytes, 500);
        assert!(d.packets.is_empty());
        let d = b.drain(10, 1000.0, 4);
        assert_eq!(d.bytes, 700);
        assert_eq!(d.packets.len(), 1);
        assert_eq!(d.packets[0].arrived_bs_at, 3);
    }

    fn saturated_cell(n: u32) -> Cell {
        let ids: Vec<UserId> = (0..n).map(UserId).collect();
        let mut cell = Cell::new(
            CellConfig {
                efficiency: 1.0,
                ..Default::default()
            },
            &ids,
        )
        .unwrap();
        for id in ids {
            cell.buffer_mut(id).unwrap().set_saturating(true, 0);
        }
        cell
    }

    #[test]
    fn reports_after_saturated_subframe() {
        let mut cell = saturated_cell(2);
        cell.run_subframe(0, &[1000.0, 1000.0]).unwrap();
        let r = cell.subframe_report(UserId(0)).unwrap();
        assert_eq!((r.prb_allocated, r.prb_idle, r.n_users), (26, 0, 2));
        assert_eq!(cell.subframe_report(UserId(9)), Err(RanError::UnknownUser(9)));
    }

    #[test]
    fn reports_idle_and_partial_cells() {
        let mut cell = Cell::new(
            CellConfig {
                efficiency: 1.0,
                ..Default::default()
            },
            &[UserId(0)],
        )
        .unwrap();
        assert_eq!(cell.subframe_report(UserId(0)), Err(RanError::NoReports(0)));
        cell.run_subframe(0, &[1000.0]).unwrap();
        let r = cell.subframe_report(UserId(0)).unwrap();
        assert_eq!((r.prb_allocated, r.prb_idle), (0, 51));

        // 20 PRBs at 1000 bits = 2500 bytes.
        cell.buffer_mut(UserId(0)).unwrap().enqueue(pkt(2500), 1);
        cell.run_subframe(1, &[1000.0]).unwrap();
        let r = cell.subframe_report(UserId(0)).unwrap();
        assert_eq!((r.prb_allocated, r.prb_idle), (20, 31));
    }

    #[test]
    fn fair_share_examples() {
        let report = |n_users| SubframeReport {
            subframe: 0,
            user_id: UserId(0),
            prb_allocated: 0,
            prb_idle: 0,
            prb_total: 51,
            n_users,
            mcs_rate: 1000.0,
        };
        let rr = fair_share(&SchedulerKind::RoundRobin, &[report(2)], None, 1000.0).unwrap();
        assert_eq!(rr, 25_500_000.0);
        let full = fair_share(&SchedulerKind::RoundRobin, &[report(1)], None, 1000.0).unwrap();
        assert_eq!(full, 51_000_000.0);
        assert_eq!(
            fair_share(&SchedulerKind::RoundRobin, &[], None, 1000.0),
            Err(RanError::NoReports(0))
        );
    }

    #[test]
    fn proportional_fair_symmetric_users_match_round_robin() {
        let ids = [UserId(0), UserId(1)];
        let mut cell = Cell::new(
            CellConfig {
                scheduler: SchedulerKind::ProportionalFair { ewma_horizon: 100 },
                efficiency: 1.0,
                ..Default::default()
            },
            &ids,
        )
        .unwrap();
        for id in ids {
            cell.buffer_mut(id).unwrap().set_saturating(true, 0);
        }
        for t in 0..200 {
            cell.run_subframe(t, &[1000.0, 1000.0]).unwrap();
        }
        let pf = cell.fair_share(UserId(0), 1000.0, 200).unwrap();
        assert!((pf - 25_500_000.0).abs() / 25_500_000.0 < 0.01, "pf share {pf}");
    }

    #[test]
    fn proportional_fair_rejects_zero_horizon() {
        assert!(Scheduler::new(SchedulerKind::ProportionalFair { ewma_horizon: 0 }, 51).is_err());
    }

    #[test]
    fn work_conserving_with_idle_only_when_satisfied() {
        let mut cell = Cell::new(CellConfig::default(), &[UserId(0), UserId(1)]).unwrap();
        cell.buffer_mut(UserId(0)).unwrap().enqueue(pkt(300), 0);
        let out = cell.run_subframe(0, &[1000.0, 1000.0]).unwrap();
        assert_eq!(out.allocations[1], 0);
        assert!(out.idle > 0);
        assert_eq!(cell.buffer(UserId(0)).unwrap().queued_bytes(), 0);
    }
}
