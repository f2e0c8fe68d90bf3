//! Subframe-driven simulation loop.
//!
//! Order within subframe `t`: sender emission, Internet segment, base-station
//! enqueue, cross traffic, controllers, scheduler and drain, feedback
//! delivery. Feedback emitted at `t` with delay `k` is applied at the end of
//! subframe `t + k` and shapes frames encoded from `t + k + 1` on.

use std::collections::{HashMap, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{GccState, PbeState};
use crate::channel::{ChannelError, ChannelTrace};
use crate::metrics::{self, FlowMetrics, MetricsReport};
use crate::occ::{Decision, Mode, OccController, OccError, Telemetry};
use crate::packet::{FlowId, Packet};
use crate::ran::{Cell, RanError, UserId};
use crate::rng::{stream_rng, Stream};
use crate::scenario::{ControllerKind, CrossTrafficKind, CrossTrafficSpec, EgressChange, InternetConfig, ScenarioConfig, ScenarioError};
use crate::sender::{frame_interval_for, packetize, RtcSender, SenderError, TargetChange, VideoFrame};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Ran(#[from] RanError),
    #[error(transparent)]
    Sender(#[from] SenderError),
    #[error(transparent)]
    Controller(#[from] OccError),
}

/// Wired path between the video server and the base station.
#[derive(Debug, Clone)]
pub struct InternetSegment {
    propagation_delay: u64,
    base_rate: Option<f64>,
    schedule: Vec<EgressChange>,
    queue_cap: u64,
    queue: VecDeque<Packet>,
    queued_bytes: u64,
    tokens: f64,
    in_flight: VecDeque<(u64, Packet)>,
}

impl InternetSegment {
    pub fn new(config: &InternetConfig) -> Self {
        Self {
            propagation_delay: config.propagation_delay,
            base_rate: config.egress_rate,
            schedule: config.egress_schedule.clone(),
            queue_cap: config.queue_cap,
            queue: VecDeque::new(),
            queued_bytes: 0,
            tokens: 0.0,
            in_flight: VecDeque::new(),
        }
    }

    /// Egress limit in force at `t`.
    pub fn egress_at(&self, t: u64) -> Option<f64> {
        self.schedule
            .iter()
            .take_while(|c| c.start <= t)
            .last()
            .map_or(self.base_rate, |c| c.rate)
    }

    /// Queues a packet sent at `now`; returns it back when the drop-tail cap
    /// is exceeded. Without an egress limit the queue is bypassed.
    pub fn push(&mut self, packet: Packet, now: u64) -> Result<(), Packet> {
        if self.queue.is_empty() && self.egress_at(now).is_none() {
            self.in_flight.push_back((now + self.propagation_delay, packet));
            return Ok(());
        }
        if self.queued_bytes + packet.size as u64 > self.queue_cap {
            return Err(packet);
        }
        self.queued_bytes += packet.size as u64;
        self.queue.push_back(packet);
        Ok(())
    }

    /// Releases packets through the token bucket and returns those reaching
    /// the base station at `now`.
    pub fn step(&mut self, now: u64) -> Vec<Packet> {
        match self.egress_at(now) {
            None => {
                self.tokens = 0.0;
                while let Some(p) = self.queue.pop_front() {
                    self.queued_bytes -= p.size as u64;
                    self.in_flight.push_back((now + self.propagation_delay, p));
                }
            }
            Some(rate) => {
                let per_subframe = rate / 8000.0;
                let depth = per_subframe.max(1500.0);
                self.tokens = (self.tokens + per_subframe).min(depth);
                while let Some(head) = self.queue.front() {
                    if head.size as f64 > self.tokens {
                        break;
                    }
                    let p = self.queue.pop_front().expect("head exists");
                    self.tokens -= p.size as f64;
                    self.queued_bytes -= p.size as u64;
                    self.in_flight.push_back((now + self.propagation_delay, p));
                }
            }
        }
        let mut out = Vec::new();
        while self.in_flight.front().is_some_and(|(at, _)| *at <= now) {
            out.push(self.in_flight.pop_front().expect("front exists").1);
        }
        out
    }

    pub fn queued_packets(&self) -> usize {
        self.queue.len() + self.in_flight.len()
    }
}

/// FIFO with a fixed delay.
#[derive(Debug, Clone)]
pub struct FeedbackChannel<T> {
    delay: u64,
    queue: VecDeque<(u64, T)>,
}

impl<T> FeedbackChannel<T> {
    pub fn new(delay: u64) -> Self {
        Self {
            delay,
            queue: VecDeque::new(),
        }
    }

    pub fn send(&mut self, emitted_at: u64, msg: T) {
        let at = emitted_at + self.delay;
        debug_assert!(self.queue.back().is_none_or(|b| b.0 <= at));
        self.queue.push_back((at, msg));
    }

    /// Messages due by the end of subframe `now`, in emission order.
    pub fn due(&mut self, now: u64) -> Vec<(u64, T)> {
        let mut out = Vec::new();
        while self.queue.front().is_some_and(|m| m.0 <= now) {
            out.push(self.queue.pop_front().expect("front exists"));
        }
        out
    }
}

/// Per-subframe demand injected by a cross-traffic generator.
#[derive(Debug, Clone)]
pub struct CrossTraffic {
    spec: CrossTrafficSpec,
    flow: FlowId,
    next_burst: u64,
    frame: u64,
    seq: u64,
}

pub const CROSS_TRAFFIC_FLOW_BASE: u32 = 1000;

impl CrossTraffic {
    pub fn new(spec: CrossTrafficSpec, index: u32, phase: u64) -> Self {
        Self {
            spec,
            flow: FlowId(CROSS_TRAFFIC_FLOW_BASE + index),
            next_burst: phase,
            frame: 0,
            seq: 0,
        }
    }

    /// `(saturating, packets to enqueue)` at `t`.
    pub fn inject(&mut self, t: u64) -> (bool, Vec<Packet>) {
        let active = self.spec.active_at(t);
        match self.spec.kind {
            CrossTrafficKind::SaturatingBulk | CrossTrafficKind::OnOff { .. } => (active, Vec::new()),
            CrossTrafficKind::RtcLike { rate, fps } => {
                let mut out = Vec::new();
                if t >= self.next_burst {
                    let interval = frame_interval_for(fps);
                    if active {
                        self.frame += 1;
                        let bytes = (rate * interval as f64 / 8000.0).round() as u32;
                        for size in packetize(bytes.max(1), 1200) {
                            out.push(Packet::new(self.flow, self.frame, self.seq, size, t));
                            self.seq += 1;
                        }
                    }
                    self.next_burst = t + interval;
                }
                (false, out)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Message {
    Target { rate: f64, mode: Mode },
    Delay { received_at: u64, delay_ms: f64 },
}

/// Everything recorded about one flow during a run.
#[derive(Debug, Clone, Default)]
pub struct FlowLog {
    pub flow_id: u32,
    pub controller: String,
    pub start_at: u64,
    pub frames: Vec<VideoFrame>,
    pub targets: Vec<TargetChange>,
    pub delivered: Vec<Packet>,
    pub dropped: Vec<Packet>,
    /// Packets still queued or in flight at the horizon.
    pub pending: usize,
    pub emitted: usize,
    /// Controller estimate and ground-truth fair share per subframe from `start_at`.
    pub estimates: Vec<f64>,
    pub truth: Vec<f64>,
    /// `(subframe, mode)` whenever the sender's control mode changes.
    pub modes: Vec<(u64, Mode)>,
    pub pacing_overruns: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionRow {
    #[serde(flatten)]
    pub decision: Decision,
    pub flow_id: u32,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: MetricsReport,
    pub flows: Vec<FlowLog>,
    pub decisions: Vec<DecisionRow>,
}

impl RunOutput {
    pub fn decisions_for(&self, flow: u32) -> impl Iterator<Item = &Decision> {
        self.decisions.iter().filter(move |d| d.flow_id == flow).map(|d| &d.decision)
    }
}

struct FlowRuntime {
    index: u32,
    user: UserId,
    kind: ControllerKind,
    start_at: u64,
    sender: RtcSender,
    internet: InternetSegment,
    occ: Option<OccController>,
    pbe: Option<PbeState>,
    gcc: Option<GccState>,
    channel: FeedbackChannel<Message>,
    mode: Mode,
    /// Latest delivered `(frame_id, delivered_at, one-way delay)`; one delay
    /// sample per frame is emitted once a later frame starts arriving.
    group: Option<(u64, u64, u64)>,
    log: FlowLog,
}

/// Runs `config` with its own seed.
pub fn run(config: &ScenarioConfig) -> Result<RunOutput, EngineError> {
    config.validate()?;
    let horizon = config.horizon;
    let seed = config.seed;
    let users: Vec<UserId> = config.users().into_iter().map(UserId).collect();
    let mut cell = Cell::new(config.cell.clone(), &users)?;
    let efficiency = config.cell.efficiency;

    let mut channels = Vec::with_capacity(users.len());
    for u in &users {
        let spec = config.channel_for(u.0).expect("validated");
        let mut rng = stream_rng(seed, Stream::Channel(u.0));
        channels.push(ChannelTrace::generate(spec, horizon, &mut rng)?);
    }

    let mut phase_rng = stream_rng(seed, Stream::Phase);
    let mut flows = Vec::with_capacity(config.flows.len());
    for (i, f) in config.flows.iter().enumerate() {
        let interval = frame_interval_for(f.sender.fps);
        let phase = if config.flows.len() > 1 { phase_rng.random_range(0..interval) } else { 0 };
        let start = f.start_at + phase;
        let sender = RtcSender::new(FlowId(i as u32), f.sender.clone(), start, stream_rng(seed, Stream::Encoder(i as u32)))?;
        let mut gcc_cfg = config.controller.gcc.clone();
        gcc_cfg.start_rate = f.sender.start_rate.clamp(gcc_cfg.min_rate, gcc_cfg.max_rate);
        let uses_gcc = matches!(f.controller, ControllerKind::Gcc | ControllerKind::Occ);
        flows.push(FlowRuntime {
            index: i as u32,
            user: UserId(f.user),
            kind: f.controller,
            start_at: f.start_at,
            sender,
            internet: InternetSegment::new(&config.internet),
            occ: match f.controller {
                ControllerKind::Occ => Some(OccController::new(config.controller.occ.clone(), efficiency)?),
                _ => None,
            },
            pbe: (f.controller == ControllerKind::Pbe).then(|| PbeState::new(config.controller.pbe_window)),
            gcc: uses_gcc.then(|| GccState::new(gcc_cfg, start)),
            channel: FeedbackChannel::new(f.feedback_delay),
            mode: Mode::Occ,
            group: None,
            log: FlowLog {
                flow_id: i as u32,
                controller: f.controller.name().to_string(),
                start_at: f.start_at,
                ..Default::default()
            },
        });
    }

    let mut cross: Vec<(usize, CrossTraffic)> = Vec::new();
    for (i, c) in config.cross_traffic.iter().enumerate() {
        let slot = cell.slot(UserId(c.user))?;
        let phase = match c.kind {
            CrossTrafficKind::RtcLike { fps, .. } => stream_rng(seed, Stream::CrossTraffic(i as u32)).random_range(0..frame_interval_for(fps)),
            _ => 0,
        };
        cross.push((slot, CrossTraffic::new(c.clone(), i as u32, phase)));
    }

    let slots_of: Vec<usize> = flows.iter().map(|f| cell.slot(f.user)).collect::<Result<_, _>>()?;
    let mut flow_of_slot: HashMap<usize, usize> = HashMap::new();
    for (fi, &s) in slots_of.iter().enumerate() {
        flow_of_slot.insert(s, fi);
    }

    let mut decisions = Vec::new();
    let mut mcs = vec![0.0; users.len()];

    for t in 0..horizon {
        for (slot, ch) in channels.iter().enumerate() {
            mcs[slot] = ch.sample(t)?;
        }

        // Sender emission and the Internet segment.
        for f in flows.iter_mut() {
            if t >= f.start_at {
                for p in f.sender.tick(t) {
                    f.log.emitted += 1;
                    if let Err(p) = f.internet.push(p, t) {
                        f.log.dropped.push(p);
                    }
                }
            }
            let arrivals = f.internet.step(t);
            let buf = cell.buffer_mut(f.user)?;
            for p in arrivals {
                buf.enqueue(p, t);
            }
        }

        for (slot, gen) in cross.iter_mut() {
            let (saturating, packets) = gen.inject(t);
            let user = users[*slot];
            let buf = cell.buffer_mut(user)?;
            if buf.is_saturating() != saturating {
                buf.set_saturating(saturating, t);
            }
            for p in packets {
                buf.enqueue(p, t);
            }
        }

        // Controllers read the report of the last completed subframe.
        if t > 0 {
            for (fi, f) in flows.iter_mut().enumerate() {
                if t < f.start_at {
                    continue;
                }
                let slot = slots_of[fi];
                let report = cell.subframe_report(f.user)?.clone();
                let fair = cell.fair_share(f.user, mcs[slot], t)?;
                f.log.truth.push(fair * efficiency);
                let estimate = match f.kind {
                    ControllerKind::Occ => {
                        let occ = f.occ.as_mut().expect("occ flow");
                        let step = occ.step(Telemetry {
                            now: t,
                            report: &report,
                            mcs_now: mcs[slot],
                            fair_share: fair,
                            arrivals: cell.buffer(f.user)?.arrival_log(),
                        });
                        match step {
                            Some((fb, decision)) => {
                                f.channel.send(t, Message::Target { rate: fb.target_bps, mode: fb.mode });
                                decisions.push(DecisionRow {
                                    decision,
                                    flow_id: f.index,
                                });
                                decision.b
                            }
                            None => f.sender.target_bps(),
                        }
                    }
                    ControllerKind::Pbe => {
                        let pbe = f.pbe.as_mut().expect("pbe flow");
                        let sample = report.capacity_bps(report.mcs_rate) * efficiency;
                        let rate = pbe.push(sample).max(config.controller.occ.min_rate);
                        f.channel.send(t, Message::Target { rate, mode: Mode::Occ });
                        rate
                    }
                    ControllerKind::Gcc => f.gcc.as_ref().expect("gcc flow").rate,
                };
                f.log.estimates.push(estimate);
            }
        }

        // Scheduler and drain.
        let outcome = cell.run_subframe(t, &mcs)?;
        for (slot, delivered) in outcome.delivered.into_iter().enumerate() {
            let Some(&fi) = flow_of_slot.get(&slot) else {
                continue;
            };
            let f = &mut flows[fi];
            for p in delivered {
                if p.flow_id != FlowId(f.index) {
                    continue;
                }
                let at = p.delivered_at.expect("drained packets are delivered");
                match f.group {
                    Some((frame, g_at, owd)) if p.frame_id > frame => {
                        if f.gcc.is_some() {
                            f.channel.send(
                                at,
                                Message::Delay {
                                    received_at: g_at,
                                    delay_ms: owd as f64,
                                },
                            );
                        }
                        f.group = Some((p.frame_id, at, at - p.sent_at));
                    }
                    Some((frame, _, _)) if p.frame_id < frame => {}
                    _ => f.group = Some((p.frame_id, at, at - p.sent_at)),
                }
                f.log.delivered.push(p);
            }
        }

        // Feedback delivery.
        for f in flows.iter_mut() {
            for (_, msg) in f.channel.due(t) {
                match msg {
                    Message::Target { rate, mode } => {
                        if mode != f.mode {
                            f.mode = mode;
                            f.log.modes.push((t, mode));
                        }
                        if mode == Mode::Occ {
                            f.sender.apply_feedback(rate, t);
                            if let Some(g) = f.gcc.as_mut() {
                                g.sync_rate(rate);
                            }
                        }
                    }
                    Message::Delay { received_at, delay_ms } => {
                        if let Some(g) = f.gcc.as_mut() {
                            g.on_delay_sample(received_at, delay_ms);
                        }
                    }
                }
            }
            let gcc_in_control = f.kind == ControllerKind::Gcc || f.mode == Mode::GccFallback;
            if let (true, Some(g)) = (gcc_in_control && t >= f.start_at, f.gcc.as_mut()) {
                let rate = g.on_tick(t);
                f.sender.apply_feedback(rate, t);
            }
        }
    }

    let mut logs = Vec::with_capacity(flows.len());
    for f in flows {
        let mut log = f.log;
        log.frames = f.sender.frames().to_vec();
        log.targets = f.sender.target_history().to_vec();
        log.pacing_overruns = f.sender.pacing_overruns();
        let queued_bs = cell
            .buffer(f.user)?
            .queued_packets()
            .filter(|p| p.flow_id == FlowId(f.index))
            .count();
        log.pending = f.internet.queued_packets() + queued_bs;
        logs.push(log);
    }
    let report = build_report(config, &logs);
    Ok(RunOutput {
        report,
        flows: logs,
        decisions,
    })
}

/// Time-weighted mean of a piecewise-constant target history over `[from, to)`.
fn mean_target(targets: &[TargetChange], from: u64, to: u64) -> f64 {
    if to <= from || targets.is_empty() {
        return 0.0;
    }
    let mut acc = 0.0;
    for (i, c) in targets.iter().enumerate() {
        let a = c.subframe.max(from);
        let b = targets.get(i + 1).map_or(to, |n| n.subframe).min(to);
        if b > a {
            acc += c.target_bps * (b - a) as f64;
        }
    }
    acc / (to - from) as f64
}

/// Target drops smaller than this fraction are not counted as lag events.
pub const LAG_DROP_RATIO: f64 = 0.25;
/// A frame within this fraction above its desired size ends a lag event.
pub const LAG_TOLERANCE: f64 = 0.05;

pub fn build_report(config: &ScenarioConfig, logs: &[FlowLog]) -> MetricsReport {
    let horizon = config.horizon;
    let threshold = config.metrics.stall_threshold_ms;
    let window_start = horizon.saturating_sub(config.metrics.fairness_window);
    let mut flows = Vec::with_capacity(logs.len());
    for log in logs {
        let duration_s = horizon.saturating_sub(log.start_at) as f64 / 1000.0;
        let latencies: Vec<f64> = log
            .delivered
            .iter()
            .filter_map(|p| p.latency_ms())
            .map(|l| l as f64)
            .collect();
        let status = metrics::frame_latency(&log.frames, &log.delivered, &log.dropped);
        let frame_lat = metrics::frame_latencies(&log.frames, &status, horizon, threshold);
        let counted: Vec<f64> = frame_lat.iter().flatten().copied().collect();
        let stalled = counted.iter().filter(|&&l| l > threshold).count();
        let (mean, std) = metrics::bitrate_mean_std(&log.frames, log.start_at, horizon);
        let truth_at = |t: u64| {
            let i = t.saturating_sub(log.start_at.max(1)) as usize;
            log.truth.get(i).or(log.truth.last()).copied().unwrap_or(0.0)
        };
        let final_bytes: u64 = log
            .delivered
            .iter()
            .filter(|p| p.delivered_at.is_some_and(|d| d > window_start))
            .map(|p| p.size as u64)
            .sum();
        let final_span = (horizon - window_start).max(1) as f64 / 1000.0;
        flows.push(FlowMetrics {
            flow_id: log.flow_id,
            controller: log.controller.clone(),
            network_latency: metrics::percentiles(&latencies),
            frame_latency: metrics::percentiles(&counted),
            frames: counted.len(),
            stalled_frames: stalled,
            stall_rate: if counted.is_empty() { 0.0 } else { stalled as f64 / counted.len() as f64 },
            frame_bitrate_mean: mean,
            frame_bitrate_std: std,
            valid_bitrate: metrics::valid_bitrate(&log.frames, &frame_lat, threshold, duration_s),
            estimation_accuracy: metrics::estimation_accuracy(&log.estimates, &log.truth),
            encoder_overshoot: metrics::encoder_overshoot(&log.frames, truth_at, duration_s),
            encoder_lag_ms: metrics::encoder_lag(&log.frames, LAG_DROP_RATIO, LAG_TOLERANCE),
            mean_target: mean_target(&log.targets, log.start_at, horizon),
            delivered_bytes: log.delivered.iter().map(|p| p.size as u64).sum(),
            dropped_packets: log.dropped.len(),
            final_throughput: final_bytes as f64 * 8.0 / final_span,
        });
    }
    let throughputs: Vec<f64> = flows.iter().map(|f| f.final_throughput).collect();
    MetricsReport {
        scenario: config.name.clone(),
        seed: config.seed,
        horizon,
        jain_index: metrics::jain_index(&throughputs),
        flows,
    }
}
