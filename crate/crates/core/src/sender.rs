//! Real-time video sender: frame generation under a target rate with a
//! virtual-buffer encoder-lag model, APP limits, and packet pacing.

use std::collections::VecDeque;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::packet::{FlowId, Packet};

pub const DEFAULT_MTU_PAYLOAD: u32 = 1200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SenderError {
    #[error("app-limit line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid sender configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoFrame {
    pub frame_id: u64,
    pub encode_time: u64,
    pub size: u32,
    pub packet_count: u32,
    pub reference_frame: Option<u64>,
    /// Frame interval the frame was encoded for, in subframes.
    pub interval: u64,
    /// Target rate in force at encode time.
    pub target_bps: f64,
    /// Size the rate controller asked for before lag and noise.
    pub desired_size: u32,
}

impl VideoFrame {
    /// Emitted bitrate of this frame over its interval.
    pub fn bitrate_bps(&self) -> f64 {
        self.size as f64 * 8.0 * 1000.0 / self.interval as f64
    }
}

/// Piecewise-constant series of `(start_subframe, value)`.
fn piecewise(segments: &[(u64, f64)], t: u64) -> Option<f64> {
    segments.iter().take_while(|s| s.0 <= t).last().map(|s| s.1)
}

/// Multiplicative APP-limit segments applied to the content's demanded bitrate.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AppLimitTrace {
    pub segments: Vec<(u64, f64)>,
}

impl AppLimitTrace {
    pub fn ratio_at(&self, t: u64) -> f64 {
        piecewise(&self.segments, t).unwrap_or(1.0)
    }

    pub fn validate(&self) -> Result<(), SenderError> {
        if self.segments.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(SenderError::Config("app-limit segments must be ordered and non-overlapping".into()));
        }
        if self.segments.iter().any(|s| !(s.1 > 0.0 && s.1 <= 1.0)) {
            return Err(SenderError::Config("limit_ratio must be in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SenderError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SenderError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    /// Parses `start_subframe,limit_ratio` lines (header required).
    pub fn parse(text: &str) -> Result<Self, SenderError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header = reader.headers().map_err(|e| SenderError::Parse {
            line: 1,
            message: e.to_string(),
        })?;
        if header.iter().collect::<Vec<_>>() != ["start_subframe", "limit_ratio"] {
            return Err(SenderError::Parse {
                line: 1,
                message: "header must be `start_subframe,limit_ratio`".into(),
            });
        }
        let mut segments = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| SenderError::Parse {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            let line = record.position().map_or(0, |p| p.line());
            let (start, ratio): (u64, f64) = record.deserialize(None).map_err(|e| SenderError::Parse {
                line,
                message: e.to_string(),
            })?;
            segments.push((start, ratio));
        }
        let trace = Self { segments };
        trace.validate()?;
        Ok(trace)
    }
}

/// How a frame's packets are spread over its interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PacerConfig {
    Burst,
    /// Spread packets uniformly over `ceil(fraction * interval)` subframes.
    DutyCycle { fraction: f64 },
    /// Send at `k` times the current target rate.
    PacingMultiplier { k: f64 },
}

impl Default for PacerConfig {
    fn default() -> Self {
        PacerConfig::Burst
    }
}

impl PacerConfig {
    pub fn validate(&self) -> Result<(), SenderError> {
        match *self {
            PacerConfig::DutyCycle { fraction } if !(fraction > 0.0 && fraction <= 1.0) => {
                Err(SenderError::Config("duty cycle fraction must be in (0, 1]".into()))
            }
            PacerConfig::PacingMultiplier { k } if !(k > 1.0) => {
                Err(SenderError::Config("pacing multiplier must be > 1".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Packet sizes of a frame: full MTU payloads and a remainder.
pub fn packetize(size: u32, mtu: u32) -> Vec<u32> {
    let count = size.div_ceil(mtu).max(1);
    (0..count)
        .map(|i| if i + 1 < count { mtu } else { size - mtu * (count - 1) })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PaceSchedule {
    /// `(subframe offset from encode time, packet size)` in send order.
    pub emissions: Vec<(u64, u32)>,
    /// Packets did not fit before the next frame; the excess was pushed
    /// into the last subframe of the interval.
    pub overrun: bool,
}

pub fn pace(
    frame: &VideoFrame,
    pacer: PacerConfig,
    mtu: u32,
    frame_interval: u64,
    target_bps: f64,
) -> PaceSchedule {
    let sizes = packetize(frame.size, mtu);
    let n = sizes.len() as u64;
    let last = frame_interval.max(1) - 1;
    let mut overrun = false;
    let offsets: Vec<u64> = match pacer {
        PacerConfig::Burst => vec![0; sizes.len()],
        PacerConfig::DutyCycle { fraction } => {
            let span = ((fraction * frame_interval as f64).ceil() as u64).clamp(1, frame_interval.max(1));
            (0..n).map(|k| k * span / n).collect()
        }
        PacerConfig::PacingMultiplier { k } => {
            let per_subframe = k * target_bps / 8000.0;
            let mut sent = 0u64;
            sizes
                .iter()
                .map(|&s| {
                    let off = (sent as f64 / per_subframe).floor() as u64;
                    sent += s as u64;
                    if off > last {
                        overrun = true;
                        last
                    } else {
                        off
                    }
                })
                .collect()
        }
    };
    PaceSchedule {
        emissions: offsets.into_iter().zip(sizes).collect(),
        overrun,
    }
}

/// Leaky-bucket encoder rate control.
///
/// `occupancy` is the byte debt accumulated by emitting above the desired
/// size; it is bounded by `vbv_multiple` expected frames. After a target drop
/// the encoder keeps its previous frame size while debt fits (for at most
/// `lag_horizon` subframes), then repays debt by undershooting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderModel {
    pub vbv_multiple: f64,
    pub noise_ratio: f64,
    pub lag_horizon: u64,
    pub occupancy: f64,
    last_size: f64,
    over_since: Option<u64>,
}

impl EncoderModel {
    pub fn new(vbv_multiple: f64, noise_ratio: f64, lag_horizon: u64) -> Self {
        Self {
            vbv_multiple,
            noise_ratio,
            lag_horizon,
            occupancy: 0.0,
            last_size: 0.0,
            over_since: None,
        }
    }

    /// VBV capacity in bytes for an expected frame size.
    pub fn capacity(&self, expected: f64) -> f64 {
        self.vbv_multiple * expected
    }

    /// Produces the next frame size in bytes.
    ///
    /// `demand_bps` is the (APP-limited) content rate, `None` when unlimited.
    pub fn next_size(
        &mut self,
        now: u64,
        target_bps: f64,
        demand_bps: Option<f64>,
        frame_interval: u64,
        rng: &mut ChaCha8Rng,
    ) -> (u32, u32) {
        let rate = demand_bps.map_or(target_bps, |d| d.min(target_bps));
        let desired = (rate * frame_interval as f64 / 8000.0).max(1.0);
        let capacity = self.capacity(desired);
        self.occupancy = self.occupancy.min(capacity);

        let lagging = self.last_size > desired
            && self
                .over_since
                .is_none_or(|t| now.saturating_sub(t) < self.lag_horizon);
        let mut planned = if lagging { self.last_size } else { desired };
        planned -= self.occupancy / (self.vbv_multiple + 4.0);
        if self.noise_ratio > 0.0 {
            planned *= 1.0 + rng.random_range(-self.noise_ratio..=self.noise_ratio);
        }
        let upper = desired + (capacity - self.occupancy);
        let lower = (desired - self.occupancy).max(0.1 * desired).min(upper);
        let size = planned.clamp(lower, upper).round().max(1.0);

        self.occupancy = (self.occupancy + size - desired).clamp(0.0, capacity);
        if size > desired * 1.001 {
            self.over_since.get_or_insert(now);
        } else {
            self.over_since = None;
        }
        self.last_size = size;
        (size as u32, desired.round() as u32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SenderConfig {
    #[serde(default = "default_fps")]
    pub fps: f64,
    /// Optional `(start_subframe, fps)` changes after the start.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fps_schedule: Vec<(u64, f64)>,
    #[serde(default)]
    pub pacer: PacerConfig,
    #[serde(default = "default_vbv")]
    pub vbv_multiple: f64,
    #[serde(default = "default_noise")]
    pub noise_ratio: f64,
    #[serde(default = "default_lag_horizon")]
    pub lag_horizon: u64,
    #[serde(default = "default_mtu")]
    pub mtu_payload: u32,
    #[serde(default = "default_start_rate")]
    pub start_rate: f64,
    /// Piecewise-constant content bitrate `(start_subframe, bps)`; empty means unlimited.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub content_demand: Vec<(u64, f64)>,
    #[serde(default, skip_serializing_if = "is_default_trace")]
    pub app_limit: AppLimitTrace,
    /// Path of an app-limit trace file; replaces `app_limit` when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub app_limit_file: Option<String>,
}

fn is_default_trace(t: &AppLimitTrace) -> bool {
    t.segments.is_empty()
}
fn default_fps() -> f64 {
    25.0
}
fn default_vbv() -> f64 {
    4.0
}
fn default_noise() -> f64 {
    0.05
}
fn default_lag_horizon() -> u64 {
    1000
}
fn default_mtu() -> u32 {
    DEFAULT_MTU_PAYLOAD
}
fn default_start_rate() -> f64 {
    1_000_000.0
}

impl Default for SenderConfig {
    fn default() -> Self {
        Self {
            fps: default_fps(),
            fps_schedule: Vec::new(),
            pacer: PacerConfig::Burst,
            vbv_multiple: default_vbv(),
            noise_ratio: default_noise(),
            lag_horizon: default_lag_horizon(),
            mtu_payload: default_mtu(),
            start_rate: default_start_rate(),
            content_demand: Vec::new(),
            app_limit: AppLimitTrace::default(),
            app_limit_file: None,
        }
    }
}

pub fn frame_interval_for(fps: f64) -> u64 {
    ((1000.0 / fps).round() as u64).max(1)
}

/// A target-rate change as seen by the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetChange {
    pub subframe: u64,
    pub target_bps: f64,
}

/// The sender of one flow.
#[derive(Debug, Clone)]
pub struct RtcSender {
    flow: FlowId,
    config: SenderConfig,
    app_limit: AppLimitTrace,
    encoder: EncoderModel,
    target_bps: f64,
    next_frame_at: u64,
    next_frame_id: u64,
    next_seq: u64,
    pending: VecDeque<(u64, Packet)>,
    frames: Vec<VideoFrame>,
    targets: Vec<TargetChange>,
    overruns: u64,
    rng: ChaCha8Rng,
}

impl RtcSender {
    pub fn new(
        flow: FlowId,
        config: SenderConfig,
        start_at: u64,
        rng: ChaCha8Rng,
    ) -> Result<Self, SenderError> {
        config.pacer.validate()?;
        if !(config.fps > 0.0) || config.fps_schedule.iter().any(|s| !(s.1 > 0.0)) {
            return Err(SenderError::Config("fps must be > 0".into()));
        }
        if !(config.start_rate > 0.0) {
            return Err(SenderError::Config("start_rate must be > 0".into()));
        }
        let app_limit = match &config.app_limit_file {
            Some(p) => AppLimitTrace::load(p)?,
            None => config.app_limit.clone(),
        };
        app_limit.validate()?;
        let encoder = EncoderModel::new(config.vbv_multiple, config.noise_ratio, config.lag_horizon);
        Ok(Self {
            flow,
            target_bps: config.start_rate,
            targets: vec![TargetChange {
                subframe: start_at,
                target_bps: config.start_rate,
            }],
            app_limit,
            encoder,
            next_frame_at: start_at,
            next_frame_id: 1,
            next_seq: 0,
            pending: VecDeque::new(),
            frames: Vec::new(),
            overruns: 0,
            config,
            rng,
        })
    }

    pub fn flow(&self) -> FlowId {
        self.flow
    }

    pub fn target_bps(&self) -> f64 {
        self.target_bps
    }

    pub fn frames(&self) -> &[VideoFrame] {
        &self.frames
    }

    pub fn target_history(&self) -> &[TargetChange] {
        &self.targets
    }

    pub fn pacing_overruns(&self) -> u64 {
        self.overruns
    }

    pub fn frame_interval_at(&self, t: u64) -> u64 {
        frame_interval_for(piecewise(&self.config.fps_schedule, t).unwrap_or(self.config.fps))
    }

    /// Content rate after APP limits, `None` when the content is unlimited.
    pub fn demand_at(&self, t: u64) -> Option<f64> {
        piecewise(&self.config.content_demand, t).map(|d| d * self.app_limit.ratio_at(t))
    }

    /// New target; takes effect at the next encoded frame.
    pub fn apply_feedback(&mut self, target_bps: f64, now: u64) {
        if target_bps <= 0.0 || target_bps == self.target_bps {
            return;
        }
        self.target_bps = target_bps;
        match self.targets.last_mut() {
            Some(last) if last.subframe == now => last.target_bps = target_bps,
            _ => self.targets.push(TargetChange {
                subframe: now,
                target_bps,
            }),
        }
    }

    /// Encodes a frame if one is due at `now` and returns the packets to send
    /// during this subframe.
    pub fn tick(&mut self, now: u64) -> Vec<Packet> {
        if now >= self.next_frame_at {
            let interval = self.frame_interval_at(now);
            let demand = self.demand_at(now);
            let (size, desired) =
                self.encoder
                    .next_size(now, self.target_bps, demand, interval, &mut self.rng);
            let sizes = packetize(size, self.config.mtu_payload);
            let frame = VideoFrame {
                frame_id: self.next_frame_id,
                encode_time: now,
                size,
                packet_count: sizes.len() as u32,
                reference_frame: (self.next_frame_id > 1).then(|| self.next_frame_id - 1),
                interval,
                target_bps: self.target_bps,
                desired_size: desired,
            };
            let schedule = pace(&frame, self.config.pacer, self.config.mtu_payload, interval, self.target_bps);
            if schedule.overrun {
                self.overruns += 1;
            }
            for (offset, psize) in schedule.emissions {
                let p = Packet::new(self.flow, frame.frame_id, self.next_seq, psize, now + offset);
                self.next_seq += 1;
                self.pending.push_back((now + offset, p));
            }
            self.next_frame_id += 1;
            self.next_frame_at = now + interval;
            self.frames.push(frame);
        }
        let mut out = Vec::new();
        while let Some((at, _)) = self.pending.front() {
            if *at > now {
                break;
            }
            let (_, mut p) = self.pending.pop_front().expect("front exists");
            p.sent_at = now;
            out.push(p);
        }
        out
    }
}
