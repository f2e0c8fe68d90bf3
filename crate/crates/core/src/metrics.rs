//! Evaluation metrics computed from run logs.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::packet::Packet;
use crate::sender::VideoFrame;

pub const DEFAULT_STALL_THRESHOLD_MS: f64 = 150.0;

/// Nearest-rank percentiles in ms.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Percentiles {
    pub count: usize,
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
    pub p999: f64,
    /// Fewer than 1000 samples; `p999` is the maximum.
    pub small_sample: bool,
}

/// Nearest-rank percentile of sorted data, `p` in (0, 1].
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

pub fn percentiles(values: &[f64]) -> Percentiles {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let small = v.len() < 1000;
    Percentiles {
        count: v.len(),
        p50: nearest_rank(&v, 0.5),
        p90: nearest_rank(&v, 0.9),
        p99: nearest_rank(&v, 0.99),
        p999: if small {
            v.last().copied().unwrap_or(0.0)
        } else {
            nearest_rank(&v, 0.999)
        },
        small_sample: small,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrameStatus {
    /// Decoded at the given subframe.
    Decoded(u64),
    /// A packet was dropped; the frame never decodes.
    Lost,
    /// Still in flight at the end of the log.
    Pending,
}

/// Decode status of each frame (same order as `frames`).
///
/// A frame decodes once its last packet arrives and its reference has been
/// decoded. A lost or pending reference is ignored, as after a refresh.
pub fn frame_latency(frames: &[VideoFrame], packets: &[Packet], dropped: &[Packet]) -> Vec<FrameStatus> {
    let mut arrived: HashMap<u64, (u32, u64)> = HashMap::new();
    for p in packets {
        if let Some(at) = p.delivered_at {
            let e = arrived.entry(p.frame_id).or_insert((0, 0));
            e.0 += 1;
            e.1 = e.1.max(at);
        }
    }
    let lost: std::collections::HashSet<u64> = dropped.iter().map(|p| p.frame_id).collect();
    let mut decoded: HashMap<u64, u64> = HashMap::new();
    let mut out = Vec::with_capacity(frames.len());
    for f in frames {
        let status = if lost.contains(&f.frame_id) {
            FrameStatus::Lost
        } else {
            match arrived.get(&f.frame_id) {
                Some(&(n, last)) if n >= f.packet_count => {
                    let dep = f.reference_frame.and_then(|r| decoded.get(&r).copied());
                    FrameStatus::Decoded(dep.map_or(last, |d| d.max(last)))
                }
                _ => FrameStatus::Pending,
            }
        };
        if let FrameStatus::Decoded(t) = status {
            decoded.insert(f.frame_id, t);
        }
        out.push(status);
    }
    out
}

/// Per-frame latency in ms, `None` for frames excluded from statistics.
/// Lost frames and frames pending longer than `threshold` count as stalls
/// with infinite latency.
pub fn frame_latencies(
    frames: &[VideoFrame],
    status: &[FrameStatus],
    horizon: u64,
    threshold_ms: f64,
) -> Vec<Option<f64>> {
    frames
        .iter()
        .zip(status)
        .map(|(f, s)| match *s {
            FrameStatus::Decoded(t) => Some((t - f.encode_time) as f64),
            FrameStatus::Lost => Some(f64::INFINITY),
            FrameStatus::Pending if (horizon - f.encode_time) as f64 > threshold_ms => Some(f64::INFINITY),
            FrameStatus::Pending => None,
        })
        .collect()
}

/// Bitrate of frames delivered within `threshold_ms`, over `duration_s`.
pub fn valid_bitrate(frames: &[VideoFrame], latencies: &[Option<f64>], threshold_ms: f64, duration_s: f64) -> f64 {
    if duration_s <= 0.0 {
        return 0.0;
    }
    let bits: f64 = frames
        .iter()
        .zip(latencies)
        .filter(|(_, l)| l.is_some_and(|l| l <= threshold_ms))
        .map(|(f, _)| f.size as f64 * 8.0)
        .sum();
    bits / duration_s
}

/// Mean of `max(0, 1 - |est - truth| / truth)`; subframes with zero truth are skipped.
pub fn estimation_accuracy(estimates: &[f64], truth: &[f64]) -> Option<f64> {
    let scores: Vec<f64> = estimates
        .iter()
        .zip(truth)
        .filter(|(_, &t)| t > 0.0)
        .map(|(&e, &t)| (1.0 - (e - t).abs() / t).max(0.0))
        .collect();
    (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64)
}

pub fn jain_index(throughputs: &[f64]) -> Option<f64> {
    let sum: f64 = throughputs.iter().sum();
    let sq: f64 = throughputs.iter().map(|x| x * x).sum();
    (!throughputs.is_empty() && sq > 0.0).then(|| sum * sum / (throughputs.len() as f64 * sq))
}

/// Time integral of `max(0, frame rate - capacity)` divided by `duration_s`.
/// `capacity_at(t)` gives the ground-truth capacity at subframe `t`.
pub fn encoder_overshoot(frames: &[VideoFrame], capacity_at: impl Fn(u64) -> f64, duration_s: f64) -> f64 {
    if duration_s <= 0.0 {
        return 0.0;
    }
    let excess: f64 = frames
        .iter()
        .map(|f| (f.bitrate_bps() - capacity_at(f.encode_time)).max(0.0) * f.interval as f64 / 1000.0)
        .sum();
    excess / duration_s
}

/// Mean time in ms from a target drop (at least `drop_ratio` below the
/// previous frame's target) until the first frame within `tolerance` of its
/// desired size. Unresolved drops run to the next drop or the last frame.
pub fn encoder_lag(frames: &[VideoFrame], drop_ratio: f64, tolerance: f64) -> f64 {
    let mut lags = Vec::new();
    let mut open: Option<u64> = None;
    for w in frames.windows(2) {
        let (prev, f) = (&w[0], &w[1]);
        let dropped = f.target_bps < prev.target_bps * (1.0 - drop_ratio);
        if dropped {
            if let Some(start) = open.take() {
                lags.push((f.encode_time - start) as f64);
            }
            open = Some(f.encode_time);
        }
        if let Some(start) = open {
            if f.size as f64 <= f.desired_size as f64 * (1.0 + tolerance) {
                lags.push((f.encode_time - start) as f64);
                open = None;
            }
        }
    }
    if let (Some(start), Some(last)) = (open, frames.last()) {
        lags.push((last.encode_time - start) as f64);
    }
    if lags.is_empty() {
        0.0
    } else {
        lags.iter().sum::<f64>() / lags.len() as f64
    }
}

/// Per-flow results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowMetrics {
    pub flow_id: u32,
    pub controller: String,
    pub network_latency: Percentiles,
    pub frame_latency: Percentiles,
    pub frames: usize,
    pub stalled_frames: usize,
    pub stall_rate: f64,
    pub frame_bitrate_mean: f64,
    pub frame_bitrate_std: f64,
    pub valid_bitrate: f64,
    pub estimation_accuracy: Option<f64>,
    pub encoder_overshoot: f64,
    pub encoder_lag_ms: f64,
    pub mean_target: f64,
    pub delivered_bytes: u64,
    pub dropped_packets: usize,
    /// Delivered bits/s over the final fairness window.
    pub final_throughput: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub seed: u64,
    pub horizon: u64,
    pub flows: Vec<FlowMetrics>,
    pub jain_index: Option<f64>,
}

/// Flat CSV row of one flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scenario: String,
    pub seed: u64,
    pub flow_id: u32,
    pub controller: String,
    pub latency_p50: f64,
    pub latency_p90: f64,
    pub latency_p99: f64,
    pub latency_p999: f64,
    pub latency_small_sample: bool,
    pub frame_latency_p50: f64,
    pub frame_latency_p90: f64,
    pub frame_latency_p99: f64,
    pub frames: usize,
    pub stall_rate: f64,
    pub frame_bitrate_mean: f64,
    pub frame_bitrate_std: f64,
    pub valid_bitrate: f64,
    pub estimation_accuracy: Option<f64>,
    pub encoder_overshoot: f64,
    pub encoder_lag_ms: f64,
    pub mean_target: f64,
    pub dropped_packets: usize,
    pub final_throughput: f64,
    pub jain_index: Option<f64>,
}

impl MetricsReport {
    pub fn rows(&self) -> Vec<MetricsRow> {
        self.flows
            .iter()
            .map(|f| MetricsRow {
                scenario: self.scenario.clone(),
                seed: self.seed,
                flow_id: f.flow_id,
                controller: f.controller.clone(),
                latency_p50: f.network_latency.p50,
                latency_p90: f.network_latency.p90,
                latency_p99: f.network_latency.p99,
                latency_p999: f.network_latency.p999,
                latency_small_sample: f.network_latency.small_sample,
                frame_latency_p50: f.frame_latency.p50,
                frame_latency_p90: f.frame_latency.p90,
                frame_latency_p99: f.frame_latency.p99,
                frames: f.frames,
                stall_rate: f.stall_rate,
                frame_bitrate_mean: f.frame_bitrate_mean,
                frame_bitrate_std: f.frame_bitrate_std,
                valid_bitrate: f.valid_bitrate,
                estimation_accuracy: f.estimation_accuracy,
                encoder_overshoot: f.encoder_overshoot,
                encoder_lag_ms: f.encoder_lag_ms,
                mean_target: f.mean_target,
                dropped_packets: f.dropped_packets,
                final_throughput: f.final_throughput,
                jain_index: self.jain_index,
            })
            .collect()
    }

    pub fn flow(&self, id: u32) -> Option<&FlowMetrics> {
        self.flows.iter().find(|f| f.flow_id == id)
    }
}

/// Frame bitrate mean and standard deviation over 1 s bins of encode time.
pub fn bitrate_mean_std(frames: &[VideoFrame], start: u64, horizon: u64) -> (f64, f64) {
    let duration = horizon.saturating_sub(start);
    if duration == 0 {
        return (0.0, 0.0);
    }
    let bins = duration.div_ceil(1000) as usize;
    let mut bits = vec![0.0; bins];
    for f in frames {
        if f.encode_time >= start && f.encode_time < horizon {
            bits[((f.encode_time - start) / 1000) as usize] += f.size as f64 * 8.0;
        }
    }
    let mean = bits.iter().sum::<f64>() / (duration as f64 / 1000.0);
    let full: Vec<f64> = bits[..(duration / 1000) as usize].to_vec();
    let std = if full.len() >= 2 {
        let m = full.iter().sum::<f64>() / full.len() as f64;
        (full.iter().map(|x| (x - m).powi(2)).sum::<f64>() / full.len() as f64).sqrt()
    } else {
        0.0
    };
    (mean, std)
}
