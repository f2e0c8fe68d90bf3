//! Base-station side rate controller: frame-aware available-bandwidth
//! measurement, APP-limit margin, min-window smoothing and bottleneck
//! detection with fallback to an end-to-end controller.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ran::{ArrivalLog, SubframeReport, SUBFRAMES_PER_SECOND};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OccError {
    #[error("beta must be in (0, 1), got {0}")]
    Beta(f64),
    #[error("invalid controller configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    /// Minimum over the last `window_length` subframes.
    MinWindow,
    /// Margin-adjusted estimate of the current subframe, unsmoothed.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BottleneckConfig {
    pub smear_threshold: f64,
    pub burst_threshold: f64,
    pub hysteresis: u32,
    /// Lookback in identified frame intervals.
    pub lookback_intervals: u64,
    /// Smeared arrivals only indicate an Internet bottleneck when the
    /// arrival rate is below this fraction of the fed-back target.
    pub rate_guard: f64,
}

impl Default for BottleneckConfig {
    fn default() -> Self {
        Self {
            smear_threshold: 0.8,
            burst_threshold: 0.3,
            hysteresis: 3,
            lookback_intervals: 3,
            rate_guard: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OccConfig {
    /// APP-limit margin coefficient; 0 disables the margin.
    pub beta: f64,
    pub window_length: usize,
    pub d_threshold: u64,
    /// Idle subframes that separate two bursts.
    pub gap_min: u64,
    /// Subframes with fewer arrivals are treated as control traffic.
    pub min_burst_packets: u32,
    pub smoothing: Smoothing,
    pub min_rate: f64,
    pub bottleneck: BottleneckConfig,
    /// `[start, end)` subframe spans forced into fallback (handover).
    pub forced_fallback: Vec<(u64, u64)>,
}

impl Default for OccConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            window_length: 500,
            d_threshold: 30,
            gap_min: 3,
            min_burst_packets: 2,
            smoothing: Smoothing::MinWindow,
            min_rate: 100_000.0,
            bottleneck: BottleneckConfig::default(),
            forced_fallback: Vec::new(),
        }
    }
}

impl OccConfig {
    /// Violations as `(field, message)` pairs.
    pub fn violations(&self) -> Vec<(String, String)> {
        let mut v = Vec::new();
        let mut push = |f: &str, m: &str| v.push((f.to_string(), m.to_string()));
        if !(self.beta >= 0.0 && self.beta < 1.0) {
            push("beta", "must be in [0, 1) (0 disables the margin)");
        }
        if self.window_length == 0 {
            push("window_length", "must be >= 1");
        }
        if self.d_threshold == 0 {
            push("d_threshold", "must be >= 1");
        }
        if self.gap_min == 0 {
            push("gap_min", "must be >= 1");
        }
        if !(self.min_rate > 0.0) {
            push("min_rate", "must be > 0");
        }
        let b = &self.bottleneck;
        if !(0.0..=1.0).contains(&b.smear_threshold) || !(0.0..=1.0).contains(&b.burst_threshold) {
            push("bottleneck", "thresholds must be in [0, 1]");
        } else if b.burst_threshold >= b.smear_threshold {
            push("bottleneck", "burst_threshold must be below smear_threshold");
        }
        if b.hysteresis == 0 {
            push("bottleneck.hysteresis", "must be >= 1");
        }
        if b.lookback_intervals < 3 {
            push("bottleneck.lookback_intervals", "must be >= 3");
        }
        if self.forced_fallback.iter().any(|s| s.0 >= s.1)
            || self.forced_fallback.windows(2).any(|w| w[1].0 < w[0].1)
        {
            push("forced_fallback", "spans must be non-empty, ordered and non-overlapping");
        }
        v
    }
}

/// Outcome of frame-interval identification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameInterval {
    /// Not enough history yet.
    Warming,
    /// No burst structure; use a trailing window of `d_threshold`.
    Fallback,
    /// Last complete frame interval `[start, end)`.
    Frame { start: u64, end: u64 },
}

impl FrameInterval {
    pub fn length(&self, d_threshold: u64) -> u64 {
        match *self {
            FrameInterval::Frame { start, end } => end - start,
            _ => d_threshold,
        }
    }
}

/// Lookback used for burst identification.
pub fn identification_lookback(d_threshold: u64) -> u64 {
    (4 * d_threshold).max(120)
}

/// Finds the two most recent burst starts in `log` up to `now`.
///
/// A burst starts at a subframe with at least `min_packets` arrivals that
/// follows more than `gap_min` subframes without any arrival; subframes
/// before 0 count as idle.
pub fn identify_frame_interval(
    log: &ArrivalLog,
    now: u64,
    d_threshold: u64,
    gap_min: u64,
    min_packets: u32,
) -> FrameInterval {
    if now + 1 < 2 * d_threshold {
        return FrameInterval::Warming;
    }
    let from = (now + 1).saturating_sub(identification_lookback(d_threshold));
    let mut prev_active: Option<u64> = None;
    let mut starts: [Option<u64>; 2] = [None, None];
    for r in log.records().filter(|r| r.subframe <= now && r.packets > 0) {
        let is_start = r.packets >= min_packets
            && match prev_active {
                None => true,
                Some(p) => r.subframe - p > gap_min,
            };
        if is_start && r.subframe >= from {
            starts = [starts[1], Some(r.subframe)];
        }
        prev_active = Some(r.subframe);
    }
    match starts {
        [Some(start), Some(end)] => FrameInterval::Frame { start, end },
        _ => FrameInterval::Fallback,
    }
}

/// Frame-aware ABW in payload bits/s from per-subframe PRB terms
/// `P_allocated + P_idle / N_user` and the latest MCS rate.
pub fn measure_abw(prb_terms: &[f64], mcs_now: f64, efficiency: f64) -> f64 {
    if prb_terms.is_empty() {
        return 0.0;
    }
    let mean = prb_terms.iter().sum::<f64>() / prb_terms.len() as f64;
    efficiency * SUBFRAMES_PER_SECOND * mean * mcs_now
}

pub fn apply_app_limit_margin(c_p: f64, c_f: f64, beta: f64) -> Result<f64, OccError> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(OccError::Beta(beta));
    }
    Ok(c_p + beta * (c_f - c_p).max(0.0))
}

/// Sliding-window minimum over the last `window_length` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct MinWindow {
    window_length: usize,
    pushed: u64,
    // (index, value) with strictly increasing values.
    mono: VecDeque<(u64, f64)>,
}

impl MinWindow {
    pub fn new(window_length: usize) -> Self {
        assert!(window_length >= 1, "window_length must be >= 1");
        Self {
            window_length,
            pushed: 0,
            mono: VecDeque::new(),
        }
    }

    pub fn window_length(&self) -> usize {
        self.window_length
    }

    pub fn is_warm(&self) -> bool {
        self.pushed >= self.window_length as u64
    }

    pub fn push(&mut self, sample: f64) -> f64 {
        let idx = self.pushed;
        self.pushed += 1;
        while self.mono.back().is_some_and(|&(_, v)| v >= sample) {
            self.mono.pop_back();
        }
        self.mono.push_back((idx, sample));
        while self
            .mono
            .front()
            .is_some_and(|&(i, _)| i + self.window_length as u64 <= idx)
        {
            self.mono.pop_front();
        }
        self.mono.front().expect("just pushed").1
    }

    pub fn current(&self) -> Option<f64> {
        self.mono.front().map(|m| m.1)
    }
}

pub fn smooth_target(smoother: &mut MinWindow, sample: f64) -> f64 {
    smoother.push(sample)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bottleneck {
    Wireless,
    Internet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BottleneckState {
    pub state: Bottleneck,
    pub burstiness_score: f64,
    pub hysteresis_counter: u32,
}

impl Default for BottleneckState {
    fn default() -> Self {
        Self {
            state: Bottleneck::Wireless,
            burstiness_score: 0.0,
            hysteresis_counter: 0,
        }
    }
}

/// Fraction of subframes in `[now + 1 - lookback, now]` with any arrival.
pub fn burstiness_score(log: &ArrivalLog, now: u64, lookback: u64) -> f64 {
    if lookback == 0 {
        return 0.0;
    }
    let from = (now + 1).saturating_sub(lookback);
    let active = log.window(from, now).filter(|r| r.packets > 0).count();
    (active as f64 / lookback as f64).min(1.0)
}

/// One hysteresis evaluation. `smear_plausible` gates the move to Internet.
pub fn detect_bottleneck(
    score: f64,
    current: BottleneckState,
    config: &BottleneckConfig,
    smear_plausible: bool,
) -> BottleneckState {
    let toward = match current.state {
        Bottleneck::Wireless => score > config.smear_threshold && smear_plausible,
        Bottleneck::Internet => score < config.burst_threshold,
    };
    let mut next = BottleneckState {
        burstiness_score: score,
        hysteresis_counter: if toward { current.hysteresis_counter + 1 } else { 0 },
        ..current
    };
    if next.hysteresis_counter >= config.hysteresis {
        next.state = match current.state {
            Bottleneck::Wireless => Bottleneck::Internet,
            Bottleneck::Internet => Bottleneck::Wireless,
        };
        next.hysteresis_counter = 0;
    }
    next
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Occ,
    GccFallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Feedback {
    pub target_bps: f64,
    pub mode: Mode,
}

/// One row of the decision log. Rates in bits/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub subframe: u64,
    /// Capacity of the latest subframe at the current MCS.
    pub c_p: f64,
    pub c_f: f64,
    pub b: f64,
    pub c_p_prime: f64,
    pub r: f64,
    pub state: Bottleneck,
    pub d: u64,
    pub fallback: bool,
}

/// Controller inputs for subframe `now`.
#[derive(Debug, Clone, Copy)]
pub struct Telemetry<'a> {
    pub now: u64,
    /// Report of the last completed subframe.
    pub report: &'a SubframeReport,
    /// MCS rate selected for subframe `now`.
    pub mcs_now: f64,
    /// Raw fair share at `mcs_now`.
    pub fair_share: f64,
    pub arrivals: &'a ArrivalLog,
}

#[derive(Debug, Clone)]
pub struct OccController {
    config: OccConfig,
    efficiency: f64,
    // (subframe, prb term), oldest first.
    terms: VecDeque<(u64, f64)>,
    smoother: MinWindow,
    bottleneck: BottleneckState,
    next_evaluation: u64,
    last_target: f64,
    interval: FrameInterval,
}

impl OccController {
    pub fn new(config: OccConfig, efficiency: f64) -> Result<Self, OccError> {
        if let Some((field, msg)) = config.violations().into_iter().next() {
            return Err(if field == "beta" {
                OccError::Beta(config.beta)
            } else {
                OccError::Config(format!("{field}: {msg}"))
            });
        }
        if !(efficiency > 0.0 && efficiency <= 1.0) {
            return Err(OccError::Config("efficiency must be in (0, 1]".into()));
        }
        Ok(Self {
            smoother: MinWindow::new(config.window_length),
            config,
            efficiency,
            terms: VecDeque::new(),
            bottleneck: BottleneckState::default(),
            next_evaluation: 0,
            last_target: 0.0,
            interval: FrameInterval::Warming,
        })
    }

    pub fn config(&self) -> &OccConfig {
        &self.config
    }

    pub fn bottleneck(&self) -> BottleneckState {
        self.bottleneck
    }

    pub fn frame_interval(&self) -> FrameInterval {
        self.interval
    }

    fn forced(&self, now: u64) -> bool {
        self.config
            .forced_fallback
            .iter()
            .any(|&(s, e)| now >= s && now < e)
    }

    fn window_terms(&self, from: u64, to_exclusive: u64) -> Vec<f64> {
        self.terms
            .iter()
            .filter(|(t, _)| *t >= from && *t < to_exclusive)
            .map(|t| t.1)
            .collect()
    }

    /// Returns `None` while the arrival history is shorter than
    /// `2 * d_threshold`; warm-up samples never enter the smoother.
    pub fn step(&mut self, input: Telemetry<'_>) -> Option<(Feedback, Decision)> {
        let cfg = &self.config;
        let now = input.now;
        let term = input.report.prb_term();
        self.terms.push_back((input.report.subframe, term));
        let keep = identification_lookback(cfg.d_threshold) as usize + 1;
        while self.terms.len() > keep {
            self.terms.pop_front();
        }

        self.interval = identify_frame_interval(
            input.arrivals,
            now,
            cfg.d_threshold,
            cfg.gap_min,
            cfg.min_burst_packets,
        );
        if self.interval == FrameInterval::Warming {
            return None;
        }
        let (window, fallback) = match self.interval {
            FrameInterval::Frame { start, end } => (self.window_terms(start, end), false),
            _ => (self.window_terms(now.saturating_sub(cfg.d_threshold), now), true),
        };
        let d = self.interval.length(cfg.d_threshold);

        let eff = self.efficiency;
        let c_p = eff * SUBFRAMES_PER_SECOND * term * input.mcs_now;
        let c_f = eff * input.fair_share;
        let b = measure_abw(&window, input.mcs_now, eff);
        let c_p_prime = if cfg.beta > 0.0 {
            b + cfg.beta * (c_f - b).max(0.0)
        } else {
            b
        }
        .max(cfg.min_rate);
        let r = match cfg.smoothing {
            Smoothing::MinWindow => self.smoother.push(c_p_prime),
            Smoothing::Raw => c_p_prime,
        };

        if now >= self.next_evaluation {
            let lookback = cfg.bottleneck.lookback_intervals * d;
            let score = burstiness_score(input.arrivals, now, lookback);
            let from = (now + 1).saturating_sub(lookback);
            let bytes: u64 = input.arrivals.window(from, now).map(|a| a.bytes).sum();
            let arrival_bps = bytes as f64 * 8.0 * SUBFRAMES_PER_SECOND / lookback.max(1) as f64;
            let plausible = arrival_bps < cfg.bottleneck.rate_guard * self.last_target;
            self.bottleneck = detect_bottleneck(score, self.bottleneck, &cfg.bottleneck, plausible);
            self.next_evaluation = now + d;
        }
        let state = if self.forced(now) {
            Bottleneck::Internet
        } else {
            self.bottleneck.state
        };
        if state == Bottleneck::Wireless {
            self.last_target = r;
        }
        let mode = match state {
            Bottleneck::Wireless => Mode::Occ,
            Bottleneck::Internet => Mode::GccFallback,
        };
        Some((
            Feedback { target_bps: r, mode },
            Decision {
                subframe: now,
                c_p,
                c_f,
                b,
                c_p_prime,
                r,
                state,
                d,
                fallback,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ran::UserId;

    fn log(entries: &[(u64, u32)]) -> ArrivalLog {
        entries.iter().map(|&(t, p)| (t, p as u64 * 1200, p)).collect()
    }

    fn bursts(starts: &[u64], len: u64) -> ArrivalLog {
        let mut v = Vec::new();
        for &s in starts {
            for t in s..s + len {
                v.push((t, 5));
            }
        }
        log(&v)
    }

    #[test]
    fn interval_from_three_bursts() {
        let l = bursts(&[0, 40, 90], 1);
        assert_eq!(
            identify_frame_interval(&l, 90, 30, 3, 2),
            FrameInterval::Frame { start: 40, end: 90 }
        );
        assert_eq!(identify_frame_interval(&l, 90, 30, 3, 2).length(30), 50);
    }

    #[test]
    fn interval_from_long_bursts() {
        let l = bursts(&[0, 40], 10);
        assert_eq!(
            identify_frame_interval(&l, 70, 30, 3, 2),
            FrameInterval::Frame { start: 0, end: 40 }
        );
    }

    #[test]
    fn continuous_arrivals_fall_back() {
        let l = log(&(0..200).map(|t| (t, 3)).collect::<Vec<_>>());
        assert_eq!(identify_frame_interval(&l, 199, 30, 3, 2), FrameInterval::Fallback);
    }

    #[test]
    fn single_packets_never_start_a_burst() {
        let l = log(&[(5, 1), (20, 6), (45, 1), (60, 6)]);
        assert_eq!(
            identify_frame_interval(&l, 99, 30, 3, 2),
            FrameInterval::Frame { start: 20, end: 60 }
        );
    }

    #[test]
    fn continuous_single_packets_fall_back() {
        let mut v: Vec<(u64, u32)> = (0..100).map(|t| (t, 1)).collect();
        v[20].1 = 6;
        v[60].1 = 6;
        assert_eq!(identify_frame_interval(&log(&v), 99, 30, 3, 2), FrameInterval::Fallback);
    }

    #[test]
    fn short_history_is_warming() {
        let l = bursts(&[0, 40], 1);
        assert_eq!(identify_frame_interval(&l, 58, 30, 3, 2), FrameInterval::Warming);
    }

    #[test]
    fn abw_examples() {
        let b = measure_abw(&[10.0, 20.0, 30.0, 40.0], 1000.0, 1.0);
        assert_eq!(b, 25_000_000.0);
        let idle_only = SubframeReport {
            subframe: 0,
            user_id: UserId(0),
            prb_allocated: 0,
            prb_idle: 51,
            prb_total: 51,
            n_users: 1,
            mcs_rate: 500.0,
        };
        assert_eq!(measure_abw(&[idle_only.prb_term()], 500.0, 1.0), 51.0 * 500.0 * 1000.0);
        assert_eq!(measure_abw(&[10.0, 20.0, 30.0, 40.0], 500.0, 1.0), b / 2.0);
    }

    #[test]
    fn margin_examples() {
        assert_eq!(apply_app_limit_margin(10e6, 30e6, 0.1).unwrap(), 12e6);
        assert_eq!(apply_app_limit_margin(30e6, 30e6, 0.1).unwrap(), 30e6);
        assert_eq!(apply_app_limit_margin(40e6, 30e6, 0.1).unwrap(), 40e6);
        assert_eq!(apply_app_limit_margin(1e6, 2e6, 0.0), Err(OccError::Beta(0.0)));
        assert_eq!(apply_app_limit_margin(1e6, 2e6, 1.0), Err(OccError::Beta(1.0)));
    }

    #[test]
    fn min_window_examples() {
        let mut w = MinWindow::new(500);
        for _ in 0..600 {
            assert_eq!(w.push(20e6), 20e6);
        }
        assert_eq!(w.push(40e6), 20e6);

        let mut w = MinWindow::new(500);
        for _ in 0..600 {
            w.push(20e6);
        }
        assert_eq!(w.push(5e6), 5e6);
        for i in 0..499 {
            assert_eq!(w.push(20e6), 5e6, "step {i}");
        }
        assert_eq!(w.push(20e6), 20e6);
    }

    #[test]
    fn bottleneck_scores_and_hysteresis() {
        let sparse = log(&(0..10).map(|k| (k * 40, 5)).collect::<Vec<_>>());
        let score = burstiness_score(&sparse, 399, 400);
        assert!((score - 0.025).abs() < 1e-12);
        let cfg = BottleneckConfig::default();
        let s = detect_bottleneck(score, BottleneckState::default(), &cfg, true);
        assert_eq!(s.state, Bottleneck::Wireless);

        let mut s = BottleneckState::default();
        for i in 0..3 {
            assert_eq!(s.state, Bottleneck::Wireless, "evaluation {i}");
            s = detect_bottleneck(1.0, s, &cfg, true);
        }
        assert_eq!(s.state, Bottleneck::Internet);

        let mut s = BottleneckState::default();
        for score in [1.0, 1.0, 0.5, 1.0, 1.0, 0.1] {
            s = detect_bottleneck(score, s, &cfg, true);
            assert_eq!(s.state, Bottleneck::Wireless);
        }
        let guarded = detect_bottleneck(1.0, BottleneckState { hysteresis_counter: 2, ..s }, &cfg, false);
        assert_eq!(guarded.state, Bottleneck::Wireless);
    }

    fn report(t: u64, alloc: u32, idle: u32, n: u32) -> SubframeReport {
        SubframeReport {
            subframe: t,
            user_id: UserId(0),
            prb_allocated: alloc,
            prb_idle: idle,
            prb_total: 51,
            n_users: n,
            mcs_rate: 1000.0,
        }
    }

    #[test]
    fn steady_capacity_feedback() {
        let mut c = OccController::new(OccConfig::default(), 0.94).unwrap();
        let log = ArrivalLog::new(0);
        let mut last = None;
        for t in 1..1000 {
            let rep = report(t - 1, 0, 51, 1);
            let Some((fb, dec)) = c.step(Telemetry {
                now: t,
                report: &rep,
                mcs_now: 490.0,
                fair_share: 51.0 * 490.0 * 1000.0,
                arrivals: &log,
            }) else {
                assert!(t < 59);
                continue;
            };
            assert_eq!(fb.mode, Mode::Occ);
            assert!(dec.fallback);
            last = Some(fb.target_bps);
        }
        let expected = 0.94 * 51.0 * 490.0 * 1000.0;
        assert!((last.unwrap() - expected).abs() / expected < 1e-9);
    }

    #[test]
    fn deep_fade_reflected_same_subframe() {
        let mut c = OccController::new(OccConfig::default(), 1.0).unwrap();
        let log = ArrivalLog::new(0);
        let mut r = 0.0;
        for t in 1..800 {
            let mcs = if t < 700 { 1000.0 } else { 500.0 };
            let rep = report(t - 1, 0, 51, 1);
            let Some((fb, _)) = c.step(Telemetry {
                now: t,
                report: &rep,
                mcs_now: mcs,
                fair_share: 51.0 * mcs * 1000.0,
                arrivals: &log,
            }) else {
                continue;
            };
            if t == 699 {
                r = fb.target_bps;
            }
            if t == 700 {
                assert!((fb.target_bps - r / 2.0).abs() < 1.0);
            }
        }
    }

    #[test]
    fn forced_fallback_span() {
        let cfg = OccConfig {
            forced_fallback: vec![(100, 200)],
            ..Default::default()
        };
        let mut c = OccController::new(cfg, 1.0).unwrap();
        let log = ArrivalLog::new(0);
        for t in 1..300 {
            let rep = report(t - 1, 0, 51, 1);
            let Some((fb, _)) = c.step(Telemetry {
                now: t,
                report: &rep,
                mcs_now: 1000.0,
                fair_share: 51e6,
                arrivals: &log,
            }) else {
                continue;
            };
            let expected = if (100..200).contains(&t) { Mode::GccFallback } else { Mode::Occ };
            assert_eq!(fb.mode, expected, "subframe {t}");
        }
    }

    #[test]
    fn invalid_beta_rejected() {
        let cfg = OccConfig {
            beta: 1.5,
            ..Default::default()
        };
        assert_eq!(OccController::new(cfg, 0.94).unwrap_err(), OccError::Beta(1.5));
    }
}
