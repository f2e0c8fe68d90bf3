//! Reference controllers: a delay-gradient end-to-end controller and a
//! fixed-window physical-layer moving average.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GccConfig {
    pub start_rate: f64,
    pub min_rate: f64,
    pub max_rate: f64,
    /// Preset round-trip time used for the update interval and the
    /// additive increase; not measured.
    pub rtt_ms: f64,
    pub packet_size_bytes: f64,
    /// ms of one-way delay per ms of arrival time.
    pub overuse_threshold: f64,
    pub decrease_factor: f64,
    /// EWMA weight of a new gradient sample.
    pub gradient_smoothing: f64,
}

impl Default for GccConfig {
    fn default() -> Self {
        Self {
            start_rate: 1_000_000.0,
            min_rate: 50_000.0,
            max_rate: 200_000_000.0,
            rtt_ms: 89.0,
            packet_size_bytes: 1200.0,
            overuse_threshold: 0.01,
            decrease_factor: 0.85,
            gradient_smoothing: 0.1,
        }
    }
}

impl GccConfig {
    pub fn violations(&self) -> Vec<(String, String)> {
        let mut v = Vec::new();
        if !(self.min_rate > 0.0 && self.min_rate <= self.max_rate) {
            v.push(("min_rate".into(), "must satisfy 0 < min_rate <= max_rate".into()));
        }
        if !(self.start_rate >= self.min_rate && self.start_rate <= self.max_rate) {
            v.push(("start_rate".into(), "must lie in [min_rate, max_rate]".into()));
        }
        if !(self.rtt_ms >= 1.0) {
            v.push(("rtt_ms".into(), "must be >= 1".into()));
        }
        if !(self.packet_size_bytes > 0.0) {
            v.push(("packet_size_bytes".into(), "must be > 0".into()));
        }
        if !(self.decrease_factor > 0.0 && self.decrease_factor < 1.0) {
            v.push(("decrease_factor".into(), "must be in (0, 1)".into()));
        }
        if !(self.overuse_threshold > 0.0) {
            v.push(("overuse_threshold".into(), "must be > 0".into()));
        }
        if !(self.gradient_smoothing > 0.0 && self.gradient_smoothing <= 1.0) {
            v.push(("gradient_smoothing".into(), "must be in (0, 1]".into()));
        }
        v
    }

    /// Additive increase per update: half a packet per round trip.
    pub fn increase_step(&self) -> f64 {
        self.packet_size_bytes * 8.0 / 2.0 / (self.rtt_ms / 1000.0)
    }

    pub fn update_interval(&self) -> u64 {
        self.rtt_ms.round() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Usage {
    Normal,
    Overuse,
    Underuse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GccState {
    pub config: GccConfig,
    pub rate: f64,
    pub delay_gradient: f64,
    last_sample: Option<(u64, f64)>,
    next_update: u64,
}

impl GccState {
    pub fn new(config: GccConfig, now: u64) -> Self {
        Self {
            rate: config.start_rate,
            delay_gradient: 0.0,
            last_sample: None,
            next_update: now + config.update_interval(),
            config,
        }
    }

    pub fn usage(&self) -> Usage {
        if self.delay_gradient > self.config.overuse_threshold {
            Usage::Overuse
        } else if self.delay_gradient < -self.config.overuse_threshold {
            Usage::Underuse
        } else {
            Usage::Normal
        }
    }

    /// Feeds one `(receive time, one-way delay ms)` sample into the gradient.
    pub fn on_delay_sample(&mut self, received_at: u64, delay_ms: f64) {
        if let Some((t0, d0)) = self.last_sample {
            if received_at > t0 {
                let slope = (delay_ms - d0) / (received_at - t0) as f64;
                let a = self.config.gradient_smoothing;
                self.delay_gradient = (1.0 - a) * self.delay_gradient + a * slope;
            }
        }
        self.last_sample = Some((received_at, delay_ms));
    }

    /// Applies one rate update if an update interval has elapsed.
    pub fn on_tick(&mut self, now: u64) -> f64 {
        while now >= self.next_update {
            self.rate = match self.usage() {
                Usage::Overuse => self.rate * self.config.decrease_factor,
                Usage::Normal => self.rate + self.config.increase_step(),
                Usage::Underuse => self.rate,
            }
            .clamp(self.config.min_rate, self.config.max_rate);
            self.next_update += self.config.update_interval();
        }
        self.rate
    }

    /// Replaces the rate, e.g. with the target of another controller.
    pub fn sync_rate(&mut self, rate: f64) {
        self.rate = rate.clamp(self.config.min_rate, self.config.max_rate);
    }
}

/// One GCC step: feed an optional delay sample, then update the rate.
pub fn gcc_step(state: &mut GccState, delay_sample: Option<(u64, f64)>, now: u64) -> f64 {
    if let Some((t, d)) = delay_sample {
        state.on_delay_sample(t, d);
    }
    state.on_tick(now)
}

/// Moving average over a fixed number of subframes.
#[derive(Debug, Clone, PartialEq)]
pub struct PbeState {
    window: usize,
    samples: VecDeque<f64>,
    sum: f64,
}

impl PbeState {
    pub fn new(window: usize) -> Self {
        assert!(window >= 1, "window must be >= 1");
        Self {
            window,
            samples: VecDeque::with_capacity(window),
            sum: 0.0,
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn push(&mut self, sample: f64) -> f64 {
        self.samples.push_back(sample);
        self.sum += sample;
        if self.samples.len() > self.window {
            self.sum -= self.samples.pop_front().expect("non-empty");
        }
        // A full window is summed exactly.
        if self.samples.len() == self.window {
            self.sum = self.samples.iter().sum();
        }
        self.sum / self.samples.len() as f64
    }
}

pub fn pbe_step(state: &mut PbeState, sample: f64) -> f64 {
    state.push(sample)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_time(target: f64) -> f64 {
        let cfg = GccConfig {
            start_rate: 50_000.0,
            ..Default::default()
        };
        let mut g = GccState::new(cfg, 0);
        for t in 0..400_000u64 {
            if t % 40 == 0 {
                g.on_delay_sample(t, 20.0);
            }
            if g.on_tick(t) >= target {
                return t as f64 / 1000.0;
            }
        }
        f64::INFINITY
    }

    #[test]
    fn zero_jitter_ramp_matches_calibration() {
        let t50 = ramp_time(50e6);
        let t100 = ramp_time(100e6);
        assert!((t50 - 83.0).abs() <= 0.05 * 83.0, "50 Mbps at {t50} s");
        assert!((t100 - 167.0).abs() <= 0.05 * 167.0, "100 Mbps at {t100} s");
    }

    #[test]
    fn sustained_overuse_strictly_decreases() {
        let mut g = GccState::new(GccConfig::default(), 0);
        g.sync_rate(20e6);
        let mut prev = g.rate;
        let mut delay = 10.0;
        for t in 1..2000u64 {
            delay += 0.5;
            g.on_delay_sample(t, delay);
            let before = g.rate;
            let r = g.on_tick(t);
            if r != before {
                assert!(r < prev);
                prev = r;
            }
        }
        assert!(prev < 20e6 * 0.85f64.powi(10));
    }

    #[test]
    fn rate_stays_clamped() {
        let cfg = GccConfig {
            min_rate: 1e6,
            max_rate: 2e6,
            start_rate: 1e6,
            ..Default::default()
        };
        let mut g = GccState::new(cfg, 0);
        for t in 0..100_000u64 {
            let r = g.on_tick(t);
            assert!((1e6..=2e6).contains(&r));
        }
    }

    #[test]
    fn pbe_examples() {
        let mut p = PbeState::new(30);
        for _ in 0..100 {
            assert!((p.push(20e6) - 20e6).abs() < 1e-6);
        }
        let mut steps = 0;
        loop {
            steps += 1;
            if (p.push(5e6) - 5e6).abs() < 1e-6 {
                break;
            }
        }
        assert_eq!(steps, 30);
    }

    #[test]
    fn pbe_oscillates_on_sparse_bursts() {
        let mut p = PbeState::new(30);
        let mut seen = Vec::new();
        for t in 0..400u64 {
            let s = if t % 40 == 0 { 40e6 } else { 0.0 };
            let m = p.push(s);
            if t >= 40 {
                seen.push(m);
            }
        }
        let zero = seen.iter().any(|&m| m == 0.0);
        let one = seen.iter().any(|&m| (m - 40e6 / 30.0).abs() < 1.0);
        assert!(zero && one);
    }
}
