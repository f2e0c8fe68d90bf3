//! Scenario documents: the JSON configuration of one run, its validation
//! and the scalar axes a sweep may vary.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::GccConfig;
use crate::channel::ChannelSpec;
use crate::occ::OccConfig;
use crate::ran::CellConfig;
use crate::sender::{AppLimitTrace, PacerConfig, SenderConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    Occ,
    Gcc,
    Pbe,
}

impl ControllerKind {
    pub fn name(&self) -> &'static str {
        match self {
            ControllerKind::Occ => "occ",
            ControllerKind::Gcc => "gcc",
            ControllerKind::Pbe => "pbe",
        }
    }
}

impl std::str::FromStr for ControllerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "occ" => Ok(ControllerKind::Occ),
            "gcc" => Ok(ControllerKind::Gcc),
            "pbe" => Ok(ControllerKind::Pbe),
            other => Err(format!("unknown controller `{other}` (expected occ, gcc or pbe)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserChannel {
    pub user: u32,
    pub spec: ChannelSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub user: u32,
    pub controller: ControllerKind,
    #[serde(default)]
    pub sender: SenderConfig,
    #[serde(default = "default_feedback_delay")]
    pub feedback_delay: u64,
    #[serde(default)]
    pub start_at: u64,
}

fn default_feedback_delay() -> u64 {
    10
}

/// Egress rate change at the sender side of the Internet segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgressChange {
    pub start: u64,
    /// `None` removes the limit.
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InternetConfig {
    pub propagation_delay: u64,
    pub egress_rate: Option<f64>,
    pub egress_schedule: Vec<EgressChange>,
    /// Drop-tail bound of the egress queue in bytes.
    pub queue_cap: u64,
}

impl Default for InternetConfig {
    fn default() -> Self {
        Self {
            propagation_delay: 10,
            egress_rate: None,
            egress_schedule: Vec::new(),
            queue_cap: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CrossTrafficKind {
    SaturatingBulk,
    /// Bulk demand only within `[start, end)` spans.
    OnOff { on_spans: Vec<(u64, u64)> },
    /// Frame-patterned bursts at `rate` bits/s.
    RtcLike { rate: f64, fps: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossTrafficSpec {
    pub user: u32,
    pub kind: CrossTrafficKind,
    /// `[start, end)` spans; empty means always active.
    #[serde(default)]
    pub active_spans: Vec<(u64, u64)>,
}

impl CrossTrafficSpec {
    pub fn active_at(&self, t: u64) -> bool {
        let in_spans = |s: &[(u64, u64)]| s.iter().any(|&(a, b)| t >= a && t < b);
        let active = self.active_spans.is_empty() || in_spans(&self.active_spans);
        match &self.kind {
            CrossTrafficKind::OnOff { on_spans } => active && in_spans(on_spans),
            _ => active,
        }
    }
}

/// Controller parameters shared by all flows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerParams {
    #[serde(flatten)]
    pub occ: OccConfig,
    #[serde(default = "default_pbe_window")]
    pub pbe_window: usize,
    #[serde(default)]
    pub gcc: GccConfig,
}

fn default_pbe_window() -> usize {
    30
}

impl Default for ControllerParams {
    fn default() -> Self {
        Self {
            occ: OccConfig::default(),
            pbe_window: default_pbe_window(),
            gcc: GccConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    pub stall_threshold_ms: f64,
    /// Final window (subframes) for throughput fairness.
    pub fairness_window: u64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            stall_threshold_ms: crate::metrics::DEFAULT_STALL_THRESHOLD_MS,
            fairness_window: 5000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    pub horizon: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub cell: CellConfig,
    pub channels: Vec<UserChannel>,
    pub flows: Vec<FlowConfig>,
    #[serde(default)]
    pub internet: InternetConfig,
    #[serde(default)]
    pub cross_traffic: Vec<CrossTrafficSpec>,
    #[serde(default)]
    pub controller: ControllerParams,
    #[serde(default)]
    pub metrics: MetricsConfig,
}

/// One invariant violation at a field path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("{} violation(s): {}", .0.len(), .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("unknown sweep axis `{axis}`; valid axes: {}", SWEEP_AXES.join(", "))]
    UnknownAxis { axis: String },
    #[error("sweep needs at least one value")]
    EmptySweep,
    #[error("invalid value {value} for axis {axis}: {message}")]
    AxisValue { axis: String, value: f64, message: String },
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut config = Self::from_json(&text)?;
        config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(config)
    }

    /// Makes relative trace paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut String| {
            if Path::new(p.as_str()).is_relative() {
                *p = base.join(p.as_str()).display().to_string();
            }
        };
        for c in &mut self.channels {
            resolve_channel_paths(&mut c.spec, &fix);
        }
        for f in &mut self.flows {
            if let Some(p) = f.sender.app_limit_file.as_mut() {
                fix(p);
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn channel_for(&self, user: u32) -> Option<&ChannelSpec> {
        self.channels.iter().find(|c| c.user == user).map(|c| &c.spec)
    }

    /// All users in slot order.
    pub fn users(&self) -> Vec<u32> {
        let set: BTreeSet<u32> = self
            .flows
            .iter()
            .map(|f| f.user)
            .chain(self.cross_traffic.iter().map(|c| c.user))
            .collect();
        set.into_iter().collect()
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Invalid(v))
        }
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut push = |path: String, message: String| out.push(Violation { path, message });

        if self.cell.prb_total == 0 {
            push("cell.prb_total".into(), "must be >= 1".into());
        }
        if !(self.cell.efficiency > 0.0 && self.cell.efficiency <= 1.0) {
            push("cell.efficiency".into(), "must be in (0, 1]".into());
        }
        if let Err(e) = self.cell.scheduler.validate() {
            push("cell.scheduler".into(), e.to_string());
        }
        if self.flows.is_empty() {
            push("flows".into(), "at least one flow is required".into());
        }

        let mut seen_channels = BTreeSet::new();
        for (i, c) in self.channels.iter().enumerate() {
            if !seen_channels.insert(c.user) {
                push(format!("channels[{i}].user"), format!("duplicate channel for user {}", c.user));
            }
            for (p, m) in c.spec.violations() {
                push(format!("channels[{i}].spec{}", if p.is_empty() { String::new() } else { format!(".{p}") }), m);
            }
        }

        let mut users = BTreeSet::new();
        for (i, f) in self.flows.iter().enumerate() {
            if !users.insert(f.user) {
                push(format!("flows[{i}].user"), format!("user {} already carries another flow", f.user));
            }
            if self.channel_for(f.user).is_none() {
                push(format!("flows[{i}].user"), format!("missing channel for flow {i} (user {})", f.user));
            }
            let s = &f.sender;
            let base = format!("flows[{i}].sender");
            if !(s.fps > 0.0) {
                push(format!("{base}.fps"), "must be > 0".into());
            }
            for (k, step) in s.fps_schedule.iter().enumerate() {
                if !(step.1 > 0.0) {
                    push(format!("{base}.fps_schedule[{k}]"), "fps must be > 0".into());
                }
            }
            if let Err(e) = s.pacer.validate() {
                push(format!("{base}.pacer"), e.to_string());
            }
            if !(s.vbv_multiple >= 0.0) {
                push(format!("{base}.vbv_multiple"), "must be >= 0".into());
            }
            if !(0.0..1.0).contains(&s.noise_ratio) {
                push(format!("{base}.noise_ratio"), "must be in [0, 1)".into());
            }
            if s.mtu_payload == 0 {
                push(format!("{base}.mtu_payload"), "must be >= 1".into());
            }
            if !(s.start_rate > 0.0) {
                push(format!("{base}.start_rate"), "must be > 0".into());
            }
            if s.content_demand.iter().any(|d| !(d.1 > 0.0))
                || s.content_demand.windows(2).any(|w| w[1].0 <= w[0].0)
            {
                push(format!("{base}.content_demand"), "rates must be > 0 with increasing starts".into());
            }
            match &s.app_limit_file {
                Some(p) => {
                    if let Err(e) = AppLimitTrace::load(p) {
                        push(format!("{base}.app_limit_file"), e.to_string());
                    }
                }
                None => {
                    if let Err(e) = s.app_limit.validate() {
                        push(format!("{base}.app_limit"), e.to_string());
                    }
                }
            }
            if f.start_at >= self.horizon.max(1) && self.horizon > 0 {
                push(format!("flows[{i}].start_at"), "must be before the horizon".into());
            }
        }

        for (i, c) in self.cross_traffic.iter().enumerate() {
            if !users.insert(c.user) {
                push(format!("cross_traffic[{i}].user"), format!("user {} is already in use", c.user));
            }
            if self.channel_for(c.user).is_none() {
                push(format!("cross_traffic[{i}].user"), format!("missing channel for user {}", c.user));
            }
            if !spans_ok(&c.active_spans) {
                push(format!("cross_traffic[{i}].active_spans"), "spans must be non-empty, ordered, non-overlapping".into());
            }
            match &c.kind {
                CrossTrafficKind::OnOff { on_spans } if !spans_ok(on_spans) => {
                    push(format!("cross_traffic[{i}].kind.on_spans"), "spans must be non-empty, ordered, non-overlapping".into());
                }
                CrossTrafficKind::RtcLike { rate, fps } if !(*rate > 0.0 && *fps > 0.0) => {
                    push(format!("cross_traffic[{i}].kind"), "rate and fps must be > 0".into());
                }
                _ => {}
            }
        }

        let net = &self.internet;
        if net.egress_rate.is_some_and(|r| !(r > 0.0)) {
            push("internet.egress_rate".into(), "must be > 0 when set".into());
        }
        for (k, c) in net.egress_schedule.iter().enumerate() {
            if c.rate.is_some_and(|r| !(r > 0.0)) {
                push(format!("internet.egress_schedule[{k}].rate"), "must be > 0 when set".into());
            }
        }
        if net.egress_schedule.windows(2).any(|w| w[1].start <= w[0].start) {
            push("internet.egress_schedule".into(), "starts must be increasing".into());
        }
        if net.queue_cap == 0 {
            push("internet.queue_cap".into(), "must be >= 1".into());
        }

        for (p, m) in self.controller.occ.violations() {
            push(format!("controller.{p}"), m);
        }
        if self.controller.pbe_window == 0 {
            push("controller.pbe_window".into(), "must be >= 1".into());
        }
        for (p, m) in self.controller.gcc.violations() {
            push(format!("controller.gcc.{p}"), m);
        }
        if !(self.metrics.stall_threshold_ms > 0.0) {
            push("metrics.stall_threshold_ms".into(), "must be > 0".into());
        }
        out
    }

    /// Copy with every flow switched to `controller`.
    pub fn with_controller(&self, controller: ControllerKind) -> Self {
        let mut c = self.clone();
        for f in &mut c.flows {
            f.controller = controller;
        }
        c
    }

    /// Copy with a sweep axis set to `value`.
    pub fn with_axis(&self, axis: &str, value: f64) -> Result<Self, ScenarioError> {
        let bad = |m: &str| ScenarioError::AxisValue {
            axis: axis.to_string(),
            value,
            message: m.to_string(),
        };
        let integer = || {
            if value >= 0.0 && value.fract() == 0.0 {
                Ok(value as u64)
            } else {
                Err(bad("must be a non-negative integer"))
            }
        };
        let mut c = self.clone();
        match axis {
            "duty_cycle" => c.flows.iter_mut().for_each(|f| f.sender.pacer = PacerConfig::DutyCycle { fraction: value }),
            "app_limit_ratio" => {
                for f in &mut c.flows {
                    let segs = &mut f.sender.app_limit.segments;
                    if segs.iter().any(|s| s.1 < 1.0) {
                        segs.iter_mut().filter(|s| s.1 < 1.0).for_each(|s| s.1 = value);
                    } else {
                        *segs = vec![(0, value)];
                    }
                    f.sender.app_limit_file = None;
                }
            }
            "vbv_multiple" => c.flows.iter_mut().for_each(|f| f.sender.vbv_multiple = value),
            "fps" => c.flows.iter_mut().for_each(|f| f.sender.fps = value),
            "feedback_delay" => {
                let d = integer()?;
                c.flows.iter_mut().for_each(|f| f.feedback_delay = d);
            }
            "beta" => c.controller.occ.beta = value,
            "window_length" => c.controller.occ.window_length = integer()? as usize,
            "d_threshold" => c.controller.occ.d_threshold = integer()?,
            "efficiency" => c.cell.efficiency = value,
            "egress_rate" => c.internet.egress_rate = Some(value),
            _ => {
                return Err(ScenarioError::UnknownAxis {
                    axis: axis.to_string(),
                })
            }
        }
        Ok(c)
    }
}

pub const SWEEP_AXES: &[&str] = &[
    "duty_cycle",
    "app_limit_ratio",
    "vbv_multiple",
    "fps",
    "feedback_delay",
    "beta",
    "window_length",
    "d_threshold",
    "efficiency",
    "egress_rate",
];

fn spans_ok(spans: &[(u64, u64)]) -> bool {
    spans.iter().all(|s| s.0 < s.1) && spans.windows(2).all(|w| w[1].0 >= w[0].1)
}

fn resolve_channel_paths(spec: &mut ChannelSpec, fix: &impl Fn(&mut String)) {
    match spec {
        ChannelSpec::Trace { path, .. } => fix(path),
        ChannelSpec::DeepFade { base, .. } => resolve_channel_paths(base, fix),
        _ => {}
    }
}

macro_rules! presets {
    ($($name:literal),* $(,)?) => {
        /// Scenario presets shipped with the crate, by name.
        pub const PRESETS: &[(&str, &str)] = &[
            $(($name, include_str!(concat!("../presets/", $name, ".json")))),*
        ];
    };
}

presets!(
    "burst_sweep",
    "app_limit_sweep",
    "encoder_lag_sweep",
    "bottleneck_switch",
    "mobility_static",
    "mobility_slow",
    "mobility_fast",
    "fairness_internal",
    "fairness_external",
    "convergence_step",
    "bursty_channel",
);

pub fn preset(name: &str) -> Option<ScenarioConfig> {
    PRESETS
        .iter()
        .find(|p| p.0 == name)
        .map(|p| ScenarioConfig::from_json(p.1).expect("shipped presets parse"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> ScenarioConfig {
        ScenarioConfig::from_json(
            r#"{
                "horizon": 1000,
                "channels": [{"user": 0, "spec": {"type": "constant", "rate": 1000}}],
                "flows": [{"user": 0, "controller": "occ"}]
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn minimal_config_is_valid() {
        let c = minimal();
        assert!(c.violations().is_empty(), "{:?}", c.violations());
        assert_eq!(c.controller.occ.beta, 0.1);
        assert_eq!(c.flows[0].feedback_delay, 10);
    }

    #[test]
    fn beta_violation_path() {
        let mut c = minimal();
        c.controller.occ.beta = 1.5;
        let v = c.violations();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].path, "controller.beta");
    }

    #[test]
    fn missing_channel_names_flow() {
        let mut c = minimal();
        c.flows.push(FlowConfig {
            user: 7,
            controller: ControllerKind::Gcc,
            sender: SenderConfig::default(),
            feedback_delay: 10,
            start_at: 0,
        });
        let v = c.violations();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].path, "flows[1].user");
        assert!(v[0].message.contains("flow 1"));
    }

    #[test]
    fn parse_errors_carry_location() {
        let e = ScenarioConfig::from_json("{\n  \"horizon\": oops\n}").unwrap_err();
        assert!(matches!(e, ScenarioError::Parse { line: 2, .. }), "{e:?}");
    }

    #[test]
    fn round_trip() {
        for (name, _) in PRESETS {
            let c = preset(name).unwrap();
            let back = ScenarioConfig::from_json(&c.to_json()).unwrap();
            assert_eq!(c, back, "preset {name}");
        }
    }

    #[test]
    fn presets_validate() {
        for (name, _) in PRESETS {
            let c = preset(name).unwrap();
            assert!(c.violations().is_empty(), "{name}: {:?}", c.violations());
        }
    }

    #[test]
    fn axes() {
        let c = minimal();
        assert_eq!(c.with_axis("beta", 0.2).unwrap().controller.occ.beta, 0.2);
        assert_eq!(c.with_axis("window_length", 100.0).unwrap().controller.occ.window_length, 100);
        assert!(c.with_axis("window_length", 1.5).is_err());
        assert!(matches!(c.with_axis("nope", 1.0), Err(ScenarioError::UnknownAxis { .. })));
        let duty = c.with_axis("duty_cycle", 0.125).unwrap();
        assert_eq!(duty.flows[0].sender.pacer, PacerConfig::DutyCycle { fraction: 0.125 });
        let mut limited = c.clone();
        limited.flows[0].sender.app_limit.segments = vec![(0, 0.2), (5000, 1.0)];
        let swept = limited.with_axis("app_limit_ratio", 0.6).unwrap();
        assert_eq!(swept.flows[0].sender.app_limit.segments, vec![(0, 0.6), (5000, 1.0)]);
    }
}
