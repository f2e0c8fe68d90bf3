//! Per-user MCS-rate processes: synthetic generators and trace files.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("trace line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("trace line {line}: {message}")]
    Validation { line: u64, message: String },
    #[error("subframe {subframe} is beyond the trace horizon of {horizon} subframes")]
    TraceExhausted { subframe: u64, horizon: u64 },
    #[error("trace has no records for user {0}")]
    MissingUser(u32),
    #[error("cannot read trace {path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid channel: {0}")]
    Spec(String),
}

/// Number of entries in an MCS index table.
pub const MCS_TABLE_LEN: usize = 29;

/// Declarative description of one user's channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ChannelSpec {
    Constant {
        rate: f64,
    },
    /// `(start_subframe, rate)` pairs; each step takes effect at its own index.
    StepSequence {
        steps: Vec<(u64, f64)>,
    },
    /// Bounded random walk starting at `base`. `step_size` is the standard
    /// deviation per 100 ms as a fraction of `base`; the walk moves every
    /// subframe and reflects at the bounds. `jitter` adds i.i.d. uniform
    /// multiplicative noise per subframe.
    RandomWalk {
        base: f64,
        step_size: f64,
        min_rate: f64,
        max_rate: f64,
        #[serde(default)]
        jitter: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    /// Multiplies `base` by `fade_depth_ratio` during
    /// `[t, t + fade_duration)` for every `t` in `fade_times`.
    DeepFade {
        base: Box<ChannelSpec>,
        fade_depth_ratio: f64,
        fade_duration: u64,
        fade_times: Vec<u64>,
    },
    /// Column `user_id` of a trace file.
    Trace {
        path: String,
        user_id: u32,
    },
    /// Steps over an index table of `MCS_TABLE_LEN` rates.
    McsSteps {
        table: Vec<f64>,
        steps: Vec<(u64, usize)>,
    },
}

/// Mobility presets: random-walk step as a fraction of base per 100 ms.
pub const WALK_STEP_STATIC: f64 = 0.002;
pub const WALK_STEP_SLOW: f64 = 0.01;
pub const WALK_STEP_FAST: f64 = 0.04;

impl ChannelSpec {
    pub fn constant(rate: f64) -> Self {
        ChannelSpec::Constant { rate }
    }

    pub fn deep_fade(base_rate: f64, depth: f64, duration: u64, times: Vec<u64>) -> Self {
        ChannelSpec::DeepFade {
            base: Box::new(ChannelSpec::constant(base_rate)),
            fade_depth_ratio: depth,
            fade_duration: duration,
            fade_times: times,
        }
    }

    /// Invariant violations, each with a short field path relative to the spec.
    pub fn violations(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let mut bad = |path: &str, msg: &str| out.push((path.to_string(), msg.to_string()));
        match self {
            ChannelSpec::Constant { rate } => {
                if !(*rate > 0.0 && rate.is_finite()) {
                    bad("rate", "must be > 0");
                }
            }
            ChannelSpec::StepSequence { steps } => {
                if steps.is_empty() || steps[0].0 != 0 {
                    bad("steps", "must start at subframe 0");
                }
                if steps.windows(2).any(|w| w[1].0 <= w[0].0) {
                    bad("steps", "must be strictly increasing in subframe");
                }
                if steps.iter().any(|s| !(s.1 > 0.0)) {
                    bad("steps", "rates must be > 0");
                }
            }
            ChannelSpec::RandomWalk {
                base,
                step_size,
                min_rate,
                max_rate,
                jitter,
                ..
            } => {
                if !(*min_rate > 0.0 && min_rate <= max_rate) {
                    bad("min_rate", "must satisfy 0 < min_rate <= max_rate");
                }
                if !(base >= min_rate && base <= max_rate) {
                    bad("base", "must lie in [min_rate, max_rate]");
                }
                if !(*step_size >= 0.0) {
                    bad("step_size", "must be >= 0");
                }
                if !(0.0..1.0).contains(jitter) {
                    bad("jitter", "must be in [0, 1)");
                }
            }
            ChannelSpec::DeepFade {
                base,
                fade_depth_ratio,
                ..
            } => {
                if !(*fade_depth_ratio > 0.0 && *fade_depth_ratio <= 1.0) {
                    bad("fade_depth_ratio", "must be in (0, 1]");
                }
                for (p, m) in base.violations() {
                    out.push((format!("base.{p}"), m));
                }
            }
            ChannelSpec::Trace { path, .. } => {
                if !Path::new(path).exists() {
                    bad("path", "trace file does not exist");
                }
            }
            ChannelSpec::McsSteps { table, steps } => {
                if table.len() != MCS_TABLE_LEN {
                    bad("table", "must have 29 entries");
                }
                if table.iter().any(|r| !(*r > 0.0)) {
                    bad("table", "rates must be > 0");
                }
                if steps.is_empty() || steps[0].0 != 0 {
                    bad("steps", "must start at subframe 0");
                }
                if steps.iter().any(|s| s.1 >= table.len()) {
                    bad("steps", "index out of table range");
                }
            }
        }
        out
    }

    fn closed_form(&self, t: u64) -> Option<f64> {
        match self {
            ChannelSpec::Constant { rate } => Some(*rate),
            ChannelSpec::StepSequence { steps } => Some(step_value(steps, t)),
            ChannelSpec::McsSteps { table, steps } => {
                let idx = steps.iter().take_while(|s| s.0 <= t).last().map_or(0, |s| s.1);
                table.get(idx).copied()
            }
            ChannelSpec::DeepFade {
                base,
                fade_depth_ratio,
                fade_duration,
                fade_times,
            } => {
                let b = base.closed_form(t)?;
                let faded = fade_times
                    .iter()
                    .any(|&f| t >= f && t < f + fade_duration);
                Some(if faded { b * fade_depth_ratio } else { b })
            }
            ChannelSpec::RandomWalk { .. } | ChannelSpec::Trace { .. } => None,
        }
    }
}

fn step_value(steps: &[(u64, f64)], t: u64) -> f64 {
    steps
        .iter()
        .take_while(|s| s.0 <= t)
        .last()
        .or(steps.first())
        .map_or(0.0, |s| s.1)
}

/// A materialized channel: one rate per subframe up to the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTrace {
    spec: ChannelSpec,
    rates: Vec<f64>,
    file_backed: bool,
}

impl ChannelTrace {
    /// Builds `horizon` subframes of `spec`. Random generators draw from
    /// `rng` unless the spec carries its own seed.
    pub fn generate(
        spec: &ChannelSpec,
        horizon: u64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, ChannelError> {
        if let Some((path, msg)) = spec.violations().into_iter().next() {
            return Err(ChannelError::Spec(format!("{path}: {msg}")));
        }
        let (rates, file_backed) = match spec {
            ChannelSpec::Trace { path, user_id } => {
                let file = load_trace(path)?;
                let rates = file
                    .users
                    .get(user_id)
                    .cloned()
                    .ok_or(ChannelError::MissingUser(*user_id))?;
                (rates, true)
            }
            _ => (materialize(spec, horizon, rng), false),
        };
        Ok(Self {
            spec: spec.clone(),
            rates,
            file_backed,
        })
    }

    pub fn from_rates(rates: Vec<f64>) -> Self {
        Self {
            spec: ChannelSpec::Trace {
                path: String::new(),
                user_id: 0,
            },
            rates,
            file_backed: true,
        }
    }

    pub fn horizon(&self) -> u64 {
        self.rates.len() as u64
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    /// MCS rate at subframe `t`.
    pub fn sample(&self, t: u64) -> Result<f64, ChannelError> {
        if let Some(r) = self.rates.get(t as usize) {
            return Ok(*r);
        }
        if self.file_backed {
            return Err(ChannelError::TraceExhausted {
                subframe: t,
                horizon: self.horizon(),
            });
        }
        Ok(self
            .spec
            .closed_form(t)
            .or_else(|| self.rates.last().copied())
            .unwrap_or(0.0))
    }
}

fn materialize(spec: &ChannelSpec, horizon: u64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match spec {
        ChannelSpec::RandomWalk {
            base,
            step_size,
            min_rate,
            max_rate,
            jitter,
            seed,
        } => {
            let mut own;
            let rng: &mut ChaCha8Rng = match seed {
                Some(s) => {
                    own = crate::rng::stream_rng(*s, crate::rng::Stream::Channel(0));
                    &mut own
                }
                None => rng,
            };
            let sd = step_size * base / 10.0;
            let normal = Normal::new(0.0, sd.max(0.0)).expect("finite sd");
            let mut x = *base;
            let mut out = Vec::with_capacity(horizon as usize);
            for _ in 0..horizon {
                let noise = if *jitter > 0.0 {
                    1.0 + rng.random_range(-*jitter..*jitter)
                } else {
                    1.0
                };
                out.push((x * noise).clamp(*min_rate, *max_rate));
                if sd > 0.0 {
                    x += normal.sample(rng);
                    if x > *max_rate {
                        x = (2.0 * max_rate - x).max(*min_rate);
                    }
                    if x < *min_rate {
                        x = (2.0 * min_rate - x).min(*max_rate);
                    }
                }
            }
            out
        }
        ChannelSpec::DeepFade {
            base,
            fade_depth_ratio,
            fade_duration,
            fade_times,
        } => {
            let mut out = materialize(base, horizon, rng);
            for &f in fade_times {
                for t in f..(f + fade_duration).min(horizon) {
                    out[t as usize] *= fade_depth_ratio;
                }
            }
            out
        }
        other => (0..horizon)
            .map(|t| other.closed_form(t).expect("closed form"))
            .collect(),
    }
}

/// A parsed trace file: dense per-user rate series.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub users: BTreeMap<u32, Vec<f64>>,
}

impl TraceFile {
    pub fn horizon(&self) -> u64 {
        self.users.values().map(|v| v.len() as u64).max().unwrap_or(0)
    }
}

#[derive(Debug, Deserialize)]
struct TraceRow {
    subframe: u64,
    user_id: u32,
    mcs_rate: f64,
}

/// Reads a `subframe,user_id,mcs_rate` trace (header required).
///
/// Missing subframes are forward-filled from the previous record of the same
/// user; every user must have a record at subframe 0. All users are filled
/// to the file's last subframe.
pub fn load_trace(path: impl AsRef<Path>) -> Result<TraceFile, ChannelError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| ChannelError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_trace(&text)
}

pub fn parse_trace(text: &str) -> Result<TraceFile, ChannelError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| ChannelError::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    let expected = ["subframe", "user_id", "mcs_rate"];
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(ChannelError::Parse {
            line: 1,
            message: format!("header must be `{}`", expected.join(",")),
        });
    }

    let mut per_user: BTreeMap<u32, BTreeMap<u64, f64>> = BTreeMap::new();
    let mut last_subframe = 0u64;
    for record in reader.records() {
        let record = record.map_err(|e| ChannelError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let row: TraceRow = record.deserialize(None).map_err(|e| ChannelError::Parse {
            line,
            message: e.to_string(),
        })?;
        if !(row.mcs_rate > 0.0 && row.mcs_rate.is_finite()) {
            return Err(ChannelError::Validation {
                line,
                message: format!("mcs_rate must be > 0, got {}", row.mcs_rate),
            });
        }
        if per_user
            .entry(row.user_id)
            .or_default()
            .insert(row.subframe, row.mcs_rate)
            .is_some()
        {
            return Err(ChannelError::Validation {
                line,
                message: format!("duplicate record for subframe {} user {}", row.subframe, row.user_id),
            });
        }
        last_subframe = last_subframe.max(row.subframe);
    }

    let mut users = BTreeMap::new();
    for (user, entries) in per_user {
        let first = *entries.keys().next().expect("non-empty");
        if first != 0 {
            return Err(ChannelError::Validation {
                line: 0,
                message: format!("user {user} has no record at subframe 0 (first is {first})"),
            });
        }
        let mut dense = Vec::with_capacity(last_subframe as usize + 1);
        let mut current = 0.0;
        for t in 0..=last_subframe {
            if let Some(r) = entries.get(&t) {
                current = *r;
            }
            dense.push(current);
        }
        users.insert(user, dense);
    }
    Ok(TraceFile { users })
}
