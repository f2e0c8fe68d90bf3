//! Parameter sweeps and controller comparisons.
//!
//! Sweep entry `i` runs with seed `derive_seed(base.seed, i)`, so results do
//! not depend on execution order. Entries run concurrently; results are
//! returned in value order.

use rayon::prelude::*;
use thiserror::Error;

use crate::engine::{run, EngineError, RunOutput};
use crate::rng::derive_seed;
use crate::scenario::{ControllerKind, ScenarioConfig, ScenarioError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("compare needs at least one controller")]
    NoControllers,
}

#[derive(Debug, Clone)]
pub struct SweepEntry {
    pub value: f64,
    pub config: ScenarioConfig,
    pub output: RunOutput,
}

/// Configurations of a sweep, validated, in value order.
pub fn sweep_configs(base: &ScenarioConfig, axis: &str, values: &[f64]) -> Result<Vec<ScenarioConfig>, ScenarioError> {
    if values.is_empty() {
        return Err(ScenarioError::EmptySweep);
    }
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let mut c = base.with_axis(axis, v)?;
            c.seed = derive_seed(base.seed, i as u64);
            c.validate()?;
            Ok(c)
        })
        .collect()
}

pub fn sweep(base: &ScenarioConfig, axis: &str, values: &[f64]) -> Result<Vec<SweepEntry>, ExperimentError> {
    let configs = sweep_configs(base, axis, values)?;
    let outputs: Result<Vec<_>, _> = configs.par_iter().map(run).collect();
    Ok(configs
        .into_iter()
        .zip(values)
        .zip(outputs?)
        .map(|((config, &value), output)| SweepEntry { value, config, output })
        .collect())
}

/// Runs `config` once per controller with identical seeds.
pub fn compare(
    config: &ScenarioConfig,
    controllers: &[ControllerKind],
) -> Result<Vec<(ControllerKind, RunOutput)>, ExperimentError> {
    if controllers.is_empty() {
        return Err(ExperimentError::NoControllers);
    }
    let configs: Vec<_> = controllers.iter().map(|&k| config.with_controller(k)).collect();
    for c in &configs {
        c.validate()?;
    }
    let outputs: Result<Vec<_>, _> = configs.par_iter().map(run).collect();
    Ok(controllers.iter().copied().zip(outputs?).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::preset;

    fn short(name: &str) -> ScenarioConfig {
        let mut c = preset(name).unwrap();
        c.horizon = 2000;
        c
    }

    #[test]
    fn sweep_yields_one_report_per_value_in_order() {
        let base = short("burst_sweep");
        let values = [1.0 / 40.0, 1.0 / 8.0, 0.5, 1.0];
        let runs = sweep(&base, "duty_cycle", &values).unwrap();
        assert_eq!(runs.len(), 4);
        for (i, r) in runs.iter().enumerate() {
            assert_eq!(r.value, values[i]);
            assert_eq!(r.config.seed, derive_seed(base.seed, i as u64));
            assert_eq!(r.output.report.seed, r.config.seed);
        }
    }

    #[test]
    fn sweep_rejects_empty_and_unknown() {
        let base = short("burst_sweep");
        assert!(matches!(
            sweep(&base, "duty_cycle", &[]),
            Err(ExperimentError::Scenario(ScenarioError::EmptySweep))
        ));
        let err = sweep(&base, "colour", &[1.0]).unwrap_err();
        assert!(err.to_string().contains("duty_cycle"));
    }

    #[test]
    fn vbv_sweep_has_monotone_encoder_lag() {
        let base = preset("encoder_lag_sweep").unwrap();
        let runs = sweep(&base, "vbv_multiple", &[2.0, 4.0, 12.0, 25.0]).unwrap();
        let lags: Vec<f64> = runs.iter().map(|r| r.output.report.flows[0].encoder_lag_ms).collect();
        assert!(lags.windows(2).all(|w| w[0] <= w[1]), "{lags:?}");
    }

    #[test]
    fn compare_same_controller_twice_is_identical() {
        let c = short("bursty_channel");
        let runs = compare(&c, &[ControllerKind::Occ, ControllerKind::Occ]).unwrap();
        assert_eq!(runs[0].1.report, runs[1].1.report);
        let three = compare(&c, &[ControllerKind::Occ, ControllerKind::Pbe, ControllerKind::Gcc]).unwrap();
        let names: Vec<_> = three.iter().map(|r| r.1.report.flows[0].controller.clone()).collect();
        assert_eq!(names, ["occ", "pbe", "gcc"]);
    }
}
