//! JSON configuration files for `simulate` and `fit`.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use circafactor::basis::{standardize_times, DesignPair, KernelKind, PeriodSet};
use circafactor::model::HyperParams;
use circafactor::sampler::{AdaptSchedule, ChainConfig, Mode};
use circafactor::synth::SynthConfig;
use circafactor::Error;

fn parse_object(text: &str, what: &str) -> Result<Map<String, Value>> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::invalid(format!("{what}: {e}")))?;
    match value {
        Value::Object(map) => Ok(map),
        _ => Err(Error::invalid(format!("{what} must be a JSON object")).into()),
    }
}

fn require_seed(map: &Map<String, Value>, what: &str) -> Result<u64> {
    match map.get("seed") {
        None => Err(Error::invalid(format!(
            "{what} must set an explicit \"seed\"; runs are only reproducible with a fixed seed"
        ))
        .into()),
        Some(v) => v
            .as_u64()
            .ok_or_else(|| Error::invalid(format!("seed must be a non-negative integer, got {v}")).into()),
    }
}

/// Which generator `simulate` uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Generator {
    Dependent,
    Independent,
}

/// A simulation request: `model` and `p` choose the preset, every other key
/// overrides one field of it.
#[derive(Clone, Debug, Serialize)]
pub struct SimulateConfig {
    pub model: Generator,
    #[serde(flatten)]
    pub synth: SynthConfig,
}

impl SimulateConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = parse_object(text, "simulation config")?;
        let seed = require_seed(&map, "simulation config")?;
        let model = match map.remove("model") {
            None => Generator::Dependent,
            Some(v) => serde_json::from_value(v).map_err(|e| Error::invalid(format!("field model: {e}")))?,
        };
        let p = match map.get("p") {
            None => 500,
            Some(v) => v
                .as_u64()
                .ok_or_else(|| Error::invalid(format!("field p must be a positive integer, got {v}")))?
                as usize,
        };
        let preset = match model {
            Generator::Dependent => SynthConfig::dependent(p, seed),
            Generator::Independent => SynthConfig::independent(p, seed),
        };
        let Value::Object(mut resolved) = serde_json::to_value(&preset)? else {
            unreachable!("a struct serializes to an object")
        };
        for (key, value) in map {
            if !resolved.contains_key(&key) {
                return Err(Error::invalid(format!("unknown simulation config field {key:?}")).into());
            }
            resolved.insert(key.clone(), value);
            // the preset is valid, so a failure here is caused by this field
            serde_json::from_value::<SynthConfig>(Value::Object(resolved.clone()))
                .map_err(|e| Error::invalid(format!("simulation config field {key}: {e}")))?;
        }
        let synth: SynthConfig = serde_json::from_value(Value::Object(resolved))?;
        synth.validate()?;
        Ok(SimulateConfig { model, synth })
    }
}

/// Model, basis and chain settings for `fit`. Only `seed` is required.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub seed: u64,
    #[serde(default = "defaults::mode")]
    pub mode: Mode,
    #[serde(default = "defaults::n_iter")]
    pub n_iter: u64,
    #[serde(default = "defaults::burn_in")]
    pub burn_in: u64,
    #[serde(default = "defaults::thin")]
    pub thin: u64,
    #[serde(default = "defaults::periods")]
    pub periods: Vec<f64>,
    #[serde(default = "defaults::n_local")]
    pub n_local: usize,
    #[serde(default = "defaults::kernel")]
    pub kernel: KernelKind,
    #[serde(default = "defaults::bandwidth")]
    pub bandwidth: f64,
    #[serde(default = "defaults::target_period")]
    pub target_period: f64,
    #[serde(default = "defaults::a_sigma")]
    pub a_sigma: f64,
    #[serde(default = "defaults::b_sigma")]
    pub b_sigma: f64,
    #[serde(default = "defaults::rho")]
    pub rho: f64,
    #[serde(default = "defaults::a1")]
    pub a1: f64,
    #[serde(default = "defaults::a2")]
    pub a2: f64,
    #[serde(default = "defaults::a_theta")]
    pub a_theta: f64,
    #[serde(default = "defaults::b_theta")]
    pub b_theta: f64,
    #[serde(default = "defaults::a_gamma")]
    pub a_gamma: f64,
    #[serde(default = "defaults::b_gamma")]
    pub b_gamma: f64,
    #[serde(default = "defaults::k_init")]
    pub k_init: usize,
    #[serde(default)]
    pub adapt: AdaptSchedule,
    #[serde(default = "defaults::record_lambda_every")]
    pub record_lambda_every: u64,
    #[serde(default = "defaults::parallel")]
    pub parallel: bool,
    #[serde(default = "defaults::checkpoint_every")]
    pub checkpoint_every: u64,
}

mod defaults {
    use super::*;

    pub fn mode() -> Mode {
        Mode::Dependent
    }
    pub fn n_iter() -> u64 {
        6000
    }
    pub fn burn_in() -> u64 {
        2000
    }
    pub fn thin() -> u64 {
        2
    }
    pub fn periods() -> Vec<f64> {
        vec![4.0, 6.0, 8.0, 12.0, 24.0]
    }
    pub fn n_local() -> usize {
        10
    }
    pub fn kernel() -> KernelKind {
        KernelKind::Gaussian
    }
    pub fn bandwidth() -> f64 {
        25.0
    }
    pub fn target_period() -> f64 {
        24.0
    }
    pub fn a_sigma() -> f64 {
        HyperParams::default().a_sigma
    }
    pub fn b_sigma() -> f64 {
        HyperParams::default().b_sigma
    }
    pub fn rho() -> f64 {
        HyperParams::default().rho
    }
    pub fn a1() -> f64 {
        HyperParams::default().a1
    }
    pub fn a2() -> f64 {
        HyperParams::default().a2
    }
    pub fn a_theta() -> f64 {
        HyperParams::default().a_theta
    }
    pub fn b_theta() -> f64 {
        HyperParams::default().b_theta
    }
    pub fn a_gamma() -> f64 {
        HyperParams::default().a_gamma
    }
    pub fn b_gamma() -> f64 {
        HyperParams::default().b_gamma
    }
    pub fn k_init() -> usize {
        HyperParams::default().k_init
    }
    pub fn record_lambda_every() -> u64 {
        10
    }
    pub fn parallel() -> bool {
        true
    }
    pub fn checkpoint_every() -> u64 {
        500
    }
}

impl FitConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let map = parse_object(text, "fit config")?;
        require_seed(&map, "fit config")?;
        let config: FitConfig =
            serde_json::from_value(Value::Object(map)).map_err(|e| Error::invalid(format!("fit config: {e}")))?;
        config.hyper().validate()?;
        config.chain().validate()?;
        if !config.periods.contains(&config.target_period) {
            bail!(Error::invalid(format!(
                "target_period {} is not among the periods",
                config.target_period
            )));
        }
        Ok(config)
    }

    pub fn hyper(&self) -> HyperParams {
        HyperParams {
            a_sigma: self.a_sigma,
            b_sigma: self.b_sigma,
            rho: self.rho,
            a1: self.a1,
            a2: self.a2,
            a_theta: self.a_theta,
            b_theta: self.b_theta,
            a_gamma: self.a_gamma,
            b_gamma: self.b_gamma,
            k_init: self.k_init,
        }
    }

    pub fn chain(&self) -> ChainConfig {
        ChainConfig {
            n_iter: self.n_iter,
            burn_in: self.burn_in,
            thin: self.thin,
            seed: self.seed,
            adapt: self.adapt,
            record_lambda_every: self.record_lambda_every,
            parallel: self.parallel,
            checkpoint_every: self.checkpoint_every,
        }
    }

    pub fn designs(&self, times_hours: &[f64]) -> Result<DesignPair> {
        let grid = standardize_times(times_hours)?;
        let periods = PeriodSet::new(self.periods.clone())?;
        DesignPair::build(&grid, &periods, self.n_local, self.kernel, self.bandwidth)
            .context("building the basis matrices")
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simulate_requires_a_seed() {
        let err = SimulateConfig::parse(r#"{"p": 20}"#).unwrap_err();
        assert!(err.to_string().contains("seed"));
    }

    #[test]
    fn simulate_overrides_preset_fields() {
        let c = SimulateConfig::parse(r#"{"seed": 3, "model": "independent", "p": 40, "k_true": 2}"#).unwrap();
        assert_eq!(c.model, Generator::Independent);
        assert_eq!(c.synth.p, 40);
        assert_eq!(c.synth.k_true, 2);
        assert_eq!(c.synth.seed, 3);
        assert_eq!(c.synth.loading_count_range, (0, 0));
    }

    #[test]
    fn simulate_rejects_unknown_fields_by_name() {
        let err = SimulateConfig::parse(r#"{"seed": 3, "n_probes": 40}"#).unwrap_err();
        assert!(err.to_string().contains("n_probes"));
    }

    #[test]
    fn fit_defaults_and_echo() {
        let c = FitConfig::parse(r#"{"seed": 5, "n_iter": 30, "burn_in": 10}"#).unwrap();
        assert_eq!(c.hyper(), HyperParams::default());
        assert_eq!(c.chain().thin, 2);
        let back = FitConfig::parse(&c.to_json().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn fit_rejects_bad_values() {
        assert!(FitConfig::parse(r#"{"n_iter": 30}"#).is_err());
        assert!(FitConfig::parse(r#"{"seed": 1, "rho": -1}"#).is_err());
        assert!(FitConfig::parse(r#"{"seed": 1, "n_iter": 10, "burn_in": 10}"#).is_err());
        assert!(FitConfig::parse(r#"{"seed": 1, "rh0": 3}"#).is_err());
        assert!(FitConfig::parse(r#"{"seed": 1, "target_period": 10}"#).is_err());
    }
}
