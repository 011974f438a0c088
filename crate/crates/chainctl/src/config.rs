//! JSON experiment configuration and figure presets.

use crate::CliError;
use serde::{Deserialize, Serialize};
use spinxfer::chain::{diagonalize_channel, ChainSpec};
use spinxfer::dynamics::{DEFAULT_STEP, MAX_STEP};
use spinxfer::noise::NoiseProcess;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    /// Perturbative infidelity against `T` on the gapped semicircle bath.
    Fig2Semicircle,
    /// Exact infidelity against `T` for transfer-ready pulses.
    Fig3aTimeSweep,
    /// Exact infidelity at the realized transfer time against `alpha_M`.
    Fig3bAlphaSweep,
    /// Noise ensembles against `eps_J`.
    Fig4NoiseRobustness,
    /// Delta-correlated-bath infidelity against `T`.
    Fig5MarkovOptimal,
    /// Exact and predicted infidelity along an arbitrary sweep.
    Custom,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Fig2Semicircle => "fig2_semicircle",
            Experiment::Fig3aTimeSweep => "fig3a_time_sweep",
            Experiment::Fig3bAlphaSweep => "fig3b_alpha_sweep",
            Experiment::Fig4NoiseRobustness => "fig4_noise_robustness",
            Experiment::Fig5MarkovOptimal => "fig5_markov_optimal",
            Experiment::Custom => "custom",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PulseDescriptor {
    /// `alpha_M sin^p(pi t / T)`. Without `alpha_M` the amplitude follows
    /// from the transfer condition at each swept `T`.
    PowerSine {
        p: u32,
        #[serde(default, rename = "alpha_M", skip_serializing_if = "Option::is_none")]
        alpha_m: Option<f64>,
    },
    /// Optimum for a delta-correlated bath with multiplier `lambda`.
    MarkovOptimal {
        #[serde(default)]
        lambda: f64,
    },
}

impl PulseDescriptor {
    pub fn sine(p: u32) -> Self {
        PulseDescriptor::PowerSine { p, alpha_m: None }
    }

    pub fn sine_at(p: u32, alpha_m: f64) -> Self {
        PulseDescriptor::PowerSine { p, alpha_m: Some(alpha_m) }
    }

    /// Column suffix, e.g. `p2` or `markov_optimal`.
    pub fn label(&self) -> String {
        match self {
            PulseDescriptor::PowerSine { p, .. } => format!("p{p}"),
            PulseDescriptor::MarkovOptimal { .. } => "markov_optimal".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepVariable {
    T,
    #[serde(rename = "alpha_M")]
    AlphaM,
    #[serde(rename = "eps_J")]
    EpsJ,
}

impl SweepVariable {
    pub fn name(self) -> &'static str {
        match self {
            SweepVariable::T => "T",
            SweepVariable::AlphaM => "alpha_M",
            SweepVariable::EpsJ => "eps_J",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    #[default]
    Linear,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub variable: SweepVariable,
    pub start: f64,
    pub stop: f64,
    pub points: usize,
    #[serde(default)]
    pub scale: Scale,
}

impl SweepAxis {
    pub fn new(variable: SweepVariable, start: f64, stop: f64, points: usize, scale: Scale) -> Self {
        Self {
            variable,
            start,
            stop,
            points,
            scale,
        }
    }

    pub fn values(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.start];
        }
        let n = (self.points - 1) as f64;
        (0..self.points)
            .map(|i| {
                if i + 1 == self.points {
                    return self.stop;
                }
                let s = i as f64 / n;
                match self.scale {
                    Scale::Linear => self.start + s * (self.stop - self.start),
                    Scale::Log => self.start * (self.stop / self.start).powf(s),
                }
            })
            .collect()
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.points == 0 {
            return Err(CliError::Config("sweep is empty (points = 0)".into()));
        }
        if !(self.start.is_finite() && self.stop.is_finite() && self.start <= self.stop) {
            return Err(CliError::Config(format!(
                "sweep range [{}, {}] must be finite and ordered",
                self.start, self.stop
            )));
        }
        let positive = match self.variable {
            SweepVariable::EpsJ => self.start >= 0.0,
            _ => self.start > 0.0,
        };
        if !positive || (self.scale == Scale::Log && self.start <= 0.0) {
            return Err(CliError::Config(format!(
                "sweep of {} must start above zero, got {}",
                self.variable.name(),
                self.start
            )));
        }
        if self.variable == SweepVariable::EpsJ && self.stop >= 1.0 {
            return Err(CliError::Config(format!("eps_J must stay below 1, got {}", self.stop)));
        }
        Ok(())
    }
}

fn default_chain() -> ChainSpec {
    ChainSpec::uniform(29, 1.0).expect("N = 29 is a valid channel")
}

fn default_realizations() -> usize {
    200
}

fn default_dt() -> f64 {
    DEFAULT_STEP
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default = "default_chain")]
    pub chain: ChainSpec,
    pub pulses: Vec<PulseDescriptor>,
    pub sweep: Option<SweepAxis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseProcess>,
    #[serde(default = "default_realizations")]
    pub n_realizations: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub master_seed: u64,
    /// Correlation times for piecewise noise; each gets its own curve and,
    /// with three or more, a collapse report.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tau_c_values: Vec<f64>,
    /// Duration at which pulse shapes are dumped (fig5).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dump_duration: Option<f64>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn sweep_values(&self) -> Vec<f64> {
        self.sweep.as_ref().map(SweepAxis::values).unwrap_or_default()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let sweep = self
            .sweep
            .as_ref()
            .ok_or_else(|| CliError::Config(format!("{} needs a sweep", self.experiment.name())))?;
        sweep.validate()?;
        let wanted: &[SweepVariable] = match self.experiment {
            Experiment::Fig2Semicircle | Experiment::Fig3aTimeSweep | Experiment::Fig5MarkovOptimal => &[SweepVariable::T],
            Experiment::Fig3bAlphaSweep => &[SweepVariable::AlphaM],
            Experiment::Fig4NoiseRobustness => &[SweepVariable::EpsJ],
            Experiment::Custom => &[SweepVariable::T, SweepVariable::AlphaM],
        };
        if !wanted.contains(&sweep.variable) {
            return Err(CliError::Config(format!(
                "{} cannot sweep {}",
                self.experiment.name(),
                sweep.variable.name()
            )));
        }
        if self.pulses.is_empty() {
            return Err(CliError::Config("no pulses configured".into()));
        }
        let mut labels: Vec<String> = self.pulses.iter().map(PulseDescriptor::label).collect();
        labels.sort();
        labels.dedup();
        if labels.len() != self.pulses.len() {
            return Err(CliError::Config("pulse labels must be unique".into()));
        }
        for pulse in &self.pulses {
            self.validate_pulse(pulse, sweep.variable)?;
        }

        diagonalize_channel(&self.chain).map_err(|e| CliError::Config(format!("chain: {e}")))?;
        let limit = MAX_STEP / self.chain.energy_scale();
        if !(self.dt > 0.0 && self.dt <= limit) {
            return Err(CliError::Config(format!("dt must lie in (0, {limit}], got {}", self.dt)));
        }
        if let Some(noise) = &self.noise {
            noise.validate().map_err(|e| CliError::Config(format!("noise: {e}")))?;
            if sweep.variable == SweepVariable::EpsJ && noise.strength != 0.0 {
                return Err(CliError::Config("noise strength is swept; leave it at 0 in the template".into()));
            }
        }
        if self.tau_c_values.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            return Err(CliError::Config("tau_c values must be positive".into()));
        }
        if let Some(t) = self.dump_duration {
            if !(t > 0.0 && t.is_finite()) {
                return Err(CliError::Config(format!("dump_duration must be positive, got {t}")));
            }
        }
        match self.experiment {
            Experiment::Fig4NoiseRobustness => {
                if self.noise.is_none() {
                    return Err(CliError::Config("fig4 needs a noise template".into()));
                }
                if self.n_realizations < 2 {
                    return Err(CliError::Config("fig4 needs at least two realizations".into()));
                }
            }
            Experiment::Custom if self.noise.is_some() && self.n_realizations < 2 => {
                return Err(CliError::Config("noisy runs need at least two realizations".into()));
            }
            _ => {}
        }
        Ok(())
    }

    fn validate_pulse(&self, pulse: &PulseDescriptor, variable: SweepVariable) -> Result<(), CliError> {
        let name = self.experiment.name();
        match *pulse {
            PulseDescriptor::PowerSine { p, alpha_m } => {
                if p > 2 {
                    return Err(CliError::Config(format!("power p = {p} unsupported, use 0, 1 or 2")));
                }
                if let Some(a) = alpha_m {
                    if !(a > 0.0 && a.is_finite()) {
                        return Err(CliError::Config(format!("alpha_M must be positive, got {a}")));
                    }
                }
                let fixed_needed = self.experiment == Experiment::Fig4NoiseRobustness;
                let fixed_forbidden = variable != SweepVariable::EpsJ;
                if fixed_needed && alpha_m.is_none() {
                    return Err(CliError::Config(format!("{name} needs alpha_M on every pulse")));
                }
                if fixed_forbidden && alpha_m.is_some() {
                    return Err(CliError::Config(format!(
                        "{name} derives alpha_M from the sweep; drop it from pulse {}",
                        pulse.label()
                    )));
                }
            }
            PulseDescriptor::MarkovOptimal { lambda } => {
                if !lambda.is_finite() {
                    return Err(CliError::Config("lambda must be finite".into()));
                }
                if !matches!(self.experiment, Experiment::Fig2Semicircle | Experiment::Fig5MarkovOptimal) {
                    return Err(CliError::Config(format!("{name} supports power-sine pulses only")));
                }
            }
        }
        Ok(())
    }
}

/// Names accepted by `chainctl preset`.
pub const PRESETS: &[&str] = &["fig2", "fig3a", "fig3b", "fig4a", "fig4b", "fig5"];

/// Built-in configuration for a figure; `n` overrides the channel length.
pub fn preset(name: &str, n: Option<usize>) -> Result<ExperimentConfig, CliError> {
    let chain = match n {
        Some(n) => ChainSpec::uniform(n, 1.0).map_err(|e| CliError::Config(format!("chain: {e}")))?,
        None => default_chain(),
    };
    let base = |experiment, pulses, sweep| ExperimentConfig {
        experiment,
        chain: chain.clone(),
        pulses,
        sweep: Some(sweep),
        noise: None,
        n_realizations: default_realizations(),
        dt: DEFAULT_STEP,
        output_dir: PathBuf::from("out").join(name),
        master_seed: 0,
        tau_c_values: Vec::new(),
        dump_duration: None,
    };
    let sines = || vec![PulseDescriptor::sine(0), PulseDescriptor::sine(1), PulseDescriptor::sine(2)];
    let cfg = match name {
        "fig2" | "fig2_semicircle" => base(
            Experiment::Fig2Semicircle,
            sines(),
            SweepAxis::new(SweepVariable::T, 60.0, 1000.0, 30, Scale::Log),
        ),
        "fig3a" | "fig3a_time_sweep" => base(
            Experiment::Fig3aTimeSweep,
            sines(),
            SweepAxis::new(SweepVariable::T, 10.0, 300.0, 24, Scale::Log),
        ),
        "fig3b" | "fig3b_alpha_sweep" => base(
            Experiment::Fig3bAlphaSweep,
            sines(),
            SweepAxis::new(SweepVariable::AlphaM, 0.05, 1.2, 24, Scale::Linear),
        ),
        "fig4a" => ExperimentConfig {
            noise: Some(NoiseProcess::static_noise(0.0, 0)),
            n_realizations: 1000,
            ..base(
                Experiment::Fig4NoiseRobustness,
                vec![PulseDescriptor::sine_at(0, 0.6), PulseDescriptor::sine_at(2, 0.7)],
                SweepAxis::new(SweepVariable::EpsJ, 0.01, 0.4, 9, Scale::Log),
            )
        },
        "fig4b" => ExperimentConfig {
            noise: Some(NoiseProcess::piecewise(0.0, 1.0, 0)),
            tau_c_values: vec![0.5, 1.0, 2.0],
            ..base(
                Experiment::Fig4NoiseRobustness,
                vec![PulseDescriptor::sine_at(0, 0.1)],
                SweepAxis::new(SweepVariable::EpsJ, 0.025, 0.4, 5, Scale::Log),
            )
        },
        "fig5" | "fig5_markov_optimal" => ExperimentConfig {
            dump_duration: Some(860.0),
            ..base(
                Experiment::Fig5MarkovOptimal,
                vec![PulseDescriptor::MarkovOptimal { lambda: 0.0 }, PulseDescriptor::sine(0)],
                SweepAxis::new(SweepVariable::T, 100.0, 1000.0, 20, Scale::Log),
            )
        },
        other => {
            return Err(CliError::Config(format!(
                "unknown preset {other:?}; choose one of {}",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for name in PRESETS {
            preset(name, None).unwrap().validate().unwrap();
        }
        assert!(preset("fig9", None).is_err());
        assert!(preset("fig2", Some(10)).and_then(|c| c.validate()).is_err());
    }

    #[test]
    fn log_sweep_hits_endpoints() {
        let v = SweepAxis::new(SweepVariable::T, 10.0, 1000.0, 3, Scale::Log).values();
        assert_eq!(v.len(), 3);
        assert!((v[1] - 100.0).abs() < 1e-9 && (v[2] - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = preset("fig4b", Some(9)).unwrap();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = preset("fig2", None).unwrap();
        cfg.sweep.as_mut().unwrap().points = 0;
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));

        let mut cfg = preset("fig4a", None).unwrap();
        cfg.pulses = vec![PulseDescriptor::sine(0)];
        assert!(cfg.validate().is_err());

        let mut cfg = preset("fig3b", None).unwrap();
        cfg.dt = 0.1;
        assert!(cfg.validate().is_err());

        assert!(ExperimentConfig::from_json(r#"{"experiment": "fig2_semicircle", "pulses": [], "bogus": 1}"#).is_err());
    }
}
