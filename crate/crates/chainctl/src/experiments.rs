//! Figure pipelines. Each returns its tables in memory; writing them out
//! and the manifest is left to [`crate::write_run`].

use crate::config::{Experiment, ExperimentConfig, PulseDescriptor, SweepVariable};
use crate::CliError;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use spinxfer::bathspec::{predicted_infidelity, zeta_frequency_domain, BathPair};
use spinxfer::chain::{diagonalize_channel, split_system_bath, BathSpectrum, ChainSpec};
use spinxfer::control::{
    fit_phenomenological, make_power_sine, power_sine_duration, solve_markov_optimal, zeta_markovian, ModulationShape,
    TRANSFER_PHASE,
};
use spinxfer::dynamics::{propagate_exact, scan_transfer_window};
use spinxfer::noise::{collapse_scaling, run_ensemble, EnsembleOptions, NoiseCurve, NoiseKind, NoiseProcess};
use std::f64::consts::{PI, SQRT_2};

/// Grid used when tabulating optimal pulses.
const PULSE_GRID: usize = 2048;

/// A file produced by a run, held in memory until the run succeeds.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputFile {
    pub name: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub label: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub files: Vec<OutputFile>,
    pub summary: Value,
    pub seeds: Vec<SeedRecord>,
}

impl RunOutput {
    pub fn file(&self, name: &str) -> Option<&OutputFile> {
        self.files.iter().find(|f| f.name == name)
    }
}

/// Channel quantities shared by every pipeline.
pub struct Channel {
    pub spec: ChainSpec,
    pub spectrum: BathSpectrum,
    pub j_z: f64,
    pub discrete: BathPair,
    pub phi_plus_0: f64,
    pub phi_minus_0: f64,
}

impl Channel {
    pub fn new(spec: &ChainSpec) -> Result<Self, CliError> {
        let spectrum = diagonalize_channel(spec)?;
        let discrete = BathPair::from_split(&split_system_bath(&spectrum));
        Ok(Self {
            spec: spec.clone(),
            j_z: spectrum.zero_mode_coupling,
            phi_plus_0: discrete.plus.total_weight(),
            phi_minus_0: discrete.minus.total_weight(),
            spectrum,
            discrete,
        })
    }

    /// Transfer-ready pulse of duration `t`.
    pub fn pulse(&self, descriptor: &PulseDescriptor, t: f64) -> Result<ModulationShape, CliError> {
        Ok(match *descriptor {
            PulseDescriptor::PowerSine { p, alpha_m: None } => make_power_sine(p, t, self.j_z)?,
            PulseDescriptor::PowerSine { p, alpha_m: Some(a) } => ModulationShape::power_sine(p, a, t)?,
            PulseDescriptor::MarkovOptimal { lambda } => {
                solve_markov_optimal(self.phi_plus_0, self.phi_minus_0, lambda, t, self.j_z, PULSE_GRID)?
            }
        })
    }
}

fn table(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| CliError::Output(e.into_error()))
}

/// Shortest round-trip text, in exponent form outside `[1e-4, 1e6)`.
fn num(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || !a.is_finite() || (1e-4..1e6).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// `1 - F` for the perturbative amplitude `1 - zeta`; NaN when `zeta`
/// leaves `[0, 1]`.
fn infidelity_from_zeta(zeta: f64) -> f64 {
    predicted_infidelity(zeta).unwrap_or_else(|_| {
        log::warn!("zeta = {zeta} outside [0, 1]; recording NaN");
        f64::NAN
    })
}

/// Golden-section search for the maximum of `f` on `[a, b]`.
fn maximize<F: FnMut(f64) -> Result<f64, CliError>>(mut f: F, mut a: f64, mut b: f64, iterations: usize) -> Result<(f64, f64), CliError> {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    for _ in 0..iterations {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d)?;
        }
    }
    Ok(if fc > fd { (c, fc) } else { (d, fd) })
}

/// Best exact transfer for `alpha_M sin^p` at fixed amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RealizedTransfer {
    pub p: u32,
    pub alpha_m: f64,
    /// Duration from the weak-coupling transfer condition.
    pub nominal_duration: f64,
    /// Duration (and read-out time) that maximizes `F`.
    pub duration: f64,
    pub infidelity: f64,
}

impl RealizedTransfer {
    pub fn pulse(&self) -> Result<ModulationShape, CliError> {
        Ok(ModulationShape::power_sine(self.p, self.alpha_m, self.duration)?)
    }
}

/// Search range for the realized transfer, in units of the nominal duration.
const REALIZED_RANGE: (f64, f64) = (0.5, 2.0);

/// Finds the duration that maximizes `F(T)` for a pulse of amplitude
/// `alpha_m`, read out at `t = T`. For the constant control this is the
/// first-pass peak of `F(t)`, located with a window scan; otherwise the
/// duration itself is scanned.
pub fn realized_transfer(channel: &Channel, p: u32, alpha_m: f64, dt: f64) -> Result<RealizedTransfer, CliError> {
    let spec = &channel.spec;
    let nominal = power_sine_duration(p, alpha_m, channel.j_z)?;
    let (lo, hi) = (REALIZED_RANGE.0 * nominal, REALIZED_RANGE.1 * nominal);
    let fidelity_at = |t: f64| -> Result<f64, CliError> {
        let pulse = ModulationShape::power_sine(p, alpha_m, t)?;
        Ok(propagate_exact(spec, &pulse, None, t, dt)?.averaged_fidelity)
    };
    let samples = 241;
    let step = (hi - lo) / (samples - 1) as f64;
    let peak = if p == 0 {
        let pulse = ModulationShape::power_sine(0, alpha_m, nominal)?;
        let window = scan_transfer_window(spec, &pulse, None, 0.5 * (lo + hi), hi - lo, samples, dt)?;
        window.peak_time
    } else {
        let coarse: Vec<f64> = (0..49).map(|i| lo + (hi - lo) * i as f64 / 48.0).collect();
        let values: Vec<f64> = coarse.iter().map(|&t| fidelity_at(t)).collect::<Result<_, _>>()?;
        let best = (0..values.len()).max_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
        coarse[best]
    };
    let bracket = if p == 0 { step } else { (hi - lo) / 48.0 };
    let (t, f) = maximize(fidelity_at, (peak - bracket).max(lo), (peak + bracket).min(hi), 30)?;
    Ok(RealizedTransfer {
        p,
        alpha_m,
        nominal_duration: nominal,
        duration: t,
        infidelity: 1.0 - f,
    })
}

/// Refines the deepest interior local minimum of a sampled `alpha_M`
/// curve, the strong-coupling dip. The weak-coupling tail keeps falling
/// towards `alpha_M -> 0`, so the global minimum of a sweep says little.
pub fn refine_dip(channel: &Channel, curve: &[&RealizedTransfer], dt: f64) -> Result<Option<RealizedTransfer>, CliError> {
    let Some(i) = (1..curve.len().saturating_sub(1))
        .filter(|&i| curve[i].infidelity <= curve[i - 1].infidelity && curve[i].infidelity <= curve[i + 1].infidelity)
        .min_by(|&a, &b| curve[a].infidelity.total_cmp(&curve[b].infidelity))
    else {
        return Ok(None);
    };
    let p = curve[i].p;
    let mut best = *curve[i];
    maximize(
        |alpha| {
            let r = realized_transfer(channel, p, alpha, dt)?;
            if r.infidelity < best.infidelity {
                best = r;
            }
            Ok(-r.infidelity)
        },
        curve[i - 1].alpha_m,
        curve[i + 1].alpha_m,
        14,
    )?;
    Ok(Some(best))
}

fn sine_power(d: &PulseDescriptor) -> Result<(u32, Option<f64>), CliError> {
    match *d {
        PulseDescriptor::PowerSine { p, alpha_m } => Ok((p, alpha_m)),
        PulseDescriptor::MarkovOptimal { .. } => Err(CliError::Config("power-sine pulse expected".into())),
    }
}

pub fn run(config: &ExperimentConfig) -> Result<RunOutput, CliError> {
    config.validate()?;
    let channel = Channel::new(&config.chain)?;
    match config.experiment {
        Experiment::Fig2Semicircle => run_fig2(config, &channel),
        Experiment::Fig3aTimeSweep => run_fig3a(config, &channel),
        Experiment::Fig3bAlphaSweep => run_fig3b(config, &channel),
        Experiment::Fig4NoiseRobustness => run_fig4(config, &channel),
        Experiment::Fig5MarkovOptimal => run_fig5(config, &channel),
        Experiment::Custom => run_custom(config, &channel),
    }
}

fn labelled_header(first: &str, config: &ExperimentConfig, prefix: &str) -> Vec<String> {
    std::iter::once(first.to_string())
        .chain(config.pulses.iter().map(|p| format!("{prefix}{}", p.label())))
        .collect()
}

fn endpoint_summary(config: &ExperimentConfig, xs: &[f64], curves: &[Vec<f64>]) -> Value {
    let at = |i: usize| -> Value {
        let mut m = serde_json::Map::new();
        m.insert("T".into(), json!(xs[i]));
        for (d, row) in config.pulses.iter().zip(&curves[i]) {
            m.insert(d.label(), json!(row));
        }
        Value::Object(m)
    };
    json!({ "first": at(0), "last": at(xs.len() - 1) })
}

/// Perturbative `1 - F(T)` on the gapped semicircle bath.
pub fn run_fig2(config: &ExperimentConfig, channel: &Channel) -> Result<RunOutput, CliError> {
    let baths = BathPair::semicircle_for(&channel.spec, &channel.spectrum)?;
    let ts = config.sweep_values();
    let curves: Vec<Vec<f64>> = ts
        .par_iter()
        .map(|&t| {
            config
                .pulses
                .iter()
                .map(|d| {
                    let pulse = channel.pulse(d, t)?;
                    Ok(infidelity_from_zeta(zeta_frequency_domain(&pulse, &baths, channel.j_z)?.value))
                })
                .collect::<Result<Vec<f64>, CliError>>()
        })
        .collect::<Result<_, _>>()?;
    let rows: Vec<Vec<String>> = ts
        .iter()
        .zip(&curves)
        .map(|(&t, c)| std::iter::once(num(t)).chain(c.iter().map(|&v| num(v))).collect())
        .collect();
    Ok(RunOutput {
        files: vec![OutputFile {
            name: "fig2.csv".into(),
            bytes: table(&labelled_header("T", config, "infidelity_"), &rows)?,
        }],
        summary: json!({
            "bath": { "kind": "semicircle", "J": channel.spec.energy_scale(), "gap_edge": gap_edge(&baths) },
            "endpoints": endpoint_summary(config, &ts, &curves),
        }),
        seeds: Vec::new(),
    })
}

fn gap_edge(baths: &BathPair) -> Option<f64> {
    match &baths.plus.source {
        spinxfer::bathspec::BathSource::Semicircle { gap_edge, .. } => Some(*gap_edge),
        _ => None,
    }
}

/// Exact `1 - F(T)` for transfer-ready pulses.
pub fn run_fig3a(config: &ExperimentConfig, channel: &Channel) -> Result<RunOutput, CliError> {
    let ts = config.sweep_values();
    let curves: Vec<Vec<f64>> = ts
        .par_iter()
        .map(|&t| {
            config
                .pulses
                .iter()
                .map(|d| {
                    let pulse = channel.pulse(d, t)?;
                    Ok(1.0 - propagate_exact(&channel.spec, &pulse, None, t, config.dt)?.averaged_fidelity)
                })
                .collect::<Result<Vec<f64>, CliError>>()
        })
        .collect::<Result<_, _>>()?;
    let rows: Vec<Vec<String>> = ts
        .iter()
        .zip(&curves)
        .map(|(&t, c)| std::iter::once(num(t)).chain(c.iter().map(|&v| num(v))).collect())
        .collect();
    Ok(RunOutput {
        files: vec![OutputFile {
            name: "fig3a.csv".into(),
            bytes: table(&labelled_header("T", config, "infidelity_"), &rows)?,
        }],
        summary: json!({ "endpoints": endpoint_summary(config, &ts, &curves) }),
        seeds: Vec::new(),
    })
}

/// Exact `1 - F` at the realized transfer time against `alpha_M`.
pub fn run_fig3b(config: &ExperimentConfig, channel: &Channel) -> Result<RunOutput, CliError> {
    let alphas = config.sweep_values();
    let powers: Vec<u32> = config.pulses.iter().map(|d| sine_power(d).map(|x| x.0)).collect::<Result<_, _>>()?;
    let jobs: Vec<(u32, f64)> = powers.iter().flat_map(|&p| alphas.iter().map(move |&a| (p, a))).collect();
    let results: Vec<RealizedTransfer> = jobs
        .par_iter()
        .map(|&(p, a)| realized_transfer(channel, p, a, config.dt))
        .collect::<Result<_, _>>()?;
    let header: Vec<String> = ["pulse", "alpha_M", "infidelity", "T_realized", "T_nominal"].map(String::from).to_vec();
    let rows: Vec<Vec<String>> = results
        .iter()
        .map(|r| vec![format!("p{}", r.p), num(r.alpha_m), num(r.infidelity), num(r.duration), num(r.nominal_duration)])
        .collect();
    let mut dips = Vec::new();
    for &p in &powers {
        let curve: Vec<&RealizedTransfer> = results.iter().filter(|r| r.p == p).collect();
        if let Some(d) = refine_dip(channel, &curve, config.dt)? {
            dips.push(d);
        }
    }
    let global: Vec<RealizedTransfer> = powers
        .iter()
        .map(|&p| {
            *results
                .iter()
                .filter(|r| r.p == p)
                .min_by(|a, b| a.infidelity.total_cmp(&b.infidelity))
                .unwrap()
        })
        .collect();
    let opt_rows: Vec<Vec<String>> = dips
        .iter()
        .map(|r| vec![format!("p{}", r.p), num(r.alpha_m), num(r.infidelity), num(r.duration)])
        .collect();
    Ok(RunOutput {
        files: vec![
            OutputFile {
                name: "fig3b.csv".into(),
                bytes: table(&header, &rows)?,
            },
            OutputFile {
                name: "fig3b_optima.csv".into(),
                bytes: table(&["pulse", "alpha_M_opt", "infidelity", "T_realized"].map(String::from), &opt_rows)?,
            },
        ],
        summary: json!({ "dips": dips, "sweep_minima": global }),
        seeds: Vec::new(),
    })
}

/// Noise settings a fig4 run sweeps over, one curve each.
fn noise_settings(config: &ExperimentConfig) -> Vec<NoiseProcess> {
    let template = config.noise.clone().expect("validated");
    if config.tau_c_values.is_empty() {
        vec![template]
    } else {
        config
            .tau_c_values
            .iter()
            .map(|&tau_c| NoiseProcess {
                kind: NoiseKind::Piecewise { tau_c },
                ..template.clone()
            })
            .collect()
    }
}

/// Ensemble-mean `1 - F` against `eps_J`. Every ensemble uses the master
/// seed, so the curves share their random draws and differ only by the
/// scale `eps_J` and the correlation time.
pub fn run_fig4(config: &ExperimentConfig, channel: &Channel) -> Result<RunOutput, CliError> {
    let eps = config.sweep_values();
    let realized: Vec<RealizedTransfer> = config
        .pulses
        .par_iter()
        .map(|d| {
            let (p, a) = sine_power(d)?;
            realized_transfer(channel, p, a.expect("validated"), config.dt)
        })
        .collect::<Result<_, _>>()?;
    let settings = noise_settings(config);
    let mut rows = Vec::new();
    let mut seeds = Vec::new();
    let mut collapse = Vec::new();
    for r in &realized {
        let pulse = r.pulse()?;
        let mut curves = Vec::new();
        for noise in &settings {
            let (kind, tau) = match noise.kind {
                NoiseKind::Static => ("static", None),
                NoiseKind::Piecewise { tau_c } => ("piecewise", Some(tau_c)),
            };
            let mut points = Vec::new();
            for &e in &eps {
                let process = NoiseProcess {
                    strength: e,
                    seed: config.master_seed,
                    ..noise.clone()
                };
                let opts = EnsembleOptions {
                    dt: config.dt,
                    eval_time: Some(r.duration),
                    keep_realizations: false,
                };
                let res = run_ensemble(&channel.spec, &pulse, &process, config.n_realizations, opts)?;
                rows.push(vec![
                    format!("p{}", r.p),
                    kind.to_string(),
                    tau.map(num).unwrap_or_default(),
                    num(e),
                    num(res.mean_infidelity),
                    num(res.std_error),
                ]);
                seeds.push(SeedRecord {
                    label: format!("p{}/{kind}/{}/{}", r.p, tau.map(num).unwrap_or_default(), num(e)),
                    seed: process.seed,
                });
                points.push((e, res.mean_infidelity));
            }
            if let Some(tau_c) = tau {
                curves.push(NoiseCurve { tau_c, points });
            }
        }
        if config.tau_c_values.len() >= 3 {
            collapse.push(json!({ "pulse": format!("p{}", r.p), "report": collapse_scaling(&curves)? }));
        }
    }
    let header = ["pulse", "noise_kind", "tau_c", "eps_J", "mean_infidelity", "std_error"].map(String::from);
    let mut files = vec![OutputFile {
        name: "fig4.csv".into(),
        bytes: table(&header, &rows)?,
    }];
    let summary = json!({ "realized": realized, "collapse": collapse });
    if !collapse.is_empty() {
        files.push(OutputFile {
            name: "collapse.json".into(),
            bytes: serde_json::to_vec_pretty(&collapse).map_err(|e| CliError::Output(e.into()))?,
        });
    }
    Ok(RunOutput { files, summary, seeds })
}

/// `1 - F(T)` with `zeta_markovian`, i.e. for delta-correlated baths of
/// weight `Phi_+(0)` and `Phi_-(0)`.
pub fn run_fig5(config: &ExperimentConfig, channel: &Channel) -> Result<RunOutput, CliError> {
    let ts = config.sweep_values();
    let n = channel.spec.n_channel() as f64;
    let j = channel.spec.energy_scale();
    let analytic = |t: f64| {
        let x = PI * PI * n / (SQRT_2 * j * t);
        x / 6.0 * (1.0 - x / 16.0)
    };
    let curves: Vec<Vec<f64>> = ts
        .par_iter()
        .map(|&t| {
            config
                .pulses
                .iter()
                .map(|d| {
                    let pulse = channel.pulse(d, t)?;
                    Ok(infidelity_from_zeta(zeta_markovian(&pulse, channel.phi_plus_0, channel.phi_minus_0, channel.j_z)))
                })
                .collect::<Result<Vec<f64>, CliError>>()
        })
        .collect::<Result<_, _>>()?;
    let mut header = labelled_header("T", config, "infidelity_");
    header.push("analytic_p0".into());
    let rows: Vec<Vec<String>> = ts
        .iter()
        .zip(&curves)
        .map(|(&t, c)| {
            std::iter::once(num(t))
                .chain(c.iter().map(|&v| num(v)))
                .chain(std::iter::once(num(analytic(t))))
                .collect()
        })
        .collect();
    let mut files = vec![OutputFile {
        name: "fig5.csv".into(),
        bytes: table(&header, &rows)?,
    }];

    let mut summary = json!({
        "phi_plus_0": channel.phi_plus_0,
        "phi_minus_0": channel.phi_minus_0,
        "endpoints": endpoint_summary(config, &ts, &curves),
    });
    if let Some(t) = config.dump_duration {
        let pulses: Vec<ModulationShape> = config.pulses.iter().map(|d| channel.pulse(d, t)).collect::<Result<_, _>>()?;
        let intervals = 500;
        let dump: Vec<Vec<String>> = (0..=intervals)
            .map(|i| {
                let s = t * i as f64 / intervals as f64;
                std::iter::once(num(s)).chain(pulses.iter().map(|p| num(p.alpha(s)))).collect()
            })
            .collect();
        files.push(OutputFile {
            name: "fig5_pulse.csv".into(),
            bytes: table(&labelled_header("t", config, "alpha_"), &dump)?,
        });
        // amplitudes in units of the constant control of the same duration
        let alpha_ref = TRANSFER_PHASE / (channel.j_z * t);
        let fits: Vec<Value> = config
            .pulses
            .iter()
            .zip(&pulses)
            .filter(|(d, _)| matches!(d, PulseDescriptor::MarkovOptimal { .. }))
            .map(|(d, p)| json!({ "pulse": d.label(), "T": t, "alpha_ref": alpha_ref, "fit": fit_phenomenological(p, alpha_ref) }))
            .collect();
        summary["fits"] = json!(fits);
    }
    Ok(RunOutput {
        files,
        summary,
        seeds: Vec::new(),
    })
}

/// Exact (or ensemble-mean) and predicted `1 - F` along a `T` or
/// `alpha_M` sweep, with an optional noise template at its own strength.
pub fn run_custom(config: &ExperimentConfig, channel: &Channel) -> Result<RunOutput, CliError> {
    let sweep = config.sweep.as_ref().expect("validated");
    let xs = config.sweep_values();
    let mut rows = Vec::new();
    let mut seeds = Vec::new();
    for d in &config.pulses {
        let (p, _) = sine_power(d)?;
        for &x in &xs {
            let t = match sweep.variable {
                SweepVariable::AlphaM => power_sine_duration(p, x, channel.j_z)?,
                _ => x,
            };
            let pulse = channel.pulse(d, t)?;
            let zeta = zeta_frequency_domain(&pulse, &channel.discrete, channel.j_z)?.value;
            let (exact, err) = match &config.noise {
                None => (1.0 - propagate_exact(&channel.spec, &pulse, None, t, config.dt)?.averaged_fidelity, 0.0),
                Some(noise) => {
                    let process = NoiseProcess {
                        seed: config.master_seed,
                        ..noise.clone()
                    };
                    seeds.push(SeedRecord {
                        label: format!("{}/{}", d.label(), num(x)),
                        seed: process.seed,
                    });
                    let opts = EnsembleOptions {
                        dt: config.dt,
                        eval_time: Some(t),
                        keep_realizations: false,
                    };
                    let res = run_ensemble(&channel.spec, &pulse, &process, config.n_realizations, opts)?;
                    (res.mean_infidelity, res.std_error)
                }
            };
            rows.push(vec![
                d.label(),
                num(x),
                num(t),
                num(zeta),
                num(infidelity_from_zeta(zeta)),
                num(exact),
                num(err),
            ]);
        }
    }
    let header: Vec<String> = [
        "pulse",
        sweep.variable.name(),
        "T",
        "zeta",
        "predicted_infidelity",
        "exact_infidelity",
        "std_error",
    ]
    .map(String::from)
    .to_vec();
    Ok(RunOutput {
        files: vec![OutputFile {
            name: "custom.csv".into(),
            bytes: table(&header, &rows)?,
        }],
        summary: json!({ "j_z": channel.j_z }),
        seeds,
    })
}
