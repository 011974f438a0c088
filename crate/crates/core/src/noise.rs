//! Off-diagonal coupling noise `J_i -> J_i (1 + Delta_i(t))` and seeded
//! Monte-Carlo ensembles over it.
//!
//! Draws are counter based. The value for noisy link `l` on interval `n`
//! is the `n`-th `f64` of a ChaCha8 generator seeded with the process seed
//! and set to stream `l`, mapped to `eps (2u - 1)`. Realization `r` of an
//! ensemble uses the first `u64` of ChaCha8 seeded with the master seed on
//! stream `r` as its own seed. Neither rule depends on evaluation order, so
//! ensembles can run in parallel and still reproduce bit for bit.

use crate::bathspec::BathError;
use crate::chain::{ChainSpec, LinkTargets};
use crate::control::ModulationShape;
use crate::dynamics::{propagate_exact, DynamicsError};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NoiseError {
    #[error("noise strength must be finite and in [0, 1), got {0}")]
    InvalidStrength(f64),
    #[error("correlation time must be positive, got {0}")]
    InvalidCorrelationTime(f64),
    #[error("symmetric noise needs a mirror-symmetric link set; {0:?} is not")]
    AsymmetricTargets(LinkTargets),
    #[error("expected {expected} noisy links for {targets:?}, got {got}")]
    LinkCount {
        targets: LinkTargets,
        expected: usize,
        got: usize,
    },
    #[error("ensemble needs at least two realizations, got {0}")]
    TooFewRealizations(usize),
    #[error("realization {index} (seed {seed}) failed: {source}")]
    Realization {
        index: usize,
        seed: u64,
        #[source]
        source: DynamicsError,
    },
    #[error(transparent)]
    Fidelity(#[from] BathError),
    #[error("collapse analysis needs at least {need} {what}, got {got}")]
    TooFewCurves { what: &'static str, need: usize, got: usize },
    #[error("rescaled curves share no common support")]
    InsufficientOverlap,
    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
    #[error("io failure: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    /// One draw per link, frozen in time.
    Static,
    /// Fresh draws on every interval `[n tau_c, (n + 1) tau_c)`.
    Piecewise { tau_c: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseProcess {
    #[serde(flatten)]
    pub kind: NoiseKind,
    /// `eps_J`: draws are uniform on `[-eps_J, eps_J]`.
    pub strength: f64,
    #[serde(default)]
    pub targets: LinkTargets,
    /// Mirror the draws, `Delta_i = Delta_{N - i}`.
    #[serde(default)]
    pub symmetric: bool,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseProcess {
    pub fn static_noise(strength: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::Static,
            strength,
            targets: LinkTargets::default(),
            symmetric: false,
            seed,
        }
    }

    pub fn piecewise(strength: f64, tau_c: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::Piecewise { tau_c },
            ..Self::static_noise(strength, seed)
        }
    }

    pub fn validate(&self) -> Result<(), NoiseError> {
        if !(self.strength >= 0.0 && self.strength < 1.0) {
            return Err(NoiseError::InvalidStrength(self.strength));
        }
        if let NoiseKind::Piecewise { tau_c } = self.kind {
            if !(tau_c > 0.0) {
                return Err(NoiseError::InvalidCorrelationTime(tau_c));
            }
        }
        if self.symmetric && self.targets == LinkTargets::ExceptSource {
            return Err(NoiseError::AsymmetricTargets(self.targets));
        }
        Ok(())
    }

    pub fn correlation_time(&self) -> Option<f64> {
        match self.kind {
            NoiseKind::Static => None,
            NoiseKind::Piecewise { tau_c } => Some(tau_c),
        }
    }
}

/// `Delta` for link `link` on interval `interval` under the counter rule.
fn draw(seed: u64, link: usize, interval: u64, strength: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(link as u64);
    // one f64 consumes one u64, i.e. two 32-bit words
    rng.set_word_pos(2 * interval as u128);
    let u: f64 = rng.random();
    strength * (2.0 * u - 1.0)
}

/// Seed of realization `index` under master seed `master`.
pub fn realization_seed(master: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index as u64);
    rng.next_u64()
}

/// One sampled noise history on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRealization {
    pub seed: u64,
    pub targets: LinkTargets,
    pub tau_c: Option<f64>,
    pub horizon: f64,
    /// `values[interval][position]`.
    values: Vec<Vec<f64>>,
}

impl NoiseRealization {
    pub fn link_count(&self) -> usize {
        self.values[0].len()
    }

    pub fn interval_count(&self) -> usize {
        self.values.len()
    }

    /// Deltas in force at time `t` (clamped to the sampled horizon).
    pub fn deltas_at(&self, t: f64) -> &[f64] {
        match self.tau_c {
            None => &self.values[0],
            Some(tau) => {
                let n = ((t / tau).floor().max(0.0) as usize).min(self.values.len() - 1);
                &self.values[n]
            }
        }
    }

    /// Interval boundaries strictly inside `(t0, t1)`.
    pub fn switch_times(&self, t0: f64, t1: f64) -> Vec<f64> {
        match self.tau_c {
            None => Vec::new(),
            Some(tau) => {
                let first = (t0 / tau).floor() as u64 + 1;
                (first..)
                    .map(|n| n as f64 * tau)
                    .take_while(|&s| s < t1)
                    .filter(|&s| s > t0)
                    .collect()
            }
        }
    }

    /// History of one link, one value per interval.
    pub fn link_series(&self, position: usize) -> Vec<f64> {
        self.values.iter().map(|v| v[position]).collect()
    }

    pub fn all_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().flatten().copied()
    }
}

/// Samples `Delta_i(t)` for `link_count` links over `[0, horizon]`.
pub fn sample_realization(noise: &NoiseProcess, link_count: usize, horizon: f64) -> Result<NoiseRealization, NoiseError> {
    noise.validate()?;
    let intervals = match noise.kind {
        NoiseKind::Static => 1,
        NoiseKind::Piecewise { tau_c } => (horizon / tau_c).floor() as usize + 1,
    };
    let mirror = |pos: usize| -> usize {
        if !noise.symmetric {
            return pos;
        }
        // positions are mirror images when they sum to link_count - 1
        pos.min(link_count - 1 - pos)
    };
    let values = (0..intervals)
        .map(|n| {
            (0..link_count)
                .map(|pos| draw(noise.seed, mirror(pos), n as u64, noise.strength))
                .collect()
        })
        .collect();
    Ok(NoiseRealization {
        seed: noise.seed,
        targets: noise.targets,
        tau_c: noise.correlation_time(),
        horizon,
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizationRecord {
    pub index: usize,
    pub seed: u64,
    pub infidelity: f64,
}

/// Everything needed to rerun an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleEcho {
    pub spec: ChainSpec,
    pub pulse: ModulationShape,
    pub noise: NoiseProcess,
    pub dt: f64,
    pub eval_time: f64,
    pub master_seed: u64,
    pub n_realizations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    /// Mean of `1 - F`.
    pub mean_infidelity: f64,
    /// Sample standard deviation over `sqrt(N_av)`.
    pub std_error: f64,
    pub n_realizations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub realizations: Option<Vec<RealizationRecord>>,
    pub config: EnsembleEcho,
}

impl EnsembleResult {
    /// Writes `realization_index,seed,infidelity`.
    pub fn write_realizations_csv<W: Write>(&self, out: W) -> Result<(), NoiseError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["realization_index", "seed", "infidelity"])?;
        for r in self.realizations.iter().flatten() {
            w.serialize((r.index, r.seed, r.infidelity))?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleOptions {
    pub dt: f64,
    /// Time at which `F` is read; defaults to the pulse duration.
    pub eval_time: Option<f64>,
    pub keep_realizations: bool,
}

/// `N_av` independent noisy propagations; the master seed is `noise.seed`.
pub fn run_ensemble(
    spec: &ChainSpec,
    pulse: &ModulationShape,
    noise: &NoiseProcess,
    n_av: usize,
    options: EnsembleOptions,
) -> Result<EnsembleResult, NoiseError> {
    noise.validate()?;
    if n_av < 2 {
        return Err(NoiseError::TooFewRealizations(n_av));
    }
    let links = noise.targets.link_count(spec.n_channel());
    let eval_time = options.eval_time.unwrap_or(pulse.duration());
    let records: Vec<Result<RealizationRecord, NoiseError>> = (0..n_av)
        .into_par_iter()
        .map(|index| {
            let seed = realization_seed(noise.seed, index);
            let process = NoiseProcess { seed, ..noise.clone() };
            // a silent process is skipped so eps_J = 0 reproduces the
            // noiseless run bit for bit
            let realization = if noise.strength == 0.0 {
                None
            } else {
                Some(sample_realization(&process, links, eval_time)?)
            };
            let outcome = propagate_exact(spec, pulse, realization.as_ref(), eval_time, options.dt)
                .map_err(|source| NoiseError::Realization { index, seed, source })?;
            Ok(RealizationRecord {
                index,
                seed,
                infidelity: 1.0 - outcome.averaged_fidelity,
            })
        })
        .collect();
    let records: Vec<RealizationRecord> = records.into_iter().collect::<Result<_, _>>()?;

    let n = n_av as f64;
    let mean = records.iter().map(|r| r.infidelity).sum::<f64>() / n;
    let var = records.iter().map(|r| (r.infidelity - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(EnsembleResult {
        mean_infidelity: mean,
        std_error: (var / n).sqrt(),
        n_realizations: n_av,
        realizations: options.keep_realizations.then_some(records),
        config: EnsembleEcho {
            spec: spec.clone(),
            pulse: pulse.clone(),
            noise: noise.clone(),
            dt: options.dt,
            eval_time,
            master_seed: noise.seed,
            n_realizations: n_av,
        },
    })
}

/// Mean infidelity against `eps_J` at one correlation time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseCurve {
    pub tau_c: f64,
    /// `(eps_J, mean infidelity)`, sorted by `eps_J`.
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDeviation {
    pub tau_a: f64,
    pub tau_b: f64,
    pub rms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseReport {
    /// Common support of the rescaled abscissas `eps_J sqrt(2 tau_c)`.
    pub support: (f64, f64),
    /// Spread of all curves over the common support.
    pub range: f64,
    pub pairs: Vec<PairDeviation>,
    pub max_rms: f64,
    /// `max_rms / range`.
    pub relative_deviation: f64,
}

fn interpolate(points: &[(f64, f64)], x: f64) -> f64 {
    let k = points.partition_point(|p| p.0 < x).clamp(1, points.len() - 1);
    let (x0, y0) = points[k - 1];
    let (x1, y1) = points[k];
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Rescales each curve to `eps_J sqrt(2 tau_c)` and measures how far the
/// curves sit from each other on their common support.
pub fn collapse_scaling(curves: &[NoiseCurve]) -> Result<CollapseReport, NoiseError> {
    if curves.len() < 3 {
        return Err(NoiseError::TooFewCurves {
            what: "correlation times",
            need: 3,
            got: curves.len(),
        });
    }
    let rescaled: Vec<Vec<(f64, f64)>> = curves
        .iter()
        .map(|c| {
            let mu = (2.0 * c.tau_c).sqrt();
            let mut p: Vec<(f64, f64)> = c.points.iter().map(|&(e, y)| (e * mu, y)).collect();
            p.sort_by(|a, b| a.0.total_cmp(&b.0));
            p
        })
        .collect();
    for (c, p) in curves.iter().zip(&rescaled) {
        if p.len() < 4 {
            return Err(NoiseError::TooFewCurves {
                what: "noise strengths per curve",
                need: 4,
                got: c.points.len(),
            });
        }
    }
    let lo = rescaled.iter().map(|p| p[0].0).fold(f64::NEG_INFINITY, f64::max);
    let hi = rescaled.iter().map(|p| p[p.len() - 1].0).fold(f64::INFINITY, f64::min);
    if !(hi > lo) {
        return Err(NoiseError::InsufficientOverlap);
    }
    let samples = 64;
    let xs: Vec<f64> = (0..=samples).map(|i| lo + (hi - lo) * i as f64 / samples as f64).collect();
    let values: Vec<Vec<f64>> = rescaled.iter().map(|p| xs.iter().map(|&x| interpolate(p, x)).collect()).collect();
    let (min, max) = values
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let mut pairs = Vec::new();
    for a in 0..curves.len() {
        for b in a + 1..curves.len() {
            let ms = values[a].iter().zip(&values[b]).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / xs.len() as f64;
            pairs.push(PairDeviation {
                tau_a: curves[a].tau_c,
                tau_b: curves[b].tau_c,
                rms: ms.sqrt(),
            });
        }
    }
    let max_rms = pairs.iter().map(|p| p.rms).fold(0.0, f64::max);
    let range = max - min;
    Ok(CollapseReport {
        support: (lo, hi),
        range,
        max_rms,
        relative_deviation: if range > 0.0 { max_rms / range } else { 0.0 },
        pairs,
    })
}

/// `1 - F` for a noiseless propagation, handy as the ensemble baseline.
pub fn noiseless_infidelity(spec: &ChainSpec, pulse: &ModulationShape, eval_time: f64, dt: f64) -> Result<f64, DynamicsError> {
    Ok(1.0 - propagate_exact(spec, pulse, None, eval_time, dt)?.averaged_fidelity)
}
