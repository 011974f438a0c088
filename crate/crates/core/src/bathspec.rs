//! Bath correlations, spectral filters and the second-order infidelity.
//!
//! With `Omega_+(t) = alpha(t) cos(sqrt 2 phi(t))` and `Omega_-(t) = alpha(t)`,
//! the infidelity is
//!
//! ```text
//! zeta(T) = Re int_0^T dt int_0^t dt' sum_± Omega_±(t) Omega_±(t') Phi_±(t - t')
//! ```
//!
//! Because the control functions are real and `Phi(-tau) = conj(Phi(tau))`,
//! the triangle equals half the full square, which gives the frequency form
//!
//! ```text
//! zeta(T) = KAPPA * int dw sum_± F_±(w) G_±(w),   F(w) = |int Omega e^{iwt}|^2 / 2pi
//! ```
//!
//! with `KAPPA = pi`. For a discrete bath `G = sum_k |J_k|^2 delta(w - w_k)`
//! and the integral collapses to `pi sum_k |J_k|^2 F(w_k)`.

use crate::chain::{BathSpectrum, ChainSpec, SystemBathSplit};
use crate::control::{ControlError, ModulationShape, PulseKind};
use crate::quad::{composite_weights, gauss_legendre};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, SQRT_2};
use std::io::Write;
use thiserror::Error;

/// Normalization between the filter overlap and the time-domain double
/// integral.
pub const KAPPA: f64 = PI;

/// Above this `zeta` second-order perturbation theory is not trusted.
pub const PERTURBATIVE_LIMIT: f64 = 0.5;

#[derive(Debug, Error)]
pub enum BathError {
    #[error("semicircle needs J > 0 and 0 < gap_edge < 2J (J = {j}, gap_edge = {gap_edge})")]
    InvalidSemicircle { j: f64, gap_edge: f64 },
    #[error("frequency step {step:e} cannot resolve the filter's central peak (need <= {required:e})")]
    GridResolution { step: f64, required: f64 },
    #[error("transfer amplitude {0} is outside [0, 1]")]
    AmplitudeOutOfRange(f64),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
    #[error("io failure: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parity {
    /// Modes sharing the zero mode's parity; filtered by `Omega_+`.
    Plus,
    /// Opposite parity; filtered by `Omega_-`.
    Minus,
}

/// Anything that can return `Phi(tau)`.
pub trait CorrelationProvider: Sync {
    fn correlation(&self, tau: f64) -> Complex64;

    /// Largest `|w|` with spectral weight; sets time-grid density.
    fn max_frequency(&self) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralLine {
    pub omega: f64,
    /// `|J_k|^2`.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BathSource {
    Discrete { lines: Vec<SpectralLine> },
    /// `G(w) = sqrt(4J^2 - w^2) / 2` on `gap_edge <= |w| <= 2J`.
    Semicircle { j: f64, gap_edge: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BathCorrelation {
    pub parity: Parity,
    pub source: BathSource,
}

impl BathCorrelation {
    pub fn discrete(parity: Parity, lines: Vec<SpectralLine>) -> Self {
        Self {
            parity,
            source: BathSource::Discrete { lines },
        }
    }

    pub fn semicircle(parity: Parity, j: f64, gap_edge: f64) -> Result<Self, BathError> {
        if !(j > 0.0 && gap_edge > 0.0 && gap_edge < 2.0 * j && j.is_finite()) {
            return Err(BathError::InvalidSemicircle { j, gap_edge });
        }
        Ok(Self {
            parity,
            source: BathSource::Semicircle { j, gap_edge },
        })
    }

    /// `Phi(0)`: total spectral weight.
    pub fn total_weight(&self) -> f64 {
        self.correlation(0.0).re
    }

    /// Continuous density `G(w)`; zero for discrete baths.
    pub fn density(&self, omega: f64) -> f64 {
        match &self.source {
            BathSource::Discrete { .. } => 0.0,
            BathSource::Semicircle { j, gap_edge } => semicircle_gapped(*j, *gap_edge, omega),
        }
    }

    /// Multiplies every coupling by `factor` (weights by `factor^2`).
    pub fn scaled(&self, factor: f64) -> Self {
        let source = match &self.source {
            BathSource::Discrete { lines } => BathSource::Discrete {
                lines: lines
                    .iter()
                    .map(|l| SpectralLine {
                        omega: l.omega,
                        weight: l.weight * factor * factor,
                    })
                    .collect(),
            },
            BathSource::Semicircle { .. } => panic!("scaling is defined for discrete baths only"),
        };
        Self {
            parity: self.parity,
            source,
        }
    }
}

impl CorrelationProvider for BathCorrelation {
    fn correlation(&self, tau: f64) -> Complex64 {
        match &self.source {
            BathSource::Discrete { lines } => lines
                .iter()
                .map(|l| l.weight * Complex64::from_polar(1.0, -l.omega * tau))
                .sum(),
            BathSource::Semicircle { j, gap_edge } => Complex64::new(semicircle_correlation(*j, *gap_edge, tau), 0.0),
        }
    }

    fn max_frequency(&self) -> f64 {
        match &self.source {
            BathSource::Discrete { lines } => lines.iter().map(|l| l.omega.abs()).fold(0.0, f64::max),
            BathSource::Semicircle { j, .. } => 2.0 * j,
        }
    }
}

/// `Phi(tau)` for the gapped semicircle: with `w = 2J sin(theta)` the square
/// root edge disappears and
/// `Phi = 4J^2 int_{theta_l}^{pi/2} cos^2(theta) cos(2 J tau sin(theta)) dtheta`.
fn semicircle_correlation(j: f64, gap_edge: f64, tau: f64) -> f64 {
    let theta_l = (gap_edge / (2.0 * j)).asin();
    let x = 2.0 * j * tau;
    let panels = 8 + x.abs().ceil() as usize;
    4.0 * j * j
        * gauss_legendre(
            |th| {
                let c = th.cos();
                c * c * (x * th.sin()).cos()
            },
            theta_l,
            0.5 * PI,
            panels,
        )
}

/// Plus and minus baths together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BathPair {
    pub plus: BathCorrelation,
    pub minus: BathCorrelation,
}

impl BathPair {
    pub fn from_split(split: &SystemBathSplit) -> Self {
        let lines = |modes: &[crate::chain::BathMode]| {
            modes
                .iter()
                .map(|m| SpectralLine {
                    omega: m.energy,
                    weight: m.coupling * m.coupling,
                })
                .collect()
        };
        Self {
            plus: BathCorrelation::discrete(Parity::Plus, lines(&split.plus)),
            minus: BathCorrelation::discrete(Parity::Minus, lines(&split.minus)),
        }
    }

    /// Gapped semicircle for both parities, gap edge at three quarters of
    /// the first excited level `|w_{z+1}|` and band edge `2J` with `J` the
    /// largest channel coupling.
    pub fn semicircle_for(spec: &ChainSpec, spectrum: &BathSpectrum) -> Result<Self, BathError> {
        let z = spectrum.zero_mode_index;
        let first = spectrum
            .eigenvalues
            .get(z)
            .map(|w| w.abs())
            .ok_or(BathError::InvalidSemicircle { j: 0.0, gap_edge: 0.0 })?;
        let j = spec.energy_scale();
        let gap_edge = 0.75 * first;
        Ok(Self {
            plus: BathCorrelation::semicircle(Parity::Plus, j, gap_edge)?,
            minus: BathCorrelation::semicircle(Parity::Minus, j, gap_edge)?,
        })
    }

    pub fn get(&self, parity: Parity) -> &BathCorrelation {
        match parity {
            Parity::Plus => &self.plus,
            Parity::Minus => &self.minus,
        }
    }
}

/// Gapped Wigner semicircle `sqrt(4J^2 - w^2) / 2` for `gap_edge <= |w| <= 2J`.
pub fn semicircle_gapped(j: f64, gap_edge: f64, omega: f64) -> f64 {
    let w = omega.abs();
    if w < gap_edge || w >= 2.0 * j {
        0.0
    } else {
        0.5 * (4.0 * j * j - w * w).sqrt()
    }
}

/// `(Omega_+(t), Omega_-(t))` for `t` in `[0, T]`.
pub fn control_functions(pulse: &ModulationShape, j_z: f64, t: f64) -> Result<(f64, f64), BathError> {
    let phi = pulse.accumulated_phase(j_z, t)?;
    let a = pulse.alpha(t);
    Ok((a * (SQRT_2 * phi).cos(), a))
}

/// `Omega_±` on `intervals + 1` uniform nodes of `[0, T]`.
fn sampled_controls(pulse: &ModulationShape, j_z: f64, intervals: usize) -> (Vec<f64>, Vec<f64>) {
    let h = pulse.duration() / intervals as f64;
    (0..=intervals)
        .map(|i| {
            let t = (i as f64 * h).min(pulse.duration());
            let a = pulse.alpha(t);
            let phi = pulse.accumulated_phase(j_z, t).expect("node inside window");
            (a * (SQRT_2 * phi).cos(), a)
        })
        .unzip()
}

/// Uniform interval count of at least `wanted`, with every Simpson pair
/// inside one cell of a tabulated pulse so its kinks sit on even nodes.
fn aligned_intervals(pulse: &ModulationShape, wanted: usize) -> usize {
    match pulse.kind() {
        PulseKind::Tabulated { samples, .. } | PulseKind::MarkovOptimal { samples, .. } => {
            let cells = samples.len() - 1;
            let per_cell = wanted.div_ceil(cells).max(2).next_multiple_of(2);
            cells * per_cell
        }
        _ => wanted.max(2).next_multiple_of(2),
    }
}

/// Grid density for the quadratures, in nodes per period of the fastest
/// relevant oscillation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureDensity {
    pub points_per_period: usize,
    pub min_intervals: usize,
}

impl Default for QuadratureDensity {
    fn default() -> Self {
        Self {
            points_per_period: 256,
            min_intervals: 512,
        }
    }
}

impl QuadratureDensity {
    fn intervals(&self, duration: f64, omega_max: f64) -> usize {
        let periods = duration * omega_max / (2.0 * PI);
        ((periods * self.points_per_period as f64).ceil() as usize).max(self.min_intervals)
    }
}

/// `F_±(w) = |int_0^T Omega_±(t) e^{iwt} dt|^2 / 2pi` by composite Simpson.
pub fn filter_function(pulse: &ModulationShape, j_z: f64, parity: Parity, omega: f64) -> Result<f64, BathError> {
    filter_function_with(pulse, j_z, parity, omega, QuadratureDensity::default())
}

pub fn filter_function_with(
    pulse: &ModulationShape,
    j_z: f64,
    parity: Parity,
    omega: f64,
    density: QuadratureDensity,
) -> Result<f64, BathError> {
    pulse.check_transfer_ready(j_z)?;
    let t = pulse.duration();
    let n = aligned_intervals(pulse, density.intervals(t, omega.abs()));
    let (plus, minus) = sampled_controls(pulse, j_z, n);
    let values = match parity {
        Parity::Plus => plus,
        Parity::Minus => minus,
    };
    Ok(filter_from_samples(&values, t / n as f64, omega))
}

fn filter_from_samples(values: &[f64], h: f64, omega: f64) -> f64 {
    let w = composite_weights(values.len() - 1, h);
    let mut acc = Complex64::new(0.0, 0.0);
    for (i, (v, wi)) in values.iter().zip(&w).enumerate() {
        acc += wi * v * Complex64::from_polar(1.0, omega * i as f64 * h);
    }
    acc.norm_sqr() / (2.0 * PI)
}

/// Both filters on a symmetric uniform frequency grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterGrid {
    pub omega: Vec<f64>,
    pub f_plus: Vec<f64>,
    pub f_minus: Vec<f64>,
    pub duration: f64,
    pub j_z: f64,
    /// `e^{-i w T/2} int Omega e^{iwt}`: smoother in `w` than `F` itself,
    /// so this is what gets interpolated between nodes.
    #[serde(skip)]
    centered: [Vec<Complex64>; 2],
}

impl FilterGrid {
    pub fn step(&self) -> f64 {
        self.omega[1] - self.omega[0]
    }

    pub fn values(&self, parity: Parity) -> &[f64] {
        match parity {
            Parity::Plus => &self.f_plus,
            Parity::Minus => &self.f_minus,
        }
    }

    /// `F(w)` between nodes by four-point Lagrange interpolation of the
    /// centered amplitude.
    pub fn interpolate(&self, parity: Parity, omega: f64) -> f64 {
        let amp = &self.centered[parity as usize];
        let last = amp.len() - 1;
        let s = (omega - self.omega[0]) / self.step();
        let c = (s.floor() as isize).clamp(1, last as isize - 2) as usize;
        let x = s - c as f64;
        let (p0, p1, p2, p3) = (amp[c - 1], amp[c], amp[c + 1], amp[c + 2]);
        let v = p0 * (-x * (x - 1.0) * (x - 2.0) / 6.0)
            + p1 * ((x + 1.0) * (x - 1.0) * (x - 2.0) / 2.0)
            + p2 * (-(x + 1.0) * x * (x - 2.0) / 2.0)
            + p3 * ((x + 1.0) * x * (x - 1.0) / 6.0);
        v.norm_sqr() / (2.0 * PI)
    }

    /// Writes `omega,F_minus,F_plus`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), BathError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["omega", "F_minus", "F_plus"])?;
        for i in 0..self.omega.len() {
            w.serialize((self.omega[i], self.f_minus[i], self.f_plus[i]))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Filters on `[-omega_max, omega_max]` from one zero-padded FFT of the
/// Simpson-weighted control samples. The frequency step is at most
/// `(2 pi / T) / refine`.
pub fn filter_grid(pulse: &ModulationShape, j_z: f64, omega_max: f64, refine: usize) -> Result<FilterGrid, BathError> {
    pulse.check_transfer_ready(j_z)?;
    let t = pulse.duration();
    let density = QuadratureDensity::default();
    let n = aligned_intervals(pulse, density.intervals(t, omega_max));
    let h = t / n as f64;
    let (plus, minus) = sampled_controls(pulse, j_z, n);
    let weights = composite_weights(n, h);
    let len = ((n + 1) * refine.max(1)).next_power_of_two();
    let step = 2.0 * PI / (len as f64 * h);
    let half = ((omega_max / step).floor() as usize).min(len / 2 - 1);

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_inverse(len);
    let omega: Vec<f64> = (0..=2 * half).map(|k| (k as f64 - half as f64) * step).collect();
    let transform = |values: &[f64]| -> Vec<Complex64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); len];
        for (b, (v, w)) in buf.iter_mut().zip(values.iter().zip(&weights)) {
            b.re = v * w;
        }
        // inverse DFT carries e^{+i w t}
        fft.process(&mut buf);
        omega
            .iter()
            .enumerate()
            .map(|(k, w)| {
                let m = k as isize - half as isize;
                buf[m.rem_euclid(len as isize) as usize] * Complex64::from_polar(1.0, -0.5 * w * t)
            })
            .collect()
    };
    let centered = [transform(&plus), transform(&minus)];
    let power = |a: &[Complex64]| a.iter().map(|v| v.norm_sqr() / (2.0 * PI)).collect();
    Ok(FilterGrid {
        f_plus: power(&centered[0]),
        f_minus: power(&centered[1]),
        omega,
        duration: t,
        j_z,
        centered,
    })
}

/// Continuous densities `G_±` sampled on a grid, for export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumGrid {
    pub omega: Vec<f64>,
    pub g_plus: Vec<f64>,
    pub g_minus: Vec<f64>,
}

impl SpectrumGrid {
    pub fn sample(baths: &BathPair, omega: &[f64]) -> Self {
        Self {
            omega: omega.to_vec(),
            g_plus: omega.iter().map(|&w| baths.plus.density(w)).collect(),
            g_minus: omega.iter().map(|&w| baths.minus.density(w)).collect(),
        }
    }

    /// Writes `omega,G_minus,G_plus`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), BathError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["omega", "G_minus", "G_plus"])?;
        for i in 0..self.omega.len() {
            w.serialize((self.omega[i], self.g_minus[i], self.g_plus[i]))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// A `zeta` value with a flag for the regime where it is not trusted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZetaEstimate {
    pub value: f64,
    pub beyond_perturbative: bool,
}

impl ZetaEstimate {
    fn new(value: f64) -> Self {
        let beyond = value > PERTURBATIVE_LIMIT;
        if beyond {
            log::warn!("zeta = {value:.4} exceeds {PERTURBATIVE_LIMIT}; second-order estimate unreliable");
        }
        Self {
            value,
            beyond_perturbative: beyond,
        }
    }
}

/// Triangular double integral by nested composite Simpson on a uniform grid.
pub fn zeta_time_domain(
    pulse: &ModulationShape,
    plus: &dyn CorrelationProvider,
    minus: &dyn CorrelationProvider,
    j_z: f64,
) -> Result<ZetaEstimate, BathError> {
    zeta_time_domain_with(pulse, plus, minus, j_z, QuadratureDensity::default())
}

pub fn zeta_time_domain_with(
    pulse: &ModulationShape,
    plus: &dyn CorrelationProvider,
    minus: &dyn CorrelationProvider,
    j_z: f64,
    density: QuadratureDensity,
) -> Result<ZetaEstimate, BathError> {
    pulse.check_transfer_ready(j_z)?;
    let t = pulse.duration();
    let omega_max = plus.max_frequency().max(minus.max_frequency());
    let n = aligned_intervals(pulse, density.intervals(t, omega_max));
    let h = t / n as f64;
    let (op, om) = sampled_controls(pulse, j_z, n);
    let rp: Vec<f64> = (0..=n).map(|m| plus.correlation(m as f64 * h).re).collect();
    let rm: Vec<f64> = (0..=n).map(|m| minus.correlation(m as f64 * h).re).collect();

    let outer = composite_weights(n, h);
    let mut total = 0.0;
    for i in 1..=n {
        let inner = composite_weights(i, h);
        let (mut sp, mut sm) = (0.0, 0.0);
        for j in 0..=i {
            sp += inner[j] * op[j] * rp[i - j];
            sm += inner[j] * om[j] * rm[i - j];
        }
        total += outer[i] * (op[i] * sp + om[i] * sm);
    }
    Ok(ZetaEstimate::new(total))
}

/// Frequency-domain `zeta`: a weighted sum of filter values for discrete
/// baths, an overlap integral for continuous ones.
pub fn zeta_frequency_domain(
    pulse: &ModulationShape,
    baths: &BathPair,
    j_z: f64,
) -> Result<ZetaEstimate, BathError> {
    let continuous = [&baths.plus, &baths.minus]
        .iter()
        .any(|b| matches!(b.source, BathSource::Semicircle { .. }));
    let grid = if continuous {
        let omega_max = baths.plus.max_frequency().max(baths.minus.max_frequency());
        Some(filter_grid(pulse, j_z, omega_max, 8)?)
    } else {
        None
    };
    let mut total = 0.0;
    for parity in [Parity::Plus, Parity::Minus] {
        let bath = baths.get(parity);
        total += match &bath.source {
            BathSource::Discrete { lines } => {
                let mut s = 0.0;
                for l in lines {
                    s += l.weight * filter_function(pulse, j_z, parity, l.omega)?;
                }
                KAPPA * s
            }
            BathSource::Semicircle { j, gap_edge } => {
                let grid = grid.as_ref().expect("grid built for continuous baths");
                let support = [(-2.0 * j, -gap_edge), (*gap_edge, 2.0 * j)];
                KAPPA * overlap_on_grid(grid, parity, |w| bath.density(w), &support)?
            }
        };
    }
    Ok(ZetaEstimate::new(total))
}

/// `int F(w) G(w) dw` over `support`, with `F` interpolated between grid
/// nodes and `G` evaluated at Gauss nodes inside every cell, so jumps and
/// square-root edges at the support ends are integrated cleanly.
pub fn overlap_on_grid<G: Fn(f64) -> f64>(
    grid: &FilterGrid,
    parity: Parity,
    density: G,
    support: &[(f64, f64)],
) -> Result<f64, BathError> {
    let step = grid.step();
    let required = 2.0 * PI / grid.duration / 8.0;
    if step > required * (1.0 + 1e-9) {
        return Err(BathError::GridResolution { step, required });
    }
    let w0 = grid.omega[0];
    let last = grid.omega.len() - 1;
    let mut total = 0.0;
    for &(a, b) in support {
        let a = a.max(grid.omega[0]);
        let b = b.min(grid.omega[last]);
        if b <= a {
            continue;
        }
        let first_cell = ((a - w0) / step).floor() as usize;
        let last_cell = (((b - w0) / step).ceil() as usize).min(last);
        for c in first_cell..last_cell {
            let lo = (w0 + c as f64 * step).max(a);
            let hi = (w0 + (c + 1) as f64 * step).min(b);
            if hi <= lo {
                continue;
            }
            total += gauss_legendre(|w| grid.interpolate(parity, w) * density(w), lo, hi, 1);
        }
    }
    Ok(total)
}

/// Input-state averaged fidelity `f^2/6 + f/3 + 1/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AveragedFidelity {
    pub value: f64,
    /// `f` exceeded 1 by rounding and was clamped.
    pub clamped: bool,
}

pub fn averaged_fidelity(f: f64) -> Result<AveragedFidelity, BathError> {
    if !(f >= 0.0 && f <= 1.0 + 1e-9) {
        return Err(BathError::AmplitudeOutOfRange(f));
    }
    let clamped = f > 1.0;
    let f = f.min(1.0);
    Ok(AveragedFidelity {
        value: f * f / 6.0 + f / 3.0 + 0.5,
        clamped,
    })
}

/// `1 - F` for the amplitude `f = 1 - zeta`.
pub fn predicted_infidelity(zeta: f64) -> Result<f64, BathError> {
    Ok(1.0 - averaged_fidelity(1.0 - zeta)?.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{diagonalize_channel, split_system_bath};
    use crate::control::make_power_sine;
    use proptest::prelude::*;

    fn uniform_baths(n: usize) -> (BathPair, f64) {
        let spec = ChainSpec::uniform(n, 1.0).unwrap();
        let s = diagonalize_channel(&spec).unwrap();
        (BathPair::from_split(&split_system_bath(&s)), s.zero_mode_coupling)
    }

    fn empty() -> BathCorrelation {
        BathCorrelation::discrete(Parity::Plus, vec![])
    }

    #[test]
    fn semicircle_values() {
        assert_eq!(semicircle_gapped(1.0, 0.1, 0.0), 0.0);
        assert_eq!(semicircle_gapped(1.0, 0.1, 2.0), 0.0);
        assert!((semicircle_gapped(1.0, 0.1, 1.0) - 0.5 * 3f64.sqrt()).abs() < 1e-15);
        assert!((semicircle_gapped(1.0, 0.1, -1.0) - 0.5 * 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn semicircle_correlation_matches_direct_integral() {
        let bath = BathCorrelation::semicircle(Parity::Minus, 1.0, 0.157).unwrap();
        for tau in [0.0, 0.7, 5.0, 40.0] {
            let direct = 2.0 * crate::quad::simpson(|w| semicircle_gapped(1.0, 0.157, w) * (w * tau).cos(), 0.157, 2.0, 200_000);
            assert!((bath.correlation(tau).re - direct).abs() < 1e-6, "tau {tau}");
        }
    }

    #[test]
    fn uniform_bath_weights() {
        let (baths, jz) = uniform_baths(29);
        assert!((baths.plus.total_weight() - 13.0 / 30.0).abs() < 1e-12);
        assert!((baths.minus.total_weight() - 0.5).abs() < 1e-12);
        // completeness with the zero mode
        assert!((baths.plus.total_weight() + baths.minus.total_weight() + jz * jz - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_line_correlation() {
        let b = BathCorrelation::discrete(Parity::Minus, vec![SpectralLine { omega: 1.0, weight: 1.0 }]);
        let c = b.correlation(PI);
        assert!((c.re + 1.0).abs() < 1e-15 && c.im.abs() < 1e-15);
        let d = b.correlation(-0.3);
        assert!((d - b.correlation(0.3).conj()).norm() < 1e-15);
    }

    fn bessel_j1(x: f64) -> f64 {
        // power series, fine for |x| <= 10
        let mut term = 0.5 * x;
        let mut sum = term;
        for k in 1..60 {
            term *= -(x * x) / (4.0 * k as f64 * (k as f64 + 1.0));
            sum += term;
        }
        sum
    }

    #[test]
    fn short_time_correlation_has_bessel_shape() {
        let spec = ChainSpec::uniform(29, 1.0).unwrap();
        let s = diagonalize_channel(&spec).unwrap();
        let jz = s.zero_mode_coupling;
        let (baths, _) = uniform_baths(29);
        // the continuum form describes the whole channel, zero mode included
        let channel = BathCorrelation::discrete(
            Parity::Plus,
            s.eigenvalues
                .iter()
                .zip(&s.eff_couplings)
                .map(|(&omega, &c)| SpectralLine { omega, weight: c * c })
                .collect(),
        );
        for i in 1..=20 {
            let tau = 0.1 * i as f64;
            let full = channel.correlation(tau);
            let split = baths.plus.correlation(tau) + baths.minus.correlation(tau) + jz * jz;
            assert!((full - split).norm() < 1e-13);
            let c = full.re / channel.total_weight();
            let x = 2.0 * tau;
            let bessel = 2.0 * bessel_j1(x) / x;
            assert!((c - bessel).abs() <= 0.05 * bessel.abs(), "tau {tau}: {c} vs {bessel}");
        }
    }

    #[test]
    fn control_function_endpoints() {
        let jz = 0.3;
        let p0 = make_power_sine(0, 20.0, jz).unwrap();
        let (a, b) = control_functions(&p0, jz, 0.0).unwrap();
        assert_eq!((a, b), (p0.amplitude(), p0.amplitude()));
        let (a, _) = control_functions(&p0, jz, 20.0).unwrap();
        assert!((a + p0.amplitude()).abs() < 1e-12);
        let p2 = make_power_sine(2, 20.0, jz).unwrap();
        assert_eq!(control_functions(&p2, jz, 0.0).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn static_filter_zeros_and_dc() {
        let jz = 0.3;
        let t = 25.0;
        let p0 = make_power_sine(0, t, jz).unwrap();
        let dc = filter_function(&p0, jz, Parity::Minus, 0.0).unwrap();
        let want = (p0.amplitude() * t).powi(2) / (2.0 * PI);
        assert!((dc - want).abs() < 1e-12 * want);
        for n in 1..5 {
            let f = filter_function(&p0, jz, Parity::Minus, 2.0 * PI * n as f64 / t).unwrap();
            assert!(f < 1e-12 * dc, "n = {n}: {f}");
        }
    }

    #[test]
    fn sin2_tail_far_below_static() {
        let jz = 0.3;
        let t = 30.0;
        let p0 = make_power_sine(0, t, jz).unwrap();
        let p2 = make_power_sine(2, t, jz).unwrap();
        let peak = |p: &ModulationShape| {
            (0..2000)
                .map(|i| 6.0 * PI / t + i as f64 * 0.002)
                .map(|w| filter_function(p, jz, Parity::Minus, w).unwrap())
                .fold(0.0, f64::max)
        };
        assert!(peak(&p2) * 10.0 <= peak(&p0));
    }

    #[test]
    fn fft_grid_matches_direct_filter() {
        let jz = 0.25;
        let pulse = make_power_sine(1, 40.0, jz).unwrap();
        let grid = filter_grid(&pulse, jz, 2.0, 8).unwrap();
        assert!(grid.step() <= 2.0 * PI / 40.0 / 8.0);
        for k in (0..grid.omega.len()).step_by(37) {
            for parity in [Parity::Plus, Parity::Minus] {
                let direct = filter_function(&pulse, jz, parity, grid.omega[k]).unwrap();
                let fft = grid.values(parity)[k];
                assert!((direct - fft).abs() < 1e-9 * grid.values(parity).iter().cloned().fold(0.0, f64::max));
            }
        }
        // positivity and evenness
        let n = grid.omega.len();
        for k in 0..n {
            assert!(grid.f_minus[k] >= 0.0 && grid.f_plus[k] >= 0.0);
            assert!((grid.f_minus[k] - grid.f_minus[n - 1 - k]).abs() < 1e-9 * grid.f_minus[n / 2]);
        }
    }

    fn fwhm(grid: &FilterGrid) -> f64 {
        let mid = grid.omega.len() / 2;
        let peak = grid.f_minus[mid];
        let mut k = mid;
        while grid.f_minus[k] > 0.5 * peak {
            k += 1;
        }
        2.0 * grid.omega[k]
    }

    #[test]
    fn central_peak_narrows_with_duration() {
        let jz = 0.25;
        for p in 0..=2 {
            let widths: Vec<f64> = [20.0, 40.0, 80.0, 160.0]
                .iter()
                .map(|&t| fwhm(&filter_grid(&make_power_sine(p, t, jz).unwrap(), jz, 1.0, 16).unwrap()))
                .collect();
            assert!(widths.windows(2).all(|w| w[1] < w[0]), "p = {p}: {widths:?}");
        }
    }

    #[test]
    fn zeta_vanishes_without_bath() {
        let pulse = make_power_sine(1, 30.0, 0.3).unwrap();
        let z = zeta_time_domain(&pulse, &empty(), &empty(), 0.3).unwrap();
        assert_eq!(z.value, 0.0);
        let none = BathPair {
            plus: empty(),
            minus: BathCorrelation::discrete(Parity::Minus, vec![]),
        };
        assert_eq!(zeta_frequency_domain(&pulse, &none, 0.3).unwrap().value, 0.0);
    }

    #[test]
    fn single_detuned_mode_matches_first_order_amplitude() {
        // one minus-parity mode at w1: zeta = (weight / 2) |int alpha e^{i w1 t}|^2
        let jz = 0.2;
        let w1: f64 = 0.9;
        let weight = 1e-3;
        let pulse = make_power_sine(0, 50.0, jz).unwrap();
        let a = pulse.amplitude();
        let t = 50.0;
        let amp = a * (2.0 * (1.0 - (w1 * t).cos())).sqrt() / w1;
        let want = 0.5 * weight * amp * amp;
        let bath = BathCorrelation::discrete(Parity::Minus, vec![SpectralLine { omega: w1, weight }]);
        let z = zeta_time_domain(&pulse, &empty(), &bath, jz).unwrap();
        assert!((z.value - want).abs() < 1e-5 * want, "{} vs {want}", z.value);
    }

    #[test]
    fn time_and_frequency_agree_on_uniform_chain() {
        let (baths, jz) = uniform_baths(9);
        for p in 0..=2 {
            let pulse = make_power_sine(p, 35.0, jz).unwrap();
            let a = zeta_time_domain(&pulse, &baths.plus, &baths.minus, jz).unwrap().value;
            let b = zeta_frequency_domain(&pulse, &baths, jz).unwrap().value;
            assert!((a - b).abs() < 1e-6 * b, "p = {p}: {a} vs {b}");
        }
    }

    #[test]
    fn time_and_frequency_agree_on_semicircle() {
        let spec = ChainSpec::uniform(29, 1.0).unwrap();
        let s = diagonalize_channel(&spec).unwrap();
        let baths = BathPair::semicircle_for(&spec, &s).unwrap();
        let jz = s.zero_mode_coupling;
        for p in 0..=2 {
            let pulse = make_power_sine(p, 80.0, jz).unwrap();
            let a = zeta_time_domain(&pulse, &baths.plus, &baths.minus, jz).unwrap().value;
            let b = zeta_frequency_domain(&pulse, &baths, jz).unwrap().value;
            assert!((a - b).abs() < 2e-3 * b, "p = {p}: {a} vs {b}");
        }
    }

    #[test]
    fn coarse_grid_is_rejected() {
        let jz = 0.25;
        let pulse = make_power_sine(0, 40.0, jz).unwrap();
        let grid = filter_grid(&pulse, jz, 2.0, 2).unwrap();
        let err = overlap_on_grid(&grid, Parity::Minus, |_| 1.0, &[(0.2, 1.0)]);
        assert!(matches!(err, Err(BathError::GridResolution { .. })));
    }

    #[test]
    fn fidelity_polynomial() {
        assert_eq!(averaged_fidelity(1.0).unwrap().value, 1.0);
        assert_eq!(averaged_fidelity(0.0).unwrap().value, 0.5);
        assert!((averaged_fidelity(0.9).unwrap().value - 0.935).abs() < 1e-15);
        let c = averaged_fidelity(1.0 + 1e-12).unwrap();
        assert!(c.clamped && c.value == 1.0);
        assert!(averaged_fidelity(1.0 + 1e-6).is_err());
        assert!(averaged_fidelity(-0.1).is_err());
    }

    #[test]
    fn csv_headers() {
        let jz = 0.3;
        let grid = filter_grid(&make_power_sine(0, 10.0, jz).unwrap(), jz, 0.5, 8).unwrap();
        let mut buf = Vec::new();
        grid.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("omega,F_minus,F_plus\n"));
        let b = BathPair {
            plus: BathCorrelation::semicircle(Parity::Plus, 1.0, 0.1).unwrap(),
            minus: BathCorrelation::semicircle(Parity::Minus, 1.0, 0.1).unwrap(),
        };
        let mut buf = Vec::new();
        SpectrumGrid::sample(&b, &grid.omega).write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("omega,G_minus,G_plus\n"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]

        #[test]
        fn parseval_on_random_discrete_baths(
            p in 0u32..3,
            t in 10.0f64..60.0,
            jz in 0.15f64..0.5,
            lines in proptest::collection::vec((-2.0f64..2.0, 0.0f64..0.1), 1..6),
            lines_plus in proptest::collection::vec((-2.0f64..2.0, 0.0f64..0.1), 1..6),
        ) {
            let pulse = make_power_sine(p, t, jz).unwrap();
            let mk = |par, v: &[(f64, f64)]| BathCorrelation::discrete(par, v.iter().map(|&(omega, weight)| SpectralLine { omega, weight }).collect());
            let baths = BathPair { plus: mk(Parity::Plus, &lines_plus), minus: mk(Parity::Minus, &lines) };
            let fine = QuadratureDensity { points_per_period: 1024, min_intervals: 512 };
            let a = zeta_time_domain_with(&pulse, &baths.plus, &baths.minus, jz, fine).unwrap().value;
            let b = zeta_frequency_domain(&pulse, &baths, jz).unwrap().value;
            // exact zeros of the filter only come out as quadrature noise
            let total: f64 = lines.iter().chain(&lines_plus).map(|l| l.1).sum();
            let floor = 1e-12 * total * (crate::control::TRANSFER_PHASE / jz).powi(2);
            prop_assert!((a - b).abs() <= 1e-6 * b + floor, "{} vs {}", a, b);
        }

        #[test]
        fn zeta_is_quadratic_in_coupling_scale(scale in 0.1f64..1.0) {
            let (baths, jz) = uniform_baths(9);
            let pulse = make_power_sine(1, 30.0, jz).unwrap();
            let base = zeta_frequency_domain(&pulse, &baths, jz).unwrap().value;
            let s = scale * 10.0;
            let big = BathPair { plus: baths.plus.scaled(s), minus: baths.minus.scaled(s) };
            let small = BathPair { plus: baths.plus.scaled(scale), minus: baths.minus.scaled(scale) };
            let zb = zeta_frequency_domain(&pulse, &big, jz).unwrap().value;
            let zs = zeta_frequency_domain(&pulse, &small, jz).unwrap().value;
            let slope = (zb / zs).log10();
            prop_assert!((slope - 2.0).abs() < 0.01);
            prop_assert!(base > 0.0);
        }
    }
}
