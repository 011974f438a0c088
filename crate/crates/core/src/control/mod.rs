//! Boundary-control waveforms `alpha(t)`: representation, accumulated phase,
//! energy, and the optimizers that produce them.
//!
//! A pulse is *transfer-ready* when its accumulated phase
//! `phi(T) = J_z * int_0^T alpha` equals `pi / sqrt(2)`, the condition for
//! complete transfer through the zero mode.

mod euler_lagrange;
mod markov;

pub use euler_lagrange::{solve_euler_lagrange, EulerLagrangeSolution};
pub use markov::{fit_phenomenological, solve_markov_optimal, zeta_markovian, PhenomenologicalFit};

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::gamma::ln_gamma;
use std::f64::consts::{FRAC_1_SQRT_2, PI};
use thiserror::Error;

/// Target phase `pi / sqrt(2)`.
pub const TRANSFER_PHASE: f64 = PI * FRAC_1_SQRT_2;

/// Tolerance for the transfer-ready phase check.
pub const PHASE_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("power-sine exponent must be 0, 1 or 2, got {0}")]
    UnsupportedPower(u32),
    #[error("duration must be positive and finite, got {0}")]
    InvalidDuration(f64),
    #[error("amplitude must be finite and >= 0, got {0}")]
    InvalidAmplitude(f64),
    #[error("zero-mode coupling must be positive and finite, got {0}")]
    InvalidCoupling(f64),
    #[error("tabulated pulse needs at least two non-negative finite samples")]
    InvalidSamples,
    #[error("grid step {grid_step} with {intervals} intervals does not span duration {duration}")]
    GridMismatch {
        grid_step: f64,
        intervals: usize,
        duration: f64,
    },
    #[error("phenomenological parameters must satisfy a, b >= 0, a + b > 0 and q > 0")]
    InvalidShapeParameters,
    #[error("time {t} lies outside the pulse window [0, {duration}]")]
    OutsideWindow { t: f64, duration: f64 },
    #[error("pulse is not transfer-ready: phi(T) = {phase}, expected {}", TRANSFER_PHASE)]
    NotTransferReady { phase: f64 },
    #[error("optimizer setting invalid: {0}")]
    InvalidConfig(String),
    #[error("radicand of the Markovian optimum is non-positive (minimum {min_radicand:e}); lambda is infeasible")]
    InfeasibleLambda { min_radicand: f64 },
    #[error("energy budget {budget} is below the minimum {minimum} reachable at this duration")]
    InfeasibleBudget { budget: f64, minimum: f64 },
    #[error("Euler-Lagrange iteration did not converge after {iterations} steps (residual {residual:e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        best: Box<EulerLagrangeSolution>,
    },
}

/// Waveform family.
#[derive(Debug, Clone, PartialEq)]
pub enum PulseKind {
    /// `alpha_M sin^p(pi t / T)`.
    PowerSine { p: u32 },
    /// Samples of `alpha` on a uniform grid, linearly interpolated.
    Tabulated { samples: Vec<f64>, grid_step: f64 },
    /// Tabulated optimum for a delta-correlated bath.
    MarkovOptimal { samples: Vec<f64>, grid_step: f64 },
    /// `alpha_M (a + b sin^q(pi t / T))`.
    Phenomenological { a: f64, b: f64, q: f64 },
}

/// A control waveform on `[0, T]`.
///
/// For tabulated kinds `amplitude` is the sample maximum and only
/// informational. Past `T` the waveform continues periodically (with
/// `|sin|` for the analytic families), which is what a transfer-window
/// scan observes if the drive is simply left running.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PulseRepr", into = "PulseRepr")]
pub struct ModulationShape {
    kind: PulseKind,
    amplitude: f64,
    duration: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum KindTag {
    PowerSine,
    Tabulated,
    MarkovOptimal,
    Phenomenological,
}

#[derive(Serialize, Deserialize)]
struct PulseRepr {
    kind: KindTag,
    #[serde(rename = "alpha_M", default)]
    alpha_m: f64,
    #[serde(rename = "T")]
    duration: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    p: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    samples: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    grid_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    q: Option<f64>,
}

impl TryFrom<PulseRepr> for ModulationShape {
    type Error = String;

    fn try_from(r: PulseRepr) -> Result<Self, String> {
        let missing = |f: &str| format!("pulse field `{f}` is required for this kind");
        let shape = match r.kind {
            KindTag::PowerSine => ModulationShape::power_sine(r.p.ok_or_else(|| missing("p"))?, r.alpha_m, r.duration),
            KindTag::Tabulated | KindTag::MarkovOptimal => {
                let samples = r.samples.ok_or_else(|| missing("samples"))?;
                let markov = matches!(r.kind, KindTag::MarkovOptimal);
                ModulationShape::tabulated_inner(samples, r.grid_step, r.duration, markov)
            }
            KindTag::Phenomenological => ModulationShape::phenomenological(
                r.a.ok_or_else(|| missing("a"))?,
                r.b.ok_or_else(|| missing("b"))?,
                r.q.ok_or_else(|| missing("q"))?,
                r.alpha_m,
                r.duration,
            ),
        };
        shape.map_err(|e| e.to_string())
    }
}

impl From<ModulationShape> for PulseRepr {
    fn from(s: ModulationShape) -> Self {
        let mut r = PulseRepr {
            kind: KindTag::PowerSine,
            alpha_m: s.amplitude,
            duration: s.duration,
            p: None,
            samples: None,
            grid_step: None,
            a: None,
            b: None,
            q: None,
        };
        match s.kind {
            PulseKind::PowerSine { p } => r.p = Some(p),
            PulseKind::Tabulated { samples, grid_step } => {
                r.kind = KindTag::Tabulated;
                r.samples = Some(samples);
                r.grid_step = Some(grid_step);
            }
            PulseKind::MarkovOptimal { samples, grid_step } => {
                r.kind = KindTag::MarkovOptimal;
                r.samples = Some(samples);
                r.grid_step = Some(grid_step);
            }
            PulseKind::Phenomenological { a, b, q } => {
                r.kind = KindTag::Phenomenological;
                r.a = Some(a);
                r.b = Some(b);
                r.q = Some(q);
            }
        }
        r
    }
}

fn check_duration(t: f64) -> Result<(), ControlError> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(ControlError::InvalidDuration(t))
    }
}

fn check_amplitude(a: f64) -> Result<(), ControlError> {
    if a >= 0.0 && a.is_finite() {
        Ok(())
    } else {
        Err(ControlError::InvalidAmplitude(a))
    }
}

fn check_coupling(j_z: f64) -> Result<(), ControlError> {
    if j_z > 0.0 && j_z.is_finite() {
        Ok(())
    } else {
        Err(ControlError::InvalidCoupling(j_z))
    }
}

/// `c_p = sqrt(pi) Gamma(p/2 + 1) / Gamma((p + 1)/2)`, the inverse mean of
/// `sin^p` over a half period: 1, pi/2 and 2 for p = 0, 1, 2.
pub fn power_sine_constant(p: f64) -> f64 {
    (0.5 * PI.ln() + ln_gamma(0.5 * p + 1.0) - ln_gamma(0.5 * (p + 1.0))).exp()
}

/// Mean of `sin^q(x)` over `[0, pi]`.
fn mean_sine_power(q: f64) -> f64 {
    1.0 / power_sine_constant(q)
}

/// `int_0^x sin^q(s) ds` for `x` in `[0, pi]`.
fn sine_power_integral(q: f64, x: f64) -> f64 {
    if q == 0.0 {
        return x;
    }
    let full = PI * mean_sine_power(q);
    let half = 0.5 * full;
    let tail = |y: f64| {
        let s = y.sin();
        half * beta_reg(0.5 * (q + 1.0), 0.5, (s * s).min(1.0))
    };
    if x <= 0.5 * PI {
        tail(x)
    } else {
        full - tail(PI - x)
    }
}

impl ModulationShape {
    /// Raw `alpha_M sin^p(pi t / T)` with a caller-chosen amplitude; not
    /// necessarily transfer-ready.
    pub fn power_sine(p: u32, alpha_m: f64, duration: f64) -> Result<Self, ControlError> {
        if p > 2 {
            return Err(ControlError::UnsupportedPower(p));
        }
        check_amplitude(alpha_m)?;
        check_duration(duration)?;
        Ok(Self {
            kind: PulseKind::PowerSine { p },
            amplitude: alpha_m,
            duration,
        })
    }

    /// Tabulated pulse over `[0, T]`; `grid_step` defaults to `T / (len - 1)`.
    pub fn tabulated(samples: Vec<f64>, grid_step: Option<f64>, duration: f64) -> Result<Self, ControlError> {
        Self::tabulated_inner(samples, grid_step, duration, false)
    }

    fn tabulated_inner(samples: Vec<f64>, grid_step: Option<f64>, duration: f64, markov: bool) -> Result<Self, ControlError> {
        check_duration(duration)?;
        if samples.len() < 2 || samples.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(ControlError::InvalidSamples);
        }
        let intervals = samples.len() - 1;
        let natural = duration / intervals as f64;
        let grid_step = match grid_step {
            Some(h) => {
                if !((h * intervals as f64 - duration).abs() <= 1e-9 * duration) {
                    return Err(ControlError::GridMismatch {
                        grid_step: h,
                        intervals,
                        duration,
                    });
                }
                natural
            }
            None => natural,
        };
        let amplitude = samples.iter().copied().fold(0.0, f64::max);
        let kind = if markov {
            PulseKind::MarkovOptimal { samples, grid_step }
        } else {
            PulseKind::Tabulated { samples, grid_step }
        };
        Ok(Self {
            kind,
            amplitude,
            duration,
        })
    }

    /// `alpha_M (a + b sin^q(pi t / T))` with a caller-chosen `alpha_M`.
    pub fn phenomenological(a: f64, b: f64, q: f64, alpha_m: f64, duration: f64) -> Result<Self, ControlError> {
        if !(a >= 0.0 && b >= 0.0 && a + b > 0.0 && q > 0.0 && q.is_finite() && (a + b).is_finite()) {
            return Err(ControlError::InvalidShapeParameters);
        }
        check_amplitude(alpha_m)?;
        check_duration(duration)?;
        Ok(Self {
            kind: PulseKind::Phenomenological { a, b, q },
            amplitude: alpha_m,
            duration,
        })
    }

    pub fn kind(&self) -> &PulseKind {
        &self.kind
    }

    /// `alpha_M`.
    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    /// `T`.
    pub fn duration(&self) -> f64 {
        self.duration
    }

    /// `alpha(t)`, periodically continued outside `[0, T]`.
    pub fn alpha(&self, t: f64) -> f64 {
        let period = self.duration;
        match &self.kind {
            PulseKind::PowerSine { p } => match p {
                0 => self.amplitude,
                1 => self.amplitude * (PI * t / period).sin().abs(),
                _ => self.amplitude * (PI * t / period).sin().powi(2),
            },
            PulseKind::Phenomenological { a, b, q } => {
                self.amplitude * (a + b * (PI * t / period).sin().abs().powf(*q))
            }
            PulseKind::Tabulated { samples, grid_step } | PulseKind::MarkovOptimal { samples, grid_step } => {
                let r = t.rem_euclid(period);
                // keep t = T on the last sample rather than wrapping to 0
                let r = if r == 0.0 && t > 0.0 { period } else { r };
                crate::quad::lerp_uniform(samples, *grid_step, r)
            }
        }
    }

    /// `alpha` on `intervals + 1` uniform nodes spanning `[0, T]`.
    pub fn sample(&self, intervals: usize) -> Vec<f64> {
        let h = self.duration / intervals as f64;
        (0..=intervals).map(|i| self.alpha(i as f64 * h)).collect()
    }

    /// `int_0^t alpha` for `t` in `[0, T]`.
    fn area(&self, t: f64) -> f64 {
        let period = self.duration;
        match &self.kind {
            PulseKind::PowerSine { p } => {
                let a = self.amplitude;
                match p {
                    0 => a * t,
                    1 => a * period / PI * (1.0 - (PI * t / period).cos()),
                    _ => a * (0.5 * t - period / (4.0 * PI) * (2.0 * PI * t / period).sin()),
                }
            }
            PulseKind::Phenomenological { a, b, q } => {
                let x = PI * t / period;
                self.amplitude * (a * t + b * period / PI * sine_power_integral(*q, x))
            }
            PulseKind::Tabulated { samples, grid_step } | PulseKind::MarkovOptimal { samples, grid_step } => {
                // exact integral of the piecewise-linear interpolant
                let h = *grid_step;
                let s = t / h;
                let full = (s.floor() as usize).min(samples.len() - 1);
                let mut acc = 0.0;
                for i in 0..full {
                    acc += 0.5 * h * (samples[i] + samples[i + 1]);
                }
                if full < samples.len() - 1 {
                    let frac = s - full as f64;
                    let y0 = samples[full];
                    let y1 = samples[full + 1];
                    acc += h * frac * (y0 + 0.5 * frac * (y1 - y0));
                }
                acc
            }
        }
    }

    /// `phi(t) = J_z int_0^t alpha`, for `t` in `[0, T]`.
    pub fn accumulated_phase(&self, j_z: f64, t: f64) -> Result<f64, ControlError> {
        check_coupling(j_z)?;
        if !(t >= 0.0 && t <= self.duration * (1.0 + 1e-12)) {
            return Err(ControlError::OutsideWindow {
                t,
                duration: self.duration,
            });
        }
        Ok(j_z * self.area(t.min(self.duration)))
    }

    /// Phase at arbitrary `t >= 0`, following the periodic continuation.
    pub(crate) fn phase_extended(&self, j_z: f64, t: f64) -> f64 {
        let periods = (t / self.duration).floor();
        let rest = t - periods * self.duration;
        j_z * (periods * self.area(self.duration) + self.area(rest.min(self.duration)))
    }

    pub fn check_transfer_ready(&self, j_z: f64) -> Result<(), ControlError> {
        let phase = self.accumulated_phase(j_z, self.duration)?;
        if (phase - TRANSFER_PHASE).abs() < PHASE_TOL {
            Ok(())
        } else {
            Err(ControlError::NotTransferReady { phase })
        }
    }
}

/// Transfer-ready `alpha_M sin^p(pi t / T)` with
/// `alpha_M = c_p pi / (sqrt(2) J_z T)`.
pub fn make_power_sine(p: u32, duration: f64, j_z: f64) -> Result<ModulationShape, ControlError> {
    if p > 2 {
        return Err(ControlError::UnsupportedPower(p));
    }
    check_duration(duration)?;
    check_coupling(j_z)?;
    let c = match p {
        0 => 1.0,
        1 => 0.5 * PI,
        _ => 2.0,
    };
    ModulationShape::power_sine(p, c * TRANSFER_PHASE / (j_z * duration), duration)
}

/// Duration at which the transfer-ready `sin^p` pulse peaks at `alpha_M`.
pub fn power_sine_duration(p: u32, alpha_m: f64, j_z: f64) -> Result<f64, ControlError> {
    if p > 2 {
        return Err(ControlError::UnsupportedPower(p));
    }
    check_coupling(j_z)?;
    if !(alpha_m > 0.0 && alpha_m.is_finite()) {
        return Err(ControlError::InvalidAmplitude(alpha_m));
    }
    Ok(power_sine_constant(p as f64) * TRANSFER_PHASE / (j_z * alpha_m))
}

/// Transfer-ready `alpha_M (a + b sin^q)` for the given shape parameters.
pub fn make_phenomenological(a: f64, b: f64, q: f64, duration: f64, j_z: f64) -> Result<ModulationShape, ControlError> {
    check_duration(duration)?;
    check_coupling(j_z)?;
    ModulationShape::phenomenological(a, b, q, 1.0, duration)?;
    let mean = a + b * mean_sine_power(q);
    ModulationShape::phenomenological(a, b, q, TRANSFER_PHASE / (j_z * duration * mean), duration)
}

/// `E = J_z^2 int_0^T alpha^2`.
pub fn pulse_energy(pulse: &ModulationShape, j_z: f64) -> f64 {
    let t = pulse.duration;
    let a2 = pulse.amplitude * pulse.amplitude;
    let integral = match &pulse.kind {
        PulseKind::PowerSine { p } => {
            a2 * t
                * match p {
                    0 => 1.0,
                    1 => 0.5,
                    _ => 0.375,
                }
        }
        PulseKind::Phenomenological { a, b, q } => {
            a2 * t * (a * a + 2.0 * a * b * mean_sine_power(*q) + b * b * mean_sine_power(2.0 * q))
        }
        PulseKind::Tabulated { samples, grid_step } | PulseKind::MarkovOptimal { samples, grid_step } => samples
            .windows(2)
            .map(|w| grid_step / 3.0 * (w[0] * w[0] + w[0] * w[1] + w[1] * w[1]))
            .sum(),
    };
    j_z * j_z * integral
}

/// Settings for [`solve_euler_lagrange`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    /// Upper bound on [`pulse_energy`]; `lagrange_multiplier` is raised until
    /// it holds.
    pub energy_budget: Option<f64>,
    pub lagrange_multiplier: f64,
    pub max_iterations: usize,
    pub convergence_tol: f64,
    /// Number of grid intervals on `[0, T]`.
    pub grid_points: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            energy_budget: None,
            lagrange_multiplier: 0.0,
            max_iterations: 4000,
            convergence_tol: 1e-6,
            grid_points: 1024,
        }
    }
}

impl OptimizerConfig {
    /// Default grid density: 1024 intervals up to `T J = 1000`, growing
    /// linearly beyond.
    pub fn for_duration(duration: f64) -> Self {
        let grid_points = if duration <= 1000.0 {
            1024
        } else {
            (1024.0 * duration / 1000.0).ceil() as usize
        };
        Self {
            grid_points,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        if self.grid_points < 64 {
            return Err(ControlError::InvalidConfig("grid_points must be >= 64".into()));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(ControlError::InvalidConfig("convergence_tol must be > 0".into()));
        }
        if !(self.lagrange_multiplier >= 0.0 && self.lagrange_multiplier.is_finite()) {
            return Err(ControlError::InvalidConfig("lagrange_multiplier must be finite and >= 0".into()));
        }
        if let Some(e) = self.energy_budget {
            if !(e > 0.0 && e.is_finite()) {
                return Err(ControlError::InvalidConfig("energy_budget must be positive".into()));
            }
        }
        if self.max_iterations == 0 {
            return Err(ControlError::InvalidConfig("max_iterations must be >= 1".into()));
        }
        Ok(())
    }
}
