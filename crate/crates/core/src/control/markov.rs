//! Optimum for a delta-correlated bath, where only `Phi_+(0)` and
//! `Phi_-(0)` enter, and the phenomenological fit of its shape.

use super::{ControlError, ModulationShape, PulseKind, TRANSFER_PHASE};
use crate::quad::{gauss_legendre, trapezoid_weights, MonotoneCubic};
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, SQRT_2};

/// Tabulated optimum for a delta-correlated bath.
///
/// The optimal phase profile satisfies `t(phi) = T G(phi) / G(pi/sqrt 2)`
/// with `G(phi) = int_0^phi g` and
/// `g = sqrt(2 (Phi_+ cos^2(sqrt 2 phi) + Phi_- - lambda J_z^2))`;
/// the map is inverted by monotone cubic interpolation and
/// `alpha = phi' / J_z` is sampled on `grid` intervals.
pub fn solve_markov_optimal(
    phi_plus_0: f64,
    phi_minus_0: f64,
    lambda: f64,
    duration: f64,
    j_z: f64,
    grid: usize,
) -> Result<ModulationShape, ControlError> {
    super::check_duration(duration)?;
    super::check_coupling(j_z)?;
    if !(phi_plus_0 >= 0.0 && phi_minus_0 >= 0.0 && phi_plus_0.is_finite() && phi_minus_0.is_finite()) {
        return Err(ControlError::InvalidConfig("bath weights must be finite and >= 0".into()));
    }
    if !lambda.is_finite() {
        return Err(ControlError::InvalidConfig("lambda must be finite".into()));
    }
    if grid < 2 {
        return Err(ControlError::InvalidConfig("grid must have at least two intervals".into()));
    }
    // cos^2 reaches 0 inside the range, so the radicand bottoms out there
    let min_radicand = 2.0 * (phi_minus_0 - lambda * j_z * j_z);
    if min_radicand <= 0.0 {
        return Err(ControlError::InfeasibleLambda { min_radicand });
    }
    let g = |phi: f64| {
        let c = (SQRT_2 * phi).cos();
        (2.0 * (phi_plus_0 * c * c + phi_minus_0 - lambda * j_z * j_z)).sqrt()
    };

    let m = (4 * grid).max(4096);
    let dphi = TRANSFER_PHASE / m as f64;
    let phis: Vec<f64> = (0..=m).map(|j| j as f64 * dphi).collect();
    let mut cumulative = vec![0.0; m + 1];
    for j in 0..m {
        cumulative[j + 1] = cumulative[j] + gauss_legendre(g, phis[j], phis[j + 1], 1);
    }
    let total = cumulative[m];
    let times: Vec<f64> = cumulative.iter().map(|c| duration * c / total).collect();
    let phase_of_time = MonotoneCubic::new(times, phis);

    let h = duration / grid as f64;
    let mut samples: Vec<f64> = (0..=grid)
        .map(|i| total / (duration * j_z * g(phase_of_time.eval(i as f64 * h))))
        .collect();
    let area: f64 = trapezoid_weights(grid, h).iter().zip(&samples).map(|(w, a)| w * a).sum();
    let scale = TRANSFER_PHASE / (j_z * area);
    for s in &mut samples {
        *s *= scale;
    }
    ModulationShape::tabulated_inner(samples, None, duration, true)
}

/// `zeta = int_0^T alpha^2 (Phi_+(0) cos^2(sqrt 2 phi) + Phi_-(0)) dt`, the
/// infidelity when both bath correlations are delta functions.
pub fn zeta_markovian(pulse: &ModulationShape, phi_plus_0: f64, phi_minus_0: f64, j_z: f64) -> f64 {
    let integrand = |t: f64| {
        let a = pulse.alpha(t);
        let c = (SQRT_2 * pulse.phase_extended(j_z, t)).cos();
        a * a * (phi_plus_0 * c * c + phi_minus_0)
    };
    let panels = match pulse.kind() {
        PulseKind::Tabulated { samples, .. } | PulseKind::MarkovOptimal { samples, .. } => samples.len() - 1,
        _ => 256,
    };
    gauss_legendre(integrand, 0.0, pulse.duration(), panels)
}

/// Least-squares fit `alpha(t) / alpha_ref ~ a + b sin^q(pi t / T)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhenomenologicalFit {
    pub a: f64,
    pub b: f64,
    pub q: f64,
    /// RMS residual divided by the RMS of the fitted data.
    pub relative_residual: f64,
}

/// Fits the phenomenological form to `pulse`, with amplitudes measured in
/// units of `alpha_ref`. `q` is scanned on `[0.5, 10]` and refined by golden
/// section; `a` and `b` are linear least squares at each `q`.
pub fn fit_phenomenological(pulse: &ModulationShape, alpha_ref: f64) -> PhenomenologicalFit {
    let n = 1000;
    let h = pulse.duration() / n as f64;
    let xs: Vec<f64> = (0..=n).map(|i| (PI * i as f64 * h / pulse.duration()).sin().abs()).collect();
    let ys: Vec<f64> = (0..=n).map(|i| pulse.alpha(i as f64 * h) / alpha_ref).collect();

    let solve = |q: f64| -> (f64, f64, f64) {
        let (mut s1, mut sx, mut sxx, mut sy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (x, y) in xs.iter().zip(&ys) {
            let b = x.powf(q);
            s1 += 1.0;
            sx += b;
            sxx += b * b;
            sy += y;
            sxy += b * y;
        }
        let det = s1 * sxx - sx * sx;
        let a = (sy * sxx - sx * sxy) / det;
        let b = (s1 * sxy - sx * sy) / det;
        let sse: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - a - b * x.powf(q)).powi(2)).sum();
        (a, b, sse)
    };

    let mut best_q = 0.5;
    let mut best = f64::INFINITY;
    let step = 0.05;
    let mut q = 0.5;
    while q <= 10.0 + 1e-12 {
        let sse = solve(q).2;
        if sse < best {
            best = sse;
            best_q = q;
        }
        q += step;
    }
    let (mut lo, mut hi) = ((best_q - step).max(0.05), best_q + step);
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..60 {
        let m1 = hi - ratio * (hi - lo);
        let m2 = lo + ratio * (hi - lo);
        if solve(m1).2 < solve(m2).2 {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let q = 0.5 * (lo + hi);
    let (a, b, sse) = solve(q);
    let rms_y = (ys.iter().map(|y| y * y).sum::<f64>() / ys.len() as f64).sqrt();
    PhenomenologicalFit {
        a,
        b,
        q,
        relative_residual: (sse / ys.len() as f64).sqrt() / rms_y,
    }
}
