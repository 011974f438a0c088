//! Numerical optimum of `zeta + lambda E` for a general (non-Markovian) bath.
//!
//! The pulse is discretized as `u_i = alpha(t_i)` on a uniform grid with
//! trapezoid weights `W`. On that grid
//!
//! ```text
//! zeta(u) = 1/2 sum_ij W_i W_j u_i u_j [c_i c_j R_+(i-j) + R_-(i-j)]
//! ```
//!
//! with `R_± = Re Phi_±(|t_i - t_j|)` and `c_i = cos(sqrt 2 phi_i)`, where
//! `phi` is the cumulative trapezoid of `J_z u`. Stationarity of this
//! functional under `u >= 0` and `J_z sum W u = pi / sqrt 2` is the discrete
//! Euler-Lagrange condition. It is reached by a projected-gradient fixed
//! point iteration with Nesterov momentum, backtracking on the step and
//! monotone acceptance, started from the `sin` profile. Convolutions with
//! the Toeplitz kernels go through the FFT.

use super::{make_power_sine, pulse_energy, ControlError, ModulationShape, OptimizerConfig, TRANSFER_PHASE};
use crate::bathspec::CorrelationProvider;
use crate::quad::trapezoid_weights;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::f64::consts::SQRT_2;
use std::sync::Arc;

/// Result of [`solve_euler_lagrange`].
#[derive(Debug, Clone, PartialEq)]
pub struct EulerLagrangeSolution {
    pub pulse: ModulationShape,
    /// `zeta` on the optimizer's own grid.
    pub zeta: f64,
    /// `zeta` of the starting `sin` profile on the same grid.
    pub initial_zeta: f64,
    pub energy: f64,
    pub lagrange_multiplier: f64,
    /// Relative norm of the projected-gradient step at the returned iterate.
    pub residual: f64,
    pub iterations: usize,
}

/// Symmetric Toeplitz matrix `R(|i - j|)` applied by circulant embedding.
struct Toeplitz {
    len: usize,
    n: usize,
    spectrum: Vec<Complex64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Toeplitz {
    fn new(column: &[f64], planner: &mut FftPlanner<f64>) -> Self {
        let n = column.len();
        let len = (2 * n).next_power_of_two();
        let forward = planner.plan_fft_forward(len);
        let inverse = planner.plan_fft_inverse(len);
        let mut spectrum = vec![Complex64::new(0.0, 0.0); len];
        spectrum[0].re = column[0];
        for m in 1..n {
            spectrum[m].re = column[m];
            spectrum[len - m].re = column[m];
        }
        forward.process(&mut spectrum);
        Self {
            len,
            n,
            spectrum,
            forward,
            inverse,
        }
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.len];
        for (b, &v) in buf.iter_mut().zip(x) {
            b.re = v;
        }
        self.forward.process(&mut buf);
        for (b, s) in buf.iter_mut().zip(&self.spectrum) {
            *b *= s;
        }
        self.inverse.process(&mut buf);
        let scale = 1.0 / self.len as f64;
        for (o, b) in out.iter_mut().zip(&buf[..self.n]) {
            *o = b.re * scale;
        }
    }
}

struct Problem {
    h: f64,
    j_z: f64,
    lambda: f64,
    weights: Vec<f64>,
    target: f64,
    plus: Toeplitz,
    minus: Toeplitz,
}

impl Problem {
    fn phases(&self, u: &[f64]) -> Vec<f64> {
        let mut phi = vec![0.0; u.len()];
        for i in 1..u.len() {
            phi[i] = phi[i - 1] + 0.5 * self.j_z * self.h * (u[i - 1] + u[i]);
        }
        phi
    }

    /// `(zeta, energy)` and optionally the gradient of `zeta + lambda E`.
    fn evaluate(&self, u: &[f64], grad: Option<&mut [f64]>) -> (f64, f64) {
        let n = u.len();
        let phi = self.phases(u);
        let c: Vec<f64> = phi.iter().map(|p| (SQRT_2 * p).cos()).collect();
        let x: Vec<f64> = (0..n).map(|i| self.weights[i] * u[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| x[i] * c[i]).collect();
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; n];
        self.minus.apply(&x, &mut a);
        self.plus.apply(&y, &mut b);
        let zeta = 0.5 * (0..n).map(|i| x[i] * a[i] + y[i] * b[i]).sum::<f64>();
        let energy = self.j_z * self.j_z * (0..n).map(|i| self.weights[i] * u[i] * u[i]).sum::<f64>();

        if let Some(g) = grad {
            // dependence of c on u through the phase: q_i = d zeta / d phi_i
            let q: Vec<f64> = (0..n)
                .map(|i| -SQRT_2 * (SQRT_2 * phi[i]).sin() * x[i] * b[i])
                .collect();
            // transpose of the cumulative trapezoid
            let mut suffix = 0.0;
            let mut through_phase = vec![0.0; n];
            for m in (0..n).rev() {
                let half = if m >= 1 { 0.5 * q[m] } else { 0.0 };
                through_phase[m] = self.j_z * self.h * (if m == 0 { 0.5 * suffix } else { suffix + half });
                suffix += q[m];
            }
            for m in 0..n {
                g[m] = self.weights[m] * (a[m] + c[m] * b[m])
                    + through_phase[m]
                    + 2.0 * self.lambda * self.j_z * self.j_z * self.weights[m] * u[m];
            }
        }
        (zeta, energy)
    }

    fn objective(&self, u: &[f64]) -> f64 {
        let (z, e) = self.evaluate(u, None);
        z + self.lambda * e
    }

    /// Euclidean projection onto `{u >= 0, sum W u = target}`.
    fn project(&self, v: &[f64], out: &mut [f64]) {
        let w = &self.weights;
        let mass = |mu: f64| -> f64 { v.iter().zip(w).map(|(vi, wi)| wi * (vi - mu * wi).max(0.0)).sum() };
        let w2: f64 = w.iter().map(|x| x * x).sum();
        let wv: f64 = v.iter().zip(w).map(|(a, b)| a * b).sum();
        let mut lo = (wv - self.target) / w2;
        let mut hi = v.iter().zip(w).map(|(vi, wi)| vi / wi).fold(f64::NEG_INFINITY, f64::max);
        if mass(lo) < self.target {
            // cannot happen: clipping only adds mass; guard against rounding
            lo -= 1.0;
        }
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if mass(mid) > self.target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        // exact multiplier on the identified active set
        let mu0 = 0.5 * (lo + hi);
        let (mut sw2, mut swv) = (0.0, 0.0);
        for (vi, wi) in v.iter().zip(w) {
            if vi - mu0 * wi > 0.0 {
                sw2 += wi * wi;
                swv += wi * vi;
            }
        }
        let mu = if sw2 > 0.0 { (swv - self.target) / sw2 } else { mu0 };
        for ((o, vi), wi) in out.iter_mut().zip(v).zip(w) {
            *o = (vi - mu * wi).max(0.0);
        }
    }

    fn weighted_norm(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.weights).map(|(a, w)| w * a * a).sum::<f64>().sqrt()
    }

    /// Largest eigenvalue of the frozen-phase quadratic form, by power
    /// iteration; the initial inverse step.
    fn curvature(&self, u: &[f64]) -> f64 {
        let n = u.len();
        let c: Vec<f64> = self.phases(u).iter().map(|p| (SQRT_2 * p).cos()).collect();
        let mut v = vec![1.0 / (n as f64).sqrt(); n];
        let mut lambda = 0.0;
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; n];
        for _ in 0..30 {
            let x: Vec<f64> = (0..n).map(|i| self.weights[i] * v[i]).collect();
            let y: Vec<f64> = (0..n).map(|i| x[i] * c[i]).collect();
            self.minus.apply(&x, &mut a);
            self.plus.apply(&y, &mut b);
            let av: Vec<f64> = (0..n)
                .map(|i| self.weights[i] * (a[i] + c[i] * b[i]) + 2.0 * self.lambda * self.j_z * self.j_z * self.weights[i] * v[i])
                .collect();
            let norm = av.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            lambda = norm;
            v = av.into_iter().map(|x| x / norm).collect();
        }
        lambda
    }
}

struct Run {
    u: Vec<f64>,
    zeta: f64,
    energy: f64,
    residual: f64,
    iterations: usize,
    converged: bool,
}

fn minimize(problem: &Problem, start: &[f64], config: &OptimizerConfig) -> Run {
    let n = start.len();
    let mut u = vec![0.0; n];
    problem.project(start, &mut u);
    let mut best = problem.objective(&u);
    let mut lip = problem.curvature(&u).max(1e-300);
    let mut grad = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut shifted = vec![0.0; n];
    let mut y = u.clone();
    let mut momentum = 1.0f64;

    let residual_at = |u: &[f64], grad: &mut [f64], lip: f64, scratch: &mut [f64], shifted: &mut [f64]| -> f64 {
        problem.evaluate(u, Some(grad));
        for i in 0..n {
            shifted[i] = u[i] - grad[i] / lip;
        }
        problem.project(shifted, scratch);
        let diff: Vec<f64> = (0..n).map(|i| scratch[i] - u[i]).collect();
        problem.weighted_norm(&diff) / problem.weighted_norm(u).max(1e-300)
    };

    let mut residual = residual_at(&u, &mut grad, lip, &mut trial, &mut shifted);
    let mut iterations = 0;
    while residual > config.convergence_tol && iterations < config.max_iterations {
        iterations += 1;
        let (zy, ey) = problem.evaluate(&y, Some(&mut grad));
        let fy = zy + problem.lambda * ey;
        // backtracking: halve the step until the quadratic model bounds it
        let mut accepted_value;
        loop {
            for i in 0..n {
                shifted[i] = y[i] - grad[i] / lip;
            }
            problem.project(&shifted, &mut trial);
            let mut lin = 0.0;
            let mut sq = 0.0;
            for i in 0..n {
                let d = trial[i] - y[i];
                lin += grad[i] * d;
                sq += d * d;
            }
            accepted_value = problem.objective(&trial);
            if accepted_value <= fy + lin + 0.5 * lip * sq + 1e-15 * fy.abs() || lip > 1e300 {
                break;
            }
            lip *= 2.0;
        }
        let next_momentum = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        if accepted_value < best {
            // momentum step from the accepted point
            let beta = (momentum - 1.0) / next_momentum;
            for i in 0..n {
                let prev = u[i];
                u[i] = trial[i];
                y[i] = u[i] + beta * (u[i] - prev);
            }
            problem.project(&y.clone(), &mut y);
            best = accepted_value;
            momentum = next_momentum;
        } else {
            // restart from the best point with no momentum
            y.copy_from_slice(&u);
            momentum = 1.0;
        }
        // allow the step to grow back
        lip *= 0.9;
        if iterations % 10 == 0 || momentum == 1.0 {
            residual = residual_at(&u, &mut grad, lip, &mut trial, &mut shifted);
        }
    }
    residual = residual_at(&u, &mut grad, lip, &mut trial, &mut shifted);
    let (zeta, energy) = problem.evaluate(&u, None);
    Run {
        u,
        zeta,
        energy,
        residual,
        iterations,
        converged: residual <= config.convergence_tol,
    }
}

/// Minimizes `zeta + lambda E` over non-negative pulses with
/// `phi(T) = pi / sqrt(2)`, starting from the `sin` profile.
///
/// With an `energy_budget` the multiplier is raised from
/// `config.lagrange_multiplier` by doubling and bisection until the pulse
/// energy fits. A run that stops at `max_iterations` above
/// `convergence_tol` is reported as [`ControlError::NotConverged`] carrying
/// the best iterate.
pub fn solve_euler_lagrange(
    plus: &dyn CorrelationProvider,
    minus: &dyn CorrelationProvider,
    config: &OptimizerConfig,
    duration: f64,
    j_z: f64,
) -> Result<EulerLagrangeSolution, ControlError> {
    config.validate()?;
    let start_pulse = make_power_sine(1, duration, j_z)?;
    let n = config.grid_points;
    let h = duration / n as f64;
    let rp: Vec<f64> = (0..=n).map(|m| plus.correlation(m as f64 * h).re).collect();
    let rm: Vec<f64> = (0..=n).map(|m| minus.correlation(m as f64 * h).re).collect();
    let mut planner = FftPlanner::new();
    let mut problem = Problem {
        h,
        j_z,
        lambda: config.lagrange_multiplier,
        weights: trapezoid_weights(n, h),
        target: TRANSFER_PHASE / j_z,
        plus: Toeplitz::new(&rp, &mut planner),
        minus: Toeplitz::new(&rm, &mut planner),
    };
    let start = start_pulse.sample(n);
    let mut scaled = vec![0.0; n + 1];
    problem.project(&start, &mut scaled);
    let initial_zeta = problem.evaluate(&scaled, None).0;

    let mut run = minimize(&problem, &start, config);
    if let Some(budget) = config.energy_budget {
        let minimum = TRANSFER_PHASE * TRANSFER_PHASE / duration;
        if budget < minimum * (1.0 - 1e-12) {
            return Err(ControlError::InfeasibleBudget { budget, minimum });
        }
        if run.energy > budget {
            let mut lo = problem.lambda;
            let mut hi = if lo > 0.0 { 2.0 * lo } else { 1.0 };
            loop {
                problem.lambda = hi;
                let r = minimize(&problem, &run.u, config);
                if r.energy <= budget || hi > 1e12 {
                    run = r;
                    break;
                }
                lo = hi;
                hi *= 4.0;
            }
            for _ in 0..30 {
                if (hi - lo) <= 1e-6 * hi {
                    break;
                }
                let mid = 0.5 * (lo + hi);
                problem.lambda = mid;
                let r = minimize(&problem, &run.u, config);
                if r.energy <= budget {
                    hi = mid;
                    run = r;
                } else {
                    lo = mid;
                }
            }
            problem.lambda = hi;
        }
    }

    let samples = run.u.clone();
    let mut pulse = ModulationShape::tabulated(samples, None, duration)?;
    let phase = pulse.accumulated_phase(j_z, duration)?;
    if (phase - TRANSFER_PHASE).abs() > 0.0 {
        let scale = TRANSFER_PHASE / phase;
        let rescaled: Vec<f64> = run.u.iter().map(|v| v * scale).collect();
        pulse = ModulationShape::tabulated(rescaled, None, duration)?;
    }
    let solution = EulerLagrangeSolution {
        energy: pulse_energy(&pulse, j_z),
        pulse,
        zeta: run.zeta,
        initial_zeta,
        lagrange_multiplier: problem.lambda,
        residual: run.residual,
        iterations: run.iterations,
    };
    if run.converged {
        Ok(solution)
    } else {
        Err(ControlError::NotConverged {
            iterations: run.iterations,
            residual: run.residual,
            best: Box::new(solution),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bathspec::{zeta_time_domain, BathCorrelation, BathPair, Parity, SpectralLine};
    use crate::chain::{diagonalize_channel, ChainSpec};

    fn problem_for(plus: &dyn CorrelationProvider, minus: &dyn CorrelationProvider, n: usize, t: f64, jz: f64, lambda: f64) -> Problem {
        let h = t / n as f64;
        let rp: Vec<f64> = (0..=n).map(|m| plus.correlation(m as f64 * h).re).collect();
        let rm: Vec<f64> = (0..=n).map(|m| minus.correlation(m as f64 * h).re).collect();
        let mut planner = FftPlanner::new();
        Problem {
            h,
            j_z: jz,
            lambda,
            weights: trapezoid_weights(n, h),
            target: TRANSFER_PHASE / jz,
            plus: Toeplitz::new(&rp, &mut planner),
            minus: Toeplitz::new(&rm, &mut planner),
        }
    }

    fn lines(v: &[(f64, f64)], parity: Parity) -> BathCorrelation {
        BathCorrelation::discrete(parity, v.iter().map(|&(omega, weight)| SpectralLine { omega, weight }).collect())
    }

    #[test]
    fn toeplitz_fft_matches_direct_product() {
        let col: Vec<f64> = (0..37).map(|m| (0.3 * m as f64).cos() / (1.0 + m as f64)).collect();
        let x: Vec<f64> = (0..37).map(|i| ((i * 7 % 11) as f64) - 5.0).collect();
        let t = Toeplitz::new(&col, &mut FftPlanner::new());
        let mut out = vec![0.0; 37];
        t.apply(&x, &mut out);
        for i in 0..37 {
            let direct: f64 = (0..37).map(|j| col[(i as isize - j as isize).unsigned_abs()] * x[j]).sum();
            assert!((out[i] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let plus = lines(&[(0.7, 0.05), (-1.3, 0.02)], Parity::Plus);
        let minus = lines(&[(1.1, 0.04), (-0.4, 0.03)], Parity::Minus);
        let n = 64;
        let prob = problem_for(&plus, &minus, n, 20.0, 0.3, 0.2);
        let u: Vec<f64> = (0..=n).map(|i| 0.2 + 0.1 * (i as f64 * 0.3).sin()).collect();
        let mut g = vec![0.0; n + 1];
        prob.evaluate(&u, Some(&mut g));
        for m in [0, 1, 17, 40, n] {
            let eps = 1e-6;
            let mut up = u.clone();
            up[m] += eps;
            let mut dn = u.clone();
            dn[m] -= eps;
            let fd = (prob.objective(&up) - prob.objective(&dn)) / (2.0 * eps);
            assert!((fd - g[m]).abs() < 1e-7 * g.iter().map(|x| x.abs()).fold(0.0, f64::max), "m = {m}: {fd} vs {}", g[m]);
        }
    }

    #[test]
    fn projection_hits_constraint() {
        let empty = lines(&[], Parity::Plus);
        let prob = problem_for(&empty, &empty, 100, 10.0, 0.5, 0.0);
        let v: Vec<f64> = (0..=100).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut out = vec![0.0; 101];
        prob.project(&v, &mut out);
        let mass: f64 = out.iter().zip(&prob.weights).map(|(a, b)| a * b).sum();
        assert!((mass - prob.target).abs() < 1e-12 * prob.target);
        assert!(out.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn empty_bath_keeps_starting_profile() {
        let empty = lines(&[], Parity::Plus);
        let jz = 0.25;
        let sol = solve_euler_lagrange(&empty, &empty, &OptimizerConfig::default(), 50.0, jz).unwrap();
        assert_eq!(sol.iterations, 0);
        let p1 = make_power_sine(1, 50.0, jz).unwrap();
        for i in 0..=100 {
            let t = 0.5 * i as f64;
            assert!((sol.pulse.alpha(t) - p1.alpha(t)).abs() < 1e-5 * p1.amplitude());
        }
        sol.pulse.check_transfer_ready(jz).unwrap();
    }

    #[test]
    fn never_worse_than_start_and_meets_boundary_conditions() {
        let spec = ChainSpec::uniform(9, 1.0).unwrap();
        let s = diagonalize_channel(&spec).unwrap();
        let baths = BathPair::from_split(&crate::chain::split_system_bath(&s));
        let jz = s.zero_mode_coupling;
        let config = OptimizerConfig {
            grid_points: 256,
            max_iterations: 300,
            ..OptimizerConfig::default()
        };
        let sol = match solve_euler_lagrange(&baths.plus, &baths.minus, &config, 40.0, jz) {
            Ok(s) => s,
            Err(ControlError::NotConverged { best, .. }) => *best,
            Err(e) => panic!("{e}"),
        };
        assert!(sol.zeta <= sol.initial_zeta);
        assert_eq!(sol.pulse.accumulated_phase(jz, 0.0).unwrap(), 0.0);
        sol.pulse.check_transfer_ready(jz).unwrap();
    }

    #[test]
    fn energy_budget_is_respected() {
        let spec = ChainSpec::uniform(9, 1.0).unwrap();
        let s = diagonalize_channel(&spec).unwrap();
        let baths = BathPair::from_split(&crate::chain::split_system_bath(&s));
        let jz = s.zero_mode_coupling;
        let t = 40.0;
        let e0 = TRANSFER_PHASE * TRANSFER_PHASE / t;
        let config = OptimizerConfig {
            grid_points: 128,
            max_iterations: 200,
            energy_budget: Some(1.2 * e0),
            convergence_tol: 1e-4,
            ..OptimizerConfig::default()
        };
        let sol = match solve_euler_lagrange(&baths.plus, &baths.minus, &config, t, jz) {
            Ok(s) => s,
            Err(ControlError::NotConverged { best, .. }) => *best,
            Err(e) => panic!("{e}"),
        };
        assert!(sol.energy <= 1.2 * e0 * (1.0 + 1e-6));
        let tight = OptimizerConfig {
            energy_budget: Some(0.9 * e0),
            ..config
        };
        assert!(matches!(
            solve_euler_lagrange(&baths.plus, &baths.minus, &tight, t, jz),
            Err(ControlError::InfeasibleBudget { .. })
        ));
    }

    #[test]
    fn non_convergence_is_reported_with_best_iterate() {
        let spec = ChainSpec::uniform(9, 1.0).unwrap();
        let s = diagonalize_channel(&spec).unwrap();
        let baths = BathPair::from_split(&crate::chain::split_system_bath(&s));
        let jz = s.zero_mode_coupling;
        let config = OptimizerConfig {
            grid_points: 128,
            max_iterations: 1,
            convergence_tol: 1e-14,
            ..OptimizerConfig::default()
        };
        match solve_euler_lagrange(&baths.plus, &baths.minus, &config, 40.0, jz) {
            Err(ControlError::NotConverged { iterations, residual, best }) => {
                assert_eq!(iterations, 1);
                assert!(residual > 1e-14);
                assert!(best.zeta <= best.initial_zeta);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn gapped_semicircle_optimum_beats_sine_family() {
        let spec = ChainSpec::uniform(29, 1.0).unwrap();
        let s = diagonalize_channel(&spec).unwrap();
        let baths = BathPair::semicircle_for(&spec, &s).unwrap();
        let jz = s.zero_mode_coupling;
        let t = 160.0;
        let sol = match solve_euler_lagrange(&baths.plus, &baths.minus, &OptimizerConfig::for_duration(t), t, jz) {
            Ok(s) => s,
            Err(ControlError::NotConverged { best, .. }) => *best,
            Err(e) => panic!("{e}"),
        };
        let best_sine = (0..=2)
            .map(|p| {
                let pulse = make_power_sine(p, t, jz).unwrap();
                zeta_time_domain(&pulse, &baths.plus, &baths.minus, jz).unwrap().value
            })
            .fold(f64::INFINITY, f64::min);
        let got = zeta_time_domain(&sol.pulse, &baths.plus, &baths.minus, jz).unwrap().value;
        assert!(got <= 1.05 * best_sine, "{got} vs {best_sine}");
    }
}
