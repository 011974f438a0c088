//! Spin-chain channel in the single-excitation sector.
//!
//! Sites are numbered `0..=N+1`: site `0` is the source qubit, `N+1` the
//! target, and `1..=N` the channel. Link `i` joins sites `i` and `i+1`, so
//! links `0` and `N` are the boundary links scaled by the control `alpha`.
//!
//! The hopping amplitude on link `i` is exactly `J_i`, which makes a
//! uniform channel's spectrum `2 J cos(k pi / (N+1))`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChainError {
    #[error("channel must contain at least one site")]
    EmptyChannel,
    #[error("expected {expected} internal couplings, got {got}")]
    CouplingCount { expected: usize, got: usize },
    #[error("coupling on link {link} must be positive and finite, got {value}")]
    NonPositiveCoupling { link: usize, value: f64 },
    #[error("boundary control alpha must be finite and >= 0, got {0}")]
    InvalidAlpha(f64),
    #[error("expected {expected} coupling deltas for {targets:?}, got {got}")]
    DeltaCount {
        targets: LinkTargets,
        expected: usize,
        got: usize,
    },
    #[error("coupling delta {value} on link {link} is not finite or makes the coupling non-positive")]
    InvalidDelta { link: usize, value: f64 },
    #[error("chain is not mirror symmetric: link {link} deviates by {deviation:e}")]
    NotMirrorSymmetric { link: usize, deviation: f64 },
    #[error("channel length N = {0} is even, so there is no zero-energy mode")]
    EvenChannel(usize),
    #[error("eigenvalues {k} and {next} are (near) degenerate: gap {gap:e}", next = k + 1)]
    Degenerate { k: usize, gap: f64 },
    #[error("eigenvector {k} violates the alternating parity rule by {deviation:e}")]
    ParityViolation { k: usize, deviation: f64 },
    #[error("central eigenvalue {energy:e} is not zero within tolerance")]
    ZeroModeMissing { energy: f64 },
}

/// Geometry of the channel: `N`, internal couplings `J_1..J_{N-1}` and the
/// boundary couplings `(J_0, J_N)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ChainSpecRepr", into = "ChainSpecRepr")]
pub struct ChainSpec {
    n_channel: usize,
    couplings: Vec<f64>,
    boundary_couplings: (f64, f64),
}

#[derive(Serialize, Deserialize)]
struct ChainSpecRepr {
    n_channel: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    couplings: Option<Vec<f64>>,
    #[serde(rename = "uniform_J", default, skip_serializing_if = "Option::is_none")]
    uniform_j: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    boundary_couplings: Option<[f64; 2]>,
}

impl TryFrom<ChainSpecRepr> for ChainSpec {
    type Error = String;

    fn try_from(r: ChainSpecRepr) -> Result<Self, Self::Error> {
        let n = r.n_channel;
        let couplings = match (r.couplings, r.uniform_j) {
            (Some(c), None) => c,
            (None, Some(j)) => vec![j; n.saturating_sub(1)],
            (Some(_), Some(_)) => return Err("give either `couplings` or `uniform_J`, not both".into()),
            (None, None) => return Err("missing `couplings` or `uniform_J`".into()),
        };
        let boundary = match (r.boundary_couplings, r.uniform_j) {
            (Some([a, b]), _) => (a, b),
            (None, Some(j)) => (j, j),
            (None, None) => return Err("missing `boundary_couplings`".into()),
        };
        ChainSpec::new(n, couplings, boundary).map_err(|e| e.to_string())
    }
}

impl From<ChainSpec> for ChainSpecRepr {
    fn from(s: ChainSpec) -> Self {
        Self {
            n_channel: s.n_channel,
            couplings: Some(s.couplings),
            uniform_j: None,
            boundary_couplings: Some([s.boundary_couplings.0, s.boundary_couplings.1]),
        }
    }
}

impl ChainSpec {
    pub fn new(n_channel: usize, couplings: Vec<f64>, boundary_couplings: (f64, f64)) -> Result<Self, ChainError> {
        if n_channel == 0 {
            return Err(ChainError::EmptyChannel);
        }
        if couplings.len() != n_channel - 1 {
            return Err(ChainError::CouplingCount {
                expected: n_channel - 1,
                got: couplings.len(),
            });
        }
        let check = |link: usize, value: f64| {
            if value > 0.0 && value.is_finite() {
                Ok(())
            } else {
                Err(ChainError::NonPositiveCoupling { link, value })
            }
        };
        check(0, boundary_couplings.0)?;
        check(n_channel, boundary_couplings.1)?;
        for (i, &c) in couplings.iter().enumerate() {
            check(i + 1, c)?;
        }
        Ok(Self {
            n_channel,
            couplings,
            boundary_couplings,
        })
    }

    /// All couplings, boundary included, equal to `j`.
    pub fn uniform(n_channel: usize, j: f64) -> Result<Self, ChainError> {
        Self::new(n_channel, vec![j; n_channel.saturating_sub(1)], (j, j))
    }

    pub fn n_channel(&self) -> usize {
        self.n_channel
    }

    /// Total number of sites, `N + 2`.
    pub fn n_sites(&self) -> usize {
        self.n_channel + 2
    }

    pub fn couplings(&self) -> &[f64] {
        &self.couplings
    }

    pub fn boundary_couplings(&self) -> (f64, f64) {
        self.boundary_couplings
    }

    /// Coupling on link `i` for `i` in `0..=N`.
    pub fn link(&self, i: usize) -> f64 {
        if i == 0 {
            self.boundary_couplings.0
        } else if i == self.n_channel {
            self.boundary_couplings.1
        } else {
            self.couplings[i - 1]
        }
    }

    /// Largest coupling; the energy scale for relative tolerances.
    pub fn energy_scale(&self) -> f64 {
        (0..=self.n_channel).map(|i| self.link(i)).fold(0.0, f64::max)
    }

    /// Checks `J_i = J_{N-i}` for every link, boundary links included.
    pub fn check_mirror_symmetry(&self, tol: f64) -> Result<(), ChainError> {
        let n = self.n_channel;
        let scale = self.energy_scale();
        for i in 0..=n / 2 {
            let deviation = (self.link(i) - self.link(n - i)).abs();
            if deviation > tol * scale {
                return Err(ChainError::NotMirrorSymmetric { link: i, deviation });
            }
        }
        Ok(())
    }

    /// Zero-mode index `z = (N+1)/2` (1-based) when `N` is odd.
    pub fn zero_mode_index(&self) -> Option<usize> {
        (self.n_channel % 2 == 1).then(|| (self.n_channel + 1) / 2)
    }
}

/// Which couplings carry off-diagonal noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkTargets {
    /// `J_1..J_{N-1}`.
    #[default]
    InternalOnly,
    /// `J_0..J_N`: internal plus both boundary links.
    InternalPlusBoundary,
    /// `J_1..J_N`: every link except the source one, so the target boundary
    /// link is noisy too.
    ExceptSource,
}

impl LinkTargets {
    pub fn link_count(self, n_channel: usize) -> usize {
        match self {
            LinkTargets::InternalOnly => n_channel - 1,
            LinkTargets::InternalPlusBoundary => n_channel + 1,
            LinkTargets::ExceptSource => n_channel,
        }
    }

    /// Link index (`0..=N`) of the `position`-th noisy coupling.
    pub fn link_index(self, position: usize) -> usize {
        match self {
            LinkTargets::InternalOnly | LinkTargets::ExceptSource => position + 1,
            LinkTargets::InternalPlusBoundary => position,
        }
    }
}

/// Fractional coupling perturbations `J_i -> J_i (1 + delta_i)`.
#[derive(Debug, Clone, Copy)]
pub struct LinkDeltas<'a> {
    pub targets: LinkTargets,
    pub values: &'a [f64],
}

/// Real symmetric tridiagonal matrix stored as diagonal and off-diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTridiagonal {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl SymTridiagonal {
    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.diag[i];
        }
        for (i, &v) in self.off.iter().enumerate() {
            m[(i, i + 1)] = v;
            m[(i + 1, i)] = v;
        }
        m
    }
}

/// Hopping amplitudes of all `N+1` links for a given control and noise.
pub(crate) fn link_amplitudes(spec: &ChainSpec, alpha: f64, deltas: Option<LinkDeltas<'_>>, out: &mut [f64]) -> Result<(), ChainError> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(ChainError::InvalidAlpha(alpha));
    }
    let n = spec.n_channel;
    debug_assert_eq!(out.len(), n + 1);
    for (i, o) in out.iter_mut().enumerate() {
        *o = spec.link(i);
    }
    if let Some(d) = deltas {
        let expected = d.targets.link_count(n);
        if d.values.len() != expected {
            return Err(ChainError::DeltaCount {
                targets: d.targets,
                expected,
                got: d.values.len(),
            });
        }
        for (pos, &v) in d.values.iter().enumerate() {
            let link = d.targets.link_index(pos);
            if !(v.is_finite() && v > -1.0) {
                return Err(ChainError::InvalidDelta { link, value: v });
            }
            out[link] *= 1.0 + v;
        }
    }
    out[0] *= alpha;
    out[n] *= alpha;
    Ok(())
}

/// Tridiagonal single-excitation Hamiltonian on all `N+2` sites.
pub fn build_single_excitation_hamiltonian(
    spec: &ChainSpec,
    alpha: f64,
    deltas: Option<LinkDeltas<'_>>,
) -> Result<SymTridiagonal, ChainError> {
    let mut off = vec![0.0; spec.n_channel + 1];
    link_amplitudes(spec, alpha, deltas, &mut off)?;
    Ok(SymTridiagonal {
        diag: vec![0.0; spec.n_sites()],
        off,
    })
}

/// Relative tolerance (in units of the largest coupling) for the symmetry,
/// degeneracy, parity and zero-mode checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralTolerance(pub f64);

impl Default for SpectralTolerance {
    fn default() -> Self {
        SpectralTolerance(1e-10)
    }
}

/// Eigenstructure of the channel block (sites `1..=N`).
#[derive(Debug, Clone)]
pub struct BathSpectrum {
    /// `omega_k`, strictly increasing.
    pub eigenvalues: Vec<f64>,
    /// Column `k-1` holds `<j|omega_k>` for `j = 1..=N`, with `<1|omega_k> >= 0`.
    pub eigenvectors: DMatrix<f64>,
    /// `+1` for odd `k`, `-1` for even `k` (1-based).
    pub parities: Vec<i8>,
    /// `J_0 <1|omega_k>`.
    pub eff_couplings: Vec<f64>,
    /// 1-based `z`.
    pub zero_mode_index: usize,
    pub zero_mode_coupling: f64,
}

impl BathSpectrum {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }
}

pub fn diagonalize_channel(spec: &ChainSpec) -> Result<BathSpectrum, ChainError> {
    diagonalize_channel_with(spec, SpectralTolerance::default())
}

pub fn diagonalize_channel_with(spec: &ChainSpec, tol: SpectralTolerance) -> Result<BathSpectrum, ChainError> {
    let n = spec.n_channel;
    spec.check_mirror_symmetry(tol.0)?;
    let z = spec.zero_mode_index().ok_or(ChainError::EvenChannel(n))?;
    let scale = spec.energy_scale();

    let block = SymTridiagonal {
        diag: vec![0.0; n],
        off: spec.couplings.clone(),
    };
    let eig = SymmetricEigen::new(block.to_dense());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    for k in 1..n {
        let gap = eigenvalues[k] - eigenvalues[k - 1];
        if gap <= tol.0 * scale {
            return Err(ChainError::Degenerate { k, gap });
        }
    }

    let mut eigenvectors = DMatrix::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        let v = eig.eigenvectors.column(i);
        let sign = if v[0] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            eigenvectors[(j, col)] = sign * v[j];
        }
    }

    let parities: Vec<i8> = (0..n).map(|c| if c % 2 == 0 { 1 } else { -1 }).collect();
    for (c, &p) in parities.iter().enumerate() {
        let deviation = (0..n)
            .map(|j| (eigenvectors[(j, c)] - p as f64 * eigenvectors[(n - 1 - j, c)]).abs())
            .fold(0.0, f64::max);
        if deviation > tol.0 * 10.0_f64.max(n as f64) {
            return Err(ChainError::ParityViolation { k: c + 1, deviation });
        }
    }

    let energy = eigenvalues[z - 1];
    if energy.abs() > tol.0 * scale {
        return Err(ChainError::ZeroModeMissing { energy });
    }

    let j0 = spec.boundary_couplings.0;
    let eff_couplings: Vec<f64> = (0..n).map(|c| j0 * eigenvectors[(0, c)]).collect();
    Ok(BathSpectrum {
        zero_mode_coupling: eff_couplings[z - 1],
        eigenvalues,
        eigenvectors,
        parities,
        eff_couplings,
        zero_mode_index: z,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BathMode {
    /// 1-based mode index `k`.
    pub index: usize,
    pub energy: f64,
    pub coupling: f64,
}

/// The resonant zero mode plus the two bath-mode families.
///
/// `plus` holds the modes sharing the zero mode's parity (they couple to the
/// same boundary combination, whose amplitude rotates with the accumulated
/// phase); `minus` holds the opposite parity. Whenever `z` is odd, which is
/// the case for `N = 1 (mod 4)` including `N = 5, 29`, these are exactly the
/// odd-`k` and even-`k` modes.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemBathSplit {
    pub zero_mode: BathMode,
    pub plus: Vec<BathMode>,
    pub minus: Vec<BathMode>,
}

pub fn split_system_bath(spectrum: &BathSpectrum) -> SystemBathSplit {
    let z = spectrum.zero_mode_index;
    let mode = |k: usize| BathMode {
        index: k,
        energy: spectrum.eigenvalues[k - 1],
        coupling: spectrum.eff_couplings[k - 1],
    };
    let (mut plus, mut minus) = (Vec::new(), Vec::new());
    for k in (1..=spectrum.len()).filter(|&k| k != z) {
        if (k + z) % 2 == 0 {
            plus.push(mode(k));
        } else {
            minus.push(mode(k));
        }
    }
    SystemBathSplit {
        zero_mode: mode(z),
        plus,
        minus,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn uniform(n: usize) -> ChainSpec {
        ChainSpec::uniform(n, 1.0).unwrap()
    }

    #[test]
    fn uniform_hamiltonian_has_unit_hopping() {
        let h = build_single_excitation_hamiltonian(&uniform(3), 1.0, None).unwrap();
        assert_eq!(h.dim(), 5);
        assert!(h.off.iter().all(|&v| v == 1.0));
        assert!(h.diag.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_alpha_decouples_boundary() {
        let h = build_single_excitation_hamiltonian(&uniform(3), 0.0, None).unwrap();
        assert_eq!(h.off[0], 0.0);
        assert_eq!(h.off[3], 0.0);
        let block = SymTridiagonal {
            diag: vec![0.0; 3],
            off: h.off[1..3].to_vec(),
        };
        let mut ev: Vec<f64> = SymmetricEigen::new(block.to_dense()).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        let want = [-(2f64.sqrt()), 0.0, 2f64.sqrt()];
        for (a, b) in ev.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn deltas_and_alpha_scale_links() {
        let d = [0.1, -0.1];
        let h = build_single_excitation_hamiltonian(
            &uniform(3),
            0.5,
            Some(LinkDeltas {
                targets: LinkTargets::InternalOnly,
                values: &d,
            }),
        )
        .unwrap();
        let want = [0.5, 1.1, 0.9, 0.5];
        for (a, b) in h.off.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn boundary_targets_scale_with_alpha_and_noise() {
        let spec = uniform(3);
        let d = [0.2, 0.0, 0.0, -0.2];
        let h = build_single_excitation_hamiltonian(
            &spec,
            0.5,
            Some(LinkDeltas {
                targets: LinkTargets::InternalPlusBoundary,
                values: &d,
            }),
        )
        .unwrap();
        assert!((h.off[0] - 0.6).abs() < 1e-15);
        assert!((h.off[3] - 0.4).abs() < 1e-15);
        let lit = [0.0, 0.0, 0.3];
        let h = build_single_excitation_hamiltonian(
            &spec,
            1.0,
            Some(LinkDeltas {
                targets: LinkTargets::ExceptSource,
                values: &lit,
            }),
        )
        .unwrap();
        assert!((h.off[3] - 1.3).abs() < 1e-15);
        assert_eq!(h.off[0], 1.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            ChainSpec::new(3, vec![1.0, 0.0], (1.0, 1.0)),
            Err(ChainError::NonPositiveCoupling { link: 2, .. })
        ));
        assert!(matches!(
            ChainSpec::new(3, vec![1.0], (1.0, 1.0)),
            Err(ChainError::CouplingCount { expected: 2, got: 1 })
        ));
        let d = [0.1];
        let err = build_single_excitation_hamiltonian(
            &uniform(3),
            1.0,
            Some(LinkDeltas {
                targets: LinkTargets::InternalOnly,
                values: &d,
            }),
        );
        assert!(matches!(err, Err(ChainError::DeltaCount { expected: 2, got: 1, .. })));
        assert!(matches!(
            build_single_excitation_hamiltonian(&uniform(3), -0.1, None),
            Err(ChainError::InvalidAlpha(_))
        ));
    }

    #[test]
    fn uniform_n29_spectrum() {
        let s = diagonalize_channel(&uniform(29)).unwrap();
        for k in 1..=29 {
            let want = -2.0 * (k as f64 * PI / 30.0).cos();
            assert!((s.eigenvalues[k - 1] - want).abs() < 1e-10);
        }
        assert_eq!(s.zero_mode_index, 15);
        assert!(s.eigenvalues[14].abs() < 1e-10);
        assert!((s.zero_mode_coupling - (2.0f64 / 30.0).sqrt()).abs() < 1e-10);
    }

    #[test]
    fn uniform_n5_effective_couplings_closed_form() {
        let s = diagonalize_channel(&uniform(5)).unwrap();
        let jz = (2.0f64 / 6.0).sqrt();
        for k in 1..=5 {
            let want = jz * (k as f64 * PI / 6.0).sin();
            assert!((s.eff_couplings[k - 1] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn split_counts_and_energies() {
        let s = diagonalize_channel(&uniform(5)).unwrap();
        let split = split_system_bath(&s);
        assert_eq!(split.zero_mode.index, 3);
        let idx = |v: &[BathMode]| v.iter().map(|m| m.index).collect::<Vec<_>>();
        assert_eq!(idx(&split.plus), vec![1, 5]);
        assert_eq!(idx(&split.minus), vec![2, 4]);
        let r3 = 3f64.sqrt();
        assert!((split.plus[0].energy + r3).abs() < 1e-12 && (split.plus[1].energy - r3).abs() < 1e-12);
        assert!((split.minus[0].energy + 1.0).abs() < 1e-12 && (split.minus[1].energy - 1.0).abs() < 1e-12);

        let split = split_system_bath(&diagonalize_channel(&uniform(29)).unwrap());
        assert_eq!(split.plus.len(), 14);
        assert_eq!(split.minus.len(), 14);
        assert!(split.plus.iter().all(|m| m.index % 2 == 1));
    }

    #[test]
    fn split_follows_zero_mode_parity_when_z_is_even() {
        // N = 7 has z = 4: the modes sharing its parity are the even ones.
        let split = split_system_bath(&diagonalize_channel(&uniform(7)).unwrap());
        assert_eq!(split.zero_mode.index, 4);
        assert!(split.plus.iter().all(|m| m.index % 2 == 0));
        assert!(split.minus.iter().all(|m| m.index % 2 == 1));
    }

    #[test]
    fn spectral_preconditions() {
        assert!(matches!(diagonalize_channel(&uniform(4)), Err(ChainError::EvenChannel(4))));
        let asym = ChainSpec::new(5, vec![1.0, 1.2, 1.0, 1.0], (1.0, 1.0)).unwrap();
        assert!(matches!(
            diagonalize_channel(&asym),
            Err(ChainError::NotMirrorSymmetric { .. })
        ));
    }

    #[test]
    fn json_accepts_uniform_shorthand() {
        let s: ChainSpec = serde_json::from_str(r#"{"n_channel": 5, "uniform_J": 1.5}"#).unwrap();
        assert_eq!(s.couplings(), &[1.5; 4]);
        assert_eq!(s.boundary_couplings(), (1.5, 1.5));
        let s: ChainSpec =
            serde_json::from_str(r#"{"n_channel": 3, "couplings": [1, 2], "boundary_couplings": [0.5, 0.5]}"#).unwrap();
        assert_eq!(s.link(2), 2.0);
        let back: ChainSpec = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
        assert!(serde_json::from_str::<ChainSpec>(r#"{"n_channel": 3, "couplings": [1]}"#).is_err());
    }
}
