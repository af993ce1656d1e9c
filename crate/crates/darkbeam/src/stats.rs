//! Counting statistics of photons and state-3 atoms through the transfer
//! channel, and Gaussian entanglement transfer between two channels.
//!
//! The channel acts on a single temporal mode as a three-port partition
//! (photon survival, atom conversion, dissipative loss). Quadrature
//! convention: hbar = 1, vacuum variance 1/2 per quadrature, mode ordering
//! (x1, p1, x2, p2).

use std::io::Write;

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::adiabatic::{build_transfer_map, loss_factor_eta, TransferMap};
use crate::envelope::InputEnvelope;
use crate::error::{Error, Result};
use crate::model::{StokesProfile, SystemParams};

/// Vacuum variance per quadrature.
pub const VACUUM_VARIANCE: f64 = 0.5;

/// Duan witness threshold: total vacuum variance of the two EPR combinations.
pub const DUAN_THRESHOLD: f64 = 2.0;

/// Input quantum state of the light beam, carried by a normalized temporal
/// mode at z = 0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum InputKind {
    Fock(u64),
    Coherent(f64),
    TwoModeSqueezed(f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuantumInput {
    kind: InputKind,
    mode: InputEnvelope,
}

impl QuantumInput {
    /// Build an input state; the temporal mode is normalized to unit flux
    /// (c * int |u|^2 dt = 1) if it is not already.
    pub fn new(kind: InputKind, mode: InputEnvelope) -> Result<Self> {
        if let InputKind::TwoModeSqueezed(r) = kind {
            if !r.is_finite() {
                return Err(Error::invariant(format!("squeeze parameter invalid: {r}")));
            }
        }
        let flux = mode.flux();
        if !(flux > 0.0) || !flux.is_finite() {
            return Err(Error::invariant(format!(
                "temporal mode must have positive finite flux, got {flux}"
            )));
        }
        let mode = if (flux - 1.0).abs() < 1e-12 {
            mode
        } else {
            match mode {
                InputEnvelope::Gaussian {
                    amplitude,
                    phase,
                    center,
                    sigma,
                } => InputEnvelope::Gaussian {
                    amplitude: amplitude / flux.sqrt(),
                    phase,
                    center,
                    sigma,
                },
                InputEnvelope::Samples { t0, dt, values } => InputEnvelope::Samples {
                    t0,
                    dt,
                    values: values
                        .into_iter()
                        .map(|(re, im)| (re / flux.sqrt(), im / flux.sqrt()))
                        .collect(),
                },
            }
        };
        Ok(Self { kind, mode })
    }

    pub fn kind(&self) -> &InputKind {
        &self.kind
    }
    pub fn mode(&self) -> &InputEnvelope {
        &self.mode
    }

    /// Mean photon number of the input beam (per-beam marginal for the
    /// two-mode squeezed state).
    pub fn mean_photons(&self) -> f64 {
        match self.kind {
            InputKind::Fock(n) => n as f64,
            InputKind::Coherent(a) => a * a,
            InputKind::TwoModeSqueezed(r) => r.sinh().powi(2),
        }
    }
}

/// Three-port partition probabilities at one plane.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SplitPoint {
    pub p_light: f64,
    pub q_atom: f64,
    pub l_loss: f64,
}

/// Per-position partition of the input excitation into surviving photons,
/// converted atoms, and the dissipative reservoir.
#[derive(Debug, Clone, Serialize)]
pub struct ChannelSplit {
    pub z: Vec<f64>,
    pub p_light: Vec<f64>,
    pub q_atom: Vec<f64>,
    pub l_loss: Vec<f64>,
    /// True when theta(0) exceeded 1e-3 and the amplitudes were renormalized
    /// by cos^2(theta(0)); the partition then closes only up to
    /// O(theta(0)^2).
    pub renormalized: bool,
}

impl ChannelSplit {
    pub fn len(&self) -> usize {
        self.z.len()
    }
    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn point(&self, i: usize) -> SplitPoint {
        SplitPoint {
            p_light: self.p_light[i],
            q_atom: self.q_atom[i],
            l_loss: self.l_loss[i],
        }
    }

    /// Split at the sample nearest to z.
    pub fn at_z(&self, z: f64) -> SplitPoint {
        let i = self
            .z
            .iter()
            .enumerate()
            .min_by(|a, b| {
                (a.1 - z)
                    .abs()
                    .partial_cmp(&(b.1 - z).abs())
                    .expect("finite z samples")
            })
            .map(|(i, _)| i)
            .unwrap_or(0);
        self.point(i)
    }

    /// Output-plane split.
    pub fn output(&self) -> SplitPoint {
        self.point(self.z.len() - 1)
    }
}

/// Derive the three-port partition from a transfer map: p = eta^2 cos^2
/// theta, q = eta^2 sin^2 theta, l = 1 - eta^2. When theta(0) > 1e-3 the
/// input is not purely photonic and the amplitudes are renormalized by
/// cos^2(theta(0)) instead (flagged in the result).
pub fn channel_from_map(map: &TransferMap) -> ChannelSplit {
    let theta0_small = map.cos_theta0() >= (1.0f64 - 1e-6).sqrt();
    let n = map.z_samples().len();
    let mut p = Vec::with_capacity(n);
    let mut q = Vec::with_capacity(n);
    let mut l = Vec::with_capacity(n);
    for i in 0..n {
        let eta2 = map.eta()[i] * map.eta()[i];
        let (pi, qi) = if theta0_small {
            let c = map.theta()[i].cos();
            let s = map.theta()[i].sin();
            (eta2 * c * c, eta2 * s * s)
        } else {
            (map.light_amp()[i].powi(2), map.atom_amp()[i].powi(2))
        };
        let (pi, qi) = if pi + qi > 1.0 {
            (pi / (pi + qi), qi / (pi + qi))
        } else {
            (pi, qi)
        };
        p.push(pi);
        q.push(qi);
        l.push((1.0 - pi - qi).max(0.0));
    }
    ChannelSplit {
        z: map.z_samples().to_vec(),
        p_light: p,
        q_atom: q,
        l_loss: l,
        renormalized: !theta0_small,
    }
}

/// Mean and variance of integrated counts at a plane, for the photon and
/// atom ports, plus the mean excitation lost to the reservoir.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CountStats {
    pub photon_mean: f64,
    pub photon_var: f64,
    pub atom_mean: f64,
    pub atom_var: f64,
    pub loss_mean: f64,
}

/// Counting statistics of the three-port partition of the input mode.
///
/// Fock N: each port is a binomial marginal of the multinomial partition.
/// Coherent: Poisson at every port. Two-mode squeezed (per-beam marginal):
/// thermal, and thermal states stay thermal under partition.
pub fn count_stats(input: &QuantumInput, split: SplitPoint) -> CountStats {
    let (p, q, l) = (split.p_light, split.q_atom, split.l_loss);
    match input.kind {
        InputKind::Fock(n) => {
            let n = n as f64;
            CountStats {
                photon_mean: n * p,
                photon_var: n * p * (1.0 - p),
                atom_mean: n * q,
                atom_var: n * q * (1.0 - q),
                loss_mean: n * l,
            }
        }
        InputKind::Coherent(a) => {
            let mu = a * a;
            CountStats {
                photon_mean: mu * p,
                photon_var: mu * p,
                atom_mean: mu * q,
                atom_var: mu * q,
                loss_mean: mu * l,
            }
        }
        InputKind::TwoModeSqueezed(r) => {
            let mu = r.sinh().powi(2);
            let mp = mu * p;
            let mq = mu * q;
            CountStats {
                photon_mean: mp,
                photon_var: mp * (1.0 + mp),
                atom_mean: mq,
                atom_var: mq * (1.0 + mq),
                loss_mean: mu * l,
            }
        }
    }
}

/// Photon/atom exchange curves along the medium for a Fock input,
/// normalized to the input photon number.
#[derive(Debug, Clone, Serialize)]
pub struct Fig2Table {
    pub z: Vec<f64>,
    pub n_mean: Vec<f64>,
    pub m_mean: Vec<f64>,
    pub n_var: Vec<f64>,
    pub m_var: Vec<f64>,
    pub omega: Vec<f64>,
}

impl Fig2Table {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "z,n_mean,m_mean,n_var,m_var,omega_scaled")?;
        for i in 0..self.z.len() {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                self.z[i], self.n_mean[i], self.m_mean[i], self.n_var[i], self.m_var[i],
                self.omega[i]
            )?;
        }
        Ok(())
    }

    /// Index of the atom-variance maximum.
    pub fn variance_peak_index(&self) -> usize {
        self.m_var
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite variance"))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }

    /// Index of the balanced plane, p = q = 1/2.
    pub fn balanced_plane_index(&self) -> usize {
        (0..self.z.len())
            .min_by(|&a, &b| {
                let da = (self.n_mean[a] - self.m_mean[a]).abs();
                let db = (self.n_mean[b] - self.m_mean[b]).abs();
                da.partial_cmp(&db).expect("finite means")
            })
            .unwrap_or(0)
    }

    /// True if the atom-variance curve rises to a single interior maximum and
    /// falls after it.
    pub fn variance_unimodal(&self) -> bool {
        let peak = self.variance_peak_index();
        if peak == 0 || peak + 1 == self.m_var.len() {
            return false;
        }
        let tol = 1e-12;
        self.m_var[..=peak].windows(2).all(|w| w[1] >= w[0] - tol)
            && self.m_var[peak..].windows(2).all(|w| w[1] <= w[0] + tol)
    }
}

/// Average values and fluctuations of photons and state-3 atoms traversing a
/// plane at position z, for a Fock input of `n_photons`, normalized to the
/// input photon number.
pub fn fig2_curves(
    params: &SystemParams,
    profile: &StokesProfile,
    n_photons: u64,
    n_samples: usize,
) -> Result<Fig2Table> {
    let map = build_transfer_map(params, profile, n_samples)?;
    let split = channel_from_map(&map);
    let n = n_photons as f64;
    let mut table = Fig2Table {
        z: split.z.clone(),
        n_mean: Vec::with_capacity(split.len()),
        m_mean: Vec::with_capacity(split.len()),
        n_var: Vec::with_capacity(split.len()),
        m_var: Vec::with_capacity(split.len()),
        omega: split.z.iter().map(|&z| profile.value(z)).collect(),
    };
    for i in 0..split.len() {
        let (p, q) = (split.p_light[i], split.q_atom[i]);
        table.n_mean.push(p);
        table.m_mean.push(q);
        // Binomial variances over N, normalized by N.
        table.n_var.push(if n > 0.0 { p * (1.0 - p) } else { 0.0 });
        table.m_var.push(if n > 0.0 { q * (1.0 - q) } else { 0.0 });
    }
    Ok(table)
}

/// Symplectic form for mode ordering (x1, p1, x2, p2).
fn symplectic_form() -> Matrix4<f64> {
    let mut o = Matrix4::zeros();
    o[(0, 1)] = 1.0;
    o[(1, 0)] = -1.0;
    o[(2, 3)] = 1.0;
    o[(3, 2)] = -1.0;
    o
}

/// Symplectic eigenvalues of a two-mode covariance matrix: the positive
/// imaginary parts of the eigenvalues of Omega * sigma.
pub fn symplectic_eigenvalues(cov: &Matrix4<f64>) -> Result<Vec<f64>> {
    for i in 0..4 {
        for j in 0..4 {
            if !cov[(i, j)].is_finite() {
                return Err(Error::UnphysicalCovariance {
                    reason: "non-finite entry".into(),
                });
            }
            if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-9 * (1.0 + cov[(i, j)].abs()) {
                return Err(Error::UnphysicalCovariance {
                    reason: format!("not symmetric at ({i},{j})"),
                });
            }
        }
    }
    let m = symplectic_form() * cov;
    let eig = m.complex_eigenvalues();
    let mut nus: Vec<f64> = eig.iter().map(|e| e.im).filter(|im| *im > 0.0).collect();
    nus.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
    if nus.len() != 2 {
        return Err(Error::UnphysicalCovariance {
            reason: format!("expected 2 positive symplectic eigenvalues, got {}", nus.len()),
        });
    }
    Ok(nus)
}

fn check_physical(cov: &Matrix4<f64>) -> Result<()> {
    let nus = symplectic_eigenvalues(cov)?;
    if nus[0] < VACUUM_VARIANCE * (1.0 - 1e-9) {
        return Err(Error::UnphysicalCovariance {
            reason: format!(
                "smallest symplectic eigenvalue {} below vacuum {VACUUM_VARIANCE}",
                nus[0]
            ),
        });
    }
    Ok(())
}

/// Two-mode squeezed vacuum covariance with squeeze parameter r.
pub fn two_mode_squeezed_cov(r: f64) -> Matrix4<f64> {
    let ch = (2.0 * r).cosh() * VACUUM_VARIANCE;
    let sh = (2.0 * r).sinh() * VACUUM_VARIANCE;
    let mut cov = Matrix4::zeros();
    cov[(0, 0)] = ch;
    cov[(1, 1)] = ch;
    cov[(2, 2)] = ch;
    cov[(3, 3)] = ch;
    cov[(0, 2)] = sh;
    cov[(2, 0)] = sh;
    cov[(1, 3)] = -sh;
    cov[(3, 1)] = -sh;
    cov
}

pub fn vacuum_cov() -> Matrix4<f64> {
    Matrix4::identity() * VACUUM_VARIANCE
}

/// Push a two-mode covariance through two independent lossy transfer
/// channels with atom-port probabilities q1, q2: the atom ports see
/// sigma -> S sigma S^T + (I - S^2) * vacuum with S = diag(sqrt(q_k)) per
/// mode.
pub fn gaussian_channel_apply(cov_in: &Matrix4<f64>, q1: f64, q2: f64) -> Result<Matrix4<f64>> {
    for q in [q1, q2] {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::invariant(format!(
                "channel probability must lie in [0, 1], got {q}"
            )));
        }
    }
    check_physical(cov_in)?;
    let s = Matrix4::from_diagonal(&nalgebra::Vector4::new(
        q1.sqrt(),
        q1.sqrt(),
        q2.sqrt(),
        q2.sqrt(),
    ));
    let noise = Matrix4::from_diagonal(&nalgebra::Vector4::new(
        (1.0 - q1) * VACUUM_VARIANCE,
        (1.0 - q1) * VACUUM_VARIANCE,
        (1.0 - q2) * VACUUM_VARIANCE,
        (1.0 - q2) * VACUUM_VARIANCE,
    ));
    let out = s * cov_in * s + noise;
    check_physical(&out)?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct DuanWitness {
    /// Var(x1 - x2) + Var(p1 + p2).
    pub value: f64,
    pub threshold: f64,
    pub entangled: bool,
}

/// Duan witness on the EPR quadrature combinations; values below the vacuum
/// threshold certify entanglement.
pub fn duan_criterion(cov: &Matrix4<f64>) -> Result<DuanWitness> {
    check_physical(cov)?;
    let var_x = cov[(0, 0)] + cov[(2, 2)] - 2.0 * cov[(0, 2)];
    let var_p = cov[(1, 1)] + cov[(3, 3)] + 2.0 * cov[(1, 3)];
    let value = var_x + var_p;
    Ok(DuanWitness {
        value,
        threshold: DUAN_THRESHOLD,
        entangled: value < DUAN_THRESHOLD,
    })
}

/// Single-temporal-mode diagnostic: relative variation of the photon
/// survival probability across the spectral width of the input mode,
/// through the x-dependence of the loss factor. Flagged above 5%.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ModeDiagnostic {
    pub spectral_sigma: f64,
    pub x_spread: f64,
    pub relative_variation: f64,
    pub flagged: bool,
}

pub fn mode_bandwidth_diagnostic(
    params: &SystemParams,
    profile: &StokesProfile,
    input: &QuantumInput,
) -> ModeDiagnostic {
    let sigma_t = match input.mode() {
        InputEnvelope::Gaussian { sigma, .. } => *sigma,
        InputEnvelope::Samples { dt, values, .. } => {
            // RMS duration of |u|^2 as a coarse bandwidth proxy.
            let mut w_sum = 0.0;
            let mut t_mean = 0.0;
            for (i, (re, im)) in values.iter().enumerate() {
                let w = re * re + im * im;
                w_sum += w;
                t_mean += w * i as f64 * dt;
            }
            t_mean /= w_sum.max(1e-300);
            let mut var = 0.0;
            for (i, (re, im)) in values.iter().enumerate() {
                let w = re * re + im * im;
                var += w * (i as f64 * dt - t_mean).powi(2);
            }
            (var / w_sum.max(1e-300)).sqrt()
        }
    };
    // Gaussian |u|^2 of duration sigma_t has spectral sigma 1/(2 sigma_t);
    // a frequency offset shifts the two-photon detuning one-to-one, so
    // dx = d_omega * gamma / (g^2 n r).
    let spectral_sigma = 1.0 / (2.0 * sigma_t);
    let x_spread =
        spectral_sigma * params.gamma_tilde() / (params.coupling_g2n() * params.r().abs());
    let x0 = params.x();
    let p = |x: f64| loss_factor_eta(params, profile, x).eta_end.powi(2);
    let p0 = p(x0);
    let relative_variation = ((p(x0 + x_spread) - p(x0 - x_spread)).abs()
        + (p(x0 + x_spread) + p(x0 - x_spread) - 2.0 * p0).abs())
        / p0.max(1e-300);
    ModeDiagnostic {
        spectral_sigma,
        x_spread,
        relative_variation,
        flagged: relative_variation > 0.05,
    }
}
