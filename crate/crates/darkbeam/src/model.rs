//! Dimensionless physical model: system parameters, the spatial Stokes
//! profile, velocity classes, and the feasibility inequalities for adiabatic
//! light-to-matter transfer.
//!
//! Units: c = 1, L = 1, all rates in units of c/L. The Stokes Rabi frequency
//! is handled in units of g*sqrt(n*|v0|/c) so that tan(theta(z)) = 1/omega(z)
//! for co-propagating beams; the physical (c/L-scaled) Rabi frequency is
//! omega(z) * sqrt(g2n * |r|).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad;

/// Relative tolerance for the group-delay quadrature.
pub const TAU_REL_TOL: f64 = 1e-9;

/// Dimensionless system parameters.
///
/// `alpha` is the resonant opacity g^2 n L / (gamma c), `r` the signed
/// velocity ratio v0/c, `gamma_tilde` the excited-state decay gamma L/c,
/// `x` the scaled two-photon detuning delta*gamma / (g^2 n v0/c) and
/// `big_delta` the single-photon detuning in units of gamma. The interaction
/// length is the normalization unit and fixed to 1.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(try_from = "SystemParamsRaw")]
pub struct SystemParams {
    alpha: f64,
    r: f64,
    gamma_tilde: f64,
    x: f64,
    big_delta: f64,
    dispersion_factor: f64,
}

impl SystemParams {
    pub fn new(alpha: f64, r: f64, gamma_tilde: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::invariant(format!("alpha must be > 0, got {alpha}")));
        }
        if !(gamma_tilde > 0.0) || !gamma_tilde.is_finite() {
            return Err(Error::invariant(format!(
                "gamma_tilde must be > 0, got {gamma_tilde}"
            )));
        }
        if r == 0.0 || !r.is_finite() || r.abs() >= 1.0 {
            return Err(Error::invariant(format!(
                "velocity ratio r must be finite, nonzero and |r| < 1, got {r}"
            )));
        }
        Ok(Self {
            alpha,
            r,
            gamma_tilde,
            x: 0.0,
            big_delta: 0.0,
            dispersion_factor: 0.5,
        })
    }

    pub fn with_x(mut self, x: f64) -> Result<Self> {
        if !x.is_finite() {
            return Err(Error::invariant(format!("x must be finite, got {x}")));
        }
        self.x = x;
        Ok(self)
    }

    pub fn with_big_delta(mut self, big_delta: f64) -> Result<Self> {
        if !big_delta.is_finite() {
            return Err(Error::invariant(format!(
                "big_delta must be finite, got {big_delta}"
            )));
        }
        self.big_delta = big_delta;
        Ok(self)
    }

    /// Advection-speed convention for the matter envelopes: the equations of
    /// motion carry hbar*k/(2m) (factor 1/2, the default); the standard
    /// envelope reduction would give hbar*k/m (factor 1).
    pub fn with_dispersion_factor(mut self, f: f64) -> Result<Self> {
        if f != 0.5 && f != 1.0 {
            return Err(Error::invariant(format!(
                "dispersion_factor must be 0.5 or 1.0, got {f}"
            )));
        }
        self.dispersion_factor = f;
        Ok(self)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn r(&self) -> f64 {
        self.r
    }
    pub fn gamma_tilde(&self) -> f64 {
        self.gamma_tilde
    }
    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn big_delta(&self) -> f64 {
        self.big_delta
    }
    pub fn dispersion_factor(&self) -> f64 {
        self.dispersion_factor
    }

    /// Interaction length; the normalization unit.
    pub fn length_l(&self) -> f64 {
        1.0
    }

    /// g^2 n in units of (c/L)^2; equals alpha * gamma_tilde by construction.
    pub fn coupling_g2n(&self) -> f64 {
        self.alpha * self.gamma_tilde
    }

    /// Coupling g*sqrt(n) with the density scaled to n = 1.
    pub fn coupling_g(&self) -> f64 {
        self.coupling_g2n().sqrt()
    }

    /// Uniform two-photon detuning delta in rate units, recovered from x:
    /// delta = x * g^2 n * (v0/c) / gamma = x * alpha * r.
    pub fn delta_rate(&self) -> f64 {
        self.x * self.alpha * self.r
    }

    /// Single-photon detuning in rate units.
    pub fn big_delta_rate(&self) -> f64 {
        self.big_delta * self.gamma_tilde
    }

    /// Physical Rabi frequency (c/L units) for a profile value omega given in
    /// units of g*sqrt(n*|v0|/c).
    pub fn rabi_rate(&self, omega: f64) -> f64 {
        omega * (self.coupling_g2n() * self.r.abs()).sqrt()
    }
}

#[derive(Deserialize)]
struct SystemParamsRaw {
    alpha: f64,
    r: f64,
    gamma_tilde: f64,
    #[serde(default)]
    x: f64,
    #[serde(default)]
    big_delta: f64,
    #[serde(default = "default_dispersion_factor")]
    dispersion_factor: f64,
}

fn default_dispersion_factor() -> f64 {
    0.5
}

impl TryFrom<SystemParamsRaw> for SystemParams {
    type Error = Error;

    fn try_from(raw: SystemParamsRaw) -> Result<Self> {
        SystemParams::new(raw.alpha, raw.r, raw.gamma_tilde)?
            .with_x(raw.x)?
            .with_big_delta(raw.big_delta)?
            .with_dispersion_factor(raw.dispersion_factor)
    }
}

/// Shape family of the Stokes Rabi-frequency profile Omega0(z).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProfileKind {
    TanhRampDown,
    CosSquaredRamp,
    Constant,
    Tabulated,
}

/// Spatial Stokes profile omega(z) on z in [0, 1], in units of
/// g*sqrt(n*|v0|/c). Strictly positive everywhere (a floor `omega_min`
/// replaces an exact zero at the output end) and monotonically non-increasing
/// for the ramp kinds.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "StokesProfileRaw")]
pub struct StokesProfile {
    kind: ProfileKind,
    omega_max: f64,
    omega_min: f64,
    center: f64,
    width: f64,
    samples: Option<Vec<(f64, f64)>>,
}

#[derive(Deserialize)]
struct StokesProfileRaw {
    kind: ProfileKind,
    #[serde(default = "default_omega_max")]
    omega_max: f64,
    #[serde(default = "default_omega_min")]
    omega_min: f64,
    #[serde(default = "default_center")]
    center: f64,
    #[serde(default = "default_width")]
    width: f64,
    #[serde(default)]
    samples: Option<Vec<(f64, f64)>>,
}

fn default_omega_max() -> f64 {
    30.0
}
fn default_omega_min() -> f64 {
    1e-3
}
fn default_center() -> f64 {
    0.5
}
fn default_width() -> f64 {
    0.1
}

impl TryFrom<StokesProfileRaw> for StokesProfile {
    type Error = Error;

    fn try_from(raw: StokesProfileRaw) -> Result<Self> {
        match raw.kind {
            ProfileKind::TanhRampDown => {
                StokesProfile::tanh_ramp(raw.omega_max, raw.omega_min, raw.center, raw.width)
            }
            ProfileKind::CosSquaredRamp => {
                StokesProfile::cos_squared(raw.omega_max, raw.omega_min, raw.center, raw.width)
            }
            ProfileKind::Constant => StokesProfile::constant(raw.omega_max),
            ProfileKind::Tabulated => {
                let samples = raw
                    .samples
                    .ok_or_else(|| Error::invariant("tabulated profile requires samples"))?;
                StokesProfile::tabulated(samples)
            }
        }
    }
}

impl StokesProfile {
    pub fn tanh_ramp(omega_max: f64, omega_min: f64, center: f64, width: f64) -> Result<Self> {
        Self::validate_ramp(omega_max, omega_min, center, width)?;
        Ok(Self {
            kind: ProfileKind::TanhRampDown,
            omega_max,
            omega_min,
            center,
            width,
            samples: None,
        })
    }

    pub fn cos_squared(omega_max: f64, omega_min: f64, center: f64, width: f64) -> Result<Self> {
        Self::validate_ramp(omega_max, omega_min, center, width)?;
        Ok(Self {
            kind: ProfileKind::CosSquaredRamp,
            omega_max,
            omega_min,
            center,
            width,
            samples: None,
        })
    }

    pub fn constant(omega: f64) -> Result<Self> {
        if !(omega > 0.0) || !omega.is_finite() {
            return Err(Error::invariant(format!(
                "constant profile needs omega > 0, got {omega}"
            )));
        }
        Ok(Self {
            kind: ProfileKind::Constant,
            omega_max: omega,
            omega_min: omega,
            center: 0.5,
            width: 1.0,
            samples: None,
        })
    }

    /// Monotone non-increasing table of (z, omega) pairs covering [0, 1];
    /// evaluated by linear interpolation.
    pub fn tabulated(samples: Vec<(f64, f64)>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::invariant("tabulated profile needs >= 2 samples"));
        }
        if samples[0].0 > 0.0 || samples[samples.len() - 1].0 < 1.0 {
            return Err(Error::invariant(
                "tabulated profile must cover z in [0, 1]",
            ));
        }
        for w in samples.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::invariant("tabulated z values must increase"));
            }
            if w[1].1 > w[0].1 {
                return Err(Error::invariant(
                    "tabulated profile must be monotone non-increasing",
                ));
            }
        }
        let omega_min = samples.iter().fold(f64::INFINITY, |m, s| m.min(s.1));
        let omega_max = samples.iter().fold(0.0f64, |m, s| m.max(s.1));
        if !(omega_min > 0.0) {
            return Err(Error::invariant("tabulated omega values must be > 0"));
        }
        Ok(Self {
            kind: ProfileKind::Tabulated,
            omega_max,
            omega_min,
            center: 0.5,
            width: 1.0,
            samples: Some(samples),
        })
    }

    fn validate_ramp(omega_max: f64, omega_min: f64, center: f64, width: f64) -> Result<()> {
        if !(omega_min > 0.0) {
            return Err(Error::invariant(format!(
                "omega_min must be > 0 (floor replaces the exact zero), got {omega_min}"
            )));
        }
        if omega_max < omega_min {
            return Err(Error::invariant(format!(
                "omega_max {omega_max} < omega_min {omega_min}"
            )));
        }
        if !(width > 0.0) || !width.is_finite() || !center.is_finite() {
            return Err(Error::invariant(format!(
                "ramp geometry invalid: center {center}, width {width}"
            )));
        }
        Ok(())
    }

    pub fn kind(&self) -> ProfileKind {
        self.kind
    }
    pub fn omega_max(&self) -> f64 {
        self.omega_max
    }
    pub fn omega_min(&self) -> f64 {
        self.omega_min
    }

    /// omega(z) in units of g*sqrt(n*|v0|/c).
    pub fn value(&self, z: f64) -> f64 {
        match self.kind {
            ProfileKind::Constant => self.omega_max,
            ProfileKind::TanhRampDown => {
                let s = 0.5 * (1.0 - ((z - self.center) / self.width).tanh());
                self.omega_min + (self.omega_max - self.omega_min) * s
            }
            ProfileKind::CosSquaredRamp => {
                let s = ((z - (self.center - 0.5 * self.width)) / self.width).clamp(0.0, 1.0);
                let c = (std::f64::consts::FRAC_PI_2 * s).cos();
                self.omega_min + (self.omega_max - self.omega_min) * c * c
            }
            ProfileKind::Tabulated => {
                let samples = self.samples.as_ref().expect("tabulated samples");
                let idx = samples.partition_point(|s| s.0 <= z);
                if idx == 0 {
                    return samples[0].1;
                }
                if idx == samples.len() {
                    return samples[samples.len() - 1].1;
                }
                let (z0, w0) = samples[idx - 1];
                let (z1, w1) = samples[idx];
                w0 + (w1 - w0) * (z - z0) / (z1 - z0)
            }
        }
    }

    /// d omega / dz; one-sided at tabulated nodes.
    pub fn derivative(&self, z: f64) -> f64 {
        match self.kind {
            ProfileKind::Constant => 0.0,
            ProfileKind::TanhRampDown => {
                let u = (z - self.center) / self.width;
                let sech2 = 1.0 / u.cosh().powi(2);
                -(self.omega_max - self.omega_min) * sech2 / (2.0 * self.width)
            }
            ProfileKind::CosSquaredRamp => {
                let s = (z - (self.center - 0.5 * self.width)) / self.width;
                if !(0.0..=1.0).contains(&s) {
                    return 0.0;
                }
                -(self.omega_max - self.omega_min) * std::f64::consts::FRAC_PI_2
                    * (std::f64::consts::PI * s).sin()
                    / self.width
            }
            ProfileKind::Tabulated => {
                let samples = self.samples.as_ref().expect("tabulated samples");
                let idx = samples
                    .partition_point(|s| s.0 < z)
                    .clamp(1, samples.len() - 1);
                let (z0, w0) = samples[idx - 1];
                let (z1, w1) = samples[idx];
                (w1 - w0) / (z1 - z0)
            }
        }
    }
}

/// One velocity class: wavenumber offset `k` (in units where hbar*k/m is a
/// velocity in units of c), weight `xi`, and per-class detuning offsets.
/// `delta` is a rate (c/L units) added to the uniform x-derived two-photon
/// detuning; `big_delta` is in units of gamma, added to the global value.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct VelocityClass {
    pub k: f64,
    pub xi: f64,
    pub delta: f64,
    pub big_delta: f64,
}

/// Velocity-class decomposition of the atomic beam.
///
/// `beat_kl` is the pump-Stokes beat wavevector projected on z, times L
/// (dimensionless); it turns class velocity offsets into Doppler two-photon
/// detunings. `recoil_kp` is the pump recoil velocity hbar*k_p/(m c), which
/// shifts the excited-envelope advection speed.
#[derive(Debug, Clone, Serialize)]
pub struct VelocityDistribution {
    classes: Vec<VelocityClass>,
    hbar_over_m: f64,
    beat_kl: f64,
    recoil_kp: f64,
}

impl VelocityDistribution {
    pub fn new(
        params: &SystemParams,
        classes: Vec<VelocityClass>,
        hbar_over_m: f64,
        beat_kl: f64,
        recoil_kp: f64,
    ) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::invariant("at least one velocity class required"));
        }
        if !(hbar_over_m > 0.0) {
            return Err(Error::invariant(format!(
                "hbar_over_m must be > 0, got {hbar_over_m}"
            )));
        }
        let xi_sum: f64 = classes.iter().map(|c| c.xi).sum();
        if (xi_sum - 1.0).abs() > 1e-12 {
            return Err(Error::invariant(format!(
                "velocity-class weights must sum to 1, got {xi_sum}"
            )));
        }
        if classes.iter().any(|c| c.xi < 0.0) {
            return Err(Error::invariant("velocity-class weights must be >= 0"));
        }
        let dist = Self {
            classes,
            hbar_over_m,
            beat_kl,
            recoil_kp,
        };
        let v_mean = dist.mean_velocity(params);
        if (v_mean - params.r()).abs() > 1e-9 * params.r().abs().max(1e-3) {
            return Err(Error::invariant(format!(
                "weighted mean velocity {v_mean} does not match r = {}",
                params.r()
            )));
        }
        Ok(dist)
    }

    /// Single resonant class moving exactly at v0.
    pub fn single_class(params: &SystemParams) -> Self {
        let k = params.r() / (params.dispersion_factor() * 1.0);
        Self {
            classes: vec![VelocityClass {
                k,
                xi: 1.0,
                delta: 0.0,
                big_delta: 0.0,
            }],
            hbar_over_m: 1.0,
            beat_kl: 0.0,
            recoil_kp: 0.0,
        }
    }

    pub fn classes(&self) -> &[VelocityClass] {
        &self.classes
    }
    pub fn len(&self) -> usize {
        self.classes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }
    pub fn beat_kl(&self) -> f64 {
        self.beat_kl
    }
    pub fn recoil_kp(&self) -> f64 {
        self.recoil_kp
    }

    /// Advection velocity of class `l` for the ground/spin envelopes.
    pub fn velocity(&self, params: &SystemParams, l: usize) -> f64 {
        params.dispersion_factor() * self.hbar_over_m * self.classes[l].k
    }

    /// Advection velocity of the excited envelope of class `l`; carries the
    /// pump wavenumber (as printed in the equations of motion).
    pub fn excited_velocity(&self, params: &SystemParams, l: usize) -> f64 {
        self.velocity(params, l) + params.dispersion_factor() * self.recoil_kp
    }

    pub fn mean_velocity(&self, params: &SystemParams) -> f64 {
        self.classes
            .iter()
            .enumerate()
            .map(|(l, c)| c.xi * self.velocity(params, l))
            .sum()
    }

    /// Total two-photon detuning of class `l` in rate units: the uniform
    /// x-derived detuning, the explicit class offset, and the Doppler term
    /// (v_l - v0) * beat_kl.
    pub fn delta_rate(&self, params: &SystemParams, l: usize) -> f64 {
        let doppler = (self.velocity(params, l) - params.r()) * self.beat_kl;
        params.delta_rate() + self.classes[l].delta + doppler
    }

    /// Total single-photon detuning of class `l` in rate units.
    pub fn big_delta_rate(&self, params: &SystemParams, l: usize) -> f64 {
        (params.big_delta() + self.classes[l].big_delta) * params.gamma_tilde()
    }
}

/// Tabulated ramp with cos(theta) linear in z over [0, z_ramp] and the floor
/// held constant afterwards.
///
/// The uniform rotation rate in cos(theta) equalizes the non-adiabatic
/// dissipation density of the moving dark state along the medium (the
/// dissipated fraction is bounded below by (2/alpha)(cos theta_0 -
/// cos theta_L)^2 for any ramp); the flat tail lets the polariton relax onto
/// the adiabatic manifold before the output plane.
pub fn transfer_ramp(
    omega_max: f64,
    omega_min: f64,
    z_ramp: f64,
    n_samples: usize,
) -> Result<StokesProfile> {
    if !(omega_min > 0.0) || omega_max < omega_min {
        return Err(Error::invariant(format!(
            "transfer ramp needs omega_max >= omega_min > 0, got {omega_max}, {omega_min}"
        )));
    }
    if !(z_ramp > 0.0 && z_ramp <= 1.0) {
        return Err(Error::invariant(format!(
            "z_ramp must lie in (0, 1], got {z_ramp}"
        )));
    }
    if n_samples < 16 {
        return Err(Error::invariant("transfer ramp needs >= 16 samples"));
    }
    let c0 = omega_max / (1.0 + omega_max * omega_max).sqrt();
    let c1 = omega_min / (1.0 + omega_min * omega_min).sqrt();
    let samples: Vec<(f64, f64)> = (0..n_samples)
        .map(|k| {
            let z = k as f64 / (n_samples - 1) as f64;
            let s = (z / z_ramp).min(1.0);
            let c = c0 + (c1 - c0) * s;
            let sn = (1.0 - c * c).sqrt();
            (z, c / sn)
        })
        .collect();
    StokesProfile::tabulated(samples)
}

/// Mixing angle theta(z), defined by tan^2(theta) = (g^2 n / Omega0^2)(v0/c).
/// In profile units this is tan(theta) = 1/omega(z).
pub fn mixing_angle(params: &SystemParams, profile: &StokesProfile, z: f64) -> Result<f64> {
    if params.r() <= 0.0 {
        return Err(Error::NonPositiveVelocity { r: params.r() });
    }
    Ok((1.0 / profile.value(z)).atan())
}

/// d theta / dz for the mixing angle.
pub fn mixing_angle_derivative(profile: &StokesProfile, z: f64) -> f64 {
    let w = profile.value(z);
    -profile.derivative(z) / (1.0 + w * w)
}

/// Group velocity v_gr(z) of the coupled excitation,
/// c * (1 + (g^2 n/Omega0^2)(v0/c)) / (1 + g^2 n/Omega0^2).
///
/// Total for omega > 0 and any r != 0; negative values are valid outputs for
/// counter-propagating beams (r < 0).
pub fn group_velocity(params: &SystemParams, profile: &StokesProfile, z: f64) -> f64 {
    group_velocity_of_omega(params.r(), profile.value(z))
}

/// Group velocity as a function of the profile value; `omega` in units of
/// g*sqrt(n*|v0|/c).
pub fn group_velocity_of_omega(r: f64, omega: f64) -> f64 {
    let ra = r.abs();
    (ra * omega * omega + r) / (ra * omega * omega + 1.0)
}

/// Group delay tau(z) = int_0^z dz' / v_gr(z'), by adaptive quadrature to
/// relative tolerance 1e-9.
pub fn delay_tau(params: &SystemParams, profile: &StokesProfile, z: f64) -> Result<f64> {
    delay_between(params, profile, 0.0, z)
}

/// Group delay accumulated between two planes.
pub fn delay_between(
    params: &SystemParams,
    profile: &StokesProfile,
    z0: f64,
    z1: f64,
) -> Result<f64> {
    // Transport requires v_gr > 0 on the whole span; scan before integrating.
    let n_scan = 257;
    let mut v_min = f64::INFINITY;
    let mut z_min = z0;
    for i in 0..n_scan {
        let z = z0 + (z1 - z0) * (i as f64) / ((n_scan - 1) as f64);
        let v = group_velocity(params, profile, z);
        if v < v_min {
            v_min = v;
            z_min = z;
        }
    }
    if v_min <= 0.0 {
        return Err(Error::NonTransportingChannel {
            z: z1,
            v_min,
            z_min,
        });
    }
    Ok(quad::integrate(
        |z| 1.0 / group_velocity(params, profile, z),
        z0,
        z1,
        TAU_REL_TOL,
    ))
}

/// Margins for the feasibility inequalities: `lhs < much_less` realizes
/// "much less than one"; `alpha > much_greater_factor * |r|` realizes the
/// opacity bound.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Thresholds {
    pub much_less: f64,
    pub much_greater_factor: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            much_less: 0.1,
            much_greater_factor: 10.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionCheck {
    pub name: &'static str,
    pub lhs: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl ConditionCheck {
    fn new(name: &'static str, lhs: f64, threshold: f64) -> Self {
        Self {
            name,
            lhs,
            threshold,
            pass: lhs < threshold,
        }
    }
}

/// The four feasibility inequalities, each normalized to "LHS << 1" form:
/// two-photon detuning |delta| L/v0, Doppler spread (|dv|/v0)(k_p-k_s)L,
/// the adiabaticity integral, and the opacity bound rewritten as |r|/alpha.
#[derive(Debug, Clone, Serialize)]
pub struct FeasibilityReport {
    pub two_photon: ConditionCheck,
    pub doppler: ConditionCheck,
    pub adiabaticity: ConditionCheck,
    pub opacity: ConditionCheck,
    pub all_pass: bool,
}

pub fn check_feasibility(
    params: &SystemParams,
    profile: &StokesProfile,
    velocities: &VelocityDistribution,
    thresholds: &Thresholds,
) -> FeasibilityReport {
    let ra = params.r().abs();

    // |delta| L / v0, worst class.
    let two_photon_lhs = (0..velocities.len())
        .map(|l| (velocities.delta_rate(params, l) / params.r()).abs())
        .fold(0.0f64, f64::max);

    // (|v_l - v0| / v0) * (k_p - k_s) L, worst class.
    let doppler_lhs = (0..velocities.len())
        .map(|l| {
            let dv = velocities.velocity(params, l) - params.r();
            (dv / params.r() * velocities.beat_kl()).abs()
        })
        .fold(0.0f64, f64::max);

    // gamma * int v0 theta'^2 / (g^2 n + Omega0^2) dz; in scaled units
    // (|r|/alpha) * int theta'^2 / (1 + omega^2 |r|) dz.
    let adiabaticity_lhs = ra / params.alpha()
        * quad::integrate(
            |z| {
                let tp = mixing_angle_derivative(profile, z);
                let w = profile.value(z);
                tp * tp / (1.0 + w * w * ra)
            },
            0.0,
            1.0,
            1e-9,
        );

    // alpha >> v0/c, as |r|/alpha << 1/factor.
    let opacity_lhs = ra / params.alpha();

    let two_photon = ConditionCheck::new("two_photon", two_photon_lhs, thresholds.much_less);
    let doppler = ConditionCheck::new("doppler", doppler_lhs, thresholds.much_less);
    let adiabaticity = ConditionCheck::new("adiabaticity", adiabaticity_lhs, thresholds.much_less);
    let opacity =
        ConditionCheck::new("opacity", opacity_lhs, 1.0 / thresholds.much_greater_factor);
    let all_pass = two_photon.pass && doppler.pass && adiabaticity.pass && opacity.pass;
    FeasibilityReport {
        two_photon,
        doppler,
        adiabaticity,
        opacity,
        all_pass,
    }
}
