//! Crate-wide error type.
//!
//! Configuration problems (schema violations, broken invariants) are kept
//! distinct from physics/numerics failures so the CLI can map them to
//! different exit codes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Transfer-map quantities are undefined for v0 <= 0.
    #[error("mixing angle undefined: velocity ratio r = {r} is not positive")]
    NonPositiveVelocity { r: f64 },

    /// The group velocity vanishes or reverses somewhere on the requested span.
    #[error("group velocity not positive on [0, {z}] (min {v_min} at z = {z_min}); no transport delay")]
    NonTransportingChannel { z: f64, v_min: f64, z_min: f64 },

    /// cos(theta(0)) is too small: the input is already almost fully atomic
    /// and the photon-normalized transfer map is ill-conditioned.
    #[error("degenerate profile: cos(theta(0)) = {cos_theta0:.3e} < 1e-6")]
    DegenerateProfile { cos_theta0: f64 },

    /// A sampled input envelope was queried before its recorded window.
    #[error("time {t} precedes the recorded input window starting at {t_start}")]
    OutOfRecord { t: f64, t_start: f64 },

    /// The counting window clips part of the delayed output pulse.
    #[error("window [{w0}, {w1}] does not cover the output support [{s0}, {s1}]")]
    WindowTooShort { w0: f64, w1: f64, s0: f64, s1: f64 },

    #[error("CFL violated: dt = {dt} exceeds dz/c = {dz}")]
    CflViolation { dt: f64, dz: f64 },

    #[error("numerical blowup at t = {t}: max amplitude {max_amp:.3e} exceeds 1e6 x input scale {scale:.3e}")]
    NumericalBlowup { t: f64, max_amp: f64, scale: f64 },

    #[error("grid refinement does not converge: errors {errors:?}")]
    NonConvergent { errors: Vec<f64> },

    #[error("covariance matrix is unphysical: {reason}")]
    UnphysicalCovariance { reason: String },

    /// Malformed configuration document.
    #[error("config schema error at {pointer}: {message}")]
    Schema { pointer: String, message: String },

    /// Structurally valid config that breaks a model invariant.
    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invariant(msg: impl Into<String>) -> Self {
        Error::Invariant(msg.into())
    }

    /// True for errors caused by the configuration document rather than
    /// by the physics computation itself.
    pub fn is_config_error(&self) -> bool {
        matches!(self, Error::Schema { .. } | Error::Invariant(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
