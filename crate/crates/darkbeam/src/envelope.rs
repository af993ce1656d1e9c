//! Input field envelopes at the z = 0 boundary.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Width of the effective support of a Gaussian envelope, in sigmas.
/// Beyond this the intensity is below 2e-28 of peak.
const GAUSSIAN_SUPPORT_SIGMAS: f64 = 8.0;

/// Complex envelope of the input quantum field at z = 0, as a function of
/// time. Analytic Gaussians are defined for all times; sampled records are
/// only defined from their first sample onwards.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum InputEnvelope {
    Gaussian {
        amplitude: f64,
        phase: f64,
        center: f64,
        sigma: f64,
    },
    Samples {
        t0: f64,
        dt: f64,
        values: Vec<(f64, f64)>,
    },
}

impl InputEnvelope {
    pub fn gaussian(amplitude: f64, center: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !amplitude.is_finite() || !center.is_finite() {
            return Err(Error::invariant(format!(
                "gaussian envelope invalid: amplitude {amplitude}, center {center}, sigma {sigma}"
            )));
        }
        Ok(Self::Gaussian {
            amplitude,
            phase: 0.0,
            center,
            sigma,
        })
    }

    /// Gaussian temporal mode normalized to unit flux, c * int |u|^2 dt = 1.
    pub fn normalized_gaussian(center: f64, sigma: f64) -> Result<Self> {
        let amp = 1.0 / (sigma * std::f64::consts::PI.sqrt()).sqrt();
        Self::gaussian(amp, center, sigma)
    }

    pub fn samples(t0: f64, dt: f64, values: Vec<Complex64>) -> Result<Self> {
        if !(dt > 0.0) || values.len() < 2 {
            return Err(Error::invariant(
                "sampled envelope needs dt > 0 and >= 2 samples",
            ));
        }
        Ok(Self::Samples {
            t0,
            dt,
            values: values.into_iter().map(|v| (v.re, v.im)).collect(),
        })
    }

    pub fn with_phase(self, phase: f64) -> Self {
        match self {
            Self::Gaussian {
                amplitude,
                center,
                sigma,
                ..
            } => Self::Gaussian {
                amplitude,
                phase,
                center,
                sigma,
            },
            Self::Samples { t0, dt, values } => {
                let rot = Complex64::from_polar(1.0, phase);
                let values = values
                    .into_iter()
                    .map(|(re, im)| {
                        let v = Complex64::new(re, im) * rot;
                        (v.re, v.im)
                    })
                    .collect();
                Self::Samples { t0, dt, values }
            }
        }
    }

    /// Envelope value at time t. Sampled records error before their first
    /// sample and decay to zero after their last.
    pub fn eval(&self, t: f64) -> Result<Complex64> {
        match self {
            Self::Gaussian {
                amplitude,
                phase,
                center,
                sigma,
            } => {
                let u = (t - center) / sigma;
                let mag = amplitude * (-0.5 * u * u).exp();
                Ok(Complex64::from_polar(mag, *phase))
            }
            Self::Samples { t0, dt, values } => {
                if t < *t0 - 1e-12 * dt {
                    return Err(Error::OutOfRecord { t, t_start: *t0 });
                }
                let s = (t - t0) / dt;
                let idx = s.floor() as isize;
                if idx < 0 {
                    let (re, im) = values[0];
                    return Ok(Complex64::new(re, im));
                }
                let idx = idx as usize;
                if idx + 1 >= values.len() {
                    return Ok(Complex64::new(0.0, 0.0));
                }
                let f = s - idx as f64;
                let a = Complex64::new(values[idx].0, values[idx].1);
                let b = Complex64::new(values[idx + 1].0, values[idx + 1].1);
                Ok(a * (1.0 - f) + b * f)
            }
        }
    }

    /// Time interval outside which the envelope is negligible (Gaussian) or
    /// undefined/zero (samples).
    pub fn support(&self) -> (f64, f64) {
        match self {
            Self::Gaussian { center, sigma, .. } => (
                center - GAUSSIAN_SUPPORT_SIGMAS * sigma,
                center + GAUSSIAN_SUPPORT_SIGMAS * sigma,
            ),
            Self::Samples { t0, dt, values } => (*t0, t0 + dt * (values.len() - 1) as f64),
        }
    }

    /// Peak magnitude, used to scale blowup detection.
    pub fn peak(&self) -> f64 {
        match self {
            Self::Gaussian { amplitude, .. } => amplitude.abs(),
            Self::Samples { values, .. } => values
                .iter()
                .map(|(re, im)| Complex64::new(*re, *im).norm())
                .fold(0.0, f64::max),
        }
    }

    /// Integrated photon flux c * int |u|^2 dt (c = 1).
    pub fn flux(&self) -> f64 {
        match self {
            Self::Gaussian {
                amplitude, sigma, ..
            } => amplitude * amplitude * sigma * std::f64::consts::PI.sqrt(),
            Self::Samples { dt, values, .. } => {
                let mut acc = 0.0;
                for w in values.windows(2) {
                    let a = w[0].0 * w[0].0 + w[0].1 * w[0].1;
                    let b = w[1].0 * w[1].0 + w[1].1 * w[1].1;
                    acc += 0.5 * (a + b) * dt;
                }
                acc
            }
        }
    }
}
