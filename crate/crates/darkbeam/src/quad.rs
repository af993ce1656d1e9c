//! Adaptive Simpson quadrature.
//!
//! The delay and loss integrals downstream pin their quadrature error well
//! below the physics tolerances (1e-9 and 1e-8 relative), so the integrator
//! carries an explicit relative tolerance and a Richardson-corrected return
//! value.

const MAX_DEPTH: u32 = 48;

fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
    h / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adapt<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(fa, flm, fm, m - a);
    let right = simpson(fm, frm, fb, b - m);
    let delta = left + right - whole;
    if depth >= MAX_DEPTH || delta.abs() <= 15.0 * tol {
        // Richardson correction: one order better than plain Simpson.
        left + right + delta / 15.0
    } else {
        adapt(f, a, m, fa, flm, fm, left, 0.5 * tol, depth + 1)
            + adapt(f, m, b, fm, frm, fb, right, 0.5 * tol, depth + 1)
    }
}

/// Integrate `f` over `[a, b]` to relative tolerance `rel_tol`.
///
/// The tolerance is anchored to a coarse magnitude estimate of the integral;
/// an absolute floor keeps integrals that are genuinely zero from recursing
/// to full depth.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = simpson(fa, fm, fb, b - a);
    // Magnitude estimate from a 9-point scan so a node-straddling zero of the
    // coarse Simpson rule cannot zero out the tolerance.
    let mut mag = 0.0f64;
    for i in 0..=8 {
        let z = a + (b - a) * (i as f64) / 8.0;
        mag = mag.max(f(z).abs());
    }
    let tol = (rel_tol * mag * (b - a).abs()).max(1e-300);
    adapt(&f, a, b, fa, fm, fb, whole, tol, 0)
}

/// Cumulative integral of `f` on the given strictly increasing grid:
/// returns `I[i] = int_{grid[0]}^{grid[i]} f`.
///
/// Each panel is integrated adaptively, so the prefix sums inherit the
/// per-panel tolerance.
pub fn cumulative<F: Fn(f64) -> f64>(f: F, grid: &[f64], rel_tol: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(grid.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in grid.windows(2) {
        acc += integrate(&f, w[0], w[1], rel_tol);
        out.push(acc);
    }
    out
}
