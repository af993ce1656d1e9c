//! Shared independent oracles for the test suite. These deliberately avoid
//! the library's own quadrature and channel code paths.

/// Composite trapezoid at n and 2n points, Richardson-extrapolated.
pub fn trapezoid_richardson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let trap = |m: usize| {
        let h = (b - a) / m as f64;
        let mut s = 0.5 * (f(a) + f(b));
        for i in 1..m {
            s += f(a + i as f64 * h);
        }
        s * h
    };
    let t1 = trap(n);
    let t2 = trap(2 * n);
    (4.0 * t2 - t1) / 3.0
}
