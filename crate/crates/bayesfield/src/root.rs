//! Scalar root finding on a bracketing interval.
//!
//! Implements Chandrupatla's hybrid of inverse-quadratic interpolation and
//! bisection: each iteration keeps a sign-changing bracket, and the inverse
//! quadratic step is accepted only where it is provably better than
//! bisection, giving bisection's robustness with superlinear convergence
//! near simple roots.

use crate::error::{Error, Result};

/// Stopping rule and iteration cap for [`find_root`].
#[derive(Clone, Copy, Debug)]
pub struct RootOptions {
    /// Relative tolerance on the bracket width (scaled by the iterate).
    pub rel_tol: f64,
    /// Absolute tolerance on the bracket width.
    pub abs_tol: f64,
    /// Absolute tolerance on the function value; `|f| ≤ f_tol` stops early.
    pub f_tol: f64,
    /// Iteration cap; the midpoint of the final bracket is returned if hit.
    pub max_iter: usize,
}

impl Default for RootOptions {
    fn default() -> Self {
        RootOptions {
            rel_tol: 1e-10,
            abs_tol: 1e-300,
            f_tol: 0.0,
            max_iter: 200,
        }
    }
}

/// Finds `x` with `f(x) = 0` inside `[lo, hi]`, given `f(lo)` and `f(hi)`
/// with opposite signs (an endpoint value of exactly zero is accepted).
pub fn find_root<F: FnMut(f64) -> f64>(
    mut f: F,
    lo: f64,
    hi: f64,
    opts: RootOptions,
) -> Result<f64> {
    if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
        return Err(Error::invalid("root bracket", "must be finite with lo < hi"));
    }
    let (mut b, mut a) = (lo, hi);
    let (mut fb, mut fa) = (f(b), f(a));
    if fb == 0.0 {
        return Ok(b);
    }
    if fa == 0.0 {
        return Ok(a);
    }
    if !(fa.is_finite() && fb.is_finite()) {
        return Err(Error::Numerical("non-finite value at root bracket".into()));
    }
    if fa.signum() == fb.signum() {
        return Err(Error::invalid(
            "root bracket",
            "function has the same sign at both endpoints",
        ));
    }

    // State per Chandrupatla: (a, b) is the current bracket, c the previous
    // iterate outside it; t is the fractional position of the next probe.
    let (mut c, mut fc);
    let mut t = 0.5;
    for _ in 0..opts.max_iter {
        let x = b + t * (a - b);
        let fx = f(x);
        if !fx.is_finite() {
            return Err(Error::Numerical("non-finite value during root search".into()));
        }
        if fx == 0.0 || fx.abs() <= opts.f_tol {
            return Ok(x);
        }
        if fx.signum() == fb.signum() {
            // Root stays in (x, a): x replaces b, previous b becomes c.
            c = b;
            fc = fb;
        } else {
            // Root is in (b, x): shrink from the far side.
            c = a;
            fc = fa;
            a = b;
            fa = fb;
        }
        b = x;
        fb = fx;

        // Order so that the smaller magnitude sits at b (better iterate).
        let (xm, _fm) = if fa.abs() < fb.abs() { (a, fa) } else { (b, fb) };
        let tol = 2.0 * opts.rel_tol * xm.abs() + 0.5 * opts.abs_tol;
        let span = a - b;
        let tlim = tol / span.abs();
        if tlim > 0.5 {
            return Ok(xm);
        }

        // Inverse-quadratic step is admissible only if the points are
        // suitably non-collinear: φ² < ξ and (1−φ)² < 1−ξ.
        let xi = (b - a) / (c - a);
        let phi = (fb - fa) / (fc - fa);
        t = if phi * phi < xi && (1.0 - phi) * (1.0 - phi) < 1.0 - xi {
            // Inverse quadratic interpolation in Lagrange form.
            let iq = fb / (fa - fb) * (fc / (fa - fc))
                + (c - b) / (a - b) * (fb / (fc - fb)) * (fa / (fc - fa));
            iq.clamp(tlim, 1.0 - tlim)
        } else {
            0.5
        };
    }
    Ok(0.5 * (a + b))
}
