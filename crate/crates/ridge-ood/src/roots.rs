//! Bracketed bisection with a Newton polish for monotone scalar equations.

use crate::error::{Error, Result};

pub(crate) const MAX_BISECTION: usize = 200;
pub(crate) const MAX_NEWTON: usize = 50;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Root {
    pub x: f64,
    pub residual: f64,
}

/// Finds a root of `f` inside `[lo, hi]`, where `f` returns the value and
/// derivative and changes sign across the bracket.
///
/// Bisection runs until `|f| <= tol` or the bracket collapses; Newton steps
/// then polish the estimate without ever leaving the current bracket.
pub(crate) fn bisect_newton<F>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> Result<Root>
where
    F: Fn(f64) -> (f64, f64),
{
    let (mut f_lo, _) = f(lo);
    let (f_hi, _) = f(hi);
    if f_lo == 0.0 {
        return Ok(Root { x: lo, residual: 0.0 });
    }
    if f_hi == 0.0 {
        return Ok(Root { x: hi, residual: 0.0 });
    }
    if !(f_lo.is_finite() && f_hi.is_finite()) || f_lo.signum() == f_hi.signum() {
        return Err(Error::SolverFailure {
            iterations: 0,
            x: 0.5 * (lo + hi),
            residual: f_lo.abs().min(f_hi.abs()),
        });
    }

    let mut x = 0.5 * (lo + hi);
    let mut fx = f(x).0;
    for _ in 0..MAX_BISECTION {
        x = 0.5 * (lo + hi);
        fx = f(x).0;
        if fx == 0.0 || fx.abs() <= tol {
            break;
        }
        if fx.signum() == f_lo.signum() {
            lo = x;
            f_lo = fx;
        } else {
            hi = x;
        }
        if hi - lo <= 4.0 * f64::EPSILON * x.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }

    // Keep the bracket consistent with the current iterate before polishing.
    for _ in 0..MAX_NEWTON {
        if fx == 0.0 {
            break;
        }
        if fx.signum() == f_lo.signum() {
            lo = x;
            f_lo = fx;
        } else {
            hi = x;
        }
        let (_, dfx) = f(x);
        let step = fx / dfx;
        let candidate = x - step;
        if !candidate.is_finite() || candidate <= lo || candidate >= hi {
            break;
        }
        let fc = f(candidate).0;
        if fc.abs() >= fx.abs() {
            break;
        }
        x = candidate;
        fx = fc;
        if step.abs() <= 2.0 * f64::EPSILON * x.abs() {
            break;
        }
    }

    Ok(Root { x, residual: fx.abs() })
}
