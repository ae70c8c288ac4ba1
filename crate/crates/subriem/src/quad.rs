//! Deterministic quadrature used for oracle-grade integrals: adaptive
//! Simpson on an interval and nested adaptive integration over boxes of
//! dimension up to three. These back the normalization constants, profile
//! construction, and the quadrature side of verification cross-checks.

use crate::error::{Error, Result};

/// Maximum bisection depth before an interval is accepted as-is.
const MAX_DEPTH: u32 = 48;

/// Minimum bisection depth: the error test may not terminate an interval
/// before four levels of subdivision. This guards against integrands whose
/// support is narrow relative to the interval, where the first few probe
/// points can all miss it and fake instant convergence.
const MIN_DEPTH: u32 = 4;

/// Adaptive Simpson integration of `f` over `[a, b]` to absolute tolerance
/// `tol`. Classic bisect-and-compare with the standard 1/15 error estimate;
/// recursion depth is capped to keep pathological integrands from hanging.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Domain("quadrature interval must be finite".into()));
    }
    if a == b {
        return Ok(0.0);
    }
    let fa = f(a);
    let fb = f(b);
    let mid = 0.5 * (a + b);
    let fm = f(mid);
    let whole = simpson(a, b, fa, fm, fb);
    let value = simpson_rec(f, a, b, fa, fm, fb, whole, tol, MAX_DEPTH);
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite("adaptive Simpson quadrature".into()))
    }
}

#[inline]
fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let mid = 0.5 * (a + b);
    let lm = 0.5 * (a + mid);
    let rm = 0.5 * (mid + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, mid, fa, flm, fm);
    let right = simpson(mid, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || (depth + MIN_DEPTH <= MAX_DEPTH && delta.abs() <= 15.0 * tol) {
        left + right + delta / 15.0
    } else {
        simpson_rec(f, a, mid, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + simpson_rec(f, mid, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}

/// Integral of `f` over the box `prod_i [lo_i, hi_i]` by nesting
/// [`adaptive_simpson`] one dimension at a time. Practical for the low
/// dimensions this crate works in (<= 3, occasionally 4 for coarse checks).
pub fn integrate_box(
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    lo: &[f64],
    hi: &[f64],
    tol: f64,
) -> Result<f64> {
    if lo.len() != hi.len() || lo.is_empty() {
        return Err(Error::DimensionMismatch(
            "box bounds must be non-empty and of equal length".into(),
        ));
    }
    nested(f, lo, hi, tol, &[])
}

fn nested(
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    lo: &[f64],
    hi: &[f64],
    tol: f64,
    prefix: &[f64],
) -> Result<f64> {
    let dim = prefix.len();
    let last = dim + 1 == lo.len();
    // Inner integrals run at a modestly tighter tolerance so the outer
    // error estimate stays honest.
    let inner_tol = tol / (2.0 * (hi[dim] - lo[dim]).abs().max(1.0));
    let failed = std::cell::Cell::new(false);
    let g = |t: f64| -> f64 {
        let mut pt = Vec::with_capacity(lo.len());
        pt.extend_from_slice(prefix);
        pt.push(t);
        if last {
            f(&pt)
        } else {
            nested(f, lo, hi, inner_tol, &pt).unwrap_or_else(|_| {
                failed.set(true);
                0.0
            })
        }
    };
    let v = adaptive_simpson(&g, lo[dim], hi[dim], tol)?;
    if failed.get() {
        return Err(Error::NonFinite("nested box quadrature".into()));
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    #[test]
    fn polynomial_is_exact() {
        let v = adaptive_simpson(&|x| 3.0 * x * x, 0.0, 2.0, 1e-12).unwrap();
        assert_abs_diff_eq!(v, 8.0, epsilon = 1e-12);
    }

    #[test]
    fn gaussian_mass() {
        // int_{-8}^{8} e^{-x^2} dx = sqrt(pi) up to a 1e-28 tail.
        let v = adaptive_simpson(&|x: f64| (-x * x).exp(), -8.0, 8.0, 1e-12).unwrap();
        assert_abs_diff_eq!(v, PI.sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn box_integral_separates() {
        // int over [0,1]^3 of x y^2 z^3 = 1/2 * 1/3 * 1/4.
        let f = |p: &[f64]| p[0] * p[1] * p[1] * p[2] * p[2] * p[2];
        let v = integrate_box(&f, &[0.0; 3], &[1.0; 3], 1e-10).unwrap();
        assert_abs_diff_eq!(v, 1.0 / 24.0, epsilon = 1e-8);
    }

    #[test]
    fn narrow_hump_on_wide_interval_is_not_missed() {
        // All five initial probe points of [-9, 9] sit where this
        // integrand vanishes; the forced minimum depth must still find
        // the two humps at +-1/sqrt(2).
        let v = adaptive_simpson(&|x: f64| 3.0 * x.abs() * (-2.0 * x * x).exp(), -9.0, 9.0, 1e-12)
            .unwrap();
        assert_abs_diff_eq!(v, 1.5, epsilon = 1e-9); // 2 * 3/(2*2)
    }
}
