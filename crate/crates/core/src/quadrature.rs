//! Small deterministic quadrature and root-finding helpers.
//!
//! The certificate computations integrate smooth scalar functions to tight
//! absolute tolerances, so an adaptive Simpson rule with Richardson control
//! is enough. The majorant iteration additionally needs "integral from here
//! to the right endpoint" on a uniform grid, which
//! [`cumulative_from_right`] provides with fourth-order accuracy.

use crate::error::{Error, Result};

/// Default recursion depth cap for [`adaptive_simpson`].
const MAX_DEPTH: u32 = 60;

/// Adaptive Simpson integration of `f` over `[a, b]` to absolute tolerance
/// `abs_tol`. `a <= b` is required; the empty interval integrates to zero.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64) -> Result<f64> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Quadrature(format!("non-finite interval [{a}, {b}]")));
    }
    if a > b {
        return Err(Error::Quadrature(format!("reversed interval [{a}, {b}]")));
    }
    if a == b {
        return Ok(0.0);
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = simpson(a, b, fa, fm, fb);
    let value = simpson_step(&f, a, b, fa, fm, fb, whole, abs_tol, MAX_DEPTH)?;
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Quadrature("integrand produced a non-finite value".into()))
    }
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    // The factor 15 is the classic Richardson estimate for Simpson's rule.
    if delta.abs() <= 15.0 * tol || (b - a) < f64::EPSILON * (1.0 + a.abs() + b.abs()) {
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 {
        return Err(Error::Quadrature(format!(
            "recursion limit reached on [{a}, {b}] (estimate error {delta:e})"
        )));
    }
    let lv = simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?;
    let rv = simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?;
    Ok(lv + rv)
}

/// Right-anchored cumulative integral on a uniform grid.
///
/// Given samples `values[j] = f(x_j)` at `x_j = x_0 + j h`, returns the
/// vector `c` with `c[j] ~= int_{x_j}^{x_last} f(x) dx` (so `c[last] = 0`).
/// Interior nodes use a composite Simpson chain; the node adjacent to the
/// right endpoint uses the quadratic through the last three samples. Both
/// pieces are exact for quadratics and fourth-order accurate overall.
pub fn cumulative_from_right(values: &[f64], h: f64) -> Vec<f64> {
    let n = values.len();
    let mut out = vec![0.0; n];
    if n < 2 || h == 0.0 {
        return out;
    }
    if n == 2 {
        out[0] = 0.5 * h * (values[0] + values[1]);
        return out;
    }
    out[n - 2] = h / 12.0 * (-values[n - 3] + 8.0 * values[n - 2] + 5.0 * values[n - 1]);
    for j in (0..n - 2).rev() {
        out[j] = out[j + 2] + h / 3.0 * (values[j] + 4.0 * values[j + 1] + values[j + 2]);
    }
    out
}

/// Bisection root finding on `[lo, hi]` to absolute `x`-tolerance `x_tol`.
///
/// Requires `f(lo)` and `f(hi)` to have opposite (or zero) signs.
pub fn bisect<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, x_tol: f64) -> Result<f64> {
    let (mut lo, mut hi) = (lo, hi);
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.is_nan() || fhi.is_nan() {
        return Err(Error::Quadrature("bisection endpoint evaluated to NaN".into()));
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::Quadrature(format!(
            "no sign change on [{lo}, {hi}]: f(lo) = {flo:e}, f(hi) = {fhi:e}"
        )));
    }
    while (hi - lo).abs() > x_tol {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break; // interval narrower than one ulp
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_integrates_polynomials_exactly() {
        // Simpson with Richardson correction is exact through degree 3.
        let v = adaptive_simpson(|x| 3.0 * x * x - 2.0 * x + 1.0, 0.0, 2.0, 1e-14).unwrap();
        assert!((v - (8.0 - 4.0 + 2.0)).abs() < 1e-12, "got {v}");
    }

    #[test]
    fn simpson_hits_tight_tolerance_on_smooth_integrand() {
        let v = adaptive_simpson(|x| (-x).exp(), 0.0, 5.0, 1e-13).unwrap();
        let exact = 1.0 - (-5.0f64).exp();
        assert!((v - exact).abs() < 1e-12, "got {v}, want {exact}");
    }

    #[test]
    fn simpson_rejects_reversed_interval() {
        assert!(adaptive_simpson(|x| x, 1.0, 0.0, 1e-10).is_err());
    }

    #[test]
    fn empty_interval_is_zero() {
        assert_eq!(adaptive_simpson(|x| x.exp(), 1.5, 1.5, 1e-12).unwrap(), 0.0);
    }

    #[test]
    fn cumulative_from_right_matches_closed_forms() {
        let n = 501;
        let h = 2.0 / (n as f64 - 1.0);
        let xs: Vec<f64> = (0..n).map(|j| j as f64 * h).collect();
        let vals: Vec<f64> = xs.iter().map(|&x| x * x * x - x + 0.5).collect();
        let cum = cumulative_from_right(&vals, h);
        for (j, &x) in xs.iter().enumerate() {
            let exact = |t: f64| 0.25 * t.powi(4) - 0.5 * t * t + 0.5 * t;
            let want = exact(2.0) - exact(x);
            assert!(
                (cum[j] - want).abs() < 1e-10,
                "node {j}: got {} want {want}",
                cum[j]
            );
        }
        assert_eq!(cum[n - 1], 0.0);
    }

    #[test]
    fn cumulative_from_right_two_points_is_trapezoid() {
        let cum = cumulative_from_right(&[1.0, 3.0], 0.5);
        assert!((cum[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bisect_finds_root_to_tolerance() {
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-12).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-11, "got {r}");
    }

    #[test]
    fn bisect_requires_sign_change() {
        assert!(bisect(|x| x * x + 1.0, -1.0, 1.0, 1e-10).is_err());
    }
}
