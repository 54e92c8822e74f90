//! Bracketed inversion of monotone scalar maps.

use crate::error::{Result, SpecregError};

const MAX_ITER: usize = 400;

/// Solve `f(x) = y` for increasing `f` on `[lo, hi]`, bisecting in log space.
///
/// Requires `0 < lo < hi` and `f(lo) <= y <= f(hi)`.
pub fn invert_increasing_log<F: Fn(f64) -> f64>(f: F, y: f64, mut lo: f64, mut hi: f64, rel_tol: f64) -> Result<f64> {
    let flo = f(lo);
    let fhi = f(hi);
    if flo == y {
        return Ok(lo);
    }
    if fhi == y {
        return Ok(hi);
    }
    if !(flo < y && y < fhi) {
        return Err(SpecregError::OutOfRange { what: "monotone inversion", value: y });
    }
    for _ in 0..MAX_ITER {
        let mid = (lo.ln() + 0.5 * (hi.ln() - lo.ln())).exp();
        let mid = if mid > lo && mid < hi { mid } else { 0.5 * (lo + hi) };
        if mid <= lo || mid >= hi {
            return Ok(mid);
        }
        let fm = f(mid);
        if (fm - y).abs() <= rel_tol * y.abs() {
            return Ok(mid);
        }
        if fm < y {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo - 1.0 < 4.0 * f64::EPSILON {
            return Ok(0.5 * (lo + hi));
        }
    }
    Err(SpecregError::NoConvergence { what: "monotone inversion", iterations: MAX_ITER })
}

/// Find a bracket `[lo, hi]` with `f(lo) <= y <= f(hi)` for increasing `f` on `(0, cap]`.
pub fn bracket_increasing<F: Fn(f64) -> f64>(f: &F, y: f64, start: f64, cap: f64) -> Result<(f64, f64)> {
    let mut hi = start.min(cap);
    let mut guard = 0;
    while f(hi) < y {
        if hi >= cap {
            return Err(SpecregError::OutOfRange { what: "monotone inversion", value: y });
        }
        hi = (hi * 16.0).min(cap);
        guard += 1;
        if guard > 200 {
            return Err(SpecregError::OutOfRange { what: "monotone inversion", value: y });
        }
    }
    let mut lo = hi;
    guard = 0;
    while f(lo) > y {
        lo *= 1.0 / 16.0;
        guard += 1;
        if lo < f64::MIN_POSITIVE || guard > 400 {
            return Err(SpecregError::OutOfRange { what: "monotone inversion", value: y });
        }
    }
    Ok((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverts_cube() {
        let f = |x: f64| x * x * x;
        let (lo, hi) = bracket_increasing(&f, 8.0, 1.0, f64::INFINITY).unwrap();
        let x = invert_increasing_log(f, 8.0, lo, hi, 1e-14).unwrap();
        assert!((x - 2.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_reported() {
        let f = |x: f64| x.min(1.0);
        assert!(bracket_increasing(&f, 2.0, 0.5, 10.0).is_err());
    }
}
