//! Logarithmic grids and deterministic summation.

use crate::error::{invalid, Result};

/// `n` points log-spaced over `[lo, hi]`, endpoints included.
pub fn log_space(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
        return Err(invalid(format!("log grid needs 0 < lo <= hi < inf, got [{lo}, {hi}]")));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    if n == 1 || hi == lo {
        return Ok(vec![lo; n.min(1)]);
    }
    let (a, b) = (lo.ln(), hi.ln());
    let step = (b - a) / (n - 1) as f64;
    let mut out: Vec<f64> = (0..n).map(|i| (a + step * i as f64).exp()).collect();
    out[0] = lo;
    out[n - 1] = hi;
    Ok(out)
}

/// Log grid with a fixed density per decade, ascending.
pub fn log_grid_per_decade(lo: f64, hi: f64, per_decade: usize) -> Result<Vec<f64>> {
    if per_decade == 0 {
        return Err(invalid("points per decade must be positive"));
    }
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
        return Err(invalid(format!("log grid needs 0 < lo <= hi < inf, got [{lo}, {hi}]")));
    }
    let decades = (hi / lo).log10();
    let n = ((decades * per_decade as f64).ceil() as usize).max(1) + 1;
    log_space(lo, hi, n)
}

/// Index of the grid point nearest to `x` in log distance.
pub fn nearest_log(grid: &[f64], x: f64) -> Option<usize> {
    let lx = x.ln();
    grid.iter()
        .enumerate()
        .filter(|(_, g)| **g > 0.0)
        .min_by(|(_, a), (_, b)| {
            (a.ln() - lx).abs().partial_cmp(&(b.ln() - lx).abs()).unwrap_or(std::cmp::Ordering::Equal)
        })
        .map(|(i, _)| i)
}

/// Pairwise summation; order-independent of thread scheduling.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 64;
    if xs.len() <= BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub(crate) fn ensure_ascending(grid: &[f64], what: &str) -> Result<()> {
    if grid.is_empty() {
        return Err(invalid(format!("{what} is empty")));
    }
    if grid.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
        return Err(invalid(format!("{what} must contain positive finite values")));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid(format!("{what} must be strictly ascending")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_exact() {
        let g = log_space(1e-8, 3.0, 17).unwrap();
        assert_eq!(g[0], 1e-8);
        assert_eq!(g[16], 3.0);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn per_decade_density() {
        let g = log_grid_per_decade(1e-4, 1.0, 40).unwrap();
        assert_eq!(g.len(), 161);
    }

    #[test]
    fn pairwise_matches_naive() {
        let xs: Vec<f64> = (1..=1000).map(|i| 1.0 / i as f64).collect();
        let naive: f64 = xs.iter().sum();
        assert!((pairwise_sum(&xs) - naive).abs() < 1e-12);
    }
}
