//! Spectral filter catalogue: q_α(λ) with residual r_α(λ) = 1 − λ q_α(λ).

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, SpecregError};
use crate::index_fn::IndexFunction;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum FilterKind {
    Tikhonov,
    Showalter,
    Landweber { mu_step: f64 },
    IteratedTikhonov { k: u32 },
    Lardy { beta: f64 },
    ModifiedCutoff,
    /// Plain truncated SVD; kept to exhibit the diagonal condition failing.
    SpectralCutoff,
}

impl FilterKind {
    pub fn name(&self) -> &'static str {
        match self {
            FilterKind::Tikhonov => "tikhonov",
            FilterKind::Showalter => "showalter",
            FilterKind::Landweber { .. } => "landweber",
            FilterKind::IteratedTikhonov { .. } => "iterated_tikhonov",
            FilterKind::Lardy { .. } => "lardy",
            FilterKind::ModifiedCutoff => "modified_cutoff",
            FilterKind::SpectralCutoff => "spectral_cutoff",
        }
    }

    pub fn is_iterative(&self) -> bool {
        matches!(self, FilterKind::Landweber { .. } | FilterKind::Lardy { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterMethod {
    pub kind: FilterKind,
    pub c_q: f64,
    pub c_low: f64,
    pub c_diag: f64,
    #[serde(with = "crate::float_serde")]
    pub alpha_max: f64,
    /// classical qualification; +∞ when unbounded
    #[serde(with = "crate::float_serde")]
    pub qualification: f64,
    /// constants as stated in the literature, for side-by-side reporting
    pub reference_c_low: f64,
    pub reference_c_diag: f64,
    norm_tt: f64,
}

/// k_α = min{n ∈ ℕ₀ : n + 1 > 1/α}
pub fn iteration_count(alpha: f64) -> f64 {
    ((1.0 / alpha) * (1.0 + 1e-12)).floor().max(0.0)
}

fn landweber_diag_sup(mu: f64, k_min: f64) -> f64 {
    let mut best = (-mu).exp();
    let mut n = k_min.max(1.0);
    for _ in 0..20_000 {
        best = best.max((n * (-mu / (n + 1.0)).ln_1p()).exp());
        n += 1.0;
    }
    best
}

fn lardy_diag_sup(beta: f64, k_min: f64) -> f64 {
    let mut best = (-1.0 / beta).exp();
    let mut n = k_min.max(1.0);
    for _ in 0..20_000 {
        best = best.max((-n * (1.0 / (beta * (n + 1.0))).ln_1p()).exp());
        n += 1.0;
    }
    best
}

impl FilterMethod {
    /// Builds the method for an operator with ‖T*T‖ = `norm_tt`.
    pub fn new(kind: FilterKind, norm_tt: f64) -> Result<Self> {
        if !(norm_tt > 0.0 && norm_tt.is_finite()) {
            return Err(invalid(format!("operator norm must be positive, got {norm_tt}")));
        }
        let inf = f64::INFINITY;
        let e1 = (-1.0f64).exp();
        let m = match &kind {
            FilterKind::Tikhonov => (1.0, 0.5, 0.5, inf, 1.0, 0.5, 0.5),
            FilterKind::Showalter => (1.0, e1, e1, inf, inf, e1, e1),
            FilterKind::Landweber { mu_step } => {
                let mu = *mu_step;
                if !(mu > 0.0 && mu * norm_tt <= 1.0 + 1e-15) {
                    return Err(invalid(format!("landweber step {mu} must lie in (0, 1/‖T*T‖]")));
                }
                let amax = norm_tt.min(1.0) * (1.0 - 1e-9);
                let k = iteration_count(amax);
                let c_low = (k * (-mu / k).ln_1p()).exp();
                let c_diag = landweber_diag_sup(mu, k);
                (1.0, c_low, c_diag, amax, inf, c_low, (-mu).exp())
            }
            FilterKind::IteratedTikhonov { k } => {
                if *k == 0 {
                    return Err(invalid("iterated tikhonov needs k >= 1"));
                }
                let c = 0.5f64.powi(*k as i32);
                (*k as f64, c, c, inf, *k as f64, c, c)
            }
            FilterKind::Lardy { beta } => {
                let b = *beta;
                if !(b > 0.0 && b.is_finite()) {
                    return Err(invalid(format!("lardy beta must be positive, got {b}")));
                }
                let amax = b.min(1.0);
                let k = iteration_count(amax);
                let c_low = (-1.0 / b).exp();
                let c_diag = lardy_diag_sup(b, k);
                (1.0f64.max(1.0 / b), c_low, c_diag, amax, inf, c_low, (-0.5 / b).exp())
            }
            FilterKind::ModifiedCutoff => (0.5, 0.5, 0.5, inf, inf, 0.5, 0.5),
            FilterKind::SpectralCutoff => (1.0, 0.0, 0.0, inf, inf, 0.0, 0.0),
        };
        Ok(FilterMethod {
            kind,
            c_q: m.0,
            c_low: m.1,
            c_diag: m.2,
            alpha_max: m.3,
            qualification: m.4,
            reference_c_low: m.5,
            reference_c_diag: m.6,
            norm_tt,
        })
    }

    pub fn norm_tt(&self) -> f64 {
        self.norm_tt
    }

    pub fn check_alpha(&self, alpha: f64) -> Result<()> {
        if !(alpha > 0.0 && alpha <= self.alpha_max && alpha.is_finite()) {
            return Err(SpecregError::Domain { what: "regularization parameter", value: alpha });
        }
        Ok(())
    }

    pub fn check_lambda(&self, lambda: f64) -> Result<()> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(SpecregError::Domain { what: "spectral argument", value: lambda });
        }
        if let FilterKind::Landweber { mu_step } = self.kind {
            if mu_step * lambda > 1.0 + 1e-12 {
                return Err(SpecregError::Domain { what: "landweber spectral argument", value: lambda });
            }
        }
        Ok(())
    }

    /// Checked r_α(λ).
    pub fn r_alpha(&self, alpha: f64, lambda: f64) -> Result<f64> {
        self.check_alpha(alpha)?;
        self.check_lambda(lambda)?;
        Ok(self.r(alpha, lambda))
    }

    /// Checked q_α(λ).
    pub fn q_alpha(&self, alpha: f64, lambda: f64) -> Result<f64> {
        self.check_alpha(alpha)?;
        self.check_lambda(lambda)?;
        Ok(self.q(alpha, lambda))
    }

    /// r_α(λ) without range checks.
    pub fn r(&self, alpha: f64, lambda: f64) -> f64 {
        match self.kind {
            FilterKind::Tikhonov => alpha / (alpha + lambda),
            FilterKind::Showalter => (-lambda / alpha).exp(),
            FilterKind::Landweber { mu_step } => {
                let k = iteration_count(alpha);
                let x = mu_step * lambda;
                if x >= 1.0 {
                    if k == 0.0 { 1.0 } else { 0.0 }
                } else {
                    (k * (-x).ln_1p()).exp()
                }
            }
            FilterKind::IteratedTikhonov { k } => (-(k as f64) * (lambda / alpha).ln_1p()).exp(),
            FilterKind::Lardy { beta } => (-iteration_count(alpha) * (lambda / beta).ln_1p()).exp(),
            FilterKind::ModifiedCutoff => (1.0 - lambda / (2.0 * alpha)).max(0.0),
            FilterKind::SpectralCutoff => {
                if lambda < alpha { 1.0 } else { 0.0 }
            }
        }
    }

    /// q_α(λ) without range checks.
    pub fn q(&self, alpha: f64, lambda: f64) -> f64 {
        match self.kind {
            FilterKind::Tikhonov => 1.0 / (alpha + lambda),
            FilterKind::Showalter => {
                if lambda == 0.0 {
                    1.0 / alpha
                } else {
                    -(-lambda / alpha).exp_m1() / lambda
                }
            }
            FilterKind::Landweber { mu_step } => {
                let k = iteration_count(alpha);
                let x = mu_step * lambda;
                if lambda == 0.0 {
                    mu_step * k
                } else if x >= 1.0 {
                    if k == 0.0 { 0.0 } else { 1.0 / lambda }
                } else {
                    -(k * (-x).ln_1p()).exp_m1() / lambda
                }
            }
            FilterKind::IteratedTikhonov { k } => {
                if lambda == 0.0 {
                    k as f64 / alpha
                } else {
                    -(-(k as f64) * (lambda / alpha).ln_1p()).exp_m1() / lambda
                }
            }
            FilterKind::Lardy { beta } => {
                let k = iteration_count(alpha);
                if lambda == 0.0 {
                    k / beta
                } else {
                    -(-k * (lambda / beta).ln_1p()).exp_m1() / lambda
                }
            }
            FilterKind::ModifiedCutoff => {
                let cap = 1.0 / (2.0 * alpha);
                if lambda == 0.0 { cap } else { (1.0 / lambda).min(cap) }
            }
            FilterKind::SpectralCutoff => {
                if lambda < alpha { 0.0 } else { 1.0 / lambda }
            }
        }
    }

    /// Snaps α to the parameter actually realized: 1/k_α for iterative methods.
    pub fn snap(&self, alpha: f64) -> f64 {
        if self.kind.is_iterative() {
            let mut k = iteration_count(alpha);
            if k < 1.0 {
                return alpha;
            }
            while 1.0 / k > self.alpha_max {
                k += 1.0;
            }
            1.0 / k
        } else {
            alpha
        }
    }

    /// Clips a grid to (0, α_max], snaps iterative methods and removes duplicates.
    pub fn admissible_grid(&self, grid: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = grid
            .iter()
            .copied()
            .filter(|a| *a > 0.0 && *a <= self.alpha_max)
            .map(|a| self.snap(a))
            .filter(|a| *a <= self.alpha_max)
            .collect();
        out.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out.dedup_by(|a, b| (*a / *b - 1.0).abs() < 1e-12);
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub condition: String,
    pub alpha: f64,
    pub lambda: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub method: String,
    pub q_bound_ok: bool,
    pub decreasing_in_lambda_ok: bool,
    pub increasing_in_alpha_ok: bool,
    pub diagonal_ok: bool,
    pub c_q: f64,
    pub c_low: f64,
    pub c_diag: f64,
    pub reference_c_low: f64,
    pub reference_c_diag: f64,
    /// measured range of r_α(α) over the α grid
    pub diag_min: f64,
    pub diag_max: f64,
    pub violations: Vec<Violation>,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.q_bound_ok && self.decreasing_in_lambda_ok && self.increasing_in_alpha_ok && self.diagonal_ok
    }
}

const CHECK_TOL: f64 = 1e-12;

/// Grid check of the four filter conditions.
pub fn check_assumption_sr(m: &FilterMethod, alpha_grid: &[f64], lambda_grid: &[f64]) -> Result<AssumptionReport> {
    let mut alphas: Vec<f64> = alpha_grid.iter().copied().filter(|a| *a > 0.0 && *a <= m.alpha_max).collect();
    alphas.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if alphas.is_empty() {
        return Err(invalid("no admissible alpha in the grid"));
    }
    let mut lambdas: Vec<f64> = lambda_grid.to_vec();
    lambdas.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for l in &lambdas {
        m.check_lambda(*l)?;
    }
    let mut violations = Vec::new();
    let push = |v: &mut Vec<Violation>, c: &str, a: f64, l: f64, val: f64| {
        if v.len() < 32 {
            v.push(Violation { condition: c.to_string(), alpha: a, lambda: l, value: val });
        }
    };

    let mut q_ok = true;
    let mut dec_ok = true;
    for &a in &alphas {
        let mut prev = f64::INFINITY;
        for &l in &lambdas {
            let q = m.q(a, l);
            if q.abs() > m.c_q / a * (1.0 + CHECK_TOL) {
                q_ok = false;
                push(&mut violations, "q_bound", a, l, q);
            }
            let r = m.r(a, l);
            if r < -CHECK_TOL || r > prev + CHECK_TOL {
                dec_ok = false;
                push(&mut violations, "decreasing_in_lambda", a, l, r);
            }
            prev = r;
        }
    }

    let mut inc_ok = true;
    for &l in &lambdas {
        let mut prev = f64::NEG_INFINITY;
        for &a in &alphas {
            let r = m.r(a, l);
            if r < prev - CHECK_TOL {
                inc_ok = false;
                push(&mut violations, "increasing_in_alpha", a, l, r);
            }
            prev = r;
        }
    }

    let mut diag_ok = m.c_low > 0.0 && m.c_diag < 1.0 && m.c_low <= m.c_diag;
    if !diag_ok {
        push(&mut violations, "diagonal_constants", f64::NAN, f64::NAN, m.c_low);
    }
    let mut dmin = f64::INFINITY;
    let mut dmax = f64::NEG_INFINITY;
    for &a in &alphas {
        let d = m.r(a, a);
        dmin = dmin.min(d);
        dmax = dmax.max(d);
        if d < m.c_low - CHECK_TOL || d > m.c_diag + CHECK_TOL {
            diag_ok = false;
            push(&mut violations, "diagonal", a, a, d);
        }
    }

    Ok(AssumptionReport {
        method: m.kind.name().to_string(),
        q_bound_ok: q_ok,
        decreasing_in_lambda_ok: dec_ok,
        increasing_in_alpha_ok: inc_ok,
        diagonal_ok: diag_ok,
        c_q: m.c_q,
        c_low: m.c_low,
        c_diag: m.c_diag,
        reference_c_low: m.reference_c_low,
        reference_c_diag: m.reference_c_diag,
        diag_min: dmin,
        diag_max: dmax,
        violations,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualificationReport {
    #[serde(with = "crate::float_serde")]
    pub b_hat: f64,
    /// per-α supremum, in ascending α order
    pub per_alpha: Vec<f64>,
    pub divergent: bool,
}

/// B̂ = max r_α(λ) κ(λ)^ν / κ(α)^ν over the grids.
pub fn qualification_constant(
    m: &FilterMethod,
    kappa: &IndexFunction,
    nu: f64,
    alpha_grid: &[f64],
    lambda_grid: &[f64],
) -> Result<QualificationReport> {
    if !(nu > 0.0) {
        return Err(invalid("qualification exponent must be positive"));
    }
    let mut alphas: Vec<f64> = alpha_grid.iter().copied().filter(|a| *a > 0.0 && *a <= m.alpha_max).collect();
    alphas.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if alphas.len() < 2 {
        return Err(invalid("qualification check needs at least two admissible alphas"));
    }
    let kl: Vec<f64> = lambda_grid.iter().map(|l| kappa.eval(*l).map(|k| k.powf(nu))).collect::<Result<_>>()?;
    let mut per_alpha = Vec::with_capacity(alphas.len());
    for &a in &alphas {
        let ka = kappa.eval(a)?.powf(nu);
        let s = lambda_grid
            .iter()
            .zip(&kl)
            .map(|(l, k)| m.r(a, *l) * k / ka)
            .fold(0.0, f64::max);
        per_alpha.push(s);
    }
    let b_hat = per_alpha.iter().cloned().fold(0.0, f64::max);
    // growth over the bottom decade of the α grid
    let a0 = alphas[0];
    let j = alphas.partition_point(|a| *a <= 10.0 * a0).min(alphas.len() - 1).max(1);
    let slope = (per_alpha[j] / per_alpha[0]).ln() / (alphas[j] / a0).ln();
    let divergent = slope < -0.1;
    Ok(QualificationReport { b_hat, per_alpha, divergent })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::log_space;

    fn all_methods() -> Vec<FilterMethod> {
        vec![
            FilterMethod::new(FilterKind::Tikhonov, 1.0).unwrap(),
            FilterMethod::new(FilterKind::Showalter, 1.0).unwrap(),
            FilterMethod::new(FilterKind::Landweber { mu_step: 0.9 }, 1.0).unwrap(),
            FilterMethod::new(FilterKind::IteratedTikhonov { k: 3 }, 1.0).unwrap(),
            FilterMethod::new(FilterKind::Lardy { beta: 1.0 }, 1.0).unwrap(),
            FilterMethod::new(FilterKind::ModifiedCutoff, 1.0).unwrap(),
        ]
    }

    fn grids(m: &FilterMethod) -> (Vec<f64>, Vec<f64>) {
        let amax = m.alpha_max.min(1.0);
        let mut l = log_space(1e-8, 1.0, 100).unwrap();
        l.insert(0, 0.0);
        (log_space(1e-8, amax, 100).unwrap(), l)
    }

    #[test]
    fn tikhonov_values() {
        let m = FilterMethod::new(FilterKind::Tikhonov, 1.0).unwrap();
        assert!((m.r_alpha(0.1, 0.3).unwrap() - 0.25).abs() < 1e-15);
        assert!((m.q_alpha(0.1, 0.3).unwrap() - 2.5).abs() < 1e-14);
    }

    #[test]
    fn landweber_geometric_sum() {
        let m = FilterMethod::new(FilterKind::Landweber { mu_step: 1.0 }, 1.0).unwrap();
        let a = 1.0 / 3.0;
        assert_eq!(iteration_count(a), 3.0);
        let oracle: f64 = (0..3).map(|j| 0.7f64.powi(j)).sum::<f64>();
        assert!((m.q(a, 0.0) - 3.0).abs() < 1e-14);
        assert!((m.q(a, 0.3) - oracle).abs() < 1e-14);
    }

    #[test]
    fn landweber_rejects_large_lambda() {
        let m = FilterMethod::new(FilterKind::Landweber { mu_step: 0.5 }, 1.0).unwrap();
        assert!(m.r_alpha(0.5, 2.5).is_err());
        assert!(FilterMethod::new(FilterKind::Landweber { mu_step: 2.0 }, 1.0).is_err());
    }

    #[test]
    fn residual_identity() {
        for m in all_methods() {
            for a in [1e-6, 1e-3, 0.3] {
                for l in [0.0, 1e-9, 1e-4, 0.2, 0.9] {
                    let lhs = m.r(a, l) + l * m.q(a, l);
                    assert!((lhs - 1.0).abs() < 1e-12, "{} a={a} l={l}: {lhs}", m.kind.name());
                }
            }
        }
    }

    #[test]
    fn iterated_k1_is_tikhonov() {
        let t = FilterMethod::new(FilterKind::Tikhonov, 1.0).unwrap();
        let i = FilterMethod::new(FilterKind::IteratedTikhonov { k: 1 }, 1.0).unwrap();
        for a in [1e-5, 0.01, 2.0] {
            for l in [0.0, 1e-3, 0.5] {
                assert!((t.r(a, l) - i.r(a, l)).abs() < 1e-15);
                assert!((t.q(a, l) - i.q(a, l)).abs() <= 1e-14 * t.q(a, l));
            }
        }
    }

    #[test]
    fn iteration_count_on_reciprocals() {
        for n in 1..2000u32 {
            assert_eq!(iteration_count(1.0 / n as f64), n as f64);
        }
        assert_eq!(iteration_count(0.3), 3.0);
    }

    #[test]
    fn catalogue_passes_conditions() {
        for m in all_methods() {
            let (a, l) = grids(&m);
            let rep = check_assumption_sr(&m, &a, &l).unwrap();
            assert!(rep.passed(), "{}: {:?}", m.kind.name(), rep.violations);
        }
    }

    #[test]
    fn showalter_diagonal_exact() {
        let m = FilterMethod::new(FilterKind::Showalter, 1.0).unwrap();
        let (a, l) = grids(&m);
        let rep = check_assumption_sr(&m, &a, &l).unwrap();
        assert!((rep.diag_min - (-1.0f64).exp()).abs() < 1e-12);
        assert!((rep.diag_max - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn spectral_cutoff_fails_diagonal() {
        let m = FilterMethod::new(FilterKind::SpectralCutoff, 1.0).unwrap();
        let (a, l) = grids(&m);
        let rep = check_assumption_sr(&m, &a, &l).unwrap();
        assert!(!rep.diagonal_ok);
        assert!(!rep.violations.is_empty());
    }

    #[test]
    fn tikhonov_qualification_divergence() {
        let m = FilterMethod::new(FilterKind::Tikhonov, 1.0).unwrap();
        let a = log_space(1e-8, 1.0, 81).unwrap();
        let l = log_space(1e-10, 1.0, 400).unwrap();
        let bounded = qualification_constant(&m, &IndexFunction::power(0.5), 1.5, &a, &l).unwrap();
        assert!(!bounded.divergent);
        // sup_s s^{3/4}/(1+s) at s = 3
        assert!((bounded.b_hat - 3f64.powf(0.75) / 4.0).abs() < 1e-3);
        let diverging = qualification_constant(&m, &IndexFunction::power(0.5), 3.0, &a, &l).unwrap();
        assert!(diverging.divergent);
    }

    #[test]
    fn descriptor_json() {
        let k: FilterKind = serde_json::from_str(r#"{"method":"landweber","mu_step":0.9}"#).unwrap();
        assert_eq!(k, FilterKind::Landweber { mu_step: 0.9 });
        let t: FilterKind = serde_json::from_str(r#"{"method":"tikhonov"}"#).unwrap();
        assert_eq!(t, FilterKind::Tikhonov);
    }
}
