//! Index functions, their spectral transforms and structure checks.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, SpecregError};
use crate::problems::SpectralSymbol;
use crate::regularize::EnvelopeFn;
use crate::roots::invert_increasing_log;

/// Default relative tolerance for Θ-inversion.
pub const THETA_TOL: f64 = 1e-12;

/// A continuous increasing map κ: [0, domain_max] → [0, ∞) with κ(0) = 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum IndexFunction {
    /// κ(t) = t^ν
    Power { nu: f64 },
    /// κ(t) = (shift − ln t)^(−p), defined for t < e^shift
    LogPower { p: f64, shift: f64 },
    /// Log-log linear interpolation through `(t, value)` points; no extrapolation.
    Table { points: Vec<[f64; 2]> },
    /// κ(t) = scale · base(t)^exponent
    Composite { scale: f64, exponent: f64, base: Box<IndexFunction> },
    /// κ(α) = (Λ⁻¹(α))^(−1/2) below Λ(t0), t0^(−1/2) above.
    Symbol { symbol: SpectralSymbol, t0: f64 },
}

impl IndexFunction {
    pub fn power(nu: f64) -> Self {
        IndexFunction::Power { nu }
    }

    pub fn log_power(p: f64, shift: f64) -> Self {
        IndexFunction::LogPower { p, shift }
    }

    pub fn scaled(self, scale: f64) -> Self {
        IndexFunction::Composite { scale, exponent: 1.0, base: Box::new(self) }
    }

    pub fn powered(self, exponent: f64) -> Self {
        IndexFunction::Composite { scale: 1.0, exponent, base: Box::new(self) }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            IndexFunction::Power { nu } => {
                if !(*nu > 0.0 && nu.is_finite()) {
                    return Err(invalid(format!("power index needs nu > 0, got {nu}")));
                }
            }
            IndexFunction::LogPower { p, shift } => {
                if !(*p > 0.0 && p.is_finite() && shift.is_finite()) {
                    return Err(invalid(format!("logpower index needs p > 0 and finite shift, got p={p} shift={shift}")));
                }
            }
            IndexFunction::Table { points } => {
                if points.len() < 2 {
                    return Err(invalid("table index needs at least two points"));
                }
                if points.iter().any(|[t, v]| !(*t > 0.0 && *v > 0.0 && t.is_finite() && v.is_finite())) {
                    return Err(invalid("table index points must be positive and finite"));
                }
                if points.windows(2).any(|w| !(w[1][0] > w[0][0] && w[1][1] > w[0][1])) {
                    return Err(invalid("table index points must be strictly increasing in t and value"));
                }
            }
            IndexFunction::Composite { scale, exponent, base } => {
                if !(*scale > 0.0 && scale.is_finite() && *exponent > 0.0 && exponent.is_finite()) {
                    return Err(invalid("composite index needs positive finite scale and exponent"));
                }
                base.validate()?;
            }
            IndexFunction::Symbol { symbol, t0 } => {
                symbol.validate()?;
                if !(*t0 > 0.0 && t0.is_finite()) {
                    return Err(invalid(format!("symbol index needs t0 > 0, got {t0}")));
                }
            }
        }
        Ok(())
    }

    /// Supremum of the domain; `LogPower` excludes it.
    pub fn domain_max(&self) -> f64 {
        match self {
            IndexFunction::Power { .. } | IndexFunction::Symbol { .. } => f64::INFINITY,
            IndexFunction::LogPower { shift, .. } => shift.exp(),
            IndexFunction::Table { points } => points[points.len() - 1][0],
            IndexFunction::Composite { base, .. } => base.domain_max(),
        }
    }

    /// Smallest positive argument that can be evaluated.
    pub fn domain_min(&self) -> f64 {
        match self {
            IndexFunction::Table { points } => points[0][0],
            IndexFunction::Composite { base, .. } => base.domain_min(),
            _ => 0.0,
        }
    }

    fn open_upper(&self) -> bool {
        match self {
            IndexFunction::LogPower { .. } => true,
            IndexFunction::Composite { base, .. } => base.open_upper(),
            _ => false,
        }
    }

    /// Largest argument that can actually be evaluated.
    pub fn eval_cap(&self) -> f64 {
        let m = self.domain_max();
        if self.open_upper() {
            m * (1.0 - 1e-15)
        } else {
            m
        }
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        if t.is_nan() || t < 0.0 {
            return Err(SpecregError::Domain { what: "index function", value: t });
        }
        if t == 0.0 {
            return Ok(0.0);
        }
        let dm = self.domain_max();
        if t > dm || (t == dm && self.open_upper()) {
            return Err(SpecregError::Domain { what: "index function", value: t });
        }
        Ok(match self {
            IndexFunction::Power { nu } => t.powf(*nu),
            IndexFunction::LogPower { p, shift } => {
                let gap = shift - t.ln();
                if !(gap > 0.0) {
                    return Err(SpecregError::Domain { what: "index function", value: t });
                }
                gap.powf(-p)
            }
            IndexFunction::Table { points } => {
                if t < points[0][0] {
                    return Err(SpecregError::Domain { what: "tabulated index function", value: t });
                }
                let k = points.partition_point(|pt| pt[0] <= t);
                if k >= points.len() {
                    return Ok(points[points.len() - 1][1]);
                }
                let [t0, v0] = points[k - 1];
                let [t1, v1] = points[k];
                let w = (t.ln() - t0.ln()) / (t1.ln() - t0.ln());
                (v0.ln() + w * (v1.ln() - v0.ln())).exp()
            }
            IndexFunction::Composite { scale, exponent, base } => {
                let b = base.eval(t)?;
                scale * if *exponent == 1.0 { b } else { b.powf(*exponent) }
            }
            IndexFunction::Symbol { symbol, t0 } => symbol.kappa(t, *t0)?,
        })
    }

    /// Θ_κ(λ) = √λ · κ(λ)
    pub fn theta(&self, lambda: f64) -> Result<f64> {
        Ok(lambda.sqrt() * self.eval(lambda)?)
    }

    /// Θ_κ⁻¹(y) by log-space bisection with relative tolerance `tol`.
    pub fn theta_inverse(&self, y: f64, tol: f64) -> Result<f64> {
        if y.is_nan() || y < 0.0 {
            return Err(SpecregError::Domain { what: "theta inverse", value: y });
        }
        if y == 0.0 {
            return Ok(0.0);
        }
        let (lo, hi) = self.theta_bracket(y, None)?;
        invert_increasing_log(|l| self.theta(l).unwrap_or(f64::NAN), y, lo, hi, tol)
    }

    fn theta_bracket(&self, y: f64, hint: Option<(f64, f64)>) -> Result<(f64, f64)> {
        let cap = self.eval_cap();
        let floor = self.domain_min().max(f64::MIN_POSITIVE);
        let th = |l: f64| self.theta(l).unwrap_or(f64::NAN);
        let (mut lo, mut hi) = hint.unwrap_or((1.0f64.min(cap), 1.0f64.min(cap)));
        let mut guard = 0;
        while !(th(hi) >= y) {
            if hi >= cap {
                return Err(SpecregError::OutOfRange { what: "theta inverse", value: y });
            }
            hi = if cap.is_finite() { (hi * 16.0).min(cap) } else { hi * 16.0 };
            guard += 1;
            if guard > 300 {
                return Err(SpecregError::OutOfRange { what: "theta inverse", value: y });
            }
        }
        lo = lo.min(hi);
        guard = 0;
        while !(th(lo) <= y) {
            if lo <= floor {
                return Err(SpecregError::OutOfRange { what: "theta inverse", value: y });
            }
            lo = (lo / 16.0).max(floor);
            guard += 1;
            if guard > 300 {
                return Err(SpecregError::OutOfRange { what: "theta inverse", value: y });
            }
        }
        Ok((lo, hi))
    }

    /// ψ_κ(t) = κ(Θ_κ⁻¹(√t))²
    pub fn psi(&self, t: f64) -> Result<f64> {
        psi_kappa(self, t)
    }

    /// Smallest β with κ(β)² = ξ.
    pub fn kk_inverse(&self, xi: f64) -> Result<f64> {
        if xi.is_nan() || xi < 0.0 {
            return Err(SpecregError::Domain { what: "kappa-squared inverse", value: xi });
        }
        if xi == 0.0 {
            return Ok(0.0);
        }
        let target = xi.sqrt();
        let cap = self.eval_cap();
        let floor = self.domain_min().max(f64::MIN_POSITIVE);
        let k = |l: f64| self.eval(l).unwrap_or(f64::NAN);
        let mut hi = 1.0f64.min(cap);
        let mut guard = 0;
        while !(k(hi) >= target) {
            if hi >= cap || guard > 300 {
                return Err(SpecregError::OutOfRange { what: "kappa-squared inverse", value: xi });
            }
            hi = if cap.is_finite() { (hi * 16.0).min(cap) } else { hi * 16.0 };
            guard += 1;
        }
        let mut lo = hi;
        guard = 0;
        while !(k(lo) < target) {
            if lo <= floor || guard > 300 {
                return Err(SpecregError::OutOfRange { what: "kappa-squared inverse", value: xi });
            }
            lo = (lo / 16.0).max(floor);
            guard += 1;
        }
        // leftmost point with κ ≥ target, robust to plateaus
        for _ in 0..2000 {
            let mid = (lo.ln() + 0.5 * (hi.ln() - lo.ln())).exp();
            if !(mid > lo && mid < hi) {
                break;
            }
            if k(mid) >= target {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi / lo - 1.0 < 1e-15 {
                break;
            }
        }
        Ok(hi)
    }

    /// ψ_κ⁻¹(ξ) = ξ · (κκ)⁻¹(ξ)
    pub fn psi_inverse(&self, xi: f64) -> Result<f64> {
        Ok(xi * self.kk_inverse(xi)?)
    }
}

/// ψ_κ(t) = κ(Θ_κ⁻¹(√t))², with ψ_κ(0) = 0.
pub fn psi_kappa(kappa: &IndexFunction, t: f64) -> Result<f64> {
    if t.is_nan() || t < 0.0 {
        return Err(SpecregError::Domain { what: "psi", value: t });
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    let lam = kappa.theta_inverse(t.sqrt(), THETA_TOL)?;
    let k = kappa.eval(lam)?;
    Ok(k * k)
}

/// ψ_κ with a cached log table of Θ for fast bracketing.
#[derive(Clone, Debug)]
pub struct PsiProfile {
    pub kappa: IndexFunction,
    lambdas: Vec<f64>,
    thetas: Vec<f64>,
}

impl PsiProfile {
    pub fn new(kappa: IndexFunction) -> Result<Self> {
        kappa.validate()?;
        let lo = kappa.domain_min().max(1e-300);
        let hi = kappa.eval_cap().min(1e300);
        let mut lambdas = Vec::new();
        let mut thetas = Vec::new();
        let n = ((hi.log10() - lo.log10()).ceil() as usize).max(1) * 2 + 1;
        let step = (hi.ln() - lo.ln()) / (n - 1) as f64;
        for i in 0..n {
            let l = if i + 1 == n { hi } else { (lo.ln() + step * i as f64).exp() };
            if let Ok(th) = kappa.theta(l) {
                if th.is_finite() && thetas.last().map_or(true, |&p| th > p) {
                    lambdas.push(l);
                    thetas.push(th);
                }
            }
        }
        Ok(PsiProfile { kappa, lambdas, thetas })
    }

    pub fn theta_inverse(&self, y: f64) -> Result<f64> {
        if y.is_nan() || y < 0.0 {
            return Err(SpecregError::Domain { what: "theta inverse", value: y });
        }
        if y == 0.0 {
            return Ok(0.0);
        }
        let k = self.thetas.partition_point(|&th| th < y);
        let hint = if k == 0 || k >= self.thetas.len() {
            None
        } else {
            Some((self.lambdas[k - 1], self.lambdas[k]))
        };
        let (lo, hi) = self.kappa.theta_bracket(y, hint)?;
        invert_increasing_log(|l| self.kappa.theta(l).unwrap_or(f64::NAN), y, lo, hi, THETA_TOL)
    }

    pub fn psi(&self, t: f64) -> Result<f64> {
        if t.is_nan() || t < 0.0 {
            return Err(SpecregError::Domain { what: "psi", value: t });
        }
        if t == 0.0 {
            return Ok(0.0);
        }
        let lam = self.theta_inverse(t.sqrt())?;
        let k = self.kappa.eval(lam)?;
        Ok(k * k)
    }
}

/// White-noise transform ψ_{κ,v}(ε²) = κ(Θ_{κ,v}⁻¹(ε))² with Θ_{κ,v} = κ/v.
pub fn psi_kappa_v(kappa: &IndexFunction, v: &EnvelopeFn, eps2: f64) -> Result<f64> {
    v.validate()?;
    if eps2.is_nan() || eps2 < 0.0 {
        return Err(SpecregError::Domain { what: "psi_kappa_v", value: eps2 });
    }
    if eps2 == 0.0 {
        return Ok(0.0);
    }
    let alpha = theta_v_inverse(kappa, v, eps2.sqrt())?;
    let k = kappa.eval(alpha)?;
    Ok(k * k)
}

/// Θ_{κ,v}⁻¹(ε)
pub fn theta_v_inverse(kappa: &IndexFunction, v: &EnvelopeFn, eps: f64) -> Result<f64> {
    let f = |a: f64| match kappa.eval(a) {
        Ok(k) => k / v.eval(a),
        Err(_) => f64::NAN,
    };
    let cap = kappa.eval_cap();
    let floor = kappa.domain_min().max(f64::MIN_POSITIVE);
    let mut hi = 1.0f64.min(cap);
    let mut guard = 0;
    while !(f(hi) >= eps) {
        if hi >= cap || guard > 300 {
            return Err(SpecregError::OutOfRange { what: "theta_v inverse", value: eps });
        }
        hi = if cap.is_finite() { (hi * 16.0).min(cap) } else { hi * 16.0 };
        guard += 1;
    }
    let mut lo = hi;
    guard = 0;
    while !(f(lo) <= eps) {
        if lo <= floor || guard > 300 {
            return Err(SpecregError::OutOfRange { what: "theta_v inverse", value: eps });
        }
        lo = (lo / 16.0).max(floor);
        guard += 1;
    }
    invert_increasing_log(f, eps, lo, hi, THETA_TOL)
}

/// Outcome of the grid structure checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureReport {
    pub grid_points: usize,
    /// κ nondecreasing on the grid
    pub monotone: bool,
    pub strictly_increasing: bool,
    /// κ·κ concave on the grid
    pub kk_concave: bool,
    pub concavity_witness: Option<[f64; 3]>,
    /// largest μ in {0.05, …, 0.95} with κ²/t^(1−μ) nonincreasing
    pub mu: Option<f64>,
    /// smallest p with κ(rα) ≤ r^p κ(α), r ≥ 1
    pub growth_p: Option<f64>,
}

impl StructureReport {
    pub fn admits_mu(&self, mu: f64) -> bool {
        self.mu.map_or(false, |m| mu <= m + 1e-12)
    }
}

const STRUCT_TOL: f64 = 1e-10;

pub fn check_structure(kappa: &IndexFunction, grid: &[f64]) -> Result<StructureReport> {
    kappa.validate()?;
    let mut pts: Vec<f64> = grid.iter().copied().filter(|t| *t > 0.0 && t.is_finite()).collect();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    if pts.len() < 3 {
        return Err(invalid("structure check needs at least three positive grid points"));
    }
    let vals: Vec<f64> = pts.iter().map(|&t| kappa.eval(t)).collect::<Result<_>>()?;

    let monotone = vals.windows(2).all(|w| w[1] >= w[0] * (1.0 - STRUCT_TOL));
    let strictly_increasing = vals.windows(2).all(|w| w[1] > w[0]);

    // chord slopes of κ² must be nonincreasing
    let sq: Vec<f64> = vals.iter().map(|v| v * v).collect();
    let mut kk_concave = true;
    let mut concavity_witness = None;
    for i in 1..pts.len() - 1 {
        let s1 = (sq[i] - sq[i - 1]) / (pts[i] - pts[i - 1]);
        let s2 = (sq[i + 1] - sq[i]) / (pts[i + 1] - pts[i]);
        let scale = s1.abs().max(s2.abs()).max(f64::MIN_POSITIVE);
        if s2 > s1 + STRUCT_TOL * scale + 1e-14 * sq[i + 1] / (pts[i + 1] - pts[i]) {
            kk_concave = false;
            concavity_witness = Some([pts[i - 1], pts[i], pts[i + 1]]);
            break;
        }
    }

    let mut mu = None;
    for k in (1..=19).rev() {
        let m = k as f64 / 20.0;
        let ok = (1..pts.len()).all(|i| {
            let a = sq[i - 1] / pts[i - 1].powf(1.0 - m);
            let b = sq[i] / pts[i].powf(1.0 - m);
            b <= a * (1.0 + STRUCT_TOL)
        });
        if ok {
            mu = Some(m);
            break;
        }
    }

    let mut p: f64 = 0.0;
    let mut growth_ok = true;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            if vals[i] <= 0.0 {
                growth_ok = false;
                continue;
            }
            let e = (vals[j] / vals[i]).ln() / (pts[j] / pts[i]).ln();
            if e.is_finite() {
                p = p.max(e);
            }
        }
    }
    // snap rounding noise on exact power laws
    let snapped = (p * 1e9).round() / 1e9;
    let growth_p = if growth_ok { Some(if (snapped - p).abs() < 1e-10 { snapped } else { p }) } else { None };

    Ok(StructureReport {
        grid_points: pts.len(),
        monotone,
        strictly_increasing,
        kk_concave,
        concavity_witness,
        mu,
        growth_p,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::log_space;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn power_values() {
        let k = IndexFunction::power(0.5);
        assert!(rel(k.eval(0.25).unwrap(), 0.5) < 1e-15);
        assert_eq!(k.eval(0.0).unwrap(), 0.0);
        assert!(rel(k.theta(0.25).unwrap(), 0.25) < 1e-15);
        assert!(rel(k.theta(0.01).unwrap(), 0.01) < 1e-15);
        assert!(rel(k.theta_inverse(0.25, THETA_TOL).unwrap(), 0.25) < 1e-11);
    }

    #[test]
    fn logpower_values() {
        let k = IndexFunction::log_power(1.0, 3f64.ln());
        // 1 / ln 3
        assert!(rel(k.eval(1.0).unwrap(), 0.910_239_226_626_837_3) < 1e-14);
        assert!(k.eval(3.0).is_err());
        assert!(k.eval(-1e-3).is_err());
    }

    #[test]
    fn psi_power_half() {
        let k = IndexFunction::power(0.5);
        assert!(rel(k.psi(1e-4).unwrap(), 1e-2) < 1e-10);
        assert_eq!(k.psi(0.0).unwrap(), 0.0);
    }

    #[test]
    fn psi_profile_matches_direct() {
        let k = IndexFunction::log_power(2.0, 3f64.ln());
        let prof = PsiProfile::new(k.clone()).unwrap();
        for t in log_space(1e-30, 1.0, 25).unwrap() {
            let a = prof.psi(t).unwrap();
            let b = psi_kappa(&k, t).unwrap();
            assert!(rel(a, b) < 1e-10, "{t}: {a} vs {b}");
        }
    }

    #[test]
    fn table_interpolates_loglog() {
        let k = IndexFunction::Table { points: vec![[1e-4, 1e-2], [1.0, 1.0]] };
        k.validate().unwrap();
        assert!(rel(k.eval(1e-2).unwrap(), 1e-1) < 1e-14);
        assert!(k.eval(1e-5).is_err());
        assert!(k.eval(2.0).is_err());
    }

    #[test]
    fn table_rejects_unsorted() {
        let k = IndexFunction::Table { points: vec![[1.0, 1.0], [0.5, 2.0]] };
        assert!(k.validate().is_err());
    }

    #[test]
    fn structure_power_04() {
        let g = log_space(1e-8, 1.0, 60).unwrap();
        let r = check_structure(&IndexFunction::power(0.4), &g).unwrap();
        assert!(r.kk_concave && r.monotone && r.strictly_increasing);
        assert_eq!(r.mu, Some(0.2));
        assert!((r.growth_p.unwrap() - 0.4).abs() < 1e-9);
    }

    #[test]
    fn structure_rejects_convex_square() {
        let g = log_space(1e-4, 1.0, 40).unwrap();
        let r = check_structure(&IndexFunction::power(0.75), &g).unwrap();
        assert!(!r.kk_concave);
        assert!(r.concavity_witness.is_some());
    }

    #[test]
    fn white_noise_transform() {
        let k = IndexFunction::power(0.5);
        let v = EnvelopeFn::PowerLaw { coeff: 1.0, exponent: 0.75 };
        let eps: f64 = 1e-5;
        let val = psi_kappa_v(&k, &v, eps * eps).unwrap();
        assert!(rel(val, 1e-4) < 1e-9, "{val}");
    }

    #[test]
    fn psi_inverse_identity() {
        let k = IndexFunction::power(0.3);
        let beta: f64 = 0.02;
        let xi = k.eval(beta).unwrap().powi(2);
        assert!(rel(k.psi(beta * xi).unwrap(), xi) < 1e-10);
        assert!(rel(k.psi_inverse(xi).unwrap(), beta * xi) < 1e-10);
    }

    #[test]
    fn json_roundtrip() {
        let k = IndexFunction::power(0.5).scaled(2.0);
        let s = serde_json::to_string(&k).unwrap();
        let back: IndexFunction = serde_json::from_str(&s).unwrap();
        assert_eq!(k, back);
        let lp: IndexFunction = serde_json::from_str(r#"{"kind":"logpower","p":1.0,"shift":1.0986}"#).unwrap();
        assert_eq!(lp, IndexFunction::log_power(1.0, 1.0986));
    }
}
