//! Problem fixtures: diagonal models of concrete inverse problems.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, SpecregError};
use crate::grid::log_space;
use crate::index_fn::{check_structure, IndexFunction};
use crate::spectral::{SpectralElement, SpectralOperator, TruncationNote};

/// Smallest eigenvalue we keep; anything below risks subnormal arithmetic.
const LAMBDA_FLOOR: f64 = 1e-300;

/// Spectral symbol Λ mapping Laplacian eigenvalues μ to eigenvalues of T*T.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpectralSymbol {
    /// Λ(μ) = exp(−2 t̄ μ)
    BackwardHeat { t_bar: f64 },
    /// Λ(μ) = 1 / (sinh²(μ^{1/4}/√2) + cos²(μ^{1/4}/√2))
    SidewaysHeat,
    /// Λ(μ) = (1/2 + l)² (3/2 + l)² R^{−2l}, l = √(1/2 + μ)
    Gradiometry { r: f64 },
}

/// Λ_SH(μ) in closed form.
pub fn sideways_heat_symbol(mu: f64) -> f64 {
    let x = mu.powf(0.25) / std::f64::consts::SQRT_2;
    let s = x.sinh();
    let c = x.cos();
    1.0 / (s * s + c * c)
}

/// ln Λ_SH(μ), stable for large μ.
fn ln_sideways_heat(mu: f64) -> f64 {
    // sinh²x + cos²x = (cosh 2x + cos 2x)/2
    let y = 2.0 * mu.powf(0.25) / std::f64::consts::SQRT_2;
    let ln_cosh = y + (-2.0 * y).exp().ln_1p() - std::f64::consts::LN_2;
    let ratio = y.cos() / y.cosh();
    -(ln_cosh + ratio.ln_1p() - std::f64::consts::LN_2)
}

impl SpectralSymbol {
    pub fn validate(&self) -> Result<()> {
        match self {
            SpectralSymbol::BackwardHeat { t_bar } if !(*t_bar > 0.0 && t_bar.is_finite()) => {
                Err(invalid(format!("backward heat needs t_bar > 0, got {t_bar}")))
            }
            SpectralSymbol::Gradiometry { r } if !(*r > 1.0 && r.is_finite()) => {
                Err(invalid(format!("gradiometry needs R > 1, got {r}")))
            }
            _ => Ok(()),
        }
    }

    pub fn ln_lambda(&self, mu: f64) -> f64 {
        match self {
            SpectralSymbol::BackwardHeat { t_bar } => -2.0 * t_bar * mu,
            SpectralSymbol::SidewaysHeat => ln_sideways_heat(mu),
            SpectralSymbol::Gradiometry { r } => {
                let l = (0.5 + mu).sqrt();
                2.0 * (0.5 + l).ln() + 2.0 * (1.5 + l).ln() - 2.0 * l * r.ln()
            }
        }
    }

    pub fn lambda(&self, mu: f64) -> f64 {
        match self {
            SpectralSymbol::SidewaysHeat => sideways_heat_symbol(mu),
            _ => self.ln_lambda(mu).exp(),
        }
    }

    /// Smallest μ from which Λ is decreasing on the continuum.
    pub fn monotone_from(&self) -> f64 {
        match self {
            SpectralSymbol::BackwardHeat { .. } | SpectralSymbol::SidewaysHeat => 0.0,
            SpectralSymbol::Gradiometry { r } => {
                // d/dl ln Λ = 2/(1/2+l) + 2/(3/2+l) − 2 ln R, decreasing in l
                let g = |l: f64| 2.0 / (0.5 + l) + 2.0 / (1.5 + l) - 2.0 * r.ln();
                let l0 = 0.5f64.sqrt();
                if g(l0) <= 0.0 {
                    return 0.0;
                }
                let (mut lo, mut hi) = (l0, l0 + 1.0);
                while g(hi) > 0.0 {
                    hi *= 2.0;
                }
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if g(mid) > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                (hi * hi - 0.5).max(0.0)
            }
        }
    }

    /// Λ⁻¹(α) restricted to [t0, ∞).
    pub fn inverse(&self, alpha: f64, t0: f64) -> Result<f64> {
        if !(alpha > 0.0) || alpha > self.lambda(t0) * (1.0 + 1e-14) {
            return Err(SpecregError::Domain { what: "spectral symbol inverse", value: alpha });
        }
        let target = alpha.ln();
        if let SpectralSymbol::BackwardHeat { t_bar } = self {
            return Ok((-target / (2.0 * t_bar)).max(t0));
        }
        let mut lo = t0;
        let mut hi = (2.0 * t0).max(1.0);
        let mut guard = 0;
        while self.ln_lambda(hi) > target {
            lo = hi;
            hi *= 2.0;
            guard += 1;
            if guard > 2000 {
                return Err(SpecregError::OutOfRange { what: "spectral symbol inverse", value: alpha });
            }
        }
        for _ in 0..300 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.ln_lambda(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// κ(α) = (Λ⁻¹(α))^{−1/2} below Λ(t0), t0^{−1/2} above.
    pub fn kappa(&self, alpha: f64, t0: f64) -> Result<f64> {
        if alpha >= self.lambda(t0) {
            return Ok(t0.powf(-0.5));
        }
        Ok(self.inverse(alpha, t0)?.powf(-0.5))
    }
}

/// Index function induced by Λ with knee t0; checks monotonicity of Λ past t0.
pub fn kappa_from_lambda(symbol: &SpectralSymbol, t0: f64) -> Result<IndexFunction> {
    symbol.validate()?;
    if t0 < symbol.monotone_from() {
        return Err(SpecregError::Structure(format!(
            "symbol is not decreasing on [{t0}, ∞); needs t0 >= {}",
            symbol.monotone_from()
        )));
    }
    let k = IndexFunction::Symbol { symbol: symbol.clone(), t0 };
    k.validate()?;
    Ok(k)
}

/// Smallest knee among `candidates` for which κ^exponent passes the structure checks.
pub fn select_knee(symbol: &SpectralSymbol, exponent: f64, candidates: &[f64], lambda_min: f64) -> Result<f64> {
    let floor = symbol.monotone_from();
    let grid = log_space(lambda_min.max(LAMBDA_FLOOR) * 1e-2, 1.0, 240)?;
    for &t0 in candidates.iter().filter(|t| **t >= floor && **t > 0.0) {
        let k = IndexFunction::Symbol { symbol: symbol.clone(), t0 }.powered(exponent);
        let rep = check_structure(&k, &grid)?;
        if rep.kk_concave && rep.monotone && rep.mu.is_some() {
            return Ok(t0);
        }
    }
    Err(SpecregError::Structure("no admissible knee for the induced index function".into()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemDescriptor {
    /// Single layer potential on the circle of radius e.
    SingleLayerCircle { n: usize, u: f64 },
    /// Order-a smoothing on the circle: λ_n = (1∨n)^{−2a}.
    SobolevScale { a: f64, n: usize, u: f64 },
    BackwardHeat { t_bar: f64, n: usize, beta: f64 },
    SidewaysHeat { n: usize, beta: f64 },
    Gradiometry { r: f64, l_max: usize, beta: f64 },
}

#[derive(Clone, Debug)]
pub struct Fixture {
    pub name: String,
    pub descriptor: ProblemDescriptor,
    pub operator: SpectralOperator,
    pub solution: SpectralElement,
    /// index function in which the solution is borderline
    pub kappa: IndexFunction,
    /// coefficients by frequency n = −M..M on the circle fixtures
    pub frequency_coefficients: Option<Vec<f64>>,
    /// frequency knee of the induced index function, when there is one
    pub knee: Option<f64>,
    /// extra roughness applied to the coefficient decay exponent
    pub roughness: f64,
}

impl Fixture {
    /// Slot dimension, for reporting.
    pub fn dim(&self) -> usize {
        self.operator.dim()
    }
}

struct Modes {
    eig: Vec<f64>,
    mult: Vec<usize>,
    coeffs: Vec<Vec<f64>>,
}

impl Modes {
    fn new() -> Self {
        Modes { eig: Vec::new(), mult: Vec::new(), coeffs: Vec::new() }
    }

    fn push(&mut self, lambda: f64, coeffs: Vec<f64>) {
        if let Some(last) = self.eig.last() {
            if (*last - lambda).abs() <= 1e-15 * lambda {
                let i = self.eig.len() - 1;
                self.mult[i] += coeffs.len();
                self.coeffs[i].extend(coeffs);
                return;
            }
        }
        self.eig.push(lambda);
        self.mult.push(coeffs.len());
        self.coeffs.push(coeffs);
    }

    fn finish(self, note: TruncationNote) -> Result<(SpectralOperator, SpectralElement)> {
        let mut idx: Vec<usize> = (0..self.eig.len()).collect();
        idx.sort_by(|a, b| self.eig[*b].partial_cmp(&self.eig[*a]).unwrap());
        let mut eig: Vec<f64> = Vec::new();
        let mut mult: Vec<usize> = Vec::new();
        let mut coeffs: Vec<f64> = Vec::new();
        for i in idx {
            if let Some(last) = eig.last() {
                if (*last - self.eig[i]).abs() <= 1e-15 * self.eig[i] {
                    let j = mult.len() - 1;
                    mult[j] += self.mult[i];
                    coeffs.extend_from_slice(&self.coeffs[i]);
                    continue;
                }
            }
            eig.push(self.eig[i]);
            mult.push(self.mult[i]);
            coeffs.extend_from_slice(&self.coeffs[i]);
        }
        let op = SpectralOperator::new(eig, mult)?.with_truncation(note);
        Ok((op, SpectralElement::new(coeffs)))
    }
}

fn power_tail(n: usize, exponent: f64) -> f64 {
    // Σ_{|k|>n} k^{−exponent} ≤ 2 ∫_n^∞ t^{−exponent} dt
    if exponent <= 1.0 {
        return f64::INFINITY;
    }
    2.0 * (n as f64).powf(1.0 - exponent) / (exponent - 1.0)
}

fn circle_coefficients(n: usize, decay: f64) -> Vec<f64> {
    (0..=2 * n)
        .map(|i| {
            let k = (i as i64 - n as i64).unsigned_abs().max(1) as f64;
            k.powf(-decay)
        })
        .collect()
}

fn sobolev(name: &str, desc: ProblemDescriptor, a: f64, n: usize, u: f64, rough: f64) -> Result<Fixture> {
    if !(a > 0.0 && u > 0.0) || n == 0 {
        return Err(invalid("sobolev fixture needs a > 0, u > 0, n >= 1"));
    }
    let decay = u + 0.5 - rough;
    let mut modes = Modes::new();
    for k in 0..=n {
        let lam = (k.max(1) as f64).powf(-2.0 * a);
        let c = (k.max(1) as f64).powf(-decay);
        modes.push(lam, if k == 0 { vec![c] } else { vec![c, c] });
    }
    let note = TruncationNote {
        solution_tail: power_tail(n, 2.0 * decay).sqrt(),
        spectrum_tail: power_tail(n, 2.0 * a),
        lambda_next: ((n + 1) as f64).powf(-2.0 * a),
        description: format!("modes |k| > {n} dropped"),
    };
    let (operator, solution) = modes.finish(note)?;
    Ok(Fixture {
        name: name.to_string(),
        descriptor: desc,
        operator,
        solution,
        kappa: IndexFunction::power(u / (2.0 * a)),
        frequency_coefficients: Some(circle_coefficients(n, decay)),
        knee: None,
        roughness: rough,
    })
}

/// Builds a fixture; `roughness` lowers the coefficient decay exponent.
pub fn build_fixture(desc: &ProblemDescriptor, roughness: f64) -> Result<Fixture> {
    match desc.clone() {
        ProblemDescriptor::SingleLayerCircle { n, u } => sobolev("single_layer_circle", desc.clone(), 1.0, n, u, roughness),
        ProblemDescriptor::SobolevScale { a, n, u } => sobolev("sobolev_scale", desc.clone(), a, n, u, roughness),
        ProblemDescriptor::BackwardHeat { t_bar, n, beta } => backward_heat(desc.clone(), t_bar, n, beta, roughness),
        ProblemDescriptor::SidewaysHeat { n, beta } => sideways_heat(desc.clone(), n, beta, roughness),
        ProblemDescriptor::Gradiometry { r, l_max, beta } => gradiometry(desc.clone(), r, l_max, beta, roughness),
    }
}

/// Largest frequency n whose eigenvalue stays above the underflow floor.
pub fn backward_heat_cap(t_bar: f64) -> usize {
    ((-LAMBDA_FLOOR.ln()) / (2.0 * t_bar)).sqrt().floor() as usize
}

fn backward_heat(desc: ProblemDescriptor, t_bar: f64, n: usize, beta: f64, rough: f64) -> Result<Fixture> {
    let symbol = SpectralSymbol::BackwardHeat { t_bar };
    symbol.validate()?;
    if !(beta > 0.0) || n == 0 {
        return Err(invalid("backward heat needs beta > 0 and n >= 1"));
    }
    let n = n.min(backward_heat_cap(t_bar));
    let decay = 2.0 * beta + 0.5 - rough;
    let mut modes = Modes::new();
    for k in 0..=n {
        let lam = symbol.lambda((k * k) as f64);
        let c = (k.max(1) as f64).powf(-decay);
        modes.push(lam, if k == 0 { vec![c] } else { vec![c, c] });
    }
    let n1 = (n + 1) as f64;
    let next = (-2.0 * t_bar * n1 * n1).exp();
    let note = TruncationNote {
        solution_tail: power_tail(n, 2.0 * decay).sqrt(),
        spectrum_tail: 2.0 * next / (1.0 - (-2.0 * t_bar * (2.0 * n1 + 1.0)).exp()),
        lambda_next: next,
        description: format!("frequencies above {n} dropped (eigenvalue underflow cap)"),
    };
    let (operator, solution) = modes.finish(note)?;
    // κ^{2β}² is concave once ln(1/α) ≥ 2β + 1
    let t0 = (2.0 * beta + 1.0) / (2.0 * t_bar);
    let kappa = kappa_from_lambda(&symbol, t0)?.powered(2.0 * beta);
    Ok(Fixture {
        name: "backward_heat".into(),
        descriptor: desc,
        operator,
        solution,
        kappa,
        frequency_coefficients: Some(circle_coefficients(n, decay)),
        knee: Some(t0),
        roughness: rough,
    })
}

fn sideways_heat(desc: ProblemDescriptor, n: usize, beta: f64, rough: f64) -> Result<Fixture> {
    let symbol = SpectralSymbol::SidewaysHeat;
    if !(beta > 0.0) || n == 0 {
        return Err(invalid("sideways heat needs beta > 0 and n >= 1"));
    }
    let decay = 0.5 * beta + 0.5 - rough;
    let mut modes = Modes::new();
    let mut last = 0;
    for k in 0..=n {
        let lam = symbol.lambda((k * k) as f64);
        if lam < LAMBDA_FLOOR {
            break;
        }
        last = k;
        let c = (k.max(1) as f64).powf(-decay);
        modes.push(lam, if k == 0 { vec![c] } else { vec![c, c] });
    }
    let a = std::f64::consts::SQRT_2;
    let sn = (last as f64).sqrt();
    let head = (-a * sn).exp();
    let note = TruncationNote {
        solution_tail: power_tail(last, 2.0 * decay).sqrt(),
        // Λ ≤ 4/(e^{√2 √k} − 2); Σ_{k>n} 2·that ≤ 16 e^{−√2√n}(√n/√2 + 1/2)/(1 − 2e^{−√2√n})
        spectrum_tail: 16.0 * head * (sn / a + 0.5) / (1.0 - 2.0 * head).max(1e-300),
        lambda_next: symbol.lambda(((last + 1) * (last + 1)) as f64),
        description: format!("frequencies above {last} dropped"),
    };
    let (operator, solution) = modes.finish(note)?;
    let candidates: Vec<f64> = (1..=400).map(|k| (k * k) as f64).collect();
    let t0 = select_knee(&symbol, 0.5 * beta, &candidates, operator.lambda_min())?;
    let kappa = kappa_from_lambda(&symbol, t0)?.powered(0.5 * beta);
    Ok(Fixture {
        name: "sideways_heat".into(),
        descriptor: desc,
        operator,
        solution,
        kappa,
        frequency_coefficients: None,
        knee: Some(t0),
        roughness: rough,
    })
}

fn gradiometry(desc: ProblemDescriptor, r: f64, l_max: usize, beta: f64, rough: f64) -> Result<Fixture> {
    let symbol = SpectralSymbol::Gradiometry { r };
    symbol.validate()?;
    if !(beta > 0.0) || l_max == 0 {
        return Err(invalid("gradiometry needs beta > 0 and l_max >= 1"));
    }
    let lam_of = |l: usize| symbol.lambda((l * (l + 1)) as f64);
    for l in 1..l_max {
        if lam_of(l + 1) >= lam_of(l) {
            return Err(SpecregError::Structure(format!(
                "gradiometry symbol not decreasing for R = {r}: Λ(ℓ={}) = {:e} >= Λ(ℓ={l}) = {:e}",
                l + 1,
                lam_of(l + 1),
                lam_of(l)
            )));
        }
    }
    let decay = beta + 0.5 - rough;
    let mut modes = Modes::new();
    let mut last = 0;
    for l in 0..=l_max {
        let lam = lam_of(l);
        if lam < LAMBDA_FLOOR {
            break;
        }
        last = l;
        let m = 2 * l + 1;
        let c = (l.max(1) as f64).powf(-decay) / (m as f64).sqrt();
        modes.push(lam, vec![c; m]);
    }
    let mut spec_tail = 0.0;
    for l in last + 1..last + 4000 {
        let t = (2 * l + 1) as f64 * lam_of(l);
        spec_tail += t;
        if t < 1e-18 * spec_tail || t == 0.0 {
            break;
        }
    }
    let note = TruncationNote {
        solution_tail: (0.5 * power_tail(last, 2.0 * decay)).sqrt(),
        spectrum_tail: spec_tail * (1.0 + 1e-12),
        lambda_next: lam_of(last + 1),
        description: format!("degrees above {last} dropped"),
    };
    let (operator, solution) = modes.finish(note)?;
    let candidates: Vec<f64> = (1..=400).map(|l| (l * (l + 1)) as f64).collect();
    let t0 = select_knee(&symbol, beta, &candidates, operator.lambda_min())?;
    let kappa = kappa_from_lambda(&symbol, t0)?.powered(beta);
    Ok(Fixture {
        name: "gradiometry".into(),
        descriptor: desc,
        operator,
        solution,
        kappa,
        frequency_coefficients: None,
        knee: Some(t0),
        roughness: rough,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub name: String,
    pub descriptor: ProblemDescriptor,
    pub summary: String,
}

/// Canonical fixtures used by the shipped experiment configs.
pub fn fixture_registry() -> Vec<RegistryEntry> {
    let e = |name: &str, descriptor, summary: &str| RegistryEntry {
        name: name.into(),
        descriptor,
        summary: summary.into(),
    };
    vec![
        e(
            "single_layer_u1",
            ProblemDescriptor::SingleLayerCircle { n: 100_000, u: 1.0 },
            "single layer potential on the circle, borderline smoothness u = 1",
        ),
        e(
            "sobolev_u05",
            ProblemDescriptor::SingleLayerCircle { n: 2_000, u: 0.5 },
            "single layer potential, u = 0.5, for VSC certificates",
        ),
        e(
            "backward_heat_beta1",
            ProblemDescriptor::BackwardHeat { t_bar: 1.0, n: 64, beta: 1.0 },
            "backward heat on the circle, t̄ = 1, Besov smoothness β = 1",
        ),
        e(
            "sideways_heat_beta1",
            ProblemDescriptor::SidewaysHeat { n: 4_000, beta: 1.0 },
            "sideways heat surrogate on a line spectrum, β = 1",
        ),
        e(
            "gradiometry_r4",
            ProblemDescriptor::Gradiometry { r: 4.0, l_max: 200, beta: 1.0 },
            "satellite gradiometry on the sphere, R = 4, β = 1",
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn complex_oracle(mu: f64) -> f64 {
        let z = Complex64::new(0.0, mu.sqrt()).sqrt();
        1.0 / z.cosh().norm_sqr()
    }

    #[test]
    fn sideways_closed_form_matches_complex() {
        for mu in [1.0, 10.0, 100.0, 1e4] {
            let a = sideways_heat_symbol(mu);
            let b = complex_oracle(mu);
            assert!((a - b).abs() <= 1e-12 * b, "{mu}: {a} vs {b}");
            assert!((ln_sideways_heat(mu) - a.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn single_layer_grouping() {
        let f = build_fixture(&ProblemDescriptor::SingleLayerCircle { n: 3, u: 1.0 }, 0.0).unwrap();
        assert_eq!(f.operator.eigenvalues(), &[1.0, 0.25, 1.0 / 9.0]);
        assert_eq!(f.operator.multiplicities(), &[3, 2, 2]);
        assert_eq!(f.solution.coefficients.len(), 7);
        assert!((f.solution.coefficients[3] - 2f64.powf(-1.5)).abs() < 1e-15);
    }

    #[test]
    fn backward_heat_closed_form_kappa() {
        let t_bar = 1.0;
        let sym = SpectralSymbol::BackwardHeat { t_bar };
        let k = kappa_from_lambda(&sym, 1.5).unwrap();
        for a in [1e-4, 1e-10, 1e-100] {
            let want = ((1.0 / (2.0 * t_bar)) * (1.0f64 / a).ln()).powf(-0.5);
            assert!((k.eval(a).unwrap() - want).abs() < 1e-14 * want);
        }
        assert!((k.eval(0.5).unwrap() - 1.5f64.powf(-0.5)).abs() < 1e-15);
    }

    #[test]
    fn backward_heat_caps_frequency() {
        let f = build_fixture(&ProblemDescriptor::BackwardHeat { t_bar: 1.0, n: 500, beta: 1.0 }, 0.0).unwrap();
        assert!(f.operator.lambda_min() >= LAMBDA_FLOOR);
        assert_eq!(f.operator.groups(), backward_heat_cap(1.0) + 1);
    }

    #[test]
    fn gradiometry_monotonicity() {
        assert!(build_fixture(&ProblemDescriptor::Gradiometry { r: 4.0, l_max: 60, beta: 1.0 }, 0.0).is_ok());
        let err = build_fixture(&ProblemDescriptor::Gradiometry { r: 1.5, l_max: 60, beta: 1.0 }, 0.0).unwrap_err();
        assert!(matches!(err, SpecregError::Structure(_)));
    }

    #[test]
    fn gradiometry_log_asymptote() {
        let r = 4.0;
        let sym = SpectralSymbol::Gradiometry { r };
        let k = kappa_from_lambda(&sym, 2.0).unwrap();
        let a = 1e-300f64;
        let ratio = k.eval(a).unwrap() * (1.0 / a).ln() / (2.0 * r.ln());
        assert!((0.95..1.05).contains(&ratio), "{ratio}");
    }

    #[test]
    fn sideways_fixture_builds() {
        let f = build_fixture(&ProblemDescriptor::SidewaysHeat { n: 500, beta: 1.0 }, 0.0).unwrap();
        assert!(f.knee.unwrap() >= 1.0);
        let k = &f.kappa;
        // κ(λ_n) = n^{−β/2} below the knee
        let n = 400usize;
        let lam = SpectralSymbol::SidewaysHeat.lambda((n * n) as f64);
        assert!((k.eval(lam).unwrap() - (n as f64).powf(-0.5)).abs() < 1e-9);
    }

    #[test]
    fn registry_builds() {
        for e in fixture_registry() {
            if let ProblemDescriptor::SingleLayerCircle { n, .. } = e.descriptor {
                if n > 10_000 {
                    continue;
                }
            }
            build_fixture(&e.descriptor, 0.0).unwrap();
        }
    }
}
