//! Regularized reconstructions and their error quantities.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, SpecregError};
use crate::filters::FilterMethod;
use crate::grid::pairwise_sum;
use crate::spectral::{SpectralElement, SpectralOperator};

/// Strictly decreasing variance envelope v.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvelopeFn {
    /// v(α) = coeff · α^(−exponent)
    PowerLaw { coeff: f64, exponent: f64 },
}

impl EnvelopeFn {
    pub fn validate(&self) -> Result<()> {
        match self {
            EnvelopeFn::PowerLaw { coeff, exponent } => {
                if !(*coeff > 0.0 && coeff.is_finite()) {
                    return Err(invalid("envelope coefficient must be positive"));
                }
                if !(*exponent > 0.0 && exponent.is_finite()) {
                    return Err(invalid("envelope must be strictly decreasing (exponent > 0)"));
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, alpha: f64) -> f64 {
        match self {
            EnvelopeFn::PowerLaw { coeff, exponent } => coeff * alpha.powf(-exponent),
        }
    }

    pub fn inverse(&self, y: f64) -> f64 {
        match self {
            EnvelopeFn::PowerLaw { coeff, exponent } => (y / coeff).powf(-1.0 / exponent),
        }
    }
}

/// Per-group filter data for a fixed α.
struct FilterData {
    /// squared bias mass b_j² = r_j² Σ x² per group
    b2: Vec<f64>,
    /// d_j = q_j √λ_j
    d: Vec<f64>,
}

fn filter_data(m: &FilterMethod, alpha: f64, op: &SpectralOperator, sq: &[f64]) -> FilterData {
    let lam = op.eigenvalues();
    let mut b2 = Vec::with_capacity(lam.len());
    let mut d = Vec::with_capacity(lam.len());
    for (l, s) in lam.iter().zip(sq) {
        let r = m.r(alpha, *l);
        b2.push(r * r * s);
        d.push(m.q(alpha, *l) * l.sqrt());
    }
    FilterData { b2, d }
}

fn check_inputs(m: &FilterMethod, alpha: f64, op: &SpectralOperator) -> Result<()> {
    m.check_alpha(alpha)?;
    m.check_lambda(op.norm_tt())?;
    Ok(())
}

/// x̂_α = q_α(T*T) T* g in the singular basis.
pub fn apply_regularizer(m: &FilterMethod, alpha: f64, g: &[f64], op: &SpectralOperator) -> Result<SpectralElement> {
    check_inputs(m, alpha, op)?;
    if g.len() != op.dim() {
        return Err(SpecregError::BasisMismatch { expected: op.dim(), got: g.len() });
    }
    let mut out = g.to_vec();
    for (grp, l) in op.eigenvalues().iter().enumerate() {
        let f = m.q(alpha, *l) * l.sqrt();
        for c in &mut out[op.slots(grp)] {
            *c *= f;
        }
    }
    Ok(SpectralElement::new(out))
}

/// ‖r_α(T*T) x‖
pub fn bias(m: &FilterMethod, alpha: f64, op: &SpectralOperator, x: &SpectralElement) -> Result<f64> {
    check_inputs(m, alpha, op)?;
    let sq = op.group_sq(x)?;
    Ok(bias_from_sq(m, alpha, op, &sq))
}

pub(crate) fn bias_from_sq(m: &FilterMethod, alpha: f64, op: &SpectralOperator, sq: &[f64]) -> f64 {
    op.eigenvalues()
        .iter()
        .zip(sq)
        .map(|(l, s)| {
            let r = m.r(alpha, *l);
            r * r * s
        })
        .sum::<f64>()
        .sqrt()
}

/// ‖R_α‖ = max_j √λ_j q_α(λ_j)
pub fn operator_norm(m: &FilterMethod, alpha: f64, op: &SpectralOperator) -> Result<f64> {
    check_inputs(m, alpha, op)?;
    Ok(op.eigenvalues().iter().map(|l| m.q(alpha, *l) * l.sqrt()).fold(0.0, f64::max))
}

/// E‖R_α W‖² = Σ mult · q_α(λ)² λ
pub fn variance_trace(m: &FilterMethod, alpha: f64, op: &SpectralOperator) -> Result<f64> {
    check_inputs(m, alpha, op)?;
    Ok(trace_unchecked(m, alpha, op))
}

fn trace_unchecked(m: &FilterMethod, alpha: f64, op: &SpectralOperator) -> f64 {
    op.eigenvalues()
        .iter()
        .zip(op.multiplicities())
        .map(|(l, k)| {
            let q = m.q(alpha, *l);
            *k as f64 * q * q * l
        })
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorstCase {
    pub alpha: f64,
    pub delta: f64,
    pub value: f64,
    pub bias: f64,
    /// ‖R_α‖
    pub r_norm: f64,
    /// Lagrange multiplier θ ≥ ‖R_α‖²
    pub theta: f64,
    pub hard_case: bool,
    /// maximizing noise ξ, one entry per slot
    pub witness: Vec<f64>,
}

impl WorstCase {
    /// max(bias, ‖R‖δ) ≤ √(bias² + ‖R‖²δ²) ≤ value ≤ bias + ‖R‖δ
    pub fn bounds_hold(&self, rel: f64) -> bool {
        let lower = (self.bias * self.bias + self.r_norm * self.r_norm * self.delta * self.delta).sqrt();
        let upper = self.bias + self.r_norm * self.delta;
        self.value >= lower * (1.0 - rel) && self.value <= upper * (1.0 + rel)
    }
}

/// Solution of max ‖b + Dξ‖ over ‖ξ‖ ≤ δ for grouped data.
#[derive(Clone, Copy, Debug)]
pub(crate) struct SecularSolution {
    pub value: f64,
    /// θ − d_max²
    pub shift: f64,
    pub d_max: f64,
    pub hard_case: bool,
    /// ‖ξ‖² carried by the non-top directions in the hard case
    pub hard_mass: f64,
}

const TOP_REL: f64 = 8.0 * f64::EPSILON;
const SECULAR_MAX_ITER: usize = 400;

pub(crate) fn solve_secular(b2: &[f64], d: &[f64], delta: f64) -> Result<SecularSolution> {
    let d_max = d.iter().cloned().fold(0.0, f64::max);
    let bias2: f64 = b2.iter().sum();
    if delta == 0.0 || d_max == 0.0 {
        return Ok(SecularSolution { value: bias2.sqrt(), shift: f64::INFINITY, d_max, hard_case: false, hard_mass: 0.0 });
    }
    let n = d.len();
    let mut gap = Vec::with_capacity(n);
    let mut c = Vec::with_capacity(n);
    let mut c_top = 0.0;
    let mut c_all = 0.0;
    for j in 0..n {
        let g = (d_max - d[j]) * (d_max + d[j]);
        let cj = d[j] * d[j] * b2[j];
        let top = g <= TOP_REL * d_max * d_max;
        gap.push(if top { 0.0 } else { g });
        c.push(cj);
        c_all += cj;
        if top {
            c_top += cj;
        }
    }
    let d2 = delta * delta;
    let f = |s: f64| -> (f64, f64) {
        let mut f2 = 0.0;
        let mut f3 = 0.0;
        for j in 0..n {
            if c[j] == 0.0 {
                continue;
            }
            let den = s + gap[j];
            let t = c[j] / (den * den);
            f2 += t;
            f3 += t / den;
        }
        (f2, f3)
    };
    let value_at = |s: f64| -> f64 {
        let theta = d_max * d_max + s;
        let mut acc = 0.0;
        for j in 0..n {
            if b2[j] == 0.0 {
                continue;
            }
            let ratio = theta / (s + gap[j]);
            acc += b2[j] * ratio * ratio;
        }
        acc.sqrt()
    };

    if c_top == 0.0 {
        let mut rest = 0.0;
        for j in 0..n {
            if c[j] > 0.0 && gap[j] > 0.0 {
                rest += c[j] / (gap[j] * gap[j]);
            }
        }
        if rest <= d2 {
            let theta = d_max * d_max;
            let mut acc = 0.0;
            for j in 0..n {
                if b2[j] > 0.0 && gap[j] > 0.0 {
                    let ratio = theta / gap[j];
                    acc += b2[j] * ratio * ratio;
                }
            }
            acc += d_max * d_max * (d2 - rest);
            return Ok(SecularSolution { value: acc.sqrt(), shift: 0.0, d_max, hard_case: true, hard_mass: rest });
        }
    }

    let mut hi = c_all.sqrt() / delta;
    let mut lo = if c_top > 0.0 { c_top.sqrt() / delta } else { 0.0 };
    if lo >= hi {
        // all mass on the top directions
        return Ok(SecularSolution { value: value_at(lo), shift: lo, d_max, hard_case: false, hard_mass: 0.0 });
    }
    if lo == 0.0 {
        lo = hi;
        let mut guard = 0;
        while f(lo).0 <= d2 {
            lo *= 0.5;
            guard += 1;
            if guard > 2000 || lo == 0.0 {
                return Err(SpecregError::NoConvergence { what: "secular bracket", iterations: guard });
            }
        }
    }
    // Newton on 1/√F(s) − 1/δ, safeguarded by bisection
    let mut s = 0.5 * (lo + hi);
    for it in 0..SECULAR_MAX_ITER {
        let (f2, f3) = f(s);
        if (f2 - d2).abs() <= 1e-15 * d2 {
            break;
        }
        if f2 > d2 {
            lo = s;
        } else {
            hi = s;
        }
        let h = 1.0 / f2.sqrt() - 1.0 / delta;
        let dh = f3 / (f2 * f2.sqrt());
        let mut next = s - h / dh;
        if !(next > lo && next < hi) || !next.is_finite() {
            // brackets can span hundreds of decades on severely ill-posed spectra
            next = if lo > 0.0 && hi > 4.0 * lo { (lo.sqrt() * hi.sqrt()).max(lo) } else { 0.5 * (lo + hi) };
        }
        if (next - s).abs() <= 1e-16 * s.max(f64::MIN_POSITIVE) || hi - lo <= 4.0 * f64::EPSILON * hi {
            s = next;
            break;
        }
        s = next;
        if it + 1 == SECULAR_MAX_ITER {
            return Err(SpecregError::NoConvergence { what: "secular equation", iterations: SECULAR_MAX_ITER });
        }
    }
    Ok(SecularSolution { value: value_at(s), shift: s, d_max, hard_case: false, hard_mass: 0.0 })
}

/// sup over ‖ξ‖ ≤ δ of ‖R_α(Tx + ξ) − x‖ with the maximizing ξ.
pub fn worst_case_error(
    m: &FilterMethod,
    alpha: f64,
    op: &SpectralOperator,
    x: &SpectralElement,
    delta: f64,
) -> Result<WorstCase> {
    check_inputs(m, alpha, op)?;
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(SpecregError::Domain { what: "noise level", value: delta });
    }
    let sq = op.group_sq(x)?;
    let fd = filter_data(m, alpha, op, &sq);
    let sol = solve_secular(&fd.b2, &fd.d, delta)?;
    let bias = fd.b2.iter().sum::<f64>().sqrt();

    let mut witness = vec![0.0; op.dim()];
    if delta > 0.0 && sol.d_max > 0.0 {
        let d_max2 = sol.d_max * sol.d_max;
        let mut first_top = None;
        for (grp, l) in op.eigenvalues().iter().enumerate() {
            let dj = fd.d[grp];
            let gap = (sol.d_max - dj) * (sol.d_max + dj);
            let top = gap <= TOP_REL * d_max2;
            if top && first_top.is_none() {
                first_top = Some(op.slots(grp).start);
            }
            let den = sol.shift + if top { 0.0 } else { gap };
            if den == 0.0 {
                continue;
            }
            let r = m.r(alpha, *l);
            for s in op.slots(grp) {
                // b_slot = −r x, ξ aligned with it
                witness[s] = -dj * r * x.coefficients[s] / den;
            }
        }
        if sol.hard_case {
            let extra = (delta * delta - sol.hard_mass).max(0.0).sqrt();
            if let Some(s) = first_top {
                witness[s] += extra;
            }
        }
    }
    Ok(WorstCase {
        alpha,
        delta,
        value: sol.value,
        bias,
        r_norm: sol.d_max,
        theta: sol.d_max * sol.d_max + sol.shift,
        hard_case: sol.hard_case,
        witness,
    })
}

/// Worst-case values for many noise levels at one α; shares the per-α setup.
pub fn worst_case_values(
    m: &FilterMethod,
    alpha: f64,
    op: &SpectralOperator,
    sq: &[f64],
    deltas: &[f64],
) -> Result<Vec<f64>> {
    check_inputs(m, alpha, op)?;
    let fd = filter_data(m, alpha, op, sq);
    deltas.iter().map(|d| solve_secular(&fd.b2, &fd.d, *d).map(|s| s.value)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBreakdown {
    pub alpha: f64,
    pub bias: f64,
    /// noise contribution in error units: ε√trace or ‖R_α‖δ
    pub noise_term: f64,
    pub total: f64,
}

/// √(bias² + ε² trace) with its components.
pub fn mse_exact(m: &FilterMethod, alpha: f64, op: &SpectralOperator, x: &SpectralElement, eps: f64) -> Result<ErrorBreakdown> {
    check_inputs(m, alpha, op)?;
    let sq = op.group_sq(x)?;
    Ok(mse_from_sq(m, alpha, op, &sq, eps))
}

pub(crate) fn mse_from_sq(m: &FilterMethod, alpha: f64, op: &SpectralOperator, sq: &[f64], eps: f64) -> ErrorBreakdown {
    let b = bias_from_sq(m, alpha, op, sq);
    let noise = eps * trace_unchecked(m, alpha, op).sqrt();
    ErrorBreakdown { alpha, bias: b, noise_term: noise, total: (b * b + noise * noise).sqrt() }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarlo {
    pub mean_sq_error: f64,
    pub std_error: f64,
    pub replicates: usize,
}

/// Sample mean of ‖R_α(Tx + εW) − x‖²; replicate i uses stream i of the seed.
pub fn mse_monte_carlo(
    m: &FilterMethod,
    alpha: f64,
    op: &SpectralOperator,
    x: &SpectralElement,
    eps: f64,
    replicates: usize,
    seed: u64,
) -> Result<MonteCarlo> {
    check_inputs(m, alpha, op)?;
    op.check(x)?;
    if replicates < 2 {
        return Err(invalid("monte carlo needs at least two replicates"));
    }
    let lam = op.slot_eigenvalues();
    let rr: Vec<f64> = lam.iter().map(|l| m.r(alpha, *l)).collect();
    let dd: Vec<f64> = lam.iter().map(|l| m.q(alpha, *l) * l.sqrt()).collect();
    let errs: Vec<f64> = (0..replicates)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let terms: Vec<f64> = x
                .coefficients
                .iter()
                .zip(rr.iter().zip(&dd))
                .map(|(xj, (r, d))| {
                    let w: f64 = StandardNormal.sample(&mut rng);
                    let e = -r * xj + eps * d * w;
                    e * e
                })
                .collect();
            pairwise_sum(&terms)
        })
        .collect();
    let n = replicates as f64;
    let mean = pairwise_sum(&errs) / n;
    let dev: Vec<f64> = errs.iter().map(|e| (e - mean) * (e - mean)).collect();
    let var = pairwise_sum(&dev) / (n - 1.0);
    Ok(MonteCarlo { mean_sq_error: mean, std_error: (var / n).sqrt(), replicates })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvelopeKind {
    /// v²/D ≤ trace ≤ D v²
    TwoSided,
    /// only one side is stable on the grid; constants multiply v²
    Relaxed { lower: Option<f64>, upper: Option<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceEnvelope {
    pub v: EnvelopeFn,
    pub kind: EnvelopeKind,
    /// D = max(max ratio, 1/min ratio) with ratio = trace / v²
    pub d: f64,
    pub ratio_min: f64,
    pub ratio_max: f64,
    /// growth exponent of v⁻¹ measured on the grid
    pub q_growth: f64,
}

/// Grid certificate for trace(α) ≍ v(α)².
///
/// A side counts as stable when its extreme ratio over the bottom third of
/// the α grid stays within a factor 2 of the extreme over the rest.
pub fn certify_variance_envelope(
    m: &FilterMethod,
    op: &SpectralOperator,
    v: &EnvelopeFn,
    alpha_grid: &[f64],
) -> Result<VarianceEnvelope> {
    v.validate()?;
    let mut alphas: Vec<f64> = alpha_grid.iter().copied().filter(|a| *a > 0.0 && *a <= m.alpha_max).collect();
    alphas.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if alphas.len() < 6 {
        return Err(invalid("envelope certification needs at least six admissible alphas"));
    }
    m.check_lambda(op.norm_tt())?;
    let ratios: Vec<f64> = alphas
        .iter()
        .map(|a| {
            let vv = v.eval(*a);
            trace_unchecked(m, *a, op) / (vv * vv)
        })
        .collect();
    let cut = alphas.len() / 3;
    let (low, rest) = ratios.split_at(cut);
    let max_of = |s: &[f64]| s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min_of = |s: &[f64]| s.iter().cloned().fold(f64::INFINITY, f64::min);
    let upper_ok = max_of(low) <= 2.0 * max_of(rest);
    let lower_ok = min_of(low) >= 0.5 * min_of(rest);
    let rmin = min_of(&ratios);
    let rmax = max_of(&ratios);
    let kind = match (lower_ok, upper_ok) {
        (true, true) => EnvelopeKind::TwoSided,
        (true, false) => EnvelopeKind::Relaxed { lower: Some(rmin), upper: None },
        (false, true) => EnvelopeKind::Relaxed { lower: None, upper: Some(rmax) },
        (false, false) => {
            return Err(SpecregError::Structure(format!(
                "variance trace is not comparable to v² on the grid (ratio range [{rmin:e}, {rmax:e}])"
            )))
        }
    };
    let vals: Vec<f64> = alphas.iter().map(|a| v.eval(*a)).collect();
    let mut q: f64 = 0.0;
    for i in 0..alphas.len() {
        for j in i + 1..alphas.len() {
            let e = (alphas[j] / alphas[i]).ln() / (vals[i] / vals[j]).ln();
            if e.is_finite() {
                q = q.max(e);
            }
        }
    }
    Ok(VarianceEnvelope { v: v.clone(), kind, d: rmax.max(1.0 / rmin), ratio_min: rmin, ratio_max: rmax, q_growth: q })
}
