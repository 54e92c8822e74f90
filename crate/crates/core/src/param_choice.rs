//! Parameter choice rules and quasioptimality diagnostics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, SpecregError};
use crate::filters::FilterMethod;
use crate::grid::{ensure_ascending, nearest_log};
use crate::index_fn::{IndexFunction, THETA_TOL};
use crate::regularize::{apply_regularizer, mse_exact, worst_case_error, worst_case_values};
use crate::spectral::{add_white_noise, NoiseModel, SpectralElement, SpectralOperator};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum RuleKind {
    /// α = Θ_κ⁻¹(δ), snapped to the grid
    APriori { kappa: IndexFunction },
    Discrepancy { tau: f64 },
    Lepskii { c: f64 },
    /// grid minimizer of the worst-case or mean-square error
    Oracle,
    Fixed { alpha: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleOutcome {
    pub alpha: f64,
    /// true when no grid point satisfied the rule and a fallback was used
    pub fallback: bool,
}

/// Grid point nearest to Θ_κ⁻¹(δ) in log distance, clamped to α_max.
pub fn choose_a_priori(kappa: &IndexFunction, delta: f64, grid: &[f64], alpha_max: f64) -> Result<f64> {
    ensure_ascending(grid, "alpha grid")?;
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(SpecregError::Domain { what: "a priori noise level", value: delta });
    }
    let admissible: Vec<f64> = grid.iter().copied().filter(|a| *a <= alpha_max).collect();
    if admissible.is_empty() {
        return Err(invalid("no grid point below alpha_max"));
    }
    let target = match kappa.theta_inverse(delta, THETA_TOL) {
        Ok(a) => a.min(alpha_max),
        Err(SpecregError::OutOfRange { .. }) if delta >= kappa.theta(kappa.eval_cap().min(alpha_max)).unwrap_or(0.0) => {
            alpha_max
        }
        Err(e) => return Err(e),
    };
    let i = nearest_log(&admissible, target).unwrap();
    Ok(admissible[i])
}

/// Residual ‖T x̂_α − g‖ in the singular basis.
pub fn residual_norm(m: &FilterMethod, alpha: f64, op: &SpectralOperator, g: &[f64]) -> Result<f64> {
    m.check_alpha(alpha)?;
    if g.len() != op.dim() {
        return Err(SpecregError::BasisMismatch { expected: op.dim(), got: g.len() });
    }
    let mut acc = 0.0;
    for (grp, l) in op.eigenvalues().iter().enumerate() {
        let r = m.r(alpha, *l);
        let s: f64 = g[op.slots(grp)].iter().map(|v| v * v).sum();
        acc += r * r * s;
    }
    Ok(acc.sqrt())
}

/// Largest grid α with residual ≤ τδ; the smallest α, flagged, when none qualifies.
pub fn choose_discrepancy(
    m: &FilterMethod,
    op: &SpectralOperator,
    g: &[f64],
    delta: f64,
    tau: f64,
    grid: &[f64],
) -> Result<RuleOutcome> {
    ensure_ascending(grid, "alpha grid")?;
    if !(tau >= 1.0) {
        return Err(invalid(format!("discrepancy needs tau >= 1, got {tau}")));
    }
    let grid = m.admissible_grid(grid);
    if grid.is_empty() {
        return Err(invalid("no admissible alpha in the grid"));
    }
    for &a in grid.iter().rev() {
        if residual_norm(m, a, op, g)? <= tau * delta {
            return Ok(RuleOutcome { alpha: a, fallback: false });
        }
    }
    Ok(RuleOutcome { alpha: grid[0], fallback: true })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseBound {
    /// s(α) = δ √(C_q/α)
    Deterministic { delta: f64 },
    /// s(α) = ε √trace(α)
    WhiteNoise { eps: f64 },
}

impl From<NoiseModel> for NoiseBound {
    fn from(n: NoiseModel) -> Self {
        match n {
            NoiseModel::Deterministic { delta } => NoiseBound::Deterministic { delta },
            NoiseModel::WhiteNoise { eps } => NoiseBound::WhiteNoise { eps },
        }
    }
}

fn noise_bound(m: &FilterMethod, op: &SpectralOperator, b: &NoiseBound, alpha: f64) -> f64 {
    match b {
        NoiseBound::Deterministic { delta } => delta * (m.c_q / alpha).sqrt(),
        NoiseBound::WhiteNoise { eps } => {
            let t: f64 = op
                .eigenvalues()
                .iter()
                .zip(op.multiplicities())
                .map(|(l, k)| {
                    let q = m.q(alpha, *l);
                    *k as f64 * q * q * l
                })
                .sum();
            eps * t.sqrt()
        }
    }
}

/// Balancing principle: largest α with ‖x̂_{α′} − x̂_α‖ ≤ 4c·s(α′) for all α′ ≤ α.
pub fn choose_lepskii(
    m: &FilterMethod,
    op: &SpectralOperator,
    g: &[f64],
    bound: &NoiseBound,
    c: f64,
    grid: &[f64],
) -> Result<RuleOutcome> {
    ensure_ascending(grid, "alpha grid")?;
    if !(c > 0.0) {
        return Err(invalid("lepskii constant must be positive"));
    }
    if g.len() != op.dim() {
        return Err(SpecregError::BasisMismatch { expected: op.dim(), got: g.len() });
    }
    let grid = m.admissible_grid(grid);
    if grid.is_empty() {
        return Err(invalid("no admissible alpha in the grid"));
    }
    let lam = op.eigenvalues();
    let gsq: Vec<f64> = (0..op.groups()).map(|grp| g[op.slots(grp)].iter().map(|v| v * v).sum()).collect();
    // per-group filter factors f = q√λ; ‖x̂_i − x̂_j‖² = Σ (f_i − f_j)² ‖g_grp‖²
    let factors: Vec<Vec<f64>> = grid.iter().map(|a| lam.iter().map(|l| m.q(*a, *l) * l.sqrt()).collect()).collect();
    let s: Vec<f64> = grid.iter().map(|a| noise_bound(m, op, bound, *a)).collect();
    let ok: Vec<bool> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            (0..i).all(|j| {
                let d2: f64 = factors[i].iter().zip(&factors[j]).zip(&gsq).map(|((a, b), w)| (a - b) * (a - b) * w).sum();
                d2.sqrt() <= 4.0 * c * s[j]
            })
        })
        .collect();
    let best = ok.iter().rposition(|b| *b).unwrap_or(0);
    Ok(RuleOutcome { alpha: grid[best], fallback: false })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaSetReport {
    pub alphas: Vec<f64>,
    /// bias(α) / ‖R_α‖ in α order
    pub deltas: Vec<f64>,
    pub sorted: Vec<f64>,
    /// largest ratio of consecutive sorted values
    pub gamma_hat: f64,
}

/// Noise levels at which bias and propagated noise balance, one per grid α.
pub fn delta_set(m: &FilterMethod, op: &SpectralOperator, x: &SpectralElement, grid: &[f64]) -> Result<DeltaSetReport> {
    ensure_ascending(grid, "alpha grid")?;
    let alphas = m.admissible_grid(grid);
    let sq = op.group_sq(x)?;
    m.check_lambda(op.norm_tt())?;
    let lam = op.eigenvalues();
    let deltas: Vec<f64> = alphas
        .par_iter()
        .map(|a| {
            let b: f64 = lam.iter().zip(&sq).map(|(l, s)| m.r(*a, *l).powi(2) * s).sum::<f64>().sqrt();
            let rn = lam.iter().map(|l| m.q(*a, *l) * l.sqrt()).fold(0.0, f64::max);
            b / rn
        })
        .collect();
    let mut sorted: Vec<f64> = deltas.iter().copied().filter(|d| *d > 0.0 && d.is_finite()).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let gamma_hat = sorted.windows(2).map(|w| w[1] / w[0]).fold(1.0, f64::max);
    Ok(DeltaSetReport { alphas, deltas, sorted, gamma_hat })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuasiOptimality {
    pub level: f64,
    pub alpha_rule: f64,
    pub alpha_best: f64,
    pub numerator: f64,
    /// inf over the grid of the worst-case (or root mean square) error
    pub denominator: f64,
    pub ratio: f64,
    pub fallback: bool,
}

/// Ratio of the rule's error to the best grid error at one noise level.
pub fn quasioptimality_ratio(
    m: &FilterMethod,
    rule: &RuleKind,
    op: &SpectralOperator,
    x: &SpectralElement,
    noise: &NoiseModel,
    grid: &[f64],
    adversarial: bool,
    seed: u64,
) -> Result<QuasiOptimality> {
    noise.validate()?;
    ensure_ascending(grid, "alpha grid")?;
    let grid_adm = m.admissible_grid(grid);
    if grid_adm.is_empty() {
        return Err(invalid("no admissible alpha in the grid"));
    }
    let sq = op.group_sq(x)?;
    let tx = op.forward(x)?;
    let (errors, g): (Vec<f64>, Vec<f64>) = match noise {
        NoiseModel::Deterministic { delta } => {
            let errs: Vec<f64> = grid_adm
                .par_iter()
                .map(|a| worst_case_values(m, *a, op, &sq, &[*delta]).map(|v| v[0]))
                .collect::<Result<_>>()?;
            let ib = argmin(&errs);
            let w = worst_case_error(m, grid_adm[ib], op, x, *delta)?;
            let g = tx.iter().zip(&w.witness).map(|(a, b)| a + b).collect();
            (errs, g)
        }
        NoiseModel::WhiteNoise { eps } => {
            let errs: Vec<f64> = grid_adm
                .iter()
                .map(|a| mse_exact(m, *a, op, x, *eps).map(|e| e.total))
                .collect::<Result<_>>()?;
            (errs, add_white_noise(&tx, *eps, seed))
        }
    };
    let ib = argmin(&errors);
    let level = noise.level();
    let outcome = match rule {
        RuleKind::APriori { kappa } => RuleOutcome { alpha: choose_a_priori(kappa, level, &grid_adm, m.alpha_max)?, fallback: false },
        RuleKind::Discrepancy { tau } => {
            let d = match noise {
                NoiseModel::Deterministic { delta } => *delta,
                NoiseModel::WhiteNoise { eps } => eps * (op.dim() as f64).sqrt(),
            };
            choose_discrepancy(m, op, &g, d, *tau, &grid_adm)?
        }
        RuleKind::Lepskii { c } => choose_lepskii(m, op, &g, &NoiseBound::from(*noise), *c, &grid_adm)?,
        RuleKind::Oracle => RuleOutcome { alpha: grid_adm[ib], fallback: false },
        RuleKind::Fixed { alpha } => RuleOutcome { alpha: *alpha, fallback: false },
    };
    let a = outcome.alpha;
    let numerator = if adversarial {
        match noise {
            NoiseModel::Deterministic { delta } => worst_case_error(m, a, op, x, *delta)?.value,
            NoiseModel::WhiteNoise { eps } => mse_exact(m, a, op, x, *eps)?.total,
        }
    } else {
        apply_regularizer(m, a, &g, op)?.sub(x).norm()
    };
    let denominator = errors[ib];
    Ok(QuasiOptimality {
        level,
        alpha_rule: a,
        alpha_best: grid_adm[ib],
        numerator,
        denominator,
        ratio: numerator / denominator,
        fallback: outcome.fallback,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuasiOptimalitySweep {
    pub rows: Vec<QuasiOptimality>,
    pub raw_max: f64,
    /// coefficient of the fitted linear-in-level term
    pub linear_term: f64,
    /// max ratio after subtracting the fitted linear-in-level term
    pub adjusted_max: f64,
}

/// Fits numerator ≈ C·denominator + L·level (L ≥ 0) and reports both ratios.
pub fn quasioptimality_summary(rows: Vec<QuasiOptimality>) -> Result<QuasiOptimalitySweep> {
    if rows.is_empty() {
        return Err(invalid("empty quasioptimality sweep"));
    }
    let raw_max = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    let (mut sdd, mut sdl, mut sll, mut snd, mut snl) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for r in &rows {
        // weight by 1/denominator² so every level counts equally
        let w = 1.0 / (r.denominator * r.denominator);
        sdd += w * r.denominator * r.denominator;
        sdl += w * r.denominator * r.level;
        sll += w * r.level * r.level;
        snd += w * r.numerator * r.denominator;
        snl += w * r.numerator * r.level;
    }
    let det = sdd * sll - sdl * sdl;
    let mut lin = if det.abs() > 1e-300 { (sdd * snl - sdl * snd) / det } else { 0.0 };
    if !(lin > 0.0) {
        lin = 0.0;
    }
    let adjusted_max = rows
        .iter()
        .map(|r| ((r.numerator - lin * r.level) / r.denominator).max(0.0))
        .fold(0.0, f64::max);
    Ok(QuasiOptimalitySweep { rows, raw_max, linear_term: lin, adjusted_max })
}

fn argmin(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::FilterKind;
    use crate::grid::log_grid_per_decade;

    fn tik() -> FilterMethod {
        FilterMethod::new(FilterKind::Tikhonov, 1.0).unwrap()
    }

    #[test]
    fn a_priori_power_half() {
        let grid = log_grid_per_decade(1e-6, 1.0, 40).unwrap();
        let a = choose_a_priori(&IndexFunction::power(0.5), 0.01, &grid, f64::INFINITY).unwrap();
        assert!((a / 0.01 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn tikhonov_single_mode_delta_set() {
        let op = SpectralOperator::new(vec![1.0], vec![1]).unwrap();
        let x = SpectralElement::new(vec![1.0]);
        let grid = log_grid_per_decade(1e-6, 1.0, 10).unwrap();
        let rep = delta_set(&tik(), &op, &x, &grid).unwrap();
        for (a, d) in rep.alphas.iter().zip(&rep.deltas) {
            assert!((d - a).abs() <= 1e-12 * a);
        }
    }

    #[test]
    fn discrepancy_falls_back() {
        let op = SpectralOperator::new(vec![1.0, 0.1], vec![1, 1]).unwrap();
        let g = vec![1.0, 1.0];
        let grid = log_grid_per_decade(1e-3, 1.0, 5).unwrap();
        let out = choose_discrepancy(&tik(), &op, &g, 1e-9, 1.5, &grid).unwrap();
        assert!(out.fallback);
        assert_eq!(out.alpha, grid[0]);
    }

    #[test]
    fn lepskii_noiseless_is_smallest() {
        let op = SpectralOperator::new(vec![1.0, 0.5, 0.1], vec![1, 1, 1]).unwrap();
        let g = vec![1.0, 0.5, 0.2];
        let grid = log_grid_per_decade(1e-4, 1.0, 5).unwrap();
        let out = choose_lepskii(&tik(), &op, &g, &NoiseBound::Deterministic { delta: 0.0 }, 1.0, &grid).unwrap();
        assert_eq!(out.alpha, grid[0]);
    }

    #[test]
    fn oracle_ratio_is_one() {
        let op = SpectralOperator::new(vec![1.0, 0.5, 0.1, 0.01], vec![1, 1, 1, 1]).unwrap();
        let x = SpectralElement::new(vec![1.0, 0.5, 0.2, 0.1]);
        let grid = log_grid_per_decade(1e-4, 1.0, 10).unwrap();
        let q = quasioptimality_ratio(&tik(), &RuleKind::Oracle, &op, &x, &NoiseModel::Deterministic { delta: 1e-2 }, &grid, true, 0)
            .unwrap();
        assert!((q.ratio - 1.0).abs() < 1e-12);
        let big = quasioptimality_ratio(
            &tik(),
            &RuleKind::Fixed { alpha: 1e3 },
            &op,
            &x,
            &NoiseModel::Deterministic { delta: 1e-2 },
            &grid,
            true,
            0,
        )
        .unwrap();
        assert!(big.ratio > 1.0);
    }
}
