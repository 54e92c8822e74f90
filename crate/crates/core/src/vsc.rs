//! Variational source conditions: certificates, conversions and falsification.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, SpecregError};
use crate::grid::log_space;
use crate::index_fn::{check_structure, IndexFunction, PsiProfile, StructureReport};
use crate::spectral::{spectral_distribution_all, xtk_norm, SpectralElement, SpectralOperator};

/// ψ(t) = A · ψ_{scale·κ}(t)
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VscProfile {
    #[serde(rename = "A")]
    pub a: f64,
    pub kappa: IndexFunction,
    pub scale: f64,
}

impl VscProfile {
    pub fn effective_kappa(&self) -> IndexFunction {
        if self.scale == 1.0 {
            self.kappa.clone()
        } else {
            self.kappa.clone().scaled(self.scale)
        }
    }

    pub fn is_trivial(&self) -> bool {
        self.a == 0.0 || self.scale == 0.0
    }

    pub fn evaluator(&self) -> Result<ProfileEval> {
        if !(self.a >= 0.0 && self.scale >= 0.0 && self.a.is_finite() && self.scale.is_finite()) {
            return Err(invalid("VSC profile needs finite nonnegative A and scale"));
        }
        let psi = if self.is_trivial() { None } else { Some(PsiProfile::new(self.effective_kappa())?) };
        Ok(ProfileEval { a: self.a, psi })
    }

    pub fn psi(&self, t: f64) -> Result<f64> {
        self.evaluator()?.psi(t)
    }
}

/// Cached evaluator for a profile's ψ.
#[derive(Clone, Debug)]
pub struct ProfileEval {
    a: f64,
    psi: Option<PsiProfile>,
}

impl ProfileEval {
    pub fn psi(&self, t: f64) -> Result<f64> {
        match &self.psi {
            None => Ok(0.0),
            Some(p) => Ok(self.a * p.psi(t)?),
        }
    }
}

/// 2⟨x†, x† − x⟩ − ½‖x − x†‖² − ψ(‖T(x − x†)‖²); positive values falsify.
pub fn vsc_residual(x_dag: &SpectralElement, x: &SpectralElement, op: &SpectralOperator, profile: &VscProfile) -> Result<f64> {
    let ev = profile.evaluator()?;
    op.check(x)?;
    let h = x.sub(x_dag);
    residual_of(x_dag, &h, op, &|t| ev.psi(t))
}

fn residual_of(x_dag: &SpectralElement, h: &SpectralElement, op: &SpectralOperator, psi: &dyn Fn(f64) -> Result<f64>) -> Result<f64> {
    let lin = -2.0 * x_dag.dot(h);
    let quad = 0.5 * h.norm().powi(2);
    let th = op.forward_sq_norm(h)?;
    Ok(lin - quad - psi(th)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayCertificate {
    pub profile: VscProfile,
    /// ‖x†‖ in X^T_κ before normalization
    pub xtk_norm: f64,
    pub mu: f64,
    /// sup_t √t / ψ(t) over (0, 4‖T‖‖x†‖]
    pub sup_ratio: f64,
    pub structure: StructureReport,
}

fn structure_grid(op: &SpectralOperator, kappa: &IndexFunction) -> Result<Vec<f64>> {
    let hi = op.norm_tt().min(kappa.eval_cap());
    let lo = (op.lambda_min() * 1e-2).max(kappa.domain_min()).max(1e-300);
    log_space(lo, hi, 200)
}

/// Spectral tail decay ‖E_λ x†‖ ≤ κ(λ)‖x†‖_κ gives a VSC with ψ = A ψ_κ.
pub fn decay_to_vsc(x_dag: &SpectralElement, op: &SpectralOperator, kappa: &IndexFunction, mu: f64) -> Result<DecayCertificate> {
    if !(mu > 0.0 && mu < 1.0) {
        return Err(invalid(format!("mu must lie in (0, 1), got {mu}")));
    }
    kappa.validate()?;
    let structure = check_structure(kappa, &structure_grid(op, kappa)?)?;
    if !structure.monotone {
        return Err(SpecregError::Structure("index function is not monotone on the spectrum".into()));
    }
    if !structure.kk_concave {
        return Err(SpecregError::Structure(format!(
            "κ² is not concave on the spectrum (witness {:?})",
            structure.concavity_witness
        )));
    }
    if !structure.admits_mu(mu) {
        return Err(SpecregError::Structure(format!(
            "κ²/t^(1-μ) is not nonincreasing for μ = {mu} (largest certified: {:?})",
            structure.mu
        )));
    }
    let norm = xtk_norm(x_dag, op, kappa)?;
    if !norm.is_finite() {
        return Err(SpecregError::Structure("solution is not in X^T_κ".into()));
    }
    if norm == 0.0 {
        return Ok(DecayCertificate {
            profile: VscProfile { a: 0.0, kappa: kappa.clone(), scale: 0.0 },
            xtk_norm: 0.0,
            mu,
            sup_ratio: 0.0,
            structure,
        });
    }
    let kappa_s = kappa.clone().scaled(norm);
    let prof = PsiProfile::new(kappa_s.clone())?;
    let t_max = 4.0 * op.norm_tt().sqrt() * x_dag.norm();
    let mut sup: f64 = 0.0;
    for t in log_space(t_max * 1e-16, t_max, 200)? {
        sup = sup.max(t.sqrt() / prof.psi(t)?);
    }
    let a = 2.0 * (1.0 + 1.0 / mu) + 2.0 * kappa_s.eval(op.norm_tt())? * sup;
    Ok(DecayCertificate {
        profile: VscProfile { a, kappa: kappa.clone(), scale: norm },
        xtk_norm: norm,
        mu,
        sup_ratio: sup,
        structure,
    })
}

/// Upper bound on ‖E_λ x†‖ implied by a VSC with ψ = A ψ_κ.
pub fn vsc_to_decay_bound(profile: &VscProfile, lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(SpecregError::Domain { what: "decay bound", value: lambda });
    }
    if profile.is_trivial() {
        return Ok(0.0);
    }
    let k = profile.effective_kappa();
    let c = 2.0 * profile.a / 3.0;
    if c * lambda <= k.eval_cap() {
        Ok(c.sqrt() * k.eval(c * lambda)?)
    } else {
        Ok(c.sqrt() * c.sqrt().max(1.0) * k.eval(lambda)?)
    }
}

/// Spectral source condition x† = φ(T*T)w with ‖w‖ ≤ ρ as a VSC: ψ(δ²) = 4ρ²φ(Θ_φ⁻¹(δ/ρ))².
pub fn spectral_sc_to_vsc(phi: &IndexFunction, rho: f64, grid: &[f64]) -> Result<VscProfile> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(invalid("source radius must be positive"));
    }
    let rep = check_structure(phi, grid)?;
    if !rep.kk_concave || !rep.monotone {
        return Err(SpecregError::Structure("φ² must be concave and φ increasing".into()));
    }
    Ok(VscProfile { a: 4.0, kappa: phi.clone(), scale: rho })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FalsifyConfig {
    pub probes: usize,
    pub seed: u64,
    /// perturbation scales relative to ‖x†‖
    pub scale_min: f64,
    pub scale_max: f64,
}

impl Default for FalsifyConfig {
    fn default() -> Self {
        FalsifyConfig { probes: 10_000, seed: 0x5eed, scale_min: 1e-3, scale_max: 10.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeFamily {
    /// x = (I − E_λ) x†
    SpectralTruncation,
    /// x = x† + Gaussian perturbation
    Gaussian,
    /// x = x† ± s e_j
    Spike,
    /// x = x† − 2(I + 2ηT*T)⁻¹ x†
    Frontier,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FalsificationReport {
    pub probes: usize,
    pub witnesses: usize,
    #[serde(with = "crate::float_serde")]
    pub worst_residual: f64,
    pub worst_family: Option<ProbeFamily>,
    /// x − x† for the worst probe when it is positive
    pub witness: Option<Vec<f64>>,
    pub witness_family: Option<ProbeFamily>,
    pub by_family: Vec<(ProbeFamily, usize, usize)>,
}

impl FalsificationReport {
    pub fn passed(&self) -> bool {
        self.witnesses == 0
    }
}

pub fn vsc_falsify(x_dag: &SpectralElement, op: &SpectralOperator, profile: &VscProfile, cfg: &FalsifyConfig) -> Result<FalsificationReport> {
    let ev = profile.evaluator()?;
    vsc_falsify_with(x_dag, op, &|t| ev.psi(t), cfg)
}

/// Searches the four probe families for positive VSC residuals.
pub fn vsc_falsify_with(
    x_dag: &SpectralElement,
    op: &SpectralOperator,
    psi: &dyn Fn(f64) -> Result<f64>,
    cfg: &FalsifyConfig,
) -> Result<FalsificationReport> {
    op.check(x_dag)?;
    if cfg.probes < 8 {
        return Err(invalid("falsification needs at least 8 probes"));
    }
    if !(cfg.scale_min > 0.0 && cfg.scale_max >= cfg.scale_min) {
        return Err(invalid("falsification scales must satisfy 0 < min <= max"));
    }
    let xn = x_dag.norm();
    let tol = 1e-10 * xn * xn;
    let lam = op.eigenvalues();
    let n_groups = op.groups();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut report = FalsificationReport {
        probes: 0,
        witnesses: 0,
        worst_residual: f64::NEG_INFINITY,
        worst_family: None,
        witness: None,
        witness_family: None,
        by_family: Vec::new(),
    };
    let record = |rep: &mut FalsificationReport, fam: ProbeFamily, res: f64, h: &dyn Fn() -> Vec<f64>| {
        rep.probes += 1;
        let idx = match rep.by_family.iter().position(|(f, _, _)| *f == fam) {
            Some(i) => i,
            None => {
                rep.by_family.push((fam, 0, 0));
                rep.by_family.len() - 1
            }
        };
        rep.by_family[idx].1 += 1;
        if res > tol {
            rep.witnesses += 1;
            rep.by_family[idx].2 += 1;
        }
        if res > rep.worst_residual {
            rep.worst_residual = res;
            rep.worst_family = Some(fam);
            if res > tol {
                rep.witness = Some(h());
                rep.witness_family = Some(fam);
            }
        }
    };

    // (a) spectral truncations, via tail sums
    let n_a = n_groups.min(cfg.probes / 4).max(1);
    let sq = op.group_sq(x_dag)?;
    let dist = spectral_distribution_all(x_dag, op)?;
    let mut tail_t = vec![0.0; n_groups];
    let mut acc = 0.0;
    for g in (0..n_groups).rev() {
        acc += lam[g] * sq[g];
        tail_t[g] = acc;
    }
    for i in 0..n_a {
        let g = if n_a == n_groups { i } else { i * (n_groups - 1) / (n_a - 1).max(1) };
        let e2 = dist[g] * dist[g];
        let res = 1.5 * e2 - psi(tail_t[g])?;
        let start = op.slots(g).start;
        record(&mut report, ProbeFamily::SpectralTruncation, res, &|| {
            let mut h = vec![0.0; op.dim()];
            for (s, v) in h.iter_mut().enumerate().skip(start) {
                *v = -x_dag.coefficients[s];
            }
            h
        });
    }

    // (d) Lagrangian frontier
    let n_d = (cfg.probes / 8).max(1);
    let etas = log_space(1e-6 / op.norm_tt(), 1e6 / op.lambda_min().max(1e-300), n_d.max(2))?;
    for eta in etas.iter().take(n_d) {
        let mut lin = 0.0;
        let mut quad = 0.0;
        let mut th = 0.0;
        for g in 0..n_groups {
            let f = 2.0 / (1.0 + 2.0 * eta * lam[g]);
            lin += 2.0 * f * sq[g];
            quad += 0.5 * f * f * sq[g];
            th += lam[g] * f * f * sq[g];
        }
        let res = lin - quad - psi(th)?;
        record(&mut report, ProbeFamily::Frontier, res, &|| {
            let mut h = vec![0.0; op.dim()];
            for g in 0..n_groups {
                let f = 2.0 / (1.0 + 2.0 * eta * lam[g]);
                for s in op.slots(g) {
                    h[s] = -f * x_dag.coefficients[s];
                }
            }
            h
        });
    }

    let slot_lam = op.slot_eigenvalues();
    let (ls_min, ls_max) = (cfg.scale_min.ln(), cfg.scale_max.ln());
    let base = if xn > 0.0 { xn } else { 1.0 };

    // (c) coordinate spikes
    let n_c = cfg.probes / 4;
    for _ in 0..n_c {
        let j = rng.gen_range(0..op.dim());
        let s = (ls_min + rng.gen::<f64>() * (ls_max - ls_min)).exp() * base;
        let xj = x_dag.coefficients[j];
        let sign = if rng.gen::<bool>() { 1.0 } else { -(xj.signum()) };
        let hj = sign * s;
        let res = -2.0 * xj * hj - 0.5 * hj * hj - psi(slot_lam[j] * hj * hj)?;
        record(&mut report, ProbeFamily::Spike, res, &|| {
            let mut h = vec![0.0; op.dim()];
            h[j] = hj;
            h
        });
    }

    // (b) Gaussian perturbations
    let used = report.probes;
    let n_b = cfg.probes.saturating_sub(used);
    for _ in 0..n_b {
        let s = (ls_min + rng.gen::<f64>() * (ls_max - ls_min)).exp() * base;
        let mut h: Vec<f64> = (0..op.dim()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let hn = h.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in &mut h {
            *v *= s / hn;
        }
        let he = SpectralElement::new(h);
        let res = residual_of(x_dag, &he, op, psi)?;
        record(&mut report, ProbeFamily::Gaussian, res, &|| he.coefficients.clone());
    }
    Ok(report)
}

/// Projections P_ρ with ‖(I − P_ρ)x†‖ ≤ κ_ρ and |⟨x†, P_ρ h⟩| ≤ σ_ρ‖Th‖.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionFamily {
    /// ‖P_ρ‖ bound
    pub c: f64,
    pub kappa: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// ψ(t) = 2 inf_ρ [(C+1)² κ_ρ² + σ_ρ √t]
pub fn general_strategy_psi(fam: &ProjectionFamily, t: f64) -> Result<f64> {
    if fam.kappa.is_empty() || fam.kappa.len() != fam.sigma.len() {
        return Err(invalid("projection family needs matching nonempty kappa and sigma"));
    }
    if !(t >= 0.0) {
        return Err(SpecregError::Domain { what: "general strategy psi", value: t });
    }
    let c1 = (fam.c + 1.0).powi(2);
    let st = t.sqrt();
    Ok(2.0
        * fam
            .kappa
            .iter()
            .zip(&fam.sigma)
            .map(|(k, s)| c1 * k * k + s * st)
            .fold(f64::INFINITY, f64::min))
}

/// Spectral family P_λ = I − E_λ with κ_λ = κ(λ), σ_λ = κ(λ)/√(μλ) + ‖x†‖.
///
/// `kappa` must already be normalized so that ‖x†‖_κ ≤ 1.
pub fn build_spectral_family(
    x_dag: &SpectralElement,
    op: &SpectralOperator,
    kappa: &IndexFunction,
    mu: f64,
    grid: &[f64],
) -> Result<ProjectionFamily> {
    op.check(x_dag)?;
    if !(mu > 0.0 && mu < 1.0) {
        return Err(invalid("mu must lie in (0, 1)"));
    }
    let xn = x_dag.norm();
    let mut lams: Vec<f64> = grid.iter().copied().filter(|l| *l > 0.0 && *l <= op.norm_tt()).collect();
    lams.extend_from_slice(op.eigenvalues());
    let mut kv = Vec::with_capacity(lams.len());
    let mut sv = Vec::with_capacity(lams.len());
    for l in lams {
        let k = kappa.eval(l)?;
        kv.push(k);
        sv.push(k / (mu * l).sqrt() + xn);
    }
    Ok(ProjectionFamily { c: 1.0, kappa: kv, sigma: sv })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sobolev(n: usize, decay: f64) -> (SpectralOperator, SpectralElement) {
        let mut eig = vec![1.0];
        let mut mult = vec![3];
        let mut x = vec![1.0, 1.0, 1.0];
        for k in 2..=n {
            eig.push((k as f64).powi(-2));
            mult.push(2);
            let c = (k as f64).powf(-decay);
            x.push(c);
            x.push(c);
        }
        (SpectralOperator::new(eig, mult).unwrap(), SpectralElement::new(x))
    }

    #[test]
    fn residual_at_truth_is_zero() {
        let (op, x) = sobolev(20, 1.0);
        let p = VscProfile { a: 12.0, kappa: IndexFunction::power(0.25), scale: 1.0 };
        assert_eq!(vsc_residual(&x, &x, &op, &p).unwrap(), 0.0);
    }

    #[test]
    fn certificate_survives_probes() {
        let (op, x) = sobolev(200, 1.0);
        let cert = decay_to_vsc(&x, &op, &IndexFunction::power(0.25), 0.2).unwrap();
        assert!(cert.profile.a >= 12.0);
        let rep = vsc_falsify(&x, &op, &cert.profile, &FalsifyConfig { probes: 2000, ..Default::default() }).unwrap();
        assert!(rep.passed(), "{rep:?}");
    }

    #[test]
    fn rejects_convex_square() {
        let (op, x) = sobolev(50, 1.0);
        assert!(matches!(decay_to_vsc(&x, &op, &IndexFunction::power(0.75), 0.2), Err(SpecregError::Structure(_))));
    }

    #[test]
    fn source_condition_profile() {
        let grid = log_space(1e-10, 1.0, 50).unwrap();
        let p = spectral_sc_to_vsc(&IndexFunction::power(0.5), 1.0, &grid).unwrap();
        // ψ(δ²) = 4δ
        assert!((p.psi(1e-4).unwrap() - 4e-2).abs() < 1e-10);
    }

    #[test]
    fn decay_bound_dominates_distribution() {
        let (op, x) = sobolev(100, 1.0);
        let cert = decay_to_vsc(&x, &op, &IndexFunction::power(0.25), 0.2).unwrap();
        let dist = spectral_distribution_all(&x, &op).unwrap();
        for (l, d) in op.eigenvalues().iter().zip(&dist) {
            assert!(*d <= vsc_to_decay_bound(&cert.profile, *l).unwrap());
        }
    }
}
