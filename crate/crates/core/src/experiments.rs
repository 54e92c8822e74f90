//! Experiment driver: noise sweeps, rate fits, verdicts and report files.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, SpecregError};
use crate::filters::{qualification_constant, FilterKind, FilterMethod};
use crate::grid::{log_grid_per_decade, nearest_log};
use crate::index_fn::{psi_kappa, psi_kappa_v, theta_v_inverse, IndexFunction};
use crate::param_choice::{choose_a_priori, choose_discrepancy, choose_lepskii, delta_set, NoiseBound, RuleKind};
use crate::problems::{build_fixture, Fixture, ProblemDescriptor};
use crate::regularize::{
    bias_from_sq, certify_variance_envelope, mse_from_sq, mse_monte_carlo, operator_norm, variance_trace,
    worst_case_error, worst_case_values, EnvelopeFn, VarianceEnvelope,
};
use crate::spectral::{add_white_noise, spectral_distribution_all, xtk_norm, SpectralOperator};
use crate::vsc::{decay_to_vsc, vsc_falsify, vsc_to_decay_bound, FalsificationReport, FalsifyConfig, VscProfile};

/// Rows whose tail bound exceeds this fraction of the total error are left out of fits.
pub const TAIL_FRACTION: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum RateModel {
    /// error ≈ C · level^exponent
    PowerLaw {
        expected: f64,
        #[serde(default = "default_slope_tol")]
        tolerance: f64,
    },
    /// error ≈ C · ln(1/level)^(−beta)
    LogLaw {
        beta: f64,
        #[serde(default = "default_band")]
        max_band: f64,
    },
}

fn default_slope_tol() -> f64 {
    0.05
}

fn default_band() -> f64 {
    2.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaGridSpec {
    #[serde(default = "default_per_decade")]
    pub per_decade: usize,
    /// defaults to λ_N / 10
    #[serde(default)]
    pub lo: Option<f64>,
    /// defaults to max(finite α_max, 10 λ_1)
    #[serde(default)]
    pub hi: Option<f64>,
}

fn default_per_decade() -> usize {
    40
}

impl Default for AlphaGridSpec {
    fn default() -> Self {
        AlphaGridSpec { per_decade: default_per_decade(), lo: None, hi: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSpec {
    pub replicates: usize,
    pub seed: u64,
    /// number of rows checked, spread evenly over the sweep
    pub rows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Experiment {
    DeterministicRate {
        deltas: Vec<f64>,
        rate_model: RateModel,
    },
    WhiteNoiseRate {
        eps: Vec<f64>,
        rate_model: RateModel,
        envelope: EnvelopeFn,
        #[serde(default)]
        monte_carlo: Option<MonteCarloSpec>,
        #[serde(default)]
        seed: u64,
    },
    BiasDecay {
        #[serde(default = "default_nu")]
        nu: f64,
        /// defaults to the fixture's index function
        #[serde(default)]
        kappa: Option<IndexFunction>,
        #[serde(default)]
        alpha_min: Option<f64>,
        #[serde(default)]
        alpha_max: Option<f64>,
        #[serde(default = "default_growth_limit")]
        growth_limit: f64,
    },
    VscCertificate {
        #[serde(default)]
        kappa: Option<IndexFunction>,
        /// defaults to the largest μ certified by the structure check
        #[serde(default)]
        mu: Option<f64>,
        #[serde(default)]
        falsify: FalsifyConfig,
        /// also falsify the profile with A divided by this factor
        #[serde(default)]
        shrink: Option<f64>,
    },
}

fn default_nu() -> f64 {
    1.5
}

fn default_growth_limit() -> f64 {
    10.0
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::DeterministicRate { .. } => "deterministic_rate",
            Experiment::WhiteNoiseRate { .. } => "white_noise_rate",
            Experiment::BiasDecay { .. } => "bias_decay",
            Experiment::VscCertificate { .. } => "vsc_certificate",
        }
    }
}

/// Whether the verdicts are expected to hold (finite-norm fixture) or to break (rougher element).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    #[default]
    Hold,
    Violate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub problem: ProblemDescriptor,
    #[serde(default)]
    pub roughness: f64,
    pub method: FilterKind,
    #[serde(default = "default_rule")]
    pub rule: RuleKind,
    pub experiment: Experiment,
    #[serde(default)]
    pub alpha_grid: AlphaGridSpec,
    #[serde(default)]
    pub expect: Expectation,
    /// directory for the CSV and JSON outputs; relative to the working directory
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_rule() -> RuleKind {
    RuleKind::Oracle
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(invalid("experiment name must be a nonempty file stem"));
        }
        if !(self.roughness.is_finite() && self.roughness >= 0.0) {
            return Err(invalid("roughness must be finite and nonnegative"));
        }
        if self.alpha_grid.per_decade == 0 {
            return Err(invalid("alpha grid density must be positive"));
        }
        match &self.experiment {
            Experiment::DeterministicRate { deltas, rate_model, .. } => validate_levels(deltas, rate_model),
            Experiment::WhiteNoiseRate { eps, rate_model, envelope, monte_carlo, .. } => {
                envelope.validate()?;
                if let Some(mc) = monte_carlo {
                    if mc.replicates < 2 || mc.rows == 0 {
                        return Err(invalid("monte carlo needs >= 2 replicates and >= 1 row"));
                    }
                }
                validate_levels(eps, rate_model)
            }
            Experiment::BiasDecay { nu, growth_limit, .. } => {
                if !(*nu > 1.0 && nu.is_finite()) {
                    return Err(invalid(format!("qualification exponent must exceed 1, got {nu}")));
                }
                if !(*growth_limit > 1.0) {
                    return Err(invalid("growth limit must exceed 1"));
                }
                Ok(())
            }
            Experiment::VscCertificate { shrink, .. } => {
                if let Some(s) = shrink {
                    if !(*s > 1.0 && s.is_finite()) {
                        return Err(invalid("shrink factor must exceed 1"));
                    }
                }
                Ok(())
            }
        }
    }
}

fn validate_levels(levels: &[f64], model: &RateModel) -> Result<()> {
    let positive = levels.iter().filter(|l| **l > 0.0 && l.is_finite()).count();
    if positive < 4 || positive != levels.len() {
        return Err(invalid("noise sweep needs at least four positive finite levels"));
    }
    if levels.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(invalid("noise levels must be sorted in descending order"));
    }
    match model {
        RateModel::PowerLaw { .. } => {
            if levels[0] / levels[levels.len() - 1] < 1e3 * (1.0 - 1e-12) {
                return Err(invalid("power-law sweeps must span at least three decades"));
            }
        }
        RateModel::LogLaw { beta, .. } => {
            if !(*beta > 0.0) {
                return Err(invalid("log-law beta must be positive"));
            }
            if levels[0] >= 1.0 {
                return Err(invalid("log-law levels must lie below 1"));
            }
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub level: f64,
    pub alpha: f64,
    pub bias: f64,
    pub noise_term: f64,
    pub total: f64,
    /// bound on how much the dropped modes can change `total`
    pub tail_bound: f64,
    pub used_in_fit: bool,
    /// grid-best error at this level, when the rule is not the oracle
    #[serde(default)]
    pub oracle_total: Option<f64>,
    #[serde(default)]
    pub fallback: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    /// slope for power laws, band ratio max/min for log laws
    pub estimate: f64,
    /// power law: log-space intercept; log law: geometric mean of the band
    pub constant: f64,
    /// RMS residual in log space
    pub residual: f64,
    pub rows: usize,
}

/// Fits (level, error) pairs to the rate model.
pub fn fit_rate(points: &[(f64, f64)], model: &RateModel) -> Result<RateFit> {
    if points.len() < 4 {
        return Err(SpecregError::FitRefused(format!("{} usable rows, need at least 4", points.len())));
    }
    if points.iter().any(|(l, e)| !(*l > 0.0 && *e > 0.0 && l.is_finite() && e.is_finite())) {
        return Err(SpecregError::FitRefused("levels and errors must be positive and finite".into()));
    }
    match model {
        RateModel::PowerLaw { .. } => {
            let n = points.len() as f64;
            let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
            let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
            let mx = xs.iter().sum::<f64>() / n;
            let my = ys.iter().sum::<f64>() / n;
            let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
            if sxx <= 1e-12 * (1.0 + mx * mx) {
                return Err(SpecregError::FitRefused("degenerate spread of noise levels".into()));
            }
            let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
            let slope = sxy / sxx;
            let icpt = my - slope * mx;
            let rss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - icpt - slope * x).powi(2)).sum();
            Ok(RateFit { estimate: slope, constant: icpt, residual: (rss / n).sqrt(), rows: points.len() })
        }
        RateModel::LogLaw { beta, .. } => {
            if points.iter().any(|(l, _)| *l >= 1.0) {
                return Err(SpecregError::FitRefused("log-law levels must lie below 1".into()));
            }
            let logs: Vec<f64> = points.iter().map(|(l, e)| e.ln() + beta * (-l.ln()).ln()).collect();
            let n = logs.len() as f64;
            let mean = logs.iter().sum::<f64>() / n;
            let hi = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lo = logs.iter().cloned().fold(f64::INFINITY, f64::min);
            let var = logs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            Ok(RateFit { estimate: (hi - lo).exp(), constant: mean.exp(), residual: var.sqrt(), rows: points.len() })
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    #[serde(with = "crate::float_serde")]
    pub observed: f64,
    pub limit: String,
    /// the property measured held
    pub held: bool,
    pub expected: Expectation,
    /// `held` agrees with `expected`
    pub passed: bool,
}

impl Verdict {
    fn new(name: &str, observed: f64, limit: String, held: bool, expected: Expectation) -> Self {
        let passed = held == (expected == Expectation::Hold);
        Verdict { name: name.into(), observed, limit, held, expected, passed }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theory {
    pub description: String,
    /// expected slope (power law) or β (log law)
    pub expected: f64,
    /// slope of the rate function over the same levels, when computable
    pub predicted_slope: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedSetup {
    pub fixture: String,
    pub dimension: usize,
    pub groups: usize,
    pub lambda_max: f64,
    pub lambda_min: f64,
    pub truncation: Option<crate::spectral::TruncationNote>,
    pub kappa: IndexFunction,
    pub knee: Option<f64>,
    pub method: FilterMethod,
    pub alpha_grid_lo: f64,
    pub alpha_grid_hi: f64,
    pub alpha_grid_points: usize,
    pub alpha_grid_per_decade: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloCheck {
    pub level: f64,
    pub alpha: f64,
    pub exact_mse: f64,
    pub mean_sq_error: f64,
    pub std_error: f64,
    pub replicates: usize,
    /// |mean − exact| / SE
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasDecaySummary {
    pub nu: f64,
    pub qualification_b: f64,
    pub xtk_norm: f64,
    /// sup over the sweep of bias / κ(α)
    #[serde(with = "crate::float_serde")]
    pub measured_a: f64,
    /// A bound from B, ‖x†‖ and ‖x†‖_κ
    #[serde(with = "crate::float_serde")]
    pub a_bound: f64,
    /// largest increase of the ratio as α decreases
    #[serde(with = "crate::float_serde")]
    pub growth: f64,
    /// (α, bias / κ(α)) in ascending α
    pub ratios: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VscSummary {
    pub profile: VscProfile,
    pub mu: f64,
    pub xtk_norm: f64,
    pub sup_ratio: f64,
    pub falsification: FalsificationReport,
    pub shrunk: Option<FalsificationReport>,
    /// max over eigenvalues of the decay bound over κ(λ)‖x†‖_κ
    #[serde(with = "crate::float_serde")]
    pub round_trip_inflation: f64,
    /// min over eigenvalues of the decay bound over ‖E_λ x†‖
    #[serde(with = "crate::float_serde")]
    pub round_trip_margin: f64,
    /// smallest A for which no x = (I − E_λ)x† probe is a witness
    #[serde(with = "crate::float_serde")]
    pub truncation_threshold_a: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub name: String,
    pub experiment: String,
    pub config: ExperimentConfig,
    pub resolved: ResolvedSetup,
    pub rows: Vec<RateRow>,
    pub fit: Option<RateFit>,
    pub fit_error: Option<String>,
    pub theoretical: Option<Theory>,
    pub variance_envelope: Option<VarianceEnvelope>,
    pub monte_carlo: Vec<MonteCarloCheck>,
    /// largest gap ratio of the Δ-set, reported with rule-based sweeps
    pub gamma_hat: Option<f64>,
    pub bias_decay: Option<BiasDecaySummary>,
    pub vsc: Option<VscSummary>,
    pub verdicts: Vec<Verdict>,
}

impl RateReport {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        w.write_record(["level", "alpha", "bias", "noise_term", "total", "tail_bound"])?;
        for r in &self.rows {
            w.write_record(
                [r.level, r.alpha, r.bias, r.noise_term, r.total, r.tail_bound].iter().map(|v| format!("{v:e}")),
            )?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let f = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(f, self)?;
        Ok(())
    }

    /// Writes `<name>.rows.csv` and `<name>.report.json` into `dir`.
    pub fn write_outputs(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir)?;
        let csv_path = dir.join(format!("{}.rows.csv", self.name));
        let json_path = dir.join(format!("{}.report.json", self.name));
        self.write_csv(&csv_path)?;
        self.write_json(&json_path)?;
        Ok((csv_path, json_path))
    }
}

/// Log grid over [lo, hi] clipped to the method's admissible range.
pub fn resolve_alpha_grid(spec: &AlphaGridSpec, m: &FilterMethod, op: &SpectralOperator) -> Result<Vec<f64>> {
    let lo = spec.lo.unwrap_or(op.lambda_min() / 10.0);
    let amax = if m.alpha_max.is_finite() { m.alpha_max } else { 0.0 };
    let hi = spec.hi.unwrap_or((10.0 * op.norm_tt()).max(amax));
    if !(lo > 0.0 && hi > lo) {
        return Err(invalid(format!("alpha grid needs 0 < lo < hi, got [{lo}, {hi}]")));
    }
    let grid = m.admissible_grid(&log_grid_per_decade(lo, hi, spec.per_decade)?);
    if grid.len() < 2 {
        return Err(invalid("alpha grid has fewer than two admissible points"));
    }
    Ok(grid)
}

struct Setup {
    fixture: Fixture,
    method: FilterMethod,
    grid: Vec<f64>,
    sq: Vec<f64>,
}

fn setup(cfg: &ExperimentConfig) -> Result<Setup> {
    let fixture = build_fixture(&cfg.problem, cfg.roughness)?;
    let method = FilterMethod::new(cfg.method.clone(), fixture.operator.norm_tt())?;
    method.check_lambda(fixture.operator.norm_tt())?;
    let grid = resolve_alpha_grid(&cfg.alpha_grid, &method, &fixture.operator)?;
    let sq = fixture.operator.group_sq(&fixture.solution)?;
    Ok(Setup { fixture, method, grid, sq })
}

fn resolved(cfg: &ExperimentConfig, s: &Setup) -> ResolvedSetup {
    let op = &s.fixture.operator;
    ResolvedSetup {
        fixture: s.fixture.name.clone(),
        dimension: op.dim(),
        groups: op.groups(),
        lambda_max: op.norm_tt(),
        lambda_min: op.lambda_min(),
        truncation: op.truncation().cloned(),
        kappa: s.fixture.kappa.clone(),
        knee: s.fixture.knee,
        method: s.method.clone(),
        alpha_grid_lo: s.grid[0],
        alpha_grid_hi: s.grid[s.grid.len() - 1],
        alpha_grid_points: s.grid.len(),
        alpha_grid_per_decade: cfg.alpha_grid.per_decade,
    }
}

fn empty_report(cfg: &ExperimentConfig, s: &Setup) -> RateReport {
    RateReport {
        name: cfg.name.clone(),
        experiment: cfg.experiment.name().into(),
        config: cfg.clone(),
        resolved: resolved(cfg, s),
        rows: Vec::new(),
        fit: None,
        fit_error: None,
        theoretical: None,
        variance_envelope: None,
        monte_carlo: Vec::new(),
        gamma_hat: None,
        bias_decay: None,
        vsc: None,
        verdicts: Vec::new(),
    }
}

/// Amount by which the dropped modes can change an error of size `total`.
fn tail_bound(op: &SpectralOperator, m: &FilterMethod, alpha: f64, level: f64, total: f64, white: bool) -> f64 {
    let Some(t) = op.truncation() else { return 0.0 };
    let noise = if white {
        level * m.c_q * t.spectrum_tail.sqrt() / alpha
    } else {
        level * m.c_q * t.lambda_next.sqrt() / alpha
    };
    let extra = t.solution_tail + noise;
    total.hypot(extra) - total
}

fn mark_usable(rows: &mut [RateRow]) {
    for r in rows.iter_mut() {
        r.used_in_fit = r.total > 0.0 && r.tail_bound <= TAIL_FRACTION * r.total;
    }
}

/// Grid minimizer of the worst-case error; sandwich bounds prune the secular solves.
fn oracle_worst_case(
    m: &FilterMethod,
    op: &SpectralOperator,
    sq: &[f64],
    grid: &[f64],
    stats: &[(f64, f64)],
    delta: f64,
) -> Result<(usize, f64)> {
    let upper = stats.iter().map(|(b, rn)| b + rn * delta).fold(f64::INFINITY, f64::min);
    let mut order: Vec<(f64, usize)> = stats.iter().enumerate().map(|(i, (b, rn))| (b.hypot(rn * delta), i)).collect();
    order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let mut best = (usize::MAX, f64::INFINITY);
    for (lower, i) in order {
        if lower > best.1.min(upper) * (1.0 + 1e-12) {
            break;
        }
        let v = worst_case_values(m, grid[i], op, sq, &[delta])?[0];
        if v < best.1 || (v == best.1 && i < best.0) {
            best = (i, v);
        }
    }
    Ok(best)
}

fn level_slope(levels: &[f64], f: impl Fn(f64) -> Result<f64>) -> Option<f64> {
    let pts: Vec<(f64, f64)> = levels.iter().filter_map(|l| f(*l).ok().map(|v| (*l, v))).collect();
    if pts.len() != levels.len() {
        return None;
    }
    fit_rate(&pts, &RateModel::PowerLaw { expected: 0.0, tolerance: 0.0 }).ok().map(|f| f.estimate)
}

fn rate_verdict(report: &mut RateReport, model: &RateModel, expect: Expectation) {
    let pts: Vec<(f64, f64)> = report.rows.iter().filter(|r| r.used_in_fit).map(|r| (r.level, r.total)).collect();
    match fit_rate(&pts, model) {
        Ok(fit) => {
            let v = match model {
                RateModel::PowerLaw { expected, tolerance } => Verdict::new(
                    "rate_slope",
                    fit.estimate,
                    format!("[{:.4}, {:.4}]", expected - tolerance, expected + tolerance),
                    (fit.estimate - expected).abs() <= *tolerance,
                    expect,
                ),
                RateModel::LogLaw { max_band, .. } => {
                    Verdict::new("rate_band", fit.estimate, format!("<= {max_band}"), fit.estimate <= *max_band, expect)
                }
            };
            report.fit = Some(fit);
            report.verdicts.push(v);
        }
        Err(e) => {
            report.fit_error = Some(e.to_string());
            report.verdicts.push(Verdict::new("rate_fit", f64::NAN, "fit accepted".into(), false, Expectation::Hold));
        }
    }
}

fn monotone_verdict(report: &mut RateReport) {
    // rows are in descending level order
    let ok = report.rows.windows(2).all(|w| w[1].total <= w[0].total * (1.0 + 1e-12));
    report.verdicts.push(Verdict::new(
        "oracle_monotone_in_level",
        if ok { 1.0 } else { 0.0 },
        "nondecreasing in level".into(),
        ok,
        Expectation::Hold,
    ));
}

/// Worst-case deterministic sweep: grid inf over α (oracle) or the rule's α per δ.
pub fn run_deterministic_rate(cfg: &ExperimentConfig) -> Result<RateReport> {
    let Experiment::DeterministicRate { deltas, rate_model } = &cfg.experiment else {
        return Err(invalid("not a deterministic rate config"));
    };
    cfg.validate()?;
    let s = setup(cfg)?;
    let (m, op, x) = (&s.method, &s.fixture.operator, &s.fixture.solution);
    let stats: Vec<(f64, f64)> = s
        .grid
        .par_iter()
        .map(|a| Ok((bias_from_sq(m, *a, op, &s.sq), operator_norm(m, *a, op)?)))
        .collect::<Result<_>>()?;
    let rows: Vec<RateRow> = deltas
        .par_iter()
        .map(|&delta| {
            let (ib, best) = oracle_worst_case(m, op, &s.sq, &s.grid, &stats, delta)?;
            let (i, total, fallback) = match &cfg.rule {
                RuleKind::Oracle => (ib, best, false),
                rule => {
                    let (alpha, fallback) = deterministic_rule_alpha(rule, m, op, x, &s, ib, delta)?;
                    let i = nearest_log(&s.grid, alpha).unwrap();
                    let v = worst_case_error(m, s.grid[i], op, x, delta)?.value;
                    (i, v, fallback)
                }
            };
            let alpha = s.grid[i];
            Ok(RateRow {
                level: delta,
                alpha,
                bias: stats[i].0,
                noise_term: stats[i].1 * delta,
                total,
                tail_bound: tail_bound(op, m, alpha, delta, total, false),
                used_in_fit: false,
                oracle_total: if matches!(cfg.rule, RuleKind::Oracle) { None } else { Some(best) },
                fallback,
            })
        })
        .collect::<Result<_>>()?;
    let mut report = empty_report(cfg, &s);
    report.rows = rows;
    mark_usable(&mut report.rows);
    let kappa = s.fixture.kappa.clone();
    report.theoretical = Some(theory(rate_model, deltas, |d| Ok(psi_kappa(&kappa, d * d)?.sqrt()), "worst-case error"));
    rate_verdict(&mut report, rate_model, cfg.expect);
    if matches!(cfg.rule, RuleKind::Oracle) {
        monotone_verdict(&mut report);
    } else {
        report.gamma_hat = Some(delta_set(m, op, x, &s.grid)?.gamma_hat);
    }
    Ok(report)
}

fn deterministic_rule_alpha(
    rule: &RuleKind,
    m: &FilterMethod,
    op: &SpectralOperator,
    x: &crate::spectral::SpectralElement,
    s: &Setup,
    oracle_index: usize,
    delta: f64,
) -> Result<(f64, bool)> {
    let data = || -> Result<Vec<f64>> {
        // adversarial data: the maximizing noise at the grid-best α
        let w = worst_case_error(m, s.grid[oracle_index], op, x, delta)?;
        Ok(op.forward(x)?.iter().zip(&w.witness).map(|(a, b)| a + b).collect())
    };
    Ok(match rule {
        RuleKind::Oracle => (s.grid[oracle_index], false),
        RuleKind::Fixed { alpha } => (m.snap(*alpha), false),
        RuleKind::APriori { kappa } => (choose_a_priori(kappa, delta, &s.grid, m.alpha_max)?, false),
        RuleKind::Discrepancy { tau } => {
            let o = choose_discrepancy(m, op, &data()?, delta, *tau, &s.grid)?;
            (o.alpha, o.fallback)
        }
        RuleKind::Lepskii { c } => {
            let o = choose_lepskii(m, op, &data()?, &NoiseBound::Deterministic { delta }, *c, &s.grid)?;
            (o.alpha, o.fallback)
        }
    })
}

fn theory(model: &RateModel, levels: &[f64], f: impl Fn(f64) -> Result<f64>, what: &str) -> Theory {
    match model {
        RateModel::PowerLaw { expected, .. } => Theory {
            description: format!("{what} ~ level^{expected}"),
            expected: *expected,
            predicted_slope: level_slope(levels, f),
        },
        RateModel::LogLaw { beta, .. } => Theory {
            description: format!("{what} ~ ln(1/level)^(-{beta})"),
            expected: *beta,
            predicted_slope: None,
        },
    }
}

/// White-noise sweep on the exact bias-variance decomposition.
pub fn run_white_noise_rate(cfg: &ExperimentConfig) -> Result<RateReport> {
    let Experiment::WhiteNoiseRate { eps, rate_model, envelope, monte_carlo, seed } = &cfg.experiment else {
        return Err(invalid("not a white-noise rate config"));
    };
    cfg.validate()?;
    let s = setup(cfg)?;
    let (m, op, x) = (&s.method, &s.fixture.operator, &s.fixture.solution);
    let env = certify_variance_envelope(m, op, envelope, &s.grid)?;
    let stats: Vec<(f64, f64)> = s
        .grid
        .par_iter()
        .map(|a| Ok((bias_from_sq(m, *a, op, &s.sq), variance_trace(m, *a, op)?)))
        .collect::<Result<_>>()?;
    let kappa = s.fixture.kappa.clone();
    let rows: Vec<RateRow> = eps
        .par_iter()
        .enumerate()
        .map(|(k, &e)| {
            let totals: Vec<f64> = stats.iter().map(|(b, t)| (b * b + e * e * t).sqrt()).collect();
            let ib = argmin(&totals);
            let (i, fallback) = match &cfg.rule {
                RuleKind::Oracle => (ib, false),
                RuleKind::Fixed { alpha } => (nearest_log(&s.grid, m.snap(*alpha)).unwrap(), false),
                RuleKind::APriori { kappa } => {
                    let a = theta_v_inverse(kappa, envelope, e)?.min(m.alpha_max);
                    (nearest_log(&s.grid, a).unwrap(), false)
                }
                RuleKind::Discrepancy { tau } => {
                    let g = add_white_noise(&op.forward(x)?, e, seed.wrapping_add(k as u64));
                    let o = choose_discrepancy(m, op, &g, e * (op.dim() as f64).sqrt(), *tau, &s.grid)?;
                    (nearest_log(&s.grid, o.alpha).unwrap(), o.fallback)
                }
                RuleKind::Lepskii { c } => {
                    let g = add_white_noise(&op.forward(x)?, e, seed.wrapping_add(k as u64));
                    let o = choose_lepskii(m, op, &g, &NoiseBound::WhiteNoise { eps: e }, *c, &s.grid)?;
                    (nearest_log(&s.grid, o.alpha).unwrap(), o.fallback)
                }
            };
            let alpha = s.grid[i];
            let eb = mse_from_sq(m, alpha, op, &s.sq, e);
            Ok(RateRow {
                level: e,
                alpha,
                bias: eb.bias,
                noise_term: eb.noise_term,
                total: eb.total,
                tail_bound: tail_bound(op, m, alpha, e, eb.total, true),
                used_in_fit: false,
                oracle_total: if matches!(cfg.rule, RuleKind::Oracle) { None } else { Some(totals[ib]) },
                fallback,
            })
        })
        .collect::<Result<_>>()?;
    let mut report = empty_report(cfg, &s);
    report.rows = rows;
    mark_usable(&mut report.rows);
    report.theoretical =
        Some(theory(rate_model, eps, |e| Ok(psi_kappa_v(&kappa, envelope, e * e)?.sqrt()), "root mean square error"));
    report.variance_envelope = Some(env);
    rate_verdict(&mut report, rate_model, cfg.expect);
    if matches!(cfg.rule, RuleKind::Oracle) {
        monotone_verdict(&mut report);
    }
    if let Some(mc) = monte_carlo {
        let n = report.rows.len();
        let picks: Vec<usize> = if mc.rows >= n {
            (0..n).collect()
        } else if mc.rows == 1 {
            vec![0]
        } else {
            let mut v: Vec<usize> = (0..mc.rows).map(|j| j * (n - 1) / (mc.rows - 1)).collect();
            v.dedup();
            v
        };
        for j in picks {
            let r = &report.rows[j];
            let est = mse_monte_carlo(m, r.alpha, op, x, r.level, mc.replicates, mc.seed.wrapping_add(j as u64))?;
            let exact = r.total * r.total;
            report.monte_carlo.push(MonteCarloCheck {
                level: r.level,
                alpha: r.alpha,
                exact_mse: exact,
                mean_sq_error: est.mean_sq_error,
                std_error: est.std_error,
                replicates: est.replicates,
                z: (est.mean_sq_error - exact).abs() / est.std_error,
            });
        }
        let worst = report.monte_carlo.iter().map(|c| c.z).fold(0.0, f64::max);
        report.verdicts.push(Verdict::new("monte_carlo_within_3se", worst, "<= 3".into(), worst <= 3.0, Expectation::Hold));
    }
    Ok(report)
}

/// Bias over κ(α) across an α sweep, with the constant bound from the qualification.
pub fn run_bias_decay(cfg: &ExperimentConfig) -> Result<RateReport> {
    let Experiment::BiasDecay { nu, kappa, alpha_min, alpha_max, growth_limit } = &cfg.experiment else {
        return Err(invalid("not a bias decay config"));
    };
    cfg.validate()?;
    let s = setup(cfg)?;
    let (m, op, x) = (&s.method, &s.fixture.operator, &s.fixture.solution);
    let kappa = kappa.clone().unwrap_or_else(|| s.fixture.kappa.clone());
    let lo = alpha_min.unwrap_or(100.0 * op.lambda_min());
    let hi = alpha_max.unwrap_or(op.norm_tt()).min(m.alpha_max).min(kappa.eval_cap());
    let alphas: Vec<f64> = s.grid.iter().copied().filter(|a| *a >= lo && *a <= hi).collect();
    if alphas.len() < 4 {
        return Err(invalid("bias sweep has fewer than four alphas"));
    }
    let lam: Vec<f64> = op.eigenvalues().iter().copied().filter(|l| *l <= kappa.eval_cap()).collect();
    let qual = qualification_constant(m, &kappa, *nu, &alphas, &lam)?;
    if qual.divergent {
        return Err(SpecregError::FitRefused(format!(
            "qualification does not cover κ^{nu}: r_α(λ)κ(λ)^ν/κ(α)^ν grows as α decreases (B̂ = {:e})",
            qual.b_hat
        )));
    }
    let rows: Vec<(RateRow, f64)> = alphas
        .par_iter()
        .map(|&a| {
            let b = bias_from_sq(m, a, op, &s.sq);
            let k = kappa.eval(a)?;
            let row = RateRow {
                level: a,
                alpha: a,
                bias: b,
                noise_term: 0.0,
                total: b,
                tail_bound: op.truncation().map_or(0.0, |t| b.hypot(t.solution_tail) - b),
                used_in_fit: false,
                oracle_total: None,
                fallback: false,
            };
            Ok((row, b / k))
        })
        .collect::<Result<_>>()?;
    let ratios: Vec<(f64, f64)> = rows.iter().map(|(r, q)| (r.alpha, *q)).collect();
    let measured_a = ratios.iter().map(|p| p.1).fold(0.0, f64::max);
    let mut growth: f64 = 1.0;
    let mut run_min = f64::INFINITY;
    for (_, q) in ratios.iter().rev() {
        run_min = run_min.min(*q);
        growth = growth.max(q / run_min);
    }
    let norm_k = xtk_norm(x, op, &kappa)?;
    let b = qual.b_hat;
    let a_bound = (b * x.norm().powi(2) / kappa.eval(op.norm_tt().min(kappa.eval_cap()))?
        + norm_k * norm_k * (1.0 + b.powf(1.0 / nu) * nu * m.c_diag.powf((nu - 1.0) / nu) / (nu - 1.0)))
        .sqrt();
    let mut report = empty_report(cfg, &s);
    report.rows = rows.into_iter().map(|(r, _)| r).rev().collect();
    mark_usable(&mut report.rows);
    report.verdicts.push(Verdict::new(
        "bias_ratio_bounded",
        growth,
        format!("< {growth_limit}"),
        growth < *growth_limit,
        cfg.expect,
    ));
    report.verdicts.push(Verdict::new(
        "bias_constant_within_bound",
        measured_a,
        format!("<= {a_bound:e}"),
        measured_a <= a_bound * (1.0 + 1e-12),
        Expectation::Hold,
    ));
    report.bias_decay = Some(BiasDecaySummary {
        nu: *nu,
        qualification_b: b,
        xtk_norm: norm_k,
        measured_a,
        a_bound,
        growth,
        ratios,
    });
    Ok(report)
}

/// Decay norm, VSC profile, falsification and the decay-bound round trip.
pub fn run_vsc_certificate(cfg: &ExperimentConfig) -> Result<RateReport> {
    let Experiment::VscCertificate { kappa, mu, falsify, shrink } = &cfg.experiment else {
        return Err(invalid("not a VSC certificate config"));
    };
    cfg.validate()?;
    let s = setup(cfg)?;
    let (op, x) = (&s.fixture.operator, &s.fixture.solution);
    let kappa = kappa.clone().unwrap_or_else(|| s.fixture.kappa.clone());
    let mu = match mu {
        Some(v) => *v,
        None => {
            let grid = crate::grid::log_space((op.lambda_min() * 1e-2).max(1e-300), op.norm_tt().min(kappa.eval_cap()), 200)?;
            let rep = crate::index_fn::check_structure(&kappa, &grid)?;
            rep.mu.ok_or_else(|| SpecregError::Structure("no μ in (0, 1) certified for the index function".into()))?
        }
    };
    let cert = decay_to_vsc(x, op, &kappa, mu)?;
    let fals = vsc_falsify(x, op, &cert.profile, falsify)?;
    let shrunk = match shrink {
        Some(f) => {
            let p = VscProfile { a: cert.profile.a / f, ..cert.profile.clone() };
            Some(vsc_falsify(x, op, &p, falsify)?)
        }
        None => None,
    };
    let dist = spectral_distribution_all(x, op)?;
    let mut inflation: f64 = 0.0;
    let mut margin = f64::INFINITY;
    for (l, e) in op.eigenvalues().iter().zip(&dist) {
        let bound = vsc_to_decay_bound(&cert.profile, *l)?;
        let k = kappa.eval(l.min(kappa.eval_cap()))?;
        if k > 0.0 && cert.xtk_norm > 0.0 {
            inflation = inflation.max(bound / (k * cert.xtk_norm));
        }
        if *e > 0.0 {
            margin = margin.min(bound / e);
        }
    }
    // residual of h = −E_λ x† is 1.5‖E_λ x†‖² − A ψ₁(‖T E_λ x†‖²)
    let unit = VscProfile { a: 1.0, ..cert.profile.clone() }.evaluator()?;
    let mut threshold: f64 = 0.0;
    let (mut e2, mut t2) = (0.0, 0.0);
    for (l, q) in op.eigenvalues().iter().zip(&s.sq).rev() {
        e2 += q;
        t2 += l * q;
        let p = unit.psi(t2)?;
        if p > 0.0 {
            threshold = threshold.max(1.5 * e2 / p);
        }
    }
    let mut report = empty_report(cfg, &s);
    report.verdicts.push(Verdict::new(
        "no_falsification_witness",
        fals.witnesses as f64,
        "== 0".into(),
        fals.passed(),
        cfg.expect,
    ));
    report.verdicts.push(Verdict::new(
        "decay_bound_dominates",
        margin,
        ">= 1".into(),
        margin >= 1.0 - 1e-9,
        cfg.expect,
    ));
    if let (Some(f), Some(sr)) = (shrink, &shrunk) {
        report.verdicts.push(Verdict::new(
            "shrunk_profile_falsified",
            sr.witnesses as f64,
            format!("> 0 with A/{f}"),
            sr.witnesses > 0,
            Expectation::Hold,
        ));
    }
    report.vsc = Some(VscSummary {
        profile: cert.profile,
        mu,
        xtk_norm: cert.xtk_norm,
        sup_ratio: cert.sup_ratio,
        falsification: fals,
        shrunk,
        round_trip_inflation: inflation,
        round_trip_margin: margin,
        truncation_threshold_a: threshold,
    });
    Ok(report)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RateReport> {
    match cfg.experiment {
        Experiment::DeterministicRate { .. } => run_deterministic_rate(cfg),
        Experiment::WhiteNoiseRate { .. } => run_white_noise_rate(cfg),
        Experiment::BiasDecay { .. } => run_bias_decay(cfg),
        Experiment::VscCertificate { .. } => run_vsc_certificate(cfg),
    }
}

fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x < v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn levels() -> Vec<f64> {
        (2..=7).map(|k| 10f64.powi(-k)).collect()
    }

    #[test]
    fn fit_exact_power() {
        let pts: Vec<(f64, f64)> = levels().iter().map(|l| (*l, l.sqrt())).collect();
        let f = fit_rate(&pts, &RateModel::PowerLaw { expected: 0.5, tolerance: 0.05 }).unwrap();
        assert!((f.estimate - 0.5).abs() < 1e-12);
        assert!(f.residual < 1e-12);
    }

    #[test]
    fn fit_exact_log_band() {
        let pts: Vec<(f64, f64)> = levels().iter().map(|l| (*l, 2.0 / (1.0 / l).ln())).collect();
        let f = fit_rate(&pts, &RateModel::LogLaw { beta: 1.0, max_band: 2.0 }).unwrap();
        assert!((f.estimate - 1.0).abs() < 1e-12);
        assert!((f.constant - 2.0).abs() < 1e-12);
    }

    #[test]
    fn fit_noisy_slope() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let lv: Vec<f64> = (0..=50).map(|k| 10f64.powf(-2.0 - 5.0 * k as f64 / 50.0)).collect();
        let pts: Vec<(f64, f64)> = lv.iter().map(|l| (*l, { let z: f64 = noise.sample(&mut rng); l.sqrt() * z.exp() })).collect();
        let f = fit_rate(&pts, &RateModel::PowerLaw { expected: 0.5, tolerance: 0.05 }).unwrap();
        assert!((f.estimate - 0.5).abs() < 0.03, "{}", f.estimate);
    }

    #[test]
    fn fit_refuses_few_rows() {
        let pts = vec![(1e-2, 0.1), (1e-3, 0.03), (1e-4, 0.01)];
        assert!(matches!(fit_rate(&pts, &RateModel::PowerLaw { expected: 0.5, tolerance: 0.05 }), Err(SpecregError::FitRefused(_))));
        let flat = vec![(1e-3, 0.1); 5];
        assert!(fit_rate(&flat, &RateModel::PowerLaw { expected: 0.5, tolerance: 0.05 }).is_err());
    }

    #[test]
    fn zero_level_refused() {
        let m = RateModel::PowerLaw { expected: 0.4, tolerance: 0.05 };
        assert!(validate_levels(&[1e-2, 1e-3, 1e-4, 0.0], &m).is_err());
        assert!(validate_levels(&[1e-2, 1e-3, 1e-4], &m).is_err());
        assert!(validate_levels(&[1e-2, 1e-3, 1e-4, 1e-5], &m).is_ok());
        assert!(validate_levels(&[1e-5, 1e-4, 1e-3, 1e-2], &m).is_err());
        assert!(validate_levels(&[1e-2, 5e-3, 2e-3, 1.5e-3], &m).is_err());
    }

    fn small_det(rule: RuleKind) -> ExperimentConfig {
        ExperimentConfig {
            name: "t".into(),
            problem: ProblemDescriptor::SingleLayerCircle { n: 2000, u: 1.0 },
            roughness: 0.0,
            method: FilterKind::Tikhonov,
            rule,
            experiment: Experiment::DeterministicRate {
                deltas: vec![1e-2, 1e-3, 1e-4, 1e-5],
                rate_model: RateModel::PowerLaw { expected: 0.5, tolerance: 0.1 },
            },
            alpha_grid: AlphaGridSpec::default(),
            expect: Expectation::Hold,
            output_dir: None,
        }
    }

    #[test]
    fn oracle_matches_full_scan() {
        let cfg = small_det(RuleKind::Oracle);
        let s = setup(&cfg).unwrap();
        let (m, op) = (&s.method, &s.fixture.operator);
        let stats: Vec<(f64, f64)> =
            s.grid.iter().map(|a| (bias_from_sq(m, *a, op, &s.sq), operator_norm(m, *a, op).unwrap())).collect();
        for delta in [1e-2, 1e-4] {
            let (_, v) = oracle_worst_case(m, op, &s.sq, &s.grid, &stats, delta).unwrap();
            let full = s
                .grid
                .iter()
                .map(|a| worst_case_values(m, *a, op, &s.sq, &[delta]).unwrap()[0])
                .fold(f64::INFINITY, f64::min);
            assert_eq!(v, full);
        }
    }

    #[test]
    fn deterministic_report_shape() {
        let r = run_experiment(&small_det(RuleKind::Oracle)).unwrap();
        assert_eq!(r.rows.len(), 4);
        assert!(r.rows.windows(2).all(|w| w[1].total <= w[0].total));
        assert!(r.rows.iter().all(|row| row.bias <= row.total * (1.0 + 1e-12)));
        let p = r.theoretical.as_ref().unwrap().predicted_slope.unwrap();
        assert!((p - 0.5).abs() < 1e-6, "{p}");
        let again = run_experiment(&small_det(RuleKind::Oracle)).unwrap();
        assert_eq!(serde_json::to_string(&r).unwrap(), serde_json::to_string(&again).unwrap());
    }

    #[test]
    fn rule_rows_carry_oracle() {
        let r = run_experiment(&small_det(RuleKind::Discrepancy { tau: 1.5 })).unwrap();
        for row in &r.rows {
            assert!(row.total >= row.oracle_total.unwrap() * (1.0 - 1e-12));
        }
        assert!(r.gamma_hat.is_some());
    }

    #[test]
    fn outputs_written() {
        let r = run_experiment(&small_det(RuleKind::Oracle)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (c, j) = r.write_outputs(dir.path()).unwrap();
        let text = std::fs::read_to_string(c).unwrap();
        assert!(text.starts_with("level,alpha,bias,noise_term,total,tail_bound\n"));
        assert_eq!(text.lines().count(), 5);
        let back: RateReport = serde_json::from_str(&std::fs::read_to_string(j).unwrap()).unwrap();
        assert_eq!(back.config, r.config);
    }

    #[test]
    fn config_json_defaults() {
        let s = r#"{"name":"x","problem":{"kind":"single_layer_circle","n":100,"u":1.0},
            "method":{"method":"tikhonov"},
            "experiment":{"kind":"bias_decay"}}"#;
        let c = ExperimentConfig::from_json(s).unwrap();
        assert_eq!(c.rule, RuleKind::Oracle);
        assert_eq!(c.alpha_grid.per_decade, 40);
        assert!(matches!(c.experiment, Experiment::BiasDecay { nu, .. } if nu == 1.5));
    }
}
