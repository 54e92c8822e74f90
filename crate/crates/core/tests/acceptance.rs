//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria listed in KNOWN_RED fail for reasons recorded next to them; they
//! are reported as FAIL but do not fail the run. Any other failure does.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use specreg::experiments::{run_experiment, ExperimentConfig, RateReport};
use specreg::filters::{check_assumption_sr, FilterKind, FilterMethod};
use specreg::grid::log_space;
use specreg::index_fn::IndexFunction;
use specreg::param_choice::delta_set;
use specreg::problems::{build_fixture, fixture_registry, sideways_heat_symbol};
use specreg::regularize::worst_case_error;
use specreg::vsc::ProbeFamily;
use specreg::{SpectralElement, SpectralOperator};

const KNOWN_RED: &[(u32, &str)] = &[
    (
        8,
        "the certified A is at least 2(1 + 1/mu), while the (I - E_lambda)x family stops producing \
         witnesses near A = 1.5..1.7 on these fixtures; A/2 stays above that threshold, so no probe can succeed",
    ),
    (
        9,
        "sinh^2 x ~ e^(2x)/4 gives Lambda_SH(mu) ~ 4 exp(-sqrt2 mu^(1/4)); the stated constant 1/4 is off by 16",
    ),
];

struct Outcome {
    passed: bool,
    detail: String,
}

fn config(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_json(text).expect("shipped config parses")
}

fn run(text: &str) -> RateReport {
    run_experiment(&config(text)).expect("experiment runs")
}

fn verdict<'a>(r: &'a RateReport, name: &str) -> &'a specreg::experiments::Verdict {
    r.verdicts.iter().find(|v| v.name == name).unwrap_or_else(|| panic!("verdict {name} missing"))
}

fn criterion_1() -> Outcome {
    let kinds = [
        (FilterKind::Tikhonov, Some(0.5)),
        (FilterKind::Showalter, Some((-1.0f64).exp())),
        (FilterKind::Landweber { mu_step: 0.9 }, None),
        (FilterKind::IteratedTikhonov { k: 2 }, Some(0.25)),
        (FilterKind::IteratedTikhonov { k: 3 }, Some(0.125)),
        (FilterKind::Lardy { beta: 1.0 }, None),
        (FilterKind::ModifiedCutoff, Some(0.5)),
    ];
    let lambda1 = 1.0;
    let mut lambdas = vec![0.0];
    lambdas.extend(log_space(1e-10, lambda1, 99).unwrap());
    let mut ok = true;
    let mut worst_const: f64 = 0.0;
    let mut failed = Vec::new();
    for (kind, constant) in kinds {
        let m = FilterMethod::new(kind.clone(), lambda1).unwrap();
        let hi = if m.alpha_max.is_finite() { m.alpha_max } else { 10.0 * lambda1 };
        let alphas = log_space(1e-8, hi, 100).unwrap();
        let rep = check_assumption_sr(&m, &alphas, &lambdas).unwrap();
        let mut good = rep.passed();
        if let Some(c) = constant {
            let err = [rep.c_low, rep.c_diag, rep.diag_min, rep.diag_max]
                .iter()
                .map(|v| (v - c).abs())
                .fold(0.0, f64::max);
            worst_const = worst_const.max(err);
            good &= err <= 1e-12;
        }
        if !good {
            failed.push(kind.name());
        }
        ok &= good;
    }
    Outcome {
        passed: ok,
        detail: format!("7 filters certified on 100x100 grid; max constant deviation {worst_const:.1e}; failures {failed:?}"),
    }
}

fn criterion_2() -> Outcome {
    let ts = log_space(1e-12, 1.0, 241).unwrap();
    let mut worst: f64 = 0.0;
    for nu in [0.1, 0.25, 0.5, 1.0] {
        let k = IndexFunction::power(nu);
        for &t in &ts {
            let exact = t.powf(2.0 * nu / (2.0 * nu + 1.0));
            let got = k.psi(t).unwrap();
            worst = worst.max((got - exact).abs() / exact);
        }
    }
    Outcome { passed: worst <= 1e-8, detail: format!("max relative error {worst:.2e} over 4 x 241 points (limit 1e-8)") }
}

/// max ‖b + Dξ‖ over ‖ξ‖ = δ by multi-start minorize-maximize ascent.
fn directional_oracle(b: &[f64], d: &[f64], delta: f64, rng: &mut ChaCha8Rng) -> f64 {
    let n = b.len();
    let value = |xi: &[f64]| b.iter().zip(d).zip(xi).map(|((bi, di), x)| (bi + di * x).powi(2)).sum::<f64>().sqrt();
    let mut starts: Vec<Vec<f64>> = Vec::new();
    for i in 0..n {
        for s in [1.0, -1.0] {
            let mut e = vec![0.0; n];
            e[i] = s * delta;
            starts.push(e);
        }
    }
    for _ in 0..24 {
        let g: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let nn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        starts.push(g.iter().map(|v| delta * v / nn).collect());
    }
    let mut best: f64 = 0.0;
    for mut xi in starts {
        let mut last = value(&xi);
        let mut still = 0;
        for _ in 0..200_000 {
            let grad: Vec<f64> = (0..n).map(|i| d[i] * (b[i] + d[i] * xi[i])).collect();
            let gn = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
            if gn == 0.0 {
                break;
            }
            xi = grad.iter().map(|v| delta * v / gn).collect();
            let v = value(&xi);
            if v - last <= 1e-16 * v {
                still += 1;
                if still > 50 {
                    break;
                }
            } else {
                still = 0;
            }
            last = v;
        }
        best = best.max(last);
    }
    best
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce97);
    let mut worst: f64 = 0.0;
    let mut hard = 0;
    let mut witness_ok = true;
    for case in 0..200 {
        let slots = rng.gen_range(1..=5usize);
        let groups = rng.gen_range(1..=slots);
        let mut mult = vec![1usize; groups];
        for _ in groups..slots {
            let g = rng.gen_range(0..groups);
            mult[g] += 1;
        }
        let alpha = 10f64.powf(rng.gen_range(-2.0..0.0));
        let constructed_hard = case % 8 == 0;
        // eigenvalues at least a factor 3 apart, descending
        let mut lam: Vec<f64> = Vec::with_capacity(groups);
        if constructed_hard {
            // one group sits at λ = α, where the Tikhonov factor √λ q peaks
            let above = rng.gen_range(0..groups);
            let mut l = alpha;
            for _ in 0..above {
                l *= 3.0 * 10f64.powf(rng.gen_range(0.0..0.5));
                lam.push(l);
            }
            lam.reverse();
            lam.push(alpha);
            let mut l = alpha;
            for _ in above + 1..groups {
                l /= 3.0 * 10f64.powf(rng.gen_range(0.0..0.5));
                lam.push(l);
            }
        } else {
            let mut l = 10f64.powf(rng.gen_range(-0.5..0.5));
            for _ in 0..groups {
                lam.push(l);
                l /= 3.0 * 10f64.powf(rng.gen_range(0.0..0.5));
            }
        }
        let op = SpectralOperator::new(lam.clone(), mult.clone()).unwrap();
        let m = FilterMethod::new(FilterKind::Tikhonov, op.norm_tt()).unwrap();
        let mut x: Vec<f64> = (0..op.dim()).map(|_| rng.sample(StandardNormal)).collect();
        let slot_l = op.slot_eigenvalues();
        let d: Vec<f64> = slot_l.iter().map(|l| l.sqrt() / (alpha + l)).collect();
        let delta = if constructed_hard {
            for (i, l) in slot_l.iter().enumerate() {
                if *l == alpha {
                    x[i] = 0.0;
                }
            }
            let dmax = d.iter().cloned().fold(0.0, f64::max);
            let rest: f64 = slot_l
                .iter()
                .zip(&d)
                .zip(&x)
                .filter(|((l, _), _)| **l != alpha)
                .map(|((l, di), xi)| {
                    let bi = alpha / (alpha + l) * xi;
                    (di * bi / (dmax * dmax - di * di)).powi(2)
                })
                .sum::<f64>()
                .sqrt();
            (2.0 + rng.gen_range(0.0..3.0)) * rest.max(1e-3)
        } else {
            10f64.powf(rng.gen_range(-3.0..0.0))
        };
        let xe = SpectralElement::new(x.clone());
        let wc = worst_case_error(&m, alpha, &op, &xe, delta).unwrap();
        if wc.hard_case {
            hard += 1;
        }
        let b: Vec<f64> = slot_l.iter().zip(&x).map(|(l, xi)| -alpha / (alpha + l) * xi).collect();
        let oracle = directional_oracle(&b, &d, delta, &mut rng);
        worst = worst.max((wc.value - oracle).abs() / oracle);
        let wn = wc.witness.iter().map(|v| v * v).sum::<f64>().sqrt();
        let attained = b.iter().zip(&d).zip(&wc.witness).map(|((bi, di), w)| (bi + di * w).powi(2)).sum::<f64>().sqrt();
        witness_ok &= wn <= delta * (1.0 + 1e-9) && (attained - wc.value).abs() <= 1e-9 * wc.value;
    }
    Outcome {
        passed: worst <= 1e-6 && hard >= 20 && witness_ok,
        detail: format!("max relative gap to oracle {worst:.2e} (limit 1e-6); hard cases {hard} (need 20); witnesses attain value: {witness_ok}"),
    }
}

fn criterion_4() -> Outcome {
    let t = run(include_str!("../configs/single_layer_det_tikhonov.json"));
    let l = run(include_str!("../configs/single_layer_det_landweber.json"));
    let st = t.fit.unwrap().estimate;
    let sl = l.fit.unwrap().estimate;
    let inside = |s: f64| (0.45..=0.55).contains(&s);
    Outcome {
        passed: inside(st) && inside(sl) && t.fit.unwrap().rows == 6 && l.fit.unwrap().rows == 6,
        detail: format!("slopes tikhonov {st:.4}, landweber {sl:.4} (band [0.45, 0.55]; 6 rows each, N = 1e5)"),
    }
}

fn criterion_5() -> Outcome {
    let r = run(include_str!("../configs/single_layer_white_tikhonov.json"));
    let s = r.fit.unwrap().estimate;
    let zmax = r.monte_carlo.iter().map(|c| c.z).fold(0.0, f64::max);
    Outcome {
        passed: (0.35..=0.45).contains(&s) && r.monte_carlo.len() == 3 && zmax <= 3.0,
        detail: format!("slope {s:.4} (band [0.35, 0.45]); monte carlo rows {}, max |z| {zmax:.2} (limit 3)", r.monte_carlo.len()),
    }
}

fn criterion_6() -> Outcome {
    let r = run(include_str!("../configs/backward_heat_det_showalter.json"));
    let band = r.fit.unwrap().estimate;
    Outcome {
        passed: band <= 2.0 && r.fit.unwrap().rows == 10,
        detail: format!("band max/min of error * ln(1/delta) = {band:.4} over 10 levels (limit 2)"),
    }
}

fn criterion_7() -> Outcome {
    let border = run(include_str!("../configs/bias_decay_borderline.json"));
    let rough = run(include_str!("../configs/bias_decay_rough.json"));
    let gb = border.bias_decay.as_ref().unwrap().growth;
    let gr = rough.bias_decay.as_ref().unwrap().growth;
    let vb = verdict(&border, "bias_ratio_bounded");
    let vr = verdict(&rough, "bias_ratio_bounded");
    Outcome {
        passed: vb.held && !vr.held && gr >= 10.0,
        detail: format!("borderline growth {gb:.2} (verdict {}), rougher growth {gr:.1} (verdict {}, need >= 10)",
            if vb.held { "PASS" } else { "FAIL" },
            if vr.held { "PASS" } else { "FAIL" }),
    }
}

fn criterion_8() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, text) in [
        ("sobolev", include_str!("../configs/vsc_sobolev.json")),
        ("backward heat", include_str!("../configs/vsc_backward_heat.json")),
    ] {
        let r = run(text);
        let v = r.vsc.as_ref().unwrap();
        let shrunk = v.shrunk.as_ref().unwrap();
        let trunc_witnesses = shrunk
            .by_family
            .iter()
            .find(|(f, _, _)| *f == ProbeFamily::SpectralTruncation)
            .map_or(0, |(_, _, w)| *w);
        let clean = v.falsification.witnesses == 0 && v.falsification.probes >= 10_000;
        ok &= clean && trunc_witnesses > 0;
        parts.push(format!(
            "{name}: A {:.3}, {} probes, {} witnesses; A/2 truncation witnesses {} (family threshold A {:.3})",
            v.profile.a, v.falsification.probes, v.falsification.witnesses, trunc_witnesses, v.truncation_threshold_a
        ));
    }
    Outcome { passed: ok, detail: parts.join("; ") }
}

fn criterion_9() -> Outcome {
    let mut worst: f64 = 0.0;
    for mu in [1.0, 10.0, 100.0, 1e4] {
        let z = Complex64::new(0.0, f64::sqrt(mu)).sqrt();
        let direct = 1.0 / z.cosh().norm_sqr();
        worst = worst.max((sideways_heat_symbol(mu) - direct).abs() / direct);
    }
    let mu: f64 = 1e8;
    let tail = (-std::f64::consts::SQRT_2 * mu.powf(0.25)).exp();
    let ratio = sideways_heat_symbol(mu) / (0.25 * tail);
    let ratio4 = sideways_heat_symbol(mu) / (4.0 * tail);
    Outcome {
        passed: worst <= 1e-12 && (0.99..=1.01).contains(&ratio),
        detail: format!(
            "closed form vs complex max rel {worst:.1e} (limit 1e-12); ratio to (1/4)exp(-sqrt2 mu^1/4) at 1e8 = {ratio:.4}; ratio to 4exp(..) = {ratio4:.6}"
        ),
    }
}

fn criterion_10() -> Outcome {
    let op = SpectralOperator::new(vec![1.0], vec![1]).unwrap();
    let x = SpectralElement::new(vec![1.0]);
    let tik = FilterMethod::new(FilterKind::Tikhonov, 1.0).unwrap();
    let grid = log_space(1e-6, 1e2, 161).unwrap();
    let ds = delta_set(&tik, &op, &x, &grid).unwrap();
    let single = ds.alphas.iter().zip(&ds.deltas).map(|(a, d)| (d - a).abs() / a).fold(0.0, f64::max);
    let mut worst_ratio: f64 = 0.0;
    for e in fixture_registry() {
        let f = build_fixture(&e.descriptor, 0.0).unwrap();
        let l1 = f.operator.norm_tt();
        let mu_step = 0.5 / l1;
        let m = FilterMethod::new(FilterKind::Landweber { mu_step }, l1).unwrap();
        // the iteration's own grid α = 1/n; the gap bound concerns consecutive iterates
        let g: Vec<f64> = (1..=1000u32).rev().map(|n| 1.0 / f64::from(n)).collect();
        let rep = delta_set(&m, &f.operator, &f.solution, &g).unwrap();
        let bound = 2.0 / (1.0 - mu_step * l1).powi(2);
        worst_ratio = worst_ratio.max(rep.gamma_hat / bound);
    }
    Outcome {
        passed: single <= 1e-12 && worst_ratio <= 1.0,
        detail: format!("tikhonov single-mode |Delta - alpha|/alpha max {single:.1e}; landweber max gamma_hat / bound {worst_ratio:.3} over 5 fixtures, n = 1..1000"),
    }
}

fn main() -> ExitCode {
    let criteria: [(u32, &str, Duration, fn() -> Outcome); 10] = [
        (1, "filter catalogue certification", Duration::from_secs(1), criterion_1),
        (2, "psi closed forms", Duration::from_secs(1), criterion_2),
        (3, "worst-case oracle equivalence", Duration::from_secs(30), criterion_3),
        (4, "deterministic rate, single layer", Duration::from_secs(120), criterion_4),
        (5, "white-noise rate, single layer", Duration::from_secs(180), criterion_5),
        (6, "log rate, backward heat", Duration::from_secs(30), criterion_6),
        (7, "converse direction, rougher element", Duration::from_secs(60), criterion_7),
        (8, "VSC round trip and falsification", Duration::from_secs(60), criterion_8),
        (9, "sideways heat symbol", Duration::from_secs(1), criterion_9),
        (10, "delta-set diagnostics", Duration::from_secs(10), criterion_10),
    ];
    let mut unexpected = 0;
    println!("acceptance criteria");
    for (id, title, budget, f) in criteria {
        let t0 = Instant::now();
        let out = f();
        let elapsed = t0.elapsed();
        let in_time = elapsed <= budget;
        let passed = out.passed && in_time;
        let known = KNOWN_RED.iter().find(|(k, _)| *k == id);
        println!(
            "criterion {id:>2} {}  {title}: {} [{:.2} s, budget {} s]",
            if passed { "PASS" } else { "FAIL" },
            out.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
        if !passed {
            match known {
                Some((_, why)) => println!("             known red: {why}"),
                None => unexpected += 1,
            }
        }
    }
    if unexpected > 0 {
        println!("{unexpected} criteria failed unexpectedly");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
