//! Numerical self-checks: the precision/error-rate identity, analytic
//! gradients against central differences, and reweighting exactness.

use clap::Args;
use ndarray::Array2;
use rand::Rng;
use serde::Serialize;

use causalfair::fairness::{theorem1_residual, ConfusionCounts};
use causalfair::mitigation::reweigh_labels;
use causalfair::models::{loss_and_gradient, Classifier, GlmModel, MlpModel, TrainConfig};
use causalfair::seed;

use crate::{CliError, CliResult};

const THEOREM_TOL: f64 = 1e-12;
const GRADIENT_TOL: f64 = 1e-5;
const REWEIGH_TOL: f64 = 1e-12;

#[derive(Args, Debug)]
pub struct SelfcheckArgs {
    /// Random count tables for the identity check.
    #[arg(long, default_value_t = 1000)]
    theorem_cases: usize,
    /// Random instances per model family for the gradient check.
    #[arg(long, default_value_t = 10)]
    gradient_cases: usize,
    /// Random tables for the reweighting check.
    #[arg(long, default_value_t = 100)]
    reweigh_cases: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Corrupts the analytic gradient; used to exercise the failure path.
    #[arg(long, hide = true)]
    inject_fault: bool,
}

#[derive(Debug, Serialize)]
struct SuiteReport {
    suite: &'static str,
    cases: usize,
    worst: f64,
    tolerance: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    failing_case: Option<serde_json::Value>,
}

impl SuiteReport {
    fn passed(&self) -> bool {
        self.failing_case.is_none()
    }
}

fn theorem_suite(cases: usize, seed_value: u64) -> SuiteReport {
    let mut rng = seed::rng(seed::derive(seed_value, &[1]));
    let mut tables: Vec<[ConfusionCounts; 2]> = (0..cases)
        .map(|_| {
            let mut arm = || ConfusionCounts {
                tp: rng.random_range(1..10_000),
                fp: rng.random_range(1..10_000),
                fn_: rng.random_range(0..10_000),
                tn: rng.random_range(0..10_000),
            };
            [arm(), arm()]
        })
        .collect();
    // Perfect classifier and constant positive classifier.
    let perfect = ConfusionCounts { tp: 40, fp: 0, fn_: 0, tn: 60 };
    let constant = ConfusionCounts { tp: 30, fp: 70, fn_: 0, tn: 0 };
    tables.push([perfect, constant]);
    tables.push([constant, perfect]);

    let mut report = SuiteReport {
        suite: "theorem1",
        cases: tables.len(),
        worst: 0.0,
        tolerance: THEOREM_TOL,
        failing_case: None,
    };
    for t in &tables {
        for arm in theorem1_residual(t) {
            let r = arm.residual.map_or(f64::INFINITY, f64::abs);
            report.worst = report.worst.max(r);
            if r >= THEOREM_TOL && report.failing_case.is_none() {
                report.failing_case = Some(serde_json::json!({ "counts": t, "arm": arm }));
            }
        }
    }
    report
}

fn central_difference(model: &Classifier, x: &Array2<f64>, y: &[u8], a: &[u8], cfg: &TrainConfig) -> causalfair::Result<Vec<f64>> {
    let theta = model.parameters();
    let h = 1e-5;
    (0..theta.len())
        .map(|k| {
            let mut plus = theta.clone();
            let mut minus = theta.clone();
            plus[k] += h;
            minus[k] -= h;
            let fp = loss_and_gradient(&model.with_parameters(&plus)?, x.view(), y, Some(a), cfg)?.0;
            let fm = loss_and_gradient(&model.with_parameters(&minus)?, x.view(), y, Some(a), cfg)?.0;
            Ok((fp - fm) / (2.0 * h))
        })
        .collect()
}

fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-8);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).abs() / scale)
        .fold(0.0, f64::max)
}

fn gradient_suite(cases: usize, seed_value: u64, inject_fault: bool) -> causalfair::Result<SuiteReport> {
    let mut report = SuiteReport {
        suite: "gradient",
        cases: 0,
        worst: 0.0,
        tolerance: GRADIENT_TOL,
        failing_case: None,
    };
    let (n, p) = (40, 5);
    let names: Vec<String> = (0..p).map(|j| format!("x{j}")).collect();
    for case in 0..cases {
        let mut rng = seed::rng(seed::derive(seed_value, &[2, case as u64]));
        let x = Array2::from_shape_fn((n, p), |_| rng.random_range(-2.0..2.0));
        let y: Vec<u8> = (0..n).map(|_| rng.random_range(0..2u8)).collect();
        let a: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..2.0)).collect();

        let glm_params: Vec<f64> = (0..=p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let glm: Classifier = GlmModel::zeros(names.clone()).with_parameters(&glm_params)?.into();
        let mlp: Classifier = MlpModel::init(p, &[8, 8], names.clone(), &mut rng)?.into();
        for (family, model) in [("logistic", &glm), ("mlp", &mlp)] {
            for eta in [0.0, 1.0] {
                let cfg = TrainConfig {
                    pr_eta: eta,
                    ..TrainConfig::default()
                }
                .with_weights(w.clone());
                let (_, mut analytic) = loss_and_gradient(model, x.view(), &y, Some(&a), &cfg)?;
                if inject_fault {
                    analytic[0] += 1e-2;
                }
                let numeric = central_difference(model, &x, &y, &a, &cfg)?;
                let err = relative_error(&analytic, &numeric);
                report.cases += 1;
                report.worst = report.worst.max(err);
                if (err.is_nan() || err >= GRADIENT_TOL) && report.failing_case.is_none() {
                    report.failing_case = Some(serde_json::json!({
                        "family": family,
                        "pr_eta": eta,
                        "case": case,
                        "relative_error": err,
                        "parameters": model.parameters(),
                        "analytic": analytic,
                        "numeric": numeric,
                    }));
                }
            }
        }
    }
    Ok(report)
}

fn reweigh_suite(cases: usize, seed_value: u64) -> causalfair::Result<SuiteReport> {
    let mut report = SuiteReport {
        suite: "reweigh",
        cases,
        worst: 0.0,
        tolerance: REWEIGH_TOL,
        failing_case: None,
    };
    for case in 0..cases {
        let mut rng = seed::rng(seed::derive(seed_value, &[3, case as u64]));
        let n = rng.random_range(20..500usize);
        // The first four rows cover every (group, label) cell.
        let (mut a, mut y): (Vec<u8>, Vec<u8>) = ((0..4).map(|i| i / 2).collect(), (0..4).map(|i| i % 2).collect());
        let p_a = rng.random_range(0.1..0.9);
        for _ in 4..n {
            let g = u8::from(rng.random::<f64>() < p_a);
            let p_y = if g == 1 { 0.6 } else { 0.3 };
            a.push(g);
            y.push(u8::from(rng.random::<f64>() < p_y));
        }
        let w = reweigh_labels(&a, &y)?;
        let rate = |g: u8| {
            let (num, den) = (0..n).filter(|&i| a[i] == g).fold((0.0, 0.0), |(s, d), i| {
                (s + w[i] * f64::from(y[i]), d + w[i])
            });
            num / den
        };
        let gap = (rate(1) - rate(0)).abs();
        report.worst = report.worst.max(gap);
        if (gap.is_nan() || gap >= REWEIGH_TOL) && report.failing_case.is_none() {
            report.failing_case = Some(serde_json::json!({ "case": case, "group": a, "label": y, "gap": gap }));
        }
    }
    Ok(report)
}

pub fn run(args: &SelfcheckArgs) -> CliResult<()> {
    let reports = [
        theorem_suite(args.theorem_cases, args.seed),
        gradient_suite(args.gradient_cases, args.seed, args.inject_fault)?,
        reweigh_suite(args.reweigh_cases, args.seed)?,
    ];
    let mut failed = Vec::new();
    for r in &reports {
        let status = if r.passed() { "PASS" } else { "FAIL" };
        println!(
            "{status} {:<9} cases={:<5} worst={:.3e} tol={:.0e}",
            r.suite, r.cases, r.worst, r.tolerance
        );
        if let Some(case) = &r.failing_case {
            println!("  failing case: {case}");
            failed.push(r.suite);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!("self-check failed: {}", failed.join(", "))))
    }
}
