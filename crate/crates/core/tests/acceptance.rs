//! Acceptance criteria 1-10. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test --test acceptance -- 1 3`.

mod common;

use std::path::Path;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{fd_check, grad_case, median, stop_gradient_factorization_error};
use zigzag_core::data::surrogate::{gen_surrogate, SurrogateConfig};
use zigzag_core::experiment::{reproduce_toy, split_metrics, toy_run, ToyConfig, ToyMetrics};
use zigzag_core::feedback::linear_feedback_model;
use zigzag_core::oracle::{
    calibrated_pair_covariance, chebyshev_empirical, covariance_operator_integral, f_variance, run_oracle_suites,
    FFunction, FiniteWorld, OracleOptions, QuadratureGrid,
};
use zigzag_core::train::{train, TrainConfig};
use zigzag_core::uncertainty::{covariance_with_rng, epistemic_covariance};
use zigzag_core::{EstimatorConfig, EstimatorForm, FeedbackMode};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn c1_oracle_identities() -> Verdict {
    let start = Instant::now();
    let report = run_oracle_suites(&OracleOptions {
        seed: 1,
        worlds: 1000,
        quadrature_worlds: 0,
        ..OracleOptions::default()
    })
    .unwrap();
    let elapsed = start.elapsed();
    let wanted = ["decomposition", "pair_covariance", "zigzag", "strong_variance"];
    let suites: Vec<_> = report.suites.iter().filter(|s| wanted.contains(&s.suite.as_str())).collect();
    let worst = suites.iter().map(|s| s.max_residual).fold(0.0, f64::max);
    let pass = suites.len() == 4 && suites.iter().all(|s| s.cases == 1000 && s.max_residual < 1e-12);
    verdict(
        pass && within(elapsed, 5.0),
        format!("1000 worlds, max residual {worst:.2e} (< 1e-12), {:.2}s (< 5s)", elapsed.as_secs_f64()),
    )
}

fn c2_quadrature() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let w = FiniteWorld::random_with_std_range(&mut rng, 0.1, 2.0);
        let grid = QuadratureGrid::covering(&w, 10.0, 1024);
        let exact = calibrated_pair_covariance(&w);
        let got = covariance_operator_integral(&w, &grid).unwrap();
        worst = worst.max((got - exact).abs() / exact.abs().max(1e-3));
    }
    let elapsed = start.elapsed();
    verdict(
        worst < 1e-3 && within(elapsed, 120.0),
        format!("50 worlds at 1024^2, max relative error {worst:.2e} (< 1e-3), {:.1}s", elapsed.as_secs_f64()),
    )
}

fn c3_estimator() -> Verdict {
    let start = Instant::now();
    let mut ok = true;
    let mut worst_z = 0.0f64;
    for (i, rho) in [0.0, 0.3, 0.7, -0.5].into_iter().enumerate() {
        let model = linear_feedback_model(1, rho, 0.0, FeedbackMode::DropWeights).unwrap();
        for form in [EstimatorForm::Paper, EstimatorForm::Centered] {
            let mut rng = ChaCha8Rng::seed_from_u64(30 + i as u64);
            let est = covariance_with_rng(&model, &[0.5], 1_000_000, form, &mut rng).unwrap();
            let z = (est.cov - rho).abs() / est.stderr;
            worst_z = worst_z.max(if rho == 0.0 && form == EstimatorForm::Centered && est.cov == 0.0 { 0.0 } else { z });
            ok &= (est.cov - rho).abs() <= 3.0 * est.stderr || (est.cov == rho && est.stderr == 0.0);
        }
    }
    let blind = linear_feedback_model(1, 0.0, 0.0, FeedbackMode::DropWeights).unwrap();
    let mut blind_exact = true;
    for samples in [1, 2, 17, 128, 10_000] {
        let cfg = EstimatorConfig {
            samples,
            form: EstimatorForm::Centered,
            seed: samples as u64,
        };
        blind_exact &= epistemic_covariance(&blind, &[3.0], &cfg).unwrap().cov == 0.0;
    }
    let elapsed = start.elapsed();
    verdict(
        ok && blind_exact && within(elapsed, 30.0),
        format!(
            "M=1e6, worst |est - rho| / stderr {worst_z:.2} (<= 3), blind model exactly 0: {blind_exact}, {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn c4_gradients() -> Verdict {
    let mut worst = 0.0f64;
    let mut worst_factor = 0.0f64;
    let (mut checked, mut skipped) = (0, 0);
    for i in 0..100u64 {
        let case = grad_case(4000 + i, [0.0, 0.5, 1.0][(i % 3) as usize]);
        let fd = fd_check(&case);
        worst = worst.max(fd.max_rel_err);
        checked += fd.checked;
        skipped += fd.skipped;
        worst_factor = worst_factor.max(stop_gradient_factorization_error(&case));
    }
    verdict(
        worst < 1e-5 && worst_factor < 1e-12 && checked > 100 * 4000,
        format!(
            "100 cases, {checked} coordinates ({skipped} skipped at ReLU kinks), max relative error {worst:.2e} (< 1e-5), \
             stop-gradient factorization error {worst_factor:.1e}"
        ),
    )
}

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn toy_metrics_for(gamma: f64, couples: bool) -> Vec<ToyMetrics> {
    SEEDS
        .iter()
        .map(|&seed| {
            let cfg = ToyConfig {
                seed,
                gamma,
                ..ToyConfig::default()
            };
            toy_run(&cfg, couples).unwrap().metrics
        })
        .collect()
}

fn fmt(values: &[f64]) -> String {
    let v: Vec<String> = values.iter().map(|v| format!("{v:.3}")).collect();
    format!("[{}]", v.join(", "))
}

fn c5_toy() -> Verdict {
    let triplets = toy_metrics_for(1.5, false);
    let couples = toy_metrics_for(1.5, true);
    let ratio: Vec<f64> = triplets.iter().map(|m| m.in_range_abs_cov / m.out_range_abs_cov).collect();
    let corr_c: Vec<f64> = couples.iter().map(|m| m.cov_noise_correlation).collect();
    let corr_t: Vec<f64> = triplets.iter().map(|m| m.cov_noise_correlation).collect();
    let (r, cc, ct) = (median(&ratio), median(&corr_c), median(&corr_t));
    let (a, b1, b2) = (r <= 0.25, cc >= 0.6, ct <= 0.3);
    verdict(
        a && b1 && b2,
        format!(
            "(a) triplets in/out |cov| median {r:.3} (<= 0.25) {}: {}; (b) couples corr median {cc:.3} (>= 0.6) {}: {}; \
             triplets corr median {ct:.3} (<= 0.3) {}: {}",
            pf(a),
            fmt(&ratio),
            pf(b1),
            fmt(&corr_c),
            pf(b2),
            fmt(&corr_t)
        ),
    )
}

fn c6_severity() -> Verdict {
    let low = toy_metrics_for(1.0, false);
    let high = toy_metrics_for(3.0, false);
    let med = |ms: &[ToyMetrics], f: fn(&ToyMetrics) -> f64| median(&ms.iter().map(f).collect::<Vec<_>>());
    let alea = med(&high, |m| m.in_range_aleatoric) / med(&low, |m| m.in_range_aleatoric);
    let cov = med(&high, |m| m.in_range_abs_cov) / med(&low, |m| m.in_range_abs_cov);
    let (a, b) = ((5.0..=13.0).contains(&alea), (1.0 / 3.0..=3.0).contains(&cov));
    verdict(
        a && b,
        format!(
            "aleatoric factor {alea:.2} (in [5, 13]) {}; |cov| factor {cov:.2} (in [1/3, 3]) {}",
            pf(a),
            pf(b)
        ),
    )
}

fn c7_surrogate() -> Verdict {
    let mut up = 0;
    let (mut r2_train, mut r2_test) = (Vec::new(), Vec::new());
    let mut diffs = Vec::new();
    for seed in SEEDS {
        let splits = gen_surrogate(&SurrogateConfig {
            seed,
            ..SurrogateConfig::default()
        })
        .unwrap();
        let cfg = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        let model = train(&splits.train, &cfg).unwrap().model;
        let est = EstimatorConfig {
            seed,
            ..EstimatorConfig::default()
        };
        let tr = split_metrics(&model, &splits.train, &est).unwrap();
        let te = split_metrics(&model, &splits.test, &est).unwrap();
        if te.mean_abs_cov > tr.mean_abs_cov {
            up += 1;
        }
        diffs.push(100.0 * (te.mean_abs_cov - tr.mean_abs_cov) / tr.mean_abs_cov);
        r2_train.push(tr.r2);
        r2_test.push(te.r2);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let r2_ok = mean(&r2_test) < mean(&r2_train);
    verdict(
        up >= 4 && r2_ok,
        format!(
            "test |cov| above train in {up}/5 seeds (>= 4), differences % {}; mean R2 train {:.3} vs test {:.3}",
            fmt(&diffs),
            mean(&r2_train),
            mean(&r2_test)
        ),
    )
}

fn c8_chebyshev() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut violations = 0;
    for _ in 0..100 {
        let w = FiniteWorld::random(&mut rng);
        for beta in [0.1, 0.25, 0.5] {
            if !chebyshev_empirical(&w, beta).unwrap().bound_holds {
                violations += 1;
            }
        }
    }
    verdict(violations == 0, format!("100 worlds x 3 betas, {violations} violations"))
}

fn c9_f_variance() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut eq_worst, mut slack_min) = (0.0f64, f64::INFINITY);
    for _ in 0..1000 {
        let w = FiniteWorld::random(&mut rng);
        eq_worst = eq_worst.max(f_variance(&w, FFunction::Square, None).unwrap().slack().abs());
        for f in [FFunction::Exp, FFunction::AbsPower(3.0)] {
            slack_min = slack_min.min(f_variance(&w, f, None).unwrap().slack());
        }
    }
    verdict(
        eq_worst < 1e-12 && slack_min >= -1e-9,
        format!("1000 worlds, square |C - V| max {eq_worst:.2e}, exp/|t|^3 min slack {slack_min:.3e} (>= -1e-9)"),
    )
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

fn c10_determinism() -> Verdict {
    let cfg = ToyConfig {
        seed: 11,
        ..ToyConfig::default()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    reproduce_toy(&cfg, a.path()).unwrap();
    reproduce_toy(&cfg, b.path()).unwrap();
    let (fa, fb) = (csv_files(a.path()), csv_files(b.path()));
    let same = !fa.is_empty() && fa == fb;
    verdict(same, format!("{} CSV files compared byte for byte, identical: {same}", fa.len()))
}

fn pf(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

type Criterion = (u32, &'static str, fn() -> Verdict);

const CRITERIA: [Criterion; 10] = [
    (1, "oracle identities", c1_oracle_identities),
    (2, "covariance operator quadrature", c2_quadrature),
    (3, "Monte Carlo estimator consistency", c3_estimator),
    (4, "gradient correctness", c4_gradients),
    (5, "toy triplets vs couples", c5_toy),
    (6, "noise severity invariance", c6_severity),
    (7, "replicate surrogate extrapolation", c7_surrogate),
    (8, "Chebyshev bound", c8_chebyshev),
    (9, "f-variance suite", c9_f_variance),
    (10, "reproduce-toy determinism", c10_determinism),
];

fn main() {
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (id, name, run) in CRITERIA {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let v = run();
        println!(
            "criterion {id:>2} {} {name}: {} [{:.1}s]",
            pf(v.pass),
            v.detail,
            start.elapsed().as_secs_f64()
        );
        if !v.pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
