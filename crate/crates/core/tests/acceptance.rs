//! End-to-end acceptance criteria. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.
//!
//! `ACCEPTANCE_ONLY=3,8` runs a subset. `ACCEPTANCE_LAMBDA=<value>` skips the
//! calibration for the criteria that only consume λ (7 to 11); criteria 3 and
//! 4 always calibrate.

mod common;

use std::cell::OnceCell;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{kl_numeric, nonadaptive_brute_force, props, test_range, triangle};
use propsep::calibrate::{
    calibrate_lambda, check_propagation, estimate_z_curve_homogeneous, Calibration,
    CalibrationConfig,
};
use propsep::sim::{
    cross_boundary_fraction, generate_data, run_replications, truth_for, ExperimentConfig,
    MemorySettings, TestFunction,
};
use propsep::stepfunc::{associated_step_function, partition_from_weights, verify_step_bound};
use propsep::{Design, ExponentialFamily, Family, Kernel, PsConfig, Smoother};

type Verdict = (bool, String);

struct Context {
    lambda_override: Option<f64>,
    calibration: OnceCell<Calibration>,
}

impl Context {
    fn gaussian() -> Family {
        Family::gaussian(1.0).unwrap()
    }

    fn calibration(&self) -> &Calibration {
        self.calibration.get_or_init(|| {
            calibrate_lambda(&Self::gaussian(), 0.0, &CalibrationConfig::default())
                .expect("calibration")
        })
    }

    /// λ for the simulation criteria.
    fn lambda(&self) -> f64 {
        self.lambda_override
            .unwrap_or_else(|| self.calibration().lambda)
    }
}

fn secs(d: Duration) -> String {
    format!("{:.1} s", d.as_secs_f64())
}

fn c1_kl_oracle(_: &Context) -> Verdict {
    let start = Instant::now();
    let families = [
        Family::gaussian(1.0).unwrap(),
        Family::Exponential,
        Family::Poisson,
        Family::Bernoulli,
        Family::lognormal(1.0).unwrap(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    let mut pairs = 0;
    for f in &families {
        let (lo, hi) = test_range(f);
        for _ in 0..30 {
            let (a, b) = (rng.random_range(lo..hi), rng.random_range(lo..hi));
            worst = worst.max((f.kl(a, b).unwrap() - kl_numeric(f, a, b)).abs());
            pairs += 1;
        }
    }
    let t = start.elapsed();
    (
        worst < 1e-6 && t < Duration::from_secs(10),
        format!("{pairs} pairs over 5 families, max |closed - quadrature| = {worst:.2e} (< 1e-6), {}", secs(t)),
    )
}

fn c2_deviation_bound(_: &Context) -> Verdict {
    let start = Instant::now();
    let family = Context::gaussian();
    let n = 100;
    let design = Design::regular(n).unwrap();
    let truth = vec![0.0; n];
    let cfg = PsConfig {
        k_loc: Kernel::Uniform,
        h0: Some(1000.0),
        hmax: 1000.0,
        ..PsConfig::with_lambda(f64::INFINITY)
    };
    let reps = 10_000u64;
    let zs = [0.5, 1.0, 2.0, 3.0];
    let mut exceed = [0usize; 4];
    for r in 0..reps {
        let obs = generate_data(&truth, &family, r).unwrap();
        let s = Smoother::new(&design, &obs, &family, &cfg).unwrap().initial_state();
        assert_eq!(s.n_bar[0], n as f64);
        let stat = s.n_bar[0] * family.kl(s.theta_tilde[0], 0.0).unwrap();
        for (c, &z) in exceed.iter_mut().zip(&zs) {
            *c += usize::from(stat > z);
        }
    }
    let mut ok = true;
    let mut parts = Vec::new();
    for (&c, &z) in exceed.iter().zip(&zs) {
        let p = c as f64 / reps as f64;
        let b = 2.0 * (-z).exp();
        if b < 1.0 {
            let limit = b + 3.0 * (b * (1.0 - b) / reps as f64).sqrt();
            ok &= p <= limit;
            parts.push(format!("z={z}: {p:.4} <= {limit:.4}"));
        } else {
            parts.push(format!("z={z}: {p:.4} (bound {b:.3} >= 1, not checked)"));
        }
    }
    let t = start.elapsed();
    ok &= t < Duration::from_secs(60);
    (ok, format!("{}; {}", parts.join(", "), secs(t)))
}

fn c3_homogeneous_propagation(ctx: &Context) -> Verdict {
    let start = Instant::now();
    let cal = ctx.calibration();
    let family = Context::gaussian();
    let fresh = CalibrationConfig {
        seed: CalibrationConfig::default().seed + 1000,
        ..CalibrationConfig::default()
    };
    let curve = estimate_z_curve_homogeneous(cal.lambda, &family, 0.0, &fresh).unwrap();
    let check = check_propagation(&curve, &fresh);
    let t = start.elapsed();
    let detail = match &check.violation {
        None => "passes".to_string(),
        Some(v) => format!("fails: {v}"),
    };
    (
        check.passed && t < Duration::from_secs(600),
        format!(
            "lambda = {:.4} after {} evaluations; fresh seed {} with {} replicates {detail}; {}",
            cal.lambda,
            cal.evaluations.len(),
            fresh.seed,
            fresh.replicates,
            secs(t)
        ),
    )
}

fn c4_lambda_invariance(ctx: &Context) -> Verdict {
    let l0 = ctx.calibration().lambda;
    let l5 = calibrate_lambda(&Context::gaussian(), 5.0, &CalibrationConfig::default())
        .expect("calibration at theta = 5")
        .lambda;
    let rel = (l5 - l0).abs() / l0;
    (rel <= 0.10, format!("lambda(0) = {l0:.4}, lambda(5) = {l5:.4}, relative difference {rel:.2e} (<= 0.10)"))
}

fn c5_oversmoothing_limit(_: &Context) -> Verdict {
    let start = Instant::now();
    let family = Context::gaussian();
    let n = 1000;
    let design = Design::regular(n).unwrap();
    let cfg = PsConfig::with_lambda(1e12);
    let mut worst = 0.0f64;
    let mut states = 0;
    for tf in TestFunction::ALL {
        let truth = truth_for(tf, n, &family).unwrap();
        for seed in 1..=5 {
            let obs = generate_data(&truth, &family, seed).unwrap();
            let smoother = Smoother::new(&design, &obs, &family, &cfg).unwrap();
            smoother.run_observed(|s| {
                let oracle = nonadaptive_brute_force(design.points(), obs.transformed(), s.h, triangle);
                for (a, b) in s.theta_hat.iter().zip(&oracle) {
                    worst = worst.max((a - b).abs() / b.abs().max(1.0));
                }
                states += 1;
            });
        }
    }
    let t = start.elapsed();
    (
        worst <= 1e-10 && t < Duration::from_secs(60),
        format!("{states} states (4 test functions x 5 seeds), max relative deviation {worst:.2e} (<= 1e-10), {}", secs(t)),
    )
}

fn c6_memory_equivalence(_: &Context) -> Verdict {
    let n = 1000;
    let design = Design::regular(n).unwrap();
    let mut compared = 0;
    let mut mismatch = None;
    for family in [Context::gaussian(), Family::Exponential] {
        for tf in TestFunction::ALL {
            let truth = truth_for(tf, n, &family).unwrap();
            for seed in 1..=3 {
                let obs = generate_data(&truth, &family, seed).unwrap();
                for penalty in [propsep::PenaltyVariant::Standard, propsep::PenaltyVariant::Max] {
                    let plain = PsConfig {
                        penalty,
                        ..PsConfig::with_lambda(12.0)
                    };
                    let neutral = plain.clone().with_neutral_memory();
                    let a = Smoother::new(&design, &obs, &family, &plain).unwrap().run_trace();
                    let b = Smoother::new(&design, &obs, &family, &neutral).unwrap().run_trace();
                    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
                    let same = a.len() == b.len()
                        && a.iter().zip(&b).all(|(x, y)| {
                            bits(&x.theta_hat) == bits(&y.theta_hat)
                                && bits(&x.n_hat) == bits(&y.n_hat)
                                && bits(&x.theta_tilde) == bits(&y.theta_tilde)
                                && bits(&x.n_tilde) == bits(&y.n_tilde)
                        });
                    if !same && mismatch.is_none() {
                        mismatch = Some(format!("{family} {tf} seed {seed} {penalty}"));
                    }
                    compared += 1;
                }
            }
        }
    }
    match mismatch {
        None => (true, format!("{compared} runs bit-identical at every step")),
        Some(m) => (false, format!("first difference: {m}")),
    }
}

fn c7_step_bound(ctx: &Context) -> Verdict {
    let lambda = ctx.lambda();
    let n = 1000;
    let design = Design::regular(n).unwrap();
    let cfg = PsConfig::with_lambda(lambda);
    let mut worst = f64::NEG_INFINITY;
    let mut checked = 0;
    let mut failure = None;
    for family in [Context::gaussian(), Family::Exponential] {
        for tf in TestFunction::ALL {
            let truth = truth_for(tf, n, &family).unwrap();
            for seed in 1..=20 {
                let obs = generate_data(&truth, &family, seed).unwrap();
                let smoother = Smoother::new(&design, &obs, &family, &cfg).unwrap();
                // H-sets of step k come from the weights of step k + 1
                let mut state = smoother.initial_state();
                loop {
                    let next = smoother.advance(&state);
                    let weights = match &next {
                        Some(nx) => smoother.adaptive_weights(&state, nx.h),
                        None => smoother.final_weights(&state),
                    };
                    let partition = partition_from_weights(&weights, 0.0);
                    let stepf = associated_step_function(&partition, &state.theta_tilde).unwrap();
                    let bound = verify_step_bound(&stepf, &state, &family, lambda).unwrap();
                    worst = worst.max(bound.worst_margin);
                    checked += 1;
                    if !bound.holds && failure.is_none() {
                        failure = Some(format!(
                            "{family} {tf} seed {seed} step {} point {}",
                            state.k, bound.worst_index
                        ));
                    }
                    match next {
                        Some(nx) => state = nx,
                        None => break,
                    }
                }
            }
        }
    }
    let detail = format!("{checked} states, lambda = {lambda:.4}, worst KL - bound = {worst:.2e} (<= 1e-12)");
    match failure {
        None => (true, detail),
        Some(f) => (false, format!("{detail}; first violation {f}")),
    }
}

fn c8_separation(ctx: &Context) -> Verdict {
    let start = Instant::now();
    let lambda = ctx.lambda();
    let family = Context::gaussian();
    let n = 1000;
    let design = Design::regular(n).unwrap();
    let truth = truth_for(TestFunction::Indicator, n, &family).unwrap();
    let boundary = truth.iter().position(|&t| t != truth[0]).unwrap();
    let cfg = PsConfig {
        hmax: 10_000.0,
        ..PsConfig::with_lambda(lambda)
    };
    let (mut confined, mut two_classes) = (0, 0);
    let mut fractions = Vec::new();
    let mut misassigned = Vec::new();
    for seed in 1..=100 {
        let obs = generate_data(&truth, &family, seed).unwrap();
        let smoother = Smoother::new(&design, &obs, &family, &cfg).unwrap();
        let last = smoother.run_final();
        let w = smoother.final_weights(&last);
        let frac = cross_boundary_fraction(&w, boundary);
        fractions.push(frac);
        confined += usize::from(frac <= 0.02);
        let partition = partition_from_weights(&w, 0.0);
        two_classes += usize::from(partition.regions() == 2);
        if frac > 0.02 {
            // points whose class is that of the far side of the jump
            let labels = partition.labels();
            let (left, right) = (labels[0], labels[n - 1]);
            let strays = (0..n)
                .filter(|&i| labels[i] == if i < boundary { right } else { left })
                .count();
            misassigned.push(strays);
        }
    }
    let t = start.elapsed();
    let worst = fractions.iter().copied().fold(0.0, f64::max);
    (
        confined >= 90 && two_classes >= 90 && t < Duration::from_secs(900),
        format!(
            "lambda = {lambda:.4}: crossing confined to <= 2% in {confined}/100 seeds (worst {worst:.3}), \
             2-class partition in {two_classes}/100 seeds (both >= 90), {}; \
             points placed on the wrong side of the jump in the unconfined seeds: {misassigned:?}",
            secs(t)
        ),
    )
}

fn experiment(ctx: &Context, testfn: TestFunction, hmax: &[f64], memory: Option<MemorySettings>) -> Vec<f64> {
    let cfg = ExperimentConfig {
        family: Context::gaussian(),
        testfn,
        n: 1000,
        lambda: ctx.lambda(),
        hmax: hmax.to_vec(),
        seeds: (1..=100).collect(),
        memory,
        ..ExperimentConfig::default()
    };
    let summary = run_replications(&cfg).unwrap();
    hmax.iter().map(|&h| summary.median(h).unwrap()).collect()
}

fn c9_mae_stabilization(ctx: &Context) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for tf in [TestFunction::Indicator, TestFunction::PiecewiseSmooth] {
        let m = experiment(ctx, tf, &[10_000.0, 20_000.0], None);
        let change = (m[1] - m[0]).abs() / m[0];
        ok &= change < 0.05;
        parts.push(format!("{tf}: median MAE {:.5} -> {:.5} ({:.2}% < 5%)", m[0], m[1], 100.0 * change));
    }
    (ok, parts.join("; "))
}

fn c10_misspecification(ctx: &Context) -> Verdict {
    let grid = [50.0, 500.0, 2000.0, 20_000.0];
    let m = experiment(ctx, TestFunction::PiecewiseSmooth, &grid, None);
    let min = m.iter().copied().fold(f64::INFINITY, f64::min);
    let medians: Vec<String> = grid.iter().zip(&m).map(|(h, v)| format!("{h}: {v:.5}")).collect();
    (m[3] > min, format!("piecewise_smooth medians {}; at 20000 {:.5} > min {min:.5}", medians.join(", "), m[3]))
}

fn c11_memory_neutrality(ctx: &Context) -> Verdict {
    let grid = [50.0, 500.0, 5000.0];
    let tf = TestFunction::PiecewiseSmooth;
    let plain = experiment(ctx, tf, &grid, None);
    let mut ok = true;
    let mut worst = 0.0f64;
    let mut raised = Vec::new();
    for aggkern in [Kernel::Triangle, Kernel::Uniform] {
        let mem = |tadjust| Some(MemorySettings { aggkern, tadjust, ladjust: 1.0 });
        let with = experiment(ctx, tf, &grid, mem(1.0));
        for (a, b) in with.iter().zip(&plain) {
            worst = worst.max((a - b).abs() / b);
        }
        let strong = experiment(ctx, tf, &[50.0], mem(0.01))[0];
        ok &= strong > plain[0];
        raised.push(format!("{aggkern}: {strong:.5} vs {:.5}", plain[0]));
    }
    ok &= worst <= 0.02;
    (
        ok,
        format!(
            "tadjust = 1 max relative median difference {:.2}% (<= 2%) at hmax 50/500/5000; \
             tadjust = 0.01 at hmax 50 raises the median: {}",
            100.0 * worst,
            raised.join(", ")
        ),
    )
}

fn c12_property_suites(_: &Context) -> Verdict {
    let start = Instant::now();
    let mut failed = Vec::new();
    for (name, suite) in props::SUITES {
        if let Err(e) = suite() {
            failed.push(format!("{name}: {e}"));
        }
    }
    let t = start.elapsed();
    let ok = failed.is_empty() && t < Duration::from_secs(120);
    let detail = if failed.is_empty() {
        format!("{} suites green, {}", props::SUITES.len(), secs(t))
    } else {
        failed.join("; ")
    };
    (ok, detail)
}

type Criterion = (u32, &'static str, fn(&Context) -> Verdict);

const CRITERIA: [Criterion; 12] = [
    (1, "KL oracle equivalence", c1_kl_oracle),
    (2, "deviation bound 2exp(-z)", c2_deviation_bound),
    (3, "homogeneous propagation", c3_homogeneous_propagation),
    (4, "lambda invariance in theta", c4_lambda_invariance),
    (5, "over-smoothing limit", c5_oversmoothing_limit),
    (6, "memory-step equivalence", c6_memory_equivalence),
    (7, "step-function bound", c7_step_bound),
    (8, "separation on indicator data", c8_separation),
    (9, "MAE stabilization", c9_mae_stabilization),
    (10, "misspecification bias", c10_misspecification),
    (11, "memory-step neutrality", c11_memory_neutrality),
    (12, "property suites", c12_property_suites),
];

fn main() -> ExitCode {
    // `cargo test -- --list` and friends probe test binaries
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let ctx = Context {
        lambda_override: std::env::var("ACCEPTANCE_LAMBDA").ok().and_then(|s| s.parse().ok()),
        calibration: OnceCell::new(),
    };

    let mut failures = 0;
    for (id, title, run) in CRITERIA {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let (passed, detail) = run(&ctx);
        failures += usize::from(!passed);
        println!(
            "{} criterion {id:>2} {title}: {detail} [{}]",
            if passed { "PASS" } else { "FAIL" },
            secs(start.elapsed())
        );
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criteria failed");
        ExitCode::FAILURE
    }
}
