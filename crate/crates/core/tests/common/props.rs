//! Property suites shared by the `properties` and `acceptance` targets.

use std::collections::HashMap;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

use propsep::algorithm::nonadaptive_weights;
use propsep::stepfunc::partition_from_weights;
use propsep::{
    Design, ExponentialFamily, Family, Kernel, Observations, ParamInterval, PsConfig, Smoother,
    WeightMatrix,
};

use super::test_range;

pub type Outcome = Result<(), String>;

fn run<S: Strategy>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Outcome
where
    S::Value: std::fmt::Debug,
{
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn kernel() -> impl Strategy<Value = Kernel> {
    prop_oneof![
        Just(Kernel::Uniform),
        Just(Kernel::Triangle),
        Just(Kernel::Epanechnikov),
        (0.0..1.0f64).prop_map(|knee| Kernel::plateau(knee).unwrap()),
    ]
}

fn family() -> impl Strategy<Value = Family> {
    prop_oneof![
        (0.2..3.0f64).prop_map(|s| Family::gaussian(s).unwrap()),
        Just(Family::Exponential),
        Just(Family::Poisson),
        Just(Family::Bernoulli),
        (0.2..3.0f64).prop_map(|s| Family::lognormal(s).unwrap()),
    ]
}

/// A family with `count` parameters from its test range.
fn family_with_params(count: usize) -> impl Strategy<Value = (Family, Vec<f64>)> {
    family().prop_flat_map(move |f| {
        let (lo, hi) = test_range(&f);
        (Just(f), prop::collection::vec(lo..hi, count))
    })
}

pub fn kernel_invariants() -> Outcome {
    run(512, (kernel(), 0.0..2.0f64, 0.0..2.0f64), |(k, u1, u2)| {
        prop_assert_eq!(k.eval(0.0).unwrap(), 1.0);
        let (a, b) = (k.eval(u1).unwrap(), k.eval(u2).unwrap());
        prop_assert!((0.0..=1.0).contains(&a));
        if u1 <= u2 {
            prop_assert!(a >= b, "{} not non-increasing: K({u1}) = {a} < K({u2}) = {b}", k);
        }
        if u1 >= 1.0 {
            prop_assert_eq!(a, 0.0);
        }
        prop_assert_eq!(k.weight(u1), a);
        prop_assert!(k.eval(-u1 - 1e-9).is_err());
        Ok(())
    })
}

pub fn kl_nonnegative() -> Outcome {
    run(512, family_with_params(2), |(f, p)| {
        let v = f.kl(p[0], p[1]).unwrap();
        prop_assert!(v >= 0.0);
        prop_assert_eq!(f.kl(p[0], p[0]).unwrap(), 0.0);
        Ok(())
    })
}

pub fn kl_convex_in_first_argument() -> Outcome {
    run(512, (family_with_params(3), 0.0..=1.0f64), |((f, p), t)| {
        let (a, b, r) = (p[0], p[1], p[2]);
        let mix = t * a + (1.0 - t) * b;
        let lhs = f.kl(mix, r).unwrap();
        let rhs = t * f.kl(a, r).unwrap() + (1.0 - t) * f.kl(b, r).unwrap();
        prop_assert!(lhs <= rhs + 1e-12, "{f}: kl({mix}, {r}) = {lhs} > {rhs}");
        Ok(())
    })
}

pub fn chain_inequality() -> Outcome {
    let strategy = family().prop_flat_map(|f| {
        let (lo, hi) = test_range(&f);
        (Just(f), lo..hi, lo..hi).prop_flat_map(|(f, x, y)| {
            let (lo, hi) = if x < y { (x, y) } else { (y, x) };
            let hi = if hi > lo { hi } else { lo + 1e-3 };
            (Just(f), Just((lo, hi)), prop::collection::vec(lo..=hi, 2..8))
        })
    });
    run(512, strategy, |(f, (lo, hi), seq)| {
        let kappa = f.kappa(ParamInterval::new(lo, hi).unwrap()).unwrap();
        let direct = f.kl(seq[0], seq[seq.len() - 1]).unwrap().sqrt();
        let hops: f64 = seq.windows(2).map(|w| f.kl(w[0], w[1]).unwrap().sqrt()).sum();
        prop_assert!(direct <= kappa * hops + 1e-12, "{f}: {direct} > {kappa} * {hops}");
        Ok(())
    })
}

/// Random sparse non-negative matrix with a positive diagonal.
fn weight_matrix() -> impl Strategy<Value = (usize, Vec<f64>)> {
    (1usize..12).prop_flat_map(|n| {
        let cell = prop_oneof![2 => Just(0.0), 1 => 0.01..1.0f64];
        (Just(n), prop::collection::vec(cell, n * n)).prop_map(|(n, mut d)| {
            for i in 0..n {
                d[i * n + i] = 1.0;
            }
            (n, d)
        })
    })
}

pub fn partition_well_formed() -> Outcome {
    run(512, weight_matrix(), |(n, dense)| {
        let p = partition_from_weights(&WeightMatrix::from_dense(n, &dense), 0.0);
        let labels = p.labels();
        prop_assert_eq!(labels.len(), n);
        let m = p.regions();
        prop_assert!(labels.iter().all(|&l| l < m));
        // canonical: labels appear in order of first occurrence
        let mut next = 0;
        for &l in labels {
            prop_assert!(l <= next);
            if l == next {
                next += 1;
            }
        }
        prop_assert_eq!(next, m);
        prop_assert_eq!(p.sizes().iter().sum::<usize>(), n);
        let support = |i: usize| -> Vec<bool> { (0..n).map(|j| dense[i * n + j] > 0.0).collect() };
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(labels[i] == labels[j], support(i) == support(j));
            }
        }
        Ok(())
    })
}

fn small_run() -> impl Strategy<Value = (Vec<f64>, f64, f64, Kernel)> {
    (
        prop::collection::vec(-3.0..3.0f64, 3..40),
        0.5..60.0f64,
        1.0..30.0f64,
        kernel(),
    )
}

pub fn weight_dominance() -> Outcome {
    run(96, small_run(), |(y, lambda, hmax, k_ad)| {
        let family = Family::gaussian(1.0).unwrap();
        let design = Design::regular(y.len()).unwrap();
        let obs = Observations::new(y, &family).unwrap();
        let cfg = PsConfig {
            hmax,
            k_ad,
            ..PsConfig::with_lambda(lambda)
        };
        let smoother = Smoother::new(&design, &obs, &family, &cfg)
            .unwrap()
            .capture_weights(true);
        for state in smoother.run_trace() {
            let w = state.weights.as_ref().unwrap();
            for i in 0..design.len() {
                let (bar, n_bar) = nonadaptive_weights(&design, state.h, cfg.k_loc, i);
                let bar: HashMap<usize, f64> = bar.into_iter().collect();
                let (cols, vals) = w.row(i);
                for (&j, &v) in cols.iter().zip(vals) {
                    let b = bar.get(&(j as usize)).copied().unwrap_or(0.0);
                    prop_assert!(v <= b, "w~[{i}][{j}] = {v} > w-[{i}][{j}] = {b}");
                }
                prop_assert!(state.n_tilde[i] <= n_bar * (1.0 + 1e-12));
                prop_assert_eq!(state.n_bar[i], n_bar);
            }
        }
        Ok(())
    })
}

pub fn thread_count_determinism() -> Outcome {
    let pools: Vec<rayon::ThreadPool> = [1, 2, 5]
        .iter()
        .map(|&t| rayon::ThreadPoolBuilder::new().num_threads(t).build().unwrap())
        .collect();
    let strategy = (prop::collection::vec(0.05..5.0f64, 20..200), 1.0..40.0f64, any::<bool>());
    run(24, strategy, |(y, lambda, memory)| {
        let family = Family::Exponential;
        let design = Design::regular(y.len()).unwrap();
        let obs = Observations::new(y, &family).unwrap();
        let mut cfg = PsConfig::with_lambda(lambda);
        if memory {
            cfg = cfg.with_memory(Kernel::Triangle, 0.1, 1.0).unwrap();
        }
        let smoother = Smoother::new(&design, &obs, &family, &cfg).unwrap();
        let runs: Vec<Vec<u64>> = pools
            .iter()
            .map(|pool| {
                let last = pool.install(|| smoother.run_final());
                last.theta_hat
                    .iter()
                    .chain(&last.n_hat)
                    .map(|v| v.to_bits())
                    .collect()
            })
            .collect();
        prop_assert!(runs.windows(2).all(|w| w[0] == w[1]));
        Ok(())
    })
}

pub type Suite = (&'static str, fn() -> Outcome);

pub const SUITES: [Suite; 7] = [
    ("kernel invariants", kernel_invariants),
    ("KL non-negativity", kl_nonnegative),
    ("KL convexity", kl_convex_in_first_argument),
    ("root-KL chain inequality", chain_inequality),
    ("partition well-formedness", partition_well_formed),
    ("weight dominance", weight_dominance),
    ("thread-count determinism", thread_count_determinism),
];
