#![allow(dead_code)]

pub mod props;

use statrs::distribution::{Bernoulli, Continuous, Discrete, Exp, LogNormal, Normal, Poisson};

use propsep::Family;

/// Composite Simpson rule with `m` (even) intervals.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, m: usize) -> f64 {
    assert!(m % 2 == 0);
    let h = (b - a) / m as f64;
    let mut sum = f(a) + f(b);
    for i in 1..m {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(a + i as f64 * h);
    }
    sum * h / 3.0
}

/// `∫ p_a log(p_a / p_b)` by quadrature (continuous) or summation (discrete)
/// over densities taken from `statrs`.
pub fn kl_numeric(family: &Family, a: f64, b: f64) -> f64 {
    const M: usize = 200_000;
    match *family {
        Family::Gaussian { sigma } => {
            let (pa, pb) = (Normal::new(a, sigma).unwrap(), Normal::new(b, sigma).unwrap());
            let f = |y: f64| pa.pdf(y) * (pa.ln_pdf(y) - pb.ln_pdf(y));
            simpson(f, a - 14.0 * sigma, a + 14.0 * sigma, M)
        }
        Family::LogNormal { sigma } => {
            let (pa, pb) = (LogNormal::new(a, sigma).unwrap(), LogNormal::new(b, sigma).unwrap());
            // y = e^t, dy = e^t dt
            let f = |t: f64| {
                let y = t.exp();
                pa.pdf(y) * y * (pa.ln_pdf(y) - pb.ln_pdf(y))
            };
            simpson(f, a - 14.0 * sigma, a + 14.0 * sigma, M)
        }
        Family::Exponential => {
            // statrs uses the rate
            let (pa, pb) = (Exp::new(1.0 / a).unwrap(), Exp::new(1.0 / b).unwrap());
            let f = |y: f64| pa.pdf(y) * (pa.ln_pdf(y) - pb.ln_pdf(y));
            simpson(f, 0.0, 60.0 * a, M)
        }
        Family::Poisson => {
            let (pa, pb) = (Poisson::new(a).unwrap(), Poisson::new(b).unwrap());
            let top = (a + 40.0 * a.sqrt() + 60.0) as u64;
            (0..=top)
                .map(|k| pa.pmf(k) * (pa.ln_pmf(k) - pb.ln_pmf(k)))
                .sum()
        }
        Family::Bernoulli => {
            let (pa, pb) = (Bernoulli::new(a).unwrap(), Bernoulli::new(b).unwrap());
            [0u64, 1]
                .iter()
                .map(|&k| pa.pmf(k) * (pa.ln_pmf(k) - pb.ln_pmf(k)))
                .sum()
        }
    }
}

/// Parameter range used when drawing test pairs for a family.
pub fn test_range(family: &Family) -> (f64, f64) {
    match family {
        Family::Gaussian { .. } | Family::LogNormal { .. } => (-4.0, 4.0),
        Family::Exponential => (0.2, 8.0),
        Family::Poisson => (0.3, 25.0),
        Family::Bernoulli => (0.02, 0.98),
    }
}

pub fn all_families() -> Vec<Family> {
    vec![
        Family::gaussian(1.0).unwrap(),
        Family::gaussian(0.6).unwrap(),
        Family::Exponential,
        Family::Poisson,
        Family::Bernoulli,
        Family::lognormal(0.8).unwrap(),
    ]
}

/// `Σ_j K(|x_i − x_j| / h) y_j / Σ_j K(...)` for every `i`, kernel written
/// out by hand.
pub fn nonadaptive_brute_force(x: &[f64], y: &[f64], h: f64, kernel: impl Fn(f64) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let (mut num, mut den) = (0.0, 0.0);
            for j in 0..x.len() {
                let w = kernel((x[i] - x[j]).abs() / h);
                num += w * y[j];
                den += w;
            }
            num / den
        })
        .collect()
}

pub fn triangle(u: f64) -> f64 {
    if u < 1.0 {
        1.0 - u
    } else {
        0.0
    }
}
