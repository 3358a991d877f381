//! Monte-Carlo propagation conditions and the choice of λ.
//!
//! A curve `z(k, p)` is the empirical `(1 − p)` quantile of
//! `N̄_i^(k) · KL(θ̃_i^(k), reference)` over simulated data sets, where the
//! reference is the true parameter (homogeneous case) or the adaptive mean of
//! the true parameters (inhomogeneous case). λ is acceptable when every
//! curve is non-increasing in `k`, up to a relative slack.

use std::fmt;

use rayon::prelude::*;

use crate::algorithm::Smoother;
use crate::config::PsConfig;
use crate::design::{Design, Observations};
use crate::error::{Error, Result};
use crate::family::{ExponentialFamily, ParamInterval};
use crate::rng::stream;

/// Fewer replicates than this make tail quantiles meaningless.
pub const MIN_REPLICATES: usize = 50;

/// Rounds of bracket doubling before calibration gives up.
const MAX_WIDENING: usize = 8;

/// Which design points enter the propagation check.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Monitor {
    /// The interior midpoint only.
    #[default]
    Midpoint,
    All,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationConfig {
    pub replicates: usize,
    pub n_design: usize,
    pub p_grid: Vec<f64>,
    pub epsilon: f64,
    pub mono_slack: f64,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    pub seed: u64,
    pub monitor: Monitor,
    /// Bound on `max KL(θ_i, θ_j)` is `phi0²`; `None` skips the check.
    pub phi0: Option<f64>,
    /// Largest location bandwidth; `None` stops where the midpoint's
    /// neighborhood would reach the design boundary.
    pub hmax: Option<f64>,
    /// Tolerate increases of `z` that the non-adaptive curve of the same
    /// replicates shows as well (Monte-Carlo noise). `false` applies the
    /// plain slack rule.
    pub noise_correction: bool,
    /// λ is accepted during calibration only if the check passes on this
    /// many independent batches of `replicates` data sets each.
    pub batches: usize,
    /// Kernels and schedule for the simulated runs. λ, memory and `hmax` are
    /// overridden.
    pub base: PsConfig,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            replicates: 1000,
            n_design: 500,
            p_grid: vec![0.05, 0.1, 0.2, 0.5, 0.9],
            epsilon: 0.05,
            mono_slack: 0.02,
            lambda_lo: 1.0,
            lambda_hi: 64.0,
            seed: 1,
            monitor: Monitor::Midpoint,
            phi0: None,
            hmax: None,
            noise_correction: true,
            batches: 2,
            base: PsConfig::default(),
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates < MIN_REPLICATES {
            return Err(Error::TooFewReplicates {
                replicates: self.replicates,
                min: MIN_REPLICATES,
            });
        }
        if self.batches == 0 {
            return Err(Error::config("batches must be at least 1"));
        }
        if self.n_design < 2 {
            return Err(Error::config("calibration needs at least 2 design points"));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::config(format!("epsilon must lie in (0, 1), got {}", self.epsilon)));
        }
        if self.p_grid.is_empty() {
            return Err(Error::config("p_grid is empty"));
        }
        if self.p_grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::config("p_grid must be strictly increasing"));
        }
        if let Some(&p) = self
            .p_grid
            .iter()
            .find(|&&p| !(p >= self.epsilon && p < 1.0))
        {
            return Err(Error::config(format!(
                "p_grid entry {p} is outside [{}, 1)",
                self.epsilon
            )));
        }
        if !(self.mono_slack >= 0.0) {
            return Err(Error::config("mono_slack must be >= 0"));
        }
        if !(self.lambda_lo > 0.0 && self.lambda_lo < self.lambda_hi && self.lambda_hi.is_finite()) {
            return Err(Error::config(format!(
                "invalid lambda bracket [{}, {}]",
                self.lambda_lo, self.lambda_hi
            )));
        }
        Ok(())
    }

    fn design(&self) -> Result<Design> {
        Design::regular(self.n_design)
    }

    fn run_config(&self, lambda: f64, design: &Design) -> PsConfig {
        let hmax = self.hmax.unwrap_or_else(|| {
            let x = design.points();
            let mid = x[design.midpoint()];
            (mid - x[0]).min(x[x.len() - 1] - mid)
        });
        PsConfig {
            lambda,
            hmax,
            memory: false,
            ..self.base.clone()
        }
    }

    fn monitored(&self, design: &Design) -> Vec<usize> {
        match self.monitor {
            Monitor::Midpoint => vec![design.midpoint()],
            Monitor::All => (0..design.len()).collect(),
        }
    }
}

/// Quantile surface `z(k, p)` for one or more monitored points.
#[derive(Clone, Debug, PartialEq)]
pub struct PropagationCurve {
    pub lambda: f64,
    pub schedule: Vec<f64>,
    pub p_grid: Vec<f64>,
    pub monitored: Vec<usize>,
    /// Flat `[point][k][p]`.
    z: Vec<f64>,
    /// Same layout, for the non-adaptive estimator on the same replicates.
    z_ref: Option<Vec<f64>>,
}

impl PropagationCurve {
    pub fn steps(&self) -> usize {
        self.schedule.len()
    }

    /// `z(k, p_grid[p])` at the first monitored point.
    pub fn z(&self, k: usize, p: usize) -> f64 {
        self.z_at(0, k, p)
    }

    pub fn z_at(&self, point: usize, k: usize, p: usize) -> f64 {
        self.z[self.offset(point, k, p)]
    }

    /// Non-adaptive counterpart of [`z_at`](Self::z_at), when recorded.
    pub fn z_ref_at(&self, point: usize, k: usize, p: usize) -> Option<f64> {
        self.z_ref.as_ref().map(|r| r[self.offset(point, k, p)])
    }

    fn offset(&self, point: usize, k: usize, p: usize) -> usize {
        let (nk, np) = (self.schedule.len(), self.p_grid.len());
        (point * nk + k) * np + p
    }

    /// Builds a curve for a single point from rows `z[k][p]`.
    pub fn from_rows(lambda: f64, schedule: Vec<f64>, p_grid: Vec<f64>, rows: &[Vec<f64>]) -> Self {
        assert_eq!(rows.len(), schedule.len());
        assert!(rows.iter().all(|r| r.len() == p_grid.len()));
        PropagationCurve {
            lambda,
            schedule,
            p_grid,
            monitored: vec![0],
            z: rows.concat(),
            z_ref: None,
        }
    }

    /// Attaches a non-adaptive reference curve given as rows `z[k][p]`.
    pub fn with_reference_rows(mut self, rows: &[Vec<f64>]) -> Self {
        assert_eq!(rows.len() * self.p_grid.len(), self.z.len());
        self.z_ref = Some(rows.concat());
        self
    }
}

/// Outcome of [`check_propagation`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PropagationCheck {
    pub passed: bool,
    /// First `(point, k, p)` with `z(k + 1, p) > z(k, p) · (1 + slack)`.
    pub violation: Option<Violation>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Violation {
    pub point: usize,
    pub k: usize,
    pub p: f64,
    pub z_k: f64,
    pub z_next: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "point {} p={}: z({})={} < z({})={}",
            self.point,
            self.p,
            self.k,
            self.z_k,
            self.k + 1,
            self.z_next
        )
    }
}

/// Index of the `⌈(1 − p) R⌉`-th order statistic (0-based).
fn order_index(p: f64, r: usize) -> usize {
    let m = ((1.0 - p) * r as f64 - 1e-9).ceil() as usize;
    m.clamp(1, r) - 1
}

/// Empirical `inf{z : P(X > z) ≤ p}` for every `p` in `p_grid`.
pub fn empirical_quantiles(values: &mut [f64], p_grid: &[f64]) -> Vec<f64> {
    values.sort_by(f64::total_cmp);
    p_grid
        .iter()
        .map(|&p| values[order_index(p, values.len())])
        .collect()
}

fn curve_from_samples(
    lambda: f64,
    schedule: Vec<f64>,
    config: &CalibrationConfig,
    monitored: Vec<usize>,
    samples: Vec<Vec<f64>>,
) -> PropagationCurve {
    // samples[r] is laid out [adaptive | non-adaptive][point][k]
    let cells = monitored.len() * schedule.len();
    let mut column = vec![0.0; samples.len()];
    let mut quantiles = |offset: usize| {
        let mut z = Vec::with_capacity(cells * config.p_grid.len());
        for cell in 0..cells {
            for (slot, s) in column.iter_mut().zip(&samples) {
                *slot = s[offset + cell];
            }
            z.extend(empirical_quantiles(&mut column, &config.p_grid));
        }
        z
    };
    let z = quantiles(0);
    let z_ref = quantiles(cells);
    PropagationCurve {
        lambda,
        schedule,
        p_grid: config.p_grid.clone(),
        monitored,
        z,
        z_ref: Some(z_ref),
    }
}

fn simulate<F: ExponentialFamily + ?Sized>(
    lambda: f64,
    family: &F,
    truth: &[f64],
    config: &CalibrationConfig,
    inhomogeneous: bool,
    batch: usize,
) -> Result<PropagationCurve> {
    config.validate()?;
    let design = config.design()?;
    let ps = config.run_config(lambda, &design);
    let monitored = config.monitored(&design);
    let clamp = ps.clamp_interval(family);
    let schedule = crate::config::bandwidth_schedule(&ps, &design)?;
    let nk = schedule.len();
    let x = design.points();

    let first = (batch * config.replicates) as u64;
    let samples: Vec<Vec<f64>> = (first..first + config.replicates as u64)
        .into_par_iter()
        .map(|r| -> Result<Vec<f64>> {
            let mut rng = stream(config.seed, r);
            let y = truth.iter().map(|&t| family.sample(t, &mut rng)).collect();
            let obs = Observations::new(y, family)?;
            let mut smoother = Smoother::new(&design, &obs, family, &ps)?;
            if inhomogeneous {
                smoother = smoother.with_truth(truth)?;
            }
            let mut out = vec![0.0; 2 * monitored.len() * nk];
            let (adaptive, plain) = out.split_at_mut(monitored.len() * nk);
            for (k, &h) in schedule.iter().enumerate() {
                for (m, &i) in monitored.iter().enumerate() {
                    let (mut n_bar, mut acc, mut reference) = (0.0, 0.0, 0.0);
                    for j in design.window(i, h) {
                        let w = ps.k_loc.weight((x[j] - x[i]).abs() / h);
                        n_bar += w;
                        acc += w * obs.transformed()[j];
                        reference += w * truth[j];
                    }
                    let reference = if inhomogeneous { reference / n_bar } else { truth[i] };
                    plain[m * nk + k] = n_bar
                        * family.divergence(clamp.clamp(acc / n_bar), clamp.clamp(reference));
                }
            }
            smoother.run_observed(|s| {
                for (m, &i) in monitored.iter().enumerate() {
                    let reference = match &s.reference {
                        Some(r) => r[i],
                        None => truth[i],
                    };
                    adaptive[m * nk + s.k] = s.n_bar[i]
                        * family.divergence(clamp.clamp(s.theta_tilde[i]), clamp.clamp(reference));
                }
            });
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(curve_from_samples(lambda, schedule, config, monitored, samples))
}

/// Homogeneous curve: all observations drawn from `P_θ`.
pub fn estimate_z_curve_homogeneous<F: ExponentialFamily + ?Sized>(
    lambda: f64,
    family: &F,
    theta: f64,
    config: &CalibrationConfig,
) -> Result<PropagationCurve> {
    family.check_param(theta)?;
    let truth = vec![theta; config.n_design];
    simulate(lambda, family, &truth, config, false, 0)
}

/// Largest pairwise divergence must not exceed `phi0²`.
pub fn check_variability<F: ExponentialFamily + ?Sized>(
    family: &F,
    truth: &[f64],
    phi0: f64,
) -> Result<()> {
    let bound = phi0 * phi0;
    for (i, &a) in truth.iter().enumerate() {
        for (j, &b) in truth.iter().enumerate() {
            let kl = family.kl(a, b)?;
            if kl > bound {
                return Err(Error::VariabilityBoundViolated { i, j, kl, bound });
            }
        }
    }
    Ok(())
}

/// Inhomogeneous curve: observations follow `truth` and the reference is the
/// adaptive mean `Σ_j w̃_ij θ_j / Ñ_i` of each replicate.
pub fn estimate_z_curve_inhomogeneous<F: ExponentialFamily + ?Sized>(
    lambda: f64,
    family: &F,
    truth: &[f64],
    config: &CalibrationConfig,
) -> Result<PropagationCurve> {
    if truth.len() != config.n_design {
        return Err(Error::LengthMismatch {
            expected: config.n_design,
            actual: truth.len(),
        });
    }
    for &t in truth {
        family.check_param(t)?;
    }
    if let Some(phi0) = config.phi0 {
        check_variability(family, truth, phi0)?;
    }
    simulate(lambda, family, truth, config, true, 0)
}

/// Checks `z(k + 1, p) ≤ z(k, p) · (1 + slack)` for every monitored point,
/// every `k` and every `p`.
///
/// With `noise_correction` and a recorded reference, the right-hand side
/// additionally allows `max(0, z_ref(k + 1, p) − z_ref(k, p))`: the exact
/// non-adaptive curve never increases, so any increase it shows is sampling
/// noise shared with the adaptive curve through common random numbers.
pub fn check_propagation(curve: &PropagationCurve, config: &CalibrationConfig) -> PropagationCheck {
    for point in 0..curve.monitored.len() {
        for k in 0..curve.steps().saturating_sub(1) {
            for (pi, &p) in curve.p_grid.iter().enumerate() {
                let z_k = curve.z_at(point, k, pi);
                let z_next = curve.z_at(point, k + 1, pi);
                let noise = match curve.z_ref_at(point, k, pi) {
                    Some(r_k) if config.noise_correction => {
                        let r_next = curve.z_ref_at(point, k + 1, pi).unwrap_or(r_k);
                        (r_next - r_k).max(0.0)
                    }
                    _ => 0.0,
                };
                if z_next > z_k * (1.0 + config.mono_slack) + noise {
                    return PropagationCheck {
                        passed: false,
                        violation: Some(Violation {
                            point: curve.monitored[point],
                            k,
                            p,
                            z_k,
                            z_next,
                        }),
                    };
                }
            }
        }
    }
    PropagationCheck {
        passed: true,
        violation: None,
    }
}

/// Result of [`calibrate_lambda`].
#[derive(Clone, Debug)]
pub struct Calibration {
    pub lambda: f64,
    /// Curve at the returned λ.
    pub curve: PropagationCurve,
    /// Every λ tried, in order, with its verdict.
    pub evaluations: Vec<(f64, bool)>,
}

/// Smallest λ (to 1% relative precision) whose homogeneous curves are
/// non-increasing, by bisection on `ln λ`.
///
/// A candidate passes when the check holds on every one of
/// `config.batches` independent replicate batches; a single batch lets the
/// bisection settle on a value that merely got lucky with its noise. The
/// returned curve is the one of the last batch evaluated at that λ.
pub fn calibrate_lambda<F: ExponentialFamily + ?Sized>(
    family: &F,
    theta: f64,
    config: &CalibrationConfig,
) -> Result<Calibration> {
    config.validate()?;
    let mut evaluations = Vec::new();
    family.check_param(theta)?;
    let truth = vec![theta; config.n_design];
    let mut eval = |lambda: f64| -> Result<(bool, PropagationCurve)> {
        let mut curve = simulate(lambda, family, &truth, config, false, 0)?;
        let mut passed = check_propagation(&curve, config).passed;
        for batch in 1..config.batches {
            if !passed {
                break;
            }
            curve = simulate(lambda, family, &truth, config, false, batch)?;
            passed = check_propagation(&curve, config).passed;
        }
        evaluations.push((lambda, passed));
        Ok((passed, curve))
    };

    let mut hi = config.lambda_hi;
    let (mut passed, mut hi_curve) = eval(hi)?;
    let mut widen = 0;
    while !passed {
        if widen == MAX_WIDENING {
            return Err(Error::CalibrationInfeasible { lambda_hi: hi });
        }
        hi *= 2.0;
        widen += 1;
        (passed, hi_curve) = eval(hi)?;
    }

    let mut lo = config.lambda_lo;
    let mut widen = 0;
    loop {
        let (passed, curve) = eval(lo)?;
        if !passed {
            break;
        }
        hi = lo;
        hi_curve = curve;
        if widen == MAX_WIDENING {
            // Every λ tried passes; report the smallest.
            return Ok(Calibration {
                lambda: hi,
                curve: hi_curve,
                evaluations,
            });
        }
        lo /= 2.0;
        widen += 1;
    }

    while hi / lo > 1.01 {
        let mid = (lo * hi).sqrt();
        let (passed, curve) = eval(mid)?;
        if passed {
            hi = mid;
            hi_curve = curve;
        } else {
            lo = mid;
        }
    }
    Ok(Calibration {
        lambda: hi,
        curve: hi_curve,
        evaluations,
    })
}

/// `λ_φ = κ⁴ (√λ + φ)²`.
pub fn lambda_phi(lambda_hom: f64, kappa: f64, phi: f64) -> f64 {
    let k2 = kappa * kappa;
    // expanded so that φ = 0 returns κ⁴λ without a square-root round trip
    k2 * k2 * (lambda_hom + 2.0 * phi * lambda_hom.sqrt() + phi * phi)
}

/// Fraction of simulated data sets with some `T(Y_i)` outside `interval`.
pub fn estimate_p_kappa<F: ExponentialFamily + ?Sized>(
    family: &F,
    truth: &[f64],
    interval: ParamInterval,
    config: &CalibrationConfig,
) -> Result<f64> {
    config.validate()?;
    for &t in truth {
        family.check_param(t)?;
    }
    let hits: usize = (0..config.replicates as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(config.seed, r);
            let outside = truth
                .iter()
                .map(|&t| family.sufficient_statistic(family.sample(t, &mut rng)))
                .any(|v| !interval.contains(v));
            usize::from(outside)
        })
        .sum();
    Ok(hits as f64 / config.replicates as f64)
}

/// Monte-Carlo estimate of `p^(l)_θ(z)` for `l ∈ {1, 2, 3}`:
///
/// * `l = 1`: `P(T(Y) > θ, KL(T(Y), θ) > z)`
/// * `l = 2`: `P(T(Y) ≤ θ, KL(T(Y), θ) > z)`
/// * `l = 3`: `P(T(Y) ≤ θ, KL(T(Y), θ) ≤ z)`
///
/// `T(Y)` is clamped into the working interval before the divergence.
pub fn estimate_p_l<F: ExponentialFamily + ?Sized>(
    family: &F,
    theta: f64,
    z: f64,
    l: u8,
    config: &CalibrationConfig,
) -> Result<f64> {
    config.validate()?;
    family.check_param(theta)?;
    if !(1..=3).contains(&l) {
        return Err(Error::config(format!("l must be 1, 2 or 3, got {l}")));
    }
    let clamp = config.base.clamp_interval(family);
    let mut rng = stream(config.seed, 0);
    let mut hits = 0usize;
    for _ in 0..config.replicates {
        let t = family.sufficient_statistic(family.sample(theta, &mut rng));
        let above = t > theta;
        let far = family.divergence(clamp.clamp(t), theta) > z;
        let hit = match l {
            1 => above && far,
            2 => !above && far,
            _ => !above && !far,
        };
        hits += usize::from(hit);
    }
    Ok(hits as f64 / config.replicates as f64)
}
