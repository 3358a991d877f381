//! The propagation-separation iteration.
//!
//! Step `k` reads only the state of step `k − 1` (synchronous update), so
//! every row `i` is computed independently and the result does not depend on
//! evaluation order or thread count.
//!
//! For each point the step forms location weights `w̄_ij = K_loc(δ_ij / h)`,
//! the statistical penalty `s_ij = N_i · KL(θ_i, θ_j)` from the previous
//! estimates, the adaptive weights `w̃_ij = w̄_ij · K_ad(s_ij / λ)` and the
//! weighted mean of the sufficient statistics. The optional memory step then
//! relaxes the new estimate towards the previous one.

use rayon::prelude::*;

use crate::config::{bandwidth_schedule, PenaltyVariant, PsConfig};
use crate::design::{Design, Observations};
use crate::error::{Error, Result};
use crate::family::{ExponentialFamily, ParamInterval};
use crate::weights::WeightMatrix;

/// Everything known after one iteration step.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationState {
    pub k: usize,
    pub h: f64,
    /// Adaptive estimates θ̃_i^(k).
    pub theta_tilde: Vec<f64>,
    /// Adaptive weight sums Ñ_i^(k); at least 1 because of the self weight.
    pub n_tilde: Vec<f64>,
    /// Location weight sums N̄_i^(k).
    pub n_bar: Vec<f64>,
    /// Relaxed estimates θ̂_i^(k); identical to `theta_tilde` without memory.
    pub theta_hat: Vec<f64>,
    pub n_hat: Vec<f64>,
    /// Running maximum of `n_hat` over steps `0..=k`.
    pub n_hat_max: Vec<f64>,
    /// Adaptive weights w̃^(k) of this step, when captured.
    pub weights: Option<WeightMatrix>,
    /// `Σ_j w̃_ij θ_j / Ñ_i` for the true parameters, when supplied.
    pub reference: Option<Vec<f64>>,
}

impl IterationState {
    pub fn len(&self) -> usize {
        self.theta_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta_hat.is_empty()
    }

    /// The estimator returned by the algorithm at this step.
    pub fn estimates(&self) -> &[f64] {
        &self.theta_hat
    }

    fn penalty_prefactor(&self, variant: PenaltyVariant) -> &[f64] {
        match variant {
            PenaltyVariant::Standard => &self.n_hat,
            PenaltyVariant::Max => &self.n_hat_max,
        }
    }
}

#[derive(Default)]
struct Row {
    theta: f64,
    n_tilde: f64,
    n_bar: f64,
    reference: f64,
    weights: Vec<(u32, f64)>,
}

/// Drives the iteration over a fixed design, data set and configuration.
#[derive(Debug)]
pub struct Smoother<'a, F: ExponentialFamily + ?Sized> {
    design: &'a Design,
    obs: &'a Observations,
    family: &'a F,
    config: &'a PsConfig,
    schedule: Vec<f64>,
    clamp: ParamInterval,
    truth: Option<&'a [f64]>,
    capture: bool,
}

impl<'a, F: ExponentialFamily + ?Sized> Smoother<'a, F> {
    pub fn new(
        design: &'a Design,
        obs: &'a Observations,
        family: &'a F,
        config: &'a PsConfig,
    ) -> Result<Self> {
        if obs.len() != design.len() {
            return Err(Error::LengthMismatch {
                expected: design.len(),
                actual: obs.len(),
            });
        }
        let schedule = bandwidth_schedule(config, design)?;
        Ok(Smoother {
            design,
            obs,
            family,
            config,
            schedule,
            clamp: config.clamp_interval(family),
            truth: None,
            capture: false,
        })
    }

    /// Also track the adaptive mean of the true parameters in every state.
    pub fn with_truth(mut self, truth: &'a [f64]) -> Result<Self> {
        if truth.len() != self.design.len() {
            return Err(Error::LengthMismatch {
                expected: self.design.len(),
                actual: truth.len(),
            });
        }
        self.truth = Some(truth);
        Ok(self)
    }

    /// Keep the adaptive weights in every produced state.
    pub fn capture_weights(mut self, capture: bool) -> Self {
        self.capture = capture;
        self
    }

    pub fn schedule(&self) -> &[f64] {
        &self.schedule
    }

    pub fn config(&self) -> &PsConfig {
        self.config
    }

    /// Index of the last step, k*.
    pub fn last_step(&self) -> usize {
        self.schedule.len() - 1
    }

    pub fn clamp_interval(&self) -> ParamInterval {
        self.clamp
    }

    fn rows(&self, prev: Option<&IterationState>, h: f64, capture: bool) -> Vec<Row> {
        let x = self.design.points();
        let t = self.obs.transformed();
        let k_loc = self.config.k_loc;
        let k_ad = self.config.k_ad;
        let lambda = self.config.lambda;
        let family = self.family;
        let truth = self.truth;
        let clamped: Option<Vec<f64>> =
            prev.map(|p| p.theta_hat.iter().map(|&v| self.clamp.clamp(v)).collect());
        let prefactor = prev.map(|p| p.penalty_prefactor(self.config.penalty));

        (0..self.design.len())
            .into_par_iter()
            .map(|i| {
                let xi = x[i];
                let mut row = Row::default();
                let mut acc = 0.0;
                for j in self.design.window(i, h) {
                    let wbar = k_loc.weight((x[j] - xi).abs() / h);
                    if wbar <= 0.0 {
                        continue;
                    }
                    row.n_bar += wbar;
                    let w = match (&clamped, prefactor) {
                        (Some(c), Some(pref)) => {
                            let s = pref[i] * family.divergence(c[i], c[j]);
                            wbar * k_ad.weight(s / lambda)
                        }
                        _ => wbar,
                    };
                    if w > 0.0 {
                        row.n_tilde += w;
                        acc += w * t[j];
                        if let Some(truth) = truth {
                            row.reference += w * truth[j];
                        }
                        if capture {
                            row.weights.push((j as u32, w));
                        }
                    }
                }
                row.theta = acc / row.n_tilde;
                row.reference /= row.n_tilde;
                row
            })
            .collect()
    }

    fn state_from_rows(&self, k: usize, h: f64, rows: Vec<Row>, capture: bool) -> IterationState {
        let n = rows.len();
        let mut theta = Vec::with_capacity(n);
        let mut n_tilde = Vec::with_capacity(n);
        let mut n_bar = Vec::with_capacity(n);
        let mut reference = Vec::with_capacity(n);
        let mut weight_rows = Vec::with_capacity(if capture { n } else { 0 });
        for row in rows {
            theta.push(row.theta);
            n_tilde.push(row.n_tilde);
            n_bar.push(row.n_bar);
            reference.push(row.reference);
            if capture {
                weight_rows.push(row.weights);
            }
        }
        IterationState {
            k,
            h,
            theta_hat: theta.clone(),
            n_hat: n_tilde.clone(),
            n_hat_max: n_tilde.clone(),
            theta_tilde: theta,
            n_tilde,
            n_bar,
            weights: capture.then(|| WeightMatrix::from_rows(weight_rows)),
            reference: self.truth.map(|_| reference),
        }
    }

    /// Step 0: the non-adaptive estimator at `h^(0)`.
    pub fn initial_state(&self) -> IterationState {
        let h = self.schedule[0];
        let rows = self.rows(None, h, self.capture);
        self.state_from_rows(0, h, rows, self.capture)
    }

    /// Adaptive part of step `prev.k + 1` at bandwidth `h`, without memory.
    pub fn adaptive_step(&self, prev: &IterationState, h: f64) -> IterationState {
        let rows = self.rows(Some(prev), h, self.capture);
        let mut state = self.state_from_rows(prev.k + 1, h, rows, self.capture);
        for (m, &p) in state.n_hat_max.iter_mut().zip(&prev.n_hat_max) {
            *m = m.max(p);
        }
        state
    }

    /// Relaxes `new` towards `prev` as in the memory step.
    pub fn memory_step(&self, mut new: IterationState, prev: &IterationState) -> IterationState {
        let tau = self.config.memory_bandwidth(new.h);
        let eta0 = self.config.eta0;
        for i in 0..new.len() {
            let penalty = new.n_bar[i]
                * self.family.divergence(
                    self.clamp.clamp(new.theta_tilde[i]),
                    self.clamp.clamp(prev.theta_hat[i]),
                );
            let eta = (1.0 - eta0) * self.config.k_me.weight(penalty / tau);
            new.theta_hat[i] = eta * new.theta_tilde[i] + (1.0 - eta) * prev.theta_hat[i];
            new.n_hat[i] = eta * new.n_tilde[i] + (1.0 - eta) * prev.n_hat[i];
            new.n_hat_max[i] = prev.n_hat_max[i].max(new.n_hat[i]);
        }
        new
    }

    /// The next full step, or `None` once the schedule is exhausted.
    pub fn advance(&self, prev: &IterationState) -> Option<IterationState> {
        let h = *self.schedule.get(prev.k + 1)?;
        Some(self.step(prev, h))
    }

    /// A full step (adaptive part plus memory, if enabled) at bandwidth `h`,
    /// regardless of the schedule.
    pub fn step(&self, prev: &IterationState, h: f64) -> IterationState {
        let new = self.adaptive_step(prev, h);
        if self.config.memory {
            self.memory_step(new, prev)
        } else {
            new
        }
    }

    /// Adaptive weights at bandwidth `h` computed from the estimates in `prev`.
    pub fn adaptive_weights(&self, prev: &IterationState, h: f64) -> WeightMatrix {
        let rows = self.rows(Some(prev), h, true);
        WeightMatrix::from_rows(rows.into_iter().map(|r| r.weights).collect())
    }

    /// Weights `w̄^(k*) · K_ad(s / λ)` with the penalty taken from the final
    /// estimates; this closes the partition at the last step.
    pub fn final_weights(&self, last: &IterationState) -> WeightMatrix {
        self.adaptive_weights(last, last.h)
    }

    /// Dense row-major `K_ad(s_ij / λ)` for all pairs, penalties from `prev`.
    pub fn adaptation_factors(&self, prev: &IterationState) -> Vec<f64> {
        let n = self.design.len();
        let pref = prev.penalty_prefactor(self.config.penalty);
        let c: Vec<f64> = prev.theta_hat.iter().map(|&v| self.clamp.clamp(v)).collect();
        let mut out = vec![0.0; n * n];
        out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            for (j, v) in row.iter_mut().enumerate() {
                let s = pref[i] * self.family.divergence(c[i], c[j]);
                *v = self.config.k_ad.weight(s / self.config.lambda);
            }
        });
        out
    }

    /// Runs every step, calling `observe` on each state, and returns the last.
    pub fn run_observed(&self, mut observe: impl FnMut(&IterationState)) -> IterationState {
        let mut state = self.initial_state();
        observe(&state);
        while let Some(next) = self.advance(&state) {
            observe(&next);
            state = next;
        }
        state
    }

    pub fn run_final(&self) -> IterationState {
        self.run_observed(|_| {})
    }

    pub fn run_trace(&self) -> Vec<IterationState> {
        let mut trace = Vec::with_capacity(self.schedule.len());
        let mut state = self.initial_state();
        while let Some(next) = self.advance(&state) {
            trace.push(std::mem::replace(&mut state, next));
        }
        trace.push(state);
        trace
    }
}

/// Result of [`run`]: the schedule and one state per step.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub schedule: Vec<f64>,
    pub trace: Vec<IterationState>,
}

impl RunOutput {
    pub fn final_state(&self) -> &IterationState {
        self.trace.last().expect("trace holds at least step 0")
    }
}

/// Runs the full iteration and keeps every state.
pub fn run<F: ExponentialFamily + ?Sized>(
    design: &Design,
    obs: &Observations,
    family: &F,
    config: &PsConfig,
) -> Result<RunOutput> {
    let smoother = Smoother::new(design, obs, family, config)?;
    Ok(RunOutput {
        schedule: smoother.schedule().to_vec(),
        trace: smoother.run_trace(),
    })
}

/// One adaptive step (no memory) from `prev` at bandwidth `h`.
pub fn ps_step<F: ExponentialFamily + ?Sized>(
    prev: &IterationState,
    design: &Design,
    obs: &Observations,
    family: &F,
    config: &PsConfig,
    h: f64,
) -> Result<IterationState> {
    Ok(Smoother::new(design, obs, family, config)?.adaptive_step(prev, h))
}

/// Applies the memory step to `new`, relative to `prev`.
pub fn memory_step<F: ExponentialFamily + ?Sized>(
    new: IterationState,
    prev: &IterationState,
    design: &Design,
    obs: &Observations,
    family: &F,
    config: &PsConfig,
) -> Result<IterationState> {
    Ok(Smoother::new(design, obs, family, config)?.memory_step(new, prev))
}

/// Location weights of row `i` and their sum `N̄_i`.
pub fn nonadaptive_weights(
    design: &Design,
    h: f64,
    k_loc: crate::kernels::Kernel,
    i: usize,
) -> (Vec<(usize, f64)>, f64) {
    let x = design.points();
    let row: Vec<(usize, f64)> = design
        .window(i, h)
        .filter_map(|j| {
            let w = k_loc.weight((x[j] - x[i]).abs() / h);
            (w > 0.0).then_some((j, w))
        })
        .collect();
    let sum = row.iter().map(|&(_, w)| w).sum();
    (row, sum)
}

/// `s_ij` as used by the step following `state`.
pub fn statistical_penalty<F: ExponentialFamily + ?Sized>(
    state: &IterationState,
    family: &F,
    config: &PsConfig,
    i: usize,
    j: usize,
) -> f64 {
    let clamp = config.clamp_interval(family);
    state.penalty_prefactor(config.penalty)[i]
        * family.divergence(clamp.clamp(state.theta_hat[i]), clamp.clamp(state.theta_hat[j]))
}

/// `Σ_j w̃_ij θ_j / Ñ_i` from the weights captured in `state`.
pub fn adaptive_reference_mean(state: &IterationState, truth: &[f64]) -> Result<Vec<f64>> {
    let weights = state.weights.as_ref().ok_or(Error::MissingWeights(state.k))?;
    if truth.len() != weights.n() {
        return Err(Error::LengthMismatch {
            expected: weights.n(),
            actual: truth.len(),
        });
    }
    Ok((0..weights.n())
        .map(|i| {
            let (cols, vals) = weights.row(i);
            let num: f64 = cols.iter().zip(vals).map(|(&j, &w)| w * truth[j as usize]).sum();
            num / state.n_tilde[i]
        })
        .collect())
}
