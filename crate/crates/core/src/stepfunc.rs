//! Partitions induced by adaptive weights and the associated step function.
//!
//! Points `i` and `j` share a region when their rows of adaptive weights
//! have the same positive support. Within a region the estimates are
//! replaced by their arithmetic mean.

use std::collections::HashMap;

use crate::algorithm::{IterationState, Smoother};
use crate::design::Design;
use crate::error::{Error, Result};
use crate::family::ExponentialFamily;
use crate::kernels::Kernel;
use crate::weights::WeightMatrix;

/// Region labels `0..m`, numbered in order of each region's smallest member.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Partition {
    labels: Vec<usize>,
    m: usize,
}

impl Partition {
    /// Canonicalizes arbitrary labels.
    pub fn from_labels<T: Eq + std::hash::Hash + Clone>(raw: &[T]) -> Self {
        let mut seen = HashMap::new();
        let labels = raw
            .iter()
            .map(|l| {
                let next = seen.len();
                *seen.entry(l.clone()).or_insert(next)
            })
            .collect();
        Partition {
            labels,
            m: seen.len(),
        }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    /// Number of regions.
    pub fn regions(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.m];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    /// Members of every region, each in ascending order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.m];
        for (i, &l) in self.labels.iter().enumerate() {
            members[l].push(i);
        }
        members
    }
}

/// Groups points whose weight rows have identical support
/// `{j : w_ij > threshold}`.
pub fn partition_from_weights(weights: &WeightMatrix, threshold: f64) -> Partition {
    let supports: Vec<Vec<u32>> = (0..weights.n())
        .map(|i| {
            let (cols, vals) = weights.row(i);
            cols.iter()
                .zip(vals)
                .filter(|&(_, &w)| w > threshold)
                .map(|(&j, _)| j)
                .collect()
        })
        .collect();
    Partition::from_labels(&supports)
}

/// Piecewise constant function over a partition.
#[derive(Clone, Debug, PartialEq)]
pub struct StepFunction {
    pub partition: Partition,
    /// Mean estimate per region.
    pub values: Vec<f64>,
}

impl StepFunction {
    pub fn eval(&self, i: usize) -> f64 {
        self.values[self.partition.label(i)]
    }

    /// The step function at every design point.
    pub fn fitted(&self) -> Vec<f64> {
        self.partition.labels().iter().map(|&l| self.values[l]).collect()
    }
}

/// Region-wise arithmetic means of `estimates`.
pub fn associated_step_function(partition: &Partition, estimates: &[f64]) -> Result<StepFunction> {
    if estimates.len() != partition.len() {
        return Err(Error::LengthMismatch {
            expected: partition.len(),
            actual: estimates.len(),
        });
    }
    let mut sums = vec![0.0; partition.regions()];
    for (&l, &e) in partition.labels().iter().zip(estimates) {
        sums[l] += e;
    }
    let values = sums
        .iter()
        .zip(partition.sizes())
        .map(|(s, c)| s / c as f64)
        .collect();
    Ok(StepFunction {
        partition: partition.clone(),
        values,
    })
}

/// Worst case of `KL(θ̆_i, θ̃_i) − max{λ / Ñ_j : j ∈ H_i}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepBound {
    pub holds: bool,
    /// Largest `KL − bound`; non-positive when the bound holds everywhere.
    pub worst_margin: f64,
    pub worst_index: usize,
}

pub const STEP_BOUND_TOLERANCE: f64 = 1e-12;

/// Checks `KL(θ̆_i, θ̃_i) ≤ max{λ / Ñ_j : X_j ∈ H_i}` at every point, with the
/// adaptive estimates and weight sums of `state`. Parameters are clamped
/// into the family's working interval first, as in the iteration.
pub fn verify_step_bound<F: ExponentialFamily + ?Sized>(
    stepf: &StepFunction,
    state: &IterationState,
    family: &F,
    lambda: f64,
) -> Result<StepBound> {
    let n = stepf.partition.len();
    if state.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: state.len(),
        });
    }
    let clamp = family.working_interval();
    let mut bound = vec![0.0f64; stepf.partition.regions()];
    for (i, &l) in stepf.partition.labels().iter().enumerate() {
        bound[l] = bound[l].max(lambda / state.n_tilde[i]);
    }
    let mut worst = StepBound {
        holds: true,
        worst_margin: f64::NEG_INFINITY,
        worst_index: 0,
    };
    for i in 0..n {
        let kl = family.divergence(clamp.clamp(stepf.eval(i)), clamp.clamp(state.theta_tilde[i]));
        let margin = kl - bound[stepf.partition.label(i)];
        if margin > worst.worst_margin {
            worst.worst_margin = margin;
            worst.worst_index = i;
        }
    }
    worst.holds = worst.worst_margin <= STEP_BOUND_TOLERANCE;
    Ok(worst)
}

/// `KL^{1/2}(θ1, θ2) > κ (√(λ / Ñ_1) + √z1 + √z2)`.
#[allow(clippy::too_many_arguments)]
pub fn separation_predicate<F: ExponentialFamily + ?Sized>(
    family: &F,
    kappa: f64,
    lambda: f64,
    n_tilde_1: f64,
    z1: f64,
    z2: f64,
    theta_1: f64,
    theta_2: f64,
) -> bool {
    let lhs = family.divergence(theta_1, theta_2).sqrt();
    lhs > kappa * ((lambda / n_tilde_1).sqrt() + z1.sqrt() + z2.sqrt())
}

/// Effective sample sizes with respect to known homogeneity regions.
#[derive(Clone, Debug, PartialEq)]
pub struct EffectiveSampleSize {
    /// `n̄_i = Σ_{X_j ∈ V_i ∩ U_i} w̄_ij`.
    pub n_bar: Vec<f64>,
    /// `n_i = min_{X_j ∈ U_i} n̄_j`.
    pub local_min: Vec<f64>,
}

/// Location-weight mass inside each point's true region `V_i`, where `U_i`
/// is the support of `w̄_i·` at bandwidth `h`.
pub fn effective_sample_size(
    design: &Design,
    truth_partition: &Partition,
    h: f64,
    k_loc: Kernel,
) -> Result<EffectiveSampleSize> {
    let n = design.len();
    if truth_partition.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: truth_partition.len(),
        });
    }
    let support = |i: usize| {
        design
            .window(i, h)
            .filter(move |&j| k_loc.weight(design.distance(i, j) / h) > 0.0)
    };
    let n_bar: Vec<f64> = (0..n)
        .map(|i| {
            support(i)
                .filter(|&j| truth_partition.label(j) == truth_partition.label(i))
                .map(|j| k_loc.weight(design.distance(i, j) / h))
                .sum()
        })
        .collect();
    let local_min = (0..n)
        .map(|i| support(i).map(|j| n_bar[j]).fold(f64::INFINITY, f64::min))
        .collect();
    Ok(EffectiveSampleSize { n_bar, local_min })
}

/// Outcome of [`partition_stability`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stability {
    /// The partition is the same from this step on.
    Since(usize),
    NotStabilized,
}

/// First step after which all partitions coincide up to relabeling.
pub fn partition_stability(partitions: &[Partition]) -> Result<Stability> {
    if partitions.len() < 2 {
        return Err(Error::config("stability needs at least two partitions"));
    }
    let last = &partitions[partitions.len() - 1];
    if partitions[partitions.len() - 2] != *last {
        return Ok(Stability::NotStabilized);
    }
    let since = partitions
        .iter()
        .rposition(|p| p != last)
        .map_or(0, |k| k + 1);
    Ok(Stability::Since(since))
}

/// Runs `smoother` and returns, for every step `k`, the partition induced by
/// the weights of step `k + 1`; the last one uses
/// [`Smoother::final_weights`]. Also returns the final state.
pub fn partition_trace<F: ExponentialFamily + ?Sized>(
    smoother: &Smoother<'_, F>,
) -> (Vec<Partition>, IterationState) {
    let mut partitions = Vec::with_capacity(smoother.schedule().len());
    let mut state = smoother.initial_state();
    while let Some(next) = smoother.advance(&state) {
        let partition = match &next.weights {
            Some(w) => partition_from_weights(w, 0.0),
            None => partition_from_weights(&smoother.adaptive_weights(&state, next.h), 0.0),
        };
        partitions.push(partition);
        state = next;
    }
    partitions.push(partition_from_weights(&smoother.final_weights(&state), 0.0));
    (partitions, state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::Family;

    fn block_weights(blocks: &[usize]) -> WeightMatrix {
        let n: usize = blocks.iter().sum();
        let mut dense = vec![0.0; n * n];
        let mut start = 0;
        for &b in blocks {
            for i in start..start + b {
                for j in start..start + b {
                    dense[i * n + j] = 0.5;
                }
            }
            start += b;
        }
        WeightMatrix::from_dense(n, &dense)
    }

    #[test]
    fn partitions_from_support() {
        let all = WeightMatrix::from_dense(3, &[1.0; 9]);
        assert_eq!(partition_from_weights(&all, 0.0).regions(), 1);
        let p = partition_from_weights(&block_weights(&[2, 3, 1]), 0.0);
        assert_eq!(p.labels(), &[0, 0, 1, 1, 1, 2]);
        assert_eq!(p.sizes(), vec![2, 3, 1]);
        assert_eq!(p.members()[1], vec![2, 3, 4]);
    }

    #[test]
    fn threshold_ignores_small_weights() {
        let dense = vec![1.0, 1e-6, 1e-6, 1.0];
        let w = WeightMatrix::from_dense(2, &dense);
        assert_eq!(partition_from_weights(&w, 0.0).regions(), 1);
        assert_eq!(partition_from_weights(&w, 1e-3).regions(), 2);
    }

    #[test]
    fn labels_are_canonical() {
        let p = Partition::from_labels(&["b", "a", "b", "c"]);
        assert_eq!(p.labels(), &[0, 1, 0, 2]);
        assert_eq!(Partition::from_labels(&[7, 3, 7, 9]), p);
    }

    #[test]
    fn step_values() {
        let p = Partition::from_labels(&[0, 0, 1]);
        let s = associated_step_function(&p, &[1.0, 3.0, 7.0]).unwrap();
        assert_eq!(s.values, vec![2.0, 7.0]);
        assert_eq!(s.fitted(), vec![2.0, 2.0, 7.0]);
        let again = associated_step_function(&p, &s.fitted()).unwrap();
        assert_eq!(again, s);
        let one = Partition::from_labels(&[0, 0, 0, 0]);
        let s = associated_step_function(&one, &[1.0, 2.0, 3.0, 6.0]).unwrap();
        assert_eq!(s.values, vec![3.0]);
        assert!(associated_step_function(&one, &[1.0]).is_err());
    }

    fn state(theta: Vec<f64>, n_tilde: Vec<f64>) -> IterationState {
        IterationState {
            k: 0,
            h: 1.0,
            theta_tilde: theta.clone(),
            n_tilde: n_tilde.clone(),
            n_bar: n_tilde.clone(),
            theta_hat: theta,
            n_hat: n_tilde.clone(),
            n_hat_max: n_tilde,
            weights: None,
            reference: None,
        }
    }

    #[test]
    fn step_bound_detects_violations() {
        let fam = Family::gaussian(1.0).unwrap();
        let one = Partition::from_labels(&[0, 0, 0]);
        let flat = state(vec![2.0; 3], vec![5.0; 3]);
        let s = associated_step_function(&one, &flat.theta_tilde).unwrap();
        let b = verify_step_bound(&s, &flat, &fam, 1.0).unwrap();
        assert!(b.holds && b.worst_margin <= 0.0);
        // mean 3; KL(3, 0) = 4.5 > λ / Ñ = 0.2
        let spread = state(vec![0.0, 3.0, 6.0], vec![5.0; 3]);
        let s = associated_step_function(&one, &spread.theta_tilde).unwrap();
        let b = verify_step_bound(&s, &spread, &fam, 1.0).unwrap();
        assert!(!b.holds);
        assert!((b.worst_margin - 4.3).abs() < 1e-12);
    }

    #[test]
    fn separation_threshold() {
        let fam = Family::gaussian(1.0).unwrap();
        let edge = 2.0 * 2f64.sqrt();
        assert!(!separation_predicate(&fam, 1.0, 1.0, 1.0, 0.25, 0.25, 0.0, 0.0));
        assert!(!separation_predicate(&fam, 1.0, 1.0, 1.0, 0.25, 0.25, 0.0, edge - 1e-9));
        assert!(separation_predicate(&fam, 1.0, 1.0, 1.0, 0.25, 0.25, 0.0, edge + 1e-9));
        // λ → 0: only the accuracies remain, threshold κ(√z1 + √z2) = 1
        assert!(separation_predicate(&fam, 1.0, 1e-300, 1.0, 0.25, 0.25, 0.0, 1.5));
        assert!(!separation_predicate(&fam, 1.0, 1e-300, 1.0, 0.25, 0.25, 0.0, 1.4));
    }

    #[test]
    fn effective_sizes() {
        let d = Design::regular(10).unwrap();
        let one = Partition::from_labels(&[0; 10]);
        let e = effective_sample_size(&d, &one, 2.0, Kernel::Uniform).unwrap();
        assert_eq!(e.n_bar[5], 3.0);
        assert_eq!(e.n_bar[0], 2.0);
        assert_eq!(e.local_min[1], 2.0);
        let two = Partition::from_labels(&[0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
        let e = effective_sample_size(&d, &two, 2.0, Kernel::Uniform).unwrap();
        assert_eq!(e.n_bar[4], 2.0);
        assert_eq!(e.n_bar[5], 2.0);
        assert_eq!(e.n_bar[3], 3.0);
        assert_eq!(e.local_min[3], 2.0);
    }

    #[test]
    fn stability() {
        let a = Partition::from_labels(&[0, 1, 1]);
        let b = Partition::from_labels(&[0, 0, 0]);
        assert_eq!(partition_stability(&[a.clone(), a.clone()]).unwrap(), Stability::Since(0));
        assert_eq!(
            partition_stability(&[b.clone(), a.clone(), a.clone()]).unwrap(),
            Stability::Since(1)
        );
        assert_eq!(partition_stability(&[a.clone(), b]).unwrap(), Stability::NotStabilized);
        assert!(partition_stability(&[a]).is_err());
    }
}
