use std::fmt;
use std::str::FromStr;

use crate::design::Design;
use crate::error::{Error, Result};
use crate::family::{ExponentialFamily, ParamInterval, CLAMP_SHRINK};
use crate::kernels::Kernel;

/// How the prefactor of the statistical penalty is formed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PenaltyVariant {
    /// `s_ij = N_i^(k−1) · KL(θ_i^(k−1), θ_j^(k−1))`.
    #[default]
    Standard,
    /// The prefactor is the running maximum `max_{k' ≤ k} N_i^(k'−1)`, so an
    /// achieved separation cannot be undone by a shrinking weight sum.
    Max,
}

impl fmt::Display for PenaltyVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PenaltyVariant::Standard => "standard",
            PenaltyVariant::Max => "max",
        })
    }
}

impl FromStr for PenaltyVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(PenaltyVariant::Standard),
            "max" => Ok(PenaltyVariant::Max),
            _ => Err(Error::config(format!("unknown penalty variant `{s}`"))),
        }
    }
}

/// All inputs of the iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct PsConfig {
    /// Adaptation bandwidth λ. `f64::INFINITY` gives the non-adaptive estimator.
    pub lambda: f64,
    /// Initial location bandwidth; `None` picks `0.9 ·` the minimal spacing.
    pub h0: Option<f64>,
    pub growth: f64,
    pub hmax: f64,
    pub k_loc: Kernel,
    pub k_ad: Kernel,
    pub k_me: Kernel,
    pub memory: bool,
    /// Minimal memory effect η0 in `[0, 1)`.
    pub eta0: f64,
    pub tau1: f64,
    pub kstar: f64,
    pub penalty: PenaltyVariant,
    /// Θ*; `None` uses the family's default working interval.
    pub working_interval: Option<ParamInterval>,
}

impl Default for PsConfig {
    fn default() -> Self {
        PsConfig {
            lambda: 1.0,
            h0: None,
            growth: 1.25,
            hmax: 10_000.0,
            k_loc: Kernel::Triangle,
            k_ad: Kernel::Plateau { knee: 0.5 },
            k_me: Kernel::Triangle,
            memory: false,
            eta0: 0.0,
            tau1: 20.0,
            kstar: 0.0,
            penalty: PenaltyVariant::Standard,
            working_interval: None,
        }
    }
}

/// Base memory bandwidth per aggregation kernel at `ladjust = tadjust = 1`.
pub fn memory_bandwidth_base(aggkern: Kernel) -> Option<f64> {
    match aggkern {
        Kernel::Triangle => Some(20.0),
        Kernel::Uniform => Some(8.0),
        _ => None,
    }
}

impl PsConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        PsConfig {
            lambda,
            ..PsConfig::default()
        }
    }

    /// Enables the memory step with `tau1 = ladjust · tadjust · base(aggkern)`.
    pub fn with_memory(mut self, aggkern: Kernel, tadjust: f64, ladjust: f64) -> Result<Self> {
        let base = memory_bandwidth_base(aggkern).ok_or_else(|| {
            Error::config(format!("aggkern must be triangle or uniform, got {aggkern}"))
        })?;
        self.memory = true;
        self.k_me = aggkern;
        self.tau1 = ladjust * tadjust * base;
        Ok(self)
    }

    /// Memory step switched on but with infinite memory bandwidth, so that
    /// every relaxation weight equals `1 − η0`.
    pub fn with_neutral_memory(mut self) -> Self {
        self.memory = true;
        self.eta0 = 0.0;
        self.tau1 = f64::INFINITY;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::config(format!("lambda must be positive, got {}", self.lambda)));
        }
        if let Some(h0) = self.h0 {
            if !(h0 > 0.0 && h0.is_finite()) {
                return Err(Error::config(format!("h0 must be positive, got {h0}")));
            }
        }
        if !(self.growth > 1.0 && self.growth.is_finite()) {
            return Err(Error::config(format!("growth must exceed 1, got {}", self.growth)));
        }
        if !(self.hmax > 0.0 && self.hmax.is_finite()) {
            return Err(Error::config(format!("hmax must be positive, got {}", self.hmax)));
        }
        if !(0.0..1.0).contains(&self.eta0) {
            return Err(Error::config(format!("eta0 must lie in [0, 1), got {}", self.eta0)));
        }
        if !(self.tau1 > 0.0) {
            return Err(Error::config(format!("tau1 must be positive, got {}", self.tau1)));
        }
        if !(self.kstar >= 0.0) {
            return Err(Error::config(format!("kstar must be >= 0, got {}", self.kstar)));
        }
        Ok(())
    }

    /// Interval estimates are clamped into before any divergence is taken.
    pub fn clamp_interval<F: ExponentialFamily + ?Sized>(&self, family: &F) -> ParamInterval {
        match self.working_interval {
            Some(w) => w.shrink(CLAMP_SHRINK),
            None => family.working_interval(),
        }
    }

    /// Memory bandwidth `τ^(k) = 2τ1 + τ1 · max(kstar − ln h, 0)`.
    pub fn memory_bandwidth(&self, h: f64) -> f64 {
        let excess = self.kstar - h.ln();
        if excess > 0.0 {
            2.0 * self.tau1 + self.tau1 * excess
        } else {
            2.0 * self.tau1
        }
    }
}

/// Geometric location bandwidths `h0 · growth^k`, capped at `hmax`.
pub fn bandwidth_schedule(config: &PsConfig, design: &Design) -> Result<Vec<f64>> {
    config.validate()?;
    let h0 = match config.h0 {
        Some(h0) => h0,
        None => design.min_spacing().map_or(1.0, |s| 0.9 * s),
    };
    if config.hmax < h0 {
        return Err(Error::EmptySchedule {
            h0,
            hmax: config.hmax,
        });
    }
    let mut schedule = vec![h0];
    let mut k = 1;
    while *schedule.last().unwrap() < config.hmax {
        let h = h0 * config.growth.powi(k);
        schedule.push(if h >= config.hmax { config.hmax } else { h });
        k += 1;
    }
    Ok(schedule)
}
