//! One-parameter exponential families in the "mean of the sufficient
//! statistic" parametrization.
//!
//! Every family has densities of the form
//! `p(y, θ) = p(y) · exp(T(y)·C(θ) − B(θ))` with `C` strictly increasing,
//! `B'(θ) = θ·C'(θ)` and `E_θ[T(Y)] = θ`. Under that parametrization the
//! Kullback-Leibler divergence has the closed form
//!
//! ```text
//! KL(θ, θ') = θ·[C(θ) − C(θ')] − [B(θ) − B(θ')]
//! ```
//!
//! and the Fisher information is `I(θ) = C'(θ)`.

use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use rand_distr::{Distribution, Exp1, Poisson, StandardNormal};

use crate::error::{Error, Result};

/// Grid size for the generic κ search.
const KAPPA_GRID: usize = 1025;

/// Relative inward shrink applied to working intervals before clamping.
pub const CLAMP_SHRINK: f64 = 1e-9;

/// A closed parameter interval `[lo, hi]`. Endpoints may be infinite.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParamInterval {
    pub lo: f64,
    pub hi: f64,
}

impl ParamInterval {
    pub const REAL_LINE: ParamInterval = ParamInterval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::InvalidInterval {
                lo,
                hi,
                reason: "need lo <= hi".into(),
            });
        }
        Ok(ParamInterval { lo, hi })
    }

    pub fn contains(&self, theta: f64) -> bool {
        self.lo <= theta && theta <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    /// Shrinks both ends inward by `rel · (hi − lo)`. Infinite ends stay put.
    pub fn shrink(&self, rel: f64) -> ParamInterval {
        let width = self.width();
        if !width.is_finite() {
            return *self;
        }
        let eps = rel * width;
        ParamInterval {
            lo: self.lo + eps,
            hi: self.hi - eps,
        }
    }

    #[inline]
    pub fn clamp(&self, theta: f64) -> f64 {
        theta.max(self.lo).min(self.hi)
    }
}

impl fmt::Display for ParamInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

/// A noise model satisfying the local exponential-family assumption.
///
/// Implementors supply `C`, `B`, the sufficient statistic and a sampler.
/// The divergence, Fisher information and κ have generic fallbacks which the
/// built-in families override with closed forms.
pub trait ExponentialFamily: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    /// Open natural parameter range Θ, given by its endpoints.
    fn domain(&self) -> ParamInterval;

    fn sufficient_statistic(&self, y: f64) -> f64;

    fn c(&self, theta: f64) -> f64;

    fn b(&self, theta: f64) -> f64;

    /// Draws one observation `Y ~ P_θ`.
    fn sample(&self, theta: f64, rng: &mut dyn RngCore) -> f64;

    /// Unchecked divergence `KL(a, b)`; callers guarantee both are in Θ.
    fn divergence(&self, a: f64, b: f64) -> f64 {
        let v = a * (self.c(a) - self.c(b)) - (self.b(a) - self.b(b));
        v.max(0.0)
    }

    /// Unchecked Fisher information `C'(θ)` by central differences.
    fn information(&self, theta: f64) -> f64 {
        let step = 1e-5 * (1.0 + theta.abs());
        let dom = self.domain();
        let lo = (theta - step).max(dom.lo + 0.5 * (theta - dom.lo));
        let hi = (theta + step).min(dom.hi - 0.5 * (dom.hi - theta));
        (self.c(hi) - self.c(lo)) / (hi - lo)
    }

    /// Working interval Θ* used for clamping before divergences are taken.
    fn working_interval(&self) -> ParamInterval {
        self.domain()
    }

    /// `sqrt(max I / min I)` over `interval`, by grid search.
    fn information_spread(&self, interval: ParamInterval) -> f64 {
        let (mut lo_i, mut hi_i) = (f64::INFINITY, 0.0f64);
        for g in 0..KAPPA_GRID {
            let t = g as f64 / (KAPPA_GRID - 1) as f64;
            let theta = interval.lo + t * interval.width();
            let info = self.information(theta);
            lo_i = lo_i.min(info);
            hi_i = hi_i.max(info);
        }
        (hi_i / lo_i).sqrt().max(1.0)
    }

    fn in_domain(&self, theta: f64) -> bool {
        let d = self.domain();
        theta > d.lo && theta < d.hi
    }

    fn check_param(&self, theta: f64) -> Result<()> {
        if self.in_domain(theta) {
            Ok(())
        } else {
            let d = self.domain();
            Err(Error::ParameterOutOfDomain {
                family: self.name().to_string(),
                value: theta,
                lo: d.lo,
                hi: d.hi,
            })
        }
    }

    /// Checked Kullback-Leibler divergence `KL(P_a, P_b)`.
    fn kl(&self, a: f64, b: f64) -> Result<f64> {
        self.check_param(a)?;
        self.check_param(b)?;
        Ok(self.divergence(a, b))
    }

    fn fisher_info(&self, theta: f64) -> Result<f64> {
        self.check_param(theta)?;
        Ok(self.information(theta))
    }

    /// The constant κ ≥ 1 bounding `I(θ1)/I(θ2) ≤ κ²` on `interval`.
    fn kappa(&self, interval: ParamInterval) -> Result<f64> {
        let d = self.domain();
        let lo_ok = interval.lo > d.lo || (interval.lo == d.lo && d.lo.is_infinite());
        let hi_ok = interval.hi < d.hi || (interval.hi == d.hi && d.hi.is_infinite());
        if !(lo_ok && hi_ok) {
            return Err(Error::InvalidInterval {
                lo: interval.lo,
                hi: interval.hi,
                reason: format!("not contained in the {} domain {}", self.name(), d),
            });
        }
        if interval.lo == interval.hi {
            return Ok(1.0);
        }
        Ok(self.information_spread(interval))
    }
}

/// The built-in families.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Family {
    /// `N(θ, σ²)` with known σ.
    Gaussian { sigma: f64 },
    /// Exponential distribution parametrized by its mean.
    Exponential,
    Poisson,
    Bernoulli,
    /// Log-normal with known σ; `T(y) = ln y`, θ is the mean of `ln Y`.
    LogNormal { sigma: f64 },
}

impl Family {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        check_sigma(sigma)?;
        Ok(Family::Gaussian { sigma })
    }

    pub fn lognormal(sigma: f64) -> Result<Self> {
        check_sigma(sigma)?;
        Ok(Family::LogNormal { sigma })
    }

    /// Builds a family from its short name. `sigma` defaults to 1 where used.
    pub fn from_name(name: &str, sigma: Option<f64>) -> Result<Self> {
        let sigma = sigma.unwrap_or(1.0);
        match name {
            "gauss" | "gaussian" => Family::gaussian(sigma),
            "exp" | "exponential" => Ok(Family::Exponential),
            "poisson" => Ok(Family::Poisson),
            "bernoulli" => Ok(Family::Bernoulli),
            "lognormal" => Family::lognormal(sigma),
            other => Err(Error::UnknownFamily(other.to_string())),
        }
    }

    pub fn short_name(&self) -> &'static str {
        match self {
            Family::Gaussian { .. } => "gauss",
            Family::Exponential => "exp",
            Family::Poisson => "poisson",
            Family::Bernoulli => "bernoulli",
            Family::LogNormal { .. } => "lognormal",
        }
    }

    pub fn sigma(&self) -> Option<f64> {
        match *self {
            Family::Gaussian { sigma } | Family::LogNormal { sigma } => Some(sigma),
            _ => None,
        }
    }
}

impl FromStr for Family {
    type Err = Error;

    /// Accepts `name` or `name:sigma`, e.g. `gauss:0.5`.
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            Some((name, sigma)) => {
                let sigma: f64 = sigma
                    .parse()
                    .map_err(|_| Error::UnknownFamily(s.to_string()))?;
                Family::from_name(name, Some(sigma))
            }
            None => Family::from_name(s, None),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.sigma() {
            Some(s) => write!(f, "{}:{}", self.short_name(), s),
            None => f.write_str(self.short_name()),
        }
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("sigma must be positive, got {sigma}")))
    }
}

impl ExponentialFamily for Family {
    fn name(&self) -> &str {
        self.short_name()
    }

    fn domain(&self) -> ParamInterval {
        match self {
            Family::Gaussian { .. } | Family::LogNormal { .. } => ParamInterval::REAL_LINE,
            Family::Exponential | Family::Poisson => ParamInterval {
                lo: 0.0,
                hi: f64::INFINITY,
            },
            Family::Bernoulli => ParamInterval { lo: 0.0, hi: 1.0 },
        }
    }

    #[inline]
    fn sufficient_statistic(&self, y: f64) -> f64 {
        match self {
            Family::LogNormal { .. } => y.ln(),
            _ => y,
        }
    }

    fn c(&self, theta: f64) -> f64 {
        match *self {
            Family::Gaussian { sigma } | Family::LogNormal { sigma } => theta / (sigma * sigma),
            Family::Exponential => -1.0 / theta,
            Family::Poisson => theta.ln(),
            Family::Bernoulli => (theta / (1.0 - theta)).ln(),
        }
    }

    fn b(&self, theta: f64) -> f64 {
        match *self {
            Family::Gaussian { sigma } | Family::LogNormal { sigma } => {
                theta * theta / (2.0 * sigma * sigma)
            }
            Family::Exponential => theta.ln(),
            Family::Poisson => theta,
            Family::Bernoulli => -(1.0 - theta).ln(),
        }
    }

    fn sample(&self, theta: f64, rng: &mut dyn RngCore) -> f64 {
        match *self {
            Family::Gaussian { sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                theta + sigma * z
            }
            Family::LogNormal { sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                (theta + sigma * z).exp()
            }
            Family::Exponential => {
                let e: f64 = Exp1.sample(rng);
                theta * e
            }
            Family::Poisson => Poisson::new(theta)
                .expect("poisson mean must be positive")
                .sample(rng),
            Family::Bernoulli => {
                let u: f64 = rand::Rng::random(rng);
                if u < theta {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    #[inline]
    fn divergence(&self, a: f64, b: f64) -> f64 {
        match *self {
            Family::Gaussian { sigma } | Family::LogNormal { sigma } => {
                let d = a - b;
                d * d / (2.0 * sigma * sigma)
            }
            Family::Exponential => {
                // r − 1 − ln r with r = a/b
                let x = a / b - 1.0;
                (x - x.ln_1p()).max(0.0)
            }
            Family::Poisson => {
                let x = a / b - 1.0;
                (b * ((1.0 + x) * x.ln_1p() - x)).max(0.0)
            }
            Family::Bernoulli => {
                let first = if a > 0.0 { a * (a / b).ln() } else { 0.0 };
                let second = if a < 1.0 {
                    (1.0 - a) * ((1.0 - a) / (1.0 - b)).ln()
                } else {
                    0.0
                };
                (first + second).max(0.0)
            }
        }
    }

    fn information(&self, theta: f64) -> f64 {
        match *self {
            Family::Gaussian { sigma } | Family::LogNormal { sigma } => 1.0 / (sigma * sigma),
            Family::Exponential => 1.0 / (theta * theta),
            Family::Poisson => 1.0 / theta,
            Family::Bernoulli => 1.0 / (theta * (1.0 - theta)),
        }
    }

    fn working_interval(&self) -> ParamInterval {
        match self {
            Family::Gaussian { .. } | Family::LogNormal { .. } => ParamInterval::REAL_LINE,
            Family::Exponential | Family::Poisson => ParamInterval { lo: 0.0, hi: 1e4 },
            Family::Bernoulli => ParamInterval { lo: 0.0, hi: 1.0 },
        }
        .shrink(CLAMP_SHRINK)
    }

    fn information_spread(&self, interval: ParamInterval) -> f64 {
        let ParamInterval { lo, hi } = interval;
        match self {
            Family::Gaussian { .. } | Family::LogNormal { .. } => 1.0,
            Family::Exponential => hi / lo,
            Family::Poisson => (hi / lo).sqrt(),
            Family::Bernoulli => {
                let g = |t: f64| t * (1.0 - t);
                let g_max = if lo <= 0.5 && 0.5 <= hi {
                    0.25
                } else {
                    g(lo).max(g(hi))
                };
                let g_min = g(lo).min(g(hi));
                (g_max / g_min).sqrt()
            }
        }
    }
}
