//! Command-line arguments. Every option struct doubles as the schema of its
//! section in the config file, so field names are the file keys.

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use propsep::config::PenaltyVariant;
use propsep::sim::MemorySettings;
use propsep::{Family, Kernel, PsConfig};

#[derive(Debug, Parser)]
#[command(name = "propsep", version, about = "Propagation-separation adaptive smoothing")]
pub struct Cli {
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, env = "AWS_PS_THREADS")]
    pub threads: Option<usize>,

    /// TOML file with one section per command; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Smooth a data set read from CSV.
    Smooth(SmoothArgs),
    /// Calibrate the adaptation bandwidth by simulation.
    Calibrate(CalibrateArgs),
    /// Export weighting schemes of one step as PGM images.
    Weights(WeightsArgs),
    /// MAE replications over seeds and location bandwidths.
    Experiment(ExperimentArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Smooth(_) => "smooth",
            Command::Calibrate(_) => "calibrate",
            Command::Weights(_) => "weights",
            Command::Experiment(_) => "experiment",
        }
    }
}

/// Fills unset fields of `self` from `file`; boolean switches are or-ed.
pub trait Merge {
    fn merge(self, file: Self) -> Self;
}

macro_rules! merge_impl {
    ($ty:ty { $($opt:ident),* } { $($flag:ident),* } { $($nested:ident),* }) => {
        impl Merge for $ty {
            fn merge(self, file: Self) -> Self {
                Self {
                    $($opt: self.$opt.or(file.$opt),)*
                    $($flag: self.$flag || file.$flag,)*
                    $($nested: self.$nested.merge(file.$nested),)*
                }
            }
        }
    };
}

#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(default)]
pub struct FamilyArgs {
    /// gauss, exp, poisson, bernoulli or lognormal; `gauss:0.5` sets sigma.
    #[arg(long)]
    pub family: Option<String>,
    /// Noise level of the Gaussian and log-normal families.
    #[arg(long)]
    pub sigma: Option<f64>,
}

merge_impl!(FamilyArgs { family, sigma } {} {});

impl FamilyArgs {
    pub fn resolve(&self) -> anyhow::Result<Family> {
        let name = self.family.as_deref().unwrap_or("gauss");
        let family = match self.sigma {
            Some(sigma) => Family::from_name(name, Some(sigma))?,
            None => name.parse()?,
        };
        Ok(family)
    }
}

/// Options shared by every command that runs the iteration.
#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(default)]
pub struct SmoothingArgs {
    /// Adaptation bandwidth.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Non-adaptive estimator (lambda = infinity).
    #[arg(long)]
    pub nonadaptive: bool,
    /// Largest location bandwidth [default: 10000].
    #[arg(long)]
    pub hmax: Option<f64>,
    /// Initial location bandwidth [default: 0.9 times the minimal spacing].
    #[arg(long)]
    pub h0: Option<f64>,
    /// Bandwidth growth factor per step [default: 1.25].
    #[arg(long)]
    pub growth: Option<f64>,
    /// Location kernel [default: triangle].
    #[arg(long)]
    pub kloc: Option<String>,
    /// Adaptation kernel [default: plateau:0.5].
    #[arg(long)]
    pub kad: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    pub memory: MemoryArgs,
    /// Minimal memory effect eta0 [default: 0].
    #[arg(long)]
    pub eta0: Option<f64>,
    /// Memory bandwidth grows as ln h falls below kstar [default: 0].
    #[arg(long)]
    pub kstar: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub penalty: PenaltyArgs,
}

merge_impl!(SmoothingArgs { lambda, hmax, h0, growth, kloc, kad, eta0, kstar } { nonadaptive } { memory, penalty });

#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(default)]
pub struct MemoryArgs {
    /// Enable the memory step.
    #[arg(long)]
    pub memory: bool,
    /// Memory kernel: triangle or uniform [default: triangle].
    #[arg(long)]
    pub aggkern: Option<String>,
    /// Scales the memory bandwidth [default: 1].
    #[arg(long)]
    pub tadjust: Option<f64>,
    /// Further linear factor on the memory bandwidth [default: 1].
    #[arg(long)]
    pub ladjust: Option<f64>,
}

merge_impl!(MemoryArgs { aggkern, tadjust, ladjust } { memory } {});

impl MemoryArgs {
    pub fn resolve(&self) -> anyhow::Result<Option<MemorySettings>> {
        if !self.memory {
            if self.aggkern.is_some() || self.tadjust.is_some() || self.ladjust.is_some() {
                bail!("aggkern, tadjust and ladjust need --memory");
            }
            return Ok(None);
        }
        let defaults = MemorySettings::default();
        Ok(Some(MemorySettings {
            aggkern: match &self.aggkern {
                Some(k) => k.parse()?,
                None => defaults.aggkern,
            },
            tadjust: self.tadjust.unwrap_or(defaults.tadjust),
            ladjust: self.ladjust.unwrap_or(defaults.ladjust),
        }))
    }
}

#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(default)]
pub struct PenaltyArgs {
    /// standard or max [default: standard].
    #[arg(long)]
    pub penalty: Option<String>,
    /// Same as `--penalty max`.
    #[arg(long)]
    pub maxni: bool,
}

merge_impl!(PenaltyArgs { penalty } { maxni } {});

impl PenaltyArgs {
    pub fn resolve(&self) -> anyhow::Result<PenaltyVariant> {
        match (&self.penalty, self.maxni) {
            (Some(p), true) if p != "max" => bail!("--maxni contradicts --penalty {p}"),
            (_, true) => Ok(PenaltyVariant::Max),
            (Some(p), false) => Ok(p.parse()?),
            (None, false) => Ok(PenaltyVariant::Standard),
        }
    }
}

pub fn resolve_lambda(lambda: Option<f64>, nonadaptive: bool) -> anyhow::Result<f64> {
    match (lambda, nonadaptive) {
        (_, true) => Ok(f64::INFINITY),
        (Some(l), false) => Ok(l),
        (None, false) => bail!("--lambda is required unless --nonadaptive is given"),
    }
}

fn kernel(value: &Option<String>, default: Kernel) -> anyhow::Result<Kernel> {
    match value {
        Some(k) => Ok(k.parse()?),
        None => Ok(default),
    }
}

impl SmoothingArgs {
    pub fn resolve(&self) -> anyhow::Result<PsConfig> {
        let defaults = PsConfig::default();
        let mut cfg = PsConfig {
            lambda: resolve_lambda(self.lambda, self.nonadaptive)?,
            h0: self.h0,
            growth: self.growth.unwrap_or(defaults.growth),
            hmax: self.hmax.unwrap_or(defaults.hmax),
            k_loc: kernel(&self.kloc, defaults.k_loc)?,
            k_ad: kernel(&self.kad, defaults.k_ad)?,
            eta0: self.eta0.unwrap_or(defaults.eta0),
            kstar: self.kstar.unwrap_or(defaults.kstar),
            penalty: self.penalty.resolve()?,
            ..defaults
        };
        if let Some(m) = self.memory.resolve()? {
            cfg = cfg.with_memory(m.aggkern, m.tadjust, m.ladjust)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(default)]
pub struct SmoothArgs {
    /// CSV with columns index,x,y and optionally theta_true.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Estimates CSV (index,x,y,theta_hat,n_tilde).
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Manifest path [default: <output>.manifest].
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Also write the final partition (index,label).
    #[arg(long)]
    pub partition: Option<PathBuf>,
    /// Also write the associated step function (label,value,size).
    #[arg(long)]
    pub step_function: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub family: FamilyArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub smoothing: SmoothingArgs,
}

merge_impl!(SmoothArgs { input, output, manifest, partition, step_function } {} { family, smoothing });

#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(default)]
pub struct CalibrateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub family: FamilyArgs,
    /// Parameter of the homogeneous model [default: 0, or 1 for exp/poisson, 0.5 for bernoulli].
    #[arg(long)]
    pub theta: Option<f64>,
    /// Replicates per batch [default: 1000].
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Independent batches a candidate must pass [default: 2].
    #[arg(long)]
    pub batches: Option<usize>,
    /// Design size [default: 500].
    #[arg(long)]
    pub n: Option<usize>,
    /// Smallest admissible probability level [default: 0.05].
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Comma-separated probability levels [default: 0.05,0.1,0.2,0.5,0.9].
    #[arg(long)]
    #[serde(deserialize_with = "list_or_string")]
    pub p_grid: Option<String>,
    /// Relative slack of the monotonicity check [default: 0.02].
    #[arg(long)]
    pub slack: Option<f64>,
    /// Initial bracket for lambda [default: 1 and 64].
    #[arg(long)]
    pub lambda_lo: Option<f64>,
    #[arg(long)]
    pub lambda_hi: Option<f64>,
    /// Largest location bandwidth of the simulated runs [default: distance to the boundary].
    #[arg(long)]
    pub hmax: Option<f64>,
    #[arg(long)]
    pub kloc: Option<String>,
    #[arg(long)]
    pub kad: Option<String>,
    #[arg(long)]
    pub growth: Option<f64>,
    /// Plain slack rule without the Monte-Carlo noise allowance.
    #[arg(long)]
    pub literal: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also report lambda_phi for a parametric model of variability phi.
    #[arg(long)]
    pub inhomogeneous: bool,
    #[arg(long)]
    pub phi: Option<f64>,
    /// Information spread; otherwise computed from --interval or --testfn.
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Parameter interval `lo,hi` for kappa.
    #[arg(long)]
    pub interval: Option<String>,
    /// Check the inhomogeneous propagation condition at lambda_phi on this test function.
    #[arg(long)]
    pub testfn: Option<String>,
    /// Directory for report.txt, curve.csv and manifest.txt.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

merge_impl!(CalibrateArgs {
    theta, replicates, batches, n, epsilon, p_grid, slack, lambda_lo, lambda_hi, hmax, kloc, kad,
    growth, seed, phi, kappa, interval, testfn, out_dir
} { literal, inhomogeneous } { family });

#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(default)]
pub struct WeightsArgs {
    /// Data CSV; without it the data are simulated from --testfn.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Test function for simulated data [default: indicator].
    #[arg(long)]
    pub testfn: Option<String>,
    /// Sample size of simulated data [default: 1000].
    #[arg(long)]
    pub n: Option<usize>,
    /// Seed of simulated data [default: 1].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Step whose weights are drawn, 1-based; one past the last step gives
    /// the weights that close the final partition [default: that one].
    #[arg(long)]
    pub step: Option<usize>,
    /// Refuse designs larger than this [default: 2000].
    #[arg(long)]
    pub max_n: Option<usize>,
    /// Directory for wbar.pgm, wtilde.pgm, kad.pgm and manifest.txt.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub family: FamilyArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub smoothing: SmoothingArgs,
}

merge_impl!(WeightsArgs { input, testfn, n, seed, step, max_n, out_dir } {} { family, smoothing });

#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(default)]
pub struct ExperimentArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub family: FamilyArgs,
    /// indicator, piecewise_smooth, updown or log [default: indicator].
    #[arg(long)]
    pub testfn: Option<String>,
    /// Sample size [default: 1000].
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub nonadaptive: bool,
    /// Comma-separated location bandwidths [default: 10000].
    #[arg(long)]
    #[serde(deserialize_with = "list_or_string")]
    pub hmax: Option<String>,
    /// `a..=b`, `a..b` or a comma-separated list [default: 1..=1000].
    #[arg(long)]
    #[serde(deserialize_with = "list_or_string")]
    pub seeds: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    pub memory: MemoryArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub penalty: PenaltyArgs,
    /// Directory for mae.csv, summary.csv and manifest.txt.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

merge_impl!(ExperimentArgs { testfn, n, lambda, hmax, seeds, out_dir } { nonadaptive } { family, memory, penalty });

/// Lists may be written as TOML arrays or as the flag's string syntax.
fn list_or_string<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<String>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Text(String),
        Ints(Vec<i64>),
        Reals(Vec<f64>),
    }
    Ok(Some(match Raw::deserialize(d)? {
        Raw::Text(s) => s,
        Raw::Ints(v) => join(v),
        Raw::Reals(v) => join(v),
    }))
}

fn join<T: ToString>(values: Vec<T>) -> String {
    values.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

pub fn parse_reals(text: &str, what: &str) -> anyhow::Result<Vec<f64>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .with_context(|| format!("{what}: `{t}` is not a number"))
        })
        .collect()
}

/// Parses `a..=b`, `a..b` or `a,b,c`.
pub fn parse_seeds(text: &str) -> anyhow::Result<Vec<u64>> {
    let int = |t: &str| -> anyhow::Result<u64> {
        t.trim()
            .parse()
            .with_context(|| format!("seeds: `{t}` is not a non-negative integer"))
    };
    let seeds: Vec<u64> = if let Some((a, b)) = text.split_once("..=") {
        (int(a)?..=int(b)?).collect()
    } else if let Some((a, b)) = text.split_once("..") {
        (int(a)?..int(b)?).collect()
    } else {
        text.split(',').map(int).collect::<anyhow::Result<_>>()?
    };
    if seeds.is_empty() {
        bail!("seed range `{text}` is empty");
    }
    Ok(seeds)
}
