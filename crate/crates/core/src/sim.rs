//! Test functions, simulated data and MAE replication studies.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rayon::prelude::*;

use crate::algorithm::{IterationState, Smoother};
use crate::config::{PenaltyVariant, PsConfig};
use crate::design::{Design, Observations};
use crate::error::{Error, Result};
use crate::family::{ExponentialFamily, Family};
use crate::io::Manifest;
use crate::kernels::Kernel;
use crate::rng::stream;
use crate::weights::WeightMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TestFunction {
    /// Linear, quadratic and linear pieces with jumps between them.
    PiecewiseSmooth,
    /// Seventeen small steps, going up, down and up again.
    UpDown,
    /// `ln x`.
    Log,
    /// `1 + 4 · 1{x > n/2}`.
    Indicator,
}

impl TestFunction {
    pub const ALL: [TestFunction; 4] = [
        TestFunction::PiecewiseSmooth,
        TestFunction::UpDown,
        TestFunction::Log,
        TestFunction::Indicator,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TestFunction::PiecewiseSmooth => "piecewise_smooth",
            TestFunction::UpDown => "updown",
            TestFunction::Log => "log",
            TestFunction::Indicator => "indicator",
        }
    }
}

impl fmt::Display for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TestFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TestFunction::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::config(format!("unknown test function `{s}`")))
    }
}

/// `(last x of the region on the 1000-point grid, value)`.
const UPDOWN: [(u32, f64); 17] = [
    (50, 0.0),
    (100, 0.5),
    (150, 1.0),
    (200, 1.5),
    (250, 2.0),
    (300, 2.5),
    (350, 3.0),
    (400, 3.2),
    (450, 2.7),
    (500, 2.2),
    (550, 1.7),
    (600, 1.2),
    (650, 0.7),
    (750, 0.9),
    (800, 1.6),
    (900, 2.6),
    (1000, 2.9),
];

/// Breakpoint `b` of the 1000-point grid moved to a design of size `n`,
/// rounding half up.
fn scale_breakpoint(b: u32, n: usize) -> usize {
    (b as f64 * n as f64 / 1000.0 + 0.5).floor() as usize
}

fn scaled_breakpoints(name: &'static str, raw: &[u32], n: usize) -> Result<Vec<usize>> {
    let scaled: Vec<usize> = raw.iter().map(|&b| scale_breakpoint(b, n)).collect();
    let mut prev = 0;
    for &b in &scaled {
        if b <= prev {
            return Err(Error::IncompatibleSampleSize {
                name: name.into(),
                n,
                reason: "a region would be empty".into(),
            });
        }
        prev = b;
    }
    Ok(scaled)
}

/// True parameters at `x = 1, ..., n`. Region boundaries of the 1000-point
/// definitions scale with `n / 1000`, and the formulas are evaluated at the
/// rescaled coordinate `x · 1000 / n`.
pub fn test_function(tf: TestFunction, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::IncompatibleSampleSize {
            name: tf.name().into(),
            n,
            reason: "n must be positive".into(),
        });
    }
    let u = |x: usize| x as f64 * 1000.0 / n as f64;
    match tf {
        TestFunction::PiecewiseSmooth => {
            let b = scaled_breakpoints(tf.name(), &[250, 750, 1000], n)?;
            Ok((1..=n)
                .map(|x| {
                    let t = u(x);
                    if x <= b[0] {
                        7.0 + t / 250.0
                    } else if x <= b[1] {
                        let d = (t - 450.0) / 100.0;
                        11.0 + d * d / 2.0
                    } else {
                        6.0 - (t - 750.0) / 200.0
                    }
                })
                .collect())
        }
        TestFunction::UpDown => {
            let raw: Vec<u32> = UPDOWN.iter().map(|&(b, _)| b).collect();
            let b = scaled_breakpoints(tf.name(), &raw, n)?;
            let mut region = 0;
            Ok((1..=n)
                .map(|x| {
                    while x > b[region] {
                        region += 1;
                    }
                    UPDOWN[region].1
                })
                .collect())
        }
        TestFunction::Log => Ok((1..=n).map(|x| (x as f64).ln()).collect()),
        TestFunction::Indicator => {
            if n % 2 != 0 {
                return Err(Error::IncompatibleSampleSize {
                    name: tf.name().into(),
                    n,
                    reason: "n must be even".into(),
                });
            }
            Ok((1..=n).map(|x| if x > n / 2 { 5.0 } else { 1.0 }).collect())
        }
    }
}

/// Shift added to a test function so that every value lies in the
/// family's parameter domain: 1 for `log` and `updown` under families with
/// positive parameters, 0 otherwise.
pub fn parameter_shift(tf: TestFunction, family: &Family) -> f64 {
    let positive = matches!(family, Family::Exponential | Family::Poisson);
    match tf {
        TestFunction::Log | TestFunction::UpDown if positive => 1.0,
        _ => 0.0,
    }
}

/// The test function as used for `family`, shifted by [`parameter_shift`].
pub fn truth_for(tf: TestFunction, n: usize, family: &Family) -> Result<Vec<f64>> {
    let shift = parameter_shift(tf, family);
    let truth: Vec<f64> = test_function(tf, n)?.into_iter().map(|v| v + shift).collect();
    for &t in &truth {
        family.check_param(t)?;
    }
    Ok(truth)
}

/// Independent draws `Y_i ~ P_{θ_i}` from stream `seed`.
pub fn generate_data<F: ExponentialFamily + ?Sized>(
    truth: &[f64],
    family: &F,
    seed: u64,
) -> Result<Observations> {
    for &t in truth {
        family.check_param(t)?;
    }
    let mut rng = stream(seed, 0);
    let y = truth.iter().map(|&t| family.sample(t, &mut rng)).collect();
    Observations::new(y, family)
}

/// Mean absolute error.
pub fn mae(estimates: &[f64], truth: &[f64]) -> Result<f64> {
    if estimates.len() != truth.len() {
        return Err(Error::LengthMismatch {
            expected: truth.len(),
            actual: estimates.len(),
        });
    }
    let total: f64 = estimates.iter().zip(truth).map(|(e, t)| (e - t).abs()).sum();
    Ok(total / truth.len() as f64)
}

/// Final states for every `hmax` in `hmax_list` from a single pass: all
/// schedules share the geometric prefix and differ only in their last step.
/// The states are returned in the order of `hmax_list`.
pub fn run_hmax_grid<F: ExponentialFamily + ?Sized>(
    design: &Design,
    obs: &Observations,
    family: &F,
    config: &PsConfig,
    hmax_list: &[f64],
) -> Result<Vec<IterationState>> {
    if hmax_list.is_empty() {
        return Ok(Vec::new());
    }
    let mut order: Vec<usize> = (0..hmax_list.len()).collect();
    order.sort_by(|&a, &b| hmax_list[a].total_cmp(&hmax_list[b]));
    let largest = PsConfig {
        hmax: hmax_list[order[order.len() - 1]],
        ..config.clone()
    };
    let smoother = Smoother::new(design, obs, family, &largest)?;
    for &hmax in hmax_list {
        crate::config::bandwidth_schedule(&PsConfig { hmax, ..config.clone() }, design)?;
    }
    let schedule = smoother.schedule().to_vec();

    let mut out: Vec<Option<IterationState>> = vec![None; hmax_list.len()];
    let mut state = smoother.initial_state();
    let mut pending = order.into_iter().peekable();
    loop {
        // targets whose schedule ends right after the current state
        while let Some(&t) = pending.peek() {
            let hmax = hmax_list[t];
            match schedule.get(state.k + 1) {
                _ if state.h >= hmax => {
                    // h0 already reaches hmax
                    out[t] = Some(state.clone());
                }
                Some(&next) if next >= hmax => out[t] = Some(smoother.step(&state, hmax)),
                None => out[t] = Some(state.clone()),
                Some(_) => break,
            }
            pending.next();
        }
        if pending.peek().is_none() {
            break;
        }
        match smoother.advance(&state) {
            Some(next) => state = next,
            None => break,
        }
    }
    Ok(out.into_iter().map(|s| s.expect("every hmax is reached")).collect())
}

/// Share of points with a positive weight on the other side of the split
/// between indices `boundary − 1` and `boundary`.
pub fn cross_boundary_fraction(weights: &WeightMatrix, boundary: usize) -> f64 {
    let n = weights.n();
    let crossing = (0..n)
        .filter(|&i| {
            let (cols, _) = weights.row(i);
            cols.iter()
                .any(|&j| (i < boundary) != ((j as usize) < boundary))
        })
        .count();
    crossing as f64 / n as f64
}

/// Memory step settings in the vocabulary of the reference implementation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MemorySettings {
    pub aggkern: Kernel,
    pub tadjust: f64,
    pub ladjust: f64,
}

impl Default for MemorySettings {
    fn default() -> Self {
        MemorySettings {
            aggkern: Kernel::Triangle,
            tadjust: 1.0,
            ladjust: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub family: Family,
    pub testfn: TestFunction,
    pub n: usize,
    pub lambda: f64,
    pub hmax: Vec<f64>,
    pub seeds: Vec<u64>,
    pub memory: Option<MemorySettings>,
    pub penalty: PenaltyVariant,
    /// Where `mae.csv`, `summary.csv` and `manifest.txt` go; `None` writes
    /// nothing.
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            family: Family::Gaussian { sigma: 1.0 },
            testfn: TestFunction::Indicator,
            n: 1000,
            lambda: 1.0,
            hmax: vec![10_000.0],
            seeds: (1..=1000).collect(),
            memory: None,
            penalty: PenaltyVariant::Standard,
            out_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn ps_config(&self) -> Result<PsConfig> {
        let mut cfg = PsConfig {
            penalty: self.penalty,
            ..PsConfig::with_lambda(self.lambda)
        };
        if let Some(m) = self.memory {
            cfg = cfg.with_memory(m.aggkern, m.tadjust, m.ladjust)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("seed list is empty"));
        }
        if self.hmax.is_empty() {
            return Err(Error::config("hmax list is empty"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaeRecord {
    pub hmax: f64,
    pub seed: u64,
    pub mae: f64,
}

/// Boxplot statistics: quartiles by linear interpolation and whiskers at the
/// most extreme values within 1.5 IQR of the box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxStats {
    pub count: usize,
    pub min: f64,
    pub lower_whisker: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub upper_whisker: f64,
    pub max: f64,
    pub mean: f64,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

impl BoxStats {
    pub fn from_values(values: &[f64]) -> Option<BoxStats> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q1 = quantile_sorted(&v, 0.25);
        let q3 = quantile_sorted(&v, 0.75);
        let reach = 1.5 * (q3 - q1);
        let lower_whisker = *v.iter().find(|&&x| x >= q1 - reach).unwrap_or(&v[0]);
        let upper_whisker = *v.iter().rev().find(|&&x| x <= q3 + reach).unwrap_or(&v[v.len() - 1]);
        Some(BoxStats {
            count: v.len(),
            min: v[0],
            lower_whisker,
            q1,
            median: quantile_sorted(&v, 0.5),
            q3,
            upper_whisker,
            max: v[v.len() - 1],
            mean: v.iter().sum::<f64>() / v.len() as f64,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaeSummary {
    /// Sorted by `hmax` (in the configured order), then seed.
    pub records: Vec<MaeRecord>,
    /// One entry per configured `hmax`.
    pub boxes: Vec<(f64, BoxStats)>,
    /// Shift added to the test function, see [`parameter_shift`].
    pub shift: f64,
}

impl MaeSummary {
    pub fn median(&self, hmax: f64) -> Option<f64> {
        self.boxes
            .iter()
            .find(|(h, _)| *h == hmax)
            .map(|(_, b)| b.median)
    }
}

/// For every `(hmax, seed)`: simulate, smooth and score. Seeds run in
/// parallel; each has its own random stream.
pub fn run_replications(config: &ExperimentConfig) -> Result<MaeSummary> {
    config.validate()?;
    let ps = config.ps_config()?;
    let design = Design::regular(config.n)?;
    let truth = truth_for(config.testfn, config.n, &config.family)?;

    let per_seed: Vec<Vec<f64>> = config
        .seeds
        .par_iter()
        .map(|&seed| -> Result<Vec<f64>> {
            let obs = generate_data(&truth, &config.family, seed)?;
            run_hmax_grid(&design, &obs, &config.family, &ps, &config.hmax)?
                .iter()
                .map(|s| mae(s.estimates(), &truth))
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut records = Vec::with_capacity(config.hmax.len() * config.seeds.len());
    let mut boxes = Vec::with_capacity(config.hmax.len());
    for (hi, &hmax) in config.hmax.iter().enumerate() {
        let values: Vec<f64> = per_seed.iter().map(|m| m[hi]).collect();
        records.extend(
            config
                .seeds
                .iter()
                .zip(&values)
                .map(|(&seed, &mae)| MaeRecord { hmax, seed, mae }),
        );
        boxes.push((hmax, BoxStats::from_values(&values).expect("seeds are non-empty")));
    }
    let summary = MaeSummary {
        records,
        boxes,
        shift: parameter_shift(config.testfn, &config.family),
    };
    if let Some(dir) = &config.out_dir {
        write_outputs(dir, config, &ps, &summary)?;
    }
    Ok(summary)
}

fn write_outputs(dir: &PathBuf, config: &ExperimentConfig, ps: &PsConfig, summary: &MaeSummary) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mae_path = dir.join("mae.csv");
    let summary_path = dir.join("summary.csv");
    let (memory, aggkern, tadjust) = match config.memory {
        Some(m) => (true, m.aggkern.to_string(), m.tadjust.to_string()),
        None => (false, "none".to_string(), "none".to_string()),
    };

    let mut w = csv::Writer::from_path(&mae_path).map_err(|e| to_io(&mae_path, e))?;
    w.write_record(["family", "testfn", "hmax", "seed", "memory", "aggkern", "tadjust", "mae"])
        .map_err(|e| to_io(&mae_path, e))?;
    for r in &summary.records {
        w.write_record([
            config.family.to_string(),
            config.testfn.to_string(),
            r.hmax.to_string(),
            r.seed.to_string(),
            memory.to_string(),
            aggkern.clone(),
            tadjust.clone(),
            r.mae.to_string(),
        ])
        .map_err(|e| to_io(&mae_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&mae_path, e))?;

    let mut w = csv::Writer::from_path(&summary_path).map_err(|e| to_io(&summary_path, e))?;
    w.write_record([
        "hmax", "count", "min", "lower_whisker", "q1", "median", "q3", "upper_whisker", "max", "mean",
    ])
    .map_err(|e| to_io(&summary_path, e))?;
    for (h, b) in &summary.boxes {
        w.write_record([
            h.to_string(),
            b.count.to_string(),
            b.min.to_string(),
            b.lower_whisker.to_string(),
            b.q1.to_string(),
            b.median.to_string(),
            b.q3.to_string(),
            b.upper_whisker.to_string(),
            b.max.to_string(),
            b.mean.to_string(),
        ])
        .map_err(|e| to_io(&summary_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&summary_path, e))?;

    let mut m = experiment_manifest(config, ps);
    m.push("shift", summary.shift)
        .push("output.mae", mae_path.display())
        .push("output.summary", summary_path.display());
    m.write(&dir.join("manifest.txt"))
}

fn to_io(path: &std::path::Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

/// Manifest entries describing an experiment.
pub fn experiment_manifest(config: &ExperimentConfig, ps: &PsConfig) -> Manifest {
    let mut m = Manifest::new();
    m.push("command", "experiment")
        .push("version", env!("CARGO_PKG_VERSION"))
        .push("family", config.family)
        .push("testfn", config.testfn)
        .push("n", config.n)
        .push("lambda", config.lambda)
        .push("hmax", join(&config.hmax))
        .push("seeds", seed_summary(&config.seeds))
        .push("memory", config.memory.is_some())
        .push("penalty", config.penalty);
    if let Some(mem) = config.memory {
        m.push("aggkern", mem.aggkern)
            .push("tadjust", mem.tadjust)
            .push("ladjust", mem.ladjust)
            .push("tau1", ps.tau1);
    }
    m.push("k_loc", ps.k_loc)
        .push("k_ad", ps.k_ad)
        .push("growth", ps.growth)
        .push("parametrization", "mean");
    m
}

fn join(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

fn seed_summary(seeds: &[u64]) -> String {
    let contiguous = seeds.windows(2).all(|w| w[1] == w[0] + 1);
    match (seeds.first(), seeds.last()) {
        (Some(a), Some(b)) if contiguous && seeds.len() > 1 => format!("{a}..={b}"),
        _ => seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","),
    }
}
