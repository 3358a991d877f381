use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};

use propsep::algorithm::nonadaptive_weights;
use propsep::calibrate::{
    calibrate_lambda, check_propagation, estimate_z_curve_inhomogeneous, lambda_phi,
    CalibrationConfig,
};
use propsep::io::{
    read_input_csv, write_curve_csv, write_estimates_csv, write_partition_csv, write_pgm,
    write_step_function_csv, InputData, Manifest,
};
use propsep::sim::{generate_data, mae, run_replications, truth_for, ExperimentConfig, TestFunction};
use propsep::stepfunc::{associated_step_function, partition_from_weights};
use propsep::{Design, ExponentialFamily, Family, Kernel, Observations, ParamInterval, PsConfig, Smoother};

use crate::args::{
    parse_reals, parse_seeds, resolve_lambda, CalibrateArgs, ExperimentArgs, SmoothArgs,
    SmoothingArgs, WeightsArgs,
};

/// Raised when a request exceeds a configured resource limit.
#[derive(Debug)]
pub struct ResourceCap(pub String);

impl std::fmt::Display for ResourceCap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ResourceCap {}

fn unix_time() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

fn manifest_head(command: &str) -> Manifest {
    let mut m = Manifest::new();
    m.push("command", command)
        .push("version", env!("CARGO_PKG_VERSION"))
        .push("started", unix_time());
    m
}

fn push_ps_config(m: &mut Manifest, family: &Family, cfg: &PsConfig) {
    m.push("family", family)
        .push("lambda", cfg.lambda)
        .push("hmax", cfg.hmax)
        .push("h0", cfg.h0.map_or("auto".to_string(), |h| h.to_string()))
        .push("growth", cfg.growth)
        .push("kloc", cfg.k_loc)
        .push("kad", cfg.k_ad)
        .push("penalty", cfg.penalty)
        .push("memory", cfg.memory);
    if cfg.memory {
        m.push("aggkern", cfg.k_me)
            .push("tau1", cfg.tau1)
            .push("eta0", cfg.eta0)
            .push("kstar", cfg.kstar);
    }
}

fn finish_manifest(mut m: Manifest, path: &Path) -> anyhow::Result<()> {
    m.push("finished", unix_time());
    m.write(path)?;
    Ok(())
}

fn required<T: Clone>(value: &Option<T>, flag: &str) -> anyhow::Result<T> {
    value
        .clone()
        .with_context(|| format!("--{flag} is required (or `{}` in the config file)", flag.replace('-', "_")))
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

pub fn smooth(args: &SmoothArgs) -> anyhow::Result<()> {
    let input = required(&args.input, "input")?;
    let output = required(&args.output, "output")?;
    let manifest_path = args
        .manifest
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.manifest", output.display())));
    let family = args.family.resolve()?;
    let cfg = args.smoothing.resolve()?;
    let mut manifest = manifest_head("smooth");

    let data = read_input_csv(&input)?;
    let design = Design::new(data.x.clone())?;
    let obs = Observations::new(data.y.clone(), &family)?;
    let smoother = Smoother::new(&design, &obs, &family, &cfg)?;
    let last = smoother.run_final();

    manifest.push("input", input.display());
    push_ps_config(&mut manifest, &family, &cfg);
    manifest
        .push("n", data.len())
        .push("steps", smoother.schedule().len());
    write_estimates_csv(&output, &data, &last)?;
    manifest.push("output.estimates", output.display());

    if args.partition.is_some() || args.step_function.is_some() {
        let partition = partition_from_weights(&smoother.final_weights(&last), 0.0);
        manifest.push("regions", partition.regions());
        if let Some(path) = &args.partition {
            write_partition_csv(path, &partition)?;
            manifest.push("output.partition", path.display());
        }
        if let Some(path) = &args.step_function {
            let stepf = associated_step_function(&partition, last.estimates())?;
            write_step_function_csv(path, &stepf)?;
            manifest.push("output.step_function", path.display());
        }
    }
    println!("steps={}", smoother.schedule().len());
    if let Some(truth) = &data.theta_true {
        let err = mae(last.estimates(), truth)?;
        manifest.push("mae", err);
        println!("mae={err}");
    }
    finish_manifest(manifest, &manifest_path)
}

fn default_theta(family: &Family) -> f64 {
    match family {
        Family::Exponential | Family::Poisson => 1.0,
        Family::Bernoulli => 0.5,
        Family::Gaussian { .. } | Family::LogNormal { .. } => 0.0,
    }
}

fn calibration_config(args: &CalibrateArgs) -> anyhow::Result<CalibrationConfig> {
    let d = CalibrationConfig::default();
    let base = PsConfig {
        k_loc: match &args.kloc {
            Some(k) => k.parse()?,
            None => d.base.k_loc,
        },
        k_ad: match &args.kad {
            Some(k) => k.parse()?,
            None => d.base.k_ad,
        },
        growth: args.growth.unwrap_or(d.base.growth),
        ..d.base.clone()
    };
    let cfg = CalibrationConfig {
        replicates: args.replicates.unwrap_or(d.replicates),
        n_design: args.n.unwrap_or(d.n_design),
        p_grid: match &args.p_grid {
            Some(p) => parse_reals(p, "p_grid")?,
            None => d.p_grid.clone(),
        },
        epsilon: args.epsilon.unwrap_or(d.epsilon),
        mono_slack: args.slack.unwrap_or(d.mono_slack),
        lambda_lo: args.lambda_lo.unwrap_or(d.lambda_lo),
        lambda_hi: args.lambda_hi.unwrap_or(d.lambda_hi),
        seed: args.seed.unwrap_or(d.seed),
        hmax: args.hmax,
        noise_correction: !args.literal,
        batches: args.batches.unwrap_or(d.batches),
        base,
        ..d
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn calibrate(args: &CalibrateArgs) -> anyhow::Result<()> {
    let family = args.family.resolve()?;
    let theta = args.theta.unwrap_or_else(|| default_theta(&family));
    let cfg = calibration_config(args)?;
    if !args.inhomogeneous && (args.phi.is_some() || args.kappa.is_some() || args.testfn.is_some()) {
        bail!("phi, kappa and testfn need --inhomogeneous");
    }
    let mut manifest = manifest_head("calibrate");

    let cal = calibrate_lambda(&family, theta, &cfg)?;
    let mut report = Manifest::new();
    report
        .push("lambda", cal.lambda)
        .push("family", family)
        .push("theta", theta)
        .push("epsilon", cfg.epsilon)
        .push("p_grid", cfg.p_grid.iter().map(f64::to_string).collect::<Vec<_>>().join(","))
        .push("slack", cfg.mono_slack)
        .push("replicates", cfg.replicates)
        .push("batches", cfg.batches)
        .push("n", cfg.n_design)
        .push("seed", cfg.seed)
        .push("noise_correction", cfg.noise_correction)
        .push("evaluations", cal.evaluations.len());

    let mut inhomogeneous_curve = None;
    if args.inhomogeneous {
        let phi = required(&args.phi, "phi")?;
        let testfn: Option<TestFunction> = args.testfn.as_deref().map(str::parse).transpose()?;
        let truth = match testfn {
            Some(tf) => Some(truth_for(tf, cfg.n_design, &family)?),
            None => None,
        };
        let kappa = match (args.kappa, &args.interval, &truth) {
            (Some(k), _, _) => k,
            (None, Some(iv), _) => {
                let v = parse_reals(iv, "interval")?;
                let [lo, hi] = v[..] else {
                    bail!("--interval takes `lo,hi`");
                };
                family.kappa(ParamInterval::new(lo, hi)?)?
            }
            (None, None, Some(t)) => {
                let lo = t.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                family.kappa(ParamInterval::new(lo, hi)?)?
            }
            (None, None, None) => bail!("--inhomogeneous needs --kappa, --interval or --testfn"),
        };
        let lphi = lambda_phi(cal.lambda, kappa, phi);
        report.push("phi", phi).push("kappa", kappa).push("lambda_phi", lphi);
        if let (Some(tf), Some(truth)) = (testfn, truth) {
            let icfg = CalibrationConfig {
                phi0: Some(phi),
                ..cfg.clone()
            };
            let curve = estimate_z_curve_inhomogeneous(lphi, &family, &truth, &icfg)?;
            let check = check_propagation(&curve, &icfg);
            report
                .push("testfn", tf)
                .push("inhomogeneous_check", if check.passed { "pass" } else { "fail" });
            if let Some(v) = check.violation {
                report.push("inhomogeneous_violation", v);
            }
            inhomogeneous_curve = Some(curve);
        }
    }

    let text = report.render();
    print!("{text}");
    if let Some(dir) = &args.out_dir {
        create_dir(dir)?;
        let report_path = dir.join("report.txt");
        let curve_path = dir.join("curve.csv");
        fs::write(&report_path, &text)
            .with_context(|| format!("cannot write {}", report_path.display()))?;
        write_curve_csv(&curve_path, &cal.curve)?;
        for (k, v) in report.entries() {
            manifest.push(k.clone(), v);
        }
        manifest
            .push("output.report", report_path.display())
            .push("output.curve", curve_path.display());
        if let Some(curve) = &inhomogeneous_curve {
            let path = dir.join("curve_inhomogeneous.csv");
            write_curve_csv(&path, curve)?;
            manifest.push("output.curve_inhomogeneous", path.display());
        }
        finish_manifest(manifest, &dir.join("manifest.txt"))?;
    }
    Ok(())
}

fn weights_data(args: &WeightsArgs, family: &Family) -> anyhow::Result<(InputData, String)> {
    if let Some(path) = &args.input {
        if args.testfn.is_some() {
            bail!("--input and --testfn are mutually exclusive");
        }
        return Ok((read_input_csv(path)?, path.display().to_string()));
    }
    let tf: TestFunction = args.testfn.as_deref().unwrap_or("indicator").parse()?;
    let n = args.n.unwrap_or(1000);
    let seed = args.seed.unwrap_or(1);
    let truth = truth_for(tf, n, family)?;
    let obs = generate_data(&truth, family, seed)?;
    let data = InputData {
        index: (0..n as u64).collect(),
        x: (1..=n).map(|x| x as f64).collect(),
        y: obs.values().to_vec(),
        theta_true: Some(truth),
    };
    Ok((data, format!("simulated:{tf}:n={n}:seed={seed}")))
}

fn dense_location_weights(design: &Design, h: f64, k_loc: Kernel) -> Vec<f64> {
    let n = design.len();
    let mut out = vec![0.0; n * n];
    for (i, row) in out.chunks_mut(n).enumerate() {
        for (j, w) in nonadaptive_weights(design, h, k_loc, i).0 {
            row[j] = w;
        }
    }
    out
}

pub fn weights(args: &WeightsArgs) -> anyhow::Result<()> {
    let out_dir = required(&args.out_dir, "out-dir")?;
    let family = args.family.resolve()?;
    let cfg = SmoothingArgs::resolve(&args.smoothing)?;
    let cap = args.max_n.unwrap_or(2000);
    let n = match (&args.input, args.n) {
        (None, n) => n.unwrap_or(1000),
        (Some(_), _) => 0,
    };
    if n > cap {
        return Err(ResourceCap(format!(
            "n = {n} exceeds the image cap of {cap} points; subsample the data or raise --max-n"
        ))
        .into());
    }
    let (data, source) = weights_data(args, &family)?;
    if data.len() > cap {
        return Err(ResourceCap(format!(
            "n = {} exceeds the image cap of {cap} points; subsample the data or raise --max-n",
            data.len()
        ))
        .into());
    }
    let mut manifest = manifest_head("weights");

    let design = Design::new(data.x.clone())?;
    let obs = Observations::new(data.y.clone(), &family)?;
    let smoother = Smoother::new(&design, &obs, &family, &cfg)?;
    let last = smoother.schedule().len() - 1;
    let step = args.step.unwrap_or(last + 1);
    if !(1..=last + 1).contains(&step) {
        bail!("--step must lie in 1..={} for this schedule", last + 1);
    }
    let mut prev = smoother.initial_state();
    while prev.k + 1 < step {
        prev = smoother.advance(&prev).expect("step within schedule");
    }
    let h = smoother.schedule()[step.min(last)];

    let n = design.len();
    let wbar = dense_location_weights(&design, h, cfg.k_loc);
    let wtilde = smoother.adaptive_weights(&prev, h).to_dense();
    let kad = smoother.adaptation_factors(&prev);

    create_dir(&out_dir)?;
    manifest.push("input", source);
    push_ps_config(&mut manifest, &family, &cfg);
    manifest.push("n", n).push("step", step).push("h", h);
    for (name, values) in [("wbar", &wbar), ("wtilde", &wtilde), ("kad", &kad)] {
        let path = out_dir.join(format!("{name}.pgm"));
        write_pgm(&path, n, values)?;
        manifest.push(format!("output.{name}"), path.display());
    }
    finish_manifest(manifest, &out_dir.join("manifest.txt"))
}

pub fn experiment(args: &ExperimentArgs) -> anyhow::Result<()> {
    let out_dir = required(&args.out_dir, "out-dir")?;
    let d = ExperimentConfig::default();
    let config = ExperimentConfig {
        family: args.family.resolve()?,
        testfn: match &args.testfn {
            Some(t) => t.parse()?,
            None => d.testfn,
        },
        n: args.n.unwrap_or(d.n),
        lambda: resolve_lambda(args.lambda, args.nonadaptive)?,
        hmax: match &args.hmax {
            Some(h) => parse_reals(h, "hmax")?,
            None => d.hmax.clone(),
        },
        seeds: match &args.seeds {
            Some(s) => parse_seeds(s)?,
            None => d.seeds.clone(),
        },
        memory: args.memory.resolve()?,
        penalty: args.penalty.resolve()?,
        out_dir: Some(out_dir),
    };
    let summary = run_replications(&config)?;
    println!("hmax,median_mae,q1,q3");
    for (h, b) in &summary.boxes {
        println!("{h},{},{},{}", b.median, b.q1, b.q3);
    }
    Ok(())
}
