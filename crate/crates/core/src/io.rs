//! File formats: CSV data and results, binary PGM images, key=value manifests.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so equal
//! values always produce identical bytes.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::algorithm::IterationState;
use crate::calibrate::PropagationCurve;
use crate::error::{Error, Result};
use crate::stepfunc::{Partition, StepFunction};

/// Columns of an input data file.
#[derive(Clone, Debug, PartialEq)]
pub struct InputData {
    pub index: Vec<u64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub theta_true: Option<Vec<f64>>,
}

impl InputData {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

fn parse_error(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads `index,x,y[,theta_true]` with a header row; column order is free.
pub fn read_input_csv(path: &Path) -> Result<InputData> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_input_csv(file, path)
}

/// Like [`read_input_csv`]; `path` only labels error messages.
pub fn parse_input_csv<R: Read>(reader: R, path: &Path) -> Result<InputData> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| parse_error(path, 1, e.to_string()))?
        .clone();
    let column = |name: &str| headers.iter().position(|h| h == name);
    let (Some(ci), Some(cx), Some(cy)) = (column("index"), column("x"), column("y")) else {
        return Err(parse_error(path, 1, "header must contain index, x and y"));
    };
    let ct = column("theta_true");

    let mut data = InputData {
        index: Vec::new(),
        x: Vec::new(),
        y: Vec::new(),
        theta_true: ct.map(|_| Vec::new()),
    };
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_error(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |c: usize, name: &str| -> Result<&str> {
            record
                .get(c)
                .ok_or_else(|| parse_error(path, line, format!("missing `{name}`")))
        };
        let real = |c: usize, name: &str| -> Result<f64> {
            let raw = field(c, name)?;
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_error(path, line, format!("`{name}` = `{raw}` is not a finite number")))
        };
        let raw = field(ci, "index")?;
        let index = raw
            .parse()
            .map_err(|_| parse_error(path, line, format!("`index` = `{raw}` is not an integer")))?;
        data.index.push(index);
        data.x.push(real(cx, "x")?);
        data.y.push(real(cy, "y")?);
        if let (Some(c), Some(t)) = (ct, data.theta_true.as_mut()) {
            t.push(real(c, "theta_true")?);
        }
    }
    if data.is_empty() {
        return Err(parse_error(path, 2, "no data rows"));
    }
    Ok(data)
}

fn create(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(format!("{other:?}"))),
    }
}

fn finish(path: &Path, mut w: csv::Writer<fs::File>) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

macro_rules! row {
    ($w:expr, $path:expr, $($v:expr),+ $(,)?) => {
        $w.write_record(&[$($v.to_string()),+]).map_err(|e| csv_error($path, e))?
    };
}

/// Writes `index,x,y,theta_hat,n_tilde`.
pub fn write_estimates_csv(path: &Path, data: &InputData, state: &IterationState) -> Result<()> {
    let mut w = create(path)?;
    row!(w, path, "index", "x", "y", "theta_hat", "n_tilde");
    for i in 0..data.len() {
        row!(w, path, data.index[i], data.x[i], data.y[i], state.theta_hat[i], state.n_tilde[i]);
    }
    finish(path, w)
}

/// Writes `lambda,k,h,p,z`; with several monitored points their rows follow
/// each other in the order of `curve.monitored`.
pub fn write_curve_csv(path: &Path, curve: &PropagationCurve) -> Result<()> {
    let mut w = create(path)?;
    row!(w, path, "lambda", "k", "h", "p", "z");
    for point in 0..curve.monitored.len() {
        for (k, h) in curve.schedule.iter().enumerate() {
            for (pi, p) in curve.p_grid.iter().enumerate() {
                row!(w, path, curve.lambda, k, h, p, curve.z_at(point, k, pi));
            }
        }
    }
    finish(path, w)
}

/// Writes `index,label`.
pub fn write_partition_csv(path: &Path, partition: &Partition) -> Result<()> {
    let mut w = create(path)?;
    row!(w, path, "index", "label");
    for (i, l) in partition.labels().iter().enumerate() {
        row!(w, path, i, l);
    }
    finish(path, w)
}

/// Writes `label,value,size`.
pub fn write_step_function_csv(path: &Path, stepf: &StepFunction) -> Result<()> {
    let mut w = create(path)?;
    row!(w, path, "label", "value", "size");
    for ((l, v), s) in stepf.values.iter().enumerate().zip(stepf.partition.sizes()) {
        row!(w, path, l, v, s);
    }
    finish(path, w)
}

/// Binary greyscale image of a row-major `n × n` matrix with entries in
/// `[0, 1]`: 0 is black, 1 is white.
pub fn encode_pgm(n: usize, values: &[f64]) -> Vec<u8> {
    assert_eq!(values.len(), n * n, "image must be n x n");
    let mut out = format!("P5\n{n} {n}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| (255.0 * v.clamp(0.0, 1.0)).round() as u8));
    out
}

pub fn write_pgm(path: &Path, n: usize, values: &[f64]) -> Result<()> {
    fs::write(path, encode_pgm(n, values)).map_err(|e| Error::io(path, e))
}

/// Ordered `key=value` lines.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new() -> Self {
        Manifest::default()
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) -> &mut Self {
        self.entries.push((key.into(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn render(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn parse(text: &str) -> Manifest {
        let entries = text
            .lines()
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
            .collect();
        Manifest { entries }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.render().as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}
