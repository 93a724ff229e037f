//! CSV files for run records and law curves.
//!
//! Floats are written in Rust's shortest round-trip form, so a file read back
//! and rewritten is byte-identical. Undefined fields are empty; a diverged
//! run's final loss is `inf`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::RunRecord;
use crate::laws::{LawCurve, LawInputs, Variant};
use crate::model::{HessianSpec, PerCoordinate};
use crate::signstats::GradientStats;

/// Gradient statistics and Hessian at one point; `mu` and `sigma` may be
/// scalars broadcast to the Hessian's dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub hessian: HessianSpec,
    pub mu: PerCoordinate,
    pub sigma: PerCoordinate,
}

impl ModelFile {
    pub fn inputs(&self) -> Result<LawInputs> {
        let d = self.hessian.dim();
        LawInputs::new(
            GradientStats::new(self.mu.expand(d)?, self.sigma.expand(d)?)?,
            self.hessian.clone(),
        )
    }
}

pub const RUNS_HEADER: [&str; 7] = [
    "batch_size",
    "lr",
    "seed",
    "converged",
    "S",
    "E",
    "final_loss",
];
pub const CURVES_HEADER: [&str; 3] = ["variant", "B", "value"];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_runs<W: Write>(out: W, records: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RUNS_HEADER)?;
    for r in records {
        w.write_record([
            r.batch_size.to_string(),
            r.lr.to_string(),
            r.seed.to_string(),
            r.converged.to_string(),
            opt(r.steps),
            opt(r.examples()),
            opt(r.final_loss),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn check_header(found: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    if found.iter().ne(expected.iter().copied()) {
        return Err(Error::invalid(format!(
            "expected header {:?}, found {:?}",
            expected.join(","),
            found.iter().collect::<Vec<_>>().join(",")
        )));
    }
    Ok(())
}

fn field<T: std::str::FromStr>(
    row: &csv::StringRecord,
    line: usize,
    idx: usize,
    name: &str,
) -> Result<T> {
    let raw = row.get(idx).unwrap_or("");
    raw.parse()
        .map_err(|_| Error::invalid(format!("line {line}: bad {name} value {raw:?}")))
}

fn opt_field<T: std::str::FromStr>(
    row: &csv::StringRecord,
    line: usize,
    idx: usize,
    name: &str,
) -> Result<Option<T>> {
    if row.get(idx).unwrap_or("").is_empty() {
        Ok(None)
    } else {
        field(row, line, idx, name).map(Some)
    }
}

pub fn read_runs<R: Read>(input: R) -> Result<Vec<RunRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    check_header(rd.headers()?, &RUNS_HEADER)?;
    let mut out = Vec::new();
    for (k, row) in rd.records().enumerate() {
        let row = row?;
        let line = k + 2;
        let r = RunRecord {
            batch_size: field(&row, line, 0, "batch_size")?,
            lr: field(&row, line, 1, "lr")?,
            seed: field(&row, line, 2, "seed")?,
            converged: field(&row, line, 3, "converged")?,
            steps: opt_field(&row, line, 4, "S")?,
            final_loss: opt_field(&row, line, 6, "final_loss")?,
        };
        let e: Option<u64> = opt_field(&row, line, 5, "E")?;
        if e != r.examples() {
            return Err(Error::invalid(format!(
                "line {line}: E must equal S * batch_size"
            )));
        }
        if r.batch_size == 0 || !(r.lr > 0.0) {
            return Err(Error::invalid(format!(
                "line {line}: batch_size and lr must be positive"
            )));
        }
        out.push(r);
    }
    if out.is_empty() {
        return Err(Error::invalid("no run records"));
    }
    Ok(out)
}

pub fn write_curves<W: Write>(out: W, curves: &[LawCurve]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CURVES_HEADER)?;
    for c in curves {
        let label = c.variant.to_string();
        for (b, v) in &c.points {
            w.write_record([label.clone(), b.to_string(), v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Curves in first-appearance order of their variant.
pub fn read_curves<R: Read>(input: R) -> Result<Vec<LawCurve>> {
    let mut rd = csv::Reader::from_reader(input);
    check_header(rd.headers()?, &CURVES_HEADER)?;
    let mut out: Vec<LawCurve> = Vec::new();
    for (k, row) in rd.records().enumerate() {
        let row = row?;
        let line = k + 2;
        let variant: Variant = row.get(0).unwrap_or("").parse()?;
        let b: f64 = field(&row, line, 1, "B")?;
        let v: f64 = field(&row, line, 2, "value")?;
        match out.iter_mut().find(|c| c.variant == variant) {
            Some(c) => c.points.push((b, v)),
            None => out.push(LawCurve {
                variant,
                points: vec![(b, v)],
            }),
        }
    }
    if out.is_empty() {
        return Err(Error::invalid("no curve rows"));
    }
    Ok(out)
}
