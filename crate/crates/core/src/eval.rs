//! Regression metrics and result tables.

use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean of `values` summed in ascending order, so the result does not depend
/// on input order. Returns NaN for an empty slice.
pub fn stable_mean(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.iter().sum::<f64>() / values.len() as f64
}

fn check_pair(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Input(format!(
            "prediction length {} does not match target length {}",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Input("metrics need at least one row".into()));
    }
    Ok(())
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    let sse: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sse / pred.len() as f64).sqrt())
}

/// Mean absolute error as a percentage of the largest value among all
/// predictions and targets.
pub fn relerror(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    let max = pred.iter().chain(truth).copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return Err(Error::Input(format!("relative error needs a positive maximum, got {max}")));
    }
    let mae: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64;
    Ok(100.0 * mae / max)
}

pub fn r2_score(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    if truth.len() < 2 {
        return Err(Error::Stat("r2 needs at least two rows".into()));
    }
    let mean = stable_mean(truth);
    let ss_tot: f64 = truth.iter().map(|t| (t - mean) * (t - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::Stat("r2 is undefined for constant targets".into()));
    }
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, t)| (t - p) * (t - p)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub dataset: String,
    pub n: usize,
    pub rmse: f64,
    pub relerror: f64,
    pub r2: f64,
}

pub fn evaluate(model: &str, dataset: &str, pred: &[f64], truth: &[f64]) -> Result<MetricsReport> {
    Ok(MetricsReport {
        model: model.to_string(),
        dataset: dataset.to_string(),
        n: truth.len(),
        rmse: rmse(pred, truth)?,
        relerror: relerror(pred, truth)?,
        r2: r2_score(pred, truth)?,
    })
}

pub const RESULTS_HEADER: [&str; 6] = ["model", "dataset", "n", "rmse", "relerror", "r2"];

/// Writes reports as CSV. Floats use the shortest round-trip representation.
pub fn write_results<W: Write>(w: W, reports: &[MetricsReport]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(RESULTS_HEADER)?;
    for r in reports {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_results<R: Read>(r: R) -> Result<Vec<MetricsReport>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    if header.iter().ne(RESULTS_HEADER) {
        return Err(Error::Schema {
            line: 1,
            field: format!("results header `{}`", header.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

/// Renders one table per dataset with the model rows in input order.
pub fn render_tables(reports: &[MetricsReport]) -> String {
    let mut datasets: Vec<&str> = Vec::new();
    for r in reports {
        if !datasets.contains(&r.dataset.as_str()) {
            datasets.push(&r.dataset);
        }
    }
    let width = reports.iter().map(|r| r.model.len()).max().unwrap_or(0).max(5);
    let mut s = String::new();
    for (i, ds) in datasets.iter().enumerate() {
        if i > 0 {
            s.push('\n');
        }
        let _ = writeln!(s, "Results on {ds} set");
        let _ = writeln!(s, "{:<width$}  {:>18}  {:>18}  {:>20}", "Model", "RMSE", "RELERROR", "R^2");
        for r in reports.iter().filter(|r| r.dataset == *ds) {
            let _ = writeln!(
                s,
                "{:<width$}  {:>18.12}  {:>18.10}  {:>20.15}",
                r.model, r.rmse, r.relerror, r.r2
            );
        }
    }
    s
}
