//! Fit-quality observables and their aggregation over repeated runs.

use std::collections::BTreeMap;
use std::path::Path;

use statrs::function::erf::erf_inv;

use crate::error::{Error, Result};

fn check_lengths(n: usize, others: &[usize]) -> Result<()> {
    if n == 0 {
        return Err(Error::Empty("predictions"));
    }
    match others.iter().find(|&&m| m != n) {
        Some(&got) => Err(Error::LengthMismatch { expected: n, got }),
        None => Ok(()),
    }
}

fn check_sd(sd: &[f64]) -> Result<()> {
    match sd.iter().position(|&s| !(s > 0.0)) {
        Some(i) => Err(Error::InvalidParameter(format!(
            "predicted sd must be positive, got {} at index {i}",
            sd[i]
        ))),
        None => Ok(()),
    }
}

/// `(1/n) Σ (ŷ − y)²`.
pub fn mu_mse(pred_mean: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(pred_mean.len(), &[y.len()])?;
    Ok(pred_mean.iter().zip(y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / y.len() as f64)
}

/// `(1/n) Σ (σ̂ − |y − μ̂|)²`.
pub fn sd_mse(pred_sd: &[f64], pred_mean: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(y.len(), &[pred_sd.len(), pred_mean.len()])?;
    check_sd(pred_sd)?;
    let n = y.len() as f64;
    Ok((0..y.len())
        .map(|i| (pred_sd[i] - (y[i] - pred_mean[i]).abs()).powi(2))
        .sum::<f64>()
        / n)
}

/// Nominal coverages 0.05, 0.10, …, 0.95.
pub fn default_levels() -> Vec<f64> {
    (1..20).map(|k| k as f64 / 20.0).collect()
}

/// Half-width, in standard deviations, of the central interval with coverage `q`.
pub fn central_z(q: f64) -> f64 {
    std::f64::consts::SQRT_2 * erf_inv(q)
}

fn coverage_counts(pred_mean: &[f64], pred_sd: &[f64], y: &[f64], levels: &[f64]) -> Vec<u64> {
    levels
        .iter()
        .map(|&q| {
            let z = central_z(q);
            (0..y.len())
                .filter(|&i| (y[i] - pred_mean[i]).abs() <= z * pred_sd[i])
                .count() as u64
        })
        .collect()
}

/// Expected calibration error over the default levels: the mean absolute gap
/// between nominal and empirical coverage of the central Gaussian intervals
/// `μ̂ ± z σ̂`.
///
/// With levels `k/20` the gaps are rationals with denominator `20n`, so the
/// sum is formed in integers and divided once.
pub fn ece(pred_mean: &[f64], pred_sd: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(y.len(), &[pred_mean.len(), pred_sd.len()])?;
    check_sd(pred_sd)?;
    let n = y.len() as i128;
    let counts = coverage_counts(pred_mean, pred_sd, y, &default_levels());
    let num: i128 = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| (20 * c as i128 - (i as i128 + 1) * n).abs())
        .sum();
    Ok(num as f64 / (20 * n * counts.len() as i128) as f64)
}

/// [`ece`] at arbitrary nominal levels in `(0, 1)`.
pub fn ece_at_levels(pred_mean: &[f64], pred_sd: &[f64], y: &[f64], levels: &[f64]) -> Result<f64> {
    check_lengths(y.len(), &[pred_mean.len(), pred_sd.len()])?;
    check_sd(pred_sd)?;
    if levels.is_empty() || levels.iter().any(|q| !(*q > 0.0 && *q < 1.0)) {
        return Err(Error::InvalidParameter("levels must be non-empty and lie in (0, 1)".into()));
    }
    let n = y.len() as f64;
    let counts = coverage_counts(pred_mean, pred_sd, y, levels);
    Ok(counts
        .iter()
        .zip(levels)
        .map(|(&c, q)| (c as f64 / n - q).abs())
        .sum::<f64>()
        / levels.len() as f64)
}

/// Names of the metric columns, in file order.
pub const METRIC_NAMES: [&str; 9] = [
    "mu_mse",
    "sd_mse",
    "ece",
    "train_mu_mse",
    "train_sd_mse",
    "dirichlet_mu",
    "dirichlet_lambda",
    "gc_mu",
    "gc_lambda",
];

/// One run at one `(ρ, γ)` cell. Test-set metrics unless prefixed `train_`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    /// Index of the cell within its sweep.
    pub cell: usize,
    pub rho: f64,
    pub gamma: f64,
    pub seed: u64,
    pub mu_mse: f64,
    pub sd_mse: f64,
    pub ece: f64,
    pub train_mu_mse: f64,
    pub train_sd_mse: f64,
    pub dirichlet_mu: f64,
    pub dirichlet_lambda: f64,
    pub gc_mu: f64,
    pub gc_lambda: f64,
    pub converged: bool,
    pub clamp_events: usize,
}

impl MetricRow {
    /// Row for a run that produced nothing usable.
    pub fn failed(cell: usize, rho: f64, gamma: f64, seed: u64) -> Self {
        let nan = f64::NAN;
        Self {
            cell,
            rho,
            gamma,
            seed,
            mu_mse: nan,
            sd_mse: nan,
            ece: nan,
            train_mu_mse: nan,
            train_sd_mse: nan,
            dirichlet_mu: nan,
            dirichlet_lambda: nan,
            gc_mu: nan,
            gc_lambda: nan,
            converged: false,
            clamp_events: 0,
        }
    }

    /// Metric values in [`METRIC_NAMES`] order.
    pub fn values(&self) -> [f64; 9] {
        [
            self.mu_mse,
            self.sd_mse,
            self.ece,
            self.train_mu_mse,
            self.train_sd_mse,
            self.dirichlet_mu,
            self.dirichlet_lambda,
            self.gc_mu,
            self.gc_lambda,
        ]
    }

    pub fn header() -> Vec<&'static str> {
        let mut h = vec!["cell", "rho", "gamma", "seed"];
        h.extend(METRIC_NAMES);
        h.extend(["converged", "clamp_events"]);
        h
    }

    pub fn to_record(&self) -> Vec<String> {
        let mut r = vec![
            self.cell.to_string(),
            self.rho.to_string(),
            self.gamma.to_string(),
            self.seed.to_string(),
        ];
        r.extend(self.values().iter().map(f64::to_string));
        r.push(self.converged.to_string());
        r.push(self.clamp_events.to_string());
        r
    }

    pub fn from_record(rec: &csv::StringRecord, row: usize) -> Result<Self> {
        let header = Self::header();
        if rec.len() != header.len() {
            return Err(Error::LengthMismatch {
                expected: header.len(),
                got: rec.len(),
            });
        }
        let bad = |i: usize| Error::NonNumeric {
            row,
            column: header[i].to_string(),
            value: rec[i].to_string(),
        };
        let f = |i: usize| rec[i].trim().parse::<f64>().map_err(|_| bad(i));
        let u = |i: usize| rec[i].trim().parse::<u64>().map_err(|_| bad(i));
        let v: Vec<f64> = (4..13).map(f).collect::<Result<_>>()?;
        Ok(Self {
            cell: u(0)? as usize,
            rho: f(1)?,
            gamma: f(2)?,
            seed: u(3)?,
            mu_mse: v[0],
            sd_mse: v[1],
            ece: v[2],
            train_mu_mse: v[3],
            train_sd_mse: v[4],
            dirichlet_mu: v[5],
            dirichlet_lambda: v[6],
            gc_mu: v[7],
            gc_lambda: v[8],
            converged: rec[13].trim().parse::<bool>().map_err(|_| bad(13))?,
            clamp_events: u(14)? as usize,
        })
    }
}

/// Writes rows with a header line.
pub fn write_metrics_csv(rows: &[MetricRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = crate::io::csv_writer(path)?;
    w.write_record(MetricRow::header())?;
    for r in rows {
        w.write_record(r.to_record())?;
    }
    crate::io::finish(w, path)
}

/// Reads a metrics CSV written by [`write_metrics_csv`].
pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<MetricRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::io(path, std::io::Error::other(e.to_string())),
        _ => Error::Csv(e),
    })?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != MetricRow::header() {
        return Err(Error::Config(format!("{} is not a metrics file", path.display())));
    }
    r.records()
        .enumerate()
        .map(|(i, rec)| MetricRow::from_record(&rec?, i))
        .collect()
}

/// Moments of every metric over the converged runs of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub rho: f64,
    pub gamma: f64,
    /// Converged runs entering the moments.
    pub runs: usize,
    /// Runs excluded because they were flagged.
    pub flagged: usize,
    pub mean: [f64; 9],
    /// Sample standard deviation (divisor `n − 1`; 0 for a single run).
    pub sd: [f64; 9],
}

/// Per-`(ρ, γ)` sample mean and sd of every metric, in order of first
/// appearance. Flagged rows are counted and left out of the moments.
pub fn aggregate_runs(rows: &[MetricRow]) -> Result<Vec<CellSummary>> {
    if rows.is_empty() {
        return Err(Error::Empty("metric rows"));
    }
    let mut order = Vec::new();
    let mut groups: BTreeMap<(u64, u64), Vec<&MetricRow>> = BTreeMap::new();
    for r in rows {
        let key = (r.rho.to_bits(), r.gamma.to_bits());
        let g = groups.entry(key).or_default();
        if g.is_empty() {
            order.push(key);
        }
        g.push(r);
    }
    Ok(order
        .into_iter()
        .map(|key| {
            let g = &groups[&key];
            let ok: Vec<[f64; 9]> = g.iter().filter(|r| r.converged).map(|r| r.values()).collect();
            let n = ok.len();
            let mut mean = [f64::NAN; 9];
            let mut sd = [f64::NAN; 9];
            if n > 0 {
                for k in 0..9 {
                    let m = ok.iter().map(|v| v[k]).sum::<f64>() / n as f64;
                    mean[k] = m;
                    sd[k] = if n == 1 {
                        0.0
                    } else {
                        (ok.iter().map(|v| (v[k] - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
                    };
                }
            }
            CellSummary {
                rho: g[0].rho,
                gamma: g[0].gamma,
                runs: n,
                flagged: g.len() - n,
                mean,
                sd,
            }
        })
        .collect())
}

/// Columns `rho, gamma, runs, flagged`, then `<metric>_mean, <metric>_sd`.
pub fn write_summary_csv(cells: &[CellSummary], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = crate::io::csv_writer(path)?;
    let mut header = vec!["rho".to_string(), "gamma".into(), "runs".into(), "flagged".into()];
    for m in METRIC_NAMES {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_sd"));
    }
    w.write_record(&header)?;
    for c in cells {
        let mut rec = vec![
            c.rho.to_string(),
            c.gamma.to_string(),
            c.runs.to_string(),
            c.flagged.to_string(),
        ];
        for k in 0..9 {
            rec.push(c.mean[k].to_string());
            rec.push(c.sd[k].to_string());
        }
        w.write_record(&rec)?;
    }
    crate::io::finish(w, path)
}
