//! Synthetic heteroskedastic datasets, standardization, subsampling and CSV I/O.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::lattice::{Field, Lattice1D};
use crate::rng::{stream, Stream};

/// Default number of synthetic training points.
pub const DEFAULT_POINTS: usize = 64;

const TRUE_MEAN: &str = "true_mean";
const TRUE_SD: &str = "true_sd";

/// The three simulated benchmark problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticKind {
    /// `μ = 2 sin(4πx)`, `f = sin(6πx) + 1.25` on `[0, 1]`.
    Sine,
    /// `μ = x³`, piecewise-constant `f` on `[−1, 1]`.
    Cubic,
    /// `μ = x − 2x² + x³/2`, `f = x + 1.5` on `[−1.5, 1.5]`.
    Curve,
}

impl SyntheticKind {
    pub fn domain(self) -> (f64, f64) {
        match self {
            SyntheticKind::Sine => (0.0, 1.0),
            SyntheticKind::Cubic => (-1.0, 1.0),
            SyntheticKind::Curve => (-1.5, 1.5),
        }
    }

    pub fn mean(self, x: f64) -> f64 {
        use std::f64::consts::PI;
        match self {
            SyntheticKind::Sine => 2.0 * (4.0 * PI * x).sin(),
            SyntheticKind::Cubic => x * x * x,
            SyntheticKind::Curve => x - 2.0 * x * x + 0.5 * x * x * x,
        }
    }

    /// Heteroskedastic noise standard deviation `f(x)`.
    pub fn noise_sd(self, x: f64) -> f64 {
        use std::f64::consts::PI;
        match self {
            SyntheticKind::Sine => (6.0 * PI * x).sin() + 1.25,
            SyntheticKind::Cubic => {
                if x < -0.5 {
                    0.1
                } else if x < 0.0 {
                    1.0
                } else if x < 0.5 {
                    3.0
                } else {
                    10.0
                }
            }
            SyntheticKind::Curve => x + 1.5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SyntheticKind::Sine => "sine",
            SyntheticKind::Cubic => "cubic",
            SyntheticKind::Curve => "curve",
        }
    }
}

impl fmt::Display for SyntheticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sine" => Ok(SyntheticKind::Sine),
            "cubic" => Ok(SyntheticKind::Cubic),
            "curve" => Ok(SyntheticKind::Curve),
            _ => Err(Error::UnknownDataset(s.to_string())),
        }
    }
}

/// How a synthetic response is generated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    /// `false` fixes `f ≡ 1`.
    pub heteroskedastic: bool,
    /// Multiplies every noise draw; 0 yields `y = μ(x)` exactly.
    pub noise_scale: f64,
}

impl SyntheticSpec {
    pub fn new(kind: SyntheticKind, heteroskedastic: bool) -> Self {
        Self {
            kind,
            heteroskedastic,
            noise_scale: 1.0,
        }
    }

    pub fn sd(&self, x: f64) -> f64 {
        if self.heteroskedastic {
            self.kind.noise_sd(x)
        } else {
            1.0
        }
    }

    fn realize(&self, xs: &[f64], rng: &mut impl Rng) -> Dataset {
        let true_mean: Vec<f64> = xs.iter().map(|&x| self.kind.mean(x)).collect();
        let true_sd: Vec<f64> = xs.iter().map(|&x| self.sd(x)).collect();
        let y = true_mean
            .iter()
            .zip(&true_sd)
            .map(|(&m, &s)| {
                let z: f64 = StandardNormal.sample(rng);
                m + self.noise_scale * s * z
            })
            .collect();
        Dataset {
            x: xs.iter().map(|&x| vec![x]).collect(),
            y,
            true_mean: Some(true_mean),
            true_sd: Some(true_sd),
            columns: vec!["x".into()],
        }
    }
}

/// Covariate rows and responses, plus the generating curves when known.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub true_mean: Option<Vec<f64>>,
    pub true_sd: Option<Vec<f64>>,
    /// Covariate column names.
    pub columns: Vec<String>,
}

impl Dataset {
    /// One-dimensional dataset with no known truth.
    pub fn from_xy(x: &[f64], y: &[f64]) -> Result<Self> {
        let d = Dataset {
            x: x.iter().map(|&v| vec![v]).collect(),
            y: y.to_vec(),
            true_mean: None,
            true_sd: None,
            columns: vec!["x".into()],
        };
        d.validate()?;
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.columns.len()
    }

    /// First covariate of every row.
    pub fn x1(&self) -> Vec<f64> {
        self.x.iter().map(|r| r[0]).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.y.len();
        for len in [
            Some(self.x.len()),
            self.true_mean.as_ref().map(Vec::len),
            self.true_sd.as_ref().map(Vec::len),
        ]
        .into_iter()
        .flatten()
        {
            if len != n {
                return Err(Error::LengthMismatch { expected: n, got: len });
            }
        }
        let dim = self.columns.len();
        for row in &self.x {
            if row.len() != dim {
                return Err(Error::LengthMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
        }
        let values = self
            .x
            .iter()
            .flatten()
            .chain(&self.y)
            .chain(self.true_mean.iter().flatten())
            .chain(self.true_sd.iter().flatten());
        if let Some(i) = values.enumerate().find(|(_, v)| !v.is_finite()).map(|(i, _)| i) {
            return Err(Error::NonFinite { site: i });
        }
        Ok(())
    }

    /// Rows at `idx`, in the given order.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        let pick = |v: &Vec<f64>| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Dataset {
            x: idx.iter().map(|&i| self.x[i].clone()).collect(),
            y: pick(&self.y),
            true_mean: self.true_mean.as_ref().map(pick),
            true_sd: self.true_sd.as_ref().map(pick),
            columns: self.columns.clone(),
        }
    }

    /// Applies a response transform to `y` and the truth curves.
    pub fn with_response_scale(&self, s: &Standardizer) -> Dataset {
        Dataset {
            x: self.x.clone(),
            y: self.y.iter().map(|&v| s.apply(v)).collect(),
            true_mean: self.true_mean.as_ref().map(|m| m.iter().map(|&v| s.apply(v)).collect()),
            true_sd: self.true_sd.as_ref().map(|m| m.iter().map(|&v| v / s.sd).collect()),
            columns: self.columns.clone(),
        }
    }
}

/// Affine map `v ↦ (v − mean) / sd`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Standardizer {
    pub mean: f64,
    pub sd: f64,
}

impl Standardizer {
    pub const IDENTITY: Standardizer = Standardizer { mean: 0.0, sd: 1.0 };

    /// Sample mean and sample sd (divisor `n − 1`) of `v`.
    pub fn fit(v: &[f64]) -> Result<Self> {
        if v.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "standardization needs at least 2 values, got {}",
                v.len()
            )));
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        if !(var > 0.0) || !var.is_finite() {
            return Err(Error::ZeroVariance);
        }
        Ok(Self { mean, sd: var.sqrt() })
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.sd
    }

    pub fn invert(&self, v: f64) -> f64 {
        v * self.sd + self.mean
    }
}

/// Rescales responses to sample mean 0 and sample sd 1.
pub fn standardize(d: &Dataset) -> Result<(Dataset, Standardizer)> {
    let s = Standardizer::fit(&d.y)?;
    Ok((d.with_response_scale(&s), s))
}

/// Unstandardized draw: `x ~ Uniform(domain)`, `y = μ(x) + f(x)·ε`.
pub fn generate_raw(spec: &SyntheticSpec, n: usize, seed: u64) -> Result<Dataset> {
    raw_with_streams(spec, n, seed, Stream::Covariates, Stream::Noise)
}

fn raw_with_streams(spec: &SyntheticSpec, n: usize, seed: u64, xs: Stream, noise: Stream) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one point".into()));
    }
    let (lo, hi) = spec.kind.domain();
    let mut xrng = stream(seed, xs);
    let x: Vec<f64> = (0..n).map(|_| xrng.random_range(lo..hi)).collect();
    Ok(spec.realize(&x, &mut stream(seed, noise)))
}

/// Standardized synthetic training set and the transform that produced it.
pub fn gen_synthetic(kind: SyntheticKind, n: usize, seed: u64, heteroskedastic: bool) -> Result<(Dataset, Standardizer)> {
    let raw = generate_raw(&SyntheticSpec::new(kind, heteroskedastic), n, seed)?;
    standardize(&raw)
}

/// A fresh draw from the same process, rescaled with the training transform.
pub fn gen_synthetic_test(spec: &SyntheticSpec, n: usize, seed: u64, scale: &Standardizer) -> Result<Dataset> {
    let raw = raw_with_streams(spec, n, seed, Stream::TestCovariates, Stream::TestNoise)?;
    Ok(raw.with_response_scale(scale))
}

/// One noise realization of a synthetic problem at every lattice site.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeSample {
    pub y: Field,
    pub true_mean: Field,
    pub true_sd: Field,
    pub scale: Standardizer,
    points: Vec<f64>,
}

impl LatticeSample {
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Site-indexed dataset view.
    pub fn to_dataset(&self) -> Dataset {
        Dataset {
            x: self.points.iter().map(|&x| vec![x]).collect(),
            y: self.y.to_vec(),
            true_mean: Some(self.true_mean.to_vec()),
            true_sd: Some(self.true_sd.to_vec()),
            columns: vec!["x".into()],
        }
    }
}

fn check_domain(spec: &SyntheticSpec, lat: &Lattice1D) -> Result<()> {
    let (lo, hi) = spec.kind.domain();
    if lat.lo() < lo || lat.hi() > hi {
        return Err(Error::DomainMismatch {
            lat_lo: lat.lo(),
            lat_hi: lat.hi(),
            lo,
            hi,
        });
    }
    Ok(())
}

/// Data field `y(·)` on the lattice, standardized like the point datasets.
pub fn sample_field_on_lattice(spec: &SyntheticSpec, lat: &Lattice1D, seed: u64) -> Result<LatticeSample> {
    check_domain(spec, lat)?;
    let points = lat.points();
    let raw = spec.realize(&points, &mut stream(seed, Stream::Noise));
    let (d, scale) = standardize(&raw)?;
    Ok(LatticeSample {
        y: d.y.into(),
        true_mean: d.true_mean.unwrap_or_default().into(),
        true_sd: d.true_sd.unwrap_or_default().into(),
        scale,
        points,
    })
}

/// Independent realization on the same lattice, rescaled with `scale`.
pub fn sample_test_field(spec: &SyntheticSpec, lat: &Lattice1D, seed: u64, scale: &Standardizer) -> Result<LatticeSample> {
    check_domain(spec, lat)?;
    let points = lat.points();
    let d = spec
        .realize(&points, &mut stream(seed, Stream::TestNoise))
        .with_response_scale(scale);
    Ok(LatticeSample {
        y: d.y.into(),
        true_mean: d.true_mean.unwrap_or_default().into(),
        true_sd: d.true_sd.unwrap_or_default().into(),
        scale: *scale,
        points,
    })
}

/// Sorted indices of a uniform without-replacement draw of `k` out of `n`.
pub fn subsample_indices(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k > n {
        return Err(Error::SubsampleTooLarge {
            requested: k,
            available: n,
        });
    }
    let mut idx = rand::seq::index::sample(&mut stream(seed, Stream::Subsample), n, k).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Uniform without-replacement subsample of `k` rows, in original order.
pub fn subsample(d: &Dataset, k: usize, seed: u64) -> Result<Dataset> {
    Ok(d.select(&subsample_indices(d.len(), k, seed)?))
}

/// Seeded train/test split; `test_fraction` of the rows (rounded) go to test.
pub fn train_test_split(d: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::InvalidParameter(format!(
            "test fraction must lie in [0, 1), got {test_fraction}"
        )));
    }
    let n = d.len();
    let k = (test_fraction * n as f64).round() as usize;
    let test = subsample_indices(n, k, seed)?;
    let mut is_test = vec![false; n];
    for &i in &test {
        is_test[i] = true;
    }
    let train: Vec<usize> = (0..n).filter(|&i| !is_test[i]).collect();
    Ok((d.select(&train), d.select(&test)))
}

/// Reads a headered numeric CSV. Every column other than `target` (and the
/// optional `true_mean` / `true_sd` columns) is a covariate and is rescaled to
/// mean 0, sd 1.
pub fn load_csv(path: impl AsRef<Path>, target: &str) -> Result<Dataset> {
    let mut d = load_csv_raw(path, target)?;
    for c in 0..d.input_dim() {
        let col: Vec<f64> = d.x.iter().map(|r| r[c]).collect();
        // constant columns carry no information; leave them as they are
        if let Ok(s) = Standardizer::fit(&col) {
            for row in &mut d.x {
                row[c] = s.apply(row[c]);
            }
        }
    }
    Ok(d)
}

/// Like [`load_csv`] but keeps covariates exactly as stored.
pub fn load_csv_raw(path: impl AsRef<Path>, target: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers.iter().all(String::is_empty) {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    let target_idx = headers
        .iter()
        .position(|h| h == target)
        .ok_or_else(|| Error::MissingColumn(target.to_string()))?;
    let mean_idx = headers.iter().position(|h| h == TRUE_MEAN);
    let sd_idx = headers.iter().position(|h| h == TRUE_SD);
    let cov_idx: Vec<usize> = (0..headers.len())
        .filter(|&i| i != target_idx && Some(i) != mean_idx && Some(i) != sd_idx)
        .collect();

    let mut d = Dataset {
        x: Vec::new(),
        y: Vec::new(),
        true_mean: mean_idx.map(|_| Vec::new()),
        true_sd: sd_idx.map(|_| Vec::new()),
        columns: cov_idx.iter().map(|&i| headers[i].clone()).collect(),
    };
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let cell = |i: usize| -> Result<f64> {
            let raw = rec.get(i).unwrap_or("").trim();
            raw.parse::<f64>().map_err(|_| Error::NonNumeric {
                row,
                column: headers[i].clone(),
                value: raw.to_string(),
            })
        };
        d.x.push(cov_idx.iter().map(|&i| cell(i)).collect::<Result<_>>()?);
        d.y.push(cell(target_idx)?);
        if let (Some(i), Some(v)) = (mean_idx, d.true_mean.as_mut()) {
            v.push(cell(i)?);
        }
        if let (Some(i), Some(v)) = (sd_idx, d.true_sd.as_mut()) {
            v.push(cell(i)?);
        }
    }
    if d.is_empty() {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    d.validate()?;
    Ok(d)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        },
        _ => Error::Csv(e),
    }
}

/// Writes covariates, `y`, and any truth columns with a header row.
pub fn save_csv(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    crate::io::ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header: Vec<&str> = d.columns.iter().map(String::as_str).collect();
    header.push("y");
    if d.true_mean.is_some() {
        header.push(TRUE_MEAN);
    }
    if d.true_sd.is_some() {
        header.push(TRUE_SD);
    }
    w.write_record(&header)?;
    for i in 0..d.len() {
        let mut rec: Vec<String> = d.x[i].iter().map(f64::to_string).collect();
        rec.push(d.y[i].to_string());
        if let Some(m) = &d.true_mean {
            rec.push(m[i].to_string());
        }
        if let Some(s) = &d.true_sd {
            rec.push(s[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
