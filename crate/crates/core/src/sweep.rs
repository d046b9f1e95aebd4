//! Regularization grids, the `ρ = 1 − γ` diagonal search and multi-seed sweeps
//! over the lattice and network backends.

use std::collections::BTreeSet;
use std::fs::OpenOptions;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::{
    gen_synthetic, gen_synthetic_test, sample_field_on_lattice, sample_test_field, Dataset, LatticeSample,
    SyntheticKind, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::ft::{solve_ft, FtConfig, FtSolution, SolveStatus};
use crate::lattice::{dirichlet_energy, grad_centered, Lattice1D};
use crate::metrics::{ece, mu_mse, read_metrics_csv, sd_mse, write_metrics_csv, MetricRow};
use crate::nn::{geometric_complexity, mle_ensemble_predict, train_two_phase, LossKind, MvrModel, Prediction, TrainConfig};

pub fn logit(v: f64) -> f64 {
    (v / (1.0 - v)).ln()
}

pub fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Spacing {
    LogitUniform,
    CompositeDiagonal,
}

/// One axis of a regularization grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n: usize,
    pub lo: f64,
    pub hi: f64,
    pub spacing: Spacing,
}

impl GridSpec {
    /// Logit-uniform axis on `[lo, hi]`.
    pub fn logit(n: usize, lo: f64, hi: f64) -> Self {
        Self {
            n,
            lo,
            hi,
            spacing: Spacing::LogitUniform,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo > 0.0 && self.lo < self.hi && self.hi < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "grid bounds must satisfy 0 < lo < hi < 1, got [{}, {}]",
                self.lo, self.hi
            )));
        }
        if self.n < 2 {
            return Err(Error::InvalidParameter(format!("grid needs at least 2 points, got {}", self.n)));
        }
        Ok(())
    }

    pub fn values(&self) -> Result<Vec<f64>> {
        match self.spacing {
            Spacing::LogitUniform => logit_grid(self),
            Spacing::CompositeDiagonal => diagonal_grid(self.n),
        }
    }
}

/// `n` points equispaced in `logit(v)` between `lo` and `hi`. The endpoints
/// are returned exactly.
pub fn logit_grid(spec: &GridSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let (a, b) = (logit(spec.lo), logit(spec.hi));
    let last = spec.n - 1;
    Ok((0..spec.n)
        .map(|i| match i {
            0 => spec.lo,
            i if i == last => spec.hi,
            _ => logistic(a + (b - a) * i as f64 / last as f64),
        })
        .collect())
}

/// Smallest `ρ` on the diagonal grid.
pub const DIAGONAL_MIN: f64 = 1e-11;

/// Composite diagonal grid: 30% of the points log-uniform on
/// `[1e−11, 0.1)`, 30% mirrored as `1 − v` near one, the rest uniform on
/// `[0.1, 0.9]`. Sorted and free of duplicates.
pub fn diagonal_grid(n: usize) -> Result<Vec<f64>> {
    if n < 3 {
        return Err(Error::InvalidParameter(format!("diagonal grid needs at least 3 points, got {n}")));
    }
    let tail = ((0.3 * n as f64).round() as usize).max(1);
    let mid = n - 2 * tail;
    let (lo_exp, hi_exp) = (DIAGONAL_MIN.log10(), -1.0);
    let low: Vec<f64> = (0..tail)
        .map(|k| 10f64.powf(lo_exp + (hi_exp - lo_exp) * k as f64 / tail as f64))
        .collect();
    let mut v: Vec<f64> = low.clone();
    v.extend(match mid {
        0 => vec![],
        1 => vec![0.5],
        m => (0..m).map(|j| 0.1 + 0.8 * j as f64 / (m - 1) as f64).collect(),
    });
    v.extend(low.iter().rev().map(|l| 1.0 - l));
    v.sort_by(f64::total_cmp);
    v.dedup();
    Ok(v)
}

/// Logit-scale midpoint between the `ρ` with the lowest training `μ` error
/// and the `ρ` with the lowest training sd error, paired with `γ = 1 − ρ`.
///
/// Seeds at the same `ρ` are averaged first; runs that did not converge are
/// skipped. Ties go to the smaller `ρ`.
pub fn select_diagonal_model(rows: &[MetricRow]) -> Result<(f64, f64)> {
    let mut points: Vec<(f64, f64, f64, usize)> = Vec::new();
    for r in rows.iter().filter(|r| r.converged) {
        match points.iter_mut().find(|p| p.0 == r.rho) {
            Some(p) => {
                p.1 += r.train_mu_mse;
                p.2 += r.train_sd_mse;
                p.3 += 1;
            }
            None => points.push((r.rho, r.train_mu_mse, r.train_sd_mse, 1)),
        }
    }
    let points: Vec<(f64, f64, f64)> = points
        .into_iter()
        .map(|(rho, m, s, k)| (rho, m / k as f64, s / k as f64))
        .filter(|p| p.1.is_finite() && p.2.is_finite())
        .collect();
    if points.is_empty() {
        return Err(Error::Empty("converged diagonal runs"));
    }
    let argmin = |key: fn(&(f64, f64, f64)) -> f64| {
        points
            .iter()
            .min_by(|a, b| key(a).total_cmp(&key(b)).then(a.0.total_cmp(&b.0)))
            .map(|p| p.0)
            .expect("non-empty")
    };
    let rho_a = argmin(|p| p.1);
    let rho_b = argmin(|p| p.2);
    let rho = if rho_a == rho_b {
        rho_a
    } else {
        logistic(0.5 * (logit(rho_a) + logit(rho_b)))
    };
    Ok((rho, 1.0 - rho))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Paper,
    #[default]
    Desk,
}

impl Preset {
    pub fn ft(self, rho: f64, gamma: f64) -> FtConfig {
        match self {
            Preset::Paper => FtConfig::paper(rho, gamma),
            Preset::Desk => FtConfig::desk(rho, gamma),
        }
    }

    pub fn nn(self, loss: LossKind) -> TrainConfig {
        match self {
            Preset::Paper => TrainConfig::paper(loss),
            Preset::Desk => TrainConfig::desk(loss),
        }
    }

    /// Lattice sites for the field-theory backend.
    pub fn sites(self) -> usize {
        match self {
            Preset::Paper => 4096,
            Preset::Desk => 512,
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            other => Err(Error::Config(format!("unknown preset `{other}` (expected paper or desk)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    Ft,
    Nn,
}

fn yes() -> bool {
    true
}

fn default_n() -> usize {
    crate::datagen::DEFAULT_POINTS
}

fn default_test_n() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetPlan {
    pub name: SyntheticKind,
    #[serde(default = "yes")]
    pub heteroskedastic: bool,
    /// Seed of the data realization, shared by every run of the sweep.
    #[serde(default)]
    pub seed: u64,
    /// Training points for the network backend.
    #[serde(default = "default_n")]
    pub n: usize,
    /// Held-out points for the network backend.
    #[serde(default = "default_test_n")]
    pub test_n: usize,
    /// Lattice sites; the preset decides when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sites: Option<usize>,
}

impl DatasetPlan {
    pub fn new(name: SyntheticKind) -> Self {
        Self {
            name,
            heteroskedastic: true,
            seed: 0,
            n: default_n(),
            test_n: default_test_n(),
            sites: None,
        }
    }
}

fn default_lo() -> f64 {
    1e-10
}

fn default_hi() -> f64 {
    1.0 - 1e-5
}

/// Cells of a sweep: a full `ρ × γ` product or the diagonal `γ = 1 − ρ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridPlan {
    pub n: usize,
    #[serde(default = "default_lo")]
    pub lo: f64,
    #[serde(default = "default_hi")]
    pub hi: f64,
    #[serde(default)]
    pub diagonal: bool,
    /// Explicit `ρ` values replacing the generated axis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<Vec<f64>>,
    /// Explicit `γ` values replacing the generated axis (full grids only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Vec<f64>>,
}

impl GridPlan {
    pub fn full(n: usize) -> Self {
        Self {
            n,
            lo: default_lo(),
            hi: default_hi(),
            diagonal: false,
            rho: None,
            gamma: None,
        }
    }

    pub fn diagonal(n: usize) -> Self {
        Self {
            diagonal: true,
            ..Self::full(n)
        }
    }

    /// `(ρ, γ)` per cell, in cell-index order (row-major in `ρ`).
    pub fn cells(&self) -> Result<Vec<(f64, f64)>> {
        let axis = |explicit: &Option<Vec<f64>>| -> Result<Vec<f64>> {
            match explicit {
                Some(v) if v.is_empty() => Err(Error::Config("explicit grid axis is empty".into())),
                Some(v) => {
                    crate::ft::check_rho_gamma(v.iter().copied().fold(0.5, f64::max), 0.5)?;
                    crate::ft::check_rho_gamma(v.iter().copied().fold(0.5, f64::min), 0.5)?;
                    Ok(v.clone())
                }
                None if self.diagonal => diagonal_grid(self.n),
                None => logit_grid(&GridSpec::logit(self.n, self.lo, self.hi)),
            }
        };
        let rho = axis(&self.rho)?;
        if self.diagonal {
            if self.gamma.is_some() {
                return Err(Error::Config("a diagonal grid derives gamma from rho".into()));
            }
            return Ok(rho.into_iter().map(|r| (r, 1.0 - r)).collect());
        }
        let gamma = axis(&self.gamma)?;
        Ok(rho.iter().flat_map(|&r| gamma.iter().map(move |&g| (r, g))).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendPlan {
    pub kind: Backend,
    #[serde(default)]
    pub preset: Preset,
    /// Overrides the preset's epoch count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
}

fn default_seeds() -> Vec<u64> {
    (0..6).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedPlan {
    #[serde(default = "default_seeds")]
    pub values: Vec<u64>,
}

impl Default for SeedPlan {
    fn default() -> Self {
        Self { values: default_seeds() }
    }
}

/// A sweep: data, cells, backend and run seeds. Serialized as TOML with
/// sections `[dataset]`, `[grid]`, `[backend]`, `[seeds]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPlan {
    pub dataset: DatasetPlan,
    pub grid: GridPlan,
    #[serde(default)]
    pub backend: BackendPlan,
    #[serde(default)]
    pub seeds: SeedPlan,
}

impl SweepPlan {
    pub fn from_toml(text: &str) -> Result<Self> {
        let plan: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plan serializes")
    }

    /// Hex SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.values.is_empty() {
            return Err(Error::Config("a sweep needs at least one seed".into()));
        }
        let mut seen = BTreeSet::new();
        if let Some(s) = self.seeds.values.iter().find(|s| !seen.insert(**s)) {
            return Err(Error::Config(format!("seed {s} is listed twice")));
        }
        if self.dataset.n < 2 || self.dataset.test_n < 1 {
            return Err(Error::Config("dataset needs n >= 2 and test_n >= 1".into()));
        }
        self.grid.cells()?;
        let (rho, gamma) = (0.5, 0.5);
        match self.backend.kind {
            Backend::Ft => self.ft_config(rho, gamma, 0).validate(),
            Backend::Nn => self.nn_config(rho, gamma, 0).validate(),
        }
    }

    pub fn sites(&self) -> usize {
        self.dataset.sites.unwrap_or(self.backend.preset.sites())
    }

    pub fn ft_config(&self, rho: f64, gamma: f64, seed: u64) -> FtConfig {
        let cfg = self.backend.preset.ft(rho, gamma).with_seed(seed);
        match self.backend.epochs {
            Some(e) => cfg.with_epochs(e),
            None => cfg,
        }
    }

    pub fn nn_config(&self, rho: f64, gamma: f64, seed: u64) -> TrainConfig {
        let cfg = self.backend.preset.nn(LossKind::RhoGamma { rho, gamma }).with_seed(seed);
        match self.backend.epochs {
            Some(e) => cfg.with_epochs(e),
            None => cfg,
        }
    }

    /// Backend runs the plan requires: cells × seeds.
    pub fn run_count(&self) -> Result<usize> {
        Ok(self.grid.cells()?.len() * self.seeds.values.len())
    }
}

/// Training and held-out data shared read-only by every run of a sweep.
#[derive(Debug, Clone)]
pub enum Problem {
    Lattice {
        lat: Lattice1D,
        train: LatticeSample,
        test: LatticeSample,
    },
    Points {
        train: Dataset,
        test: Dataset,
        /// Uniform grid on which smoothness of the network outputs is measured.
        grid: Lattice1D,
    },
}

impl Problem {
    pub fn prepare(plan: &SweepPlan) -> Result<Self> {
        let d = &plan.dataset;
        let spec = SyntheticSpec::new(d.name, d.heteroskedastic);
        let (lo, hi) = d.name.domain();
        match plan.backend.kind {
            Backend::Ft => {
                let lat = Lattice1D::uniform(lo, hi, plan.sites(), None)?;
                let train = sample_field_on_lattice(&spec, &lat, d.seed)?;
                let test = sample_test_field(&spec, &lat, d.seed, &train.scale)?;
                Ok(Problem::Lattice { lat, train, test })
            }
            Backend::Nn => {
                let (train, scale) = gen_synthetic(d.name, d.n, d.seed, d.heteroskedastic)?;
                let test = gen_synthetic_test(&spec, d.test_n, d.seed, &scale)?;
                let grid = Lattice1D::uniform(lo, hi, plan.sites(), None)?;
                Ok(Problem::Points { train, test, grid })
            }
        }
    }
}

/// `(μ-MSE, sd-MSE, ECE)`, NaN where the predictions do not admit a score.
fn score(mu: &[f64], sd: &[f64], y: &[f64]) -> (f64, f64, f64) {
    (
        mu_mse(mu, y).unwrap_or(f64::NAN),
        sd_mse(sd, mu, y).unwrap_or(f64::NAN),
        ece(mu, sd, y).unwrap_or(f64::NAN),
    )
}

fn mean_sq_grad(f: &[f64], lat: &Lattice1D) -> f64 {
    grad_centered(f, lat)
        .map(|g| g.iter().map(|v| v * v).sum::<f64>() / g.len() as f64)
        .unwrap_or(f64::NAN)
}

/// Scores a lattice solution against the training and held-out realizations.
#[allow(clippy::too_many_arguments)]
pub fn ft_metrics(
    cell: usize,
    rho: f64,
    gamma: f64,
    seed: u64,
    sol: &FtSolution,
    lat: &Lattice1D,
    train_y: &[f64],
    test_y: &[f64],
) -> MetricRow {
    let mut row = MetricRow::failed(cell, rho, gamma, seed);
    let mu = &sol.fields.mu;
    let sd = sol.fields.sd();
    let lambda = sol.fields.lambda();
    (row.mu_mse, row.sd_mse, row.ece) = score(mu, &sd, test_y);
    (row.train_mu_mse, row.train_sd_mse, _) = score(mu, &sd, train_y);
    row.dirichlet_mu = dirichlet_energy(mu, lat).unwrap_or(f64::NAN);
    row.dirichlet_lambda = dirichlet_energy(&lambda, lat).unwrap_or(f64::NAN);
    row.gc_mu = mean_sq_grad(mu, lat);
    row.gc_lambda = mean_sq_grad(&lambda, lat);
    row.converged = sol.status == SolveStatus::Converged;
    row.clamp_events = sol.clamp_events;
    row
}

/// Scores one network pair, or the moment-matched mixture of several.
/// Smoothness is measured on `grid`, geometric complexity on the training
/// inputs (averaged over members).
#[allow(clippy::too_many_arguments)]
pub fn nn_metrics(
    cell: usize,
    rho: f64,
    gamma: f64,
    seed: u64,
    models: &[&MvrModel],
    train: &Dataset,
    test: &Dataset,
    grid: &Lattice1D,
    converged: bool,
) -> Result<MetricRow> {
    let predict = |rows: &[Vec<f64>]| -> Result<Prediction> {
        let each: Vec<Prediction> = models.iter().map(|m| m.predict(rows)).collect::<Result<_>>()?;
        match each.len() {
            1 => Ok(each.into_iter().next().expect("one member")),
            _ => mle_ensemble_predict(&each),
        }
    };
    let mut row = MetricRow::failed(cell, rho, gamma, seed);
    let on_test = predict(&test.x)?;
    let on_train = predict(&train.x)?;
    (row.mu_mse, row.sd_mse, row.ece) = score(&on_test.mu, &on_test.sd, &test.y);
    (row.train_mu_mse, row.train_sd_mse, _) = score(&on_train.mu, &on_train.sd, &train.y);
    let pts: Vec<Vec<f64>> = grid.points().into_iter().map(|x| vec![x]).collect();
    let on_grid = predict(&pts)?;
    let lambda: Vec<f64> = on_grid.sd.iter().map(|s| s.powi(-2)).collect();
    row.dirichlet_mu = dirichlet_energy(&on_grid.mu, grid).unwrap_or(f64::NAN);
    row.dirichlet_lambda = dirichlet_energy(&lambda, grid).unwrap_or(f64::NAN);
    let k = models.len() as f64;
    let gc = |f: fn(&MvrModel) -> &crate::nn::Mlp| {
        models
            .iter()
            .map(|m| geometric_complexity(f(m), &train.x).unwrap_or(f64::NAN))
            .sum::<f64>()
            / k
    };
    row.gc_mu = gc(|m| &m.mean);
    row.gc_lambda = gc(|m| &m.prec);
    row.converged = converged && row.values().iter().all(|v| v.is_finite());
    Ok(row)
}

/// Fits one cell with one seed and scores it. Numerical failure yields a
/// non-converged row; invalid settings are errors.
pub fn run_cell(plan: &SweepPlan, problem: &Problem, cell: usize, rho: f64, gamma: f64, seed: u64) -> Result<MetricRow> {
    match problem {
        Problem::Lattice { lat, train, test } => {
            let sol = solve_ft(&plan.ft_config(rho, gamma, seed), &train.y, lat)?;
            Ok(ft_metrics(cell, rho, gamma, seed, &sol, lat, &train.y, &test.y))
        }
        Problem::Points { train, test, grid } => {
            let cfg = plan.nn_config(rho, gamma, seed);
            let fit = train_two_phase(MvrModel::init(train.input_dim(), &cfg)?, train, &cfg)?;
            nn_metrics(cell, rho, gamma, seed, &[&fit.model], train, test, grid, fit.converged())
        }
    }
}

/// Every `(cell, seed)` run of the plan, sorted by cell then seed order.
pub fn run_sweep(plan: &SweepPlan) -> Result<Vec<MetricRow>> {
    Ok(run_sweep_to(plan, None, &SweepOptions::default())?.rows)
}

#[derive(Debug, Clone, Default)]
pub struct SweepOptions {
    /// Worker threads; all available cores when absent.
    pub jobs: Option<usize>,
    /// Keep rows already present in the output file and skip their runs.
    pub resume: bool,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub rows: Vec<MetricRow>,
    /// Runs performed by this call.
    pub computed: usize,
    /// Runs found complete in the output file.
    pub reused: usize,
}

/// Completed keys and provenance of a sweep output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepManifest {
    pub plan_hash: String,
    pub version: String,
    pub rows: usize,
    /// `(cell, seed)` pairs present in the metrics file.
    pub completed: Vec<(usize, u64)>,
}

/// `<csv>.manifest.json` next to the metrics file.
pub fn manifest_path(csv: &Path) -> PathBuf {
    let mut name = csv.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    csv.with_file_name(name)
}

fn read_existing(path: &Path, plan_cells: &[(f64, f64)]) -> Result<Vec<MetricRow>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let rows = match read_metrics_csv(path) {
        Ok(rows) => rows,
        // an interrupted run may leave a partial last line
        Err(Error::Csv(_)) | Err(Error::NonNumeric { .. }) | Err(Error::LengthMismatch { .. }) => {
            lenient_read(path)?
        }
        Err(e) => return Err(e),
    };
    for r in &rows {
        match plan_cells.get(r.cell) {
            Some(&(rho, gamma)) if rho == r.rho && gamma == r.gamma => {}
            _ => {
                return Err(Error::Config(format!(
                    "{} holds cell {} at ({}, {}), which this plan does not define",
                    path.display(),
                    r.cell,
                    r.rho,
                    r.gamma
                )))
            }
        }
    }
    Ok(rows)
}

fn lenient_read(path: &Path) -> Result<Vec<MetricRow>> {
    let mut r = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    Ok(r.records()
        .enumerate()
        .filter_map(|(i, rec)| rec.ok().and_then(|rec| MetricRow::from_record(&rec, i).ok()))
        .collect())
}

/// [`run_sweep`] with an output file: rows are appended as runs finish, and
/// on completion the file is rewritten in `(cell, seed)` order together with
/// its manifest, so the final bytes do not depend on scheduling.
pub fn run_sweep_to(plan: &SweepPlan, out: Option<&Path>, opts: &SweepOptions) -> Result<SweepOutcome> {
    plan.validate()?;
    let cells = plan.grid.cells()?;
    let seeds = &plan.seeds.values;
    let seed_rank = |s: u64| seeds.iter().position(|&t| t == s).unwrap_or(usize::MAX);

    let mut done: Vec<MetricRow> = match (out, opts.resume) {
        (Some(path), true) => read_existing(path, &cells)?
            .into_iter()
            .filter(|r| seeds.contains(&r.seed))
            .collect(),
        _ => Vec::new(),
    };
    let mut keys = BTreeSet::new();
    done.retain(|r| keys.insert((r.cell, r.seed)));
    let reused = done.len();

    let pending: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| seeds.iter().map(move |&s| (c, s)))
        .filter(|k| !keys.contains(k))
        .collect();

    if !pending.is_empty() {
        if let Some(path) = out {
            write_metrics_csv(&done, path)?;
        }
        let problem = Problem::prepare(plan)?;
        let appender = match out {
            Some(path) => Some(Mutex::new(
                csv::WriterBuilder::new().has_headers(false).from_writer(
                    OpenOptions::new()
                        .append(true)
                        .open(path)
                        .map_err(|e| Error::io(path, e))?,
                ),
            )),
            None => None,
        };
        let work = || {
            pending
                .par_iter()
                .map(|&(c, s)| {
                    let (rho, gamma) = cells[c];
                    let row = run_cell(plan, &problem, c, rho, gamma, s)?;
                    if let (Some(w), Some(path)) = (&appender, out) {
                        let mut w = w.lock().expect("writer lock");
                        w.write_record(row.to_record())?;
                        w.flush().map_err(|e| Error::io(path, e))?;
                    }
                    Ok(row)
                })
                .collect::<Result<Vec<_>>>()
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs.unwrap_or(0))
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        done.extend(pool.install(work)?);
    }

    done.sort_by_key(|r| (r.cell, seed_rank(r.seed)));
    if let Some(path) = out {
        write_metrics_csv(&done, path)?;
        let manifest = SweepManifest {
            plan_hash: plan.hash(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            rows: done.len(),
            completed: done.iter().map(|r| (r.cell, r.seed)).collect(),
        };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        crate::io::write_text(&manifest_path(path), &(json + "\n"))?;
    }
    Ok(SweepOutcome {
        rows: done,
        computed: pending.len(),
        reused,
    })
}

/// Spearman rank correlation, with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::Empty("rank pairs"));
    }
    let ranks = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    };
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    Ok(cov / (va * vb).sqrt())
}
