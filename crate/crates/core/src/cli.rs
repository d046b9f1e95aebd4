//! Command-line front end. Every command writes its data files plus a
//! `<command>.manifest.json` into the `--out` directory.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bft::{ensemble_posterior, predictive_decomposition, write_ensemble};
use crate::datagen::{
    gen_synthetic, gen_synthetic_test, generate_raw, sample_field_on_lattice, sample_test_field, save_csv,
    SyntheticKind, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::ft::{solve_ft, write_fields_csv, write_trajectory_csv, FtConfig};
use crate::lattice::Lattice1D;
use crate::metrics::{aggregate_runs, write_metrics_csv, write_summary_csv};
use crate::nn::{train_two_phase, write_predictions_csv, LossKind, MvrModel, TrainConfig};
use crate::sweep::{
    ft_metrics, manifest_path, nn_metrics, run_sweep_to, select_diagonal_model, Backend, BackendPlan, DatasetPlan,
    GridPlan, Preset, SeedPlan, SweepOptions, SweepPlan,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "mvr", version, about = "Mean-variance regression on a lattice and with networks")]
pub struct Cli {
    /// Directory receiving every output file.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a synthetic dataset and write it as CSV.
    GenerateData(GenerateArgs),
    /// Minimize the lattice objective at one (rho, gamma).
    SolveFt(SolveArgs),
    /// Train a mean-variance network pair.
    TrainNn(TrainArgs),
    /// Run every (rho, gamma) cell of a grid for several seeds.
    Sweep(SweepArgs),
    /// Run the rho = 1 - gamma diagonal and optionally select a model.
    Diagonal(DiagonalArgs),
    /// Solve an ensemble of lattice fields and decompose its predictive spread.
    Bft(BftArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PresetArg {
    Paper,
    Desk,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Paper => Preset::Paper,
            PresetArg::Desk => Preset::Desk,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Ft,
    Nn,
}

impl From<BackendArg> for Backend {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Ft => Backend::Ft,
            BackendArg::Nn => Backend::Nn,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    RhoGamma,
    AlphaBeta,
    BetaNll,
    Mle,
}

/// Synthetic data selection shared by the fitting commands.
#[derive(Debug, Args)]
pub struct DataArgs {
    /// Synthetic function: sine, cubic or curve.
    #[arg(long, default_value = "sine")]
    pub name: String,
    /// Constant noise level instead of the heteroskedastic profile.
    #[arg(long)]
    pub homoskedastic: bool,
    /// Seed of the data realization.
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
}

impl DataArgs {
    fn kind(&self) -> Result<SyntheticKind> {
        self.name.parse()
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub name: String,
    #[arg(long, default_value_t = crate::datagen::DEFAULT_POINTS)]
    pub n: usize,
    #[arg(long, env = "MVR_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub homoskedastic: bool,
    /// Write unstandardized responses.
    #[arg(long)]
    pub raw: bool,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Defaults to 0.5 unless a config file sets it.
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, value_enum, default_value = "desk")]
    pub preset: PresetArg,
    /// Solver settings as TOML; flags given explicitly override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Lattice sites (preset default when absent).
    #[arg(long)]
    pub sites: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Initialization seed.
    #[arg(long, env = "MVR_SEED")]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Defaults to rho-gamma unless a config file sets it.
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Penalty weight for alpha-beta, or the variance exponent for beta-nll
    /// (default 0.5).
    #[arg(long)]
    pub beta: Option<f64>,
    /// Independently seeded networks, moment-matched into one predictor.
    #[arg(long, default_value_t = 1)]
    pub members: usize,
    #[arg(long, value_enum, default_value = "desk")]
    pub preset: PresetArg,
    /// Training settings as TOML; flags given explicitly override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training points.
    #[arg(long, default_value_t = crate::datagen::DEFAULT_POINTS)]
    pub n: usize,
    #[arg(long, default_value_t = 1000)]
    pub test_n: usize,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, env = "MVR_SEED")]
    pub seed: Option<u64>,
}

/// Options shared by the sweep-style commands.
#[derive(Debug, Args)]
pub struct SweepCommon {
    #[arg(long, value_enum, default_value = "ft")]
    pub backend: BackendArg,
    /// Number of run seeds, counted up from the base seed.
    #[arg(long, default_value_t = 6)]
    pub seeds: usize,
    /// First run seed.
    #[arg(long, env = "MVR_SEED", default_value_t = 0)]
    pub base_seed: u64,
    #[arg(long, value_enum, default_value = "desk")]
    pub preset: PresetArg,
    #[arg(long, default_value = "sine")]
    pub name: String,
    #[arg(long)]
    pub homoskedastic: bool,
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
    #[arg(long)]
    pub sites: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Plan file (TOML); replaces all of the flags above.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    /// Keep finished rows of an existing metrics file.
    #[arg(long)]
    pub resume: bool,
    /// Worker threads (all cores when absent).
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Points per axis.
    #[arg(long, default_value_t = 8)]
    pub grid: usize,
    #[command(flatten)]
    pub common: SweepCommon,
}

#[derive(Debug, Args)]
pub struct DiagonalArgs {
    /// Points along the diagonal.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Print the selected (rho*, gamma*).
    #[arg(long)]
    pub select: bool,
    #[command(flatten)]
    pub common: SweepCommon,
}

#[derive(Debug, Args)]
pub struct BftArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = crate::bft::ENSEMBLE_SIZE)]
    pub members: usize,
    #[arg(long, default_value_t = 0.5)]
    pub rho: f64,
    #[arg(long, default_value_t = 0.5)]
    pub gamma: f64,
    #[arg(long, value_enum, default_value = "desk")]
    pub preset: PresetArg,
    #[arg(long)]
    pub sites: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, env = "MVR_SEED", default_value_t = 0)]
    pub base_seed: u64,
    #[arg(long)]
    pub jobs: Option<usize>,
}

/// Provenance of one command invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// SHA-256 of the config or plan file, or of the effective settings when
    /// none was given.
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub version: String,
    pub outputs: Vec<PathBuf>,
    pub wall_time_s: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Messages go to stdout, errors to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_io() {
        EXIT_IO
    } else {
        EXIT_USAGE
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let start = Instant::now();
    let out = cli.out.as_path();
    let (name, produced) = match &cli.command {
        Command::GenerateData(a) => ("generate-data", cmd_generate_data(a, out)?),
        Command::SolveFt(a) => ("solve-ft", cmd_solve_ft(a, out)?),
        Command::TrainNn(a) => ("train-nn", cmd_train_nn(a, out)?),
        Command::Sweep(a) => ("sweep", cmd_sweep(a, out)?),
        Command::Diagonal(a) => ("diagonal", cmd_diagonal(a, out)?),
        Command::Bft(a) => ("bft", cmd_bft(a, out)?),
    };
    let manifest = RunManifest {
        command: name.to_string(),
        config_hash: produced.hash,
        seeds: produced.seeds,
        version: env!("CARGO_PKG_VERSION").to_string(),
        outputs: produced.outputs,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    crate::io::write_text(&out.join(format!("{name}.manifest.json")), &(json + "\n"))
}

/// What a command reports back for its manifest.
struct Produced {
    hash: String,
    seeds: Vec<u64>,
    outputs: Vec<PathBuf>,
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Settings from `--config` (or the preset) plus the canonical-hash input.
fn load_config<T: serde::de::DeserializeOwned + Serialize>(path: Option<&Path>, preset: T) -> Result<(T, Option<Vec<u8>>)> {
    match path {
        Some(p) => {
            let bytes = read_file(p)?;
            let text = String::from_utf8(bytes.clone()).map_err(|e| Error::Config(e.to_string()))?;
            let cfg = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            Ok((cfg, Some(bytes)))
        }
        None => Ok((preset, None)),
    }
}

fn hash_of(file: Option<Vec<u8>>, effective: &str) -> String {
    match file {
        Some(bytes) => sha256_hex(&bytes),
        None => sha256_hex(effective.as_bytes()),
    }
}

fn cmd_generate_data(a: &GenerateArgs, out: &Path) -> Result<Produced> {
    let kind: SyntheticKind = a.name.parse()?;
    let hetero = !a.homoskedastic;
    let data = if a.raw {
        generate_raw(&SyntheticSpec::new(kind, hetero), a.n, a.seed)?
    } else {
        gen_synthetic(kind, a.n, a.seed, hetero)?.0
    };
    let path = out.join(format!("{}_n{}_seed{}.csv", kind.name(), a.n, a.seed));
    save_csv(&data, &path)?;
    println!("wrote {} rows to {}", data.len(), path.display());
    Ok(Produced {
        hash: sha256_hex(format!("{} {} {} {} {}", kind.name(), a.n, a.seed, hetero, a.raw).as_bytes()),
        seeds: vec![a.seed],
        outputs: vec![path],
    })
}

fn cmd_solve_ft(a: &SolveArgs, out: &Path) -> Result<Produced> {
    let preset: Preset = a.preset.into();
    let (mut cfg, file) = load_config(a.config.as_deref(), preset.ft(0.5, 0.5))?;
    if let Some(r) = a.rho {
        cfg.rho = r;
    }
    if let Some(g) = a.gamma {
        cfg.gamma = g;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let kind = a.data.kind()?;
    let spec = SyntheticSpec::new(kind, !a.data.homoskedastic);
    let (lo, hi) = kind.domain();
    let lat = Lattice1D::uniform(lo, hi, a.sites.unwrap_or(preset.sites()), None)?;
    let train = sample_field_on_lattice(&spec, &lat, a.data.data_seed)?;
    let test = sample_test_field(&spec, &lat, a.data.data_seed, &train.scale)?;

    let sol = solve_ft(&cfg, &train.y, &lat)?;
    let row = ft_metrics(0, cfg.rho, cfg.gamma, cfg.seed, &sol, &lat, &train.y, &test.y);
    let paths = [out.join("fields.csv"), out.join("trajectory.csv"), out.join("metrics.csv"), out.join("config.toml")];
    write_fields_csv(&sol.fields, &lat, &paths[0])?;
    write_trajectory_csv(&sol.trajectory, &paths[1])?;
    write_metrics_csv(std::slice::from_ref(&row), &paths[2])?;
    let effective = toml::to_string(&cfg).expect("config serializes");
    crate::io::write_text(&paths[3], &effective)?;
    println!(
        "status {} after {} epochs, objective {:.6e}, test mu_mse {:.4}",
        sol.status.as_str(),
        sol.epochs_run(),
        sol.final_objective,
        row.mu_mse
    );
    Ok(Produced {
        hash: hash_of(file, &effective),
        seeds: vec![cfg.seed],
        outputs: paths.to_vec(),
    })
}

fn loss_kind(a: &TrainArgs) -> LossKind {
    match a.loss.unwrap_or(LossArg::RhoGamma) {
        LossArg::RhoGamma => LossKind::RhoGamma {
            rho: a.rho.unwrap_or(0.5),
            gamma: a.gamma.unwrap_or(0.5),
        },
        LossArg::AlphaBeta => LossKind::AlphaBeta {
            alpha: a.alpha.unwrap_or(1.0),
            beta: a.beta.unwrap_or(1.0),
        },
        LossArg::BetaNll => LossKind::BetaNll {
            beta: a.beta.unwrap_or(0.5),
        },
        LossArg::Mle => LossKind::PlainMle,
    }
}

fn cmd_train_nn(a: &TrainArgs, out: &Path) -> Result<Produced> {
    let preset: Preset = a.preset.into();
    let (mut cfg, file): (TrainConfig, _) = load_config(a.config.as_deref(), preset.nn(loss_kind(a)))?;
    let flags_set_loss = a.loss.is_some() || a.rho.is_some() || a.gamma.is_some() || a.alpha.is_some() || a.beta.is_some();
    if a.config.is_some() && flags_set_loss {
        cfg.loss = loss_kind(a);
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    if a.members == 0 {
        return Err(Error::Config("--members must be at least 1".into()));
    }
    let kind = a.data.kind()?;
    let hetero = !a.data.homoskedastic;
    let (train, scale) = gen_synthetic(kind, a.n, a.data.data_seed, hetero)?;
    let test = gen_synthetic_test(&SyntheticSpec::new(kind, hetero), a.test_n, a.data.data_seed, &scale)?;
    let (lo, hi) = kind.domain();
    let grid = Lattice1D::uniform(lo, hi, preset.sites(), None)?;

    let seeds: Vec<u64> = (0..a.members as u64).map(|k| cfg.seed + k).collect();
    let mut fits = Vec::with_capacity(seeds.len());
    for &s in &seeds {
        let c = cfg.clone().with_seed(s);
        fits.push(train_two_phase(MvrModel::init(train.input_dim(), &c)?, &train, &c)?);
    }
    let models: Vec<&MvrModel> = fits.iter().map(|f| &f.model).collect();
    let converged = fits.iter().all(|f| f.converged());
    let (rho, gamma) = match cfg.loss {
        LossKind::RhoGamma { rho, gamma } => (rho, gamma),
        _ => (f64::NAN, f64::NAN),
    };
    let row = nn_metrics(0, rho, gamma, cfg.seed, &models, &train, &test, &grid, converged)?;

    let mut outputs = Vec::new();
    for (k, f) in fits.iter().enumerate() {
        let p = if fits.len() == 1 {
            out.join("model.txt")
        } else {
            out.join(format!("model_{k}.txt"))
        };
        f.model.save(&p)?;
        outputs.push(p);
    }
    let pts: Vec<Vec<f64>> = grid.points().into_iter().map(|x| vec![x]).collect();
    let each: Vec<_> = models.iter().map(|m| m.predict(&pts)).collect::<Result<_>>()?;
    let pred = if each.len() == 1 {
        each.into_iter().next().expect("one member")
    } else {
        crate::nn::mle_ensemble_predict(&each)?
    };
    let p = out.join("predictions.csv");
    write_predictions_csv(&pts, &train.columns, &pred, &p)?;
    outputs.push(p);
    let p = out.join("history.csv");
    write_history_csv(&fits[0].history, &p)?;
    outputs.push(p);
    let p = out.join("metrics.csv");
    write_metrics_csv(std::slice::from_ref(&row), &p)?;
    outputs.push(p);
    let effective = toml::to_string(&cfg).expect("config serializes");
    let p = out.join("config.toml");
    crate::io::write_text(&p, &effective)?;
    outputs.push(p);
    let label = match a.members {
        1 => cfg.loss.name().to_string(),
        m => format!("{} x{m}", cfg.loss.name()),
    };
    println!(
        "{label}: converged {}, test mu_mse {:.4}, sd_mse {:.4}, ece {:.4}",
        row.converged,
        row.mu_mse,
        row.sd_mse,
        row.ece
    );
    Ok(Produced {
        hash: hash_of(file, &effective),
        seeds,
        outputs,
    })
}

fn write_history_csv(h: &crate::nn::TrainHistory, path: &Path) -> Result<()> {
    let mut w = crate::io::csv_writer(path)?;
    w.write_record(["epoch", "loss", "lr", "phase"])?;
    for (e, (l, lr)) in h.loss.iter().zip(&h.lr).enumerate() {
        let phase = if e < h.phase1_epochs { "1" } else { "2" };
        w.write_record([e.to_string(), l.to_string(), lr.to_string(), phase.to_string()])?;
    }
    crate::io::finish(w, path)
}

fn plan_from(common: &SweepCommon, grid: GridPlan) -> Result<(SweepPlan, Option<Vec<u8>>)> {
    if let Some(p) = &common.plan {
        let bytes = read_file(p)?;
        let text = String::from_utf8(bytes.clone()).map_err(|e| Error::Config(e.to_string()))?;
        return Ok((SweepPlan::from_toml(&text)?, Some(bytes)));
    }
    if common.seeds == 0 {
        return Err(Error::Config("--seeds must be at least 1".into()));
    }
    let plan = SweepPlan {
        dataset: DatasetPlan {
            heteroskedastic: !common.homoskedastic,
            seed: common.data_seed,
            sites: common.sites,
            ..DatasetPlan::new(common.name.parse()?)
        },
        grid,
        backend: BackendPlan {
            kind: common.backend.into(),
            preset: common.preset.into(),
            epochs: common.epochs,
        },
        seeds: SeedPlan {
            values: (0..common.seeds as u64).map(|k| common.base_seed + k).collect(),
        },
    };
    plan.validate()?;
    Ok((plan, None))
}

fn sweep_into(plan: &SweepPlan, file: Option<Vec<u8>>, common: &SweepCommon, out: &Path) -> Result<(Produced, Vec<crate::metrics::MetricRow>)> {
    let csv = out.join("metrics.csv");
    let opts = SweepOptions {
        jobs: common.jobs,
        resume: common.resume,
    };
    let outcome = run_sweep_to(plan, Some(&csv), &opts)?;
    if outcome.computed == 0 {
        println!("{} rows already complete in {}; nothing to do", outcome.reused, csv.display());
    } else {
        println!("{} runs computed, {} reused, {} rows in {}", outcome.computed, outcome.reused, outcome.rows.len(), csv.display());
    }
    let summary = out.join("summary.csv");
    write_summary_csv(&aggregate_runs(&outcome.rows)?, &summary)?;
    let plan_copy = out.join("plan.toml");
    crate::io::write_text(&plan_copy, &plan.to_toml())?;
    let hash = match file {
        Some(bytes) => sha256_hex(&bytes),
        None => plan.hash(),
    };
    Ok((
        Produced {
            hash,
            seeds: plan.seeds.values.clone(),
            outputs: vec![csv.clone(), manifest_path(&csv), summary, plan_copy],
        },
        outcome.rows,
    ))
}

fn cmd_sweep(a: &SweepArgs, out: &Path) -> Result<Produced> {
    let (plan, file) = plan_from(&a.common, GridPlan::full(a.grid))?;
    Ok(sweep_into(&plan, file, &a.common, out)?.0)
}

fn cmd_diagonal(a: &DiagonalArgs, out: &Path) -> Result<Produced> {
    let (plan, file) = plan_from(&a.common, GridPlan::diagonal(a.n))?;
    if !plan.grid.diagonal {
        return Err(Error::Config("the diagonal command needs a plan with `diagonal = true`".into()));
    }
    let (mut produced, rows) = sweep_into(&plan, file, &a.common, out)?;
    if a.select {
        let (rho, gamma) = select_diagonal_model(&rows)?;
        println!("rho* = {rho}, gamma* = {gamma}");
        let p = out.join("selection.csv");
        crate::io::write_text(&p, &format!("rho,gamma\n{rho},{gamma}\n"))?;
        produced.outputs.push(p);
    }
    Ok(produced)
}

fn cmd_bft(a: &BftArgs, out: &Path) -> Result<Produced> {
    if a.members == 0 {
        return Err(Error::Config("--members must be at least 1".into()));
    }
    let preset: Preset = a.preset.into();
    let mut cfg: FtConfig = preset.ft(a.rho, a.gamma);
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    cfg.validate()?;
    let kind = a.data.kind()?;
    let spec = SyntheticSpec::new(kind, !a.data.homoskedastic);
    let (lo, hi) = kind.domain();
    let lat = Lattice1D::uniform(lo, hi, a.sites.unwrap_or(preset.sites()), None)?;
    let train = sample_field_on_lattice(&spec, &lat, a.data.data_seed)?;
    let seeds: Vec<u64> = (0..a.members as u64).map(|k| a.base_seed + k).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let ens = pool.install(|| ensemble_posterior(&cfg, &train.y, &lat, &seeds))?;
    let summary = predictive_decomposition(&ens)?;
    let outputs = write_ensemble(&ens, &summary, &lat, out)?;
    let converged = ens.statuses.iter().filter(|s| **s == crate::ft::SolveStatus::Converged).count();
    println!("{converged} of {} members converged; summary in {}", ens.len(), out.join("summary.csv").display());
    let effective = toml::to_string(&cfg).expect("config serializes");
    Ok(Produced {
        hash: sha256_hex(format!("{effective}\n{} {} {}", kind.name(), !a.data.homoskedastic, lat.size()).as_bytes()),
        seeds,
        outputs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_in(dir: &Path, args: &[&str]) -> i32 {
        let mut v = vec!["mvr", "--out", dir.to_str().unwrap()];
        v.extend(args);
        run(v)
    }

    #[test]
    fn generate_data_is_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(run_in(dir.path(), &["generate-data", "--name", "sine", "--n", "64", "--seed", "0"]), 0);
        let p = dir.path().join("sine_n64_seed0.csv");
        let first = std::fs::read(&p).unwrap();
        assert_eq!(String::from_utf8_lossy(&first).lines().count(), 65);
        assert_eq!(run_in(dir.path(), &["generate-data", "--name", "sine", "--n", "64", "--seed", "0"]), 0);
        assert_eq!(std::fs::read(&p).unwrap(), first);
        assert!(dir.path().join("generate-data.manifest.json").exists());
    }

    #[test]
    fn usage_errors_exit_two() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(run_in(dir.path(), &["generate-data", "--name", "nope"]), EXIT_USAGE);
        assert_eq!(run_in(dir.path(), &["no-such-command"]), EXIT_USAGE);
        assert_eq!(run_in(dir.path(), &["solve-ft", "--rho", "1.5"]), EXIT_USAGE);
        assert_eq!(run_in(dir.path(), &["bft", "--members", "0"]), EXIT_USAGE);
    }

    #[test]
    fn missing_config_file_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("absent.toml");
        assert_eq!(run_in(dir.path(), &["solve-ft", "--config", missing.to_str().unwrap()]), EXIT_IO);
    }

    #[test]
    fn bad_config_exits_two() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("bad.toml");
        std::fs::write(&cfg, "rho = 0.5\nnot_a_field = 1\n").unwrap();
        assert_eq!(run_in(dir.path(), &["solve-ft", "--config", cfg.to_str().unwrap()]), EXIT_USAGE);
    }
}
