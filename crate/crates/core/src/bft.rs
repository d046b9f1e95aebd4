//! Bayesian reading of the lattice objective: MAP energies, GMRF priors,
//! Langevin sampling and ensembles as approximate posteriors.
//!
//! The MAP energy is assembled here from its likelihood and prior pieces
//! rather than taken from [`crate::ft`], so the two routes check each other.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ft::{solve_ft, write_fields_csv, FieldPair, FtConfig, SolveStatus};
use crate::lattice::{centered_diff, dirichlet_energy, weighted_sq_grad_adjoint, Field, Lattice1D, WeightedLaplacian};
use crate::rng::{stream, Stream};

/// Members of the default ensemble.
pub const ENSEMBLE_SIZE: usize = 6;

/// Optional quadratic pull of `η` towards `eta0`: `(ε/2) Σ p (η − η0)²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stabilizer {
    pub strength: f64,
    pub eta0: f64,
}

impl Stabilizer {
    pub const OFF: Stabilizer = Stabilizer {
        strength: 0.0,
        eta0: 0.0,
    };
}

impl Default for Stabilizer {
    fn default() -> Self {
        Self::OFF
    }
}

/// Negative log-likelihood `Σ p (½ Λ (μ − y)² − ½ η)`.
pub fn likelihood_energy(fp: &FieldPair, y: &[f64], lat: &Lattice1D) -> Result<f64> {
    lat.check(&fp.mu)?;
    lat.check(&fp.eta)?;
    lat.check(y)?;
    Ok((0..y.len())
        .map(|i| {
            let r = fp.mu[i] - y[i];
            lat.weights()[i] * 0.5 * (fp.eta[i].exp() * r * r - fp.eta[i])
        })
        .sum())
}

/// Smoothness prior on the mean: `Σ p (∇μ)²`.
pub fn mean_prior_energy(mu: &[f64], lat: &Lattice1D) -> Result<f64> {
    dirichlet_energy(mu, lat)
}

/// Smoothness prior on the precision: `Σ p (∇e^η)²`.
pub fn precision_prior_energy(eta: &[f64], lat: &Lattice1D) -> Result<f64> {
    let lambda: Vec<f64> = eta.iter().map(|e| e.exp()).collect();
    dirichlet_energy(&lambda, lat)
}

/// The precision prior written in `η`: `Σ p e^{2η} (∇η)²`. Agrees with
/// [`precision_prior_energy`] up to discretization error.
pub fn precision_prior_energy_eta(eta: &[f64], lat: &Lattice1D) -> Result<f64> {
    lat.check(eta)?;
    let g = centered_diff(eta, lat.spacing());
    Ok((0..eta.len())
        .map(|i| lat.weights()[i] * (2.0 * eta[i]).exp() * g[i] * g[i])
        .sum())
}

pub fn stabilizer_energy(eta: &[f64], lat: &Lattice1D, s: &Stabilizer) -> f64 {
    if s.strength == 0.0 {
        return 0.0;
    }
    0.5 * s.strength
        * eta
            .iter()
            .zip(lat.weights())
            .map(|(e, p)| p * (e - s.eta0).powi(2))
            .sum::<f64>()
}

fn check_weights(rho: f64, gamma: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rho) || !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidParameter(format!(
            "rho and gamma must lie in [0, 1], got ({rho}, {gamma})"
        )));
    }
    Ok(())
}

/// `ρ·likelihood + (1−ρ)γ·mean prior + (1−ρ)(1−γ)·precision prior`.
pub fn map_objective(fp: &FieldPair, y: &[f64], lat: &Lattice1D, rho: f64, gamma: f64) -> Result<f64> {
    map_objective_with(fp, y, lat, rho, gamma, &Stabilizer::OFF)
}

pub fn map_objective_with(
    fp: &FieldPair,
    y: &[f64],
    lat: &Lattice1D,
    rho: f64,
    gamma: f64,
    stab: &Stabilizer,
) -> Result<f64> {
    check_weights(rho, gamma)?;
    if let Some(site) = fp.mu.first_non_finite().or(fp.eta.first_non_finite()) {
        return Err(Error::NonFinite { site });
    }
    let rb = 1.0 - rho;
    Ok(rho * likelihood_energy(fp, y, lat)?
        + rb * gamma * mean_prior_energy(&fp.mu, lat)?
        + rb * (1.0 - gamma) * precision_prior_energy(&fp.eta, lat)?
        + stabilizer_energy(&fp.eta, lat, stab))
}

/// Gradient of [`map_objective_with`] in `(μ, η)`.
pub fn map_gradient(
    fp: &FieldPair,
    y: &[f64],
    lat: &Lattice1D,
    rho: f64,
    gamma: f64,
    stab: &Stabilizer,
) -> Result<(Field, Field)> {
    check_weights(rho, gamma)?;
    lat.check(&fp.mu)?;
    lat.check(&fp.eta)?;
    lat.check(y)?;
    let (p, h) = (lat.weights(), lat.spacing());
    let d = y.len();
    let rb = 1.0 - rho;
    let lambda: Vec<f64> = fp.eta.iter().map(|e| e.exp()).collect();
    let mut adj_mu = vec![0.0; d];
    let mut adj_lam = vec![0.0; d];
    weighted_sq_grad_adjoint(&fp.mu, p, h, &mut adj_mu);
    weighted_sq_grad_adjoint(&lambda, p, h, &mut adj_lam);
    let mut gm = vec![0.0; d];
    let mut ge = vec![0.0; d];
    for i in 0..d {
        let r = fp.mu[i] - y[i];
        gm[i] = rho * p[i] * lambda[i] * r + rb * gamma * adj_mu[i];
        ge[i] = rho * p[i] * 0.5 * (lambda[i] * r * r - 1.0)
            + rb * (1.0 - gamma) * lambda[i] * adj_lam[i]
            + stab.strength * p[i] * (fp.eta[i] - stab.eta0);
    }
    Ok((gm.into(), ge.into()))
}

/// `(weight/2) fᵀ L f`.
pub fn gmrf_prior_energy(f: &[f64], l: &WeightedLaplacian, weight: f64) -> Result<f64> {
    Ok(0.5 * weight * l.quadratic_form(f)?)
}

/// Decreasing step sizes `ε_t = a (b + t)^{−κ}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    pub a: f64,
    pub b: f64,
    pub kappa: f64,
}

impl Default for StepSchedule {
    fn default() -> Self {
        Self {
            a: 1e-4,
            b: 10.0,
            kappa: 0.55,
        }
    }
}

impl StepSchedule {
    pub fn at(&self, t: usize) -> f64 {
        self.a * (self.b + t as f64).powf(-self.kappa)
    }

    /// `Σε = ∞` and `Σε² < ∞` hold exactly when `κ ∈ (1/2, 1]`.
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.b > 0.0 && self.kappa > 0.5 && self.kappa <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "step schedule needs a > 0, b > 0, 1/2 < kappa <= 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Which iterates a chain keeps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Retention {
    /// Fraction of steps discarded at the start.
    pub burn_in: f64,
    /// Keep every `thin`-th step after burn-in.
    pub thin: usize,
}

impl Default for Retention {
    fn default() -> Self {
        Self { burn_in: 0.5, thin: 10 }
    }
}

/// Output of a Langevin chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub samples: Vec<Vec<f64>>,
    /// Energy before every step.
    pub energies: Vec<f64>,
    /// Step at which the state or energy stopped being finite.
    pub diverged_at: Option<usize>,
}

/// `z ← z − ε_t ∇Φ(z) + s·√(2ε_t) ξ` for `steps` steps, where `energy_grad`
/// writes `∇Φ(z)` and returns `Φ(z)`, and `s` is `noise_scale`.
pub fn sgld_chain(
    mut z: Vec<f64>,
    steps: usize,
    schedule: &StepSchedule,
    keep: &Retention,
    noise_scale: f64,
    rng: &mut impl Rng,
    mut energy_grad: impl FnMut(&[f64], &mut [f64]) -> f64,
) -> Chain {
    let burn = (keep.burn_in * steps as f64).ceil() as usize;
    let thin = keep.thin.max(1);
    let mut g = vec![0.0; z.len()];
    let mut chain = Chain {
        samples: Vec::new(),
        energies: Vec::with_capacity(steps),
        diverged_at: None,
    };
    for t in 0..steps {
        let e = energy_grad(&z, &mut g);
        chain.energies.push(e);
        if !e.is_finite() || g.iter().any(|v| !v.is_finite()) {
            chain.diverged_at = Some(t);
            break;
        }
        let eps = schedule.at(t);
        let amp = noise_scale * (2.0 * eps).sqrt();
        for (zi, gi) in z.iter_mut().zip(&g) {
            let xi: f64 = rng.sample(StandardNormal);
            *zi += -eps * gi + amp * xi;
        }
        if t >= burn && (t - burn).is_multiple_of(thin) {
            chain.samples.push(z.clone());
        }
    }
    chain
}

/// Langevin sampler over lattice fields.
#[derive(Debug, Clone, PartialEq)]
pub struct SgldConfig {
    pub rho: f64,
    pub gamma: f64,
    pub steps: usize,
    pub schedule: StepSchedule,
    pub retention: Retention,
    /// Multiplies the injected noise; 0 turns the sampler into gradient descent.
    pub noise_scale: f64,
    pub seed: u64,
    pub init_scale: f64,
    pub stabilizer: Stabilizer,
}

impl SgldConfig {
    pub fn new(rho: f64, gamma: f64, steps: usize) -> Self {
        Self {
            rho,
            gamma,
            steps,
            schedule: StepSchedule::default(),
            retention: Retention::default(),
            noise_scale: 1.0,
            seed: 0,
            init_scale: 0.1,
            stabilizer: Stabilizer::OFF,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let interior = |v: f64| v > 0.0 && v < 1.0;
        if !interior(self.rho) || !interior(self.gamma) {
            return Err(Error::InvalidParameter(format!(
                "sampling needs rho and gamma strictly inside (0, 1), got ({}, {})",
                self.rho, self.gamma
            )));
        }
        self.schedule.validate()?;
        if !(0.0..1.0).contains(&self.retention.burn_in) {
            return Err(Error::InvalidParameter("burn-in fraction must lie in [0, 1)".into()));
        }
        if !(self.noise_scale >= 0.0) {
            return Err(Error::InvalidParameter("noise scale must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgldRun {
    pub samples: Vec<FieldPair>,
    pub energies: Vec<f64>,
    pub diverged_at: Option<usize>,
}

/// Samples `exp(−Φ_MAP)` with Langevin dynamics from `init`, or from seeded
/// Normal fields when `init` is absent.
pub fn sgld_sample(cfg: &SgldConfig, y: &[f64], lat: &Lattice1D, init: Option<FieldPair>) -> Result<SgldRun> {
    cfg.validate()?;
    lat.check(y)?;
    let d = lat.size();
    let z0: Vec<f64> = match init {
        Some(fp) => {
            lat.check(&fp.mu)?;
            lat.check(&fp.eta)?;
            fp.mu.iter().chain(fp.eta.iter()).copied().collect()
        }
        None => {
            let ft = FtConfig {
                seed: cfg.seed,
                init_scale: cfg.init_scale,
                ..FtConfig::desk(cfg.rho, cfg.gamma)
            };
            let fp = crate::ft::init_fields(&ft, d);
            fp.mu.iter().chain(fp.eta.iter()).copied().collect()
        }
    };
    let mut rng = stream(cfg.seed, Stream::Langevin);
    let chain = sgld_chain(z0, cfg.steps, &cfg.schedule, &cfg.retention, cfg.noise_scale, &mut rng, |z, g| {
        let fp = FieldPair {
            mu: z[..d].to_vec().into(),
            eta: z[d..].to_vec().into(),
        };
        let energy = map_objective_with(&fp, y, lat, cfg.rho, cfg.gamma, &cfg.stabilizer).unwrap_or(f64::NAN);
        match map_gradient(&fp, y, lat, cfg.rho, cfg.gamma, &cfg.stabilizer) {
            Ok((gm, ge)) => {
                g[..d].copy_from_slice(&gm);
                g[d..].copy_from_slice(&ge);
            }
            Err(_) => g.fill(f64::NAN),
        }
        energy
    });
    Ok(SgldRun {
        samples: chain
            .samples
            .into_iter()
            .map(|z| FieldPair {
                mu: z[..d].to_vec().into(),
                eta: z[d..].to_vec().into(),
            })
            .collect(),
        energies: chain.energies,
        diverged_at: chain.diverged_at,
    })
}

/// Independently initialized solutions on a common lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSamples {
    pub members: Vec<FieldPair>,
    pub seeds: Vec<u64>,
    pub statuses: Vec<SolveStatus>,
}

impl EnsembleSamples {
    /// Wraps fields obtained elsewhere; every member counts as converged.
    pub fn from_members(members: Vec<FieldPair>) -> Result<Self> {
        let n = members.len();
        let s = Self {
            members,
            seeds: (0..n as u64).collect(),
            statuses: vec![SolveStatus::Converged; n],
        };
        s.validate()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn converged(&self) -> impl Iterator<Item = &FieldPair> {
        self.members
            .iter()
            .zip(&self.statuses)
            .filter(|(_, s)| **s == SolveStatus::Converged)
            .map(|(m, _)| m)
    }

    fn validate(&self) -> Result<()> {
        let Some(first) = self.members.first() else {
            return Err(Error::Empty("ensemble"));
        };
        match self.members.iter().find(|m| m.len() != first.len()) {
            Some(m) => Err(Error::LengthMismatch {
                expected: first.len(),
                got: m.len(),
            }),
            None => Ok(()),
        }
    }
}

/// One solve per seed, run in parallel, differing only in initialization.
/// Member order follows `seeds`.
pub fn ensemble_posterior(base: &FtConfig, y: &[f64], lat: &Lattice1D, seeds: &[u64]) -> Result<EnsembleSamples> {
    if seeds.is_empty() {
        return Err(Error::Empty("ensemble seeds"));
    }
    let solved: Vec<_> = seeds
        .par_iter()
        .map(|&s| solve_ft(&base.clone().with_seed(s), y, lat))
        .collect::<Result<_>>()?;
    let statuses: Vec<SolveStatus> = solved.iter().map(|s| s.status).collect();
    if !statuses.contains(&SolveStatus::Converged) {
        return Err(Error::InvalidParameter(format!(
            "no ensemble member converged at (rho, gamma) = ({}, {})",
            base.rho, base.gamma
        )));
    }
    Ok(EnsembleSamples {
        members: solved.into_iter().map(|s| s.fields).collect(),
        seeds: seeds.to_vec(),
        statuses,
    })
}

/// Pointwise predictive mean and uncertainty split.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveSummary {
    pub mean: Field,
    /// Spread of the member means (population sd).
    pub sigma_epi: Field,
    /// Root of the average member noise variance `e^{−η}`.
    pub sigma_ale: Field,
    pub sigma_tot: Field,
}

/// `μ* = mean μ`, `σ_epi² = Var μ` (divisor `M`), `σ_ale² = mean e^{−η}`,
/// `σ_tot² = σ_epi² + σ_ale²`, over the converged members.
pub fn predictive_decomposition(s: &EnsembleSamples) -> Result<PredictiveSummary> {
    s.validate()?;
    let members: Vec<&FieldPair> = s.converged().collect();
    if members.is_empty() {
        return Err(Error::Empty("converged ensemble members"));
    }
    let m = members.len() as f64;
    let d = members[0].len();
    let mut mean = vec![0.0; d];
    let mut epi = vec![0.0; d];
    let mut ale = vec![0.0; d];
    let mut tot = vec![0.0; d];
    for i in 0..d {
        let mu = members.iter().map(|f| f.mu[i]).sum::<f64>() / m;
        let var_epi = members.iter().map(|f| (f.mu[i] - mu).powi(2)).sum::<f64>() / m;
        let var_ale = members.iter().map(|f| (-f.eta[i]).exp()).sum::<f64>() / m;
        mean[i] = mu;
        epi[i] = var_epi.sqrt();
        ale[i] = var_ale.sqrt();
        tot[i] = (var_epi + var_ale).sqrt();
    }
    Ok(PredictiveSummary {
        mean: mean.into(),
        sigma_epi: epi.into(),
        sigma_ale: ale.into(),
        sigma_tot: tot.into(),
    })
}

/// Summary with columns `x, mu_star, sigma_epi, sigma_ale, sigma_tot`.
pub fn write_summary_csv(summary: &PredictiveSummary, lat: &Lattice1D, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    lat.check(&summary.mean)?;
    let mut w = crate::io::csv_writer(path)?;
    w.write_record(["x", "mu_star", "sigma_epi", "sigma_ale", "sigma_tot"])?;
    for i in 0..lat.size() {
        w.write_record([
            lat.point(i).to_string(),
            summary.mean[i].to_string(),
            summary.sigma_epi[i].to_string(),
            summary.sigma_ale[i].to_string(),
            summary.sigma_tot[i].to_string(),
        ])?;
    }
    crate::io::finish(w, path)
}

/// Writes `member_<k>.csv` per member and `summary.csv` into `dir`; returns
/// the paths written.
pub fn write_ensemble(
    s: &EnsembleSamples,
    summary: &PredictiveSummary,
    lat: &Lattice1D,
    dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut paths = Vec::with_capacity(s.len() + 1);
    for (k, m) in s.members.iter().enumerate() {
        let p = dir.join(format!("member_{k}.csv"));
        write_fields_csv(m, lat, &p)?;
        paths.push(p);
    }
    let p = dir.join("summary.csv");
    write_summary_csv(summary, lat, &p)?;
    paths.push(p);
    Ok(paths)
}
