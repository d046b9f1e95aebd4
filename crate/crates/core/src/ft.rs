//! Lattice field theory for mean-variance regression.
//!
//! The discrete objective over a mean field `μ` and a log-precision field
//! `η` (with `Λ = e^η`) is
//!
//! ```text
//! S = Σ_i p_i { ρ [½ Λ_i (y_i − μ_i)² − ½ η_i] + ρ̄ [γ (∇_h μ)_i² + γ̄ (∇_h Λ)_i²] }
//! ```
//!
//! with `ρ̄ = 1 − ρ`, `γ̄ = 1 − γ` and the mirror-padded centered gradient
//! `∇_h` from [`crate::lattice`]. [`solve_ft`] minimizes it with Adam under a
//! cyclic learning rate and global-norm clipping.

use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Field, Lattice1D};
use crate::optim::{clip_in_place, Adam, CyclicLr};
use crate::rng::{stream, Stream};

pub use crate::optim::{adam_step, clip_gradient, cyclic_lr};

/// Mean field and log-precision field on a common lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldPair {
    pub mu: Field,
    pub eta: Field,
}

impl FieldPair {
    pub fn new(mu: impl Into<Field>, eta: impl Into<Field>) -> Result<Self> {
        let (mu, eta) = (mu.into(), eta.into());
        if mu.len() != eta.len() {
            return Err(Error::LengthMismatch {
                expected: mu.len(),
                got: eta.len(),
            });
        }
        Ok(Self { mu, eta })
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    /// `Λ = e^η`.
    pub fn lambda(&self) -> Field {
        self.eta.map(f64::exp)
    }

    /// Predictive standard deviation `e^{−η/2}`.
    pub fn sd(&self) -> Field {
        self.eta.map(|e| (-0.5 * e).exp())
    }
}

/// Solver settings. `rho` and `gamma` select the point on the phase diagram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FtConfig {
    pub rho: f64,
    pub gamma: f64,
    pub epochs: usize,
    pub schedule: CyclicLr,
    pub clip_threshold: f64,
    pub seed: u64,
    /// Standard deviation of the Normal initialization of both fields.
    pub init_scale: f64,
    pub eta_min: f64,
    pub eta_max: f64,
    /// Stop as soon as `η` reaches a clamp bound.
    pub stop_on_clamp: bool,
}

impl FtConfig {
    /// Full-length schedule (100k epochs).
    pub fn paper(rho: f64, gamma: f64) -> Self {
        Self {
            rho,
            gamma,
            epochs: 100_000,
            schedule: CyclicLr {
                min_lr: 0.0005,
                max_lr: 0.01,
                cycle_len: 5000,
            },
            clip_threshold: 1000.0,
            seed: 0,
            init_scale: 0.1,
            eta_min: -30.0,
            eta_max: 30.0,
            stop_on_clamp: true,
        }
    }

    /// Laptop-scale schedule (20k epochs).
    pub fn desk(rho: f64, gamma: f64) -> Self {
        Self {
            epochs: 20_000,
            ..Self::paper(rho, gamma)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_rho_gamma(self.rho, self.gamma)?;
        self.schedule.validate()?;
        if !(self.clip_threshold > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "clip threshold must be positive, got {}",
                self.clip_threshold
            )));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::InvalidParameter(format!("bad init scale {}", self.init_scale)));
        }
        if !(self.eta_min < self.eta_max) {
            return Err(Error::InvalidParameter(format!(
                "eta bounds [{}, {}] are empty",
                self.eta_min, self.eta_max
            )));
        }
        Ok(())
    }
}

pub(crate) fn check_rho_gamma(rho: f64, gamma: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rho) || !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidParameter(format!(
            "rho and gamma must lie in [0, 1], got ({rho}, {gamma})"
        )));
    }
    Ok(())
}

fn check_inputs(fp: &FieldPair, y: &[f64], lat: &Lattice1D, rho: f64, gamma: f64) -> Result<()> {
    check_rho_gamma(rho, gamma)?;
    lat.check(&fp.mu)?;
    lat.check(&fp.eta)?;
    lat.check(y)?;
    let bad = (0..y.len()).find(|&i| !(fp.mu[i].is_finite() && fp.eta[i].is_finite() && y[i].is_finite()));
    match bad {
        Some(site) => Err(Error::NonFinite { site }),
        None => Ok(()),
    }
}

/// The three pieces of the objective, each without its coupling weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FtTerms {
    /// `Σ p (½ Λ r² − ½ η)`.
    pub nll: f64,
    /// `Σ p (∇_h μ)²`.
    pub mean_penalty: f64,
    /// `Σ p (∇_h Λ)²`.
    pub precision_penalty: f64,
}

impl FtTerms {
    pub fn combine(&self, rho: f64, gamma: f64) -> f64 {
        rho * self.nll + (1.0 - rho) * (gamma * self.mean_penalty + (1.0 - gamma) * self.precision_penalty)
    }
}

/// Scratch buffers for repeated evaluations on one lattice.
struct Kernel {
    lam: Vec<f64>,
    dmu: Vec<f64>,
    dlam: Vec<f64>,
}

impl Kernel {
    fn new(d: usize) -> Self {
        Self {
            lam: vec![0.0; d],
            dmu: vec![0.0; d],
            dlam: vec![0.0; d],
        }
    }

    /// Evaluates the objective terms and, when `grad` is given, writes
    /// `∂S/∂μ` and `∂S/∂η` into it.
    #[allow(clippy::too_many_arguments)]
    fn eval(
        &mut self,
        mu: &[f64],
        eta: &[f64],
        y: &[f64],
        p: &[f64],
        h: f64,
        rho: f64,
        gamma: f64,
        grad: Option<(&mut [f64], &mut [f64])>,
    ) -> FtTerms {
        let d = mu.len();
        let half_inv_h = 0.5 / h;
        for i in 0..d {
            self.lam[i] = eta[i].exp();
        }
        self.dmu[0] = 0.0;
        self.dlam[0] = 0.0;
        self.dmu[d - 1] = 0.0;
        self.dlam[d - 1] = 0.0;
        for i in 1..d.saturating_sub(1) {
            self.dmu[i] = (mu[i + 1] - mu[i - 1]) * half_inv_h;
            self.dlam[i] = (self.lam[i + 1] - self.lam[i - 1]) * half_inv_h;
        }

        let mut t = FtTerms {
            nll: 0.0,
            mean_penalty: 0.0,
            precision_penalty: 0.0,
        };
        for i in 0..d {
            let r = mu[i] - y[i];
            t.nll += p[i] * (0.5 * self.lam[i] * r * r - 0.5 * eta[i]);
            t.mean_penalty += p[i] * self.dmu[i] * self.dmu[i];
            t.precision_penalty += p[i] * self.dlam[i] * self.dlam[i];
        }

        if let Some((gmu, geta)) = grad {
            let cm = (1.0 - rho) * gamma / h;
            let cl = (1.0 - rho) * (1.0 - gamma) / h;
            for k in 0..d {
                let r = mu[k] - y[k];
                let (am, al) = if d < 3 {
                    (0.0, 0.0)
                } else {
                    let (lm, ll) = if k >= 1 {
                        (p[k - 1] * self.dmu[k - 1], p[k - 1] * self.dlam[k - 1])
                    } else {
                        (0.0, 0.0)
                    };
                    let (rm, rl) = if k + 1 < d {
                        (p[k + 1] * self.dmu[k + 1], p[k + 1] * self.dlam[k + 1])
                    } else {
                        (0.0, 0.0)
                    };
                    (lm - rm, ll - rl)
                };
                gmu[k] = rho * p[k] * self.lam[k] * r + cm * am;
                geta[k] = rho * p[k] * (0.5 * self.lam[k] * r * r - 0.5) + cl * al * self.lam[k];
            }
        }
        t
    }
}

/// Objective split into its likelihood and penalty parts.
pub fn ft_terms(fp: &FieldPair, y: &[f64], lat: &Lattice1D) -> Result<FtTerms> {
    check_inputs(fp, y, lat, 0.5, 0.5)?;
    Ok(Kernel::new(lat.size()).eval(&fp.mu, &fp.eta, y, lat.weights(), lat.spacing(), 0.5, 0.5, None))
}

/// Value of the discrete field-theory objective.
pub fn ft_objective(fp: &FieldPair, y: &[f64], lat: &Lattice1D, rho: f64, gamma: f64) -> Result<f64> {
    check_inputs(fp, y, lat, rho, gamma)?;
    let t = Kernel::new(lat.size()).eval(&fp.mu, &fp.eta, y, lat.weights(), lat.spacing(), rho, gamma, None);
    Ok(t.combine(rho, gamma))
}

/// Exact partial derivatives `(∂S/∂μ_i, ∂S/∂η_i)`.
pub fn ft_gradient(fp: &FieldPair, y: &[f64], lat: &Lattice1D, rho: f64, gamma: f64) -> Result<(Field, Field)> {
    check_inputs(fp, y, lat, rho, gamma)?;
    let d = lat.size();
    let (mut gm, mut ge) = (vec![0.0; d], vec![0.0; d]);
    Kernel::new(d).eval(
        &fp.mu,
        &fp.eta,
        y,
        lat.weights(),
        lat.spacing(),
        rho,
        gamma,
        Some((&mut gm, &mut ge)),
    );
    Ok((gm.into(), ge.into()))
}

/// Discrete Euler–Lagrange residuals in `(μ, Λ)` coordinates, per unit weight:
/// `R_μ = ρ Λ (μ − y) + ρ̄γ (∂/∂μ Σp(∇μ)²)/p` and
/// `R_Λ = ½ρ ((μ − y)² − 1/Λ) + ρ̄γ̄ (∂/∂Λ Σp(∇Λ)²)/p`.
///
/// The penalty terms use the same centered stencil as the objective, so both
/// residuals vanish exactly at its stationary points.
pub fn el_residual(fp: &FieldPair, y: &[f64], lat: &Lattice1D, rho: f64, gamma: f64) -> Result<(Field, Field)> {
    let (gm, ge) = ft_gradient(fp, y, lat, rho, gamma)?;
    let p = lat.weights();
    let rm = gm.iter().zip(p).map(|(g, w)| g / w).collect::<Vec<_>>();
    // ∂S/∂Λ = (∂S/∂η) / Λ
    let rl = ge
        .iter()
        .zip(fp.eta.iter())
        .zip(p)
        .map(|((g, e), w)| g * (-e).exp() / w)
        .collect::<Vec<_>>();
    Ok((rm.into(), rl.into()))
}

/// `sqrt(Σ p r² / Σ p)`, optionally over interior sites only.
pub fn weighted_rms(r: &[f64], lat: &Lattice1D, interior_only: bool) -> f64 {
    let p = lat.weights();
    let range = if interior_only && r.len() > 2 {
        1..r.len() - 1
    } else {
        0..r.len()
    };
    let (num, den) = range.fold((0.0, 0.0), |(n, d), i| (n + p[i] * r[i] * r[i], d + p[i]));
    (num / den).sqrt()
}

/// Outcome of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveStatus {
    /// Ran the full schedule with `η` inside its bounds.
    Converged,
    /// `η` reached a clamp bound, or a degenerate corner was still
    /// descending when the schedule ended: the objective is running off to −∞.
    Unbounded,
    /// The objective became non-finite.
    Diverged,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::Diverged => "diverged",
        }
    }
}

/// One epoch of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryPoint {
    pub epoch: usize,
    /// Objective at the start of the epoch.
    pub objective: f64,
    pub lr: f64,
    /// Number of clipped epochs so far, this one included.
    pub clip_events: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FtSolution {
    pub fields: FieldPair,
    pub trajectory: Vec<TrajectoryPoint>,
    pub status: SolveStatus,
    /// Objective of the returned fields.
    pub final_objective: f64,
    /// Site-epochs at which `η` had to be clamped.
    pub clamp_events: usize,
    pub clip_events: usize,
}

impl FtSolution {
    pub fn epochs_run(&self) -> usize {
        self.trajectory.len()
    }
}

/// Seeded `Normal(0, init_scale²)` fields.
pub fn init_fields(cfg: &FtConfig, size: usize) -> FieldPair {
    let mut rng = stream(cfg.seed, Stream::FieldInit);
    let normal = Normal::new(0.0, cfg.init_scale).expect("validated init scale");
    let mu: Vec<f64> = (0..size).map(|_| normal.sample(&mut rng)).collect();
    let eta: Vec<f64> = (0..size).map(|_| normal.sample(&mut rng)).collect();
    FieldPair {
        mu: mu.into(),
        eta: eta.into(),
    }
}

/// Minimizes the objective from a seeded random start.
pub fn solve_ft(cfg: &FtConfig, y: &[f64], lat: &Lattice1D) -> Result<FtSolution> {
    cfg.validate()?;
    solve_ft_from(cfg, y, lat, init_fields(cfg, lat.size()))
}

/// Minimizes the objective starting from `init`.
pub fn solve_ft_from(cfg: &FtConfig, y: &[f64], lat: &Lattice1D, init: FieldPair) -> Result<FtSolution> {
    cfg.validate()?;
    check_inputs(&init, y, lat, cfg.rho, cfg.gamma)?;
    let d = lat.size();
    let (p, h) = (lat.weights(), lat.spacing());

    let mut params: Vec<f64> = init.mu.iter().chain(init.eta.iter()).copied().collect();
    let mut grad = vec![0.0; 2 * d];
    let mut adam = Adam::new(2 * d);
    let mut kernel = Kernel::new(d);
    let mut trajectory = Vec::with_capacity(cfg.epochs);
    let (mut clip_events, mut clamp_events) = (0, 0);
    let mut status = SolveStatus::Converged;

    for epoch in 0..cfg.epochs {
        let (mu, eta) = params.split_at(d);
        let (gm, ge) = grad.split_at_mut(d);
        let obj = kernel
            .eval(mu, eta, y, p, h, cfg.rho, cfg.gamma, Some((gm, ge)))
            .combine(cfg.rho, cfg.gamma);
        if !obj.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            status = SolveStatus::Diverged;
            break;
        }
        if clip_in_place(&mut grad, cfg.clip_threshold) {
            clip_events += 1;
        }
        let lr = cfg.schedule.at(epoch);
        trajectory.push(TrajectoryPoint {
            epoch,
            objective: obj,
            lr,
            clip_events,
        });
        adam.step(&mut params, &grad, lr);

        let mut clamped = 0;
        for e in &mut params[d..] {
            if *e > cfg.eta_max {
                *e = cfg.eta_max;
                clamped += 1;
            } else if *e < cfg.eta_min {
                *e = cfg.eta_min;
                clamped += 1;
            }
        }
        if clamped > 0 {
            clamp_events += clamped;
            status = SolveStatus::Unbounded;
            if cfg.stop_on_clamp {
                break;
            }
        }
    }

    let (mu, eta) = params.split_at(d);
    let final_objective = kernel.eval(mu, eta, y, p, h, cfg.rho, cfg.gamma, None).combine(cfg.rho, cfg.gamma);
    if !final_objective.is_finite() {
        status = SolveStatus::Diverged;
    } else if status == SolveStatus::Converged && is_degenerate(cfg.rho, cfg.gamma) && descending_trend(&trajectory, TREND_WINDOW) {
        status = SolveStatus::Unbounded;
    }
    Ok(FtSolution {
        fields: FieldPair {
            mu: mu.to_vec().into(),
            eta: eta.to_vec().into(),
        },
        trajectory,
        status,
        final_objective,
        clamp_events,
        clip_events,
    })
}

/// Epochs inspected by the runaway-trend check.
pub const TREND_WINDOW: usize = 1000;

/// Corners where the objective has no lower bound: one field unpenalized
/// (`γ ∈ {0, 1}`) or no regularization at all (`ρ = 1`).
pub fn is_degenerate(rho: f64, gamma: f64) -> bool {
    rho == 1.0 || gamma == 0.0 || gamma == 1.0
}

/// True when the objective is still reaching new lows at the end of the run:
/// the best value of the last tenth of the window beats everything before it
/// and the window as a whole went down.
pub fn descending_trend(traj: &[TrajectoryPoint], window: usize) -> bool {
    let n = traj.len();
    if window < 10 || n < window + 1 {
        return false;
    }
    let tail = &traj[n - window..];
    let recent = n - window / 10;
    let best_before = traj[..recent].iter().map(|t| t.objective).fold(f64::INFINITY, f64::min);
    let best_recent = traj[recent..].iter().map(|t| t.objective).fold(f64::INFINITY, f64::min);
    tail[window - 1].objective < tail[0].objective && best_recent < best_before
}

/// Extreme corners of the `(ρ, γ)` square.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// `ρ → 0`: both fields collapse to constants.
    Underfit,
    /// `γ = 0`: the mean is unpenalized.
    NoMeanPenalty,
    /// `γ = 1`: the precision is unpenalized.
    NoPrecisionPenalty,
    /// `ρ = 1`: no regularization at all.
    Unregularized,
}

impl Regime {
    pub const ALL: [Regime; 4] = [
        Regime::Underfit,
        Regime::NoMeanPenalty,
        Regime::NoPrecisionPenalty,
        Regime::Unregularized,
    ];

    pub fn rho_gamma(self) -> (f64, f64) {
        match self {
            Regime::Underfit => (1e-9, 0.5),
            Regime::NoMeanPenalty => (0.5, 0.0),
            Regime::NoPrecisionPenalty => (0.5, 1.0),
            Regime::Unregularized => (1.0, 0.5),
        }
    }
}

/// Diagnostics of a solve at one extreme corner.
#[derive(Debug, Clone)]
pub struct ProbeReport {
    pub regime: Regime,
    pub solution: FtSolution,
    pub mu_energy: f64,
    pub lambda_energy: f64,
    /// Sites whose final `η` sits on a clamp bound.
    pub clamped_sites: usize,
}

impl ProbeReport {
    /// Whether every step of the last `window` recorded epochs lowered the objective.
    pub fn tail_strictly_decreasing(&self, window: usize) -> bool {
        strictly_decreasing_tail(&self.solution.trajectory, window)
    }
}

/// True when the last `window` objectives (plus the one before them) form a
/// strictly decreasing sequence.
pub fn strictly_decreasing_tail(traj: &[TrajectoryPoint], window: usize) -> bool {
    if traj.len() < window + 1 {
        return false;
    }
    traj[traj.len() - window - 1..]
        .windows(2)
        .all(|w| w[1].objective < w[0].objective)
}

/// Solves at `regime`'s corner, keeping every other setting of `base`.
pub fn probe_regime(regime: Regime, base: &FtConfig, y: &[f64], lat: &Lattice1D) -> Result<ProbeReport> {
    let (rho, gamma) = regime.rho_gamma();
    let cfg = FtConfig {
        rho,
        gamma,
        ..base.clone()
    };
    let solution = solve_ft(&cfg, y, lat)?;
    let mu_energy = crate::lattice::dirichlet_energy(&solution.fields.mu, lat)?;
    let lambda_energy = crate::lattice::dirichlet_energy(&solution.fields.lambda(), lat)?;
    let clamped_sites = solution
        .fields
        .eta
        .iter()
        .filter(|&&e| e >= cfg.eta_max || e <= cfg.eta_min)
        .count();
    Ok(ProbeReport {
        regime,
        solution,
        mu_energy,
        lambda_energy,
        clamped_sites,
    })
}

/// Field snapshot with columns `x, mu, eta, lambda`.
pub fn write_fields_csv(fp: &FieldPair, lat: &Lattice1D, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = crate::io::csv_writer(path)?;
    w.write_record(["x", "mu", "eta", "lambda"])?;
    for i in 0..fp.len() {
        w.write_record([
            lat.point(i).to_string(),
            fp.mu[i].to_string(),
            fp.eta[i].to_string(),
            fp.eta[i].exp().to_string(),
        ])?;
    }
    crate::io::finish(w, path)
}

/// Trajectory with columns `epoch, objective, lr, clip_events`.
pub fn write_trajectory_csv(traj: &[TrajectoryPoint], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = crate::io::csv_writer(path)?;
    w.write_record(["epoch", "objective", "lr", "clip_events"])?;
    for t in traj {
        w.write_record([
            t.epoch.to_string(),
            t.objective.to_string(),
            t.lr.to_string(),
            t.clip_events.to_string(),
        ])?;
    }
    crate::io::finish(w, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{sample_field_on_lattice, SyntheticKind, SyntheticSpec};
    use crate::lattice::dirichlet_energy;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(d: usize) -> Lattice1D {
        Lattice1D::uniform(0.0, 1.0, d, None).unwrap()
    }

    fn random_instance(rng: &mut ChaCha8Rng, d: usize) -> (FieldPair, Vec<f64>) {
        let mut v = |s: f64| -> Vec<f64> { (0..d).map(|_| rng.random_range(-s..s)).collect() };
        let mu = v(1.0);
        let eta = v(1.0);
        let y = v(2.0);
        (FieldPair::new(mu, eta).unwrap(), y)
    }

    fn fd_gradient(fp: &FieldPair, y: &[f64], lat: &Lattice1D, rho: f64, gamma: f64, step: f64) -> Vec<f64> {
        let d = fp.len();
        let mut out = Vec::with_capacity(2 * d);
        for which in 0..2 {
            for k in 0..d {
                let mut plus = fp.clone();
                let mut minus = fp.clone();
                if which == 0 {
                    plus.mu.values_mut()[k] += step;
                    minus.mu.values_mut()[k] -= step;
                } else {
                    plus.eta.values_mut()[k] += step;
                    minus.eta.values_mut()[k] -= step;
                }
                let fp_ = ft_objective(&plus, y, lat, rho, gamma).unwrap();
                let fm = ft_objective(&minus, y, lat, rho, gamma).unwrap();
                out.push((fp_ - fm) / (2.0 * step));
            }
        }
        out
    }

    #[test]
    fn exact_fit_at_unit_precision_is_zero() {
        let lat = unit(8);
        let y = vec![0.8; 8];
        let fp = FieldPair::new(y.clone(), vec![0.0; 8]).unwrap();
        for g in [0.0, 0.3, 1.0] {
            assert_eq!(ft_objective(&fp, &y, &lat, 0.7, g).unwrap(), 0.0);
        }
    }

    #[test]
    fn flat_precision_e_gives_minus_quarter() {
        let lat = unit(5);
        let y = vec![0.3; 5];
        let fp = FieldPair::new(y.clone(), vec![1.0; 5]).unwrap();
        assert_relative_eq!(ft_objective(&fp, &y, &lat, 0.5, 0.5).unwrap(), -0.25, max_relative = 1e-14);
    }

    #[test]
    fn unpenalized_mean_objective_falls_with_precision() {
        let lat = unit(6);
        let y: Vec<f64> = (0..6).map(|i| i as f64 * 0.1).collect();
        let mut last = f64::INFINITY;
        for c in [0.5, 1.0, 2.0, 10.0, 1e3, 1e6] {
            let fp = FieldPair::new(y.clone(), vec![f64::ln(c); 6]).unwrap();
            let s = ft_objective(&fp, &y, &lat, 0.4, 0.0).unwrap();
            assert_relative_eq!(s, -0.2 * c.ln(), max_relative = 1e-12);
            assert!(s < last);
            last = s;
        }
    }

    #[test]
    fn non_finite_input_reports_site() {
        let lat = unit(4);
        let mut fp = FieldPair::new(vec![0.0; 4], vec![0.0; 4]).unwrap();
        fp.eta.values_mut()[2] = f64::NAN;
        match ft_objective(&fp, &[0.0; 4], &lat, 0.5, 0.5) {
            Err(Error::NonFinite { site }) => assert_eq!(site, 2),
            other => panic!("{other:?}"),
        }
        assert!(ft_gradient(&fp, &[0.0; 4], &lat, 0.5, 0.5).is_err());
        let fp = FieldPair::new(vec![0.0; 4], vec![0.0; 4]).unwrap();
        assert!(matches!(
            ft_objective(&fp, &[0.0; 4], &lat, 1.5, 0.5),
            Err(Error::InvalidParameter(_))
        ));
        assert!(FieldPair::new(vec![0.0; 3], vec![0.0; 4]).is_err());
    }

    #[test]
    fn closed_form_precision_is_stationary() {
        let lat = unit(16);
        let y: Vec<f64> = (0..16).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let ybar = y.iter().sum::<f64>() / 16.0;
        let msr = y.iter().map(|v| (v - ybar).powi(2)).sum::<f64>() / 16.0;
        let fp = FieldPair::new(vec![ybar; 16], vec![-msr.ln(); 16]).unwrap();
        let (gm, ge) = ft_gradient(&fp, &y, &lat, 0.6, 0.4).unwrap();
        assert!(ge.iter().sum::<f64>().abs() < 1e-14);
        assert!(gm.iter().sum::<f64>().abs() < 1e-14);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lat = unit(16);
        for _ in 0..5 {
            let (rho, gamma) = (rng.random_range(0.05..0.95), rng.random_range(0.05..0.95));
            for _ in 0..20 {
                let (fp, y) = random_instance(&mut rng, 16);
                let (gm, ge) = ft_gradient(&fp, &y, &lat, rho, gamma).unwrap();
                let g: Vec<f64> = gm.iter().chain(ge.iter()).copied().collect();
                let fd = fd_gradient(&fp, &y, &lat, rho, gamma, 1e-5);
                let err = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let scale = g.iter().map(|a| a * a).sum::<f64>().sqrt();
                assert!(err / scale < 1e-6, "rel err {}", err / scale);
            }
        }
    }

    #[test]
    fn pure_penalty_gradient_vanishes_on_constants() {
        let lat = unit(10);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y: Vec<f64> = (0..10).map(|_| rng.random()).collect();
        let fp = FieldPair::new(vec![1.7; 10], vec![-0.4; 10]).unwrap();
        let (gm, ge) = ft_gradient(&fp, &y, &lat, 0.0, 0.3).unwrap();
        assert!(gm.iter().chain(ge.iter()).all(|&g| g == 0.0));
        let (rm, rl) = el_residual(&fp, &y, &lat, 0.0, 0.3).unwrap();
        assert!(rm.iter().chain(rl.iter()).all(|&g| g == 0.0));
    }

    #[test]
    fn residual_is_positive_off_the_minimizer() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let lat = unit(32);
        let (fp, y) = random_instance(&mut rng, 32);
        let (rm, rl) = el_residual(&fp, &y, &lat, 0.5, 0.5).unwrap();
        assert!(weighted_rms(&rm, &lat, true) > 0.0);
        assert!(weighted_rms(&rl, &lat, true) > 0.0);
    }

    #[test]
    fn weighting_scales_with_rho_and_penalty_split() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let lat = unit(12);
        let (fp, y) = random_instance(&mut rng, 12);
        let t = ft_terms(&fp, &y, &lat).unwrap();
        for (rho, gamma) in [(0.2, 0.7), (0.9, 0.1), (0.5, 0.5)] {
            let s = ft_objective(&fp, &y, &lat, rho, gamma).unwrap();
            assert_relative_eq!(s, t.combine(rho, gamma), max_relative = 1e-13);
        }
        assert_relative_eq!(t.mean_penalty, dirichlet_energy(&fp.mu, &lat).unwrap(), max_relative = 1e-13);
        assert_relative_eq!(
            t.precision_penalty,
            dirichlet_energy(&fp.lambda(), &lat).unwrap(),
            max_relative = 1e-13
        );
    }

    #[test]
    fn short_solve_is_deterministic_and_descends() {
        let lat = unit(64);
        let s = sample_field_on_lattice(&SyntheticSpec::new(SyntheticKind::Sine, true), &lat, 0).unwrap();
        let cfg = FtConfig::desk(0.5, 0.5).with_epochs(2000);
        let a = solve_ft(&cfg, &s.y, &lat).unwrap();
        let b = solve_ft(&cfg, &s.y, &lat).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.status, SolveStatus::Converged);
        assert_eq!(a.trajectory.len(), 2000);
        assert!(a.final_objective < a.trajectory[0].objective);
    }

    #[test]
    fn shifting_data_shifts_the_mean() {
        let lat = unit(48);
        let s = sample_field_on_lattice(&SyntheticSpec::new(SyntheticKind::Sine, true), &lat, 2).unwrap();
        let cfg = FtConfig::desk(0.5, 0.5).with_epochs(500);
        let init = init_fields(&cfg, 48);
        let c = 3.0;
        let shifted_init = FieldPair::new(init.mu.map(|m| m + c), init.eta.clone()).unwrap();
        let y2: Vec<f64> = s.y.iter().map(|v| v + c).collect();
        let a = solve_ft_from(&cfg, &s.y, &lat, init).unwrap();
        let b = solve_ft_from(&cfg, &y2, &lat, shifted_init).unwrap();
        for i in 0..48 {
            assert!((b.fields.mu[i] - a.fields.mu[i] - c).abs() < 1e-8);
            assert!((b.fields.eta[i] - a.fields.eta[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn csv_outputs_have_expected_columns() {
        let dir = tempfile::tempdir().unwrap();
        let lat = unit(4);
        let fp = FieldPair::new(vec![0.0, 1.0, 2.0, 3.0], vec![0.0; 4]).unwrap();
        write_fields_csv(&fp, &lat, dir.path().join("f.csv")).unwrap();
        let text = std::fs::read_to_string(dir.path().join("f.csv")).unwrap();
        assert!(text.starts_with("x,mu,eta,lambda\n0,0,0,1\n"));
        let traj = [TrajectoryPoint {
            epoch: 0,
            objective: 1.5,
            lr: 0.01,
            clip_events: 0,
        }];
        write_trajectory_csv(&traj, dir.path().join("t.csv")).unwrap();
        let text = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
        assert_eq!(text, "epoch,objective,lr,clip_events\n0,1.5,0.01,0\n");
    }

    #[test]
    fn degenerate_corners() {
        assert!(is_degenerate(1.0, 0.5));
        assert!(is_degenerate(0.5, 0.0));
        assert!(is_degenerate(0.5, 1.0));
        assert!(!is_degenerate(0.5, 0.5));
        assert!(!is_degenerate(1e-9, 0.5));
    }

    fn trajectory(objective: impl Fn(usize) -> f64, n: usize) -> Vec<TrajectoryPoint> {
        (0..n)
            .map(|epoch| TrajectoryPoint {
                epoch,
                objective: objective(epoch),
                lr: 0.01,
                clip_events: 0,
            })
            .collect()
    }

    #[test]
    fn trend_detects_runaway_but_not_plateau() {
        let falling = trajectory(|e| -(e as f64), 2000);
        assert!(descending_trend(&falling, 1000));
        let settled = trajectory(|e| (-(e.min(300) as f64) / 50.0).exp(), 2000);
        assert!(!descending_trend(&settled, 1000));
        let noisy_floor = trajectory(|e| if e % 2 == 0 { 1.0 } else { 1.5 }, 2000);
        assert!(!descending_trend(&noisy_floor, 1000));
        assert!(!descending_trend(&falling[..500], 1000));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn penalty_terms_ignore_mean_shift(seed in 0u64..1000, c in -10.0f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let lat = unit(10);
            let (fp, y) = random_instance(&mut rng, 10);
            let shifted = FieldPair::new(fp.mu.map(|m| m + c), fp.eta.clone()).unwrap();
            let y2: Vec<f64> = y.iter().map(|v| v + c).collect();
            let a = ft_objective(&fp, &y, &lat, 0.4, 0.6).unwrap();
            let b = ft_objective(&shifted, &y2, &lat, 0.4, 0.6).unwrap();
            prop_assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
        }

        #[test]
        fn objective_at_exact_fit_is_bounded_by_penalties(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let lat = unit(9);
            let (fp, _) = random_instance(&mut rng, 9);
            let y = fp.mu.to_vec();
            let zero_eta = FieldPair::new(fp.mu.clone(), vec![0.0; 9]).unwrap();
            let s = ft_objective(&zero_eta, &y, &lat, 0.3, 0.5).unwrap();
            let pen = 0.7 * 0.5 * dirichlet_energy(&fp.mu, &lat).unwrap();
            prop_assert!((s - pen).abs() < 1e-12 * pen.max(1.0));
        }
    }
}
