//! Runs the solver at the four extreme corners of the `(ρ, γ)` square.

use mvr::datagen::{sample_field_on_lattice, SyntheticKind, SyntheticSpec};
use mvr::ft::{probe_regime, FtConfig, Regime};
use mvr::lattice::Lattice1D;

fn main() -> mvr::Result<()> {
    let kind = SyntheticKind::Sine;
    let (lo, hi) = kind.domain();
    let lat = Lattice1D::uniform(lo, hi, 512, None)?;
    let y = sample_field_on_lattice(&SyntheticSpec::new(kind, true), &lat, 0)?.y;

    for regime in [Regime::Underfit, Regime::NoMeanPenalty, Regime::NoPrecisionPenalty, Regime::Unregularized] {
        let r = probe_regime(regime, &FtConfig::desk(0.5, 0.5), y.values(), &lat)?;
        let (rho, gamma) = regime.rho_gamma();
        println!(
            "rho = {rho:<6e} gamma = {gamma:<4} {:<10} epochs {:>6}  E(mu) {:.2e}  E(Lambda) {:.2e}  clamped {}",
            r.solution.status.as_str(),
            r.solution.epochs_run(),
            r.mu_energy,
            r.lambda_energy,
            r.clamped_sites
        );
    }
    Ok(())
}
