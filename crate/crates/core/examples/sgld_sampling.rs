//! Langevin sampling of the MAP energy, started from a short solve.

use mvr::bft::{sgld_sample, SgldConfig};
use mvr::datagen::{sample_field_on_lattice, SyntheticKind, SyntheticSpec};
use mvr::ft::{solve_ft, FtConfig};
use mvr::lattice::Lattice1D;

fn main() -> mvr::Result<()> {
    let kind = SyntheticKind::Sine;
    let (lo, hi) = kind.domain();
    let lat = Lattice1D::uniform(lo, hi, 128, None)?;
    let y = sample_field_on_lattice(&SyntheticSpec::new(kind, true), &lat, 0)?.y;

    let start = solve_ft(&FtConfig::desk(0.5, 0.5).with_epochs(5000), y.values(), &lat)?.fields;
    let run = sgld_sample(&SgldConfig::new(0.5, 0.5, 20_000), y.values(), &lat, Some(start))?;
    if let Some(step) = run.diverged_at {
        println!("chain diverged at step {step}");
    }
    println!("kept {} samples", run.samples.len());

    let m = run.samples.len() as f64;
    let mid = lat.size() / 2;
    let mean = run.samples.iter().map(|s| s.mu[mid]).sum::<f64>() / m;
    let var = run.samples.iter().map(|s| (s.mu[mid] - mean).powi(2)).sum::<f64>() / m;
    println!("mu at x = {:.3}: posterior mean {mean:.4}, sd {:.2e}", lat.point(mid), var.sqrt());
    println!(
        "energy: first kept {:.4}, last kept {:.4}",
        run.energies.first().copied().unwrap_or(f64::NAN),
        run.energies.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}
