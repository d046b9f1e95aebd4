//! Six independently initialized MAP solves read as posterior samples, with
//! the predictive spread split into epistemic and aleatoric parts.

use mvr::bft::{ensemble_posterior, predictive_decomposition, write_ensemble, ENSEMBLE_SIZE};
use mvr::datagen::{sample_field_on_lattice, SyntheticKind, SyntheticSpec};
use mvr::ft::FtConfig;
use mvr::lattice::Lattice1D;

fn main() -> mvr::Result<()> {
    let kind = SyntheticKind::Sine;
    let (lo, hi) = kind.domain();
    let lat = Lattice1D::uniform(lo, hi, 256, None)?;
    let y = sample_field_on_lattice(&SyntheticSpec::new(kind, true), &lat, 0)?.y;

    let seeds: Vec<u64> = (0..ENSEMBLE_SIZE as u64).collect();
    let ens = ensemble_posterior(&FtConfig::desk(0.5, 0.5).with_epochs(10_000), y.values(), &lat, &seeds)?;
    let s = predictive_decomposition(&ens)?;
    println!("{} of {} members converged", ens.converged().count(), ens.len());

    let avg = |f: &[f64]| f.iter().sum::<f64>() / f.len() as f64;
    println!(
        "average sigma: epistemic {:.2e}  aleatoric {:.3}  total {:.3}",
        avg(s.sigma_epi.values()),
        avg(s.sigma_ale.values()),
        avg(s.sigma_tot.values())
    );

    let dir = std::env::temp_dir().join("mvr-bft");
    write_ensemble(&ens, &s, &lat, &dir)?;
    println!("wrote members and summary to {}", dir.display());
    Ok(())
}
