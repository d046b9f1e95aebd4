//! Fits the mean and log-precision fields to the heteroskedastic sine data
//! at the centre of the phase diagram.

use mvr::datagen::{sample_field_on_lattice, SyntheticKind, SyntheticSpec};
use mvr::ft::{solve_ft, FtConfig};
use mvr::lattice::Lattice1D;

fn main() -> mvr::Result<()> {
    let kind = SyntheticKind::Sine;
    let (lo, hi) = kind.domain();
    let lat = Lattice1D::uniform(lo, hi, 512, None)?;
    let data = sample_field_on_lattice(&SyntheticSpec::new(kind, true), &lat, 0)?;

    let sol = solve_ft(&FtConfig::desk(0.5, 0.5), data.y.values(), &lat)?;
    println!("status {} after {} epochs", sol.status.as_str(), sol.epochs_run());
    println!("final objective {:.6}", sol.trajectory.last().unwrap().objective);

    let sd = sol.fields.sd();
    for i in (0..lat.size()).step_by(64) {
        println!(
            "x = {:>6.3}  mu = {:>7.3} (true {:>7.3})  sd = {:.3} (true {:.3})",
            lat.point(i),
            sol.fields.mu[i],
            data.true_mean[i],
            sd[i],
            data.true_sd[i]
        );
    }
    Ok(())
}
