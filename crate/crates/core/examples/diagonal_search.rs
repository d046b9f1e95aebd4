//! Scans the diagonal `γ = 1 − ρ` with the lattice solver and picks
//! `(ρ*, γ*)` from training-set metrics alone.

use mvr::datagen::SyntheticKind;
use mvr::sweep::{
    run_sweep, select_diagonal_model, Backend, BackendPlan, DatasetPlan, GridPlan, Preset, SeedPlan, SweepPlan,
};

fn main() -> mvr::Result<()> {
    let plan = SweepPlan {
        dataset: DatasetPlan::new(SyntheticKind::Sine),
        grid: GridPlan::diagonal(15),
        backend: BackendPlan {
            kind: Backend::Ft,
            preset: Preset::Desk,
            epochs: Some(5000),
        },
        seeds: SeedPlan { values: vec![0, 1] },
    };
    let rows = run_sweep(&plan)?;
    println!("{:>12} {:>10} {:>10} {:>10}", "rho", "test mu", "train mu", "train sd");
    for r in rows.iter().filter(|r| r.seed == 0) {
        println!("{:>12.3e} {:>10.4} {:>10.4} {:>10.4}", r.rho, r.mu_mse, r.train_mu_mse, r.train_sd_mse);
    }
    let (rho, gamma) = select_diagonal_model(&rows)?;
    println!("rho* = {rho}, gamma* = {gamma:e}");
    Ok(())
}
