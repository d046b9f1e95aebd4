//! A small `(ρ, γ)` sweep written to CSV, with per-cell aggregates.

use mvr::datagen::SyntheticKind;
use mvr::metrics::{aggregate_runs, write_summary_csv};
use mvr::sweep::{
    run_sweep_to, Backend, BackendPlan, DatasetPlan, GridPlan, Preset, SeedPlan, SweepOptions, SweepPlan,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let plan = SweepPlan {
        dataset: DatasetPlan::new(SyntheticKind::Sine),
        grid: GridPlan::full(4),
        backend: BackendPlan {
            kind: Backend::Ft,
            preset: Preset::Desk,
            epochs: Some(5000),
        },
        seeds: SeedPlan { values: vec![0, 1, 2] },
    };
    let dir = std::env::temp_dir().join("mvr-sweep");
    std::fs::create_dir_all(&dir)?;
    let csv = dir.join("metrics.csv");
    let out = run_sweep_to(&plan, Some(&csv), &SweepOptions::default())?;
    println!("{} runs ({} computed, {} reused) -> {}", out.rows.len(), out.computed, out.reused, csv.display());

    let cells = aggregate_runs(&out.rows)?;
    write_summary_csv(&cells, dir.join("summary.csv"))?;
    for c in &cells {
        println!(
            "rho {:>9.2e} gamma {:>9.2e}  mu-MSE {:.4} +- {:.4}  flagged {}",
            c.rho, c.gamma, c.mean[0], c.sd[0], c.flagged
        );
    }
    Ok(())
}
