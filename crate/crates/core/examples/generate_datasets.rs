//! Draws the three synthetic regression problems and writes them as CSV.

use mvr::datagen::{gen_synthetic, save_csv, SyntheticKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("mvr-datasets");
    std::fs::create_dir_all(&dir)?;
    for kind in [SyntheticKind::Sine, SyntheticKind::Cubic, SyntheticKind::Curve] {
        for heteroskedastic in [true, false] {
            let (data, scale) = gen_synthetic(kind, 64, 0, heteroskedastic)?;
            let tag = if heteroskedastic { "het" } else { "hom" };
            let path = dir.join(format!("{}_{tag}.csv", kind.name()));
            save_csv(&data, &path)?;
            println!("{:<28} n = {}  response scale {:.3}", path.display(), data.len(), scale.sd);
        }
    }
    Ok(())
}
