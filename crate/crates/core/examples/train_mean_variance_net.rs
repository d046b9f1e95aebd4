//! Trains a mean network and a precision network under the `(ρ, γ)`
//! weighted L2 penalty, then scores them on held-out data.

use mvr::datagen::{gen_synthetic, gen_synthetic_test, SyntheticKind, SyntheticSpec};
use mvr::metrics::{ece, mu_mse, sd_mse};
use mvr::nn::{train_two_phase, LossKind, MvrModel, TrainConfig};

fn main() -> mvr::Result<()> {
    let kind = SyntheticKind::Sine;
    let (train, scale) = gen_synthetic(kind, 64, 0, true)?;
    let test = gen_synthetic_test(&SyntheticSpec::new(kind, true), 1000, 1, &scale)?;

    let cfg = TrainConfig::desk(LossKind::RhoGamma { rho: 0.9, gamma: 0.1 }).with_epochs(5000);
    let fit = train_two_phase(MvrModel::init(1, &cfg)?, &train, &cfg)?;
    println!(
        "epochs {}  final loss {:.4}  clipped {}",
        fit.history.loss.len(),
        fit.history.loss.last().copied().unwrap_or(f64::NAN),
        fit.history.clip_events
    );

    let pred = fit.model.predict(&test.x)?;
    println!("test mu-MSE {:.4}", mu_mse(&pred.mu, &test.y)?);
    println!("test sd-MSE {:.4}", sd_mse(&pred.sd, &pred.mu, &test.y)?);
    println!("test ECE    {:.4}", ece(&pred.mu, &pred.sd, &test.y)?);
    if let Some(sd) = &test.true_sd {
        let gap = pred.sd.iter().zip(sd).map(|(a, b)| (a - b).abs()).sum::<f64>() / sd.len() as f64;
        println!("mean |sd - true sd| {gap:.4}");
    }
    Ok(())
}
