//! Beta-NLL and a moment-matched ensemble of unregularized networks, scored
//! against the `(ρ, γ)` network on the same data.

use mvr::datagen::{gen_synthetic, gen_synthetic_test, Dataset, SyntheticKind, SyntheticSpec};
use mvr::metrics::{ece, mu_mse};
use mvr::nn::{mle_ensemble_predict, train_two_phase, LossKind, MvrModel, Prediction, TrainConfig};

fn fit(loss: LossKind, seed: u64, train: &Dataset, test: &Dataset) -> mvr::Result<Prediction> {
    let cfg = TrainConfig::desk(loss).with_epochs(4000).with_seed(seed);
    train_two_phase(MvrModel::init(1, &cfg)?, train, &cfg)?.model.predict(&test.x)
}

fn report(name: &str, p: &Prediction, test: &Dataset) -> mvr::Result<()> {
    println!("{name:<18} mu-MSE {:.4}  ECE {:.4}", mu_mse(&p.mu, &test.y)?, ece(&p.mu, &p.sd, &test.y)?);
    Ok(())
}

fn main() -> mvr::Result<()> {
    let kind = SyntheticKind::Sine;
    let (train, scale) = gen_synthetic(kind, 64, 0, true)?;
    let test = gen_synthetic_test(&SyntheticSpec::new(kind, true), 1000, 1, &scale)?;

    report("rho-gamma (0.9,0.1)", &fit(LossKind::RhoGamma { rho: 0.9, gamma: 0.1 }, 0, &train, &test)?, &test)?;
    report("beta-NLL (0.5)", &fit(LossKind::BetaNll { beta: 0.5 }, 0, &train, &test)?, &test)?;

    let members: Vec<Prediction> = (0..5)
        .map(|s| fit(LossKind::PlainMle, s, &train, &test))
        .collect::<mvr::Result<_>>()?;
    report("MLE ensemble (5)", &mle_ensemble_predict(&members)?, &test)?;
    Ok(())
}
