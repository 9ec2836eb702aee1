// Train on a small synthetic set and evaluate the selected model.

use memefier::dataset::{generate_synthetic, Split};
use memefier::model::ModelConfig;
use memefier::training::{evaluate, train, TrainConfig};

pub fn run_example() -> memefier::Result<()> {
    let manifest = generate_synthetic(200, 8, 2, 2, 0)?;
    let tc = TrainConfig {
        epochs: 6,
        ..TrainConfig::default()
    };
    let outcome = train(&ModelConfig::default(), &tc, &manifest)?;
    for r in &outcome.history.epochs {
        println!("{}", r.summary());
    }
    let test = evaluate(&outcome.best_model, &manifest.split(Split::Test))?;
    println!("best epoch {}", outcome.best_epoch);
    print!("{}", test.report.to_table());
    Ok(())
}

#[allow(dead_code)]
fn main() -> memefier::Result<()> {
    run_example()
}
