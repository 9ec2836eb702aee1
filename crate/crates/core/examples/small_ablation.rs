// Retrain with each component removed and compare validation scores.

use memefier::dataset::generate_synthetic;
use memefier::model::ModelConfig;
use memefier::training::{ablate, TrainConfig};

pub fn run_example() -> memefier::Result<()> {
    let manifest = generate_synthetic(120, 8, 2, 2, 0)?;
    let tc = TrainConfig {
        epochs: 3,
        ..TrainConfig::default()
    };
    let table = ablate(&ModelConfig::default(), &tc, &manifest)?;
    print!("{}", table.to_table());
    assert_eq!(table.rows.len(), 5);
    Ok(())
}

#[allow(dead_code)]
fn main() -> memefier::Result<()> {
    run_example()
}
