// A two-point grid whose results are cached and reused.

use memefier::dataset::generate_synthetic;
use memefier::model::ModelConfig;
use memefier::training::{grid_search, TrainConfig};

pub fn run_example() -> memefier::Result<()> {
    let manifest = generate_synthetic(80, 8, 2, 2, 0)?;
    let grid: Vec<_> = [1e-3, 3e-3]
        .into_iter()
        .map(|lr| {
            let tc = TrainConfig {
                lr,
                epochs: 2,
                ..TrainConfig::default()
            };
            (ModelConfig::default(), tc)
        })
        .collect();
    let cache = std::env::temp_dir().join(format!("memefier-grid-{}", std::process::id()));
    let first = grid_search(&grid, &manifest, Some(&cache))?;
    let again = grid_search(&grid, &manifest, Some(&cache))?;
    let _ = std::fs::remove_dir_all(&cache);

    assert!(again.outcomes.iter().all(|o| o.cached));
    assert_eq!(first.best().map(|o| &o.key), again.best().map(|o| &o.key));
    print!("{}", first.to_table());
    Ok(())
}

#[allow(dead_code)]
fn main() -> memefier::Result<()> {
    run_example()
}
