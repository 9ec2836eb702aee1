// Parameter counts per module, with and without ablated components.

use memefier::model::{count_parameters, Ablations, ModelConfig};

pub fn run_example() -> memefier::Result<()> {
    let full = count_parameters(&ModelConfig::default())?;
    for (module, n) in &full.per_module {
        println!("{module:<12} {n}");
    }
    println!("total        {}", full.total);

    let lean = ModelConfig::default().with_ablations(Ablations {
        no_caption: true,
        ..Ablations::default()
    });
    let lean = count_parameters(&lean)?;
    assert!(!lean.per_module.contains_key("decoder"));
    println!("without caption decoder: {}", lean.total);
    Ok(())
}

#[allow(dead_code)]
fn main() -> memefier::Result<()> {
    run_example()
}
