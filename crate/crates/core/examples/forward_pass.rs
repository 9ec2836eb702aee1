// One inference pass: head probabilities, sequence layout and attention.

use memefier::dataset::generate_synthetic;
use memefier::model::{MemeFier, ModelConfig, Segment};

pub fn run_example() -> memefier::Result<()> {
    let manifest = generate_synthetic(20, 8, 2, 3, 1)?;
    let mut config = ModelConfig::default();
    config.fit_to(&manifest);
    let model = MemeFier::<f32>::new(config)?;

    let sample = &manifest.samples[0];
    let out = model.forward(sample)?;
    let seq = &out.sequence;
    println!(
        "sequence of {}: {} image, {} text, {} external",
        seq.len(),
        seq.count(Segment::Image),
        seq.count(Segment::Text),
        seq.count(Segment::External)
    );
    for h in out.head_scores.iter() {
        println!("{}: p = {:?}", h.name, h.probs);
    }
    let encoded = model.encode(seq)?;
    let first = &encoded.attention[0][0];
    let sum: f32 = first.row(0).iter().sum();
    println!("attention row sum {sum:.6}");
    Ok(())
}

#[allow(dead_code)]
fn main() -> memefier::Result<()> {
    run_example()
}
