// Checkpoints preserve every parameter bit.

use memefier::model::{read_checkpoint, write_checkpoint, MemeFier, ModelConfig};

pub fn run_example() -> memefier::Result<()> {
    let model = MemeFier::<f32>::new(ModelConfig {
        seed: 42,
        ..ModelConfig::default()
    })?;
    let mut buf = Vec::new();
    write_checkpoint(&model, &mut buf)?;
    let back = read_checkpoint(buf.as_slice())?;
    assert_eq!(back.config(), model.config());
    for (a, b) in model.params().iter().zip(back.params()) {
        let same = a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());
        assert!(same);
    }
    println!("{} bytes, {} tensors restored exactly", buf.len(), back.params().len());
    Ok(())
}

#[allow(dead_code)]
fn main() -> memefier::Result<()> {
    run_example()
}
