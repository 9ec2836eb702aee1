// Teacher-forced caption logits and greedy decoding.

use memefier::dataset::generate_synthetic;
use memefier::model::{MemeFier, ModelConfig};

pub fn run_example() -> memefier::Result<()> {
    let manifest = generate_synthetic(20, 8, 2, 2, 2)?;
    let mut config = ModelConfig::default();
    config.fit_to(&manifest);
    let model = MemeFier::<f32>::new(config)?;
    let sample = &manifest.samples[0];

    let out = model.forward(sample)?;
    let logits = out.caption_logits.expect("caption head enabled");
    println!("teacher-forced logits {:?}", logits.shape());

    let prefix = &sample.caption_ids[..2];
    let dec = model.decode_caption(&out.fused_image_features, prefix)?;
    println!("cross-attention over {} image tokens", dec.cross_attention[0][0].cols());

    let ids = model.greedy_caption(sample)?;
    println!("greedy: {:?} (untrained)", manifest.caption_vocab.decode(&ids));
    println!("truth:  {:?}", manifest.caption_vocab.decode(&sample.caption_ids));
    Ok(())
}

#[allow(dead_code)]
fn main() -> memefier::Result<()> {
    run_example()
}
