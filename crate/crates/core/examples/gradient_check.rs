// Compare tape gradients with central differences in 64-bit.

use memefier::dataset::generate_synthetic;
use memefier::model::{MemeFier, ModelConfig};

pub fn run_example() -> memefier::Result<()> {
    let manifest = generate_synthetic(8, 4, 2, 2, 3)?;
    let mut config = ModelConfig {
        d_model: 8,
        n_heads: 2,
        ff_dim: 8,
        decoder_dim: 4,
        decoder_ff: 4,
        dropout: 0.0,
        ..ModelConfig::default()
    };
    config.fit_to(&manifest);
    let mut model = MemeFier::<f64>::new(config)?;
    let sample = &manifest.samples[0];
    let (_, grads) = model.loss_and_gradients(sample, None)?;

    let h = 1e-6;
    for name in ["head.hateful.weight", "projection.text_global.weight", "decoder.out.bias"] {
        let i = model.param_index(name).expect("known parameter");
        let analytic = grads[i].as_ref().expect("used").data()[0];
        let orig = model.params()[i].data()[0];
        model.params_mut()[i].data_mut()[0] = orig + h;
        let up = model.loss(sample)?.total;
        model.params_mut()[i].data_mut()[0] = orig - h;
        let down = model.loss(sample)?.total;
        model.params_mut()[i].data_mut()[0] = orig;
        let numeric = (up - down) / (2.0 * h);
        println!("{name:<32} analytic {analytic:+.6e} numeric {numeric:+.6e}");
        assert!((analytic - numeric).abs() <= 1e-6 * (1.0 + analytic.abs()));
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> memefier::Result<()> {
    run_example()
}
