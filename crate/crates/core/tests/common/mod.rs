#![allow(dead_code)]

use std::collections::BTreeMap;

use memefier::dataset::{EmbeddedSample, LabelValue, Split, BOS, EOS, NUM_SPECIAL, PAD};
use memefier::model::{HeadKind, HeadSpec, ModelConfig};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
}

pub fn rand_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<f32>> {
    (0..rows).map(|_| rand_vec(rng, cols)).collect()
}

/// A random sample valid for `config`, labelled for every head.
pub fn random_sample(
    rng: &mut ChaCha8Rng,
    config: &ModelConfig,
    n_g: usize,
    n_x: usize,
    n_p: usize,
) -> EmbeddedSample {
    let sizes = config.attribute_vocab_sizes;
    let external_codes = (0..n_p)
        .flat_map(|_| sizes.map(|s| rng.gen_range(0..s as u32)))
        .collect();
    let max_len = config.caption_max_len.max(2);
    let words = rng.gen_range(0..=max_len - 2);
    let mut caption_ids = vec![BOS];
    for _ in 0..words {
        caption_ids.push(rng.gen_range(NUM_SPECIAL..config.caption_vocab_size as u32));
    }
    caption_ids.push(EOS);
    while caption_ids.len() < max_len && rng.gen_bool(0.5) {
        caption_ids.push(PAD);
    }
    let labels = config
        .heads
        .iter()
        .map(|h| {
            let v = match h.kind {
                HeadKind::Binary => LabelValue::Index(rng.gen_range(0..2)),
                HeadKind::Multiclass { classes } => LabelValue::Index(rng.gen_range(0..classes as u32)),
                HeadKind::Multilabel { classes } => {
                    LabelValue::MultiHot((0..classes).map(|_| rng.gen_range(0..2)).collect())
                }
            };
            (h.name.clone(), v)
        })
        .collect::<BTreeMap<_, _>>();
    EmbeddedSample {
        id: format!("r-{}", rng.gen::<u32>()),
        split: Split::Train,
        image_global: rand_vec(rng, config.d_img),
        image_patches: rand_rows(rng, n_g, config.d_img),
        text_global: rand_vec(rng, config.d_txt),
        text_tokens: rand_rows(rng, n_x, config.d_txt),
        external_codes,
        caption_ids,
        labels,
    }
}

/// Small model with one head of each kind.
pub fn tiny_config(d: usize) -> ModelConfig {
    ModelConfig {
        d_model: d,
        d_img: d,
        d_txt: d,
        n_heads: 2,
        ff_dim: 2 * d,
        n_layers: 1,
        decoder_dim: d,
        decoder_heads: 2,
        decoder_ff: 2 * d,
        decoder_layers: 1,
        dropout: 0.0,
        heads: vec![
            HeadSpec::binary("hateful"),
            HeadSpec {
                name: "target".into(),
                kind: HeadKind::Multiclass { classes: 3 },
            },
            HeadSpec {
                name: "stance".into(),
                kind: HeadKind::Multilabel { classes: 2 },
            },
        ],
        ..ModelConfig::default()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}
