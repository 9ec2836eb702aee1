//! Planted-rule synthetic memes.
//!
//! Each sample draws unit vectors `z` (image) and `w` (text) whose inner
//! product has a prescribed sign, balanced over the dataset. Patches are
//! noisy copies of `z`, text tokens noisy copies of `w`. Each sample shows
//! 0, 1 or 2 persons with uniformly drawn attribute codes. The label is 1
//! exactly when `<z, w> > 0` and some person carries the planted gender code.
//! The caption quantizes the first three coordinates of `z`.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{
    build_caption_vocab, DatasetManifest, EmbeddedSample, LabelValue, Split,
    DEFAULT_ATTRIBUTE_VOCAB_SIZES, SCHEMA_VERSION,
};
use crate::error::{Error, Result};

pub const SYNTHETIC_TASK: &str = "hateful";
/// Attribute slot (0 = gender) and code whose presence the label requires.
pub const PLANTED_ATTRIBUTE: usize = 0;
pub const PLANTED_CODE: u32 = 1;

const NOISE_NORM: f64 = 0.05;
const MIN_ABS_DOT: f64 = 1e-3;
const CAPTION_WORDS: [&str; 8] = ["red", "blue", "green", "cat", "dog", "tree", "sky", "car"];

/// Recomputes the planted label from stored globals and codes.
pub fn planted_label(sample: &EmbeddedSample) -> u32 {
    let dot: f64 = sample
        .image_global
        .iter()
        .zip(&sample.text_global)
        .map(|(&a, &b)| a as f64 * b as f64)
        .sum();
    let present = sample
        .external_codes
        .chunks(3)
        .any(|p| p[PLANTED_ATTRIBUTE] == PLANTED_CODE);
    u32::from(dot > 0.0 && present)
}

pub fn generate_synthetic(
    n: usize,
    d: usize,
    n_g: usize,
    n_x: usize,
    seed: u64,
) -> Result<DatasetManifest> {
    if n < 4 {
        return Err(Error::Input(format!("synthetic dataset needs n >= 4, got {n}")));
    }
    if d < 4 {
        return Err(Error::Input(format!("synthetic dataset needs d >= 4, got {d}")));
    }
    if n_g == 0 || n_x == 0 {
        return Err(Error::Input("need at least one patch and one text token".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let attr = DEFAULT_ATTRIBUTE_VOCAB_SIZES;

    let mut signs: Vec<bool> = (0..n).map(|i| i < n / 2).collect();
    signs.shuffle(&mut rng);

    let n_val = ((n as f64) * 0.15).round().max(1.0) as usize;
    let n_test = n_val;
    let n_train = n - n_val - n_test;

    let noise_sd = NOISE_NORM / (d as f64).sqrt();
    let mut samples = Vec::with_capacity(n);
    let mut captions = Vec::with_capacity(n);
    for (i, &positive) in signs.iter().enumerate() {
        let (z, w) = loop {
            let z = unit_vector(&mut rng, d);
            let mut w = unit_vector(&mut rng, d);
            let dot: f64 = z.iter().zip(&w).map(|(&a, &b)| a as f64 * b as f64).sum();
            if dot.abs() < MIN_ABS_DOT {
                continue;
            }
            if (dot > 0.0) != positive {
                w.iter_mut().for_each(|x| *x = -*x);
            }
            break (z, w);
        };
        let image_patches = (0..n_g).map(|_| noisy(&mut rng, &z, noise_sd)).collect();
        let text_tokens = (0..n_x).map(|_| noisy(&mut rng, &w, noise_sd)).collect();

        let persons = rng.gen_range(0..3usize);
        let mut codes = Vec::with_capacity(persons * 3);
        for _ in 0..persons {
            for &size in &attr {
                codes.push(rng.gen_range(0..size as u32));
            }
        }
        let scale = (d as f64).sqrt();
        let caption = z[..3]
            .iter()
            .map(|&c| {
                let t = ((c as f64 * scale).clamp(-2.0, 2.0) + 2.0) / 4.0;
                CAPTION_WORDS[((t * 8.0) as usize).min(7)]
            })
            .collect::<Vec<_>>()
            .join(" ");
        captions.push(caption);

        let split = if i < n_train {
            Split::Train
        } else if i < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
        let mut sample = EmbeddedSample {
            id: format!("syn-{i:06}"),
            split,
            image_global: z,
            image_patches,
            text_global: w,
            text_tokens,
            external_codes: codes,
            caption_ids: Vec::new(),
            labels: BTreeMap::new(),
        };
        let label = planted_label(&sample);
        sample
            .labels
            .insert(SYNTHETIC_TASK.to_string(), LabelValue::Index(label));
        samples.push(sample);
    }

    let caption_vocab = build_caption_vocab(&captions)?;
    for (s, c) in samples.iter_mut().zip(&captions) {
        s.caption_ids = caption_vocab.encode_caption(c);
    }
    let notes = BTreeMap::from([
        ("source".to_string(), "synthetic".to_string()),
        ("seed".to_string(), seed.to_string()),
    ]);
    Ok(DatasetManifest {
        schema_version: SCHEMA_VERSION,
        d_img: d,
        d_txt: d,
        attribute_vocab_sizes: attr,
        caption_vocab,
        notes,
        samples,
    })
}

fn unit_vector(rng: &mut ChaCha8Rng, d: usize) -> Vec<f32> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.iter().map(|x| (x / norm) as f32).collect();
        }
    }
}

fn noisy(rng: &mut ChaCha8Rng, base: &[f32], sd: f64) -> Vec<f32> {
    base.iter()
        .map(|&b| (b as f64 + sd * rng.sample::<f64, _>(StandardNormal)) as f32)
        .collect()
}
