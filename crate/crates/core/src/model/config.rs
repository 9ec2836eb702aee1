use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetManifest, DEFAULT_ATTRIBUTE_VOCAB_SIZES, SYNTHETIC_TASK};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum HeadKind {
    /// One sigmoid unit.
    Binary,
    /// `classes`-way softmax.
    Multiclass { classes: usize },
    /// `classes` independent sigmoids.
    Multilabel { classes: usize },
}

impl HeadKind {
    pub fn units(&self) -> usize {
        match *self {
            HeadKind::Binary => 1,
            HeadKind::Multiclass { classes } | HeadKind::Multilabel { classes } => classes,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: HeadKind,
}

impl HeadSpec {
    pub fn binary(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: HeadKind::Binary,
        }
    }
}

/// Components removed for an ablation run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablations {
    pub no_external: bool,
    pub no_caption: bool,
    pub no_stage1: bool,
    pub no_stage2: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    /// Input widths, normally taken from the manifest.
    pub d_img: usize,
    pub d_txt: usize,
    pub n_heads: usize,
    pub ff_dim: usize,
    pub n_layers: usize,
    pub decoder_dim: usize,
    pub decoder_heads: usize,
    pub decoder_ff: usize,
    pub decoder_layers: usize,
    /// Weight of the caption loss.
    pub alpha: f64,
    pub heads: Vec<HeadSpec>,
    pub ablations: Ablations,
    pub dropout: f64,
    pub max_positions: usize,
    pub seed: u64,
    pub attribute_vocab_sizes: [usize; 3],
    pub caption_vocab_size: usize,
    pub caption_max_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            d_img: 16,
            d_txt: 16,
            n_heads: 4,
            ff_dim: 64,
            n_layers: 1,
            decoder_dim: 16,
            decoder_heads: 2,
            decoder_ff: 32,
            decoder_layers: 1,
            alpha: 0.2,
            heads: vec![HeadSpec::binary(SYNTHETIC_TASK)],
            ablations: Ablations::default(),
            dropout: 0.1,
            max_positions: 64,
            seed: 0,
            attribute_vocab_sizes: DEFAULT_ATTRIBUTE_VOCAB_SIZES,
            caption_vocab_size: 12,
            caption_max_len: 5,
        }
    }
}

/// Encoder shapes from the hyperparameter grid: `(heads, ff_dim, layers)`.
pub const ENCODER_PRESETS: [(usize, usize, usize); 2] = [(4, 512, 1), (16, 2048, 3)];
/// Decoder shapes from the hyperparameter grid: `(dim, heads, ff_dim, layers)`.
pub const DECODER_PRESETS: [(usize, usize, usize, usize); 2] = [(64, 4, 64, 1), (256, 16, 256, 3)];

impl ModelConfig {
    /// Copies input widths and vocabulary sizes from a manifest.
    pub fn fit_to(&mut self, manifest: &DatasetManifest) {
        self.d_img = manifest.d_img;
        self.d_txt = manifest.d_txt;
        self.attribute_vocab_sizes = manifest.attribute_vocab_sizes;
        self.caption_vocab_size = manifest.caption_vocab.len();
        self.caption_max_len = manifest.caption_vocab.max_len();
    }

    pub fn with_ablations(mut self, ablations: Ablations) -> Self {
        self.ablations = ablations;
        self.normalized()
    }

    /// Forces `alpha = 0` when caption supervision is ablated.
    pub fn normalized(mut self) -> Self {
        if self.ablations.no_caption {
            self.alpha = 0.0;
        }
        self
    }

    /// Caption-loss weight actually applied.
    pub fn effective_alpha(&self) -> f64 {
        if self.ablations.no_caption {
            0.0
        } else {
            self.alpha
        }
    }

    pub fn set_encoder_preset(&mut self, (heads, ff, layers): (usize, usize, usize)) {
        self.n_heads = heads;
        self.ff_dim = ff;
        self.n_layers = layers;
    }

    pub fn set_decoder_preset(&mut self, (dim, heads, ff, layers): (usize, usize, usize, usize)) {
        self.decoder_dim = dim;
        self.decoder_heads = heads;
        self.decoder_ff = ff;
        self.decoder_layers = layers;
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let positive = [
            ("d_model", self.d_model),
            ("d_img", self.d_img),
            ("d_txt", self.d_txt),
            ("n_heads", self.n_heads),
            ("ff_dim", self.ff_dim),
            ("max_positions", self.max_positions),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return bad(format!("{name} must be positive"));
        }
        if !self.ablations.no_stage2 && self.n_layers == 0 {
            return bad("n_layers must be positive unless stage 2 is ablated".into());
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if !self.ablations.no_caption {
            let dec = [
                ("decoder_dim", self.decoder_dim),
                ("decoder_heads", self.decoder_heads),
                ("decoder_ff", self.decoder_ff),
                ("decoder_layers", self.decoder_layers),
            ];
            if let Some((name, _)) = dec.iter().find(|(_, v)| *v == 0) {
                return bad(format!("{name} must be positive"));
            }
            if !self.decoder_dim.is_multiple_of(self.decoder_heads) {
                return bad(format!(
                    "decoder_dim {} not divisible by decoder_heads {}",
                    self.decoder_dim, self.decoder_heads
                ));
            }
            if self.caption_vocab_size <= crate::dataset::NUM_SPECIAL as usize {
                return bad("caption vocabulary has no words".into());
            }
            if self.caption_max_len < 2 {
                return bad("caption_max_len must cover BOS and EOS".into());
            }
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return bad(format!("alpha must be a non-negative real, got {}", self.alpha));
        }
        if self.ablations.no_caption && self.alpha != 0.0 {
            return bad("alpha must be 0 when caption supervision is ablated".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.attribute_vocab_sizes.contains(&0) {
            return bad("attribute vocabulary sizes must be positive".into());
        }
        if self.heads.is_empty() {
            return bad("at least one classification head is required".into());
        }
        for (i, h) in self.heads.iter().enumerate() {
            if self.heads[..i].iter().any(|o| o.name == h.name) {
                return bad(format!("duplicate head `{}`", h.name));
            }
            match h.kind {
                HeadKind::Binary => {}
                HeadKind::Multiclass { classes } | HeadKind::Multilabel { classes } => {
                    if classes < 2 {
                        return bad(format!("head `{}` needs at least 2 classes", h.name));
                    }
                }
            }
        }
        Ok(())
    }
}
