//! Samples as precomputed embeddings, the manifest that stores them, caption
//! vocabularies, and a planted-rule synthetic generator.

mod manifest;
mod synthetic;
mod vocab;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use manifest::{read_manifest, write_manifest, SCHEMA_VERSION};
pub(crate) use manifest::exact_f32 as manifest_f32;
pub use synthetic::{generate_synthetic, planted_label, PLANTED_ATTRIBUTE, PLANTED_CODE, SYNTHETIC_TASK};
pub use vocab::{
    build_caption_vocab, build_vocab, normalize_text, Vocabulary, BOS, EOS, NUM_SPECIAL, PAD, UNK,
};

/// Gender, race and age category counts of the face-attribute model.
pub const DEFAULT_ATTRIBUTE_VOCAB_SIZES: [usize; 3] = [2, 7, 9];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Input(format!("unknown split `{other}`"))),
        }
    }
}

/// A label is either a single index (binary 0/1 or a class) or a multi-hot
/// vector; the head kind decides how it is read.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelValue {
    Index(u32),
    MultiHot(Vec<u8>),
}

/// One meme as precomputed embeddings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedSample {
    pub id: String,
    pub split: Split,
    #[serde(with = "manifest::exact_f32")]
    pub image_global: Vec<f32>,
    #[serde(with = "manifest::exact_f32_rows")]
    pub image_patches: Vec<Vec<f32>>,
    #[serde(with = "manifest::exact_f32")]
    pub text_global: Vec<f32>,
    #[serde(with = "manifest::exact_f32_rows")]
    pub text_tokens: Vec<Vec<f32>>,
    /// Flattened `(gender, race, age)` code triples, one per depicted person.
    pub external_codes: Vec<u32>,
    pub caption_ids: Vec<u32>,
    pub labels: BTreeMap<String, LabelValue>,
}

impl EmbeddedSample {
    pub fn num_patches(&self) -> usize {
        self.image_patches.len()
    }

    pub fn num_text_tokens(&self) -> usize {
        self.text_tokens.len()
    }

    pub fn num_persons(&self) -> usize {
        self.external_codes.len() / 3
    }

    /// Checks the sample against the dataset-level dimensions and vocabularies.
    pub fn validate(
        &self,
        d_img: usize,
        d_txt: usize,
        attribute_vocab_sizes: &[usize; 3],
        caption_vocab_len: usize,
    ) -> Result<()> {
        let fail = |reason: String| {
            Err(Error::Record {
                id: self.id.clone(),
                reason,
            })
        };
        if self.image_patches.is_empty() {
            return fail("no image patches".into());
        }
        if self.text_tokens.is_empty() {
            return fail("no text tokens".into());
        }
        if self.image_global.len() != d_img {
            return fail(format!("image_global has {} dims, expected {d_img}", self.image_global.len()));
        }
        if self.text_global.len() != d_txt {
            return fail(format!("text_global has {} dims, expected {d_txt}", self.text_global.len()));
        }
        if let Some(i) = self.image_patches.iter().position(|r| r.len() != d_img) {
            return fail(format!("image patch {i} has wrong dimensionality"));
        }
        if let Some(i) = self.text_tokens.iter().position(|r| r.len() != d_txt) {
            return fail(format!("text token {i} has wrong dimensionality"));
        }
        let all_finite = self
            .image_global
            .iter()
            .chain(&self.text_global)
            .chain(self.image_patches.iter().flatten())
            .chain(self.text_tokens.iter().flatten())
            .all(|x| x.is_finite());
        if !all_finite {
            return fail("non-finite embedding value".into());
        }
        if !self.external_codes.len().is_multiple_of(3) {
            return fail(format!(
                "{} external codes is not a multiple of 3",
                self.external_codes.len()
            ));
        }
        for (i, &code) in self.external_codes.iter().enumerate() {
            let size = attribute_vocab_sizes[i % 3];
            if code as usize >= size {
                return fail(format!(
                    "external code {code} at position {i} exceeds attribute vocabulary size {size}"
                ));
            }
        }
        if let Some(&id) = self.caption_ids.iter().find(|&&id| id as usize >= caption_vocab_len) {
            return fail(format!(
                "caption id {id} exceeds caption vocabulary size {caption_vocab_len}"
            ));
        }
        Ok(())
    }
}

/// A dataset of embedded samples plus the dimensions and vocabularies they
/// are encoded against.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub d_img: usize,
    pub d_txt: usize,
    pub attribute_vocab_sizes: [usize; 3],
    pub caption_vocab: Vocabulary,
    /// Free-form provenance, e.g. which encoder layer produced the embeddings.
    pub notes: BTreeMap<String, String>,
    pub samples: Vec<EmbeddedSample>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: self.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        if self.d_img == 0 || self.d_txt == 0 {
            return Err(Error::Input("embedding dimensions must be positive".into()));
        }
        if self.attribute_vocab_sizes.contains(&0) {
            return Err(Error::Input("attribute vocabulary sizes must be positive".into()));
        }
        let mut seen = HashSet::with_capacity(self.samples.len());
        for s in &self.samples {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Record {
                    id: s.id.clone(),
                    reason: "duplicate sample id".into(),
                });
            }
            s.validate(
                self.d_img,
                self.d_txt,
                &self.attribute_vocab_sizes,
                self.caption_vocab.len(),
            )?;
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> Vec<&EmbeddedSample> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }

    pub fn sample(&self, id: &str) -> Option<&EmbeddedSample> {
        self.samples.iter().find(|s| s.id == id)
    }

    /// Task names appearing in any sample's labels.
    pub fn task_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .samples
            .iter()
            .flat_map(|s| s.labels.keys().cloned())
            .collect();
        names.sort();
        names.dedup();
        names
    }
}
