//! Line-delimited JSON manifest.
//!
//! Line 1 is the header (`schema_version`, `d_img`, `d_txt`,
//! `attribute_vocab_sizes`, `caption_vocab`, optional `notes`); every further
//! line is one sample. Reals are written in the shortest decimal form that
//! parses back to the same `f32` and are read with a direct `f32` parse, so
//! payloads round-trip bit for bit.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DatasetManifest, EmbeddedSample, Vocabulary};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    schema_version: u32,
    d_img: usize,
    d_txt: usize,
    attribute_vocab_sizes: [usize; 3],
    caption_vocab: Vocabulary,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    notes: BTreeMap<String, String>,
}

#[derive(Deserialize)]
struct VersionProbe {
    schema_version: u32,
}

#[derive(Deserialize)]
struct IdProbe {
    id: String,
}

/// Validates, then writes through a temporary file renamed into place.
pub fn write_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    manifest.validate()?;
    crate::io::atomic_write(path.as_ref(), &manifest.to_bytes())
}

impl DatasetManifest {
    /// The exact bytes [`write_manifest`] produces.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        write_to(self, &mut buf).expect("writing to memory");
        buf
    }

    /// SHA-256 of the serialized manifest, hex encoded.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

fn write_to(m: &DatasetManifest, w: &mut impl Write) -> std::io::Result<()> {
    let header = Header {
        schema_version: m.schema_version,
        d_img: m.d_img,
        d_txt: m.d_txt,
        attribute_vocab_sizes: m.attribute_vocab_sizes,
        caption_vocab: m.caption_vocab.clone(),
        notes: m.notes.clone(),
    };
    serde_json::to_writer(&mut *w, &header)?;
    w.write_all(b"\n")?;
    for s in &m.samples {
        serde_json::to_writer(&mut *w, s)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::Input(format!("{}: empty manifest", path.display())))?
        .map_err(|e| Error::io(path, e))?;
    let probe: VersionProbe = serde_json::from_str(&header_line)?;
    if probe.schema_version != SCHEMA_VERSION {
        return Err(Error::SchemaVersion {
            found: probe.schema_version,
            expected: SCHEMA_VERSION,
        });
    }
    let header: Header = serde_json::from_str(&header_line)?;
    let mut samples = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: EmbeddedSample = serde_json::from_str(&line).map_err(|e| {
            let id = serde_json::from_str::<IdProbe>(&line)
                .map(|p| p.id)
                .unwrap_or_else(|_| format!("line {}", n + 2));
            Error::Record {
                id,
                reason: e.to_string(),
            }
        })?;
        samples.push(sample);
    }
    let manifest = DatasetManifest {
        schema_version: header.schema_version,
        d_img: header.d_img,
        d_txt: header.d_txt,
        attribute_vocab_sizes: header.attribute_vocab_sizes,
        caption_vocab: header.caption_vocab,
        notes: header.notes,
        samples,
    };
    manifest.validate()?;
    Ok(manifest)
}

fn parse_f32_array<E: serde::de::Error>(raw: &str) -> std::result::Result<Vec<f32>, E> {
    let inner = raw
        .trim()
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| E::custom("expected an array of reals"))?
        .trim();
    if inner.is_empty() {
        return Ok(Vec::new());
    }
    inner
        .split(',')
        .map(|tok| {
            tok.trim()
                .parse::<f32>()
                .map_err(|_| E::custom(format!("invalid real `{}`", tok.trim())))
        })
        .collect()
}

pub(crate) mod exact_f32 {
    use serde::{Deserialize, Deserializer, Serializer};
    use serde_json::value::RawValue;

    pub fn serialize<S: Serializer>(v: &[f32], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f32>, D::Error> {
        let raw = Box::<RawValue>::deserialize(d)?;
        super::parse_f32_array(raw.get())
    }
}

pub(crate) mod exact_f32_rows {
    use serde::{Deserialize, Deserializer, Serializer};
    use serde_json::value::RawValue;

    pub fn serialize<S: Serializer>(v: &[Vec<f32>], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<f32>>, D::Error> {
        let rows = Vec::<Box<RawValue>>::deserialize(d)?;
        rows.iter().map(|r| super::parse_f32_array(r.get())).collect()
    }
}
