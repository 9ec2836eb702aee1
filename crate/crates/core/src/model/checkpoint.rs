//! Versioned checkpoint file.
//!
//! Line 1: `{"format":"memefier-checkpoint","version":1,"config":{..}}`.
//! Then one line per parameter tensor in layout order:
//! `{"name":..,"rows":..,"cols":..,"data":[..]}` with row-major `f32` data
//! in shortest round-trip decimal form.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MemeFier, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const CHECKPOINT_VERSION: u32 = 1;
const FORMAT: &str = "memefier-checkpoint";

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    config: ModelConfig,
}

#[derive(Serialize, Deserialize)]
struct TensorLine {
    name: String,
    rows: usize,
    cols: usize,
    #[serde(with = "crate::dataset::manifest_f32")]
    data: Vec<f32>,
}

pub fn write_checkpoint(model: &MemeFier<f32>, w: &mut impl Write) -> Result<()> {
    let header = Header {
        format: FORMAT.into(),
        version: CHECKPOINT_VERSION,
        config: model.config().clone(),
    };
    serde_json::to_writer(&mut *w, &header)?;
    w.write_all(b"\n").map_err(|e| Error::io("<checkpoint>", e))?;
    for (spec, m) in model.param_specs().iter().zip(model.params()) {
        let line = TensorLine {
            name: spec.name.clone(),
            rows: m.rows(),
            cols: m.cols(),
            data: m.data().to_vec(),
        };
        serde_json::to_writer(&mut *w, &line)?;
        w.write_all(b"\n").map_err(|e| Error::io("<checkpoint>", e))?;
    }
    Ok(())
}

pub fn read_checkpoint(r: impl BufRead) -> Result<MemeFier<f32>> {
    let mut lines = r.lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::Input("empty checkpoint".into()))?
        .map_err(|e| Error::io("<checkpoint>", e))?;
    let probe: serde_json::Value = serde_json::from_str(&first)?;
    if probe.get("format").and_then(|f| f.as_str()) != Some(FORMAT) {
        return Err(Error::Input("not a checkpoint file".into()));
    }
    let version = probe.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let header: Header = serde_json::from_str(&first)?;
    let mut tensors = Vec::new();
    for line in lines {
        let line = line.map_err(|e| Error::io("<checkpoint>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let t: TensorLine = serde_json::from_str(&line)?;
        if t.data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Input(format!("tensor `{}` has non-finite values", t.name)));
        }
        let m = Matrix::from_vec(t.rows, t.cols, t.data)?;
        tensors.push((t.name, m));
    }
    MemeFier::from_parts(header.config, tensors)
}

/// Writes through a temporary file and renames it into place.
pub fn save_checkpoint(model: &MemeFier<f32>, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(model, &mut buf)?;
    crate::io::atomic_write(path.as_ref(), &buf)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<MemeFier<f32>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let model = MemeFier::<f32>::new(ModelConfig::default()).unwrap();
        let mut a = Vec::new();
        write_checkpoint(&model, &mut a).unwrap();
        let back = read_checkpoint(a.as_slice()).unwrap();
        assert_eq!(back.config(), model.config());
        assert_eq!(back.params(), model.params());
        let mut b = Vec::new();
        write_checkpoint(&back, &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn version_mismatch_rejected() {
        let text = "{\"format\":\"memefier-checkpoint\",\"version\":7,\"config\":{}}\n";
        assert!(matches!(
            read_checkpoint(text.as_bytes()),
            Err(Error::CheckpointVersion { found: 7, .. })
        ));
    }

    #[test]
    fn wrong_tensor_rejected() {
        let model = MemeFier::<f32>::new(ModelConfig::default()).unwrap();
        let mut a = Vec::new();
        write_checkpoint(&model, &mut a).unwrap();
        let text = String::from_utf8(a).unwrap();
        let truncated: Vec<&str> = text.lines().take(3).collect();
        assert!(read_checkpoint(truncated.join("\n").as_bytes()).is_err());
    }
}
