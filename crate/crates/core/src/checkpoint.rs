//! Checkpoint serialization: hyperparameters plus every parameter tensor
//! as base64 little-endian f32, guarded by the ontology fingerprint.

use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Hyperparams, Init, ModelParams};
use crate::ontology::{byte_offset, Ontology};
use crate::tensor::Tensor;

const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    ontology_fingerprint: String,
    hyperparams: Hyperparams,
    params: Vec<ParamRecord>,
}

#[derive(Serialize, Deserialize)]
struct ParamRecord {
    name: String,
    shape: Vec<usize>,
    data: String,
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let records = params
        .store
        .iter()
        .map(|(name, tensor)| {
            let mut bytes = Vec::with_capacity(tensor.len() * 4);
            for v in tensor.values() {
                bytes.extend_from_slice(&(*v as f32).to_le_bytes());
            }
            ParamRecord {
                name: name.to_string(),
                shape: tensor.shape().to_vec(),
                data: B64.encode(bytes),
            }
        })
        .collect();
    let file = CheckpointFile {
        format_version: FORMAT_VERSION,
        ontology_fingerprint: params.ontology_fingerprint.clone(),
        hyperparams: params.hp.clone(),
        params: records,
    };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, serde_json::to_string(&file).expect("checkpoint serializes"))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path, ontology: &Ontology) -> Result<ModelParams> {
    let source = std::fs::read_to_string(path)?;
    let file: CheckpointFile = serde_json::from_str(&source)
        .map_err(|e| Error::parse(Some(path), byte_offset(&source, &e), e.to_string()))?;
    if file.format_version != FORMAT_VERSION {
        return Err(Error::FormatVersion(file.format_version));
    }
    if file.ontology_fingerprint != ontology.fingerprint() {
        return Err(Error::FingerprintMismatch {
            expected: ontology.fingerprint().to_string(),
            found: file.ontology_fingerprint,
        });
    }
    let mut params = ModelParams::new(ontology, file.hyperparams, Init::Zeros);
    for record in file.params {
        let idx = params.store.index_of(&record.name).ok_or_else(|| {
            Error::Validation(format!("checkpoint has unknown parameter {}", record.name))
        })?;
        let expected_shape = params.store.by_index(idx).shape().to_vec();
        if expected_shape != record.shape {
            return Err(Error::ShapeMismatch {
                op: format!("checkpoint parameter {}", record.name),
                expected: expected_shape,
                got: record.shape,
            });
        }
        let bytes = B64
            .decode(record.data.as_bytes())
            .map_err(|e| Error::parse(Some(path), None, format!("bad base64: {e}")))?;
        let n: usize = record.shape.iter().product();
        if bytes.len() != n * 4 {
            return Err(Error::parse(
                Some(path),
                None,
                format!(
                    "parameter {} has {} bytes, expected {}",
                    record.name,
                    bytes.len(),
                    n * 4
                ),
            ));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        *params.store.by_index_mut(idx) = Tensor::new(record.shape, values);
    }
    if !params.matches_ontology(ontology) {
        return Err(Error::Validation(
            "checkpoint shapes do not match the ontology".into(),
        ));
    }
    Ok(params)
}
