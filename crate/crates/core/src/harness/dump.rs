//! Adversarial example dumps: raw little-endian f32 plus a JSON sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AeDump {
    /// Shape of one example.
    pub shape: Vec<usize>,
    /// Model the examples were crafted on.
    pub victim: String,
    /// Position of each example in the evaluation set.
    pub indices: Vec<usize>,
    pub labels: Vec<usize>,
    /// Name of the raw data file next to the sidecar.
    pub data_file: String,
}

pub(crate) fn write_ae_dump(
    dir: &Path,
    name: &str,
    victim: &str,
    labels: &[usize],
    aes: &[Tensor],
) -> Result<PathBuf, HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let data_file = format!("{name}.f32");
    let mut bytes = Vec::with_capacity(aes.iter().map(Tensor::len).sum::<usize>() * 4);
    for t in aes {
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let data_path = dir.join(&data_file);
    fs::write(&data_path, bytes).map_err(|e| HarnessError::io(&data_path, e))?;
    let meta = AeDump {
        shape: aes.first().map_or_else(Vec::new, |t| t.dims().to_vec()),
        victim: victim.to_string(),
        indices: (0..aes.len()).collect(),
        labels: labels.to_vec(),
        data_file,
    };
    let path = dir.join(format!("{name}.json"));
    fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|e| HarnessError::io(&path, e))?;
    Ok(path)
}

/// Reads a dump through its sidecar.
pub fn read_ae_dump(sidecar: impl AsRef<Path>) -> Result<(AeDump, Vec<Tensor>), HarnessError> {
    let sidecar = sidecar.as_ref();
    let text = fs::read_to_string(sidecar).map_err(|e| HarnessError::io(sidecar, e))?;
    let meta: AeDump = serde_json::from_str(&text)?;
    let data_path = sidecar.with_file_name(&meta.data_file);
    let bytes = fs::read(&data_path).map_err(|e| HarnessError::io(&data_path, e))?;
    let per: usize = meta.shape.iter().product();
    if bytes.len() != per * 4 * meta.indices.len() {
        return Err(HarnessError::Invalid(format!("{} has the wrong length", data_path.display())));
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let aes = values
        .chunks_exact(per.max(1))
        .take(meta.indices.len())
        .map(|c| Tensor::new(meta.shape.clone(), c.to_vec()).map_err(|e| HarnessError::Invalid(e.to_string())))
        .collect::<Result<_, _>>()?;
    Ok((meta, aes))
}
