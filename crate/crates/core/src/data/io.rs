//! Binary dataset files.
//!
//! Layout: one JSON header line terminated by `\n`, then a binary blob. The
//! blob holds every split in order (train, validation, test), each as its
//! little-endian `f64` input rows followed by its little-endian `u32` labels.
//! The header's `checksum` is the SHA-256 of the blob.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::dataset::{LabeledDataset, SplitDataset};
use crate::data::mixture::GaussianMixtureSpec;
use crate::error::{Error, Result};

pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub version: u32,
    #[serde(rename = "C")]
    pub num_classes: usize,
    pub d: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub sigma: Option<f64>,
    pub delta_mu: Option<f64>,
    pub seed: Option<u64>,
    pub split_sizes: Vec<usize>,
    pub checksum: String,
    /// Class means, so the Bayes posterior can be rebuilt from the file alone.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub means: Option<Vec<f64>>,
}

impl DatasetHeader {
    pub fn mixture(&self) -> Option<GaussianMixtureSpec> {
        Some(GaussianMixtureSpec {
            num_classes: self.num_classes,
            dim: self.d,
            means: self.means.clone()?,
            sigma: self.sigma?,
            delta_mu: self.delta_mu?,
            seed: self.seed?,
        })
    }
}

/// What a dataset file holds: one dataset or a three-way split.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredData {
    Single(LabeledDataset),
    Split(SplitDataset),
}

impl StoredData {
    fn parts(&self) -> Vec<&LabeledDataset> {
        match self {
            StoredData::Single(ds) => vec![ds],
            StoredData::Split(s) => s.parts().to_vec(),
        }
    }
}

fn blob(parts: &[&LabeledDataset]) -> Vec<u8> {
    let mut out = Vec::new();
    for p in parts {
        for v in p.inputs() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &y in p.labels() {
            out.extend_from_slice(&(y as u32).to_le_bytes());
        }
    }
    out
}

pub fn save_dataset(path: &Path, data: &StoredData, mixture: Option<&GaussianMixtureSpec>) -> Result<()> {
    let parts = data.parts();
    let first = parts[0];
    let body = blob(&parts);
    let header = DatasetHeader {
        version: DATASET_VERSION,
        num_classes: first.num_classes(),
        d: first.dim(),
        n: parts.iter().map(|p| p.len()).sum(),
        sigma: mixture.map(|m| m.sigma),
        delta_mu: mixture.map(|m| m.delta_mu),
        seed: mixture.map(|m| m.seed),
        split_sizes: parts.iter().map(|p| p.len()).collect(),
        checksum: hex::encode(Sha256::digest(&body)),
        means: mixture.map(|m| m.means.clone()),
    };
    let mut bytes = serde_json::to_vec(&header)?;
    bytes.push(b'\n');
    bytes.extend_from_slice(&body);
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<(DatasetHeader, StoredData)> {
    let bytes = fs::read(path)?;
    let format = |reason: &str| Error::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| format("missing header section"))?;
    let value: serde_json::Value =
        serde_json::from_slice(&bytes[..newline]).map_err(|e| format(&format!("header: {e}")))?;
    let version = value
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| format("header: missing version"))?;
    if version != DATASET_VERSION as u64 {
        return Err(Error::Version {
            path: path.to_path_buf(),
            found: version as u32,
            expected: DATASET_VERSION,
        });
    }
    let header: DatasetHeader =
        serde_json::from_value(value).map_err(|e| format(&format!("header: {e}")))?;
    if header.split_sizes.iter().sum::<usize>() != header.n
        || !(header.split_sizes.len() == 1 || header.split_sizes.len() == 3)
    {
        return Err(format("header: split sizes disagree with N"));
    }

    let body = &bytes[newline + 1..];
    let mut offset = 0;
    let mut raw = Vec::with_capacity(header.split_sizes.len());
    for (i, &rows) in header.split_sizes.iter().enumerate() {
        let input_bytes = rows * header.d * 8;
        if body.len() < offset + input_bytes {
            return Err(format(&format!("missing input rows section of split {i}")));
        }
        let inputs: Vec<f64> = body[offset..offset + input_bytes]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        offset += input_bytes;
        let label_bytes = rows * 4;
        if body.len() < offset + label_bytes {
            return Err(format(&format!("missing labels section of split {i}")));
        }
        let labels: Vec<usize> = body[offset..offset + label_bytes]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        offset += label_bytes;
        raw.push((inputs, labels));
    }
    if offset != body.len() {
        return Err(format("trailing bytes after the labels section"));
    }
    if hex::encode(Sha256::digest(body)) != header.checksum {
        return Err(Error::Checksum {
            path: path.to_path_buf(),
        });
    }
    let mut parts = raw
        .into_iter()
        .map(|(inputs, labels)| {
            LabeledDataset::new(inputs, labels, header.d, header.num_classes)
                .map_err(|e| format(&e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let data = if parts.len() == 1 {
        StoredData::Single(parts.pop().unwrap())
    } else {
        let test = parts.pop().unwrap();
        let validation = parts.pop().unwrap();
        let train = parts.pop().unwrap();
        StoredData::Split(SplitDataset {
            train,
            validation,
            test,
        })
    };
    Ok((header, data))
}
