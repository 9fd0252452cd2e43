//! Directory container shared by models and agent checkpoints: a
//! `manifest.json` plus one raw little-endian `f32` blob per tensor, each
//! guarded by a CRC32.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlobRef {
    pub file: String,
    pub shape: Vec<usize>,
    pub crc32: u32,
}

pub fn write_blob(dir: &Path, file: &str, t: &Tensor) -> Result<BlobRef> {
    let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    let crc32 = crc32fast::hash(&bytes);
    fs::write(dir.join(file), &bytes)?;
    Ok(BlobRef {
        file: file.to_string(),
        shape: t.shape().to_vec(),
        crc32,
    })
}

pub fn read_blob(dir: &Path, blob: &BlobRef) -> Result<Tensor> {
    let path = dir.join(&blob.file);
    let bytes = fs::read(&path)?;
    let n: usize = blob.shape.iter().product();
    if bytes.len() != 4 * n {
        return Err(Error::format(
            &path,
            format!("truncated blob: expected {} bytes, found {}", 4 * n, bytes.len()),
        ));
    }
    let found = crc32fast::hash(&bytes);
    if found != blob.crc32 {
        return Err(Error::Checksum {
            blob: blob.file.clone(),
            expected: blob.crc32,
            found,
        });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(blob.shape.clone(), data)
}

/// Number of `.bin` files in `dir`.
pub fn count_blobs(dir: &Path) -> Result<usize> {
    let mut n = 0;
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        if p.extension().is_some_and(|e| e == "bin") {
            n += 1;
        }
    }
    Ok(n)
}

pub fn write_manifest<T: Serialize>(dir: &Path, manifest: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    fs::write(dir.join("manifest.json"), text)?;
    Ok(())
}

pub fn read_manifest<T: for<'de> Deserialize<'de>>(dir: &Path) -> Result<T> {
    let text = fs::read_to_string(dir.join("manifest.json"))?;
    Ok(serde_json::from_str(&text)?)
}
