//! Labelled sample sets and the `data.bin` / `labels.bin` container.

use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"CFDS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    TrainCalib,
    #[default]
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Tensor,
    labels: Vec<u32>,
    num_classes: usize,
    pub split: Split,
}

impl Dataset {
    /// `inputs` has shape `(N, ...)` with one sample per leading index.
    pub fn new(inputs: Tensor, labels: Vec<u32>, num_classes: usize, split: Split) -> Result<Self> {
        let n = inputs.shape().first().copied().unwrap_or(0);
        if n != labels.len() {
            return Err(Error::Shape(format!(
                "{} samples but {} labels",
                n,
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        Ok(Dataset {
            inputs,
            labels,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let d: usize = self.sample_shape().iter().product();
        &self.inputs.data()[i * d..(i + 1) * d]
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let d: usize = self.sample_shape().iter().product();
        let mut data = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.sample(i));
            labels.push(self.labels[i]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(self.sample_shape());
        Dataset {
            inputs: Tensor::new(shape, data).expect("subset shape"),
            labels,
            num_classes: self.num_classes,
            split: self.split,
        }
    }

    /// Seed-deterministic random subset holding `ceil(fraction * len)`
    /// samples, kept in original order.
    pub fn sample_fraction(&self, fraction: f64, seed: u64) -> Result<Dataset> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "fraction {fraction} outside (0, 1]"
            )));
        }
        let k = ((self.len() as f64 * fraction).ceil() as usize).clamp(1, self.len().max(1));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = sample(&mut rng, self.len(), k).into_vec();
        idx.sort_unstable();
        Ok(self.subset(&idx))
    }

    /// First `n` samples.
    pub fn head(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }
}

pub fn save_dataset(data: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let shape = data.inputs.shape();
    let mut bytes = Vec::with_capacity(12 + 4 * shape.len() + 4 * data.inputs.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(data.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&((shape.len() - 1) as u32).to_le_bytes());
    for &d in &shape[1..] {
        bytes.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in data.inputs.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(dir.join("data.bin"), bytes)?;
    let labels: Vec<u8> = data.labels.iter().flat_map(|l| l.to_le_bytes()).collect();
    fs::write(dir.join("labels.bin"), labels)?;
    Ok(())
}

fn read_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::format(path, "truncated header"))
}

/// Loads a dataset directory. The class count is inferred as `max label + 1`
/// unless given.
pub fn load_dataset(dir: impl AsRef<Path>, num_classes: Option<usize>, split: Split) -> Result<Dataset> {
    let dir = dir.as_ref();
    let data_path = dir.join("data.bin");
    let bytes = fs::read(&data_path)?;
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::format(&data_path, "bad magic"));
    }
    let count = read_u32(&bytes, 4, &data_path)? as usize;
    let rank = read_u32(&bytes, 8, &data_path)? as usize;
    let mut shape = vec![count];
    for r in 0..rank {
        shape.push(read_u32(&bytes, 12 + 4 * r, &data_path)? as usize);
    }
    let start = 12 + 4 * rank;
    let n: usize = shape.iter().product();
    let payload = &bytes[start..];
    if payload.len() != 4 * n {
        return Err(Error::format(
            &data_path,
            format!("expected {} float bytes, found {}", 4 * n, payload.len()),
        ));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let labels_path = dir.join("labels.bin");
    let lb = fs::read(&labels_path)?;
    if lb.len() != 4 * count {
        return Err(Error::format(
            &labels_path,
            format!("expected {} labels, found {} bytes", count, lb.len()),
        ));
    }
    let labels: Vec<u32> = lb
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let classes = num_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |&m| m as usize + 1));
    Dataset::new(Tensor::new(shape, values)?, labels, classes, split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Dataset {
        let inputs = Tensor::from_fn(vec![10, 1, 2, 2], |i| i as f32 * 0.5);
        Dataset::new(inputs, (0..10).map(|i| i % 3).collect(), 3, Split::Validation).unwrap()
    }

    #[test]
    fn labels_out_of_range_rejected() {
        let inputs = Tensor::zeros(vec![2, 1]);
        assert!(Dataset::new(inputs, vec![0, 5], 3, Split::Test).is_err());
    }

    #[test]
    fn fraction_is_seed_deterministic() {
        let d = toy();
        let a = d.sample_fraction(0.3, 7).unwrap();
        let b = d.sample_fraction(0.3, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
    }

    #[test]
    fn container_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = toy();
        save_dataset(&d, dir.path()).unwrap();
        let back = load_dataset(dir.path(), Some(3), Split::Validation).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&toy(), dir.path()).unwrap();
        let p = dir.path().join("data.bin");
        let mut bytes = fs::read(&p).unwrap();
        bytes.truncate(bytes.len() - 3);
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(
            load_dataset(dir.path(), None, Split::Test),
            Err(Error::Format { .. })
        ));
        bytes[0] = b'X';
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(
            load_dataset(dir.path(), None, Split::Test),
            Err(Error::Format { .. })
        ));
    }
}
