//! In-memory samples and the on-disk dataset format.
//!
//! A dataset file is a one-line JSON manifest
//! `{"format":"fgprop-dataset","version":1,"samples":N,"input_dim":I,"target_dim":T}`
//! (optionally with `"image_shape":[h,w]`) followed by `N·(I+T)` little-endian
//! `f32` values, row-major: each sample's input then its target.

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{check_version, decode_f32, encode_f32, split_header};

pub const DATASET_FORMAT_VERSION: u32 = 1;
const DATASET_FORMAT: &str = "fgprop-dataset";

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionSample {
    pub input: DVector<f64>,
    pub target: DVector<f64>,
}

impl RegressionSample {
    pub fn new(input: Vec<f64>, target: Vec<f64>) -> Self {
        Self {
            input: DVector::from_vec(input),
            target: DVector::from_vec(target),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<RegressionSample>,
    pub input_dim: usize,
    pub target_dim: usize,
    /// Height and width when inputs are row-major images.
    pub image_shape: Option<(usize, usize)>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    samples: usize,
    input_dim: usize,
    target_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image_shape: Option<(usize, usize)>,
}

impl Dataset {
    pub fn new(samples: Vec<RegressionSample>, image_shape: Option<(usize, usize)>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Config("dataset has no samples".into()))?;
        let (input_dim, target_dim) = (first.input.len(), first.target.len());
        for s in &samples {
            if s.input.len() != input_dim {
                return Err(Error::Shape { expected: input_dim, got: s.input.len() });
            }
            if s.target.len() != target_dim {
                return Err(Error::Shape { expected: target_dim, got: s.target.len() });
            }
        }
        if let Some((h, w)) = image_shape {
            if h * w != input_dim {
                return Err(Error::Config(format!("image shape {h}x{w} does not match input dim {input_dim}")));
            }
        }
        Ok(Self { samples, input_dim, target_dim, image_shape })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Image shape, falling back to a square when the input length is one.
    pub fn image_shape_or_square(&self) -> Option<(usize, usize)> {
        self.image_shape.or_else(|| {
            let side = (self.input_dim as f64).sqrt().round() as usize;
            (side * side == self.input_dim).then_some((side, side))
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = Manifest {
            format: DATASET_FORMAT.into(),
            version: DATASET_FORMAT_VERSION,
            samples: self.samples.len(),
            input_dim: self.input_dim,
            target_dim: self.target_dim,
            image_shape: self.image_shape,
        };
        let mut out = serde_json::to_vec(&manifest).expect("manifest serializes");
        out.push(b'\n');
        for s in &self.samples {
            encode_f32(&mut out, s.input.iter().copied());
            encode_f32(&mut out, s.target.iter().copied());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, blob) = split_header(bytes)?;
        let m: Manifest = serde_json::from_str(header).map_err(|e| Error::Format(format!("dataset manifest: {e}")))?;
        if m.format != DATASET_FORMAT {
            return Err(Error::Format(format!("expected a {DATASET_FORMAT} file, found `{}`", m.format)));
        }
        check_version(m.version, DATASET_FORMAT_VERSION)?;
        let row = m.input_dim + m.target_dim;
        let values = decode_f32(blob, m.samples * row)?;
        let samples = values
            .chunks_exact(row.max(1))
            .take(m.samples)
            .map(|c| RegressionSample::new(c[..m.input_dim].to_vec(), c[m.input_dim..].to_vec()))
            .collect();
        Dataset::new(samples, m.image_shape)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Dataset {
        Dataset::new(
            vec![
                RegressionSample::new(vec![0.5, -1.25, 3.0, 0.0], vec![1.0]),
                RegressionSample::new(vec![0.25, 2.0, -0.5, 1.0], vec![0.0]),
            ],
            Some((2, 2)),
        )
        .unwrap()
    }

    #[test]
    fn round_trip() {
        let d = small();
        assert_eq!(Dataset::from_bytes(&d.to_bytes()).unwrap(), d);
    }

    #[test]
    fn truncated_and_oversized_blobs() {
        let bytes = small().to_bytes();
        assert!(matches!(Dataset::from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Truncated { .. })));
        let mut longer = bytes.clone();
        longer.extend_from_slice(&[0; 4]);
        assert!(matches!(Dataset::from_bytes(&longer), Err(Error::Consistency(_))));
    }

    #[test]
    fn version_mismatch() {
        let bytes = small().to_bytes();
        let text = String::from_utf8_lossy(&bytes).replace("\"version\":1", "\"version\":7");
        assert!(matches!(Dataset::from_bytes(text.as_bytes()), Err(Error::Version { found: 7, .. })));
    }
}
