//! Model file format.
//!
//! Line one is a JSON manifest:
//!
//! ```text
//! {"format":"fgprop-model","version":1,"layers":[
//!   {"id":0,"kind":"input","dim":196},
//!   {"id":1,"kind":"affine","inputs":[0],"rows":32,"cols":196},
//!   {"id":2,"kind":"relu","inputs":[1]},
//!   {"id":5,"kind":"add","inputs":[4,2]}, ...]}
//! ```
//!
//! followed by a little-endian `f32` blob holding, for every affine layer
//! in manifest order, its weight matrix row-major and then its bias.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Layer, LayerKind, Network};
use crate::error::{Error, Result};
use crate::format::{check_version, decode_f32, encode_f32, split_header};

pub const MODEL_FORMAT_VERSION: u32 = 1;
const MODEL_FORMAT: &str = "fgprop-model";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    layers: Vec<LayerEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum LayerEntry {
    Input { id: usize, dim: usize },
    Affine { id: usize, inputs: Vec<usize>, rows: usize, cols: usize },
    Relu { id: usize, inputs: Vec<usize> },
    Add { id: usize, inputs: Vec<usize> },
}

/// Serializes `net`. Weights are written as `f32`; networks produced by
/// initialization, training or loading hold `f32`-representable weights, so
/// for them the round trip is bit-exact.
pub fn write_model<W: Write>(net: &Network, mut out: W) -> Result<()> {
    let layers = net
        .layers()
        .iter()
        .map(|l| match &l.kind {
            LayerKind::Input { dim } => LayerEntry::Input { id: l.id, dim: *dim },
            LayerKind::Affine { weight, .. } => LayerEntry::Affine {
                id: l.id,
                inputs: l.inputs.clone(),
                rows: weight.nrows(),
                cols: weight.ncols(),
            },
            LayerKind::Relu => LayerEntry::Relu { id: l.id, inputs: l.inputs.clone() },
            LayerKind::Add => LayerEntry::Add { id: l.id, inputs: l.inputs.clone() },
        })
        .collect();
    let manifest = Manifest { format: MODEL_FORMAT.into(), version: MODEL_FORMAT_VERSION, layers };
    let mut bytes = serde_json::to_vec(&manifest)?;
    bytes.push(b'\n');
    for l in net.layers() {
        if let LayerKind::Affine { weight, bias } = &l.kind {
            // nalgebra is column-major; the blob is row-major.
            encode_f32(&mut bytes, weight.transpose().iter().copied());
            encode_f32(&mut bytes, bias.iter().copied());
        }
    }
    out.write_all(&bytes)?;
    Ok(())
}

pub fn read_model<R: Read>(mut input: R) -> Result<Network> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let (header, blob) = split_header(&bytes)?;
    let manifest: Manifest =
        serde_json::from_str(header).map_err(|e| Error::Format(format!("model manifest: {e}")))?;
    if manifest.format != MODEL_FORMAT {
        return Err(Error::Format(format!("expected a {MODEL_FORMAT} file, found `{}`", manifest.format)));
    }
    check_version(manifest.version, MODEL_FORMAT_VERSION)?;

    let count: usize = manifest
        .layers
        .iter()
        .map(|l| match l {
            LayerEntry::Affine { rows, cols, .. } => rows * cols + rows,
            _ => 0,
        })
        .sum();
    let values = decode_f32(blob, count)?;
    let mut cursor = values.into_iter();
    let layers = manifest
        .layers
        .into_iter()
        .map(|entry| match entry {
            LayerEntry::Input { id, dim } => Layer { id, kind: LayerKind::Input { dim }, inputs: vec![] },
            LayerEntry::Affine { id, inputs, rows, cols } => {
                let w: Vec<f64> = cursor.by_ref().take(rows * cols).collect();
                let b: Vec<f64> = cursor.by_ref().take(rows).collect();
                Layer {
                    id,
                    kind: LayerKind::Affine {
                        weight: DMatrix::from_row_slice(rows, cols, &w),
                        bias: DVector::from_vec(b),
                    },
                    inputs,
                }
            }
            LayerEntry::Relu { id, inputs } => Layer { id, kind: LayerKind::Relu, inputs },
            LayerEntry::Add { id, inputs } => Layer { id, kind: LayerKind::Add, inputs },
        })
        .collect();
    Network::new(layers).map_err(|e| Error::Consistency(format!("model graph: {e}")))
}

pub fn save_model(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    write_model(net, std::fs::File::create(path)?)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Network> {
    read_model(std::fs::File::open(path)?)
}
