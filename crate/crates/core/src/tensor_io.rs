//! `TNS1` tensor files and parameter checkpoints.
//!
//! A `TNS1` record is a 16-byte header (`b"TNS1"`, u32 version, u32 C,
//! u32 N) followed by `C·N³` little-endian f32 values, channel-major with x
//! fastest. Convolution kernels fit the same layout: a `(C_out, C_in, k, k,
//! k)` weight is stored with `C = C_out·C_in` and `N = k`, a bias with
//! `C = C_out` and `N = 1`.
//!
//! A checkpoint directory holds `params.tns` (records concatenated in
//! manifest order) and `manifest.json` naming each record.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const TNS_MAGIC: &[u8; 4] = b"TNS1";
pub const TNS_VERSION: u32 = 1;
pub const TNS_HEADER_BYTES: usize = 16;

pub const PARAMS_FILE: &str = "params.tns";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn write_tns<W: Write>(mut w: W, channels: usize, n: usize, data: &[f32]) -> Result<()> {
    if data.len() != channels * n * n * n {
        return Err(Error::ShapeMismatch(format!(
            "{} values for a {channels}×{n}³ record",
            data.len()
        )));
    }
    let mut buf = Vec::with_capacity(TNS_HEADER_BYTES + 4 * data.len());
    buf.extend_from_slice(TNS_MAGIC);
    buf.extend_from_slice(&TNS_VERSION.to_le_bytes());
    buf.extend_from_slice(&(channels as u32).to_le_bytes());
    buf.extend_from_slice(&(n as u32).to_le_bytes());
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Read one record, returning `(C, N, values)`.
pub fn read_tns<R: Read>(mut r: R) -> Result<(usize, usize, Vec<f32>)> {
    let mut header = [0u8; TNS_HEADER_BYTES];
    r.read_exact(&mut header)
        .map_err(|e| Error::Format(format!("truncated TNS1 header: {e}")))?;
    if &header[0..4] != TNS_MAGIC {
        return Err(Error::Format("bad TNS1 magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().expect("4 bytes")) as usize;
    if word(4) != TNS_VERSION as usize {
        return Err(Error::Format(format!("unsupported TNS1 version {}", word(4))));
    }
    let (channels, n) = (word(8), word(12));
    let count = channels
        .checked_mul(n.pow(3))
        .ok_or_else(|| Error::Format("TNS1 size overflow".into()))?;
    let mut bytes = vec![0u8; 4 * count];
    r.read_exact(&mut bytes)
        .map_err(|e| Error::Format(format!("truncated TNS1 payload: {e}")))?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok((channels, n, data))
}

/// `(C, N)` under which a tensor of `shape` is stored.
pub fn tns_layout(shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [c] => Ok((*c, 1)),
        [co, ci, k, k2, k3] if k == k2 && k == k3 => Ok((co * ci, *k)),
        [c, d, h, w] if d == h && d == w => Ok((*c, *d)),
        _ => Err(Error::ShapeMismatch(format!("no TNS1 layout for shape {shape:?}"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset of the record header inside `params.tns`.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub code_version: String,
    pub config_hash: String,
    pub seed: u64,
    /// Free-form description of what the checkpoint holds.
    pub kind: String,
    /// Model hyperparameters needed to rebuild the parameter structure.
    pub model: serde_json::Value,
    pub tensors: Vec<ManifestEntry>,
}

/// Identification stamped into a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Stamp {
    pub config_hash: String,
    pub seed: u64,
}

pub fn save_checkpoint(
    dir: &Path,
    kind: &str,
    model: serde_json::Value,
    stamp: &Stamp,
    tensors: &[(&str, &Tensor<f32>)],
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut blob = Vec::new();
    let mut entries = Vec::with_capacity(tensors.len());
    for (name, t) in tensors {
        let (c, n) = tns_layout(&t.shape)?;
        entries.push(ManifestEntry {
            name: name.to_string(),
            shape: t.shape.clone(),
            offset: blob.len(),
        });
        write_tns(&mut blob, c, n, &t.data)?;
    }
    let manifest = Manifest {
        format: "geomem-checkpoint/1".into(),
        code_version: crate::CODE_VERSION.into(),
        config_hash: stamp.config_hash.clone(),
        seed: stamp.seed,
        kind: kind.into(),
        model,
        tensors: entries,
    };
    fs::write(dir.join(PARAMS_FILE), blob)?;
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    fs::write(dir.join(MANIFEST_FILE), json)?;
    Ok(())
}

/// Load a checkpoint, returning its manifest and named tensors in order.
pub fn load_checkpoint(dir: &Path) -> Result<(Manifest, Vec<(String, Tensor<f32>)>)> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(Error::Format(format!("missing checkpoint manifest {}", manifest_path.display())));
    }
    let manifest: Manifest = serde_json::from_slice(&fs::read(&manifest_path)?)?;
    let blob = fs::read(dir.join(PARAMS_FILE))?;
    let mut out = Vec::with_capacity(manifest.tensors.len());
    for entry in &manifest.tensors {
        let Some(bytes) = blob.get(entry.offset..) else {
            return Err(Error::Format(format!("tensor {} offset past end of file", entry.name)));
        };
        let (c, n, data) = read_tns(bytes)?;
        if tns_layout(&entry.shape)? != (c, n) {
            return Err(Error::Format(format!("tensor {} header disagrees with manifest", entry.name)));
        }
        out.push((entry.name.clone(), Tensor::from_vec(&entry.shape, data)?));
    }
    Ok((manifest, out))
}

/// Find a tensor by name in a loaded checkpoint.
pub fn take_named(tensors: &mut Vec<(String, Tensor<f32>)>, name: &str) -> Result<Tensor<f32>> {
    let pos = tensors
        .iter()
        .position(|(n, _)| n == name)
        .ok_or_else(|| Error::Format(format!("checkpoint has no tensor named {name}")))?;
    Ok(tensors.remove(pos).1)
}
