// SPDX-License-Identifier: MIT OR Apache-2.0

//! Probe directories: `manifest.json` plus raw little-endian `f32` files
//! (`weights.f32` k×d and `biases.f32` k for linear probes, `W.f32` d×d and
//! `b.f32` d for LRE operators), with CRC-32 checksums in the manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{LinearProbe, LreOperator, TrainConfig};
use crate::dataset::{write_atomic, TokenSet, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::kernel::ProbeKind;
use crate::matrix::{f32s_to_le_bytes, le_bytes_to_f32s};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeManifest {
    pub format_version: u32,
    pub kind: ProbeKind,
    pub k: usize,
    pub d: usize,
    pub layer: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_set: Option<TokenSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<TrainConfig>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    pub file_checksums: BTreeMap<String, u32>,
}

fn write_dir(dir: &Path, mut manifest: ProbeManifest, files: Vec<(&str, Vec<u8>)>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, bytes) in &files {
        manifest
            .file_checksums
            .insert(name.to_string(), crc32fast::hash(bytes));
        write_atomic(&dir.join(name), bytes)?;
    }
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Manifest {
        path: dir.join("manifest.json"),
        message: e.to_string(),
    })?;
    text.push('\n');
    write_atomic(&dir.join("manifest.json"), text.as_bytes())
}

fn read_manifest(dir: &Path) -> Result<ProbeManifest> {
    let path = dir.join("manifest.json");
    if !path.is_file() {
        return Err(Error::MissingFile(path));
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Manifest {
        path,
        message: e.to_string(),
    })
}

fn read_f32s(dir: &Path, manifest: &ProbeManifest, name: &str, len: usize) -> Result<Vec<f32>> {
    let path = dir.join(name);
    if !path.is_file() {
        return Err(Error::MissingFile(path));
    }
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if bytes.len() != len * 4 {
        return Err(Error::Shape {
            file: name.to_string(),
            expected: len * 4,
            actual: bytes.len(),
        });
    }
    let expected = manifest.file_checksums.get(name).copied().unwrap_or(0);
    let actual = crc32fast::hash(&bytes);
    if expected != actual {
        return Err(Error::Checksum {
            file: name.to_string(),
            expected,
            actual,
        });
    }
    Ok(le_bytes_to_f32s(&bytes))
}

fn to_f32(values: &[f64]) -> Vec<f32> {
    values.iter().map(|&v| v as f32).collect()
}

/// Writes a linear probe; parameters are stored as `f32`.
pub fn save_probe(
    probe: &LinearProbe,
    kind: ProbeKind,
    config: Option<&TrainConfig>,
    dir: impl AsRef<Path>,
) -> Result<()> {
    let manifest = ProbeManifest {
        format_version: FORMAT_VERSION,
        kind,
        k: probe.k(),
        d: probe.dim,
        layer: probe.layer,
        token_set: Some(probe.token_set.clone()),
        config: config.cloned(),
        seed: config.map_or(0, |c| c.seed),
        beta: None,
        rank: None,
        file_checksums: BTreeMap::new(),
    };
    write_dir(
        dir.as_ref(),
        manifest,
        vec![
            ("weights.f32", f32s_to_le_bytes(&to_f32(&probe.weights))),
            ("biases.f32", f32s_to_le_bytes(&to_f32(&probe.biases))),
        ],
    )
}

pub fn load_probe(dir: impl AsRef<Path>) -> Result<(LinearProbe, ProbeManifest)> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    if manifest.kind == ProbeKind::Lre {
        return Err(Error::invalid("directory holds an LRE operator; use load_lre"));
    }
    let weights = read_f32s(dir, &manifest, "weights.f32", manifest.k * manifest.d)?;
    let biases = read_f32s(dir, &manifest, "biases.f32", manifest.k)?;
    let token_set = match &manifest.token_set {
        Some(t) => t.clone(),
        None => TokenSet::numbered(manifest.k)?,
    };
    let probe = LinearProbe::new(
        token_set,
        manifest.d,
        manifest.layer,
        weights.iter().map(|&v| f64::from(v)).collect(),
        biases.iter().map(|&v| f64::from(v)).collect(),
    )?;
    Ok((probe, manifest))
}

pub fn save_lre(op: &LreOperator, dir: impl AsRef<Path>) -> Result<()> {
    let d = op.dim();
    let w: Vec<f64> = (0..d)
        .flat_map(|r| (0..d).map(move |c| (r, c)))
        .map(|(r, c)| op.w[(r, c)])
        .collect();
    let manifest = ProbeManifest {
        format_version: FORMAT_VERSION,
        kind: ProbeKind::Lre,
        k: 0,
        d,
        layer: op.layer,
        token_set: None,
        config: None,
        seed: 0,
        beta: Some(op.beta),
        rank: Some(op.rank),
        file_checksums: BTreeMap::new(),
    };
    write_dir(
        dir.as_ref(),
        manifest,
        vec![
            ("W.f32", f32s_to_le_bytes(&to_f32(&w))),
            ("b.f32", f32s_to_le_bytes(&to_f32(&op.b))),
        ],
    )
}

pub fn load_lre(dir: impl AsRef<Path>) -> Result<LreOperator> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    if manifest.kind != ProbeKind::Lre {
        return Err(Error::invalid("directory does not hold an LRE operator"));
    }
    let d = manifest.d;
    let w = read_f32s(dir, &manifest, "W.f32", d * d)?;
    let b = read_f32s(dir, &manifest, "b.f32", d)?;
    Ok(LreOperator {
        w: DMatrix::from_row_iterator(d, d, w.iter().map(|&v| f64::from(v))),
        b: b.iter().map(|&v| f64::from(v)).collect(),
        beta: manifest.beta.unwrap_or(1.0),
        rank: manifest.rank.unwrap_or(d),
        layer: manifest.layer,
    })
}
