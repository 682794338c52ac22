// SPDX-License-Identifier: MIT OR Apache-2.0

//! Directory format.
//!
//! ```text
//! <root>/manifest.json            pretty-printed JSON, keys in fixed order
//! <root>/activations/layer_<l>.f32  N×d
//! <root>/joint/layer_<l>.f32        N×d (optional)
//! <root>/reference_probs.f32        N×k
//! <root>/unembedding.f32            k×d (optional)
//! <root>/lre/jacobians.f32          (#lre layers)·n·d·d (optional)
//! <root>/lre/offsets.f32            (#lre layers)·n·d   (optional)
//! ```
//!
//! Every `.f32` file is raw row-major little-endian `f32` with no header.
//! LRE blocks are concatenated in `manifest.lre_layers` order. Each binary
//! file carries a CRC-32 in `manifest.file_checksums`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::{LreLayerPayload, Manifest, ProbeDataset, Violation, PROB_SUM_TOL};
use crate::error::{Error, Result};
use crate::matrix::{f32s_to_le_bytes, le_bytes_to_f32s, Matrix};

pub const FORMAT_VERSION: u32 = 1;

const MANIFEST: &str = "manifest.json";
const REFERENCE: &str = "reference_probs.f32";
const UNEMBEDDING: &str = "unembedding.f32";
const LRE_JACOBIANS: &str = "lre/jacobians.f32";
const LRE_OFFSETS: &str = "lre/offsets.f32";

fn activation_file(layer: usize) -> String {
    format!("activations/layer_{layer}.f32")
}

fn joint_file(layer: usize) -> String {
    format!("joint/layer_{layer}.f32")
}

/// Relative path and byte image of every binary file of `ds`.
pub(crate) fn binary_files(ds: &ProbeDataset) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    for (layer, acts) in &ds.activations {
        files.push((activation_file(*layer), acts.to_le_bytes()));
    }
    if let Some(joint) = &ds.joint_activations {
        for (layer, acts) in joint {
            files.push((joint_file(*layer), acts.to_le_bytes()));
        }
    }
    files.push((REFERENCE.to_string(), ds.reference_probs.to_le_bytes()));
    if let Some(u) = &ds.unembedding {
        files.push((UNEMBEDDING.to_string(), u.to_le_bytes()));
    }
    if let Some(payload) = &ds.lre_payload {
        let mut jac = Vec::new();
        let mut off = Vec::new();
        for p in payload.values() {
            for j in &p.jacobians {
                jac.extend_from_slice(j.as_slice());
            }
            off.extend_from_slice(p.offsets.as_slice());
        }
        files.push((LRE_JACOBIANS.to_string(), f32s_to_le_bytes(&jac)));
        files.push((LRE_OFFSETS.to_string(), f32s_to_le_bytes(&off)));
    }
    files
}

/// Writes `bytes` to `path` through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn manifest_bytes(manifest: &Manifest) -> Result<Vec<u8>> {
    let mut text = serde_json::to_string_pretty(manifest).map_err(|e| Error::Manifest {
        path: PathBuf::from(MANIFEST),
        message: e.to_string(),
    })?;
    text.push('\n');
    Ok(text.into_bytes())
}

/// Writes `ds` to the directory `path` and returns the manifest written
/// (with fresh checksums). Refuses datasets that fail validation.
pub fn save_dataset(ds: &ProbeDataset, path: impl AsRef<Path>) -> Result<Manifest> {
    let root = path.as_ref();
    let violations = ds.validate();
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    let files = binary_files(ds);
    let mut manifest = ds.manifest.clone();
    manifest.file_checksums = files
        .iter()
        .map(|(name, bytes)| (name.clone(), crc32fast::hash(bytes)))
        .collect();
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    for (name, bytes) in &files {
        write_atomic(&root.join(name), bytes)?;
    }
    write_atomic(&root.join(MANIFEST), &manifest_bytes(&manifest)?)?;
    Ok(manifest)
}

struct Reader<'a> {
    root: &'a Path,
    manifest: &'a Manifest,
}

impl Reader<'_> {
    /// Reads `name`, checking size first and checksum second.
    fn read(&self, name: &str, rows: usize, cols: usize) -> Result<Matrix> {
        let path = self.root.join(name);
        if !path.is_file() {
            return Err(Error::MissingFile(path));
        }
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let expected = rows * cols * 4;
        if bytes.len() != expected {
            return Err(Error::Shape {
                file: name.to_string(),
                expected,
                actual: bytes.len(),
            });
        }
        let recorded = *self
            .manifest
            .file_checksums
            .get(name)
            .ok_or_else(|| Error::Manifest {
                path: self.root.join(MANIFEST),
                message: format!("no checksum recorded for {name}"),
            })?;
        let actual = crc32fast::hash(&bytes);
        if actual != recorded {
            return Err(Error::Checksum {
                file: name.to_string(),
                expected: recorded,
                actual,
            });
        }
        Matrix::from_vec(rows, cols, le_bytes_to_f32s(&bytes))
    }
}

/// Loads and fully validates a dataset directory. Read-only.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<ProbeDataset> {
    let root = path.as_ref();
    let manifest_path = root.join(MANIFEST);
    if !manifest_path.is_file() {
        return Err(Error::MissingFile(manifest_path));
    }
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Manifest {
        path: manifest_path.clone(),
        message: e.to_string(),
    })?;
    let (n, d, k) = (
        manifest.num_examples,
        manifest.hidden_dim,
        manifest.token_set.k(),
    );
    let reader = Reader {
        root,
        manifest: &manifest,
    };

    let mut activations = BTreeMap::new();
    for &layer in &manifest.layer_indices {
        activations.insert(layer, reader.read(&activation_file(layer), n, d)?);
    }
    let joint_activations = if manifest.has_joint_activations {
        let mut joint = BTreeMap::new();
        for &layer in &manifest.layer_indices {
            joint.insert(layer, reader.read(&joint_file(layer), n, d)?);
        }
        Some(joint)
    } else {
        None
    };
    let reference_probs = reader.read(REFERENCE, n, k)?;
    let unembedding = if manifest.has_unembedding {
        Some(reader.read(UNEMBEDDING, k, d)?)
    } else {
        None
    };
    let lre_payload = if manifest.has_lre_payload {
        let layers = manifest.lre_layers.len();
        let ex = manifest.lre_exemplars;
        let jac = reader.read(LRE_JACOBIANS, layers * ex, d * d)?;
        let off = reader.read(LRE_OFFSETS, layers * ex, d)?;
        let mut payload = BTreeMap::new();
        for (li, &layer) in manifest.lre_layers.iter().enumerate() {
            let jacobians = (0..ex)
                .map(|j| Matrix::from_vec(d, d, jac.row(li * ex + j).to_vec()))
                .collect::<Result<Vec<_>>>()?;
            let rows: Vec<usize> = (li * ex..(li + 1) * ex).collect();
            payload.insert(
                layer,
                LreLayerPayload {
                    jacobians,
                    offsets: off.gather_rows(&rows),
                },
            );
        }
        Some(payload)
    } else {
        None
    };

    let listed: Vec<&String> = manifest.file_checksums.keys().collect();
    let ds = ProbeDataset {
        manifest: manifest.clone(),
        activations,
        reference_probs,
        unembedding,
        joint_activations,
        lre_payload,
    };
    let expected: Vec<String> = binary_files(&ds).into_iter().map(|(n, _)| n).collect();
    if let Some(extra) = listed.iter().find(|name| !expected.contains(name)) {
        return Err(Error::Manifest {
            path: manifest_path,
            message: format!("checksum listed for undeclared file {extra}"),
        });
    }

    let violations = ds.validate();
    if let Some(v) = violations.iter().find(|v| v.location.starts_with("reference_probs row")) {
        return Err(probability_error(v));
    }
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    Ok(ds)
}

fn probability_error(v: &Violation) -> Error {
    let row = v
        .location
        .rsplit(' ')
        .next()
        .and_then(|r| r.parse().ok())
        .unwrap_or(0);
    Error::Probability {
        file: REFERENCE.to_string(),
        row,
        detail: format!("{} (tolerance {PROB_SUM_TOL})", v.description),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::TokenSet;

    fn sample() -> ProbeDataset {
        let acts = Matrix::from_vec(3, 2, vec![0.5, 1.0, -2.0, 0.0, 3.25, 1.0]).unwrap();
        let refs = Matrix::from_vec(3, 2, vec![0.5, 0.5, 0.25, 0.75, 1.0, 0.0]).unwrap();
        let payload = LreLayerPayload {
            jacobians: vec![Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap()],
            offsets: Matrix::from_vec(1, 2, vec![0.1, -0.1]).unwrap(),
        };
        ProbeDataset::assemble(
            "test",
            "rel",
            "i",
            TokenSet::numbered(2).unwrap(),
            BTreeMap::from([(7, acts)]),
            refs,
            vec![0, 1, -1],
            Some(Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap()),
            None,
            Some(BTreeMap::from([(7, payload)])),
        )
    }

    #[test]
    fn round_trip_with_payload() {
        let dir = tempfile::tempdir().unwrap();
        let ds = sample();
        save_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back, ds);
        assert!(back.lre_payload.is_some());
    }

    #[test]
    fn truncated_layer_is_shape_error() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&sample(), dir.path()).unwrap();
        let f = dir.path().join("activations/layer_7.f32");
        let bytes = fs::read(&f).unwrap();
        fs::write(&f, &bytes[..bytes.len() - 4]).unwrap();
        match load_dataset(dir.path()) {
            Err(Error::Shape { file, .. }) => assert_eq!(file, "activations/layer_7.f32"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_file_reported() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&sample(), dir.path()).unwrap();
        fs::remove_file(dir.path().join("unembedding.f32")).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::MissingFile(_))));
    }

    #[test]
    fn non_probability_row_names_row() {
        let dir = tempfile::tempdir().unwrap();
        let mut ds = sample();
        ds.reference_probs.row_mut(1).copy_from_slice(&[0.5, 0.6]);
        ds.refresh_checksums();
        // Bypass the save-time validation to plant the bad row on disk.
        fs::create_dir_all(dir.path()).unwrap();
        for (name, bytes) in binary_files(&ds) {
            write_atomic(&dir.path().join(name), &bytes).unwrap();
        }
        write_atomic(
            &dir.path().join(MANIFEST),
            &manifest_bytes(&ds.manifest).unwrap(),
        )
        .unwrap();
        match load_dataset(dir.path()) {
            Err(Error::Probability { file, row, .. }) => {
                assert_eq!(file, REFERENCE);
                assert_eq!(row, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_dataset_refused() {
        let dir = tempfile::tempdir().unwrap();
        let mut ds = sample();
        ds.manifest.gt_labels[0] = 5;
        assert!(matches!(
            save_dataset(&ds, dir.path()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn flipped_byte_caught() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&sample(), dir.path()).unwrap();
        let f = dir.path().join(REFERENCE);
        let mut bytes = fs::read(&f).unwrap();
        bytes[5] ^= 0x01;
        fs::write(&f, bytes).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Checksum { .. })));
    }
}
