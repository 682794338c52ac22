// SPDX-License-Identifier: MIT OR Apache-2.0

//! Tables, figures and run manifests.

mod svg;
mod table;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use svg::{
    emit_scatter, emit_ternary, render_histogram, render_layer_curves, render_scatter,
    render_ternary, ternary_pixel, write_svg, ColorScale, DEFAULT_COLOR_CEILING,
};
pub use table::{emit_tables, format_sig, Cell, Table, TableFormat, METRIC_COLUMNS, SIG_DIGITS};

use crate::dataset::{write_atomic, ProbeDataset};
use crate::error::{Error, Result};

/// Identity of a dataset used by a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRef {
    pub path: String,
    pub relation_name: String,
    pub paraphrase_id: String,
    pub file_checksums: BTreeMap<String, u32>,
}

impl DatasetRef {
    pub fn new(path: impl AsRef<Path>, ds: &ProbeDataset) -> Self {
        Self {
            path: path.as_ref().display().to_string(),
            relation_name: ds.manifest.relation_name.clone(),
            paraphrase_id: ds.manifest.paraphrase_id.clone(),
            file_checksums: ds.manifest.file_checksums.clone(),
        }
    }
}

/// Everything needed to repeat a run bit for bit. Contains no timestamps so
/// repeated runs produce identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub seeds: BTreeMap<String, u64>,
    pub config: serde_json::Value,
    pub datasets: Vec<DatasetRef>,
    /// CRC-32 of every file the run wrote, keyed by file name.
    pub outputs: BTreeMap<String, u32>,
}

impl RunManifest {
    pub fn new(command: impl Into<String>, config: serde_json::Value) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.into(),
            seeds: BTreeMap::new(),
            config,
            datasets: Vec::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn with_seed(mut self, name: &str, seed: u64) -> Self {
        self.seeds.insert(name.to_string(), seed);
        self
    }

    pub fn with_dataset(mut self, dataset: DatasetRef) -> Self {
        self.datasets.push(dataset);
        self
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let path = dir.as_ref().join("run_manifest.json");
        write_atomic(&path, self.to_json().as_bytes())?;
        Ok(path)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// Named tables and SVG figures written together with the manifest that
/// produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportBundle {
    pub tables: Vec<Table>,
    /// `(file stem, svg document)`.
    pub figures: Vec<(String, String)>,
    pub run_manifest: RunManifest,
}

impl ReportBundle {
    pub fn new(run_manifest: RunManifest) -> Self {
        Self {
            tables: Vec::new(),
            figures: Vec::new(),
            run_manifest,
        }
    }

    /// Writes tables, figures and finally `run_manifest.json`, which lists
    /// the checksum of every other file.
    pub fn write(&mut self, dir: impl AsRef<Path>, format: TableFormat) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        for t in &self.tables {
            let name = format!("{}.{}", t.name, format.extension());
            let bytes = t.render(format);
            write_atomic(&dir.join(&name), bytes.as_bytes())?;
            self.run_manifest.outputs.insert(name.clone(), crc32fast::hash(bytes.as_bytes()));
            written.push(dir.join(name));
        }
        for (stem, svg) in &self.figures {
            let name = format!("{stem}.svg");
            write_atomic(&dir.join(&name), svg.as_bytes())?;
            self.run_manifest.outputs.insert(name.clone(), crc32fast::hash(svg.as_bytes()));
            written.push(dir.join(name));
        }
        written.push(self.run_manifest.write(dir)?);
        Ok(written)
    }
}
