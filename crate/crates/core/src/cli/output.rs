//! CSV, PGM and manifest writers. Numbers use a fixed 17-significant-digit
//! scientific format so reruns are byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::limitg::GridKernel;

pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub struct Csv {
    text: String,
    columns: usize,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Csv {
            text: format!("{}\n", header.join(",")),
            columns: header.len(),
        }
    }

    pub fn row(&mut self, fields: &[String]) {
        debug_assert_eq!(fields.len(), self.columns);
        self.text.push_str(&fields.join(","));
        self.text.push('\n');
    }

    pub fn into_string(self) -> String {
        self.text
    }
}

/// Binary P5, maxval 255, `round(255·w)` clamped, row `u` downward.
pub fn pgm_bytes(w: &GridKernel) -> Vec<u8> {
    let g = w.size();
    let mut out = format!("P5\n{g} {g}\n255\n").into_bytes();
    out.extend(
        w.cells()
            .iter()
            .map(|&c| (255.0 * c.clamp(0.0, 1.0)).round() as u8),
    );
    out
}

pub fn kernel_csv(w: &GridKernel) -> String {
    let mut csv = Csv::new(&["u_index", "v_index", "value"]);
    for iu in 0..w.size() {
        for iv in 0..w.size() {
            csv.row(&[iu.to_string(), iv.to_string(), num(w.get(iu, iv))]);
        }
    }
    csv.into_string()
}

/// Collects files for one run and writes them plus the manifest.
pub struct OutputDir {
    dir: PathBuf,
    written: Vec<String>,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(OutputDir {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn write_manifest(self, manifest: Manifest) -> Result<()> {
        let manifest = Manifest {
            outputs: self.written.clone(),
            ..manifest
        };
        let text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::Numeric(format!("manifest serialisation failed: {e}")))?;
        let path = self.dir.join("manifest.json");
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    /// FNV-1a 64 of the canonical config text, as 16 hex digits.
    pub config_hash: String,
    pub config: BTreeMap<String, String>,
    pub seed: u64,
    pub version: String,
    pub outputs: Vec<String>,
    pub wall_clock_seconds: f64,
    pub timings: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}
