//! Output files: CSV/JSON rendering, run manifests and atomic writes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use gflsim_core::eval::DefenseSetting;
use gflsim_core::federation::RoundTrace;
use gflsim_core::manipulation::{Histogram, ObjectiveStep};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult, Stage};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputEntry {
    /// Path relative to the manifest's directory.
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Provenance record, written once per run before any metric file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub training_hash: String,
    pub seeds: Vec<u64>,
    pub deterministic: bool,
    /// Wall-clock seconds per stage, zero in deterministic mode.
    pub stage_seconds: BTreeMap<String, f64>,
    pub defense: DefenseSetting,
    pub outputs: Vec<OutputEntry>,
}

impl RunManifest {
    pub fn file_name(command: &str) -> String {
        format!("{command}.manifest.json")
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(Stage::Report, path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::input(Stage::Report, format!("{}: corrupt manifest: {e}", path.display())))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Files of one run, held in memory until [`OutputSet::commit`].
#[derive(Debug, Default)]
pub struct OutputSet {
    files: Vec<(String, Vec<u8>)>,
}

impl OutputSet {
    pub fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|(n, _)| n.as_str())
    }

    /// Writes the manifest (listing every file with its digest) first, then
    /// the files, each through a temporary file and a rename.
    pub fn commit(self, dir: &Path, mut manifest: RunManifest) -> CliResult<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(Stage::Write, dir, e))?;
        manifest.outputs = self
            .files
            .iter()
            .map(|(name, bytes)| OutputEntry {
                name: name.clone(),
                sha256: sha256_hex(bytes),
                bytes: bytes.len() as u64,
            })
            .collect();
        let path = dir.join(RunManifest::file_name(&manifest.command));
        let mut json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        json.push(b'\n');
        write_atomic(&path, &json)?;
        for (name, bytes) in &self.files {
            write_atomic(&dir.join(name), bytes)?;
        }
        Ok(path)
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let file_name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));
    fs::write(&tmp, bytes).map_err(|e| CliError::io(Stage::Write, &tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(Stage::Write, path, e))
}

/// CSV from a header and rows of already formatted fields.
pub fn csv_bytes<I, R>(header: &[&str], rows: I) -> Vec<u8>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory CSV write");
    for row in rows {
        w.write_record(row).expect("in-memory CSV write");
    }
    w.into_inner().expect("in-memory CSV flush")
}

/// Shortest representation that parses back to the same value.
pub fn num(v: f64) -> String {
    v.to_string()
}

pub fn round_trace_csv(trace: &[RoundTrace]) -> Vec<u8> {
    csv_bytes(
        &["round", "global_train_acc", "global_val_acc", "malicious_local_loss"],
        trace.iter().map(|t| {
            [
                t.round.to_string(),
                num(t.global_train_acc),
                num(t.global_val_acc),
                num(t.malicious_local_loss),
            ]
        }),
    )
}

pub fn objective_trace_csv(trace: &[ObjectiveStep]) -> Vec<u8> {
    csv_bytes(
        &["step", "J", "CE", "attraction", "repulsion"],
        trace.iter().map(|s| {
            [
                s.step.to_string(),
                num(s.value.total),
                num(s.value.cross_entropy),
                num(s.value.attraction),
                num(s.value.repulsion),
            ]
        }),
    )
}

pub fn matrix_csv(x: &Array2<f64>) -> Vec<u8> {
    let header: Vec<String> = (0..x.ncols()).map(|j| format!("x{j}")).collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    csv_bytes(
        &header,
        x.rows()
            .into_iter()
            .map(|r| r.iter().map(|&v| num(v)).collect::<Vec<_>>()),
    )
}

pub fn read_matrix_csv(path: &Path) -> CliResult<Array2<f64>> {
    let bad = |m: String| CliError::input(Stage::Load, format!("{}: {m}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let cols = r.headers().map_err(|e| bad(e.to_string()))?.len();
    let mut values = Vec::new();
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        for field in rec.iter() {
            values.push(
                field
                    .parse::<f64>()
                    .map_err(|e| bad(format!("row {}: {e}", rows + 1)))?,
            );
        }
        rows += 1;
    }
    Array2::from_shape_vec((rows, cols), values).map_err(|e| bad(e.to_string()))
}

pub fn scored_pairs_csv(pairs: &[(usize, usize)], scores: &[f64]) -> Vec<u8> {
    csv_bytes(
        &["u", "v", "score"],
        pairs
            .iter()
            .zip(scores)
            .map(|(&(u, v), &s)| [u.to_string(), v.to_string(), num(s)]),
    )
}

/// Raw counts; the manipulated column is empty for benign runs.
pub fn histogram_csv(clean: &Histogram, manipulated: Option<&Histogram>) -> Vec<u8> {
    csv_bytes(
        &["bin_left", "bin_right", "count_benign", "count_manipulated"],
        clean.counts.iter().enumerate().map(|(i, &c)| {
            let (lo, hi) = Histogram::bin_edges(i);
            [
                num(lo),
                num(hi),
                c.to_string(),
                manipulated.map_or(String::new(), |m| m.counts[i].to_string()),
            ]
        }),
    )
}
