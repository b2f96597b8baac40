//! Output writers: fixed-format CSV files, content hashing, and the run
//! manifest.
//!
//! Every command writes its artifacts under a single output directory and
//! finishes with a `manifest.json` listing each file with its SHA-256
//! digest plus the fully resolved scenario, so a run can be reproduced and
//! its outputs verified byte for byte. Floating-point values are printed
//! with 17 significant digits, enough to round-trip an `f64` exactly.

use crate::schema::ScenarioFile;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::io;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

/// Formats a float with 17 significant digits; infinities print as
/// `inf`/`-inf`.
pub fn fmt_f(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else if v == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{v:.16e}")
    }
}

/// Renders a rectangular CSV: every row must match the header width.
pub fn render_csv(header: &[String], rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(
            row.len(),
            header.len(),
            "csv row {i} has {} fields, header has {}",
            row.len(),
            header.len()
        );
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// One entry in the manifest's output listing.
#[derive(Debug, Serialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
}

/// Recorded when a run hits a state where the filter is infeasible.
#[derive(Debug, Serialize)]
pub struct InfeasibleRecord {
    pub t: f64,
    pub x: Vec<f64>,
    /// Multipliers proving the constraint rows inconsistent, ordered as
    /// stacked constraint rows then input-set rows.
    pub certificate: Option<Vec<f64>>,
}

/// Run manifest written alongside every command's outputs.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub scenario_path: String,
    pub scenario_name: String,
    pub seed: u64,
    pub filter_law: String,
    pub unix_time_s: u64,
    pub wall_s: f64,
    pub outputs: Vec<OutputFile>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_qp_deviation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub infeasible: Option<InfeasibleRecord>,
    pub resolved_scenario: ScenarioFile,
}

/// Collects output files in a directory and tracks their digests.
pub struct OutDir {
    dir: PathBuf,
    started: Instant,
    outputs: Vec<OutputFile>,
}

impl OutDir {
    /// Creates the directory (and parents) if needed.
    pub fn create(dir: &Path) -> io::Result<OutDir> {
        std::fs::create_dir_all(dir)?;
        Ok(OutDir {
            dir: dir.to_path_buf(),
            started: Instant::now(),
            outputs: Vec::new(),
        })
    }

    /// Writes one artifact and records its SHA-256 digest.
    pub fn write(&mut self, name: &str, contents: &str) -> io::Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents)?;
        let digest = Sha256::digest(contents.as_bytes());
        self.outputs.push(OutputFile {
            path: name.to_string(),
            sha256: format!("{digest:x}"),
        });
        Ok(())
    }

    /// Writes `manifest.json` describing the run and all prior artifacts.
    #[allow(clippy::too_many_arguments)]
    pub fn finish(
        self,
        command: &str,
        scenario_path: &Path,
        file: &ScenarioFile,
        seed: u64,
        filter_law: &str,
        max_qp_deviation: Option<f64>,
        infeasible: Option<InfeasibleRecord>,
    ) -> io::Result<()> {
        let manifest = Manifest {
            tool: "lticbf",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            scenario_path: scenario_path.display().to_string(),
            scenario_name: file.name.clone(),
            seed,
            filter_law: filter_law.to_string(),
            unix_time_s: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            wall_s: self.started.elapsed().as_secs_f64(),
            outputs: self.outputs,
            max_qp_deviation,
            infeasible,
            resolved_scenario: file.clone(),
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(self.dir.join("manifest.json"), text)
    }
}
