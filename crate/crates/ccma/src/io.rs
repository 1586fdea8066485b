//! Artifact I/O: versioned CSV files, waypoint lists, and run manifests.
//!
//! Every CSV starts with a `# schema: ccma.<name>.v1` line followed by one
//! header row. Floats are written with 17 significant digits so files
//! round-trip bitwise and reruns with identical inputs reproduce outputs
//! exactly.

use nalgebra::{DVector, Vector6};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

use crate::ik_control::{EeTarget, StepStatus, TrackRow};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Format { path: String, msg: String },
}

fn io_err(path: &Path, source: std::io::Error) -> IoError {
    IoError::Io { path: path.display().to_string(), source }
}

fn format_err(path: &Path, msg: impl Into<String>) -> IoError {
    IoError::Format { path: path.display().to_string(), msg: msg.into() }
}

/// 17 significant digits: enough to reproduce any f64 bitwise.
pub fn fmt_f(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes a schema comment line, the header row, and the data rows.
pub fn write_csv(
    path: &Path,
    schema: &str,
    header: &[&str],
    rows: &[Vec<String>],
) -> Result<(), IoError> {
    let mut text = String::new();
    text.push_str(&format!("# schema: ccma.{schema}.v1\n"));
    text.push_str(&header.join(","));
    text.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        text.push_str(&row.join(","));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Reads a CSV produced by [`write_csv`]: returns the header and the rows as
/// raw cells.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| format_err(path, "missing header row"))?
        .split(',')
        .map(str::to_string)
        .collect();
    let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    Ok((header, rows))
}

// ---- run manifest ---------------------------------------------------------

/// Record of one CLI invocation, written beside its outputs; rerunning with
/// the recorded inputs reproduces the outputs bitwise.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Scene path or canonical scene name.
    pub scene: String,
    /// Non-default configuration values, flag name to rendered value.
    pub overrides: BTreeMap<String, String>,
    pub out_dir: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

pub fn write_manifest(out_dir: &Path, manifest: &RunManifest) -> Result<(), IoError> {
    let path = out_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(manifest).expect("manifest serialization cannot fail");
    std::fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))
}

// ---- waypoints ------------------------------------------------------------

/// Waypoint file: a JSON array of 6-element poses
/// `[x, y, z, gamma, beta, alpha]`; unmasked coordinates are ignored.
pub fn parse_waypoints(text: &str, path: &Path) -> Result<Vec<EeTarget>, IoError> {
    let raw: Vec<[f64; 6]> = serde_json::from_str(text)
        .map_err(|e| format_err(path, format!("waypoint parse error: {e}")))?;
    Ok(raw.iter().map(|p| Vector6::from_row_slice(p)).collect())
}

pub fn load_waypoints(path: &Path) -> Result<Vec<EeTarget>, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_waypoints(&text, path)
}

// ---- track CSV ------------------------------------------------------------

const TRACK_SCHEMA: &str = "track";
const TASK_COORDS: [&str; 6] = ["x", "y", "z", "gamma", "beta", "alpha"];

fn status_str(s: StepStatus) -> &'static str {
    match s {
        StepStatus::Converged => "converged",
        StepStatus::MaxIters => "max_iters",
        StepStatus::Failed => "failed",
    }
}

fn status_from_str(s: &str, path: &Path) -> Result<StepStatus, IoError> {
    match s {
        "converged" => Ok(StepStatus::Converged),
        "max_iters" => Ok(StepStatus::MaxIters),
        "failed" => Ok(StepStatus::Failed),
        other => Err(format_err(path, format!("unknown step status '{other}'"))),
    }
}

/// One row per tracking sub-step: commanded and achieved task pose, the full
/// control vector, and every base's planar pose.
pub fn write_track_csv(path: &Path, rows: &[TrackRow], n_bases: usize) -> Result<(), IoError> {
    let mut header: Vec<String> = vec!["step".into(), "waypoint".into(), "status".into()];
    for c in TASK_COORDS {
        header.push(format!("cmd_{c}"));
    }
    for c in TASK_COORDS {
        header.push(format!("ee_{c}"));
    }
    for j in 0..3 * n_bases {
        header.push(format!("u{j}"));
    }
    for k in 0..n_bases {
        for c in ["x", "y", "theta"] {
            header.push(format!("base{k}_{c}"));
        }
    }
    header.push("objective".into());
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();

    let data: Vec<Vec<String>> = rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut cells = vec![
                i.to_string(),
                row.waypoint.to_string(),
                status_str(row.status).to_string(),
            ];
            cells.extend(row.commanded.iter().map(|&v| fmt_f(v)));
            cells.extend(row.achieved.iter().map(|&v| fmt_f(v)));
            cells.extend(row.controls.iter().map(|&v| fmt_f(v)));
            for p in &row.base_poses {
                cells.extend(p.iter().map(|&v| fmt_f(v)));
            }
            cells.push(fmt_f(row.objective));
            cells
        })
        .collect();
    write_csv(path, TRACK_SCHEMA, &header_refs, &data)
}

/// Reads a track CSV back into rows (the inverse of [`write_track_csv`]).
pub fn read_track_csv(path: &Path, n_bases: usize) -> Result<Vec<TrackRow>, IoError> {
    let (header, raw) = read_csv(path)?;
    let expected = 3 + 12 + 3 * n_bases + 3 * n_bases + 1;
    if header.len() != expected {
        return Err(format_err(
            path,
            format!("expected {expected} columns for {n_bases} bases, found {}", header.len()),
        ));
    }
    let parse = |cell: &str| -> Result<f64, IoError> {
        cell.parse::<f64>()
            .map_err(|e| format_err(path, format!("bad float '{cell}': {e}")))
    };
    let mut rows = Vec::with_capacity(raw.len());
    for cells in &raw {
        if cells.len() != expected {
            return Err(format_err(path, "row width does not match header"));
        }
        let waypoint: usize = cells[1]
            .parse()
            .map_err(|e| format_err(path, format!("bad waypoint index '{}': {e}", cells[1])))?;
        let status = status_from_str(&cells[2], path)?;
        let mut f = Vec::with_capacity(expected - 3);
        for cell in &cells[3..] {
            f.push(parse(cell)?);
        }
        let commanded = Vector6::from_row_slice(&f[0..6]);
        let achieved = Vector6::from_row_slice(&f[6..12]);
        let controls = DVector::from_row_slice(&f[12..12 + 3 * n_bases]);
        let base_poses = (0..n_bases)
            .map(|k| {
                let o = 12 + 3 * n_bases + 3 * k;
                [f[o], f[o + 1], f[o + 2]]
            })
            .collect();
        rows.push(TrackRow {
            waypoint,
            commanded,
            achieved,
            controls,
            base_poses,
            objective: f[f.len() - 1],
            status,
        });
    }
    Ok(rows)
}
