//! Per-tile work queue and directory helpers.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TileOutcome {
    Done,
    /// Outputs from an earlier run were already complete.
    Skipped,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RunSummary {
    pub processed: Vec<String>,
    pub skipped: Vec<String>,
    pub failed: Vec<(String, String)>,
}

impl RunSummary {
    pub fn is_success(&self) -> bool {
        self.failed.is_empty()
    }
}

/// Runs `f` over every id on `workers` threads. Per-tile errors are logged and
/// collected; the summary lists ids in input order.
pub fn run_tiles<F>(workers: usize, ids: &[String], f: F) -> Result<RunSummary>
where
    F: Fn(&str) -> Result<TileOutcome> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    let results: Vec<Result<TileOutcome>> = pool.install(|| ids.par_iter().map(|id| f(id)).collect());
    let mut summary = RunSummary::default();
    for (id, r) in ids.iter().zip(results) {
        match r {
            Ok(TileOutcome::Done) => summary.processed.push(id.clone()),
            Ok(TileOutcome::Skipped) => summary.skipped.push(id.clone()),
            Err(e) => {
                log::error!("tile {id}: {e:#}");
                summary.failed.push((id.clone(), format!("{e:#}")));
            }
        }
    }
    Ok(summary)
}

/// Sorted ids of files in `dir` named `<id><suffix>`. A missing directory yields none.
pub fn list_ids(dir: &Path, suffix: &str) -> Result<Vec<String>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let name = entry?.file_name();
        if let Some(id) = name.to_str().and_then(|n| n.strip_suffix(suffix)) {
            if !id.is_empty() {
                ids.push(id.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Whether a raster payload and its sidecar exist and the payload has the size the
/// header promises. Used to skip tiles finished by an earlier run.
pub fn raster_complete(payload: &Path) -> bool {
    let sidecar = barnmap_core::raster::sidecar_path(payload);
    let Ok(text) = fs::read_to_string(sidecar) else { return false };
    let Ok(h) = serde_json::from_str::<serde_json::Value>(&text) else { return false };
    let dim = |k: &str| h.get(k).and_then(serde_json::Value::as_u64);
    let size = match h.get("dtype").and_then(serde_json::Value::as_str) {
        Some("u8") => 1,
        Some("f32") => 4,
        _ => return false,
    };
    let (Some(w), Some(ht), Some(b)) = (dim("width"), dim("height"), dim("bands")) else { return false };
    fs::metadata(payload).map(|m| m.len() == w * ht * b * size).unwrap_or(false)
}

/// Pretty JSON with a trailing newline, written atomically.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    barnmap_core::raster::write_atomic(path, s.as_bytes())?;
    Ok(())
}
