//! On-disk dataset directories and the seeded train/test split.
//!
//! A dataset directory holds `records.csv` (canonical trajectories),
//! `scenarios.json` (the windowed scenarios) and, for synthetic data,
//! `scenes/scene_NNNN.csv` with one scene per file.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rhino_core::scenario::ScenarioBatch;
use rhino_kernel::SeededRng;

use crate::error::{HarnessError, Result};
use crate::records::{ingest, write_canonical, Format, TrajectoryRecord};
use crate::window::{build_scenario, window_scenarios, WindowConfig};

pub const RECORDS_FILE: &str = "records.csv";
pub const SCENARIOS_FILE: &str = "scenarios.json";
pub const SCENES_DIR: &str = "scenes";

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| HarnessError::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| HarnessError::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::json(path, e))
}

pub fn save_dataset(dir: &Path, records: &[TrajectoryRecord], scenarios: &[ScenarioBatch]) -> Result<()> {
    ensure_dir(dir)?;
    write_canonical(&dir.join(RECORDS_FILE), records)?;
    write_json(&dir.join(SCENARIOS_FILE), &scenarios)
}

pub fn load_scenarios(dir: &Path) -> Result<Vec<ScenarioBatch>> {
    read_json(&dir.join(SCENARIOS_FILE))
}

/// Path of scene `i` inside a dataset directory.
pub fn scene_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(SCENES_DIR).join(format!("scene_{i:04}.csv"))
}

/// Seeded shuffle, then the first `fraction` of scenarios train and the
/// rest test. Both index lists come back sorted.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    SeededRng::new(seed).shuffle(&mut idx);
    let n_train = ((n as f64 * fraction).round() as usize).min(n);
    let mut train = idx[..n_train].to_vec();
    let mut test = idx[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

pub fn select<'a>(scenarios: &'a [ScenarioBatch], idx: &[usize]) -> Vec<&'a ScenarioBatch> {
    idx.iter().map(|&i| &scenarios[i]).collect()
}

/// One scenario from a canonical CSV. The target is `target`, or the first
/// vehicle in the file; the window starts at the target's first frame. Files
/// that only cover the history give a zero-filled future.
pub fn load_scenario_csv(path: &Path, target: Option<i64>, cfg: &WindowConfig) -> Result<ScenarioBatch> {
    let records = ingest(path, Format::Canonical)?;
    let first = records.first().ok_or_else(|| HarnessError::Ingest {
        path: path.to_path_buf(),
        row: 1,
        detail: "no records".into(),
    })?;
    // Records come back grouped by ascending vehicle id.
    let target = target.unwrap_or(first.vehicle_id);
    let cfg = WindowConfig {
        targets: Some(BTreeSet::from([target])),
        stride: usize::MAX / 2,
        ..cfg.clone()
    };
    let (mut windows, _) = window_scenarios(&records, &cfg)?;
    if !windows.is_empty() {
        return Ok(windows.swap_remove(0));
    }
    let all = crate::records::tracks(&records);
    let start = all.get(&target).and_then(|t| t.first()).map(|r| r.frame);
    if let Some(start) = start {
        if let Some(s) = build_scenario(&all, target, start, &cfg, false)? {
            return Ok(s);
        }
    }
    Err(HarnessError::Ingest {
        path: path.to_path_buf(),
        row: 1,
        detail: format!("vehicle {target} does not cover {} consecutive frames", cfg.history),
    })
}
