//! Sliding windows over trajectory records, one scenario per target and window.
//!
//! Neighbors fill the slots `P`/`F` (same lane, preceding/following) and
//! `LP`/`LF`/`RP`/`RF` (adjacent lanes) at the last history frame, nearest
//! first. Absent slots are dropped, so a lone vehicle yields `N = 1`.

use std::collections::{BTreeMap, BTreeSet};

use rhino_core::scenario::{ScenarioBatch, FUTURE_FRAMES, HISTORY_FRAMES};
use rhino_kernel::DenseArray;

use crate::error::Result;
use crate::records::{tracks, TrajectoryRecord};

pub const SLOT_ORDER: [&str; 6] = ["P", "F", "LP", "LF", "RP", "RF"];

#[derive(Debug, Clone)]
pub struct WindowConfig {
    pub history: usize,
    pub future: usize,
    /// Maximum number of neighbors besides the target.
    pub neighborhood: usize,
    pub stride: usize,
    /// Neighbors farther than this longitudinally (meters) are ignored.
    pub max_range: f64,
    pub lateral_threshold: f64,
    /// Restrict targets to these vehicle ids.
    pub targets: Option<BTreeSet<i64>>,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            history: HISTORY_FRAMES,
            future: FUTURE_FRAMES,
            neighborhood: 6,
            stride: 10,
            max_range: 100.0,
            lateral_threshold: 1.5,
            targets: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WindowStats {
    pub windows: usize,
    /// Targets with fewer frames than one window.
    pub skipped_targets: usize,
}

type Track = Vec<TrajectoryRecord>;

/// Index of `frame` in a track, if the track covers `frame..frame + len` without gaps.
fn covers(track: &Track, frame: i64, len: usize) -> Option<usize> {
    let start = track.binary_search_by_key(&frame, |r| r.frame).ok()?;
    let end = start + len - 1;
    (end < track.len() && track[end].frame == frame + len as i64 - 1).then_some(start)
}

/// Slot name for a neighbor relative to the target at the reference frame.
fn slot_of(target: &TrajectoryRecord, other: &TrajectoryRecord) -> Option<&'static str> {
    let ahead = other.x >= target.x;
    let lane_delta = other.lane_id - target.lane_id;
    let side = if lane_delta == 0 {
        0
    } else if lane_delta.abs() == 1 {
        if other.y > target.y {
            1
        } else {
            -1
        }
    } else {
        return None;
    };
    Some(match (side, ahead) {
        (0, true) => "P",
        (0, false) => "F",
        (1, true) => "LP",
        (1, false) => "LF",
        (_, true) => "RP",
        (_, false) => "RF",
    })
}

/// Assigns neighbors to slots; returns `(slot, vehicle_id)` in slot order.
pub fn assign_slots(
    all: &BTreeMap<i64, Track>,
    target_id: i64,
    start: i64,
    cfg: &WindowConfig,
    span: usize,
) -> Vec<(&'static str, i64)> {
    let reference = start + cfg.history as i64 - 1;
    let target = match all.get(&target_id).and_then(|t| covers(t, reference, 1).map(|i| t[i])) {
        Some(r) => r,
        None => return Vec::new(),
    };
    let mut best: BTreeMap<&'static str, (f64, i64)> = BTreeMap::new();
    for (&id, track) in all {
        if id == target_id {
            continue;
        }
        let Some(i) = covers(track, start, span) else {
            continue;
        };
        let other = track[i + cfg.history - 1];
        let dx = (other.x - target.x).abs();
        if dx > cfg.max_range {
            continue;
        }
        if let Some(slot) = slot_of(&target, &other) {
            let cand = (dx, id);
            let e = best.entry(slot).or_insert(cand);
            if cand.0 < e.0 || (cand.0 == e.0 && cand.1 < e.1) {
                *e = cand;
            }
        }
    }
    SLOT_ORDER
        .iter()
        .filter_map(|s| best.get(s).map(|&(_, id)| (*s, id)))
        .take(cfg.neighborhood)
        .collect()
}

/// Builds one scenario whose window starts at `start`. With `with_future`
/// false only the history must exist and the future is zero-filled.
pub fn build_scenario(
    all: &BTreeMap<i64, Track>,
    target_id: i64,
    start: i64,
    cfg: &WindowConfig,
    with_future: bool,
) -> Result<Option<ScenarioBatch>> {
    let span = if with_future { cfg.history + cfg.future } else { cfg.history };
    let Some(target_track) = all.get(&target_id) else {
        return Ok(None);
    };
    let Some(ti) = covers(target_track, start, span) else {
        return Ok(None);
    };
    let origin_rec = target_track[ti + cfg.history - 1];
    let origin = [origin_rec.x, origin_rec.y];
    let mut members = vec![("TAR", target_id)];
    members.extend(assign_slots(all, target_id, start, cfg, span));
    let n = members.len();
    let rows: Vec<&[TrajectoryRecord]> = members
        .iter()
        .map(|(_, id)| {
            let t = &all[id];
            let i = covers(t, start, span).expect("slot members cover the window");
            &t[i..i + span]
        })
        .collect();
    let history = DenseArray::from_fn(&[cfg.history, n, 4], |ix| {
        let r = rows[ix[1]][ix[0]];
        match ix[2] {
            0 => r.x - origin[0],
            1 => r.y - origin[1],
            2 => r.vx,
            _ => r.vy,
        }
    });
    let future = DenseArray::from_fn(&[cfg.future, n, 2], |ix| {
        if !with_future {
            return 0.0;
        }
        let r = rows[ix[1]][cfg.history + ix[0]];
        if ix[2] == 0 {
            r.x - origin[0]
        } else {
            r.y - origin[1]
        }
    });
    let mut s = ScenarioBatch::new(history, future, cfg.lateral_threshold)?;
    s.vehicle_ids = members.iter().map(|m| m.1).collect();
    s.slots = members.iter().map(|m| m.0.to_string()).collect();
    s.origin = origin;
    s.frame = origin_rec.frame;
    Ok(Some(s))
}

/// Every full window of every target, in target-id then start-frame order.
pub fn window_scenarios(records: &[TrajectoryRecord], cfg: &WindowConfig) -> Result<(Vec<ScenarioBatch>, WindowStats)> {
    let all = tracks(records);
    let span = cfg.history + cfg.future;
    let mut out = Vec::new();
    let mut stats = WindowStats::default();
    for (&id, track) in &all {
        if cfg.targets.as_ref().is_some_and(|t| !t.contains(&id)) {
            continue;
        }
        if track.len() < span {
            stats.skipped_targets += 1;
            continue;
        }
        let mut start = track[0].frame;
        let last = track[track.len() - 1].frame;
        while start <= last - (span as i64 - 1) {
            if let Some(s) = build_scenario(&all, id, start, cfg, true)? {
                out.push(s);
                stats.windows += 1;
            }
            let stride = i64::try_from(cfg.stride.max(1)).unwrap_or(i64::MAX);
            match start.checked_add(stride) {
                Some(next) => start = next,
                None => break,
            }
        }
    }
    Ok((out, stats))
}
