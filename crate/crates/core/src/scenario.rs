//! Windowed multi-vehicle samples and the row-stacked minibatches the models consume.
//!
//! Coordinates are meters relative to the target vehicle's position at the
//! last history frame; `x` is longitudinal, `y` lateral with `+y` to the left.

use std::ops::Range;

use rhino_kernel::DenseArray;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::graph::{Mode, MODES};

/// Sampling interval of every trajectory, seconds (10 Hz).
pub const DT: f64 = 0.1;
pub const HISTORY_FRAMES: usize = 30;
pub const FUTURE_FRAMES: usize = 50;
/// State channels per history frame: x, y, vx, vy.
pub const STATE_CHANNELS: usize = 4;
pub const LANE_WIDTH: f64 = 3.75;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioBatch {
    /// `[T × N × 4]`.
    pub history: DenseArray,
    /// `[F × N × 2]`.
    pub future: DenseArray,
    pub neighbor_mask: Vec<bool>,
    pub target_index: usize,
    /// One-hot `[N × 3]` over left, keep, right.
    pub intention_labels: DenseArray,
    /// Source vehicle ids, one per agent row.
    pub vehicle_ids: Vec<i64>,
    /// Neighborhood slot name per agent (`TAR`, `P`, `F`, `LP`, ...).
    pub slots: Vec<String>,
    /// Absolute position of the target at the last history frame.
    pub origin: [f64; 2],
    /// Absolute frame number of the last history frame.
    pub frame: i64,
}

impl ScenarioBatch {
    /// Checks shapes and derives intention labels from the data.
    pub fn new(history: DenseArray, future: DenseArray, lateral_threshold: f64) -> Result<Self> {
        let hs = history.shape();
        let fs = future.shape();
        if hs.len() != 3 || hs[2] != STATE_CHANNELS {
            return Err(CoreError::Dimension(format!("history must be [T, N, 4], got {hs:?}")));
        }
        if fs.len() != 3 || fs[2] != 2 || fs[1] != hs[1] {
            return Err(CoreError::Dimension(format!(
                "future must be [F, N, 2] with N={}, got {fs:?}",
                hs[1]
            )));
        }
        let n = hs[1];
        if n == 0 {
            return Err(CoreError::Dimension("a scenario needs at least one agent".into()));
        }
        let labels = intention_labels(&history, &future, lateral_threshold);
        Ok(ScenarioBatch {
            history,
            future,
            neighbor_mask: vec![true; n],
            target_index: 0,
            intention_labels: labels,
            vehicle_ids: (0..n as i64).collect(),
            slots: vec![String::new(); n],
            origin: [0.0, 0.0],
            frame: 0,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.history.shape()[1]
    }

    pub fn t(&self) -> usize {
        self.history.shape()[0]
    }

    pub fn f(&self) -> usize {
        self.future.shape()[0]
    }

    pub fn label(&self, agent: usize) -> Mode {
        let row = self.intention_labels.row(agent);
        let m = (0..MODES).find(|&m| row[m] == 1.0).unwrap_or(Mode::Keep.index());
        Mode::from_index(m).unwrap_or(Mode::Keep)
    }
}

/// Lateral displacement between the last history frame and the end of the
/// future: `≥ threshold` is a left change, `≤ -threshold` a right change.
pub fn intention_labels(history: &DenseArray, future: &DenseArray, threshold: f64) -> DenseArray {
    let t = history.shape()[0];
    let n = history.shape()[1];
    let f = future.shape()[0];
    let mut out = DenseArray::zeros(&[n, MODES]);
    for i in 0..n {
        let dy = future.get(&[f - 1, i, 1]) - history.get(&[t - 1, i, 1]);
        let mode = if dy >= threshold {
            Mode::Left
        } else if dy <= -threshold {
            Mode::Right
        } else {
            Mode::Keep
        };
        out.set(&[i, mode.index()], 1.0);
    }
    out
}

/// Several scenarios stacked along the agent axis. Agent rows of scenario `s`
/// occupy `groups[s]`.
#[derive(Debug, Clone)]
pub struct Minibatch {
    pub t: usize,
    pub f: usize,
    pub groups: Vec<Range<usize>>,
    /// `[T × R × 4]`, raw meters and meters per second.
    pub history: DenseArray,
    /// `[R × F·2]`, row-major over (frame, coordinate).
    pub future: DenseArray,
    /// Mode index per row.
    pub labels: Vec<usize>,
    /// Row of each scenario's target vehicle.
    pub targets: Vec<usize>,
}

impl Minibatch {
    pub fn new(scenarios: &[&ScenarioBatch]) -> Result<Self> {
        let first = scenarios
            .first()
            .ok_or_else(|| CoreError::Dimension("empty minibatch".into()))?;
        let (t, f) = (first.t(), first.f());
        let rows: usize = scenarios.iter().map(|s| s.n_agents()).sum();
        let mut history = DenseArray::zeros(&[t, rows, STATE_CHANNELS]);
        let mut future = DenseArray::zeros(&[rows, f * 2]);
        let mut groups = Vec::with_capacity(scenarios.len());
        let mut labels = Vec::with_capacity(rows);
        let mut targets = Vec::with_capacity(scenarios.len());
        let mut start = 0;
        for s in scenarios {
            if s.t() != t || s.f() != f {
                return Err(CoreError::Dimension(format!(
                    "scenario horizons ({}, {}) differ from ({t}, {f})",
                    s.t(),
                    s.f()
                )));
            }
            let n = s.n_agents();
            for i in 0..n {
                let r = start + i;
                for k in 0..t {
                    for c in 0..STATE_CHANNELS {
                        history.set(&[k, r, c], s.history.get(&[k, i, c]));
                    }
                }
                for k in 0..f {
                    for c in 0..2 {
                        future.set(&[r, k * 2 + c], s.future.get(&[k, i, c]));
                    }
                }
                labels.push(s.label(i).index());
            }
            targets.push(start + s.target_index);
            groups.push(start..start + n);
            start += n;
        }
        Ok(Minibatch {
            t,
            f,
            groups,
            history,
            future,
            labels,
            targets,
        })
    }

    pub fn rows(&self) -> usize {
        self.history.shape()[1]
    }

    pub fn n_scenarios(&self) -> usize {
        self.groups.len()
    }

    /// Scenario index of every row.
    pub fn row_groups(&self) -> Vec<usize> {
        let mut out = vec![0; self.rows()];
        for (s, g) in self.groups.iter().enumerate() {
            for r in g.clone() {
                out[r] = s;
            }
        }
        out
    }

    /// `[R × T·4]` history per agent, multiplied by `scale`.
    pub fn history_flat(&self, scale: f64) -> DenseArray {
        let (t, r) = (self.t, self.rows());
        DenseArray::from_fn(&[r, t * STATE_CHANNELS], |ix| {
            let (k, c) = (ix[1] / STATE_CHANNELS, ix[1] % STATE_CHANNELS);
            self.history.get(&[k, ix[0], c]) * scale
        })
    }

    /// `[R × T·2]` past positions.
    pub fn past_positions(&self) -> DenseArray {
        let (t, r) = (self.t, self.rows());
        DenseArray::from_fn(&[r, t * 2], |ix| self.history.get(&[ix[1] / 2, ix[0], ix[1] % 2]))
    }

    /// `[R × F·2]` constant-velocity continuation of the last history state.
    pub fn cv_future(&self) -> DenseArray {
        let last = self.t - 1;
        DenseArray::from_fn(&[self.rows(), self.f * 2], |ix| {
            let (k, c) = (ix[1] / 2, ix[1] % 2);
            let p = self.history.get(&[last, ix[0], c]);
            let v = self.history.get(&[last, ix[0], 2 + c]);
            p + v * (k + 1) as f64 * DT
        })
    }

    /// `[R × T·2]` constant-velocity extrapolation backwards from the last history state.
    pub fn cv_past(&self) -> DenseArray {
        let last = self.t - 1;
        DenseArray::from_fn(&[self.rows(), self.t * 2], |ix| {
            let (k, c) = (ix[1] / 2, ix[1] % 2);
            let p = self.history.get(&[last, ix[0], c]);
            let v = self.history.get(&[last, ix[0], 2 + c]);
            p - v * (last - k) as f64 * DT
        })
    }

    /// Block-diagonal adjacency with every scenario fully connected.
    pub fn adjacency(&self) -> DenseArray {
        let g = self.row_groups();
        DenseArray::from_fn(&[self.rows(), self.rows()], |ix| if g[ix[0]] == g[ix[1]] { 1.0 } else { 0.0 })
    }

    pub fn label_onehot(&self) -> DenseArray {
        DenseArray::from_fn(&[self.rows(), MODES], |ix| if self.labels[ix[0]] == ix[1] { 1.0 } else { 0.0 })
    }

    /// Splits a `[R × F·2]` row layout into per-scenario `[F × N × 2]` arrays.
    pub fn split_rows(&self, rows: &DenseArray) -> Vec<DenseArray> {
        let width = rows.shape()[1];
        let steps = width / 2;
        self.groups
            .iter()
            .map(|g| {
                let n = g.len();
                DenseArray::from_fn(&[steps, n, 2], |ix| rows.get(&[g.start + ix[1], ix[0] * 2 + ix[2]]))
            })
            .collect()
    }
}
