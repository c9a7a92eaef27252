//! Synthetic highway scenes for tests and desk-scale experiments.
//!
//! Each scene is three lanes with a target in the middle lane and up to six
//! neighbors in the `P`/`F`/`LP`/`LF`/`RP`/`RF` slots. Vehicles either keep a
//! constant velocity, follow with a sinusoidal speed perturbation, or change
//! lanes along a half-cosine lateral profile.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use rhino_core::scenario::{DT, HISTORY_FRAMES, LANE_WIDTH};
use rhino_kernel::SeededRng;
use serde::{Deserialize, Serialize};

use crate::records::TrajectoryRecord;

/// Frame offset between consecutive scenes, so windows never span two scenes.
pub const SCENE_FRAME_STRIDE: i64 = 1000;
/// Vehicle id offset between consecutive scenes.
pub const SCENE_ID_STRIDE: i64 = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub scenes: usize,
    pub seed: u64,
    pub frames: usize,
    /// Vehicles per scene including the target, 1..=7.
    pub vehicles: usize,
    pub lane_change_prob: f64,
    pub following_prob: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            scenes: 100,
            seed: 1,
            frames: 80,
            vehicles: 7,
            lane_change_prob: 0.3,
            following_prob: 0.35,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Behavior {
    ConstantVelocity,
    /// Speed `v + amp·sin(ω·τ + φ)`.
    Following { amp: f64, omega: f64, phase: f64 },
    /// Lateral shift of `lanes` lanes starting at `start` seconds (relative to
    /// the last history frame) over `duration` seconds.
    LaneChange { lanes: i64, start: f64, duration: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleSpec {
    pub id: i64,
    pub lane: i64,
    /// Longitudinal position at the last history frame.
    pub x0: f64,
    pub speed: f64,
    pub behavior: Behavior,
}

pub fn lane_center(lane: i64) -> f64 {
    (lane - 2) as f64 * LANE_WIDTH
}

impl VehicleSpec {
    /// State at time `tau` seconds after the last history frame.
    pub fn state(&self, tau: f64) -> (f64, f64, f64, f64, i64) {
        let y0 = lane_center(self.lane);
        match self.behavior {
            Behavior::ConstantVelocity => (self.x0 + self.speed * tau, y0, self.speed, 0.0, self.lane),
            Behavior::Following { amp, omega, phase } => {
                let x = self.x0 + self.speed * tau + amp / omega * (phase.cos() - (omega * tau + phase).cos());
                let vx = self.speed + amp * (omega * tau + phase).sin();
                (x, y0, vx, 0.0, self.lane)
            }
            Behavior::LaneChange { lanes, start, duration } => {
                let dy = lanes as f64 * LANE_WIDTH;
                let u = ((tau - start) / duration).clamp(0.0, 1.0);
                let y = y0 + dy * (1.0 - (PI * u).cos()) / 2.0;
                let vy = if u > 0.0 && u < 1.0 {
                    dy * PI / (2.0 * duration) * (PI * u).sin()
                } else {
                    0.0
                };
                let lane = if u >= 0.5 { self.lane + lanes } else { self.lane };
                (self.x0 + self.speed * tau, y, self.speed, vy, lane)
            }
        }
    }
}

fn behavior(rng: &mut SeededRng, lane: i64, cfg: &SynthConfig) -> Behavior {
    let u = rng.uniform(0.0, 1.0);
    if u < cfg.lane_change_prob {
        let lanes = match lane {
            1 => 1,
            3 => -1,
            _ if rng.uniform(0.0, 1.0) < 0.5 => 1,
            _ => -1,
        };
        let duration = rng.uniform(3.0, 5.0);
        // Starts between 0.9 s before and 2.1 s after the last history
        // frame; the lane id always switches after it.
        let start = rng.uniform(-0.9, 2.1);
        Behavior::LaneChange { lanes, start, duration }
    } else if u < cfg.lane_change_prob + cfg.following_prob {
        Behavior::Following {
            amp: rng.uniform(0.5, 1.5),
            omega: rng.uniform(0.3, 0.8),
            phase: rng.uniform(0.0, 2.0 * PI),
        }
    } else {
        Behavior::ConstantVelocity
    }
}

/// Vehicle layout of one scene; the target has id `base_id`.
pub fn scene_vehicles(rng: &mut SeededRng, base_id: i64, cfg: &SynthConfig) -> Vec<VehicleSpec> {
    let base = rng.uniform(20.0, 30.0);
    // (lane, sign of longitudinal offset) for TAR, P, F, LP, LF, RP, RF.
    let layout = [(2, 0.0), (2, 1.0), (2, -1.0), (3, 1.0), (3, -1.0), (1, 1.0), (1, -1.0)];
    layout
        .iter()
        .take(cfg.vehicles.clamp(1, layout.len()))
        .enumerate()
        .map(|(j, &(lane, side))| {
            let gap = if j == 0 { 0.0 } else { rng.uniform(15.0, 30.0) };
            let speed = base + if j == 0 { 0.0 } else { rng.uniform(-1.5, 1.5) };
            VehicleSpec {
                id: base_id + j as i64,
                lane,
                x0: side * gap,
                speed,
                behavior: behavior(rng, lane, cfg),
            }
        })
        .collect()
}

/// Records of all scenes plus the target id of each scene.
pub fn synth_records(cfg: &SynthConfig) -> (Vec<TrajectoryRecord>, Vec<i64>) {
    let mut rng = SeededRng::new(cfg.seed);
    let mut records = Vec::new();
    let mut targets = Vec::with_capacity(cfg.scenes);
    for s in 0..cfg.scenes {
        let frame0 = s as i64 * SCENE_FRAME_STRIDE;
        let base_id = s as i64 * SCENE_ID_STRIDE + 1;
        let vehicles = scene_vehicles(&mut rng, base_id, cfg);
        targets.push(base_id);
        for v in &vehicles {
            for k in 0..cfg.frames {
                let tau = (k as f64 - (HISTORY_FRAMES - 1) as f64) * DT;
                let (x, y, vx, vy, lane_id) = v.state(tau);
                records.push(TrajectoryRecord {
                    frame: frame0 + k as i64,
                    vehicle_id: v.id,
                    x,
                    y,
                    vx,
                    vy,
                    lane_id,
                });
            }
        }
    }
    (records, targets)
}

pub fn target_set(targets: &[i64]) -> BTreeSet<i64> {
    targets.iter().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lane_change_velocity_matches_position() {
        let v = VehicleSpec {
            id: 1,
            lane: 2,
            x0: 0.0,
            speed: 25.0,
            behavior: Behavior::LaneChange {
                lanes: 1,
                start: 0.5,
                duration: 4.0,
            },
        };
        for tau in [0.7, 1.5, 2.5, 4.0] {
            let h = 1e-6;
            let dy = (v.state(tau + h).1 - v.state(tau - h).1) / (2.0 * h);
            assert!((dy - v.state(tau).3).abs() < 1e-6);
        }
        assert_eq!(v.state(10.0).1, LANE_WIDTH);
        assert_eq!(v.state(10.0).4, 3);
    }

    #[test]
    fn following_velocity_matches_position() {
        let v = VehicleSpec {
            id: 1,
            lane: 2,
            x0: 3.0,
            speed: 25.0,
            behavior: Behavior::Following {
                amp: 1.0,
                omega: 0.5,
                phase: 0.3,
            },
        };
        assert_eq!(v.state(0.0).0, 3.0);
        for tau in [-2.0, 0.5, 3.0] {
            let h = 1e-6;
            let dx = (v.state(tau + h).0 - v.state(tau - h).0) / (2.0 * h);
            assert!((dx - v.state(tau).2).abs() < 1e-6);
        }
    }

    #[test]
    fn same_seed_same_records() {
        let cfg = SynthConfig {
            scenes: 3,
            ..SynthConfig::default()
        };
        assert_eq!(synth_records(&cfg), synth_records(&cfg));
        assert_eq!(synth_records(&cfg).0.len(), 3 * 7 * 80);
    }
}
