//! Trajectory files: the canonical interchange CSV plus NGSIM and HighD adapters.
//!
//! Every adapter normalizes into [`TrajectoryRecord`]s in meters at 10 Hz with
//! `x` longitudinal and `y` lateral, positive to the left.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rhino_core::scenario::DT;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const FEET_TO_METERS: f64 = 0.3048;
pub const HIGHD_RATE_HZ: i64 = 25;
pub const TARGET_RATE_HZ: i64 = 10;

pub const CANONICAL_HEADER: [&str; 7] = ["frame", "vehicle_id", "x", "y", "vx", "vy", "lane_id"];

const NGSIM_COLUMNS: [&str; 25] = [
    "Vehicle_ID",
    "Frame_ID",
    "Total_Frames",
    "Global_Time",
    "Local_X",
    "Local_Y",
    "Global_X",
    "Global_Y",
    "v_Length",
    "v_length",
    "v_Width",
    "v_Class",
    "v_Vel",
    "v_Acc",
    "Lane_ID",
    "Preceding",
    "Following",
    "Space_Headway",
    "Time_Headway",
    "Location",
    "O_Zone",
    "D_Zone",
    "Int_ID",
    "Section_ID",
    "Direction",
];

const HIGHD_COLUMNS: [&str; 25] = [
    "frame",
    "id",
    "x",
    "y",
    "width",
    "height",
    "xVelocity",
    "yVelocity",
    "xAcceleration",
    "yAcceleration",
    "frontSightDistance",
    "backSightDistance",
    "dhw",
    "thw",
    "ttc",
    "precedingXVelocity",
    "precedingId",
    "followingId",
    "leftPrecedingId",
    "leftAlongsideId",
    "leftFollowingId",
    "rightPrecedingId",
    "rightAlongsideId",
    "rightFollowingId",
    "laneId",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub frame: i64,
    pub vehicle_id: i64,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub lane_id: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Canonical,
    Ngsim,
    Highd,
}

impl FromStr for Format {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "canonical" => Ok(Format::Canonical),
            "ngsim" => Ok(Format::Ngsim),
            "highd" => Ok(Format::Highd),
            other => Err(HarnessError::Config(format!("unknown format `{other}` (canonical, ngsim, highd)"))),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Canonical => "canonical",
            Format::Ngsim => "ngsim",
            Format::Highd => "highd",
        })
    }
}

/// A parsed row before unit conversion; `None` velocities are recomputed.
#[derive(Debug, Clone, Copy)]
struct RawRow {
    row: usize,
    frame: i64,
    vehicle_id: i64,
    x: f64,
    y: f64,
    vx: Option<f64>,
    vy: Option<f64>,
    lane_id: i64,
}

struct Columns {
    frame: usize,
    id: usize,
    x: usize,
    y: usize,
    vx: Option<usize>,
    vy: Option<usize>,
    lane: usize,
}

fn ingest_err(path: &Path, row: usize, detail: impl Into<String>) -> HarnessError {
    HarnessError::Ingest {
        path: path.to_path_buf(),
        row,
        detail: detail.into(),
    }
}

fn resolve_columns(path: &Path, header: &csv::StringRecord, format: Format) -> Result<Columns> {
    let known: &[&str] = match format {
        Format::Canonical => &CANONICAL_HEADER,
        Format::Ngsim => &NGSIM_COLUMNS,
        Format::Highd => &HIGHD_COLUMNS,
    };
    for name in header.iter() {
        if !known.contains(&name.trim()) {
            return Err(ingest_err(path, 1, format!("unknown column `{name}` for {format} format")));
        }
    }
    let find = |name: &str| header.iter().position(|h| h.trim() == name);
    let need = |name: &str| find(name).ok_or_else(|| ingest_err(path, 1, format!("missing column `{name}`")));
    Ok(match format {
        Format::Canonical => Columns {
            frame: need("frame")?,
            id: need("vehicle_id")?,
            x: need("x")?,
            y: need("y")?,
            vx: find("vx"),
            vy: find("vy"),
            lane: need("lane_id")?,
        },
        // NGSIM: Local_Y runs along the road, Local_X across it.
        Format::Ngsim => Columns {
            frame: need("Frame_ID")?,
            id: need("Vehicle_ID")?,
            x: need("Local_Y")?,
            y: need("Local_X")?,
            vx: None,
            vy: None,
            lane: need("Lane_ID")?,
        },
        Format::Highd => Columns {
            frame: need("frame")?,
            id: need("id")?,
            x: need("x")?,
            y: need("y")?,
            vx: find("xVelocity"),
            vy: find("yVelocity"),
            lane: need("laneId")?,
        },
    })
}

fn parse_field<T: FromStr>(path: &Path, row: usize, rec: &csv::StringRecord, col: usize, name: &str) -> Result<T> {
    let s = rec.get(col).unwrap_or("").trim();
    s.parse()
        .map_err(|_| ingest_err(path, row, format!("cannot parse {name} value `{s}`")))
}

fn parse_optional(path: &Path, row: usize, rec: &csv::StringRecord, col: Option<usize>, name: &str) -> Result<Option<f64>> {
    match col {
        None => Ok(None),
        Some(c) if rec.get(c).unwrap_or("").trim().is_empty() => Ok(None),
        Some(c) => parse_field(path, row, rec, c, name).map(Some),
    }
}

fn read_rows(path: &Path, format: Format) -> Result<Vec<RawRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| HarnessError::csv(path, e))?;
    let header = reader.headers().map_err(|e| HarnessError::csv(path, e))?.clone();
    let cols = resolve_columns(path, &header, format)?;
    let mut rows = Vec::new();
    let mut last_frame: HashMap<i64, i64> = HashMap::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| ingest_err(path, row, e.to_string()))?;
        let frame: i64 = parse_field(path, row, &rec, cols.frame, "frame")?;
        let vehicle_id: i64 = parse_field(path, row, &rec, cols.id, "vehicle id")?;
        let x: f64 = parse_field(path, row, &rec, cols.x, "x")?;
        let y: f64 = parse_field(path, row, &rec, cols.y, "y")?;
        let vx = parse_optional(path, row, &rec, cols.vx, "vx")?;
        let vy = parse_optional(path, row, &rec, cols.vy, "vy")?;
        let lane_id: i64 = parse_field(path, row, &rec, cols.lane, "lane id")?;
        if [Some(x), Some(y), vx, vy].iter().flatten().any(|v| !v.is_finite()) {
            return Err(ingest_err(path, row, "non-finite coordinate"));
        }
        if let Some(&prev) = last_frame.get(&vehicle_id) {
            if frame <= prev {
                return Err(ingest_err(
                    path,
                    row,
                    format!("frames of vehicle {vehicle_id} are not increasing ({prev} then {frame})"),
                ));
            }
        }
        last_frame.insert(vehicle_id, frame);
        rows.push(RawRow {
            row,
            frame,
            vehicle_id,
            x,
            y,
            vx,
            vy,
            lane_id,
        });
    }
    Ok(rows)
}

/// Reads a trajectory file and normalizes it. Records come back grouped by
/// vehicle id (ascending), frames ascending within a vehicle.
pub fn ingest(path: &Path, format: Format) -> Result<Vec<TrajectoryRecord>> {
    let rows = read_rows(path, format)?;
    let mut by_vehicle: BTreeMap<i64, Vec<RawRow>> = BTreeMap::new();
    for r in rows {
        by_vehicle.entry(r.vehicle_id).or_default().push(r);
    }
    let mut out = Vec::new();
    for (_, mut track) in by_vehicle {
        match format {
            Format::Canonical => {}
            Format::Ngsim => {
                for r in &mut track {
                    r.x *= FEET_TO_METERS;
                    r.y *= -FEET_TO_METERS;
                }
            }
            Format::Highd => {
                for r in &mut track {
                    r.y = -r.y;
                    r.vy = r.vy.map(|v| -v);
                }
                track = resample(&track, HIGHD_RATE_HZ, TARGET_RATE_HZ);
            }
        }
        out.extend(fill_velocities(&track));
    }
    Ok(out)
}

/// Linear interpolation of one track from `from_hz` onto the `to_hz` grid.
/// Output frame `k` sits at time `k / to_hz`.
fn resample(track: &[RawRow], from_hz: i64, to_hz: i64) -> Vec<RawRow> {
    let (Some(first), Some(last)) = (track.first(), track.last()) else {
        return Vec::new();
    };
    // Smallest k with k·from ≥ first·to, largest with k·from ≤ last·to.
    let k0 = (first.frame * to_hz).div_euclid(from_hz) + i64::from((first.frame * to_hz).rem_euclid(from_hz) != 0);
    let k1 = (last.frame * to_hz).div_euclid(from_hz);
    let lerp = |a: Option<f64>, b: Option<f64>, w: f64| match (a, b) {
        (Some(a), Some(b)) => Some(a + (b - a) * w),
        _ => None,
    };
    let mut out = Vec::new();
    let mut j = 0;
    for k in k0..=k1 {
        // Source position in source frames, as a rational k·from/to.
        let num = k * from_hz;
        while j + 1 < track.len() && track[j + 1].frame * to_hz <= num {
            j += 1;
        }
        let a = track[j];
        let r = if a.frame * to_hz == num || j + 1 == track.len() {
            RawRow { frame: k, ..a }
        } else {
            let b = track[j + 1];
            let w = (num - a.frame * to_hz) as f64 / ((b.frame - a.frame) * to_hz) as f64;
            RawRow {
                row: a.row,
                frame: k,
                vehicle_id: a.vehicle_id,
                x: a.x + (b.x - a.x) * w,
                y: a.y + (b.y - a.y) * w,
                vx: lerp(a.vx, b.vx, w),
                vy: lerp(a.vy, b.vy, w),
                lane_id: a.lane_id,
            }
        };
        out.push(r);
    }
    out
}

/// Central differences (one-sided at the ends) for missing velocities.
fn fill_velocities(track: &[RawRow]) -> Vec<TrajectoryRecord> {
    let n = track.len();
    let diff = |i: usize, f: fn(&RawRow) -> f64| -> f64 {
        if n < 2 {
            return 0.0;
        }
        let (a, b) = if i == 0 {
            (0, 1)
        } else if i == n - 1 {
            (n - 2, n - 1)
        } else {
            (i - 1, i + 1)
        };
        (f(&track[b]) - f(&track[a])) / ((track[b].frame - track[a].frame) as f64 * DT)
    };
    track
        .iter()
        .enumerate()
        .map(|(i, r)| TrajectoryRecord {
            frame: r.frame,
            vehicle_id: r.vehicle_id,
            x: r.x,
            y: r.y,
            vx: r.vx.unwrap_or_else(|| diff(i, |r| r.x)),
            vy: r.vy.unwrap_or_else(|| diff(i, |r| r.y)),
            lane_id: r.lane_id,
        })
        .collect()
}

pub fn write_canonical(path: &Path, records: &[TrajectoryRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::csv(path, e))?;
    w.write_record(CANONICAL_HEADER).map_err(|e| HarnessError::csv(path, e))?;
    for r in records {
        w.write_record([
            r.frame.to_string(),
            r.vehicle_id.to_string(),
            r.x.to_string(),
            r.y.to_string(),
            r.vx.to_string(),
            r.vy.to_string(),
            r.lane_id.to_string(),
        ])
        .map_err(|e| HarnessError::csv(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// Records of each vehicle, frames ascending.
pub fn tracks(records: &[TrajectoryRecord]) -> BTreeMap<i64, Vec<TrajectoryRecord>> {
    let mut out: BTreeMap<i64, Vec<TrajectoryRecord>> = BTreeMap::new();
    for r in records {
        out.entry(r.vehicle_id).or_default().push(*r);
    }
    for t in out.values_mut() {
        t.sort_by_key(|r| r.frame);
    }
    out
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use super::*;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn canonical_row_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let src = "frame,vehicle_id,x,y,vx,vy,lane_id\n100,7,350.2,11.1,28.5,0.1,3\n";
        let p = write(&dir, "a.csv", src);
        let recs = ingest(&p, Format::Canonical).unwrap();
        assert_eq!(
            recs,
            vec![TrajectoryRecord {
                frame: 100,
                vehicle_id: 7,
                x: 350.2,
                y: 11.1,
                vx: 28.5,
                vy: 0.1,
                lane_id: 3
            }]
        );
        let out = dir.path().join("b.csv");
        write_canonical(&out, &recs).unwrap();
        assert_eq!(std::fs::read_to_string(out).unwrap(), src);
    }

    #[test]
    fn ngsim_feet_become_meters() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "n.csv",
            "Vehicle_ID,Frame_ID,Local_X,Local_Y,Lane_ID\n1,1,0,32.8084,2\n1,2,0,65.6168,2\n",
        );
        let recs = ingest(&p, Format::Ngsim).unwrap();
        assert!((recs[0].x - 10.0).abs() < 1e-4);
        assert!((recs[1].x - 20.0).abs() < 1e-4);
        assert!((recs[0].vx - 100.0).abs() < 1e-3);
    }

    #[test]
    fn unknown_column_and_bad_order_name_the_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "u.csv", "frame,vehicle_id,x,y,vx,vy,lane_id,speed\n");
        let err = ingest(&p, Format::Canonical).unwrap_err();
        assert!(matches!(err, HarnessError::Ingest { row: 1, .. }), "{err}");
        let p = write(
            &dir,
            "o.csv",
            "frame,vehicle_id,x,y,vx,vy,lane_id\n2,1,0,0,0,0,1\n3,2,0,0,0,0,1\n1,1,0,0,0,0,1\n",
        );
        let err = ingest(&p, Format::Canonical).unwrap_err();
        assert!(matches!(err, HarnessError::Ingest { row: 4, .. }), "{err}");
    }

    #[test]
    fn highd_ramp_resamples_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::from("frame,id,x,y,xVelocity,yVelocity,laneId\n");
        for f in 1..=101 {
            let t = f as f64 / 25.0;
            body.push_str(&format!("{f},3,{},{},30,-0.5,2\n", 5.0 + 30.0 * t, 2.0 - 0.5 * t));
        }
        let p = write(&dir, "h.csv", &body);
        let recs = ingest(&p, Format::Highd).unwrap();
        assert_eq!(recs.first().unwrap().frame, 1);
        assert_eq!(recs.last().unwrap().frame, 40);
        for r in &recs {
            let t = r.frame as f64 / 10.0;
            assert!((r.x - (5.0 + 30.0 * t)).abs() < 1e-9);
            assert!((r.y + (2.0 - 0.5 * t)).abs() < 1e-9);
            assert!((r.vy - 0.5).abs() < 1e-12);
        }
    }
}
