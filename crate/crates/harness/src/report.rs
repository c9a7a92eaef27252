//! Report files: RMSE tables, configuration fingerprints and SVG plots.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rhino_core::hypergraph::MultiScaleHypergraph;
use rhino_core::scenario::ScenarioBatch;
use serde::Serialize;

use crate::config::Settings;
use crate::dataset::{ensure_dir, write_json};
use crate::error::{HarnessError, Result};
use crate::eval::EvalReport;

pub const RMSE_FILE: &str = "rmse.csv";
pub const CONFIG_FILE: &str = "config.json";
pub const CURVES_FILE: &str = "rmse.svg";

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

pub fn rmse_csv(report: &EvalReport) -> String {
    let mut out = String::from("horizon,rmse\n");
    for (h, v) in report.horizons.iter().zip(&report.rmse) {
        let _ = writeln!(out, "{h},{v}");
    }
    out
}

/// Parses `horizon,rmse` rows.
pub fn parse_rmse_csv(path: &Path) -> Result<Vec<(usize, f64)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| HarnessError::csv(path, e))?;
    let mut out = Vec::new();
    for rec in r.deserialize() {
        let row: (usize, f64) = rec.map_err(|e| HarnessError::csv(path, e))?;
        out.push(row);
    }
    Ok(out)
}

/// `variant,horizon,rmse` rows for several reports.
pub fn comparison_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("variant,horizon,rmse\n");
    for r in reports {
        for (h, v) in r.horizons.iter().zip(&r.rmse) {
            let _ = writeln!(out, "{},{h},{v}", r.model);
        }
    }
    out
}

/// Error-versus-horizon curves, one polyline per report.
pub fn error_curves_svg(reports: &[EvalReport]) -> String {
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let max_h = reports
        .iter()
        .flat_map(|r| r.horizons.iter().copied())
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let max_v = reports
        .iter()
        .flat_map(|r| r.rmse.iter().copied())
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let px = |x: f64| pad + x / max_h * (w - 2.0 * pad);
    let py = |y: f64| h - pad - y / max_v * (h - 2.0 * pad);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{pad} {pad} L{pad} {} L{} {}" fill="none" stroke="black"/>"#,
        h - pad,
        w - pad,
        h - pad
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="12">horizon (frames)</text>"#, w / 2.0 - 40.0, h - 15.0);
    let _ = writeln!(s, r#"<text x="5" y="{}" font-size="12">RMSE (m), max {max_v:.3}</text>"#, pad - 20.0);
    for (i, r) in reports.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = r
            .horizons
            .iter()
            .zip(&r.rmse)
            .map(|(&x, &y)| format!("{:.2},{:.2}", px(x as f64), py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline data-variant="{}" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            r.model,
            pts.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="12" fill="{color}">{}</text>"#,
            w - pad - 60.0,
            pad + 15.0 * i as f64,
            r.model
        );
    }
    s.push_str("</svg>\n");
    s
}

#[derive(Serialize)]
struct ConfigFingerprint<'a> {
    fingerprint: String,
    settings: &'a Settings,
    reports: &'a [EvalReport],
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

/// Writes `rmse.csv`, `config.json` and `rmse.svg` for one or more reports.
/// With several reports the CSV gains a leading `variant` column.
pub fn emit_report(reports: &[EvalReport], settings: &Settings, out_dir: &Path) -> Result<()> {
    ensure_dir(out_dir)?;
    let csv = match reports {
        [] => String::from("horizon,rmse\n"),
        [one] => rmse_csv(one),
        many => comparison_csv(many),
    };
    write_text(&out_dir.join(RMSE_FILE), &csv)?;
    write_json(
        &out_dir.join(CONFIG_FILE),
        &ConfigFingerprint {
            fingerprint: settings.fingerprint(),
            settings,
            reports,
        },
    )?;
    write_text(&out_dir.join(CURVES_FILE), &error_curves_svg(reports))
}

/// Trajectories of a scenario with each hyperedge drawn as the polygon of
/// its members' positions at the last history frame.
pub fn hypergraph_svg(scenario: &ScenarioBatch, hg: &MultiScaleHypergraph) -> String {
    let (t, n, f) = (scenario.t(), scenario.n_agents(), scenario.f());
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for i in 0..n {
        for k in 0..t {
            pts.push((scenario.history.get(&[k, i, 0]), scenario.history.get(&[k, i, 1])));
        }
        for k in 0..f {
            pts.push((scenario.future.get(&[k, i, 0]), scenario.future.get(&[k, i, 1])));
        }
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in &pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let (w, h, pad) = (900.0, 300.0, 20.0);
    let sx = (w - 2.0 * pad) / (x1 - x0).max(1e-6);
    let sy = (h - 2.0 * pad) / (y1 - y0).max(1e-6);
    // +y is left, drawn upwards.
    let map = |x: f64, y: f64| (pad + (x - x0) * sx, h - pad - (y - y0) * sy);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    for (si, scale) in hg.scales.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        for members in scale.hypergraph.hyperedges() {
            let poly: Vec<String> = members
                .iter()
                .map(|&i| {
                    let (px, py) = map(scenario.history.get(&[t - 1, i, 0]), scenario.history.get(&[t - 1, i, 1]));
                    format!("{px:.1},{py:.1}")
                })
                .collect();
            let _ = writeln!(
                s,
                r#"<polygon data-scale="{}" points="{}" fill="{color}" fill-opacity="0.12" stroke="{color}"/>"#,
                scale.scale,
                poly.join(" ")
            );
        }
    }
    for i in 0..n {
        let hist: Vec<String> = (0..t)
            .map(|k| {
                let (px, py) = map(scenario.history.get(&[k, i, 0]), scenario.history.get(&[k, i, 1]));
                format!("{px:.1},{py:.1}")
            })
            .collect();
        let fut: Vec<String> = (0..f)
            .map(|k| {
                let (px, py) = map(scenario.future.get(&[k, i, 0]), scenario.future.get(&[k, i, 1]));
                format!("{px:.1},{py:.1}")
            })
            .collect();
        let label = scenario.slots.get(i).cloned().unwrap_or_default();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="black"/>"#, hist.join(" "));
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="gray" stroke-dasharray="4 3"/>"#, fut.join(" "));
        let (px, py) = map(scenario.history.get(&[t - 1, i, 0]), scenario.history.get(&[t - 1, i, 1]));
        let _ = writeln!(s, r#"<text x="{px:.1}" y="{:.1}" font-size="11">{label}</text>"#, py - 4.0);
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(model: &str, values: Vec<f64>) -> EvalReport {
        EvalReport::new(model, &[10, 20, 30, 40, 50], values, 3, 10, "abc".into())
    }

    #[test]
    fn empty_report_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        emit_report(&[], &Settings::default(), dir.path()).unwrap();
        assert_eq!(fs::read_to_string(dir.path().join(RMSE_FILE)).unwrap(), "horizon,rmse\n");
    }

    #[test]
    fn csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let r = report("full", vec![0.1, 0.25, 1.0 / 3.0, 0.5, 1e-7]);
        emit_report(std::slice::from_ref(&r), &Settings::default(), dir.path()).unwrap();
        let back = parse_rmse_csv(&dir.path().join(RMSE_FILE)).unwrap();
        let expected: Vec<(usize, f64)> = r.horizons.iter().copied().zip(r.rmse.iter().copied()).collect();
        assert_eq!(back, expected);
    }

    #[test]
    fn one_polyline_per_variant() {
        let reports: Vec<EvalReport> = ["full", "no_hg", "no_mm"].iter().map(|m| report(m, vec![1.0; 5])).collect();
        let svg = error_curves_svg(&reports);
        assert_eq!(svg.matches("<polyline").count(), 3);
        for m in ["full", "no_hg", "no_mm"] {
            assert!(svg.contains(&format!(r#"data-variant="{m}""#)));
        }
    }
}
