//! Metrics CSV and accuracy-vs-round SVG charts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::experiment::{write_atomic, MetricsLog, RoundRecord};
use crate::error::{invalid, Error, Result};

pub const SCHEMA_LINE: &str = "# dscfl-metrics schema=1";
pub const COLUMNS: [&str; 8] = [
    "round",
    "train_loss",
    "test_accuracy",
    "grad_norm",
    "num_groups",
    "mean_group_size",
    "mean_label_coverage",
    "wall_clock_s",
];

/// Schema line, header, one row per round. Floats use the shortest
/// representation that parses back to the same value; a missing accuracy is
/// an empty field.
pub fn metrics_csv(records: &[RoundRecord]) -> String {
    let mut out = format!("{SCHEMA_LINE}\n{}\n", COLUMNS.join(","));
    for r in records {
        let acc = r.test_accuracy.map(|a| a.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.round,
            r.train_loss,
            acc,
            r.grad_norm,
            r.num_groups,
            r.mean_group_size,
            r.mean_label_coverage,
            r.wall_clock_s
        )
        .expect("writing to a String");
    }
    out
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<RoundRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(SCHEMA_LINE) {
        return Err(invalid("metrics file has no recognised schema line"));
    }
    if lines.next() != Some(COLUMNS.join(",").as_str()) {
        return Err(invalid("metrics header does not match schema 1"));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != COLUMNS.len() {
                return Err(invalid(format!("metrics row {}: expected {} fields", i + 1, COLUMNS.len())));
            }
            let bad = |c: usize| invalid(format!("metrics row {}: bad {} '{}'", i + 1, COLUMNS[c], f[c]));
            let num = |c: usize| f[c].parse::<f64>().map_err(|_| bad(c));
            let int = |c: usize| f[c].parse::<usize>().map_err(|_| bad(c));
            Ok(RoundRecord {
                round: int(0)?,
                train_loss: num(1)?,
                test_accuracy: if f[2].is_empty() { None } else { Some(num(2)?) },
                grad_norm: num(3)?,
                num_groups: int(4)?,
                mean_group_size: num(5)?,
                mean_label_coverage: num(6)?,
                wall_clock_s: num(7)?,
            })
        })
        .collect()
}

/// Drops the trailing wall-clock column, for byte comparisons across runs.
pub fn strip_wall_clock(csv: &str) -> String {
    csv.lines()
        .map(|l| if l.starts_with('#') { l } else { l.rsplit_once(',').map_or(l, |(head, _)| head) })
        .collect::<Vec<_>>()
        .join("\n")
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Accuracy-vs-round chart with one labelled polyline per series.
pub fn accuracy_svg(series: &[(String, Vec<(usize, f64)>)]) -> Result<String> {
    if series.is_empty() || series.iter().all(|(_, pts)| pts.is_empty()) {
        return Err(invalid("nothing to plot"));
    }
    let (w, h, left, right, top, bottom) = (720.0, 440.0, 60.0, 160.0, 20.0, 50.0);
    let max_round = series.iter().flat_map(|(_, p)| p.iter().map(|(r, _)| *r)).max().unwrap_or(1).max(1) as f64;
    let px = |r: f64| left + (w - left - right) * r / max_round;
    let py = |a: f64| top + (h - top - bottom) * (1.0 - a.clamp(0.0, 1.0));

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    for i in 0..=5 {
        let a = i as f64 / 5.0;
        let y = py(a);
        let _ = writeln!(s, r##"<line x1="{left}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/>"##, w - right);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{a:.1}</text>"#, left - 6.0, y + 4.0);
    }
    let ticks = 5usize;
    for i in 0..=ticks {
        let r = (max_round * i as f64 / ticks as f64).round();
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{r}</text>"#, px(r), h - bottom + 18.0);
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">round</text>"#, px(max_round / 2.0), h - 8.0);
    let _ = writeln!(s, r#"<text x="14" y="{:.1}" transform="rotate(-90 14 {:.1})" text-anchor="middle">test accuracy</text>"#, py(0.5), py(0.5));
    let _ = writeln!(s, r#"<rect x="{left}" y="{top}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#, w - left - right, h - top - bottom);
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = pts.iter().map(|&(r, a)| format!("{:.1},{:.1}", px(r as f64), py(a))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, path.join(" "));
        let ly = top + 16.0 * (i as f64 + 1.0);
        let lx = w - right + 12.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, escape(name));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Svg,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "svg" => Ok(ReportFormat::Svg),
            _ => Err(invalid(format!("unknown report format '{s}'"))),
        }
    }
}

/// Writes `report.csv` (one run) or `accuracy.svg` (all runs) into `out_dir`
/// and returns the written path.
pub fn emit_report(logs: &[(String, MetricsLog)], format: ReportFormat, out_dir: &Path) -> Result<PathBuf> {
    if logs.is_empty() || logs.iter().any(|(_, l)| l.records.is_empty()) {
        return Err(invalid("cannot report an empty log"));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    match format {
        ReportFormat::Csv => {
            if logs.len() != 1 {
                return Err(invalid("CSV reports take exactly one run"));
            }
            let path = out_dir.join("report.csv");
            write_atomic(&path, metrics_csv(&logs[0].1.records).as_bytes())?;
            Ok(path)
        }
        ReportFormat::Svg => {
            let series: Vec<(String, Vec<(usize, f64)>)> = logs
                .iter()
                .map(|(name, l)| {
                    (name.clone(), l.records.iter().filter_map(|r| r.test_accuracy.map(|a| (r.round, a))).collect())
                })
                .collect();
            let path = out_dir.join("accuracy.svg");
            write_atomic(&path, accuracy_svg(&series)?.as_bytes())?;
            Ok(path)
        }
    }
}
