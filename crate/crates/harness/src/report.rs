//! CSV, JSON and SVG emission of metrics tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::OutputFormat;
use crate::error::{HarnessError, Result};
use crate::grid::{select_best, CellFailure};
use crate::run::MetricsRow;

pub const CSV_HEADER: &str =
    "run_id,sampler,grid,steps,nfe,order,guidance_scale,seed,sw2,mean_err,cov_err,mode_mass_err,wall_ms";
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDoc {
    pub schema_version: u32,
    pub rows: Vec<MetricsRow>,
    pub best: BTreeMap<String, String>,
    #[serde(default)]
    pub failures: Vec<CellFailure>,
}

impl ReportDoc {
    pub fn new(rows: Vec<MetricsRow>, failures: Vec<CellFailure>) -> Self {
        let best = select_best(&rows);
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            rows,
            best,
            failures,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| HarnessError::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Self =
            serde_json::from_str(text).map_err(|e| HarnessError::Format(e.to_string()))?;
        if doc.schema_version != REPORT_SCHEMA_VERSION {
            return Err(HarnessError::Format(format!(
                "unsupported report schema {}",
                doc.schema_version
            )));
        }
        Ok(doc)
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn to_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            csv_field(&r.run_id),
            csv_field(&r.sampler),
            csv_field(&r.grid),
            r.steps,
            r.nfe,
            r.order,
            r.guidance_scale,
            r.seed,
            r.sw2,
            r.mean_err,
            r.cov_err,
            r.mode_mass_err,
            r.wall_ms
        );
    }
    out
}

/// Sampler label used for curve grouping, e.g. `dpmpp3`.
pub fn series_label(row: &MetricsRow) -> String {
    match row.sampler.as_str() {
        "dpmpp" | "unipc" => format!("{}{}", row.sampler, row.order),
        s => s.to_string(),
    }
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];

/// Log-log chart of SW2 against NFE with one polyline per sampler.
pub fn to_svg(rows: &[MetricsRow]) -> String {
    let (w, h, pad) = (640.0, 420.0, 60.0);
    let mut series: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows {
        let y = r.sw2.max(1e-12);
        series
            .entry(series_label(r))
            .or_default()
            .push(((r.nfe.max(1)) as f64, y));
    }
    let pts = series.values().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for (x, y) in pts {
        x0 = x0.min(x.log10());
        x1 = x1.max(x.log10());
        y0 = y0.min(y.log10());
        y1 = y1.max(y.log10());
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-9 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-9 {
        y1 = y0 + 1.0;
    }
    let px = |x: f64| pad + (x.log10() - x0) / (x1 - x0) * (w - 2.0 * pad);
    let py = |y: f64| h - pad - (y.log10() - y0) / (y1 - y0) * (h - 2.0 * pad);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<line x1="{pad}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{pad}" y1="{pad}" x2="{pad}" y2="{b}" stroke="black"/>"#,
        b = h - pad,
        r = w - pad
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="13">NFE (log)</text>"#,
        w / 2.0,
        h - 15.0
    );
    let _ = writeln!(
        out,
        r#"<text x="15" y="{}" text-anchor="middle" font-size="13" transform="rotate(-90 15 {})">SW2 (log)</text>"#,
        h / 2.0,
        h / 2.0
    );
    for (i, (label, mut pts)) in series.into_iter().enumerate() {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = pts
            .iter()
            .map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"><title>{label}</title></polyline>"#,
            coords.join(" ")
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-size="12" fill="{color}">{label}</text>"#,
            w - pad + 5.0,
            pad + 16.0 * i as f64
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Writes the requested formats into `dir` and returns the written paths.
pub fn emit_report(
    rows: &[MetricsRow],
    failures: &[CellFailure],
    formats: &[OutputFormat],
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    if rows.is_empty() {
        return Err(HarnessError::Format("no rows to report".into()));
    }
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for f in formats {
        let (name, body) = match f {
            OutputFormat::Csv => ("metrics.csv", to_csv(rows)),
            OutputFormat::Json => (
                "report.json",
                ReportDoc::new(rows.to_vec(), failures.to_vec()).to_json()?,
            ),
            OutputFormat::Svg => ("sw2_vs_nfe.svg", to_svg(rows)),
        };
        let path = dir.join(name);
        std::fs::write(&path, body)?;
        written.push(path);
    }
    Ok(written)
}
