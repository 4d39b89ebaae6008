//! Report serialization (CSV and JSON), figure-curve extraction and the
//! point-table format.
//!
//! Floating-point values are written with 17 significant digits so they read
//! back to the identical `f64`. Non-finite values become `NaN` in CSV and
//! `null` in JSON.

use std::fmt::Write as _;
use std::io::{self, Write};
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::experiment::{CellReport, ExperimentReport, Moments, Provenance};
use crate::geometry::{BiplanarRig, Vec3};
use crate::sampling::score_point;

/// Version of both the CSV column layout and the JSON document.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

pub const CSV_COLUMNS: [&str; 10] = [
    "pp_level_px",
    "focal_level_px",
    "n_trials",
    "n_failed",
    "recon_rmse_mean_mm",
    "recon_rmse_std_mm",
    "reproj_ap_mean_px",
    "reproj_ap_std_px",
    "reproj_lat_mean_px",
    "reproj_lat_std_px",
];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported report schema version {0}")]
    Schema(u32),
    #[error("unexpected CSV header: {0}")]
    Header(String),
    #[error("no such pp level: {0}")]
    NoSuchPpLevel(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

pub fn format_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        "NaN".to_string()
    }
}

fn json_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        "null".to_string()
    }
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("strings serialize")
}

fn cell_values(c: &CellReport) -> [f64; 8] {
    [
        c.pp_level,
        c.focal_level,
        c.recon_rmse.mean,
        c.recon_rmse.std,
        c.reproj_ap.mean,
        c.reproj_ap.std,
        c.reproj_lat.mean,
        c.reproj_lat.std,
    ]
}

pub fn write_csv<W: Write>(report: &ExperimentReport, out: W) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for c in &report.cells {
        let v = cell_values(c);
        w.write_record([
            format_f64(v[0]),
            format_f64(v[1]),
            c.n_trials.to_string(),
            c.n_failed.to_string(),
            format_f64(v[2]),
            format_f64(v[3]),
            format_f64(v[4]),
            format_f64(v[5]),
            format_f64(v[6]),
            format_f64(v[7]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn to_json(report: &ExperimentReport) -> String {
    let p = &report.provenance;
    let list = |items: &[String]| {
        items
            .iter()
            .map(|s| json_str(s))
            .collect::<Vec<_>>()
            .join(", ")
    };
    let mut s = String::new();
    s.push_str("{\n");
    let _ = writeln!(s, "  \"schema_version\": {REPORT_SCHEMA_VERSION},");
    s.push_str("  \"provenance\": {\n");
    let _ = writeln!(s, "    \"seed\": {},", p.seed);
    let _ = writeln!(s, "    \"config_digest\": {},", json_str(&p.config_digest));
    let _ = writeln!(
        s,
        "    \"perturbation_mode\": {},",
        json_str(&p.perturbation_mode)
    );
    let _ = writeln!(s, "    \"point_source\": {},", json_str(&p.point_source));
    let _ = writeln!(s, "    \"landmarks\": {},", json_str(&p.landmarks));
    let _ = writeln!(s, "    \"std_estimator\": {},", json_str(&p.std_estimator));
    let _ = writeln!(s, "    \"spread_sources\": [{}],", list(&p.spread_sources));
    let _ = writeln!(s, "    \"eval_points\": {},", p.eval_points);
    let _ = writeln!(s, "    \"landmark_points\": {},", p.landmark_points);
    let _ = writeln!(s, "    \"partial\": {},", p.partial);
    let _ = writeln!(s, "    \"notes\": [{}]", list(&p.notes));
    s.push_str("  },\n");
    s.push_str("  \"cells\": [");
    for (i, c) in report.cells.iter().enumerate() {
        let v = cell_values(c);
        s.push_str(if i == 0 { "\n" } else { ",\n" });
        s.push_str("    {");
        let _ = write!(
            s,
            "\"{}\": {}, \"{}\": {}, \"{}\": {}, \"{}\": {}",
            CSV_COLUMNS[0],
            json_f64(v[0]),
            CSV_COLUMNS[1],
            json_f64(v[1]),
            CSV_COLUMNS[2],
            c.n_trials,
            CSV_COLUMNS[3],
            c.n_failed
        );
        for (name, val) in CSV_COLUMNS[4..].iter().zip(&v[2..]) {
            let _ = write!(s, ", \"{name}\": {}", json_f64(*val));
        }
        s.push('}');
    }
    s.push_str(if report.cells.is_empty() {
        "]\n"
    } else {
        "\n  ]\n"
    });
    s.push_str("}\n");
    s
}

pub fn write_json<W: Write>(report: &ExperimentReport, mut out: W) -> Result<(), ReportError> {
    out.write_all(to_json(report).as_bytes())?;
    Ok(())
}

pub fn write_report(
    report: &ExperimentReport,
    format: ReportFormat,
    path: &Path,
) -> Result<(), ReportError> {
    let file = io::BufWriter::new(std::fs::File::create(path)?);
    match format {
        ReportFormat::Csv => write_csv(report, file),
        ReportFormat::Json => write_json(report, file),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonDoc {
    schema_version: u32,
    provenance: JsonProvenance,
    cells: Vec<JsonCell>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonProvenance {
    seed: u64,
    config_digest: String,
    perturbation_mode: String,
    point_source: String,
    landmarks: String,
    std_estimator: String,
    spread_sources: Vec<String>,
    eval_points: usize,
    landmark_points: usize,
    partial: bool,
    notes: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonCell {
    pp_level_px: f64,
    focal_level_px: f64,
    n_trials: usize,
    n_failed: usize,
    recon_rmse_mean_mm: Option<f64>,
    recon_rmse_std_mm: Option<f64>,
    reproj_ap_mean_px: Option<f64>,
    reproj_ap_std_px: Option<f64>,
    reproj_lat_mean_px: Option<f64>,
    reproj_lat_std_px: Option<f64>,
}

fn moments(mean: Option<f64>, std: Option<f64>) -> Moments {
    Moments {
        mean: mean.unwrap_or(f64::NAN),
        std: std.unwrap_or(f64::NAN),
    }
}

/// Reads a JSON report. Per-trial data is not stored, so `trials` is empty.
pub fn parse_json(text: &str) -> Result<ExperimentReport, ReportError> {
    let doc: JsonDoc = serde_json::from_str(text)?;
    if doc.schema_version != REPORT_SCHEMA_VERSION {
        return Err(ReportError::Schema(doc.schema_version));
    }
    let p = doc.provenance;
    Ok(ExperimentReport {
        cells: doc
            .cells
            .into_iter()
            .map(|c| CellReport {
                focal_level: c.focal_level_px,
                pp_level: c.pp_level_px,
                n_trials: c.n_trials,
                n_failed: c.n_failed,
                recon_rmse: moments(c.recon_rmse_mean_mm, c.recon_rmse_std_mm),
                reproj_ap: moments(c.reproj_ap_mean_px, c.reproj_ap_std_px),
                reproj_lat: moments(c.reproj_lat_mean_px, c.reproj_lat_std_px),
            })
            .collect(),
        provenance: Provenance {
            seed: p.seed,
            config_digest: p.config_digest,
            perturbation_mode: p.perturbation_mode,
            point_source: p.point_source,
            landmarks: p.landmarks,
            std_estimator: p.std_estimator,
            spread_sources: p.spread_sources,
            eval_points: p.eval_points,
            landmark_points: p.landmark_points,
            partial: p.partial,
            notes: p.notes,
        },
        trials: Vec::new(),
    })
}

/// Reads the cell rows of a CSV report.
pub fn read_csv<R: io::Read>(input: R) -> Result<Vec<CellReport>, ReportError> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_COLUMNS {
        return Err(ReportError::Header(header.join(",")));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let f = |i: usize| rec[i].parse::<f64>().unwrap_or(f64::NAN);
        let n = |i: usize| rec[i].parse::<usize>().unwrap_or(0);
        out.push(CellReport {
            pp_level: f(0),
            focal_level: f(1),
            n_trials: n(2),
            n_failed: n(3),
            recon_rmse: Moments {
                mean: f(4),
                std: f(5),
            },
            reproj_ap: Moments {
                mean: f(6),
                std: f(7),
            },
            reproj_lat: Moments {
                mean: f(8),
                std: f(9),
            },
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Recon,
    ReprojAp,
    ReprojLat,
}

impl Metric {
    fn pick(&self, c: &CellReport) -> Moments {
        match self {
            Metric::Recon => c.recon_rmse,
            Metric::ReprojAp => c.reproj_ap,
            Metric::ReprojLat => c.reproj_lat,
        }
    }
}

/// One point of a figure curve: focal level, mean and standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub x: f64,
    pub y: f64,
    pub err: f64,
}

/// The error-vs-focal-level curve at one principal-point level, sorted by
/// focal level.
pub fn figure_curve(
    cells: &[CellReport],
    pp_level: f64,
    metric: Metric,
) -> Result<Vec<CurvePoint>, ReportError> {
    let mut pts: Vec<CurvePoint> = cells
        .iter()
        .filter(|c| c.pp_level == pp_level)
        .map(|c| {
            let m = metric.pick(c);
            CurvePoint {
                x: c.focal_level,
                y: m.mean,
                err: m.std,
            }
        })
        .collect();
    if pts.is_empty() {
        return Err(ReportError::NoSuchPpLevel(pp_level));
    }
    pts.sort_by(|a, b| a.x.total_cmp(&b.x));
    Ok(pts)
}

pub fn write_curve<W: Write>(curve: &[CurvePoint], out: W) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", "y", "err"])?;
    for p in curve {
        w.write_record([format_f64(p.x), format_f64(p.y), format_f64(p.err)])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-point projections and filter scores, one row per point. Points
/// behind either source are skipped.
pub fn write_point_table<W: Write>(
    points: &[Vec3],
    rig: &BiplanarRig,
    out: W,
) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "x_mm",
        "y_mm",
        "z_mm",
        "ap_u_px",
        "ap_v_px",
        "lat_u_px",
        "lat_v_px",
        "edge_score_px",
        "disparity_px",
    ])?;
    for p in points {
        let Some(s) = score_point(p, rig) else {
            continue;
        };
        let row = [
            p.x,
            p.y,
            p.z,
            s.ap.x,
            s.ap.y,
            s.lat.x,
            s.lat.y,
            s.edge_score,
            s.disparity,
        ];
        w.write_record(row.map(format_f64))?;
    }
    w.flush()?;
    Ok(())
}
