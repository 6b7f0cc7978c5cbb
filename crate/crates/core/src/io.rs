//! File formats: curve CSV (`x,y` per line), curve collections as JSON,
//! fitted-model records, and atomic file writes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::coreg::MultiLevelKernel;
use crate::error::{Error, Result};
use crate::geometry::{Curve, Point};
use crate::gp::{FitDiagnostics, FittedModel, TrainingDesign};
use crate::kernels::NoiseSpec;
use crate::preprocess::Normalization;

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Parses `x,y` rows. A first row that is not numeric is taken as a header;
/// blank lines and lines starting with `#` are skipped.
pub fn parse_curve_csv(text: &str, path: &Path) -> Result<Vec<Point>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut points = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(path, line, e.to_string())
        })?;
        let line = record.position().map_or(k + 1, |p| p.line() as usize);
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        if record.len() != 2 {
            return Err(parse_err(path, line, format!("expected 2 fields, found {}", record.len())));
        }
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(v) if v.iter().all(|x| x.is_finite()) => points.push(Point::new(v[0], v[1])),
            Ok(_) => return Err(parse_err(path, line, "coordinates must be finite")),
            Err(_) if points.is_empty() && k == 0 => continue,
            Err(e) => return Err(parse_err(path, line, format!("invalid number: {e}"))),
        }
    }
    Ok(points)
}

pub fn read_curve_csv(path: &Path) -> Result<Curve> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let points = parse_curve_csv(&text, path)?;
    let id = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    Curve::with_id(id, points)
}

/// `x,y` header followed by one row per point, numbers in shortest
/// round-trip form.
pub fn curve_csv(points: &[Point]) -> String {
    let mut out = String::from("x,y\n");
    for p in points {
        out.push_str(&format!("{},{}\n", p.x, p.y));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    #[serde(default)]
    pub id: String,
    #[serde(default)]
    pub label: Option<i64>,
    pub points: Vec<[f64; 2]>,
}

impl CurveRecord {
    pub fn from_curve(c: &Curve) -> Self {
        Self {
            id: c.id().to_string(),
            label: c.label(),
            points: c.points().iter().map(|p| [p.x, p.y]).collect(),
        }
    }

    pub fn into_curve(self) -> Result<Curve> {
        let label = self.label;
        Curve::with_id(self.id, self.points.into_iter().map(|[x, y]| Point::new(x, y)).collect()).map(|c| c.with_label(label))
    }
}

fn json_error(path: &Path, e: serde_json::Error) -> Error {
    parse_err(path, e.line(), e.to_string())
}

pub fn read_collection_json(path: &Path) -> Result<Vec<Curve>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let records: Vec<CurveRecord> = serde_json::from_str(&text).map_err(|e| json_error(path, e))?;
    records
        .into_iter()
        .enumerate()
        .map(|(j, mut r)| {
            if r.id.is_empty() {
                r.id = format!("curve{j}");
            }
            r.into_curve()
        })
        .collect()
}

pub fn collection_json(curves: &[Curve]) -> Result<String> {
    let records: Vec<CurveRecord> = curves.iter().map(CurveRecord::from_curve).collect();
    to_json(&records)
}

/// Reads a curve CSV or a JSON collection, chosen by extension.
pub fn read_curves(path: &Path) -> Result<Vec<Curve>> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => read_collection_json(path),
        _ => Ok(vec![read_curve_csv(path)?]),
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| json_error(path, e))
}

/// Writes through a temporary file in the destination directory followed by
/// a rename, so readers never observe a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| io_err(&dir, e))?;
    tmp.write_all(contents).map_err(|e| io_err(path, e))?;
    tmp.as_file().sync_all().map_err(|e| io_err(path, e))?;
    tmp.persist(path).map_err(|e| io_err(path, e.error))?;
    Ok(())
}

/// Everything needed to rebuild a fitted model without refitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub curve_ids: Vec<String>,
    pub hyperparameters: MultiLevelKernel,
    pub noise: NoiseSpec,
    pub log_marginal_likelihood: f64,
    pub restart_scores: Vec<Option<f64>>,
    pub best_restart: Option<usize>,
    pub constraint_report: crate::kernels::ConstraintReport,
    pub jitter_added: f64,
    pub normalizations: Vec<Normalization>,
    pub design: TrainingDesign,
}

impl FitRecord {
    pub fn new(model: &FittedModel, curve_ids: Vec<String>, normalizations: Vec<Normalization>) -> Self {
        let d: &FitDiagnostics = &model.diagnostics;
        Self {
            curve_ids,
            hyperparameters: model.kernel().clone(),
            noise: *model.noise(),
            log_marginal_likelihood: d.log_marginal_likelihood,
            restart_scores: d.restart_scores.clone(),
            best_restart: d.best_restart,
            constraint_report: d.constraint_report.clone(),
            jitter_added: d.jitter_added,
            normalizations,
            design: model.design().clone(),
        }
    }

    pub fn to_model(&self) -> Result<FittedModel> {
        let mut m = FittedModel::condition(self.design.clone(), self.hyperparameters.clone(), self.noise)?;
        m.diagnostics.restart_scores = self.restart_scores.clone();
        m.diagnostics.best_restart = self.best_restart;
        m.diagnostics.constraint_report = self.constraint_report.clone();
        Ok(m)
    }
}
