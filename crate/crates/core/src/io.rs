//! CSV and JSON readers and writers.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytic::ErrorSummary;
use crate::field::FieldError;
use crate::grid::{GridError, GridRegion, ZoneKind, ZoneSystem};
use crate::interp::PredictionSet;
use crate::mc::McErrorEstimate;
use crate::regression::FitResult;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("cell ({0}, {1}) is outside the grid")]
    CellOutOfBounds(usize, usize),
    #[error("cell ({0}, {1}) appears twice")]
    DuplicateCell(usize, usize),
    #[error("{0} cells have no value")]
    MissingCells(usize),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

pub fn open(path: &Path) -> Result<std::fs::File, IoError> {
    std::fs::File::open(path).map_err(|source| IoError::File { path: path.display().to_string(), source })
}

pub fn create(path: &Path) -> Result<std::fs::File, IoError> {
    std::fs::File::create(path).map_err(|source| IoError::File { path: path.display().to_string(), source })
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRow {
    row: usize,
    col: usize,
    label: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct ValueRow {
    row: usize,
    col: usize,
    value: f64,
}

/// Places `(row, col, v)` records into a row-major vector covering every cell once.
fn place<V>(n_rows: usize, n_cols: usize, items: Vec<(usize, usize, V)>) -> Result<Vec<V>, IoError> {
    let mut out: Vec<Option<V>> = (0..n_rows * n_cols).map(|_| None).collect();
    for (r, c, v) in items {
        if r >= n_rows || c >= n_cols {
            return Err(IoError::CellOutOfBounds(r, c));
        }
        if out[r * n_cols + c].replace(v).is_some() {
            return Err(IoError::DuplicateCell(r, c));
        }
    }
    let missing = out.iter().filter(|v| v.is_none()).count();
    if missing > 0 {
        return Err(IoError::MissingCells(missing));
    }
    Ok(out.into_iter().flatten().collect())
}

/// Reads a `row,col,label` file into a zone system.
pub fn read_zone_labels<T: Scalar, R: Read>(
    reader: R,
    region: GridRegion<T>,
    kind: ZoneKind,
) -> Result<ZoneSystem<T>, IoError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let rows: Vec<LabelRow> = rdr.deserialize().collect::<Result<_, _>>()?;
    let labels = place(region.n_rows, region.n_cols, rows.into_iter().map(|r| (r.row, r.col, r.label)).collect())?;
    Ok(ZoneSystem::from_labels(region, &labels, kind)?)
}

pub fn write_zone_labels<T: Scalar, W: Write>(writer: W, zones: &ZoneSystem<T>) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(writer);
    let region = zones.region();
    for (cell, label) in zones.labels().into_iter().enumerate() {
        let (row, col) = region.row_col(cell);
        w.serialize(LabelRow { row, col, label: label.to_string() })?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a `row,col,value` file into row-major per-cell values.
pub fn read_field<T: Scalar, R: Read>(reader: R, region: &GridRegion<T>) -> Result<Vec<T>, IoError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let rows: Vec<ValueRow> = rdr.deserialize().collect::<Result<_, _>>()?;
    let values = place(region.n_rows, region.n_cols, rows.into_iter().map(|r| (r.row, r.col, T::of(r.value))).collect())?;
    Ok(values)
}

pub fn write_field<T: Scalar, W: Write>(writer: W, region: &GridRegion<T>, values: &[T]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(writer);
    for (cell, v) in values.iter().enumerate() {
        let (row, col) = region.row_col(cell);
        w.serialize(ValueRow { row, col, value: v.as_f64() })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct PredictionRow {
    pub method: String,
    pub source_id: String,
    pub target_id: String,
    pub value: f64,
}

/// Intersection-level predictions, one line per entry.
pub fn write_predictions<T: Scalar, W: Write>(writer: W, sets: &[&PredictionSet<T>]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(writer);
    for set in sets {
        for p in &set.entries {
            w.serialize(PredictionRow {
                method: set.method.to_string(),
                source_id: set.source_ids[p.source].clone(),
                target_id: set.target_ids[p.target].clone(),
                value: p.value.as_f64(),
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions<R: Read>(reader: R) -> Result<Vec<PredictionRow>, IoError> {
    Ok(csv::Reader::from_reader(reader).deserialize().collect::<Result<_, _>>()?)
}

/// One line of an error report. Analytic rows leave `std_error` and `replicates` empty.
#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ErrorRow {
    pub scope: String,
    pub scope_id: String,
    pub method: String,
    pub bias: f64,
    pub variance: f64,
    pub mse: f64,
    pub relative: f64,
    pub std_error: Option<f64>,
    pub replicates: Option<usize>,
}

impl<T: Scalar> From<&ErrorSummary<T>> for ErrorRow {
    fn from(e: &ErrorSummary<T>) -> Self {
        Self {
            scope: e.scope.as_str().into(),
            scope_id: e.scope_id.clone(),
            method: e.method.to_string(),
            bias: e.bias.as_f64(),
            variance: e.variance.as_f64(),
            mse: e.mse.as_f64(),
            relative: e.relative.as_f64(),
            std_error: None,
            replicates: None,
        }
    }
}

impl From<&McErrorEstimate> for ErrorRow {
    fn from(e: &McErrorEstimate) -> Self {
        Self {
            scope: e.scope.as_str().into(),
            scope_id: e.scope_id.clone(),
            method: e.label.clone(),
            bias: e.bias_hat,
            variance: e.variance_hat,
            mse: e.mse_hat,
            relative: e.relative_hat,
            std_error: Some(e.std_error),
            replicates: Some(e.replicates),
        }
    }
}

pub fn write_error_report<W: Write>(writer: W, rows: &[ErrorRow]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_error_report<R: Read>(reader: R) -> Result<Vec<ErrorRow>, IoError> {
    Ok(csv::Reader::from_reader(reader).deserialize().collect::<Result<_, _>>()?)
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FitJson {
    pub gamma_hat: Vec<f64>,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub boundary: bool,
}

impl<T: Scalar> From<&FitResult<T>> for FitJson {
    fn from(f: &FitResult<T>) -> Self {
        Self {
            gamma_hat: f.gamma_hat.iter().map(|v| v.as_f64()).collect(),
            loglik: f.loglik.as_f64(),
            iterations: f.iterations,
            converged: f.converged,
            boundary: f.boundary,
        }
    }
}

pub fn write_fit_json<T: Scalar, W: Write>(writer: W, fit: &FitResult<T>) -> Result<(), IoError> {
    serde_json::to_writer_pretty(writer, &FitJson::from(fit))?;
    Ok(())
}

pub fn read_fit_json<R: Read>(reader: R) -> Result<FitJson, IoError> {
    Ok(serde_json::from_reader(reader)?)
}

/// Writes arbitrary serializable rows with a header taken from field names.
pub fn write_rows<S: Serialize, W: Write>(writer: W, rows: &[S]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-cell heatmap as a standalone SVG, white to dark red.
pub fn write_svg_heatmap<T: Scalar, W: Write>(
    mut writer: W,
    region: &GridRegion<T>,
    values: &[T],
    title: &str,
) -> Result<(), IoError> {
    const PX: usize = 24;
    let (w, h) = (region.n_cols * PX, region.n_rows * PX + 20);
    let max = values.iter().fold(0.0f64, |m, v| m.max(v.as_f64()));
    writeln!(writer, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#)?;
    writeln!(writer, r#"<text x="2" y="14" font-family="sans-serif" font-size="12">{}</text>"#, escape(title))?;
    for (cell, v) in values.iter().enumerate() {
        let (r, c) = region.row_col(cell);
        let t = if max > 0.0 { v.as_f64().max(0.0) / max } else { 0.0 };
        let g = (255.0 * (1.0 - t)).round() as u8;
        let red = (255.0 - 100.0 * t).round() as u8;
        writeln!(
            writer,
            r#"<rect x="{}" y="{}" width="{PX}" height="{PX}" fill="rgb({red},{g},{g})"><title>{}</title></rect>"#,
            c * PX,
            r * PX + 20,
            v.as_f64()
        )?;
    }
    writeln!(writer, "</svg>")?;
    Ok(())
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_round_trip() {
        let r = GridRegion::new(2, 2, 1.0f64).unwrap();
        let z = ZoneSystem::from_labels(r, &["a", "b", "a", "b"], ZoneKind::Source).unwrap();
        let mut buf = Vec::new();
        write_zone_labels(&mut buf, &z).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("row,col,label\n0,0,a\n"));
        let back = read_zone_labels(buf.as_slice(), r, ZoneKind::Source).unwrap();
        assert_eq!(back, z);
    }

    #[test]
    fn label_file_errors() {
        let r = GridRegion::new(1, 2, 1.0f64).unwrap();
        let short = "row,col,label\n0,0,a\n";
        assert!(matches!(read_zone_labels(short.as_bytes(), r, ZoneKind::Source), Err(IoError::MissingCells(1))));
        let dup = "row,col,label\n0,0,a\n0,0,b\n";
        assert!(matches!(read_zone_labels(dup.as_bytes(), r, ZoneKind::Source), Err(IoError::DuplicateCell(0, 0))));
        let out = "row,col,label\n0,0,a\n0,5,b\n";
        assert!(matches!(read_zone_labels(out.as_bytes(), r, ZoneKind::Source), Err(IoError::CellOutOfBounds(0, 5))));
    }

    #[test]
    fn field_round_trip() {
        let r = GridRegion::new(2, 3, 1.0f64).unwrap();
        let v = vec![1.5, 0.0, 2.0, 3.25, 4.0, 5.0];
        let mut buf = Vec::new();
        write_field(&mut buf, &r, &v).unwrap();
        assert_eq!(read_field(buf.as_slice(), &r).unwrap(), v);
    }

    #[test]
    fn fit_json_fields() {
        let f = FitResult {
            gamma_hat: vec![3.0f64, 1.0],
            loglik: -2.5,
            score_norm: 0.0,
            fisher_info: vec![],
            iterations: 4,
            converged: true,
            boundary: false,
            history: vec![],
        };
        let mut buf = Vec::new();
        write_fit_json(&mut buf, &f).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["boundary", "converged", "gamma_hat", "iterations", "loglik"]);
        assert_eq!(read_fit_json(buf.as_slice()).unwrap().gamma_hat, vec![3.0, 1.0]);
    }

    #[test]
    fn error_report_header() {
        let mut buf = Vec::new();
        write_error_report(&mut buf, &[]).unwrap();
        let rows = [ErrorRow {
            scope: "target".into(),
            scope_id: "T1".into(),
            method: "DAW".into(),
            bias: -10.0,
            variance: 10.25,
            mse: 110.25,
            relative: 0.6,
            std_error: None,
            replicates: None,
        }];
        let mut buf = Vec::new();
        write_error_report(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("scope,scope_id,method,bias,variance,mse,relative,std_error,replicates\n"));
        assert_eq!(read_error_report(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn svg_is_well_formed() {
        let r = GridRegion::new(2, 2, 1.0f64).unwrap();
        let mut buf = Vec::new();
        write_svg_heatmap(&mut buf, &r, &[0.0, 1.0, 2.0, 3.0], "a<b").unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>") && s.contains("a&lt;b"));
        assert_eq!(s.matches("<rect").count(), 4);
    }
}
