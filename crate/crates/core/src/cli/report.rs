use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{OcuError, Result};
use crate::optics::{layout_positions, slot_length_from_phase, OcuModel, MICRON};

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| OcuError::io(dir, e))
}

pub fn write_csv<R: Serialize>(path: &Path, rows: impl IntoIterator<Item = R>) -> Result<()> {
    let fail = |e: csv::Error| OcuError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    };
    let mut w = csv::Writer::from_path(path).map_err(fail)?;
    for row in rows {
        w.serialize(row).map_err(fail)?;
    }
    w.flush().map_err(|e| OcuError::io(path, e))
}

/// Rows without a header, for matrices.
pub fn write_matrix<T: ToString>(path: &Path, header: Option<Vec<String>>, rows: &[Vec<T>]) -> Result<()> {
    let fail = |e: csv::Error| OcuError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    };
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(fail)?;
    if let Some(h) = header {
        w.write_record(h).map_err(fail)?;
    }
    for row in rows {
        w.write_record(row.iter().map(ToString::to_string)).map_err(fail)?;
    }
    w.flush().map_err(|e| OcuError::io(path, e))
}

#[derive(Debug, Serialize)]
pub struct GeometryRow {
    pub unit: String,
    pub layer: usize,
    pub metaunit: usize,
    pub y_um: f64,
    pub phase_rad: f64,
    pub w2_nm: f64,
}

/// Slot table of one OCU; `layer` counts metalines from 1.
pub fn geometry_rows(name: &str, model: &OcuModel) -> Result<Vec<GeometryRow>> {
    let geom = model.geometry();
    let layout = layout_positions(geom)?;
    let mut rows = Vec::new();
    for (l, (line, points)) in model.phases().iter().zip(&layout.metalines).enumerate() {
        for (i, (&phase, p)) in line.iter().zip(points).enumerate() {
            let wrapped = phase.rem_euclid(std::f64::consts::TAU);
            rows.push(GeometryRow {
                unit: name.to_string(),
                layer: l + 1,
                metaunit: i,
                y_um: p.y / MICRON,
                phase_rad: wrapped,
                w2_nm: slot_length_from_phase(phase, geom)? * 1e9,
            });
        }
    }
    Ok(rows)
}

/// Fixed-width text table.
pub fn aligned(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = line(header.to_vec());
    out.push('\n');
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}
