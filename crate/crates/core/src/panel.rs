//! Pre/post-treatment panels for a single treated unit.
//!
//! The on-disk layout is a wide CSV with a mandatory header:
//! `time, treated, control_1, ..., control_N`. Rows before the treatment
//! index form the pre-treatment block, rows at or after it the
//! post-treatment block.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{BvssError, Result};

/// Treated-unit outcomes and control-unit designs, split at treatment time.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelData {
    /// Treated-unit outcomes before treatment (length M).
    pub y: DVector<f64>,
    /// Control units before treatment (M × N).
    pub x: DMatrix<f64>,
    /// Control units after treatment (M̃ × N).
    pub x_post: DMatrix<f64>,
    /// Observed treated-unit outcomes after treatment (length M̃).
    pub y_post: DVector<f64>,
    pub treated_name: String,
    pub unit_names: Vec<String>,
    /// All M + M̃ time labels, in file order.
    pub time_labels: Vec<String>,
}

impl PanelData {
    pub fn new(
        y: DVector<f64>,
        x: DMatrix<f64>,
        y_post: DVector<f64>,
        x_post: DMatrix<f64>,
    ) -> Result<Self> {
        let n = x.ncols();
        let unit_names = (1..=n).map(|j| format!("unit_{j}")).collect();
        let time_labels = (1..=x.nrows() + x_post.nrows())
            .map(|t| t.to_string())
            .collect();
        Self::with_labels(y, x, y_post, x_post, "treated".into(), unit_names, time_labels)
    }

    pub fn with_labels(
        y: DVector<f64>,
        x: DMatrix<f64>,
        y_post: DVector<f64>,
        x_post: DMatrix<f64>,
        treated_name: String,
        unit_names: Vec<String>,
        time_labels: Vec<String>,
    ) -> Result<Self> {
        let n = x.ncols();
        if n < 2 {
            return Err(BvssError::Shape(format!("need at least 2 control units, got {n}")));
        }
        if x_post.ncols() != n {
            return Err(BvssError::Shape(format!(
                "pre-period has {n} control columns but post-period has {}",
                x_post.ncols()
            )));
        }
        if x.nrows() == 0 || x_post.nrows() == 0 {
            return Err(BvssError::Shape("need at least one pre- and one post-period row".into()));
        }
        if y.len() != x.nrows() || y_post.len() != x_post.nrows() {
            return Err(BvssError::Shape("outcome length does not match design rows".into()));
        }
        if unit_names.len() != n || time_labels.len() != x.nrows() + x_post.nrows() {
            return Err(BvssError::Shape("label count does not match panel dimensions".into()));
        }
        let all_finite = y.iter().chain(x.iter()).chain(y_post.iter()).chain(x_post.iter()).all(|v| v.is_finite());
        if !all_finite {
            return Err(BvssError::Domain("panel contains non-finite values".into()));
        }
        Ok(Self {
            y,
            x,
            x_post,
            y_post,
            treated_name,
            unit_names,
            time_labels,
        })
    }

    /// Number of pre-treatment periods.
    pub fn m(&self) -> usize {
        self.x.nrows()
    }

    /// Number of post-treatment periods.
    pub fn m_post(&self) -> usize {
        self.x_post.nrows()
    }

    /// Number of control units.
    pub fn n(&self) -> usize {
        self.x.ncols()
    }
}

/// Loads a wide panel CSV and splits it at `treatment_index` (0-based data row).
pub fn load_panel(path: impl AsRef<Path>, treatment_index: usize) -> Result<PanelData> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| BvssError::io(path, e))?;
    read_panel(file, treatment_index)
}

/// Same as [`load_panel`] over any reader.
///
/// Row numbers in errors are 1-based file lines, so the header is line 1.
pub fn read_panel<R: Read>(reader: R, treatment_index: usize) -> Result<PanelData> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let width = header.len();
    if width < 4 {
        return Err(BvssError::Shape(format!(
            "header needs time, treated and at least 2 control columns; found {width} columns"
        )));
    }

    let mut time_labels = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for (k, record) in rdr.records().enumerate() {
        let record = record?;
        let row = k + 2;
        if record.len() != width {
            return Err(BvssError::Ragged {
                row,
                expected: width,
                found: record.len(),
            });
        }
        time_labels.push(record[0].to_owned());
        for (c, cell) in record.iter().enumerate().skip(1) {
            let v: f64 = cell.parse().map_err(|_| BvssError::Parse {
                row,
                column: c + 1,
                message: format!("non-numeric cell {cell:?} in column {:?}", header[c]),
            })?;
            if !v.is_finite() {
                return Err(BvssError::Parse {
                    row,
                    column: c + 1,
                    message: format!("non-finite value {cell:?}"),
                });
            }
            values.push(v);
        }
    }

    let total = time_labels.len();
    if treatment_index < 1 || treatment_index >= total {
        return Err(BvssError::Bounds {
            index: treatment_index,
            lo: 1,
            hi: total,
        });
    }
    let cols = width - 1;
    let at = |r: usize, c: usize| values[r * cols + c];
    let n = cols - 1;
    let m = treatment_index;
    let m_post = total - m;
    let y = DVector::from_fn(m, |t, _| at(t, 0));
    let x = DMatrix::from_fn(m, n, |t, j| at(t, j + 1));
    let y_post = DVector::from_fn(m_post, |t, _| at(m + t, 0));
    let x_post = DMatrix::from_fn(m_post, n, |t, j| at(m + t, j + 1));
    PanelData::with_labels(
        y,
        x,
        y_post,
        x_post,
        header[1].clone(),
        header[2..].to_vec(),
        time_labels,
    )
}

/// Writes the panel back in the same wide layout, 17 significant digits.
pub fn write_panel<W: Write>(panel: &PanelData, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["time".to_owned(), panel.treated_name.clone()];
    header.extend(panel.unit_names.iter().cloned());
    w.write_record(&header)?;
    let m = panel.m();
    for (t, label) in panel.time_labels.iter().enumerate() {
        let mut rec = vec![label.clone()];
        let (yv, row): (f64, Vec<f64>) = if t < m {
            (panel.y[t], panel.x.row(t).iter().copied().collect())
        } else {
            (panel.y_post[t - m], panel.x_post.row(t - m).iter().copied().collect())
        };
        rec.push(format_sig17(yv));
        rec.extend(row.into_iter().map(format_sig17));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| BvssError::io("<panel writer>", e))?;
    Ok(())
}

pub(crate) fn format_sig17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Per-column `‖X_j‖₂ / √M` for the pre-treatment design; a value of 1
/// means the column already has squared norm M.
pub fn standardize_check(panel: &PanelData) -> Vec<f64> {
    let sqrt_m = (panel.m() as f64).sqrt();
    panel.x.column_iter().map(|c| c.norm() / sqrt_m).collect()
}
