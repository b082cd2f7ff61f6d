//! CSV reading and writing.
//!
//! Floats are written with 17 significant digits so every value parses back
//! to the same bits.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kernel::Matrix;

/// Formats with 17 significant digits (`d.dddddddddddddddde±x`).
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// A parsed CSV file with a header row.
#[derive(Debug, Clone)]
pub struct Table {
    pub path: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let display = path.display().to_string();
        let file = File::open(path).map_err(|source| Error::Io {
            path: display.clone(),
            source,
        })?;
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| csv_error(&display, e))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| csv_error(&display, e))?;
            let line = rec.position().map(|p| p.line());
            let mut row = Vec::with_capacity(rec.len());
            for (field, name) in rec.iter().zip(&header) {
                let v: f64 = field.parse().map_err(|_| Error::Data {
                    path: display.clone(),
                    line,
                    msg: format!("column `{name}`: cannot parse `{field}` as a number"),
                })?;
                row.push(v);
            }
            rows.push(row);
        }
        Ok(Table {
            path: display,
            header,
            rows,
        })
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                path: self.path.clone(),
                column: name.to_string(),
            })
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.header.iter().any(|h| h == name)
    }

    /// Columns named `{prefix}0, {prefix}1, …` in order, stopping at the first gap.
    pub fn prefixed(&self, prefix: &str) -> Vec<usize> {
        (0..)
            .map_while(|k| self.header.iter().position(|h| *h == format!("{prefix}{k}")))
            .collect()
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let j = self.column_index(name)?;
        Ok(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn matrix(&self, cols: &[usize]) -> Matrix {
        let data = self
            .rows
            .iter()
            .flat_map(|r| cols.iter().map(move |&j| r[j]))
            .collect();
        Matrix::from_row_major(self.rows.len(), cols.len(), data).expect("shape by construction")
    }
}

fn csv_error(path: &str, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line());
    Error::Data {
        path: path.to_string(),
        line,
        msg: e.to_string(),
    }
}

/// Writes a header plus float rows.
pub fn write_table(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    write_text(path, &out)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|source| Error::Io {
                path: dir.display().to_string(),
                source,
            })?;
        }
    }
    let mut f = File::create(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    f.write_all(text.as_bytes()).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}
