//! Run directories: numeric tables as CSV or JSON, reports as JSON.

use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::Serialize;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// A column-oriented numeric table with SI-unit headers.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<&'static str>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(headers: &[&'static str]) -> Self {
        Table {
            headers: headers.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.headers.iter().position(|h| *h == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }
}

pub struct RunDir {
    pub path: PathBuf,
    pub format: Format,
    written: Vec<String>,
}

impl RunDir {
    pub fn create(path: PathBuf, format: Format) -> Result<Self, CliError> {
        fs::create_dir_all(&path).map_err(|e| CliError::io(format!("creating {}", path.display()), e))?;
        Ok(RunDir {
            path,
            format,
            written: Vec::new(),
        })
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }

    fn record(&mut self, name: String) {
        debug_assert!(!self.written.contains(&name), "{name} written twice");
        self.written.push(name);
    }

    /// Writes `stem.csv` or `stem.json` depending on the run format.
    pub fn table(&mut self, stem: &str, table: &Table) -> Result<(), CliError> {
        match self.format {
            Format::Csv => {
                let name = format!("{stem}.csv");
                let path = self.path.join(&name);
                let mut w = csv::Writer::from_path(&path)?;
                w.write_record(&table.headers)?;
                for row in &table.rows {
                    w.write_record(row.iter().map(|&x| number(x)))?;
                }
                w.flush().map_err(|e| CliError::io(format!("writing {}", path.display()), e))?;
                self.record(name);
            }
            Format::Json => {
                let rows: Vec<serde_json::Map<String, serde_json::Value>> = table
                    .rows
                    .iter()
                    .map(|r| {
                        table
                            .headers
                            .iter()
                            .zip(r)
                            .map(|(h, x)| (h.to_string(), serde_json::json!(x)))
                            .collect()
                    })
                    .collect();
                self.json(stem, &rows)?;
            }
        }
        Ok(())
    }

    /// Writes `stem.json`; non-finite numbers become `null`.
    pub fn json<T: Serialize + ?Sized>(&mut self, stem: &str, value: &T) -> Result<(), CliError> {
        let name = format!("{stem}.json");
        let path = self.path.join(&name);
        let mut text = serde_json::to_string_pretty(value).expect("report serializes");
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::io(format!("writing {}", path.display()), e))?;
        self.record(name);
        Ok(())
    }
}

/// Shortest round-trip text; scientific notation outside [1e-3, 1e7).
fn number(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || !x.is_finite() || (1e-3..1e7).contains(&a) {
        x.to_string()
    } else {
        format!("{x:e}")
    }
}

/// Resolves the run directory: `--out`, else the config's `output_dir`,
/// else `runs/<command>`; relative paths sit under `root` when given.
pub fn resolve_dir(out: Option<&Path>, configured: Option<&str>, command: &str, root: Option<&Path>) -> PathBuf {
    let dir = match (out, configured) {
        (Some(o), _) => o.to_path_buf(),
        (None, Some(c)) => PathBuf::from(c),
        (None, None) => Path::new("runs").join(command),
    };
    match root {
        Some(r) if dir.is_relative() => r.join(dir),
        _ => dir,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for x in [0.0, 1.5e-9, 0.3, 123.25, 2.5e8, -4e-12] {
            assert_eq!(number(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(number(1.5e-9), "1.5e-9");
        assert_eq!(number(0.25), "0.25");
        assert_eq!(number(f64::INFINITY), "inf");
    }

    #[test]
    fn out_flag_wins_and_root_only_prefixes_relative_dirs() {
        let root = Path::new("/data");
        assert_eq!(resolve_dir(None, None, "fid", None), Path::new("runs/fid"));
        assert_eq!(resolve_dir(None, None, "fid", Some(root)), Path::new("/data/runs/fid"));
        assert_eq!(resolve_dir(None, Some("x"), "fid", Some(root)), Path::new("/data/x"));
        assert_eq!(resolve_dir(Some(Path::new("/tmp/y")), Some("x"), "fid", Some(root)), Path::new("/tmp/y"));
    }

    #[test]
    fn table_columns_by_header() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec![1.0, 2.0]);
        t.push(vec![3.0, 4.0]);
        assert_eq!(t.column("b"), Some(vec![2.0, 4.0]));
        assert_eq!(t.column("c"), None);
    }
}
