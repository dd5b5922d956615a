//! CSV emission: one writer per report file, shortest-roundtrip float text,
//! LF rows, quoting only where RFC 4180 demands it.

use std::fs;
use std::path::{Path, PathBuf};

use evofam_core::Result;

/// Shortest decimal text that round-trips the value; `=` on re-parse.
pub fn num(x: f64) -> String {
    format!("{x}")
}

pub struct CsvOut {
    dir: PathBuf,
}

impl CsvOut {
    pub fn new(dir: &Path) -> Result<CsvOut> {
        fs::create_dir_all(dir)?;
        Ok(CsvOut {
            dir: dir.to_path_buf(),
        })
    }


    pub fn write(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(path)
    }
}
