//! CSV and JSON emission. CSV floats carry 17 significant digits; JSON
//! documents carry a schema version.

use std::io::Write;
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::Result;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Int(i128),
    UInt(u128),
    Float(f64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(x) => x.to_string(),
            Cell::UInt(x) => x.to_string(),
            Cell::Float(x) => format_float(*x),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Float(x)
    }
}

impl From<u64> for Cell {
    fn from(x: u64) -> Self {
        Cell::UInt(x.into())
    }
}

impl From<u128> for Cell {
    fn from(x: u128) -> Self {
        Cell::UInt(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::UInt(x as u128)
    }
}

impl From<i64> for Cell {
    fn from(x: i64) -> Self {
        Cell::Int(x.into())
    }
}

impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::Text(x.to_string())
    }
}

impl From<String> for Cell {
    fn from(x: String) -> Self {
        Cell::Text(x)
    }
}

/// 17 significant digits in scientific notation, which round-trips every f64.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

/// A table with a fixed column order.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Table { columns: columns.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        ensure_parent(path)?;
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// A versioned JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Document<T> {
    pub schema_version: u32,
    pub kind: String,
    pub body: T,
}

impl<T: Serialize + DeserializeOwned> Document<T> {
    pub fn new(kind: &str, body: T) -> Self {
        Document { schema_version: SCHEMA_VERSION, kind: kind.to_string(), body }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        ensure_parent(path)?;
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::{ConstantsReport, Estimate, WindowFit};

    #[test]
    fn empty_table_has_header_only() {
        let t = Table::new(["n", "value"]);
        assert_eq!(t.to_csv_string().unwrap(), "n,value\n");
    }

    #[test]
    fn floats_round_trip_through_csv() {
        let mut t = Table::new(["x", "label"]);
        let x = 0.1 + 0.2;
        t.push(vec![x.into(), "a,b".into()]);
        let s = t.to_csv_string().unwrap();
        let mut r = csv::Reader::from_reader(s.as_bytes());
        let rec = r.records().next().unwrap().unwrap();
        assert_eq!(rec[0].parse::<f64>().unwrap(), x);
        assert_eq!(&rec[1], "a,b");
        assert!(s.contains("\"a,b\""));
    }

    #[test]
    fn json_round_trip() {
        let est = Estimate { value: -2.8455, stderr: 1e-4 };
        let fit = WindowFit { windows: [1.0, 2.0, 3.0], estimate: est, stable: true };
        let rep = ConstantsReport {
            n_max: 1000,
            mu_inv: 2.0,
            c_p: est,
            c_w: Some(est),
            c_p_fit: fit,
            c_w_fit: Some(fit),
            c_w_from_c_p: -4.8,
        };
        let doc = Document::new("constants", rep);
        let s = doc.to_json().unwrap();
        assert!(s.contains("\"schema_version\": 1"));
        assert!(s.contains("mu_inv") && s.contains("c_p") && s.contains("stderr"));
        assert_eq!(Document::<ConstantsReport>::from_json(&s).unwrap(), doc);
    }
}
