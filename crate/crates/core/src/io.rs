//! CSV and JSON persistence.

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Numeric table with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub data: Array2<f64>,
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Table> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let width = headers.len();
    let mut flat = Vec::new();
    let mut rows = 0;
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != width {
            return Err(Error::Shape {
                expected: format!("{width} fields in {}", path.display()),
                got: format!("{} on data row {}", rec.len(), r + 1),
            });
        }
        for (c, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                Error::Parameter(format!(
                    "{}: non-numeric value {field:?} at data row {}, column {:?}",
                    path.display(),
                    r + 1,
                    headers[c]
                ))
            })?;
            flat.push(v);
        }
        rows += 1;
    }
    let data = Array2::from_shape_vec((rows, width), flat).expect("row-major fill");
    Ok(Table { headers, data })
}

pub fn write_csv(path: impl AsRef<Path>, headers: &[String], data: ArrayView2<f64>) -> Result<()> {
    let path = path.as_ref();
    if headers.len() != data.ncols() {
        return Err(Error::Shape {
            expected: format!("{} headers", data.ncols()),
            got: headers.len().to_string(),
        });
    }
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(headers)?;
    let mut buf = Vec::with_capacity(data.ncols());
    for row in data.outer_iter() {
        buf.clear();
        buf.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&buf)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Headers `prefix0, prefix1, ...`.
pub fn numbered_headers(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    ensure_parent(path)?;
    let s = serde_json::to_string_pretty(value)?;
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&s)?)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/t.csv");
        let data = array![[0.1, 1.0 / 3.0], [-2.5e-300, 1e300]];
        let h = vec!["a".to_string(), "b".to_string()];
        write_csv(&p, &h, data.view()).unwrap();
        let t = read_csv(&p).unwrap();
        assert_eq!(t.headers, h);
        assert_eq!(t.data, data);
    }

    #[test]
    fn csv_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        fs::write(&p, "a,b\n1,x\n").unwrap();
        assert!(matches!(read_csv(&p), Err(Error::Parameter(_))));
        assert!(matches!(read_csv(dir.path().join("missing.csv")), Err(Error::Io { .. })));
    }
}
