//! Result tables and their CSV form.

use std::path::Path;

use anyhow::{anyhow, Context as _, Result};

/// A named table of string cells; numbers use Rust's shortest round-trip
/// formatting so reruns are byte-identical.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(
            row.len(),
            self.header.len(),
            "row width differs from header in {}",
            self.name
        );
        self.rows.push(row);
    }

    pub fn file_name(&self) -> String {
        format!("{}.csv", self.name)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(self.file_name());
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
        let header = r.headers()?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<Result<Vec<Vec<String>>, _>>()?;
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        Ok(Self { name, header, rows })
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| anyhow!("table {} has no column {name}", self.name))
    }

    pub fn column(&self, name: &str) -> Result<Vec<&str>> {
        let k = self.column_index(name)?;
        Ok(self.rows.iter().map(|r| r[k].as_str()).collect())
    }

    /// Numeric column; empty cells become NaN.
    pub fn numbers(&self, name: &str) -> Result<Vec<f64>> {
        self.column(name)?
            .into_iter()
            .map(|s| {
                if s.is_empty() {
                    Ok(f64::NAN)
                } else {
                    s.parse::<f64>().with_context(|| format!("{}.{name}: {s:?}", self.name))
                }
            })
            .collect()
    }

    /// Rows whose `column` equals `value`.
    pub fn filter(&self, column: &str, value: &str) -> Result<Table> {
        let k = self.column_index(column)?;
        Ok(Table {
            name: self.name.clone(),
            header: self.header.clone(),
            rows: self.rows.iter().filter(|r| r[k] == value).cloned().collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn flag(b: bool) -> String {
    if b { "true" } else { "false" }.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let mut t = Table::new("demo", &["a", "b"]);
        t.push(vec!["x,y".into(), num(0.1)]);
        t.push(vec!["z".into(), opt(None)]);
        let dir = tempfile::tempdir().unwrap();
        t.write(dir.path()).unwrap();
        let back = Table::read(&dir.path().join("demo.csv")).unwrap();
        assert_eq!(back, t);
        let b = back.numbers("b").unwrap();
        assert_eq!(b[0], 0.1);
        assert!(b[1].is_nan());
        assert_eq!(back.filter("a", "z").unwrap().len(), 1);
        assert!(back.column("c").is_err());
    }
}
