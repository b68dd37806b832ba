use std::io::Write;
use std::path::Path;

/// Numeric CSV with `#` metadata lines after the data.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CsvReport {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub meta: Vec<(String, String)>,
}

impl CsvReport {
    pub fn new(header: &[&str]) -> Self {
        CsvReport { header: header.iter().map(|s| s.to_string()).collect(), ..Default::default() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        self.rows.push(row);
    }

    pub fn meta(&mut self, key: impl Into<String>, value: impl ToString) {
        self.meta.push((key.into(), value.to_string()));
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).map_err(|e| e.to_string())?;
        for (i, row) in self.rows.iter().enumerate() {
            if row.len() != self.header.len() {
                return Err(format!("row {i} has {} fields, header has {}", row.len(), self.header.len()));
            }
            if let Some(v) = row.iter().find(|v| !v.is_finite()) {
                return Err(format!("row {i} contains non-finite value {v}"));
            }
            w.write_record(row.iter().map(|v| format!("{v:e}"))).map_err(|e| e.to_string())?;
        }
        let mut out = w.into_inner().map_err(|e| e.to_string())?;
        for (k, v) in &self.meta {
            writeln!(out, "# {k} = {v}").map_err(|e| e.to_string())?;
        }
        Ok(out)
    }

    /// Writes through a temporary file in the target directory, then renames it into place.
    pub fn write_atomic(&self, path: &Path) -> Result<(), String> {
        let bytes = self.to_bytes()?;
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| e.to_string())?;
        tmp.write_all(&bytes).map_err(|e| e.to_string())?;
        tmp.as_file().sync_all().map_err(|e| e.to_string())?;
        tmp.persist(path).map_err(|e| e.to_string())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite() {
        let mut r = CsvReport::new(&["a"]);
        r.push(vec![f64::NAN]);
        assert!(r.to_bytes().is_err());
    }

    #[test]
    fn layout() {
        let mut r = CsvReport::new(&["a", "b"]);
        r.push(vec![1.0, 0.25]);
        r.meta("seed", 3);
        assert_eq!(String::from_utf8(r.to_bytes().unwrap()).unwrap(), "a,b\n1e0,2.5e-1\n# seed = 3\n");
    }
}
