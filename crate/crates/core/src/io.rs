//! Plain-text numeric input and atomic file output.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

/// Writes `bytes` to a temporary file next to `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or_else(|| Path::new("."));
    let name = path.file_name().ok_or_else(|| Error::Io(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result.map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn parse_rows(text: &str, header: bool, what: &str) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(usize::from(header)) {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .enumerate()
            .map(|(c, s)| {
                let v: f64 = s.trim().parse().map_err(|_| {
                    Error::Parse(format!("{what}: line {}, field {}: '{}' is not a number", i + 1, c + 1, s.trim()))
                })?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::NonFinite { row: rows.len(), col: c })
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Reads a comma-separated numeric matrix, one row per line.
pub fn read_matrix_csv(path: &Path, header: bool) -> Result<DenseMatrix> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let rows = parse_rows(&text, header, &path.display().to_string())?;
    if rows.is_empty() {
        return Err(Error::Parse(format!("{}: no data rows", path.display())));
    }
    DenseMatrix::from_rows(&rows)
}

/// Reads a numeric vector stored one value per line (a single column).
pub fn read_vector_csv(path: &Path, header: bool) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let rows = parse_rows(&text, header, &path.display().to_string())?;
    if rows.iter().any(|r| r.len() != 1) {
        return Err(Error::Parse(format!("{}: expected one value per line", path.display())));
    }
    if rows.is_empty() {
        return Err(Error::Parse(format!("{}: no data rows", path.display())));
    }
    Ok(rows.into_iter().map(|r| r[0]).collect())
}
