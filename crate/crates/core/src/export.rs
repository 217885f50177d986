//! File outputs: atomic writes and the CSV/PGM grid exports.

use crate::error::{Error, Result};
use ndarray::Array2;
use std::fs;
use std::io::Write;
use std::path::Path;

/// Writes via a sibling temp file and a rename, so readers never observe a
/// partial file and a failed write leaves the previous contents intact.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

/// One row per grid row, comma-separated, six decimals.
pub fn grid_csv(values: &Array2<f64>) -> String {
    let mut out = String::new();
    for row in values.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// Binary 8-bit PGM with each value in `[0, 1]` mapped to `round(v * 255)`.
pub fn grid_pgm(values: &Array2<f64>) -> Vec<u8> {
    let (h, w) = values.dim();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

/// Writes a grid as PGM when the extension is `.pgm`, CSV otherwise.
pub fn write_grid(path: &Path, values: &Array2<f64>) -> Result<()> {
    let is_pgm = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    if is_pgm {
        atomic_write(path, &grid_pgm(values))
    } else {
        atomic_write(path, grid_csv(values).as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn pgm_layout() {
        let g = array![[0.0, 1.0], [0.5, 0.2]];
        let bytes = grid_pgm(&g);
        assert!(bytes.starts_with(b"P5\n2 2\n255\n"));
        assert_eq!(&bytes[bytes.len() - 4..], &[0, 255, 128, 51]);
    }

    #[test]
    fn csv_layout() {
        let g = array![[0.0, 1.0], [0.5, 0.25]];
        assert_eq!(grid_csv(&g), "0.000000,1.000000\n0.500000,0.250000\n");
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.txt");
        atomic_write(&p, b"one").unwrap();
        atomic_write(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
