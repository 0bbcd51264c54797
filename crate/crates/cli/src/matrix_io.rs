//! Plain-text matrix files.
//!
//! Line 1 is `rows cols complex`; each following line holds one row of
//! `re+imj` entries separated by single spaces. Both parts are written with
//! 17 significant digits, which round-trips every finite `f64` exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use dctmc_core::linalg::{c64, CMatrix, C64};

use crate::error::{io_err, CliError, Result};

pub fn format_entry(z: C64) -> String {
    format!("{:.16e}{:+.16e}j", z.re, z.im)
}

pub fn parse_entry(s: &str) -> Option<C64> {
    let body = s.strip_suffix('j')?;
    let bytes = body.as_bytes();
    // the imaginary part starts at the last sign that is not an exponent sign
    let split = (1..bytes.len())
        .rev()
        .find(|&i| matches!(bytes[i], b'+' | b'-') && !matches!(bytes[i - 1], b'e' | b'E'))?;
    let re = body[..split].parse().ok()?;
    let im = body[split..].parse().ok()?;
    Some(c64(re, im))
}

pub fn format_matrix(m: &CMatrix) -> String {
    let mut out = format!("{} {} complex\n", m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(' ');
            }
            out.push_str(&format_entry(m[(i, j)]));
        }
        out.push('\n');
    }
    out
}

pub fn parse_matrix(text: &str, path: &Path) -> Result<CMatrix> {
    let fail = |line: usize, reason: String| CliError::Format {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| fail(1, "empty file".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let (rows, cols) = match fields.as_slice() {
        [r, c, "complex"] => match (r.parse::<usize>(), c.parse::<usize>()) {
            (Ok(r), Ok(c)) => (r, c),
            _ => return Err(fail(1, format!("bad header `{header}`"))),
        },
        _ => return Err(fail(1, format!("expected `rows cols complex`, got `{header}`"))),
    };
    let mut m = CMatrix::zeros(rows, cols);
    for i in 0..rows {
        let line_no = i + 2;
        let line = lines
            .next()
            .ok_or_else(|| fail(line_no, format!("expected {rows} rows")))?;
        let entries: Vec<&str> = line.split(' ').collect();
        if entries.len() != cols {
            return Err(fail(
                line_no,
                format!("expected {cols} entries, found {}", entries.len()),
            ));
        }
        for (j, e) in entries.iter().enumerate() {
            m[(i, j)] = parse_entry(e).ok_or_else(|| fail(line_no, format!("bad entry `{e}`")))?;
        }
    }
    if lines.any(|l| !l.trim().is_empty()) {
        return Err(fail(rows + 2, "trailing content".into()));
    }
    Ok(m)
}

/// Writes through a sibling temporary file and a rename, so readers never
/// see a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp: PathBuf = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, contents).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn write_matrix(path: &Path, m: &CMatrix) -> Result<()> {
    write_atomic(path, format_matrix(m).as_bytes())
}

pub fn read_matrix(path: &Path) -> Result<CMatrix> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_matrix(&text, path)
}

/// Real vector stored as an `n × 1` complex matrix with zero imaginary part.
pub fn write_real_vector(path: &Path, v: &[f64]) -> Result<()> {
    write_matrix(
        path,
        &CMatrix::from_iterator(v.len(), 1, v.iter().map(|&x| c64(x, 0.0))),
    )
}

pub fn read_real_vector(path: &Path) -> Result<Vec<f64>> {
    let m = read_matrix(path)?;
    if m.ncols() != 1 || m.iter().any(|z| z.im != 0.0) {
        return Err(CliError::Format {
            path: path.to_path_buf(),
            line: 1,
            reason: "expected a real column vector".into(),
        });
    }
    Ok(m.iter().map(|z| z.re).collect())
}

/// `key = value` lines, one per pair.
pub fn format_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, String)>) -> String {
    let mut out = String::new();
    for (k, v) in pairs {
        let _ = writeln!(out, "{k} = {v}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entries_round_trip_exactly() {
        for z in [
            c64(0.0, 0.0),
            c64(-0.0, -0.0),
            c64(1.0 / 3.0, -2.0e-300),
            c64(f64::MAX, f64::MIN_POSITIVE),
            c64(-5e-324, 1e300),
            c64(f64::INFINITY, f64::NEG_INFINITY),
        ] {
            let back = parse_entry(&format_entry(z)).unwrap();
            assert_eq!(back.re.to_bits(), z.re.to_bits(), "{}", format_entry(z));
            assert_eq!(back.im.to_bits(), z.im.to_bits(), "{}", format_entry(z));
        }
    }

    #[test]
    fn entry_format_is_fixed() {
        assert_eq!(
            format_entry(c64(1.5, -0.25)),
            "1.5000000000000000e0-2.5000000000000000e-1j"
        );
    }

    #[test]
    fn malformed_files_report_the_line() {
        let p = Path::new("x.txt");
        let err = parse_matrix("2 1 complex\n1e0+0e0j\n", p).unwrap_err();
        assert!(matches!(err, CliError::Format { line: 3, .. }), "{err}");
        let err = parse_matrix("1 2 complex\n1e0+0e0j 1e0\n", p).unwrap_err();
        assert!(matches!(err, CliError::Format { line: 2, .. }), "{err}");
        assert!(parse_matrix("1 1 real\n1\n", p).is_err());
        assert!(parse_matrix("1 1 complex\n1e0+0e0j\nextra\n", p).is_err());
    }
}
