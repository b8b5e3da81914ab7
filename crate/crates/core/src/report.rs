//! Plain-text number and matrix formats used by every output file.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::scalar::{to_f64, Scalar};

/// C-style `%.{digits}e`: mantissa, `e`, sign, at least two exponent digits.
pub fn fmt_exp(x: f64, digits: usize) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let s = format!("{x:.digits$e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mantissa}e{sign}{:02}", exp.abs())
}

/// Twelve significant digits, used for CSV cells.
pub fn fmt_sig12(x: f64) -> String {
    fmt_exp(x, 11)
}

/// Matrix entry format (`%.12e`).
pub fn fmt_entry(x: f64) -> String {
    fmt_exp(x, 12)
}

/// Row-major, one row per line, entries separated by a single space.
pub fn write_matrix<T: Scalar, W: Write>(mut w: W, m: &DMatrix<T>) -> Result<()> {
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols())
            .map(|j| fmt_entry(to_f64(m[(i, j)])))
            .collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    Ok(())
}

/// Writes labelled matrices separated by `# label` comment lines.
pub fn write_labelled<T: Scalar, W: Write>(mut w: W, blocks: &[(&str, &DMatrix<T>)]) -> Result<()> {
    for (label, m) in blocks {
        writeln!(w, "# {label} ({}x{})", m.nrows(), m.ncols())?;
        write_matrix(&mut w, m)?;
    }
    Ok(())
}

/// Parses whitespace-separated rows. Blank lines and `#` comments are skipped.
pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>> {
    let blocks = parse_blocks(text)?;
    match blocks.len() {
        1 => Ok(blocks.into_iter().next().expect("one block")),
        0 => Err(Error::Parse("no matrix rows found".into())),
        k => Err(Error::Parse(format!(
            "expected one matrix, found {k} blocks"
        ))),
    }
}

/// Splits text at `#` comment lines into separate matrices.
pub fn parse_blocks(text: &str) -> Result<Vec<DMatrix<f64>>> {
    let mut blocks = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let flush = |rows: &mut Vec<Vec<f64>>, blocks: &mut Vec<DMatrix<f64>>| -> Result<()> {
        if rows.is_empty() {
            return Ok(());
        }
        let ncols = rows[0].len();
        if let Some(bad) = rows.iter().position(|r| r.len() != ncols) {
            return Err(Error::Parse(format!(
                "row {} has {} entries, expected {ncols}",
                bad + 1,
                rows[bad].len()
            )));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        blocks.push(DMatrix::from_row_slice(rows.len(), ncols, &flat));
        rows.clear();
        Ok(())
    };
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.starts_with('#') {
            flush(&mut rows, &mut blocks)?;
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("line {}: bad number {tok:?}", lineno + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    flush(&mut rows, &mut blocks)?;
    Ok(blocks)
}

pub fn read_matrix_file(path: &Path) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
    parse_matrix(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}
