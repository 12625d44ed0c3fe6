//! Matrix files. Binary layout: 8-byte magic `SPKMAT01`, rows and cols as
//! little-endian u64, then row-major little-endian f64. CSV: one row per
//! line, no header, `#` comments allowed.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SPKMAT01";

pub fn write_matrix_bin<W: Write>(m: &DMatrix<f64>, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(m.nrows() as u64).to_le_bytes())?;
    w.write_all(&(m.ncols() as u64).to_le_bytes())?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            w.write_all(&m[(i, j)].to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_bin<R: Read>(mut r: R) -> Result<DMatrix<f64>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Parse("not a matrix container (bad magic)".into()));
    }
    let mut word = [0u8; 8];
    r.read_exact(&mut word)?;
    let rows = u64::from_le_bytes(word) as usize;
    r.read_exact(&mut word)?;
    let cols = u64::from_le_bytes(word) as usize;
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Parse(format!("matrix dimensions overflow: {rows}x{cols}")))?;
    let mut data = vec![0u8; len.checked_mul(8).ok_or_else(|| Error::Parse("matrix too large".into()))?];
    r.read_exact(&mut data).map_err(|e| Error::Parse(format!("truncated matrix payload: {e}")))?;
    let vals: Vec<f64> = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok(DMatrix::from_row_slice(rows, cols, &vals))
}

/// Shortest round-trip decimal form of every entry.
pub fn write_matrix_csv<W: Write>(m: &DMatrix<f64>, w: W) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    for i in 0..m.nrows() {
        wr.write_record(m.row(i).iter().map(|x| x.to_string())).map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_matrix_csv<R: Read>(r: R) -> Result<DMatrix<f64>> {
    let mut rd = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(r);
    let mut vals = Vec::new();
    let mut cols = None;
    let mut rows = 0usize;
    for (line, rec) in rd.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        match cols {
            None => cols = Some(rec.len()),
            Some(c) if c != rec.len() => {
                return Err(Error::DimensionMismatch(format!(
                    "row {} has {} fields, expected {c}",
                    line + 1,
                    rec.len()
                )))
            }
            _ => {}
        }
        for f in rec.iter() {
            vals.push(f.parse::<f64>().map_err(|e| Error::Parse(format!("row {}: '{f}': {e}", line + 1)))?);
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::Parse("empty matrix file".into()))?;
    Ok(DMatrix::from_row_slice(rows, cols, &vals))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

fn is_bin(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "bin")
}

/// `.bin` selects the binary container, anything else CSV.
pub fn save_matrix(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    let path = path.as_ref();
    let f = BufWriter::new(File::create(path)?);
    if is_bin(path) {
        write_matrix_bin(m, f)
    } else {
        write_matrix_csv(m, f)
    }
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let f = BufReader::new(File::open(path)?);
    if is_bin(path) {
        read_matrix_bin(f)
    } else {
        read_matrix_csv(f)
    }
}

/// A single column or single row file read as a vector.
pub fn load_vector(path: impl AsRef<Path>) -> Result<DVector<f64>> {
    let m = load_matrix(path)?;
    match m.shape() {
        (_, 1) => Ok(m.column(0).into_owned()),
        (1, _) => Ok(m.row(0).transpose()),
        s => Err(Error::DimensionMismatch(format!("expected a vector, got a {}x{} matrix", s.0, s.1))),
    }
}

/// CSV with header `i,<name>`.
pub fn write_vector_csv<W: Write>(name: &str, v: &DVector<f64>, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["i", name]).map_err(csv_err)?;
    for (i, x) in v.iter().enumerate() {
        wr.write_record([i.to_string(), x.to_string()]).map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let m = DMatrix::from_row_slice(2, 3, &[0.1, -0.0, f64::MIN_POSITIVE, 1e300, f64::NAN, -3.5]);
        let mut buf = Vec::new();
        write_matrix_bin(&m, &mut buf).unwrap();
        assert_eq!(buf.len(), 24 + 6 * 8);
        let back = read_matrix_bin(&buf[..]).unwrap();
        assert_eq!(back.shape(), (2, 3));
        for (a, b) in m.iter().zip(back.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn truncated_and_foreign_files_are_rejected() {
        let mut buf = Vec::new();
        write_matrix_bin(&DMatrix::from_element(2, 2, 1.0), &mut buf).unwrap();
        assert!(read_matrix_bin(&buf[..buf.len() - 1]).is_err());
        assert!(read_matrix_bin(&b"NOTAMATRIX......"[..]).is_err());
    }

    #[test]
    fn csv_parses_comments_and_checks_width() {
        let m = read_matrix_csv(&b"# header\n1, 2\n3,4\n"[..]).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        assert!(matches!(read_matrix_csv(&b"1,2\n3\n"[..]), Err(Error::DimensionMismatch(_))));
        assert!(matches!(read_matrix_csv(&b"1,x\n"[..]), Err(Error::Parse(_))));
    }

    #[test]
    fn csv_round_trip_preserves_values() {
        let m = DMatrix::from_row_slice(2, 2, &[0.1, 1.0 / 3.0, -2.5e-17, 7.0]);
        let mut buf = Vec::new();
        write_matrix_csv(&m, &mut buf).unwrap();
        assert_eq!(read_matrix_csv(&buf[..]).unwrap(), m);
    }
}
