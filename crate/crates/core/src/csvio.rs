//! Shared CSV plumbing. Every float is written with 17 significant digits so
//! values survive a write/read round trip bit for bit.

use std::io::{Read, Write};

use nalgebra::DMatrix;

use crate::error::{OmecError, Result};

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| OmecError::Parse(format!("{s:?}: {e}")))
}

/// Writes a header followed by one row per time step: a leading index column
/// (`leading`) and then the columns of every matrix in `blocks`, in order.
pub fn write_rows<W: Write>(
    w: W,
    header: &[String],
    leading: &[String],
    blocks: &[&DMatrix<f64>],
) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header)?;
    let mut record = Vec::with_capacity(header.len());
    for (k, lead) in leading.iter().enumerate() {
        record.clear();
        record.push(lead.clone());
        for b in blocks {
            for j in 0..b.ncols() {
                record.push(fmt_f64(b[(k, j)]));
            }
        }
        out.write_record(&record)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a numeric CSV with a header row. Returns the header and all rows.
pub fn read_table<R: Read>(r: R) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let header = rdr.headers()?.iter().map(str::to_string).collect::<Vec<_>>();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec.iter().map(parse_f64).collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

pub fn numbered(prefix: &str, count: usize) -> impl Iterator<Item = String> + '_ {
    (1..=count).map(move |i| format!("{prefix}{i}"))
}
