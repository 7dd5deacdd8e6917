//! The `cluster_id,w,y` text format.
//!
//! Header-driven (any column order, extra columns ignored), LF or CRLF line
//! endings, no quoting. `w` must be the literal `0` or `1`.

use std::io::{BufRead, BufReader, Read, Write};

use crate::error::{Error, Result};
use crate::experiment::UnitRecord;

pub const HEADER: &str = "cluster_id,w,y";

const REQUIRED: [&str; 3] = ["cluster_id", "w", "y"];

fn malformed(line: usize, reason: impl Into<String>) -> Error {
    Error::MalformedRow {
        line,
        reason: reason.into(),
    }
}

fn split(line: &str, lineno: usize) -> Result<Vec<&str>> {
    if line.contains('"') {
        return Err(malformed(lineno, "quoted fields are not supported"));
    }
    Ok(line.split(',').collect())
}

/// Parse unit records from CSV text, in file order.
pub fn parse_csv<R: Read>(stream: R) -> Result<Vec<UnitRecord>> {
    let mut lines = BufReader::new(stream).lines().enumerate();

    let header = loop {
        match lines.next() {
            None => return Err(Error::EmptyFile),
            Some((i, line)) => {
                let line = line.map_err(|e| malformed(i + 1, e.to_string()))?;
                let line = line.strip_prefix('\u{feff}').unwrap_or(&line).to_string();
                if !line.is_empty() {
                    break (i + 1, line);
                }
            }
        }
    };
    let columns = split(&header.1, header.0)?;
    let mut idx = [0usize; 3];
    for (slot, name) in idx.iter_mut().zip(REQUIRED) {
        let mut hits = columns.iter().enumerate().filter(|(_, c)| **c == name);
        *slot = hits
            .next()
            .ok_or_else(|| Error::MissingColumn(name.to_string()))?
            .0;
        if hits.next().is_some() {
            return Err(malformed(header.0, format!("duplicate column `{name}`")));
        }
    }
    let [ci, wi, yi] = idx;

    let mut out = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let line = line.map_err(|e| malformed(lineno, e.to_string()))?;
        if line.is_empty() {
            continue;
        }
        let fields = split(&line, lineno)?;
        if fields.len() != columns.len() {
            return Err(malformed(
                lineno,
                format!("expected {} fields, found {}", columns.len(), fields.len()),
            ));
        }
        let cluster_id = fields[ci];
        if cluster_id.is_empty() {
            return Err(malformed(lineno, "empty cluster_id"));
        }
        let w = match fields[wi] {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(malformed(
                    lineno,
                    format!("w must be 0 or 1, got `{other}`"),
                ))
            }
        };
        let y: f64 = fields[yi]
            .parse()
            .map_err(|_| malformed(lineno, format!("unparseable y `{}`", fields[yi])))?;
        if !y.is_finite() {
            return Err(malformed(lineno, format!("non-finite y `{}`", fields[yi])));
        }
        out.push(UnitRecord {
            cluster_id: cluster_id.to_string(),
            w,
            y,
        });
    }
    if out.is_empty() {
        return Err(Error::EmptyFile);
    }
    Ok(out)
}

/// Write records with the canonical header. Outcomes use the shortest
/// round-trip representation, so parsing the output reproduces `records`.
pub fn write_csv<W: Write>(records: &[UnitRecord], mut out: W) -> Result<()> {
    writeln!(out, "{HEADER}")?;
    for r in records {
        if r.cluster_id.is_empty() || r.cluster_id.contains([',', '"', '\n', '\r']) {
            return Err(Error::InvalidParameter(format!(
                "cluster_id `{}` cannot be written unquoted",
                r.cluster_id
            )));
        }
        writeln!(out, "{},{},{}", r.cluster_id, r.w, r.y)?;
    }
    out.flush()?;
    Ok(())
}
