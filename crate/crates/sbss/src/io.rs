//! CSV formats.
//!
//! Locations: header `x1,…,xd`. Field samples: `x1,…,xd,v1,…,vp`. Both use
//! shortest round-trip decimals. Matrices have no header and carry 17
//! significant digits.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use sbss_core::{FieldSample, LocationSet, Mat};

use crate::error::{Error, Result};

/// Header plus numeric rows of a CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn ncols(&self) -> usize {
        self.headers.len()
    }

    pub fn column(&self, c: usize) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().map(move |r| r[c])
    }
}

fn parse_error(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn reader(path: &Path, headers: bool) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(headers)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(file))
}

fn numeric_records(path: &Path, rdr: &mut csv::Reader<File>, width: Option<usize>) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    let mut width = width;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_error(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let w = *width.get_or_insert(rec.len());
        if rec.len() != w {
            return Err(parse_error(path, line, format!("expected {w} fields, found {}", rec.len())));
        }
        let row = rec
            .iter()
            .enumerate()
            .map(|(c, t)| {
                t.parse::<f64>()
                    .map_err(|_| parse_error(path, line, format!("field {} is not a number: {t:?}", c + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn read_table(path: impl AsRef<Path>) -> Result<Table> {
    let path = path.as_ref();
    let mut rdr = reader(path, true)?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| parse_error(path, 1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(parse_error(path, 1, "missing header"));
    }
    let rows = numeric_records(path, &mut rdr, Some(headers.len()))?;
    Ok(Table { headers, rows })
}

/// Number of leading `x1, x2, …` columns.
fn coordinate_columns(headers: &[String]) -> usize {
    headers
        .iter()
        .enumerate()
        .take_while(|(i, h)| h.as_str() == format!("x{}", i + 1))
        .count()
}

fn locations_from(path: &Path, table: &Table, dim: usize) -> Result<LocationSet> {
    if dim == 0 {
        return Err(parse_error(path, 1, "expected coordinate columns x1, x2, …"));
    }
    let coords = table.rows.iter().flat_map(|r| r[..dim].iter().copied()).collect();
    Ok(LocationSet::from_rows(dim, coords)?)
}

pub fn read_locations(path: impl AsRef<Path>) -> Result<LocationSet> {
    let path = path.as_ref();
    let table = read_table(path)?;
    let dim = coordinate_columns(&table.headers);
    if dim != table.ncols() {
        return Err(parse_error(
            path,
            1,
            format!("column {:?} is not a coordinate", table.headers[dim.min(table.ncols() - 1)]),
        ));
    }
    locations_from(path, &table, dim)
}

/// A sample read from disk with its variable names.
#[derive(Debug, Clone)]
pub struct NamedSample {
    pub sample: FieldSample,
    pub variables: Vec<String>,
}

/// Reads leading `x1…xd` coordinates followed by any number of variables.
pub fn read_sample(path: impl AsRef<Path>) -> Result<NamedSample> {
    let path = path.as_ref();
    let table = read_table(path)?;
    let dim = coordinate_columns(&table.headers);
    let p = table.ncols() - dim;
    if p == 0 {
        return Err(parse_error(path, 1, "no variable columns after the coordinates"));
    }
    let locs = locations_from(path, &table, dim)?;
    let values = Mat::from_fn(table.rows.len(), p, |i, j| table.rows[i][dim + j]);
    Ok(NamedSample {
        sample: FieldSample::new(locs, values)?,
        variables: table.headers[dim..].to_vec(),
    })
}

/// Headerless numeric matrix.
pub fn read_matrix(path: impl AsRef<Path>) -> Result<Mat> {
    let path = path.as_ref();
    let mut rdr = reader(path, false)?;
    let rows = numeric_records(path, &mut rdr, None)?;
    if rows.is_empty() {
        return Err(parse_error(path, 1, "empty matrix"));
    }
    Ok(Mat::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j]))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

/// Writes a header and pre-formatted rows.
pub fn write_rows<I, R, S>(path: impl AsRef<Path>, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let path = path.as_ref();
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    if !header.is_empty() {
        writeln!(w, "{}", header.join(",")).map_err(io)?;
    }
    for row in rows {
        let line: Vec<String> = row.into_iter().map(|s| s.as_ref().to_string()).collect();
        writeln!(w, "{}", line.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn coord_header(dim: usize) -> Vec<String> {
    (1..=dim).map(|i| format!("x{i}")).collect()
}

pub fn write_locations(path: impl AsRef<Path>, locs: &LocationSet) -> Result<()> {
    let header = coord_header(locs.dim());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_rows(path, &header, (0..locs.n()).map(|i| locs.point(i).iter().map(|v| v.to_string())))
}

pub fn write_sample(path: impl AsRef<Path>, sample: &FieldSample) -> Result<()> {
    let locs = sample.locations();
    let mut header = coord_header(locs.dim());
    header.extend((1..=sample.p()).map(|j| format!("v{j}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let values = sample.values();
    write_rows(
        path,
        &header,
        (0..sample.n()).map(|i| {
            locs.point(i)
                .iter()
                .copied()
                .chain(values.row(i).iter().copied())
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
        }),
    )
}

/// Matrix entry with 17 significant digits.
pub fn fmt_fixed(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_matrix(path: impl AsRef<Path>, m: &Mat) -> Result<()> {
    write_rows(path, &[], (0..m.nrows()).map(|i| m.row(i).iter().map(|&v| fmt_fixed(v)).collect::<Vec<_>>()))
}

/// Matrix with a header row, one named column per matrix column.
pub fn write_named_matrix(path: impl AsRef<Path>, header: &[&str], m: &Mat) -> Result<()> {
    write_rows(path, header, (0..m.nrows()).map(|i| m.row(i).iter().map(|&v| fmt_fixed(v)).collect::<Vec<_>>()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coordinate_prefix() {
        let h = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        assert_eq!(coordinate_columns(&h(&["x1", "x2", "v1"])), 2);
        assert_eq!(coordinate_columns(&h(&["x1", "x3"])), 1);
        assert_eq!(coordinate_columns(&h(&["v1"])), 0);
    }

    #[test]
    fn fixed_format_round_trips() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23] {
            assert_eq!(fmt_fixed(v).parse::<f64>().unwrap(), v);
        }
    }
}
