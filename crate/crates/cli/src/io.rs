//! CSV ingestion and atomic output.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use opcal::linalg::Mat;

use crate::error::{CliError, Result};

/// A numeric CSV: header names (without the id column), optional row ids
/// and the data matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub ids: Option<Vec<String>>,
    pub data: Mat,
}

/// A single-column label CSV for classification.
#[derive(Debug, Clone, PartialEq)]
pub struct Labels {
    pub name: String,
    pub ids: Option<Vec<String>>,
    pub values: Vec<String>,
}

struct Raw {
    header: Vec<String>,
    has_id: bool,
    rows: Vec<(u64, Vec<String>)>,
}

fn read_raw<R: Read>(reader: R, source: &str) -> Result<Raw> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| CliError::input(source, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(CliError::input(source, "missing header row"));
    }
    let has_id = header[0].eq_ignore_ascii_case("id");
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::input(source, e.to_string()))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != header.len() {
            return Err(CliError::Cell {
                path: source.to_string(),
                line,
                column: rec.len().min(header.len()) + 1,
                message: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    if rows.is_empty() {
        return Err(CliError::input(source, "no data rows"));
    }
    Ok(Raw { header, has_id, rows })
}

fn split_ids(raw: &Raw) -> (Vec<String>, Option<Vec<String>>) {
    let skip = usize::from(raw.has_id);
    let header = raw.header[skip..].to_vec();
    let ids = raw
        .has_id
        .then(|| raw.rows.iter().map(|(_, r)| r[0].clone()).collect());
    (header, ids)
}

/// Parse a numeric table. The first row is the header; a first column named
/// `id` is kept aside as row identifiers.
pub fn parse_table<R: Read>(reader: R, source: &str) -> Result<Table> {
    let raw = read_raw(reader, source)?;
    let skip = usize::from(raw.has_id);
    let (header, ids) = split_ids(&raw);
    if header.is_empty() {
        return Err(CliError::input(source, "no numeric columns"));
    }
    let p = header.len();
    let mut values = Vec::with_capacity(raw.rows.len() * p);
    for (line, row) in &raw.rows {
        for (j, cell) in row[skip..].iter().enumerate() {
            let bad = |message: String| CliError::Cell {
                path: source.to_string(),
                line: *line,
                column: j + skip + 1,
                message,
            };
            let v: f64 = cell.parse().map_err(|_| bad(format!("not a number: {cell:?}")))?;
            if !v.is_finite() {
                return Err(bad(format!("non-finite value {cell:?}")));
            }
            values.push(v);
        }
    }
    Ok(Table {
        header,
        ids,
        data: Mat::from_row_slice(raw.rows.len(), p, &values),
    })
}

/// Parse a label table: an optional id column and exactly one label column.
pub fn parse_labels<R: Read>(reader: R, source: &str) -> Result<Labels> {
    let raw = read_raw(reader, source)?;
    let skip = usize::from(raw.has_id);
    let (header, ids) = split_ids(&raw);
    if header.len() != 1 {
        return Err(CliError::input(
            source,
            format!("expected one label column, found {}", header.len()),
        ));
    }
    let mut values = Vec::with_capacity(raw.rows.len());
    for (line, row) in &raw.rows {
        let cell = &row[skip];
        if cell.is_empty() {
            return Err(CliError::Cell {
                path: source.to_string(),
                line: *line,
                column: skip + 1,
                message: "empty label".into(),
            });
        }
        values.push(cell.clone());
    }
    Ok(Labels {
        name: header[0].clone(),
        ids,
        values,
    })
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_table(path: &Path) -> Result<Table> {
    parse_table(std::io::BufReader::new(open(path)?), &path.display().to_string())
}

pub fn load_labels(path: &Path) -> Result<Labels> {
    parse_labels(std::io::BufReader::new(open(path)?), &path.display().to_string())
}

/// Row order that lines the `y` rows up with the `x` rows. When both files
/// carry ids the rows are matched by id, otherwise by position.
pub fn alignment(
    x_ids: Option<&[String]>,
    y_ids: Option<&[String]>,
    n_x: usize,
    n_y: usize,
    source: &str,
) -> Result<Vec<usize>> {
    match (x_ids, y_ids) {
        (Some(xi), Some(yi)) => {
            let mut pos = HashMap::with_capacity(yi.len());
            for (i, id) in yi.iter().enumerate() {
                if pos.insert(id.as_str(), i).is_some() {
                    return Err(CliError::input(source, format!("duplicate id {id:?}")));
                }
            }
            if yi.len() != xi.len() {
                return Err(CliError::input(
                    source,
                    format!("{} rows but the spectra have {}", yi.len(), xi.len()),
                ));
            }
            xi.iter()
                .map(|id| {
                    pos.get(id.as_str())
                        .copied()
                        .ok_or_else(|| CliError::input(source, format!("no row with id {id:?}")))
                })
                .collect()
        }
        _ if n_x != n_y => Err(CliError::input(
            source,
            format!("{n_y} rows but the spectra have {n_x}"),
        )),
        _ => Ok((0..n_x).collect()),
    }
}

/// Write `bytes` to `path` through a temporary file in the same directory
/// followed by a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let io_err = |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    tmp.write_all(bytes).map_err(io_err)?;
    tmp.as_file().sync_all().map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

/// CSV text from a header and rows of already formatted fields.
pub fn csv_text(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| CliError::input("<output>", e.to_string());
    w.write_record(header).map_err(to_err)?;
    for r in rows {
        w.write_record(&r).map_err(to_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::input("<output>", e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Numeric table as CSV. Values use the shortest representation that
/// parses back to the same `f64`.
pub fn table_csv(header: &[String], ids: Option<&[String]>, data: &Mat) -> Result<String> {
    let mut head = Vec::with_capacity(header.len() + 1);
    if ids.is_some() {
        head.push("id".to_string());
    }
    head.extend(header.iter().cloned());
    let rows = (0..data.nrows()).map(|i| {
        let mut r = Vec::with_capacity(head.len());
        if let Some(ids) = ids {
            r.push(ids[i].clone());
        }
        r.extend(data.row(i).iter().map(|v| format!("{v:?}")));
        r
    });
    csv_text(&head, rows)
}
