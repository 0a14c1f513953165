use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use crate::{Cli, Format};

pub const SCHEMA_VERSION: u32 = 1;

/// A header row plus string cells.
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Self {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

fn io_error(path: Option<&Path>, source: io::Error) -> optmmd::Error {
    optmmd::Error::Io {
        path: path.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("<stdout>")),
        source,
    }
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>, optmmd::Error> {
    Ok(match path {
        Some(p) => Box::new(io::BufWriter::new(File::create(p).map_err(|e| io_error(Some(p), e))?)),
        None => Box::new(io::stdout().lock()),
    })
}

/// Wraps a result object with its `schema_version`.
pub fn versioned(value: Value) -> Value {
    let mut out = Map::new();
    out.insert("schema_version".into(), json!(SCHEMA_VERSION));
    match value {
        Value::Object(fields) => out.extend(fields),
        other => {
            out.insert("result".into(), other);
        }
    }
    Value::Object(out)
}

pub fn write_json(path: Option<&Path>, value: Value) -> Result<(), optmmd::Error> {
    let mut w = sink(path)?;
    let text = serde_json::to_string_pretty(&versioned(value)).expect("JSON values always serialize");
    w.write_all(text.as_bytes())
        .and_then(|_| w.write_all(b"\n"))
        .and_then(|_| w.flush())
        .map_err(|e| io_error(path, e))
}

pub fn write_csv(path: Option<&Path>, table: &Table) -> Result<(), optmmd::Error> {
    let mut w = csv::Writer::from_writer(sink(path)?);
    let to_io = |e: csv::Error| io_error(path, io::Error::other(e));
    w.write_record(&table.header).map_err(to_io)?;
    for row in &table.rows {
        w.write_record(row).map_err(to_io)?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

/// Writes the command's primary result in the format chosen by `--format`.
pub fn emit(cli: &Cli, value: Value, table: &Table) -> Result<(), optmmd::Error> {
    match cli.format {
        Format::Json => write_json(cli.output.as_deref(), value),
        Format::Csv => write_csv(cli.output.as_deref(), table),
    }
}
