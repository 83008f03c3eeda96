//! Line-delimited JSON dataset files: one header object, then one patient
//! per line. Missing measurements are written as `null`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;

use super::{Dataset, DatasetHeader, PatientRecord};
use crate::error::{Error, Result};

pub const DATASET_FORMAT: &str = "tarnn-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Serialize)]
struct HeaderLine<'a> {
    format: &'static str,
    version: u32,
    #[serde(flatten)]
    header: &'a DatasetHeader,
}

fn json_err(context: impl Into<String>) -> impl FnOnce(serde_json::Error) -> Error {
    let context = context.into();
    move |source| Error::Json { context, source }
}

pub fn write_dataset(ds: &Dataset, mut out: impl Write) -> Result<()> {
    let io = |e| Error::io("<dataset>", e);
    let header = HeaderLine {
        format: DATASET_FORMAT,
        version: DATASET_VERSION,
        header: &ds.header,
    };
    serde_json::to_writer(&mut out, &header).map_err(json_err("writing header"))?;
    out.write_all(b"\n").map_err(io)?;
    for p in &ds.patients {
        serde_json::to_writer(&mut out, p).map_err(json_err(format!("writing patient {}", p.id)))?;
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset(ds, BufWriter::new(file)).map_err(|e| relabel(e, path))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(BufReader::new(file)).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => relabel(other, path),
    })
}

fn relabel(e: Error, path: &Path) -> Error {
    match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    }
}

fn parse_header(line: &str) -> Result<DatasetHeader> {
    let value: serde_json::Value = serde_json::from_str(line)
        .map_err(|e| Error::Data(format!("line 1: malformed header: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::Data("line 1: header must be a JSON object".into()))?;
    if obj.get("format").and_then(|f| f.as_str()) != Some(DATASET_FORMAT) {
        return Err(Error::Data(format!(
            "line 1: not a {DATASET_FORMAT} file (format field is {:?})",
            obj.get("format")
        )));
    }
    match obj.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(DATASET_VERSION) => {}
        other => {
            return Err(Error::Data(format!(
                "line 1: unsupported dataset version {other:?}, expected {DATASET_VERSION}"
            )))
        }
    }
    if obj.get("unit").is_none_or(|u| u.is_null()) {
        return Err(Error::Data("line 1: header is missing the time unit".into()));
    }
    serde_json::from_value(value).map_err(|e| Error::Data(format!("line 1: malformed header: {e}")))
}

pub fn read_dataset(input: impl Read) -> Result<Dataset> {
    let mut lines = BufReader::new(input).lines().enumerate();
    let header = loop {
        match lines.next() {
            None => return Err(Error::Data("empty file, expected a header line".into())),
            Some((_, line)) => {
                let line = line.map_err(|e| Error::io("<dataset>", e))?;
                if !line.trim().is_empty() {
                    break parse_header(&line)?;
                }
            }
        }
    };
    let mut patients = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| Error::io("<dataset>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let p: PatientRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("line {lineno}: malformed patient record: {e}")))?;
        p.validate(&header)
            .map_err(|e| Error::Data(format!("line {lineno}: {e}")))?;
        patients.push(p);
    }
    Ok(Dataset { header, patients })
}
