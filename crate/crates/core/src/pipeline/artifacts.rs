use super::{Pipeline, PipelineError};
use serde_json::{json, Value};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

/// Bumped when an artifact layout changes.
pub const ARTIFACT_VERSION: u32 = 1;

/// First line of every CSV artifact.
pub fn header_line(config_hash: &str, artifact: &str) -> String {
    format!(
        "# telerisk {} config_hash={config_hash} artifact={artifact}/v{ARTIFACT_VERSION}",
        env!("CARGO_PKG_VERSION")
    )
}

pub(crate) type CsvOut = csv::Writer<BufWriter<File>>;

fn create(p: &Pipeline, name: &str) -> Result<BufWriter<File>, PipelineError> {
    let path = p.path(name);
    let file = File::create(&path).map_err(|e| PipelineError::data(format!("{}: {e}", path.display())))?;
    Ok(BufWriter::new(file))
}

/// Opens a CSV artifact, writes the provenance line and the column header.
pub(crate) fn create_csv<S: AsRef<str>>(p: &Pipeline, name: &str, columns: &[S]) -> Result<CsvOut, PipelineError> {
    let mut out = create(p, name)?;
    writeln!(out, "{}", header_line(&p.config_hash, name))?;
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(columns.iter().map(|c| c.as_ref()))?;
    Ok(w)
}

/// Writes the provenance line then hands the raw writer to `body`.
pub(crate) fn create_raw(
    p: &Pipeline,
    name: &str,
    body: impl FnOnce(&mut BufWriter<File>) -> Result<(), PipelineError>,
) -> Result<(), PipelineError> {
    let mut out = create(p, name)?;
    writeln!(out, "{}", header_line(&p.config_hash, name))?;
    body(&mut out)?;
    out.flush()?;
    Ok(())
}

/// Writes a JSON object with a leading `meta` entry.
pub(crate) fn write_json(p: &Pipeline, name: &str, body: Value) -> Result<(), PipelineError> {
    let mut obj = match body {
        Value::Object(map) => map,
        other => {
            let mut map = serde_json::Map::new();
            map.insert("value".into(), other);
            map
        }
    };
    obj.insert(
        "meta".into(),
        json!({
            "tool": "telerisk",
            "version": env!("CARGO_PKG_VERSION"),
            "config_hash": p.config_hash,
            "artifact": format!("{name}/v{ARTIFACT_VERSION}"),
        }),
    );
    let mut out = create(p, name)?;
    serde_json::to_writer_pretty(&mut out, &Value::Object(obj))?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub(crate) fn missing(path: &Path, stage: &str) -> PipelineError {
    PipelineError::data(format!("missing artifact {}; run `telerisk {stage}` first", path.display()))
}

/// Reads a CSV artifact, skipping `#` lines. Returns the header and rows.
pub fn read_artifact_csv(path: &Path) -> Result<(Vec<String>, Vec<csv::StringRecord>), PipelineError> {
    let file = File::open(path).map_err(|e| PipelineError::data(format!("{}: {e}", path.display())))?;
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(BufReader::new(file));
    let header = r.headers()?.iter().map(String::from).collect();
    let rows = r.records().collect::<Result<Vec<_>, _>>()?;
    Ok((header, rows))
}

pub(crate) fn read_csv_from(
    p: &Pipeline,
    name: &str,
    stage: &str,
    expect: &[&str],
) -> Result<Vec<csv::StringRecord>, PipelineError> {
    let path = p.path(name);
    if !path.exists() {
        return Err(missing(&path, stage));
    }
    let (header, rows) = read_artifact_csv(&path)?;
    if header.len() < expect.len() || header.iter().zip(expect).any(|(a, b)| a != b) {
        return Err(PipelineError::data(format!("{name}: unexpected columns {header:?}")));
    }
    Ok(rows)
}

pub(crate) fn read_json_from(p: &Pipeline, name: &str, stage: &str) -> Result<Value, PipelineError> {
    let path = p.path(name);
    if !path.exists() {
        return Err(missing(&path, stage));
    }
    let file = File::open(&path)?;
    let mut v: Value =
        serde_json::from_reader(BufReader::new(file)).map_err(|e| PipelineError::data(format!("{name}: {e}")))?;
    if let Value::Object(map) = &mut v {
        map.remove("meta");
    }
    Ok(v)
}

pub(crate) fn field<T: std::str::FromStr>(row: &csv::StringRecord, i: usize, name: &str) -> Result<T, PipelineError> {
    row.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| {
        PipelineError::data(format!("{name}: bad field {i} in row {:?}", row.position().map(|p| p.line())))
    })
}
