//! Line-oriented JSON helpers shared by every file format in the crate.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// Reads every non-blank line as a JSON object, tagged with its 1-based line number.
pub fn read_objects(path: &Path) -> Result<Vec<(usize, Map<String, Value>)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Value>(&line) {
            Ok(Value::Object(map)) => out.push((lineno, map)),
            Ok(_) => {
                return Err(Error::Parse {
                    line: lineno,
                    message: "expected a JSON object".into(),
                })
            }
            Err(e) => {
                return Err(Error::Parse {
                    line: lineno,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

/// Checks `required` fields are present, then deserializes the object.
pub fn decode<T: DeserializeOwned>(line: usize, map: Map<String, Value>, required: &[&'static str]) -> Result<T> {
    if let Some(field) = required.iter().find(|f| !map.contains_key(**f)) {
        return Err(Error::MissingField { line, field });
    }
    serde_json::from_value(Value::Object(map)).map_err(|e| Error::Parse {
        line,
        message: e.to_string(),
    })
}

pub fn read<T: DeserializeOwned>(path: &Path, required: &[&'static str]) -> Result<Vec<T>> {
    read_objects(path)?
        .into_iter()
        .map(|(line, map)| decode(line, map, required))
        .collect()
}

pub fn to_string<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        // Serializing plain data structs cannot fail.
        out.push_str(&serde_json::to_string(item).expect("serializable record"));
        out.push('\n');
    }
    out
}

pub fn write<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(to_string(items).as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}
