//! Readers for the line-delimited record files.
//!
//! Blank lines are skipped; line numbers in errors are 1-based.

use std::collections::HashMap;
use std::io::BufRead;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::error::ModelError;
use crate::idmap::{map_from_value, IdentifierMap};
use crate::model::{parse_ground_truth, DiagramAnnotation};
use crate::prediction::OutputFormat;

#[derive(Debug, Error)]
pub enum LineError {
    #[error("read failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Record { line: usize, source: ModelError },
    #[error("line {line}: duplicate image_id {image_id:?}")]
    DuplicateImageId { line: usize, image_id: String },
}

/// Calls `f` with each non-blank line and its 1-based number.
pub fn for_each_line<R: BufRead>(
    reader: R,
    mut f: impl FnMut(usize, &str) -> Result<(), LineError>,
) -> Result<(), LineError> {
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        f(i + 1, &line)?;
    }
    Ok(())
}

/// Reads and validates every annotation; stops at the first bad line.
pub fn read_annotations<R: BufRead>(reader: R) -> Result<Vec<DiagramAnnotation>, LineError> {
    let mut out = Vec::new();
    for_each_line(reader, |line, text| {
        let a = parse_ground_truth(text.as_bytes()).map_err(|source| LineError::Record { line, source })?;
        out.push(a);
        Ok(())
    })?;
    Ok(out)
}

/// Like [`read_annotations`] but keeps going, collecting every bad line.
pub fn validate_annotations<R: BufRead>(reader: R) -> Result<(usize, Vec<LineError>), LineError> {
    let mut ok = 0;
    let mut bad = Vec::new();
    for_each_line(reader, |line, text| {
        match parse_ground_truth(text.as_bytes()) {
            Ok(_) => ok += 1,
            Err(source) => bad.push(LineError::Record { line, source }),
        }
        Ok(())
    })?;
    Ok((ok, bad))
}

/// One raw model output to be scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_id: Option<String>,
    pub image_id: String,
    pub format: OutputFormat,
    pub raw: String,
}

pub fn read_predictions<R: BufRead>(reader: R) -> Result<Vec<PredictionRecord>, LineError> {
    read_predictions_as(reader, None)
}

/// Reads prediction lines; `format`, when given, replaces each line's own
/// format field (which may then be omitted).
pub fn read_predictions_as<R: BufRead>(
    reader: R,
    format: Option<OutputFormat>,
) -> Result<Vec<PredictionRecord>, LineError> {
    let mut out = Vec::new();
    for_each_line(reader, |line, text| {
        let syntax = |e: serde_json::Error| LineError::Record {
            line,
            source: ModelError::Syntax {
                message: e.to_string(),
            },
        };
        let mut v: Value = serde_json::from_str(text).map_err(syntax)?;
        if let (Some(f), Some(obj)) = (format, v.as_object_mut()) {
            obj.insert("format".into(), Value::String(f.as_str().into()));
        }
        out.push(serde_json::from_value(v).map_err(syntax)?);
        Ok(())
    })?;
    Ok(out)
}

/// Reads one JSON value of type `T` per non-blank line.
pub fn read_json_lines<T: DeserializeOwned, R: BufRead>(reader: R) -> Result<Vec<T>, LineError> {
    let mut out = Vec::new();
    for_each_line(reader, |line, text| {
        let rec = serde_json::from_str(text).map_err(|e| LineError::Record {
            line,
            source: ModelError::Syntax {
                message: e.to_string(),
            },
        })?;
        out.push(rec);
        Ok(())
    })?;
    Ok(out)
}

/// Reads `{"image_id": ..., "molecules": [<map entries>]}` lines.
pub fn read_maps<R: BufRead>(reader: R) -> Result<HashMap<String, IdentifierMap>, LineError> {
    let mut out = HashMap::new();
    for_each_line(reader, |line, text| {
        let rec = |source| LineError::Record { line, source };
        let v: Value = serde_json::from_str(text).map_err(|e| {
            rec(ModelError::Syntax {
                message: e.to_string(),
            })
        })?;
        let image_id = v
            .get("image_id")
            .and_then(Value::as_str)
            .ok_or_else(|| rec(ModelError::schema("image_id", "must be a string")))?
            .to_string();
        let entries = v
            .get("molecules")
            .ok_or_else(|| rec(ModelError::schema("molecules", "missing required field")))?;
        let map = map_from_value(entries).map_err(|e| rec(e.at("molecules")))?;
        if out.insert(image_id.clone(), map).is_some() {
            return Err(LineError::DuplicateImageId { line, image_id });
        }
        Ok(())
    })?;
    Ok(out)
}
