use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::sts::{normalize_annotation, SchemaKind, SemanticTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    System,
}

impl Role {
    /// Role embedding row.
    pub fn id(self) -> usize {
        match self {
            Role::User => 0,
            Role::System => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: String,
}

impl Turn {
    pub fn user(text: impl Into<String>) -> Self {
        Turn { role: Role::User, text: text.into() }
    }

    pub fn system(text: impl Into<String>) -> Self {
        Turn { role: Role::System, text: text.into() }
    }
}

/// One pre-training sample: a dialog context and, when labeled, the union
/// of its turn annotations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialogSample {
    pub dialog_id: String,
    pub source: String,
    pub turns: Vec<Turn>,
    pub annotation: Option<SemanticTree>,
}

impl DialogSample {
    pub fn is_labeled(&self) -> bool {
        self.annotation.is_some()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSample {
    dialog_id: String,
    #[serde(default)]
    source: String,
    turns: Vec<Turn>,
    #[serde(default)]
    annotation: Option<Value>,
}

#[derive(Serialize)]
struct RawSampleOut<'a> {
    dialog_id: &'a str,
    source: &'a str,
    turns: &'a [Turn],
    #[serde(skip_serializing_if = "Option::is_none")]
    annotation: Option<&'a SemanticTree>,
}

/// Parses an annotation object: either canonical `{"paths": [...]}` or
/// `{"schema_kind": "...", "record": {...}}` for a dataset-native record.
pub fn parse_annotation(value: &Value) -> Result<SemanticTree> {
    match value {
        Value::Object(obj) if obj.contains_key("schema_kind") => {
            let kind: SchemaKind = obj["schema_kind"]
                .as_str()
                .ok_or_else(|| Error::schema("schema_kind", "expected a string"))?
                .parse()?;
            let record = obj.get("record").unwrap_or(&Value::Null);
            normalize_annotation(record, kind)
        }
        Value::Null => Ok(SemanticTree::new()),
        other => SemanticTree::from_canonical(other),
    }
}

impl DialogSample {
    pub fn from_json_line(line: &str) -> Result<Self> {
        let raw: RawSample = serde_json::from_str(line).map_err(|e| Error::schema("sample", e.to_string()))?;
        if raw.turns.is_empty() {
            return Err(Error::schema("turns", "dialog has no turns"));
        }
        let annotation = match raw.annotation {
            Some(v) => Some(parse_annotation(&v)?).filter(|t| !t.is_empty()),
            None => None,
        };
        Ok(DialogSample {
            dialog_id: raw.dialog_id,
            source: raw.source,
            turns: raw.turns,
            annotation,
        })
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&RawSampleOut {
            dialog_id: &self.dialog_id,
            source: &self.source,
            turns: &self.turns,
            annotation: self.annotation.as_ref(),
        })
        .expect("sample serialization is infallible")
    }
}

/// Streams samples from a JSONL reader. Blank lines are skipped; each bad
/// line yields an error carrying its 1-based line number.
pub fn read_jsonl<R: BufRead>(reader: R, path: PathBuf) -> impl Iterator<Item = Result<DialogSample>> {
    reader.lines().enumerate().filter_map(move |(n, line)| {
        let line = match line {
            Ok(l) => l,
            Err(e) => return Some(Err(Error::io(&path, e))),
        };
        if line.trim().is_empty() {
            return None;
        }
        Some(DialogSample::from_json_line(&line).map_err(|e| Error::Parse {
            path: path.clone(),
            line: n + 1,
            reason: e.to_string(),
        }))
    })
}

/// Loads every sample of a JSONL file, failing on the first bad line.
pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<DialogSample>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_jsonl(BufReader::new(file), path.to_path_buf()).collect()
}

pub fn write_jsonl<W: Write>(mut out: W, samples: &[DialogSample]) -> std::io::Result<()> {
    for s in samples {
        writeln!(out, "{}", s.to_json_line())?;
    }
    out.flush()
}

pub fn save_jsonl(path: impl AsRef<Path>, samples: &[DialogSample]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_jsonl(std::io::BufWriter::new(file), samples).map_err(|e| Error::io(path, e))
}
