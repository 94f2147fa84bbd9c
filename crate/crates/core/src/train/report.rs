use std::io::Write;

use serde::Serialize;
use serde_json::Value;

use super::model::Model;
use crate::corpus::{parse_annotation, DialogSample};
use crate::error::{Error, Result};
use crate::similarity::view_score;
use crate::sts::{extract_view_sets, SemanticTree, ViewId};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViewRow {
    pub view: ViewId,
    pub score: f64,
    pub defined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreReport {
    pub views: Vec<ViewRow>,
    /// Mean over defined views; `None` when no view is defined.
    pub mean: Option<f64>,
}

pub fn score_trees(a: &SemanticTree, b: &SemanticTree) -> ScoreReport {
    let (va, vb) = (extract_view_sets(a), extract_view_sets(b));
    let views: Vec<ViewRow> = ViewId::ALL
        .iter()
        .map(|&v| {
            let s = view_score(&va, &vb, v);
            ViewRow { view: v, score: s.score, defined: s.defined }
        })
        .collect();
    let defined: Vec<f64> = views.iter().filter(|r| r.defined).map(|r| r.score).collect();
    let mean = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    ScoreReport { views, mean }
}

/// Reads an annotation from a JSON document: a corpus line carrying
/// `"annotation"`, a `{"schema_kind", "record"}` object, or canonical
/// `{"paths": [...]}`.
pub fn annotation_from_document(doc: &Value) -> Result<SemanticTree> {
    let obj = doc.as_object().ok_or_else(|| Error::schema("annotation", "expected a JSON object"))?;
    if obj.contains_key("turns") || obj.contains_key("dialog_id") {
        let ann = obj
            .get("annotation")
            .filter(|v| !v.is_null())
            .ok_or_else(|| Error::schema("annotation", "sample carries no annotation"))?;
        return parse_annotation(ann);
    }
    if let Some(ann) = obj.get("annotation") {
        return parse_annotation(ann);
    }
    if obj.contains_key("paths") || obj.contains_key("schema_kind") {
        return parse_annotation(doc);
    }
    Err(Error::schema("annotation", "no `annotation`, `paths` or `schema_kind` field"))
}

/// Writes one TSV row per sample and view: dialog id, view, then the
/// components of `σ_k(z)`.
pub fn export_embeddings<W: Write>(model: &Model, samples: &[DialogSample], mut out: W) -> Result<usize> {
    let projected = model.project_views(samples)?;
    let mut rows = 0;
    let io = |e| Error::io("<embeddings output>", e);
    for (sample, views) in samples.iter().zip(&projected) {
        for (view, v) in ViewId::ALL.iter().zip(views) {
            let mut line = format!("{}\t{}", sample.dialog_id, view.as_str());
            for x in v {
                line.push('\t');
                line.push_str(&x.to_string());
            }
            writeln!(out, "{line}").map_err(io)?;
            rows += 1;
        }
    }
    out.flush().map_err(io)?;
    Ok(rows)
}
