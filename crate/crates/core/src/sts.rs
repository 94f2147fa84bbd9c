//! Semantic tree structures: a four-layer (domain, intent, slot, value) tree
//! that every dialog annotation schema is normalized into, and the ten
//! node/path views extracted from it.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// Joins the layers of a path-view tuple. Not printable, so labels that
/// contain arrows or dots never collide.
pub const PATH_SEP: char = '\u{1f}';

/// Number of views scored per tree pair.
pub const VIEW_COUNT: usize = 10;

/// A case-folded, trimmed, non-empty label.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Label(String);

impl Label {
    /// Returns `None` for strings that are empty after trimming.
    pub fn new(raw: &str) -> Option<Self> {
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            None
        } else {
            Some(Label(trimmed.to_lowercase()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// The four layers of a tree, root to leaf.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Layer {
    Domain = 0,
    Intent = 1,
    Slot = 2,
    Value = 3,
}

/// One root-to-leaf branch. Absent layers are `None` (NULL).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AnnotationPath {
    layers: [Option<Label>; 4],
}

impl AnnotationPath {
    /// Builds a path from raw strings, normalizing each label.
    ///
    /// A `Some("")` layer is rejected rather than silently turned into NULL.
    pub fn new(
        domain: Option<&str>,
        intent: Option<&str>,
        slot: Option<&str>,
        value: Option<&str>,
    ) -> Result<Self> {
        let mut layers: [Option<Label>; 4] = Default::default();
        for (idx, (name, raw)) in [
            ("domain", domain),
            ("intent", intent),
            ("slot", slot),
            ("value", value),
        ]
        .into_iter()
        .enumerate()
        {
            if let Some(raw) = raw {
                layers[idx] = Some(
                    Label::new(raw).ok_or_else(|| Error::schema(name, "empty label"))?,
                );
            }
        }
        Self::from_labels(layers)
    }

    pub fn from_labels(layers: [Option<Label>; 4]) -> Result<Self> {
        if layers.iter().all(Option::is_none) {
            return Err(Error::schema("paths", "path with every layer NULL"));
        }
        Ok(AnnotationPath { layers })
    }

    pub fn layer(&self, layer: Layer) -> Option<&Label> {
        self.layers[layer as usize].as_ref()
    }

    pub fn domain(&self) -> Option<&Label> {
        self.layer(Layer::Domain)
    }

    pub fn intent(&self) -> Option<&Label> {
        self.layer(Layer::Intent)
    }

    pub fn slot(&self) -> Option<&Label> {
        self.layer(Layer::Slot)
    }

    pub fn value(&self) -> Option<&Label> {
        self.layer(Layer::Value)
    }

    fn to_raw(&self) -> [Option<String>; 4] {
        self.layers
            .clone()
            .map(|label| label.map(|label| label.0))
    }
}

/// A deduplicated, order-independent set of annotation paths.
///
/// An empty tree marks an unlabeled sample.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct SemanticTree {
    paths: BTreeSet<AnnotationPath>,
}

impl SemanticTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_paths(paths: impl IntoIterator<Item = AnnotationPath>) -> Self {
        SemanticTree {
            paths: paths.into_iter().collect(),
        }
    }

    pub fn insert(&mut self, path: AnnotationPath) -> bool {
        self.paths.insert(path)
    }

    pub fn paths(&self) -> impl Iterator<Item = &AnnotationPath> {
        self.paths.iter()
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// Union of two trees, used to merge per-turn annotations of one context.
    pub fn union(&self, other: &SemanticTree) -> SemanticTree {
        SemanticTree {
            paths: self.paths.union(&other.paths).cloned().collect(),
        }
    }

    /// Distinct labels of one layer.
    pub fn labels(&self, layer: Layer) -> BTreeSet<&Label> {
        self.paths.iter().filter_map(|p| p.layer(layer)).collect()
    }

    /// Canonical `{"paths": [[d, i, s, v], ...]}` form.
    pub fn to_canonical(&self) -> Value {
        serde_json::to_value(self).expect("tree serialization is infallible")
    }

    /// Parses the canonical form written by [`SemanticTree::to_canonical`].
    pub fn from_canonical(value: &Value) -> Result<Self> {
        let obj = value
            .as_object()
            .ok_or_else(|| Error::schema("annotation", "expected an object"))?;
        let paths = obj
            .get("paths")
            .ok_or_else(|| Error::schema("paths", "missing field"))?
            .as_array()
            .ok_or_else(|| Error::schema("paths", "expected an array"))?;
        let mut tree = SemanticTree::new();
        for (n, entry) in paths.iter().enumerate() {
            let field = format!("paths[{n}]");
            let layers = entry
                .as_array()
                .filter(|a| a.len() == 4)
                .ok_or_else(|| Error::schema(&field, "expected [domain, intent, slot, value]"))?;
            let mut raw: [Option<&str>; 4] = [None; 4];
            for (slot, layer) in raw.iter_mut().zip(layers) {
                *slot = match layer {
                    Value::Null => None,
                    Value::String(s) => Some(s.as_str()),
                    _ => return Err(Error::schema(&field, "labels must be strings or null")),
                };
            }
            let path = AnnotationPath::new(raw[0], raw[1], raw[2], raw[3]).map_err(|e| match e {
                Error::Schema { reason, .. } => Error::schema(&field, reason),
                other => other,
            })?;
            tree.insert(path);
        }
        Ok(tree)
    }
}

#[derive(Serialize, Deserialize)]
struct CanonicalTree {
    paths: Vec<[Option<String>; 4]>,
}

impl Serialize for SemanticTree {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        CanonicalTree {
            paths: self.paths.iter().map(AnnotationPath::to_raw).collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SemanticTree {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = Value::deserialize(deserializer)?;
        SemanticTree::from_canonical(&value).map_err(serde::de::Error::custom)
    }
}

/// Identifier of one of the ten views. Node views cover a single layer,
/// path views a contiguous run of layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ViewId {
    D,
    I,
    S,
    V,
    DI,
    IS,
    SV,
    DIS,
    ISV,
    DISV,
}

impl ViewId {
    pub const ALL: [ViewId; VIEW_COUNT] = [
        ViewId::D,
        ViewId::I,
        ViewId::S,
        ViewId::V,
        ViewId::DI,
        ViewId::IS,
        ViewId::SV,
        ViewId::DIS,
        ViewId::ISV,
        ViewId::DISV,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ViewId::D => "D",
            ViewId::I => "I",
            ViewId::S => "S",
            ViewId::V => "V",
            ViewId::DI => "DI",
            ViewId::IS => "IS",
            ViewId::SV => "SV",
            ViewId::DIS => "DIS",
            ViewId::ISV => "ISV",
            ViewId::DISV => "DISV",
        }
    }

    /// The contiguous layer range `[first, last]` this view spans.
    pub fn layers(self) -> (Layer, Layer) {
        use Layer::*;
        match self {
            ViewId::D => (Domain, Domain),
            ViewId::I => (Intent, Intent),
            ViewId::S => (Slot, Slot),
            ViewId::V => (Value, Value),
            ViewId::DI => (Domain, Intent),
            ViewId::IS => (Intent, Slot),
            ViewId::SV => (Slot, Value),
            ViewId::DIS => (Domain, Slot),
            ViewId::ISV => (Intent, Value),
            ViewId::DISV => (Domain, Value),
        }
    }

    pub fn is_path_view(self) -> bool {
        let (first, last) = self.layers();
        first != last
    }
}

impl fmt::Display for ViewId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for ViewId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl FromStr for ViewId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ViewId::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown view id `{s}`")))
    }
}

/// The ten node/path label sets of one tree.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ViewSets {
    sets: [BTreeSet<String>; VIEW_COUNT],
}

impl ViewSets {
    pub fn get(&self, view: ViewId) -> &BTreeSet<String> {
        &self.sets[view.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ViewId, &BTreeSet<String>)> {
        ViewId::ALL.into_iter().map(move |v| (v, &self.sets[v.index()]))
    }

    pub fn is_empty(&self) -> bool {
        self.sets.iter().all(BTreeSet::is_empty)
    }
}

/// Joins labels into a path-view tuple key.
pub fn join_tuple<'a>(labels: impl IntoIterator<Item = &'a str>) -> String {
    let mut out = String::new();
    for (n, label) in labels.into_iter().enumerate() {
        if n > 0 {
            out.push(PATH_SEP);
        }
        out.push_str(label);
    }
    out
}

/// Collects the ten views of a tree.
///
/// A tuple enters a path view only when every layer it spans is non-NULL on
/// the same path.
pub fn extract_view_sets(tree: &SemanticTree) -> ViewSets {
    let mut out = ViewSets::default();
    for path in tree.paths() {
        for view in ViewId::ALL {
            let (first, last) = view.layers();
            let span = &path.layers[first as usize..=last as usize];
            if span.iter().all(Option::is_some) {
                let key = join_tuple(span.iter().flatten().map(Label::as_str));
                out.sets[view.index()].insert(key);
            }
        }
    }
    out
}

/// Annotation schema families that datasets declare.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemaKind {
    /// `{"intent": "card_arrival"}` or `{"intent": ["a", "b"]}`.
    IntentOnly,
    /// `{"slots": {"time.reservation": "7 pm"}}` or
    /// `{"slots": "time.reservation=7 pm, num.guests=8"}`.
    SlotValueOnly,
    /// Nested `{domain: {intent: {slot: value}}}` dialog acts, plus the flat
    /// `{"Domain-Intent": [[slot, value], ...]}` variant.
    DialogAct,
}

impl SchemaKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SchemaKind::IntentOnly => "intent_only",
            SchemaKind::SlotValueOnly => "slot_value_only",
            SchemaKind::DialogAct => "dialog_act",
        }
    }
}

impl FromStr for SchemaKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "intent_only" => Ok(SchemaKind::IntentOnly),
            "slot_value_only" => Ok(SchemaKind::SlotValueOnly),
            "dialog_act" => Ok(SchemaKind::DialogAct),
            other => Err(Error::Config(format!("unknown schema kind `{other}`"))),
        }
    }
}

/// Normalizes a schema-specific record into a [`SemanticTree`].
///
/// Records already in canonical `{"paths": [...]}` form are accepted under
/// every schema kind, which makes normalization idempotent. An empty object
/// (or `null`) yields an empty tree.
pub fn normalize_annotation(raw: &Value, kind: SchemaKind) -> Result<SemanticTree> {
    let obj = match raw {
        Value::Null => return Ok(SemanticTree::new()),
        Value::Object(obj) => obj,
        _ => return Err(Error::schema("annotation", "expected an object")),
    };
    if obj.is_empty() {
        return Ok(SemanticTree::new());
    }
    if obj.len() == 1 && obj.contains_key("paths") {
        return SemanticTree::from_canonical(raw);
    }
    match kind {
        SchemaKind::IntentOnly => normalize_intent_only(obj),
        SchemaKind::SlotValueOnly => normalize_slot_value(obj),
        SchemaKind::DialogAct => normalize_dialog_act(obj),
    }
}

fn string_list<'a>(value: &'a Value, field: &str) -> Result<Vec<&'a str>> {
    match value {
        Value::String(s) => Ok(vec![s.as_str()]),
        Value::Array(items) => items
            .iter()
            .map(|item| {
                item.as_str()
                    .ok_or_else(|| Error::schema(field, "expected strings"))
            })
            .collect(),
        Value::Null => Ok(Vec::new()),
        _ => Err(Error::schema(field, "expected a string or a list of strings")),
    }
}

/// Non-empty label or NULL.
fn opt(raw: &str) -> Option<&str> {
    if raw.trim().is_empty() {
        None
    } else {
        Some(raw)
    }
}

fn normalize_intent_only(obj: &Map<String, Value>) -> Result<SemanticTree> {
    let intents = obj
        .get("intent")
        .ok_or_else(|| Error::schema("intent", "missing field"))?;
    let mut tree = SemanticTree::new();
    for intent in string_list(intents, "intent")?.into_iter().filter_map(opt) {
        tree.insert(AnnotationPath::new(None, Some(intent), None, None)?);
    }
    Ok(tree)
}

fn normalize_slot_value(obj: &Map<String, Value>) -> Result<SemanticTree> {
    let slots = obj
        .get("slots")
        .ok_or_else(|| Error::schema("slots", "missing field"))?;
    let mut tree = SemanticTree::new();
    match slots {
        Value::Object(map) => {
            for (slot, value) in map {
                let field = format!("slots.{slot}");
                let slot = opt(slot).ok_or_else(|| Error::schema(&field, "empty slot name"))?;
                let values = string_list(value, &field)?;
                push_slot_values(&mut tree, None, None, slot, &values)?;
            }
        }
        Value::String(text) => {
            for pair in text.split(',').filter(|p| !p.trim().is_empty()) {
                let (slot, value) = match pair.split_once('=') {
                    Some((s, v)) => (s, opt(v)),
                    None => (pair, None),
                };
                let slot = opt(slot).ok_or_else(|| Error::schema("slots", "empty slot name"))?;
                tree.insert(AnnotationPath::new(None, None, Some(slot), value)?);
            }
        }
        _ => return Err(Error::schema("slots", "expected an object or `k=v` string")),
    }
    Ok(tree)
}

fn push_slot_values(
    tree: &mut SemanticTree,
    domain: Option<&str>,
    intent: Option<&str>,
    slot: &str,
    values: &[&str],
) -> Result<()> {
    let values: Vec<&str> = values.iter().copied().filter_map(opt).collect();
    if values.is_empty() {
        tree.insert(AnnotationPath::new(domain, intent, Some(slot), None)?);
    }
    for value in values {
        tree.insert(AnnotationPath::new(domain, intent, Some(slot), Some(value))?);
    }
    Ok(())
}

fn normalize_dialog_act(obj: &Map<String, Value>) -> Result<SemanticTree> {
    let mut tree = SemanticTree::new();
    for (domain_key, body) in obj {
        match body {
            Value::Object(intents) => {
                let domain = opt(domain_key);
                for (intent_key, slots) in intents {
                    let field = format!("{domain_key}.{intent_key}");
                    let intent = opt(intent_key);
                    push_intent(&mut tree, domain, intent, slots, &field)?;
                }
            }
            // Flat "Domain-Intent": [[slot, value], ...] acts.
            Value::Array(pairs) => {
                let (domain, intent) = match domain_key.split_once('-') {
                    Some((d, i)) => (opt(d), opt(i)),
                    None => (None, opt(domain_key)),
                };
                let mut any = false;
                for (n, pair) in pairs.iter().enumerate() {
                    let field = format!("{domain_key}[{n}]");
                    let items = string_list(pair, &field)?;
                    let (slot, value) = match items.as_slice() {
                        [] => continue,
                        [slot] => (*slot, None),
                        [slot, value, ..] => (*slot, Some(*value)),
                    };
                    let slot = opt(slot).filter(|s| !s.trim().eq_ignore_ascii_case("none"));
                    let value = value.and_then(opt).filter(|v| !v.trim().eq_ignore_ascii_case("none"));
                    if slot.is_none() && value.is_none() {
                        continue;
                    }
                    any = true;
                    tree.insert(AnnotationPath::new(domain, intent, slot, value)?);
                }
                if !any && (domain.is_some() || intent.is_some()) {
                    tree.insert(AnnotationPath::new(domain, intent, None, None)?);
                }
            }
            _ => {
                return Err(Error::schema(
                    domain_key.as_str(),
                    "expected an object of intents or a list of slot/value pairs",
                ))
            }
        }
    }
    Ok(tree)
}

fn push_intent(
    tree: &mut SemanticTree,
    domain: Option<&str>,
    intent: Option<&str>,
    slots: &Value,
    field: &str,
) -> Result<()> {
    match slots {
        Value::Object(map) if !map.is_empty() => {
            for (slot, value) in map {
                let slot_field = format!("{field}.{slot}");
                let slot = opt(slot).ok_or_else(|| Error::schema(&slot_field, "empty slot name"))?;
                let values = string_list(value, &slot_field)?;
                push_slot_values(tree, domain, intent, slot, &values)?;
            }
        }
        Value::Array(names) if !names.is_empty() => {
            for slot in string_list(slots, field)?.into_iter().filter_map(opt) {
                tree.insert(AnnotationPath::new(domain, intent, Some(slot), None)?);
            }
        }
        Value::Object(_) | Value::Array(_) | Value::Null => {
            if domain.is_some() || intent.is_some() {
                tree.insert(AnnotationPath::new(domain, intent, None, None)?);
            }
        }
        _ => return Err(Error::schema(field, "expected slots as an object, list or null")),
    }
    Ok(())
}
