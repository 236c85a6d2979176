//! Task and object data model, wire parsing, validation and canonical JSON.
//!
//! The wire format is the task JSON the generator agents exchange. Field names
//! are snake_case and unknown keys are kept in `extras` so that a task survives
//! a parse/serialize round trip unchanged. Two legacy wire forms are accepted:
//!
//! * `material_attribute` merges into `functional_attribute` and
//!   `geometric_attribute` merges into `appearance_attribute`;
//! * `example_objects` is read as `potential_instances` and `assed_id` as
//!   `asset_id`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

/// Names that may be quoted in task text without appearing in the object list.
pub const IMPLICIT_OBJECTS: [&str; 2] = ["table", "robot"];

const ARTICLE_TOKENS: [&str; 3] = ["a", "an", "the"];
const RESERVED_TOKENS: [&str; 4] = ["pivot", "trap", "related", "unrelated"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
}

impl ParseError {
    fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        ParseError::Schema { path: path.into(), message: message.into() }
    }

    /// JSON-pointer style location of the failure (`""` for syntax errors).
    pub fn path(&self) -> &str {
        match self {
            ParseError::Syntax { .. } => "",
            ParseError::Schema { path, .. } => path,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Geometry,
    Material,
    Assembly,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Geometry, Category::Material, Category::Assembly];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Geometry => "geometry",
            Category::Material => "material",
            Category::Assembly => "assembly",
        }
    }
}

impl std::str::FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "geometry" => Ok(Category::Geometry),
            "material" => Ok(Category::Material),
            "assembly" => Ok(Category::Assembly),
            other => Err(format!("unknown category {other:?}")),
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObjectSpec {
    pub object_name: String,
    pub appearance_attribute: Vec<String>,
    pub functional_attribute: Vec<String>,
    pub potential_instances: Vec<String>,
    pub use_primitive: Option<String>,
    pub asset_id: Option<String>,
    pub extras: BTreeMap<String, Value>,
}

impl ObjectSpec {
    pub fn new(name: impl Into<String>) -> Self {
        Self { object_name: name.into(), ..Default::default() }
    }

    pub fn is_resolved(&self) -> bool {
        self.use_primitive.is_some() || self.asset_id.is_some()
    }

    /// All attribute strings, appearance first.
    pub fn attributes(&self) -> impl Iterator<Item = &str> {
        self.appearance_attribute
            .iter()
            .chain(self.functional_attribute.iter())
            .map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TaskSpec {
    pub task_name: String,
    pub object_list: Vec<ObjectSpec>,
    pub initial_scene_setup: String,
    pub task_instruction: String,
    /// Absent only in legacy documents.
    pub task_success_criteria: Option<String>,
    pub potential_solution: String,
    pub task_description: String,
    pub category: Option<Category>,
    pub difficulty: Option<i64>,
    pub extras: BTreeMap<String, Value>,
}

impl TaskSpec {
    pub fn object(&self, name: &str) -> Option<&ObjectSpec> {
        self.object_list.iter().find(|o| o.object_name == name)
    }

    pub fn object_mut(&mut self, name: &str) -> Option<&mut ObjectSpec> {
        self.object_list.iter_mut().find(|o| o.object_name == name)
    }

    pub fn object_names(&self) -> impl Iterator<Item = &str> {
        self.object_list.iter().map(|o| o.object_name.as_str())
    }

    /// Text fields scanned for quoted object references, with their wire keys.
    pub fn quoted_text_fields(&self) -> Vec<(&'static str, &str)> {
        let mut out = vec![("initial_scene_setup", self.initial_scene_setup.as_str())];
        if let Some(c) = &self.task_success_criteria {
            out.push(("task_success_criteria", c.as_str()));
        }
        out.push(("potential_solution", self.potential_solution.as_str()));
        out.push(("task_description", self.task_description.as_str()));
        out
    }

    /// Objects quoted in the success criteria (deduplicated, in order).
    pub fn criteria_objects(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.task_success_criteria
            .as_deref()
            .map(quoted_names)
            .unwrap_or_default()
            .into_iter()
            .filter(|n| !is_implicit_object(n) && seen.insert(n.clone()))
            .collect()
    }
}

/// A seed task, its accepted mutations and the one metric they share.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskFamily {
    pub seed: TaskSpec,
    pub members: Vec<TaskSpec>,
    pub metric_id: String,
}

impl TaskFamily {
    /// Seed first, then members.
    pub fn tasks(&self) -> impl Iterator<Item = &TaskSpec> {
        std::iter::once(&self.seed).chain(self.members.iter())
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParseOptions {
    /// Category used when the document carries none.
    pub default_category: Option<Category>,
}

/// Parses a task document with default options.
pub fn parse_task(document: &str) -> Result<TaskSpec, ParseError> {
    parse_task_with(document, &ParseOptions::default())
}

pub fn parse_task_with(document: &str, opts: &ParseOptions) -> Result<TaskSpec, ParseError> {
    let value: Value = serde_json::from_str(document).map_err(|e| ParseError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    task_from_value(&value, opts)
}

pub fn task_from_value(value: &Value, opts: &ParseOptions) -> Result<TaskSpec, ParseError> {
    let obj = value
        .as_object()
        .ok_or_else(|| ParseError::schema("", "task document must be a JSON object"))?;
    let mut fields = FieldReader::new(obj, "");

    let task_name = fields.required_str("task_name")?;
    let list = fields.take("object_list").ok_or_else(|| ParseError::schema("/object_list", "missing required field"))?;
    let list = list
        .as_array()
        .ok_or_else(|| ParseError::schema("/object_list", "expected an array"))?;
    let object_list = list
        .iter()
        .enumerate()
        .map(|(i, v)| object_from_value(v, &format!("/object_list/{i}")))
        .collect::<Result<Vec<_>, _>>()?;
    let initial_scene_setup = fields.required_str("initial_scene_setup")?;
    let task_instruction = fields.required_str("task_instruction")?;
    let task_success_criteria = fields.optional_str("task_success_criteria")?;
    let potential_solution = fields.required_str("potential_solution")?;
    let task_description = fields.required_str("task_description")?;
    let category = match fields.optional_str("category")? {
        Some(c) => Some(c.parse::<Category>().map_err(|m| ParseError::schema("/category", m))?),
        None => opts.default_category,
    };
    let difficulty = match fields.take("difficulty") {
        None | Some(Value::Null) => None,
        Some(v) => Some(integer_like(&v).ok_or_else(|| ParseError::schema("/difficulty", "expected an integer"))?),
    };

    Ok(TaskSpec {
        task_name,
        object_list,
        initial_scene_setup,
        task_instruction,
        task_success_criteria,
        potential_solution,
        task_description,
        category,
        difficulty,
        extras: fields.into_extras(),
    })
}

fn object_from_value(value: &Value, path: &str) -> Result<ObjectSpec, ParseError> {
    let obj = value
        .as_object()
        .ok_or_else(|| ParseError::schema(path, "object entry must be a JSON object"))?;
    let mut fields = FieldReader::new(obj, path);

    let object_name = fields.required_str("object_name")?;
    let mut appearance_attribute = fields.str_list("appearance_attribute")?;
    let mut functional_attribute = fields.str_list("functional_attribute")?;
    for extra in fields.str_list("geometric_attribute")? {
        push_unique(&mut appearance_attribute, extra);
    }
    for extra in fields.str_list("material_attribute")? {
        push_unique(&mut functional_attribute, extra);
    }
    let potential_instances = fields.aliased("potential_instances", "example_objects", |f, k| f.str_list(k))?;
    let use_primitive = fields.optional_str("use_primitive")?;
    let asset_id = fields.aliased("asset_id", "assed_id", |f, k| f.optional_str(k))?;

    Ok(ObjectSpec {
        object_name,
        appearance_attribute,
        functional_attribute,
        potential_instances,
        use_primitive,
        asset_id,
        extras: fields.into_extras(),
    })
}

fn push_unique(list: &mut Vec<String>, item: String) {
    if !list.contains(&item) {
        list.push(item);
    }
}

fn integer_like(v: &Value) -> Option<i64> {
    match v {
        Value::Number(n) => n.as_i64().or_else(|| n.as_f64().filter(|f| f.fract() == 0.0).map(|f| f as i64)),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

/// Consumes known keys from a JSON object; whatever is left becomes extras.
struct FieldReader<'a> {
    rest: Map<String, Value>,
    base: &'a str,
}

impl<'a> FieldReader<'a> {
    fn new(obj: &Map<String, Value>, base: &'a str) -> Self {
        Self { rest: obj.clone(), base }
    }

    fn path(&self, key: &str) -> String {
        format!("{}/{}", self.base, key)
    }

    fn take(&mut self, key: &str) -> Option<Value> {
        self.rest.remove(key)
    }

    fn required_str(&mut self, key: &str) -> Result<String, ParseError> {
        match self.take(key) {
            Some(Value::String(s)) => Ok(s),
            Some(_) => Err(ParseError::schema(self.path(key), "expected a string")),
            None => Err(ParseError::schema(self.path(key), "missing required field")),
        }
    }

    fn optional_str(&mut self, key: &str) -> Result<Option<String>, ParseError> {
        match self.take(key) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(_) => Err(ParseError::schema(self.path(key), "expected a string or null")),
        }
    }

    fn str_list(&mut self, key: &str) -> Result<Vec<String>, ParseError> {
        match self.take(key) {
            None | Some(Value::Null) => Ok(Vec::new()),
            Some(Value::Array(items)) => items
                .into_iter()
                .enumerate()
                .map(|(i, v)| match v {
                    Value::String(s) => Ok(s),
                    _ => Err(ParseError::schema(format!("{}/{i}", self.path(key)), "expected a string")),
                })
                .collect(),
            Some(_) => Err(ParseError::schema(self.path(key), "expected an array of strings")),
        }
    }

    /// Reads `key`, falling back to `alias`; both present is an error.
    fn aliased<T>(
        &mut self,
        key: &str,
        alias: &str,
        read: impl Fn(&mut Self, &str) -> Result<T, ParseError>,
    ) -> Result<T, ParseError> {
        match (self.rest.contains_key(key), self.rest.contains_key(alias)) {
            (true, true) => Err(ParseError::schema(
                self.path(alias),
                format!("{alias:?} is an alias of {key:?}; both are present"),
            )),
            (false, true) => read(self, alias),
            _ => read(self, key),
        }
    }

    fn into_extras(self) -> BTreeMap<String, Value> {
        self.rest.into_iter().collect()
    }
}

pub fn object_to_value(o: &ObjectSpec) -> Value {
    let mut m: Map<String, Value> = o.extras.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    m.insert("object_name".into(), Value::String(o.object_name.clone()));
    m.insert("appearance_attribute".into(), str_array(&o.appearance_attribute));
    m.insert("functional_attribute".into(), str_array(&o.functional_attribute));
    m.insert("potential_instances".into(), str_array(&o.potential_instances));
    m.insert("use_primitive".into(), opt_str(&o.use_primitive));
    m.insert("asset_id".into(), opt_str(&o.asset_id));
    Value::Object(m)
}

pub fn task_to_value(t: &TaskSpec) -> Value {
    let mut m: Map<String, Value> = t.extras.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    m.insert("task_name".into(), Value::String(t.task_name.clone()));
    m.insert("object_list".into(), Value::Array(t.object_list.iter().map(object_to_value).collect()));
    m.insert("initial_scene_setup".into(), Value::String(t.initial_scene_setup.clone()));
    m.insert("task_instruction".into(), Value::String(t.task_instruction.clone()));
    if let Some(c) = &t.task_success_criteria {
        m.insert("task_success_criteria".into(), Value::String(c.clone()));
    }
    m.insert("potential_solution".into(), Value::String(t.potential_solution.clone()));
    m.insert("task_description".into(), Value::String(t.task_description.clone()));
    if let Some(c) = t.category {
        m.insert("category".into(), Value::String(c.as_str().into()));
    }
    if let Some(d) = t.difficulty {
        m.insert("difficulty".into(), Value::from(d));
    }
    Value::Object(m)
}

fn str_array(v: &[String]) -> Value {
    Value::Array(v.iter().cloned().map(Value::String).collect())
}

fn opt_str(v: &Option<String>) -> Value {
    v.clone().map_or(Value::Null, Value::String)
}

/// Compact serialization with recursively sorted keys.
///
/// `serde_json` without `preserve_order` keeps object keys in a `BTreeMap`,
/// so key order is lexicographic at every depth; numbers use its shortest
/// round-trip formatting.
pub fn canonical_json(t: &TaskSpec) -> String {
    serde_json::to_string(&task_to_value(t)).expect("JSON values always serialize")
}

/// Same key order as [`canonical_json`], indented for files meant to be read.
pub fn canonical_json_pretty(t: &TaskSpec) -> String {
    let mut s = serde_json::to_string_pretty(&task_to_value(t)).expect("JSON values always serialize");
    s.push('\n');
    s
}

impl Serialize for TaskSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        task_to_value(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for TaskSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        task_from_value(&v, &ParseOptions::default()).map_err(serde::de::Error::custom)
    }
}

// ---------------------------------------------------------------------------
// Quoted names

/// Extracts single-quoted spans such as `'cube'` from free text.
///
/// A quote opens only when it is not preceded by a letter or digit, and
/// closes only when it is not followed by one, so apostrophes in words like
/// "can't" or "robot's" are ignored. Spans never cross a newline.
pub fn quoted_names(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i] == '\'' && (i == 0 || !chars[i - 1].is_alphanumeric()) {
            let start = i + 1;
            if start < chars.len() && !chars[start].is_whitespace() && chars[start] != '\'' {
                let mut j = start;
                let mut closed = None;
                while j < chars.len() && chars[j] != '\n' {
                    if chars[j] == '\''
                        && !chars[j - 1].is_whitespace()
                        && (j + 1 == chars.len() || !chars[j + 1].is_alphanumeric())
                    {
                        closed = Some(j);
                        break;
                    }
                    j += 1;
                }
                if let Some(end) = closed {
                    out.push(chars[start..end].iter().collect());
                    i = end + 1;
                    continue;
                }
            }
        }
        i += 1;
    }
    out
}

pub fn is_implicit_object(name: &str) -> bool {
    IMPLICIT_OBJECTS.iter().any(|n| n.eq_ignore_ascii_case(name.trim()))
}

/// Lowercased word tokens of a name, split on anything that is not a letter or digit.
pub fn name_tokens(name: &str) -> Vec<String> {
    name.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

// ---------------------------------------------------------------------------
// Validation

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViolationCode {
    DuplicateName,
    ReservedToken,
    ArticleToken,
    MissingInstances,
    BothAssetFields,
    RangeDifficulty,
    EmptyName,
    /// A quoted name in the task text is not in the object list.
    MissingObject,
}

impl ViolationCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationCode::DuplicateName => "DUPLICATE_NAME",
            ViolationCode::ReservedToken => "RESERVED_TOKEN",
            ViolationCode::ArticleToken => "ARTICLE_TOKEN",
            ViolationCode::MissingInstances => "MISSING_INSTANCES",
            ViolationCode::BothAssetFields => "BOTH_ASSET_FIELDS",
            ViolationCode::RangeDifficulty => "RANGE_DIFFICULTY",
            ViolationCode::EmptyName => "EMPTY_NAME",
            ViolationCode::MissingObject => "MISSING_OBJECT",
        }
    }
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ViolationCode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(Value::String(s.to_string())).map_err(|_| format!("unknown violation code {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

/// Per-code severity. Article tokens are warnings by default because the
/// reference schema example itself names objects "a large ball" and so on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeverityConfig {
    #[serde(default)]
    pub overrides: BTreeMap<ViolationCode, Severity>,
}

impl Default for SeverityConfig {
    fn default() -> Self {
        Self { overrides: BTreeMap::from([(ViolationCode::ArticleToken, Severity::Warning)]) }
    }
}

impl SeverityConfig {
    pub fn severity(&self, code: ViolationCode) -> Severity {
        self.overrides.get(&code).copied().unwrap_or(Severity::Error)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub severity: Severity,
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValidationOutcome {
    pub violations: Vec<Violation>,
}

impl ValidationOutcome {
    pub fn errors(&self) -> impl Iterator<Item = &Violation> {
        self.violations.iter().filter(|v| v.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Violation> {
        self.violations.iter().filter(|v| v.severity == Severity::Warning)
    }

    /// No error-severity violations.
    pub fn is_ok(&self) -> bool {
        self.errors().next().is_none()
    }

    /// No violations of any severity.
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, code: ViolationCode) -> usize {
        self.violations.iter().filter(|v| v.code == code).count()
    }
}

pub fn validate_task(t: &TaskSpec) -> ValidationOutcome {
    validate_task_with(t, &SeverityConfig::default())
}

pub fn validate_task_with(t: &TaskSpec, severity: &SeverityConfig) -> ValidationOutcome {
    let mut out = Vec::new();
    let mut push = |code: ViolationCode, path: String, message: String| {
        out.push(Violation { code, severity: severity.severity(code), path, message });
    };

    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, o) in t.object_list.iter().enumerate() {
        let path = format!("/object_list/{i}");
        let name = o.object_name.trim();
        if name.is_empty() {
            push(ViolationCode::EmptyName, format!("{path}/object_name"), "object_name is empty".into());
        }
        if let Some(first) = seen.insert(name, i) {
            push(
                ViolationCode::DuplicateName,
                format!("{path}/object_name"),
                format!("object_name {name:?} duplicates /object_list/{first}"),
            );
        }
        let tokens = name_tokens(name);
        if let Some(tok) = tokens.iter().find(|t| ARTICLE_TOKENS.contains(&t.as_str())) {
            push(
                ViolationCode::ArticleToken,
                format!("{path}/object_name"),
                format!("object_name {name:?} contains the article {tok:?}"),
            );
        }
        if let Some(tok) = tokens.iter().find(|t| RESERVED_TOKENS.contains(&t.as_str())) {
            push(
                ViolationCode::ReservedToken,
                format!("{path}/object_name"),
                format!("object_name {name:?} contains the reserved word {tok:?}"),
            );
        }
        if o.use_primitive.is_some() && o.asset_id.is_some() {
            push(
                ViolationCode::BothAssetFields,
                path.clone(),
                "use_primitive and asset_id are both set".into(),
            );
        }
        if !o.is_resolved() && o.potential_instances.iter().all(|s| s.trim().is_empty()) {
            push(
                ViolationCode::MissingInstances,
                format!("{path}/potential_instances"),
                "unresolved object has no potential_instances".into(),
            );
        }
    }

    if let Some(d) = t.difficulty {
        if !(1..=5).contains(&d) {
            push(ViolationCode::RangeDifficulty, "/difficulty".into(), format!("difficulty {d} is outside 1..=5"));
        }
    }

    let names: BTreeSet<String> = t.object_list.iter().map(|o| o.object_name.trim().to_lowercase()).collect();
    let mut reported = BTreeSet::new();
    for (field, text) in t.quoted_text_fields() {
        for q in quoted_names(text) {
            let key = q.trim().to_lowercase();
            if !is_implicit_object(&q) && !names.contains(&key) && reported.insert(key) {
                push(
                    ViolationCode::MissingObject,
                    format!("/{field}"),
                    format!("'{q}' is quoted but not in object_list"),
                );
            }
        }
    }

    ValidationOutcome { violations: out }
}
