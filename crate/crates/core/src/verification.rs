//! Accept/reject gate over verifier reports, plus asset resolution.
//!
//! The agent's report is parsed into [`VerificationReport`]; completeness is
//! recomputed locally by [`completeness_check`] and always wins over whatever
//! the agent claimed. [`gate_decision`] folds the axes into a verdict and
//! [`resolve_assets`] runs after an accepted gate.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Mutex;

use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::schema::{is_implicit_object, name_tokens, quoted_names, ObjectSpec, TaskSpec};

pub mod codes {
    pub const INCOMPLETE: &str = "INCOMPLETE";
    pub const SIM_IMPOSSIBLE: &str = "SIM_IMPOSSIBLE";
    pub const NOT_FEASIBLE: &str = "NOT_FEASIBLE";
    pub const BYPASS_EXISTS: &str = "BYPASS_EXISTS";
    pub const SOFT_FEASIBILITY: &str = "SOFT_FEASIBILITY";
    pub const ASSET_UNAVAILABLE: &str = "ASSET_UNAVAILABLE";
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReportError {
    #[error("report field {field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ReportError {
    ReportError::Invalid { field: field.into(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YesNo {
    Yes,
    No,
}

/// Ordered best to worst.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Simulatability {
    Easy,
    Hard,
    Impossible,
}

/// Ordered best to worst.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feasibility {
    VeryFeasible,
    KindOfFeasible,
    NotFeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletenessAxis {
    pub flag: YesNo,
    pub missing_objects: Vec<String>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatabilityAxis {
    pub difficulty: Simulatability,
    pub challenging_objects: Vec<String>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityAxis {
    pub level: Feasibility,
    pub not_feasible_step: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyAxis {
    pub flag: YesNo,
    pub bypass_solution: String,
    pub bypass_objects: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyAxis {
    pub score: u8,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetAssignment {
    pub object_name: String,
    pub use_primitive: Option<String>,
    pub asset_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    /// What the agent claimed; advisory only.
    pub completeness: Option<CompletenessAxis>,
    pub simulatability: SimulatabilityAxis,
    pub solution_feasibility: FeasibilityAxis,
    pub solution_efficiency: EfficiencyAxis,
    pub difficulty: DifficultyAxis,
    pub updated_object_list: Option<Vec<AssetAssignment>>,
}

fn norm_enum(s: &str) -> String {
    s.trim().to_lowercase().replace([' ', '-'], "_")
}

fn enum_field<'a>(v: &'a Value, axis: &str, keys: &[&'a str]) -> Result<(&'a str, String), ReportError> {
    for k in keys {
        if let Some(x) = v.get(*k) {
            let s = x.as_str().ok_or_else(|| invalid(&format!("{axis}.{k}"), "expected a string"))?;
            return Ok((k, norm_enum(s)));
        }
    }
    Err(invalid(&format!("{axis}.{}", keys[0]), "missing"))
}

fn text(v: &Value, key: &str) -> String {
    v.get(key).and_then(Value::as_str).unwrap_or_default().to_string()
}

fn names(v: &Value, axis: &str, key: &str) -> Result<Vec<String>, ReportError> {
    match v.get(key) {
        None | Some(Value::Null) => Ok(Vec::new()),
        Some(Value::Array(items)) => items
            .iter()
            .map(|i| {
                i.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| invalid(&format!("{axis}.{key}"), "expected strings"))
            })
            .collect(),
        Some(_) => Err(invalid(&format!("{axis}.{key}"), "expected an array")),
    }
}

fn yes_no(s: &str, field: &str) -> Result<YesNo, ReportError> {
    match s {
        "yes" => Ok(YesNo::Yes),
        "no" => Ok(YesNo::No),
        other => Err(invalid(field, format!("{other:?} is not yes/no"))),
    }
}

fn axis<'a>(root: &'a Value, key: &str) -> Result<&'a Value, ReportError> {
    match root.get(key) {
        Some(v @ Value::Object(_)) => Ok(v),
        Some(_) => Err(invalid(key, "expected an object")),
        None => Err(invalid(key, "missing")),
    }
}

impl VerificationReport {
    /// Parses the verifier's JSON. Enum values are accepted with spaces or
    /// underscores ("kind of feasible" / "kind_of_feasible"), the score as a
    /// number or numeric string, and `assed_id` as an alias of `asset_id`.
    pub fn from_json(root: &Value) -> Result<Self, ReportError> {
        if !root.is_object() {
            return Err(invalid("", "report must be a JSON object"));
        }
        let completeness = match root.get("completeness") {
            None | Some(Value::Null) => None,
            Some(c) => {
                let (k, flag) = enum_field(c, "completeness", &["completeness", "flag"])?;
                Some(CompletenessAxis {
                    flag: yes_no(&flag, &format!("completeness.{k}"))?,
                    missing_objects: names(c, "completeness", "missing_objects")?,
                    reason: text(c, "reason"),
                })
            }
        };

        let s = axis(root, "simulatability")?;
        let (_, d) = enum_field(s, "simulatability", &["difficulty"])?;
        let difficulty = match d.as_str() {
            "easy" => Simulatability::Easy,
            "hard" => Simulatability::Hard,
            "impossible" => Simulatability::Impossible,
            other => return Err(invalid("simulatability.difficulty", format!("{other:?} out of range"))),
        };
        let simulatability = SimulatabilityAxis {
            difficulty,
            challenging_objects: names(s, "simulatability", "challenging_objects")?,
            reason: text(s, "reason"),
        };

        let f = axis(root, "solution_feasibility")?;
        let (_, lv) = enum_field(f, "solution_feasibility", &["feasibility", "level"])?;
        let level = match lv.as_str() {
            "very_feasible" | "feasible" => Feasibility::VeryFeasible,
            "kind_of_feasible" => Feasibility::KindOfFeasible,
            "not_feasible" => Feasibility::NotFeasible,
            other => return Err(invalid("solution_feasibility.feasibility", format!("{other:?} out of range"))),
        };
        let solution_feasibility =
            FeasibilityAxis { level, not_feasible_step: text(f, "not_feasible_step"), reason: text(f, "reason") };

        let e = axis(root, "solution_efficiency")?;
        let (k, flag) = enum_field(e, "solution_efficiency", &["efficiency", "flag"])?;
        let solution_efficiency = EfficiencyAxis {
            flag: yes_no(&flag, &format!("solution_efficiency.{k}"))?,
            bypass_solution: text(e, "bypass_solution"),
            bypass_objects: names(e, "solution_efficiency", "bypass_objects")?,
        };

        let dv = axis(root, "difficulty")?;
        let score = match dv.get("score") {
            Some(Value::Number(n)) => n.as_i64(),
            Some(Value::String(s)) => s.trim().parse::<i64>().ok(),
            _ => None,
        }
        .ok_or_else(|| invalid("difficulty.score", "expected an integer"))?;
        if !(1..=5).contains(&score) {
            return Err(invalid("difficulty.score", format!("{score} outside 1..=5")));
        }
        let difficulty = DifficultyAxis { score: score as u8, reason: text(dv, "reason") };

        let updated_object_list = match root.get("updated_object_list") {
            None | Some(Value::Null) => None,
            Some(Value::Array(items)) => Some(
                items
                    .iter()
                    .enumerate()
                    .map(|(i, it)| parse_assignment(it, i))
                    .collect::<Result<Vec<_>, _>>()?,
            ),
            Some(_) => return Err(invalid("updated_object_list", "expected an array")),
        };

        Ok(Self {
            completeness,
            simulatability,
            solution_feasibility,
            solution_efficiency,
            difficulty,
            updated_object_list,
        })
    }

    pub fn to_json(&self) -> Value {
        let mut v = serde_json::json!({
            "simulatability": {
                "difficulty": self.simulatability.difficulty,
                "challenging_objects": self.simulatability.challenging_objects,
                "reason": self.simulatability.reason,
            },
            "solution_feasibility": {
                "feasibility": match self.solution_feasibility.level {
                    Feasibility::VeryFeasible => "very feasible",
                    Feasibility::KindOfFeasible => "kind of feasible",
                    Feasibility::NotFeasible => "not feasible",
                },
                "not_feasible_step": self.solution_feasibility.not_feasible_step,
                "reason": self.solution_feasibility.reason,
            },
            "solution_efficiency": {
                "efficiency": self.solution_efficiency.flag,
                "bypass_solution": self.solution_efficiency.bypass_solution,
                "bypass_objects": self.solution_efficiency.bypass_objects,
            },
            "difficulty": { "score": self.difficulty.score.to_string(), "reason": self.difficulty.reason },
        });
        if let Some(c) = &self.completeness {
            v["completeness"] = serde_json::json!({
                "completeness": c.flag,
                "missing_objects": c.missing_objects,
                "reason": c.reason,
            });
        }
        if let Some(list) = &self.updated_object_list {
            v["updated_object_list"] = serde_json::to_value(list).expect("plain data");
        }
        v
    }
}

fn parse_assignment(v: &Value, i: usize) -> Result<AssetAssignment, ReportError> {
    let field = format!("updated_object_list[{i}]");
    let object_name = v
        .get("object_name")
        .and_then(Value::as_str)
        .ok_or_else(|| invalid(&field, "missing object_name"))?
        .to_string();
    let opt = |k: &str| -> Result<Option<String>, ReportError> {
        match v.get(k) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(invalid(&format!("{field}.{k}"), "expected a string or null")),
        }
    };
    if v.get("asset_id").is_some() && v.get("assed_id").is_some() {
        return Err(invalid(&field, "both asset_id and its alias assed_id are present"));
    }
    let use_primitive = opt("use_primitive")?;
    let asset_id = match opt("asset_id")? {
        Some(a) => Some(a),
        None => opt("assed_id")?,
    };
    if use_primitive.is_some() && asset_id.is_some() {
        return Err(invalid(&field, "both use_primitive and asset_id are set"));
    }
    Ok(AssetAssignment { object_name, use_primitive, asset_id })
}

// ---------------------------------------------------------------------------
// Completeness

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completeness {
    pub flag: YesNo,
    pub missing_objects: Vec<String>,
}

impl Completeness {
    pub fn is_complete(&self) -> bool {
        self.flag == YesNo::Yes
    }
}

/// Every single-quoted name in the setup, criteria, solution and description
/// must name an object in the list ('table' and 'robot' excepted).
pub fn completeness_check(t: &TaskSpec) -> Completeness {
    let known: BTreeSet<String> = t.object_names().map(|n| n.trim().to_lowercase()).collect();
    let mut seen = BTreeSet::new();
    let mut missing = Vec::new();
    for (_, text) in t.quoted_text_fields() {
        for q in quoted_names(text) {
            let key = q.trim().to_lowercase();
            if is_implicit_object(&q) || known.contains(&key) {
                continue;
            }
            if seen.insert(key) {
                missing.push(q.trim().to_string());
            }
        }
    }
    Completeness { flag: if missing.is_empty() { YesNo::Yes } else { YesNo::No }, missing_objects: missing }
}

// ---------------------------------------------------------------------------
// Gate

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateDecision {
    pub verdict: Verdict,
    /// Failing codes; non-empty iff rejected.
    pub reasons: Vec<String>,
    /// Non-blocking codes such as `SOFT_FEASIBILITY`.
    pub advisories: Vec<String>,
    /// Forwarded to the mutator on rejection.
    pub feedback: String,
    pub operational_difficulty: Option<u8>,
    /// The agent's completeness claim disagreed with the local check.
    pub completeness_overridden: bool,
}

impl GateDecision {
    pub fn is_accepted(&self) -> bool {
        self.verdict == Verdict::Accepted
    }

    /// Turns an accepted decision into a rejection with `code`.
    pub fn reject(&mut self, code: &str, message: &str) {
        self.verdict = Verdict::Rejected;
        self.operational_difficulty = None;
        if !self.reasons.iter().any(|r| r == code) {
            self.reasons.push(code.to_string());
        }
        if !self.feedback.is_empty() {
            self.feedback.push('\n');
        }
        self.feedback.push_str(message);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GateConfig {
    /// Reject `kind of feasible` solutions instead of accepting with an advisory.
    #[serde(default)]
    pub strict_feasibility: bool,
}

pub fn gate_decision(t: &TaskSpec, r: &VerificationReport, cfg: &GateConfig) -> Result<GateDecision, ReportError> {
    if !(1..=5).contains(&r.difficulty.score) {
        return Err(invalid("difficulty.score", format!("{} outside 1..=5", r.difficulty.score)));
    }
    if let Some(list) = &r.updated_object_list {
        for a in list {
            if t.object(&a.object_name).is_none() {
                return Err(invalid(
                    "updated_object_list",
                    format!("{:?} is not an object of the task", a.object_name),
                ));
            }
        }
    }

    let local = completeness_check(t);
    let agent_flag = r.completeness.as_ref().map(|c| c.flag);
    let overridden = agent_flag.is_some_and(|f| f != local.flag);
    if overridden {
        warn!(
            "task {:?}: agent reported completeness {:?}, local check says {:?}",
            t.task_name, agent_flag, local.flag
        );
    }

    let mut reasons = Vec::new();
    let mut advisories = Vec::new();
    let mut feedback = Vec::new();

    if !local.is_complete() {
        reasons.push(codes::INCOMPLETE.to_string());
        let quoted: Vec<String> = local.missing_objects.iter().map(|m| format!("'{m}'")).collect();
        let mut msg = format!("completeness: objects mentioned but missing from object_list: {}", quoted.join(", "));
        if let Some(c) = r.completeness.as_ref().filter(|c| !c.reason.is_empty()) {
            msg.push_str(&format!(" ({})", c.reason));
        }
        feedback.push(msg);
    }
    if r.simulatability.difficulty == Simulatability::Impossible {
        reasons.push(codes::SIM_IMPOSSIBLE.to_string());
        feedback.push(format!("simulatability: {}", r.simulatability.reason));
    }
    match r.solution_feasibility.level {
        Feasibility::NotFeasible => {
            reasons.push(codes::NOT_FEASIBLE.to_string());
            feedback.push(format!("feasibility: {}", r.solution_feasibility.reason));
        }
        Feasibility::KindOfFeasible if cfg.strict_feasibility => {
            reasons.push(codes::SOFT_FEASIBILITY.to_string());
            feedback.push(format!("feasibility: {}", r.solution_feasibility.reason));
        }
        Feasibility::KindOfFeasible => advisories.push(codes::SOFT_FEASIBILITY.to_string()),
        Feasibility::VeryFeasible => {}
    }
    if r.solution_efficiency.flag == YesNo::No {
        reasons.push(codes::BYPASS_EXISTS.to_string());
        feedback.push(format!("efficiency: {}", r.solution_efficiency.bypass_solution));
    }

    let accepted = reasons.is_empty();
    Ok(GateDecision {
        verdict: if accepted { Verdict::Accepted } else { Verdict::Rejected },
        reasons,
        advisories,
        feedback: feedback.join("\n"),
        operational_difficulty: accepted.then_some(r.difficulty.score),
        completeness_overridden: overridden,
    })
}

// ---------------------------------------------------------------------------
// Asset resolution

#[derive(Debug, Error)]
pub enum ResolverError {
    #[error("asset index unreadable: {0}")]
    Index(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AssetRef {
    Primitive(String),
    Asset(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AssetLookup {
    Found(AssetRef),
    NotFound,
}

pub trait AssetResolver: Send + Sync {
    fn resolve(&self, object: &ObjectSpec) -> Result<AssetLookup, ResolverError>;
}

/// Normalized lookup key for an instance phrase: lowercase words with
/// leading articles stripped ("a bowling ball" → "bowling ball").
pub fn instance_key(instance: &str) -> String {
    let tokens = name_tokens(instance);
    let start = tokens.iter().take_while(|t| matches!(t.as_str(), "a" | "an" | "the")).count();
    tokens[start..].join(" ")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndexEntry {
    pub asset_id: String,
    pub tags: Vec<String>,
}

/// Local asset library keyed by normalized instance phrases.
#[derive(Debug, Clone, Default)]
pub struct LocalIndex {
    by_key: BTreeMap<String, String>,
}

impl LocalIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, tag: &str, asset_id: impl Into<String>) {
        self.by_key.entry(instance_key(tag)).or_insert_with(|| asset_id.into());
    }

    pub fn from_entries(entries: &[IndexEntry]) -> Self {
        let mut idx = Self::new();
        for e in entries {
            for t in &e.tags {
                idx.insert(t, e.asset_id.clone());
            }
        }
        idx
    }

    /// Reads `{"entries": [{"asset_id": ..., "tags": [...]}, ...]}`.
    pub fn load(path: &Path) -> Result<Self, ResolverError> {
        #[derive(Deserialize)]
        struct File {
            entries: Vec<IndexEntry>,
        }
        let text = std::fs::read_to_string(path).map_err(|e| ResolverError::Index(format!("{}: {e}", path.display())))?;
        let f: File = serde_json::from_str(&text).map_err(|e| ResolverError::Index(format!("{}: {e}", path.display())))?;
        Ok(Self::from_entries(&f.entries))
    }

    pub fn len(&self) -> usize {
        self.by_key.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_key.is_empty()
    }

    pub fn lookup(&self, instance: &str) -> Option<&str> {
        self.by_key.get(&instance_key(instance)).map(String::as_str)
    }
}

impl AssetResolver for LocalIndex {
    fn resolve(&self, object: &ObjectSpec) -> Result<AssetLookup, ResolverError> {
        Ok(object
            .potential_instances
            .iter()
            .find_map(|i| self.lookup(i))
            .map_or(AssetLookup::NotFound, |id| AssetLookup::Found(AssetRef::Asset(id.to_string()))))
    }
}

/// Stand-in for an online asset store: every instance phrase resolves to a
/// synthetic id derived from its hash, unless a deny token matches.
#[derive(Debug, Default)]
pub struct MockRemote {
    deny_all: bool,
    deny_tokens: BTreeSet<String>,
    lookups: Mutex<u64>,
}

impl MockRemote {
    pub fn new<I, S>(deny_tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            deny_all: false,
            deny_tokens: deny_tokens.into_iter().map(|s| s.as_ref().to_lowercase()).collect(),
            lookups: Mutex::new(0),
        }
    }

    pub fn denying_all() -> Self {
        Self { deny_all: true, ..Self::default() }
    }

    /// Default deny list: things no everyday asset store carries.
    pub fn with_default_denials() -> Self {
        Self::new(["unicorn", "dragon", "phoenix", "levitating", "antigravity"])
    }

    pub fn lookups(&self) -> u64 {
        *self.lookups.lock().expect("lookup counter poisoned")
    }

    pub fn synthetic_id(instance: &str) -> String {
        let digest = Sha256::digest(instance_key(instance).as_bytes());
        format!("remote/{}/obj.glb", &hex::encode(digest)[..16])
    }
}

impl AssetResolver for MockRemote {
    fn resolve(&self, object: &ObjectSpec) -> Result<AssetLookup, ResolverError> {
        *self.lookups.lock().expect("lookup counter poisoned") += 1;
        if self.deny_all {
            return Ok(AssetLookup::NotFound);
        }
        let hit = object.potential_instances.iter().find(|i| {
            let key = instance_key(i);
            !key.is_empty() && !key.split(' ').any(|t| self.deny_tokens.contains(t))
        });
        Ok(hit.map_or(AssetLookup::NotFound, |i| AssetLookup::Found(AssetRef::Asset(Self::synthetic_id(i)))))
    }
}

/// Tries each resolver in order; the first hit wins.
pub struct ChainResolver {
    chain: Vec<Box<dyn AssetResolver>>,
}

impl ChainResolver {
    pub fn new(chain: Vec<Box<dyn AssetResolver>>) -> Self {
        Self { chain }
    }
}

impl AssetResolver for ChainResolver {
    fn resolve(&self, object: &ObjectSpec) -> Result<AssetLookup, ResolverError> {
        for r in &self.chain {
            if let found @ AssetLookup::Found(_) = r.resolve(object)? {
                return Ok(found);
            }
        }
        Ok(AssetLookup::NotFound)
    }
}

/// Merges the verifier's asset assignments into `t`, resolves what is still
/// open, and demotes `decision` to `ASSET_UNAVAILABLE` when anything is left.
pub fn resolve_assets(
    t: &TaskSpec,
    r: &VerificationReport,
    resolver: &dyn AssetResolver,
    decision: GateDecision,
) -> Result<(TaskSpec, GateDecision), ResolverError> {
    let mut task = t.clone();
    let mut decision = decision;
    if let Some(list) = &r.updated_object_list {
        for a in list {
            if let Some(o) = task.object_mut(&a.object_name) {
                if a.use_primitive.is_some() || a.asset_id.is_some() {
                    o.use_primitive = a.use_primitive.clone();
                    o.asset_id = a.asset_id.clone();
                }
            }
        }
    }
    let mut unavailable = Vec::new();
    for o in task.object_list.iter_mut().filter(|o| !o.is_resolved()) {
        match resolver.resolve(o)? {
            AssetLookup::Found(AssetRef::Primitive(p)) => o.use_primitive = Some(p),
            AssetLookup::Found(AssetRef::Asset(a)) => o.asset_id = Some(a),
            AssetLookup::NotFound => unavailable.push(o.object_name.clone()),
        }
    }
    if !unavailable.is_empty() && decision.is_accepted() {
        let quoted: Vec<String> = unavailable.iter().map(|n| format!("'{n}'")).collect();
        decision.reject(
            codes::ASSET_UNAVAILABLE,
            &format!("simulatability: no 3D asset could be found for {}", quoted.join(", ")),
        );
    }
    Ok((task, decision))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn task() -> TaskSpec {
        TaskSpec {
            task_name: "t".into(),
            object_list: vec![
                ObjectSpec { potential_instances: vec!["dice".into()], ..ObjectSpec::new("cube") },
                ObjectSpec { potential_instances: vec!["green mat".into()], ..ObjectSpec::new("target area") },
            ],
            initial_scene_setup: "The 'cube' is near the 'target area' on the 'table'.".into(),
            task_success_criteria: Some("The 'cube' overlaps the 'target area'.".into()),
            potential_solution: "Push the 'cube'.".into(),
            task_description: "The 'robot' pushes.".into(),
            ..Default::default()
        }
    }

    fn report(sim: &str, feas: &str, eff: &str, score: Value) -> VerificationReport {
        VerificationReport::from_json(&json!({
            "simulatability": {"difficulty": sim, "challenging_objects": [], "reason": "sim reason"},
            "solution_feasibility": {"feasibility": feas, "not_feasible_step": "", "reason": "feas reason"},
            "solution_efficiency": {"efficiency": eff, "bypass_solution": "bypass reason", "bypass_objects": []},
            "difficulty": {"score": score, "reason": "r"}
        }))
        .unwrap()
    }

    #[test]
    fn completeness_detects_omission() {
        let mut t = task();
        assert!(completeness_check(&t).is_complete());
        t.task_success_criteria = Some("The 'lemon' is on the 'target area'.".into());
        let c = completeness_check(&t);
        assert_eq!(c.flag, YesNo::No);
        assert_eq!(c.missing_objects, vec!["lemon"]);
    }

    #[test]
    fn completeness_ignores_unquoted_text() {
        let mut t = task();
        t.task_description.push_str(" A lemon and a spoon are mentioned without quotes.");
        assert!(completeness_check(&t).is_complete());
    }

    #[test]
    fn all_best_report_accepts_cleanly() {
        let d = gate_decision(&task(), &report("easy", "very feasible", "yes", json!(1)), &GateConfig::default())
            .unwrap();
        assert!(d.is_accepted());
        assert_eq!(d.operational_difficulty, Some(1));
        assert!(d.advisories.is_empty() && d.reasons.is_empty());
    }

    #[test]
    fn bypass_rejects() {
        let d = gate_decision(&task(), &report("easy", "very feasible", "no", json!(3)), &GateConfig::default())
            .unwrap();
        assert!(!d.is_accepted());
        assert_eq!(d.reasons, vec![codes::BYPASS_EXISTS]);
        assert_eq!(d.feedback, "efficiency: bypass reason");
        assert_eq!(d.operational_difficulty, None);
    }

    #[test]
    fn strict_feasibility_rejects_soft() {
        let r = report("hard", "kind of feasible", "yes", json!("2"));
        assert!(gate_decision(&task(), &r, &GateConfig::default()).unwrap().is_accepted());
        let d = gate_decision(&task(), &r, &GateConfig { strict_feasibility: true }).unwrap();
        assert_eq!(d.reasons, vec![codes::SOFT_FEASIBILITY]);
    }

    #[test]
    fn feedback_order_is_fixed() {
        let mut t = task();
        t.potential_solution = "Use the 'magnet'.".into();
        let d = gate_decision(&t, &report("impossible", "not feasible", "no", json!(5)), &GateConfig::default())
            .unwrap();
        assert_eq!(d.reasons, vec!["INCOMPLETE", "SIM_IMPOSSIBLE", "NOT_FEASIBLE", "BYPASS_EXISTS"]);
        let lines: Vec<&str> = d.feedback.lines().collect();
        assert!(lines[0].starts_with("completeness:") && lines[0].contains("'magnet'"));
        assert!(lines[1].starts_with("simulatability:"));
        assert!(lines[2].starts_with("feasibility:"));
        assert!(lines[3].starts_with("efficiency:"));
    }

    #[test]
    fn local_completeness_overrides_agent() {
        let mut v = report("easy", "very feasible", "yes", json!(2)).to_json();
        v["completeness"] = json!({"completeness": "no", "missing_objects": ["ghost"], "reason": "?"});
        let r = VerificationReport::from_json(&v).unwrap();
        let d = gate_decision(&task(), &r, &GateConfig::default()).unwrap();
        assert!(d.is_accepted());
        assert!(d.completeness_overridden);
    }

    #[test]
    fn out_of_range_values_are_report_errors() {
        let mut v = report("easy", "very feasible", "yes", json!(2)).to_json();
        v["difficulty"]["score"] = json!(7);
        assert!(VerificationReport::from_json(&v).is_err());
        v["difficulty"]["score"] = json!(2);
        v["simulatability"]["difficulty"] = json!("trivial");
        assert!(VerificationReport::from_json(&v).is_err());
        v["simulatability"]["difficulty"] = json!("easy");
        v["updated_object_list"] = json!([{"object_name": "ghost", "use_primitive": "cube"}]);
        let r = VerificationReport::from_json(&v).unwrap();
        assert!(gate_decision(&task(), &r, &GateConfig::default()).is_err());
    }

    #[test]
    fn report_json_roundtrip() {
        let r = report("hard", "kind of feasible", "yes", json!("4"));
        assert_eq!(VerificationReport::from_json(&r.to_json()).unwrap(), r);
    }

    #[test]
    fn unicorn_is_unavailable() {
        let mut t = task();
        t.object_list.push(ObjectSpec { potential_instances: vec!["unicorn horn".into()], ..ObjectSpec::new("horn") });
        let r = report("easy", "very feasible", "yes", json!(2));
        let d = gate_decision(&t, &r, &GateConfig::default()).unwrap();
        let resolver = ChainResolver::new(vec![Box::new(LocalIndex::new()), Box::new(MockRemote::denying_all())]);
        let (_, d) = resolve_assets(&t, &r, &resolver, d).unwrap();
        assert!(!d.is_accepted());
        assert_eq!(d.reasons, vec![codes::ASSET_UNAVAILABLE]);
    }

    #[test]
    fn default_denials_block_only_matching_tokens() {
        let remote = MockRemote::with_default_denials();
        let horn = ObjectSpec { potential_instances: vec!["unicorn horn".into()], ..ObjectSpec::new("horn") };
        assert_eq!(remote.resolve(&horn).unwrap(), AssetLookup::NotFound);
        let cup = ObjectSpec { potential_instances: vec!["A paper cup".into()], ..ObjectSpec::new("cup") };
        assert_eq!(
            remote.resolve(&cup).unwrap(),
            AssetLookup::Found(AssetRef::Asset(MockRemote::synthetic_id("paper cup")))
        );
        assert_eq!(remote.lookups(), 2);
    }

    #[test]
    fn local_index_keys_strip_articles() {
        let mut idx = LocalIndex::new();
        idx.insert("a Bowling Ball", "assets/bowling.glb");
        assert_eq!(idx.lookup("the bowling ball"), Some("assets/bowling.glb"));
        assert_eq!(idx.lookup("bowling"), None);
    }
}
