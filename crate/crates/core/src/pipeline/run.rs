use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use log::{info, warn};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::{BackendKind, PipelineConfig};
use crate::agents::replay::write_transcript;
use crate::agents::{
    build_prompt, AgentBackend, AgentClient, AgentError, AgentRole, HttpBackend, MockBackend, PromptContext, Recorder,
    ReplayBackend,
};
use crate::metriclang::{bind, parse_metric, BoundMetric};
use crate::mutation::{delta_statistics, CampaignAgents, DeltaTable, MutationCampaign, MutationError};
use crate::scene::{validate_scene, SceneConfig, WorkspaceSpec};
use crate::schema::{
    canonical_json_pretty, task_from_value, task_to_value, validate_task_with, ParseOptions, TaskFamily, TaskSpec,
};
use crate::verification::{
    gate_decision, resolve_assets, AssetResolver, ChainResolver, GateDecision, LocalIndex, MockRemote,
    VerificationReport,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("run directory check failed: {0}")]
    Check(String),
}

impl PipelineError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io { path: path.to_path_buf(), source }
    }
}

fn write(path: &Path, text: &str) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| PipelineError::io(path, e))
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<(), PipelineError> {
    let mut s = serde_json::to_string_pretty(v).expect("plain data");
    s.push('\n');
    write(path, &s)
}

pub fn build_backend(cfg: &PipelineConfig) -> Result<Arc<dyn AgentBackend>, PipelineError> {
    Ok(match cfg.backend {
        BackendKind::Mock => Arc::new(MockBackend::new()),
        BackendKind::Http => Arc::new(HttpBackend::new(cfg.http.to_http_config())),
        BackendKind::Replay => {
            let path = cfg.replay_path.as_ref().ok_or_else(|| PipelineError::Config("replay_path is not set".into()))?;
            Arc::new(ReplayBackend::load(path)?)
        }
    })
}

/// The configured local index, if any, in front of the mock asset store.
pub fn build_resolver(cfg: &PipelineConfig) -> Result<Box<dyn AssetResolver>, PipelineError> {
    let mut chain: Vec<Box<dyn AssetResolver>> = Vec::new();
    if let Some(p) = &cfg.asset_index {
        chain.push(Box::new(LocalIndex::load(p).map_err(|e| PipelineError::Config(e.to_string()))?));
    }
    chain.push(Box::new(MockRemote::with_default_denials()));
    Ok(Box::new(ChainResolver::new(chain)))
}

// ---------------------------------------------------------------------------
// Seed stage

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub index: usize,
    pub task_name: String,
    /// Resolved task when accepted; as generated otherwise.
    pub task: Option<TaskSpec>,
    pub decision: Option<GateDecision>,
    /// Why the seed never reached the gate.
    pub error: Option<String>,
}

impl SeedOutcome {
    pub fn is_accepted(&self) -> bool {
        self.decision.as_ref().is_some_and(GateDecision::is_accepted)
    }
}

fn seed_items(v: &Value) -> Option<&Vec<Value>> {
    match v {
        Value::Array(items) => Some(items),
        Value::Object(m) => m.get("tasks").and_then(Value::as_array),
        _ => None,
    }
}

fn verify_task(
    client: &AgentClient,
    ctx: &PromptContext,
    cfg: &PipelineConfig,
    resolver: &dyn AssetResolver,
    task: &TaskSpec,
    seed: u64,
) -> Result<Result<(TaskSpec, GateDecision), String>, AgentError> {
    let req = build_prompt(AgentRole::Verifier, &json!({ "task": task_to_value(task) }), ctx)?.with_seed(seed);
    let reply = client.invoke(&req)?;
    let Some(v) = reply.extracted_json else { return Ok(Err("verifier reply contains no JSON".into())) };
    let report = match VerificationReport::from_json(&v) {
        Ok(r) => r,
        Err(e) => return Ok(Err(e.to_string())),
    };
    let decision = match gate_decision(task, &report, &cfg.campaign.gate) {
        Ok(d) => d,
        Err(e) => return Ok(Err(e.to_string())),
    };
    match resolve_assets(task, &report, resolver, decision) {
        Ok(pair) => Ok(Ok(pair)),
        Err(e) => Ok(Err(e.to_string())),
    }
}

/// Requests seeds, validates and gates each one and resolves assets of the
/// accepted ones.
pub fn run_seed_stage(cfg: &PipelineConfig, client: &AgentClient) -> Result<Vec<SeedOutcome>, PipelineError> {
    let ctx = cfg.prompt_context();
    let resolver = build_resolver(cfg)?;
    let mut payload = json!({ "num_tasks": cfg.num_seeds });
    if let Some(c) = cfg.seed_category {
        payload["category"] = json!(c.as_str());
    }
    let req = build_prompt(AgentRole::SeedGenerator, &payload, &ctx)?.with_seed(cfg.rng_seed);
    let reply = client.invoke(&req)?;
    let items = reply.extracted_json.as_ref().and_then(seed_items).cloned().unwrap_or_default();
    if items.is_empty() {
        warn!("seed generator returned no tasks");
    }
    let opts = ParseOptions { default_category: cfg.seed_category };
    let mut out = Vec::new();
    for (index, item) in items.iter().enumerate() {
        let name = item.get("task_name").and_then(Value::as_str).unwrap_or("").to_string();
        let mut outcome = SeedOutcome { index, task_name: name, task: None, decision: None, error: None };
        let task = match task_from_value(item, &opts) {
            Ok(t) => t,
            Err(e) => {
                outcome.error = Some(format!("parse: {e}"));
                out.push(outcome);
                continue;
            }
        };
        let validation = validate_task_with(&task, &cfg.severity);
        if !validation.is_ok() {
            let msgs: Vec<String> = validation.errors().map(|v| format!("{}: {}", v.path, v.message)).collect();
            outcome.error = Some(format!("schema: {}", msgs.join("; ")));
            outcome.task = Some(task);
            out.push(outcome);
            continue;
        }
        match verify_task(client, &ctx, cfg, resolver.as_ref(), &task, cfg.rng_seed.wrapping_add(index as u64 + 1))? {
            Ok((resolved, mut decision)) => {
                let mut resolved = resolved;
                if decision.is_accepted() {
                    resolved.difficulty = decision.operational_difficulty.map(i64::from);
                } else {
                    decision.operational_difficulty = None;
                }
                outcome.task = Some(resolved);
                outcome.decision = Some(decision);
            }
            Err(e) => {
                outcome.error = Some(format!("verification: {e}"));
                outcome.task = Some(task);
            }
        }
        out.push(outcome);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Families

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunCounts {
    pub seeds_proposed: usize,
    pub seeds_accepted: usize,
    pub mutations_accepted: usize,
    pub mutations_rejected: usize,
    pub mutations_skipped: usize,
    pub scenes_valid: usize,
    pub scenes_pending: usize,
    pub metrics_bound: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyReport {
    pub dir: String,
    pub seed_name: String,
    pub rng_seed: u64,
    pub accepted_mutations: usize,
    pub rejected_mutations: usize,
    pub skipped: usize,
    pub stalled: bool,
    pub delta: DeltaTable,
    pub difficulty_histogram: BTreeMap<String, usize>,
    /// Pool node ids with a valid scene.
    pub scenes_valid: Vec<u32>,
    /// Pool node ids still without a valid scene after all retries.
    pub scenes_pending: Vec<u32>,
    pub metric_bound: bool,
    pub errors: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings: Option<BTreeMap<String, f64>>,
}

/// Counts of difficulty scores 1 through 5.
pub fn difficulty_histogram<'a>(tasks: impl IntoIterator<Item = &'a TaskSpec>) -> BTreeMap<String, usize> {
    let mut h: BTreeMap<String, usize> = (1..=5).map(|d| (d.to_string(), 0)).collect();
    for t in tasks {
        if let Some(d) = t.difficulty.filter(|d| (1..=5).contains(d)) {
            *h.get_mut(&d.to_string()).expect("bucket") += 1;
        }
    }
    h
}

fn slug(index: usize, name: &str) -> String {
    let mut s = String::new();
    for c in name.to_lowercase().chars() {
        if c.is_ascii_alphanumeric() {
            s.push(c);
        } else if !s.ends_with('-') {
            s.push('-');
        }
    }
    let s = s.trim_matches('-');
    let s: String = s.chars().take(48).collect();
    format!("{index:02}-{}", if s.is_empty() { "task" } else { s.trim_end_matches('-') })
}

/// Reads a scene reply. The workspace always comes from the configuration.
pub fn scene_from_value(v: &Value, ws: &WorkspaceSpec) -> Result<SceneConfig, String> {
    let entities = v.get("entities").ok_or("scene has no entities")?;
    let entities = serde_json::from_value(entities.clone()).map_err(|e| format!("entities: {e}"))?;
    let groups = match v.get("groups") {
        None | Some(Value::Null) => Vec::new(),
        Some(g) => serde_json::from_value(g.clone()).map_err(|e| format!("groups: {e}"))?,
    };
    Ok(SceneConfig { workspace: ws.clone(), entities, groups })
}

struct FamilyEnv<'a> {
    cfg: &'a PipelineConfig,
    ctx: PromptContext,
    client: AgentClient,
    resolver: &'a dyn AssetResolver,
    timed: bool,
}

impl FamilyEnv<'_> {
    /// Requests a layout for `task`, retrying with validator feedback.
    fn scene(&self, task: &TaskSpec, seed: u64) -> Result<Result<SceneConfig, String>, AgentError> {
        let mut feedback: Option<String> = None;
        let mut last = String::new();
        for attempt in 0..=self.cfg.scene_retries {
            let mut payload = json!({ "task": task_to_value(task) });
            if let Some(f) = &feedback {
                payload["feedback"] = json!(f);
            }
            let req = build_prompt(AgentRole::SceneGenerator, &payload, &self.ctx)?.with_seed(seed + u64::from(attempt));
            let reply = self.client.invoke(&req)?;
            let parsed = reply
                .extracted_json
                .as_ref()
                .ok_or_else(|| "scene reply contains no JSON".to_string())
                .and_then(|v| scene_from_value(v, &self.cfg.workspace));
            match parsed {
                Ok(scene) => {
                    let v = validate_scene(&scene);
                    if v.is_ok() {
                        return Ok(Ok(scene));
                    }
                    last = v.feedback();
                }
                Err(e) => last = e,
            }
            feedback = Some(last.clone());
        }
        Ok(Err(last))
    }

    fn metric(&self, family: &TaskFamily, seed: u64) -> Result<Result<(String, BoundMetric), String>, AgentError> {
        let req = build_prompt(AgentRole::MetricGenerator, &json!({ "task": task_to_value(&family.seed) }), &self.ctx)?
            .with_seed(seed);
        let reply = self.client.invoke(&req)?;
        let source = match reply.extracted_json.as_ref().and_then(|v| v.get("metric")).and_then(Value::as_str) {
            Some(s) => s.to_string(),
            None => return Ok(Err("metric reply has no \"metric\" string".into())),
        };
        let program = match parse_metric(&source) {
            Ok(p) => p,
            Err(e) => return Ok(Err(format!("metric: {e}"))),
        };
        Ok(bind(&program, family).map(|b| (source, b)).map_err(|e| format!("metric binding: {e}")))
    }
}

fn elapsed(timings: &mut BTreeMap<String, f64>, key: &str, start: Instant) {
    *timings.entry(key.to_string()).or_insert(0.0) += start.elapsed().as_secs_f64();
}

fn run_family(env: &FamilyEnv<'_>, dir: &Path, dir_name: &str, seed: &TaskSpec, rng_seed: u64) -> Result<FamilyReport, PipelineError> {
    let mut timings = BTreeMap::new();
    let mut errors = Vec::new();
    let difficulty = seed.difficulty.and_then(|d| u8::try_from(d).ok()).unwrap_or(1);
    write(&dir.join("seed.task.json"), &canonical_json_pretty(seed))?;

    let start = Instant::now();
    let mut campaign = MutationCampaign::new(seed.clone(), difficulty, env.cfg.campaign.clone(), rng_seed)
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let agents = CampaignAgents { client: &env.client, prompts: &env.ctx, resolver: env.resolver };
    let mut stalled = false;
    match campaign.run(&agents) {
        Ok(()) => {}
        Err(MutationError::Stall { skips }) => {
            warn!("{dir_name}: campaign stalled after {skips} consecutive skips");
            stalled = true;
            errors.push(format!("campaign stalled after {skips} consecutive skips"));
        }
        Err(MutationError::Agent(e)) if e.is_fatal() => return Err(e.into()),
        Err(e) => errors.push(format!("campaign: {e}")),
    }
    campaign.save(dir).map_err(|e| PipelineError::Check(e.to_string()))?;
    elapsed(&mut timings, "mutation", start);

    let start = Instant::now();
    let mut scenes_valid = Vec::new();
    let mut scenes_pending = Vec::new();
    for node in campaign.pool_tasks() {
        match env.scene(&node.task, rng_seed ^ (u64::from(node.id) << 32)) {
            Ok(Ok(scene)) => {
                write_json(&dir.join("scenes").join(format!("{:03}.scene.json", node.id)), &scene)?;
                scenes_valid.push(node.id);
            }
            Ok(Err(feedback)) => {
                write_json(
                    &dir.join("scenes").join(format!("{:03}.pending.json", node.id)),
                    &json!({ "node": node.id, "feedback": feedback }),
                )?;
                scenes_pending.push(node.id);
            }
            Err(e) if e.is_fatal() => return Err(e.into()),
            Err(e) => {
                errors.push(format!("scene {}: {e}", node.id));
                scenes_pending.push(node.id);
            }
        }
    }
    elapsed(&mut timings, "scene", start);

    let start = Instant::now();
    let family = TaskFamily {
        seed: campaign.seed().task.clone(),
        members: campaign.pool_tasks().skip(1).map(|n| n.task.clone()).collect(),
        metric_id: format!("{dir_name}/metric.wit"),
    };
    let mut metric_bound = false;
    match env.metric(&family, rng_seed) {
        Ok(Ok((source, _))) => {
            write(&dir.join("metric.wit"), &source)?;
            metric_bound = true;
        }
        Ok(Err(e)) => errors.push(e),
        Err(e) if e.is_fatal() => return Err(e.into()),
        Err(e) => errors.push(format!("metric: {e}")),
    }
    elapsed(&mut timings, "metric", start);

    let counters = campaign.counters();
    let report = FamilyReport {
        dir: dir_name.to_string(),
        seed_name: seed.task_name.clone(),
        rng_seed,
        accepted_mutations: campaign.accepted_mutations(),
        rejected_mutations: counters.rejected as usize,
        skipped: counters.skipped as usize,
        stalled,
        delta: delta_statistics([campaign.nodes()]),
        difficulty_histogram: difficulty_histogram(campaign.pool_tasks().map(|n| &n.task)),
        scenes_valid,
        scenes_pending,
        metric_bound,
        errors,
        timings: env.timed.then_some(timings),
    };
    write_json(&dir.join("stats.json"), &report)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// Full run

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: PipelineConfig,
    pub backend: String,
    pub counts: RunCounts,
    pub families: Vec<String>,
    /// Relative paths of every file in the run directory except this one.
    pub artifacts: Vec<String>,
    pub transcript: String,
    pub errors: Vec<String>,
    /// Wall-clock seconds per stage; omitted under the mock backend so
    /// repeated runs are byte-identical.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings: Option<BTreeMap<String, f64>>,
}

fn list_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            list_files(root, &p, out)?;
        } else {
            let rel = p.strip_prefix(root).expect("under root");
            out.push(rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/"));
        }
    }
    Ok(())
}

fn snapshot(cfg: &PipelineConfig) -> PipelineConfig {
    PipelineConfig { output_dir: None, ..cfg.clone() }
}

/// Runs every stage and writes the run directory. Per-task failures are
/// recorded and the run continues; transport, auth and configuration
/// failures stop it after the manifest is written.
pub fn run_full(cfg: &PipelineConfig) -> Result<RunManifest, PipelineError> {
    cfg.check()?;
    let out = cfg.output_dir.clone().ok_or_else(|| PipelineError::Config("output_dir is not set".into()))?;
    std::fs::create_dir_all(&out).map_err(|e| PipelineError::io(&out, e))?;
    let backend = build_backend(cfg)?;
    let timed = cfg.backend != BackendKind::Mock;
    let client = AgentClient::new(backend.clone(), cfg.token_budget, cfg.in_flight);
    let mut manifest = RunManifest {
        config: snapshot(cfg),
        backend: backend.name().to_string(),
        counts: RunCounts::default(),
        families: Vec::new(),
        artifacts: Vec::new(),
        transcript: "transcript.jsonl".into(),
        errors: Vec::new(),
        timings: None,
    };
    let mut timings = BTreeMap::new();

    let start = Instant::now();
    let recorder = Arc::new(Recorder::new(backend.clone()));
    let seed_client = client.with_backend(recorder.clone());
    let seeds = run_seed_stage(cfg, &seed_client);
    write_transcript(&out.join("transcript.jsonl"), &recorder.take()).map_err(|e| PipelineError::io(&out, e))?;
    elapsed(&mut timings, "seed", start);
    let seeds = match seeds {
        Ok(s) => s,
        Err(e) => {
            manifest.errors.push(e.to_string());
            finish(&out, &mut manifest, timed.then_some(timings))?;
            return Err(e);
        }
    };
    write_json(&out.join("seeds.json"), &seeds)?;
    manifest.counts.seeds_proposed = seeds.len();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let accepted: Vec<(usize, TaskSpec, u64)> = seeds
        .iter()
        .filter(|s| s.is_accepted())
        .map(|s| (s.index, s.task.clone().expect("accepted seeds carry a task"), rng.next_u64()))
        .collect();
    manifest.counts.seeds_accepted = accepted.len();
    info!("{} of {} seeds accepted", accepted.len(), seeds.len());

    let resolver = build_resolver(cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let results: Vec<(String, Result<FamilyReport, PipelineError>)> = pool.install(|| {
        accepted
            .par_iter()
            .map(|(index, task, rng_seed)| {
                let name = slug(*index, &task.task_name);
                let dir = out.join(&name);
                let recorder = Arc::new(Recorder::new(backend.clone()));
                let env = FamilyEnv {
                    cfg,
                    ctx: cfg.prompt_context(),
                    client: client.with_backend(recorder.clone()),
                    resolver: resolver.as_ref(),
                    timed,
                };
                let result = run_family(&env, &dir, &name, task, *rng_seed);
                let written = write_transcript(&dir.join("transcript.jsonl"), &recorder.take());
                let result = match (result, written) {
                    (Ok(_), Err(e)) => Err(PipelineError::io(&dir, e)),
                    (r, _) => r,
                };
                (name, result)
            })
            .collect()
    });

    let mut reports = Vec::new();
    let mut fatal = None;
    for (name, result) in results {
        manifest.families.push(name.clone());
        match result {
            Ok(r) => {
                if let Some(t) = &r.timings {
                    for (k, v) in t {
                        *timings.entry(k.clone()).or_insert(0.0) += v;
                    }
                }
                manifest.errors.extend(r.errors.iter().map(|e| format!("{name}: {e}")));
                reports.push(r);
            }
            Err(e) => {
                manifest.errors.push(format!("{name}: {e}"));
                if matches!(&e, PipelineError::Agent(a) if a.is_fatal()) && fatal.is_none() {
                    fatal = Some(e);
                }
            }
        }
    }
    for r in &reports {
        manifest.counts.mutations_accepted += r.accepted_mutations;
        manifest.counts.mutations_rejected += r.rejected_mutations;
        manifest.counts.mutations_skipped += r.skipped;
        manifest.counts.scenes_valid += r.scenes_valid.len();
        manifest.counts.scenes_pending += r.scenes_pending.len();
        manifest.counts.metrics_bound += usize::from(r.metric_bound);
    }

    let trees: Vec<Vec<crate::mutation::MutationNode>> = reports
        .iter()
        .filter_map(|r| std::fs::read_to_string(out.join(&r.dir).join("tree.json")).ok())
        .filter_map(|t| crate::mutation::import_tree_json(&t).ok())
        .collect();
    let all_pool: Vec<TaskSpec> = trees
        .iter()
        .flat_map(|nodes| nodes.iter().filter(|n| n.is_accepted()).map(|n| n.task.clone()))
        .collect();
    let stats = json!({
        "delta": delta_statistics(trees.iter().map(Vec::as_slice)),
        "difficulty_histogram": difficulty_histogram(&all_pool),
        "families": reports.iter().map(|r| json!({
            "dir": r.dir,
            "seed_name": r.seed_name,
            "accepted_mutations": r.accepted_mutations,
            "stalled": r.stalled,
        })).collect::<Vec<_>>(),
    });
    write_json(&out.join("stats.json"), &stats)?;
    finish(&out, &mut manifest, timed.then_some(timings))?;
    match fatal {
        Some(e) => Err(e),
        None => Ok(manifest),
    }
}

fn finish(out: &Path, manifest: &mut RunManifest, timings: Option<BTreeMap<String, f64>>) -> Result<(), PipelineError> {
    manifest.timings = timings;
    let mut files = Vec::new();
    list_files(out, out, &mut files).map_err(|e| PipelineError::io(out, e))?;
    files.retain(|f| f != "manifest.json");
    files.sort();
    manifest.artifacts = files;
    write_json(&out.join("manifest.json"), manifest)
}

/// Cross-checks a run directory: listed artifacts exist, manifest counts
/// match the files, and each family's metric binds every pool task.
pub fn check_run_dir(dir: &Path) -> Result<(RunManifest, DeltaTable), PipelineError> {
    let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| PipelineError::io(p, e));
    let manifest: RunManifest = serde_json::from_str(&read(&dir.join("manifest.json"))?)
        .map_err(|e| PipelineError::Check(format!("manifest.json: {e}")))?;
    let mut problems: Vec<String> = manifest
        .artifacts
        .iter()
        .filter(|a| !dir.join(a).is_file())
        .map(|a| format!("listed artifact {a} is missing"))
        .collect();
    let mut pool_files = 0;
    let mut scene_files = 0;
    let mut pending_files = 0;
    let mut metrics = 0;
    let mut trees = Vec::new();
    for fam in &manifest.families {
        let fdir = dir.join(fam);
        let Ok(tree) = read(&fdir.join("tree.json")) else {
            problems.push(format!("{fam}: tree.json is missing"));
            continue;
        };
        let nodes = crate::mutation::import_tree_json(&tree).map_err(|e| PipelineError::Check(format!("{fam}: {e}")))?;
        let count = |sub: &str, suffix: &str| {
            std::fs::read_dir(fdir.join(sub))
                .map(|rd| rd.filter_map(Result::ok).filter(|e| e.file_name().to_string_lossy().ends_with(suffix)).count())
                .unwrap_or(0)
        };
        let pool_here = count("pool", ".task.json");
        let accepted = nodes.iter().filter(|n| n.is_accepted()).count();
        if pool_here != accepted {
            problems.push(format!("{fam}: {pool_here} pool files but {accepted} accepted nodes"));
        }
        pool_files += pool_here;
        scene_files += count("scenes", ".scene.json");
        pending_files += count("scenes", ".pending.json");
        if let Ok(src) = read(&fdir.join("metric.wit")) {
            metrics += 1;
            let tasks: Vec<TaskSpec> = nodes.iter().filter(|n| n.is_accepted()).map(|n| n.task.clone()).collect();
            let family = TaskFamily {
                seed: tasks[0].clone(),
                members: tasks[1..].to_vec(),
                metric_id: format!("{fam}/metric.wit"),
            };
            match parse_metric(&src) {
                Ok(p) => {
                    if let Err(e) = bind(&p, &family) {
                        problems.push(format!("{fam}: {e}"));
                    }
                }
                Err(e) => problems.push(format!("{fam}: metric.wit: {e}")),
            }
        }
        trees.push(nodes);
    }
    let c = manifest.counts;
    let expect = [
        ("pool tasks", pool_files, c.seeds_accepted + c.mutations_accepted),
        ("valid scenes", scene_files, c.scenes_valid),
        ("pending scenes", pending_files, c.scenes_pending),
        ("metrics", metrics, c.metrics_bound),
    ];
    for (what, found, claimed) in expect {
        if found != claimed {
            problems.push(format!("{what}: manifest says {claimed}, found {found}"));
        }
    }
    if problems.is_empty() {
        Ok((manifest, delta_statistics(trees.iter().map(Vec::as_slice))))
    } else {
        Err(PipelineError::Check(problems.join("; ")))
    }
}
