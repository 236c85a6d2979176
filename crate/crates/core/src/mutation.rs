//! The mutate-and-verify campaign.
//!
//! A campaign starts from one gate-accepted seed task. Each step samples a
//! parent from the pool and a strategy from the current stage's
//! distribution, asks the mutator for a variant and refines it against the
//! verifier's feedback for up to `R` rounds. Accepted variants join the pool;
//! every candidate, accepted or not, is kept in the tree.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::agents::{build_prompt, AgentClient, AgentError, AgentRole, PromptContext};
use crate::schema::{canonical_json_pretty, task_from_value, task_to_value, validate_task, ParseOptions, TaskSpec};
use crate::verification::{
    gate_decision, resolve_assets, AssetResolver, GateConfig, GateDecision, ResolverError, Verdict, VerificationReport,
};

/// A strategy is never applied to the same pool task more than this many times.
pub const APPLY_CAP: u32 = 2;
/// Consecutive capped samples after which a campaign gives up.
pub const STALL_SKIPS: u32 = 50;

pub mod codes {
    /// The variant removed or renamed an object it had to keep.
    pub const MUTATION_CONTRACT: &str = "MUTATION_CONTRACT";
    /// The mutator's reply was not a task, or the verifier's not a report.
    pub const MALFORMED_REPLY: &str = "MALFORMED_REPLY";
    /// The variant failed schema validation.
    pub const SCHEMA_INVALID: &str = "SCHEMA_INVALID";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AddKind {
    Related,
    Unrelated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyClass {
    Pivot,
    Trap,
    Add,
}

impl StrategyClass {
    pub const ALL: [StrategyClass; 3] = [StrategyClass::Pivot, StrategyClass::Trap, StrategyClass::Add];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyClass::Pivot => "pivot",
            StrategyClass::Trap => "trap",
            StrategyClass::Add => "add",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            StrategyClass::Pivot => "Pivot",
            StrategyClass::Trap => "Trap",
            StrategyClass::Add => "Add",
        }
    }
}

impl fmt::Display for StrategyClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Serialized as the mutator's `mutation_type`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum MutationStrategy {
    Pivot,
    Trap,
    Add(AddKind),
}

impl MutationStrategy {
    pub fn class(self) -> StrategyClass {
        match self {
            MutationStrategy::Pivot => StrategyClass::Pivot,
            MutationStrategy::Trap => StrategyClass::Trap,
            MutationStrategy::Add(_) => StrategyClass::Add,
        }
    }

    pub fn mutation_type(self) -> &'static str {
        match self {
            MutationStrategy::Pivot => "pivot",
            MutationStrategy::Trap => "trap",
            MutationStrategy::Add(AddKind::Related) => "related",
            MutationStrategy::Add(AddKind::Unrelated) => "unrelated",
        }
    }

    pub fn from_mutation_type(s: &str) -> Option<Self> {
        match s {
            "pivot" => Some(MutationStrategy::Pivot),
            "trap" => Some(MutationStrategy::Trap),
            "related" => Some(MutationStrategy::Add(AddKind::Related)),
            "unrelated" => Some(MutationStrategy::Add(AddKind::Unrelated)),
            _ => None,
        }
    }
}

impl fmt::Display for MutationStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mutation_type())
    }
}

impl From<MutationStrategy> for String {
    fn from(s: MutationStrategy) -> Self {
        s.mutation_type().to_string()
    }
}

impl TryFrom<String> for MutationStrategy {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        Self::from_mutation_type(&s).ok_or_else(|| format!("unknown mutation type {s:?}"))
    }
}

#[derive(Debug, Error)]
pub enum MutationError {
    #[error("campaign configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Resolver(#[from] ResolverError),
    #[error("campaign stalled after {skips} consecutive capped samples")]
    Stall { skips: u32 },
    #[error("campaign persistence: {0}")]
    Io(#[from] std::io::Error),
    #[error("tree document: {0}")]
    Tree(String),
}

/// Categorical distribution over strategy classes for one stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageDistribution {
    pub pivot: f64,
    pub trap: f64,
    pub add: f64,
}

impl StageDistribution {
    pub const EARLY: StageDistribution = StageDistribution { pivot: 0.70, trap: 0.20, add: 0.10 };
    pub const LATE: StageDistribution = StageDistribution { pivot: 0.20, trap: 0.40, add: 0.40 };

    pub fn check(&self) -> Result<(), MutationError> {
        let parts = [self.pivot, self.trap, self.add];
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(MutationError::Config(format!("stage probabilities must be non-negative: {parts:?}")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(MutationError::Config(format!("stage probabilities sum to {sum}, not 1")));
        }
        Ok(())
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> MutationStrategy {
        let u: f64 = rng.random();
        if u < self.pivot {
            MutationStrategy::Pivot
        } else if u < self.pivot + self.trap {
            MutationStrategy::Trap
        } else if rng.random_bool(0.5) {
            MutationStrategy::Add(AddKind::Related)
        } else {
            MutationStrategy::Add(AddKind::Unrelated)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Early,
    Late,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CampaignConfig {
    /// Refinement rounds per candidate (`R`).
    pub rounds: u32,
    /// Non-skip steps per campaign (`N`).
    pub steps: u32,
    pub early: StageDistribution,
    pub late: StageDistribution,
    /// Switch to the late stage after this many accepted pivots...
    pub pivot_quota: usize,
    /// ...or once the pool holds this many tasks.
    pub pool_quota: usize,
    pub gate: GateConfig,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            rounds: 3,
            steps: 12,
            early: StageDistribution::EARLY,
            late: StageDistribution::LATE,
            pivot_quota: 3,
            pool_quota: 4,
            gate: GateConfig::default(),
        }
    }
}

impl CampaignConfig {
    pub fn check(&self) -> Result<(), MutationError> {
        if self.rounds == 0 {
            return Err(MutationError::Config("rounds must be at least 1".into()));
        }
        self.early.check()?;
        self.late.check()
    }
}

/// One refinement round of a candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub verdict: Verdict,
    pub reasons: Vec<String>,
    pub advisories: Vec<String>,
    pub feedback: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutationNode {
    pub id: u32,
    pub task: TaskSpec,
    pub parent: Option<u32>,
    pub strategy: Option<MutationStrategy>,
    pub verdict: Verdict,
    pub rounds_used: u32,
    /// Gate difficulty when accepted; the verifier's last score otherwise.
    pub difficulty: Option<u8>,
    /// Difficulty minus the parent's; accepted non-seed nodes only.
    pub delta: Option<i32>,
    pub attempts: Vec<Attempt>,
    /// The report behind the final verdict.
    pub report: Option<VerificationReport>,
}

impl MutationNode {
    pub fn is_accepted(&self) -> bool {
        self.verdict == Verdict::Accepted
    }
}

/// Outcome of one call to [`MutationCampaign::step`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Skipped { parent: u32, strategy: MutationStrategy },
    Accepted(u32),
    Rejected(u32),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CampaignCounters {
    pub accepted: u32,
    pub rejected: u32,
    pub skipped: u32,
    pub mutation_calls: u32,
    pub verification_calls: u32,
}

/// What a campaign talks to.
#[derive(Clone, Copy)]
pub struct CampaignAgents<'a> {
    pub client: &'a AgentClient,
    pub prompts: &'a PromptContext,
    pub resolver: &'a dyn AssetResolver,
}

#[derive(Debug, Clone)]
pub struct MutationCampaign {
    pub config: CampaignConfig,
    pub rng_seed: u64,
    rng: ChaCha8Rng,
    nodes: Vec<MutationNode>,
    pool: Vec<u32>,
    apply_count: BTreeMap<(u32, StrategyClass), u32>,
    stage: Stage,
    remaining_steps: u32,
    consecutive_skips: u32,
    counters: CampaignCounters,
}

/// Object names the child had to keep but does not have.
pub fn contract_violations(parent: &TaskSpec, child: &TaskSpec, strategy: MutationStrategy) -> Vec<String> {
    let required: Vec<String> = match strategy {
        MutationStrategy::Pivot => parent.criteria_objects(),
        MutationStrategy::Trap | MutationStrategy::Add(_) => parent.object_names().map(str::to_string).collect(),
    };
    required.into_iter().filter(|n| child.object(n).is_none()).collect()
}

impl MutationCampaign {
    /// A campaign rooted at a gate-accepted seed of the given difficulty.
    pub fn new(seed: TaskSpec, seed_difficulty: u8, config: CampaignConfig, rng_seed: u64) -> Result<Self, MutationError> {
        config.check()?;
        if !(1..=5).contains(&seed_difficulty) {
            return Err(MutationError::Config(format!("seed difficulty {seed_difficulty} outside 1..=5")));
        }
        let mut seed = seed;
        seed.difficulty = Some(i64::from(seed_difficulty));
        let root = MutationNode {
            id: 0,
            task: seed,
            parent: None,
            strategy: None,
            verdict: Verdict::Accepted,
            rounds_used: 0,
            difficulty: Some(seed_difficulty),
            delta: None,
            attempts: Vec::new(),
            report: None,
        };
        Ok(Self {
            remaining_steps: config.steps,
            config,
            rng_seed,
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
            nodes: vec![root],
            pool: vec![0],
            apply_count: BTreeMap::new(),
            stage: Stage::Early,
            consecutive_skips: 0,
            counters: CampaignCounters::default(),
        })
    }

    pub fn nodes(&self) -> &[MutationNode] {
        &self.nodes
    }

    pub fn node(&self, id: u32) -> Option<&MutationNode> {
        self.nodes.get(id as usize)
    }

    pub fn seed(&self) -> &MutationNode {
        &self.nodes[0]
    }

    /// Pool node ids in insertion order; the seed comes first.
    pub fn pool(&self) -> &[u32] {
        &self.pool
    }

    pub fn pool_tasks(&self) -> impl Iterator<Item = &MutationNode> {
        self.pool.iter().map(|id| &self.nodes[*id as usize])
    }

    pub fn apply_count(&self, task: u32, class: StrategyClass) -> u32 {
        self.apply_count.get(&(task, class)).copied().unwrap_or(0)
    }

    pub fn apply_counts(&self) -> &BTreeMap<(u32, StrategyClass), u32> {
        &self.apply_count
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn remaining_steps(&self) -> u32 {
        self.remaining_steps
    }

    pub fn counters(&self) -> CampaignCounters {
        self.counters
    }

    /// Accepted mutations, excluding the seed.
    pub fn accepted_mutations(&self) -> usize {
        self.pool.len() - 1
    }

    pub fn sample_strategy(&mut self) -> MutationStrategy {
        let dist = match self.stage {
            Stage::Early => self.config.early,
            Stage::Late => self.config.late,
        };
        dist.draw(&mut self.rng)
    }

    /// Late once enough pivots were accepted or the pool is large enough.
    /// Latches.
    pub fn should_switch_stage(&self) -> bool {
        if self.stage == Stage::Late {
            return true;
        }
        let pivots = self
            .nodes
            .iter()
            .filter(|n| n.is_accepted() && n.strategy.is_some_and(|s| s.class() == StrategyClass::Pivot))
            .count();
        pivots >= self.config.pivot_quota || self.pool.len() >= self.config.pool_quota
    }

    fn record_skip(&mut self) -> Result<(), MutationError> {
        self.counters.skipped += 1;
        self.consecutive_skips += 1;
        if self.consecutive_skips >= STALL_SKIPS {
            return Err(MutationError::Stall { skips: self.consecutive_skips });
        }
        Ok(())
    }

    /// One iteration of the campaign loop.
    pub fn step(&mut self, agents: &CampaignAgents<'_>) -> Result<StepOutcome, MutationError> {
        let parent = self.pool[self.rng.random_range(0..self.pool.len())];
        let strategy = self.sample_strategy();
        self.step_with(agents, parent, strategy)
    }

    /// A step with the parent and strategy already chosen.
    pub fn step_with(
        &mut self,
        agents: &CampaignAgents<'_>,
        parent: u32,
        strategy: MutationStrategy,
    ) -> Result<StepOutcome, MutationError> {
        if !self.pool.contains(&parent) {
            return Err(MutationError::Config(format!("node {parent} is not in the pool")));
        }
        if self.remaining_steps == 0 {
            return Err(MutationError::Config("no steps remaining".into()));
        }
        if self.apply_count(parent, strategy.class()) >= APPLY_CAP {
            self.record_skip()?;
            return Ok(StepOutcome::Skipped { parent, strategy });
        }
        self.consecutive_skips = 0;

        let node = self.refine(agents, parent, strategy)?;
        let id = node.id;
        let accepted = node.is_accepted();
        self.nodes.push(node);
        if accepted {
            self.pool.push(id);
            *self.apply_count.entry((parent, strategy.class())).or_insert(0) += 1;
            self.counters.accepted += 1;
        } else {
            self.counters.rejected += 1;
        }
        self.remaining_steps -= 1;
        if self.should_switch_stage() {
            self.stage = Stage::Late;
        }
        Ok(if accepted { StepOutcome::Accepted(id) } else { StepOutcome::Rejected(id) })
    }

    fn refine(
        &mut self,
        agents: &CampaignAgents<'_>,
        parent_id: u32,
        strategy: MutationStrategy,
    ) -> Result<MutationNode, MutationError> {
        let parent = self.nodes[parent_id as usize].task.clone();
        let parent_difficulty = self.nodes[parent_id as usize].difficulty.map(i32::from);
        let parent_value = task_to_value(&parent);
        let mut previous: Option<Value> = None;
        let mut feedback: Option<String> = None;
        let mut attempts = Vec::new();
        let mut last_task = parent.clone();
        let mut last_report = None;
        let mut last_score = None;

        for _ in 0..self.config.rounds {
            let mut payload = json!({ "task": parent_value, "mutation_type": strategy.mutation_type() });
            if let Some(p) = &previous {
                payload["previous_attempt"] = p.clone();
            }
            if let Some(f) = &feedback {
                payload["feedback"] = Value::String(f.clone());
            }
            let req = build_prompt(AgentRole::Mutator, &payload, agents.prompts)?.with_seed(self.rng.next_u64());
            self.counters.mutation_calls += 1;
            let reply = agents.client.invoke(&req)?;
            let child = match reply.extracted_json.as_ref().map(|v| task_from_value(v, &ParseOptions::default())) {
                Some(Ok(mut t)) => {
                    t.difficulty = None;
                    t
                }
                Some(Err(e)) => {
                    let msg = format!("the reply is not a valid task: {e}");
                    attempts.push(malformed(&msg));
                    feedback = Some(msg);
                    continue;
                }
                None => {
                    let msg = "the reply contains no JSON task".to_string();
                    attempts.push(malformed(&msg));
                    feedback = Some(msg);
                    continue;
                }
            };

            let (child, decision, report) = self.verify(agents, &parent, child, strategy)?;
            if let Some(r) = &report {
                last_score = Some(r.difficulty.score);
            }
            attempts.push(Attempt {
                verdict: decision.verdict,
                reasons: decision.reasons.clone(),
                advisories: decision.advisories.clone(),
                feedback: decision.feedback.clone(),
            });
            last_report = report;
            if decision.is_accepted() {
                let d = decision.operational_difficulty.expect("accepted decisions carry a difficulty");
                let mut task = child;
                task.difficulty = Some(i64::from(d));
                return Ok(MutationNode {
                    id: self.nodes.len() as u32,
                    task,
                    parent: Some(parent_id),
                    strategy: Some(strategy),
                    verdict: Verdict::Accepted,
                    rounds_used: attempts.len() as u32,
                    difficulty: Some(d),
                    delta: parent_difficulty.map(|p| i32::from(d) - p),
                    attempts,
                    report: last_report,
                });
            }
            previous = Some(task_to_value(&child));
            feedback = Some(decision.feedback.clone());
            last_task = child;
        }

        Ok(MutationNode {
            id: self.nodes.len() as u32,
            task: last_task,
            parent: Some(parent_id),
            strategy: Some(strategy),
            verdict: Verdict::Rejected,
            rounds_used: attempts.len() as u32,
            difficulty: last_score,
            delta: None,
            attempts,
            report: last_report,
        })
    }

    /// Verifier round trip, gate, asset resolution, schema and contract checks.
    fn verify(
        &mut self,
        agents: &CampaignAgents<'_>,
        parent: &TaskSpec,
        child: TaskSpec,
        strategy: MutationStrategy,
    ) -> Result<(TaskSpec, GateDecision, Option<VerificationReport>), MutationError> {
        let req = build_prompt(AgentRole::Verifier, &json!({ "task": task_to_value(&child) }), agents.prompts)?
            .with_seed(self.rng.next_u64());
        self.counters.verification_calls += 1;
        let reply = agents.client.invoke(&req)?;
        let parsed = reply
            .extracted_json
            .as_ref()
            .ok_or_else(|| "the verifier reply contains no JSON".to_string())
            .and_then(|v| VerificationReport::from_json(v).map_err(|e| e.to_string()));
        let report = match parsed {
            Ok(r) => r,
            Err(msg) => {
                let mut d = rejected_decision();
                d.reject(codes::MALFORMED_REPLY, &msg);
                let d = self.enforce_contract(parent, &child, strategy, d);
                return Ok((child, d, None));
            }
        };
        let (child, mut decision) = match gate_decision(&child, &report, &self.config.gate) {
            Ok(d) => resolve_assets(&child, &report, agents.resolver, d)?,
            Err(e) => {
                let mut d = rejected_decision();
                d.reject(codes::MALFORMED_REPLY, &e.to_string());
                (child, d)
            }
        };
        let outcome = validate_task(&child);
        if !outcome.is_ok() {
            let msgs: Vec<String> = outcome.errors().map(|v| format!("{}: {}", v.path, v.message)).collect();
            decision.reject(codes::SCHEMA_INVALID, &format!("schema: {}", msgs.join("; ")));
        }
        let decision = self.enforce_contract(parent, &child, strategy, decision);
        Ok((child, decision, Some(report)))
    }

    fn enforce_contract(
        &self,
        parent: &TaskSpec,
        child: &TaskSpec,
        strategy: MutationStrategy,
        mut decision: GateDecision,
    ) -> GateDecision {
        let missing = contract_violations(parent, child, strategy);
        if !missing.is_empty() {
            let quoted: Vec<String> = missing.iter().map(|m| format!("'{m}'")).collect();
            let rule = match strategy {
                MutationStrategy::Pivot => "success-criteria objects must keep their names",
                _ => "original objects must not be modified or removed",
            };
            decision.reject(codes::MUTATION_CONTRACT, &format!("mutation contract: {rule}; missing {}", quoted.join(", ")));
        }
        decision
    }

    /// Steps until the budget is spent.
    pub fn run(&mut self, agents: &CampaignAgents<'_>) -> Result<(), MutationError> {
        while self.remaining_steps > 0 {
            self.step(agents)?;
        }
        Ok(())
    }

    /// JSON document listing every node, in id order.
    pub fn tree_json(&self) -> String {
        export_nodes_json(&self.nodes)
    }

    pub fn tree_dot(&self) -> String {
        export_nodes_dot(&self.nodes)
    }

    /// Writes `pool/<id>.task.json`, `tree.json`, `tree.dot` and `manifest.json`.
    pub fn save(&self, dir: &Path) -> Result<(), MutationError> {
        let pool_dir = dir.join("pool");
        std::fs::create_dir_all(&pool_dir)?;
        for n in self.pool_tasks() {
            std::fs::write(pool_dir.join(format!("{:03}.task.json", n.id)), canonical_json_pretty(&n.task))?;
        }
        std::fs::write(dir.join("tree.json"), self.tree_json())?;
        std::fs::write(dir.join("tree.dot"), self.tree_dot())?;
        let manifest = json!({
            "config": self.config,
            "rng_seed": self.rng_seed,
            "counters": self.counters,
            "stage": self.stage,
            "pool": self.pool,
            "nodes": self.nodes.len(),
        });
        let mut text = serde_json::to_string_pretty(&manifest).expect("plain data");
        text.push('\n');
        std::fs::write(dir.join("manifest.json"), text)?;
        Ok(())
    }
}

fn malformed(msg: &str) -> Attempt {
    Attempt {
        verdict: Verdict::Rejected,
        reasons: vec![codes::MALFORMED_REPLY.to_string()],
        advisories: Vec::new(),
        feedback: msg.to_string(),
    }
}

fn rejected_decision() -> GateDecision {
    GateDecision {
        verdict: Verdict::Rejected,
        reasons: Vec::new(),
        advisories: Vec::new(),
        feedback: String::new(),
        operational_difficulty: None,
        completeness_overridden: false,
    }
}

/// Runs a fresh campaign to completion.
pub fn run_campaign(
    seed: TaskSpec,
    seed_difficulty: u8,
    config: CampaignConfig,
    rng_seed: u64,
    agents: &CampaignAgents<'_>,
) -> Result<MutationCampaign, MutationError> {
    let mut c = MutationCampaign::new(seed, seed_difficulty, config, rng_seed)?;
    c.run(agents)?;
    Ok(c)
}

// ---------------------------------------------------------------------------
// Tree export

pub const ACCEPTED_COLOR: &str = "#4CAF50";
pub const REJECTED_COLOR: &str = "#EF5350";

pub fn export_nodes_json(nodes: &[MutationNode]) -> String {
    let mut s = serde_json::to_string_pretty(nodes).expect("plain data");
    s.push('\n');
    s
}

pub fn import_tree_json(text: &str) -> Result<Vec<MutationNode>, MutationError> {
    let nodes: Vec<MutationNode> = serde_json::from_str(text).map_err(|e| MutationError::Tree(e.to_string()))?;
    for (i, n) in nodes.iter().enumerate() {
        if n.id as usize != i {
            return Err(MutationError::Tree(format!("node at position {i} has id {}", n.id)));
        }
        if n.parent.is_some_and(|p| p >= n.id) {
            return Err(MutationError::Tree(format!("node {} points to a later parent", n.id)));
        }
    }
    Ok(nodes)
}

/// Nodes labelled `id(difficulty)`, green when accepted and red otherwise;
/// edges labelled with the strategy class.
pub fn export_nodes_dot(nodes: &[MutationNode]) -> String {
    let mut s = String::from("digraph mutation_tree {\n  node [shape=box, style=filled, fontname=\"Helvetica\"];\n");
    for n in nodes {
        let d = n.difficulty.map_or("?".to_string(), |d| d.to_string());
        let color = if n.is_accepted() { ACCEPTED_COLOR } else { REJECTED_COLOR };
        s.push_str(&format!("  n{} [label=\"{}({})\", fillcolor=\"{}\"];\n", n.id, n.id, d, color));
    }
    for n in nodes {
        if let (Some(p), Some(st)) = (n.parent, n.strategy) {
            s.push_str(&format!("  n{} -> n{} [label=\"{}\"];\n", p, n.id, st.class()));
        }
    }
    s.push_str("}\n");
    s
}

// ---------------------------------------------------------------------------
// Delta statistics

/// Moments of one strategy's deltas; `None` when the group is empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaStats {
    pub count: usize,
    pub mean: Option<f64>,
    pub max: Option<i32>,
    pub min: Option<i32>,
    /// Population standard deviation.
    pub std: Option<f64>,
}

impl DeltaStats {
    pub fn of(deltas: &[i32]) -> Self {
        if deltas.is_empty() {
            return Self { count: 0, mean: None, max: None, min: None, std: None };
        }
        let n = deltas.len() as f64;
        let mean = deltas.iter().map(|d| f64::from(*d)).sum::<f64>() / n;
        let var = deltas.iter().map(|d| (f64::from(*d) - mean).powi(2)).sum::<f64>() / n;
        Self {
            count: deltas.len(),
            mean: Some(mean),
            max: deltas.iter().max().copied(),
            min: deltas.iter().min().copied(),
            std: Some(var.sqrt()),
        }
    }
}

/// Per-class statistics in Pivot, Trap, Add order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaTable {
    pub pivot: DeltaStats,
    pub trap: DeltaStats,
    pub add: DeltaStats,
}

impl DeltaTable {
    pub fn get(&self, class: StrategyClass) -> &DeltaStats {
        match class {
            StrategyClass::Pivot => &self.pivot,
            StrategyClass::Trap => &self.trap,
            StrategyClass::Add => &self.add,
        }
    }

    /// Rows count, mean, max, min, std; one column per strategy.
    pub fn render(&self) -> String {
        let f2 = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{:.2}", v + 0.0));
        let i = |x: Option<i32>| x.map_or("-".to_string(), |v| v.to_string());
        let cell = |label: &str, s: &DeltaStats| match label {
            "count" => s.count.to_string(),
            "mean" => f2(s.mean),
            "max" => i(s.max),
            "min" => i(s.min),
            _ => f2(s.std),
        };
        let mut out = format!("{:<6}{:>8}{:>8}{:>8}\n", "", "Pivot", "Trap", "Add");
        for label in ["count", "mean", "max", "min", "std"] {
            out.push_str(&format!("{label:<6}"));
            for c in StrategyClass::ALL {
                out.push_str(&format!("{:>8}", cell(label, self.get(c))));
            }
            out.push('\n');
        }
        out
    }
}

pub fn delta_statistics_from(deltas: impl IntoIterator<Item = (StrategyClass, i32)>) -> DeltaTable {
    let mut groups: BTreeMap<StrategyClass, Vec<i32>> = BTreeMap::new();
    for (c, d) in deltas {
        groups.entry(c).or_default().push(d);
    }
    let of = |c| DeltaStats::of(groups.get(&c).map(Vec::as_slice).unwrap_or(&[]));
    DeltaTable { pivot: of(StrategyClass::Pivot), trap: of(StrategyClass::Trap), add: of(StrategyClass::Add) }
}

/// Deltas of accepted non-seed nodes, grouped by strategy class.
pub fn delta_statistics<'a>(trees: impl IntoIterator<Item = &'a [MutationNode]>) -> DeltaTable {
    delta_statistics_from(trees.into_iter().flat_map(|nodes| {
        nodes
            .iter()
            .filter(|n| n.is_accepted())
            .filter_map(|n| Some((n.strategy?.class(), n.delta?)))
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::mock::mock_report;
    use crate::agents::{AgentBackend, AgentReply, AgentRequest, MockBackend, DEFAULT_IN_FLIGHT, DEFAULT_TOKEN_BUDGET};
    use crate::verification::MockRemote;
    use std::sync::Arc;

    fn seed() -> TaskSpec {
        let v: Value = serde_json::from_str(include_str!("../tests/fixtures/seed_retrieve_cube.task.json")).unwrap();
        task_from_value(&v, &ParseOptions::default()).unwrap()
    }

    struct Env {
        client: AgentClient,
        prompts: PromptContext,
        resolver: MockRemote,
    }

    impl Env {
        fn new(backend: impl AgentBackend + 'static) -> Self {
            Self {
                client: AgentClient::new(Arc::new(backend), DEFAULT_TOKEN_BUDGET, DEFAULT_IN_FLIGHT),
                prompts: PromptContext::default(),
                resolver: MockRemote::with_default_denials(),
            }
        }

        fn agents(&self) -> CampaignAgents<'_> {
            CampaignAgents { client: &self.client, prompts: &self.prompts, resolver: &self.resolver }
        }
    }

    /// Mutator echoes the parent with one extra object; verifier always rejects.
    struct Stubborn;
    impl AgentBackend for Stubborn {
        fn name(&self) -> &str {
            "stubborn"
        }
        fn complete(&self, req: &AgentRequest) -> Result<AgentReply, AgentError> {
            let p = req.payload().unwrap();
            let mut t = task_from_value(&p["task"], &ParseOptions::default()).unwrap();
            let text = match req.role {
                AgentRole::Mutator => {
                    let mut spoon = crate::schema::ObjectSpec::new(format!("spoon {}", t.object_list.len()));
                    spoon.potential_instances = vec!["spoon".into()];
                    t.object_list.push(spoon);
                    serde_json::to_string(&task_to_value(&t)).unwrap()
                }
                _ => {
                    let mut r = mock_report(&t);
                    r.solution_efficiency.flag = crate::verification::YesNo::No;
                    r.solution_efficiency.bypass_solution = "lift it".into();
                    r.to_json().to_string()
                }
            };
            Ok(AgentReply::text(text))
        }
    }

    #[test]
    fn distributions_are_checked() {
        assert!(StageDistribution { pivot: 0.5, trap: 0.5, add: 0.1 }.check().is_err());
        assert!(StageDistribution::EARLY.check().is_ok());
        assert!(StageDistribution::LATE.check().is_ok());
        let cfg = CampaignConfig { early: StageDistribution { pivot: 1.0, trap: 0.0, add: 0.0 }, ..Default::default() };
        let mut c = MutationCampaign::new(seed(), 3, cfg, 1).unwrap();
        assert!((0..100).all(|_| c.sample_strategy() == MutationStrategy::Pivot));
    }

    #[test]
    fn early_frequency_matches() {
        let mut c = MutationCampaign::new(seed(), 3, CampaignConfig::default(), 42).unwrap();
        let pivots = (0..10_000).filter(|_| c.sample_strategy() == MutationStrategy::Pivot).count();
        assert!((pivots as f64 / 10_000.0 - 0.70).abs() <= 0.02, "{pivots}");
    }

    #[test]
    fn forced_pivot_is_accepted() {
        let env = Env::new(MockBackend::new());
        let mut c = MutationCampaign::new(seed(), 3, CampaignConfig::default(), 5).unwrap();
        // Mock mutations are clean with probability 0.2 per round, so try a few seeds.
        let mut accepted = None;
        for _ in 0..5 {
            if let StepOutcome::Accepted(id) = c.step_with(&env.agents(), 0, MutationStrategy::Pivot).unwrap() {
                accepted = Some(id);
                break;
            }
        }
        let id = accepted.expect("a pivot within five candidates");
        assert!(c.pool().contains(&id));
        assert_eq!(c.node(id).unwrap().strategy, Some(MutationStrategy::Pivot));
        assert_eq!(c.apply_count(0, StrategyClass::Pivot), 1);
    }

    #[test]
    fn exhausted_refinement_is_rejected() {
        let env = Env::new(Stubborn);
        let mut c = MutationCampaign::new(seed(), 3, CampaignConfig::default(), 5).unwrap();
        let out = c.step_with(&env.agents(), 0, MutationStrategy::Trap).unwrap();
        let StepOutcome::Rejected(id) = out else { panic!("{out:?}") };
        let n = c.node(id).unwrap();
        assert_eq!(n.rounds_used, 3);
        assert_eq!(n.attempts.len(), 3);
        assert!(n.attempts.iter().all(|a| a.reasons == ["BYPASS_EXISTS"]), "{:?}", n.attempts);
        assert_eq!(c.pool(), &[0]);
        assert_eq!(c.counters().verification_calls, 3);
        assert_eq!(c.remaining_steps(), 11);
    }

    #[test]
    fn capped_pair_is_skipped() {
        let env = Env::new(MockBackend::new());
        let mut c = MutationCampaign::new(seed(), 3, CampaignConfig::default(), 5).unwrap();
        c.apply_count.insert((0, StrategyClass::Pivot), 2);
        let out = c.step_with(&env.agents(), 0, MutationStrategy::Pivot).unwrap();
        assert!(matches!(out, StepOutcome::Skipped { .. }));
        assert_eq!(c.pool(), &[0]);
        assert_eq!(c.remaining_steps(), 12);
        for _ in 1..STALL_SKIPS {
            let _ = c.step_with(&env.agents(), 0, MutationStrategy::Pivot);
        }
        assert_eq!(c.counters().skipped, STALL_SKIPS);
        assert!(matches!(
            c.step_with(&env.agents(), 0, MutationStrategy::Pivot),
            Err(MutationError::Stall { .. }) | Ok(StepOutcome::Skipped { .. })
        ));
    }

    #[test]
    fn stage_switch_latches() {
        let mut c = MutationCampaign::new(seed(), 3, CampaignConfig::default(), 5).unwrap();
        assert!(!c.should_switch_stage());
        for i in 1..=3 {
            let mut n = c.nodes[0].clone();
            n.id = i;
            n.parent = Some(0);
            n.strategy = Some(MutationStrategy::Pivot);
            c.nodes.push(n);
        }
        assert!(c.should_switch_stage());
        c.stage = Stage::Late;
        c.nodes.truncate(1);
        assert!(c.should_switch_stage());
    }

    #[test]
    fn contract_rules() {
        let parent = seed();
        let mut child = parent.clone();
        child.object_list.retain(|o| o.object_name != "narrow opening container");
        assert_eq!(contract_violations(&parent, &child, MutationStrategy::Trap), ["narrow opening container"]);
        assert!(contract_violations(&parent, &child, MutationStrategy::Pivot).is_empty());
        child.object_list.retain(|o| o.object_name != "cube");
        assert_eq!(contract_violations(&parent, &child, MutationStrategy::Pivot), ["cube"]);
    }

    #[test]
    fn delta_moments() {
        let t = delta_statistics_from([(StrategyClass::Pivot, 1), (StrategyClass::Pivot, -1)]);
        assert_eq!(t.pivot, DeltaStats { count: 2, mean: Some(0.0), max: Some(1), min: Some(-1), std: Some(1.0) });
        assert_eq!(t.trap.count, 0);
        assert_eq!(t.trap.mean, None);
        let r = t.render();
        let labels: Vec<&str> = r.lines().skip(1).map(|l| l.split_whitespace().next().unwrap()).collect();
        assert_eq!(labels, ["count", "mean", "max", "min", "std"]);
        assert!(r.lines().next().unwrap().split_whitespace().eq(["Pivot", "Trap", "Add"]));
    }

    #[test]
    fn seed_only_dot() {
        let c = MutationCampaign::new(seed(), 3, CampaignConfig::default(), 5).unwrap();
        let dot = c.tree_dot();
        assert_eq!(dot.matches("fillcolor").count(), 1);
        assert!(dot.contains("label=\"0(3)\", fillcolor=\"#4CAF50\""));
        assert!(!dot.contains("->"));
    }

    #[test]
    fn campaign_is_deterministic_and_round_trips() {
        let env = Env::new(MockBackend::new());
        let a = run_campaign(seed(), 3, CampaignConfig::default(), 7, &env.agents()).unwrap();
        let b = run_campaign(seed(), 3, CampaignConfig::default(), 7, &env.agents()).unwrap();
        assert_eq!(a.tree_json(), b.tree_json());
        assert_eq!(import_tree_json(&a.tree_json()).unwrap(), a.nodes());
        let zero = run_campaign(seed(), 3, CampaignConfig { steps: 0, ..Default::default() }, 7, &env.agents()).unwrap();
        assert_eq!(zero.pool(), &[0]);
    }
}
