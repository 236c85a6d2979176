//! Command-line front end. Exit codes: 0 success, 1 validation failure,
//! 2 usage, configuration or transport error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use super::run::{build_backend, build_resolver, check_run_dir, run_full, run_seed_stage, scene_from_value};
use super::{BackendKind, PipelineConfig, PipelineError};
use crate::agents::{build_prompt, AgentClient, AgentRole};
use crate::metriclang::{evaluate, parse_metric, ObjsSnapshot};
use crate::mutation::{import_tree_json, export_nodes_dot, export_nodes_json, CampaignAgents, MutationCampaign, MutationError};
use crate::scene::{validate_scene, WorkspaceSpec};
use crate::schema::{canonical_json_pretty, parse_task, task_to_value, validate_task_with};
use crate::verification::{completeness_check, gate_decision, VerificationReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "witforge", version, about = "Generate and verify reasoning-centric manipulation tasks")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Agent backend; overrides the file and WITFORGE_BACKEND.
    #[arg(long, global = true)]
    backend: Option<BackendKind>,
    /// Root random seed; overrides the file and WITFORGE_RNG_SEED.
    #[arg(long, global = true)]
    rng: Option<u64>,
    /// Transcript file or directory for the replay backend.
    #[arg(long, global = true)]
    replay: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate, verify and resolve seed tasks.
    Seed {
        #[arg(long)]
        num: Option<u32>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a task locally, optionally gating it with a verification report.
    Verify {
        task: PathBuf,
        /// Verification report to gate with.
        #[arg(long, conflicts_with = "remote")]
        report: Option<PathBuf>,
        /// Ask the configured backend for a report.
        #[arg(long)]
        remote: bool,
    },
    /// Run one mutation campaign from a seed task.
    Mutate {
        #[arg(long)]
        seed_task: PathBuf,
        #[arg(long)]
        steps: Option<u32>,
        /// Seed difficulty; obtained from the verifier when omitted.
        #[arg(long)]
        difficulty: Option<u8>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scene layout tools.
    Scene {
        #[command(subcommand)]
        action: SceneCommand,
    },
    /// MetricLang tools.
    Metric {
        #[command(subcommand)]
        action: MetricCommand,
    },
    /// The whole pipeline.
    Run {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        steps: Option<u32>,
        #[arg(long)]
        seeds: Option<u32>,
    },
    /// Check a run directory and print its delta table.
    Stats { run_dir: PathBuf },
    /// Mutation tree tools.
    Tree {
        #[command(subcommand)]
        action: TreeCommand,
    },
    /// Configuration tools.
    Config {
        #[command(subcommand)]
        action: ConfigCommand,
    },
}

#[derive(Debug, Subcommand)]
enum SceneCommand {
    /// Validate a scene file against the workspace.
    Validate { scene: PathBuf },
}

#[derive(Debug, Subcommand)]
enum MetricCommand {
    /// Parse and type-check a program; prints its normalized form.
    Parse { file: PathBuf },
    /// Evaluate a program on one snapshot.
    Eval {
        #[arg(long)]
        metric: PathBuf,
        #[arg(long)]
        snapshot: PathBuf,
        /// Print milestones, trace and codes too.
        #[arg(long)]
        trace: bool,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TreeFormat {
    Dot,
    Json,
}

#[derive(Debug, Subcommand)]
enum TreeCommand {
    /// Re-export a `tree.json`.
    Export {
        tree: PathBuf,
        #[arg(long, value_enum, default_value = "dot")]
        format: TreeFormat,
    },
}

#[derive(Debug, Subcommand)]
enum ConfigCommand {
    /// Print the default configuration as TOML.
    Default,
}

enum Failure {
    Invalid(String),
    Error(String),
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Check(m) => Failure::Invalid(m),
            other => Failure::Error(other.to_string()),
        }
    }
}

type CliResult = Result<i32, Failure>;

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Error(format!("{}: {e}", path.display())))
}

fn print_json(out: &mut dyn Write, v: &Value) -> Result<(), Failure> {
    writeln!(out, "{}", serde_json::to_string_pretty(v).expect("JSON value")).map_err(|e| Failure::Error(e.to_string()))
}

fn config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    cfg.apply_env()?;
    if let Some(b) = cli.backend {
        cfg.backend = b;
    }
    if let Some(r) = cli.rng {
        cfg.rng_seed = r;
    }
    if let Some(p) = &cli.replay {
        cfg.replay_path = Some(p.clone());
    }
    Ok(cfg)
}

fn client(cfg: &PipelineConfig) -> Result<AgentClient, PipelineError> {
    cfg.check()?;
    Ok(AgentClient::new(build_backend(cfg)?, cfg.token_budget, cfg.in_flight))
}

/// Runs the CLI on `args` (including the program name).
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(err, "{text}") } else { write!(out, "{text}") };
            return code;
        }
    };
    match dispatch(&cli, out) {
        Ok(code) => code,
        Err(Failure::Invalid(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_INVALID
        }
        Err(Failure::Error(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_ERROR
        }
    }
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> CliResult {
    match &cli.command {
        Command::Config { action: ConfigCommand::Default } => {
            write!(out, "{}", PipelineConfig::default().to_toml()).map_err(|e| Failure::Error(e.to_string()))?;
            Ok(EXIT_OK)
        }
        Command::Seed { num, out: dir } => {
            let mut cfg = config(cli)?;
            if let Some(n) = num {
                cfg.num_seeds = *n;
            }
            let client = client(&cfg)?;
            let seeds = run_seed_stage(&cfg, &client)?;
            std::fs::create_dir_all(dir).map_err(|e| Failure::Error(format!("{}: {e}", dir.display())))?;
            for s in seeds.iter().filter(|s| s.is_accepted()) {
                let t = s.task.as_ref().expect("accepted seeds carry a task");
                let path = dir.join(format!("{:02}.task.json", s.index));
                std::fs::write(&path, canonical_json_pretty(t)).map_err(|e| Failure::Error(format!("{}: {e}", path.display())))?;
            }
            print_json(out, &serde_json::to_value(&seeds).expect("plain data"))?;
            Ok(if seeds.iter().any(|s| s.is_accepted()) { EXIT_OK } else { EXIT_INVALID })
        }
        Command::Verify { task, report, remote } => verify(cli, task, report.as_deref(), *remote, out),
        Command::Mutate { seed_task, steps, difficulty, out: dir } => mutate(cli, seed_task, *steps, *difficulty, dir, out),
        Command::Scene { action: SceneCommand::Validate { scene } } => {
            let cfg = config(cli)?;
            let v: Value = serde_json::from_str(&read(scene)?).map_err(|e| Failure::Invalid(format!("scene: {e}")))?;
            let ws: WorkspaceSpec = match v.get("workspace") {
                Some(w) => serde_json::from_value(w.clone()).map_err(|e| Failure::Invalid(format!("workspace: {e}")))?,
                None => cfg.workspace.clone(),
            };
            let scene = scene_from_value(&v, &ws).map_err(Failure::Invalid)?;
            let validation = validate_scene(&scene);
            print_json(out, &serde_json::to_value(&validation).expect("plain data"))?;
            Ok(if validation.is_ok() { EXIT_OK } else { EXIT_INVALID })
        }
        Command::Metric { action: MetricCommand::Parse { file } } => {
            let program = parse_metric(&read(file)?).map_err(|e| Failure::Invalid(e.to_string()))?;
            write!(out, "{program}").map_err(|e| Failure::Error(e.to_string()))?;
            Ok(EXIT_OK)
        }
        Command::Metric { action: MetricCommand::Eval { metric, snapshot, trace } } => {
            let cfg = config(cli)?;
            let program = parse_metric(&read(metric)?).map_err(|e| Failure::Invalid(e.to_string()))?;
            let snap = ObjsSnapshot::from_json_str(&read(snapshot)?).map_err(|e| Failure::Invalid(e.to_string()))?;
            let result = evaluate(&program, &snap, &cfg.workspace).map_err(|e| Failure::Invalid(e.to_string()))?;
            let v = if *trace {
                serde_json::to_value(&result).expect("plain data")
            } else {
                json!({ "success": result.success, "progress": result.progress })
            };
            writeln!(out, "{v}").map_err(|e| Failure::Error(e.to_string()))?;
            Ok(EXIT_OK)
        }
        Command::Run { out: dir, steps, seeds } => {
            let mut cfg = config(cli)?;
            if let Some(d) = dir {
                cfg.output_dir = Some(d.clone());
            }
            if let Some(s) = steps {
                cfg.campaign.steps = *s;
            }
            if let Some(n) = seeds {
                cfg.num_seeds = *n;
            }
            let manifest = run_full(&cfg)?;
            print_json(out, &serde_json::to_value(manifest.counts).expect("plain data"))?;
            Ok(EXIT_OK)
        }
        Command::Stats { run_dir } => {
            let (manifest, table) = check_run_dir(run_dir)?;
            writeln!(out, "{}", table.render()).map_err(|e| Failure::Error(e.to_string()))?;
            print_json(out, &serde_json::to_value(manifest.counts).expect("plain data"))?;
            Ok(EXIT_OK)
        }
        Command::Tree { action: TreeCommand::Export { tree, format } } => {
            let nodes = import_tree_json(&read(tree)?).map_err(|e| Failure::Invalid(e.to_string()))?;
            let text = match format {
                TreeFormat::Dot => export_nodes_dot(&nodes),
                TreeFormat::Json => export_nodes_json(&nodes),
            };
            write!(out, "{text}").map_err(|e| Failure::Error(e.to_string()))?;
            Ok(EXIT_OK)
        }
    }
}

fn remote_report(cfg: &PipelineConfig, task: &Value) -> Result<VerificationReport, Failure> {
    let client = client(cfg)?;
    let req = build_prompt(AgentRole::Verifier, &json!({ "task": task }), &cfg.prompt_context())
        .map_err(|e| Failure::Error(e.to_string()))?
        .with_seed(cfg.rng_seed);
    let reply = client.invoke(&req).map_err(|e| Failure::Error(e.to_string()))?;
    let v = reply.extracted_json.ok_or_else(|| Failure::Invalid("verifier reply contains no JSON".into()))?;
    VerificationReport::from_json(&v).map_err(|e| Failure::Invalid(e.to_string()))
}

fn verify(cli: &Cli, path: &Path, report: Option<&Path>, remote: bool, out: &mut dyn Write) -> CliResult {
    let cfg = config(cli)?;
    let task = match parse_task(&read(path)?) {
        Ok(t) => t,
        Err(e) => {
            print_json(out, &json!({ "parse_error": { "path": e.path(), "message": e.to_string() } }))?;
            return Ok(EXIT_INVALID);
        }
    };
    let validation = validate_task_with(&task, &cfg.severity);
    let completeness = completeness_check(&task);
    let report = match (report, remote) {
        (Some(p), _) => {
            let v: Value = serde_json::from_str(&read(p)?).map_err(|e| Failure::Invalid(format!("report: {e}")))?;
            Some(VerificationReport::from_json(&v).map_err(|e| Failure::Invalid(e.to_string()))?)
        }
        (None, true) => Some(remote_report(&cfg, &task_to_value(&task))?),
        (None, false) => None,
    };
    let decision = match &report {
        Some(r) => Some(gate_decision(&task, r, &cfg.campaign.gate).map_err(|e| Failure::Invalid(e.to_string()))?),
        None => None,
    };
    print_json(
        out,
        &json!({
            "task_name": task.task_name,
            "violations": validation.violations,
            "completeness": completeness,
            "decision": decision,
        }),
    )?;
    let ok = validation.is_ok() && completeness.is_complete() && decision.as_ref().is_none_or(|d| d.is_accepted());
    Ok(if ok { EXIT_OK } else { EXIT_INVALID })
}

fn mutate(cli: &Cli, seed_path: &Path, steps: Option<u32>, difficulty: Option<u8>, dir: &Path, out: &mut dyn Write) -> CliResult {
    let mut cfg = config(cli)?;
    if let Some(s) = steps {
        cfg.campaign.steps = s;
    }
    let seed = parse_task(&read(seed_path)?).map_err(|e| Failure::Invalid(e.to_string()))?;
    let difficulty = match difficulty.or_else(|| seed.difficulty.and_then(|d| u8::try_from(d).ok())) {
        Some(d) => d,
        None => {
            let report = remote_report(&cfg, &task_to_value(&seed))?;
            let d = gate_decision(&seed, &report, &cfg.campaign.gate).map_err(|e| Failure::Invalid(e.to_string()))?;
            match d.operational_difficulty {
                Some(x) if d.is_accepted() => x,
                _ => return Err(Failure::Invalid(format!("seed task is rejected: {}", d.reasons.join(", ")))),
            }
        }
    };
    let client = client(&cfg)?;
    let resolver = build_resolver(&cfg)?;
    let ctx = cfg.prompt_context();
    let agents = CampaignAgents { client: &client, prompts: &ctx, resolver: resolver.as_ref() };
    let mut campaign = MutationCampaign::new(seed, difficulty, cfg.campaign.clone(), cfg.rng_seed)
        .map_err(|e| Failure::Error(e.to_string()))?;
    let result = campaign.run(&agents);
    campaign.save(dir).map_err(|e| Failure::Error(e.to_string()))?;
    let c = campaign.counters();
    print_json(
        out,
        &json!({
            "pool": campaign.pool(),
            "accepted": c.accepted,
            "rejected": c.rejected,
            "skipped": c.skipped,
            "stage": campaign.stage(),
        }),
    )?;
    match result {
        Ok(()) => Ok(EXIT_OK),
        Err(MutationError::Stall { skips }) => Err(Failure::Invalid(format!("campaign stalled after {skips} skips"))),
        Err(e) => Err(Failure::Error(e.to_string())),
    }
}
