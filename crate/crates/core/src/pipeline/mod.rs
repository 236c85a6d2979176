//! End-to-end orchestration: seed, verify, mutate, scene, metric.
//!
//! [`run_full`] writes one directory per accepted seed:
//!
//! ```text
//! <out>/
//!   manifest.json  stats.json  seeds.json  transcript.jsonl
//!   00-<seed name>/
//!     seed.task.json  pool/  tree.json  tree.dot  manifest.json
//!     scenes/  metric.wit  stats.json  transcript.jsonl
//! ```

pub mod cli;
mod config;
mod run;

pub use config::{BackendKind, HttpSection, PipelineConfig, ENV_BACKEND, ENV_OUTPUT_DIR, ENV_REPLAY_PATH, ENV_RNG_SEED};
pub use run::{
    build_backend, build_resolver, check_run_dir, difficulty_histogram, run_full, run_seed_stage, scene_from_value,
    FamilyReport, PipelineError, RunCounts, RunManifest, SeedOutcome,
};
