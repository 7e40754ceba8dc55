//! Seeded multi-agent simulation of stance dynamics under programmable
//! AI-agent interventions, with the measurement pipeline used to analyze it.
//!
//! Human-like agents carry a stance and a persuadability entropy and update by
//! an entropy-gated herd rule over a sampled feed. AI agents post a fixed
//! target stance under a configurable count, schedule, style and visibility.

pub mod adapter;
pub mod behavior;
pub mod config;
pub mod engine;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod post;
pub mod rng;
pub mod stance;

pub use config::{validate_config, AgentProfile, BehaviorParams, InterventionConfig, SimulationConfig};
pub use engine::{run_replicates, run_simulation, SimulationTrace};
pub use error::{Error, ValidationError, ValidationReport};
pub use post::{Post, RoundRecord};
pub use stance::{Stance, StanceDistribution, StyleTag};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
