//! Harness for measuring when chat models choose to leave conversations.
//!
//! The library gives a model three ways to exit ("bail"): a callable tool,
//! a magic string, and a temporary check-in prompt. It runs those methods
//! over prompt datasets and replayed transcripts against any
//! chat-completions endpoint (or a deterministic mock), classifies the
//! responses, and aggregates bail/refusal rates with confidence intervals
//! and correlation statistics.

pub mod classifiers;
pub mod cli;
pub mod config;
pub mod conversation;
pub mod datasets;
pub mod methods;
pub mod provider;
pub mod report;
pub mod runner;
pub mod stats;
pub mod signal;

pub use classifiers::{JudgeBackend, RefusalLabel};
pub use config::{ModelEndpoint, SamplingParams};
pub use conversation::{append_turn, validate_conversation, Conversation, Message, Role, ToolCall};
pub use methods::{BailKind, BailMethodSpec, PromptOrdering};
pub use provider::{CompletionOutcome, CompletionRequest, Provider};
pub use report::{aggregate, emit_report, AggregateRow, ReportFormat};
pub use runner::{RunPlan, TrialRecord};
pub use signal::{BailSignal, UnknownReason};
