//! Model evaluation harness: prompts, endpoint clients, the journaled
//! runner, and accuracy-ladder scoring.

pub mod endpoint;
pub mod prompt;
pub mod runner;
pub mod score;

pub use endpoint::{Endpoint, ModelConfig, ModelKind};
pub use prompt::{build_prompt, parse_response, PROMPT_TEMPLATE_VERSION};
pub use runner::{
    load_journal, parse_conditions, run_eval, Condition, EvalOptions, EvalRecord, RecordStatus,
};
pub use score::{format_accuracy, format_delta, score, AccuracyReport};
