//! Text-level degradation metrics, multiple-choice scoring and aggregation,
//! remote judge and entailment clients, and per-cell reports.

mod remote;
mod report;
mod scoring;
mod text;

pub use remote::{EntailmentClient, JudgeClient, RUBRIC_VERSION};
pub use report::{csv_field, fmt_f64, fmt_opt, fmt_stage, reports_csv, GenerationReport, REPORT_COLUMNS};
pub use scoring::{
    aggregate, best_index, option_scores, option_scores_tokens, Aggregate, AnswerMode, AnswerRecord,
    EvalOptions, Evaluator, OptionScore,
};
pub use text::{
    dynamic_perplexity, gibberish_parts, gibberish_score, mean_nll, perplexity, sample_generations,
    shannon_entropy, static_perplexity, words, Generations, GibberishConfig, GibberishParts,
    GibberishScorer,
};
