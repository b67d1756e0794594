//! Question loading, scoring, metrics and dataset-level runs.

pub mod judge;
pub mod metrics;
pub mod pipeline;
pub mod questions;

pub use judge::{ExternalJudge, ExternalJudgeConfig, Judge, JudgeRequest, KeywordTable, MockJudge, DEFAULT_TOKEN_ENV};
pub use metrics::{
    aggregate, domain_score, invert, quantize_score, read_scores, write_scores, JudgeKind, ScoreRecord,
    SCORE_STEPS_PER_POINT,
};
pub use pipeline::{
    domain_summary, evaluate, read_steer_jsonl, sweep, write_steer_jsonl, write_sweep, PreparedQuestion, SteerJob,
    SteerRecord, SweepRow,
};
pub use questions::{load_questions, parse_questions, LineError, QuestionRecord, QuestionSet};
