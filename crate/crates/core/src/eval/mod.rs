//! Confusion metrics, weighted soft voting, evaluation over the shared test
//! set and report emission.

mod evaluate;
mod metrics;
mod report;
mod voting;

pub use evaluate::{
    evaluate_models, predict_test_set, schema_probabilities, EntryKind, EntryResult, Evaluation,
    TestPredictions,
};
pub use metrics::{compute_metrics, MeanMetrics, Metrics, THRESHOLD};
pub use report::{emit_report, format_percent, render_table, UNDEFINED};
pub use voting::{VotingSchema, WEIGHT_SUM_TOLERANCE};
