//! Multi-prompt zero-shot classification by label likelihood.

pub mod evalset;
pub mod metrics;
pub mod scoring;
pub mod verbalizer;

pub use evalset::{eval_set_to_tsv, load_eval_set, parse_eval_set, EvalExample};
pub use metrics::{accuracy, weighted_f1, Metrics};
pub use scoring::{
    argmax_first, classify, evaluate, label_scores, predict_all, score_label, summarize, EvalMetrics, Normalize,
    TemplatePredictions,
};
pub use verbalizer::{Verbalizer, VerbalizerEntry, Verbalizers};
