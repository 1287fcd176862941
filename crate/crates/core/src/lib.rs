//! Cross-lingual alignment instruction tuning at desk scale.
//!
//! The crate turns parallel corpora into alignment-based instruction
//! datasets, mixes them with replayed past instruction data in interleaved
//! batches, trains a tiny character-level causal language model on the
//! result, and evaluates it with multi-prompt zero-shot rank classification.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod instruction;
pub mod model;
pub mod perturbation;
pub mod replay;
pub mod report;
pub mod seed;
pub mod synthetic;

pub use corpus::{load_parallel, split_corpus, LanguageTag, ParallelCorpus, ParallelPair};
pub use error::{Error, Result};
pub use eval::{evaluate, load_eval_set, EvalExample, EvalMetrics, Metrics, Normalize, Verbalizer, Verbalizers};
pub use instruction::{
    generate_dataset, load_templates, read_dataset, write_dataset, Direction, InstructionDataset, InstructionExample,
    Manifest, PromptTemplate, Task, TemplateSet,
};
pub use model::{
    build_vocab, read_checkpoint, task_loss, train, write_checkpoint, LossCurve, ModelConfig, TinyLm, TrainConfig,
    Vocab,
};
pub use perturbation::{g_span, g_word, reconstruct, tokenize, Granularity, Perturbed, PLACEHOLDER};
pub use replay::{
    read_plan, sample_replay, schedule_epoch, schedule_epochs, write_plan, BatchPlan, Interleave, MixBatch, PlanHeader,
    ReplayPool,
};
