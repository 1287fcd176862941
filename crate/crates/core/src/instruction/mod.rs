//! Alignment-based cross-lingual instruction generation.
//!
//! A parallel pair `(X, Y)` becomes one of:
//!
//! * conditional denoising: `X` plus a perturbed `Y`, answer `Y`
//!   (word or span granularity);
//! * machine translation: `X` only, answer `Y`;
//! * monolingual denoising: a perturbed `Y` only, answer `Y`.

mod dataset;
mod generate;
mod templates;

pub use dataset::{import_tsv, read_dataset, write_dataset, InstructionDataset, InstructionExample, Manifest};
pub use generate::{generate_dataset, Direction};
pub use templates::{
    load_templates, render_cd, render_classify, render_mt, DisplayNames, PromptTemplate, Task, TemplateSet,
};
