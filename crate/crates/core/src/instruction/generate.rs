use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{LanguageTag, ParallelCorpus, ParallelPair};
use crate::error::{Error, Result};
use crate::instruction::{
    render_cd, render_mt, InstructionDataset, InstructionExample, Manifest, PromptTemplate, Task, TemplateSet,
};
use crate::perturbation::{g_span, g_word, tokenize, Granularity, DEFAULT_MAX_SPAN_FRACTION};
use crate::seed::{self, derive_seed};

/// Which side of a pair plays `X`. The corpus source side is the pivot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Direction {
    #[default]
    #[serde(rename = "pivot2new")]
    PivotToNew,
    #[serde(rename = "new2pivot")]
    NewToPivot,
    #[serde(rename = "both")]
    Both,
}

impl Direction {
    pub fn tag(self) -> &'static str {
        match self {
            Direction::PivotToNew => "pivot2new",
            Direction::NewToPivot => "new2pivot",
            Direction::Both => "both",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "pivot2new" => Ok(Direction::PivotToNew),
            "new2pivot" => Ok(Direction::NewToPivot),
            "both" => Ok(Direction::Both),
            other => Err(Error::Invalid(format!("unknown direction {other:?}"))),
        }
    }

    fn expand(self) -> &'static [Direction] {
        match self {
            Direction::PivotToNew => &[Direction::PivotToNew],
            Direction::NewToPivot => &[Direction::NewToPivot],
            Direction::Both => &[Direction::PivotToNew, Direction::NewToPivot],
        }
    }

    fn short(self) -> &'static str {
        match self {
            Direction::PivotToNew => "p2n",
            Direction::NewToPivot => "n2p",
            Direction::Both => "both",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

struct Job<'a> {
    pair: &'a ParallelPair,
    direction: Direction,
    task: Task,
}

fn pick<'t>(templates: &[&'t PromptTemplate], seed: u64) -> &'t PromptTemplate {
    let i = seed::rng(derive_seed(seed, 0, "template")).gen_range(0..templates.len());
    templates[i]
}

/// Builds one example, or `None` when the target sentence is too short for
/// the requested perturbation.
fn build_one(
    job: &Job<'_>,
    corpus: &ParallelCorpus,
    by_task: &BTreeMap<Task, Vec<&PromptTemplate>>,
    templates: &TemplateSet,
    global_seed: u64,
) -> Result<Option<InstructionExample>> {
    let (x, y, x_lang, y_lang): (&str, &str, &LanguageTag, &LanguageTag) = match job.direction {
        Direction::NewToPivot => (
            &job.pair.tgt_text,
            &job.pair.src_text,
            &corpus.tgt_lang,
            &corpus.src_lang,
        ),
        _ => (
            &job.pair.src_text,
            &job.pair.tgt_text,
            &corpus.src_lang,
            &corpus.tgt_lang,
        ),
    };
    let label = format!("{}:{}", job.task.tag(), job.direction.short());
    let seed = derive_seed(global_seed, job.pair.pair_id as u64, &label);
    let tpl = pick(&by_task[&job.task], seed);

    let input = match job.task {
        Task::CondDenoiseWord | Task::CondDenoiseSpan | Task::MonoDenoise => {
            let sentence = tokenize(y)?;
            let granularity = match job.task {
                Task::CondDenoiseWord => Granularity::Word,
                Task::CondDenoiseSpan => Granularity::Span,
                _ => {
                    let coin = seed::rng(derive_seed(seed, 1, "granularity")).gen_bool(0.5);
                    if coin && sentence.len() >= Granularity::Span.min_tokens() {
                        Granularity::Span
                    } else {
                        Granularity::Word
                    }
                }
            };
            if sentence.len() < granularity.min_tokens() {
                return Ok(None);
            }
            let perturbed = match granularity {
                Granularity::Word => g_word(&sentence, seed),
                Granularity::Span => g_span(&sentence, seed, DEFAULT_MAX_SPAN_FRACTION),
            };
            let perturbed = match perturbed {
                Ok(p) => p,
                // target text already contains the placeholder literal
                Err(Error::Invalid(_)) => return Ok(None),
                Err(e) => return Err(e),
            };
            render_cd(x, &perturbed, tpl, x_lang, y_lang, &templates.names)?
        }
        Task::MachineTranslation => render_mt(x, tpl, x_lang, y_lang, &templates.names)?,
        other => return Err(Error::Invalid(format!("{other} is not a generation task"))),
    };

    Ok(Some(InstructionExample {
        example_id: format!("{}-{}-{:06}", job.task.tag(), job.direction.short(), job.pair.pair_id),
        task: job.task,
        src_lang: x_lang.clone(),
        tgt_lang: y_lang.clone(),
        input,
        target: y.to_string(),
        template_id: tpl.template_id.clone(),
        pair_id: job.pair.pair_id,
        seed,
    }))
}

/// Materializes an instruction dataset from a parallel corpus.
///
/// Each `(pair, direction, task)` yields at most one example. Every example
/// has its own seed derived from the global seed, the pair id, the task and
/// the direction; that seed picks the template and drives the perturbation,
/// so the output does not depend on evaluation order. Examples whose target
/// sentence is too short for the perturbation are skipped and counted in the
/// manifest.
pub fn generate_dataset(
    corpus: &ParallelCorpus,
    tasks: &[Task],
    templates: &TemplateSet,
    global_seed: u64,
    direction: Direction,
) -> Result<InstructionDataset> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut task_list: Vec<Task> = Vec::new();
    for &t in tasks {
        if !t.is_generation() {
            return Err(Error::Invalid(format!("{t} is not a generation task")));
        }
        if !task_list.contains(&t) {
            task_list.push(t);
        }
    }
    if task_list.is_empty() {
        return Err(Error::Invalid("no tasks requested".into()));
    }
    templates.require_tasks(&task_list)?;
    let by_task: BTreeMap<Task, Vec<&PromptTemplate>> = task_list.iter().map(|&t| (t, templates.for_task(t))).collect();

    let jobs: Vec<Job<'_>> = corpus
        .pairs
        .iter()
        .flat_map(|pair| {
            direction.expand().iter().flat_map({
                let task_list = &task_list;
                move |&direction| task_list.iter().map(move |&task| Job { pair, direction, task })
            })
        })
        .collect();

    let built: Vec<Option<InstructionExample>> = jobs
        .par_iter()
        .map(|job| build_one(job, corpus, &by_task, templates, global_seed))
        .collect::<Result<_>>()?;

    let mut skipped: BTreeMap<String, usize> = BTreeMap::new();
    let mut examples = Vec::with_capacity(built.len());
    for (job, ex) in jobs.iter().zip(built) {
        match ex {
            Some(ex) => examples.push(ex),
            None => *skipped.entry(job.task.tag().to_string()).or_default() += 1,
        }
    }

    let manifest = Manifest {
        src_lang: Some(corpus.src_lang.clone()),
        tgt_lang: Some(corpus.tgt_lang.clone()),
        tasks: task_list,
        direction: Some(direction),
        global_seed,
        template_digest: Some(templates.digest.clone()),
        pairs: corpus.len(),
        expected_total: jobs.len(),
        skipped,
        ..Manifest::default()
    };
    InstructionDataset::new(examples, manifest)
}
