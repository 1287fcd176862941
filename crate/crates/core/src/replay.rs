//! Experience replay: a fixed sample of past instruction data interleaved
//! with new cross-lingual instruction data.
//!
//! A full batch is `[old, new, old, new, ...]` with `n` of each. The new data
//! defines the epoch: every new example appears exactly once per epoch, while
//! the replay pool is cycled (and reshuffled after each pass) to fill the old
//! slots. With an empty pool, batches hold `2n` new examples.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::seq::index;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instruction::{InstructionDataset, InstructionExample, Task};
use crate::seed::{self, derive_seed};

pub const PLAN_FORMAT: &str = "ia1-plan/1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayPool {
    pub examples: Vec<InstructionExample>,
    pub r: usize,
    pub source_digest: String,
}

impl ReplayPool {
    pub fn empty(source_digest: impl Into<String>) -> Self {
        ReplayPool {
            examples: Vec::new(),
            r: 0,
            source_digest: source_digest.into(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Samples `r` distinct records uniformly without replacement.
///
/// Sampled records are re-tagged as `replay` and their ids prefixed with
/// `replay:` so they cannot collide with ids in the new data.
pub fn sample_replay(old_data: &InstructionDataset, r: usize, seed: u64) -> Result<ReplayPool> {
    if r > old_data.len() {
        return Err(Error::ReplayLargerThanSource {
            requested: r,
            available: old_data.len(),
        });
    }
    let mut rng = seed::rng(seed);
    let examples = index::sample(&mut rng, old_data.len(), r)
        .into_iter()
        .map(|i| {
            let mut ex = old_data.examples[i].clone();
            ex.example_id = format!("replay:{}", ex.example_id);
            ex.task = Task::Replay;
            ex
        })
        .collect();
    Ok(ReplayPool {
        examples,
        r,
        source_digest: old_data.digest()?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interleave {
    /// `[old, new, old, new, ...]`
    #[default]
    Strict,
    /// Same composition as `Strict`, shuffled within each batch.
    Shuffled,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MixBatch {
    pub items: Vec<InstructionExample>,
    pub half_size: usize,
}

impl MixBatch {
    pub fn is_old(&self, i: usize) -> bool {
        self.items[i].task == Task::Replay
    }

    pub fn example_ids(&self) -> Vec<String> {
        self.items.iter().map(|e| e.example_id.clone()).collect()
    }
}

pub fn schedule_epoch(
    pool: &ReplayPool,
    new_data: &InstructionDataset,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<MixBatch>> {
    schedule_epoch_with(pool, new_data, batch_size, seed, Interleave::Strict)
}

pub fn schedule_epoch_with(
    pool: &ReplayPool,
    new_data: &InstructionDataset,
    batch_size: usize,
    seed: u64,
    interleave: Interleave,
) -> Result<Vec<MixBatch>> {
    if batch_size < 2 || !batch_size.is_multiple_of(2) {
        return Err(Error::OddBatchSize(batch_size));
    }
    if new_data.is_empty() {
        return Err(Error::EmptyNewData);
    }
    let n = batch_size / 2;
    let mut new_order: Vec<usize> = (0..new_data.len()).collect();
    new_order.shuffle(&mut seed::rng(derive_seed(seed, 0, "new")));

    if pool.is_empty() {
        return Ok(new_order
            .chunks(batch_size)
            .map(|chunk| MixBatch {
                items: chunk.iter().map(|&i| new_data.examples[i].clone()).collect(),
                half_size: n,
            })
            .collect());
    }

    let mut old_rng = seed::rng(derive_seed(seed, 0, "old"));
    let mut old_order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut shuffle_rng = seed::rng(derive_seed(seed, 0, "within"));
    let mut batches = Vec::with_capacity(new_order.len().div_ceil(n));
    for chunk in new_order.chunks(n) {
        let mut items = Vec::with_capacity(2 * chunk.len());
        for &i in chunk {
            if cursor == old_order.len() {
                old_order = (0..pool.examples.len()).collect();
                old_order.shuffle(&mut old_rng);
                cursor = 0;
            }
            items.push(pool.examples[old_order[cursor]].clone());
            cursor += 1;
            items.push(new_data.examples[i].clone());
        }
        if interleave == Interleave::Shuffled {
            items.shuffle(&mut shuffle_rng);
        }
        batches.push(MixBatch { items, half_size: n });
    }
    Ok(batches)
}

/// Several epochs back to back; epoch `e` is scheduled with a seed derived
/// from `(seed, e)`.
pub fn schedule_epochs(
    pool: &ReplayPool,
    new_data: &InstructionDataset,
    batch_size: usize,
    seed: u64,
    epochs: usize,
    interleave: Interleave,
) -> Result<Vec<MixBatch>> {
    let mut out = Vec::new();
    for e in 0..epochs {
        out.extend(schedule_epoch_with(
            pool,
            new_data,
            batch_size,
            derive_seed(seed, e as u64, "epoch"),
            interleave,
        )?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanHeader {
    pub format: String,
    pub new_path: String,
    pub new_digest: String,
    #[serde(default)]
    pub old_path: Option<String>,
    #[serde(default)]
    pub old_digest: Option<String>,
    pub replay_size: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub epochs: usize,
    #[serde(default)]
    pub interleave: Interleave,
    pub batch_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannedBatch {
    pub step: usize,
    pub half_size: usize,
    pub example_ids: Vec<String>,
}

/// The audit form of a schedule: example ids per batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub header: PlanHeader,
    pub batches: Vec<PlannedBatch>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanHeaderLine {
    plan: PlanHeader,
}

impl BatchPlan {
    pub fn new(mut header: PlanHeader, batches: &[MixBatch]) -> Self {
        header.batch_count = batches.len();
        if header.format.is_empty() {
            header.format = PLAN_FORMAT.to_string();
        }
        BatchPlan {
            header,
            batches: batches
                .iter()
                .enumerate()
                .map(|(step, b)| PlannedBatch {
                    step,
                    half_size: b.half_size,
                    example_ids: b.example_ids(),
                })
                .collect(),
        }
    }

    pub fn to_jsonl(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        let mut header = self.header.clone();
        header.batch_count = self.batches.len();
        serde_json::to_writer(&mut out, &PlanHeaderLine { plan: header })?;
        out.push(b'\n');
        for b in &self.batches {
            serde_json::to_writer(&mut out, b)?;
            out.push(b'\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let schema = |line: usize, message: String| Error::SchemaViolation { line, message };
        let mut lines = text.split_inclusive('\n').enumerate();
        let (_, first) = lines.next().ok_or_else(|| schema(1, "missing plan header".into()))?;
        let header = serde_json::from_str::<PlanHeaderLine>(first.trim_end_matches(['\n', '\r']))
            .map_err(|e| schema(1, format!("bad plan header: {e}")))?
            .plan;
        let mut batches = Vec::with_capacity(header.batch_count);
        for (i, raw) in lines {
            if !raw.ends_with('\n') {
                return Err(schema(i + 1, "record is not newline-terminated".into()));
            }
            let b: PlannedBatch =
                serde_json::from_str(raw.trim_end_matches(['\n', '\r'])).map_err(|e| schema(i + 1, e.to_string()))?;
            if b.step != batches.len() {
                return Err(schema(
                    i + 1,
                    format!("expected step {}, found {}", batches.len(), b.step),
                ));
            }
            batches.push(b);
        }
        if batches.len() != header.batch_count {
            return Err(schema(
                batches.len() + 2,
                format!(
                    "header announces {} batches, file has {}",
                    header.batch_count,
                    batches.len()
                ),
            ));
        }
        Ok(BatchPlan { header, batches })
    }

    /// Looks the planned ids up in the replay pool and the new data.
    pub fn resolve(&self, pool: &ReplayPool, new_data: &InstructionDataset) -> Result<Vec<MixBatch>> {
        let index: HashMap<&str, &InstructionExample> = pool
            .examples
            .iter()
            .chain(&new_data.examples)
            .map(|e| (e.example_id.as_str(), e))
            .collect();
        self.batches
            .iter()
            .map(|b| {
                let items = b
                    .example_ids
                    .iter()
                    .map(|id| {
                        index
                            .get(id.as_str())
                            .map(|e| (*e).clone())
                            .ok_or_else(|| Error::UnknownExampleId(id.clone()))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(MixBatch {
                    items,
                    half_size: b.half_size,
                })
            })
            .collect()
    }
}

pub fn write_plan(plan: &BatchPlan, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = plan.to_jsonl()?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_plan(path: impl AsRef<Path>) -> Result<BatchPlan> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    BatchPlan::from_jsonl(&text)
}
