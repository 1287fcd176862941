//! Desk experiments: forgetting with and without replay, and the task-set
//! ablation with loss curves.

use serde::{Deserialize, Serialize};

use crate::corpus::split_corpus;
use crate::error::{Error, Result};
use crate::instruction::{generate_dataset, Direction, InstructionDataset, Task};
use crate::model::{build_vocab, dataset_loss, train, LossCurve, ModelDims, TinyLm, TrainConfig, ValSet, Vocab};
use crate::replay::{sample_replay, schedule_epochs, Interleave, ReplayPool};
use crate::seed::derive_seed;
use crate::synthetic::{cipher_corpus, cipher_task, compact_templates, copy_task};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForgettingConfig {
    pub model: ModelDims,
    pub old_train: usize,
    pub old_held_out: usize,
    pub new_train: usize,
    pub new_held_out: usize,
    pub replay_size: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub phase1_steps: usize,
    /// Passes over the new-task data in phase 2; both arms see every new
    /// example equally often.
    pub phase2_epochs: usize,
    pub seeds: Vec<u64>,
}

impl Default for ForgettingConfig {
    fn default() -> Self {
        ForgettingConfig {
            model: ModelDims {
                d_model: 64,
                n_layers: 2,
                n_heads: 2,
                context: 32,
            },
            old_train: 400,
            old_held_out: 100,
            new_train: 500,
            new_held_out: 100,
            replay_size: 100,
            batch_size: 8,
            learning_rate: 3e-3,
            phase1_steps: 500,
            phase2_epochs: 6,
            seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmOutcome {
    pub steps: usize,
    pub old_loss: f64,
    pub new_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub phase1_old_loss: f64,
    pub no_replay: ArmOutcome,
    pub replay: ArmOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgettingReport {
    pub replay_size: usize,
    pub seeds: Vec<SeedOutcome>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

impl ForgettingReport {
    pub fn max_phase1_old_loss(&self) -> f64 {
        self.seeds
            .iter()
            .map(|s| s.phase1_old_loss)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean_old_loss(&self, replay: bool) -> f64 {
        mean(self.seeds.iter().map(|s| {
            if replay {
                s.replay.old_loss
            } else {
                s.no_replay.old_loss
            }
        }))
    }

    pub fn mean_new_loss(&self, replay: bool) -> f64 {
        mean(self.seeds.iter().map(|s| {
            if replay {
                s.replay.new_loss
            } else {
                s.no_replay.new_loss
            }
        }))
    }

    /// `1 − old(r) / old(0)`
    pub fn old_loss_reduction(&self) -> f64 {
        1.0 - self.mean_old_loss(true) / self.mean_old_loss(false)
    }

    pub fn new_loss_ratio(&self) -> f64 {
        self.mean_new_loss(true) / self.mean_new_loss(false)
    }
}

struct ForgettingData {
    old: InstructionDataset,
    old_val: InstructionDataset,
    new: InstructionDataset,
    new_val: InstructionDataset,
    vocab: Vocab,
}

fn forgetting_data(cfg: &ForgettingConfig, seed: u64) -> Result<ForgettingData> {
    let (old, old_val) = copy_task(cfg.old_train, cfg.old_held_out, derive_seed(seed, 0, "old-task"))?;
    let (new, new_val) = cipher_task(cfg.new_train, cfg.new_held_out, derive_seed(seed, 0, "new-task"))?;
    let vocab = build_vocab(&[&old, &old_val, &new, &new_val])?;
    Ok(ForgettingData {
        old,
        old_val,
        new,
        new_val,
        vocab,
    })
}

fn train_cfg(cfg: &ForgettingConfig, steps: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: cfg.learning_rate,
        max_steps: steps.max(1),
        batch_size: cfg.batch_size,
        seed,
        eval_interval: steps.max(1),
        model: cfg.model,
        ..TrainConfig::default()
    }
}

fn run_seed(cfg: &ForgettingConfig, seed: u64) -> Result<SeedOutcome> {
    let d = forgetting_data(cfg, seed)?;
    let model = TinyLm::new(cfg.model.with_vocab(d.vocab.len()), derive_seed(seed, 0, "init"))?;

    let per_epoch = d.old.len().div_ceil(cfg.batch_size);
    let epochs = cfg.phase1_steps.div_ceil(per_epoch);
    let schedule = schedule_epochs(
        &ReplayPool::empty(""),
        &d.old,
        cfg.batch_size,
        derive_seed(seed, 1, "schedule"),
        epochs,
        Interleave::Strict,
    )?;
    let (model, _) = train(model, &d.vocab, &schedule, &train_cfg(cfg, cfg.phase1_steps, seed), &[])?;
    let phase1_old_loss = dataset_loss(&model, &d.old_val, &d.vocab, false)?;

    let arm = |pool: &ReplayPool| -> Result<ArmOutcome> {
        let schedule = schedule_epochs(
            pool,
            &d.new,
            cfg.batch_size,
            derive_seed(seed, 2, "schedule"),
            cfg.phase2_epochs,
            Interleave::Strict,
        )?;
        let steps = schedule.len();
        let (m, _) = train(model.clone(), &d.vocab, &schedule, &train_cfg(cfg, steps, seed), &[])?;
        Ok(ArmOutcome {
            steps,
            old_loss: dataset_loss(&m, &d.old_val, &d.vocab, false)?,
            new_loss: dataset_loss(&m, &d.new_val, &d.vocab, false)?,
        })
    };
    let no_replay = arm(&ReplayPool::empty(""))?;
    let pool = sample_replay(&d.old, cfg.replay_size, derive_seed(seed, 3, "replay"))?;
    let replay = arm(&pool)?;
    Ok(SeedOutcome {
        seed,
        phase1_old_loss,
        no_replay,
        replay,
    })
}

/// Phase 1 trains on the copy task. Phase 2 continues on the cipher task
/// once without replay and once with `replay_size` copy examples interleaved.
/// Losses are measured on held-out examples of each task.
pub fn run_forgetting(cfg: &ForgettingConfig) -> Result<ForgettingReport> {
    if cfg.seeds.is_empty() {
        return Err(Error::Invalid("no seeds".into()));
    }
    if cfg.replay_size == 0 {
        return Err(Error::Invalid("the replay arm needs replay_size > 0".into()));
    }
    let seeds = cfg
        .seeds
        .iter()
        .map(|&s| run_seed(cfg, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(ForgettingReport {
        replay_size: cfg.replay_size,
        seeds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub model: ModelDims,
    pub pairs: usize,
    pub train_fraction: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub eval_interval: usize,
    pub seed: u64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            model: ModelDims {
                d_model: 32,
                n_layers: 1,
                n_heads: 2,
                context: 96,
            },
            pairs: 200,
            train_fraction: 0.8,
            steps: 300,
            batch_size: 8,
            learning_rate: 3e-3,
            eval_interval: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRun {
    pub name: String,
    pub tasks: Vec<Task>,
    pub curve: LossCurve,
}

pub const ABLATION_VAL_TAG: &str = "mix";

pub fn ablation_task_sets() -> Vec<(&'static str, Vec<Task>)> {
    vec![
        ("mono", vec![Task::MonoDenoise]),
        ("cd", vec![Task::CondDenoiseWord, Task::CondDenoiseSpan]),
        ("mt", vec![Task::MachineTranslation]),
        (
            "cd+mt",
            vec![Task::CondDenoiseWord, Task::CondDenoiseSpan, Task::MachineTranslation],
        ),
    ]
}

/// Trains one model per task set for the same number of steps, each
/// validated on the same mix of all four generation tasks.
pub fn run_ablation(cfg: &AblationConfig) -> Result<Vec<AblationRun>> {
    let corpus = cipher_corpus(cfg.pairs, cfg.seed)?;
    let (train_corpus, val_corpus) = split_corpus(&corpus, cfg.train_fraction, derive_seed(cfg.seed, 0, "split"))?;
    let templates = compact_templates();
    let all_tasks = [
        Task::CondDenoiseWord,
        Task::CondDenoiseSpan,
        Task::MachineTranslation,
        Task::MonoDenoise,
    ];
    let val = generate_dataset(&val_corpus, &all_tasks, &templates, cfg.seed, Direction::PivotToNew)?;
    let full_train = generate_dataset(&train_corpus, &all_tasks, &templates, cfg.seed, Direction::PivotToNew)?;
    let vocab = build_vocab(&[&full_train, &val])?;
    let init = TinyLm::new(cfg.model.with_vocab(vocab.len()), derive_seed(cfg.seed, 0, "init"))?;

    ablation_task_sets()
        .into_iter()
        .map(|(name, tasks)| {
            let data = generate_dataset(&train_corpus, &tasks, &templates, cfg.seed, Direction::PivotToNew)?;
            let per_epoch = data.len().div_ceil(cfg.batch_size);
            let schedule = schedule_epochs(
                &ReplayPool::empty(""),
                &data,
                cfg.batch_size,
                derive_seed(cfg.seed, 1, name),
                cfg.steps.div_ceil(per_epoch),
                Interleave::Strict,
            )?;
            let tcfg = TrainConfig {
                learning_rate: cfg.learning_rate,
                max_steps: cfg.steps,
                batch_size: cfg.batch_size,
                seed: cfg.seed,
                eval_interval: cfg.eval_interval,
                model: cfg.model,
                ..TrainConfig::default()
            };
            let val_sets = [ValSet {
                tag: ABLATION_VAL_TAG,
                data: &val,
            }];
            let (_, curve) = train(init.clone(), &vocab, &schedule, &tcfg, &val_sets)?;
            Ok(AblationRun {
                name: name.to_string(),
                tasks,
                curve,
            })
        })
        .collect()
}
