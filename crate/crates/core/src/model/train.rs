use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{xent_loss, xent_loss_grad};
use super::optim::{lr_at, AdamW, AdamWConfig};
use super::real::Real;
use super::tinylm::{ModelConfig, TinyLm};
use super::vocab::{encode_example, Encoded, Vocab};
use crate::error::{Error, Result};
use crate::instruction::{InstructionDataset, InstructionExample};
use crate::replay::MixBatch;

/// Network shape; the vocabulary size comes from the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelDims {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub context: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            d_model: 64,
            n_layers: 2,
            n_heads: 2,
            context: 256,
        }
    }
}

impl ModelDims {
    pub fn with_vocab(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            context: self.context,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: AdamWConfig,
    pub eval_interval: usize,
    pub loss_on_prompt: bool,
    pub model: ModelDims,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            max_steps: 1000,
            batch_size: 8,
            seed: 0,
            optimizer: AdamWConfig::default(),
            eval_interval: 50,
            loss_on_prompt: false,
            model: ModelDims::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let o = &self.optimizer;
        let positive = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && self.max_steps >= 1
            && self.batch_size >= 1
            && self.eval_interval >= 1
            && o.eps > 0.0
            && o.weight_decay >= 0.0
            && (0.0..1.0).contains(&o.beta1)
            && (0.0..1.0).contains(&o.beta2);
        if !positive {
            return Err(Error::Invalid(format!("invalid training config: {self:?}")));
        }
        self.model.with_vocab(1).validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub step: usize,
    pub tag: String,
    pub split: String,
    pub loss: f64,
}

pub const TRAIN_SPLIT: &str = "train";
pub const VAL_SPLIT: &str = "val";
pub const TRAIN_TAG: &str = "all";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossCurve {
    pub rows: Vec<CurveRow>,
}

impl LossCurve {
    pub fn push(&mut self, step: usize, tag: &str, split: &str, loss: f64) {
        self.rows.push(CurveRow {
            step,
            tag: tag.to_string(),
            split: split.to_string(),
            loss,
        });
    }

    pub fn series(&self, tag: &str, split: &str) -> Vec<(usize, f64)> {
        self.rows
            .iter()
            .filter(|r| r.tag == tag && r.split == split)
            .map(|r| (r.step, r.loss))
            .collect()
    }

    pub fn last(&self, tag: &str, split: &str) -> Option<f64> {
        self.series(tag, split).last().map(|&(_, l)| l)
    }

    pub fn train_losses(&self) -> Vec<f64> {
        self.series(TRAIN_TAG, TRAIN_SPLIT)
            .into_iter()
            .map(|(_, l)| l)
            .collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let headers = r.headers()?.clone();
        for col in ["step", "tag", "split", "loss"] {
            if !headers.iter().any(|h| h == col) {
                return Err(Error::SchemaViolation {
                    line: 1,
                    message: format!("missing column {col}"),
                });
            }
        }
        let mut rows = Vec::new();
        for (i, rec) in r.deserialize().enumerate() {
            let row: CurveRow = rec.map_err(|e| Error::SchemaViolation {
                line: i + 2,
                message: e.to_string(),
            })?;
            rows.push(row);
        }
        Ok(LossCurve { rows })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }
}

/// Encodes an example for the model, truncating the prompt to fit.
pub fn prepare(ex: &InstructionExample, vocab: &Vocab, context: usize, loss_on_prompt: bool) -> Result<Encoded> {
    let enc = encode_example(ex, vocab);
    let enc = if loss_on_prompt { enc.with_loss_on_prompt() } else { enc };
    enc.truncate_to(context)
}

pub fn sequence_loss<T: Real>(model: &TinyLm<T>, enc: &Encoded) -> Result<T> {
    let logits = model.forward(&enc.ids)?;
    xent_loss(&logits, &enc.ids, &enc.loss_mask, model.config.vocab_size)
}

/// Mean of the per-sequence losses and its gradient. Each sequence carries
/// equal weight regardless of how many positions it supervises.
pub fn batch_loss_and_grad<T: Real>(model: &TinyLm<T>, batch: &[Encoded]) -> Result<(T, Vec<T>)> {
    if batch.is_empty() {
        return Err(Error::EmptyData);
    }
    let weight = T::one() / T::of(batch.len() as f64);
    let parts: Vec<Result<(T, Vec<T>)>> = batch
        .par_iter()
        .map(|enc| {
            model.check_ids(&enc.ids)?;
            let (cache, logits) = model.forward_cached(&enc.ids);
            let (loss, dlogits) = xent_loss_grad(&logits, &enc.ids, &enc.loss_mask, model.config.vocab_size, weight)?;
            let mut grads = vec![T::zero(); model.num_params()];
            model.backward(&enc.ids, &cache, &dlogits, &mut grads);
            Ok((loss, grads))
        })
        .collect();
    let mut total = T::zero();
    let mut grads = vec![T::zero(); model.num_params()];
    for part in parts {
        let (loss, g) = part?;
        total += loss;
        for (a, b) in grads.iter_mut().zip(&g) {
            *a += *b;
        }
    }
    Ok((total * weight, grads))
}

pub fn batch_loss<T: Real>(model: &TinyLm<T>, batch: &[Encoded]) -> Result<T> {
    if batch.is_empty() {
        return Err(Error::EmptyData);
    }
    let losses: Vec<Result<T>> = batch.par_iter().map(|enc| sequence_loss(model, enc)).collect();
    let mut total = T::zero();
    for l in losses {
        total += l?;
    }
    Ok(total / T::of(batch.len() as f64))
}

fn mean_loss(model: &TinyLm<f32>, encoded: &[Encoded]) -> Result<f64> {
    let losses: Vec<Result<f32>> = encoded.par_iter().map(|enc| sequence_loss(model, enc)).collect();
    let mut total = 0.0f64;
    for l in losses {
        total += l? as f64;
    }
    Ok(total / encoded.len() as f64)
}

/// Mean loss over a dataset. No parameters change.
pub fn dataset_loss(
    model: &TinyLm<f32>,
    dataset: &InstructionDataset,
    vocab: &Vocab,
    loss_on_prompt: bool,
) -> Result<f64> {
    if dataset.examples.is_empty() {
        return Err(Error::EmptyData);
    }
    let encoded = dataset
        .examples
        .iter()
        .map(|ex| prepare(ex, vocab, model.config.context, loss_on_prompt))
        .collect::<Result<Vec<_>>>()?;
    mean_loss(model, &encoded)
}

/// Mean loss per task tag. No parameters change.
pub fn task_loss(model: &TinyLm<f32>, dataset: &InstructionDataset, vocab: &Vocab) -> Result<BTreeMap<String, f64>> {
    if dataset.examples.is_empty() {
        return Err(Error::EmptyData);
    }
    let mut groups: BTreeMap<String, Vec<Encoded>> = BTreeMap::new();
    for ex in &dataset.examples {
        groups
            .entry(ex.task.tag().to_string())
            .or_default()
            .push(prepare(ex, vocab, model.config.context, false)?);
    }
    groups
        .into_iter()
        .map(|(tag, enc)| Ok((tag, mean_loss(model, &enc)?)))
        .collect()
}

/// A named validation set evaluated during training.
#[derive(Debug, Clone, Copy)]
pub struct ValSet<'a> {
    pub tag: &'a str,
    pub data: &'a InstructionDataset,
}

/// Runs `min(max_steps, schedule.len())` AdamW steps with linear learning-rate
/// decay over `max_steps`.
///
/// The train loss at step `s` is the batch loss under the parameters before
/// update `s`. Validation losses are recorded every `eval_interval` steps,
/// before that step's update, and once more after the last update.
pub fn train(
    mut model: TinyLm<f32>,
    vocab: &Vocab,
    schedule: &[MixBatch],
    cfg: &TrainConfig,
    val_sets: &[ValSet<'_>],
) -> Result<(TinyLm<f32>, LossCurve)> {
    cfg.validate()?;
    if schedule.is_empty() {
        return Err(Error::EmptySchedule);
    }
    if vocab.len() != model.config.vocab_size {
        return Err(Error::Invalid(format!(
            "vocabulary has {} symbols but the model expects {}",
            vocab.len(),
            model.config.vocab_size
        )));
    }
    let context = model.config.context;
    let val_encoded = val_sets
        .iter()
        .map(|vs| {
            if vs.data.examples.is_empty() {
                return Err(Error::EmptyData);
            }
            let enc = vs
                .data
                .examples
                .iter()
                .map(|ex| prepare(ex, vocab, context, cfg.loss_on_prompt))
                .collect::<Result<Vec<_>>>()?;
            Ok((vs.tag, enc))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut curve = LossCurve::default();
    let record_val = |model: &TinyLm<f32>, step: usize, curve: &mut LossCurve| -> Result<()> {
        for (tag, enc) in &val_encoded {
            curve.push(step, tag, VAL_SPLIT, mean_loss(model, enc)?);
        }
        Ok(())
    };

    let mut opt = AdamW::new(cfg.optimizer, &model.layout);
    let steps = cfg.max_steps.min(schedule.len());
    for (step, batch) in schedule.iter().take(steps).enumerate() {
        if step % cfg.eval_interval == 0 {
            record_val(&model, step, &mut curve)?;
        }
        let encoded = batch
            .items
            .iter()
            .map(|ex| prepare(ex, vocab, context, cfg.loss_on_prompt))
            .collect::<Result<Vec<_>>>()?;
        let (loss, grads) = batch_loss_and_grad(&model, &encoded)?;
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss {
                step,
                batch_ids: batch.example_ids(),
            });
        }
        curve.push(step, TRAIN_TAG, TRAIN_SPLIT, loss as f64);
        opt.step(&mut model.params, &grads, lr_at(cfg.learning_rate, step, cfg.max_steps));
    }
    record_val(&model, steps, &mut curve)?;
    Ok((model, curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instruction::{Manifest, Task};
    use crate::model::vocab::build_vocab;
    use crate::replay::{schedule_epochs, Interleave, ReplayPool};

    pub(crate) fn toy_dataset(n: usize, tag: &str) -> InstructionDataset {
        let examples = (0..n)
            .map(|i| InstructionExample {
                example_id: format!("{tag}-{i}"),
                task: Task::MachineTranslation,
                src_lang: "eng".parse().unwrap(),
                tgt_lang: "ind".parse().unwrap(),
                input: format!("say {}", i % 10),
                target: [
                    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine",
                ][i % 10]
                    .into(),
                template_id: "t".into(),
                pair_id: i,
                seed: i as u64,
            })
            .collect();
        InstructionDataset::new(examples, Manifest::default()).unwrap()
    }

    fn small_cfg(steps: usize) -> TrainConfig {
        TrainConfig {
            learning_rate: 3e-3,
            max_steps: steps,
            batch_size: 8,
            seed: 1,
            eval_interval: 25,
            model: ModelDims {
                d_model: 32,
                n_layers: 1,
                n_heads: 2,
                context: 32,
            },
            ..TrainConfig::default()
        }
    }

    fn setup(n: usize, steps: usize) -> (InstructionDataset, Vocab, Vec<MixBatch>, TrainConfig) {
        let data = toy_dataset(n, "toy");
        let vocab = build_vocab(&[&data]).unwrap();
        let cfg = small_cfg(steps);
        let epochs = (steps * cfg.batch_size).div_ceil(n);
        let schedule = schedule_epochs(
            &ReplayPool::empty(""),
            &data,
            cfg.batch_size,
            9,
            epochs,
            Interleave::Strict,
        )
        .unwrap();
        (data, vocab, schedule, cfg)
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let (data, vocab, schedule, cfg) = setup(50, 200);
        let model = TinyLm::new(cfg.model.with_vocab(vocab.len()), 5).unwrap();
        let val = [ValSet {
            tag: "toy",
            data: &data,
        }];
        let (m1, c1) = train(model.clone(), &vocab, &schedule, &cfg, &val).unwrap();
        let (m2, c2) = train(model, &vocab, &schedule, &cfg, &val).unwrap();
        assert_eq!(m1.params, m2.params);
        assert_eq!(c1, c2);

        let train_losses = c1.train_losses();
        assert_eq!(train_losses.len(), 200);
        let head: f64 = train_losses[..10].iter().sum::<f64>() / 10.0;
        let tail: f64 = train_losses[190..].iter().sum::<f64>() / 10.0;
        assert!(tail < head, "{head} -> {tail}");
        let val_steps: Vec<usize> = c1.series("toy", VAL_SPLIT).iter().map(|&(s, _)| s).collect();
        assert_eq!(val_steps, vec![0, 25, 50, 75, 100, 125, 150, 175, 200]);
        assert!(c1.rows.iter().all(|r| r.loss >= 0.0 && r.loss.is_finite()));
    }

    #[test]
    fn step_count_is_bounded_by_schedule() {
        let (_, vocab, schedule, mut cfg) = setup(16, 2);
        cfg.max_steps = 1000;
        let model = TinyLm::new(cfg.model.with_vocab(vocab.len()), 5).unwrap();
        let (_, curve) = train(model, &vocab, &schedule, &cfg, &[]).unwrap();
        assert_eq!(curve.train_losses().len(), schedule.len());
        assert!(matches!(
            train(
                TinyLm::new(cfg.model.with_vocab(vocab.len()), 5).unwrap(),
                &vocab,
                &[],
                &cfg,
                &[]
            ),
            Err(Error::EmptySchedule)
        ));
    }

    #[test]
    fn non_finite_loss_aborts() {
        let (_, vocab, schedule, cfg) = setup(16, 2);
        let mut model = TinyLm::new(cfg.model.with_vocab(vocab.len()), 5).unwrap();
        model.params.iter_mut().for_each(|p| *p = f32::NAN);
        match train(model, &vocab, &schedule, &cfg, &[]) {
            Err(Error::NonFiniteLoss { step, batch_ids }) => {
                assert_eq!(step, 0);
                assert_eq!(batch_ids, schedule[0].example_ids());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn task_loss_is_pure_and_grouped() {
        let (data, vocab, _, cfg) = setup(20, 1);
        let model = TinyLm::new(cfg.model.with_vocab(vocab.len()), 2).unwrap();
        let a = task_loss(&model, &data, &vocab).unwrap();
        let b = task_loss(&model, &data, &vocab).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.keys().collect::<Vec<_>>(), vec!["mt"]);
        // a fresh model predicts close to uniformly
        let ln_v = (vocab.len() as f64).ln();
        assert!((a["mt"] - ln_v).abs() < 0.5);
        let empty = InstructionDataset::new(vec![], Manifest::default()).unwrap();
        assert!(matches!(task_loss(&model, &empty, &vocab), Err(Error::EmptyData)));
    }

    #[test]
    fn config_json() {
        let cfg = TrainConfig::from_json(r#"{"max_steps": 48700, "learning_rate": 1e-5}"#).unwrap();
        assert_eq!(cfg.max_steps, 48700);
        assert_eq!(cfg.batch_size, 8);
        assert_eq!(cfg.model, ModelDims::default());
        assert!(TrainConfig::from_json(r#"{"max_steps": 0}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"learning_rate": -1.0}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn curve_csv_round_trip() {
        let mut c = LossCurve::default();
        c.push(0, "all", "train", 2.5);
        c.push(0, "old", "val", 0.125);
        let text = c.to_csv().unwrap();
        assert!(text.starts_with("step,tag,split,loss\n"));
        assert_eq!(LossCurve::from_csv(&text).unwrap(), c);
        assert!(matches!(
            LossCurve::from_csv("step,tag,loss\n0,a,1.0\n"),
            Err(Error::SchemaViolation { .. })
        ));
    }
}
