//! End-to-end runs from one config, with a manifest of input and output
//! digests that `verify` can replay.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ia1_core::instruction::{generate_dataset, import_tsv, Task};
use ia1_core::model::{build_vocab, ModelDims, TrainConfig};
use ia1_core::seed::{derive_seed, sha256_hex};
use ia1_core::{load_parallel, read_dataset, split_corpus, write_dataset, Error, InstructionDataset, TinyLm, Vocab};
use serde::{Deserialize, Serialize};

use crate::commands::{
    csv_sibling, file_digest, file_name, init_model, run_eval, run_report, run_train, templates_or_builtin, write_file,
    write_schedule, EvalInput, ScheduleInput, TrainInput, DELTAS_FILE, SMOOTHED_FILE,
};
use crate::config::{CorpusConfig, EvalConfig, GenerateConfig, ReplayConfig, RunConfig, CONFIG_VERSION};
use crate::ValidationError;

pub const MANIFEST_FORMAT: &str = "ia1-run/1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORT_WINDOW: usize = 10;

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const VAL_FILE: &str = "val.jsonl";
pub const OLD_FILE: &str = "old.jsonl";
pub const PLAN_FILE: &str = "plan.jsonl";
pub const MODEL_FILE: &str = "model.bin";
pub const CURVES_FILE: &str = "curves.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const BASELINE_FILE: &str = "metrics_baseline.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub format: String,
    pub version: String,
    pub seed: u64,
    pub config_digest: String,
    /// The config as written, paths unresolved.
    pub config: RunConfig,
    /// Directory the config's relative paths are resolved against.
    pub config_dir: PathBuf,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| ValidationError(format!("{}: {e}", path.display())).into())
    }
}

/// Config for the demo inputs written by `synth`.
pub fn demo_config(src: &str, tgt: &str, seed: u64) -> RunConfig {
    RunConfig {
        version: CONFIG_VERSION.into(),
        seed,
        corpus: CorpusConfig {
            src: src.into(),
            tgt: tgt.into(),
            src_lang: "eng".parse().expect("valid tag"),
            tgt_lang: "qaa".parse().expect("valid tag"),
            val_fraction: 0.1,
        },
        generate: GenerateConfig {
            tasks: vec![Task::CondDenoiseWord, Task::CondDenoiseSpan, Task::MachineTranslation],
            templates: Some("templates.json".into()),
            direction: Default::default(),
        },
        replay: ReplayConfig {
            old_data: Some("old.tsv".into()),
            old_lang: "eng".parse().expect("valid tag"),
            size: 64,
            epochs: 2,
            interleave: Default::default(),
        },
        train: TrainConfig {
            learning_rate: 3e-3,
            max_steps: 300,
            batch_size: 8,
            seed,
            eval_interval: 50,
            model: ModelDims {
                d_model: 32,
                n_layers: 1,
                n_heads: 2,
                context: 128,
            },
            ..TrainConfig::default()
        },
        eval: EvalConfig {
            data: "eval.tsv".into(),
            templates: Some("templates.json".into()),
            verbalizers: Some("verbalizers.json".into()),
            normalize: Default::default(),
        },
        out_dir: "run".into(),
    }
}

fn config_digest(cfg: &RunConfig) -> Result<String> {
    Ok(sha256_hex(serde_json::to_string(cfg)?.as_bytes()))
}

fn stage<T>(name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().with_context(|| format!("stage {name}"))
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).with_context(|| format!("resolving {}", p.display()))
}

fn is_tsv(p: &Path) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case("tsv"))
}

/// Checks a resolved config, including template coverage of every task.
fn validate_run(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let gen = templates_or_builtin(cfg.generate.templates.as_deref())?;
    gen.require_tasks(&cfg.generate.tasks)
        .map_err(|e| ValidationError(format!("generate.templates: {e}")))?;
    let eval = templates_or_builtin(cfg.eval.templates.as_deref())?;
    eval.require_tasks(&[Task::Classification])
        .map_err(|e| ValidationError(format!("eval.templates: {e}")))?;
    Ok(())
}

/// Runs every stage of `raw` (paths relative to `config_dir`) into `out_dir`.
pub fn run_pipeline(raw: &RunConfig, config_dir: &Path, out_dir: &Path, seed: u64) -> Result<RunManifest> {
    let config_dir = absolute(config_dir)?;
    let mut cfg = raw.clone();
    cfg.resolve_paths(&config_dir);
    cfg.seed = seed;
    cfg.train.seed = seed;
    validate_run(&cfg)?;

    let inputs = cfg
        .input_files()
        .into_iter()
        .map(|(name, p)| Ok((name.to_string(), file_digest(p)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;

    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let out = |f: &str| out_dir.join(f);

    let (train_ds, val_ds) = stage("generate", || {
        let c = &cfg.corpus;
        let corpus = load_parallel(&c.src, &c.tgt, c.src_lang.clone(), c.tgt_lang.clone())?;
        let (train_c, val_c) = split_corpus(&corpus, 1.0 - c.val_fraction, derive_seed(seed, 0, "split"))?;
        let templates = templates_or_builtin(cfg.generate.templates.as_deref())?;
        let g = &cfg.generate;
        let mut sets = Vec::new();
        for (part, file) in [(&train_c, DATASET_FILE), (&val_c, VAL_FILE)] {
            let mut ds = generate_dataset(part, &g.tasks, &templates, seed, g.direction)?;
            ds.manifest.src_path = file_name(&c.src);
            ds.manifest.tgt_path = file_name(&c.tgt);
            write_dataset(&ds, out(file))?;
            sets.push(ds);
        }
        let val = sets.pop().expect("two sets");
        Ok((sets.pop().expect("two sets"), val))
    })?;

    let old_ds: Option<InstructionDataset> = match &cfg.replay.old_data {
        Some(p) => Some(stage("convert-old", || {
            let ds = if is_tsv(p) {
                import_tsv(p, cfg.replay.old_lang.clone())?
            } else {
                read_dataset(p)?
            };
            write_dataset(&ds, out(OLD_FILE))?;
            Ok(ds)
        })?),
        None => None,
    };

    stage("schedule", || {
        write_schedule(&ScheduleInput {
            new_path: &out(DATASET_FILE),
            old_path: old_ds.as_ref().map(|_| out(OLD_FILE)).as_deref(),
            replay: cfg.replay.size,
            batch_size: cfg.train.batch_size,
            epochs: cfg.replay.epochs,
            interleave: cfg.replay.interleave,
            seed,
            out: &out(PLAN_FILE),
        })
    })?;

    let eval_to = |model: &TinyLm<f32>, vocab: &Vocab, path: &Path| -> Result<()> {
        run_eval(&EvalInput {
            model,
            vocab,
            data: &cfg.eval.data,
            templates: cfg.eval.templates.as_deref(),
            verbalizers: cfg.eval.verbalizers.as_deref(),
            normalize: cfg.eval.normalize,
            out: path,
        })?;
        Ok(())
    };

    stage("baseline", || {
        let mut sources = vec![&train_ds];
        sources.extend(old_ds.as_ref());
        sources.push(&val_ds);
        let vocab = build_vocab(&sources)?;
        let model = init_model(&cfg.train, &vocab)?;
        eval_to(&model, &vocab, &out(BASELINE_FILE))
    })?;

    stage("train", || {
        run_train(&TrainInput {
            schedule: &out(PLAN_FILE),
            config: cfg.train.clone(),
            val: &[out(VAL_FILE)],
            init_model: None,
            out_model: &out(MODEL_FILE),
            curves: &out(CURVES_FILE),
        })
    })?;

    stage("eval", || {
        let (model, vocab) = ia1_core::read_checkpoint(&out(MODEL_FILE))?;
        eval_to(&model, &vocab, &out(METRICS_FILE))
    })?;

    stage("report", || {
        run_report(
            &out(CURVES_FILE),
            &out(METRICS_FILE),
            &out(BASELINE_FILE),
            REPORT_WINDOW,
            out_dir,
        )
    })?;

    let mut output_files = vec![
        DATASET_FILE,
        VAL_FILE,
        PLAN_FILE,
        MODEL_FILE,
        CURVES_FILE,
        DELTAS_FILE,
        SMOOTHED_FILE,
    ];
    if old_ds.is_some() {
        output_files.push(OLD_FILE);
    }
    let mut outputs = BTreeMap::new();
    for f in output_files {
        outputs.insert(f.to_string(), file_digest(&out(f))?);
    }
    for f in [METRICS_FILE, BASELINE_FILE] {
        outputs.insert(f.to_string(), file_digest(&out(f))?);
        let csv = csv_sibling(&out(f));
        outputs.insert(file_name(&csv).expect("file name"), file_digest(&csv)?);
    }

    let manifest = RunManifest {
        format: MANIFEST_FORMAT.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed,
        config_digest: config_digest(raw)?,
        config: raw.clone(),
        config_dir,
        inputs,
        outputs,
    };
    write_file(&out(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

pub fn pipeline(config: &Path, out_dir: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let text = std::fs::read_to_string(config)
        .map_err(|e| ValidationError(format!("cannot read config {}: {e}", config.display())))?;
    let raw = RunConfig::from_json(&text)?;
    let config_dir = absolute(config.parent().unwrap_or(Path::new("")))?;
    let out_dir = match out_dir {
        Some(p) => p.to_path_buf(),
        None => config_dir.join(&raw.out_dir),
    };
    let seed = seed.unwrap_or(raw.seed);
    let manifest = run_pipeline(&raw, &config_dir, &out_dir, seed)?;
    println!(
        "pipeline finished: {} outputs in {}; manifest {}",
        manifest.outputs.len(),
        out_dir.display(),
        out_dir.join(MANIFEST_FILE).display()
    );
    Ok(())
}

pub fn verify(manifest_path: &Path, out_dir: &Path) -> Result<()> {
    let m = RunManifest::read(manifest_path)?;
    if m.format != MANIFEST_FORMAT {
        bail!(ValidationError(format!("unsupported manifest format {:?}", m.format)));
    }
    if config_digest(&m.config)? != m.config_digest {
        return Err(Error::DigestMismatch {
            what: "embedded config".into(),
            expected: m.config_digest.clone(),
            found: config_digest(&m.config)?,
        }
        .into());
    }
    if out_dir.exists() && std::fs::read_dir(out_dir)?.next().is_some() {
        bail!(ValidationError(format!("{} is not empty", out_dir.display())));
    }
    let mut resolved = m.config.clone();
    resolved.resolve_paths(&m.config_dir);
    for (name, p) in resolved.input_files() {
        let expected = m.inputs.get(name).map(String::as_str).unwrap_or_default();
        let found = file_digest(p)?;
        if found != expected {
            return Err(Error::DigestMismatch {
                what: format!("input {name}"),
                expected: expected.to_string(),
                found,
            }
            .into());
        }
    }
    let rerun = run_pipeline(&m.config, &m.config_dir, out_dir, m.seed)?;
    let mut mismatched = Vec::new();
    for (name, digest) in &m.outputs {
        match rerun.outputs.get(name) {
            Some(d) if d == digest => {}
            _ => mismatched.push(name.as_str()),
        }
    }
    if !mismatched.is_empty() {
        bail!("outputs differ from the manifest: {}", mismatched.join(", "));
    }
    println!("verified {} outputs", m.outputs.len());
    Ok(())
}
