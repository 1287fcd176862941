use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ia1_core::eval::{evaluate, load_eval_set, Normalize, Verbalizers};
use ia1_core::experiments::{run_ablation, run_forgetting, AblationConfig, ForgettingConfig, ABLATION_VAL_TAG};
use ia1_core::instruction::{generate_dataset, import_tsv, Direction, InstructionDataset, Task, TemplateSet};
use ia1_core::model::{
    build_vocab, read_checkpoint, train, write_checkpoint, LossCurve, TinyLm, TrainConfig, ValSet, Vocab,
};
use ia1_core::replay::{sample_replay, schedule_epochs, BatchPlan, Interleave, MixBatch, PlanHeader, ReplayPool};
use ia1_core::report::{language_deltas, parse_metrics, smooth_curve, to_csv};
use ia1_core::seed::{derive_seed, sha256_hex};
use ia1_core::{load_parallel, read_dataset, read_plan, synthetic, write_dataset, write_plan, Error, LanguageTag};

use crate::args::{
    ConvertOldArgs, EvalArgs, ExperimentArgs, ExperimentKind, GenerateArgs, InterleaveArg, NormalizeArg, ReportArgs,
    ScheduleArgs, SynthArgs, TrainArgs,
};
use crate::ValidationError;

pub(crate) fn lang(code: &str) -> Result<LanguageTag> {
    Ok(code.parse::<LanguageTag>()?)
}

pub(crate) fn templates_or_builtin(path: Option<&Path>) -> Result<TemplateSet> {
    match path {
        Some(p) => Ok(ia1_core::load_templates(p)?),
        None => Ok(TemplateSet::builtin()),
    }
}

pub(crate) fn verbalizers_or_builtin(path: Option<&Path>) -> Result<Verbalizers> {
    match path {
        Some(p) => Ok(Verbalizers::load(p)?),
        None => Ok(Verbalizers::builtin()),
    }
}

pub(crate) fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

/// Seed of the replay sample for a schedule seed.
pub(crate) fn replay_seed(seed: u64) -> u64 {
    derive_seed(seed, 0, "replay")
}

pub fn generate(args: &GenerateArgs, seed: Option<u64>) -> Result<()> {
    let tasks = args
        .tasks
        .iter()
        .map(|t| Task::from_tag(t.trim()))
        .collect::<ia1_core::Result<Vec<_>>>()?;
    let direction = Direction::from_tag(&args.direction)?;
    let templates = templates_or_builtin(args.templates.as_deref())?;
    let corpus = load_parallel(&args.src, &args.tgt, lang(&args.src_lang)?, lang(&args.tgt_lang)?)?;
    let mut ds = generate_dataset(&corpus, &tasks, &templates, seed.unwrap_or(0), direction)?;
    ds.manifest.src_path = file_name(&args.src);
    ds.manifest.tgt_path = file_name(&args.tgt);
    write_dataset(&ds, &args.out)?;
    println!(
        "wrote {} examples ({} skipped) to {}",
        ds.len(),
        ds.manifest.skipped_total(),
        args.out.display()
    );
    Ok(())
}

pub(crate) fn file_name(p: &Path) -> Option<String> {
    p.file_name().map(|n| n.to_string_lossy().into_owned())
}

/// Stores `target` relative to the plan's directory when it lives there.
fn plan_relative(plan: &Path, target: &Path) -> String {
    let plan_dir = plan.parent().unwrap_or(Path::new(""));
    let target_dir = target.parent().unwrap_or(Path::new(""));
    let same = match (plan_dir.canonicalize(), target_dir.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    };
    if same {
        file_name(target).unwrap_or_default()
    } else {
        target
            .canonicalize()
            .unwrap_or_else(|_| target.to_path_buf())
            .display()
            .to_string()
    }
}

fn resolve_from_plan(plan: &Path, stored: &str) -> PathBuf {
    let p = Path::new(stored);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        plan.parent().unwrap_or(Path::new("")).join(p)
    }
}

pub(crate) struct ScheduleInput<'a> {
    pub new_path: &'a Path,
    pub old_path: Option<&'a Path>,
    pub replay: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub interleave: Interleave,
    pub seed: u64,
    pub out: &'a Path,
}

pub(crate) fn write_schedule(input: &ScheduleInput<'_>) -> Result<BatchPlan> {
    if input.replay > 0 && input.old_path.is_none() {
        bail!(ValidationError("--replay-size > 0 needs --old".into()));
    }
    let new = read_dataset(input.new_path)?;
    let (pool, old_path, old_digest) = match (input.old_path, input.replay) {
        (Some(p), r) if r > 0 => {
            let old = read_dataset(p)?;
            let pool = sample_replay(&old, r, replay_seed(input.seed))?;
            (pool, Some(plan_relative(input.out, p)), Some(old.digest()?))
        }
        _ => (ReplayPool::empty(""), None, None),
    };
    let batches = schedule_epochs(
        &pool,
        &new,
        input.batch_size,
        input.seed,
        input.epochs,
        input.interleave,
    )?;
    let header = PlanHeader {
        new_path: plan_relative(input.out, input.new_path),
        new_digest: new.digest()?,
        old_path,
        old_digest,
        replay_size: input.replay,
        batch_size: input.batch_size,
        seed: input.seed,
        epochs: input.epochs,
        interleave: input.interleave,
        ..PlanHeader::default()
    };
    let plan = BatchPlan::new(header, &batches);
    write_plan(&plan, input.out)?;
    Ok(plan)
}

pub fn schedule(args: &ScheduleArgs, seed: Option<u64>) -> Result<()> {
    let plan = write_schedule(&ScheduleInput {
        new_path: &args.new,
        old_path: args.old.as_deref(),
        replay: args.replay_size,
        batch_size: args.batch_size,
        epochs: args.epochs,
        interleave: match args.interleave {
            InterleaveArg::Strict => Interleave::Strict,
            InterleaveArg::Shuffled => Interleave::Shuffled,
        },
        seed: seed.unwrap_or(0),
        out: &args.out,
    })?;
    println!("wrote {} batches to {}", plan.batches.len(), args.out.display());
    Ok(())
}

fn check_digest(what: &str, expected: &str, ds: &InstructionDataset) -> Result<()> {
    let found = ds.digest()?;
    if found != expected {
        return Err(Error::DigestMismatch {
            what: what.to_string(),
            expected: expected.to_string(),
            found,
        }
        .into());
    }
    Ok(())
}

/// The plan's batches together with the datasets they were drawn from.
pub(crate) struct ResolvedPlan {
    pub batches: Vec<MixBatch>,
    pub new: InstructionDataset,
    pub old: Option<InstructionDataset>,
}

pub(crate) fn resolve_plan(path: &Path) -> Result<ResolvedPlan> {
    let plan = read_plan(path)?;
    let h = &plan.header;
    let new = read_dataset(resolve_from_plan(path, &h.new_path))?;
    check_digest("new data", &h.new_digest, &new)?;
    let (pool, old) = match (&h.old_path, &h.old_digest) {
        (Some(p), Some(d)) if h.replay_size > 0 => {
            let old = read_dataset(resolve_from_plan(path, p))?;
            check_digest("old data", d, &old)?;
            (sample_replay(&old, h.replay_size, replay_seed(h.seed))?, Some(old))
        }
        _ => (ReplayPool::empty(""), None),
    };
    let batches = plan.resolve(&pool, &new)?;
    Ok(ResolvedPlan { batches, new, old })
}

pub(crate) struct TrainInput<'a> {
    pub schedule: &'a Path,
    pub config: TrainConfig,
    pub val: &'a [PathBuf],
    pub init_model: Option<&'a Path>,
    pub out_model: &'a Path,
    pub curves: &'a Path,
}

fn stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "val".into())
}

/// A fresh model for `cfg` over `vocab`, seeded from the training seed.
pub(crate) fn init_model(cfg: &TrainConfig, vocab: &Vocab) -> Result<TinyLm<f32>> {
    Ok(TinyLm::new(
        cfg.model.with_vocab(vocab.len()),
        derive_seed(cfg.seed, 0, "init"),
    )?)
}

pub(crate) fn run_train(input: &TrainInput<'_>) -> Result<LossCurve> {
    input.config.validate()?;
    let plan = resolve_plan(input.schedule)?;
    let vals = input
        .val
        .iter()
        .map(|p| Ok((stem(p), read_dataset(p)?)))
        .collect::<Result<Vec<_>>>()?;
    let (model, vocab) = match input.init_model {
        Some(p) => read_checkpoint(p)?,
        None => {
            let mut sources: Vec<&InstructionDataset> = vec![&plan.new];
            sources.extend(plan.old.as_ref());
            sources.extend(vals.iter().map(|(_, d)| d));
            let vocab = build_vocab(&sources)?;
            (init_model(&input.config, &vocab)?, vocab)
        }
    };
    let val_sets: Vec<ValSet<'_>> = vals.iter().map(|(tag, data)| ValSet { tag, data }).collect();
    let (model, curve) = train(model, &vocab, &plan.batches, &input.config, &val_sets)?;
    write_checkpoint(input.out_model, &model, &vocab)?;
    curve.write(input.curves)?;
    Ok(curve)
}

pub fn train_cmd(args: &TrainArgs, seed: Option<u64>) -> Result<()> {
    let mut config = match &args.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    config.loss_on_prompt |= args.loss_on_prompt;
    let curve = run_train(&TrainInput {
        schedule: &args.schedule,
        config,
        val: &args.val,
        init_model: args.init_model.as_deref(),
        out_model: &args.out_model,
        curves: &args.curves,
    })?;
    let losses = curve.train_losses();
    println!(
        "trained {} steps; train loss {:.4} -> {:.4}; model written to {}",
        losses.len(),
        losses.first().copied().unwrap_or(f64::NAN),
        losses.last().copied().unwrap_or(f64::NAN),
        args.out_model.display()
    );
    Ok(())
}

pub(crate) fn normalize(arg: NormalizeArg) -> Normalize {
    match arg {
        NormalizeArg::Sum => Normalize::Sum,
        NormalizeArg::PerToken => Normalize::PerToken,
    }
}

pub(crate) struct EvalInput<'a> {
    pub model: &'a TinyLm<f32>,
    pub vocab: &'a Vocab,
    pub data: &'a Path,
    pub templates: Option<&'a Path>,
    pub verbalizers: Option<&'a Path>,
    pub normalize: Normalize,
    pub out: &'a Path,
}

pub(crate) fn csv_sibling(out: &Path) -> PathBuf {
    out.with_extension("csv")
}

pub(crate) fn run_eval(input: &EvalInput<'_>) -> Result<ia1_core::EvalMetrics> {
    let templates = templates_or_builtin(input.templates)?;
    let verbalizers = verbalizers_or_builtin(input.verbalizers)?;
    let examples = load_eval_set(input.data, &verbalizers.label_set())?;
    let metrics = evaluate(
        input.model,
        input.vocab,
        &examples,
        &templates,
        &verbalizers,
        input.normalize,
    )?;
    metrics.write(input.out, &csv_sibling(input.out))?;
    Ok(metrics)
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let (model, vocab) = read_checkpoint(&args.model)?;
    let metrics = run_eval(&EvalInput {
        model: &model,
        vocab: &vocab,
        data: &args.data,
        templates: args.templates.as_deref(),
        verbalizers: args.verbalizers.as_deref(),
        normalize: normalize(args.normalize),
        out: &args.out,
    })?;
    println!(
        "{} templates; averaged accuracy {:.4}, weighted F1 {:.4}",
        metrics.per_template.len(),
        metrics.averaged.accuracy,
        metrics.averaged.weighted_f1
    );
    Ok(())
}

pub(crate) const DELTAS_FILE: &str = "deltas.csv";
pub(crate) const SMOOTHED_FILE: &str = "curves_smoothed.csv";

pub(crate) fn run_report(curves: &Path, metrics: &Path, baseline: &Path, window: usize, out_dir: &Path) -> Result<()> {
    let curve = LossCurve::read(curves)?;
    let read = |p: &Path| -> Result<ia1_core::EvalMetrics> {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        Ok(parse_metrics(&text)?)
    };
    let run = read(metrics)?;
    let base = read(baseline)?;
    create_dir(out_dir)?;
    write_file(&out_dir.join(DELTAS_FILE), to_csv(&language_deltas(&run, &base)?)?)?;
    write_file(&out_dir.join(SMOOTHED_FILE), to_csv(&smooth_curve(&curve, window)?)?)?;
    Ok(())
}

pub fn report(args: &ReportArgs) -> Result<()> {
    run_report(&args.curves, &args.metrics, &args.baseline, args.window, &args.out_dir)?;
    println!("wrote {DELTAS_FILE} and {SMOOTHED_FILE} to {}", args.out_dir.display());
    Ok(())
}

pub fn convert_old(args: &ConvertOldArgs) -> Result<()> {
    let ds = import_tsv(&args.tsv, lang(&args.lang)?)?;
    write_dataset(&ds, &args.out)?;
    println!("wrote {} replay records to {}", ds.len(), args.out.display());
    Ok(())
}

pub fn synth(args: &SynthArgs, seed: Option<u64>) -> Result<()> {
    let seed = seed.unwrap_or(0);
    let dir = &args.out_dir;
    create_dir(dir)?;
    let corpus = synthetic::cipher_corpus(args.pairs, seed)?;
    let src: String = corpus.pairs.iter().map(|p| format!("{}\n", p.src_text)).collect();
    let tgt: String = corpus.pairs.iter().map(|p| format!("{}\n", p.tgt_text)).collect();
    let src_name = format!("corpus.{}", corpus.src_lang);
    let tgt_name = format!("corpus.{}", corpus.tgt_lang);
    write_file(&dir.join(&src_name), src)?;
    write_file(&dir.join(&tgt_name), tgt)?;
    write_file(&dir.join("old.tsv"), synthetic::old_task_tsv(args.old, seed))?;
    let eval = synthetic::sentiment_set(args.eval, seed);
    write_file(&dir.join("eval.tsv"), ia1_core::eval::eval_set_to_tsv(&eval))?;
    write_file(&dir.join("templates.json"), synthetic::compact_templates_json())?;
    write_file(&dir.join("verbalizers.json"), Verbalizers::builtin_json())?;
    let config = crate::pipeline::demo_config(&src_name, &tgt_name, seed);
    write_file(&dir.join("config.json"), serde_json::to_string_pretty(&config)? + "\n")?;
    println!("wrote synthetic demo inputs and config.json to {}", dir.display());
    Ok(())
}

fn read_json_or_default<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(serde_json::from_str(&text).map_err(|e| ValidationError(format!("{}: {e}", p.display())))?)
        }
        None => Ok(T::default()),
    }
}

pub fn experiment(args: &ExperimentArgs, seed: Option<u64>) -> Result<()> {
    create_dir(&args.out_dir)?;
    match args.kind {
        ExperimentKind::Forgetting => {
            let mut cfg: ForgettingConfig = read_json_or_default(args.config.as_deref())?;
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            let report = run_forgetting(&cfg)?;
            write_file(
                &args.out_dir.join("forgetting.json"),
                serde_json::to_string_pretty(&report)? + "\n",
            )?;
            println!(
                "old-task loss r=0 {:.4}, r={} {:.4} ({:.1}% lower); new-task loss ratio {:.3}",
                report.mean_old_loss(false),
                report.replay_size,
                report.mean_old_loss(true),
                100.0 * report.old_loss_reduction(),
                report.new_loss_ratio()
            );
        }
        ExperimentKind::Ablation => {
            let mut cfg: AblationConfig = read_json_or_default(args.config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            for run in run_ablation(&cfg)? {
                let file = format!("curves_{}.csv", run.name.replace('+', "_"));
                run.curve.write(&args.out_dir.join(&file))?;
                println!(
                    "{:<6} final {ABLATION_VAL_TAG} validation loss {:.4} -> {file}",
                    run.name,
                    run.curve.last(ABLATION_VAL_TAG, "val").unwrap_or(f64::NAN)
                );
            }
        }
    }
    Ok(())
}
