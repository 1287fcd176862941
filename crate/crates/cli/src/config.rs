//! Pipeline configuration. Relative paths are resolved against the directory
//! of the config file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use ia1_core::eval::Normalize;
use ia1_core::instruction::{Direction, Task};
use ia1_core::model::TrainConfig;
use ia1_core::{Interleave, LanguageTag};
use serde::{Deserialize, Serialize};

use crate::ValidationError;

pub const CONFIG_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub src: PathBuf,
    pub tgt: PathBuf,
    pub src_lang: LanguageTag,
    pub tgt_lang: LanguageTag,
    /// Share of pairs held out as validation data.
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
}

fn default_val_fraction() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    pub tasks: Vec<Task>,
    /// Template file; the built-in set when absent.
    #[serde(default)]
    pub templates: Option<PathBuf>,
    #[serde(default)]
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayConfig {
    /// Past instruction data: a dataset file, or a `.tsv` of
    /// `input<TAB>target` lines.
    #[serde(default)]
    pub old_data: Option<PathBuf>,
    #[serde(default = "default_old_lang")]
    pub old_lang: LanguageTag,
    #[serde(default)]
    pub size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub interleave: Interleave,
}

fn default_old_lang() -> LanguageTag {
    "eng".parse().expect("valid tag")
}

fn default_epochs() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub data: PathBuf,
    #[serde(default)]
    pub templates: Option<PathBuf>,
    #[serde(default)]
    pub verbalizers: Option<PathBuf>,
    #[serde(default)]
    pub normalize: Normalize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: String,
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub generate: GenerateConfig,
    pub replay: ReplayConfig,
    #[serde(default)]
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub out_dir: PathBuf,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| ValidationError(format!("config: {e}")))?;
        Ok(cfg)
    }

    /// Reads a config and makes its paths absolute relative to `path`.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ValidationError(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        self.corpus.src = resolve(base, &self.corpus.src);
        self.corpus.tgt = resolve(base, &self.corpus.tgt);
        for p in [
            &mut self.generate.templates,
            &mut self.replay.old_data,
            &mut self.eval.templates,
            &mut self.eval.verbalizers,
        ]
        .into_iter()
        .flatten()
        {
            *p = resolve(base, p);
        }
        self.eval.data = resolve(base, &self.eval.data);
        self.out_dir = resolve(base, &self.out_dir);
    }

    /// Every input file the run reads.
    pub fn input_files(&self) -> Vec<(&'static str, &Path)> {
        let mut files = vec![
            ("corpus.src", self.corpus.src.as_path()),
            ("corpus.tgt", self.corpus.tgt.as_path()),
        ];
        if let Some(p) = &self.generate.templates {
            files.push(("generate.templates", p));
        }
        if let Some(p) = &self.replay.old_data {
            files.push(("replay.old_data", p));
        }
        files.push(("eval.data", &self.eval.data));
        if let Some(p) = &self.eval.templates {
            files.push(("eval.templates", p));
        }
        if let Some(p) = &self.eval.verbalizers {
            files.push(("eval.verbalizers", p));
        }
        files
    }

    /// Checks everything that can be checked without running a stage.
    pub fn validate(&self) -> anyhow::Result<()> {
        if self.version != CONFIG_VERSION {
            bail!(ValidationError(format!(
                "unsupported config version {:?} (expected {CONFIG_VERSION:?})",
                self.version
            )));
        }
        for (name, p) in self.input_files() {
            if !p.is_file() {
                bail!(ValidationError(format!("{name}: file not found: {}", p.display())));
            }
        }
        if !(self.corpus.val_fraction > 0.0 && self.corpus.val_fraction < 1.0) {
            bail!(ValidationError(format!(
                "corpus.val_fraction must be in (0, 1), got {}",
                self.corpus.val_fraction
            )));
        }
        if self.generate.tasks.is_empty() || self.generate.tasks.iter().any(|t| !t.is_generation()) {
            bail!(ValidationError(
                "generate.tasks must list generation tasks (word, span, mt, mono)".into()
            ));
        }
        if self.replay.size > 0 && self.replay.old_data.is_none() {
            bail!(ValidationError("replay.size > 0 needs replay.old_data".into()));
        }
        if self.replay.epochs == 0 {
            bail!(ValidationError("replay.epochs must be at least 1".into()));
        }
        if !self.train.batch_size.is_multiple_of(2) {
            bail!(ValidationError(format!(
                "train.batch_size must be even, got {}",
                self.train.batch_size
            )));
        }
        self.train.validate().context("train")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "version": "1",
        "seed": 3,
        "corpus": {"src": "a.eng", "tgt": "a.jav", "src_lang": "eng", "tgt_lang": "jav"},
        "generate": {"tasks": ["word", "mt"]},
        "replay": {},
        "eval": {"data": "eval.tsv"},
        "out_dir": "run"
    }"#;

    #[test]
    fn defaults_and_paths() {
        let mut cfg = RunConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.corpus.val_fraction, 0.1);
        assert_eq!(cfg.replay.epochs, 1);
        assert_eq!(cfg.train, TrainConfig::default());
        cfg.resolve_paths(Path::new("/data"));
        assert_eq!(cfg.corpus.src, Path::new("/data/a.eng"));
        assert_eq!(cfg.out_dir, Path::new("/data/run"));
    }

    #[test]
    fn unknown_fields_rejected() {
        let bad = MINIMAL.replace("\"seed\": 3,", "\"seed\": 3, \"sede\": 4,");
        assert!(RunConfig::from_json(&bad).is_err());
    }

    #[test]
    fn missing_files_fail_validation() {
        let mut cfg = RunConfig::from_json(MINIMAL).unwrap();
        cfg.resolve_paths(Path::new("/nonexistent"));
        let err = cfg.validate().unwrap_err();
        assert!(err.downcast_ref::<ValidationError>().is_some());
    }
}
