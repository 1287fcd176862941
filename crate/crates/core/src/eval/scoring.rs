use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::evalset::EvalExample;
use super::metrics::{metrics, Metrics};
use super::verbalizer::{Verbalizer, Verbalizers};
use crate::error::{Error, Result};
use crate::instruction::{render_classify, DisplayNames, PromptTemplate, Task, TemplateSet};
use crate::model::loss::nll;
use crate::model::vocab::{Encoded, Vocab, BOS, SEP};
use crate::model::TinyLm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalize {
    Sum,
    #[default]
    PerToken,
}

/// Log-likelihood of `surface` continuing `BOS prompt SEP`, summed over its
/// characters or averaged per character. No end-of-sequence term is added.
pub fn score_label(
    model: &TinyLm<f32>,
    prompt: &str,
    surface: &str,
    vocab: &Vocab,
    normalize: Normalize,
) -> Result<f64> {
    let n = surface.chars().count();
    if n == 0 {
        return Err(Error::EmptyText);
    }
    let mut ids = Vec::with_capacity(prompt.len() + n + 2);
    ids.push(BOS);
    ids.extend(prompt.chars().map(|c| vocab.id(c)));
    ids.push(SEP);
    let start = ids.len();
    ids.extend(surface.chars().map(|c| vocab.id(c)));
    let mut loss_mask = vec![0u8; ids.len()];
    loss_mask[start..].iter_mut().for_each(|m| *m = 1);
    let enc = Encoded { ids, loss_mask }.truncate_to(model.config.context)?;
    let logits = model.forward(&enc.ids)?;
    let v = model.config.vocab_size;
    let mut total = 0.0f64;
    let mut row = vec![0.0f64; v];
    for pos in 1..enc.ids.len() {
        if enc.loss_mask[pos] == 0 {
            continue;
        }
        for (r, &l) in row.iter_mut().zip(&logits[(pos - 1) * v..pos * v]) {
            *r = l as f64;
        }
        total -= nll(&row, enc.ids[pos]);
    }
    Ok(match normalize {
        Normalize::Sum => total,
        Normalize::PerToken => total / n as f64,
    })
}

/// Index of the largest score; the earliest wins ties.
pub fn argmax_first(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

pub fn label_scores(
    model: &TinyLm<f32>,
    prompt: &str,
    verb: &Verbalizer,
    vocab: &Vocab,
    normalize: Normalize,
) -> Result<Vec<f64>> {
    verb.entries()
        .iter()
        .map(|e| score_label(model, prompt, &e.surface, vocab, normalize))
        .collect()
}

pub fn classify(
    model: &TinyLm<f32>,
    ex: &EvalExample,
    tpl: &PromptTemplate,
    verb: &Verbalizer,
    names: &DisplayNames,
    vocab: &Vocab,
    normalize: Normalize,
) -> Result<String> {
    let prompt = render_classify(&ex.text, tpl, &ex.lang, names)?;
    let scores = label_scores(model, &prompt, verb, vocab, normalize)?;
    let best = argmax_first(&scores).expect("verbalizers are non-empty");
    Ok(verb.entries()[best].label.clone())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub per_template: BTreeMap<String, Metrics>,
    pub averaged: Metrics,
    /// Per-template metrics on each language's examples, averaged over
    /// templates.
    pub per_language: BTreeMap<String, Metrics>,
}

impl EvalMetrics {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Rows `scope,key,accuracy,weighted_f1` with scope `template`,
    /// `averaged` or `language`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scope,key,accuracy,weighted_f1\n");
        let mut row = |scope: &str, key: &str, m: &Metrics| {
            out.push_str(&format!("{scope},{key},{},{}\n", m.accuracy, m.weighted_f1));
        };
        for (k, m) in &self.per_template {
            row("template", k, m);
        }
        row("averaged", "all", &self.averaged);
        for (k, m) in &self.per_language {
            row("language", k, m);
        }
        out
    }

    pub fn write(&self, json_path: &Path, csv_path: &Path) -> Result<()> {
        std::fs::write(json_path, self.to_json()?).map_err(|e| Error::io(json_path, e))?;
        std::fs::write(csv_path, self.to_csv()).map_err(|e| Error::io(csv_path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemplatePredictions {
    pub template_id: String,
    pub predictions: Vec<String>,
}

/// Predictions of every classification template in `templates`, in file order.
pub fn predict_all(
    model: &TinyLm<f32>,
    vocab: &Vocab,
    examples: &[EvalExample],
    templates: &TemplateSet,
    verbalizers: &Verbalizers,
    normalize: Normalize,
) -> Result<Vec<TemplatePredictions>> {
    let tpls = templates.for_task(Task::Classification);
    if tpls.is_empty() {
        return Err(Error::NoTemplates);
    }
    if examples.is_empty() {
        return Err(Error::EmptyEvalSet);
    }
    tpls.into_iter()
        .map(|tpl| {
            let verb = verbalizers.get(&tpl.prompt_lang)?;
            let predictions = examples
                .par_iter()
                .map(|ex| classify(model, ex, tpl, verb, &templates.names, vocab, normalize))
                .collect::<Result<Vec<_>>>()?;
            Ok(TemplatePredictions {
                template_id: tpl.template_id.clone(),
                predictions,
            })
        })
        .collect()
}

/// Metrics from precomputed predictions.
pub fn summarize(examples: &[EvalExample], preds: &[TemplatePredictions], label_set: &[String]) -> Result<EvalMetrics> {
    if preds.is_empty() {
        return Err(Error::NoTemplates);
    }
    if examples.is_empty() {
        return Err(Error::EmptyEvalSet);
    }
    let golds: Vec<&str> = examples.iter().map(|e| e.gold_label.as_str()).collect();
    let mut per_template = BTreeMap::new();
    for tp in preds {
        let p: Vec<&str> = tp.predictions.iter().map(String::as_str).collect();
        per_template.insert(tp.template_id.clone(), metrics(&p, &golds, label_set)?);
    }
    let averaged = Metrics::mean(per_template.values()).expect("at least one template");

    let mut by_lang: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, e) in examples.iter().enumerate() {
        by_lang.entry(e.lang.to_string()).or_default().push(i);
    }
    let mut per_language = BTreeMap::new();
    for (lang, idx) in by_lang {
        let g: Vec<&str> = idx.iter().map(|&i| golds[i]).collect();
        let per: Vec<Metrics> = preds
            .iter()
            .map(|tp| {
                let p: Vec<&str> = idx.iter().map(|&i| tp.predictions[i].as_str()).collect();
                metrics(&p, &g, label_set)
            })
            .collect::<Result<_>>()?;
        per_language.insert(lang, Metrics::mean(&per).expect("at least one template"));
    }
    Ok(EvalMetrics {
        per_template,
        averaged,
        per_language,
    })
}

/// Zero-shot rank classification with every classification template; the
/// averaged score is the unweighted mean over templates.
pub fn evaluate(
    model: &TinyLm<f32>,
    vocab: &Vocab,
    examples: &[EvalExample],
    templates: &TemplateSet,
    verbalizers: &Verbalizers,
    normalize: Normalize,
) -> Result<EvalMetrics> {
    let preds = predict_all(model, vocab, examples, templates, verbalizers, normalize)?;
    summarize(examples, &preds, &verbalizers.label_set())
}
