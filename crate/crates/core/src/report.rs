//! Plot-ready summaries: per-language deltas against a baseline evaluation
//! and smoothed loss curves.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::{EvalMetrics, Metrics};
use crate::model::LossCurve;

/// Parses an evaluation report, reporting missing or malformed fields as
/// schema violations.
pub fn parse_metrics(text: &str) -> Result<EvalMetrics> {
    serde_json::from_str(text).map_err(|e| Error::SchemaViolation {
        line: e.line(),
        message: e.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaRow {
    pub language: String,
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub baseline_accuracy: f64,
    pub baseline_weighted_f1: f64,
    pub delta_accuracy: f64,
    pub delta_weighted_f1: f64,
}

fn delta(language: &str, run: &Metrics, base: &Metrics) -> DeltaRow {
    DeltaRow {
        language: language.to_string(),
        accuracy: run.accuracy,
        weighted_f1: run.weighted_f1,
        baseline_accuracy: base.accuracy,
        baseline_weighted_f1: base.weighted_f1,
        delta_accuracy: run.accuracy - base.accuracy,
        delta_weighted_f1: run.weighted_f1 - base.weighted_f1,
    }
}

/// One row per language of `run`, then an `all` row for the averaged scores.
pub fn language_deltas(run: &EvalMetrics, baseline: &EvalMetrics) -> Result<Vec<DeltaRow>> {
    let mut rows = Vec::with_capacity(run.per_language.len() + 1);
    for (lang, m) in &run.per_language {
        let base = baseline
            .per_language
            .get(lang)
            .ok_or_else(|| Error::Invalid(format!("baseline has no results for language {lang}")))?;
        rows.push(delta(lang, m, base));
    }
    rows.push(delta("all", &run.averaged, &baseline.averaged));
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmoothedRow {
    pub step: usize,
    pub tag: String,
    pub split: String,
    pub loss: f64,
    pub smoothed: f64,
}

/// Trailing moving average over the last `window` points of each
/// `(tag, split)` series. Series appear in the order of first occurrence.
pub fn smooth_curve(curve: &LossCurve, window: usize) -> Result<Vec<SmoothedRow>> {
    if window == 0 {
        return Err(Error::Invalid("smoothing window must be positive".into()));
    }
    let mut order: Vec<(String, String)> = Vec::new();
    let mut series: BTreeMap<(String, String), Vec<(usize, f64)>> = BTreeMap::new();
    for r in &curve.rows {
        let key = (r.tag.clone(), r.split.clone());
        if !series.contains_key(&key) {
            order.push(key.clone());
        }
        series.entry(key).or_default().push((r.step, r.loss));
    }
    let mut out = Vec::with_capacity(curve.rows.len());
    for key in order {
        let points = &series[&key];
        let mut sum = 0.0;
        for (i, &(step, loss)) in points.iter().enumerate() {
            sum += loss;
            if i >= window {
                sum -= points[i - window].1;
            }
            let n = (i + 1).min(window);
            out.push(SmoothedRow {
                step,
                tag: key.0.clone(),
                split: key.1.clone(),
                loss,
                smoothed: sum / n as f64,
            });
        }
    }
    Ok(out)
}

pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metrics(a: f64) -> Metrics {
        Metrics {
            accuracy: a,
            weighted_f1: a / 2.0,
        }
    }

    fn report(a: f64) -> EvalMetrics {
        EvalMetrics {
            per_template: BTreeMap::from([("t".to_string(), metrics(a))]),
            averaged: metrics(a),
            per_language: BTreeMap::from([("jav".to_string(), metrics(a)), ("sun".to_string(), metrics(a + 0.1))]),
        }
    }

    #[test]
    fn equal_reports_have_zero_delta() {
        let rows = language_deltas(&report(0.5), &report(0.5)).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows
            .iter()
            .all(|r| r.delta_accuracy == 0.0 && r.delta_weighted_f1 == 0.0));
        let rows = language_deltas(&report(0.75), &report(0.5)).unwrap();
        assert_eq!(rows[0].delta_accuracy, 0.25);
        assert_eq!(rows[2].language, "all");
    }

    #[test]
    fn missing_field_is_schema_violation() {
        let mut v: serde_json::Value = serde_json::to_value(report(0.5)).unwrap();
        v.as_object_mut().unwrap().remove("averaged");
        assert!(matches!(
            parse_metrics(&v.to_string()),
            Err(Error::SchemaViolation { .. })
        ));
        assert_eq!(parse_metrics(&report(0.5).to_json().unwrap()).unwrap(), report(0.5));
    }

    #[test]
    fn smoothing_per_series() {
        let mut c = LossCurve::default();
        for s in 0..4 {
            c.push(s, "all", "train", s as f64);
            c.push(s, "old", "val", 10.0);
        }
        let rows = smooth_curve(&c, 2).unwrap();
        assert_eq!(rows.len(), 8);
        let train: Vec<f64> = rows.iter().filter(|r| r.tag == "all").map(|r| r.smoothed).collect();
        assert_eq!(train, [0.0, 0.5, 1.5, 2.5]);
        assert!(rows.iter().filter(|r| r.tag == "old").all(|r| r.smoothed == 10.0));
        let tags: std::collections::BTreeSet<_> = rows.iter().map(|r| r.tag.as_str()).collect();
        assert_eq!(tags.len(), 2);
        assert!(to_csv(&rows).unwrap().starts_with("step,tag,split,loss,smoothed\n"));
    }
}
