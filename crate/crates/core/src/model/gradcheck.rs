//! Finite-difference verification of the analytic gradients.

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::tinylm::TinyLm;
use super::train::{batch_loss, batch_loss_and_grad};
use super::vocab::Encoded;
use crate::error::Result;
use crate::seed;

pub const DEFAULT_EPS: f64 = 1e-4;
pub const DEFAULT_SAMPLES: usize = 64;
const MIN_PER_TENSOR: usize = 3;

/// `|a − n| / max(1e-8, |a| + |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub indices: Vec<usize>,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

impl GradCheck {
    pub fn max_relative_error(&self) -> f64 {
        max_relative_error(&self.analytic, &self.numeric)
    }

    /// Name of the tensor holding the worst entry.
    pub fn worst(&self, model: &TinyLm<f64>) -> Option<(String, f64)> {
        let (i, err) = self
            .analytic
            .iter()
            .zip(&self.numeric)
            .map(|(&a, &n)| relative_error(a, n))
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1))?;
        let idx = self.indices[i];
        let name = model
            .layout
            .tensors
            .iter()
            .find(|t| t.range().contains(&idx))?
            .name
            .clone();
        Some((name, err))
    }
}

/// Picks parameters so that every tensor is represented, then fills up to
/// `count` uniformly from the rest.
pub fn sample_indices(model: &TinyLm<f64>, count: usize, seed: u64) -> Vec<usize> {
    let mut rng = seed::rng(seed);
    let mut picked = Vec::new();
    for t in &model.layout.tensors {
        let mut idx: Vec<usize> = t.range().collect();
        idx.shuffle(&mut rng);
        picked.extend(idx.into_iter().take(MIN_PER_TENSOR));
    }
    let total = model.layout.total;
    let mut guard = 0;
    while picked.len() < count && guard < 100 * count {
        let i = rng.gen_range(0..total);
        if !picked.contains(&i) {
            picked.push(i);
        }
        guard += 1;
    }
    picked.sort_unstable();
    picked
}

pub fn numeric_gradient(model: &TinyLm<f64>, batch: &[Encoded], index: usize, eps: f64) -> Result<f64> {
    let mut probe = model.clone();
    let orig = probe.params[index];
    probe.params[index] = orig + eps;
    let up = batch_loss(&probe, batch)?;
    probe.params[index] = orig - eps;
    let down = batch_loss(&probe, batch)?;
    Ok((up - down) / (2.0 * eps))
}

pub fn grad_check_with(model: &TinyLm<f64>, batch: &[Encoded], eps: f64, count: usize, seed: u64) -> Result<GradCheck> {
    let (_, grads) = batch_loss_and_grad(model, batch)?;
    let indices = sample_indices(model, count, seed);
    let analytic = indices.iter().map(|&i| grads[i]).collect();
    let numeric = indices
        .iter()
        .map(|&i| numeric_gradient(model, batch, i, eps))
        .collect::<Result<Vec<_>>>()?;
    Ok(GradCheck {
        indices,
        analytic,
        numeric,
    })
}

/// Maximum relative error between analytic and central-difference gradients
/// over a sample of at least 50 parameters.
pub fn grad_check(model: &TinyLm<f64>, batch: &[Encoded], eps: f64) -> Result<f64> {
    Ok(grad_check_with(model, batch, eps, DEFAULT_SAMPLES, 0)?.max_relative_error())
}
