//! Latent success classifier baseline: logistic regression over pooled
//! imagined latents. It sees no task description, so its labels bind it to
//! the task it was trained under.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::worldmodel::LatentRollout;
use crate::{math, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub learning_rate: f64,
    pub l2: f64,
    pub epochs: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            learning_rate: 0.5,
            l2: 1e-3,
            epochs: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub weights: Vec<f64>,
    pub bias: f64,
}

/// `[mean of downsampled [h, z], last downsampled [h, z]]`.
pub fn pooled_features(rollout: &LatentRollout) -> Result<Vec<f64>> {
    let states = if rollout.downsampled.is_empty() {
        &rollout.states
    } else {
        &rollout.downsampled
    };
    let last = states.last().ok_or(Error::Empty("classifier: empty rollout"))?;
    let width = last.h.len() + last.z.len();
    let mut out = vec![0.0; 2 * width];
    for s in states {
        for (o, v) in out.iter_mut().zip(s.concat()) {
            *o += v / states.len() as f64;
        }
    }
    out[width..].copy_from_slice(&last.concat());
    Ok(out)
}

fn logit(p: &ClassifierParams, x: &[f64]) -> f64 {
    let mut s = p.bias;
    for i in 0..x.len() {
        s += p.weights[i] * (x[i] - p.mean[i]) / p.std[i];
    }
    s
}

/// Fit by full-batch gradient descent on the L2-regularized log loss.
pub fn train_latent_classifier(
    dataset: &[(LatentRollout, bool)],
    config: &ClassifierConfig,
) -> Result<ClassifierParams> {
    if dataset.is_empty() {
        return Err(Error::Empty("classifier: empty dataset"));
    }
    let n_pos = dataset.iter().filter(|(_, y)| *y).count();
    if n_pos == 0 || n_pos == dataset.len() {
        return Err(Error::config("classifier: labels contain a single class"));
    }
    let xs: Vec<Vec<f64>> = dataset
        .iter()
        .map(|(r, _)| pooled_features(r))
        .collect::<Result<_>>()?;
    let dim = xs[0].len();
    if xs.iter().any(|x| x.len() != dim) {
        return Err(Error::shape("classifier: rollouts of different latent sizes"));
    }
    let n = xs.len() as f64;
    let mut mean = vec![0.0; dim];
    for x in &xs {
        for i in 0..dim {
            mean[i] += x[i] / n;
        }
    }
    let mut std = vec![0.0; dim];
    for x in &xs {
        for i in 0..dim {
            std[i] += (x[i] - mean[i]) * (x[i] - mean[i]) / n;
        }
    }
    for s in std.iter_mut() {
        *s = math::sqrt(*s).max(1e-6);
    }
    let mut p = ClassifierParams {
        mean,
        std,
        weights: vec![0.0; dim],
        bias: 0.0,
    };
    let mut gw = vec![0.0; dim];
    for _ in 0..config.epochs {
        gw.iter_mut().for_each(|g| *g = 0.0);
        let mut gb = 0.0;
        for (x, (_, y)) in xs.iter().zip(dataset) {
            let e = math::sigmoid(logit(&p, x)) - if *y { 1.0 } else { 0.0 };
            for i in 0..dim {
                gw[i] += e * (x[i] - p.mean[i]) / p.std[i] / n;
            }
            gb += e / n;
        }
        for i in 0..dim {
            p.weights[i] -= config.learning_rate * (gw[i] + config.l2 * p.weights[i]);
        }
        p.bias -= config.learning_rate * gb;
    }
    if !p.weights.iter().all(|w| w.is_finite()) || !p.bias.is_finite() {
        return Err(Error::Numerical("classifier weights diverged".into()));
    }
    Ok(p)
}

/// Probability of success.
pub fn classify(params: &ClassifierParams, rollout: &LatentRollout) -> Result<f64> {
    let x = pooled_features(rollout)?;
    if x.len() != params.weights.len() {
        return Err(Error::shape("classifier: latent size differs from training"));
    }
    Ok(math::sigmoid(logit(params, &x)))
}
