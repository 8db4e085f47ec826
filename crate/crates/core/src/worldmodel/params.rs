//! Parameter storage for the recurrent state-space model.
//!
//! All trainable numbers live in one flat buffer; [`Tensor`] names a slice
//! of it. Gradients use the same layout, so the optimizer, the checkpoint
//! writer and the gradient checker all walk a single `Vec<f64>`.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{ACTION_DIM, OBS_DIM};
use crate::{math, rng, Error, Result};

/// Bounds of the stochastic code's log standard deviation.
pub const LOGSTD_MIN: f64 = -5.0;
pub const LOGSTD_MAX: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldModelDims {
    pub obs: usize,
    pub action: usize,
    /// Deterministic recurrent state size.
    pub hidden: usize,
    /// Stochastic code size.
    pub stoch: usize,
    /// Width of the hidden layer in the encoder, prior and decoder MLPs.
    pub mlp: usize,
}

impl Default for WorldModelDims {
    fn default() -> Self {
        WorldModelDims {
            obs: OBS_DIM,
            action: ACTION_DIM,
            hidden: 32,
            stoch: 8,
            mlp: 64,
        }
    }
}

impl WorldModelDims {
    /// Width of the concatenated latent `[h, z]`.
    pub fn latent(&self) -> usize {
        self.hidden + self.stoch
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub alpha_dyn: f64,
    pub alpha_rep: f64,
    pub alpha_pred: f64,
    /// Weight of the reconstruction from `[h_t, prior mean]`, which trains
    /// the prior on what the decoder needs.
    pub alpha_prior_pred: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha_dyn: 0.5,
            alpha_rep: 0.1,
            alpha_pred: 1.0,
            alpha_prior_pred: 3.0,
        }
    }
}

/// Named tensors of the model, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tensor {
    EncW1,
    EncB1,
    EncW2,
    EncB2,
    GruWx,
    GruBx,
    GruWh,
    GruBh,
    PriorW1,
    PriorB1,
    PriorW2,
    PriorB2,
    DecW1,
    DecB1,
    DecW2,
    DecB2,
}

impl Tensor {
    pub const ALL: [Tensor; 16] = [
        Tensor::EncW1,
        Tensor::EncB1,
        Tensor::EncW2,
        Tensor::EncB2,
        Tensor::GruWx,
        Tensor::GruBx,
        Tensor::GruWh,
        Tensor::GruBh,
        Tensor::PriorW1,
        Tensor::PriorB1,
        Tensor::PriorW2,
        Tensor::PriorB2,
        Tensor::DecW1,
        Tensor::DecB1,
        Tensor::DecW2,
        Tensor::DecB2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Tensor::EncW1 => "encoder.l1.weight",
            Tensor::EncB1 => "encoder.l1.bias",
            Tensor::EncW2 => "encoder.l2.weight",
            Tensor::EncB2 => "encoder.l2.bias",
            Tensor::GruWx => "gru.input.weight",
            Tensor::GruBx => "gru.input.bias",
            Tensor::GruWh => "gru.hidden.weight",
            Tensor::GruBh => "gru.hidden.bias",
            Tensor::PriorW1 => "prior.l1.weight",
            Tensor::PriorB1 => "prior.l1.bias",
            Tensor::PriorW2 => "prior.l2.weight",
            Tensor::PriorB2 => "prior.l2.bias",
            Tensor::DecW1 => "decoder.l1.weight",
            Tensor::DecB1 => "decoder.l1.bias",
            Tensor::DecW2 => "decoder.l2.weight",
            Tensor::DecB2 => "decoder.l2.bias",
        }
    }

    /// `(rows, cols)`; biases are `(rows, 1)`.
    pub fn shape(self, d: &WorldModelDims) -> (usize, usize) {
        let enc_in = d.obs + d.hidden;
        let gru_in = d.stoch + d.action;
        let dec_in = d.hidden + d.stoch;
        match self {
            Tensor::EncW1 => (d.mlp, enc_in),
            Tensor::EncB1 => (d.mlp, 1),
            Tensor::EncW2 => (2 * d.stoch, d.mlp),
            Tensor::EncB2 => (2 * d.stoch, 1),
            Tensor::GruWx => (3 * d.hidden, gru_in),
            Tensor::GruBx => (3 * d.hidden, 1),
            Tensor::GruWh => (3 * d.hidden, d.hidden),
            Tensor::GruBh => (3 * d.hidden, 1),
            Tensor::PriorW1 => (d.mlp, d.hidden),
            Tensor::PriorB1 => (d.mlp, 1),
            Tensor::PriorW2 => (2 * d.stoch, d.mlp),
            Tensor::PriorB2 => (2 * d.stoch, 1),
            Tensor::DecW1 => (d.mlp, dec_in),
            Tensor::DecB1 => (d.mlp, 1),
            Tensor::DecW2 => (d.obs, d.mlp),
            Tensor::DecB2 => (d.obs, 1),
        }
    }

    fn is_bias(self) -> bool {
        self.shape(&WorldModelDims::default()).1 == 1
    }
}

/// Offsets of every tensor inside the flat buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    offsets: [usize; 17],
}

impl Layout {
    pub fn new(d: &WorldModelDims) -> Self {
        let mut offsets = [0usize; 17];
        for (i, t) in Tensor::ALL.iter().enumerate() {
            let (r, c) = t.shape(d);
            offsets[i + 1] = offsets[i] + r * c;
        }
        Layout { offsets }
    }

    pub fn range(&self, t: Tensor) -> core::ops::Range<usize> {
        let i = t as usize;
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn total(&self) -> usize {
        self.offsets[16]
    }
}

/// Per-channel affine normalization for observations and actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub obs_mean: Vec<f64>,
    pub obs_std: Vec<f64>,
    pub act_mean: Vec<f64>,
    pub act_std: Vec<f64>,
}

/// Smallest standard deviation used for normalization.
pub const STD_FLOOR: f64 = 1e-3;

impl Normalizer {
    pub fn identity(d: &WorldModelDims) -> Self {
        Normalizer {
            obs_mean: vec![0.0; d.obs],
            obs_std: vec![1.0; d.obs],
            act_mean: vec![0.0; d.action],
            act_std: vec![1.0; d.action],
        }
    }

    /// Fit means and standard deviations over rows of observations and actions.
    pub fn fit<'a>(
        obs: impl Iterator<Item = &'a [f64]>,
        act: impl Iterator<Item = &'a [f64]>,
        d: &WorldModelDims,
    ) -> Self {
        let (obs_mean, obs_std) = moments(obs, d.obs);
        let (act_mean, act_std) = moments(act, d.action);
        Normalizer {
            obs_mean,
            obs_std,
            act_mean,
            act_std,
        }
    }

    pub fn norm_obs(&self, o: &[f64], out: &mut [f64]) {
        for i in 0..out.len() {
            out[i] = (o[i] - self.obs_mean[i]) / self.obs_std[i];
        }
    }

    pub fn denorm_obs(&self, o: &[f64], out: &mut [f64]) {
        for i in 0..out.len() {
            out[i] = o[i] * self.obs_std[i] + self.obs_mean[i];
        }
    }

    pub fn norm_act(&self, a: &[f64], out: &mut [f64]) {
        for i in 0..out.len() {
            out[i] = (a[i] - self.act_mean[i]) / self.act_std[i];
        }
    }
}

fn moments<'a>(rows: impl Iterator<Item = &'a [f64]>, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut n = 0usize;
    let mut sum = vec![0.0; dim];
    let mut sq = vec![0.0; dim];
    for r in rows {
        n += 1;
        for i in 0..dim {
            sum[i] += r[i];
            sq[i] += r[i] * r[i];
        }
    }
    if n == 0 {
        return (vec![0.0; dim], vec![1.0; dim]);
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
    let std = (0..dim)
        .map(|i| {
            let var = (sq[i] / n as f64 - mean[i] * mean[i]).max(0.0);
            math::sqrt(var).max(STD_FLOOR)
        })
        .collect();
    (mean, std)
}

/// Provenance carried into checkpoints.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub seed: u64,
    /// Hash of the training data (hex).
    pub data_hash: String,
    pub updates: usize,
}

/// Parameters of encoder, recurrent dynamics, prior head and decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldModelParams {
    pub dims: WorldModelDims,
    pub loss: LossWeights,
    pub norm: Normalizer,
    pub meta: TrainMeta,
    layout: Layout,
    values: Vec<f64>,
}

impl WorldModelParams {
    /// All-zero weights with identity normalization.
    pub fn zeros(dims: WorldModelDims) -> Self {
        let layout = Layout::new(&dims);
        WorldModelParams {
            dims,
            loss: LossWeights::default(),
            norm: Normalizer::identity(&dims),
            meta: TrainMeta::default(),
            values: vec![0.0; layout.total()],
            layout,
        }
    }

    /// Glorot-uniform weights scaled by `scale`, zero biases.
    pub fn init(dims: WorldModelDims, seed: u64, scale: f64) -> Self {
        let mut p = Self::zeros(dims);
        let mut r = rng::stream(seed, 0x1417);
        for t in Tensor::ALL {
            if t.is_bias() {
                continue;
            }
            let (rows, cols) = t.shape(&dims);
            let limit = scale * math::sqrt(6.0 / (rows + cols) as f64);
            for v in p.tensor_mut(t) {
                *v = r.random_range(-limit..limit);
            }
        }
        p
    }

    /// Rebuild from a flat buffer (checkpoint loading).
    pub fn from_values(
        dims: WorldModelDims,
        loss: LossWeights,
        norm: Normalizer,
        meta: TrainMeta,
        values: Vec<f64>,
    ) -> Result<Self> {
        let layout = Layout::new(&dims);
        if values.len() != layout.total() {
            return Err(Error::shape(alloc::format!(
                "expected {} parameters for {:?}, got {}",
                layout.total(),
                dims,
                values.len()
            )));
        }
        if norm.obs_mean.len() != dims.obs
            || norm.obs_std.len() != dims.obs
            || norm.act_mean.len() != dims.action
            || norm.act_std.len() != dims.action
        {
            return Err(Error::shape("normalizer dimensions"));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical("non-finite parameter".into()));
        }
        Ok(WorldModelParams {
            dims,
            loss,
            norm,
            meta,
            layout,
            values,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn tensor(&self, t: Tensor) -> &[f64] {
        &self.values[self.layout.range(t)]
    }

    pub fn tensor_mut(&mut self, t: Tensor) -> &mut [f64] {
        let r = self.layout.range(t);
        &mut self.values[r]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn num_params(&self) -> usize {
        self.values.len()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_contiguous() {
        let d = WorldModelDims::default();
        let l = Layout::new(&d);
        let mut expect = 0;
        for t in Tensor::ALL {
            let (r, c) = t.shape(&d);
            assert_eq!(l.range(t).start, expect);
            expect += r * c;
        }
        assert_eq!(l.total(), expect);
    }

    #[test]
    fn init_is_deterministic_and_finite() {
        let d = WorldModelDims::default();
        let a = WorldModelParams::init(d, 5, 1.0);
        let b = WorldModelParams::init(d, 5, 1.0);
        assert_eq!(a, b);
        assert!(a.is_finite());
        assert!(a.tensor(Tensor::EncB1).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn from_values_checks_length() {
        let d = WorldModelDims::default();
        let n = Normalizer::identity(&d);
        assert!(WorldModelParams::from_values(
            d,
            LossWeights::default(),
            n,
            TrainMeta::default(),
            vec![0.0; 3]
        )
        .is_err());
    }
}
