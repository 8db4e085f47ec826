//! Inference: encoding observations, open-loop imagination, decoding.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::net::{self, DECODER, ENCODER, PRIOR};
use super::params::WorldModelParams;
use crate::env::{Action, Observation, OBS_DIM};
use crate::{math, rng, Error, Result};

/// Imagined states are kept every `DOWNSAMPLE_STRIDE` steps.
pub const DOWNSAMPLE_STRIDE: usize = 4;

/// How to draw the stochastic code from its Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Use the mean (deployment default).
    Mean,
    /// Reparameterized draw from the given seed.
    Sample(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentState {
    pub h: Vec<f64>,
    pub z: Vec<f64>,
    pub z_mean: Vec<f64>,
    pub z_logstd: Vec<f64>,
}

impl LatentState {
    /// `[h, z]`, the representation handed to downstream consumers.
    pub fn concat(&self) -> Vec<f64> {
        let mut v = self.h.clone();
        v.extend_from_slice(&self.z);
        v
    }

    pub fn is_finite(&self) -> bool {
        self.h
            .iter()
            .chain(&self.z)
            .chain(&self.z_mean)
            .chain(&self.z_logstd)
            .all(|v| v.is_finite())
    }
}

/// Open-loop latent future of one candidate plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentRollout {
    /// One state per plan step (state after applying action `i`).
    pub states: Vec<LatentState>,
    /// `states[4 * (i + 1) - 1]` for each `i`.
    pub downsampled: Vec<LatentState>,
    pub plan_index: usize,
}

impl LatentRollout {
    pub fn with_index(mut self, plan_index: usize) -> Self {
        self.plan_index = plan_index;
        self
    }
}

fn draw(mean: &[f64], logstd: &[f64], sampling: Sampling, stream: u64) -> Vec<f64> {
    match sampling {
        Sampling::Mean => mean.to_vec(),
        Sampling::Sample(seed) => {
            let mut r = rng::stream(seed, stream);
            mean.iter()
                .zip(logstd)
                .map(|(m, ls)| m + math::exp(*ls) * rng::normal(&mut r))
                .collect()
        }
    }
}

fn posterior(params: &WorldModelParams, obs: &Observation, h: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d = &params.dims;
    let mut x = vec![0.0; d.obs + d.hidden];
    params.norm.norm_obs(&obs.0, &mut x[..d.obs]);
    x[d.obs..].copy_from_slice(h);
    let c = net::mlp_forward(params, ENCODER, x);
    net::gaussian_head(&c.out, d.stoch)
}

fn recur(params: &WorldModelParams, h: &[f64], z: &[f64], action: &Action) -> Vec<f64> {
    let d = &params.dims;
    let mut x = vec![0.0; d.stoch + d.action];
    x[..d.stoch].copy_from_slice(z);
    params
        .norm
        .norm_act(&action.to_array(), &mut x[d.stoch..]);
    net::gru_forward(params, h, x).h
}

fn check_obs_dims(params: &WorldModelParams) -> Result<()> {
    if params.dims.obs != OBS_DIM {
        return Err(Error::shape(format!(
            "model observation size {} differs from {OBS_DIM}",
            params.dims.obs
        )));
    }
    Ok(())
}

/// Encode the first observation of a window: `h = 0`, `z` from the posterior.
pub fn encode_init(
    params: &WorldModelParams,
    obs: &Observation,
    sampling: Sampling,
) -> Result<LatentState> {
    check_obs_dims(params)?;
    let h = vec![0.0; params.dims.hidden];
    let (z_mean, z_logstd) = posterior(params, obs, &h);
    let z = draw(&z_mean, &z_logstd, sampling, 0);
    Ok(LatentState {
        h,
        z,
        z_mean,
        z_logstd,
    })
}

/// Filter one step: advance `h` with the previous code and action, then
/// condition the code on the new observation.
pub fn encode_step(
    params: &WorldModelParams,
    obs: &Observation,
    prev: &LatentState,
    prev_action: &Action,
    sampling: Sampling,
) -> Result<LatentState> {
    check_obs_dims(params)?;
    let d = &params.dims;
    if prev.h.len() != d.hidden || prev.z.len() != d.stoch {
        return Err(Error::shape(format!(
            "latent state ({}, {}) does not match model ({}, {})",
            prev.h.len(),
            prev.z.len(),
            d.hidden,
            d.stoch
        )));
    }
    let h = recur(params, &prev.h, &prev.z, prev_action);
    let (z_mean, z_logstd) = posterior(params, obs, &h);
    let z = draw(&z_mean, &z_logstd, sampling, 1);
    Ok(LatentState {
        h,
        z,
        z_mean,
        z_logstd,
    })
}

/// Roll the prior forward through `plan` without observations.
pub fn imagine(
    params: &WorldModelParams,
    init: &LatentState,
    plan: &[Action],
    sampling: Sampling,
) -> Result<LatentRollout> {
    let d = &params.dims;
    if init.h.len() != d.hidden || init.z.len() != d.stoch {
        return Err(Error::shape("initial latent state does not match model"));
    }
    if plan.is_empty() {
        return Err(Error::Empty("imagine: empty plan"));
    }
    let mut states = Vec::with_capacity(plan.len());
    let mut h = init.h.clone();
    let mut z = init.z.clone();
    for (t, a) in plan.iter().enumerate() {
        h = recur(params, &h, &z, a);
        let c = net::mlp_forward(params, PRIOR, h.clone());
        let (z_mean, z_logstd) = net::gaussian_head(&c.out, d.stoch);
        let sampling_t = match sampling {
            Sampling::Mean => Sampling::Mean,
            Sampling::Sample(s) => Sampling::Sample(rng::derive_seed(s, t as u64)),
        };
        z = draw(&z_mean, &z_logstd, sampling_t, 2);
        states.push(LatentState {
            h: h.clone(),
            z: z.clone(),
            z_mean,
            z_logstd,
        });
    }
    let downsampled = downsample(&states);
    Ok(LatentRollout {
        states,
        downsampled,
        plan_index: 0,
    })
}

/// Every `DOWNSAMPLE_STRIDE`-th state, ending on the last full stride.
pub fn downsample<T: Clone>(states: &[T]) -> Vec<T> {
    (1..=states.len() / DOWNSAMPLE_STRIDE)
        .map(|i| states[DOWNSAMPLE_STRIDE * i - 1].clone())
        .collect()
}

/// Decode a latent state to an observation estimate.
pub fn decode(params: &WorldModelParams, state: &LatentState) -> Observation {
    let d = &params.dims;
    let mut x = vec![0.0; d.hidden + d.stoch];
    x[..d.hidden].copy_from_slice(&state.h);
    x[d.hidden..].copy_from_slice(&state.z);
    let c = net::mlp_forward(params, DECODER, x);
    let mut o = [0.0; OBS_DIM];
    params.norm.denorm_obs(&c.out, &mut o[..d.obs.min(OBS_DIM)]);
    Observation(o)
}

/// Decode the downsampled states of a rollout.
pub fn decode_rollout(params: &WorldModelParams, rollout: &LatentRollout) -> Vec<Observation> {
    rollout
        .downsampled
        .iter()
        .map(|s| decode(params, s))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{observe, TaskId, WorldState, PLAN_HORIZON};
    use crate::worldmodel::params::{Tensor, WorldModelDims};

    fn model() -> WorldModelParams {
        WorldModelParams::init(WorldModelDims::default(), 3, 1.0)
    }

    #[test]
    fn zero_weights_give_bias_vectors() {
        let mut p = WorldModelParams::zeros(WorldModelDims::default());
        for (i, v) in p.tensor_mut(Tensor::EncB2).iter_mut().enumerate() {
            *v = i as f64 * 0.1;
        }
        for (i, v) in p.tensor_mut(Tensor::DecB2).iter_mut().enumerate() {
            *v = 1.0 + i as f64;
        }
        let s = encode_init(&p, &Observation::zeros(), Sampling::Mean).unwrap();
        let expect: Vec<f64> = (0..8).map(|i| i as f64 * 0.1).collect();
        assert_eq!(s.z_mean, expect);
        let o = decode(&p, &s);
        let expect: Vec<f64> = (0..10).map(|i| 1.0 + i as f64).collect();
        assert_eq!(o.0.to_vec(), expect);
    }

    #[test]
    fn encode_is_deterministic() {
        let p = model();
        let o = observe(&WorldState::canonical(TaskId::Cup));
        assert_eq!(
            encode_init(&p, &o, Sampling::Sample(4)).unwrap(),
            encode_init(&p, &o, Sampling::Sample(4)).unwrap()
        );
        let m = encode_init(&p, &o, Sampling::Mean).unwrap();
        assert_eq!(m.z, m.z_mean);
    }

    #[test]
    fn encode_step_mean_mode_and_shape_errors() {
        let p = model();
        let o = observe(&WorldState::canonical(TaskId::Cup));
        let s0 = encode_init(&p, &o, Sampling::Mean).unwrap();
        let s1 = encode_step(&p, &o, &s0, &Action::new(0.0, 0.0, 1.0), Sampling::Mean).unwrap();
        assert_eq!(s1.z, s1.z_mean);
        assert!(s1.z_logstd.iter().all(|v| (-5.0..=2.0).contains(v)));
        let mut bad = s0.clone();
        bad.h.pop();
        assert!(matches!(
            encode_step(&p, &o, &bad, &Action::new(0.0, 0.0, 1.0), Sampling::Mean),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn imagine_lengths_and_downsample_identity() {
        let p = model();
        let o = observe(&WorldState::canonical(TaskId::Cup));
        let s0 = encode_init(&p, &o, Sampling::Mean).unwrap();
        let plan = vec![Action::new(0.01, -0.01, 1.0); PLAN_HORIZON];
        let r = imagine(&p, &s0, &plan, Sampling::Mean).unwrap();
        assert_eq!(r.states.len(), 64);
        assert_eq!(r.downsampled.len(), 16);
        for (i, s) in r.downsampled.iter().enumerate() {
            assert_eq!(s, &r.states[4 * (i + 1) - 1]);
        }
        assert_eq!(r, imagine(&p, &s0, &plan, Sampling::Mean).unwrap());
        assert_ne!(r, imagine(&p, &s0, &plan, Sampling::Sample(1)).unwrap());
    }
}
