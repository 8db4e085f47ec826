//! Training by backpropagation through time.
//!
//! For a window of observations `o_0..o_{L-1}` and actions `a_0..a_{L-1}`:
//!
//! ```text
//! h_0 = 0
//! h_t = GRU(h_{t-1}, [z_{t-1}, a_{t-1}])        t >= 1
//! q_t = N(enc([o_t, h_t]))                     posterior
//! p_t = N(prior(h_t))                          t >= 1
//! z_t = mean(q_t) + std(q_t) * eps_t
//! L_pred = mean_t |dec([h_t, z_t]) - o_t|^2
//! L_prior_pred = mean_{t>=1} |dec([h_t, mean(p_t)]) - o_t|^2
//! L_dyn  = mean_{t>=1} KL(sg(q_t) || p_t)
//! L_rep  = mean_{t>=1} KL(q_t || sg(p_t))
//! L = a_dyn L_dyn + a_rep L_rep + a_pred L_pred + a_prior_pred L_prior_pred
//! ```
//!
//! Observations and actions are normalized with the model's [`Normalizer`].

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::net::{self, GruCache, MlpCache, DECODER, ENCODER, PRIOR};
use super::params::{LossWeights, Normalizer, WorldModelDims, WorldModelParams};
use crate::env::{EpisodeRecord, EpisodeSource};
use crate::{math, rng, Error, Result};

/// One normalized training window with its reparameterization noise.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub obs: Vec<Vec<f64>>,
    pub act: Vec<Vec<f64>>,
    pub eps: Vec<Vec<f64>>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }
}

/// Loss components averaged over the batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub pred: f64,
    pub dyn_kl: f64,
    pub rep_kl: f64,
    pub prior_pred: f64,
}

impl LossTerms {
    fn finish(&mut self, w: &LossWeights) {
        self.total = w.alpha_pred * self.pred
            + w.alpha_dyn * self.dyn_kl
            + w.alpha_rep * self.rep_kl
            + w.alpha_prior_pred * self.prior_pred;
    }
}

struct StepCache {
    gru: Option<GruCache>,
    prior: Option<MlpCache>,
    prior_dec: Option<MlpCache>,
    enc: MlpCache,
    dec: MlpCache,
    qm: Vec<f64>,
    qls: Vec<f64>,
    pm: Vec<f64>,
    pls: Vec<f64>,
    z: Vec<f64>,
}

fn forward_sequence(p: &WorldModelParams, seq: &Sequence) -> Vec<StepCache> {
    let d = &p.dims;
    let mut steps: Vec<StepCache> = Vec::with_capacity(seq.len());
    let mut h = vec![0.0; d.hidden];
    for t in 0..seq.len() {
        let (gru, prior) = if t > 0 {
            let prev = &steps[t - 1];
            let mut x = Vec::with_capacity(d.stoch + d.action);
            x.extend_from_slice(&prev.z);
            x.extend_from_slice(&seq.act[t - 1]);
            let g = net::gru_forward(p, &h, x);
            h = g.h.clone();
            let pr = net::mlp_forward(p, PRIOR, h.clone());
            (Some(g), Some(pr))
        } else {
            (None, None)
        };
        let mut ex = Vec::with_capacity(d.obs + d.hidden);
        ex.extend_from_slice(&seq.obs[t]);
        ex.extend_from_slice(&h);
        let enc = net::mlp_forward(p, ENCODER, ex);
        let (qm, qls) = net::gaussian_head(&enc.out, d.stoch);
        let (pm, pls) = match &prior {
            Some(pr) => net::gaussian_head(&pr.out, d.stoch),
            None => (Vec::new(), Vec::new()),
        };
        let z: Vec<f64> = (0..d.stoch)
            .map(|i| qm[i] + math::exp(qls[i]) * seq.eps[t][i])
            .collect();
        let mut dx = Vec::with_capacity(d.hidden + d.stoch);
        dx.extend_from_slice(&h);
        dx.extend_from_slice(&z);
        let dec = net::mlp_forward(p, DECODER, dx);
        let prior_dec = if prior.is_some() && p.loss.alpha_prior_pred != 0.0 {
            let mut x = Vec::with_capacity(d.hidden + d.stoch);
            x.extend_from_slice(&h);
            x.extend_from_slice(&pm);
            Some(net::mlp_forward(p, DECODER, x))
        } else {
            None
        };
        steps.push(StepCache {
            gru,
            prior,
            prior_dec,
            enc,
            dec,
            qm,
            qls,
            pm,
            pls,
            z,
        });
    }
    steps
}

fn check_batch(p: &WorldModelParams, batch: &[Sequence]) -> Result<()> {
    let d = &p.dims;
    if batch.is_empty() {
        return Err(Error::Empty("training batch"));
    }
    for s in batch {
        if s.len() < 2 || s.act.len() != s.len() || s.eps.len() != s.len() {
            return Err(Error::shape("sequence needs >= 2 aligned steps"));
        }
        let ok = s.obs.iter().all(|o| o.len() == d.obs)
            && s.act.iter().all(|a| a.len() == d.action)
            && s.eps.iter().all(|e| e.len() == d.stoch);
        if !ok {
            return Err(Error::shape("sequence row widths do not match model dims"));
        }
    }
    Ok(())
}

fn normalizers(batch: &[Sequence]) -> (f64, f64) {
    let n_pred: usize = batch.iter().map(|s| s.len()).sum();
    let n_kl: usize = batch.iter().map(|s| s.len() - 1).sum();
    (1.0 / n_pred as f64, 1.0 / n_kl.max(1) as f64)
}

fn sq_err(out: &[f64], target: &[f64]) -> f64 {
    out.iter().zip(target).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Loss and its gradient (same layout as the parameter buffer), with the
/// stop-gradients of the KL balancing applied.
pub fn loss_and_grad(p: &WorldModelParams, batch: &[Sequence]) -> Result<(LossTerms, Vec<f64>)> {
    check_batch(p, batch)?;
    let d = p.dims;
    let w = p.loss;
    let (c_pred, c_kl) = normalizers(batch);
    let mut grads = vec![0.0; p.num_params()];
    let mut terms = LossTerms::default();

    for seq in batch {
        let steps = forward_sequence(p, seq);
        let len = steps.len();
        let mut dh_next = vec![0.0; d.hidden];
        let mut dz_next = vec![0.0; d.stoch];
        for t in (0..len).rev() {
            let s = &steps[t];
            // reconstruction
            let mut dout = vec![0.0; d.obs];
            for i in 0..d.obs {
                let e = s.dec.out[i] - seq.obs[t][i];
                terms.pred += e * e * c_pred;
                dout[i] = 2.0 * w.alpha_pred * c_pred * e;
            }
            let mut d_dec_in = vec![0.0; d.hidden + d.stoch];
            net::mlp_backward(p, &mut grads, DECODER, &s.dec, &dout, &mut d_dec_in);
            let mut dh = dh_next.clone();
            for i in 0..d.hidden {
                dh[i] += d_dec_in[i];
            }
            let mut dz = dz_next.clone();
            for i in 0..d.stoch {
                dz[i] += d_dec_in[d.hidden + i];
            }
            // z = qm + exp(qls) eps
            let mut dqm = dz.clone();
            let mut dqls: Vec<f64> = (0..d.stoch)
                .map(|i| dz[i] * math::exp(s.qls[i]) * seq.eps[t][i])
                .collect();
            if t > 0 {
                let kl = net::gaussian_kl(&s.qm, &s.qls, &s.pm, &s.pls);
                terms.dyn_kl += kl * c_kl;
                terms.rep_kl += kl * c_kl;
                let mut dpm = vec![0.0; d.stoch];
                let mut dpls = vec![0.0; d.stoch];
                for i in 0..d.stoch {
                    let pv = math::exp(2.0 * s.pls[i]);
                    let qv = math::exp(2.0 * s.qls[i]);
                    let dm = s.qm[i] - s.pm[i];
                    dqm[i] += w.alpha_rep * c_kl * dm / pv;
                    dqls[i] += w.alpha_rep * c_kl * (qv / pv - 1.0);
                    dpm[i] = -w.alpha_dyn * c_kl * dm / pv;
                    dpls[i] = w.alpha_dyn * c_kl * (1.0 - (qv + dm * dm) / pv);
                }
                if let Some(pd) = &s.prior_dec {
                    terms.prior_pred += sq_err(&pd.out, &seq.obs[t]) * c_kl;
                    let dout: Vec<f64> = pd
                        .out
                        .iter()
                        .zip(&seq.obs[t])
                        .map(|(x, y)| 2.0 * w.alpha_prior_pred * c_kl * (x - y))
                        .collect();
                    let mut din = vec![0.0; d.hidden + d.stoch];
                    net::mlp_backward(p, &mut grads, DECODER, pd, &dout, &mut din);
                    for i in 0..d.hidden {
                        dh[i] += din[i];
                    }
                    for i in 0..d.stoch {
                        dpm[i] += din[d.hidden + i];
                    }
                }
                let prior = s.prior.as_ref().expect("prior cached for t > 0");
                let mut dprior = vec![0.0; 2 * d.stoch];
                for i in 0..d.stoch {
                    dprior[i] = dpm[i];
                    dprior[d.stoch + i] = dpls[i] * net::squash_logstd_grad(prior.out[d.stoch + i]);
                }
                net::mlp_backward(p, &mut grads, PRIOR, prior, &dprior, &mut dh);
            }
            let mut denc = vec![0.0; 2 * d.stoch];
            for i in 0..d.stoch {
                denc[i] = dqm[i];
                denc[d.stoch + i] = dqls[i] * net::squash_logstd_grad(s.enc.out[d.stoch + i]);
            }
            let mut d_enc_in = vec![0.0; d.obs + d.hidden];
            net::mlp_backward(p, &mut grads, ENCODER, &s.enc, &denc, &mut d_enc_in);
            for i in 0..d.hidden {
                dh[i] += d_enc_in[d.obs + i];
            }
            // h_t = GRU(h_{t-1}, [z_{t-1}, a_{t-1}])
            dh_next = vec![0.0; d.hidden];
            dz_next = vec![0.0; d.stoch];
            if let Some(g) = &s.gru {
                let mut dx = vec![0.0; d.stoch + d.action];
                net::gru_backward(p, &mut grads, g, &dh, &mut dh_next, &mut dx);
                dz_next.copy_from_slice(&dx[..d.stoch]);
            }
        }
    }
    terms.finish(&w);
    if !terms.total.is_finite() {
        return Err(Error::Numerical(format!("non-finite loss {terms:?}")));
    }
    Ok((terms, grads))
}

/// Loss value with stop-gradients made explicit: distributions behind a
/// stop-gradient are computed from `frozen`, everything else from `live`.
/// At `live == frozen` the value equals the training loss, and its
/// derivative in `live` is the training gradient. Intended for finite
/// difference checks.
pub fn surrogate_loss(live: &WorldModelParams, frozen: &WorldModelParams, batch: &[Sequence]) -> Result<f64> {
    check_batch(live, batch)?;
    let w = live.loss;
    let (c_pred, c_kl) = normalizers(batch);
    let mut total = 0.0;
    for seq in batch {
        let a = forward_sequence(live, seq);
        let b = forward_sequence(frozen, seq);
        for t in 0..seq.len() {
            total += w.alpha_pred * c_pred * sq_err(&a[t].dec.out, &seq.obs[t]);
            if let Some(pd) = &a[t].prior_dec {
                total += w.alpha_prior_pred * c_kl * sq_err(&pd.out, &seq.obs[t]);
            }
            if t > 0 {
                let dyn_kl = net::gaussian_kl(&b[t].qm, &b[t].qls, &a[t].pm, &a[t].pls);
                let rep_kl = net::gaussian_kl(&a[t].qm, &a[t].qls, &b[t].pm, &b[t].pls);
                total += c_kl * (w.alpha_dyn * dyn_kl + w.alpha_rep * rep_kl);
            }
        }
    }
    Ok(total)
}

/// Loss terms without gradients.
pub fn loss_terms(p: &WorldModelParams, batch: &[Sequence]) -> Result<LossTerms> {
    check_batch(p, batch)?;
    let w = p.loss;
    let (c_pred, c_kl) = normalizers(batch);
    let mut terms = LossTerms::default();
    for seq in batch {
        let steps = forward_sequence(p, seq);
        for (t, s) in steps.iter().enumerate() {
            terms.pred += c_pred * sq_err(&s.dec.out, &seq.obs[t]);
            if let Some(pd) = &s.prior_dec {
                terms.prior_pred += c_kl * sq_err(&pd.out, &seq.obs[t]);
            }
            if t > 0 {
                let kl = net::gaussian_kl(&s.qm, &s.qls, &s.pm, &s.pls);
                terms.dyn_kl += c_kl * kl;
                terms.rep_kl += c_kl * kl;
            }
        }
    }
    terms.finish(&w);
    Ok(terms)
}

/// Learning-rate schedule over `max_updates`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine decay from `learning_rate` to zero.
    Cosine,
}

impl LrSchedule {
    pub fn rate(self, base: f64, update: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => {
                let frac = update as f64 / total.max(1) as f64;
                0.5 * base * (1.0 + math::cos(core::f64::consts::PI * frac))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub dims: WorldModelDims,
    pub loss: LossWeights,
    /// Window length for BPTT.
    pub seq_len: usize,
    pub batch_size: usize,
    /// Peak learning rate.
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    pub momentum: f64,
    /// Global gradient-norm clip.
    pub grad_clip: f64,
    pub max_updates: usize,
    /// Evaluate on the held-out episodes every this many updates.
    pub eval_every: usize,
    /// Stop after this many evaluations without improvement.
    pub patience: usize,
    /// Fraction of the dataset held out for early stopping.
    pub holdout_fraction: f64,
    /// Probability that a window starts at the first step of its episode.
    pub start_at_zero: f64,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dims: WorldModelDims::default(),
            loss: LossWeights::default(),
            seq_len: 64,
            batch_size: 16,
            learning_rate: 3e-3,
            lr_schedule: LrSchedule::Cosine,
            momentum: 0.9,
            grad_clip: 100.0,
            max_updates: 3000,
            eval_every: 50,
            patience: 40,
            holdout_fraction: 0.1,
            start_at_zero: 0.5,
            init_scale: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seq_len < 2 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::config("seq_len >= 2, batch_size >= 1, eval_every >= 1 required"));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("learning_rate > 0 and momentum in [0, 1) required"));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::config("holdout_fraction must be in [0, 1)"));
        }
        if self.dims.hidden == 0 || self.dims.stoch == 0 || self.dims.mlp == 0 {
            return Err(Error::config("model dimensions must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub update: usize,
    pub train_loss: LossTerms,
    /// Held-out posterior reconstruction error (normalized units).
    pub holdout_pred: f64,
    /// Held-out open-loop prediction error (normalized units); the
    /// checkpoint with the lowest value is kept.
    pub holdout_imagined: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: WorldModelParams,
    pub history: Vec<EvalPoint>,
    pub updates: usize,
}

/// Momentum SGD with global norm clipping.
#[derive(Debug, Clone)]
pub struct MomentumSgd {
    pub lr: f64,
    pub momentum: f64,
    pub clip: f64,
    velocity: Vec<f64>,
}

impl MomentumSgd {
    pub fn new(n: usize, lr: f64, momentum: f64, clip: f64) -> Self {
        MomentumSgd {
            lr,
            momentum,
            clip,
            velocity: vec![0.0; n],
        }
    }

    /// Apply one update; returns the pre-clip gradient norm.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> f64 {
        let norm = math::norm(grads);
        let scale = if norm > self.clip { self.clip / norm } else { 1.0 };
        for ((p, v), g) in params.iter_mut().zip(&mut self.velocity).zip(grads) {
            *v = self.momentum * *v + scale * g;
            *p -= self.lr * *v;
        }
        norm
    }
}

/// FNV-1a over the bit patterns of every observation and action.
pub fn dataset_hash(episodes: &[EpisodeRecord]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |x: f64| {
        for b in x.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    for e in episodes {
        for o in &e.observations {
            o.0.iter().for_each(|v| eat(*v));
        }
        for a in &e.actions {
            a.to_array().iter().for_each(|v| eat(*v));
        }
    }
    format!("{h:016x}")
}

/// Normalized window `[start, start + len)` of an episode with fresh noise.
pub fn make_sequence(
    norm: &Normalizer,
    dims: &WorldModelDims,
    ep: &EpisodeRecord,
    start: usize,
    len: usize,
    noise_seed: Option<u64>,
) -> Sequence {
    let mut r = noise_seed.map(|s| rng::stream(s, 0x5E0));
    let mut obs = Vec::with_capacity(len);
    let mut act = Vec::with_capacity(len);
    let mut eps = Vec::with_capacity(len);
    for t in start..start + len {
        let mut o = vec![0.0; dims.obs];
        norm.norm_obs(&ep.observations[t].0, &mut o);
        obs.push(o);
        let mut a = vec![0.0; dims.action];
        // the last window step may have no recorded action; it is never consumed
        let raw = ep.actions.get(t).map(|a| a.to_array()).unwrap_or([0.0, 0.0, 1.0]);
        norm.norm_act(&raw, &mut a);
        act.push(a);
        eps.push(match r.as_mut() {
            Some(r) => (0..dims.stoch).map(|_| rng::normal(r)).collect(),
            None => vec![0.0; dims.stoch],
        });
    }
    Sequence { obs, act, eps }
}

/// Fit the normalizer on a dataset.
pub fn fit_normalizer(episodes: &[EpisodeRecord], dims: &WorldModelDims) -> Normalizer {
    let acts: Vec<[f64; 3]> = episodes
        .iter()
        .flat_map(|e| e.actions.iter().map(|a| a.to_array()))
        .collect();
    Normalizer::fit(
        episodes.iter().flat_map(|e| e.observations.iter().map(|o| &o.0[..])),
        acts.iter().map(|a| &a[..]),
        dims,
    )
}

/// Held-out posterior reconstruction error per step (normalized units),
/// over the first `seq_len` steps of each episode, using posterior means.
pub fn holdout_reconstruction(p: &WorldModelParams, episodes: &[EpisodeRecord], seq_len: usize) -> Result<f64> {
    let batch: Vec<Sequence> = episodes
        .iter()
        .map(|e| make_sequence(&p.norm, &p.dims, e, 0, seq_len.min(e.observations.len()), None))
        .collect();
    Ok(loss_terms(p, &batch)?.pred)
}

/// Mean open-loop prediction error per step (normalized units, summed over
/// channels): encode the first observation, imagine `horizon` steps with
/// the recorded actions, decode, compare with the recorded observations.
pub fn open_loop_mse(p: &WorldModelParams, episodes: &[EpisodeRecord], horizon: usize) -> Result<f64> {
    use super::model::{decode, encode_init, imagine, Sampling};
    let mut total = 0.0;
    let mut n = 0usize;
    for e in episodes {
        let h = horizon.min(e.actions.len());
        let init = encode_init(p, &e.observations[0], Sampling::Mean)?;
        let rollout = imagine(p, &init, &e.actions[..h], Sampling::Mean)?;
        for (t, s) in rollout.states.iter().enumerate() {
            let o = decode(p, s);
            let target = &e.observations[t + 1];
            for i in 0..p.dims.obs {
                let err = (o.0[i] - target.0[i]) / p.norm.obs_std[i];
                total += err * err;
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Empty("open_loop_mse: no steps"));
    }
    Ok(total / n as f64)
}

/// Mean one-step prediction error (normalized units, summed over channels):
/// filter with posterior means up to `t`, step the prior once with `a_t`,
/// decode, compare with `o_{t+1}`.
pub fn one_step_mse(p: &WorldModelParams, episodes: &[EpisodeRecord]) -> Result<f64> {
    use super::model::{decode, encode_init, encode_step, Sampling};
    if episodes.is_empty() {
        return Err(Error::Empty("one_step_mse: no episodes"));
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for e in episodes {
        let mut state = encode_init(p, &e.observations[0], Sampling::Mean)?;
        for t in 0..e.actions.len() {
            let pred = one_step_predict(p, &state, &e.actions[t]);
            let o = decode(p, &pred);
            let target = &e.observations[t + 1];
            for i in 0..p.dims.obs {
                let err = (o.0[i] - target.0[i]) / p.norm.obs_std[i];
                total += err * err;
            }
            n += 1;
            state = encode_step(p, target, &state, &e.actions[t], Sampling::Mean)?;
        }
    }
    Ok(total / n as f64)
}

fn one_step_predict(
    p: &WorldModelParams,
    state: &super::model::LatentState,
    action: &crate::env::Action,
) -> super::model::LatentState {
    use super::model::{imagine, Sampling};
    let r = imagine(p, state, core::slice::from_ref(action), Sampling::Mean)
        .expect("state built by this model");
    r.states.into_iter().next().expect("one step")
}

/// Mean per-step KL between the imagined prior and the filtered posterior
/// over the first `horizon` steps of each episode.
pub fn prior_posterior_gap(p: &WorldModelParams, episodes: &[EpisodeRecord], horizon: usize) -> Result<f64> {
    use super::model::{encode_init, encode_step, imagine, Sampling};
    let mut total = 0.0;
    let mut n = 0usize;
    for e in episodes {
        let h = horizon.min(e.actions.len());
        let init = encode_init(p, &e.observations[0], Sampling::Mean)?;
        let imagined = imagine(p, &init, &e.actions[..h], Sampling::Mean)?;
        let mut post = init;
        for t in 0..h {
            post = encode_step(p, &e.observations[t + 1], &post, &e.actions[t], Sampling::Mean)?;
            let pr = &imagined.states[t];
            total += net::gaussian_kl(&post.z_mean, &post.z_logstd, &pr.z_mean, &pr.z_logstd);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Empty("prior_posterior_gap: no steps"));
    }
    Ok(total / n as f64)
}

/// Train a world model on demonstrations and policy rollouts.
pub fn train_world_model(dataset: &[EpisodeRecord], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("train_world_model: empty dataset"));
    }
    let has_demo = dataset.iter().any(|e| e.source == EpisodeSource::Demo);
    let has_rollout = dataset.iter().any(|e| e.source == EpisodeSource::PolicyRollout);
    if !(has_demo && has_rollout) {
        return Err(Error::config(
            "world-model data must contain both demonstrations and policy rollouts",
        ));
    }
    for e in dataset {
        e.validate()?;
        if e.observations.len() < config.seq_len {
            return Err(Error::shape(format!(
                "episode of {} observations is shorter than the window {}",
                e.observations.len(),
                config.seq_len
            )));
        }
    }

    // deterministic holdout split
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut r = rng::stream(config.seed, 0x7A1);
    for i in (1..order.len()).rev() {
        let j = rand::Rng::random_range(&mut r, 0..=i);
        order.swap(i, j);
    }
    let n_hold = ((dataset.len() as f64) * config.holdout_fraction) as usize;
    let n_hold = n_hold.min(dataset.len() - 1);
    let holdout: Vec<EpisodeRecord> = order[..n_hold].iter().map(|&i| dataset[i].clone()).collect();
    let train: Vec<&EpisodeRecord> = order[n_hold..].iter().map(|&i| &dataset[i]).collect();

    let mut params = WorldModelParams::init(config.dims, config.seed, config.init_scale);
    params.loss = config.loss;
    params.norm = {
        let owned: Vec<EpisodeRecord> = train.iter().map(|e| (*e).clone()).collect();
        fit_normalizer(&owned, &config.dims)
    };
    params.meta.seed = config.seed;
    params.meta.data_hash = dataset_hash(dataset);

    let mut opt = MomentumSgd::new(
        params.num_params(),
        config.learning_rate,
        config.momentum,
        config.grad_clip,
    );
    let mut history = Vec::new();
    let mut best: Option<(f64, WorldModelParams)> = None;
    let mut stale = 0usize;
    let mut window_loss = LossTerms::default();
    let mut window_n = 0usize;
    let mut updates = 0usize;

    for update in 0..config.max_updates {
        let batch: Vec<Sequence> = (0..config.batch_size)
            .map(|b| {
                let e = train[rand::Rng::random_range(&mut r, 0..train.len())];
                let max_start = e.observations.len() - config.seq_len;
                let start = if rng::uniform(&mut r, 0.0, 1.0) < config.start_at_zero {
                    0
                } else {
                    rand::Rng::random_range(&mut r, 0..=max_start)
                };
                let noise_seed = rng::derive_seed(config.seed, (update * config.batch_size + b) as u64);
                make_sequence(&params.norm, &params.dims, e, start, config.seq_len, Some(noise_seed))
            })
            .collect();
        opt.lr = config
            .lr_schedule
            .rate(config.learning_rate, update, config.max_updates);
        let (terms, grads) = loss_and_grad(&params, &batch).map_err(|err| match err {
            Error::Numerical(m) => Error::Numerical(format!("update {update}: {m}")),
            other => other,
        })?;
        opt.step(params.values_mut(), &grads);
        if !params.is_finite() {
            return Err(Error::Numerical(format!("non-finite parameters after update {update}")));
        }
        updates = update + 1;
        window_loss.total += terms.total;
        window_loss.pred += terms.pred;
        window_loss.dyn_kl += terms.dyn_kl;
        window_loss.rep_kl += terms.rep_kl;
        window_loss.prior_pred += terms.prior_pred;
        window_n += 1;

        if updates % config.eval_every == 0 || updates == config.max_updates {
            let (holdout_pred, holdout_imagined) = if holdout.is_empty() {
                let v = window_loss.pred / window_n as f64;
                (v, v)
            } else {
                (
                    holdout_reconstruction(&params, &holdout, config.seq_len)?,
                    open_loop_mse(&params, &holdout, config.seq_len)?,
                )
            };
            let k = window_n as f64;
            history.push(EvalPoint {
                update: updates,
                train_loss: LossTerms {
                    total: window_loss.total / k,
                    pred: window_loss.pred / k,
                    dyn_kl: window_loss.dyn_kl / k,
                    rep_kl: window_loss.rep_kl / k,
                    prior_pred: window_loss.prior_pred / k,
                },
                holdout_pred,
                holdout_imagined,
            });
            window_loss = LossTerms::default();
            window_n = 0;
            match &best {
                Some((b, _)) if !(holdout_imagined < *b) => {
                    stale += 1;
                    if stale >= config.patience {
                        break;
                    }
                }
                _ => {
                    best = Some((holdout_imagined, params.clone()));
                    stale = 0;
                }
            }
        }
    }
    let mut params = best.map(|(_, p)| p).unwrap_or(params);
    params.meta.updates = updates;
    Ok(TrainOutcome {
        params,
        history,
        updates,
    })
}
