//! Mode-mixture base policy.
//!
//! Demonstrated action sequences are clustered into modes by Euclidean
//! k-means. A plan is sampled by picking a mode, shifting its mean plan by an
//! affine function of the initial observation, and adding independent
//! Gaussian noise per step.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Action, EpisodeRecord, ModeId, Observation, ACTION_DIM, OBS_DIM, PLAN_HORIZON};
use crate::{linalg, math, rng, Error, Result};

/// A `T`-step open-loop action sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionPlan {
    pub actions: Vec<Action>,
    /// Mixture component the plan came from. Debug only.
    #[serde(default)]
    pub mode_hint: Option<ModeId>,
}

impl ActionPlan {
    pub fn new(actions: Vec<Action>) -> Self {
        ActionPlan {
            actions,
            mode_hint: None,
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.actions.iter().flat_map(|a| a.to_array()).collect()
    }

    pub fn from_flat(v: &[f64], mode_hint: Option<ModeId>) -> Self {
        let actions = v
            .chunks_exact(ACTION_DIM)
            .map(|c| Action::new(c[0], c[1], c[2]))
            .collect();
        ActionPlan { actions, mode_hint }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureMode {
    /// `T x 3`, row-major.
    pub mean_plan: Vec<f64>,
    /// Per-step variances, `T x 3`, row-major.
    pub variance: Vec<f64>,
    pub weight: f64,
    #[serde(default)]
    pub mode_hint: Option<ModeId>,
}

/// `offset = gain (obs - obs_mean)`; `gain` is `(T * 3) x 10`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Conditioning {
    pub obs_mean: Vec<f64>,
    pub gain: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeMixture {
    pub horizon: usize,
    pub modes: Vec<MixtureMode>,
    pub conditioning: Conditioning,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub n_modes: usize,
    pub horizon: usize,
    /// Ridge penalty of the conditioning fit.
    pub ridge: f64,
    pub variance_floor: f64,
    pub max_iter: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            n_modes: 2,
            horizon: PLAN_HORIZON,
            ridge: 1e-4,
            variance_floor: 1e-10,
            max_iter: 100,
        }
    }
}

impl ModeMixture {
    pub fn plan_width(&self) -> usize {
        self.horizon * ACTION_DIM
    }

    pub fn weights(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.weight).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() || self.horizon == 0 {
            return Err(Error::config("policy has no modes or zero horizon"));
        }
        let w = self.plan_width();
        for (i, m) in self.modes.iter().enumerate() {
            if m.mean_plan.len() != w || m.variance.len() != w {
                return Err(Error::shape(format!("mode {i}: plan matrices must be {w} long")));
            }
            if !m.mean_plan.iter().all(|v| v.is_finite()) {
                return Err(Error::config(format!("mode {i}: non-finite mean plan")));
            }
            if !m.variance.iter().all(|v| v.is_finite() && *v >= 0.0) {
                return Err(Error::config(format!("mode {i}: variances must be finite and >= 0")));
            }
            if !(m.weight.is_finite() && m.weight >= 0.0) {
                return Err(Error::config(format!("mode {i}: bad weight {}", m.weight)));
            }
        }
        let total: f64 = self.modes.iter().map(|m| m.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("mode weights sum to {total}, not 1")));
        }
        let c = &self.conditioning;
        if c.obs_mean.len() != OBS_DIM || c.gain.len() != w * OBS_DIM {
            return Err(Error::shape("conditioning map has wrong shape"));
        }
        if !c.gain.iter().chain(&c.obs_mean).all(|v| v.is_finite()) {
            return Err(Error::config("conditioning map is not finite"));
        }
        Ok(())
    }

    /// Replace the mode weights. They must be nonnegative and sum to 1.
    pub fn with_weights(mut self, weights: &[f64]) -> Result<Self> {
        if weights.len() != self.modes.len() {
            return Err(Error::config(format!(
                "{} weights given for {} modes",
                weights.len(),
                self.modes.len()
            )));
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::config("weights must be nonnegative and sum to 1"));
        }
        for (m, w) in self.modes.iter_mut().zip(weights) {
            m.weight = *w;
        }
        Ok(self)
    }

    /// Put `mass` on the modes hinted as `mode` (shared evenly) and spread the
    /// rest evenly over the others.
    pub fn skewed_toward(self, mode: ModeId, mass: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&mass) {
            return Err(Error::config("skew mass must be in [0, 1]"));
        }
        let hits = self.modes.iter().filter(|m| m.mode_hint == Some(mode)).count();
        let rest = self.modes.len() - hits;
        if hits == 0 {
            return Err(Error::config(format!("no mixture mode is hinted as {mode}")));
        }
        if rest == 0 && mass < 1.0 {
            return Err(Error::config("every mode carries the skewed hint"));
        }
        let w: Vec<f64> = self
            .modes
            .iter()
            .map(|m| {
                if m.mode_hint == Some(mode) {
                    mass / hits as f64
                } else {
                    (1.0 - mass) / rest as f64
                }
            })
            .collect();
        let total: f64 = w.iter().sum();
        let w: Vec<f64> = w.iter().map(|x| x / total).collect();
        self.with_weights(&w)
    }

    /// Mean plan of mode `k` shifted for observation `obs`, unclamped.
    pub fn conditioned_mean(&self, k: usize, obs: &Observation) -> Vec<f64> {
        let c = &self.conditioning;
        let centered: Vec<f64> = (0..OBS_DIM).map(|i| obs.0[i] - c.obs_mean[i]).collect();
        let mut out = self.modes[k].mean_plan.clone();
        linalg::gemv_acc(&c.gain, self.plan_width(), OBS_DIM, &centered, &mut out);
        out
    }
}

fn kmeans_pp_init(xs: &[Vec<f64>], k: usize, r: &mut rng::StreamRng) -> Vec<Vec<f64>> {
    let mut centers = vec![xs[r.random_range(0..xs.len())].clone()];
    while centers.len() < k {
        let d: Vec<f64> = xs
            .iter()
            .map(|x| {
                centers
                    .iter()
                    .map(|c| math::sq_dist(x, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d.iter().sum();
        let pick = if total > 0.0 {
            let u = rng::uniform(r, 0.0, total);
            let mut acc = 0.0;
            let mut idx = d.len() - 1;
            for (i, di) in d.iter().enumerate() {
                acc += di;
                if u < acc {
                    idx = i;
                    break;
                }
            }
            idx
        } else {
            centers.len() % xs.len()
        };
        centers.push(xs[pick].clone());
    }
    centers
}

fn nearest(x: &[f64], centers: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centers.iter().enumerate() {
        let d = math::sq_dist(x, c);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

/// Euclidean k-means; returns assignments and centers.
pub fn euclidean_kmeans(xs: &[Vec<f64>], k: usize, max_iter: usize, seed: u64) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    if k == 0 || xs.len() < k {
        return Err(Error::config(format!("k-means: {} points for {k} clusters", xs.len())));
    }
    let mut r = rng::stream(seed, 0x4B4D);
    let mut centers = kmeans_pp_init(xs, k, &mut r);
    let mut assign: Vec<usize> = xs.iter().map(|x| nearest(x, &centers)).collect();
    for _ in 0..max_iter {
        for (j, c) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = xs.iter().zip(&assign).filter(|(_, a)| **a == j).map(|(x, _)| x).collect();
            if members.is_empty() {
                continue;
            }
            for (i, v) in c.iter_mut().enumerate() {
                *v = members.iter().map(|m| m[i]).sum::<f64>() / members.len() as f64;
            }
        }
        let next: Vec<usize> = xs.iter().map(|x| nearest(x, &centers)).collect();
        if next == assign {
            break;
        }
        assign = next;
    }
    Ok((assign, centers))
}

fn majority_hint(demos: &[&EpisodeRecord]) -> Option<ModeId> {
    let mut counts: Vec<(ModeId, usize)> = Vec::new();
    for d in demos {
        let hint = d.mode.or_else(|| ModeId::from_region(d.behavior_label.first_contact_region));
        if let Some(m) = hint {
            match counts.iter_mut().find(|(k, _)| *k == m) {
                Some((_, c)) => *c += 1,
                None => counts.push((m, 1)),
            }
        }
    }
    let mut best: Option<(ModeId, usize)> = None;
    for (m, c) in counts {
        if best.is_none_or(|(_, bc)| c > bc) {
            best = Some((m, c));
        }
    }
    best.map(|(m, _)| m)
}

/// Fit the mixture with default settings.
pub fn fit_policy(demos: &[EpisodeRecord], n_modes: usize, rng_seed: u64) -> Result<ModeMixture> {
    fit_policy_with(
        demos,
        &PolicyConfig {
            n_modes,
            ..PolicyConfig::default()
        },
        rng_seed,
    )
}

pub fn fit_policy_with(demos: &[EpisodeRecord], config: &PolicyConfig, rng_seed: u64) -> Result<ModeMixture> {
    let k = config.n_modes;
    if k == 0 {
        return Err(Error::config("policy needs at least one mode"));
    }
    if demos.len() < k {
        return Err(Error::config(format!(
            "{} demonstrations cannot support {k} modes",
            demos.len()
        )));
    }
    let t = config.horizon;
    let w = t * ACTION_DIM;
    for (i, d) in demos.iter().enumerate() {
        if d.actions.len() < t || d.observations.is_empty() {
            return Err(Error::shape(format!(
                "demonstration {i} has {} actions, need {t}",
                d.actions.len()
            )));
        }
    }
    let xs: Vec<Vec<f64>> = demos
        .iter()
        .map(|d| d.actions[..t].iter().flat_map(|a| a.to_array()).collect())
        .collect();
    let (assign, centers) = euclidean_kmeans(&xs, k, config.max_iter, rng_seed)?;

    // conditioning: ridge regression of residuals on centered first observations
    let n = demos.len();
    let mut obs_mean = vec![0.0; OBS_DIM];
    for d in demos {
        for i in 0..OBS_DIM {
            obs_mean[i] += d.observations[0].0[i] / n as f64;
        }
    }
    let feats: Vec<Vec<f64>> = demos
        .iter()
        .map(|d| (0..OBS_DIM).map(|i| d.observations[0].0[i] - obs_mean[i]).collect())
        .collect();
    let mut gram = vec![0.0; OBS_DIM * OBS_DIM];
    let mut rhs = vec![0.0; OBS_DIM * w];
    for (idx, f) in feats.iter().enumerate() {
        let c = &centers[assign[idx]];
        for i in 0..OBS_DIM {
            for j in 0..OBS_DIM {
                gram[i * OBS_DIM + j] += f[i] * f[j];
            }
            for j in 0..w {
                rhs[i * w + j] += f[i] * (xs[idx][j] - c[j]);
            }
        }
    }
    for i in 0..OBS_DIM {
        gram[i * OBS_DIM + i] += config.ridge;
    }
    // solution is 10 x w; the gain is its transpose
    let sol = linalg::cholesky_solve(&gram, OBS_DIM, &rhs, w)?;
    let mut gain = vec![0.0; w * OBS_DIM];
    for i in 0..OBS_DIM {
        for j in 0..w {
            gain[j * OBS_DIM + i] = sol[i * w + j];
        }
    }
    let conditioning = Conditioning { obs_mean, gain };

    let mut modes = Vec::with_capacity(k);
    for (j, center) in centers.iter().enumerate() {
        let members: Vec<usize> = (0..n).filter(|&i| assign[i] == j).collect();
        let mut variance = vec![0.0; w];
        for &i in &members {
            let mut pred = center.clone();
            linalg::gemv_acc(&conditioning.gain, w, OBS_DIM, &feats[i], &mut pred);
            for c in 0..w {
                let e = xs[i][c] - pred[c];
                variance[c] += e * e / members.len().max(1) as f64;
            }
        }
        for v in variance.iter_mut() {
            *v = v.max(config.variance_floor);
        }
        let member_refs: Vec<&EpisodeRecord> = members.iter().map(|&i| &demos[i]).collect();
        modes.push(MixtureMode {
            mean_plan: center.clone(),
            variance,
            weight: members.len() as f64 / n as f64,
            mode_hint: majority_hint(&member_refs),
        });
    }
    let policy = ModeMixture {
        horizon: t,
        modes,
        conditioning,
    };
    policy.validate()?;
    Ok(policy)
}

/// Draw a mode index from the mixture weights.
fn draw_mode(policy: &ModeMixture, r: &mut rng::StreamRng) -> usize {
    let u = rng::uniform(r, 0.0, 1.0);
    let mut acc = 0.0;
    for (i, m) in policy.modes.iter().enumerate() {
        acc += m.weight;
        if u < acc {
            return i;
        }
    }
    // rounding leaves a sliver past the last cumulative weight
    policy
        .modes
        .iter()
        .rposition(|m| m.weight > 0.0)
        .unwrap_or(policy.modes.len() - 1)
}

/// `n` plans for observation `obs`. Plan `i` is drawn from stream `(seed, i)`.
pub fn sample_plans(policy: &ModeMixture, obs: &Observation, n: usize, rng_seed: u64) -> Vec<ActionPlan> {
    let means: Vec<Vec<f64>> = (0..policy.modes.len())
        .map(|k| policy.conditioned_mean(k, obs))
        .collect();
    (0..n)
        .map(|i| {
            let mut r = rng::stream(rng_seed, i as u64);
            let k = draw_mode(policy, &mut r);
            let m = &policy.modes[k];
            let flat: Vec<f64> = means[k]
                .iter()
                .zip(&m.variance)
                .map(|(mu, var)| mu + math::sqrt(*var) * rng::normal(&mut r))
                .collect();
            let mut plan = ActionPlan::from_flat(&flat, m.mode_hint);
            for a in plan.actions.iter_mut() {
                *a = a.clamped();
            }
            plan
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_demos, scripted_episode, TaskId, WorldState, DEMO_NOISE};

    fn cup_demos() -> Vec<EpisodeRecord> {
        generate_demos(TaskId::Cup, 50, &TaskId::Cup.demo_modes(), 11).unwrap()
    }

    #[test]
    fn balanced_demos_give_balanced_weights() {
        let p = fit_policy(&cup_demos(), 2, 0).unwrap();
        for w in p.weights() {
            assert!((w - 0.5).abs() <= 0.05, "{w}");
        }
        let hints: Vec<_> = p.modes.iter().map(|m| m.mode_hint).collect();
        assert!(hints.contains(&Some(ModeId::Handle)) && hints.contains(&Some(ModeId::Rim)));
    }

    #[test]
    fn single_mode_mean_tracks_script() {
        let demos = generate_demos(TaskId::Cup, 20, &[ModeId::Handle], 5).unwrap();
        let p = fit_policy(&demos, 1, 0).unwrap();
        let init = WorldState::canonical(TaskId::Cup);
        let script = scripted_episode(ModeId::Handle, &init, PLAN_HORIZON, 0.0, 0);
        let mean = p.conditioned_mean(0, &script.observations[0]);
        let reference: Vec<f64> = script.actions.iter().flat_map(|a| a.to_array()).collect();
        let worst = mean
            .iter()
            .zip(&reference)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        // command noise 0.001 per step, with feedback correcting the next step
        assert!(worst < 10.0 * DEMO_NOISE, "worst deviation {worst}");
    }

    #[test]
    fn weight_override_fractions() {
        let p = fit_policy(&cup_demos(), 2, 0).unwrap().with_weights(&[0.9, 0.1]).unwrap();
        let hint0 = p.modes[0].mode_hint;
        let plans = sample_plans(&p, &Observation::zeros(), 1000, 8);
        let f = plans.iter().filter(|x| x.mode_hint == hint0).count() as f64 / 1000.0;
        assert!((f - 0.9).abs() <= 0.03, "{f}");
    }

    #[test]
    fn sample_counts_bounds_and_determinism() {
        let p = fit_policy(&cup_demos(), 2, 0).unwrap();
        let obs = crate::env::observe(&WorldState::canonical(TaskId::Cup));
        let a = sample_plans(&p, &obs, 100, 3);
        assert_eq!(a.len(), 100);
        assert!(a.iter().all(|x| x.len() == PLAN_HORIZON && x.actions.iter().all(|u| u.within_bounds())));
        assert_eq!(a, sample_plans(&p, &obs, 100, 3));
    }

    #[test]
    fn zero_variance_gives_conditioned_mean() {
        let mut p = fit_policy(&cup_demos(), 2, 0).unwrap();
        for m in p.modes.iter_mut() {
            m.variance.iter_mut().for_each(|v| *v = 0.0);
        }
        let obs = crate::env::observe(&WorldState::canonical(TaskId::Cup));
        for plan in sample_plans(&p, &obs, 20, 1) {
            let k = p.modes.iter().position(|m| m.mode_hint == plan.mode_hint).unwrap();
            let want = ActionPlan::from_flat(&p.conditioned_mean(k, &obs), None);
            for (a, b) in plan.actions.iter().zip(&want.actions) {
                assert_eq!(*a, b.clamped());
            }
        }
    }

    #[test]
    fn too_few_demos() {
        let demos = generate_demos(TaskId::Cup, 1, &[ModeId::Handle], 0).unwrap();
        assert!(matches!(fit_policy(&demos, 2, 0), Err(Error::Config(_))));
    }

    #[test]
    fn skew_moves_mass_to_hinted_mode() {
        let p = fit_policy(&cup_demos(), 2, 0).unwrap().skewed_toward(ModeId::Rim, 0.7).unwrap();
        for m in &p.modes {
            let want = if m.mode_hint == Some(ModeId::Rim) { 0.7 } else { 0.3 };
            assert!((m.weight - want).abs() < 1e-12);
        }
        assert!(p.clone().skewed_toward(ModeId::Edge, 0.7).is_err());
    }

    #[test]
    fn mode_frequencies_pass_chi_square() {
        let p = fit_policy(&cup_demos(), 2, 0).unwrap().with_weights(&[0.3, 0.7]).unwrap();
        let n = 10_000;
        let mut counts = [0usize; 2];
        for i in 0..n {
            let mut r = rng::stream(77, i as u64);
            counts[draw_mode(&p, &mut r)] += 1;
        }
        let chi2: f64 = counts
            .iter()
            .zip(p.weights())
            .map(|(c, w)| {
                let e = w * n as f64;
                (*c as f64 - e) * (*c as f64 - e) / e
            })
            .sum();
        // 1 degree of freedom, alpha = 0.01
        assert!(chi2 < 6.635, "chi2 = {chi2}");
    }

    #[test]
    fn conditioning_consistency() {
        let demos = cup_demos();
        let p = fit_policy(&demos, 2, 0).unwrap();
        for d in demos.iter().step_by(7) {
            let x: Vec<f64> = d.actions[..PLAN_HORIZON].iter().flat_map(|a| a.to_array()).collect();
            let dists: Vec<f64> = (0..2)
                .map(|k| math::sq_dist(&x, &p.conditioned_mean(k, &d.observations[0])))
                .collect();
            let own = p.modes.iter().position(|m| m.mode_hint == d.mode).unwrap();
            assert!(dists[own] < dists[1 - own]);
        }
    }

    #[test]
    fn validate_rejects_unnormalized_weights() {
        let p = fit_policy(&cup_demos(), 2, 0).unwrap();
        p.validate().unwrap();
        let mut bad = p.clone();
        bad.modes[0].weight = 0.9;
        assert!(bad.validate().is_err());
    }
}
