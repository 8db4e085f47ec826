//! World-model training data: scripted demonstrations plus rollouts of the
//! balanced base policy, some of them perturbed into failures.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{
    generate_demos, observe, step, Action, EpisodeRecord, EpisodeSource, ModeId, TaskId,
    WorldState, EPISODE_HORIZON,
};
use crate::policy::{fit_policy, sample_plans, ModeMixture};
use crate::verifier::extract_features;
use crate::{rng, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub demos_per_mode: usize,
    /// Defaults to the task's two demonstrated modes.
    pub modes: Option<Vec<ModeId>>,
    pub rollouts: usize,
    pub test_episodes: usize,
    /// Probability that a rollout's approach is shifted sideways.
    pub shift_probability: f64,
    /// Probability that a rollout jerks sideways into the object while descending.
    pub rush_probability: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            demos_per_mode: 50,
            modes: None,
            rollouts: 250,
            test_episodes: 50,
            shift_probability: 0.15,
            rush_probability: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub train: Vec<EpisodeRecord>,
    pub test: Vec<EpisodeRecord>,
}

impl Dataset {
    pub fn all(&self) -> impl Iterator<Item = &EpisodeRecord> {
        self.train.iter().chain(&self.test)
    }

    pub fn count(&self, source: EpisodeSource) -> usize {
        self.all().filter(|e| e.source == source).count()
    }
}

/// Disturbance injected into a policy rollout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Perturbation {
    None,
    /// Constant sideways drift over the approach, totalling the given offset.
    Shift(f64),
    /// Sideways jerk of the given per-step size toward the object center
    /// during the late descent.
    Rush(f64),
}

const APPROACH_STEPS: usize = 16;
const RUSH_STEPS: core::ops::Range<usize> = 20..28;

/// Execute a plan with a disturbance, then hold still until the episode
/// horizon.
pub fn rollout_episode(
    initial: &WorldState,
    plan: &[Action],
    perturbation: Perturbation,
    mode: Option<ModeId>,
    seed: u64,
) -> EpisodeRecord {
    let mut s = initial.clone();
    let mut observations = Vec::with_capacity(EPISODE_HORIZON + 1);
    let mut actions = Vec::with_capacity(EPISODE_HORIZON);
    observations.push(observe(&s));
    let mut last_grip = 1.0;
    for t in 0..EPISODE_HORIZON {
        let mut a = match plan.get(t) {
            Some(a) => *a,
            None => Action::new(0.0, 0.0, last_grip),
        };
        match perturbation {
            Perturbation::Shift(total) if t < APPROACH_STEPS => {
                a.delta_pos[0] += total / APPROACH_STEPS as f64;
            }
            Perturbation::Rush(size) if RUSH_STEPS.contains(&t) => {
                let toward = if s.obj_pos[0] >= s.ee_pos[0] { 1.0 } else { -1.0 };
                a.delta_pos[0] += toward * size;
            }
            _ => {}
        }
        let a = a.clamped();
        last_grip = a.grip_cmd;
        s = step(&s, &a, rng::derive_seed(seed, t as u64));
        actions.push(a);
        observations.push(observe(&s));
    }
    let behavior_label = extract_features(&observations);
    EpisodeRecord {
        task: initial.kind,
        observations,
        actions,
        behavior_label,
        source: EpisodeSource::PolicyRollout,
        mode,
    }
}

/// `n` rollouts of `policy` from randomized resets.
pub fn policy_rollouts(
    task: TaskId,
    policy: &ModeMixture,
    n: usize,
    config: &DatasetConfig,
    seed: u64,
) -> Vec<EpisodeRecord> {
    (0..n)
        .map(|i| {
            let ep_seed = rng::derive_seed(seed, i as u64);
            let init = WorldState::reset(task, ep_seed, 0);
            let plan = sample_plans(policy, &observe(&init), 1, ep_seed)
                .pop()
                .expect("one plan");
            let mut r = rng::stream(ep_seed, 0xD15);
            let u = rng::uniform(&mut r, 0.0, 1.0);
            let sign = if r.random::<bool>() { 1.0 } else { -1.0 };
            let perturbation = if u < config.shift_probability {
                Perturbation::Shift(sign * rng::uniform(&mut r, 0.04, 0.07))
            } else if u < config.shift_probability + config.rush_probability {
                Perturbation::Rush(0.025)
            } else {
                Perturbation::None
            };
            rollout_episode(&init, &plan.actions, perturbation, plan.mode_hint, ep_seed)
        })
        .collect()
}

/// Demonstrations and policy rollouts, shuffled and split into train/test.
pub fn build_dataset(task: TaskId, config: &DatasetConfig, seed: u64) -> Result<Dataset> {
    let modes: Vec<ModeId> = config
        .modes
        .clone()
        .unwrap_or_else(|| task.demo_modes().to_vec());
    if !(0.0..=1.0).contains(&(config.shift_probability + config.rush_probability))
        || config.shift_probability < 0.0
        || config.rush_probability < 0.0
    {
        return Err(Error::config("perturbation probabilities must be in [0, 1] and sum to <= 1"));
    }
    let demos = generate_demos(task, config.demos_per_mode, &modes, rng::derive_seed(seed, 1))?;
    let total = demos.len() + config.rollouts;
    if config.test_episodes >= total {
        return Err(Error::config(format!(
            "test split of {} leaves no training episodes out of {total}",
            config.test_episodes
        )));
    }
    let mut episodes = demos;
    if config.rollouts > 0 {
        if episodes.len() < modes.len() {
            return Err(Error::config("policy rollouts need demonstrations to fit the policy"));
        }
        let policy = fit_policy(&episodes, modes.len(), rng::derive_seed(seed, 2))?;
        episodes.extend(policy_rollouts(task, &policy, config.rollouts, config, rng::derive_seed(seed, 3)));
    }
    let mut r = rng::stream(seed, 0x5417);
    for i in (1..episodes.len()).rev() {
        let j = r.random_range(0..=i);
        episodes.swap(i, j);
    }
    let test = episodes.split_off(episodes.len() - config.test_episodes);
    Ok(Dataset {
        train: episodes,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_split_counts() {
        let d = build_dataset(TaskId::Cup, &DatasetConfig::default(), 0).unwrap();
        assert_eq!(d.train.len(), 300);
        assert_eq!(d.test.len(), 50);
        assert_eq!(d.count(EpisodeSource::Demo), 100);
        assert_eq!(d.count(EpisodeSource::PolicyRollout), 250);
        for e in d.all() {
            assert_eq!(e.actions.len(), EPISODE_HORIZON);
            assert_eq!(e.behavior_label, extract_features(&e.observations));
        }
    }

    #[test]
    fn rollouts_contain_successes_and_failures() {
        let d = build_dataset(TaskId::Cup, &DatasetConfig::default(), 0).unwrap();
        let roll: Vec<_> = d.all().filter(|e| e.source == EpisodeSource::PolicyRollout).collect();
        let grasped = roll.iter().filter(|e| e.behavior_label.grasp_succeeded).count();
        let toppled = roll.iter().filter(|e| e.behavior_label.toppled).count();
        assert!(grasped > roll.len() / 2, "{grasped}");
        assert!(toppled > 10, "{toppled}");
        assert!(roll.len() - grasped > 30);
    }

    #[test]
    fn rush_topples_and_shift_misses_the_region() {
        let demos = generate_demos(TaskId::Cup, 10, &TaskId::Cup.demo_modes(), 0).unwrap();
        let policy = fit_policy(&demos, 2, 0).unwrap();
        let init = WorldState::canonical(TaskId::Cup);
        for plan in sample_plans(&policy, &observe(&init), 6, 1) {
            let r = rollout_episode(&init, &plan.actions, Perturbation::Rush(0.025), plan.mode_hint, 0);
            assert!(r.behavior_label.toppled, "{:?}", plan.mode_hint);
            let s = rollout_episode(&init, &plan.actions, Perturbation::Shift(0.06), plan.mode_hint, 0);
            let intended = plan.mode_hint.unwrap().region();
            assert_ne!(s.behavior_label.first_contact_region, intended, "{:?}", s.behavior_label);
            let clean = rollout_episode(&init, &plan.actions, Perturbation::None, plan.mode_hint, 0);
            assert!(clean.behavior_label.grasp_succeeded);
        }
    }

    #[test]
    fn deterministic() {
        let cfg = DatasetConfig {
            demos_per_mode: 5,
            rollouts: 10,
            test_episodes: 4,
            ..DatasetConfig::default()
        };
        assert_eq!(build_dataset(TaskId::Bag, &cfg, 3).unwrap(), build_dataset(TaskId::Bag, &cfg, 3).unwrap());
    }

    #[test]
    fn test_split_too_large() {
        let cfg = DatasetConfig {
            demos_per_mode: 1,
            rollouts: 0,
            test_episodes: 2,
            ..DatasetConfig::default()
        };
        assert!(build_dataset(TaskId::Cup, &cfg, 0).is_err());
    }
}
