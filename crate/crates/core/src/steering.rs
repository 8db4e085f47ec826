//! The steering loop: sample plans, aggregate them into candidates, imagine
//! each candidate, narrate, select, execute. Also preemptive monitoring of
//! single plans.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::aggregate::{cluster_plans_with, ClusterConfig};
use crate::env::{execute, observe, EpisodeRecord, Observation, TaskId, WorldState, PLAN_HORIZON};
use crate::policy::{sample_plans, ActionPlan, ModeMixture};
use crate::verifier::{
    classify, extract_features, BehaviorFeatures, ClassifierParams, NarrateRequest, Narration,
    TaskSpec, Verdict, VerifierBackend,
};
use crate::worldmodel::{decode_rollout, downsample, encode_init, imagine, LatentRollout, Sampling, WorldModelParams};
use crate::{math, rng, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SteeringConfig {
    pub n_samples: usize,
    pub k: usize,
    pub plan_horizon: usize,
    pub imagine_mode: Sampling,
    pub max_iter: usize,
    pub band: Option<usize>,
    pub nms_eps: Option<f64>,
    /// Replaces the policy's fitted mode weights when present.
    pub mode_weight_override: Option<Vec<f64>>,
}

impl Default for SteeringConfig {
    fn default() -> Self {
        SteeringConfig {
            n_samples: 100,
            k: 6,
            plan_horizon: PLAN_HORIZON,
            imagine_mode: Sampling::Mean,
            max_iter: 20,
            band: None,
            nms_eps: None,
            mode_weight_override: None,
        }
    }
}

impl SteeringConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.n_samples < self.k {
            return Err(Error::config(format!(
                "need n_samples >= k >= 1, got n_samples {} and k {}",
                self.n_samples, self.k
            )));
        }
        if self.plan_horizon == 0 {
            return Err(Error::config("plan_horizon must be positive"));
        }
        Ok(())
    }

    fn cluster_config(&self) -> ClusterConfig {
        ClusterConfig {
            k: self.k,
            max_iter: self.max_iter,
            band: self.band,
            nms_eps: self.nms_eps,
        }
    }
}

/// How the plan to execute is picked.
#[derive(Clone, Copy)]
pub enum Selector<'a> {
    /// Foresight plus forethought through a verifier backend.
    Verifier(&'a dyn VerifierBackend),
    /// Highest success probability under the latent classifier.
    Classifier(&'a ClassifierParams),
    /// Execute the first raw policy sample.
    Baseline,
}

impl Selector<'_> {
    pub fn label(&self) -> String {
        match self {
            Selector::Verifier(b) => format!("steer:{}", b.name()),
            Selector::Classifier(_) => String::from("classifier"),
            Selector::Baseline => String::from("baseline"),
        }
    }
}

/// Everything one steering decision saw and did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub episode: u64,
    /// Environment step at which the decision was taken.
    pub timestamp: u64,
    pub selector: String,
    pub task: String,
    pub observation: Observation,
    pub candidates: Vec<ActionPlan>,
    pub narrations: Vec<Narration>,
    pub verdict: Option<Verdict>,
    /// Classifier probabilities, when the classifier selected.
    #[serde(default)]
    pub probabilities: Vec<f64>,
    pub chosen_index: Option<usize>,
    pub abstained: bool,
    pub executed: Option<BehaviorFeatures>,
    pub success: bool,
}

impl StepTrace {
    fn new(episode: u64, selector: &Selector<'_>, task: &TaskSpec, obs: &Observation) -> Self {
        StepTrace {
            episode,
            timestamp: 0,
            selector: selector.label(),
            task: task.id.clone(),
            observation: *obs,
            candidates: Vec::new(),
            narrations: Vec::new(),
            verdict: None,
            probabilities: Vec::new(),
            chosen_index: None,
            abstained: false,
            executed: None,
            success: false,
        }
    }
}

/// A failure inside the loop, with the trace recorded up to that point.
#[derive(Debug, Clone, PartialEq)]
pub struct SteerError {
    pub error: Error,
    pub trace: Box<StepTrace>,
}

impl core::fmt::Display for SteerError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "episode {}: {}", self.trace.episode, self.error)
    }
}

impl From<SteerError> for Error {
    fn from(e: SteerError) -> Error {
        e.error
    }
}

/// Imagine each plan from `obs` through the world model.
pub fn imagine_candidates(
    obs: &Observation,
    plans: &[ActionPlan],
    wm: &WorldModelParams,
    mode: Sampling,
) -> Result<Vec<LatentRollout>> {
    let init = encode_init(wm, obs, mode)?;
    plans
        .iter()
        .enumerate()
        .map(|(i, p)| Ok(imagine(wm, &init, &p.actions, mode)?.with_index(i)))
        .collect()
}

pub fn narrate_rollouts(
    rollouts: &[LatentRollout],
    wm: &WorldModelParams,
    backend: &dyn VerifierBackend,
    tag: &str,
) -> Result<Vec<Narration>> {
    let requests: Vec<NarrateRequest> = rollouts
        .iter()
        .map(|r| NarrateRequest {
            rollout_id: format!("{tag}-{}", r.plan_index),
            frames: decode_rollout(wm, r),
        })
        .collect();
    backend.narrate_many(&requests)
}

/// One steering decision. Returns `None` as the plan when every candidate is
/// forbidden (abstention).
pub fn steer_once(
    obs: &Observation,
    policy: &ModeMixture,
    wm: &WorldModelParams,
    config: &SteeringConfig,
    task: &TaskSpec,
    selector: Selector<'_>,
    episode: u64,
    rng_seed: u64,
) -> core::result::Result<(Option<ActionPlan>, StepTrace), SteerError> {
    let mut trace = StepTrace::new(episode, &selector, task, obs);
    macro_rules! tri {
        ($e:expr) => {
            match $e {
                Ok(v) => v,
                Err(error) => {
                    return Err(SteerError {
                        error,
                        trace: Box::new(trace),
                    })
                }
            }
        };
    }
    tri!(config.validate());
    tri!(task.validate());
    let policy_owned;
    let policy = match &config.mode_weight_override {
        Some(w) => {
            policy_owned = tri!(policy.clone().with_weights(w));
            &policy_owned
        }
        None => policy,
    };
    if policy.horizon != config.plan_horizon {
        tri!(Err(Error::config(format!(
            "policy horizon {} differs from plan horizon {}",
            policy.horizon, config.plan_horizon
        ))));
    }
    if let Selector::Baseline = selector {
        let plan = sample_plans(policy, obs, 1, rng_seed).pop().expect("one plan");
        trace.candidates.push(plan.clone());
        trace.chosen_index = Some(0);
        return Ok((Some(plan), trace));
    }

    let samples = sample_plans(policy, obs, config.n_samples, rng_seed);
    let clusters = tri!(cluster_plans_with(
        &samples,
        &config.cluster_config(),
        rng::derive_seed(rng_seed, 0xC1)
    ));
    trace.candidates = clusters.centers;
    let rollouts = tri!(imagine_candidates(obs, &trace.candidates, wm, config.imagine_mode));

    let chosen = match selector {
        Selector::Verifier(backend) => {
            trace.narrations = tri!(narrate_rollouts(&rollouts, wm, backend, &format!("ep{episode}")));
            let verdict = tri!(backend.select(&trace.narrations, task));
            let chosen = verdict.chosen_index;
            let ok = verdict.chosen_ok();
            trace.verdict = Some(verdict);
            if ok {
                Some(chosen)
            } else {
                trace.abstained = true;
                None
            }
        }
        Selector::Classifier(params) => {
            trace.probabilities = tri!(rollouts.iter().map(|r| classify(params, r)).collect::<Result<Vec<f64>>>());
            let mut best = 0;
            for (i, p) in trace.probabilities.iter().enumerate() {
                if *p > trace.probabilities[best] {
                    best = i;
                }
            }
            Some(best)
        }
        Selector::Baseline => unreachable!("handled above"),
    };
    trace.chosen_index = chosen;
    let plan = chosen.map(|i| trace.candidates[i].clone());
    Ok((plan, trace))
}

/// One episode: reset the environment, decide, execute the chosen plan
/// open-loop, and label success on the executed ground truth.
pub fn run_episode(
    task_family: TaskId,
    env_seed: u64,
    episode: u64,
    policy: &ModeMixture,
    wm: &WorldModelParams,
    config: &SteeringConfig,
    task: &TaskSpec,
    selector: Selector<'_>,
) -> core::result::Result<StepTrace, SteerError> {
    let init = WorldState::reset(task_family, env_seed, episode);
    let obs = observe(&init);
    let seed = rng::derive_seed(env_seed, episode);
    let (plan, mut trace) = steer_once(&obs, policy, wm, config, task, selector, episode, seed)?;
    if let Some(plan) = plan {
        let (observations, _) = execute(&init, &plan.actions, rng::derive_seed(seed, 0xE7));
        let features = extract_features(&observations);
        trace.success = task.satisfied(&features);
        trace.executed = Some(features);
    }
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub selector: String,
    pub task: String,
    pub episodes: usize,
    pub successes: usize,
    pub abstentions: usize,
    pub success_rate: f64,
    /// 95% Wald interval, clipped to [0, 1].
    pub ci_low: f64,
    pub ci_high: f64,
}

pub fn summarize(traces: &[StepTrace]) -> Result<RunSummary> {
    let first = traces.first().ok_or(Error::Empty("summary: no traces"))?;
    let n = traces.len();
    let successes = traces.iter().filter(|t| t.success).count();
    let p = successes as f64 / n as f64;
    let half = 1.96 * math::sqrt(p * (1.0 - p) / n as f64);
    Ok(RunSummary {
        selector: first.selector.clone(),
        task: first.task.clone(),
        episodes: n,
        successes,
        abstentions: traces.iter().filter(|t| t.abstained).count(),
        success_rate: p,
        ci_low: (p - half).max(0.0),
        ci_high: (p + half).min(1.0),
    })
}

/// Run `episodes` seeded episodes; episode `i` uses reset `(env_seed, i)`.
pub fn run_episodes(
    task_family: TaskId,
    env_seed: u64,
    episodes: usize,
    policy: &ModeMixture,
    wm: &WorldModelParams,
    config: &SteeringConfig,
    task: &TaskSpec,
    selector: Selector<'_>,
) -> core::result::Result<Vec<StepTrace>, SteerError> {
    (0..episodes as u64)
        .map(|i| run_episode(task_family, env_seed, i, policy, wm, config, task, selector))
        .collect()
}

/// Where monitored narrations come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MonitorSource {
    /// Imagined from the first observation and the first `T` actions.
    Imagined,
    /// The recorded observations, downsampled like imagined ones.
    GroundTruth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorReport {
    pub n: usize,
    pub true_positives: usize,
    pub true_negatives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub acc: f64,
    /// Failures flagged / failures; `None` without failures.
    pub tpr: Option<f64>,
    /// Successes passed / successes; `None` without successes.
    pub tnr: Option<f64>,
}

/// Confusion statistics with failure as the positive class.
/// Each pair is `(predicted_failure, actual_failure)`.
pub fn confusion(pairs: &[(bool, bool)]) -> Result<MonitorReport> {
    if pairs.is_empty() {
        return Err(Error::Empty("monitor: no labeled rollouts"));
    }
    let count = |p: bool, a: bool| pairs.iter().filter(|x| **x == (p, a)).count();
    let tp = count(true, true);
    let tn = count(false, false);
    let fp = count(true, false);
    let fn_ = count(false, true);
    let ratio = |a: usize, b: usize| if a + b == 0 { None } else { Some(a as f64 / (a + b) as f64) };
    Ok(MonitorReport {
        n: pairs.len(),
        true_positives: tp,
        true_negatives: tn,
        false_positives: fp,
        false_negatives: fn_,
        acc: (tp + tn) as f64 / pairs.len() as f64,
        tpr: ratio(tp, fn_),
        tnr: ratio(tn, fp),
    })
}

/// Narrations of recorded episodes, imagined or from ground truth.
pub fn narrate_episodes(
    rollouts: &[EpisodeRecord],
    wm: &WorldModelParams,
    backend: &dyn VerifierBackend,
    source: MonitorSource,
    horizon: usize,
) -> Result<Vec<Narration>> {
    let requests: Vec<NarrateRequest> = rollouts
        .iter()
        .enumerate()
        .map(|(i, e)| {
            e.validate()?;
            if e.actions.len() < horizon {
                return Err(Error::shape(format!(
                    "rollout {i} has {} actions, need {horizon}",
                    e.actions.len()
                )));
            }
            let frames = match source {
                MonitorSource::Imagined => {
                    let init = encode_init(wm, &e.observations[0], Sampling::Mean)?;
                    decode_rollout(wm, &imagine(wm, &init, &e.actions[..horizon], Sampling::Mean)?)
                }
                MonitorSource::GroundTruth => downsample(&e.observations[1..=horizon]),
            };
            Ok(NarrateRequest {
                rollout_id: format!("rollout-{i}"),
                frames,
            })
        })
        .collect::<Result<_>>()?;
    backend.narrate_many(&requests)
}

/// Monitor each rollout and compare against its ground-truth outcome under `task`.
pub fn monitor_rollouts(
    rollouts: &[EpisodeRecord],
    wm: &WorldModelParams,
    task: &TaskSpec,
    backend: &dyn VerifierBackend,
    source: MonitorSource,
) -> Result<MonitorReport> {
    if rollouts.is_empty() {
        return Err(Error::Empty("monitor: no labeled rollouts"));
    }
    let narrations = narrate_episodes(rollouts, wm, backend, source, PLAN_HORIZON)?;
    let mut pairs = Vec::with_capacity(rollouts.len());
    for (e, n) in rollouts.iter().zip(&narrations) {
        let v = backend.monitor(n, task)?;
        pairs.push((!v.ok, !task.satisfied(&e.behavior_label)));
    }
    confusion(&pairs)
}
