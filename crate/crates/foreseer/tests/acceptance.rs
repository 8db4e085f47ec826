//! End-to-end acceptance suite. Each test prints one `PASS`/`FAIL` line with
//! the measured values before asserting. The steering, narration and
//! monitoring checks share one world model trained with the library defaults.

use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use foreseer_core::aggregate::{cluster_plans, dtw_distance, purity};
use foreseer_core::dataset::{build_dataset, Dataset, DatasetConfig};
use foreseer_core::env::{observe, Action, EpisodeRecord, EpisodeSource, ModeId, Region, TaskId, WorldState, PLAN_HORIZON};
use foreseer_core::metrics::{ablation_report, default_ablation_corpus, mean_gt_accuracy, TextMetric};
use foreseer_core::policy::{fit_policy, ActionPlan, ModeMixture};
use foreseer_core::steering::{
    monitor_rollouts, narrate_episodes, run_episodes, steer_once, summarize, MonitorSource, Selector, SteeringConfig,
};
use foreseer_core::verifier::{
    oracle_select, parse, render, train_latent_classifier, BehaviorFeatures,
    ClassifierConfig, CrushLevel, LiftHeight, Narration, OracleVerifier, Predicate, TaskSpec, WeightedPredicate,
};
use foreseer_core::worldmodel::{
    encode_init, imagine, loss_and_grad, one_step_mse, surrogate_loss, train_world_model, LatentRollout, Sampling,
    Sequence, Tensor, TrainConfig, WorldModelDims, WorldModelParams,
};
use foreseer_core::rng;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ENV_SEED: u64 = 7;
const SKEW: f64 = 0.7;

struct Fixture {
    data: Dataset,
    wm: WorldModelParams,
    init: WorldModelParams,
    policy: ModeMixture,
    train_time: Duration,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let data = build_dataset(TaskId::Cup, &DatasetConfig::default(), 0).unwrap();
        let config = TrainConfig::default();
        let t = Instant::now();
        let out = train_world_model(&data.train, &config).unwrap();
        let train_time = t.elapsed();
        let mut init = WorldModelParams::init(config.dims, config.seed, config.init_scale);
        init.loss = config.loss;
        init.norm = out.params.norm.clone();
        let demos: Vec<EpisodeRecord> = data.train.iter().filter(|e| e.source == EpisodeSource::Demo).cloned().collect();
        let policy = fit_policy(&demos, 2, 0).unwrap().skewed_toward(ModeId::Rim, SKEW).unwrap();
        eprintln!("fixture: world model trained in {:.1?} ({} updates)", train_time, out.updates);
        Fixture {
            data,
            wm: out.params,
            init,
            policy,
            train_time,
        }
    })
}

/// Written to the process stdout directly so the line shows without `--nocapture`.
fn report(name: &str, pass: bool, detail: String) {
    let line = format!("{} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
}

fn success_rate(task: &TaskSpec, selector: Selector<'_>) -> f64 {
    let f = fixture();
    let traces = run_episodes(
        TaskId::Cup,
        ENV_SEED,
        50,
        &f.policy,
        &f.wm,
        &SteeringConfig::default(),
        task,
        selector,
    )
    .unwrap();
    summarize(&traces).unwrap().success_rate
}

#[test]
fn criterion_1_steering_delta() {
    let f = fixture();
    let task = TaskSpec::builtin("cup-serve").unwrap();
    // only the handle mode satisfies the task; its weight is 1 - skew
    let handle_weight: f64 = f
        .policy
        .modes
        .iter()
        .filter(|m| m.mode_hint == Some(ModeId::Handle))
        .map(|m| m.weight)
        .sum();
    let expected = handle_weight;
    let t = Instant::now();
    let base = success_rate(&task, Selector::Baseline);
    let steered = success_rate(&task, Selector::Verifier(&OracleVerifier));
    let elapsed = t.elapsed();
    let pass = (base - expected).abs() <= 0.10
        && steered >= 0.70
        && steered - base >= 0.30
        && elapsed <= Duration::from_secs(120);
    report(
        "criterion 1 (steering delta)",
        pass,
        format!(
            "baseline {base:.2} (expected {expected:.2}), steered {steered:.2}, lift {:.2}, 100 episodes in {:.1?} (world-model training {:.1?})",
            steered - base,
            elapsed,
            f.train_time
        ),
    );
    assert!(pass);
}

fn imagined(wm: &WorldModelParams, e: &EpisodeRecord) -> LatentRollout {
    let s0 = encode_init(wm, &e.observations[0], Sampling::Mean).unwrap();
    imagine(wm, &s0, &e.actions[..PLAN_HORIZON], Sampling::Mean).unwrap()
}

#[test]
fn criterion_2_novel_task() {
    let f = fixture();
    let serve = TaskSpec::builtin("cup-serve").unwrap();
    let oily = TaskSpec::builtin("cup-oily-handle").unwrap();
    let labeled: Vec<(LatentRollout, bool)> = f
        .data
        .train
        .iter()
        .map(|e| (imagined(&f.wm, e), serve.satisfied(&e.behavior_label)))
        .collect();
    let clf = train_latent_classifier(&labeled, &ClassifierConfig::default()).unwrap();
    let steered_novel = success_rate(&oily, Selector::Verifier(&OracleVerifier));
    let clf_train = success_rate(&serve, Selector::Classifier(&clf));
    let clf_novel = success_rate(&oily, Selector::Classifier(&clf));
    let pass = steered_novel >= 0.60 && clf_train - clf_novel >= 0.30;
    report(
        "criterion 2 (novel task)",
        pass,
        format!("steered on oily handle {steered_novel:.2}; classifier {clf_train:.2} -> {clf_novel:.2}"),
    );
    assert!(pass);
}

#[test]
fn criterion_3_narration_fidelity() {
    let f = fixture();
    let test = &f.data.test;
    let labels: Vec<BehaviorFeatures> = test.iter().map(|e| e.behavior_label).collect();
    let imagined = narrate_episodes(test, &f.wm, &OracleVerifier, MonitorSource::Imagined, PLAN_HORIZON).unwrap();
    let truth = narrate_episodes(test, &f.wm, &OracleVerifier, MonitorSource::GroundTruth, PLAN_HORIZON).unwrap();
    let acc_imagined = mean_gt_accuracy(&imagined, &labels).unwrap();
    let acc_truth = mean_gt_accuracy(&truth, &labels).unwrap();
    let pass = test.len() == 50 && acc_imagined >= 0.75 && acc_truth == 1.0;
    report(
        "criterion 3 (narration fidelity)",
        pass,
        format!("imagined {acc_imagined:.2}, ground truth {acc_truth:.2} over {} held-out episodes", test.len()),
    );
    assert!(pass);
}

/// Worst per-tensor relative error between the analytic gradient and central differences.
fn gradient_check(alpha_prior_pred: f64) -> f64 {
    let dims = WorldModelDims {
        hidden: 4,
        stoch: 2,
        mlp: 5,
        ..WorldModelDims::default()
    };
    let mut p = WorldModelParams::init(dims, 3, 1.0);
    p.loss.alpha_prior_pred = alpha_prior_pred;
    let mut r = rng::stream(3, 5);
    for v in p.values_mut() {
        *v += 0.1 * rng::normal(&mut r);
    }
    let mut row = |n: usize| (0..n).map(|_| rng::normal(&mut r)).collect::<Vec<f64>>();
    let batch: Vec<Sequence> = (0..2)
        .map(|_| Sequence {
            obs: (0..6).map(|_| row(10)).collect(),
            act: (0..6).map(|_| row(3)).collect(),
            eps: (0..6).map(|_| row(2)).collect(),
        })
        .collect();
    let (_, grad) = loss_and_grad(&p, &batch).unwrap();
    let eps = 1e-4;
    let mut worst: f64 = 0.0;
    for t in Tensor::ALL {
        let range = p.layout().range(t);
        let mut diff = 0.0;
        let mut na = 0.0;
        let mut nn = 0.0;
        for i in range {
            let mut plus = p.clone();
            plus.values_mut()[i] += eps;
            let mut minus = p.clone();
            minus.values_mut()[i] -= eps;
            let num = (surrogate_loss(&plus, &p, &batch).unwrap() - surrogate_loss(&minus, &p, &batch).unwrap()) / (2.0 * eps);
            diff += (grad[i] - num) * (grad[i] - num);
            na += grad[i] * grad[i];
            nn += num * num;
        }
        let scale = na.max(nn).sqrt();
        if scale > 0.0 {
            worst = worst.max(diff.sqrt() / scale);
        }
    }
    worst
}

#[test]
fn criterion_4_world_model_numerics() {
    let f = fixture();
    let grad_err = gradient_check(0.0).max(gradient_check(0.7));
    let before = one_step_mse(&f.init, &f.data.test).unwrap();
    let after = one_step_mse(&f.wm, &f.data.test).unwrap();
    let drop = 1.0 - after / before;

    let small = build_dataset(
        TaskId::Cup,
        &DatasetConfig {
            demos_per_mode: 6,
            rollouts: 12,
            test_episodes: 2,
            ..DatasetConfig::default()
        },
        1,
    )
    .unwrap();
    let cfg = TrainConfig {
        max_updates: 40,
        eval_every: 10,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let a = train_world_model(&small.train, &cfg).unwrap();
    let b = train_world_model(&small.train, &cfg).unwrap();
    let same_bits = a.params.values().iter().zip(b.params.values()).all(|(x, y)| x.to_bits() == y.to_bits())
        && a.history == b.history;

    let pass = grad_err <= 1e-3 && drop >= 0.5 && same_bits;
    report(
        "criterion 4 (world-model numerics)",
        pass,
        format!(
            "max gradient rel. error {grad_err:.2e}; one-step MSE {before:.4} -> {after:.4} ({:.1}% drop); bit-reproducible {same_bits}",
            100.0 * drop
        ),
    );
    assert!(pass);
}

/// Minimum over every monotone alignment path, enumerated recursively.
fn dtw_brute(a: &[Action], b: &[Action], i: usize, j: usize) -> f64 {
    let d = |x: &Action, y: &Action| {
        let (p, q) = (x.to_array(), y.to_array());
        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
    };
    let c = d(&a[i], &b[j]);
    if i + 1 == a.len() && j + 1 == b.len() {
        return c;
    }
    let mut best = f64::INFINITY;
    if i + 1 < a.len() {
        best = best.min(dtw_brute(a, b, i + 1, j));
    }
    if j + 1 < b.len() {
        best = best.min(dtw_brute(a, b, i, j + 1));
    }
    if i + 1 < a.len() && j + 1 < b.len() {
        best = best.min(dtw_brute(a, b, i + 1, j + 1));
    }
    c + best
}

fn random_actions(r: &mut ChaCha8Rng, len: usize) -> Vec<Action> {
    (0..len)
        .map(|_| Action::new(r.random_range(-0.03..0.03), r.random_range(-0.03..0.03), r.random_range(0.0..1.0)))
        .collect()
}

#[test]
fn criterion_5_aggregation() {
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let mut dtw_ok = 0;
    for _ in 0..100 {
        let (n, m) = (r.random_range(1..7), r.random_range(1..7));
        let a = random_actions(&mut r, n);
        let b = random_actions(&mut r, m);
        let want = dtw_brute(&a, &b, 0, 0);
        let got = dtw_distance(&a, &b, None).unwrap();
        if (want - got).abs() <= 1e-12 * (1.0 + want) {
            dtw_ok += 1;
        }
    }

    let mut monotone = 0;
    for s in 0..20u64 {
        let n = r.random_range(10..25);
        let plans: Vec<ActionPlan> = (0..n)
            .map(|_| {
                let len = r.random_range(6..14);
                ActionPlan::new(random_actions(&mut r, len))
            })
            .collect();
        let c = cluster_plans(&plans, 3, 20, s).unwrap();
        if c.inertia_history.windows(2).all(|w| w[1] <= w[0]) {
            monotone += 1;
        }
    }

    let demos = foreseer_core::env::generate_demos(TaskId::Cup, 20, &TaskId::Cup.demo_modes(), 2).unwrap();
    let policy = fit_policy(&demos, 2, 2).unwrap();
    let obs = observe(&WorldState::canonical(TaskId::Cup));
    let plans = foreseer_core::policy::sample_plans(&policy, &obs, 100, 9);
    let c = cluster_plans(&plans, 2, 20, 9).unwrap();
    let pur = purity(&c, &plans);

    let pass = dtw_ok == 100 && monotone == 20 && pur == 1.0;
    report(
        "criterion 5 (aggregation)",
        pass,
        format!("DTW exact on {dtw_ok}/100 pairs; inertia monotone on {monotone}/20 sets; purity {pur:.3}"),
    );
    assert!(pass);
}

#[test]
fn criterion_6_metric_ablation() {
    let corpus = default_ablation_corpus(16);
    let rouge = ablation_report(&corpus, TextMetric::RougeL).unwrap();
    let cat = ablation_report(&corpus, TextMetric::CategoryMatch).unwrap();
    let pass = rouge.intra_scores.len() == 360
        && rouge.inter_scores.len() == 768
        && cat.separation_auc == 1.0
        && rouge.separation_auc < cat.separation_auc;
    report(
        "criterion 6 (metric ablation)",
        pass,
        format!(
            "{} intra / {} inter pairs; AUC category-match {:.3}, ROUGE-L {:.3}",
            rouge.intra_scores.len(),
            rouge.inter_scores.len(),
            cat.separation_auc,
            rouge.separation_auc
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_7_monitoring() {
    let f = fixture();
    let task = TaskSpec::builtin("cup-serve").unwrap();
    let episodes = &f.data.test[..40];
    let r = monitor_rollouts(episodes, &f.wm, &task, &OracleVerifier, MonitorSource::Imagined).unwrap();
    let (tpr, tnr) = (r.tpr.unwrap_or(0.0), r.tnr.unwrap_or(0.0));
    let pass = r.acc >= 0.75 && tpr >= 0.65 && tnr >= 0.65;
    report(
        "criterion 7 (monitoring)",
        pass,
        format!(
            "ACC {:.3}, TPR {tpr:.3}, TNR {tnr:.3} on {} episodes ({} failures)",
            r.acc,
            r.n,
            r.true_positives + r.false_negatives
        ),
    );
    assert!(pass);
}

fn random_predicate(r: &mut ChaCha8Rng) -> Predicate {
    match r.random_range(0..6) {
        0 => Predicate::Region(Region::ALL[r.random_range(0..6)]),
        1 => Predicate::GraspSucceeded(r.random_bool(0.5)),
        2 => Predicate::Toppled(r.random_bool(0.5)),
        3 => Predicate::CrushAtLeast(CrushLevel::ALL[r.random_range(0..3)]),
        4 => Predicate::Dropped(r.random_bool(0.5)),
        _ => Predicate::LiftHeight(if r.random_bool(0.5) { LiftHeight::High } else { LiftHeight::Low }),
    }
}

#[test]
fn criterion_8_verifier_invariants() {
    let all: Vec<BehaviorFeatures> = BehaviorFeatures::enumerate_all().collect();
    let mut texts: Vec<String> = all.iter().map(render).collect();
    let bijective = all.iter().all(|f| parse(&render(f)).as_ref() == Ok(f)) && {
        texts.sort();
        texts.dedup();
        texts.len() == all.len()
    };

    let mut r = ChaCha8Rng::seed_from_u64(8);
    let (mut dominance, mut invariance, mut with_allowed) = (0, 0, 0);
    for i in 0..1000 {
        let task = TaskSpec {
            id: format!("random-{i}"),
            text: String::new(),
            prefer: (0..r.random_range(1..4))
                .map(|_| WeightedPredicate {
                    predicate: random_predicate(&mut r),
                    weight: r.random_range(0.01..5.0),
                })
                .collect(),
            forbid: (0..r.random_range(0..4)).map(|_| random_predicate(&mut r)).collect(),
        };
        let k = r.random_range(1..9);
        let ns: Vec<Narration> = (0..k).map(|_| Narration::from_features(all[r.random_range(0..all.len())])).collect();
        let v = oracle_select(&ns, &task).unwrap();
        let any_allowed = ns.iter().any(|n| !task.is_forbidden(&n.features));
        if any_allowed {
            with_allowed += 1;
        }
        if !any_allowed || !task.is_forbidden(&ns[v.chosen_index].features) {
            dominance += 1;
        }
        let c = [r.random_range(0.001..1000.0), 0.5, 7.0][i % 3];
        let mut scaled = task.clone();
        for p in &mut scaled.prefer {
            p.weight *= c;
        }
        if oracle_select(&ns, &scaled).unwrap().chosen_index == v.chosen_index {
            invariance += 1;
        }
    }
    let pass = bijective && dominance == 1000 && invariance == 1000;
    report(
        "criterion 8 (verifier invariants)",
        pass,
        format!(
            "grammar bijective over {} tuples: {bijective}; forbid dominance {dominance}/1000 ({with_allowed} with an allowed candidate); scale invariance {invariance}/1000",
            all.len()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_9_steer_once_latency() {
    let f = fixture();
    let task = TaskSpec::builtin("cup-serve").unwrap();
    let obs = observe(&WorldState::reset(TaskId::Cup, ENV_SEED, 0));
    let config = SteeringConfig::default();
    let mut worst = Duration::ZERO;
    for i in 0..5 {
        let t = Instant::now();
        let (plan, trace) = steer_once(&obs, &f.policy, &f.wm, &config, &task, Selector::Verifier(&OracleVerifier), 0, i).unwrap();
        worst = worst.max(t.elapsed());
        assert_eq!(trace.candidates.len(), 6);
        assert_eq!(plan.map(|p| p.len()), Some(PLAN_HORIZON));
    }
    let pass = worst <= Duration::from_secs(2);
    report(
        "criterion 9 (steer_once latency)",
        pass,
        format!("slowest of 5 decisions {worst:.1?} (100 samples, K = 6, T = 64)"),
    );
    assert!(pass);
}
