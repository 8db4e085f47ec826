mod support;

use foreseer::client::{ClientConfig, HttpVerifier, WireRequest, WireResponse};
use foreseer_core::env::{Observation, Region};
use foreseer_core::verifier::{
    oracle_select, BehaviorFeatures, NarrateRequest, Narration, OracleVerifier, TaskSpec, VerifierBackend,
};
use foreseer_core::Error;
use rand::{Rng, SeedableRng};
use support::{dead_endpoint, MockServer};

fn client(url: &str) -> HttpVerifier {
    HttpVerifier::new(&ClientConfig {
        endpoint: Some(url.to_string()),
        token: Some("s3cret".into()),
        timeout_ms: 5_000,
        ..ClientConfig::default()
    })
    .unwrap()
}

fn random_narrations(r: &mut impl Rng, k: usize) -> Vec<Narration> {
    let all: Vec<BehaviorFeatures> = BehaviorFeatures::enumerate_all().collect();
    (0..k).map(|_| Narration::from_features(all[r.random_range(0..all.len())])).collect()
}

#[test]
fn select_agrees_with_oracle_on_grammar_text() {
    let server = MockServer::oracle();
    let c = client(&server.url);
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    for i in 0..40 {
        let task = TaskSpec::builtin(TaskSpec::BUILTIN_IDS[i % 4]).unwrap();
        let ns = random_narrations(&mut r, 6);
        let remote = c.select(&ns, &task).unwrap();
        let local = oracle_select(&ns, &task).unwrap();
        assert_eq!(remote.chosen_index, local.chosen_index);
        assert_eq!(remote.chosen_ok(), local.chosen_ok());
        // rank only: one winner scored 1, the rest 0
        let ones = remote.per_candidate.iter().filter(|c| c.score == 1.0).count();
        assert_eq!(ones, 1);
    }
}

#[test]
fn narrate_and_monitor_over_the_wire() {
    let server = MockServer::oracle();
    let c = client(&server.url);
    let frames = vec![Observation::zeros(); 16];
    let reqs: Vec<NarrateRequest> = (0..6)
        .map(|i| NarrateRequest {
            rollout_id: format!("r{i}"),
            frames: frames.clone(),
        })
        .collect();
    let got = c.narrate_many(&reqs).unwrap();
    let want = OracleVerifier.narrate_many(&reqs).unwrap();
    assert_eq!(got, want);

    let task = TaskSpec::builtin("cup-serve").unwrap();
    let handle = Narration::from_features(BehaviorFeatures::clean_grasp(Region::Handle));
    let rim = Narration::from_features(BehaviorFeatures::clean_grasp(Region::Rim));
    assert!(c.monitor(&handle, &task).unwrap().ok);
    assert!(!c.monitor(&rim, &task).unwrap().ok);

    let seen = server.seen.lock().unwrap();
    assert!(seen.auth.iter().all(|a| a.as_deref() == Some("Bearer s3cret")));
    let narrate = seen
        .requests
        .iter()
        .find_map(|r| match r {
            WireRequest::Narrate { frames, grammar, .. } => Some((frames.len(), grammar.len())),
            _ => None,
        })
        .unwrap();
    assert_eq!(narrate.0, 16);
    assert!(narrate.1 > 0);
}

#[test]
fn request_json_shape() {
    let v = serde_json::to_value(WireRequest::Select {
        task: "t".into(),
        narrations: vec!["a".into()],
    })
    .unwrap();
    assert_eq!(v, serde_json::json!({"type": "select", "task": "t", "narrations": ["a"]}));
    let r: WireResponse = serde_json::from_str(r#"{"type":"verdict","ok":true,"rationale":"fine"}"#).unwrap();
    assert_eq!(
        r,
        WireResponse::Verdict {
            choice: None,
            ok: Some(true),
            rationale: "fine".into()
        }
    );
}

#[test]
fn unreachable_endpoint_is_a_backend_error() {
    let c = client(&dead_endpoint());
    let ns = vec![Narration::from_features(BehaviorFeatures::clean_grasp(Region::Handle))];
    let e = c.select(&ns, &TaskSpec::builtin("cup-serve").unwrap()).unwrap_err();
    assert!(matches!(e, Error::Backend { .. }), "{e:?}");
}

#[test]
fn missing_endpoint_is_a_config_error() {
    let e = HttpVerifier::new(&ClientConfig::default()).err().unwrap();
    assert!(matches!(e, Error::Config(_)));
}

#[test]
fn server_error_is_retried_once() {
    let calls = std::sync::atomic::AtomicUsize::new(0);
    let server = MockServer::start(move |r| {
        if calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst) == 0 {
            (503, "{}".into())
        } else {
            (200, serde_json::to_string(&support::oracle_reply(r)).unwrap())
        }
    });
    let c = client(&server.url);
    let ns = vec![Narration::from_features(BehaviorFeatures::clean_grasp(Region::Handle))];
    assert!(c.monitor(&ns[0], &TaskSpec::builtin("cup-serve").unwrap()).unwrap().ok);
    assert_eq!(server.request_count(), 2);
}

#[test]
fn client_errors_are_not_retried() {
    let server = MockServer::start(|_| (401, r#"{"error":"bad token"}"#.into()));
    let c = client(&server.url);
    let n = Narration::from_features(BehaviorFeatures::clean_grasp(Region::Handle));
    match c.monitor(&n, &TaskSpec::builtin("cup-serve").unwrap()).unwrap_err() {
        Error::Backend { raw, message } => {
            assert!(message.contains("401"));
            assert_eq!(raw.as_deref(), Some(r#"{"error":"bad token"}"#));
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(server.request_count(), 1);
}

#[test]
fn protocol_violations_are_rejected() {
    let off_grammar = MockServer::start(|r| match r {
        WireRequest::Narrate { rollout_id, .. } => (
            200,
            serde_json::to_string(&WireResponse::Narration {
                rollout_id: rollout_id.clone(),
                text: "the robot did something".into(),
            })
            .unwrap(),
        ),
        _ => (200, "not json".into()),
    });
    let c = client(&off_grammar.url);
    let req = NarrateRequest {
        rollout_id: "x".into(),
        frames: vec![Observation::zeros(); 16],
    };
    match c.narrate(&req).unwrap_err() {
        Error::Backend { raw, .. } => assert_eq!(raw.as_deref(), Some("the robot did something")),
        other => panic!("{other:?}"),
    }
    let n = Narration::from_features(BehaviorFeatures::clean_grasp(Region::Handle));
    match c.monitor(&n, &TaskSpec::builtin("cup-serve").unwrap()).unwrap_err() {
        Error::Backend { raw, .. } => assert_eq!(raw.as_deref(), Some("not json")),
        other => panic!("{other:?}"),
    }

    let wrong_id = MockServer::start(|_| {
        (
            200,
            serde_json::to_string(&WireResponse::Narration {
                rollout_id: "other".into(),
                text: String::new(),
            })
            .unwrap(),
        )
    });
    assert!(client(&wrong_id.url).narrate(&req).is_err());

    let out_of_range = MockServer::start(|_| {
        (
            200,
            r#"{"type":"verdict","choice":9,"rationale":""}"#.into(),
        )
    });
    assert!(client(&out_of_range.url)
        .select(&[n.clone(), n], &TaskSpec::builtin("cup-serve").unwrap())
        .is_err());
}
