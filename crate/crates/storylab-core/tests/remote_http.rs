//! Remote LM client against a scripted local HTTP server: wire format,
//! error mapping, and retry behavior.

mod common;

use std::time::Duration;

use common::{StubResponse, StubServer};
use serde_json::Value;
use storylab_core::lm::{RetryPolicy, Termination};
use storylab_core::{generate_k, GenerationPolicy, Generator, RemoteLm, RemoteLmConfig, Scorer};

fn fast_client(url: &str) -> RemoteLm {
    RemoteLm::new(RemoteLmConfig {
        base_url: url.to_string(),
        timeout: Duration::from_secs(5),
        retry: RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::from_millis(5),
        },
    })
}

#[test]
fn generate_round_trip_sends_policy_fields_and_maps_finish_reason() {
    let server = StubServer::start(|_, req| {
        assert_eq!(req.path, "/generate");
        let body: Value = serde_json::from_str(&req.body).unwrap();
        assert_eq!(body["prompt"], "Once upon a");
        assert_eq!(body["mode"], "nucleus");
        assert_eq!(body["top_p"], 0.95);
        assert_eq!(body["temperature"], 1.0);
        assert_eq!(body["max_new_tokens"], 300);
        assert_eq!(body["seed"], 42);
        StubResponse::json(
            r#"{"completion": "time there was a fox", "token_count": 5, "finish_reason": "stop"}"#,
        )
    });
    let lm = fast_client(&server.url());
    let policy = GenerationPolicy::default().with_seed(42);
    let generation = lm.generate("Once upon a", &policy).unwrap();
    assert_eq!(generation.completion_text, "time there was a fox");
    assert_eq!(generation.token_count, 5);
    assert_eq!(generation.terminated_by, Termination::StopToken);
    assert_eq!(generation.policy.seed, 42);
    assert_eq!(server.hits(), 1);
}

#[test]
fn length_finish_reason_maps_to_max_len() {
    let server = StubServer::start(|_, _| {
        StubResponse::json(r#"{"completion": "and on", "token_count": 300, "finish_reason": "length"}"#)
    });
    let lm = fast_client(&server.url());
    let generation = lm.generate("story", &GenerationPolicy::default()).unwrap();
    assert_eq!(generation.terminated_by, Termination::MaxLen);
}

#[test]
fn unknown_finish_reason_is_malformed_and_not_retried() {
    let server = StubServer::start(|_, _| {
        StubResponse::json(r#"{"completion": "x", "token_count": 1, "finish_reason": "banana"}"#)
    });
    let lm = fast_client(&server.url());
    let err = lm.generate("story", &GenerationPolicy::default()).err().unwrap();
    assert!(matches!(
        err,
        storylab_core::lm::LmError::MalformedResponse { .. }
    ));
    assert_eq!(server.hits(), 1);
}

#[test]
fn score_round_trip_and_positive_log_prob_rejected() {
    let server = StubServer::start(|_, req| {
        assert_eq!(req.path, "/score");
        let body: Value = serde_json::from_str(&req.body).unwrap();
        if body["text"] == "good story" {
            StubResponse::json(r#"{"log_prob": -12.5}"#)
        } else {
            StubResponse::json(r#"{"log_prob": 3.0}"#)
        }
    });
    let lm = fast_client(&server.url());
    assert_eq!(lm.log_prob("good story").unwrap(), -12.5);
    let err = lm.log_prob("impossible story").err().unwrap();
    assert!(matches!(
        err,
        storylab_core::lm::LmError::MalformedResponse { .. }
    ));
}

#[test]
fn server_errors_retry_then_succeed() {
    let server = StubServer::start(|index, _| {
        if index < 2 {
            StubResponse::status(503, r#"{"error": "warming up"}"#)
        } else {
            StubResponse::json(r#"{"log_prob": -1.0}"#)
        }
    });
    let lm = fast_client(&server.url());
    assert_eq!(lm.log_prob("text").unwrap(), -1.0);
    assert_eq!(server.hits(), 3);
}

#[test]
fn client_errors_do_not_retry() {
    let server = StubServer::start(|_, _| StubResponse::status(404, "no such route"));
    let lm = fast_client(&server.url());
    let err = lm.log_prob("text").err().unwrap();
    match err {
        storylab_core::lm::LmError::Remote { code, message } => {
            assert_eq!(code, 404);
            assert!(message.contains("no such route"));
        }
        other => panic!("expected Remote error, got {other:?}"),
    }
    assert_eq!(server.hits(), 1);
}

#[test]
fn exhausted_retries_surface_the_last_error() {
    let server = StubServer::start(|_, _| StubResponse::status(500, "down"));
    let lm = fast_client(&server.url());
    let err = lm.log_prob("text").err().unwrap();
    assert!(matches!(
        err,
        storylab_core::lm::LmError::Remote { code: 500, .. }
    ));
    assert_eq!(server.hits(), 3);
}

#[test]
fn timeout_is_classified_and_retried() {
    let server = StubServer::start(|index, _| {
        let mut resp = StubResponse::json(r#"{"log_prob": -2.0}"#);
        if index == 0 {
            resp.delay = Some(Duration::from_millis(900));
        }
        resp
    });
    let lm = RemoteLm::new(RemoteLmConfig {
        base_url: server.url(),
        timeout: Duration::from_millis(250),
        retry: RetryPolicy {
            max_attempts: 2,
            base_delay: Duration::from_millis(5),
        },
    });
    assert_eq!(lm.log_prob("text").unwrap(), -2.0);
    assert_eq!(server.hits(), 2);
}

#[test]
fn generate_k_issues_one_request_per_completion_with_distinct_seeds() {
    let server = StubServer::start(|index, req| {
        let body: Value = serde_json::from_str(&req.body).unwrap();
        let seed = body["seed"].as_u64().unwrap();
        StubResponse::json(format!(
            r#"{{"completion": "c{index} seed {seed}", "token_count": 3, "finish_reason": "stop"}}"#
        ))
    });
    let lm = fast_client(&server.url());
    let mut policy = GenerationPolicy::default().with_seed(7);
    policy.k = 4;
    let generations = generate_k(&lm, "story-0001", "Once upon", &policy).unwrap();
    assert_eq!(generations.len(), 4);
    assert_eq!(server.hits(), 4);
    let seeds: std::collections::HashSet<u64> =
        generations.iter().map(|g| g.policy.seed).collect();
    assert_eq!(seeds.len(), 4, "per-completion seeds must differ");
    for g in &generations {
        assert_eq!(g.story_id, "story-0001");
        assert_ne!(g.policy.seed, 7, "call seed must be derived, not the base");
    }
}
