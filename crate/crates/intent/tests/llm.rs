mod common;

use std::time::Duration;

use common::{completion, query_of, Stub};
use intent::llm::{classify_batch, ItemStatus, LlmClient, LlmError, ModelEndpoint};
use intent_core::prompt::{FewShotBank, PromptAssets, Scenario};
use intent_core::{IntentLabel, Query};

fn client(ep: ModelEndpoint) -> LlmClient {
    LlmClient::with_api_key(ep, "test-key".into()).unwrap()
}

fn queries(n: usize) -> Vec<Query> {
    (0..n).map(|i| Query::new(Some(format!("q{i}")), &format!("query {i}")).unwrap()).collect()
}

#[test]
fn echoes_completion_text() {
    let stub = Stub::start(Duration::ZERO, |_, _| (200, completion("Navigational")));
    let r = client(stub.endpoint()).complete("hello").unwrap();
    assert_eq!(r.text, "Navigational");
    assert_eq!(r.attempts, 1);
    assert_eq!((r.prompt_tokens, r.completion_tokens), (Some(100), Some(3)));
}

#[test]
fn retries_rate_limits_then_succeeds() {
    let stub = Stub::start(Duration::ZERO, |i, _| {
        if i < 2 {
            (429, "{}".into())
        } else {
            (200, completion("informational"))
        }
    });
    let r = client(stub.endpoint()).complete("x").unwrap();
    assert_eq!(r.attempts, 3);
    assert_eq!(stub.requests(), 3);
}

#[test]
fn retries_server_errors() {
    let stub = Stub::start(Duration::ZERO, |i, _| if i == 0 { (503, "busy".into()) } else { (200, completion("transactional")) });
    assert_eq!(client(stub.endpoint()).complete("x").unwrap().attempts, 2);
}

#[test]
fn auth_failure_is_not_retried() {
    let stub = Stub::start(Duration::ZERO, |_, _| (401, r#"{"error":"bad key"}"#.into()));
    let err = client(stub.endpoint()).complete("x").unwrap_err();
    assert!(matches!(err, LlmError::Auth(_)), "{err:?}");
    assert_eq!(stub.requests(), 1);
}

#[test]
fn validation_errors_are_not_retried() {
    let stub = Stub::start(Duration::ZERO, |_, _| (400, "bad request".into()));
    let err = client(stub.endpoint()).complete("x").unwrap_err();
    assert!(matches!(err, LlmError::Http { status: 400, attempts: 1, .. }), "{err:?}");
    assert_eq!(stub.requests(), 1);
}

#[test]
fn rate_limit_exhaustion() {
    let stub = Stub::start(Duration::ZERO, |_, _| (429, "{}".into()));
    let ep = ModelEndpoint { max_retries: 2, ..stub.endpoint() };
    let err = client(ep).complete("x").unwrap_err();
    assert_eq!(err, LlmError::RateLimited { attempts: 3 });
    assert_eq!(stub.requests(), 3);
}

#[test]
fn malformed_body() {
    let stub = Stub::start(Duration::ZERO, |_, _| (200, "not json".into()));
    assert!(matches!(client(stub.endpoint()).complete("x"), Err(LlmError::MalformedResponse(_))));
}

#[test]
fn request_timeout() {
    let stub = Stub::start(Duration::from_millis(600), |_, _| (200, completion("informational")));
    let ep = ModelEndpoint { timeout_secs: 0.2, max_retries: 1, ..stub.endpoint() };
    let err = client(ep).complete("x").unwrap_err();
    assert_eq!(err, LlmError::Timeout { attempts: 2 });
}

#[test]
fn connection_refused_is_a_transport_error() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    drop(listener);
    let ep = ModelEndpoint { max_retries: 1, backoff_base_ms: 1, ..ModelEndpoint::new(&url, "m") };
    assert!(matches!(client(ep).complete("x"), Err(LlmError::Transport { attempts: 2, .. })));
}

#[test]
fn missing_key_is_an_auth_error() {
    let ep = ModelEndpoint { api_key_env: "INTENT_TEST_KEY_THAT_IS_NOT_SET".into(), ..ModelEndpoint::new("http://localhost:1", "m") };
    assert!(matches!(LlmClient::from_env(ep), Err(LlmError::Auth(_))));
}

#[test]
fn constant_stub_batch() {
    let stub = Stub::start(Duration::ZERO, |_, _| (200, completion("informational")));
    let qs = queries(10);
    let (items, report) =
        classify_batch(&client(stub.endpoint()), Scenario::DefinitionsOnly, &qs, None, &PromptAssets::builtin()).unwrap();
    assert!(items.iter().all(|i| i.label == Some(IntentLabel::Informational)));
    assert_eq!((report.queries, report.parsed, report.oov_count, report.error_count), (10, 10, 0, 0));
    assert_eq!(report.prompt_tokens, 1000);
}

#[test]
fn oov_answers_are_counted_not_fatal() {
    let stub = Stub::start(Duration::ZERO, |_, prompt| {
        if query_of(prompt) == "query 3" {
            (200, completion("commercial"))
        } else {
            (200, completion("Transactional."))
        }
    });
    let qs = queries(10);
    let (items, report) = classify_batch(
        &client(stub.endpoint()),
        Scenario::DefinitionsKeywordsFewShot,
        &qs,
        Some(&FewShotBank::builtin()),
        &PromptAssets::builtin(),
    )
    .unwrap();
    assert_eq!((report.oov_count, report.parsed, report.error_count), (1, 9, 0));
    assert_eq!(items[3].status, ItemStatus::Oov);
    assert_eq!(items[3].label, None);
    assert_eq!(items.iter().filter(|i| i.label == Some(IntentLabel::Transactional)).count(), 9);
}

#[test]
fn failures_are_recorded_per_item() {
    let stub = Stub::start(Duration::ZERO, |_, prompt| {
        if query_of(prompt) == "query 1" {
            (400, "rejected".into())
        } else {
            (200, completion("navigational"))
        }
    });
    let (items, report) =
        classify_batch(&client(stub.endpoint()), Scenario::DefinitionsOnly, &queries(4), None, &PromptAssets::builtin())
            .unwrap();
    assert_eq!((report.error_count, report.parsed), (1, 3));
    assert_eq!(items[1].status, ItemStatus::Error);
    assert_eq!(report.errors.values().sum::<usize>(), 1);
}

#[test]
fn concurrency_cap_and_order() {
    let stub = Stub::start(Duration::from_millis(30), |_, prompt| {
        let q = query_of(prompt);
        let n: usize = q.trim_start_matches("query ").parse().unwrap();
        (200, completion(IntentLabel::from_index(n % 3).unwrap().as_str()))
    });
    let ep = ModelEndpoint { max_concurrent: 2, ..stub.endpoint() };
    let qs = queries(12);
    let (items, report) = classify_batch(&client(ep), Scenario::DefinitionsOnly, &qs, None, &PromptAssets::builtin()).unwrap();
    assert!(stub.max_in_flight() <= 2, "max in flight {}", stub.max_in_flight());
    assert_eq!(stub.max_in_flight(), 2);
    assert_eq!(report.max_concurrent, 2);
    for (i, item) in items.iter().enumerate() {
        assert_eq!(item.query, qs[i]);
        assert_eq!(item.label, IntentLabel::from_index(i % 3));
    }
}

#[test]
fn output_independent_of_concurrency() {
    let answer = |_: usize, prompt: &str| {
        let n = query_of(prompt).len();
        (200, completion(["informational", "navigational", "transactional", "shopping"][n % 4]))
    };
    let stub = Stub::start(Duration::from_millis(2), answer);
    let qs: Vec<Query> = (0..20).map(|i| Query::parse(&"x".repeat(i + 1)).unwrap()).collect();
    let run = |c| {
        let ep = ModelEndpoint { max_concurrent: c, ..stub.endpoint() };
        let (items, _) = classify_batch(&client(ep), Scenario::DefinitionsKeywords, &qs, None, &PromptAssets::builtin()).unwrap();
        items.into_iter().map(|i| (i.query, i.label, i.status)).collect::<Vec<_>>()
    };
    assert_eq!(run(1), run(5));
}
