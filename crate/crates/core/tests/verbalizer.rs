mod common;

use std::time::Duration;

use attrbench_core::metrics::{aggregate, MetricResult};
use attrbench_core::verbalizer::{
    self, score_lines, table_lines, template_fallback, verbalize_many, LlmConfig,
    VerbalizationRequest,
};
use attrbench_core::{Attribution, Error, Method, Metric, MetricTable, Scope};
use common::{echo_user_prompt, StubServer};

fn attribution() -> Attribution {
    Attribution::new(
        "m",
        Method::PartitionShap,
        1,
        vec![0.9, -0.8, 0.0, 0.25],
        vec!["movie".into(), "not".into(), "a".into(), "good".into()],
    )
}

fn request() -> VerbalizationRequest {
    VerbalizationRequest::attribution(attribution(), "movie not a good", "positive")
}

fn table() -> MetricTable {
    let r = |m, v| MetricResult::new(m, v, Scope::Instance);
    aggregate(
        &[Method::Saliency, Method::Lime],
        &[Metric::Complexity, Metric::SoftComp, Metric::Auprc],
        &[
            (Method::Saliency, r(Metric::Complexity, 0.1)),
            (Method::Lime, r(Metric::Complexity, 0.9)),
            (Method::Saliency, r(Metric::SoftComp, 0.1)),
            (Method::Lime, r(Metric::SoftComp, 0.9)),
            (Method::Saliency, r(Metric::Auprc, 0.5)),
            (Method::Lime, r(Metric::Auprc, 0.5)),
        ],
    )
    .unwrap()
}

fn config(server: &StubServer) -> LlmConfig {
    common::set_test_key();
    LlmConfig {
        endpoint: format!("{}/v1/chat/completions", server.url),
        api_key_env: common::TEST_KEY_ENV.into(),
        retry_backoff_ms: 1,
        ..LlmConfig::default()
    }
}

#[test]
fn request_has_the_chat_completion_shape() {
    let server = StubServer::start(|req, _| (200, echo_user_prompt(req)));
    let cfg = LlmConfig {
        model: "small-chat-model".into(),
        ..config(&server)
    };
    let out = verbalizer::verbalize_attribution(&request(), &cfg).unwrap();
    assert!(!out.fallback);
    let sent = server.recorded();
    assert_eq!(sent.len(), 1);
    assert_eq!(sent[0].path, "/v1/chat/completions");
    assert_eq!(sent[0].header("authorization"), Some("Bearer test-key-123"));
    let body = sent[0].json();
    assert_eq!(body["model"], "small-chat-model");
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["max_tokens"], 512);
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][1]["role"], "user");
    // the key is sent only as a header
    assert!(!sent[0].body.contains("test-key-123"));
    assert!(!serde_json::to_string(&cfg)
        .unwrap()
        .contains("test-key-123"));
}

#[test]
fn echoed_attribution_prompt_contains_every_pair() {
    let server = StubServer::start(|req, _| (200, echo_user_prompt(req)));
    let out = verbalizer::verbalize_attribution(&request(), &config(&server)).unwrap();
    for pair in score_lines(&attribution()) {
        assert!(out.text.contains(&pair), "{pair} missing from {}", out.text);
    }
    assert!(out.text.contains("movie: +0.9000"));
    assert!(out.text.contains("not: -0.8000"));
    assert!(out
        .prompt
        .system
        .to_lowercase()
        .contains("do not speculate"));
}

#[test]
fn echoed_metrics_prompt_contains_cells_and_arrows() {
    let server = StubServer::start(|req, _| (200, echo_user_prompt(req)));
    let t = table();
    let out = verbalizer::verbalize_metrics(&t, &config(&server)).unwrap();
    for line in table_lines(&t) {
        assert!(out.text.contains(&line), "{line} missing");
    }
    assert!(out.text.contains("saliency, complexity ↓, 0.1000 *"));
    assert!(out.text.contains("lime, soft_comp ↑, 0.9000 *"));
    for m in &t.metrics {
        assert!(
            out.text.contains(m.definition()),
            "definition of {m} missing"
        );
    }
}

#[test]
fn transient_errors_are_retried() {
    let server = StubServer::start(|req, i| {
        if i < 2 {
            (503, r#"{"error": "busy"}"#.into())
        } else {
            (200, echo_user_prompt(req))
        }
    });
    let out = verbalizer::verbalize_attribution(&request(), &config(&server)).unwrap();
    assert!(!out.fallback);
    assert_eq!(server.count(), 3);
}

#[test]
fn exhausted_retries_fall_back_to_the_template() {
    let server = StubServer::start(|_, _| (429, r#"{"error": "slow down"}"#.into()));
    let out = verbalizer::verbalize_attribution(&request(), &config(&server)).unwrap();
    assert!(out.fallback);
    assert_eq!(out.text, template_fallback(&request()).unwrap());
    assert_eq!(server.count(), 3, "one call plus two retries");
}

#[test]
fn client_errors_are_not_retried() {
    let server = StubServer::start(|_, _| (401, r#"{"error": "bad key"}"#.into()));
    let cfg = LlmConfig {
        fallback: false,
        ..config(&server)
    };
    match verbalizer::verbalize_attribution(&request(), &cfg) {
        Err(Error::Api { status, body }) => {
            assert_eq!(status, 401);
            assert!(body.contains("bad key"));
        }
        other => panic!("expected an API error, got {other:?}"),
    }
    assert_eq!(server.count(), 1);
}

#[test]
fn slow_server_times_out_into_the_fallback() {
    let server = StubServer::start(|req, _| {
        std::thread::sleep(Duration::from_millis(1500));
        (200, echo_user_prompt(req))
    });
    let cfg = LlmConfig {
        timeout_secs: 1,
        max_retries: 0,
        ..config(&server)
    };
    let out = verbalizer::verbalize_attribution(&request(), &cfg).unwrap();
    assert!(out.fallback);
    let strict = LlmConfig {
        fallback: false,
        ..cfg
    };
    assert!(matches!(
        verbalizer::verbalize_attribution(&request(), &strict),
        Err(Error::Timeout)
    ));
}

#[test]
fn malformed_reply_is_an_api_error() {
    let server = StubServer::start(|_, _| (200, r#"{"choices": []}"#.into()));
    let cfg = LlmConfig {
        fallback: false,
        max_retries: 0,
        ..config(&server)
    };
    assert!(matches!(
        verbalizer::verbalize_attribution(&request(), &cfg),
        Err(Error::Api { status: 200, .. })
    ));
}

#[test]
fn missing_key_fails_before_any_request() {
    let server = StubServer::start(|req, _| (200, echo_user_prompt(req)));
    let cfg = LlmConfig {
        api_key_env: "ATTRBENCH_TEST_KEY_THAT_IS_NEVER_SET".into(),
        ..config(&server)
    };
    assert!(matches!(
        verbalizer::verbalize_attribution(&request(), &cfg),
        Err(Error::Config(_))
    ));
    assert_eq!(server.count(), 0);
}

#[test]
fn many_requests_keep_their_order() {
    let server = StubServer::start(|req, _| (200, echo_user_prompt(req)));
    let requests: Vec<_> = ["alpha", "beta", "gamma", "delta", "epsilon"]
        .iter()
        .map(|w| {
            let a = Attribution::new(*w, Method::Lime, 0, vec![1.0], vec![w.to_string()]);
            VerbalizationRequest::attribution(a, *w, "negative")
        })
        .collect();
    let out = verbalize_many(&requests, &config(&server));
    assert_eq!(out.len(), 5);
    for (w, v) in ["alpha", "beta", "gamma", "delta", "epsilon"]
        .iter()
        .zip(out)
    {
        assert!(v.unwrap().text.contains(&format!("{w}: +1.0000")));
    }
    assert_eq!(server.count(), 5);
}

#[test]
fn fallback_is_a_pure_function_of_the_request() {
    let a = template_fallback(&request()).unwrap();
    let b = template_fallback(&request()).unwrap();
    assert_eq!(a, b);
    assert!(a.contains("\"movie\" (+0.9000)"));
    assert!(a.contains("\"not\" (-0.8000)"));
    let m = template_fallback(&VerbalizationRequest::metrics(table())).unwrap();
    assert_eq!(m.matches("On ").count(), 3);
    assert!(m.contains("the best methods are saliency and lime with 0.5000"));
}
