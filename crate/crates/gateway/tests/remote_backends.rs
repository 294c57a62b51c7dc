//! The blocking HTTP backend adapters against loopback servers. These run on
//! plain test threads: blocking reqwest must stay off async runtime threads.

use pseudonym::backend::{argmax, ChatClient, ChatMessage, TokenPredictor};
use pseudonym_gateway::{HttpChatClient, HttpTokenPredictor};
use serde_json::json;

/// Host `router` on a dedicated runtime thread and return its base URL.
fn host(router: axum::Router) -> String {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let runtime = tokio::runtime::Builder::new_current_thread()
            .enable_all()
            .build()
            .expect("runtime");
        runtime.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(format!("http://{}", listener.local_addr().unwrap()))
                .unwrap();
            axum::serve(listener, router).await.unwrap();
        });
    });
    rx.recv().expect("server address")
}

#[test]
fn http_chat_client_round_trips_content() {
    let router = axum::Router::new().route(
        "/v1/chat/completions",
        axum::routing::post(|axum::Json(body): axum::Json<serde_json::Value>| async move {
            let content = body["messages"][0]["content"].as_str().unwrap_or_default();
            axum::Json(json!({
                "choices": [{"message": {"role": "assistant", "content": format!("echo: {content}")}}]
            }))
        }),
    );
    let base = host(router);
    let client = HttpChatClient::new(&base, "local-small", None);
    let reply = client.complete(&[ChatMessage::user("ping")]).unwrap();
    assert_eq!(reply, "echo: ping");
}

#[test]
fn http_chat_client_surfaces_status_errors() {
    let router = axum::Router::new().route(
        "/v1/chat/completions",
        axum::routing::post(|| async { (axum::http::StatusCode::TOO_MANY_REQUESTS, "slow down") }),
    );
    let base = host(router);
    let client = HttpChatClient::new(&base, "local-small", None);
    let err = client.complete(&[ChatMessage::user("ping")]).unwrap_err();
    assert!(matches!(
        err,
        pseudonym::ChatError::Status { status: 429, .. }
    ));
}

#[test]
fn remote_predictor_adapts_logprobs_into_a_distribution() {
    // ln(0.8) and ln(0.2): the adapter renormalizes whatever mass comes back.
    let router = axum::Router::new().route(
        "/v1/completions",
        axum::routing::post(|| async {
            axum::Json(json!({
                "choices": [{
                    "text": "Alice",
                    "finish_reason": "length",
                    "logprobs": {"top_logprobs": [{
                        "Alice": -0.2231435513,
                        "Bob": -1.6094379124
                    }]}
                }]
            }))
        }),
    );
    let base = host(router);
    let mut predictor = HttpTokenPredictor::new(&base, "local-base");

    let distribution = predictor.next(&[], "Repeat: ").unwrap();
    assert!((distribution.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    let best = argmax(&distribution);
    assert_eq!(predictor.vocab()[best], "Alice");

    let alice = predictor.token_id("Alice");
    let score = predictor.score(&[], alice).unwrap();
    assert!((score - (-0.8_f64.ln())).abs() < 1e-6);

    // Prefix ids detokenize through the growable vocabulary.
    let spliced = predictor.token_id("Greta");
    let again = predictor.next(&[spliced], "Repeat: ").unwrap();
    assert_eq!(again.len(), predictor.vocab().len());
}
