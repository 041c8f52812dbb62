//! A chat-completions endpoint with scripted misbehavior.
//!
//! Prompts steer the server: one containing `RATE` gets a 429 on its first
//! request, one containing `BAD` always gets a 400. Everything else is
//! answered with `echo:<prompt>` after a prompt-dependent delay.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

#[derive(Default)]
pub struct MockState {
    pub received: AtomicUsize,
    pub served: AtomicUsize,
    pub in_flight: AtomicUsize,
    pub max_in_flight: AtomicUsize,
    /// While set, requests stall and are never answered successfully.
    pub gate_closed: AtomicBool,
    pub per_prompt: Mutex<HashMap<String, usize>>,
    pub auth_headers: Mutex<Vec<String>>,
}

impl MockState {
    pub fn served_for(&self, prompt: &str) -> usize {
        self.per_prompt
            .lock()
            .unwrap()
            .get(prompt)
            .copied()
            .unwrap_or(0)
    }
}

struct InFlight<'a>(&'a MockState);

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}

async fn handle(
    State(state): State<Arc<MockState>>,
    headers: HeaderMap,
    Json(body): Json<Value>,
) -> Response {
    state.received.fetch_add(1, Ordering::SeqCst);
    if let Some(auth) = headers.get("authorization").and_then(|v| v.to_str().ok()) {
        state.auth_headers.lock().unwrap().push(auth.to_string());
    }
    let now = state.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    state.max_in_flight.fetch_max(now, Ordering::SeqCst);
    let _guard = InFlight(&state);

    let prompt = body["messages"][0]["content"]
        .as_str()
        .unwrap_or_default()
        .to_string();
    if state.gate_closed.load(Ordering::SeqCst) {
        tokio::time::sleep(Duration::from_secs(30)).await;
        return StatusCode::SERVICE_UNAVAILABLE.into_response();
    }
    if prompt.contains("BAD") {
        return (StatusCode::BAD_REQUEST, "poisoned prompt").into_response();
    }
    let seen = {
        let mut map = state.per_prompt.lock().unwrap();
        let n = map.entry(format!("request:{prompt}")).or_default();
        *n += 1;
        *n
    };
    if prompt.contains("RATE") && seen == 1 {
        return (
            StatusCode::TOO_MANY_REQUESTS,
            [("retry-after", "0")],
            "slow down",
        )
            .into_response();
    }
    let delay = prompt.bytes().map(u64::from).sum::<u64>() % 17;
    tokio::time::sleep(Duration::from_millis(5 + delay)).await;
    state.served.fetch_add(1, Ordering::SeqCst);
    *state
        .per_prompt
        .lock()
        .unwrap()
        .entry(prompt.clone())
        .or_default() += 1;
    Json(json!({
        "choices": [{"message": {"role": "assistant", "content": format!("echo:{prompt}")}, "finish_reason": "stop"}],
        "usage": {"prompt_tokens": 3, "completion_tokens": 2, "total_tokens": 5}
    }))
    .into_response()
}

/// Starts the server on an ephemeral port and returns its base URL.
pub async fn spawn() -> (String, Arc<MockState>) {
    let state = Arc::new(MockState::default());
    let app = Router::new()
        .route("/v1/chat/completions", post(handle))
        .with_state(state.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move {
        axum::serve(listener, app).await.unwrap();
    });
    (format!("http://{addr}"), state)
}
