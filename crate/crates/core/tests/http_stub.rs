//! Wire-protocol tests against a local TCP stub speaking just enough
//! HTTP/1.1 to exercise the chat-completions client: success, retryable
//! and permanent failures, provider-side blocking, and tool-call parsing.

use std::io::{Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use bailharness::conversation::{Conversation, Message};
use bailharness::provider::{CompletionOutcome, CompletionRequest, Provider, RetryPolicy};
use bailharness::{ModelEndpoint, SamplingParams};

/// Serves one canned response per expected request and counts arrivals.
/// The thread exits after `responses.len()` connections; extra requests
/// would block, so each test provisions exactly what it expects.
fn serve(responses: Vec<(u16, String)>) -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let count = Arc::new(AtomicUsize::new(0));
    let seen = Arc::clone(&count);
    thread::spawn(move || {
        for (status, body) in responses {
            let (mut stream, _) = match listener.accept() {
                Ok(pair) => pair,
                Err(_) => return,
            };
            read_request(&mut stream);
            seen.fetch_add(1, Ordering::SeqCst);
            let reason = match status {
                200 => "OK",
                404 => "Not Found",
                500 => "Internal Server Error",
                _ => "Status",
            };
            let response = format!(
                "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\n\
                 Content-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            let _ = stream.write_all(response.as_bytes());
        }
    });
    (format!("http://{addr}"), count)
}

/// Reads headers plus a Content-Length body so the client never sees a
/// reset while still transmitting.
fn read_request(stream: &mut std::net::TcpStream) {
    let mut buf = Vec::new();
    let mut byte = [0u8; 1];
    while !buf.ends_with(b"\r\n\r\n") {
        if stream.read(&mut byte).unwrap_or(0) == 0 {
            return;
        }
        buf.push(byte[0]);
    }
    let headers = String::from_utf8_lossy(&buf).to_lowercase();
    let content_length = headers
        .lines()
        .find_map(|line| line.strip_prefix("content-length:"))
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(0);
    let mut body = vec![0u8; content_length];
    let _ = stream.read_exact(&mut body);
}

fn endpoint(base_url: &str) -> ModelEndpoint {
    ModelEndpoint::new("stub-model", base_url, "stub-model")
}

fn request_for(endpoint: &ModelEndpoint) -> CompletionRequest {
    CompletionRequest {
        endpoint: endpoint.clone(),
        conversation: Conversation::with_messages("stub-conv", vec![Message::user("hello")]),
        params: SamplingParams::default(),
        tools: Vec::new(),
        sample_index: 0,
    }
}

fn fast_retries() -> RetryPolicy {
    RetryPolicy {
        max_attempts: 5,
        base_delay_ms: 0,
        max_delay_ms: 0,
    }
}

fn ok_body(content: &str) -> String {
    serde_json::json!({
        "choices": [{
            "finish_reason": "stop",
            "message": { "role": "assistant", "content": content }
        }]
    })
    .to_string()
}

#[test]
fn successful_completion_parses_content() {
    let (base_url, count) = serve(vec![(200, ok_body("hi there"))]);
    let provider = Provider::http();
    let endpoint = endpoint(&base_url);
    let outcome = provider.complete(&request_for(&endpoint));
    match outcome {
        CompletionOutcome::Ok { message } => assert_eq!(message.content, "hi there"),
        other => panic!("expected Ok, got {other:?}"),
    }
    assert_eq!(count.load(Ordering::SeqCst), 1);
}

#[test]
fn persistent_server_errors_exhaust_retries() {
    let body = r#"{"error": "boom"}"#.to_string();
    let responses = vec![(500, body.clone()); 5];
    let (base_url, count) = serve(responses);
    let provider = Provider::http().with_retry(fast_retries());
    let endpoint = endpoint(&base_url);
    let outcome = provider.complete(&request_for(&endpoint));
    match outcome {
        CompletionOutcome::Failed { reason, attempts } => {
            assert_eq!(reason, "http-500");
            assert_eq!(attempts, 5);
        }
        other => panic!("expected Failed, got {other:?}"),
    }
    assert_eq!(count.load(Ordering::SeqCst), 5);
}

#[test]
fn transient_error_then_success_recovers() {
    let (base_url, count) = serve(vec![
        (500, r#"{"error": "flaky"}"#.to_string()),
        (200, ok_body("recovered")),
    ]);
    let provider = Provider::http().with_retry(fast_retries());
    let endpoint = endpoint(&base_url);
    let outcome = provider.complete(&request_for(&endpoint));
    match outcome {
        CompletionOutcome::Ok { message } => assert_eq!(message.content, "recovered"),
        other => panic!("expected Ok, got {other:?}"),
    }
    assert_eq!(count.load(Ordering::SeqCst), 2);
}

#[test]
fn content_filter_finish_reason_is_blocked() {
    let body = serde_json::json!({
        "choices": [{ "finish_reason": "content_filter", "message": null }]
    })
    .to_string();
    let (base_url, _) = serve(vec![(200, body)]);
    let provider = Provider::http();
    let endpoint = endpoint(&base_url);
    match provider.complete(&request_for(&endpoint)) {
        CompletionOutcome::Blocked { reason } => assert_eq!(reason, "content-filter"),
        other => panic!("expected Blocked, got {other:?}"),
    }
}

#[test]
fn client_errors_fail_without_retrying() {
    let (base_url, count) = serve(vec![(404, r#"{"error": "nope"}"#.to_string()); 2]);
    let provider = Provider::http().with_retry(fast_retries());
    let endpoint = endpoint(&base_url);
    match provider.complete(&request_for(&endpoint)) {
        CompletionOutcome::Failed { reason, attempts } => {
            assert_eq!(reason, "http-404");
            assert_eq!(attempts, 1);
        }
        other => panic!("expected Failed, got {other:?}"),
    }
    assert_eq!(count.load(Ordering::SeqCst), 1);
}

#[test]
fn undecodable_payload_fails_permanently() {
    let (base_url, count) = serve(vec![(200, "not json at all".to_string()); 2]);
    let provider = Provider::http().with_retry(fast_retries());
    let endpoint = endpoint(&base_url);
    match provider.complete(&request_for(&endpoint)) {
        CompletionOutcome::Failed { reason, attempts } => {
            assert!(reason.starts_with("decode-error"), "reason: {reason}");
            assert_eq!(attempts, 1);
        }
        other => panic!("expected Failed, got {other:?}"),
    }
    assert_eq!(count.load(Ordering::SeqCst), 1);
}

#[test]
fn tool_calls_round_trip_through_the_wire_format() {
    let body = serde_json::json!({
        "choices": [{
            "finish_reason": "tool_calls",
            "message": {
                "role": "assistant",
                "content": null,
                "tool_calls": [{
                    "type": "function",
                    "function": { "name": "switchconversation_tool", "arguments": "{}" }
                }]
            }
        }]
    })
    .to_string();
    let (base_url, _) = serve(vec![(200, body)]);
    let provider = Provider::http();
    let endpoint = endpoint(&base_url);
    match provider.complete(&request_for(&endpoint)) {
        CompletionOutcome::Ok { message } => {
            assert_eq!(message.tool_calls.len(), 1);
            assert_eq!(message.tool_calls[0].name, "switchconversation_tool");
            assert_eq!(message.content, "");
        }
        other => panic!("expected Ok, got {other:?}"),
    }
}

#[test]
fn unreachable_endpoint_reports_transport_failure() {
    // Port 9 (discard) refuses connections on this host.
    let provider = Provider::http().with_retry(RetryPolicy {
        max_attempts: 2,
        base_delay_ms: 0,
        max_delay_ms: 0,
    });
    let endpoint = endpoint("http://127.0.0.1:9");
    match provider.complete(&request_for(&endpoint)) {
        CompletionOutcome::Failed { reason, attempts } => {
            assert!(reason.starts_with("transport:"), "reason: {reason}");
            assert_eq!(attempts, 2);
        }
        other => panic!("expected Failed, got {other:?}"),
    }
}
