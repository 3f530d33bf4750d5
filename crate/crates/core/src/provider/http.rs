//! Chat-completions HTTP backend.
//!
//! Speaks the common `POST {base_url}/chat/completions` shape: JSON body with
//! `model`, `messages`, sampling knobs, and optional `tools`; response parsed
//! from `choices[0].message`. Transport failures and 408/429/5xx are
//! retryable, other HTTP errors and undecodable payloads are not.

use std::time::Duration;

use serde_json::{json, Value};

use super::{CallError, CompletionBackend, CompletionOutcome, CompletionRequest};
use crate::conversation::{Message, ToolCall};

pub struct HttpBackend {
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new() -> Self {
        HttpBackend {
            client: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(120))
                .build()
                .expect("reqwest client with static configuration"),
        }
    }
}

impl Default for HttpBackend {
    fn default() -> Self {
        Self::new()
    }
}

/// Serializes the request into the wire body. Messages keep only the fields
/// the protocol knows about; bookkeeping such as `source_tag` stays local.
fn build_body(req: &CompletionRequest) -> Value {
    let messages: Vec<Value> = req
        .conversation
        .messages
        .iter()
        .map(|m| {
            let mut entry = json!({
                "role": m.role.as_str(),
                "content": m.content,
            });
            if !m.tool_calls.is_empty() {
                let calls: Vec<Value> = m
                    .tool_calls
                    .iter()
                    .map(|c| {
                        json!({
                            "type": "function",
                            "function": {"name": c.name, "arguments": c.arguments},
                        })
                    })
                    .collect();
                entry["tool_calls"] = Value::Array(calls);
            }
            entry
        })
        .collect();
    let mut body = json!({
        "model": req.endpoint.model_id,
        "messages": messages,
        "temperature": req.params.temperature,
        "top_p": req.params.top_p,
        "max_tokens": req.params.max_tokens,
    });
    if !req.tools.is_empty() {
        let tools: Vec<Value> = req
            .tools
            .iter()
            .map(|t| {
                json!({
                    "type": "function",
                    "function": {
                        "name": t.tool_name,
                        "description": t.description,
                        "parameters": t.parameters,
                    },
                })
            })
            .collect();
        body["tools"] = Value::Array(tools);
    }
    body
}

/// Decodes a 2xx payload into an outcome. A `content_filter` finish reason
/// becomes [`CompletionOutcome::Blocked`]; any structural surprise is a
/// permanent decode error since resending the same request cannot fix it.
fn parse_payload(text: &str) -> Result<CompletionOutcome, CallError> {
    let decode = |detail: String| CallError::Permanent(format!("decode-error: {detail}"));
    let payload: Value =
        serde_json::from_str(text).map_err(|e| decode(format!("invalid json: {e}")))?;
    let choice = payload
        .get("choices")
        .and_then(Value::as_array)
        .and_then(|c| c.first())
        .ok_or_else(|| decode("missing choices[0]".to_string()))?;
    if choice.get("finish_reason").and_then(Value::as_str) == Some("content_filter") {
        return Ok(CompletionOutcome::Blocked {
            reason: "content-filter".to_string(),
        });
    }
    let message = choice
        .get("message")
        .ok_or_else(|| decode("missing choices[0].message".to_string()))?;
    let content = match message.get("content") {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(other) => return Err(decode(format!("unexpected content shape: {other}"))),
    };
    let mut tool_calls = Vec::new();
    if let Some(calls) = message.get("tool_calls").and_then(Value::as_array) {
        for call in calls {
            let function = call
                .get("function")
                .ok_or_else(|| decode("tool call without function".to_string()))?;
            let name = function
                .get("name")
                .and_then(Value::as_str)
                .ok_or_else(|| decode("tool call without name".to_string()))?;
            let arguments = function
                .get("arguments")
                .and_then(Value::as_str)
                .unwrap_or("")
                .to_string();
            tool_calls.push(ToolCall {
                name: name.to_string(),
                arguments,
            });
        }
    }
    let mut reply = Message::assistant(content);
    reply.tool_calls = tool_calls;
    Ok(CompletionOutcome::Ok { message: reply })
}

/// Retryable statuses: timeouts, rate limits, and server-side errors.
fn transient_status(status: u16) -> bool {
    status == 408 || status == 429 || (500..600).contains(&status)
}

impl CompletionBackend for HttpBackend {
    fn call(&self, req: &CompletionRequest) -> Result<CompletionOutcome, CallError> {
        let url = format!(
            "{}/chat/completions",
            req.endpoint.base_url.trim_end_matches('/')
        );
        let mut builder = self.client.post(&url).json(&build_body(req));
        let credential = req
            .endpoint
            .resolve_credential()
            .map_err(|e| CallError::Permanent(e.to_string()))?;
        if let Some(token) = credential {
            builder = builder.bearer_auth(token);
        }
        let response = builder
            .send()
            .map_err(|e| CallError::Transient(format!("transport: {e}")))?;
        let status = response.status().as_u16();
        let text = response
            .text()
            .map_err(|e| CallError::Transient(format!("transport: {e}")))?;
        if !(200..300).contains(&status) {
            let reason = format!("http-{status}");
            return Err(if transient_status(status) {
                CallError::Transient(reason)
            } else {
                CallError::Permanent(reason)
            });
        }
        parse_payload(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ModelEndpoint, SamplingParams};
    use crate::conversation::Conversation;
    use crate::methods::render_tool_definition;

    fn request() -> CompletionRequest {
        CompletionRequest {
            endpoint: ModelEndpoint::new("api", "https://api.example.com/v1/", "test-model"),
            conversation: Conversation::with_messages(
                "c1",
                vec![Message::system("be helpful"), Message::user("hi")],
            ),
            params: SamplingParams::default(),
            tools: vec![render_tool_definition("X", "baseline").unwrap()],
            sample_index: 3,
        }
    }

    #[test]
    fn body_carries_model_messages_and_tools() {
        let body = build_body(&request());
        assert_eq!(body["model"], "test-model");
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["messages"][1]["content"], "hi");
        assert_eq!(body["temperature"], 1.0);
        assert_eq!(body["max_tokens"], 512);
        assert_eq!(body["tools"][0]["type"], "function");
        assert_eq!(
            body["tools"][0]["function"]["name"],
            "switchconversation_tool"
        );
        // No tool block when the request carries none.
        let mut bare = request();
        bare.tools.clear();
        assert!(build_body(&bare).get("tools").is_none());
    }

    #[test]
    fn assistant_tool_calls_serialize_into_the_body() {
        let mut req = request();
        req.conversation
            .messages
            .push(Message::assistant_tool_call("endchat_tool", "{}"));
        let body = build_body(&req);
        assert_eq!(
            body["messages"][2]["tool_calls"][0]["function"]["name"],
            "endchat_tool"
        );
    }

    #[test]
    fn payload_with_text_content_decodes() {
        let outcome = parse_payload(
            r#"{"choices":[{"message":{"role":"assistant","content":"hello"},"finish_reason":"stop"}]}"#,
        )
        .unwrap();
        assert_eq!(outcome.message().unwrap().content, "hello");
    }

    #[test]
    fn payload_with_tool_calls_decodes() {
        let outcome = parse_payload(
            r#"{"choices":[{"message":{"content":null,"tool_calls":[{"id":"1","type":"function","function":{"name":"terminate_tool","arguments":"{}"}}]},"finish_reason":"tool_calls"}]}"#,
        )
        .unwrap();
        let message = outcome.message().unwrap();
        assert_eq!(message.content, "");
        assert_eq!(message.tool_calls[0].name, "terminate_tool");
    }

    #[test]
    fn content_filter_finish_reason_is_blocked() {
        let outcome = parse_payload(
            r#"{"choices":[{"message":{"content":""},"finish_reason":"content_filter"}]}"#,
        )
        .unwrap();
        assert!(matches!(
            outcome,
            CompletionOutcome::Blocked { reason } if reason == "content-filter"
        ));
    }

    #[test]
    fn malformed_payloads_are_permanent_errors() {
        for text in ["not json", "{}", r#"{"choices":[]}"#, r#"{"choices":[{}]}"#] {
            match parse_payload(text) {
                Err(CallError::Permanent(reason)) => {
                    assert!(reason.starts_with("decode-error:"), "reason: {reason}")
                }
                other => panic!("expected permanent decode error, got {other:?}"),
            }
        }
    }

    #[test]
    fn status_classification_matches_retry_semantics() {
        assert!(transient_status(408));
        assert!(transient_status(429));
        assert!(transient_status(500));
        assert!(transient_status(503));
        assert!(!transient_status(400));
        assert!(!transient_status(401));
        assert!(!transient_status(404));
    }
}
