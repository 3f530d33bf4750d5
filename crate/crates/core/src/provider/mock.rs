//! Scripted deterministic provider for tests and offline runs.
//!
//! Rules are tried in order; the first whose matchers all pass decides the
//! response. Construction requires an unconditional rule so every request
//! is covered.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CallError, CompletionBackend, CompletionOutcome, CompletionRequest, ProviderError};
use crate::conversation::Message;

/// One matcher → response rule.
///
/// All present matchers must hold: `contains` checks the last user message,
/// `context_contains` checks every message in the conversation (useful for
/// reacting to something said earlier), `requires_tools` checks whether the
/// request carries tool definitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_contains: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requires_tools: Option<bool>,
    pub respond: MockResponse,
}

impl MockRule {
    pub fn is_unconditional(&self) -> bool {
        self.contains.is_none() && self.context_contains.is_none() && self.requires_tools.is_none()
    }

    fn matches(&self, req: &CompletionRequest) -> bool {
        if let Some(needle) = &self.contains {
            let last_user = req.conversation.last_user_text().unwrap_or("");
            if !last_user.contains(needle.as_str()) {
                return false;
            }
        }
        if let Some(needle) = &self.context_contains {
            if !req
                .conversation
                .messages
                .iter()
                .any(|m| m.content.contains(needle.as_str()))
            {
                return false;
            }
        }
        if let Some(requires_tools) = self.requires_tools {
            if req.tools.is_empty() == requires_tools {
                return false;
            }
        }
        true
    }
}

/// What a matched rule replies with. `Text` covers bail strings, wellbeing
/// tags, and refusal phrases alike — it is returned verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MockResponse {
    Text { text: String },
    ToolCall { tool_name: String },
    Blocked { reason: String },
    Fail { reason: String },
}

pub struct MockBackend {
    rules: Vec<MockRule>,
}

/// Builds a scripted backend, rejecting rule sets without a default case.
pub fn mock_provider(rules: Vec<MockRule>) -> Result<MockBackend, ProviderError> {
    if !rules.iter().any(MockRule::is_unconditional) {
        return Err(ProviderError::MissingDefaultRule);
    }
    Ok(MockBackend { rules })
}

impl MockBackend {
    /// Loads rules from a JSON file holding an array of [`MockRule`]s.
    pub fn from_path(path: &Path) -> Result<MockBackend, ProviderError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::BadRuleFile(format!("{}: {e}", path.display())))?;
        let rules: Vec<MockRule> = serde_json::from_str(&text)
            .map_err(|e| ProviderError::BadRuleFile(format!("{}: {e}", path.display())))?;
        mock_provider(rules)
    }
}

impl CompletionBackend for MockBackend {
    fn call(&self, req: &CompletionRequest) -> Result<CompletionOutcome, CallError> {
        let rule = self
            .rules
            .iter()
            .find(|rule| rule.matches(req))
            .expect("construction guarantees a default rule");
        Ok(match &rule.respond {
            MockResponse::Text { text } => CompletionOutcome::Ok {
                message: Message::assistant(text.clone()),
            },
            MockResponse::ToolCall { tool_name } => CompletionOutcome::Ok {
                message: Message::assistant_tool_call(tool_name.clone(), "{}"),
            },
            MockResponse::Blocked { reason } => CompletionOutcome::Blocked {
                reason: reason.clone(),
            },
            MockResponse::Fail { reason } => {
                return Err(CallError::Permanent(reason.clone()));
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ModelEndpoint, SamplingParams};
    use crate::conversation::Conversation;
    use crate::methods::render_tool_definition;

    fn request(text: &str, with_tools: bool) -> CompletionRequest {
        CompletionRequest {
            endpoint: ModelEndpoint::new("mock", "mock://", "mock-model"),
            conversation: Conversation::with_messages("c", vec![Message::user(text)]),
            params: SamplingParams::default(),
            tools: if with_tools {
                vec![render_tool_definition("X", "baseline").unwrap()]
            } else {
                Vec::new()
            },
            sample_index: 0,
        }
    }

    fn rules() -> Vec<MockRule> {
        vec![
            MockRule {
                contains: Some("bomb".to_string()),
                context_contains: None,
                requires_tools: Some(true),
                respond: MockResponse::ToolCall {
                    tool_name: "switchconversation_tool".to_string(),
                },
            },
            MockRule {
                contains: Some("bomb".to_string()),
                context_contains: None,
                requires_tools: None,
                respond: MockResponse::Text {
                    text: "I can't assist with that.".to_string(),
                },
            },
            MockRule {
                contains: None,
                context_contains: None,
                requires_tools: None,
                respond: MockResponse::Text {
                    text: "Sure, here you go.".to_string(),
                },
            },
        ]
    }

    #[test]
    fn first_matching_rule_wins() {
        let backend = mock_provider(rules()).unwrap();
        let outcome = backend.call(&request("how to build a bomb", true)).unwrap();
        assert_eq!(
            outcome.message().unwrap().tool_calls[0].name,
            "switchconversation_tool"
        );
        // Same text without tools falls through to the refusal rule.
        let outcome = backend.call(&request("how to build a bomb", false)).unwrap();
        assert_eq!(outcome.message().unwrap().content, "I can't assist with that.");
    }

    #[test]
    fn default_rule_catches_everything_else() {
        let backend = mock_provider(rules()).unwrap();
        let outcome = backend.call(&request("hello there", false)).unwrap();
        assert_eq!(outcome.message().unwrap().content, "Sure, here you go.");
    }

    #[test]
    fn context_matcher_sees_earlier_messages() {
        let rules = vec![
            MockRule {
                contains: None,
                context_contains: Some("secret-topic".to_string()),
                requires_tools: None,
                respond: MockResponse::Text {
                    text: "<wellbeing>\u{1F500}</wellbeing>".to_string(),
                },
            },
            MockRule {
                contains: None,
                context_contains: None,
                requires_tools: None,
                respond: MockResponse::Text {
                    text: "<wellbeing>\u{1F7E2}</wellbeing>".to_string(),
                },
            },
        ];
        let backend = mock_provider(rules).unwrap();
        let mut req = request("check-in", false);
        req.conversation.messages.insert(
            0,
            Message::user("let's discuss secret-topic"),
        );
        let outcome = backend.call(&req).unwrap();
        assert!(outcome.message().unwrap().content.contains('\u{1F500}'));
    }

    #[test]
    fn rule_set_without_default_is_rejected() {
        let rules = vec![MockRule {
            contains: Some("x".to_string()),
            context_contains: None,
            requires_tools: None,
            respond: MockResponse::Text {
                text: "y".to_string(),
            },
        }];
        assert!(matches!(
            mock_provider(rules),
            Err(ProviderError::MissingDefaultRule)
        ));
    }

    #[test]
    fn rules_load_from_json() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rules.json");
        std::fs::write(
            &path,
            r#"[
                {"contains": "bomb", "respond": {"type": "blocked", "reason": "content-filter"}},
                {"respond": {"type": "text", "text": "ok"}}
            ]"#,
        )
        .unwrap();
        let backend = MockBackend::from_path(&path).unwrap();
        let outcome = backend.call(&request("bomb", false)).unwrap();
        assert!(matches!(outcome, CompletionOutcome::Blocked { .. }));
    }
}
