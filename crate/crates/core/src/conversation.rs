//! Conversation and message types shared by every other module.
//!
//! A conversation is an ordered list of role-tagged messages. All types here
//! are immutable values: operations return new conversations and leave their
//! inputs untouched, so they can be shared freely across threads.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Chat role of a single message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
            Role::Tool => "tool",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A tool invocation emitted by an assistant message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    #[serde(default)]
    pub arguments: String,
}

/// One chat message.
///
/// `source_tag` records which part of the harness produced the message
/// (e.g. "original-transcript", "target-model", "bail-probe") so temporary
/// probe messages can be identified and removed exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<ToolCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_tag: Option<String>,
}

impl Message {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Message {
            role,
            content: content.into(),
            tool_calls: Vec::new(),
            source_tag: None,
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Message::new(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message::new(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Message::new(Role::Assistant, content)
    }

    /// Assistant message consisting of a single tool call and no text.
    pub fn assistant_tool_call(name: impl Into<String>, arguments: impl Into<String>) -> Self {
        Message {
            role: Role::Assistant,
            content: String::new(),
            tool_calls: vec![ToolCall {
                name: name.into(),
                arguments: arguments.into(),
            }],
            source_tag: None,
        }
    }

    pub fn with_source_tag(mut self, tag: impl Into<String>) -> Self {
        self.source_tag = Some(tag.into());
        self
    }
}

/// An ordered conversation with a dataset-unique id.
///
/// `category` is carried along for datasets whose records are labeled
/// (it is omitted from serialized records when absent).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    pub messages: Vec<Message>,
}

impl Conversation {
    pub fn new(id: impl Into<String>) -> Self {
        Conversation {
            id: id.into(),
            category: None,
            messages: Vec::new(),
        }
    }

    pub fn with_messages(id: impl Into<String>, messages: Vec<Message>) -> Self {
        Conversation {
            id: id.into(),
            category: None,
            messages,
        }
    }

    pub fn last_user_text(&self) -> Option<&str> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
    }

    pub fn last_message(&self) -> Option<&Message> {
        self.messages.last()
    }
}

/// Rejected conversation edit, carrying the full violation list.
#[derive(Debug, Clone, thiserror::Error)]
#[error("conversation {id:?} invalid: {}", violations.join("; "))]
pub struct InvalidConversation {
    pub id: String,
    pub violations: Vec<String>,
}

/// Checks every conversation invariant and returns a description of each
/// violation, naming the offending message index. Empty means well-formed.
pub fn validate_conversation(conv: &Conversation) -> Vec<String> {
    let mut violations = Vec::new();
    for (i, msg) in conv.messages.iter().enumerate() {
        if msg.role == Role::System && i != 0 {
            violations.push(format!("system message at index {i} not leading"));
        }
        if !msg.tool_calls.is_empty() && msg.role != Role::Assistant {
            violations.push(format!(
                "tool calls on {} message at index {i}",
                msg.role
            ));
        }
        if msg.content.is_empty() && msg.tool_calls.is_empty() {
            violations.push(format!(
                "empty content without tool calls at index {i}"
            ));
        }
    }
    violations
}

/// Returns a new conversation with `msg` appended, rejecting any append that
/// would violate a conversation invariant. The input is left unmodified.
pub fn append_turn(conv: &Conversation, msg: Message) -> Result<Conversation, InvalidConversation> {
    let mut next = conv.clone();
    next.messages.push(msg);
    let violations = validate_conversation(&next);
    if violations.is_empty() {
        Ok(next)
    } else {
        Err(InvalidConversation {
            id: conv.id.clone(),
            violations,
        })
    }
}
