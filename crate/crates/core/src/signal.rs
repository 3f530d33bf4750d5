//! Outcome signals extracted from model responses.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Why a response could not be classified as bail or continue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnknownReason {
    /// No recognizable bail/continue marker anywhere in the response.
    NoTag,
    /// A marker was started but never completed, or its content was
    /// unrecognizable.
    MalformedTag,
    /// The provider refused to return a completion (content filter).
    RefusalBlocked,
    /// The provider failed outright while the signal was being collected.
    ProviderError,
    /// The model answered but did not follow the requested format at all
    /// (e.g. an empty or tool-call-only response where text was required).
    NoCompliance,
}

impl UnknownReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            UnknownReason::NoTag => "no-tag",
            UnknownReason::MalformedTag => "malformed-tag",
            UnknownReason::RefusalBlocked => "refusal-blocked",
            UnknownReason::ProviderError => "provider-error",
            UnknownReason::NoCompliance => "no-compliance",
        }
    }
}

impl fmt::Display for UnknownReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Did the model ask to leave the conversation?
///
/// `Unknown` always carries a machine-readable reason so downstream
/// aggregation can report why a trial was unclassifiable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "reason", rename_all = "snake_case")]
pub enum BailSignal {
    Bail,
    Continue,
    Unknown(UnknownReason),
}

impl BailSignal {
    pub fn is_bail(&self) -> bool {
        matches!(self, BailSignal::Bail)
    }

    pub fn is_continue(&self) -> bool {
        matches!(self, BailSignal::Continue)
    }

    pub fn is_unknown(&self) -> bool {
        matches!(self, BailSignal::Unknown(_))
    }
}

impl fmt::Display for BailSignal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BailSignal::Bail => f.write_str("bail"),
            BailSignal::Continue => f.write_str("continue"),
            BailSignal::Unknown(reason) => write!(f, "unknown({reason})"),
        }
    }
}
