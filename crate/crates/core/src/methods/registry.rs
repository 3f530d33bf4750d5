//! Data-driven registry of bail-method variants.
//!
//! Templates live in `data/bail_variants.json` (embedded at compile time,
//! replaceable at runtime via [`VariantRegistry::from_path`]), so adding an
//! ablation variant is a data change, not a code change. Template text uses
//! `{model_name}`, `{bail_glyph}` and `{continue_glyph}` placeholders.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::MethodError;

/// Embedded copy of the default variant registry.
pub const DEFAULT_REGISTRY_JSON: &str = include_str!("../../data/bail_variants.json");

/// Which of the three bail methods a spec refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BailKind {
    Tool,
    String,
    Prompt,
}

impl BailKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            BailKind::Tool => "tool",
            BailKind::String => "string",
            BailKind::Prompt => "prompt",
        }
    }
}

impl fmt::Display for BailKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BailKind {
    type Err = MethodError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tool" => Ok(BailKind::Tool),
            "string" => Ok(BailKind::String),
            "prompt" => Ok(BailKind::Prompt),
            other => Err(MethodError::UnknownKind {
                kind: other.to_string(),
            }),
        }
    }
}

/// Which option the bail prompt presents first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptOrdering {
    BailFirst,
    ContinueFirst,
}

impl PromptOrdering {
    pub fn as_str(&self) -> &'static str {
        match self {
            PromptOrdering::BailFirst => "bail_first",
            PromptOrdering::ContinueFirst => "continue_first",
        }
    }
}

impl fmt::Display for PromptOrdering {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptOrdering {
    type Err = MethodError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bail_first" => Ok(PromptOrdering::BailFirst),
            "continue_first" => Ok(PromptOrdering::ContinueFirst),
            other => Err(MethodError::UnknownOrdering {
                ordering: other.to_string(),
            }),
        }
    }
}

/// Tool-method template: tool name plus description text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolVariant {
    pub tool_name: String,
    pub description: String,
}

/// String-method template: marker plus system-prompt suffix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StringVariant {
    pub marker: String,
    pub suffix: String,
}

/// Prompt-method template, stored as the individual lines so either
/// ordering can be assembled. `journal_line` is absent for variants that
/// drop the journaling invitation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptVariant {
    pub header: String,
    pub bail_clause: String,
    pub continue_clause: String,
    pub explain_line: String,
    pub journal_line: Option<String>,
    pub closing_template: String,
    pub bail_option: String,
    pub continue_option: String,
}

/// All known variants for the three bail methods.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantRegistry {
    pub tool: BTreeMap<String, ToolVariant>,
    pub string: BTreeMap<String, StringVariant>,
    pub prompt: BTreeMap<String, PromptVariant>,
}

impl VariantRegistry {
    /// The compiled-in registry.
    pub fn builtin() -> &'static VariantRegistry {
        static BUILTIN: OnceLock<VariantRegistry> = OnceLock::new();
        BUILTIN.get_or_init(|| {
            VariantRegistry::from_json(DEFAULT_REGISTRY_JSON)
                .expect("embedded variant registry is valid")
        })
    }

    pub fn from_json(json: &str) -> Result<Self, MethodError> {
        let registry: VariantRegistry =
            serde_json::from_str(json).map_err(|e| MethodError::Registry(e.to_string()))?;
        registry.validate()?;
        Ok(registry)
    }

    pub fn from_path(path: &Path) -> Result<Self, MethodError> {
        let json = std::fs::read_to_string(path)
            .map_err(|e| MethodError::Registry(format!("{}: {e}", path.display())))?;
        Self::from_json(&json)
    }

    fn validate(&self) -> Result<(), MethodError> {
        let complain = |msg: String| Err(MethodError::Registry(msg));
        for (name, variant) in &self.tool {
            if variant.tool_name.is_empty() || variant.description.is_empty() {
                return complain(format!("tool variant {name:?} has empty fields"));
            }
        }
        for (name, variant) in &self.string {
            if variant.marker.is_empty() || variant.marker.contains(char::is_whitespace) {
                return complain(format!(
                    "string variant {name:?} marker must be non-empty without whitespace"
                ));
            }
        }
        for (name, variant) in &self.prompt {
            if variant.bail_clause.is_empty() || variant.continue_clause.is_empty() {
                return complain(format!("prompt variant {name:?} has empty clauses"));
            }
        }
        Ok(())
    }

    /// Variant ids available for a kind, in registry order.
    pub fn variant_names(&self, kind: BailKind) -> Vec<&str> {
        match kind {
            BailKind::Tool => self.tool.keys().map(String::as_str).collect(),
            BailKind::String => self.string.keys().map(String::as_str).collect(),
            BailKind::Prompt => self.prompt.keys().map(String::as_str).collect(),
        }
    }

    pub fn contains(&self, kind: BailKind, variant: &str) -> bool {
        match kind {
            BailKind::Tool => self.tool.contains_key(variant),
            BailKind::String => self.string.contains_key(variant),
            BailKind::Prompt => self.prompt.contains_key(variant),
        }
    }

    fn unknown(&self, kind: BailKind, variant: &str) -> MethodError {
        MethodError::UnknownVariant {
            kind,
            variant: variant.to_string(),
            available: self.variant_names(kind).join(", "),
        }
    }

    pub fn tool_variant(&self, variant: &str) -> Result<&ToolVariant, MethodError> {
        self.tool
            .get(variant)
            .ok_or_else(|| self.unknown(BailKind::Tool, variant))
    }

    pub fn string_variant(&self, variant: &str) -> Result<&StringVariant, MethodError> {
        self.string
            .get(variant)
            .ok_or_else(|| self.unknown(BailKind::String, variant))
    }

    pub fn prompt_variant(&self, variant: &str) -> Result<&PromptVariant, MethodError> {
        self.prompt
            .get(variant)
            .ok_or_else(|| self.unknown(BailKind::Prompt, variant))
    }
}
