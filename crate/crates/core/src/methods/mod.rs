//! The three bail methods: template rendering and response parsing.
//!
//! A "bail method" gives the model a way to exit a conversation: a callable
//! tool, a magic string it can output, or a temporary check-in prompt it
//! answers with a tagged glyph. Everything here is a pure function over
//! immutable inputs.

mod detect;
mod registry;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use detect::{
    contains_marker, detect_string_bail, detect_tool_bail, parse_wellbeing_response,
    parse_wellbeing_response_with, strip_bail_artifacts,
};
pub use registry::{
    BailKind, PromptOrdering, PromptVariant, StringVariant, ToolVariant, VariantRegistry,
    DEFAULT_REGISTRY_JSON,
};

#[derive(Debug, Clone, thiserror::Error)]
pub enum MethodError {
    #[error("unknown bail kind {kind:?} (expected tool, string, or prompt)")]
    UnknownKind { kind: String },
    #[error("unknown ordering {ordering:?} (expected bail_first or continue_first)")]
    UnknownOrdering { ordering: String },
    #[error("unknown {kind} variant {variant:?}; registry has: {available}")]
    UnknownVariant {
        kind: BailKind,
        variant: String,
        available: String,
    },
    #[error("variant registry error: {0}")]
    Registry(String),
    #[error("invalid bail method {label:?}: {reason}")]
    InvalidSpec { label: String, reason: String },
}

/// A fully-specified bail method: kind, registry variant, and (for the
/// prompt kind only) which option comes first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BailMethodSpec {
    pub kind: BailKind,
    pub variant: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ordering: Option<PromptOrdering>,
}

impl BailMethodSpec {
    pub fn tool(variant: impl Into<String>) -> Self {
        BailMethodSpec {
            kind: BailKind::Tool,
            variant: variant.into(),
            ordering: None,
        }
    }

    pub fn string(variant: impl Into<String>) -> Self {
        BailMethodSpec {
            kind: BailKind::String,
            variant: variant.into(),
            ordering: None,
        }
    }

    pub fn prompt(variant: impl Into<String>, ordering: PromptOrdering) -> Self {
        BailMethodSpec {
            kind: BailKind::Prompt,
            variant: variant.into(),
            ordering: Some(ordering),
        }
    }

    /// Checks this method spec against a registry: the variant must exist
    /// for the kind, and an ordering must be present exactly when kind is
    /// prompt.
    pub fn validate(&self, registry: &VariantRegistry) -> Result<(), MethodError> {
        match (self.kind, self.ordering) {
            (BailKind::Prompt, None) => {
                return Err(MethodError::InvalidSpec {
                    label: self.label(),
                    reason: "prompt method requires an ordering".to_string(),
                })
            }
            (BailKind::Tool | BailKind::String, Some(_)) => {
                return Err(MethodError::InvalidSpec {
                    label: self.label(),
                    reason: "ordering only applies to the prompt method".to_string(),
                })
            }
            _ => {}
        }
        if !registry.contains(self.kind, &self.variant) {
            // Reuse the registry's unknown-variant error with the id list.
            match self.kind {
                BailKind::Tool => registry.tool_variant(&self.variant).map(|_| ())?,
                BailKind::String => registry.string_variant(&self.variant).map(|_| ())?,
                BailKind::Prompt => registry.prompt_variant(&self.variant).map(|_| ())?,
            }
        }
        Ok(())
    }

    /// Stable label used in reports and log records, e.g. `tool:baseline`
    /// or `prompt:baseline:bail_first`.
    pub fn label(&self) -> String {
        match self.ordering {
            Some(ordering) => format!("{}:{}:{}", self.kind, self.variant, ordering),
            None => format!("{}:{}", self.kind, self.variant),
        }
    }
}

impl fmt::Display for BailMethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Parses `kind:variant[:ordering]`, e.g. `tool:baseline` or
/// `prompt:baseline:continue_first`.
impl FromStr for BailMethodSpec {
    type Err = MethodError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.splitn(3, ':');
        let kind: BailKind = parts.next().unwrap_or_default().parse()?;
        let variant = parts.next().unwrap_or_default().to_string();
        if variant.is_empty() {
            return Err(MethodError::InvalidSpec {
                label: s.to_string(),
                reason: "missing variant (expected kind:variant[:ordering])".to_string(),
            });
        }
        let ordering = match parts.next() {
            Some(text) => Some(text.parse()?),
            None => None,
        };
        let spec = BailMethodSpec {
            kind,
            variant,
            ordering,
        };
        spec.validate(VariantRegistry::builtin())?;
        Ok(spec)
    }
}

/// A rendered bail tool, ready to pass to a tool-calling endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolDefinition {
    pub tool_name: String,
    pub description: String,
    /// Parameter schema; the bail tool takes no arguments.
    pub parameters: serde_json::Value,
}

/// A rendered bail string method: the marker to watch for plus the suffix
/// appended to the system prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BailStringSpec {
    pub marker: String,
    pub system_suffix: String,
}

/// The two glyphs the bail prompt asks for. Configurable because template
/// text names them symbolically; these are the concrete defaults.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlyphConfig {
    pub bail: String,
    pub continue_: String,
}

impl Default for GlyphConfig {
    fn default() -> Self {
        GlyphConfig {
            bail: "\u{1F500}".to_string(),     // 🔀 shuffle tracks
            continue_: "\u{1F7E2}".to_string(), // 🟢 green circle
        }
    }
}

fn empty_parameter_schema() -> serde_json::Value {
    serde_json::json!({"type": "object", "properties": {}, "required": []})
}

fn substitute_model_name(template: &str, model_name: &str) -> String {
    template.replace("{model_name}", model_name)
}

/// Renders the bail tool for a variant, substituting the model's name into
/// the description.
pub fn render_tool_definition(
    model_name: &str,
    variant: &str,
) -> Result<ToolDefinition, MethodError> {
    render_tool_definition_with(VariantRegistry::builtin(), model_name, variant)
}

pub fn render_tool_definition_with(
    registry: &VariantRegistry,
    model_name: &str,
    variant: &str,
) -> Result<ToolDefinition, MethodError> {
    let template = registry.tool_variant(variant)?;
    Ok(ToolDefinition {
        tool_name: template.tool_name.clone(),
        description: substitute_model_name(&template.description, model_name),
        parameters: empty_parameter_schema(),
    })
}

/// Renders the bail string method for a variant: the system-prompt suffix
/// with the model's name substituted, plus the marker to detect.
pub fn render_string_suffix(
    model_name: &str,
    variant: &str,
) -> Result<BailStringSpec, MethodError> {
    render_string_suffix_with(VariantRegistry::builtin(), model_name, variant)
}

pub fn render_string_suffix_with(
    registry: &VariantRegistry,
    model_name: &str,
    variant: &str,
) -> Result<BailStringSpec, MethodError> {
    let template = registry.string_variant(variant)?;
    Ok(BailStringSpec {
        marker: template.marker.clone(),
        system_suffix: substitute_model_name(&template.suffix, model_name),
    })
}

/// Renders the check-in prompt for a variant in the requested ordering,
/// using the default glyphs.
pub fn render_bail_prompt(ordering: PromptOrdering, variant: &str) -> Result<String, MethodError> {
    render_bail_prompt_with(
        VariantRegistry::builtin(),
        &GlyphConfig::default(),
        ordering,
        variant,
    )
}

pub fn render_bail_prompt_with(
    registry: &VariantRegistry,
    glyphs: &GlyphConfig,
    ordering: PromptOrdering,
    variant: &str,
) -> Result<String, MethodError> {
    let template = registry.prompt_variant(variant)?;
    let (first_clause, second_clause, first_option, second_option) = match ordering {
        PromptOrdering::BailFirst => (
            &template.bail_clause,
            &template.continue_clause,
            &template.bail_option,
            &template.continue_option,
        ),
        PromptOrdering::ContinueFirst => (
            &template.continue_clause,
            &template.bail_clause,
            &template.continue_option,
            &template.bail_option,
        ),
    };
    let closing = template
        .closing_template
        .replace("{first_option}", first_option)
        .replace("{second_option}", second_option);

    let mut lines = vec![
        template.header.clone(),
        first_clause.clone(),
        second_clause.clone(),
        template.explain_line.clone(),
    ];
    if let Some(journal) = &template.journal_line {
        lines.push(journal.clone());
    }
    lines.push(closing);

    Ok(lines
        .join("\n")
        .replace("{bail_glyph}", &glyphs.bail)
        .replace("{continue_glyph}", &glyphs.continue_))
}
