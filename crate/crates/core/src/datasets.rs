//! Evaluation inputs: prompt sets, replayable transcripts, and
//! jailbreak-prefixed variants built from them.
//!
//! Prompt files hold one `{"id", "category", "text"}` record per line;
//! transcript files hold one conversation record per line (the same shape
//! [`Conversation`] serializes to, plus an optional `language` tag used for
//! filtering). Loaded datasets are immutable and cheap to share.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conversation::{Conversation, Message, Role};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {detail}")]
    Parse {
        path: String,
        line: usize,
        detail: String,
    },
    #[error("{path}:{line}: duplicate id \"{id}\"")]
    DuplicateId {
        path: String,
        line: usize,
        id: String,
    },
    #[error("{path}:{line}: {detail}")]
    InvalidRecord {
        path: String,
        line: usize,
        detail: String,
    },
    #[error("{path}: no records")]
    Empty { path: String },
    #[error("jailbreak context \"{name}\": {detail}")]
    InvalidContext { name: String, detail: String },
}

/// One prompt to ask a model, labeled with its taxonomy category.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub id: String,
    pub category: String,
    pub text: String,
}

/// A named, non-empty collection of prompts with unique ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptDataset {
    pub name: String,
    pub records: Vec<PromptRecord>,
}

impl PromptDataset {
    /// Record counts per category, ordered by category name.
    pub fn category_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for record in &self.records {
            *counts.entry(record.category.clone()).or_insert(0) += 1;
        }
        counts
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// A named collection of multi-turn conversations ready for replay: roles
/// alternate between user and assistant after an optional leading system
/// message, and every conversation has at least one user turn.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranscriptDataset {
    pub name: String,
    pub conversations: Vec<Conversation>,
}

impl TranscriptDataset {
    pub fn len(&self) -> usize {
        self.conversations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conversations.is_empty()
    }
}

/// A jailbreak opener and the assistant reply that goes along with it,
/// used to prefix prompts so they arrive in an already-compromised context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JailbreakContext {
    pub name: String,
    pub jailbreak_user: String,
    pub compliance_assistant: String,
}

impl JailbreakContext {
    fn validate(&self) -> Result<(), DatasetError> {
        let invalid = |detail: &str| DatasetError::InvalidContext {
            name: self.name.clone(),
            detail: detail.to_string(),
        };
        if self.name.is_empty() {
            return Err(DatasetError::InvalidContext {
                name: "<unnamed>".to_string(),
                detail: "empty name".to_string(),
            });
        }
        if self.jailbreak_user.trim().is_empty() {
            return Err(invalid("empty jailbreak_user text"));
        }
        if self.compliance_assistant.trim().is_empty() {
            return Err(invalid("empty compliance_assistant text"));
        }
        Ok(())
    }
}

/// Supported transcript file encodings. Foreign dumps are converted offline
/// into the conversation-record format rather than parsed here.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TranscriptFormat {
    ConversationJson,
}

/// What the transcript loader did besides loading: conversations with no
/// messages are dropped (scraped data contains them), conversations that
/// still violate the role invariants after repair are dropped, and
/// consecutive same-role messages are merged because providers reject
/// non-alternating turns.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TranscriptLoadStats {
    pub loaded: usize,
    pub dropped_empty: usize,
    pub dropped_invalid: usize,
    pub filtered_by_tag: usize,
    pub merged_messages: usize,
}

#[derive(Debug)]
pub struct TranscriptLoad {
    pub dataset: TranscriptDataset,
    pub stats: TranscriptLoadStats,
}

fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string())
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, line)| (i + 1, line.to_string()))
        .filter(|(_, line)| !line.trim().is_empty())
        .collect())
}

/// Loads a prompt dataset from a file of one record per line, rejecting
/// duplicate ids and records with missing or empty required fields.
pub fn load_prompt_dataset(path: &Path) -> Result<PromptDataset, DatasetError> {
    let path_str = path.display().to_string();
    let mut records = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (line_no, line) in read_lines(path)? {
        let record: PromptRecord =
            serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
                path: path_str.clone(),
                line: line_no,
                detail: e.to_string(),
            })?;
        if record.id.is_empty() {
            return Err(DatasetError::InvalidRecord {
                path: path_str.clone(),
                line: line_no,
                detail: "empty id".to_string(),
            });
        }
        if record.category.is_empty() {
            return Err(DatasetError::InvalidRecord {
                path: path_str.clone(),
                line: line_no,
                detail: format!("record \"{}\" has an empty category", record.id),
            });
        }
        if !seen.insert(record.id.clone()) {
            return Err(DatasetError::DuplicateId {
                path: path_str.clone(),
                line: line_no,
                id: record.id,
            });
        }
        records.push(record);
    }
    if records.is_empty() {
        return Err(DatasetError::Empty { path: path_str });
    }
    Ok(PromptDataset {
        name: dataset_name(path),
        records,
    })
}

/// Writes a prompt dataset back out, one record per line, in a shape
/// [`load_prompt_dataset`] reads to an equal dataset.
pub fn save_prompt_dataset(dataset: &PromptDataset, path: &Path) -> Result<(), DatasetError> {
    let mut out = String::new();
    for record in &dataset.records {
        out.push_str(&serde_json::to_string(record).expect("prompt records serialize"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Deserialize)]
struct TranscriptLine {
    id: String,
    #[serde(default)]
    category: Option<String>,
    #[serde(default)]
    language: Option<String>,
    messages: Vec<Message>,
}

/// Merges consecutive same-role messages in place, returning how many were
/// folded away. Contents are joined with a blank line; tool calls accumulate.
fn merge_same_role(messages: Vec<Message>) -> (Vec<Message>, usize) {
    let mut merged = 0usize;
    let mut out: Vec<Message> = Vec::with_capacity(messages.len());
    for message in messages {
        match out.last_mut() {
            Some(prev) if prev.role == message.role => {
                if !prev.content.is_empty() && !message.content.is_empty() {
                    prev.content.push_str("\n\n");
                }
                prev.content.push_str(&message.content);
                prev.tool_calls.extend(message.tool_calls);
                merged += 1;
            }
            _ => out.push(message),
        }
    }
    (out, merged)
}

fn keeps_role_invariants(messages: &[Message]) -> bool {
    let has_user = messages.iter().any(|m| m.role == Role::User);
    let system_only_leading = messages
        .iter()
        .enumerate()
        .all(|(i, m)| m.role != Role::System || i == 0);
    has_user && system_only_leading
}

/// Loads transcripts, repairing and filtering as it goes; see
/// [`TranscriptLoadStats`] for what can be dropped. `language` restricts the
/// load to records carrying that tag — no language detection happens here,
/// the tags come from upstream metadata.
pub fn load_transcripts_filtered(
    path: &Path,
    format: TranscriptFormat,
    language: Option<&str>,
) -> Result<TranscriptLoad, DatasetError> {
    let TranscriptFormat::ConversationJson = format;
    let path_str = path.display().to_string();
    let mut stats = TranscriptLoadStats::default();
    let mut conversations = Vec::new();
    for (line_no, line) in read_lines(path)? {
        let record: TranscriptLine =
            serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
                path: path_str.clone(),
                line: line_no,
                detail: e.to_string(),
            })?;
        if let Some(wanted) = language {
            let tagged = record
                .language
                .as_deref()
                .is_some_and(|tag| tag.eq_ignore_ascii_case(wanted));
            if !tagged {
                stats.filtered_by_tag += 1;
                continue;
            }
        }
        if record.messages.is_empty() {
            stats.dropped_empty += 1;
            continue;
        }
        let (messages, merged) = merge_same_role(record.messages);
        stats.merged_messages += merged;
        if !keeps_role_invariants(&messages) {
            stats.dropped_invalid += 1;
            continue;
        }
        let mut conversation = Conversation::with_messages(record.id, messages);
        conversation.category = record.category;
        conversations.push(conversation);
    }
    stats.loaded = conversations.len();
    Ok(TranscriptLoad {
        dataset: TranscriptDataset {
            name: dataset_name(path),
            conversations,
        },
        stats,
    })
}

pub fn load_transcripts(path: &Path, format: TranscriptFormat) -> Result<TranscriptLoad, DatasetError> {
    load_transcripts_filtered(path, format, None)
}

/// Writes transcripts back out, one conversation per line, in a shape
/// [`load_transcripts`] reads to an equal dataset.
pub fn save_transcripts(dataset: &TranscriptDataset, path: &Path) -> Result<(), DatasetError> {
    let mut out = String::new();
    for conversation in &dataset.conversations {
        out.push_str(&serde_json::to_string(conversation).expect("conversations serialize"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Strips scraped markup: tag spans are removed and character entities
/// decoded, repeatedly, until the text stops changing — so entity-encoded
/// tags are removed too, and applying the function twice changes nothing.
pub fn sanitize_scraped_text(text: &str) -> String {
    // Tags must start with a letter or `/` + letter, so comparisons like
    // "a < b" survive. Comments are removed whole.
    static TAG: std::sync::OnceLock<regex::Regex> = std::sync::OnceLock::new();
    let tag = TAG.get_or_init(|| {
        regex::Regex::new(r"(?s)<!--.*?-->|</?[A-Za-z][^<>]*>").expect("static pattern compiles")
    });
    let mut current = text.to_string();
    for _ in 0..16 {
        let stripped = tag.replace_all(&current, "");
        let decoded = html_escape::decode_html_entities(stripped.as_ref());
        if decoded == current {
            return current;
        }
        current = decoded.into_owned();
    }
    current
}

/// Prefixes every prompt with the jailbreak exchange, yielding three-message
/// conversations that end with the original prompt. Ids and categories carry
/// over from the base records.
pub fn build_jailbreak_dataset(
    jb: &JailbreakContext,
    base: &PromptDataset,
) -> Result<TranscriptDataset, DatasetError> {
    jb.validate()?;
    let conversations = base
        .records
        .iter()
        .map(|record| {
            let mut conversation = Conversation::with_messages(
                format!("{}+{}", record.id, jb.name),
                vec![
                    Message::user(jb.jailbreak_user.clone()),
                    Message::assistant(jb.compliance_assistant.clone()),
                    Message::user(record.text.clone()),
                ],
            );
            conversation.category = Some(record.category.clone());
            conversation
        })
        .collect();
    Ok(TranscriptDataset {
        name: format!("{}+{}", base.name, jb.name),
        conversations,
    })
}

/// Loads every `.json` jailbreak context in a directory, sorted by file name
/// so downstream runs see a stable order.
pub fn load_jailbreak_contexts(dir: &Path) -> Result<Vec<JailbreakContext>, DatasetError> {
    let entries = fs::read_dir(dir).map_err(|source| DatasetError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut paths: Vec<_> = entries
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
        .collect();
    paths.sort();
    let mut contexts = Vec::new();
    for path in paths {
        let text = fs::read_to_string(&path).map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let context: JailbreakContext =
            serde_json::from_str(&text).map_err(|e| DatasetError::Parse {
                path: path.display().to_string(),
                line: e.line(),
                detail: e.to_string(),
            })?;
        context.validate()?;
        contexts.push(context);
    }
    Ok(contexts)
}
