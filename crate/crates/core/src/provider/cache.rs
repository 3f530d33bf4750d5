//! Content-addressed response cache.
//!
//! One file per (request fingerprint) under the cache directory, named by
//! the sha-256 digest of the canonicalized request. Records are
//! self-describing: they carry a request summary next to the outcome, so a
//! cache directory can be audited without the code that wrote it.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CompletionOutcome, CompletionRequest};

/// Digest identifying one completion request.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CacheKey {
    pub digest: String,
}

impl CacheKey {
    /// Hashes the request fields that determine the response: model id,
    /// the wire view of the conversation (role/content/tool calls; harness
    /// metadata like source tags is excluded), sampling params, tools, and
    /// the sample index. Serialization uses sorted object keys, so the
    /// digest is stable across field ordering.
    pub fn for_request(req: &CompletionRequest) -> CacheKey {
        let wire_messages: Vec<serde_json::Value> = req
            .conversation
            .messages
            .iter()
            .map(|m| {
                let mut obj = serde_json::json!({
                    "role": m.role.as_str(),
                    "content": m.content,
                });
                if !m.tool_calls.is_empty() {
                    obj["tool_calls"] = serde_json::json!(m
                        .tool_calls
                        .iter()
                        .map(|c| serde_json::json!({"name": c.name, "arguments": c.arguments}))
                        .collect::<Vec<_>>());
                }
                obj
            })
            .collect();
        let canonical = serde_json::json!({
            "model_id": req.endpoint.model_id,
            "messages": wire_messages,
            "temperature": req.params.temperature,
            "top_p": req.params.top_p,
            "max_tokens": req.params.max_tokens,
            "tools": req.tools,
            "sample_index": req.sample_index,
        });
        let mut hasher = Sha256::new();
        hasher.update(canonical.to_string().as_bytes());
        CacheKey {
            digest: hex::encode(hasher.finalize()),
        }
    }
}

/// What gets persisted per cache entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheRecord {
    pub digest: String,
    pub model_id: String,
    pub sample_index: u32,
    pub message_count: usize,
    pub outcome: CompletionOutcome,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub writes: u64,
}

/// Append-only directory of completion outcomes keyed by request digest.
/// Concurrent readers and writers are safe: writes go to a temp file and
/// are renamed into place, so readers only ever see complete records.
pub struct ResponseCache {
    dir: PathBuf,
    hits: AtomicU64,
    misses: AtomicU64,
    writes: AtomicU64,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> std::io::Result<ResponseCache> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(ResponseCache {
            dir,
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            writes: AtomicU64::new(0),
        })
    }

    fn path_for(&self, key: &CacheKey) -> PathBuf {
        self.dir.join(format!("{}.json", key.digest))
    }

    pub fn get(&self, key: &CacheKey) -> Option<CompletionOutcome> {
        let bytes = match std::fs::read(self.path_for(key)) {
            Ok(bytes) => bytes,
            Err(_) => {
                self.misses.fetch_add(1, Ordering::Relaxed);
                return None;
            }
        };
        match serde_json::from_slice::<CacheRecord>(&bytes) {
            Ok(record) => {
                self.hits.fetch_add(1, Ordering::Relaxed);
                Some(record.outcome)
            }
            // A corrupt record is treated as absent and will be rewritten.
            Err(_) => {
                self.misses.fetch_add(1, Ordering::Relaxed);
                None
            }
        }
    }

    pub fn put(&self, key: &CacheKey, req: &CompletionRequest, outcome: &CompletionOutcome) {
        let record = CacheRecord {
            digest: key.digest.clone(),
            model_id: req.endpoint.model_id.clone(),
            sample_index: req.sample_index,
            message_count: req.conversation.messages.len(),
            outcome: outcome.clone(),
        };
        let bytes = match serde_json::to_vec_pretty(&record) {
            Ok(bytes) => bytes,
            Err(_) => return,
        };
        let target = self.path_for(key);
        let temp = self
            .dir
            .join(format!(".{}.{}.tmp", key.digest, std::process::id()));
        if std::fs::write(&temp, bytes).is_ok() && std::fs::rename(&temp, &target).is_ok() {
            self.writes.fetch_add(1, Ordering::Relaxed);
        }
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            writes: self.writes.load(Ordering::Relaxed),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ModelEndpoint, SamplingParams};
    use crate::conversation::{Conversation, Message};
    use crate::methods::render_tool_definition;

    fn request() -> CompletionRequest {
        CompletionRequest {
            endpoint: ModelEndpoint::new("m", "http://localhost", "model-x"),
            conversation: Conversation::with_messages(
                "c1",
                vec![Message::system("sys"), Message::user("hello")],
            ),
            params: SamplingParams::default(),
            tools: vec![render_tool_definition("X", "baseline").unwrap()],
            sample_index: 0,
        }
    }

    #[test]
    fn equal_requests_share_a_key() {
        assert_eq!(CacheKey::for_request(&request()), CacheKey::for_request(&request()));
    }

    #[test]
    fn key_is_sensitive_to_every_request_field() {
        let base = CacheKey::for_request(&request());

        let mut req = request();
        req.conversation.messages[1].content.push('!');
        assert_ne!(base, CacheKey::for_request(&req), "message content");

        let mut req = request();
        req.params.temperature = 0.5;
        assert_ne!(base, CacheKey::for_request(&req), "temperature");

        let mut req = request();
        req.params.max_tokens += 1;
        assert_ne!(base, CacheKey::for_request(&req), "max_tokens");

        let mut req = request();
        req.tools[0].tool_name = "terminate_tool".to_string();
        assert_ne!(base, CacheKey::for_request(&req), "tool name");

        let mut req = request();
        req.tools.clear();
        assert_ne!(base, CacheKey::for_request(&req), "tools present");

        let mut req = request();
        req.sample_index = 1;
        assert_ne!(base, CacheKey::for_request(&req), "sample_index");

        let mut req = request();
        req.endpoint.model_id = "model-y".to_string();
        assert_ne!(base, CacheKey::for_request(&req), "model id");
    }

    #[test]
    fn key_ignores_harness_metadata() {
        let base = CacheKey::for_request(&request());
        let mut req = request();
        req.conversation.messages[1].source_tag = Some("bail-probe".to_string());
        assert_eq!(base, CacheKey::for_request(&req));
        // Endpoint name is a label, not a wire field.
        let mut req = request();
        req.endpoint.name = "other-label".to_string();
        assert_eq!(base, CacheKey::for_request(&req));
    }

    #[test]
    fn cache_round_trips_outcomes() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        let req = request();
        let key = CacheKey::for_request(&req);

        assert_eq!(cache.get(&key), None);
        let outcome = CompletionOutcome::Ok {
            message: Message::assistant("hi"),
        };
        cache.put(&key, &req, &outcome);
        assert_eq!(cache.get(&key), Some(outcome));

        let stats = cache.stats();
        assert_eq!(
            (stats.hits, stats.misses, stats.writes),
            (1, 1, 1)
        );
    }

    #[test]
    fn corrupt_record_reads_as_absent() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        let key = CacheKey::for_request(&request());
        std::fs::write(dir.path().join(format!("{}.json", key.digest)), b"{oops").unwrap();
        assert_eq!(cache.get(&key), None);
    }

    #[test]
    fn records_are_self_describing() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        let req = request();
        let key = CacheKey::for_request(&req);
        cache.put(
            &key,
            &req,
            &CompletionOutcome::Blocked {
                reason: "content-filter".to_string(),
            },
        );
        let raw = std::fs::read_to_string(dir.path().join(format!("{}.json", key.digest))).unwrap();
        let record: CacheRecord = serde_json::from_str(&raw).unwrap();
        assert_eq!(record.model_id, "model-x");
        assert_eq!(record.message_count, 2);
        assert_eq!(record.digest, key.digest);
    }
}
