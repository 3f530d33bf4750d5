//! Turning model responses into [`BailSignal`]s, one parser per method.

use std::sync::OnceLock;

use regex::Regex;

use super::GlyphConfig;
use crate::conversation::Message;
use crate::signal::{BailSignal, UnknownReason};

/// Bail iff the response carries a tool call whose name matches exactly.
/// A plain text response, or a call to any other tool, is a continue.
pub fn detect_tool_bail(response: &Message, tool_name: &str) -> BailSignal {
    if response.tool_calls.iter().any(|c| c.name == tool_name) {
        BailSignal::Bail
    } else {
        BailSignal::Continue
    }
}

/// Case-insensitive substring check for the bail marker. Markers are ASCII;
/// matching is byte-wise so multibyte text around the marker is never split.
pub fn contains_marker(text: &str, marker: &str) -> bool {
    !find_marker_ranges(text, marker).is_empty()
}

/// Bail iff the marker appears anywhere in the text, in any letter case.
pub fn detect_string_bail(text: &str, marker: &str) -> BailSignal {
    if contains_marker(text, marker) {
        BailSignal::Bail
    } else {
        BailSignal::Continue
    }
}

fn span_regex() -> &'static Regex {
    // Tag names match case-insensitively with interior whitespace allowed.
    // The closing tag's "<" is optional: the check-in prompt itself shows a
    // closing tag without it, and models imitate that form.
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?is)<\s*wellbeing\s*>(.*?)<?\s*/\s*wellbeing\s*>").unwrap()
    })
}

fn partial_tag_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)<\s*wellbeing\s*>|/\s*wellbeing\s*>").unwrap())
}

fn classify_span(glyphs: &GlyphConfig, content: &str) -> Option<BailSignal> {
    let has_bail = content.contains(&glyphs.bail);
    let has_continue = content.contains(&glyphs.continue_);
    match (has_bail, has_continue) {
        (true, false) => Some(BailSignal::Bail),
        (false, true) => Some(BailSignal::Continue),
        // Empty, both glyphs at once, or unrelated content: unrecognized.
        _ => None,
    }
}

/// Parses a response to the check-in prompt using the default glyphs.
pub fn parse_wellbeing_response(text: &str) -> BailSignal {
    parse_wellbeing_response_with(&GlyphConfig::default(), text)
}

/// Scans for `<wellbeing>…</wellbeing>` spans and reads the glyph inside.
/// When several spans disagree, the last recognizable one wins (the
/// journaling that follows a choice restates it). Tag fragments without a
/// complete span are malformed; no tag at all is no-tag.
pub fn parse_wellbeing_response_with(glyphs: &GlyphConfig, text: &str) -> BailSignal {
    let mut last_recognized = None;
    let mut saw_span = false;
    for caps in span_regex().captures_iter(text) {
        saw_span = true;
        if let Some(signal) = classify_span(glyphs, &caps[1]) {
            last_recognized = Some(signal);
        }
    }
    if let Some(signal) = last_recognized {
        return signal;
    }
    if saw_span || partial_tag_regex().is_match(text) {
        BailSignal::Unknown(UnknownReason::MalformedTag)
    } else {
        BailSignal::Unknown(UnknownReason::NoTag)
    }
}

/// Non-overlapping byte ranges of case-insensitive marker occurrences.
fn find_marker_ranges(text: &str, marker: &str) -> Vec<(usize, usize)> {
    let text = text.as_bytes();
    let marker = marker.as_bytes();
    let mut ranges = Vec::new();
    if marker.is_empty() || text.len() < marker.len() {
        return ranges;
    }
    let mut i = 0;
    while i + marker.len() <= text.len() {
        if text[i..i + marker.len()].eq_ignore_ascii_case(marker) {
            ranges.push((i, i + marker.len()));
            i += marker.len();
        } else {
            i += 1;
        }
    }
    ranges
}

fn remove_ranges(text: &str, ranges: &[(usize, usize)]) -> String {
    // Widen each removal over the whitespace around it, remembering whether
    // there was any: collapsed whitespace becomes a single joining space,
    // while a marker embedded mid-word disappears without a trace.
    let mut widened: Vec<(usize, usize, bool)> = ranges
        .iter()
        .map(|&(orig_start, orig_end)| {
            let (mut start, mut end) = (orig_start, orig_end);
            while let Some(prev) = text[..start].chars().next_back() {
                if !prev.is_whitespace() {
                    break;
                }
                start -= prev.len_utf8();
            }
            while let Some(next) = text[end..].chars().next() {
                if !next.is_whitespace() {
                    break;
                }
                end += next.len_utf8();
            }
            (start, end, start < orig_start || end > orig_end)
        })
        .collect();
    widened.dedup_by(|next, prev| {
        if next.0 <= prev.1 {
            prev.1 = prev.1.max(next.1);
            prev.2 |= next.2;
            true
        } else {
            false
        }
    });

    let mut out = String::new();
    let mut pos = 0;
    for (start, end, ate_whitespace) in widened {
        out.push_str(&text[pos..start]);
        pos = end;
        if ate_whitespace && !out.is_empty() && end < text.len() {
            out.push(' ');
        }
    }
    out.push_str(&text[pos..]);
    out
}

/// Removes every case-insensitive occurrence of the marker, collapsing the
/// whitespace around each removal to a single space (none at the ends).
/// Runs to a fixpoint so the result never contains the marker, even when a
/// removal joins two fragments into a fresh occurrence.
pub fn strip_bail_artifacts(text: &str, marker: &str) -> String {
    let mut current = text.to_string();
    loop {
        let ranges = find_marker_ranges(&current, marker);
        if ranges.is_empty() {
            return current;
        }
        current = remove_ranges(&current, &ranges);
    }
}
