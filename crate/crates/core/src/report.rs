//! Trial-log aggregation and report emission.
//!
//! Aggregation turns a sorted trial log into per-group rate rows: bail,
//! unknown, and (when labels exist) refusal, each with a Wilson half-width.
//! Unknown is its own class — it is never folded into bail or continue.
//! Single-turn logs aggregate per trial; replay logs aggregate per
//! conversation (a conversation bails when any turn does). Emission renders
//! rows and correlation reports as CSV, a structured document, or
//! plot-ready tables, ending with a provenance footer so identical inputs
//! always produce identical bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifiers::RefusalLabel;
use crate::provider::CacheStats;
use crate::runner::TrialRecord;
use crate::signal::BailSignal;
use crate::stats::{rate_estimate, CorrelationReport, RateEstimate, StatsError};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("group {group}: log mixes single-turn and replay records")]
    MixedGranularity { group: String },
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("unknown group key \"{0}\" (expected model, method, variant, ordering, category, or dataset)")]
    UnknownGroupKey(String),
    #[error("unknown format \"{0}\" (expected csv, structured, or plot-table)")]
    UnknownFormat(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {detail}")]
    Parse {
        path: std::path::PathBuf,
        detail: String,
    },
}

/// One aggregated group: who was measured, how, and the rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub model: String,
    pub method: String,
    pub variant: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ordering: Option<String>,
    pub bail: RateEstimate,
    pub unknown: RateEstimate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refusal: Option<RateEstimate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub no_refusal_bail: Option<f64>,
}

/// Dimensions a log can be grouped by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum GroupKey {
    Model,
    Method,
    Variant,
    Ordering,
    Category,
    Dataset,
}

impl std::str::FromStr for GroupKey {
    type Err = ReportError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "model" => Ok(GroupKey::Model),
            "method" => Ok(GroupKey::Method),
            "variant" => Ok(GroupKey::Variant),
            "ordering" => Ok(GroupKey::Ordering),
            "category" => Ok(GroupKey::Category),
            "dataset" => Ok(GroupKey::Dataset),
            other => Err(ReportError::UnknownGroupKey(other.to_string())),
        }
    }
}

/// Parses a comma-separated grouping such as `model,method`.
pub fn parse_grouping(spec: &str) -> Result<Vec<GroupKey>, ReportError> {
    spec.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect()
}

fn key_value(record: &TrialRecord, key: GroupKey) -> String {
    match key {
        GroupKey::Model => record.model.clone(),
        GroupKey::Method => record
            .method
            .as_ref()
            .map(|m| m.kind.to_string())
            .unwrap_or_else(|| "none".to_string()),
        GroupKey::Variant => record
            .method
            .as_ref()
            .map(|m| m.variant.clone())
            .unwrap_or_else(|| "none".to_string()),
        GroupKey::Ordering => record
            .method
            .as_ref()
            .and_then(|m| m.ordering)
            .map(|o| o.to_string())
            .unwrap_or_default(),
        GroupKey::Category => record.category.clone().unwrap_or_default(),
        GroupKey::Dataset => record.dataset_id.clone(),
    }
}

/// The value a display column shows for a group: the single distinct value
/// if there is one, `*` when the group spans several.
fn display_value(values: impl Iterator<Item = String>) -> String {
    let mut distinct: Option<String> = None;
    for value in values {
        match &distinct {
            None => distinct = Some(value),
            Some(prev) if *prev == value => {}
            Some(_) => return "*".to_string(),
        }
    }
    distinct.unwrap_or_default()
}

fn is_replay(record: &TrialRecord) -> bool {
    record.turn_index.is_some()
}

/// A trial counts as unknown when it produced no definite reading: an
/// unknown signal, a failed completion under a method, or (for baseline
/// trials) an undecided or missing refusal label.
fn counts_as_unknown(record: &TrialRecord) -> bool {
    match (&record.method, &record.signal) {
        (Some(_), Some(signal)) => signal.is_unknown(),
        (Some(_), None) => true,
        (None, _) => match &record.refusal {
            Some(label) => label.is_unknown(),
            None => true,
        },
    }
}

struct GroupCounts {
    total: u64,
    bail: u64,
    unknown: u64,
    refusal: u64,
    labeled: u64,
}

fn count_single_turn(records: &[&TrialRecord]) -> GroupCounts {
    let mut counts = GroupCounts {
        total: records.len() as u64,
        bail: 0,
        unknown: 0,
        refusal: 0,
        labeled: 0,
    };
    for record in records {
        if record.signal == Some(BailSignal::Bail) {
            counts.bail += 1;
        }
        if counts_as_unknown(record) {
            counts.unknown += 1;
        }
        if let Some(label) = &record.refusal {
            counts.labeled += 1;
            if label.is_refusal() {
                counts.refusal += 1;
            }
        }
    }
    counts
}

/// Conversation granularity: a conversation bails when any turn bailed, is
/// unknown when no turn resolved to bail or continue, and counts once.
fn count_replay(records: &[&TrialRecord]) -> GroupCounts {
    let mut per_conv: BTreeMap<&str, (bool, bool)> = BTreeMap::new();
    for record in records {
        let entry = per_conv
            .entry(record.prompt_or_conv_id.as_str())
            .or_insert((false, false));
        match &record.signal {
            Some(BailSignal::Bail) => {
                entry.0 = true;
                entry.1 = true;
            }
            Some(BailSignal::Continue) => entry.1 = true,
            _ => {}
        }
    }
    let total = per_conv.len() as u64;
    let bail = per_conv.values().filter(|(bailed, _)| *bailed).count() as u64;
    let unknown = per_conv
        .values()
        .filter(|(_, resolved)| !resolved)
        .count() as u64;
    GroupCounts {
        total,
        bail,
        unknown,
        refusal: 0,
        labeled: 0,
    }
}

/// Mean of per-prompt (1 − refusal) × bail, over prompts that have both a
/// labeled baseline and method trials.
fn no_refusal_bail_estimate(records: &[&TrialRecord]) -> Option<f64> {
    let mut per_prompt: BTreeMap<&str, (u64, u64, u64, u64)> = BTreeMap::new();
    for record in records {
        let entry = per_prompt
            .entry(record.prompt_or_conv_id.as_str())
            .or_insert((0, 0, 0, 0));
        match (&record.method, &record.signal, &record.refusal) {
            (Some(_), signal, _) => {
                entry.0 += 1;
                if *signal == Some(BailSignal::Bail) {
                    entry.1 += 1;
                }
            }
            (None, _, Some(label)) => match label {
                RefusalLabel::Refusal => {
                    entry.2 += 1;
                    entry.3 += 1;
                }
                RefusalLabel::Compliance => entry.2 += 1,
                RefusalLabel::Unknown(_) => {}
            },
            (None, _, None) => {}
        }
    }
    let mut sum = 0.0;
    let mut n = 0u64;
    for (bail_total, bail_count, labeled, refusal_count) in per_prompt.values() {
        if *bail_total == 0 || *labeled == 0 {
            continue;
        }
        let b = *bail_count as f64 / *bail_total as f64;
        let r = *refusal_count as f64 / *labeled as f64;
        sum += (1.0 - r) * b;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

pub struct AggregateOutcome {
    pub rows: Vec<AggregateRow>,
    pub warnings: Vec<String>,
}

/// Groups a trial log and computes each group's rates.
pub fn aggregate(
    trials: &[TrialRecord],
    grouping: &[GroupKey],
) -> Result<AggregateOutcome, ReportError> {
    let mut warnings = Vec::new();
    if trials.is_empty() {
        warnings.push("no trials in log; no rows emitted".to_string());
        return Ok(AggregateOutcome {
            rows: Vec::new(),
            warnings,
        });
    }
    let mut groups: BTreeMap<Vec<String>, Vec<&TrialRecord>> = BTreeMap::new();
    for record in trials {
        let key: Vec<String> = grouping.iter().map(|k| key_value(record, *k)).collect();
        groups.entry(key).or_default().push(record);
    }
    let mut rows = Vec::new();
    for (key, records) in &groups {
        let group_label = if key.is_empty() {
            "(all)".to_string()
        } else {
            key.join("/")
        };
        if records.is_empty() {
            warnings.push(format!("group {group_label} is empty; dropped"));
            continue;
        }
        let replay = is_replay(records[0]);
        if records.iter().any(|r| is_replay(r) != replay) {
            return Err(ReportError::MixedGranularity { group: group_label });
        }
        let counts = if replay {
            count_replay(records)
        } else {
            count_single_turn(records)
        };
        let refusal = (counts.labeled > 0)
            .then(|| rate_estimate(counts.refusal, counts.total))
            .transpose()?;
        let ordering = display_value(records.iter().map(|r| {
            r.method
                .as_ref()
                .and_then(|m| m.ordering)
                .map(|o| o.to_string())
                .unwrap_or_default()
        }));
        rows.push(AggregateRow {
            model: display_value(records.iter().map(|r| key_value(r, GroupKey::Model))),
            method: display_value(records.iter().map(|r| key_value(r, GroupKey::Method))),
            variant: display_value(records.iter().map(|r| key_value(r, GroupKey::Variant))),
            ordering: (!ordering.is_empty()).then_some(ordering),
            bail: rate_estimate(counts.bail, counts.total)?,
            unknown: rate_estimate(counts.unknown, counts.total)?,
            refusal,
            no_refusal_bail: if replay {
                None
            } else {
                no_refusal_bail_estimate(records)
            },
        });
    }
    Ok(AggregateOutcome { rows, warnings })
}

/// Output shapes for [`emit_report`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Structured,
    PlotTable,
}

impl std::str::FromStr for ReportFormat {
    type Err = ReportError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "structured" => Ok(ReportFormat::Structured),
            "plot-table" => Ok(ReportFormat::PlotTable),
            other => Err(ReportError::UnknownFormat(other.to_string())),
        }
    }
}

/// What went into producing a report; rendered as the footer. Contains no
/// timestamps, so reruns over the same inputs emit identical bytes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub plan_hash: String,
    pub seed: u64,
    pub cache: CacheStats,
}

/// A correlation report with the label it belongs to (usually a bail
/// method's display name).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledCorrelation {
    pub label: String,
    #[serde(flatten)]
    pub report: CorrelationReport,
}

/// One model's rates in a bail-vs-refusal scatter series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub model: String,
    pub bail_pct: f64,
    pub refusal_pct: f64,
}

/// Per-model bail and refusal rates, one point series per bail method;
/// the input shape for the correlation analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterFixture {
    #[serde(default)]
    pub description: String,
    pub methods: BTreeMap<String, Vec<ScatterPoint>>,
}

pub fn load_scatter_fixture(path: &std::path::Path) -> Result<ScatterFixture, ReportError> {
    let text = std::fs::read_to_string(path).map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| ReportError::Parse {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

/// Runs the full correlation suite (Pearson, Kendall, distance correlation
/// with permutation p) on each method series, refusal rate against bail
/// rate.
pub fn correlate_scatter(
    fixture: &ScatterFixture,
    permutations: u64,
    seed: u64,
) -> Result<Vec<LabeledCorrelation>, ReportError> {
    let mut out = Vec::new();
    for (label, points) in &fixture.methods {
        let refusal: Vec<f64> = points.iter().map(|p| p.refusal_pct).collect();
        let bail: Vec<f64> = points.iter().map(|p| p.bail_pct).collect();
        let report = crate::stats::correlation_report(&refusal, &bail, permutations, seed)?;
        out.push(LabeledCorrelation {
            label: label.clone(),
            report,
        });
    }
    Ok(out)
}

fn pct(rate: f64) -> f64 {
    rate * 100.0
}

/// Renders rows and correlations into one of the supported formats.
/// Percentages are emitted at full double precision; the human-facing
/// summary tables live in the CLI, not here.
pub fn emit_report(
    rows: &[AggregateRow],
    correlations: &[LabeledCorrelation],
    format: ReportFormat,
    provenance: &Provenance,
) -> String {
    match format {
        ReportFormat::Csv => emit_csv(rows, correlations, provenance),
        ReportFormat::Structured => emit_structured(rows, correlations, provenance),
        ReportFormat::PlotTable => emit_plot_table(rows, provenance),
    }
}

fn footer(provenance: &Provenance) -> String {
    format!(
        "# plan-hash: {}\n# seed: {}\n# cache: hits={} misses={} writes={}\n",
        if provenance.plan_hash.is_empty() {
            "none"
        } else {
            &provenance.plan_hash
        },
        provenance.seed,
        provenance.cache.hits,
        provenance.cache.misses,
        provenance.cache.writes,
    )
}

fn opt(value: Option<f64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

fn csv_block(records: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for record in records {
        writer.write_record(&record).expect("in-memory csv write");
    }
    String::from_utf8(writer.into_inner().expect("in-memory csv flush"))
        .expect("csv output is utf-8")
}

fn emit_csv(
    rows: &[AggregateRow],
    correlations: &[LabeledCorrelation],
    provenance: &Provenance,
) -> String {
    let header = [
        "model",
        "method",
        "variant",
        "ordering",
        "total",
        "bail_count",
        "bail_pct",
        "bail_err_pct",
        "unknown_count",
        "unknown_pct",
        "unknown_err_pct",
        "refusal_pct",
        "refusal_err_pct",
        "no_refusal_bail_pct",
    ]
    .map(String::from)
    .to_vec();
    let mut out = csv_block(std::iter::once(header).chain(rows.iter().map(|row| {
        vec![
            row.model.clone(),
            row.method.clone(),
            row.variant.clone(),
            row.ordering.clone().unwrap_or_default(),
            row.bail.total.to_string(),
            row.bail.count.to_string(),
            pct(row.bail.rate).to_string(),
            pct(row.bail.halfwidth95).to_string(),
            row.unknown.count.to_string(),
            pct(row.unknown.rate).to_string(),
            pct(row.unknown.halfwidth95).to_string(),
            opt(row.refusal.map(|r| pct(r.rate))),
            opt(row.refusal.map(|r| pct(r.halfwidth95))),
            opt(row.no_refusal_bail.map(pct)),
        ]
    })));
    if !correlations.is_empty() {
        let header = [
            "label",
            "n",
            "pearson_r",
            "pearson_p",
            "kendall_tau",
            "kendall_p",
            "dcor",
            "dcor_p",
            "permutations",
            "corr_seed",
        ]
        .map(String::from)
        .to_vec();
        out.push('\n');
        out.push_str(&csv_block(std::iter::once(header).chain(
            correlations.iter().map(|c| {
                vec![
                    c.label.clone(),
                    c.report.n.to_string(),
                    c.report.pearson_r.to_string(),
                    c.report.pearson_p.to_string(),
                    c.report.kendall_tau.to_string(),
                    c.report.kendall_p.to_string(),
                    c.report.dcor.to_string(),
                    c.report.dcor_p.to_string(),
                    c.report.permutations.to_string(),
                    c.report.seed.to_string(),
                ]
            }),
        )));
    }
    out.push_str(&footer(provenance));
    out
}

fn emit_structured(
    rows: &[AggregateRow],
    correlations: &[LabeledCorrelation],
    provenance: &Provenance,
) -> String {
    #[derive(Serialize)]
    struct Document<'a> {
        rows: &'a [AggregateRow],
        correlations: &'a [LabeledCorrelation],
        provenance: &'a Provenance,
    }
    let mut out = serde_json::to_string_pretty(&Document {
        rows,
        correlations,
        provenance,
    })
    .expect("report document serializes");
    out.push('\n');
    out
}

/// One table per method, in the shape plotting scripts expect: a label plus
/// bail rate, its half-width, and the unknown rate, all in percent.
fn emit_plot_table(rows: &[AggregateRow], provenance: &Provenance) -> String {
    let mut methods: BTreeMap<String, Vec<&AggregateRow>> = BTreeMap::new();
    for row in rows {
        let method_label = match &row.ordering {
            Some(ordering) => format!("{}:{}:{}", row.method, row.variant, ordering),
            None => format!("{}:{}", row.method, row.variant),
        };
        methods.entry(method_label).or_default().push(row);
    }
    let mut out = String::new();
    for (method_label, method_rows) in &methods {
        let _ = writeln!(out, "# method: {method_label}");
        out.push_str("Label bailPr bailPr_err unknownPr\n");
        for row in method_rows {
            let _ = writeln!(
                out,
                "{} {} {} {}",
                row.model,
                pct(row.bail.rate),
                pct(row.bail.halfwidth95),
                pct(row.unknown.rate),
            );
        }
        out.push('\n');
    }
    out.push_str(&footer(provenance));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::methods::BailMethodSpec;
    use crate::provider::CompletionOutcome;
    use crate::signal::UnknownReason;

    fn trial(
        id: &str,
        model: &str,
        method: Option<&str>,
        sample: u32,
        turn: Option<u32>,
        signal: Option<BailSignal>,
        refusal: Option<RefusalLabel>,
    ) -> TrialRecord {
        TrialRecord {
            dataset_id: "d".to_string(),
            prompt_or_conv_id: id.to_string(),
            category: Some("Test".to_string()),
            model: model.to_string(),
            cross_model: None,
            method: method.map(|m| m.parse::<BailMethodSpec>().unwrap()),
            sample_index: sample,
            turn_index: turn,
            outcome: CompletionOutcome::Ok {
                message: crate::conversation::Message::assistant("x"),
            },
            signal,
            refusal,
        }
    }

    #[test]
    fn counting_matches_the_worked_example() {
        // 10 trials: 3 bail, 1 unknown, 6 continue.
        let mut trials = Vec::new();
        for i in 0..10 {
            let signal = if i < 3 {
                BailSignal::Bail
            } else if i == 3 {
                BailSignal::Unknown(UnknownReason::NoTag)
            } else {
                BailSignal::Continue
            };
            trials.push(trial(
                &format!("p{i}"),
                "m",
                Some("tool:baseline"),
                0,
                None,
                Some(signal),
                None,
            ));
        }
        let outcome = aggregate(&trials, &[GroupKey::Model]).unwrap();
        assert_eq!(outcome.rows.len(), 1);
        let row = &outcome.rows[0];
        assert_eq!(row.bail.count, 3);
        assert_eq!(row.bail.total, 10);
        assert!((row.bail.rate - 0.3).abs() < 1e-15);
        assert_eq!(row.unknown.count, 1);
        assert_eq!(row.bail.total, row.unknown.total);
        let wilson = crate::stats::wilson_halfwidth(3, 10).unwrap();
        assert_eq!(row.bail.halfwidth95, wilson);
        // Bail + Continue + Unknown = total.
        assert_eq!(row.bail.count + 6 + row.unknown.count, row.bail.total);
    }

    #[test]
    fn grouping_splits_along_the_requested_keys() {
        let trials = vec![
            trial("p0", "a", Some("tool:baseline"), 0, None, Some(BailSignal::Bail), None),
            trial("p0", "a", Some("string:baseline"), 0, None, Some(BailSignal::Continue), None),
            trial("p0", "b", Some("tool:baseline"), 0, None, Some(BailSignal::Continue), None),
        ];
        let outcome = aggregate(&trials, &[GroupKey::Model, GroupKey::Method]).unwrap();
        assert_eq!(outcome.rows.len(), 3);
        let grouped = aggregate(&trials, &[GroupKey::Model]).unwrap();
        assert_eq!(grouped.rows.len(), 2);
        // Two methods in model a's group → the method column shows a star.
        let a_row = grouped.rows.iter().find(|r| r.model == "a").unwrap();
        assert_eq!(a_row.method, "*");
        assert_eq!(a_row.bail.total, 2);
    }

    #[test]
    fn failed_trials_and_undecided_labels_count_as_unknown() {
        let mut failed = trial("p0", "m", Some("tool:baseline"), 0, None, None, None);
        failed.outcome = CompletionOutcome::Failed {
            reason: "http-500".to_string(),
            attempts: 5,
        };
        let baseline_unknown = trial(
            "p1",
            "m",
            None,
            0,
            None,
            None,
            Some(RefusalLabel::Unknown(crate::classifiers::JudgeIssue::JudgeError)),
        );
        let mut baseline_failed = trial("p2", "m", None, 0, None, None, None);
        baseline_failed.outcome = CompletionOutcome::Failed {
            reason: "http-500".to_string(),
            attempts: 5,
        };
        let outcome = aggregate(
            &[failed, baseline_unknown, baseline_failed],
            &[GroupKey::Model],
        )
        .unwrap();
        assert_eq!(outcome.rows[0].unknown.count, 3);
    }

    #[test]
    fn replay_logs_aggregate_per_conversation() {
        // Conversation c0 bails on its second turn, c1 never bails, c2 never
        // resolves. Flags: [true, false] over resolved → 50% bail of 3 total
        // conversations with 1 unknown.
        let trials = vec![
            trial("c0", "m", Some("string:baseline"), 0, Some(0), Some(BailSignal::Continue), None),
            trial("c0", "m", Some("string:baseline"), 0, Some(1), Some(BailSignal::Bail), None),
            trial("c1", "m", Some("string:baseline"), 0, Some(0), Some(BailSignal::Continue), None),
            trial(
                "c2",
                "m",
                Some("string:baseline"),
                0,
                Some(0),
                Some(BailSignal::Unknown(UnknownReason::NoTag)),
                None,
            ),
        ];
        let outcome = aggregate(&trials, &[]).unwrap();
        let row = &outcome.rows[0];
        assert_eq!(row.bail.total, 3);
        assert_eq!(row.bail.count, 1);
        assert_eq!(row.unknown.count, 1);
    }

    #[test]
    fn mixed_granularity_in_one_group_is_rejected() {
        let trials = vec![
            trial("p0", "m", Some("tool:baseline"), 0, None, Some(BailSignal::Bail), None),
            trial("c0", "m", Some("tool:baseline"), 0, Some(0), Some(BailSignal::Bail), None),
        ];
        assert!(matches!(
            aggregate(&trials, &[]),
            Err(ReportError::MixedGranularity { .. })
        ));
        // Separated by dataset they aggregate fine.
        let mut separated = trials;
        separated[1].dataset_id = "replay-log".to_string();
        assert!(aggregate(&separated, &[GroupKey::Dataset]).is_ok());
    }

    #[test]
    fn no_refusal_bail_combines_baseline_and_method_trials() {
        // Prompt p0: bail rate 0.5, refusal rate 0.5 → (1-0.5)*0.5 = 0.25.
        // Prompt p1: bail rate 0.0, refusal rate 0.0 → 0.0. Mean = 0.125.
        let trials = vec![
            trial("p0", "m", Some("tool:baseline"), 0, None, Some(BailSignal::Bail), None),
            trial("p0", "m", Some("tool:baseline"), 1, None, Some(BailSignal::Continue), None),
            trial("p0", "m", None, 0, None, None, Some(RefusalLabel::Refusal)),
            trial("p0", "m", None, 1, None, None, Some(RefusalLabel::Compliance)),
            trial("p1", "m", Some("tool:baseline"), 0, None, Some(BailSignal::Continue), None),
            trial("p1", "m", Some("tool:baseline"), 1, None, Some(BailSignal::Continue), None),
            trial("p1", "m", None, 0, None, None, Some(RefusalLabel::Compliance)),
            trial("p1", "m", None, 1, None, None, Some(RefusalLabel::Compliance)),
        ];
        let outcome = aggregate(&trials, &[GroupKey::Model]).unwrap();
        let row = &outcome.rows[0];
        assert!((row.no_refusal_bail.unwrap() - 0.125).abs() < 1e-15);
        // Refusal rate: 1 refusal over 8 total trials in the group.
        assert_eq!(row.refusal.unwrap().count, 1);
    }

    #[test]
    fn empty_log_warns_and_emits_nothing() {
        let outcome = aggregate(&[], &[GroupKey::Model]).unwrap();
        assert!(outcome.rows.is_empty());
        assert_eq!(outcome.warnings.len(), 1);
    }

    fn sample_rows() -> Vec<AggregateRow> {
        let trials = vec![
            trial("p0", "model-a", Some("tool:baseline"), 0, None, Some(BailSignal::Bail), None),
            trial("p1", "model-a", Some("tool:baseline"), 0, None, Some(BailSignal::Continue), None),
            trial(
                "p0",
                "model-a",
                Some("prompt:baseline:continue_first"),
                0,
                None,
                Some(BailSignal::Continue),
                None,
            ),
        ];
        aggregate(&trials, &[GroupKey::Model, GroupKey::Method]).unwrap().rows
    }

    #[test]
    fn csv_report_has_header_rows_and_footer() {
        let rows = sample_rows();
        let text = emit_report(&rows, &[], ReportFormat::Csv, &Provenance::default());
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("model,method,variant,ordering,total,bail_count"));
        assert_eq!(lines.len(), 1 + rows.len() + 3);
        assert!(text.contains("# plan-hash: none"));
        assert!(text.contains("# seed: 0"));
        assert!(!text.to_lowercase().contains("time"));
    }

    #[test]
    fn plot_table_lists_the_figure_columns_per_method() {
        let rows = sample_rows();
        let text = emit_report(&rows, &[], ReportFormat::PlotTable, &Provenance::default());
        assert!(text.contains("# method: prompt:baseline:continue_first"));
        assert!(text.contains("# method: tool:baseline"));
        let header_count = text
            .lines()
            .filter(|l| *l == "Label bailPr bailPr_err unknownPr")
            .count();
        assert_eq!(header_count, 2);
        assert!(text.lines().any(|l| l.starts_with("model-a 50 ")));
    }

    #[test]
    fn reports_are_byte_identical_across_calls() {
        let rows = sample_rows();
        let provenance = Provenance {
            plan_hash: "abc123".to_string(),
            seed: 7,
            cache: CacheStats::default(),
        };
        for format in [ReportFormat::Csv, ReportFormat::Structured, ReportFormat::PlotTable] {
            let a = emit_report(&rows, &[], format, &provenance);
            let b = emit_report(&rows, &[], format, &provenance);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn scatter_fixture_loads_and_correlates() {
        let path = std::path::Path::new(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/data/model_scatter.json"
        ));
        let fixture = load_scatter_fixture(path).unwrap();
        assert_eq!(fixture.methods.len(), 4);
        assert!(fixture.methods.values().all(|pts| pts.len() == 32));
        let reports = correlate_scatter(&fixture, 100, 0).unwrap();
        let tool = reports.iter().find(|c| c.label == "bail_tool").unwrap();
        assert!((tool.report.pearson_r - -0.0500).abs() < 0.005);
        assert_eq!(tool.report.n, 32);
    }

    #[test]
    fn structured_report_parses_back() {
        let rows = sample_rows();
        let text = emit_report(&rows, &[], ReportFormat::Structured, &Provenance::default());
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(value["rows"].as_array().unwrap().len(), rows.len());
        assert!(value["provenance"]["plan_hash"].is_string());
    }
}
