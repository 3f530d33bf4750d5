//! Experiment orchestration: single-turn evaluation, baseline no-method
//! runs, bail-prompt probes, transcript replay, and cross-model runs.
//!
//! Every operation reduces to a deterministic list of independent work items
//! fanned out over threads (or run sequentially without the `parallel`
//! feature) and a final sort, so concurrency affects timing only. Per-trial
//! failures are recorded as data — a run never stops because one completion
//! failed.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifiers::{classify_refusal, ClassifierError, JudgeBackend, JudgeIssue, RefusalLabel};
use crate::config::{ModelEndpoint, SamplingParams};
use crate::conversation::{Conversation, Message, Role};
use crate::datasets::{PromptDataset, PromptRecord, TranscriptDataset};
use crate::methods::{
    detect_string_bail, detect_tool_bail, parse_wellbeing_response, render_bail_prompt,
    render_string_suffix, render_tool_definition, strip_bail_artifacts, BailKind, BailMethodSpec,
    BailStringSpec, MethodError, PromptOrdering, ToolDefinition,
};
use crate::provider::{CompletionOutcome, CompletionRequest, Provider};
use crate::signal::{BailSignal, UnknownReason};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// `source_tag` put on the temporary check-in message so tests can prove it
/// never leaks into continuation contexts.
pub const BAIL_PROBE_TAG: &str = "bail-probe";

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Method(#[from] MethodError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error("plan invalid: {0}")]
    InvalidPlan(String),
    #[error("plan file {path}: {detail}")]
    PlanFile { path: String, detail: String },
    #[error("{path}: {source}")]
    LogIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {detail}")]
    LogParse {
        path: String,
        line: usize,
        detail: String,
    },
}

/// One completed measurement: a single sampled completion (plus probe, for
/// the prompt method) and what was read off it.
///
/// The signal is present exactly when a bail method was in play and the
/// outcome produced something readable (`ok`, or `blocked` — which reads as
/// unknown). Failed outcomes carry no signal; aggregation counts them as
/// unknown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub dataset_id: String,
    pub prompt_or_conv_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    /// Endpoint name the signal is attributed to.
    pub model: String,
    /// Present when a different endpoint produced the assistant response the
    /// signal was measured on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cross_model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<BailMethodSpec>,
    pub sample_index: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turn_index: Option<u32>,
    pub outcome: CompletionOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signal: Option<BailSignal>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refusal: Option<RefusalLabel>,
}

impl TrialRecord {
    /// Signal is present iff a method was configured and the outcome is
    /// readable (ok or blocked).
    pub fn invariant_holds(&self) -> bool {
        let readable = matches!(
            self.outcome,
            CompletionOutcome::Ok { .. } | CompletionOutcome::Blocked { .. }
        );
        self.signal.is_some() == (self.method.is_some() && readable)
    }

    fn sort_key(&self) -> (String, String, String, String, String, u32, u32) {
        (
            self.dataset_id.clone(),
            self.prompt_or_conv_id.clone(),
            self.method.as_ref().map(BailMethodSpec::label).unwrap_or_default(),
            self.model.clone(),
            self.cross_model.clone().unwrap_or_default(),
            self.sample_index,
            self.turn_index.unwrap_or(0),
        )
    }
}

/// Where replayed contexts get their assistant turns from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseSource {
    /// The transcript's own assistant messages (default: the signal then
    /// reflects the conversation as it actually happened).
    #[default]
    Original,
    /// The target model's fresh replies, accumulated turn by turn.
    Fresh,
}

impl std::str::FromStr for ResponseSource {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "original" => Ok(ResponseSource::Original),
            "fresh" => Ok(ResponseSource::Fresh),
            other => Err(format!(
                "unknown response source \"{other}\" (expected original or fresh)"
            )),
        }
    }
}

/// How refusals get judged, when a run classifies them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassifierConfig {
    Scripted {
        rules_path: String,
    },
    LlmJudge {
        endpoint: ModelEndpoint,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        template_path: Option<String>,
    },
}

/// Everything a run needs, loadable from a JSON file and overridable from
/// the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunPlan {
    /// Path of the prompt or transcript dataset.
    pub dataset: String,
    pub endpoint: ModelEndpoint,
    #[serde(default)]
    pub methods: Vec<BailMethodSpec>,
    #[serde(default)]
    pub params: SamplingParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classifier: Option<ClassifierConfig>,
    #[serde(default)]
    pub response_source: ResponseSource,
    /// Replay only: stop a conversation at its first bail instead of
    /// measuring every turn.
    #[serde(default)]
    pub intervention_semantics: bool,
    #[serde(default)]
    pub seed: u64,
}

impl RunPlan {
    pub fn from_path(path: &Path) -> Result<RunPlan, RunnerError> {
        let text = std::fs::read_to_string(path).map_err(|e| RunnerError::PlanFile {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| RunnerError::PlanFile {
            path: path.display().to_string(),
            detail: e.to_string(),
        })
    }

    /// Violation list; empty means the plan is runnable.
    pub fn validate(&self) -> Vec<String> {
        let mut violations = Vec::new();
        if self.dataset.is_empty() {
            violations.push("dataset path is empty".to_string());
        }
        if self.methods.is_empty() && self.classifier.is_none() {
            violations
                .push("plan needs at least one bail method or a classifier config".to_string());
        }
        for method in &self.methods {
            if let Err(e) = method.validate(crate::methods::VariantRegistry::builtin()) {
                violations.push(e.to_string());
            }
        }
        violations.extend(self.endpoint.validate());
        violations.extend(self.params.validate());
        violations
    }

    pub fn ensure_valid(&self) -> Result<(), RunnerError> {
        let violations = self.validate();
        if violations.is_empty() {
            Ok(())
        } else {
            Err(RunnerError::InvalidPlan(violations.join("; ")))
        }
    }

    /// Builds the judge the plan asks for, if any.
    pub fn build_judge(&self, provider: &Arc<Provider>) -> Result<Option<JudgeBackend>, RunnerError> {
        match &self.classifier {
            None => Ok(None),
            Some(ClassifierConfig::Scripted { rules_path }) => Ok(Some(
                JudgeBackend::scripted_from_path(Path::new(rules_path))?,
            )),
            Some(ClassifierConfig::LlmJudge {
                endpoint,
                template_path,
            }) => {
                let template = match template_path {
                    Some(p) => std::fs::read_to_string(p).map_err(|e| RunnerError::PlanFile {
                        path: p.clone(),
                        detail: e.to_string(),
                    })?,
                    None => crate::classifiers::default_judge_template().to_string(),
                };
                Ok(Some(JudgeBackend::llm_judge(
                    provider.clone(),
                    endpoint.clone(),
                    template,
                )?))
            }
        }
    }
}

/// One bail-probe exchange: the completion that answered the check-in and
/// the signal read from it.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub outcome: CompletionOutcome,
    pub signal: BailSignal,
}

impl ProbeResult {
    pub fn response(&self) -> Option<&Message> {
        self.outcome.message()
    }
}

/// Per-conversation rollup of a replay: did any tested turn bail?
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationBailFlag {
    pub conversation_id: String,
    pub method: String,
    pub bailed: bool,
    /// User turns a signal was attempted on.
    pub turns_tested: u32,
    /// Turns that produced a definite bail or continue.
    pub turns_resolved: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutcome {
    pub trials: Vec<TrialRecord>,
    pub flags: Vec<ConversationBailFlag>,
}

/// The per-method machinery a request needs: a tool definition to attach, a
/// system suffix to splice in, or a pre-rendered check-in prompt.
enum Apparatus {
    Tool(ToolDefinition),
    StringSuffix(BailStringSpec),
    Prompt { probe_text: String },
}

fn apparatus_for(spec: &BailMethodSpec, model_name: &str) -> Result<Apparatus, RunnerError> {
    spec.validate(crate::methods::VariantRegistry::builtin())?;
    Ok(match spec.kind {
        BailKind::Tool => Apparatus::Tool(render_tool_definition(model_name, &spec.variant)?),
        BailKind::String => {
            Apparatus::StringSuffix(render_string_suffix(model_name, &spec.variant)?)
        }
        BailKind::Prompt => {
            let ordering = spec
                .ordering
                .expect("validate() guarantees an ordering for the prompt kind");
            Apparatus::Prompt {
                probe_text: render_bail_prompt(ordering, &spec.variant)?,
            }
        }
    })
}

/// Applies the string method's suffix: appended to an existing leading
/// system message, or standing alone as one.
fn with_system_suffix(messages: &[Message], suffix: &str) -> Vec<Message> {
    let mut out = messages.to_vec();
    match out.first_mut() {
        Some(first) if first.role == Role::System => {
            first.content.push_str("\n\n");
            first.content.push_str(suffix);
        }
        _ => out.insert(0, Message::system(suffix)),
    }
    out
}

fn request(
    endpoint: &ModelEndpoint,
    params: &SamplingParams,
    id: &str,
    messages: Vec<Message>,
    tools: Vec<ToolDefinition>,
    sample_index: u32,
) -> CompletionRequest {
    CompletionRequest {
        endpoint: endpoint.clone(),
        conversation: Conversation::with_messages(id, messages),
        params: *params,
        tools,
        sample_index,
    }
}

/// Maps a readable outcome through the method's detector; failed outcomes
/// yield no signal (they land in the unknown bucket at aggregation).
fn signal_for(
    outcome: &CompletionOutcome,
    detect: impl FnOnce(&Message) -> BailSignal,
) -> Option<BailSignal> {
    match outcome {
        CompletionOutcome::Ok { message } => Some(detect(message)),
        CompletionOutcome::Blocked { .. } => {
            Some(BailSignal::Unknown(UnknownReason::RefusalBlocked))
        }
        CompletionOutcome::Failed { .. } => None,
    }
}

fn sort_records(records: &mut [TrialRecord]) {
    records.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
}

fn map_items<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Send + Sync,
{
    #[cfg(feature = "parallel")]
    {
        items.into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.into_iter().map(f).collect()
    }
}

/// Asks the check-in question at the end of `context` and reads the answer.
///
/// The rendered prompt rides in as a temporary user message tagged
/// [`BAIL_PROBE_TAG`]; the caller's context is untouched, so continuing the
/// conversation afterwards never includes the probe exchange.
pub fn run_bail_prompt_probe(
    provider: &Provider,
    context: &Conversation,
    ordering: PromptOrdering,
    variant: &str,
    endpoint: &ModelEndpoint,
    params: &SamplingParams,
    sample_index: u32,
) -> Result<ProbeResult, RunnerError> {
    let probe_text = render_bail_prompt(ordering, variant)?;
    Ok(probe_with_text(
        provider,
        context,
        &probe_text,
        endpoint,
        params,
        sample_index,
    ))
}

fn probe_with_text(
    provider: &Provider,
    context: &Conversation,
    probe_text: &str,
    endpoint: &ModelEndpoint,
    params: &SamplingParams,
    sample_index: u32,
) -> ProbeResult {
    debug_assert!(
        context.last_message().map(|m| m.role) == Some(Role::Assistant),
        "probe context must end with an assistant message"
    );
    let mut messages = context.messages.clone();
    messages.push(Message::user(probe_text).with_source_tag(BAIL_PROBE_TAG));
    let outcome = provider.complete(&request(
        endpoint,
        params,
        &context.id,
        messages,
        Vec::new(),
        sample_index,
    ));
    let signal = match &outcome {
        CompletionOutcome::Ok { message } => parse_wellbeing_response(&message.content),
        CompletionOutcome::Blocked { .. } => BailSignal::Unknown(UnknownReason::RefusalBlocked),
        CompletionOutcome::Failed { .. } => BailSignal::Unknown(UnknownReason::ProviderError),
    };
    ProbeResult { outcome, signal }
}

fn probe_record_signal(probe: &ProbeResult) -> Option<BailSignal> {
    match probe.outcome {
        CompletionOutcome::Failed { .. } => None,
        _ => Some(probe.signal.clone()),
    }
}

/// Runs every (prompt × method × sample) combination over a prompt dataset.
/// Tool and string trials are one completion each; prompt trials are a
/// response followed by a probe.
pub fn run_single_turn(
    provider: &Provider,
    plan: &RunPlan,
    dataset: &PromptDataset,
) -> Result<Vec<TrialRecord>, RunnerError> {
    plan.ensure_valid()?;
    if plan.methods.is_empty() {
        return Err(RunnerError::InvalidPlan(
            "single-turn runs need at least one bail method".to_string(),
        ));
    }
    let apparatuses: Vec<(BailMethodSpec, Apparatus)> = plan
        .methods
        .iter()
        .map(|m| Ok((m.clone(), apparatus_for(m, &plan.endpoint.name)?)))
        .collect::<Result<_, RunnerError>>()?;
    let mut items = Vec::new();
    for record in &dataset.records {
        for pair in &apparatuses {
            for k in 0..plan.params.samples_per_prompt {
                items.push((record, pair, k));
            }
        }
    }
    let mut records = map_items(items, |(record, (spec, apparatus), k)| {
        single_turn_trial(provider, plan, &dataset.name, record, spec, apparatus, k)
    });
    sort_records(&mut records);
    Ok(records)
}

fn single_turn_trial(
    provider: &Provider,
    plan: &RunPlan,
    dataset_name: &str,
    record: &PromptRecord,
    spec: &BailMethodSpec,
    apparatus: &Apparatus,
    sample_index: u32,
) -> TrialRecord {
    let endpoint = &plan.endpoint;
    let params = &plan.params;
    let user = Message::user(record.text.clone());
    let (outcome, signal) = match apparatus {
        Apparatus::Tool(def) => {
            let outcome = provider.complete(&request(
                endpoint,
                params,
                &record.id,
                vec![user],
                vec![def.clone()],
                sample_index,
            ));
            let signal = signal_for(&outcome, |m| detect_tool_bail(m, &def.tool_name));
            (outcome, signal)
        }
        Apparatus::StringSuffix(string_spec) => {
            let messages = with_system_suffix(&[user], &string_spec.system_suffix);
            let outcome = provider.complete(&request(
                endpoint,
                params,
                &record.id,
                messages,
                Vec::new(),
                sample_index,
            ));
            let signal = signal_for(&outcome, |m| {
                detect_string_bail(&m.content, &string_spec.marker)
            });
            (outcome, signal)
        }
        Apparatus::Prompt { probe_text, .. } => {
            let response = provider.complete(&request(
                endpoint,
                params,
                &record.id,
                vec![user.clone()],
                Vec::new(),
                sample_index,
            ));
            match response {
                CompletionOutcome::Ok { ref message } => {
                    let context = Conversation::with_messages(
                        record.id.clone(),
                        vec![user, message.clone()],
                    );
                    let probe = probe_with_text(
                        provider,
                        &context,
                        probe_text,
                        endpoint,
                        params,
                        sample_index,
                    );
                    let signal = probe_record_signal(&probe);
                    (probe.outcome, signal)
                }
                CompletionOutcome::Blocked { .. } => {
                    let signal = Some(BailSignal::Unknown(UnknownReason::RefusalBlocked));
                    (response, signal)
                }
                CompletionOutcome::Failed { .. } => (response, None),
            }
        }
    };
    TrialRecord {
        dataset_id: dataset_name.to_string(),
        prompt_or_conv_id: record.id.clone(),
        category: Some(record.category.clone()),
        model: endpoint.name.clone(),
        cross_model: None,
        method: Some(spec.clone()),
        sample_index,
        turn_index: None,
        outcome,
        signal,
        refusal: None,
    }
}

/// Samples each prompt with no bail apparatus and labels every response with
/// the refusal judge. These are the responses bail measurements are compared
/// against.
pub fn run_baseline_responses(
    provider: &Provider,
    plan: &RunPlan,
    dataset: &PromptDataset,
    judge: &JudgeBackend,
) -> Result<Vec<TrialRecord>, RunnerError> {
    plan.ensure_valid()?;
    let mut items = Vec::new();
    for record in &dataset.records {
        for k in 0..plan.params.samples_per_prompt {
            items.push((record, k));
        }
    }
    let mut records = map_items(items, |(record, k)| {
        let outcome = provider.complete(&request(
            &plan.endpoint,
            &plan.params,
            &record.id,
            vec![Message::user(record.text.clone())],
            Vec::new(),
            k,
        ));
        let refusal = match &outcome {
            CompletionOutcome::Ok { message } => {
                Some(classify_refusal(&record.text, message, judge))
            }
            CompletionOutcome::Blocked { .. } => {
                Some(RefusalLabel::Unknown(JudgeIssue::RefusalBlocked))
            }
            CompletionOutcome::Failed { .. } => None,
        };
        TrialRecord {
            dataset_id: dataset.name.clone(),
            prompt_or_conv_id: record.id.clone(),
            category: Some(record.category.clone()),
            model: plan.endpoint.name.clone(),
            cross_model: None,
            method: None,
            sample_index: k,
            turn_index: None,
            outcome,
            signal: None,
            refusal,
        }
    });
    sort_records(&mut records);
    Ok(records)
}

/// Replays each conversation turn by turn: at every user message the target
/// model answers with the bail method in play, the signal is read, and the
/// context then continues with either the transcript's own assistant turn or
/// the fresh reply, per [`ResponseSource`].
///
/// Fresh replies enter the context stripped of bail artifacts (tool calls
/// dropped, markers removed); if a fresh reply failed or stripped to
/// nothing, the original assistant turn stands in so later turns can still
/// be tested.
pub fn replay_transcripts(
    provider: &Provider,
    plan: &RunPlan,
    dataset: &TranscriptDataset,
) -> Result<ReplayOutcome, RunnerError> {
    plan.ensure_valid()?;
    if plan.methods.is_empty() {
        return Err(RunnerError::InvalidPlan(
            "replay runs need at least one bail method".to_string(),
        ));
    }
    let apparatuses: Vec<(BailMethodSpec, Apparatus)> = plan
        .methods
        .iter()
        .map(|m| Ok((m.clone(), apparatus_for(m, &plan.endpoint.name)?)))
        .collect::<Result<_, RunnerError>>()?;
    let mut items = Vec::new();
    for pair in &apparatuses {
        for conversation in &dataset.conversations {
            items.push((pair, conversation));
        }
    }
    let results = map_items(items, |((spec, apparatus), conversation)| {
        replay_one(provider, plan, &dataset.name, spec, apparatus, conversation)
    });
    let mut trials = Vec::new();
    let mut flags = Vec::new();
    for (mut conv_trials, flag) in results {
        trials.append(&mut conv_trials);
        flags.push(flag);
    }
    sort_records(&mut trials);
    flags.sort_by(|a, b| {
        (a.method.as_str(), a.conversation_id.as_str())
            .cmp(&(b.method.as_str(), b.conversation_id.as_str()))
    });
    Ok(ReplayOutcome { trials, flags })
}

/// What a fresh reply contributes to the continuation context, if anything.
fn fresh_context_message(outcome: &CompletionOutcome, apparatus: &Apparatus) -> Option<Message> {
    let message = outcome.message()?;
    let content = match apparatus {
        Apparatus::Tool(_) | Apparatus::Prompt { .. } => message.content.clone(),
        Apparatus::StringSuffix(spec) => strip_bail_artifacts(&message.content, &spec.marker),
    };
    if content.trim().is_empty() {
        return None;
    }
    Some(Message::assistant(content))
}

fn replay_one(
    provider: &Provider,
    plan: &RunPlan,
    dataset_name: &str,
    spec: &BailMethodSpec,
    apparatus: &Apparatus,
    conversation: &Conversation,
) -> (Vec<TrialRecord>, ConversationBailFlag) {
    let endpoint = &plan.endpoint;
    let params = &plan.params;
    let mut trials = Vec::new();
    let mut context: Vec<Message> = Vec::new();
    let mut bailed = false;
    let mut turns_tested = 0u32;
    let mut turns_resolved = 0u32;

    let make_record = |sample_index: u32,
                       turn_index: u32,
                       outcome: CompletionOutcome,
                       signal: Option<BailSignal>| TrialRecord {
        dataset_id: dataset_name.to_string(),
        prompt_or_conv_id: conversation.id.clone(),
        category: conversation.category.clone(),
        model: endpoint.name.clone(),
        cross_model: None,
        method: Some(spec.clone()),
        sample_index,
        turn_index: Some(turn_index),
        outcome,
        signal,
        refusal: None,
    };

    for (idx, message) in conversation.messages.iter().enumerate() {
        match message.role {
            Role::System => context.push(message.clone()),
            Role::Assistant | Role::Tool => {
                if plan.response_source == ResponseSource::Original {
                    context.push(message.clone());
                }
            }
            Role::User => {
                if plan.intervention_semantics && bailed {
                    break;
                }
                context.push(message.clone());
                let turn = turns_tested;
                turns_tested += 1;

                let response = match apparatus {
                    Apparatus::Tool(def) => provider.complete(&request(
                        endpoint,
                        params,
                        &conversation.id,
                        context.clone(),
                        vec![def.clone()],
                        0,
                    )),
                    Apparatus::StringSuffix(string_spec) => provider.complete(&request(
                        endpoint,
                        params,
                        &conversation.id,
                        with_system_suffix(&context, &string_spec.system_suffix),
                        Vec::new(),
                        0,
                    )),
                    Apparatus::Prompt { .. } => provider.complete(&request(
                        endpoint,
                        params,
                        &conversation.id,
                        context.clone(),
                        Vec::new(),
                        0,
                    )),
                };

                let mut turn_signals: Vec<Option<BailSignal>> = Vec::new();
                match apparatus {
                    Apparatus::Tool(def) => {
                        let signal =
                            signal_for(&response, |m| detect_tool_bail(m, &def.tool_name));
                        turn_signals.push(signal.clone());
                        trials.push(make_record(0, turn, response.clone(), signal));
                    }
                    Apparatus::StringSuffix(string_spec) => {
                        let signal = signal_for(&response, |m| {
                            detect_string_bail(&m.content, &string_spec.marker)
                        });
                        turn_signals.push(signal.clone());
                        trials.push(make_record(0, turn, response.clone(), signal));
                    }
                    Apparatus::Prompt { probe_text, .. } => match &response {
                        CompletionOutcome::Ok { message: fresh } => {
                            let mut probe_messages = context.clone();
                            probe_messages.push(fresh.clone());
                            let probe_context = Conversation::with_messages(
                                conversation.id.clone(),
                                probe_messages,
                            );
                            for k in 0..params.samples_per_prompt {
                                let probe = probe_with_text(
                                    provider,
                                    &probe_context,
                                    probe_text,
                                    endpoint,
                                    params,
                                    k,
                                );
                                let signal = probe_record_signal(&probe);
                                turn_signals.push(signal.clone());
                                trials.push(make_record(k, turn, probe.outcome, signal));
                            }
                        }
                        CompletionOutcome::Blocked { .. } => {
                            let signal =
                                Some(BailSignal::Unknown(UnknownReason::RefusalBlocked));
                            turn_signals.push(signal.clone());
                            trials.push(make_record(0, turn, response.clone(), signal));
                        }
                        CompletionOutcome::Failed { .. } => {
                            turn_signals.push(None);
                            trials.push(make_record(0, turn, response.clone(), None));
                        }
                    },
                }

                let turn_bailed = turn_signals
                    .iter()
                    .any(|s| matches!(s, Some(BailSignal::Bail)));
                let turn_resolved = turn_signals.iter().any(|s| {
                    matches!(s, Some(BailSignal::Bail) | Some(BailSignal::Continue))
                });
                bailed |= turn_bailed;
                if turn_resolved {
                    turns_resolved += 1;
                }

                if plan.response_source == ResponseSource::Fresh {
                    let next_original = conversation
                        .messages
                        .get(idx + 1)
                        .filter(|m| m.role == Role::Assistant);
                    match fresh_context_message(&response, apparatus) {
                        Some(fresh) => context.push(fresh),
                        None => {
                            if let Some(original) = next_original {
                                context.push(original.clone());
                            }
                        }
                    }
                }
            }
        }
    }

    let flag = ConversationBailFlag {
        conversation_id: conversation.id.clone(),
        method: spec.label(),
        bailed,
        turns_tested,
        turns_resolved,
    };
    (trials, flag)
}

/// Measures how one model reacts to another model's responses: `responder`
/// answers each prompt, then `bail_judge` takes the check-in on that
/// exchange. Signals are attributed to `bail_judge`, with the responder
/// recorded alongside.
pub fn run_cross_model(
    provider: &Provider,
    base: &PromptDataset,
    responder: &ModelEndpoint,
    bail_judge: &ModelEndpoint,
    ordering: PromptOrdering,
    variant: &str,
    params: &SamplingParams,
) -> Result<Vec<TrialRecord>, RunnerError> {
    let probe_text = render_bail_prompt(ordering, variant)?;
    let method = BailMethodSpec {
        kind: BailKind::Prompt,
        variant: variant.to_string(),
        ordering: Some(ordering),
    };
    let mut items = Vec::new();
    for record in &base.records {
        for k in 0..params.samples_per_prompt {
            items.push((record, k));
        }
    }
    let mut records = map_items(items, |(record, k)| {
        let user = Message::user(record.text.clone());
        let response = provider.complete(&request(
            responder,
            params,
            &record.id,
            vec![user.clone()],
            Vec::new(),
            k,
        ));
        let (outcome, signal) = match response {
            CompletionOutcome::Ok { ref message } => {
                let context = Conversation::with_messages(
                    record.id.clone(),
                    vec![user, message.clone()],
                );
                let probe =
                    probe_with_text(provider, &context, &probe_text, bail_judge, params, k);
                let signal = probe_record_signal(&probe);
                (probe.outcome, signal)
            }
            CompletionOutcome::Blocked { .. } => {
                let signal = Some(BailSignal::Unknown(UnknownReason::RefusalBlocked));
                (response, signal)
            }
            CompletionOutcome::Failed { .. } => (response, None),
        };
        TrialRecord {
            dataset_id: base.name.clone(),
            prompt_or_conv_id: record.id.clone(),
            category: Some(record.category.clone()),
            model: bail_judge.name.clone(),
            cross_model: Some(responder.name.clone()),
            method: Some(method.clone()),
            sample_index: k,
            turn_index: None,
            outcome,
            signal,
            refusal: None,
        }
    });
    sort_records(&mut records);
    Ok(records)
}

/// Writes a trial log, one record per line.
pub fn write_trial_log(path: &Path, records: &[TrialRecord]) -> Result<(), RunnerError> {
    let mut out = String::new();
    for record in records {
        out.push_str(&serde_json::to_string(record).expect("trial records serialize"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|source| RunnerError::LogIo {
        path: path.display().to_string(),
        source,
    })
}

/// Reads a trial log written by [`write_trial_log`].
pub fn read_trial_log(path: &Path) -> Result<Vec<TrialRecord>, RunnerError> {
    let text = std::fs::read_to_string(path).map_err(|source| RunnerError::LogIo {
        path: path.display().to_string(),
        source,
    })?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: TrialRecord =
            serde_json::from_str(line).map_err(|e| RunnerError::LogParse {
                path: path.display().to_string(),
                line: i + 1,
                detail: e.to_string(),
            })?;
        records.push(record);
    }
    Ok(records)
}
