//! Command-line front end: runs, replays, aggregation, and report files.
//!
//! Every run-style subcommand writes a trial log (one JSON record per line)
//! plus a `.meta.json` sidecar holding the provenance that later lands in
//! report footers: a hash of the effective plan, the seed, and cache
//! statistics. `stats` and `report` consume those logs; given the same
//! inputs they emit identical bytes.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::classifiers::JudgeBackend;
use crate::config::{ModelEndpoint, SamplingParams};
use crate::datasets::{load_prompt_dataset, load_transcripts_filtered, TranscriptFormat};
use crate::methods::{BailKind, BailMethodSpec};
use crate::provider::{MockBackend, Provider};
use crate::report::{
    aggregate, correlate_scatter, emit_report, load_scatter_fixture, parse_grouping,
    LabeledCorrelation, Provenance, ReportFormat,
};
use crate::runner::{
    read_trial_log, replay_transcripts, run_baseline_responses, run_cross_model, run_single_turn,
    write_trial_log, ResponseSource, RunPlan, TrialRecord,
};

#[derive(Debug, Parser)]
#[command(
    name = "bailharness",
    version,
    about = "Measure when chat models choose to leave conversations"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run single-turn bail measurements over a prompt dataset.
    Run(RunArgs),
    /// Replay transcripts turn by turn, probing each user turn.
    Replay(ReplayArgs),
    /// Let one model answer while another judges the check-in prompt.
    Crossmodel(CrossModelArgs),
    /// Collect unmodified responses and label them for refusal.
    Baseline(BaselineArgs),
    /// Aggregate a trial log into rate rows and correlation reports.
    Stats(StatsArgs),
    /// Render a trial log as CSV, a structured document, or plot tables.
    Report(ReportArgs),
}

/// Flags shared by every subcommand that talks to a model.
#[derive(Debug, Args)]
pub struct PlanArgs {
    /// Plan file (JSON); the flags below override its fields.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    /// Endpoint config file (JSON). Required without --plan.
    #[arg(long)]
    pub endpoint: Option<PathBuf>,
    /// Dataset path. Required without --plan.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Bail method as kind:variant[:ordering]; repeat for several.
    #[arg(long = "method", value_name = "SPEC")]
    pub methods: Vec<String>,
    /// Completions sampled per prompt.
    #[arg(long)]
    pub samples: Option<u32>,
    /// Run seed, recorded in provenance.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Response cache directory; omit to disable caching.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Mock rules file (JSON); replaces the HTTP backend.
    #[arg(long)]
    pub mock: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub plan: PlanArgs,
    /// Trial log destination.
    #[arg(long, default_value = "trials.jsonl")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[command(flatten)]
    pub plan: PlanArgs,
    /// Where probed turns get their assistant context from.
    #[arg(long, value_name = "original|fresh")]
    pub response_source: Option<ResponseSource>,
    /// Keep only transcripts tagged with this language.
    #[arg(long)]
    pub language: Option<String>,
    /// Trial log destination.
    #[arg(long, default_value = "replay.jsonl")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CrossModelArgs {
    /// Endpoint config for the model answering the check-in prompt.
    #[arg(long)]
    pub endpoint: PathBuf,
    /// Endpoint config for the model that wrote the responses under test.
    #[arg(long)]
    pub responder: PathBuf,
    /// Prompt dataset path.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Check-in prompt method as prompt:variant:ordering.
    #[arg(long, default_value = "prompt:baseline:continue_first")]
    pub method: String,
    /// Completions sampled per prompt.
    #[arg(long)]
    pub samples: Option<u32>,
    /// Run seed, recorded in provenance.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Response cache directory; omit to disable caching.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Mock rules file (JSON); replaces the HTTP backend.
    #[arg(long)]
    pub mock: Option<PathBuf>,
    /// Trial log destination.
    #[arg(long, default_value = "crossmodel.jsonl")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub plan: PlanArgs,
    /// Scripted judge rules (JSON); overrides the plan's classifier.
    #[arg(long)]
    pub judge: Option<PathBuf>,
    /// Trial log destination.
    #[arg(long, default_value = "baseline.jsonl")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Trial log to aggregate.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Comma-separated group keys: model, method, variant, ordering,
    /// category, dataset.
    #[arg(long, default_value = "model,method")]
    pub group: String,
    /// Bail-vs-refusal scatter file to run the correlation suite on.
    #[arg(long)]
    pub correlate: Option<PathBuf>,
    /// Permutations behind each distance-correlation p value.
    #[arg(long, default_value_t = 10_000)]
    pub permutations: u64,
    /// Seed for the permutation draws.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub stats: StatsArgs,
    /// Output shape: csv, structured, or plot-table.
    #[arg(long, default_value = "csv")]
    pub format: String,
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Replay(args) => cmd_replay(args),
        Command::Crossmodel(args) => cmd_crossmodel(args),
        Command::Baseline(args) => cmd_baseline(args),
        Command::Stats(args) => cmd_stats(args),
        Command::Report(args) => cmd_report(args),
    }
}

fn load_endpoint(path: &Path) -> Result<ModelEndpoint> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read endpoint config {}", path.display()))?;
    let endpoint: ModelEndpoint = serde_json::from_str(&text)
        .with_context(|| format!("cannot parse endpoint config {}", path.display()))?;
    Ok(endpoint)
}

/// Builds the effective plan: the plan file when given, then flag overrides.
fn assemble_plan(args: &PlanArgs) -> Result<RunPlan> {
    let mut plan = match &args.plan {
        Some(path) => RunPlan::from_path(path)?,
        None => {
            let endpoint = args
                .endpoint
                .as_deref()
                .ok_or_else(|| anyhow!("--endpoint is required without --plan"))?;
            let dataset = args
                .dataset
                .as_deref()
                .ok_or_else(|| anyhow!("--dataset is required without --plan"))?;
            RunPlan {
                dataset: dataset.to_string_lossy().into_owned(),
                endpoint: load_endpoint(endpoint)?,
                methods: Vec::new(),
                params: SamplingParams::default(),
                classifier: None,
                response_source: ResponseSource::default(),
                intervention_semantics: false,
                seed: 0,
            }
        }
    };
    if args.plan.is_some() {
        if let Some(path) = &args.endpoint {
            plan.endpoint = load_endpoint(path)?;
        }
        if let Some(path) = &args.dataset {
            plan.dataset = path.to_string_lossy().into_owned();
        }
    }
    if !args.methods.is_empty() {
        plan.methods = args
            .methods
            .iter()
            .map(|m| m.parse::<BailMethodSpec>())
            .collect::<Result<_, _>>()?;
    }
    if let Some(samples) = args.samples {
        plan.params.samples_per_prompt = samples;
    }
    if let Some(seed) = args.seed {
        plan.seed = seed;
    }
    Ok(plan)
}

fn build_provider(mock: Option<&Path>, cache_dir: Option<&Path>) -> Result<Provider> {
    let mut provider = match mock {
        Some(path) => Provider::new(Box::new(MockBackend::from_path(path)?)),
        None => Provider::http(),
    };
    if let Some(dir) = cache_dir {
        provider = provider
            .with_cache_dir(dir)
            .with_context(|| format!("cannot open cache directory {}", dir.display()))?;
    }
    Ok(provider)
}

/// Hash of the canonical (parsed, re-serialized) plan, so formatting of the
/// plan file never changes provenance.
pub fn plan_hash(plan: &RunPlan) -> String {
    let canonical = serde_json::to_string(plan).expect("plan serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

fn meta_path(log: &Path) -> PathBuf {
    log.with_extension("meta.json")
}

fn write_provenance(log: &Path, provenance: &Provenance) -> Result<()> {
    let path = meta_path(log);
    let mut text = serde_json::to_string_pretty(provenance)?;
    text.push('\n');
    std::fs::write(&path, text)
        .with_context(|| format!("cannot write provenance sidecar {}", path.display()))?;
    Ok(())
}

/// Provenance recorded next to a log, or an empty default when the sidecar
/// is missing (hand-assembled logs are still reportable).
fn read_provenance(log: &Path) -> Provenance {
    std::fs::read_to_string(meta_path(log))
        .ok()
        .and_then(|text| serde_json::from_str(&text).ok())
        .unwrap_or_default()
}

fn finish_run(
    out: &Path,
    records: &[TrialRecord],
    provider: &Provider,
    plan: &RunPlan,
) -> Result<()> {
    write_trial_log(out, records)?;
    let stats = provider.cache_stats();
    write_provenance(
        out,
        &Provenance {
            plan_hash: plan_hash(plan),
            seed: plan.seed,
            cache: stats,
        },
    )?;
    println!(
        "trials: {}, backend-calls: {}, cache: hits={} misses={} writes={}",
        records.len(),
        provider.backend_calls(),
        stats.hits,
        stats.misses,
        stats.writes,
    );
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let plan = assemble_plan(&args.plan)?;
    let provider = build_provider(args.plan.mock.as_deref(), args.plan.cache_dir.as_deref())?;
    let dataset = load_prompt_dataset(Path::new(&plan.dataset))?;
    let records = run_single_turn(&provider, &plan, &dataset)?;
    finish_run(&args.out, &records, &provider, &plan)
}

fn cmd_replay(args: ReplayArgs) -> Result<()> {
    let mut plan = assemble_plan(&args.plan)?;
    if let Some(source) = args.response_source {
        plan.response_source = source;
    }
    let provider = build_provider(args.plan.mock.as_deref(), args.plan.cache_dir.as_deref())?;
    let load = load_transcripts_filtered(
        Path::new(&plan.dataset),
        TranscriptFormat::ConversationJson,
        args.language.as_deref(),
    )?;
    let outcome = replay_transcripts(&provider, &plan, &load.dataset)?;
    let bailed = outcome.flags.iter().filter(|f| f.bailed).count();
    println!(
        "conversations: {}, bailed: {bailed}",
        load.dataset.conversations.len()
    );
    finish_run(&args.out, &outcome.trials, &provider, &plan)
}

fn cmd_crossmodel(args: CrossModelArgs) -> Result<()> {
    let spec: BailMethodSpec = args.method.parse()?;
    if spec.kind != BailKind::Prompt {
        return Err(anyhow!(
            "cross-model runs take a prompt method, got {}",
            spec.label()
        ));
    }
    let ordering = spec
        .ordering
        .ok_or_else(|| anyhow!("cross-model method needs an ordering"))?;
    let bail_judge = load_endpoint(&args.endpoint)?;
    let responder = load_endpoint(&args.responder)?;
    let mut params = SamplingParams::default();
    if let Some(samples) = args.samples {
        params.samples_per_prompt = samples;
    }
    let provider = build_provider(args.mock.as_deref(), args.cache_dir.as_deref())?;
    let dataset = load_prompt_dataset(&args.dataset)?;
    let records = run_cross_model(
        &provider,
        &dataset,
        &responder,
        &bail_judge,
        ordering,
        &spec.variant,
        &params,
    )?;
    // The provenance plan mirrors the flags, so reruns hash identically.
    let plan = RunPlan {
        dataset: args.dataset.to_string_lossy().into_owned(),
        endpoint: bail_judge,
        methods: vec![spec],
        params,
        classifier: None,
        response_source: ResponseSource::default(),
        intervention_semantics: false,
        seed: args.seed,
    };
    finish_run(&args.out, &records, &provider, &plan)
}

fn cmd_baseline(args: BaselineArgs) -> Result<()> {
    let plan = assemble_plan(&args.plan)?;
    let provider = Arc::new(build_provider(
        args.plan.mock.as_deref(),
        args.plan.cache_dir.as_deref(),
    )?);
    let judge = match &args.judge {
        Some(path) => JudgeBackend::scripted_from_path(path)?,
        None => plan.build_judge(&provider)?.ok_or_else(|| {
            anyhow!("baseline runs need a judge: pass --judge or set a classifier in the plan")
        })?,
    };
    let dataset = load_prompt_dataset(Path::new(&plan.dataset))?;
    let records = run_baseline_responses(&provider, &plan, &dataset, &judge)?;
    finish_run(&args.out, &records, &provider, &plan)
}

/// Shared stats/report tail: aggregate the log (if any), run the
/// correlation suite (if asked), render, and write.
fn render(args: &StatsArgs, format: ReportFormat) -> Result<String> {
    if args.log.is_none() && args.correlate.is_none() {
        return Err(anyhow!("nothing to do: pass --log and/or --correlate"));
    }
    let mut rows = Vec::new();
    let mut provenance = Provenance::default();
    if let Some(log) = &args.log {
        let trials = read_trial_log(log)?;
        let grouping = parse_grouping(&args.group)?;
        let outcome = aggregate(&trials, &grouping)?;
        for warning in &outcome.warnings {
            eprintln!("warning: {warning}");
        }
        rows = outcome.rows;
        provenance = read_provenance(log);
    }
    let mut correlations: Vec<LabeledCorrelation> = Vec::new();
    if let Some(path) = &args.correlate {
        let fixture = load_scatter_fixture(path)?;
        correlations = correlate_scatter(&fixture, args.permutations, args.seed)?;
    }
    Ok(emit_report(&rows, &correlations, format, &provenance))
}

fn write_out(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text)
            .with_context(|| format!("cannot write report {}", path.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_stats(args: StatsArgs) -> Result<()> {
    let text = render(&args, ReportFormat::Structured)?;
    write_out(args.out.as_deref(), &text)
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let format: ReportFormat = args.format.parse()?;
    let text = render(&args.stats, format)?;
    write_out(args.stats.out.as_deref(), &text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_parses_every_subcommand() {
        Cli::try_parse_from([
            "bailharness",
            "run",
            "--plan",
            "plan.json",
            "--mock",
            "rules.json",
            "--out",
            "log.jsonl",
        ])
        .unwrap();
        Cli::try_parse_from([
            "bailharness",
            "replay",
            "--endpoint",
            "e.json",
            "--dataset",
            "d.json",
            "--method",
            "string:baseline",
            "--response-source",
            "fresh",
        ])
        .unwrap();
        Cli::try_parse_from([
            "bailharness",
            "crossmodel",
            "--endpoint",
            "judge.json",
            "--responder",
            "other.json",
            "--dataset",
            "d.jsonl",
        ])
        .unwrap();
        Cli::try_parse_from(["bailharness", "baseline", "--plan", "p", "--judge", "j.json"])
            .unwrap();
        Cli::try_parse_from(["bailharness", "stats", "--log", "l", "--group", "model,method"])
            .unwrap();
        Cli::try_parse_from([
            "bailharness",
            "report",
            "--log",
            "l",
            "--format",
            "plot-table",
        ])
        .unwrap();
    }

    #[test]
    fn bad_method_and_bad_format_are_rejected() {
        let args = Cli::try_parse_from([
            "bailharness",
            "run",
            "--endpoint",
            "e.json",
            "--dataset",
            "d.jsonl",
            "--method",
            "nonsense",
        ])
        .unwrap();
        let Command::Run(run) = args.command else {
            panic!("expected run");
        };
        assert!(assemble_plan(&run.plan).is_err());

        let args =
            Cli::try_parse_from(["bailharness", "report", "--log", "l", "--format", "xml"])
                .unwrap();
        let Command::Report(report) = args.command else {
            panic!("expected report");
        };
        assert!(report.format.parse::<ReportFormat>().is_err());
    }

    #[test]
    fn plan_hash_ignores_file_formatting() {
        let endpoint = ModelEndpoint::new("m", "http://localhost:1", "model-id");
        let compact = RunPlan {
            dataset: "d.jsonl".to_string(),
            endpoint,
            methods: vec!["tool:baseline".parse().unwrap()],
            params: SamplingParams::default(),
            classifier: None,
            response_source: ResponseSource::default(),
            intervention_semantics: false,
            seed: 3,
        };
        let reparsed: RunPlan =
            serde_json::from_str(&serde_json::to_string_pretty(&compact).unwrap()).unwrap();
        assert_eq!(plan_hash(&compact), plan_hash(&reparsed));
        let mut reseeded = compact.clone();
        reseeded.seed = 4;
        assert_ne!(plan_hash(&compact), plan_hash(&reseeded));
    }

    #[test]
    fn stats_without_inputs_is_an_error() {
        let args = StatsArgs {
            log: None,
            group: "model".to_string(),
            correlate: None,
            permutations: 10_000,
            seed: 0,
            out: None,
        };
        assert!(render(&args, ReportFormat::Structured).is_err());
    }
}
