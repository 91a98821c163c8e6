//! Command implementations. Every command resolves its inputs up front so
//! bad input fails with exit code 2 before any backend work starts; failures
//! after that point exit 1.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use anyhow::anyhow;
use storylogic::gaps::{load_gap_file, make_gap_instance, GapError, GapRecord};
use storylogic::gateway::{
    ChatTransport, ExemplarSet, Gateway, HttpTransport, MockTransport, Stage, TemplateCatalog,
};
use storylogic::metrics::{render_round_trip_table, MetricsReport, VadLexicon};
use storylogic::pipeline::eval::{build_report, build_round_trip_report, EvalOptions};
use storylogic::pipeline::runner::{
    load_results, run_round_trips, run_stories, write_atomic, write_results, write_round_trips,
    RunSummary,
};
use storylogic::pipeline::sft::{export_stage, AnnotationGrids};
use storylogic::pipeline::Pipeline;
use storylogic::story::{consolidate_emotions, load_corpus, split_indices, Story};

use crate::config::{BackendSpec, RunConfig};

/// Failure with its exit code: invalid input is 2, a mid-run failure is 1.
#[derive(Debug)]
pub enum CliError {
    Invalid(anyhow::Error),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Invalid(e) | CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl std::error::Error for CliError {}

pub fn invalid(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Invalid(e.into())
}

fn runtime(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Runtime(e.into())
}

fn build_pipeline(config: &RunConfig) -> Result<Pipeline, CliError> {
    let backend = config.require_backend().map_err(invalid)?;
    let transport: Arc<dyn ChatTransport> = match backend {
        BackendSpec::Mock(dir) => Arc::new(MockTransport::from_dir(dir).map_err(invalid)?),
        BackendSpec::Http(base) => {
            Arc::new(HttpTransport::new(base.clone(), config.api_key.clone()).map_err(invalid)?)
        }
    };
    let gateway = Gateway::new(transport, config.model.as_str(), config.generation.clone())
        .map_err(invalid)?
        .with_concurrency(config.jobs);
    let exemplars = match &config.exemplars {
        Some(path) => ExemplarSet::load(path).map_err(invalid)?,
        None => ExemplarSet::empty(),
    };
    Pipeline::new(Arc::new(gateway), config.mode, config.shots, exemplars).map_err(runtime)
}

fn load_lexicon(config: &RunConfig) -> Result<Option<VadLexicon>, CliError> {
    config.lexicon.as_deref().map(|p| VadLexicon::load(p).map_err(invalid)).transpose()
}

fn write_report_files(
    dir: &Path,
    json: &impl serde::Serialize,
    text: &str,
) -> Result<(), CliError> {
    let pretty = serde_json::to_string_pretty(json).expect("reports always serialize");
    write_atomic(&dir.join("report.json"), &(pretty + "\n")).map_err(runtime)?;
    write_atomic(&dir.join("report.txt"), text).map_err(runtime)
}

fn emotion_headline(report: &MetricsReport, include_none: bool) {
    if let Some(e) = &report.emotion {
        let (which, prf) = if include_none {
            ("none included", &e.micro_including_none)
        } else {
            ("none excluded", &e.micro_excluding_none)
        };
        eprintln!("emotion micro F1 ({which}): {:.2}", prf.f1 * 100.0);
    }
}

fn headline_meta(meta: &mut BTreeMap<String, String>, include_none: bool) {
    meta.insert(
        "emotion_micro_headline".to_string(),
        if include_none { "including_none" } else { "excluding_none" }.to_string(),
    );
}

pub fn cmd_make_gaps(config: &RunConfig, corpus: &Path) -> Result<u8, CliError> {
    let raw = load_corpus(corpus).map_err(invalid)?;
    if raw.is_empty() {
        return Err(invalid(anyhow!("corpus {} has no stories", corpus.display())));
    }
    let mut records = Vec::new();
    let mut skipped = 0usize;
    let mut histogram: BTreeMap<usize, usize> = BTreeMap::new();
    for r in &raw {
        let annotated = consolidate_emotions(r);
        match make_gap_instance(&annotated) {
            Ok(instance) => {
                *histogram.entry(instance.gold_k).or_default() += 1;
                records.push(GapRecord::from_instance(&instance));
            }
            Err(GapError::TooShort { n }) => {
                log::warn!(
                    "skipping {}: a {n}-sentence story is too short to gap",
                    r.story().id()
                );
                skipped += 1;
            }
            Err(e) => return Err(invalid(anyhow!("story {}: {e}", r.story().id()))),
        }
    }
    if records.is_empty() {
        return Err(invalid(anyhow!("no story was long enough to gap ({skipped} skipped)")));
    }
    let path = config.out.join("gaps.jsonl");
    let mut lines = String::new();
    for record in &records {
        lines.push_str(&serde_json::to_string(record).expect("gap records always serialize"));
        lines.push('\n');
    }
    write_atomic(&path, &lines).map_err(runtime)?;
    println!(
        "wrote {} gap instances to {} ({} skipped as too short)",
        records.len(),
        path.display(),
        skipped
    );
    let histogram: Vec<String> =
        histogram.iter().map(|(k, n)| format!("k={k}: {n}")).collect();
    println!("gold_k histogram: {}", histogram.join("  "));
    Ok(0)
}

pub async fn cmd_check(
    config: &RunConfig,
    gaps: &Path,
    include_none: bool,
) -> Result<u8, CliError> {
    run_detection(config, gaps, false, false, include_none, "check").await
}

pub async fn cmd_complete(
    config: &RunConfig,
    gaps: &Path,
    correct_index_only: bool,
    include_none: bool,
) -> Result<u8, CliError> {
    run_detection(config, gaps, true, correct_index_only, include_none, "complete").await
}

async fn run_detection(
    config: &RunConfig,
    gaps_path: &Path,
    generate: bool,
    correct_index_only: bool,
    include_none: bool,
    command: &str,
) -> Result<u8, CliError> {
    let records = load_gap_file(gaps_path).map_err(invalid)?;
    if records.is_empty() {
        return Err(invalid(anyhow!("gap file {} has no records", gaps_path.display())));
    }
    let stories: Vec<Story> =
        records.iter().map(GapRecord::story).collect::<Result<_, _>>().map_err(invalid)?;
    let lexicon = load_lexicon(config)?;
    let pipeline = build_pipeline(config)?;

    let results = run_stories(&pipeline, &stories, config.jobs, generate).await;
    let dir = config.out.join(format!("{command}_{}", config.mode_slug()));
    write_results(&dir.join("results.jsonl"), &results).map_err(runtime)?;

    let mut meta = config.report_meta(command);
    headline_meta(&mut meta, include_none);
    let options = EvalOptions { correct_index_only };
    let report =
        build_report(&records, &results, lexicon.as_ref(), options, meta).map_err(invalid)?;
    let text = report.render_text(&config.table_label());
    write_report_files(&dir, &report, &text)?;
    print!("{text}");
    emotion_headline(&report, include_none);

    let summary = RunSummary::of(&results);
    eprintln!(
        "processed {} stories ({} degraded); files in {}",
        summary.total,
        summary.degraded,
        dir.display()
    );
    Ok(summary.exit_code() as u8)
}

pub async fn cmd_t2act2t(config: &RunConfig, corpus: &Path) -> Result<u8, CliError> {
    let raw = load_corpus(corpus).map_err(invalid)?;
    if raw.is_empty() {
        return Err(invalid(anyhow!("corpus {} has no stories", corpus.display())));
    }
    let stories: Vec<Story> = raw.iter().map(|r| r.story().clone()).collect();
    let pipeline = build_pipeline(config)?;

    let trips = run_round_trips(&pipeline, &stories, config.jobs).await;
    let dir = config.out.join("t2act2t");
    write_round_trips(&dir.join("round_trips.jsonl"), &trips).map_err(runtime)?;

    let report = build_round_trip_report(&trips, config.report_meta("t2act2t"));
    let text = render_round_trip_table(&config.table_label(), &report);
    write_report_files(&dir, &report, &text)?;
    print!("{text}");

    eprintln!(
        "reconstructed {} sentences ({} degraded); files in {}",
        report.pairs,
        report.degraded,
        dir.display()
    );
    Ok(if report.degraded > 0 { 1 } else { 0 })
}

pub fn cmd_export_sft(
    config: &RunConfig,
    gaps: &Path,
    stage_keys: &[String],
    annotations: Option<&Path>,
) -> Result<u8, CliError> {
    let records = load_gap_file(gaps).map_err(invalid)?;
    if records.is_empty() {
        return Err(invalid(anyhow!("gap file {} has no records", gaps.display())));
    }
    let stages: Vec<Stage> = if stage_keys.is_empty() {
        Stage::ALL.to_vec()
    } else {
        stage_keys
            .iter()
            .map(|key| {
                Stage::ALL.iter().copied().find(|s| s.key() == key).ok_or_else(|| {
                    let known: Vec<&str> = Stage::ALL.iter().map(|s| s.key()).collect();
                    invalid(anyhow!("unknown stage `{key}`; expected one of: {}", known.join(", ")))
                })
            })
            .collect::<Result<_, _>>()?
    };
    let grids: Option<AnnotationGrids> = match annotations {
        Some(path) => {
            let results = load_results(path).map_err(invalid)?;
            Some(results.into_iter().map(|r| (r.id, r.annotations)).collect())
        }
        None => None,
    };
    let catalog = TemplateCatalog::embedded().map_err(runtime)?;
    let dir = config.out.join("sft");
    for stage in &stages {
        let export = export_stage(catalog, &records, *stage, grids.as_ref()).map_err(invalid)?;
        let path = dir.join(format!("sft_{}.jsonl", stage.key()));
        let mut lines = String::new();
        for record in &export.records {
            lines.push_str(&serde_json::to_string(record).expect("records always serialize"));
            lines.push('\n');
        }
        write_atomic(&path, &lines).map_err(runtime)?;
        println!(
            "{}: {} records, {} skipped -> {}",
            stage.key(),
            export.records.len(),
            export.skipped,
            path.display()
        );
    }
    Ok(0)
}

pub fn cmd_eval(
    config: &RunConfig,
    gaps: &Path,
    results_path: &Path,
    correct_index_only: bool,
    include_none: bool,
) -> Result<u8, CliError> {
    let gold = load_gap_file(gaps).map_err(invalid)?;
    if gold.is_empty() {
        return Err(invalid(anyhow!("gap file {} has no records", gaps.display())));
    }
    let results = load_results(results_path).map_err(invalid)?;
    let lexicon = load_lexicon(config)?;

    // offline command: the report describes the result file, not this
    // process, so run-config meta would be misleading here
    let mut meta = BTreeMap::new();
    meta.insert("command".to_string(), "eval".to_string());
    headline_meta(&mut meta, include_none);
    let options = EvalOptions { correct_index_only };
    let report =
        build_report(&gold, &results, lexicon.as_ref(), options, meta).map_err(invalid)?;

    // label rows by what the result file says it ran as, not by this
    // process's flags
    let label = results
        .first()
        .map(|r| format!("eval:{}", r.mode.label()))
        .unwrap_or_else(|| "eval".to_string());
    let dir = config.out.join("eval");
    let text = report.render_text(&label);
    write_report_files(&dir, &report, &text)?;
    print!("{text}");
    emotion_headline(&report, include_none);
    eprintln!("scored {} stories; files in {}", report.stories, dir.display());
    Ok(0)
}

pub fn cmd_split(config: &RunConfig, corpus: &Path, ratios_arg: &str) -> Result<u8, CliError> {
    let ratios = parse_ratios(ratios_arg).map_err(invalid)?;
    let text = std::fs::read_to_string(corpus)
        .map_err(|e| invalid(anyhow!("cannot read {}: {e}", corpus.display())))?;
    let stories = load_corpus(corpus).map_err(invalid)?;
    // load_corpus skips blank lines, so the surviving lines pair 1:1 with it
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let (train, val, test) =
        split_indices(stories.len(), ratios, config.seed).map_err(invalid)?;
    for (name, indices) in [("train", &train), ("val", &val), ("test", &test)] {
        let mut content = String::new();
        for &i in indices.iter() {
            content.push_str(lines[i]);
            content.push('\n');
        }
        write_atomic(&config.out.join(format!("{name}.jsonl")), &content).map_err(runtime)?;
    }
    println!(
        "split {} stories: train {}  val {}  test {}",
        stories.len(),
        train.len(),
        val.len(),
        test.len()
    );
    Ok(0)
}

fn parse_ratios(s: &str) -> anyhow::Result<[f64; 3]> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        anyhow::bail!("--ratios needs three comma-separated fractions, got `{s}`");
    }
    let mut out = [0.0f64; 3];
    for (slot, part) in out.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse()
            .map_err(|e| anyhow!("bad ratio `{}`: {e}", part.trim()))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_strings_parse_or_fail_loudly() {
        assert_eq!(parse_ratios("0.8,0.1,0.1").unwrap(), [0.8, 0.1, 0.1]);
        assert_eq!(parse_ratios(" 0.5 , 0.25 , 0.25 ").unwrap(), [0.5, 0.25, 0.25]);
        assert!(parse_ratios("0.8,0.2").is_err());
        assert!(parse_ratios("a,b,c").is_err());
    }

    #[test]
    fn exit_codes_distinguish_input_errors_from_failures() {
        assert_eq!(invalid(anyhow!("x")).exit_code(), 2);
        assert_eq!(runtime(anyhow!("x")).exit_code(), 1);
    }
}
