//! Batch execution and result file IO.
//!
//! Stories run concurrently up to a job limit, but the output order always
//! matches the input order, so two runs against a deterministic backend
//! produce byte-identical files regardless of the job count.

use std::io::Write as _;
use std::path::Path;

use futures::StreamExt;
use serde::{Deserialize, Serialize};

use super::{Pipeline, PipelineError, PipelineResult, StageReport};
use crate::story::Story;

/// Outcome counts for exit-code decisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSummary {
    pub total: usize,
    pub degraded: usize,
}

impl RunSummary {
    pub fn of(results: &[PipelineResult]) -> Self {
        RunSummary {
            total: results.len(),
            degraded: results.iter().filter(|r| r.degraded()).count(),
        }
    }

    /// 0 when everything succeeded, 1 when some stories degraded.
    pub fn exit_code(&self) -> i32 {
        if self.degraded > 0 {
            1
        } else {
            0
        }
    }
}

/// Process a batch with at most `jobs` stories in flight.
pub async fn run_stories(
    pipeline: &Pipeline,
    stories: &[Story],
    jobs: usize,
    generate: bool,
) -> Vec<PipelineResult> {
    let mut indexed: Vec<(usize, PipelineResult)> = futures::stream::iter(
        stories
            .iter()
            .enumerate()
            .map(|(i, story)| async move { (i, pipeline.process(story, generate).await) }),
    )
    .buffer_unordered(jobs.max(1))
    .collect()
    .await;
    indexed.sort_by_key(|(i, _)| *i);
    indexed.into_iter().map(|(_, result)| result).collect()
}

/// Round-trip every sentence of every story. Each reconstruction is scored
/// against its source sentence downstream, so the output carries both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTripResult {
    pub id: String,
    pub sentence_index: usize,
    pub original: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reconstruction: Option<String>,
    pub stages: Vec<StageReport>,
}

impl RoundTripResult {
    pub fn degraded(&self) -> bool {
        self.stages.iter().any(|s| s.error.is_some())
    }
}

pub async fn run_round_trips(
    pipeline: &Pipeline,
    stories: &[Story],
    jobs: usize,
) -> Vec<RoundTripResult> {
    let tasks: Vec<(usize, &Story, usize)> = stories
        .iter()
        .enumerate()
        .flat_map(|(story_no, story)| {
            (1..=story.len()).map(move |index| (story_no, story, index))
        })
        .collect();
    let mut indexed: Vec<(usize, RoundTripResult)> = futures::stream::iter(
        tasks.into_iter().enumerate().map(|(task_no, (_, story, index))| async move {
            let (reconstruction, stages) = pipeline.t2act2t_sentence(story, index).await;
            let original = story.sentence(index).expect("index built from len").to_string();
            (
                task_no,
                RoundTripResult {
                    id: story.id().to_string(),
                    sentence_index: index,
                    original,
                    reconstruction,
                    stages,
                },
            )
        }),
    )
    .buffer_unordered(jobs.max(1))
    .collect()
    .await;
    indexed.sort_by_key(|(i, _)| *i);
    indexed.into_iter().map(|(_, result)| result).collect()
}

/// Write via a temp file in the same directory plus an atomic rename, so a
/// crash never leaves a half-written file at the target path.
pub fn write_atomic(path: &Path, content: &str) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(parent) if !parent.as_os_str().is_empty() => parent,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut file = tempfile::NamedTempFile::new_in(dir)?;
    file.write_all(content.as_bytes())?;
    file.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn to_lines<T: Serialize>(items: &[T]) -> Result<String, PipelineError> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).map_err(|e| PipelineError::Invalid {
            id: "<serialize>".to_string(),
            message: e.to_string(),
        })?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_results(path: &Path, results: &[PipelineResult]) -> Result<(), PipelineError> {
    write_atomic(path, &to_lines(results)?)?;
    Ok(())
}

pub fn write_round_trips(path: &Path, results: &[RoundTripResult]) -> Result<(), PipelineError> {
    write_atomic(path, &to_lines(results)?)?;
    Ok(())
}

/// Load a result file, validating each record and rejecting duplicate ids.
pub fn load_results(path: &Path) -> Result<Vec<PipelineResult>, PipelineError> {
    let text = std::fs::read_to_string(path)?;
    let mut results: Vec<PipelineResult> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let result: PipelineResult =
            serde_json::from_str(line).map_err(|e| PipelineError::ResultLine {
                line: i + 1,
                message: e.to_string(),
            })?;
        result.validate().map_err(|e| PipelineError::ResultLine {
            line: i + 1,
            message: e.to_string(),
        })?;
        if !seen.insert(result.id.clone()) {
            return Err(PipelineError::DuplicateId(result.id));
        }
        results.push(result);
    }
    Ok(results)
}
