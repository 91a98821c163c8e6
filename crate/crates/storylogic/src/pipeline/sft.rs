//! Training-record export: gold gap records rendered into
//! (instruction, input, output) triples for one chosen stage.
//!
//! `instruction` is the stage's system text verbatim, `input` the rendered
//! user template, `output` the gold answer in wire syntax. Records missing
//! an optional gold field a stage needs are skipped and counted; records
//! that make an EA prompt impossible are an error.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{render_ea_story, render_flanked_story, render_plain_story};
use crate::codec::{self, GapVerdict};
use crate::gaps::{GapError, GapRecord};
use crate::gateway::{Stage, TemplateCatalog, TemplateError};
use crate::story::{
    ActionRecord, AnnotatedStory, Annotation, EmotionAnnotation, Story, StoryError,
};

#[derive(Debug, Error)]
pub enum SftError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Gap(#[from] GapError),
    #[error(transparent)]
    Story(#[from] StoryError),
    #[error("record {id}: {message}")]
    Record { id: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    pub instruction: String,
    pub input: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SftExport {
    pub records: Vec<SftRecord>,
    /// Records lacking a gold field the stage needs (for example a
    /// complete-story record for a generation stage).
    pub skipped: usize,
}

/// Per-sentence annotation grids keyed by story id, used for EA prompts when
/// a record carries no `story_emotions` of its own.
pub type AnnotationGrids = BTreeMap<String, Vec<Vec<Annotation>>>;

pub fn export_stage(
    catalog: &TemplateCatalog,
    records: &[GapRecord],
    stage: Stage,
    annotations: Option<&AnnotationGrids>,
) -> Result<SftExport, SftError> {
    let mut out = Vec::new();
    let mut skipped = 0usize;
    for record in records {
        match build_one(catalog, record, stage, annotations)? {
            Some(sample) => out.push(sample),
            None => skipped += 1,
        }
    }
    Ok(SftExport { records: out, skipped })
}

fn roster_actions(record: &GapRecord) -> Option<Vec<ActionRecord>> {
    let map = record.gold_actions.as_ref().filter(|m| !m.is_empty())?;
    Some(
        record
            .characters
            .iter()
            .map(|name| map.get(name).cloned().unwrap_or(ActionRecord::NoAction))
            .collect(),
    )
}

fn roster_emotions(record: &GapRecord) -> Option<Vec<EmotionAnnotation>> {
    let map = record.gold_emotions.as_ref().filter(|m| !m.is_empty())?;
    Some(
        record
            .characters
            .iter()
            .map(|name| map.get(name).copied().unwrap_or_else(EmotionAnnotation::unaffected))
            .collect(),
    )
}

/// Gold gap annotations aligned to the roster; None when the record carries
/// neither actions nor emotions for the gap.
fn gold_grid(record: &GapRecord) -> Option<Vec<Annotation>> {
    let actions = roster_actions(record);
    let emotions = roster_emotions(record);
    if actions.is_none() && emotions.is_none() {
        return None;
    }
    let actions =
        actions.unwrap_or_else(|| vec![ActionRecord::NoAction; record.characters.len()]);
    let emotions =
        emotions.unwrap_or_else(|| vec![EmotionAnnotation::unaffected(); record.characters.len()]);
    Some(
        actions
            .into_iter()
            .zip(emotions)
            .map(|(action, emotion)| Annotation::new(action, emotion))
            .collect(),
    )
}

/// Annotated gapped story for EA prompts: an external grid wins, the
/// record's own emotion labels are the fallback.
fn annotated_gapped(
    record: &GapRecord,
    story: &Story,
    annotations: Option<&AnnotationGrids>,
) -> Result<AnnotatedStory, SftError> {
    let bad_shape = |e: StoryError| SftError::Record {
        id: record.id.clone(),
        message: format!("annotation grid does not fit the story: {e}"),
    };
    if let Some(grid) = annotations.and_then(|grids| grids.get(&record.id)) {
        return AnnotatedStory::new(story.clone(), grid.clone()).map_err(bad_shape);
    }
    if let Some(labels) = &record.story_emotions {
        let grid: Vec<Vec<Annotation>> = labels
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&label| {
                        let emotion = if label.is_none() {
                            EmotionAnnotation::unaffected()
                        } else {
                            EmotionAnnotation::affected(label)
                        };
                        Annotation::new(ActionRecord::NoAction, emotion)
                    })
                    .collect()
            })
            .collect();
        return AnnotatedStory::new(story.clone(), grid).map_err(bad_shape);
    }
    Err(SftError::Record {
        id: record.id.clone(),
        message: "EA prompts need per-sentence annotations: the record has no story_emotions \
                  and no annotation file was supplied"
            .to_string(),
    })
}

fn gap_position(verdict: &GapVerdict) -> Option<usize> {
    match verdict {
        GapVerdict::InsertBefore { k } => Some(*k),
        GapVerdict::Complete => None,
    }
}

fn gold_sentence(record: &GapRecord) -> Option<String> {
    record.gold_sentence.clone().filter(|s| !s.trim().is_empty())
}

fn build_one(
    catalog: &TemplateCatalog,
    record: &GapRecord,
    stage: Stage,
    annotations: Option<&AnnotationGrids>,
) -> Result<Option<SftRecord>, SftError> {
    let story = record.story()?;
    let verdict = record.gold_verdict()?;
    let instruction = catalog.system_text(stage).to_string();
    let characters = story.characters().join(", ");
    let var = |pairs: Vec<(&str, String)>| -> BTreeMap<String, String> {
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    };

    let (variables, output) = match stage {
        Stage::ActionAbstract | Stage::EmotionClassify => {
            let Some(k) = gap_position(&verdict) else { return Ok(None) };
            let Some(sentence) = gold_sentence(record) else { return Ok(None) };
            let output = if stage == Stage::ActionAbstract {
                let Some(actions) = roster_actions(record) else { return Ok(None) };
                codec::serialize_action_block(&record.characters, &actions)
            } else {
                let Some(emotions) = roster_emotions(record) else { return Ok(None) };
                codec::serialize_emotion_block(&record.characters, &emotions)
            };
            let complete = story.with_sentence_inserted(k, &sentence)?;
            (
                var(vec![
                    ("story", render_plain_story(&complete)),
                    ("sentence", sentence),
                    ("characters", characters),
                ]),
                output,
            )
        }
        Stage::LogicCheckPlain => (
            var(vec![("story", render_plain_story(&story)), ("characters", characters)]),
            codec::serialize_verdict(&verdict),
        ),
        Stage::LogicCheckEa => {
            let annotated = annotated_gapped(record, &story, annotations)?;
            (
                var(vec![("story", render_ea_story(&annotated)), ("characters", characters)]),
                codec::serialize_verdict(&verdict),
            )
        }
        Stage::PredictEa => {
            let Some(k) = gap_position(&verdict) else { return Ok(None) };
            let Some(grid) = gold_grid(record) else { return Ok(None) };
            let annotated = annotated_gapped(record, &story, annotations)?;
            (
                var(vec![
                    ("story", render_flanked_story(&annotated, k)),
                    ("characters", characters),
                    ("index", k.to_string()),
                ]),
                codec::serialize_prediction_block(&record.characters, &grid),
            )
        }
        Stage::GeneratePlain => {
            let Some(k) = gap_position(&verdict) else { return Ok(None) };
            let Some(sentence) = gold_sentence(record) else { return Ok(None) };
            (
                var(vec![
                    ("story", render_plain_story(&story)),
                    ("index", k.to_string()),
                ]),
                sentence,
            )
        }
        Stage::GenerateEa => {
            let Some(k) = gap_position(&verdict) else { return Ok(None) };
            let Some(sentence) = gold_sentence(record) else { return Ok(None) };
            let annotated = annotated_gapped(record, &story, annotations)?;
            (
                var(vec![
                    ("story", render_ea_story(&annotated)),
                    ("characters", characters),
                    ("index", k.to_string()),
                ]),
                sentence,
            )
        }
        Stage::GenerateEaPred => {
            let Some(k) = gap_position(&verdict) else { return Ok(None) };
            let Some(sentence) = gold_sentence(record) else { return Ok(None) };
            let Some(grid) = gold_grid(record) else { return Ok(None) };
            (
                var(vec![
                    ("story", render_plain_story(&story)),
                    ("index", k.to_string()),
                    (
                        "predictions",
                        codec::serialize_prediction_block(&record.characters, &grid),
                    ),
                ]),
                sentence,
            )
        }
        Stage::T2Act2T => {
            let Some(sentence) = gold_sentence(record) else { return Ok(None) };
            let Some(actions) = roster_actions(record) else { return Ok(None) };
            if actions.iter().all(ActionRecord::is_no_action) {
                return Ok(None);
            }
            (
                var(vec![
                    ("characters", characters),
                    ("actions", codec::serialize_action_block(&record.characters, &actions)),
                ]),
                sentence,
            )
        }
    };

    let input = catalog.render_user(stage, &variables)?;
    Ok(Some(SftRecord { instruction, input, output }))
}
