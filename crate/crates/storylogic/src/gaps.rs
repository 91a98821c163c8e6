//! Emotion geometry and gap fabrication.
//!
//! Gold missing-sentence instances are manufactured deterministically: for
//! every interior sentence, sum the emotional change it carries for every
//! character against every other sentence, then remove the sentence with the
//! highest total. Emotional change between two sentences is the ring
//! distance between their labels divided by how far apart the sentences are;
//! a `none` on either side contributes nothing.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::story::{
    ActionRecord, AnnotatedStory, Annotation, EmotionAnnotation, EmotionLabel, Story, StoryError,
};

#[derive(Debug, Error)]
pub enum GapError {
    #[error("ring distance is undefined for `none` (got {a} vs {b})")]
    NeutralEmotion { a: EmotionLabel, b: EmotionLabel },
    #[error("emotional change needs two distinct sentences (got {i} twice)")]
    SameIndex { i: usize },
    #[error("sentence index {i} out of range 1..={n}")]
    IndexOutOfRange { i: usize, n: usize },
    #[error("`{name}` is not in the character roster")]
    UnknownCharacter { name: String },
    #[error("a {n}-sentence story is too short to remove an interior sentence")]
    TooShort { n: usize },
    #[error("gap record `{id}` is invalid: {reason}")]
    BadRecord { id: String, reason: String },
    #[error("line {line}: {message}\n  offending record: {text}")]
    GapLine {
        line: usize,
        message: String,
        text: String,
    },
    #[error("duplicate gap id `{id}` at line {line}")]
    DuplicateGapId { id: String, line: usize },
    #[error(transparent)]
    Story(#[from] StoryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Normalized circular distance between two ring emotions, in [0, 1].
///
/// The eight labels sit on a ring in the order joy, trust, fear, surprise,
/// sadness, disgust, anger, anticipation; distance is steps along the
/// shorter arc divided by the diameter (4). Opposites such as joy/sadness
/// score 1.0, ring neighbours such as anticipation/joy score 0.25, and the
/// distance from a label to itself is 0. `none` is off the ring and is
/// rejected.
pub fn emotion_distance(a: EmotionLabel, b: EmotionLabel) -> Result<f64, GapError> {
    let (pa, pb) = match (a.wheel_position(), b.wheel_position()) {
        (Some(pa), Some(pb)) => (pa, pb),
        _ => return Err(GapError::NeutralEmotion { a, b }),
    };
    let step = pa.abs_diff(pb);
    let arc = step.min(8 - step);
    Ok(arc as f64 / 4.0)
}

/// Emotional change one character undergoes between sentences `i` and `j`
/// (1-based): ring distance divided by `|i - j|`, or 0 when either side is
/// `none` (which includes unaffected cells).
pub fn pair_change(
    annotated: &AnnotatedStory,
    character: &str,
    i: usize,
    j: usize,
) -> Result<f64, GapError> {
    let n = annotated.story().len();
    if i == j {
        return Err(GapError::SameIndex { i });
    }
    for idx in [i, j] {
        if idx == 0 || idx > n {
            return Err(GapError::IndexOutOfRange { i: idx, n });
        }
    }
    let c = annotated
        .story()
        .character_index(character)
        .ok_or_else(|| GapError::UnknownCharacter {
            name: character.to_string(),
        })?;
    let ei = annotated.grid()[i - 1][c].emotion.emotion();
    let ej = annotated.grid()[j - 1][c].emotion.emotion();
    if ei.is_none() || ej.is_none() {
        return Ok(0.0);
    }
    Ok(emotion_distance(ei, ej)? / i.abs_diff(j) as f64)
}

/// Audit trail for a removal choice: every interior index with its summed
/// emotional-change score.
pub type ScoreTable = Vec<(usize, f64)>;

/// Pick the interior sentence whose removal erases the most emotional
/// change: the 1-based index maximising the sum of [`pair_change`] over all
/// characters and all other sentences. First and last sentences are never
/// candidates. Exact ties go to the smallest index. Requires at least three
/// sentences.
pub fn select_removal_index(annotated: &AnnotatedStory) -> Result<(usize, ScoreTable), GapError> {
    let story = annotated.story();
    let n = story.len();
    if n < 3 {
        return Err(GapError::TooShort { n });
    }
    let mut table: ScoreTable = Vec::with_capacity(n - 2);
    for i in 2..=n - 1 {
        let mut score = 0.0;
        for character in story.characters() {
            for j in 1..=n {
                if j == i {
                    continue;
                }
                score += pair_change(annotated, character, i, j)?;
            }
        }
        table.push((i, score));
    }
    let (best, _) = table
        .iter()
        .fold(None::<(usize, f64)>, |best, &(i, s)| match best {
            Some((_, bs)) if s <= bs => best,
            _ => Some((i, s)),
        })
        .expect("interior sentences exist for n >= 3");
    Ok((best, table))
}

/// One character's annotation trajectory through a story: `(sentence index,
/// emotion, action)` entries covering every sentence in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmotionChain {
    pub character: String,
    pub entries: Vec<ChainEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainEntry {
    pub index: usize,
    pub emotion: EmotionAnnotation,
    pub action: ActionRecord,
}

impl EmotionChain {
    /// Human-readable label trajectory, e.g.
    /// `anticipation -> anticipation -> joy -> anger`.
    pub fn emotion_trace(&self) -> String {
        self.entries
            .iter()
            .map(|e| e.emotion.emotion().to_string())
            .collect::<Vec<_>>()
            .join(" -> ")
    }

    /// Human-readable action trajectory, e.g.
    /// `LookingFor(a new laptop) -> Needed(laptop)`.
    pub fn action_trace(&self) -> String {
        self.entries
            .iter()
            .map(|e| e.action.canonical())
            .collect::<Vec<_>>()
            .join(" -> ")
    }
}

/// One chain per character, in roster order, covering all sentences.
pub fn build_chains(annotated: &AnnotatedStory) -> Vec<EmotionChain> {
    let story = annotated.story();
    story
        .characters()
        .iter()
        .enumerate()
        .map(|(c, name)| EmotionChain {
            character: name.clone(),
            entries: annotated
                .grid()
                .iter()
                .enumerate()
                .map(|(s, row)| ChainEntry {
                    index: s + 1,
                    emotion: row[c].emotion,
                    action: row[c].action.clone(),
                })
                .collect(),
        })
        .collect()
}

/// A story with one interior sentence removed, plus everything needed to
/// score attempts at restoring it.
///
/// `gold_k` is both the removed sentence's 1-based position in the original
/// story and the insertion index in the gapped story: inserting
/// `gold_sentence` before the gapped story's sentence `gold_k` reconstructs
/// the original exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct GapInstance {
    pub gapped: Story,
    pub gold_k: usize,
    pub gold_sentence: String,
    /// Annotations of the removed sentence, aligned with the roster.
    pub gold_annotations: Vec<Annotation>,
    /// Consolidated emotion labels of the gapped story, `[sentence][character]`.
    pub story_emotions: Option<Vec<Vec<EmotionLabel>>>,
}

impl GapInstance {
    pub fn id(&self) -> &str {
        self.gapped.id()
    }

    /// Original story, reconstructed by reinsertion.
    pub fn reinsert(&self) -> Result<Story, StoryError> {
        self.gapped
            .with_sentence_inserted(self.gold_k, &self.gold_sentence)
    }

    /// The gapped story paired with its consolidated emotion labels, when
    /// the instance carries them.
    pub fn annotated_gapped(&self) -> Option<AnnotatedStory> {
        let labels = self.story_emotions.as_ref()?;
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
        AnnotatedStory::new(self.gapped.clone(), grid).ok()
    }
}

/// Fabricate a gold gap instance from a consolidated story: score every
/// interior sentence, remove the highest-scoring one, and keep it (with its
/// annotations) as the gold answer.
pub fn make_gap_instance(annotated: &AnnotatedStory) -> Result<GapInstance, GapError> {
    let (gold_k, _) = select_removal_index(annotated)?;
    let story = annotated.story();
    let gold_sentence = story
        .sentence(gold_k)
        .expect("selected index is in range")
        .to_string();
    let gold_annotations = annotated.grid()[gold_k - 1].clone();
    let gapped_annotated = annotated.without_sentence(gold_k)?;
    let story_emotions = gapped_annotated
        .grid()
        .iter()
        .map(|row| row.iter().map(|a| a.emotion.emotion()).collect())
        .collect();
    let (gapped, _) = gapped_annotated.into_parts();
    Ok(GapInstance {
        gapped,
        gold_k,
        gold_sentence,
        gold_annotations,
        story_emotions: Some(story_emotions),
    })
}

/// Wire form of a gap-file record. `gold_k` is `-1` for a complete story
/// included as a negative example; such records carry no gold sentence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapRecord {
    pub id: String,
    pub sentences: Vec<String>,
    pub characters: Vec<String>,
    pub gold_k: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_sentence: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_actions: Option<BTreeMap<String, ActionRecord>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_emotions: Option<BTreeMap<String, EmotionAnnotation>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub story_emotions: Option<Vec<Vec<EmotionLabel>>>,
}

impl GapRecord {
    pub fn from_instance(instance: &GapInstance) -> Self {
        let characters = instance.gapped.characters();
        let gold_actions = characters
            .iter()
            .zip(&instance.gold_annotations)
            .map(|(c, a)| (c.clone(), a.action.clone()))
            .collect();
        let gold_emotions = characters
            .iter()
            .zip(&instance.gold_annotations)
            .map(|(c, a)| (c.clone(), a.emotion))
            .collect();
        GapRecord {
            id: instance.gapped.id().to_string(),
            sentences: instance.gapped.sentences().to_vec(),
            characters: characters.to_vec(),
            gold_k: instance.gold_k as i64,
            gold_sentence: Some(instance.gold_sentence.clone()),
            gold_actions: Some(gold_actions),
            gold_emotions: Some(gold_emotions),
            story_emotions: instance.story_emotions.clone(),
        }
    }

    pub fn story(&self) -> Result<Story, StoryError> {
        Story::new(self.id.clone(), self.sentences.clone(), self.characters.clone())
    }

    /// Gold verdict this record encodes: `-1` or the insertion index.
    pub fn gold_verdict(&self) -> Result<crate::codec::GapVerdict, GapError> {
        if self.gold_k == -1 {
            return Ok(crate::codec::GapVerdict::Complete);
        }
        let k = self.gold_k;
        if k > 1 && k <= self.sentences.len() as i64 {
            Ok(crate::codec::GapVerdict::InsertBefore { k: k as usize })
        } else {
            Err(GapError::BadRecord {
                id: self.id.clone(),
                reason: format!(
                    "gold_k {k} must be -1 or between 2 and {} for a {}-sentence gapped story",
                    self.sentences.len(),
                    self.sentences.len()
                ),
            })
        }
    }

    /// Interpret this record as a gap instance. Fails for complete-story
    /// records (`gold_k == -1`) and malformed gold fields.
    pub fn to_instance(&self) -> Result<GapInstance, GapError> {
        let gapped = self.story()?;
        let gold_verdict = self.gold_verdict()?;
        let gold_k = match gold_verdict {
            crate::codec::GapVerdict::InsertBefore { k } => k,
            crate::codec::GapVerdict::Complete => {
                return Err(GapError::BadRecord {
                    id: self.id.clone(),
                    reason: "a complete-story record is not a gap instance".into(),
                })
            }
        };
        let gold_sentence = self.gold_sentence.clone().ok_or_else(|| GapError::BadRecord {
            id: self.id.clone(),
            reason: "missing gold_sentence".into(),
        })?;
        if gold_sentence.trim().is_empty() {
            return Err(GapError::BadRecord {
                id: self.id.clone(),
                reason: "gold_sentence is empty".into(),
            });
        }
        let lookup = |name: &str,
                      actions: &Option<BTreeMap<String, ActionRecord>>,
                      emotions: &Option<BTreeMap<String, EmotionAnnotation>>|
         -> Annotation {
            let action = actions
                .as_ref()
                .and_then(|m| m.get(name).cloned())
                .unwrap_or(ActionRecord::NoAction);
            let emotion = emotions
                .as_ref()
                .and_then(|m| m.get(name).copied())
                .unwrap_or_else(EmotionAnnotation::unaffected);
            Annotation::new(action, emotion)
        };
        let gold_annotations = gapped
            .characters()
            .iter()
            .map(|name| lookup(name, &self.gold_actions, &self.gold_emotions))
            .collect();
        if let Some(rows) = &self.story_emotions {
            if rows.len() != gapped.len()
                || rows.iter().any(|r| r.len() != gapped.characters().len())
            {
                return Err(GapError::BadRecord {
                    id: self.id.clone(),
                    reason: "story_emotions shape does not match the gapped story".into(),
                });
            }
        }
        Ok(GapInstance {
            gapped,
            gold_k,
            gold_sentence,
            gold_annotations,
            story_emotions: self.story_emotions.clone(),
        })
    }
}

/// Load a JSONL gap file, preserving record order. Errors carry the 1-based
/// line number and offending text; duplicate ids are rejected.
pub fn load_gap_file(path: &Path) -> Result<Vec<GapRecord>, GapError> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut records: Vec<GapRecord> = Vec::new();
    let mut seen = BTreeMap::new();
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: GapRecord = serde_json::from_str(&line).map_err(|e| GapError::GapLine {
            line: lineno,
            message: e.to_string(),
            text: line.clone(),
        })?;
        record.story().map_err(|e| GapError::GapLine {
            line: lineno,
            message: e.to_string(),
            text: line.clone(),
        })?;
        record.gold_verdict().map_err(|e| GapError::GapLine {
            line: lineno,
            message: e.to_string(),
            text: line.clone(),
        })?;
        if seen.insert(record.id.clone(), lineno).is_some() {
            return Err(GapError::DuplicateGapId {
                id: record.id,
                line: lineno,
            });
        }
        records.push(record);
    }
    Ok(records)
}
