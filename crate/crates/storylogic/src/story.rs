//! Core story domain: stories, emotion labels, action records, annotation
//! grids, annotator-vote consolidation, corpus loading and splitting.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoryError {
    #[error("story id must be a non-empty string")]
    EmptyId,
    #[error("story `{id}` has {n} sentences; at least 2 are required")]
    TooFewSentences { id: String, n: usize },
    #[error("story `{id}` sentence {index} is empty or whitespace-only")]
    EmptySentence { id: String, index: usize },
    #[error("story `{id}` declares no characters")]
    NoCharacters { id: String },
    #[error("story `{id}` declares character `{name}` more than once")]
    DuplicateCharacter { id: String, name: String },
    #[error("character name `{name}` is invalid: {reason}")]
    BadCharacterName { name: String, reason: String },
    #[error("invalid action record: {reason}")]
    InvalidAction { reason: String },
    #[error("invalid emotion annotation: {reason}")]
    InvalidEmotion { reason: String },
    #[error("`{token}` is not an emotion label")]
    UnknownLabel { token: String },
    #[error("annotation grid does not match story shape: {reason}")]
    GridShape { reason: String },
    #[error("story `{id}`: emotion votes have wrong shape: {reason}")]
    VoteShape { id: String, reason: String },
    #[error("story `{id}`: vote weight {weight} is not a finite non-negative number")]
    BadWeight { id: String, weight: f64 },
    #[error("line {line}: {message}\n  offending record: {text}")]
    CorpusLine {
        line: usize,
        message: String,
        text: String,
    },
    #[error("duplicate story id `{id}` at line {line}")]
    DuplicateStoryId { id: String, line: usize },
    #[error("split ratios {ratios:?} are invalid: {reason}")]
    BadRatios { ratios: [f64; 3], reason: String },
    #[error("cannot split {n} stories three ways; at least 3 are required")]
    TooFewStories { n: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The eight ring emotions plus `none` for "no discernible emotion".
///
/// The ring order below (joy, trust, fear, surprise, sadness, disgust,
/// anger, anticipation) is also the tie-break priority used when
/// consolidating annotator votes; `none` always loses ties.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmotionLabel {
    Joy,
    Trust,
    Fear,
    Surprise,
    Sadness,
    Disgust,
    Anger,
    Anticipation,
    None,
}

impl EmotionLabel {
    /// The eight labelled emotions in ring order. `None` is not on the ring.
    pub const WHEEL: [EmotionLabel; 8] = [
        EmotionLabel::Joy,
        EmotionLabel::Trust,
        EmotionLabel::Fear,
        EmotionLabel::Surprise,
        EmotionLabel::Sadness,
        EmotionLabel::Disgust,
        EmotionLabel::Anger,
        EmotionLabel::Anticipation,
    ];

    /// Every valid label, ring order first, `none` last.
    pub const ALL: [EmotionLabel; 9] = [
        EmotionLabel::Joy,
        EmotionLabel::Trust,
        EmotionLabel::Fear,
        EmotionLabel::Surprise,
        EmotionLabel::Sadness,
        EmotionLabel::Disgust,
        EmotionLabel::Anger,
        EmotionLabel::Anticipation,
        EmotionLabel::None,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EmotionLabel::Joy => "joy",
            EmotionLabel::Trust => "trust",
            EmotionLabel::Fear => "fear",
            EmotionLabel::Surprise => "surprise",
            EmotionLabel::Sadness => "sadness",
            EmotionLabel::Disgust => "disgust",
            EmotionLabel::Anger => "anger",
            EmotionLabel::Anticipation => "anticipation",
            EmotionLabel::None => "none",
        }
    }

    /// Case-insensitive parse; surrounding whitespace is the caller's job.
    pub fn parse(token: &str) -> Result<Self, StoryError> {
        for label in EmotionLabel::ALL {
            if token.eq_ignore_ascii_case(label.as_str()) {
                return Ok(label);
            }
        }
        Err(StoryError::UnknownLabel {
            token: token.to_string(),
        })
    }

    /// Position on the eight-slot ring; `None` has no position.
    pub fn wheel_position(self) -> Option<usize> {
        EmotionLabel::WHEEL.iter().position(|&l| l == self)
    }

    pub fn is_none(self) -> bool {
        self == EmotionLabel::None
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Whether a character is affected by a sentence, and with which emotion.
///
/// Invariant: `affected == false` forces `emotion == none`. The converse is
/// not required; `(true, none)` expresses "involved but emotionally flat".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct EmotionAnnotation {
    affected: bool,
    emotion: EmotionLabel,
}

impl EmotionAnnotation {
    pub fn new(affected: bool, emotion: EmotionLabel) -> Result<Self, StoryError> {
        if !affected && !emotion.is_none() {
            return Err(StoryError::InvalidEmotion {
                reason: format!("unaffected characters cannot carry emotion `{emotion}`"),
            });
        }
        Ok(EmotionAnnotation { affected, emotion })
    }

    /// `(false, none)`: untouched by the sentence.
    pub fn unaffected() -> Self {
        EmotionAnnotation {
            affected: false,
            emotion: EmotionLabel::None,
        }
    }

    /// Affected with the given label (label `none` is allowed).
    pub fn affected(emotion: EmotionLabel) -> Self {
        EmotionAnnotation {
            affected: true,
            emotion,
        }
    }

    pub fn is_affected(&self) -> bool {
        self.affected
    }

    pub fn emotion(&self) -> EmotionLabel {
        self.emotion
    }

    /// Canonical wire form, e.g. `(true, joy)` or `(false, none)`.
    pub fn canonical(&self) -> String {
        format!("({}, {})", self.affected, self.emotion)
    }
}

impl fmt::Display for EmotionAnnotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

impl From<EmotionAnnotation> for String {
    fn from(e: EmotionAnnotation) -> String {
        e.canonical()
    }
}

impl TryFrom<String> for EmotionAnnotation {
    type Error = String;

    fn try_from(text: String) -> Result<Self, String> {
        crate::codec::parse_emotion_strict(&text).map_err(|e| e.to_string())
    }
}

/// One character's abstracted action in a sentence.
///
/// `NoAction` is written `None` on the wire. An `Act` carries an open-text
/// verb and optional target / object groups; an object without a target is
/// invalid because the canonical form `Verb(Target, Object)` cannot express
/// it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum ActionRecord {
    NoAction,
    Act {
        verb: String,
        target: Option<String>,
        object: Option<String>,
    },
}

/// Characters reserved by the wire grammar; they may not open or close an
/// action field.
fn validate_action_field(value: &str, what: &str) -> Result<String, StoryError> {
    let trimmed = value.trim();
    if trimmed.is_empty() {
        return Err(StoryError::InvalidAction {
            reason: format!("{what} is empty"),
        });
    }
    if trimmed.contains(['<', '>', '\n', '\r']) {
        return Err(StoryError::InvalidAction {
            reason: format!("{what} `{trimmed}` contains an angle bracket or newline"),
        });
    }
    Ok(trimmed.to_string())
}

impl ActionRecord {
    pub fn act(
        verb: &str,
        target: Option<&str>,
        object: Option<&str>,
    ) -> Result<Self, StoryError> {
        let verb = validate_action_field(verb, "verb")?;
        if verb.contains(['(', ')']) {
            return Err(StoryError::InvalidAction {
                reason: format!("verb `{verb}` contains parentheses"),
            });
        }
        if target.is_none() && object.is_none() && verb.eq_ignore_ascii_case("none") {
            return Err(StoryError::InvalidAction {
                reason: "bare verb `None` is reserved for the no-action record".into(),
            });
        }
        if object.is_some() && target.is_none() {
            return Err(StoryError::InvalidAction {
                reason: "action object requires a target".into(),
            });
        }
        let target = target
            .map(|t| Self::validate_group(t, "target", false))
            .transpose()?;
        let object = object
            .map(|o| Self::validate_group(o, "object", true))
            .transpose()?;
        Ok(ActionRecord::Act {
            verb,
            target,
            object,
        })
    }

    /// Target/object groups must round-trip through `Verb(Target, Object)`:
    /// balanced parentheses, no angle brackets, no newlines. The first
    /// top-level comma is the target/object separator, so only the object
    /// (the final group) may contain top-level commas.
    fn validate_group(
        value: &str,
        what: &str,
        allow_top_level_comma: bool,
    ) -> Result<String, StoryError> {
        let trimmed = validate_action_field(value, what)?;
        let mut depth: i64 = 0;
        for ch in trimmed.chars() {
            match ch {
                '(' => depth += 1,
                ')' => {
                    depth -= 1;
                    if depth < 0 {
                        return Err(StoryError::InvalidAction {
                            reason: format!("{what} `{trimmed}` has unbalanced parentheses"),
                        });
                    }
                }
                ',' if depth == 0 && !allow_top_level_comma => {
                    return Err(StoryError::InvalidAction {
                        reason: format!("{what} `{trimmed}` contains a top-level comma"),
                    });
                }
                _ => {}
            }
        }
        if depth != 0 {
            return Err(StoryError::InvalidAction {
                reason: format!("{what} `{trimmed}` has unbalanced parentheses"),
            });
        }
        Ok(trimmed)
    }

    pub fn is_no_action(&self) -> bool {
        matches!(self, ActionRecord::NoAction)
    }

    /// Canonical wire form: `None`, `Verb`, `Verb(Target)` or
    /// `Verb(Target, Object)`.
    pub fn canonical(&self) -> String {
        match self {
            ActionRecord::NoAction => "None".to_string(),
            ActionRecord::Act {
                verb,
                target,
                object,
            } => match (target, object) {
                (None, _) => verb.clone(),
                (Some(t), None) => format!("{verb}({t})"),
                (Some(t), Some(o)) => format!("{verb}({t}, {o})"),
            },
        }
    }
}

impl fmt::Display for ActionRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

impl From<ActionRecord> for String {
    fn from(a: ActionRecord) -> String {
        a.canonical()
    }
}

impl TryFrom<String> for ActionRecord {
    type Error = String;

    fn try_from(text: String) -> Result<Self, String> {
        crate::codec::parse_action_strict(&text).map_err(|e| e.to_string())
    }
}

/// A short story: a non-empty id, at least two sentences, at least one
/// character. Character names are unique (exact match), non-empty, and free
/// of angle brackets and newlines so they can serve as wire tag names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "StoryParts", into = "StoryParts")]
pub struct Story {
    id: String,
    sentences: Vec<String>,
    characters: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct StoryParts {
    id: String,
    sentences: Vec<String>,
    characters: Vec<String>,
}

impl From<Story> for StoryParts {
    fn from(s: Story) -> StoryParts {
        StoryParts {
            id: s.id,
            sentences: s.sentences,
            characters: s.characters,
        }
    }
}

impl TryFrom<StoryParts> for Story {
    type Error = String;

    fn try_from(p: StoryParts) -> Result<Story, String> {
        Story::new(p.id, p.sentences, p.characters).map_err(|e| e.to_string())
    }
}

impl Story {
    pub fn new(
        id: impl Into<String>,
        sentences: Vec<String>,
        characters: Vec<String>,
    ) -> Result<Self, StoryError> {
        let id = id.into();
        if id.trim().is_empty() {
            return Err(StoryError::EmptyId);
        }
        if sentences.len() < 2 {
            return Err(StoryError::TooFewSentences {
                id,
                n: sentences.len(),
            });
        }
        for (i, s) in sentences.iter().enumerate() {
            if s.trim().is_empty() {
                return Err(StoryError::EmptySentence { id, index: i + 1 });
            }
        }
        if characters.is_empty() {
            return Err(StoryError::NoCharacters { id });
        }
        let mut seen = BTreeSet::new();
        for name in &characters {
            if name.trim().is_empty() {
                return Err(StoryError::BadCharacterName {
                    name: name.clone(),
                    reason: "empty or whitespace-only".into(),
                });
            }
            if name.trim() != name {
                return Err(StoryError::BadCharacterName {
                    name: name.clone(),
                    reason: "leading or trailing whitespace".into(),
                });
            }
            if name.contains(['<', '>', '\n', '\r']) {
                return Err(StoryError::BadCharacterName {
                    name: name.clone(),
                    reason: "contains an angle bracket or newline".into(),
                });
            }
            if !seen.insert(name.clone()) {
                return Err(StoryError::DuplicateCharacter {
                    id,
                    name: name.clone(),
                });
            }
        }
        Ok(Story {
            id,
            sentences,
            characters,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn sentences(&self) -> &[String] {
        &self.sentences
    }

    pub fn characters(&self) -> &[String] {
        &self.characters
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        false // a valid story always has at least two sentences
    }

    /// Sentence by 1-based index.
    pub fn sentence(&self, index: usize) -> Option<&str> {
        if index == 0 {
            return None;
        }
        self.sentences.get(index - 1).map(String::as_str)
    }

    pub fn character_index(&self, name: &str) -> Option<usize> {
        self.characters.iter().position(|c| c == name)
    }

    /// Case-insensitive roster lookup; first match wins.
    pub fn character_index_ci(&self, name: &str) -> Option<usize> {
        self.characters
            .iter()
            .position(|c| c.eq_ignore_ascii_case(name))
    }

    /// Copy of this story with the 1-based `index` sentence removed.
    /// Fails if the index is out of range or removal would leave fewer than
    /// two sentences.
    pub fn without_sentence(&self, index: usize) -> Result<Story, StoryError> {
        if index == 0 || index > self.sentences.len() {
            return Err(StoryError::GridShape {
                reason: format!(
                    "sentence index {index} out of range 1..={}",
                    self.sentences.len()
                ),
            });
        }
        let mut sentences = self.sentences.clone();
        sentences.remove(index - 1);
        Story::new(self.id.clone(), sentences, self.characters.clone())
    }

    /// Copy of this story with `sentence` inserted before the 1-based
    /// `index` position (so the new sentence takes position `index`).
    pub fn with_sentence_inserted(
        &self,
        index: usize,
        sentence: &str,
    ) -> Result<Story, StoryError> {
        if index == 0 || index > self.sentences.len() + 1 {
            return Err(StoryError::GridShape {
                reason: format!(
                    "insertion index {index} out of range 1..={}",
                    self.sentences.len() + 1
                ),
            });
        }
        let mut sentences = self.sentences.clone();
        sentences.insert(index - 1, sentence.to_string());
        Story::new(self.id.clone(), sentences, self.characters.clone())
    }
}

/// One (sentence, character) cell of an annotation grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub action: ActionRecord,
    pub emotion: EmotionAnnotation,
}

impl Annotation {
    pub fn new(action: ActionRecord, emotion: EmotionAnnotation) -> Self {
        Annotation { action, emotion }
    }

    pub fn empty() -> Self {
        Annotation {
            action: ActionRecord::NoAction,
            emotion: EmotionAnnotation::unaffected(),
        }
    }
}

/// A story plus a total annotation grid indexed `[sentence][character]`,
/// aligned with `story.sentences()` and `story.characters()`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedStory {
    story: Story,
    grid: Vec<Vec<Annotation>>,
}

impl AnnotatedStory {
    pub fn new(story: Story, grid: Vec<Vec<Annotation>>) -> Result<Self, StoryError> {
        if grid.len() != story.len() {
            return Err(StoryError::GridShape {
                reason: format!(
                    "{} sentence rows for a {}-sentence story",
                    grid.len(),
                    story.len()
                ),
            });
        }
        let m = story.characters().len();
        for (i, row) in grid.iter().enumerate() {
            if row.len() != m {
                return Err(StoryError::GridShape {
                    reason: format!(
                        "sentence {} has {} character cells, expected {m}",
                        i + 1,
                        row.len()
                    ),
                });
            }
        }
        Ok(AnnotatedStory { story, grid })
    }

    /// Grid with every cell empty (`None` action, `(false, none)` emotion).
    pub fn blank(story: Story) -> Self {
        let grid = vec![vec![Annotation::empty(); story.characters().len()]; story.len()];
        AnnotatedStory { story, grid }
    }

    pub fn story(&self) -> &Story {
        &self.story
    }

    pub fn grid(&self) -> &[Vec<Annotation>] {
        &self.grid
    }

    /// Cell for a 1-based sentence index and an exact character name.
    pub fn cell(&self, sentence: usize, character: &str) -> Option<&Annotation> {
        let c = self.story.character_index(character)?;
        self.grid.get(sentence.checked_sub(1)?)?.get(c)
    }

    /// Row of annotations for a 1-based sentence index.
    pub fn sentence_row(&self, sentence: usize) -> Option<&[Annotation]> {
        self.grid
            .get(sentence.checked_sub(1)?)
            .map(Vec::as_slice)
    }

    pub fn into_parts(self) -> (Story, Vec<Vec<Annotation>>) {
        (self.story, self.grid)
    }

    /// Annotated story with the 1-based `index` sentence (and its grid row)
    /// removed.
    pub fn without_sentence(&self, index: usize) -> Result<AnnotatedStory, StoryError> {
        let story = self.story.without_sentence(index)?;
        let mut grid = self.grid.clone();
        grid.remove(index - 1);
        AnnotatedStory::new(story, grid)
    }
}

/// A single annotator's weighted vote for one (sentence, character) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionVote {
    pub label: EmotionLabel,
    pub weight: f64,
}

/// A story as ingested from a corpus file: raw annotator votes, not yet
/// consolidated. Vote lists are indexed `[sentence][character]` and may be
/// empty.
#[derive(Debug, Clone, PartialEq)]
pub struct RawStory {
    story: Story,
    votes: Vec<Vec<Vec<EmotionVote>>>,
}

impl RawStory {
    pub fn new(story: Story, votes: Vec<Vec<Vec<EmotionVote>>>) -> Result<Self, StoryError> {
        let id = story.id().to_string();
        if votes.len() != story.len() {
            return Err(StoryError::VoteShape {
                id,
                reason: format!(
                    "{} sentence rows for a {}-sentence story",
                    votes.len(),
                    story.len()
                ),
            });
        }
        let m = story.characters().len();
        for (i, row) in votes.iter().enumerate() {
            if row.len() != m {
                return Err(StoryError::VoteShape {
                    id,
                    reason: format!(
                        "sentence {} has {} character cells, expected {m}",
                        i + 1,
                        row.len()
                    ),
                });
            }
            for cell in row {
                for vote in cell {
                    if !vote.weight.is_finite() || vote.weight < 0.0 {
                        return Err(StoryError::BadWeight {
                            id,
                            weight: vote.weight,
                        });
                    }
                }
            }
        }
        Ok(RawStory { story, votes })
    }

    pub fn story(&self) -> &Story {
        &self.story
    }

    pub fn votes(&self) -> &[Vec<Vec<EmotionVote>>] {
        &self.votes
    }
}

/// Collapse one cell's votes to a single annotation.
///
/// Weights are summed per label first, so the outcome is independent of vote
/// order. The heaviest label wins; exact ties go to the earlier label in
/// ring order, with `none` losing every tie. An empty vote list or a `none`
/// winner yields `(false, none)`; any other winner is marked affected.
pub fn consolidate_votes(votes: &[EmotionVote]) -> EmotionAnnotation {
    let mut totals: BTreeMap<EmotionLabel, f64> = BTreeMap::new();
    for vote in votes {
        *totals.entry(vote.label).or_insert(0.0) += vote.weight;
    }
    let mut best: Option<(EmotionLabel, f64)> = None;
    // ALL is ring order with `none` last; strict `>` keeps the first
    // (highest-priority) label on ties.
    for label in EmotionLabel::ALL {
        if let Some(&w) = totals.get(&label) {
            match best {
                Some((_, bw)) if w <= bw => {}
                _ => best = Some((label, w)),
            }
        }
    }
    match best {
        None => EmotionAnnotation::unaffected(),
        Some((label, weight)) if label.is_none() || weight <= 0.0 => {
            EmotionAnnotation::unaffected()
        }
        Some((label, _)) => EmotionAnnotation::affected(label),
    }
}

/// Consolidate every cell of a raw story into an annotation grid. Actions
/// are left as `NoAction`; vote files carry emotions only.
pub fn consolidate_emotions(raw: &RawStory) -> AnnotatedStory {
    let grid = raw
        .votes
        .iter()
        .map(|row| {
            row.iter()
                .map(|cell| Annotation::new(ActionRecord::NoAction, consolidate_votes(cell)))
                .collect()
        })
        .collect();
    AnnotatedStory {
        story: raw.story.clone(),
        grid,
    }
}

#[derive(Deserialize)]
struct CorpusRecord {
    id: String,
    sentences: Vec<String>,
    characters: Vec<String>,
    #[serde(default)]
    emotions: Option<Vec<Vec<Vec<EmotionVote>>>>,
}

/// Load a JSONL corpus. Each line is one record with fields `id`,
/// `sentences`, `characters` and optional `emotions` (annotator votes
/// indexed `[sentence][character]`; a missing field means no votes).
/// Unknown fields are ignored. Story order is preserved. Errors carry the
/// 1-based line number and the offending text.
pub fn load_corpus(path: &Path) -> Result<Vec<RawStory>, StoryError> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut stories = Vec::new();
    let mut seen_ids: BTreeMap<String, usize> = BTreeMap::new();
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CorpusRecord =
            serde_json::from_str(&line).map_err(|e| StoryError::CorpusLine {
                line: lineno,
                message: e.to_string(),
                text: line.clone(),
            })?;
        if let Some(first) = seen_ids.insert(record.id.clone(), lineno) {
            let _ = first;
            return Err(StoryError::DuplicateStoryId {
                id: record.id,
                line: lineno,
            });
        }
        let story = Story::new(record.id, record.sentences, record.characters).map_err(|e| {
            StoryError::CorpusLine {
                line: lineno,
                message: e.to_string(),
                text: line.clone(),
            }
        })?;
        let votes = match record.emotions {
            Some(v) => v,
            None => vec![vec![Vec::new(); story.characters().len()]; story.len()],
        };
        let raw = RawStory::new(story, votes).map_err(|e| StoryError::CorpusLine {
            line: lineno,
            message: e.to_string(),
            text: line.clone(),
        })?;
        stories.push(raw);
    }
    Ok(stories)
}

fn validate_ratios(ratios: [f64; 3]) -> Result<(), StoryError> {
    for r in ratios {
        if !r.is_finite() || r <= 0.0 {
            return Err(StoryError::BadRatios {
                ratios,
                reason: "every ratio must be a positive finite number".into(),
            });
        }
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(StoryError::BadRatios {
            ratios,
            reason: format!("ratios sum to {sum}, expected 1"),
        });
    }
    Ok(())
}

/// Deterministic three-way partition of `0..n`.
///
/// Validation and test slots are `max(1, floor(n * ratio))` so that small
/// collections still produce non-empty splits; training takes the remainder
/// and must stay non-empty. Items are shuffled with a seeded generator and
/// each slot is then sorted back to input order.
pub fn split_indices(
    n: usize,
    ratios: [f64; 3],
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>), StoryError> {
    validate_ratios(ratios)?;
    if n < 3 {
        return Err(StoryError::TooFewStories { n });
    }
    let n_val = std::cmp::max(1, (n as f64 * ratios[1]).floor() as usize);
    let n_test = std::cmp::max(1, (n as f64 * ratios[2]).floor() as usize);
    if n_val + n_test >= n {
        return Err(StoryError::BadRatios {
            ratios,
            reason: format!(
                "validation ({n_val}) and test ({n_test}) slots leave no training stories out of {n}"
            ),
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_train = n - n_val - n_test;
    let mut train: Vec<usize> = order[..n_train].to_vec();
    let mut val: Vec<usize> = order[n_train..n_train + n_val].to_vec();
    let mut test: Vec<usize> = order[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok((train, val, test))
}

/// Partition stories into train / validation / test. See [`split_indices`]
/// for slot sizing; the same seed always yields the same partition.
pub fn split_corpus(
    stories: Vec<RawStory>,
    ratios: [f64; 3],
    seed: u64,
) -> Result<(Vec<RawStory>, Vec<RawStory>, Vec<RawStory>), StoryError> {
    let (ti, vi, si) = split_indices(stories.len(), ratios, seed)?;
    let mut slots: Vec<Option<RawStory>> = stories.into_iter().map(Some).collect();
    let mut take = |ixs: Vec<usize>| -> Vec<RawStory> {
        ixs.into_iter()
            .map(|i| slots[i].take().expect("split indices are disjoint"))
            .collect()
    };
    Ok((take(ti), take(vi), take(si)))
}
