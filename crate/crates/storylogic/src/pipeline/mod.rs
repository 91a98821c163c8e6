//! Staged story processing: action abstraction, emotion classification,
//! logic check, gap prediction and sentence generation, plus the
//! text-to-actions-to-text round trip.
//!
//! Stage order within one story is fixed; failures degrade the story
//! (defaults plus a recorded error) but never abort a batch. Results carry
//! no wall-clock data, so a run with a deterministic backend is a pure
//! function of corpus, fixtures and config.

pub mod eval;
pub mod runner;
pub mod sft;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{self, GapVerdict, ParseDiagnostics};
use crate::gateway::{
    ExemplarSet, Gateway, PromptRequest, ShotMode, Stage, TemplateCatalog, TemplateError,
    Usage,
};
use crate::story::{ActionRecord, AnnotatedStory, Annotation, EmotionAnnotation, Story};

pub const RESULT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("result file line {line}: {message}")]
    ResultLine { line: usize, message: String },
    #[error("result for story {id}: {message}")]
    Invalid { id: String, message: String },
    #[error("duplicate result id {0}")]
    DuplicateId(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which prompts the checker and generator see: bare story text, story with
/// annotations, or annotations plus a predicted gap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeFlags {
    pub with_ea: bool,
    pub with_prediction: bool,
}

impl ModeFlags {
    /// Prediction needs annotations, so it forces EA on.
    pub fn new(with_ea: bool, with_prediction: bool) -> Self {
        ModeFlags { with_ea: with_ea || with_prediction, with_prediction }
    }

    pub fn plain() -> Self {
        ModeFlags { with_ea: false, with_prediction: false }
    }

    pub fn ea() -> Self {
        ModeFlags { with_ea: true, with_prediction: false }
    }

    pub fn ea_with_prediction() -> Self {
        ModeFlags { with_ea: true, with_prediction: true }
    }

    pub fn label(self) -> &'static str {
        match (self.with_ea, self.with_prediction) {
            (false, _) => "plain",
            (true, false) => "ea",
            (true, true) => "ea+pred",
        }
    }
}

/// Checker outcome as stored in results: a verdict, or the reason none could
/// be extracted (out-of-range indices are never clamped).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VerdictOutcome {
    Complete,
    InsertBefore { k: usize },
    Error { message: String },
}

impl VerdictOutcome {
    pub fn as_verdict(&self) -> Option<GapVerdict> {
        match self {
            VerdictOutcome::Complete => Some(GapVerdict::Complete),
            VerdictOutcome::InsertBefore { k } => Some(GapVerdict::InsertBefore { k: *k }),
            VerdictOutcome::Error { .. } => None,
        }
    }
}

impl From<GapVerdict> for VerdictOutcome {
    fn from(verdict: GapVerdict) -> Self {
        match verdict {
            GapVerdict::Complete => VerdictOutcome::Complete,
            GapVerdict::InsertBefore { k } => VerdictOutcome::InsertBefore { k },
        }
    }
}

/// Audit trail of one stage over one story.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub calls: u32,
    pub retries: u32,
    pub usage: Usage,
    pub warnings: Vec<String>,
    /// True when any output needed fallback parsing or a default value.
    pub recovered: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl StageReport {
    fn new(stage: Stage) -> Self {
        StageReport {
            stage: stage.key().to_string(),
            calls: 0,
            retries: 0,
            usage: Usage::default(),
            warnings: Vec::new(),
            recovered: false,
            error: None,
        }
    }

    fn absorb(&mut self, diagnostics: &ParseDiagnostics, context: &str) {
        for warning in &diagnostics.warnings {
            let kind = serde_json::to_string(&warning.kind).unwrap_or_default();
            self.warnings.push(format!(
                "{context}: {}: {}",
                kind.trim_matches('"'),
                warning.message
            ));
        }
        self.recovered |= diagnostics.recovered;
    }

    /// First failure becomes the stage error; later ones are kept as
    /// warnings. Either way the stage counts as recovered.
    fn fail(&mut self, message: String) {
        self.recovered = true;
        if self.error.is_none() {
            self.error = Some(message);
        } else {
            self.warnings.push(format!("also failed: {message}"));
        }
    }
}

/// Everything one story produced, serialized one record per line in result
/// files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub schema_version: u32,
    pub id: String,
    pub characters: Vec<String>,
    pub mode: ModeFlags,
    pub shot_mode: ShotMode,
    /// `[sentence][character]`, aligned with `characters`.
    pub annotations: Vec<Vec<Annotation>>,
    pub verdict: VerdictOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_gap: Option<BTreeMap<String, Annotation>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_sentence: Option<String>,
    pub stages: Vec<StageReport>,
}

impl PipelineResult {
    pub fn degraded(&self) -> bool {
        self.stages.iter().any(|s| s.error.is_some())
    }

    pub fn verdict_as_gap(&self) -> Option<GapVerdict> {
        self.verdict.as_verdict()
    }

    /// Structural invariants; degraded results are exempt from the
    /// prediction-presence rule because a failed prediction stage falls back
    /// to annotation-only generation.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let fail = |message: &str| {
            Err(PipelineError::Invalid { id: self.id.clone(), message: message.to_string() })
        };
        for row in &self.annotations {
            if row.len() != self.characters.len() {
                return fail("annotation row width differs from the character roster");
            }
        }
        if self.generated_sentence.is_some()
            && !matches!(self.verdict, VerdictOutcome::InsertBefore { .. })
        {
            return fail("generated sentence without an insertion verdict");
        }
        if self.predicted_gap.is_some() && !self.mode.with_ea {
            return fail("gap prediction recorded outside EA mode");
        }
        if self.mode.with_prediction
            && self.predicted_gap.is_none()
            && self.generated_sentence.is_some()
            && !self.degraded()
        {
            return fail("prediction mode produced a sentence with no prediction and no error");
        }
        Ok(())
    }
}

/// Numbered story lines, `1. <sentence>` per line.
pub fn render_plain_story(story: &Story) -> String {
    story
        .sentences()
        .iter()
        .enumerate()
        .map(|(i, sentence)| format!("{}. {sentence}", i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

fn annotation_line(name: &str, annotation: &Annotation) -> String {
    format!(
        "{} {}",
        codec::serialize_action(name, &annotation.action),
        codec::serialize_emotion(name, &annotation.emotion)
    )
}

/// Numbered story with each character's action and emotion tags on their own
/// line after each sentence.
pub fn render_ea_story(annotated: &AnnotatedStory) -> String {
    render_annotated(annotated, |_| true)
}

/// Like [`render_ea_story`] but with annotation lines only after the two
/// sentences flanking the gap (positions `k - 1` and `k`).
pub fn render_flanked_story(annotated: &AnnotatedStory, k: usize) -> String {
    render_annotated(annotated, |position| position + 1 == k || position == k)
}

fn render_annotated(annotated: &AnnotatedStory, keep: impl Fn(usize) -> bool) -> String {
    let story = annotated.story();
    let mut lines = Vec::new();
    for (i, sentence) in story.sentences().iter().enumerate() {
        let position = i + 1;
        lines.push(format!("{position}. {sentence}"));
        if keep(position) {
            for (name, annotation) in story.characters().iter().zip(&annotated.grid()[i]) {
                lines.push(annotation_line(name, annotation));
            }
        }
    }
    lines.join("\n")
}

fn characters_line(story: &Story) -> String {
    story.characters().join(", ")
}

/// Trim to the first non-empty line and drop one layer of matching quotes.
fn first_sentence_line(text: &str) -> Option<String> {
    let line = text.lines().map(str::trim).find(|line| !line.is_empty())?;
    let line = strip_matching_quotes(line);
    (!line.is_empty()).then(|| line.to_string())
}

fn strip_matching_quotes(line: &str) -> &str {
    const PAIRS: [(char, char); 3] = [('"', '"'), ('\u{201c}', '\u{201d}'), ('\'', '\'')];
    for (open, close) in PAIRS {
        if line.len() >= open.len_utf8() + close.len_utf8()
            && line.starts_with(open)
            && line.ends_with(close)
        {
            return line[open.len_utf8()..line.len() - close.len_utf8()].trim();
        }
    }
    line
}

/// The staged flow against one configured gateway.
pub struct Pipeline {
    gateway: Arc<Gateway>,
    catalog: &'static TemplateCatalog,
    exemplars: ExemplarSet,
    shot_mode: ShotMode,
    mode: ModeFlags,
}

impl Pipeline {
    pub fn new(
        gateway: Arc<Gateway>,
        mode: ModeFlags,
        shot_mode: ShotMode,
        exemplars: ExemplarSet,
    ) -> Result<Self, PipelineError> {
        Ok(Pipeline {
            gateway,
            catalog: TemplateCatalog::embedded()?,
            exemplars,
            shot_mode,
            mode,
        })
    }

    pub fn mode(&self) -> ModeFlags {
        self.mode
    }

    pub fn shot_mode(&self) -> ShotMode {
        self.shot_mode
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    async fn call_stage(
        &self,
        stage: Stage,
        variables: BTreeMap<String, String>,
        report: &mut StageReport,
    ) -> Option<String> {
        report.calls += 1;
        let request = PromptRequest { stage, shot_mode: self.shot_mode, variables };
        let messages = match self.catalog.build_prompt(&request, &self.exemplars) {
            Ok(messages) => messages,
            Err(e) => {
                report.fail(e.to_string());
                return None;
            }
        };
        match self.gateway.complete(&messages).await {
            Ok(completion) => {
                report.retries += completion.retries_used;
                report.usage.merge(completion.usage);
                Some(completion.text)
            }
            Err(e) => {
                report.fail(e.to_string());
                None
            }
        }
    }

    fn per_sentence_variables(story: &Story, sentence: &str) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("story".to_string(), render_plain_story(story)),
            ("sentence".to_string(), sentence.to_string()),
            ("characters".to_string(), characters_line(story)),
        ])
    }

    /// One abstraction call per sentence, full story as context. A failed
    /// sentence degrades to all-NoAction.
    pub async fn abstract_actions(&self, story: &Story) -> (Vec<Vec<ActionRecord>>, StageReport) {
        let mut report = StageReport::new(Stage::ActionAbstract);
        let roster = story.characters().to_vec();
        let mut grid = Vec::with_capacity(story.len());
        for (i, sentence) in story.sentences().iter().enumerate() {
            let context = format!("sentence {}", i + 1);
            let variables = Self::per_sentence_variables(story, sentence);
            let row = match self.call_stage(Stage::ActionAbstract, variables, &mut report).await {
                Some(text) => match codec::parse_action_block(&text, &roster) {
                    Ok((records, diagnostics)) => {
                        report.absorb(&diagnostics, &context);
                        records
                    }
                    Err(e) => {
                        report.fail(format!("{context}: {e}"));
                        vec![ActionRecord::NoAction; roster.len()]
                    }
                },
                None => vec![ActionRecord::NoAction; roster.len()],
            };
            grid.push(row);
        }
        (grid, report)
    }

    /// One classification call per sentence. A failed sentence degrades to
    /// all-unaffected.
    pub async fn classify_emotions(
        &self,
        story: &Story,
    ) -> (Vec<Vec<EmotionAnnotation>>, StageReport) {
        let mut report = StageReport::new(Stage::EmotionClassify);
        let roster = story.characters().to_vec();
        let mut grid = Vec::with_capacity(story.len());
        for (i, sentence) in story.sentences().iter().enumerate() {
            let context = format!("sentence {}", i + 1);
            let variables = Self::per_sentence_variables(story, sentence);
            let row = match self.call_stage(Stage::EmotionClassify, variables, &mut report).await
            {
                Some(text) => match codec::parse_emotion_block(&text, &roster) {
                    Ok((annotations, diagnostics)) => {
                        report.absorb(&diagnostics, &context);
                        annotations
                    }
                    Err(e) => {
                        report.fail(format!("{context}: {e}"));
                        vec![EmotionAnnotation::unaffected(); roster.len()]
                    }
                },
                None => vec![EmotionAnnotation::unaffected(); roster.len()],
            };
            grid.push(row);
        }
        (grid, report)
    }

    /// Verdict over the story as shown; `annotated` switches to the EA
    /// prompt with annotation lines after each sentence. The hypothetical
    /// complete story has one more sentence than shown, so a verdict `k` is
    /// valid when `1 < k <= story.len()`.
    pub async fn check_logic(
        &self,
        story: &Story,
        annotated: Option<&AnnotatedStory>,
    ) -> (VerdictOutcome, StageReport) {
        let stage = if annotated.is_some() { Stage::LogicCheckEa } else { Stage::LogicCheckPlain };
        let mut report = StageReport::new(stage);
        let story_block = match annotated {
            Some(annotated) => render_ea_story(annotated),
            None => render_plain_story(story),
        };
        let variables = BTreeMap::from([
            ("story".to_string(), story_block),
            ("characters".to_string(), characters_line(story)),
        ]);
        let Some(text) = self.call_stage(stage, variables, &mut report).await else {
            let message = report.error.clone().unwrap_or_else(|| "stage failed".to_string());
            return (VerdictOutcome::Error { message }, report);
        };
        match codec::parse_index_verdict(&text, story.len() + 1) {
            Ok(verdict) => (verdict.into(), report),
            Err(e) => {
                let message = e.to_string();
                report.fail(message.clone());
                (VerdictOutcome::Error { message }, report)
            }
        }
    }

    /// Predict the gap sentence's per-character action and emotion from the
    /// annotations flanking position `k`. Parse failure yields None and the
    /// caller falls back to annotation-only generation.
    pub async fn predict_gap_ea(
        &self,
        annotated: &AnnotatedStory,
        k: usize,
    ) -> (Option<BTreeMap<String, Annotation>>, StageReport) {
        let mut report = StageReport::new(Stage::PredictEa);
        let story = annotated.story();
        let variables = BTreeMap::from([
            ("story".to_string(), render_flanked_story(annotated, k)),
            ("characters".to_string(), characters_line(story)),
            ("index".to_string(), k.to_string()),
        ]);
        let Some(text) = self.call_stage(Stage::PredictEa, variables, &mut report).await else {
            return (None, report);
        };
        match codec::parse_prediction_block(&text, story.characters()) {
            Ok((grid, diagnostics)) => {
                report.absorb(&diagnostics, "gap prediction");
                let map = story
                    .characters()
                    .iter()
                    .cloned()
                    .zip(grid)
                    .collect::<BTreeMap<String, Annotation>>();
                (Some(map), report)
            }
            Err(e) => {
                report.fail(e.to_string());
                (None, report)
            }
        }
    }

    /// Generate the missing sentence for position `k`. Template choice:
    /// predictions present selects the predicted variant, otherwise
    /// annotations select the EA variant, otherwise the plain one.
    pub async fn generate_sentence(
        &self,
        story: &Story,
        k: usize,
        annotated: Option<&AnnotatedStory>,
        predictions: Option<&BTreeMap<String, Annotation>>,
    ) -> (Option<String>, StageReport) {
        let (stage, variables) = match (predictions, annotated) {
            (Some(predictions), _) => {
                let roster = story.characters();
                let grid: Vec<Annotation> = roster
                    .iter()
                    .map(|name| predictions.get(name).cloned().unwrap_or_else(Annotation::empty))
                    .collect();
                (
                    Stage::GenerateEaPred,
                    BTreeMap::from([
                        ("story".to_string(), render_plain_story(story)),
                        ("index".to_string(), k.to_string()),
                        (
                            "predictions".to_string(),
                            codec::serialize_prediction_block(roster, &grid),
                        ),
                    ]),
                )
            }
            (None, Some(annotated)) => (
                Stage::GenerateEa,
                BTreeMap::from([
                    ("story".to_string(), render_ea_story(annotated)),
                    ("characters".to_string(), characters_line(story)),
                    ("index".to_string(), k.to_string()),
                ]),
            ),
            (None, None) => (
                Stage::GeneratePlain,
                BTreeMap::from([
                    ("story".to_string(), render_plain_story(story)),
                    ("index".to_string(), k.to_string()),
                ]),
            ),
        };
        let mut report = StageReport::new(stage);
        let Some(text) = self.call_stage(stage, variables, &mut report).await else {
            return (None, report);
        };
        match first_sentence_line(&text) {
            Some(sentence) => (Some(sentence), report),
            None => {
                report.fail("backend returned an empty sentence".to_string());
                (None, report)
            }
        }
    }

    /// Full staged flow. Annotation stages always run; `generate` extends a
    /// missing-sentence verdict with prediction (in prediction mode) and
    /// generation. Generation never runs on a Complete verdict.
    pub async fn process(&self, story: &Story, generate: bool) -> PipelineResult {
        let mut stages = Vec::new();
        let (actions, report) = self.abstract_actions(story).await;
        stages.push(report);
        let (emotions, report) = self.classify_emotions(story).await;
        stages.push(report);
        let grid: Vec<Vec<Annotation>> = actions
            .into_iter()
            .zip(emotions)
            .map(|(action_row, emotion_row)| {
                action_row
                    .into_iter()
                    .zip(emotion_row)
                    .map(|(action, emotion)| Annotation::new(action, emotion))
                    .collect()
            })
            .collect();
        let annotated = AnnotatedStory::new(story.clone(), grid.clone())
            .expect("stage grids match the story shape");

        let (verdict, report) =
            self.check_logic(story, self.mode.with_ea.then_some(&annotated)).await;
        stages.push(report);

        let mut predicted_gap = None;
        let mut generated_sentence = None;
        if generate {
            if let VerdictOutcome::InsertBefore { k } = verdict {
                if self.mode.with_prediction {
                    let (prediction, report) = self.predict_gap_ea(&annotated, k).await;
                    stages.push(report);
                    predicted_gap = prediction;
                }
                let (sentence, report) = self
                    .generate_sentence(
                        story,
                        k,
                        self.mode.with_ea.then_some(&annotated),
                        predicted_gap.as_ref(),
                    )
                    .await;
                stages.push(report);
                generated_sentence = sentence;
            }
        }

        PipelineResult {
            schema_version: RESULT_SCHEMA_VERSION,
            id: story.id().to_string(),
            characters: story.characters().to_vec(),
            mode: self.mode,
            shot_mode: self.shot_mode,
            annotations: grid,
            verdict,
            predicted_gap,
            generated_sentence,
            stages,
        }
    }

    /// Round trip one sentence: abstract its actions, then regenerate text
    /// from the serialized actions alone (the original sentence is never in
    /// the second prompt). All-NoAction abstractions are degenerate and
    /// yield an empty reconstruction without a second call.
    pub async fn t2act2t_sentence(
        &self,
        story: &Story,
        index: usize,
    ) -> (Option<String>, Vec<StageReport>) {
        let mut abstract_report = StageReport::new(Stage::ActionAbstract);
        let Some(sentence) = story.sentence(index) else {
            abstract_report.fail(format!("sentence index {index} out of range"));
            return (None, vec![abstract_report]);
        };
        let roster = story.characters().to_vec();
        let variables = Self::per_sentence_variables(story, sentence);
        let records = match self
            .call_stage(Stage::ActionAbstract, variables, &mut abstract_report)
            .await
        {
            Some(text) => match codec::parse_action_block(&text, &roster) {
                Ok((records, diagnostics)) => {
                    abstract_report.absorb(&diagnostics, "abstraction");
                    records
                }
                Err(e) => {
                    abstract_report.fail(e.to_string());
                    return (None, vec![abstract_report]);
                }
            },
            None => return (None, vec![abstract_report]),
        };

        if records.iter().all(ActionRecord::is_no_action) {
            abstract_report
                .warnings
                .push("degenerate: no actions abstracted, reconstruction is empty".to_string());
            return (Some(String::new()), vec![abstract_report]);
        }

        let mut generate_report = StageReport::new(Stage::T2Act2T);
        let variables = BTreeMap::from([
            ("characters".to_string(), characters_line(story)),
            ("actions".to_string(), codec::serialize_action_block(&roster, &records)),
        ]);
        let reconstruction = match self
            .call_stage(Stage::T2Act2T, variables, &mut generate_report)
            .await
        {
            Some(text) => match first_sentence_line(&text) {
                Some(sentence) => Some(sentence),
                None => {
                    generate_report.fail("backend returned an empty sentence".to_string());
                    None
                }
            },
            None => None,
        };
        (reconstruction, vec![abstract_report, generate_report])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::mock::{MockRule, MockTransport};
    use crate::gateway::{GenerationConfig, Gateway};
    use crate::story::EmotionLabel;

    fn story() -> Story {
        Story::new(
            "trip".to_string(),
            vec![
                "Mara packed her bag.".to_string(),
                "Mara said goodbye to Jon.".to_string(),
                "Mara arrived in the city.".to_string(),
            ],
            vec!["Mara".to_string(), "Jon".to_string()],
        )
        .unwrap()
    }

    fn annotated_story() -> AnnotatedStory {
        let grid = vec![
            vec![
                Annotation::new(
                    ActionRecord::act("Packed", Some("her bag"), None).unwrap(),
                    EmotionAnnotation::affected(EmotionLabel::Anticipation),
                ),
                Annotation::empty(),
            ],
            vec![
                Annotation::new(
                    ActionRecord::act("SaidGoodbye", Some("Jon"), None).unwrap(),
                    EmotionAnnotation::affected(EmotionLabel::Sadness),
                ),
                Annotation::new(
                    ActionRecord::NoAction,
                    EmotionAnnotation::affected(EmotionLabel::Sadness),
                ),
            ],
            vec![
                Annotation::new(
                    ActionRecord::act("Arrived", Some("the city"), None).unwrap(),
                    EmotionAnnotation::affected(EmotionLabel::Joy),
                ),
                Annotation::empty(),
            ],
        ];
        AnnotatedStory::new(story(), grid).unwrap()
    }

    fn rules_transport(rules: Vec<MockRule>, fallback: &str) -> Arc<MockTransport> {
        let dir = tempfile::tempdir().unwrap();
        let lines: Vec<String> =
            rules.iter().map(|r| serde_json::to_string(r).unwrap()).collect();
        std::fs::write(dir.path().join("rules.jsonl"), lines.join("\n")).unwrap();
        std::fs::write(
            dir.path().join("config.json"),
            format!(r#"{{"fallback": "{fallback}"}}"#),
        )
        .unwrap();
        // tempdir contents are read into memory before the handle drops
        Arc::new(MockTransport::from_dir(dir.path()).unwrap())
    }

    fn pipeline(transport: Arc<MockTransport>, mode: ModeFlags) -> Pipeline {
        let gateway = Arc::new(
            Gateway::new(transport, "mock-model", GenerationConfig::default()).unwrap(),
        );
        Pipeline::new(gateway, mode, ShotMode::Zero, ExemplarSet::empty()).unwrap()
    }

    fn rule(name: &str, contains: &[&str], response: &str) -> MockRule {
        MockRule {
            name: name.to_string(),
            contains: contains.iter().map(|s| s.to_string()).collect(),
            digest: None,
            response: response.to_string(),
        }
    }

    #[test]
    fn plain_story_rendering_numbers_from_one() {
        assert_eq!(
            render_plain_story(&story()),
            "1. Mara packed her bag.\n2. Mara said goodbye to Jon.\n3. Mara arrived in the city."
        );
    }

    #[test]
    fn ea_rendering_interleaves_annotation_lines_after_each_sentence() {
        let rendered = render_ea_story(&annotated_story());
        let expected = "\
1. Mara packed her bag.
<Mara>Packed(her bag)</Mara> <Mara>(true, anticipation)</Mara>
<Jon>None</Jon> <Jon>(false, none)</Jon>
2. Mara said goodbye to Jon.
<Mara>SaidGoodbye(Jon)</Mara> <Mara>(true, sadness)</Mara>
<Jon>None</Jon> <Jon>(true, sadness)</Jon>
3. Mara arrived in the city.
<Mara>Arrived(the city)</Mara> <Mara>(true, joy)</Mara>
<Jon>None</Jon> <Jon>(false, none)</Jon>";
        assert_eq!(rendered, expected);
    }

    #[test]
    fn flanked_rendering_annotates_only_the_gap_neighbours() {
        let rendered = render_flanked_story(&annotated_story(), 3);
        let expected = "\
1. Mara packed her bag.
2. Mara said goodbye to Jon.
<Mara>SaidGoodbye(Jon)</Mara> <Mara>(true, sadness)</Mara>
<Jon>None</Jon> <Jon>(true, sadness)</Jon>
3. Mara arrived in the city.
<Mara>Arrived(the city)</Mara> <Mara>(true, joy)</Mara>
<Jon>None</Jon> <Jon>(false, none)</Jon>";
        assert_eq!(rendered, expected);
    }

    #[tokio::test]
    async fn full_ea_prediction_flow_with_canned_rules() {
        let transport = rules_transport(
            vec![
                rule(
                    "act-1",
                    &["abstract and categorize actions", "Sentence: Mara packed her bag."],
                    "<Mara>Packed(her bag)</Mara><Jon>None</Jon>",
                ),
                rule(
                    "act-2",
                    &["abstract and categorize actions", "Sentence: Mara said goodbye to Jon."],
                    "<Mara>SaidGoodbye(Jon)</Mara><Jon>None</Jon>",
                ),
                rule(
                    "act-3",
                    &["abstract and categorize actions", "Sentence: Mara arrived in the city."],
                    "<Mara>Arrived(the city)</Mara><Jon>None</Jon>",
                ),
                rule(
                    "emo-1",
                    &["detect and categorize the emotions", "Sentence: Mara packed her bag."],
                    "<Mara>(true, anticipation)</Mara><Jon>(false, none)</Jon>",
                ),
                rule(
                    "emo-2",
                    &["detect and categorize the emotions", "Sentence: Mara said goodbye to Jon."],
                    "<Mara>(true, sadness)</Mara><Jon>(true, sadness)</Jon>",
                ),
                rule(
                    "emo-3",
                    &["detect and categorize the emotions", "Sentence: Mara arrived in the city."],
                    "<Mara>(true, joy)</Mara><Jon>(false, none)</Jon>",
                ),
                rule("check", &["**Rules**"], "Insert before sentence [**3**]"),
                rule(
                    "predict",
                    &["Predict the most likely actions and emotions"],
                    "Actions:\n<Mara>Boarded(the train)</Mara>\n<Jon>None</Jon>\nEmotions:\n<Mara>(true, anticipation)</Mara>\n<Jon>(false, none)</Jon>",
                ),
                rule(
                    "generate",
                    &["predicted actions and emotions"],
                    "\"Mara boarded the train at dawn.\"",
                ),
            ],
            "error",
        );
        let pipeline = pipeline(transport.clone(), ModeFlags::ea_with_prediction());
        let result = pipeline.process(&story(), true).await;

        assert!(!result.degraded(), "stages: {:#?}", result.stages);
        assert_eq!(result.verdict, VerdictOutcome::InsertBefore { k: 3 });
        // quotes stripped from the generated line
        assert_eq!(result.generated_sentence.as_deref(), Some("Mara boarded the train at dawn."));
        let prediction = result.predicted_gap.as_ref().unwrap();
        assert_eq!(
            prediction.get("Mara").unwrap().action.canonical(),
            "Boarded(the train)"
        );
        assert_eq!(result.annotations[0][0].action.canonical(), "Packed(her bag)");
        assert_eq!(
            result.annotations[1][1].emotion.canonical(),
            "(true, sadness)"
        );

        // fixed stage order: 3 actions, 3 emotions, check, predict, generate
        let stages: Vec<Option<&'static str>> =
            transport.calls().iter().map(|c| c.stage).collect();
        assert_eq!(
            stages,
            vec![
                Some("action_abstract"),
                Some("action_abstract"),
                Some("action_abstract"),
                Some("emotion_classify"),
                Some("emotion_classify"),
                Some("emotion_classify"),
                Some("logic_check_ea"),
                Some("predict_ea"),
                Some("generate_ea_pred"),
            ]
        );
        result.validate().unwrap();

        // the result file record round-trips exactly
        let line = serde_json::to_string(&result).unwrap();
        let back: PipelineResult = serde_json::from_str(&line).unwrap();
        assert_eq!(back, result);
    }

    #[tokio::test]
    async fn complete_verdict_skips_generation_stages() {
        let transport = rules_transport(
            vec![rule("check", &["completeness and coherence"], "-1")],
            "synthetic",
        );
        let pipeline = pipeline(transport.clone(), ModeFlags::plain());
        let result = pipeline.process(&story(), true).await;
        assert_eq!(result.verdict, VerdictOutcome::Complete);
        assert!(result.generated_sentence.is_none());
        assert!(result.predicted_gap.is_none());
        assert_eq!(result.stages.len(), 3);
        assert_eq!(transport.calls().len(), 7); // 3 + 3 + 1
    }

    #[tokio::test]
    async fn out_of_range_verdict_is_an_error_not_a_clamp() {
        let transport = rules_transport(
            vec![rule("check", &["completeness and coherence"], "Insert before sentence [**9**]")],
            "synthetic",
        );
        let pipeline = pipeline(transport, ModeFlags::plain());
        let (verdict, report) = pipeline.check_logic(&story(), None).await;
        assert!(matches!(verdict, VerdictOutcome::Error { .. }));
        assert!(report.error.is_some());
    }

    #[tokio::test]
    async fn backend_failure_degrades_to_defaults_and_never_panics() {
        let transport = rules_transport(vec![], "error");
        let pipeline = pipeline(transport, ModeFlags::ea());
        let result = pipeline.process(&story(), true).await;
        assert!(result.degraded());
        assert!(matches!(result.verdict, VerdictOutcome::Error { .. }));
        for row in &result.annotations {
            for cell in row {
                assert!(cell.action.is_no_action());
                assert!(!cell.emotion.is_affected());
            }
        }
        assert!(result.generated_sentence.is_none());
        result.validate().unwrap();
    }

    #[tokio::test]
    async fn failed_prediction_falls_back_to_annotation_generation() {
        let transport = rules_transport(
            vec![
                rule("check", &["**Rules**"], "Insert before sentence [**2**]"),
                rule(
                    "predict",
                    &["Predict the most likely actions and emotions"],
                    "!!!",
                ),
                rule(
                    "generate",
                    &["shown after each sentence", "Insert before sentence index: 2"],
                    "A quiet day passed.",
                ),
            ],
            "synthetic",
        );
        let pipeline = pipeline(transport.clone(), ModeFlags::ea_with_prediction());
        let result = pipeline.process(&story(), true).await;
        assert!(result.predicted_gap.is_none());
        assert_eq!(result.generated_sentence.as_deref(), Some("A quiet day passed."));
        let generate_stage = result.stages.iter().find(|s| s.stage == "generate_ea").unwrap();
        assert!(generate_stage.error.is_none());
        let predict_stage = result.stages.iter().find(|s| s.stage == "predict_ea").unwrap();
        assert!(predict_stage.error.is_some());
        result.validate().unwrap();
    }

    #[tokio::test]
    async fn round_trip_reconstructs_from_actions_only() {
        let transport = rules_transport(
            vec![
                rule(
                    "abstract",
                    &["Sentence: Mara packed her bag."],
                    "<Mara>Packed(her bag)</Mara><Jon>None</Jon>",
                ),
                rule(
                    "rebuild",
                    &["based only on the abstracted actions"],
                    "Mara packed a bag.",
                ),
            ],
            "error",
        );
        let pipeline = pipeline(transport.clone(), ModeFlags::plain());
        let (reconstruction, reports) = pipeline.t2act2t_sentence(&story(), 1).await;
        assert_eq!(reconstruction.as_deref(), Some("Mara packed a bag."));
        assert_eq!(reports.len(), 2);

        // the reconstruction prompt must not leak the original sentence
        let calls = transport.calls();
        assert_eq!(calls.len(), 2);
        assert_eq!(calls[1].stage, Some("t2act2t"));
    }

    #[tokio::test]
    async fn all_noaction_round_trip_is_degenerate_and_skips_the_second_call() {
        let transport = rules_transport(
            vec![rule(
                "abstract",
                &["Sentence: Mara packed her bag."],
                "<Mara>None</Mara><Jon>None</Jon>",
            )],
            "error",
        );
        let pipeline = pipeline(transport.clone(), ModeFlags::plain());
        let (reconstruction, reports) = pipeline.t2act2t_sentence(&story(), 1).await;
        assert_eq!(reconstruction.as_deref(), Some(""));
        assert_eq!(transport.calls().len(), 1);
        assert!(reports[0].warnings.iter().any(|w| w.contains("degenerate")));
    }

    #[test]
    fn mode_flags_coerce_prediction_into_ea() {
        let mode = ModeFlags::new(false, true);
        assert!(mode.with_ea);
        assert_eq!(mode.label(), "ea+pred");
        assert_eq!(ModeFlags::new(false, false).label(), "plain");
        assert_eq!(ModeFlags::new(true, false).label(), "ea");
    }

    #[test]
    fn validate_rejects_contradictory_results() {
        let result = PipelineResult {
            schema_version: RESULT_SCHEMA_VERSION,
            id: "x".to_string(),
            characters: vec!["A".to_string()],
            mode: ModeFlags::plain(),
            shot_mode: ShotMode::Zero,
            annotations: vec![vec![Annotation::empty()]],
            verdict: VerdictOutcome::Complete,
            predicted_gap: None,
            generated_sentence: Some("ghost sentence".to_string()),
            stages: Vec::new(),
        };
        assert!(result.validate().is_err());

        let mut bad_width = result.clone();
        bad_width.generated_sentence = None;
        bad_width.annotations = vec![vec![Annotation::empty(), Annotation::empty()]];
        assert!(bad_width.validate().is_err());

        let mut pred_without_ea = result;
        pred_without_ea.generated_sentence = None;
        pred_without_ea.predicted_gap = Some(BTreeMap::new());
        assert!(pred_without_ea.validate().is_err());
    }

    #[test]
    fn quote_stripping_handles_matched_pairs_only() {
        assert_eq!(first_sentence_line("\"Hello there.\"").as_deref(), Some("Hello there."));
        assert_eq!(
            first_sentence_line("\u{201c}Curly quotes.\u{201d}").as_deref(),
            Some("Curly quotes.")
        );
        assert_eq!(
            first_sentence_line("\"Unbalanced.").as_deref(),
            Some("\"Unbalanced.")
        );
        assert_eq!(
            first_sentence_line("\n\n  The line.  \nSecond line.").as_deref(),
            Some("The line.")
        );
        assert_eq!(first_sentence_line("   \n\t\n"), None);
        assert_eq!(first_sentence_line("\"\""), None);
    }
}
