//! The prompt template catalog and message assembly.
//!
//! Templates are external text assets embedded at compile time and verified
//! against a sha256 manifest on first use, so any drift between the shipped
//! prompt text and the checked-in checksum fails loudly. Placeholders use
//! `{{name}}` syntax; substitution is single-pass, so placeholder-looking
//! text inside a variable's value is never expanded.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::ChatMessage;

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("stage {stage} is missing variable {{{{{name}}}}}")]
    MissingVariable { stage: &'static str, name: String },
    #[error("{mode}-shot mode for stage {stage} needs {needed} exemplars, {available} configured")]
    NotEnoughExemplars {
        stage: &'static str,
        mode: &'static str,
        needed: usize,
        available: usize,
    },
    #[error("template asset {file}: checksum mismatch (manifest {expected}, embedded {actual})")]
    Checksum {
        file: String,
        expected: String,
        actual: String,
    },
    #[error("template manifest: {0}")]
    Manifest(String),
    #[error("exemplar file line {line}: {message}")]
    ExemplarLine { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The nine prompt stages. `T2Act2T` is the reconstruction half of the
/// text-to-actions-to-text round trip; `ActionAbstract` is its first half.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "action_abstract")]
    ActionAbstract,
    #[serde(rename = "emotion_classify")]
    EmotionClassify,
    #[serde(rename = "logic_check_plain")]
    LogicCheckPlain,
    #[serde(rename = "logic_check_ea")]
    LogicCheckEa,
    #[serde(rename = "predict_ea")]
    PredictEa,
    #[serde(rename = "generate_plain")]
    GeneratePlain,
    #[serde(rename = "generate_ea")]
    GenerateEa,
    #[serde(rename = "generate_ea_pred")]
    GenerateEaPred,
    #[serde(rename = "t2act2t")]
    T2Act2T,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::ActionAbstract,
        Stage::EmotionClassify,
        Stage::LogicCheckPlain,
        Stage::LogicCheckEa,
        Stage::PredictEa,
        Stage::GeneratePlain,
        Stage::GenerateEa,
        Stage::GenerateEaPred,
        Stage::T2Act2T,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Stage::ActionAbstract => "action_abstract",
            Stage::EmotionClassify => "emotion_classify",
            Stage::LogicCheckPlain => "logic_check_plain",
            Stage::LogicCheckEa => "logic_check_ea",
            Stage::PredictEa => "predict_ea",
            Stage::GeneratePlain => "generate_plain",
            Stage::GenerateEa => "generate_ea",
            Stage::GenerateEaPred => "generate_ea_pred",
            Stage::T2Act2T => "t2act2t",
        }
    }

    pub fn parse(token: &str) -> Option<Stage> {
        let token = token.trim().to_ascii_lowercase();
        Stage::ALL.into_iter().find(|stage| stage.key() == token)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// How many exemplars to splice between the system and user messages.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShotMode {
    #[default]
    Zero,
    One,
    Few,
}

impl ShotMode {
    pub fn key(self) -> &'static str {
        match self {
            ShotMode::Zero => "zero",
            ShotMode::One => "one",
            ShotMode::Few => "few",
        }
    }

    pub fn parse(token: &str) -> Option<ShotMode> {
        match token.trim().to_ascii_lowercase().as_str() {
            "zero" => Some(ShotMode::Zero),
            "one" => Some(ShotMode::One),
            "few" => Some(ShotMode::Few),
            _ => None,
        }
    }
}

impl fmt::Display for ShotMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// Everything needed to assemble one prompt.
#[derive(Debug, Clone)]
pub struct PromptRequest {
    pub stage: Stage,
    pub shot_mode: ShotMode,
    pub variables: BTreeMap<String, String>,
}

impl PromptRequest {
    pub fn new(stage: Stage, shot_mode: ShotMode) -> Self {
        PromptRequest { stage, shot_mode, variables: BTreeMap::new() }
    }

    pub fn var(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.variables.insert(name.into(), value.into());
        self
    }
}

/// One worked example for one/few-shot prompting, stored as the user message
/// and the expected assistant reply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub stage: Stage,
    pub user: String,
    pub assistant: String,
}

/// Exemplars grouped by stage, loaded from a line-delimited JSON file. The
/// toolkit ships none; they are always user-supplied.
#[derive(Debug, Clone, Default)]
pub struct ExemplarSet {
    by_stage: BTreeMap<Stage, Vec<Exemplar>>,
}

impl ExemplarSet {
    pub fn empty() -> Self {
        ExemplarSet::default()
    }

    pub fn load(path: &Path) -> Result<Self, TemplateError> {
        let text = std::fs::read_to_string(path)?;
        let mut set = ExemplarSet::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let exemplar: Exemplar = serde_json::from_str(line).map_err(|e| {
                TemplateError::ExemplarLine { line: i + 1, message: e.to_string() }
            })?;
            set.add(exemplar);
        }
        Ok(set)
    }

    pub fn add(&mut self, exemplar: Exemplar) {
        self.by_stage.entry(exemplar.stage).or_default().push(exemplar);
    }

    pub fn for_stage(&self, stage: Stage) -> &[Exemplar] {
        self.by_stage.get(&stage).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn is_empty(&self) -> bool {
        self.by_stage.values().all(Vec::is_empty)
    }
}

/// The two text halves of one stage's prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageTemplates {
    pub system: String,
    pub user: String,
}

struct StageAsset {
    stage: Stage,
    system_name: &'static str,
    system: &'static str,
    user_name: &'static str,
    user: &'static str,
}

macro_rules! asset {
    ($stage:expr, $key:literal) => {
        StageAsset {
            stage: $stage,
            system_name: concat!($key, ".system.txt"),
            system: include_str!(concat!("../../assets/templates/", $key, ".system.txt")),
            user_name: concat!($key, ".user.txt"),
            user: include_str!(concat!("../../assets/templates/", $key, ".user.txt")),
        }
    };
}

static ASSETS: [StageAsset; 9] = [
    asset!(Stage::ActionAbstract, "action_abstract"),
    asset!(Stage::EmotionClassify, "emotion_classify"),
    asset!(Stage::LogicCheckPlain, "logic_check_plain"),
    asset!(Stage::LogicCheckEa, "logic_check_ea"),
    asset!(Stage::PredictEa, "predict_ea"),
    asset!(Stage::GeneratePlain, "generate_plain"),
    asset!(Stage::GenerateEa, "generate_ea"),
    asset!(Stage::GenerateEaPred, "generate_ea_pred"),
    asset!(Stage::T2Act2T, "t2act2t"),
];

const MANIFEST: &str = include_str!("../../assets/templates/manifest.json");

static PLACEHOLDER_RE: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"\{\{([a-z_]+)\}\}").expect("static regex"));

static CATALOG: Lazy<Result<TemplateCatalog, String>> =
    Lazy::new(|| TemplateCatalog::verified().map_err(|e| e.to_string()));

/// The full set of stage templates, checksum-verified once per process.
#[derive(Debug, Clone)]
pub struct TemplateCatalog {
    entries: BTreeMap<Stage, StageTemplates>,
}

impl TemplateCatalog {
    /// The embedded catalog. Fails if any asset's sha256 disagrees with the
    /// manifest.
    pub fn embedded() -> Result<&'static TemplateCatalog, TemplateError> {
        CATALOG.as_ref().map_err(|message| TemplateError::Manifest(message.clone()))
    }

    fn verified() -> Result<TemplateCatalog, TemplateError> {
        let manifest: BTreeMap<String, String> = serde_json::from_str(MANIFEST)
            .map_err(|e| TemplateError::Manifest(e.to_string()))?;
        let mut entries = BTreeMap::new();
        for asset in &ASSETS {
            for (name, text) in [(asset.system_name, asset.system), (asset.user_name, asset.user)]
            {
                let expected = manifest.get(name).ok_or_else(|| {
                    TemplateError::Manifest(format!("no manifest entry for {name}"))
                })?;
                let actual = hex::encode(Sha256::digest(text.as_bytes()));
                if &actual != expected {
                    return Err(TemplateError::Checksum {
                        file: name.to_string(),
                        expected: expected.clone(),
                        actual,
                    });
                }
            }
            entries.insert(
                asset.stage,
                StageTemplates {
                    system: asset.system.trim_end().to_string(),
                    user: asset.user.trim_end().to_string(),
                },
            );
        }
        Ok(TemplateCatalog { entries })
    }

    pub fn stage(&self, stage: Stage) -> &StageTemplates {
        self.entries.get(&stage).expect("catalog covers every stage")
    }

    /// The instruction text alone (used verbatim as the `instruction` field
    /// of training-record exports).
    pub fn system_text(&self, stage: Stage) -> &str {
        &self.stage(stage).system
    }

    /// Render a stage's user template with the given variables.
    pub fn render_user(
        &self,
        stage: Stage,
        variables: &BTreeMap<String, String>,
    ) -> Result<String, TemplateError> {
        render(stage, &self.stage(stage).user, variables)
    }

    /// Assemble the ordered message list: system, exemplar pairs per shot
    /// mode, then the rendered user message. Pure: identical inputs give
    /// byte-identical messages.
    pub fn build_prompt(
        &self,
        request: &PromptRequest,
        exemplars: &ExemplarSet,
    ) -> Result<Vec<ChatMessage>, TemplateError> {
        let templates = self.stage(request.stage);
        let available = exemplars.for_stage(request.stage);
        let shots: &[Exemplar] = match request.shot_mode {
            ShotMode::Zero => &[],
            ShotMode::One => {
                if available.is_empty() {
                    return Err(TemplateError::NotEnoughExemplars {
                        stage: request.stage.key(),
                        mode: "one",
                        needed: 1,
                        available: 0,
                    });
                }
                &available[..1]
            }
            ShotMode::Few => {
                if available.len() < 2 {
                    return Err(TemplateError::NotEnoughExemplars {
                        stage: request.stage.key(),
                        mode: "few",
                        needed: 2,
                        available: available.len(),
                    });
                }
                available
            }
        };
        let mut messages = Vec::with_capacity(2 + shots.len() * 2);
        messages.push(ChatMessage::system(templates.system.clone()));
        for shot in shots {
            messages.push(ChatMessage::user(shot.user.clone()));
            messages.push(ChatMessage::assistant(shot.assistant.clone()));
        }
        messages.push(ChatMessage::user(render(
            request.stage,
            &templates.user,
            &request.variables,
        )?));
        Ok(messages)
    }
}

/// Single-pass `{{name}}` substitution over the template text. Values are
/// inserted literally, never re-scanned.
fn render(
    stage: Stage,
    template: &str,
    variables: &BTreeMap<String, String>,
) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(template.len());
    let mut cursor = 0;
    for caps in PLACEHOLDER_RE.captures_iter(template) {
        let whole = caps.get(0).expect("group 0");
        let name = caps.get(1).expect("group 1").as_str();
        out.push_str(&template[cursor..whole.start()]);
        match variables.get(name) {
            Some(value) => out.push_str(value),
            None => {
                return Err(TemplateError::MissingVariable {
                    stage: stage.key(),
                    name: name.to_string(),
                })
            }
        }
        cursor = whole.end();
    }
    out.push_str(&template[cursor..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;
    use std::io::Write;

    fn catalog() -> &'static TemplateCatalog {
        TemplateCatalog::embedded().expect("embedded catalog verifies")
    }

    fn story_vars() -> BTreeMap<String, String> {
        let mut vars = BTreeMap::new();
        vars.insert(
            "story".to_string(),
            "1. Gary was looking for a new laptop.\n2. Gary was not pleased.".to_string(),
        );
        vars.insert("characters".to_string(), "Gary".to_string());
        vars
    }

    #[test]
    fn every_stage_has_verified_templates() {
        let catalog = catalog();
        for stage in Stage::ALL {
            let templates = catalog.stage(stage);
            assert!(!templates.system.is_empty(), "{stage} system empty");
            assert!(!templates.user.is_empty(), "{stage} user empty");
        }
    }

    #[test]
    fn system_templates_are_pairwise_distinct() {
        let catalog = catalog();
        let distinct: BTreeSet<&str> =
            Stage::ALL.iter().map(|&s| catalog.system_text(s)).collect();
        assert_eq!(distinct.len(), Stage::ALL.len());
    }

    #[test]
    fn zero_shot_logic_check_is_two_messages() {
        let request = PromptRequest {
            stage: Stage::LogicCheckPlain,
            shot_mode: ShotMode::Zero,
            variables: story_vars(),
        };
        let messages = catalog().build_prompt(&request, &ExemplarSet::empty()).unwrap();
        assert_eq!(messages.len(), 2);
        assert_eq!(messages[0].role, crate::gateway::Role::System);
        assert!(messages[0]
            .content
            .starts_with("You are an AI assistant designed to analyze"));
        assert!(messages[0].content.contains("Insert before sentence [**i**]"));
        assert_eq!(messages[1].role, crate::gateway::Role::User);
        assert!(messages[1].content.contains("Gary was looking for a new laptop."));
    }

    #[test]
    fn ea_check_template_carries_the_rules_block() {
        let system = catalog().system_text(Stage::LogicCheckEa);
        assert!(system.contains("**Rules**:"));
        assert!(system.contains("Emotion affects Action"));
        assert!(!catalog().system_text(Stage::LogicCheckPlain).contains("**Rules**:"));
    }

    #[test]
    fn predict_template_announces_its_task() {
        let system = catalog().system_text(Stage::PredictEa);
        assert!(system.contains("Predict the most likely actions and emotions"));
        assert!(system.contains("Think it step by step"));
    }

    #[test]
    fn missing_variable_is_named() {
        let mut vars = story_vars();
        vars.remove("characters");
        vars.insert("sentence".to_string(), "Gary frowned.".to_string());
        let request = PromptRequest {
            stage: Stage::EmotionClassify,
            shot_mode: ShotMode::Zero,
            variables: vars,
        };
        let err = catalog().build_prompt(&request, &ExemplarSet::empty()).unwrap_err();
        match err {
            TemplateError::MissingVariable { stage, name } => {
                assert_eq!(stage, "emotion_classify");
                assert_eq!(name, "characters");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn variable_values_are_not_rescanned_for_placeholders() {
        let mut vars = BTreeMap::new();
        vars.insert("story".to_string(), "odd text with {{characters}} inside".to_string());
        vars.insert("characters".to_string(), "Ana".to_string());
        let request = PromptRequest {
            stage: Stage::LogicCheckPlain,
            shot_mode: ShotMode::Zero,
            variables: vars,
        };
        let messages = catalog().build_prompt(&request, &ExemplarSet::empty()).unwrap();
        let user = &messages[1].content;
        assert!(user.contains("odd text with {{characters}} inside"));
        assert!(user.contains("Characters: Ana"));
    }

    #[test]
    fn shot_modes_splice_exemplar_pairs() {
        let mut exemplars = ExemplarSet::empty();
        exemplars.add(Exemplar {
            stage: Stage::LogicCheckPlain,
            user: "Story:\n1. A.\n2. B.".to_string(),
            assistant: "-1".to_string(),
        });
        exemplars.add(Exemplar {
            stage: Stage::LogicCheckPlain,
            user: "Story:\n1. C.\n2. D.\n3. E.".to_string(),
            assistant: "Insert before sentence [**2**]".to_string(),
        });
        let mut request = PromptRequest {
            stage: Stage::LogicCheckPlain,
            shot_mode: ShotMode::One,
            variables: story_vars(),
        };
        let one = catalog().build_prompt(&request, &exemplars).unwrap();
        assert_eq!(one.len(), 4);
        assert_eq!(one[2].content, "-1");

        request.shot_mode = ShotMode::Few;
        let few = catalog().build_prompt(&request, &exemplars).unwrap();
        assert_eq!(few.len(), 6);
        assert_eq!(few[4].content, "Insert before sentence [**2**]");

        // exemplars for another stage stay invisible
        request.stage = Stage::GeneratePlain;
        request.variables.insert("index".to_string(), "2".to_string());
        let err = catalog().build_prompt(&request, &exemplars).unwrap_err();
        assert!(matches!(err, TemplateError::NotEnoughExemplars { available: 0, .. }));
    }

    #[test]
    fn few_shot_needs_two_exemplars() {
        let mut exemplars = ExemplarSet::empty();
        exemplars.add(Exemplar {
            stage: Stage::GeneratePlain,
            user: "u".to_string(),
            assistant: "a".to_string(),
        });
        let request = PromptRequest {
            stage: Stage::GeneratePlain,
            shot_mode: ShotMode::Few,
            variables: BTreeMap::from([
                ("story".to_string(), "1. A.".to_string()),
                ("index".to_string(), "2".to_string()),
            ]),
        };
        let err = catalog().build_prompt(&request, &exemplars).unwrap_err();
        assert!(matches!(
            err,
            TemplateError::NotEnoughExemplars { needed: 2, available: 1, .. }
        ));
    }

    #[test]
    fn build_prompt_is_pure() {
        let request = PromptRequest {
            stage: Stage::LogicCheckEa,
            shot_mode: ShotMode::Zero,
            variables: story_vars(),
        };
        let a = catalog().build_prompt(&request, &ExemplarSet::empty()).unwrap();
        let b = catalog().build_prompt(&request, &ExemplarSet::empty()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn exemplar_file_round_trips_and_reports_bad_lines() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            file,
            r#"{{"stage": "logic_check_plain", "user": "u1", "assistant": "a1"}}"#
        )
        .unwrap();
        writeln!(file).unwrap();
        writeln!(file, r#"{{"stage": "t2act2t", "user": "u2", "assistant": "a2"}}"#).unwrap();
        let set = ExemplarSet::load(file.path()).unwrap();
        assert_eq!(set.for_stage(Stage::LogicCheckPlain).len(), 1);
        assert_eq!(set.for_stage(Stage::T2Act2T).len(), 1);
        assert!(set.for_stage(Stage::PredictEa).is_empty());

        writeln!(file, r#"{{"stage": "no_such_stage", "user": "u", "assistant": "a"}}"#)
            .unwrap();
        let err = ExemplarSet::load(file.path()).unwrap_err();
        assert!(matches!(err, TemplateError::ExemplarLine { line: 4, .. }));
    }

    #[test]
    fn stage_keys_parse_back() {
        for stage in Stage::ALL {
            assert_eq!(Stage::parse(stage.key()), Some(stage));
            let json = serde_json::to_string(&stage).unwrap();
            assert_eq!(json, format!("\"{}\"", stage.key()));
        }
        assert_eq!(Stage::parse("T2ACT2T"), Some(Stage::T2Act2T));
        assert_eq!(Stage::parse("bogus"), None);
        assert_eq!(ShotMode::parse("Few"), Some(ShotMode::Few));
        assert_eq!(ShotMode::parse("many"), None);
    }
}
