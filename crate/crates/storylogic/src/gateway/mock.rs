//! Deterministic offline backend.
//!
//! A fixture directory may hold `rules.jsonl` (canned replies matched
//! against the request) and `config.json` (what to do when nothing
//! matches). The default fallback synthesises a stage-appropriate,
//! parseable reply from a hash of the request, so whole-corpus runs work
//! with no fixtures at all and repeat byte-identically.

use std::path::Path;
use std::sync::Mutex;

use async_trait::async_trait;
use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ChatMessage, ChatTransport, GatewayError, GenerationConfig, TransportError, Usage};
use crate::codec;
use crate::story::{ActionRecord, Annotation, EmotionAnnotation, EmotionLabel};

/// One canned reply. A rule matches when every `contains` substring occurs
/// in the request text (all message contents, newline-joined) and, if
/// `digest` is set, the request digest equals it exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockRule {
    pub name: String,
    #[serde(default)]
    pub contains: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest: Option<String>,
    pub response: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fallback {
    #[default]
    Synthetic,
    Error,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct MockConfig {
    #[serde(default)]
    fallback: Fallback,
}

/// One answered request, for assertions on call counts and routing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallRecord {
    pub digest: String,
    /// Matched rule name, or None when the fallback answered.
    pub rule: Option<String>,
    /// Stage guessed from the system text, when recognisable.
    pub stage: Option<&'static str>,
}

pub struct MockTransport {
    label: String,
    rules: Vec<MockRule>,
    fallback: Fallback,
    calls: Mutex<Vec<CallRecord>>,
}

/// Digest a message list: sha256 over role/content pairs.
pub fn digest_messages(messages: &[ChatMessage]) -> String {
    let mut hasher = Sha256::new();
    for message in messages {
        hasher.update(message.role.as_str().as_bytes());
        hasher.update([0u8]);
        hasher.update(message.content.as_bytes());
        hasher.update([0x1eu8]);
    }
    hex::encode(hasher.finalize())
}

impl MockTransport {
    /// Fixture-free mock: every request is answered synthetically.
    pub fn synthetic() -> Self {
        MockTransport {
            label: "synthetic".to_string(),
            rules: Vec::new(),
            fallback: Fallback::Synthetic,
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn from_dir(dir: &Path) -> Result<Self, GatewayError> {
        if !dir.is_dir() {
            return Err(GatewayError::Config(format!(
                "mock fixture directory {} does not exist",
                dir.display()
            )));
        }
        let config: MockConfig = match std::fs::read_to_string(dir.join("config.json")) {
            Ok(text) => serde_json::from_str(&text)
                .map_err(|e| GatewayError::Config(format!("mock config.json: {e}")))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => MockConfig::default(),
            Err(e) => return Err(GatewayError::Config(format!("mock config.json: {e}"))),
        };
        let mut rules = Vec::new();
        match std::fs::read_to_string(dir.join("rules.jsonl")) {
            Ok(text) => {
                for (i, line) in text.lines().enumerate() {
                    if line.trim().is_empty() {
                        continue;
                    }
                    let rule: MockRule = serde_json::from_str(line).map_err(|e| {
                        GatewayError::Config(format!("mock rules.jsonl line {}: {e}", i + 1))
                    })?;
                    rules.push(rule);
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(GatewayError::Config(format!("mock rules.jsonl: {e}"))),
        }
        Ok(MockTransport {
            label: dir.display().to_string(),
            rules,
            fallback: config.fallback,
            calls: Mutex::new(Vec::new()),
        })
    }

    pub fn calls(&self) -> Vec<CallRecord> {
        self.calls.lock().expect("calls lock").clone()
    }
}

static STORY_LINE_RE: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"(?m)^\s*\d+\.\s").expect("static regex"));
static CHARACTERS_LINE_RE: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"(?m)^Characters:\s*(.+)$").expect("static regex"));
static INDEX_LINE_RE: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"(?m)^Insert before sentence index:\s*(-?\d+)\s*$").expect("static regex"));

/// Markers unique to each system template, used to guess the stage.
fn detect_stage(system: &str) -> Option<&'static str> {
    if system.contains("abstract and categorize actions") {
        Some("action_abstract")
    } else if system.contains("detect and categorize the emotions") {
        Some("emotion_classify")
    } else if system.contains("Predict the most likely actions and emotions") {
        Some("predict_ea")
    } else if system.contains("based only on the abstracted actions") {
        Some("t2act2t")
    } else if system.contains("analyze and evaluate user inputs") {
        if system.contains("**Rules**") {
            Some("logic_check_ea")
        } else {
            Some("logic_check_plain")
        }
    } else if system.contains("Generate a sentence to fill a gap") {
        if system.contains("predicted actions and emotions") {
            Some("generate_ea_pred")
        } else if system.contains("shown after each sentence") {
            Some("generate_ea")
        } else {
            Some("generate_plain")
        }
    } else {
        None
    }
}

fn request_hash(haystack: &str) -> u64 {
    let digest = Sha256::digest(haystack.as_bytes());
    u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn characters_of(user: &str) -> Vec<String> {
    CHARACTERS_LINE_RE
        .captures_iter(user)
        .last()
        .map(|caps| {
            caps.get(1)
                .expect("group 1")
                .as_str()
                .split(',')
                .map(|c| c.trim().to_string())
                .filter(|c| !c.is_empty())
                .collect()
        })
        .unwrap_or_default()
}

const VERBS: [&str; 6] = ["Walked", "Smiled", "Waited", "Looked", "Nodded", "Paused"];
const TARGETS: [Option<&str>; 4] = [None, Some("the others"), Some("the room"), Some("home")];
const CONTINUATIONS: [&str; 4] = [
    "took a moment to think it over.",
    "waited to see what would happen next.",
    "decided it was time to move on.",
    "went on with the day.",
];

fn synth_action(hash: u64, index: usize) -> ActionRecord {
    if (hash.wrapping_add(index as u64)) % 4 == 0 {
        return ActionRecord::NoAction;
    }
    let verb = VERBS[(hash as usize).wrapping_add(index * 7) % VERBS.len()];
    let target = TARGETS[(hash as usize >> 8).wrapping_add(index * 3) % TARGETS.len()];
    ActionRecord::act(verb, target, None).expect("fixed vocabulary is valid")
}

fn synth_emotion(hash: u64, index: usize) -> EmotionAnnotation {
    if (hash.wrapping_add(index as u64)) % 5 == 0 {
        return EmotionAnnotation::unaffected();
    }
    let label = EmotionLabel::WHEEL[(hash as usize >> 4).wrapping_add(index * 5) % 8];
    EmotionAnnotation::affected(label)
}

fn synth_subject(characters: &[String]) -> &str {
    characters.first().map(String::as_str).unwrap_or("Someone")
}

/// Deterministic stage-appropriate reply. Unknown stages answer `none`.
fn synthesize(messages: &[ChatMessage]) -> String {
    let system = messages
        .iter()
        .find(|m| m.role == super::Role::System)
        .map(|m| m.content.as_str())
        .unwrap_or("");
    let user = messages
        .iter()
        .rev()
        .find(|m| m.role == super::Role::User)
        .map(|m| m.content.as_str())
        .unwrap_or("");
    let haystack: String = messages
        .iter()
        .map(|m| m.content.as_str())
        .collect::<Vec<_>>()
        .join("\n");
    let hash = request_hash(&haystack);
    let characters = characters_of(user);
    match detect_stage(system) {
        Some("action_abstract") => {
            if characters.is_empty() {
                return "none".to_string();
            }
            characters
                .iter()
                .enumerate()
                .map(|(i, name)| codec::serialize_action(name, &synth_action(hash, i)))
                .collect::<Vec<_>>()
                .join("\n")
        }
        Some("emotion_classify") => {
            if characters.is_empty() {
                return "none".to_string();
            }
            characters
                .iter()
                .enumerate()
                .map(|(i, name)| codec::serialize_emotion(name, &synth_emotion(hash, i)))
                .collect::<Vec<_>>()
                .join("\n")
        }
        Some("logic_check_plain") | Some("logic_check_ea") => {
            let shown = STORY_LINE_RE.find_iter(user).count();
            if shown >= 2 && hash % 4 != 0 {
                let k = 2 + (hash % (shown as u64 - 1)) as usize;
                format!("Insert before sentence [**{k}**]")
            } else {
                "-1".to_string()
            }
        }
        Some("predict_ea") => {
            let index_is_complete = INDEX_LINE_RE
                .captures_iter(user)
                .last()
                .is_some_and(|caps| caps.get(1).expect("group 1").as_str() == "-1");
            if index_is_complete || characters.is_empty() {
                return "none".to_string();
            }
            let grid: Vec<Annotation> = characters
                .iter()
                .enumerate()
                .map(|(i, _)| Annotation::new(synth_action(hash, i), synth_emotion(hash, i)))
                .collect();
            codec::serialize_prediction_block(&characters, &grid)
        }
        Some("t2act2t") => {
            format!(
                "{} {}",
                synth_subject(&characters),
                CONTINUATIONS[(hash as usize >> 16) % CONTINUATIONS.len()]
            )
        }
        Some(stage) if stage.starts_with("generate") => {
            format!(
                "{} {}",
                synth_subject(&characters),
                CONTINUATIONS[(hash as usize >> 16) % CONTINUATIONS.len()]
            )
        }
        _ => "none".to_string(),
    }
}

fn token_count(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

#[async_trait]
impl ChatTransport for MockTransport {
    async fn complete(
        &self,
        _model: &str,
        messages: &[ChatMessage],
        _config: &GenerationConfig,
    ) -> Result<(String, Usage), TransportError> {
        let haystack: String = messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        let digest = digest_messages(messages);
        let stage = messages
            .iter()
            .find(|m| m.role == super::Role::System)
            .and_then(|m| detect_stage(&m.content));
        let matched = self.rules.iter().find(|rule| {
            rule.digest.as_ref().map_or(true, |d| *d == digest)
                && rule.contains.iter().all(|needle| haystack.contains(needle))
        });
        self.calls.lock().expect("calls lock").push(CallRecord {
            digest: digest.clone(),
            rule: matched.map(|r| r.name.clone()),
            stage,
        });
        let response = match matched {
            Some(rule) => rule.response.clone(),
            None => match self.fallback {
                Fallback::Synthetic => synthesize(messages),
                Fallback::Error => {
                    return Err(TransportError::Mock(format!(
                        "no rule matched request {digest} (stage {})",
                        stage.unwrap_or("unknown")
                    )))
                }
            },
        };
        let usage = Usage {
            prompt_tokens: token_count(&haystack),
            completion_tokens: token_count(&response),
        };
        Ok((response, usage))
    }

    fn describe(&self) -> String {
        format!("mock:{}", self.label)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::templates::{PromptRequest, ShotMode, Stage, TemplateCatalog};
    use crate::gateway::ExemplarSet;

    fn prompt(stage: Stage, story: &str, sentence: Option<&str>, characters: &str) -> Vec<ChatMessage> {
        let mut request = PromptRequest::new(stage, ShotMode::Zero)
            .var("story", story)
            .var("characters", characters);
        if let Some(sentence) = sentence {
            request = request.var("sentence", sentence);
        }
        TemplateCatalog::embedded()
            .unwrap()
            .build_prompt(&request, &ExemplarSet::empty())
            .unwrap()
    }

    async fn answer(mock: &MockTransport, messages: &[ChatMessage]) -> String {
        mock.complete("m", messages, &GenerationConfig::default())
            .await
            .unwrap()
            .0
    }

    fn write_fixture(dir: &Path, rules: &[MockRule], fallback: Option<&str>) {
        let lines: Vec<String> =
            rules.iter().map(|r| serde_json::to_string(r).unwrap()).collect();
        std::fs::write(dir.join("rules.jsonl"), lines.join("\n") + "\n").unwrap();
        if let Some(fallback) = fallback {
            std::fs::write(
                dir.join("config.json"),
                format!(r#"{{"fallback": "{fallback}"}}"#),
            )
            .unwrap();
        }
    }

    #[tokio::test]
    async fn first_matching_rule_wins_and_is_logged() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(
            dir.path(),
            &[
                MockRule {
                    name: "specific".into(),
                    contains: vec!["laptop".into(), "Gary".into()],
                    digest: None,
                    response: "<Gary>LookingFor(a new laptop)</Gary>".into(),
                },
                MockRule {
                    name: "broad".into(),
                    contains: vec!["Gary".into()],
                    digest: None,
                    response: "never".into(),
                },
            ],
            None,
        );
        let mock = MockTransport::from_dir(dir.path()).unwrap();
        let messages = prompt(
            Stage::ActionAbstract,
            "1. Gary was looking for a new laptop.",
            Some("Gary was looking for a new laptop."),
            "Gary",
        );
        assert_eq!(answer(&mock, &messages).await, "<Gary>LookingFor(a new laptop)</Gary>");
        let calls = mock.calls();
        assert_eq!(calls.len(), 1);
        assert_eq!(calls[0].rule.as_deref(), Some("specific"));
        assert_eq!(calls[0].stage, Some("action_abstract"));
    }

    #[tokio::test]
    async fn digest_rules_match_exactly_one_request() {
        let messages = prompt(Stage::LogicCheckPlain, "1. A man slept.\n2. He woke up.", None, "man");
        let digest = digest_messages(&messages);
        let dir = tempfile::tempdir().unwrap();
        write_fixture(
            dir.path(),
            &[MockRule {
                name: "pinned".into(),
                contains: vec![],
                digest: Some(digest),
                response: "-1".into(),
            }],
            None,
        );
        let mock = MockTransport::from_dir(dir.path()).unwrap();
        assert_eq!(answer(&mock, &messages).await, "-1");

        let other = prompt(Stage::LogicCheckPlain, "1. B.\n2. C.\n3. D.", None, "man");
        let reply = answer(&mock, &other).await;
        codec::parse_index_verdict(&reply, 4).unwrap(); // fallback synthesised a verdict
        assert_eq!(mock.calls()[1].rule, None);
    }

    #[tokio::test]
    async fn error_fallback_fails_loudly_and_is_not_retryable() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path(), &[], Some("error"));
        let mock = MockTransport::from_dir(dir.path()).unwrap();
        let messages = prompt(Stage::LogicCheckPlain, "1. A.\n2. B.", None, "A");
        let err = mock
            .complete("m", &messages, &GenerationConfig::default())
            .await
            .unwrap_err();
        assert!(matches!(err, TransportError::Mock(_)));
        assert!(!err.is_retryable());
    }

    #[tokio::test]
    async fn missing_fixture_dir_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope");
        assert!(MockTransport::from_dir(&missing).is_err());
    }

    #[tokio::test]
    async fn synthetic_action_replies_parse_for_the_full_roster() {
        let mock = MockTransport::synthetic();
        let roster = vec!["Ana".to_string(), "Lucy's mom".to_string()];
        let messages = prompt(
            Stage::ActionAbstract,
            "1. Ana ran. 2. Lucy's mom waved.",
            Some("Ana ran."),
            "Ana, Lucy's mom",
        );
        let reply = answer(&mock, &messages).await;
        let (records, diagnostics) = codec::parse_action_block(&reply, &roster).unwrap();
        assert_eq!(records.len(), 2);
        assert!(diagnostics.is_clean(), "{diagnostics:?}");
    }

    #[tokio::test]
    async fn synthetic_emotion_replies_stay_in_the_label_set() {
        let mock = MockTransport::synthetic();
        let roster = vec!["Ana".to_string(), "Ben".to_string()];
        for i in 0..100 {
            let sentence = format!("Ana and Ben did thing number {i}.");
            let story = format!("1. {sentence}\n2. They went home.");
            let messages =
                prompt(Stage::EmotionClassify, &story, Some(&sentence), "Ana, Ben");
            let reply = answer(&mock, &messages).await;
            let (annotations, diagnostics) =
                codec::parse_emotion_block(&reply, &roster).unwrap();
            assert_eq!(annotations.len(), 2);
            assert!(diagnostics.is_clean(), "iteration {i}: {diagnostics:?}");
        }
    }

    #[tokio::test]
    async fn synthetic_verdicts_are_in_range_and_deterministic() {
        let mock = MockTransport::synthetic();
        for n in 2..8usize {
            let story: String = (1..=n)
                .map(|i| format!("{i}. Sentence number {i} happened."))
                .collect::<Vec<_>>()
                .join("\n");
            let messages = prompt(Stage::LogicCheckPlain, &story, None, "Ana");
            let first = answer(&mock, &messages).await;
            let second = answer(&mock, &messages).await;
            assert_eq!(first, second);
            let verdict = codec::parse_index_verdict(&first, n + 1).unwrap();
            match verdict {
                codec::GapVerdict::Complete => {}
                codec::GapVerdict::InsertBefore { k } => assert!(k > 1 && k <= n),
            }
        }
    }

    #[tokio::test]
    async fn synthetic_prediction_parses_and_respects_complete_index() {
        let mock = MockTransport::synthetic();
        let roster = vec!["Ana".to_string()];
        let story = "1. Ana packed.\n2. Ana left.\n3. Ana arrived.";
        let mut request = PromptRequest::new(Stage::PredictEa, ShotMode::Zero)
            .var("story", story)
            .var("characters", "Ana")
            .var("index", "2");
        let catalog = TemplateCatalog::embedded().unwrap();
        let messages = catalog.build_prompt(&request, &ExemplarSet::empty()).unwrap();
        let reply = answer(&mock, &messages).await;
        let (grid, _) = codec::parse_prediction_block(&reply, &roster).unwrap();
        assert_eq!(grid.len(), 1);

        request = request.var("index", "-1");
        let messages = catalog.build_prompt(&request, &ExemplarSet::empty()).unwrap();
        assert_eq!(answer(&mock, &messages).await, "none");
    }

    #[tokio::test]
    async fn synthetic_generation_is_a_single_nonempty_sentence() {
        let mock = MockTransport::synthetic();
        let request = PromptRequest::new(Stage::GeneratePlain, ShotMode::Zero)
            .var("story", "1. Ana packed a bag.\n2. Ana came home happy.")
            .var("index", "2");
        let messages = TemplateCatalog::embedded()
            .unwrap()
            .build_prompt(&request, &ExemplarSet::empty())
            .unwrap();
        let reply = answer(&mock, &messages).await;
        assert!(!reply.trim().is_empty());
        assert!(!reply.contains('\n'));
    }
}
