//! Wire grammars spoken with the model.
//!
//! Three block shapes travel between the pipeline and a chat backend:
//!
//! - action blocks: `<Character>Verb(Target, Object)</Character>` or
//!   `<Character>None</Character>`, one tag per character;
//! - emotion blocks: `<Character>(Affected, emotion)</Character>` with
//!   `Affected` in {true, false} and `emotion` one of the nine labels;
//! - index verdicts: `Insert before sentence [**k**]` or a bare `-1`.
//!
//! Parsers are tolerant (Postel's law): tag names match case-insensitively,
//! whitespace and tag attributes are ignored, duplicated tags keep the first
//! occurrence, and plain `Name: content` lines are accepted when a reply
//! carries no tags at all. Every deviation from the canonical form is
//! reported in [`ParseDiagnostics`]. Serializers emit only the canonical
//! form, and parsing a canonical serialization always returns the identical
//! value with zero warnings. The grammar reference lives in
//! `docs/formats.md`.

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::story::{ActionRecord, Annotation, EmotionAnnotation, EmotionLabel, StoryError};

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("could not parse {what} from model output; raw text:\n{text}")]
    Unparseable { what: &'static str, text: String },
    #[error("`{token}` is not an emotion label")]
    UnknownLabel { token: String },
    #[error("`{token}` is not a valid affected flag; expected true or false")]
    BadAffected { token: String },
    #[error(
        "verdict index {k} is out of range for a story completed to {n} sentences; \
         expected -1 or an interior index strictly between 1 and {n}"
    )]
    IndexOutOfRange { k: i64, n: usize },
    #[error("no integer verdict found in model output; raw text:\n{text}")]
    NoInteger { text: String },
    #[error(transparent)]
    Invalid(#[from] StoryError),
}

/// Why a parse deviated from the canonical grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarningKind {
    /// A character had no tag; a default record was substituted.
    MissingTag,
    /// A character had more than one tag; the first was kept.
    DuplicateTag,
    /// A tag named something outside the character roster.
    UnknownTag,
    /// Open and close tag names disagree; the pair was skipped.
    MismatchedTag,
    /// No tags at all; `Name: content` lines were used instead.
    Fallback,
    /// `(false, <emotion>)` was coerced to `(false, none)`.
    CoercedEmotion,
    /// An emotion arrived without an affected flag; one was inferred.
    MissingAffected,
    /// Unbalanced parentheses in an action group.
    UnbalancedParens,
    /// Text after the closing parenthesis was discarded.
    TrailingContent,
    /// An action could not be read in full; a reduced record was kept.
    MalformedAction,
    /// Recognisable content in a non-canonical shape.
    LooseFormat,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseWarning {
    pub kind: WarningKind,
    /// Byte range in the original text, when one can be attributed.
    pub span: Option<(usize, usize)>,
    pub message: String,
}

/// What the tolerant parser had to do to produce a value.
///
/// `recovered` is set only when the canonical grammar failed entirely and a
/// fallback representation was used; it therefore implies at least one
/// warning.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseDiagnostics {
    pub warnings: Vec<ParseWarning>,
    pub recovered: bool,
}

impl ParseDiagnostics {
    pub fn is_clean(&self) -> bool {
        self.warnings.is_empty() && !self.recovered
    }

    fn warn(&mut self, kind: WarningKind, span: Option<(usize, usize)>, message: impl Into<String>) {
        self.warnings.push(ParseWarning {
            kind,
            span,
            message: message.into(),
        });
    }

    /// Record a fallback recovery; keeps the "recovered implies a warning"
    /// invariant by construction.
    fn recover(&mut self, span: Option<(usize, usize)>, message: impl Into<String>) {
        self.warn(WarningKind::Fallback, span, message);
        self.recovered = true;
    }

    fn absorb(&mut self, warnings: Vec<ParseWarning>, span: Option<(usize, usize)>) {
        for mut w in warnings {
            if w.span.is_none() {
                w.span = span;
            }
            self.warnings.push(w);
        }
    }
}

/// Outcome of the narrative logic check. `Complete` is written `-1` on the
/// wire; `InsertBefore { k }` says a sentence is missing immediately before
/// the 1-based position `k` of the story as currently shown.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GapVerdict {
    Complete,
    InsertBefore { k: usize },
}

impl GapVerdict {
    /// Class label used in evaluation tables: `-1` or the index.
    pub fn class_label(&self) -> i64 {
        match self {
            GapVerdict::Complete => -1,
            GapVerdict::InsertBefore { k } => *k as i64,
        }
    }
}

impl std::fmt::Display for GapVerdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GapVerdict::Complete => f.write_str("-1"),
            GapVerdict::InsertBefore { k } => write!(f, "Insert before sentence [**{k}**]"),
        }
    }
}

static TAG_RE: Lazy<Regex> = Lazy::new(|| {
    // open interior (may carry attributes), content, close name
    Regex::new(r"(?is)<\s*([^<>/][^<>]*?)\s*>(.*?)</\s*([^<>]+?)\s*>").expect("static regex")
});

static FALLBACK_LINE_RE: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"(?m)^[ \t]*([^:\n]{1,64}?)[ \t]*:[ \t]*(.+?)[ \t]*$").expect("static regex"));

static SECTION_HEADER_RE: Lazy<Regex> = Lazy::new(|| {
    Regex::new(r"(?im)^[ \t*#>\-]*(actions?|emotions?)[ \t]*:").expect("static regex")
});

static VERDICT_TEMPLATE_RE: Lazy<Regex> = Lazy::new(|| {
    Regex::new(r"(?i)insert(?:ed)?\s+before(?:\s+sentence)?\s*[:\[\*\s]*(-?\d+)")
        .expect("static regex")
});

static INTEGER_RE: Lazy<Regex> = Lazy::new(|| Regex::new(r"-?\d+").expect("static regex"));

/// One extracted `<Name>content</Name>` (or fallback line) occurrence.
struct TagEntry {
    character: usize,
    content: String,
    span: (usize, usize),
}

/// Scan `text` for character tags. When no tag matches any roster name,
/// fall back to `Name: content` lines. Returns entries in text order.
fn extract_entries(
    text: &str,
    characters: &[String],
    diagnostics: &mut ParseDiagnostics,
) -> Vec<TagEntry> {
    let roster_index = |name: &str| -> Option<usize> {
        characters
            .iter()
            .position(|c| c.eq_ignore_ascii_case(name))
    };
    let mut entries = Vec::new();
    for caps in TAG_RE.captures_iter(text) {
        let open_full = caps.get(1).expect("group 1").as_str().trim();
        let content_match = caps.get(2).expect("group 2");
        let close = caps.get(3).expect("group 3").as_str().trim();
        let whole = caps.get(0).expect("group 0");
        // An open tag may carry attributes: `<Gary mood="low">`. Match the
        // full interior first so multi-word names work, then the first
        // attribute-free token.
        let open_name = if open_full.eq_ignore_ascii_case(close) {
            open_full
        } else {
            let first = open_full.split_whitespace().next().unwrap_or(open_full);
            if first.eq_ignore_ascii_case(close) {
                first
            } else {
                diagnostics.warn(
                    WarningKind::MismatchedTag,
                    Some((whole.start(), whole.end())),
                    format!("open tag `{open_full}` closed by `{close}`"),
                );
                continue;
            }
        };
        match roster_index(open_name) {
            Some(character) => entries.push(TagEntry {
                character,
                content: content_match.as_str().trim().to_string(),
                span: (content_match.start(), content_match.end()),
            }),
            None => diagnostics.warn(
                WarningKind::UnknownTag,
                Some((whole.start(), whole.end())),
                format!("tag `{open_name}` is not in the character roster"),
            ),
        }
    }
    if !entries.is_empty() {
        return entries;
    }
    // No usable tags; try plain `Name: content` lines.
    for caps in FALLBACK_LINE_RE.captures_iter(text) {
        let name = caps.get(1).expect("group 1").as_str();
        let content = caps.get(2).expect("group 2");
        if let Some(character) = roster_index(name) {
            entries.push(TagEntry {
                character,
                content: content.as_str().trim().to_string(),
                span: (content.start(), content.end()),
            });
        }
    }
    if !entries.is_empty() {
        for e in &entries {
            diagnostics.recover(
                Some(e.span),
                format!("accepted untagged line for `{}`", characters[e.character]),
            );
        }
    }
    entries
}

/// Parse the inside of an action tag: `None`, `Verb`, `Verb(Target)` or
/// `Verb(Target, Object)`. The first top-level comma splits target from
/// object, so objects may themselves contain commas. Unbalanced or trailing
/// material is tolerated and reported.
pub fn parse_action_inner(text: &str) -> Result<(ActionRecord, Vec<ParseWarning>), CodecError> {
    let mut warnings = Vec::new();
    let t = text.trim();
    if t.is_empty() {
        return Err(CodecError::Unparseable {
            what: "an action record",
            text: text.to_string(),
        });
    }
    if t.eq_ignore_ascii_case("none") {
        return Ok((ActionRecord::NoAction, warnings));
    }
    let (verb, interior) = match t.find('(') {
        None => (t, None),
        Some(p) => {
            let rest = &t[p + 1..];
            let (interior, tail) = match rest.rfind(')') {
                Some(q) => (&rest[..q], &rest[q + 1..]),
                None => {
                    warnings.push(ParseWarning {
                        kind: WarningKind::UnbalancedParens,
                        span: None,
                        message: format!("no closing parenthesis in `{t}`"),
                    });
                    (rest, "")
                }
            };
            if !tail.trim().is_empty() {
                warnings.push(ParseWarning {
                    kind: WarningKind::TrailingContent,
                    span: None,
                    message: format!("discarded trailing `{}`", tail.trim()),
                });
            }
            (&t[..p], Some(interior))
        }
    };
    let verb = verb.trim();
    if verb.is_empty() {
        return Err(CodecError::Unparseable {
            what: "an action record",
            text: text.to_string(),
        });
    }
    let (target, object) = match interior {
        None => (None, None),
        Some(interior) => {
            let interior = interior.trim();
            if interior.is_empty() {
                (None, None)
            } else {
                match split_top_level_comma(interior) {
                    Some((left, right)) => (Some(left.trim()), Some(right.trim())),
                    None => (Some(interior), None),
                }
            }
        }
    };
    let object = object.filter(|o| !o.is_empty());
    let target = target.filter(|t| !t.is_empty());
    // An object without a target cannot round-trip; demote it to the target
    // slot.
    let (target, object) = match (target, object) {
        (None, Some(o)) => (Some(o), None),
        other => other,
    };
    match ActionRecord::act(verb, target, object) {
        Ok(record) => Ok((record, warnings)),
        Err(e) => {
            // Group contents that cannot round-trip (stray parentheses,
            // angle brackets) degrade to a verb-only record when possible.
            warnings.push(ParseWarning {
                kind: WarningKind::MalformedAction,
                span: None,
                message: e.to_string(),
            });
            let record = ActionRecord::act(verb, None, None)?;
            Ok((record, warnings))
        }
    }
}

/// First comma at parenthesis depth zero, or `None`.
fn split_top_level_comma(text: &str) -> Option<(&str, &str)> {
    let mut depth: i64 = 0;
    for (i, ch) in text.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth <= 0 => return Some((&text[..i], &text[i + 1..])),
            _ => {}
        }
    }
    None
}

/// Parse the inside of an emotion tag: `(Affected, emotion)` or bare `none`.
/// Affected flags and labels match case-insensitively; `(false, <emotion>)`
/// is coerced to `(false, none)` with a warning. Unknown labels and affected
/// tokens are hard errors.
pub fn parse_emotion_inner(
    text: &str,
) -> Result<(EmotionAnnotation, Vec<ParseWarning>), CodecError> {
    let mut warnings = Vec::new();
    let t = text.trim();
    if t.is_empty() {
        return Err(CodecError::Unparseable {
            what: "an emotion annotation",
            text: text.to_string(),
        });
    }
    if t.eq_ignore_ascii_case("none") {
        return Ok((EmotionAnnotation::unaffected(), warnings));
    }
    let interior = if let Some(rest) = t.strip_prefix('(') {
        match rest.rfind(')') {
            Some(q) => {
                let tail = &rest[q + 1..];
                if !tail.trim().is_empty() {
                    warnings.push(ParseWarning {
                        kind: WarningKind::TrailingContent,
                        span: None,
                        message: format!("discarded trailing `{}`", tail.trim()),
                    });
                }
                &rest[..q]
            }
            None => {
                warnings.push(ParseWarning {
                    kind: WarningKind::UnbalancedParens,
                    span: None,
                    message: format!("no closing parenthesis in `{t}`"),
                });
                rest
            }
        }
    } else {
        warnings.push(ParseWarning {
            kind: WarningKind::LooseFormat,
            span: None,
            message: format!("emotion pair `{t}` is not parenthesized"),
        });
        t
    };
    match interior.split_once(',') {
        None => {
            // A bare label: infer the affected flag.
            let label = EmotionLabel::parse(interior.trim()).map_err(|_| {
                CodecError::UnknownLabel {
                    token: interior.trim().to_string(),
                }
            })?;
            warnings.push(ParseWarning {
                kind: WarningKind::MissingAffected,
                span: None,
                message: format!("no affected flag before `{label}`; inferred"),
            });
            let annotation = if label.is_none() {
                EmotionAnnotation::unaffected()
            } else {
                EmotionAnnotation::affected(label)
            };
            Ok((annotation, warnings))
        }
        Some((flag, label)) => {
            let flag = flag.trim();
            let affected = if flag.eq_ignore_ascii_case("true") {
                true
            } else if flag.eq_ignore_ascii_case("false") {
                false
            } else {
                return Err(CodecError::BadAffected {
                    token: flag.to_string(),
                });
            };
            let label = label.trim();
            let emotion = EmotionLabel::parse(label).map_err(|_| CodecError::UnknownLabel {
                token: label.to_string(),
            })?;
            if !affected && !emotion.is_none() {
                warnings.push(ParseWarning {
                    kind: WarningKind::CoercedEmotion,
                    span: None,
                    message: format!("unaffected character cannot carry `{emotion}`; using none"),
                });
                return Ok((EmotionAnnotation::unaffected(), warnings));
            }
            let annotation = if affected {
                EmotionAnnotation::affected(emotion)
            } else {
                EmotionAnnotation::unaffected()
            };
            Ok((annotation, warnings))
        }
    }
}

/// Strict single-record parse for file fields: canonical-form tolerant of
/// case and whitespace only, no recoveries.
pub fn parse_action_strict(text: &str) -> Result<ActionRecord, CodecError> {
    let (record, warnings) = parse_action_inner(text)?;
    if let Some(w) = warnings.first() {
        return Err(CodecError::Unparseable {
            what: "a canonical action record",
            text: format!("{text} ({})", w.message),
        });
    }
    Ok(record)
}

/// Strict counterpart of [`parse_emotion_inner`] for file fields.
pub fn parse_emotion_strict(text: &str) -> Result<EmotionAnnotation, CodecError> {
    let (annotation, warnings) = parse_emotion_inner(text)?;
    if let Some(w) = warnings.first() {
        return Err(CodecError::Unparseable {
            what: "a canonical emotion annotation",
            text: format!("{text} ({})", w.message),
        });
    }
    Ok(annotation)
}

/// Parse one action block into a record per character, aligned with
/// `characters`. Characters without a tag get `NoAction` plus a warning.
/// The only hard failure is a reply with no recognisable content at all.
pub fn parse_action_block(
    text: &str,
    characters: &[String],
) -> Result<(Vec<ActionRecord>, ParseDiagnostics), CodecError> {
    let mut diagnostics = ParseDiagnostics::default();
    if text.trim().eq_ignore_ascii_case("none") {
        return Ok((vec![ActionRecord::NoAction; characters.len()], diagnostics));
    }
    let entries = extract_entries(text, characters, &mut diagnostics);
    if entries.is_empty() {
        return Err(CodecError::Unparseable {
            what: "an action block",
            text: text.to_string(),
        });
    }
    let mut records: Vec<Option<ActionRecord>> = vec![None; characters.len()];
    for entry in entries {
        if records[entry.character].is_some() {
            diagnostics.warn(
                WarningKind::DuplicateTag,
                Some(entry.span),
                format!(
                    "second action for `{}`; keeping the first",
                    characters[entry.character]
                ),
            );
            continue;
        }
        match parse_action_inner(&entry.content) {
            Ok((record, warnings)) => {
                diagnostics.absorb(warnings, Some(entry.span));
                records[entry.character] = Some(record);
            }
            Err(e) => {
                diagnostics.warn(
                    WarningKind::MalformedAction,
                    Some(entry.span),
                    format!("{e}; recorded no action"),
                );
                records[entry.character] = Some(ActionRecord::NoAction);
            }
        }
    }
    let records = records
        .into_iter()
        .enumerate()
        .map(|(i, r)| match r {
            Some(r) => r,
            None => {
                diagnostics.warn(
                    WarningKind::MissingTag,
                    None,
                    format!("no action tag for `{}`; recorded no action", characters[i]),
                );
                ActionRecord::NoAction
            }
        })
        .collect();
    Ok((records, diagnostics))
}

/// Parse one emotion block into an annotation per character, aligned with
/// `characters`. Unknown labels and affected flags are hard errors; missing
/// tags default to `(false, none)` with a warning.
pub fn parse_emotion_block(
    text: &str,
    characters: &[String],
) -> Result<(Vec<EmotionAnnotation>, ParseDiagnostics), CodecError> {
    let mut diagnostics = ParseDiagnostics::default();
    if text.trim().eq_ignore_ascii_case("none") {
        return Ok((
            vec![EmotionAnnotation::unaffected(); characters.len()],
            diagnostics,
        ));
    }
    let entries = extract_entries(text, characters, &mut diagnostics);
    if entries.is_empty() {
        return Err(CodecError::Unparseable {
            what: "an emotion block",
            text: text.to_string(),
        });
    }
    let mut annotations: Vec<Option<EmotionAnnotation>> = vec![None; characters.len()];
    for entry in entries {
        if annotations[entry.character].is_some() {
            diagnostics.warn(
                WarningKind::DuplicateTag,
                Some(entry.span),
                format!(
                    "second emotion for `{}`; keeping the first",
                    characters[entry.character]
                ),
            );
            continue;
        }
        let (annotation, warnings) = parse_emotion_inner(&entry.content)?;
        diagnostics.absorb(warnings, Some(entry.span));
        annotations[entry.character] = Some(annotation);
    }
    let annotations = annotations
        .into_iter()
        .enumerate()
        .map(|(i, a)| match a {
            Some(a) => a,
            None => {
                diagnostics.warn(
                    WarningKind::MissingTag,
                    None,
                    format!(
                        "no emotion tag for `{}`; recorded (false, none)",
                        characters[i]
                    ),
                );
                EmotionAnnotation::unaffected()
            }
        })
        .collect();
    Ok((annotations, diagnostics))
}

/// Parse a gap-prediction reply: one action and one emotion per character.
///
/// Preferred shape is two `Actions:` / `Emotions:` sections of tags. Without
/// headers, tags are classified by content: a parenthesized pair or a bare
/// label reads as an emotion, anything else as an action, and a bare `none`
/// fills both. Missing characters default to no action / unaffected.
pub fn parse_prediction_block(
    text: &str,
    characters: &[String],
) -> Result<(Vec<Annotation>, ParseDiagnostics), CodecError> {
    let mut diagnostics = ParseDiagnostics::default();
    if text.trim().eq_ignore_ascii_case("none") {
        return Ok((
            vec![Annotation::empty(); characters.len()],
            diagnostics,
        ));
    }

    let mut action_section: Option<(usize, usize)> = None;
    let mut emotion_section: Option<(usize, usize)> = None;
    let headers: Vec<(bool, usize)> = SECTION_HEADER_RE
        .captures_iter(text)
        .map(|caps| {
            let word = caps.get(1).expect("group 1").as_str().to_ascii_lowercase();
            (word.starts_with("action"), caps.get(0).expect("group 0").end())
        })
        .collect();
    if headers.iter().any(|(a, _)| *a) && headers.iter().any(|(a, _)| !*a) {
        // Section bounds: from a header to the next header (or end of text).
        let mut bounds: Vec<(bool, usize, usize)> = Vec::new();
        for (i, (is_action, start)) in headers.iter().enumerate() {
            let end = headers
                .get(i + 1)
                .map(|(_, s)| *s)
                .unwrap_or(text.len())
                .min(text.len());
            bounds.push((*is_action, *start, end));
        }
        for (is_action, start, end) in bounds {
            // Trim the trailing header text of the following section.
            let end = text[start..end]
                .rfind('\n')
                .map(|p| start + p)
                .filter(|&p| p > start && headers.iter().any(|(_, s)| *s > end.min(*s)))
                .unwrap_or(end);
            let slot = if is_action {
                &mut action_section
            } else {
                &mut emotion_section
            };
            if slot.is_none() {
                *slot = Some((start, end));
            }
        }
    }

    let mut actions: Vec<Option<ActionRecord>> = vec![None; characters.len()];
    let mut emotions: Vec<Option<EmotionAnnotation>> = vec![None; characters.len()];

    if let (Some((a_start, a_end)), Some((e_start, e_end))) = (action_section, emotion_section) {
        let (action_records, action_diag) =
            parse_action_block(&text[a_start..a_end], characters)?;
        let (emotion_records, emotion_diag) =
            parse_emotion_block(&text[e_start..e_end], characters)?;
        diagnostics.warnings.extend(action_diag.warnings);
        diagnostics.warnings.extend(emotion_diag.warnings);
        diagnostics.recovered |= action_diag.recovered || emotion_diag.recovered;
        let grid = action_records
            .into_iter()
            .zip(emotion_records)
            .map(|(action, emotion)| Annotation::new(action, emotion))
            .collect();
        return Ok((grid, diagnostics));
    }

    // Headerless reply: classify each tag by its content shape.
    let entries = extract_entries(text, characters, &mut diagnostics);
    if entries.is_empty() {
        return Err(CodecError::Unparseable {
            what: "a gap prediction",
            text: text.to_string(),
        });
    }
    for entry in entries {
        let c = entry.character;
        let content = entry.content.trim();
        if content.eq_ignore_ascii_case("none") {
            if actions[c].is_none() {
                actions[c] = Some(ActionRecord::NoAction);
            }
            if emotions[c].is_none() {
                emotions[c] = Some(EmotionAnnotation::unaffected());
            }
            continue;
        }
        let emotionish = content.starts_with('(')
            || (!content.contains(char::is_whitespace) && EmotionLabel::parse(content).is_ok());
        if emotionish {
            if emotions[c].is_some() {
                diagnostics.warn(
                    WarningKind::DuplicateTag,
                    Some(entry.span),
                    format!("second emotion for `{}`; keeping the first", characters[c]),
                );
                continue;
            }
            let (annotation, warnings) = parse_emotion_inner(content)?;
            diagnostics.absorb(warnings, Some(entry.span));
            emotions[c] = Some(annotation);
        } else {
            if actions[c].is_some() {
                diagnostics.warn(
                    WarningKind::DuplicateTag,
                    Some(entry.span),
                    format!("second action for `{}`; keeping the first", characters[c]),
                );
                continue;
            }
            match parse_action_inner(content) {
                Ok((record, warnings)) => {
                    diagnostics.absorb(warnings, Some(entry.span));
                    actions[c] = Some(record);
                }
                Err(e) => {
                    diagnostics.warn(
                        WarningKind::MalformedAction,
                        Some(entry.span),
                        format!("{e}; recorded no action"),
                    );
                    actions[c] = Some(ActionRecord::NoAction);
                }
            }
        }
    }
    let grid = characters
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let action = actions[c].take().unwrap_or_else(|| {
                diagnostics.warn(
                    WarningKind::MissingTag,
                    None,
                    format!("no predicted action for `{name}`; recorded no action"),
                );
                ActionRecord::NoAction
            });
            let emotion = emotions[c].take().unwrap_or_else(|| {
                diagnostics.warn(
                    WarningKind::MissingTag,
                    None,
                    format!("no predicted emotion for `{name}`; recorded (false, none)"),
                );
                EmotionAnnotation::unaffected()
            });
            Annotation::new(action, emotion)
        })
        .collect();
    Ok((grid, diagnostics))
}

/// Extract an index verdict from a model reply shown `n_complete - 1`
/// sentences (so a valid insertion index satisfies `1 < k < n_complete`).
///
/// The phrase `insert before [sentence] k` wins when present (last
/// occurrence, to skip reasoning preambles); otherwise the last standalone
/// integer is taken. `-1` means the story is complete. Anything else out of
/// range is an error, never clamped.
pub fn parse_index_verdict(text: &str, n_complete: usize) -> Result<GapVerdict, CodecError> {
    let normalized = text.replace('\u{2212}', "-");
    let mut value: Option<i64> = None;
    for caps in VERDICT_TEMPLATE_RE.captures_iter(&normalized) {
        if let Ok(k) = caps.get(1).expect("group 1").as_str().parse::<i64>() {
            value = Some(k);
        }
    }
    if value.is_none() {
        let bytes = normalized.as_bytes();
        for m in INTEGER_RE.find_iter(&normalized) {
            let before = m.start().checked_sub(1).map(|i| bytes[i] as char);
            let after = bytes.get(m.end()).map(|&b| b as char);
            if let Some(b) = before {
                if b.is_ascii_alphanumeric() || b == '.' || b == '-' {
                    continue;
                }
            }
            if let Some(a) = after {
                if a.is_ascii_alphanumeric() {
                    continue;
                }
                if a == '.' {
                    if let Some(&next) = bytes.get(m.end() + 1) {
                        if (next as char).is_ascii_digit() {
                            continue;
                        }
                    }
                }
            }
            if let Ok(k) = m.as_str().parse::<i64>() {
                value = Some(k);
            }
        }
    }
    let k = value.ok_or_else(|| CodecError::NoInteger {
        text: text.to_string(),
    })?;
    if k == -1 {
        return Ok(GapVerdict::Complete);
    }
    if k > 1 && (k as u64) < n_complete as u64 {
        Ok(GapVerdict::InsertBefore { k: k as usize })
    } else {
        Err(CodecError::IndexOutOfRange { k, n: n_complete })
    }
}

/// Canonical `<Name>inner</Name>` tag.
fn tag(name: &str, inner: &str) -> String {
    format!("<{name}>{inner}</{name}>")
}

pub fn serialize_action(character: &str, record: &ActionRecord) -> String {
    tag(character, &record.canonical())
}

pub fn serialize_emotion(character: &str, annotation: &EmotionAnnotation) -> String {
    tag(character, &annotation.canonical())
}

/// One action tag per character, newline-separated, in roster order.
pub fn serialize_action_block(characters: &[String], records: &[ActionRecord]) -> String {
    characters
        .iter()
        .zip(records)
        .map(|(c, r)| serialize_action(c, r))
        .collect::<Vec<_>>()
        .join("\n")
}

/// One emotion tag per character, newline-separated, in roster order.
pub fn serialize_emotion_block(characters: &[String], annotations: &[EmotionAnnotation]) -> String {
    characters
        .iter()
        .zip(annotations)
        .map(|(c, a)| serialize_emotion(c, a))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Canonical two-section prediction block.
pub fn serialize_prediction_block(characters: &[String], grid: &[Annotation]) -> String {
    let actions: Vec<ActionRecord> = grid.iter().map(|a| a.action.clone()).collect();
    let emotions: Vec<EmotionAnnotation> = grid.iter().map(|a| a.emotion).collect();
    format!(
        "Actions:\n{}\nEmotions:\n{}",
        serialize_action_block(characters, &actions),
        serialize_emotion_block(characters, &emotions)
    )
}

/// Canonical verdict text: `Insert before sentence [**k**]` or `-1`.
pub fn serialize_verdict(verdict: &GapVerdict) -> String {
    verdict.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn roster(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    fn act(verb: &str, target: Option<&str>, object: Option<&str>) -> ActionRecord {
        ActionRecord::act(verb, target, object).unwrap()
    }

    #[test]
    fn canonical_action_block_parses_cleanly() {
        let chars = roster(&["Gary"]);
        let (records, diag) =
            parse_action_block("<Gary>LookingFor(a new laptop)</Gary>", &chars).unwrap();
        assert!(diag.is_clean());
        assert_eq!(records, vec![act("LookingFor", Some("a new laptop"), None)]);
    }

    #[test]
    fn tag_matching_is_case_and_whitespace_tolerant() {
        let chars = roster(&["Gary"]);
        let (records, diag) =
            parse_action_block("< gary > LookingFor ( a new laptop ) </ GARY >", &chars).unwrap();
        assert!(diag.is_clean(), "warnings: {:?}", diag.warnings);
        assert_eq!(records, vec![act("LookingFor", Some("a new laptop"), None)]);
    }

    #[test]
    fn attributes_and_unknown_tags_are_tolerated() {
        let chars = roster(&["Gary"]);
        let text = "<He>Walked(home)</He>\n<Gary mood=\"low\">Needed(laptop)</Gary>";
        let (records, diag) = parse_action_block(text, &chars).unwrap();
        assert_eq!(records, vec![act("Needed", Some("laptop"), None)]);
        assert!(diag
            .warnings
            .iter()
            .any(|w| w.kind == WarningKind::UnknownTag));
        assert!(!diag.recovered);
    }

    #[test]
    fn multiword_character_names_round_trip() {
        let chars = roster(&["Lucy's mom"]);
        let record = act("Hugged", Some("Lucy"), None);
        let text = serialize_action_block(&chars, std::slice::from_ref(&record));
        assert_eq!(text, "<Lucy's mom>Hugged(Lucy)</Lucy's mom>");
        let (records, diag) = parse_action_block(&text, &chars).unwrap();
        assert!(diag.is_clean());
        assert_eq!(records, vec![record]);
    }

    #[test]
    fn missing_and_duplicate_tags_warn() {
        let chars = roster(&["Gary", "Lucy"]);
        let (records, diag) = parse_action_block("<Gary>Ran(home)</Gary>", &chars).unwrap();
        assert_eq!(records[0], act("Ran", Some("home"), None));
        assert_eq!(records[1], ActionRecord::NoAction);
        assert_eq!(diag.warnings.len(), 1);
        assert_eq!(diag.warnings[0].kind, WarningKind::MissingTag);

        let (records, diag) = parse_action_block(
            "<Gary>Ran(home)</Gary><Gary>Slept</Gary><Lucy>None</Lucy>",
            &chars,
        )
        .unwrap();
        assert_eq!(records[0], act("Ran", Some("home"), None));
        assert_eq!(records[1], ActionRecord::NoAction);
        assert!(diag
            .warnings
            .iter()
            .any(|w| w.kind == WarningKind::DuplicateTag));
    }

    #[test]
    fn fallback_lines_set_recovered() {
        let chars = roster(&["Gary"]);
        let (records, diag) =
            parse_action_block("Gary: LookingFor(a new laptop)", &chars).unwrap();
        assert_eq!(records, vec![act("LookingFor", Some("a new laptop"), None)]);
        assert!(diag.recovered);
        assert!(!diag.warnings.is_empty());
    }

    #[test]
    fn hopeless_text_is_a_hard_error() {
        let chars = roster(&["Gary"]);
        let err = parse_action_block("I cannot help with that.", &chars).unwrap_err();
        match err {
            CodecError::Unparseable { text, .. } => assert!(text.contains("cannot help")),
            other => panic!("expected Unparseable, got {other:?}"),
        }
    }

    #[test]
    fn action_inner_grammar_corners() {
        let (r, w) = parse_action_inner("None").unwrap();
        assert_eq!(r, ActionRecord::NoAction);
        assert!(w.is_empty());
        let (r, _) = parse_action_inner("nOnE").unwrap();
        assert_eq!(r, ActionRecord::NoAction);

        let (r, w) = parse_action_inner("Give(b, an apply)").unwrap();
        assert_eq!(r, act("Give", Some("b"), Some("an apply")));
        assert!(w.is_empty());

        // First top-level comma splits; later commas stay in the object.
        let (r, w) = parse_action_inner("Packed(bag, socks, and shoes)").unwrap();
        assert_eq!(r, act("Packed", Some("bag"), Some("socks, and shoes")));
        assert!(w.is_empty());

        // Nested parentheses in a group are preserved.
        let (r, w) = parse_action_inner("Bought(a laptop (the light one))").unwrap();
        assert_eq!(r, act("Bought", Some("a laptop (the light one)"), None));
        assert!(w.is_empty());

        // Verb-only records.
        let (r, w) = parse_action_inner("Slept").unwrap();
        assert_eq!(r, act("Slept", None, None));
        assert!(w.is_empty());
        let (r, _) = parse_action_inner("Slept()").unwrap();
        assert_eq!(r, act("Slept", None, None));

        // Unbalanced parentheses keep the interior as target, with warning.
        let (r, w) = parse_action_inner("Saw(him").unwrap();
        assert_eq!(r, act("Saw", Some("him"), None));
        assert!(w.iter().any(|w| w.kind == WarningKind::UnbalancedParens));

        // Trailing junk is dropped with a warning.
        let (r, w) = parse_action_inner("Saw(him) obviously").unwrap();
        assert_eq!(r, act("Saw", Some("him"), None));
        assert!(w.iter().any(|w| w.kind == WarningKind::TrailingContent));

        // Irreparable group content degrades to verb-only.
        let (r, w) = parse_action_inner("Kept(a(b)").unwrap();
        assert_eq!(r, act("Kept", None, None));
        assert!(w.iter().any(|w| w.kind == WarningKind::MalformedAction));

        assert!(parse_action_inner("").is_err());
        assert!(parse_action_inner("(just parens)").is_err());
    }

    #[test]
    fn emotion_block_grammar() {
        let chars = roster(&["Gary"]);
        let (e, diag) = parse_emotion_block("<Gary>(true, anticipation)</Gary>", &chars).unwrap();
        assert!(diag.is_clean());
        assert_eq!(e, vec![EmotionAnnotation::affected(EmotionLabel::Anticipation)]);

        let (e, diag) = parse_emotion_block("<Gary>(False,none)</Gary>", &chars).unwrap();
        assert!(diag.is_clean());
        assert_eq!(e, vec![EmotionAnnotation::unaffected()]);

        let (e, _) = parse_emotion_block("<Gary>none</Gary>", &chars).unwrap();
        assert_eq!(e, vec![EmotionAnnotation::unaffected()]);

        let (e, diag) = parse_emotion_block("<Gary>(false, joy)</Gary>", &chars).unwrap();
        assert_eq!(e, vec![EmotionAnnotation::unaffected()]);
        assert!(diag
            .warnings
            .iter()
            .any(|w| w.kind == WarningKind::CoercedEmotion));

        let err = parse_emotion_block("<Gary>(true, elated)</Gary>", &chars).unwrap_err();
        assert!(matches!(err, CodecError::UnknownLabel { token } if token == "elated"));

        let err = parse_emotion_block("<Gary>(maybe, joy)</Gary>", &chars).unwrap_err();
        assert!(matches!(err, CodecError::BadAffected { token } if token == "maybe"));

        let (e, diag) = parse_emotion_block("<Gary>(true, none)</Gary>", &chars).unwrap();
        assert!(diag.is_clean());
        assert_eq!(
            e,
            vec![EmotionAnnotation::new(true, EmotionLabel::None).unwrap()]
        );

        // Bare label: affected flag inferred, flagged.
        let (e, diag) = parse_emotion_block("<Gary>sadness</Gary>", &chars).unwrap();
        assert_eq!(e, vec![EmotionAnnotation::affected(EmotionLabel::Sadness)]);
        assert!(diag
            .warnings
            .iter()
            .any(|w| w.kind == WarningKind::MissingAffected));
    }

    #[test]
    fn verdict_extraction() {
        assert_eq!(
            parse_index_verdict("Insert before sentence [**3**].", 5).unwrap(),
            GapVerdict::InsertBefore { k: 3 }
        );
        assert_eq!(
            parse_index_verdict("-1", 5).unwrap(),
            GapVerdict::Complete
        );
        assert_eq!(
            parse_index_verdict("The story is complete, so: -1", 5).unwrap(),
            GapVerdict::Complete
        );
        assert_eq!(
            parse_index_verdict("Insert before: 2", 5).unwrap(),
            GapVerdict::InsertBefore { k: 2 }
        );
        // Unicode minus.
        assert_eq!(parse_index_verdict("\u{2212}1", 5).unwrap(), GapVerdict::Complete);
        // Last template match wins over reasoning preambles.
        assert_eq!(
            parse_index_verdict(
                "Maybe insert before sentence 2? No. Insert before sentence [**4**]",
                5
            )
            .unwrap(),
            GapVerdict::InsertBefore { k: 4 }
        );
        // The template beats later stray integers.
        assert_eq!(
            parse_index_verdict("Insert before sentence [**3**]. Confidence: 95", 5).unwrap(),
            GapVerdict::InsertBefore { k: 3 }
        );
        // Standalone integer fallback.
        assert_eq!(
            parse_index_verdict("I would say [**3**]", 5).unwrap(),
            GapVerdict::InsertBefore { k: 3 }
        );
        assert_eq!(
            parse_index_verdict("the answer is 4", 5).unwrap(),
            GapVerdict::InsertBefore { k: 4 }
        );
        // Decimals are not verdicts.
        assert!(matches!(
            parse_index_verdict("about 3.5 of them", 5),
            Err(CodecError::NoInteger { .. })
        ));
        // Range checks: 1 and n are never valid, nothing is clamped.
        assert!(matches!(
            parse_index_verdict("Insert before sentence [**1**]", 5),
            Err(CodecError::IndexOutOfRange { k: 1, n: 5 })
        ));
        assert!(matches!(
            parse_index_verdict("Insert before sentence [**5**]", 5),
            Err(CodecError::IndexOutOfRange { k: 5, n: 5 })
        ));
        assert!(matches!(
            parse_index_verdict("-2", 5),
            Err(CodecError::IndexOutOfRange { k: -2, n: 5 })
        ));
        assert!(matches!(
            parse_index_verdict("no idea", 5),
            Err(CodecError::NoInteger { .. })
        ));
    }

    #[test]
    fn prediction_block_with_sections() {
        let chars = roster(&["Gary"]);
        let text = "Actions:\n<Gary>Realized(wrong decision)</Gary>\nEmotions:\n<Gary>(true, sadness)</Gary>";
        let (grid, diag) = parse_prediction_block(text, &chars).unwrap();
        assert!(diag.is_clean(), "warnings: {:?}", diag.warnings);
        assert_eq!(grid[0].action, act("Realized", Some("wrong decision"), None));
        assert_eq!(
            grid[0].emotion,
            EmotionAnnotation::affected(EmotionLabel::Sadness)
        );
        // The canonical serializer emits exactly this shape.
        let round = serialize_prediction_block(&chars, &grid);
        let (grid2, diag2) = parse_prediction_block(&round, &chars).unwrap();
        assert!(diag2.is_clean());
        assert_eq!(grid2, grid);
    }

    #[test]
    fn prediction_block_without_sections() {
        let chars = roster(&["Gary", "Lucy"]);
        let text = "<Gary>Realized(wrong decision)</Gary> <Gary>(true, sadness)</Gary>\n<Lucy>none</Lucy>";
        let (grid, diag) = parse_prediction_block(text, &chars).unwrap();
        assert_eq!(grid[0].action, act("Realized", Some("wrong decision"), None));
        assert_eq!(
            grid[0].emotion,
            EmotionAnnotation::affected(EmotionLabel::Sadness)
        );
        assert_eq!(grid[1].action, ActionRecord::NoAction);
        assert_eq!(grid[1].emotion, EmotionAnnotation::unaffected());
        assert!(!diag.recovered);
    }

    #[test]
    fn prediction_block_bare_none() {
        let chars = roster(&["Gary"]);
        let (grid, diag) = parse_prediction_block("none", &chars).unwrap();
        assert_eq!(grid, vec![Annotation::empty()]);
        assert!(diag.is_clean());
    }

    #[test]
    fn prediction_block_bad_emotion_is_hard_error() {
        let chars = roster(&["Gary"]);
        let text = "Actions:\n<Gary>Ran</Gary>\nEmotions:\n<Gary>(true, wistful)</Gary>";
        assert!(matches!(
            parse_prediction_block(text, &chars),
            Err(CodecError::UnknownLabel { .. })
        ));
    }

    #[test]
    fn strict_parsers_reject_recovered_forms() {
        assert!(parse_action_strict("Saw(him").is_err());
        assert!(parse_action_strict("Saw(him)").is_ok());
        assert!(parse_emotion_strict("joy").is_err());
        assert!(parse_emotion_strict("(true, joy)").is_ok());
        assert!(parse_emotion_strict("(false, joy)").is_err());
    }

    fn name_strategy() -> impl Strategy<Value = String> {
        proptest::string::string_regex("[A-Z][a-z]{1,8}( [A-Z][a-z]{1,6}|'s [a-z]{2,6})?")
            .expect("valid regex")
    }

    fn group_strategy() -> impl Strategy<Value = String> {
        proptest::string::string_regex("[a-zA-Z0-9][a-zA-Z0-9 ']{0,14}")
            .expect("valid regex")
            .prop_map(|s| s.trim().to_string())
            .prop_filter("non-empty", |s| !s.is_empty())
    }

    fn object_strategy() -> impl Strategy<Value = String> {
        proptest::string::string_regex("[a-zA-Z0-9][a-zA-Z0-9 ',]{0,14}[a-zA-Z0-9]")
            .expect("valid regex")
            .prop_map(|s| s.trim().to_string())
            .prop_filter("non-empty", |s| !s.is_empty())
    }

    fn verb_strategy() -> impl Strategy<Value = String> {
        proptest::string::string_regex("[A-Z][a-zA-Z]{0,10}( to)?")
            .expect("valid regex")
            .prop_filter("not the reserved word", |v| !v.eq_ignore_ascii_case("none"))
    }

    fn action_strategy() -> impl Strategy<Value = ActionRecord> {
        prop_oneof![
            1 => Just(ActionRecord::NoAction),
            2 => verb_strategy().prop_map(|v| ActionRecord::act(&v, None, None).unwrap()),
            3 => (verb_strategy(), group_strategy())
                .prop_map(|(v, t)| ActionRecord::act(&v, Some(&t), None).unwrap()),
            3 => (verb_strategy(), group_strategy(), object_strategy())
                .prop_map(|(v, t, o)| ActionRecord::act(&v, Some(&t), Some(&o)).unwrap()),
        ]
    }

    fn emotion_strategy() -> impl Strategy<Value = EmotionAnnotation> {
        prop_oneof![
            1 => Just(EmotionAnnotation::unaffected()),
            1 => Just(EmotionAnnotation::new(true, EmotionLabel::None).unwrap()),
            4 => (0usize..8).prop_map(|i| EmotionAnnotation::affected(EmotionLabel::WHEEL[i])),
        ]
    }

    proptest! {
        #[test]
        fn action_round_trip_is_identity(
            name in name_strategy(),
            record in action_strategy(),
        ) {
            let chars = vec![name];
            let text = serialize_action_block(&chars, std::slice::from_ref(&record));
            let (parsed, diag) = parse_action_block(&text, &chars).unwrap();
            prop_assert!(diag.is_clean(), "warnings: {:?}", diag.warnings);
            prop_assert_eq!(parsed, vec![record]);
        }

        #[test]
        fn emotion_round_trip_is_identity(
            name in name_strategy(),
            annotation in emotion_strategy(),
        ) {
            let chars = vec![name];
            let text = serialize_emotion_block(&chars, &[annotation]);
            let (parsed, diag) = parse_emotion_block(&text, &chars).unwrap();
            prop_assert!(diag.is_clean(), "warnings: {:?}", diag.warnings);
            prop_assert_eq!(parsed, vec![annotation]);
        }

        #[test]
        fn verdict_round_trip_is_identity(k in 2usize..20) {
            let n = k + 1 + (k % 3);
            let v = GapVerdict::InsertBefore { k };
            prop_assert_eq!(parse_index_verdict(&serialize_verdict(&v), n).unwrap(), v);
            let c = GapVerdict::Complete;
            prop_assert_eq!(parse_index_verdict(&serialize_verdict(&c), n).unwrap(), c);
        }
    }
}
