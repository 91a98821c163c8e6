//! Affect-lexicon deviation: how far a generated sentence drifts from a
//! reference along valence/arousal/dominance, age of acquisition and
//! concreteness.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::overlap::tokenize;

#[derive(Debug, Error)]
pub enum VadError {
    #[error("lexicon `{path}` is empty")]
    Empty { path: String },
    #[error(
        "lexicon `{path}` is missing its header; expected \
         `word\tV\tA\tD\tAoA\tCon` on the first line"
    )]
    MissingHeader { path: String },
    #[error("lexicon `{path}` line {line}: {reason}")]
    BadLine {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("lexicon `{path}` line {line}: duplicate word `{word}`")]
    DuplicateWord {
        path: String,
        line: usize,
        word: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-word affect norms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VadEntry {
    pub valence: f64,
    pub arousal: f64,
    pub dominance: f64,
    pub age_of_acquisition: f64,
    pub concreteness: f64,
}

/// Word-keyed affect norms, loaded from a tab-separated file with the header
/// `word	V	A	D	AoA	Con`. Lookup is case-insensitive.
#[derive(Debug, Clone, Default)]
pub struct VadLexicon {
    entries: BTreeMap<String, VadEntry>,
}

impl VadLexicon {
    pub fn from_entries(entries: impl IntoIterator<Item = (String, VadEntry)>) -> Self {
        VadLexicon {
            entries: entries
                .into_iter()
                .map(|(w, e)| (w.to_lowercase(), e))
                .collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, VadError> {
        let display = path.display().to_string();
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines().enumerate();
        let header = loop {
            match lines.next() {
                Some((_, line)) if line.trim().is_empty() => continue,
                Some((_, line)) => break line,
                None => return Err(VadError::Empty { path: display }),
            }
        };
        let header_fields: Vec<&str> = header.split('\t').map(str::trim).collect();
        let expected = ["word", "V", "A", "D", "AoA", "Con"];
        if header_fields.len() != expected.len()
            || !header_fields
                .iter()
                .zip(expected)
                .all(|(got, want)| got.eq_ignore_ascii_case(want))
        {
            return Err(VadError::MissingHeader { path: display });
        }
        let mut entries = BTreeMap::new();
        for (lineno, line) in lines {
            let lineno = lineno + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            if fields.len() != 6 {
                return Err(VadError::BadLine {
                    path: display,
                    line: lineno,
                    reason: format!("expected 6 tab-separated fields, found {}", fields.len()),
                });
            }
            let word = fields[0].to_lowercase();
            if word.is_empty() {
                return Err(VadError::BadLine {
                    path: display,
                    line: lineno,
                    reason: "empty word".into(),
                });
            }
            let mut values = [0.0f64; 5];
            for (slot, raw) in values.iter_mut().zip(&fields[1..]) {
                *slot = raw.parse::<f64>().map_err(|e| VadError::BadLine {
                    path: display.clone(),
                    line: lineno,
                    reason: format!("`{raw}` is not a number: {e}"),
                })?;
                if !slot.is_finite() {
                    return Err(VadError::BadLine {
                        path: display,
                        line: lineno,
                        reason: format!("`{raw}` is not finite"),
                    });
                }
            }
            let entry = VadEntry {
                valence: values[0],
                arousal: values[1],
                dominance: values[2],
                age_of_acquisition: values[3],
                concreteness: values[4],
            };
            if entries.insert(word.clone(), entry).is_some() {
                return Err(VadError::DuplicateWord {
                    path: display,
                    line: lineno,
                    word,
                });
            }
        }
        if entries.is_empty() {
            return Err(VadError::Empty { path: display });
        }
        Ok(VadLexicon { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&VadEntry> {
        self.entries.get(&word.to_lowercase())
    }

    /// Mean norms over the sentence tokens found in the lexicon; `None` when
    /// no token matches.
    pub fn sentence_profile(&self, sentence: &str) -> Option<VadEntry> {
        let mut sums = [0.0f64; 5];
        let mut hits = 0usize;
        for token in tokenize(sentence) {
            if let Some(entry) = self.entries.get(&token) {
                sums[0] += entry.valence;
                sums[1] += entry.arousal;
                sums[2] += entry.dominance;
                sums[3] += entry.age_of_acquisition;
                sums[4] += entry.concreteness;
                hits += 1;
            }
        }
        if hits == 0 {
            return None;
        }
        let n = hits as f64;
        Some(VadEntry {
            valence: sums[0] / n,
            arousal: sums[1] / n,
            dominance: sums[2] / n,
            age_of_acquisition: sums[3] / n,
            concreteness: sums[4] / n,
        })
    }
}

/// Absolute per-dimension gap between a candidate and a reference sentence.
/// `mean` averages the valence, arousal and dominance deviations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct VadDeviation {
    pub valence: f64,
    pub arousal: f64,
    pub dominance: f64,
    pub mean: f64,
    pub age_of_acquisition: f64,
    pub concreteness: f64,
}

/// Deviation between two sentences, or `None` when either side has no
/// lexicon hits (such pairs are excluded from corpus averages rather than
/// scored as zero).
pub fn vad_deviation(
    candidate: &str,
    reference: &str,
    lexicon: &VadLexicon,
) -> Option<VadDeviation> {
    let cand = lexicon.sentence_profile(candidate)?;
    let refr = lexicon.sentence_profile(reference)?;
    let valence = (cand.valence - refr.valence).abs();
    let arousal = (cand.arousal - refr.arousal).abs();
    let dominance = (cand.dominance - refr.dominance).abs();
    Some(VadDeviation {
        valence,
        arousal,
        dominance,
        mean: (valence + arousal + dominance) / 3.0,
        age_of_acquisition: (cand.age_of_acquisition - refr.age_of_acquisition).abs(),
        concreteness: (cand.concreteness - refr.concreteness).abs(),
    })
}

/// Corpus average of per-pair deviations. `scored` pairs contributed;
/// `missing` pairs had no lexicon coverage on at least one side.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VadSummary {
    pub deviation: VadDeviation,
    pub scored: usize,
    pub missing: usize,
}

impl VadSummary {
    pub fn collect(deviations: impl IntoIterator<Item = Option<VadDeviation>>) -> Self {
        let mut sum = VadDeviation::default();
        let mut scored = 0usize;
        let mut missing = 0usize;
        for d in deviations {
            match d {
                Some(d) => {
                    sum.valence += d.valence;
                    sum.arousal += d.arousal;
                    sum.dominance += d.dominance;
                    sum.mean += d.mean;
                    sum.age_of_acquisition += d.age_of_acquisition;
                    sum.concreteness += d.concreteness;
                    scored += 1;
                }
                None => missing += 1,
            }
        }
        if scored > 0 {
            let n = scored as f64;
            sum.valence /= n;
            sum.arousal /= n;
            sum.dominance /= n;
            sum.mean /= n;
            sum.age_of_acquisition /= n;
            sum.concreteness /= n;
        }
        VadSummary {
            deviation: sum,
            scored,
            missing,
        }
    }
}
