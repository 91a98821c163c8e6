//! Aggregated evaluation reports and their plain-text table rendering.
//!
//! The JSON form (serde) is the source of truth; the text tables exist for
//! terminals. All rendering is deterministic: maps are ordered, floats are
//! formatted with fixed precision, and no timestamps appear.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::confusion::{Prf, VerdictReport};
use super::vad::VadSummary;

pub const SCHEMA_VERSION: u32 = 1;

/// Emotion-label classification scores.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EmotionReport {
    pub per_label: BTreeMap<String, Prf>,
    pub support: BTreeMap<String, u64>,
    /// Pooled over the eight ring labels only.
    pub micro_excluding_none: Prf,
    /// Pooled over all nine labels.
    pub micro_including_none: Prf,
    /// (sentence, character) cells scored.
    pub pairs: usize,
}

/// Sentence-generation overlap scores. BLEU is reported both corpus-pooled
/// and as a mean of sentence scores; ROUGE is a mean of per-sentence F1
/// triples.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub pairs: usize,
    pub bleu1_corpus: f64,
    pub bleu2_corpus: f64,
    pub bleu4_corpus: f64,
    pub bleu1_sentence_avg: f64,
    pub bleu2_sentence_avg: f64,
    pub bleu4_sentence_avg: f64,
    /// Mean per-sentence (precision, recall, F1), in [0, 1].
    pub rouge1: Prf,
    pub rouge2: Prf,
    pub rouge_l: Prf,
}

/// Affect-lexicon deviation scores.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VadReport {
    pub summary: VadSummary,
}

/// Reconstruction fidelity for the text-to-actions-to-text round trip.
/// Missing reconstructions score as empty candidates rather than being
/// dropped, so `pairs` always counts every attempted sentence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundTripReport {
    pub schema_version: u32,
    pub meta: BTreeMap<String, String>,
    pub tokenizer: String,
    pub pairs: usize,
    /// Round trips with a failed stage or no reconstruction.
    pub degraded: usize,
    pub bleu1_corpus: f64,
    pub bleu2_corpus: f64,
    pub bleu1_sentence_avg: f64,
    pub bleu2_sentence_avg: f64,
    /// Mean per-sentence (precision, recall, F1), in [0, 1].
    pub rouge_l: Prf,
}

/// Everything one evaluation run produced. Sections are present only when
/// their inputs were available.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    /// Run metadata (backend, model, mode flags, seed) as ordered strings.
    pub meta: BTreeMap<String, String>,
    pub tokenizer: String,
    pub stories: usize,
    /// Stories with at least one failed stage.
    pub degraded: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emotion: Option<EmotionReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<VerdictReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generation: Option<GenerationReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vad: Option<VadReport>,
}

impl MetricsReport {
    pub fn new(meta: BTreeMap<String, String>, stories: usize, degraded: usize) -> Self {
        MetricsReport {
            schema_version: SCHEMA_VERSION,
            meta,
            tokenizer: super::overlap::TOKENIZER_VERSION.to_string(),
            stories,
            degraded,
            emotion: None,
            verdict: None,
            generation: None,
            vad: None,
        }
    }

    /// Every populated section rendered as text tables.
    pub fn render_text(&self, label: &str) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "stories: {}  degraded: {}  tokenizer: {}\n",
            self.stories, self.degraded, self.tokenizer
        ));
        for (key, value) in &self.meta {
            out.push_str(&format!("{key}: {value}\n"));
        }
        if let Some(v) = &self.verdict {
            out.push('\n');
            out.push_str(&render_verdict_table(label, v));
        }
        if let Some(e) = &self.emotion {
            out.push('\n');
            out.push_str(&render_emotion_table(e));
        }
        if let Some(g) = &self.generation {
            out.push('\n');
            out.push_str(&render_generation_table(label, g));
        }
        if let Some(v) = &self.vad {
            out.push('\n');
            out.push_str(&render_vad_table(label, v));
        }
        out
    }
}

fn pct(x: f64) -> String {
    format!("{:.2}", x * 100.0)
}

fn raw4(x: f64) -> String {
    format!("{x:.4}")
}

/// Column-aligned table: each column as wide as its widest cell, cells
/// separated by two spaces.
fn align(rows: &[Vec<String>]) -> String {
    let columns = rows.iter().map(Vec::len).max().unwrap_or(0);
    let mut widths = vec![0usize; columns];
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let mut out = String::new();
    for row in rows {
        let mut line = String::new();
        for (i, cell) in row.iter().enumerate() {
            if i > 0 {
                line.push_str("  ");
            }
            line.push_str(&format!("{cell:<width$}", width = widths[i]));
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

/// Wide per-index verdict table: one column group (P, R, F1) per class plus
/// a pooled micro average, values scaled by 100.
pub fn render_verdict_table(label: &str, report: &VerdictReport) -> String {
    let mut group_header = vec![String::new()];
    let mut column_header = vec!["model".to_string()];
    let mut row = vec![label.to_string()];
    for (class, prf) in &report.per_class {
        let name = if *class == -1 {
            "k=-1".to_string()
        } else {
            format!("k={class}")
        };
        group_header.extend([name, String::new(), String::new()]);
        column_header.extend(["P".into(), "R".into(), "F1".into()]);
        row.extend([pct(prf.precision), pct(prf.recall), pct(prf.f1)]);
    }
    group_header.extend(["Avg".to_string(), String::new(), String::new()]);
    column_header.extend(["P".into(), "R".into(), "F1".into()]);
    row.extend([
        pct(report.micro.precision),
        pct(report.micro.recall),
        pct(report.micro.f1),
    ]);
    let mut out = String::from("verdict scores (x100; Avg = pooled micro)\n");
    out.push_str(&align(&[group_header, column_header, row]));
    out.push_str(&format!(
        "macro avg: P={} R={} F1={}  pairs: {}  unusable predictions: {}\n",
        pct(report.macro_avg.precision),
        pct(report.macro_avg.recall),
        pct(report.macro_avg.f1),
        report.pairs,
        report.skipped
    ));
    let support: Vec<String> = report
        .support
        .iter()
        .map(|(class, n)| format!("k={class}: {n}"))
        .collect();
    out.push_str(&format!("support: {}\n", support.join(", ")));
    out
}

/// Per-label emotion table plus both micro rows, values scaled by 100.
pub fn render_emotion_table(report: &EmotionReport) -> String {
    let mut rows = vec![vec![
        "label".to_string(),
        "P".into(),
        "R".into(),
        "F1".into(),
        "support".into(),
    ]];
    for (labelname, prf) in &report.per_label {
        rows.push(vec![
            labelname.clone(),
            pct(prf.precision),
            pct(prf.recall),
            pct(prf.f1),
            report.support.get(labelname).copied().unwrap_or(0).to_string(),
        ]);
    }
    rows.push(vec![
        "micro (none excluded)".to_string(),
        pct(report.micro_excluding_none.precision),
        pct(report.micro_excluding_none.recall),
        pct(report.micro_excluding_none.f1),
        String::new(),
    ]);
    rows.push(vec![
        "micro (none included)".to_string(),
        pct(report.micro_including_none.precision),
        pct(report.micro_including_none.recall),
        pct(report.micro_including_none.f1),
        String::new(),
    ]);
    let mut out = String::from("emotion classification (x100)\n");
    out.push_str(&align(&rows));
    out.push_str(&format!("cells scored: {}\n", report.pairs));
    out
}

/// BLEU / ROUGE table, values scaled by 100. The headline BLEU numbers are
/// corpus-pooled; sentence-averaged values follow as a footnote.
pub fn render_generation_table(label: &str, report: &GenerationReport) -> String {
    let rows = vec![
        vec![
            "model".to_string(),
            "BLEU-1".into(),
            "BLEU-2".into(),
            "BLEU-4".into(),
            "ROUGE-1".into(),
            "ROUGE-2".into(),
            "ROUGE-L".into(),
        ],
        vec![
            label.to_string(),
            format!("{:.2}", report.bleu1_corpus),
            format!("{:.2}", report.bleu2_corpus),
            format!("{:.2}", report.bleu4_corpus),
            pct(report.rouge1.f1),
            pct(report.rouge2.f1),
            pct(report.rouge_l.f1),
        ],
    ];
    let mut out = String::from("generation overlap (BLEU corpus-pooled; ROUGE mean F1; x100)\n");
    out.push_str(&align(&rows));
    out.push_str(&format!(
        "sentence-averaged BLEU: {:.2} / {:.2} / {:.2}  pairs: {}\n",
        report.bleu1_sentence_avg, report.bleu2_sentence_avg, report.bleu4_sentence_avg,
        report.pairs
    ));
    out
}

/// Round-trip reconstruction table, values scaled by 100.
pub fn render_round_trip_table(label: &str, report: &RoundTripReport) -> String {
    let rows = vec![
        vec![
            "model".to_string(),
            "BLEU-1".into(),
            "BLEU-2".into(),
            "ROUGE-L".into(),
        ],
        vec![
            label.to_string(),
            format!("{:.2}", report.bleu1_corpus),
            format!("{:.2}", report.bleu2_corpus),
            pct(report.rouge_l.f1),
        ],
    ];
    let mut out = String::new();
    out.push_str(&format!(
        "round-trip reconstruction (tokenizer: {}; BLEU corpus-pooled; ROUGE-L mean F1; x100)\n",
        report.tokenizer
    ));
    for (key, value) in &report.meta {
        out.push_str(&format!("{key}: {value}\n"));
    }
    out.push_str(&align(&rows));
    out.push_str(&format!(
        "sentence-averaged BLEU: {:.2} / {:.2}  pairs: {}  degraded: {}\n",
        report.bleu1_sentence_avg, report.bleu2_sentence_avg, report.pairs, report.degraded
    ));
    out
}

/// Affect deviation table in raw units (lower is better).
pub fn render_vad_table(label: &str, report: &VadReport) -> String {
    let d = &report.summary.deviation;
    let rows = vec![
        vec![
            "model".to_string(),
            "V".into(),
            "A".into(),
            "D".into(),
            "MEAN".into(),
            "AoA".into(),
            "Con".into(),
        ],
        vec![
            label.to_string(),
            raw4(d.valence),
            raw4(d.arousal),
            raw4(d.dominance),
            raw4(d.mean),
            raw4(d.age_of_acquisition),
            raw4(d.concreteness),
        ],
    ];
    let mut out = String::from("affect deviation from gold (lower is better)\n");
    out.push_str(&align(&rows));
    out.push_str(&format!(
        "pairs scored: {}  without lexicon coverage: {}\n",
        report.summary.scored, report.summary.missing
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::GapVerdict;
    use crate::metrics::confusion::verdict_report;

    #[test]
    fn verdict_table_lists_classes_in_order() {
        use GapVerdict::*;
        let pairs = vec![
            (Complete, Some(Complete)),
            (InsertBefore { k: 2 }, Some(InsertBefore { k: 3 })),
            (InsertBefore { k: 3 }, Some(InsertBefore { k: 3 })),
        ];
        let report = verdict_report(&pairs);
        let text = render_verdict_table("demo", &report);
        let header = text.lines().nth(1).unwrap();
        let k_minus1 = header.find("k=-1").unwrap();
        let k2 = header.find("k=2").unwrap();
        let k3 = header.find("k=3").unwrap();
        let avg = header.find("Avg").unwrap();
        assert!(k_minus1 < k2 && k2 < k3 && k3 < avg, "{text}");
        assert!(text.contains("support: k=-1: 1, k=2: 1, k=3: 1"));
    }

    #[test]
    fn report_json_is_deterministic_and_round_trips() {
        let mut meta = BTreeMap::new();
        meta.insert("backend".to_string(), "mock:demo".to_string());
        let mut report = MetricsReport::new(meta, 3, 0);
        report.generation = Some(GenerationReport {
            pairs: 3,
            bleu1_corpus: 42.0,
            ..GenerationReport::default()
        });
        let a = serde_json::to_string_pretty(&report).unwrap();
        let b = serde_json::to_string_pretty(&report).unwrap();
        assert_eq!(a, b);
        let back: MetricsReport = serde_json::from_str(&a).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn rendered_text_never_has_trailing_space() {
        let mut report = MetricsReport::new(BTreeMap::new(), 1, 0);
        report.vad = Some(VadReport::default());
        let text = report.render_text("demo");
        for line in text.lines() {
            assert_eq!(line, line.trim_end(), "trailing space in {line:?}");
        }
    }

    #[test]
    fn round_trip_table_has_exactly_the_three_overlap_columns() {
        let report = RoundTripReport {
            schema_version: SCHEMA_VERSION,
            tokenizer: "t".to_string(),
            pairs: 4,
            degraded: 1,
            bleu1_corpus: 61.25,
            bleu2_corpus: 40.0,
            bleu1_sentence_avg: 60.0,
            bleu2_sentence_avg: 41.0,
            rouge_l: Prf { precision: 0.6, recall: 0.7, f1: 0.65 },
            ..RoundTripReport::default()
        };
        let text = render_round_trip_table("demo", &report);
        let header = text.lines().find(|l| l.starts_with("model")).unwrap();
        assert_eq!(
            header.split_whitespace().collect::<Vec<_>>(),
            ["model", "BLEU-1", "BLEU-2", "ROUGE-L"]
        );
        assert!(text.contains("61.25"));
        assert!(text.contains("65.00"), "ROUGE-L F1 is scaled by 100: {text}");
        assert!(text.contains("pairs: 4  degraded: 1"));
    }
}
