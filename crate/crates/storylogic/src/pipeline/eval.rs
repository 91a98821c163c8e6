//! Scoring pipeline results against gold gap records.
//!
//! Gold and result files are joined strictly by story id: any id on one
//! side without a partner on the other is an error, never a silent drop.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::runner::RoundTripResult;
use super::PipelineResult;
use crate::codec::GapVerdict;
use crate::gaps::{GapError, GapRecord};
use crate::metrics::{
    bleu, bleu_corpus, rouge, vad_deviation, verdict_report, ConfusionTally, EmotionReport,
    GenerationReport, MetricsReport, Prf, RougeKind, RoundTripReport, VadLexicon, VadReport,
    VadSummary,
};
use crate::story::EmotionLabel;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(
        "gold records and results do not line up: [{}] have no result, [{}] have no gold record",
        missing.join(", "),
        unknown.join(", ")
    )]
    Orphans { missing: Vec<String>, unknown: Vec<String> },
    #[error("duplicate id {0} in the gold records")]
    DuplicateGold(String),
    #[error("story {id}: result annotations do not match the gold story shape")]
    Shape { id: String },
    #[error(transparent)]
    Gap(#[from] GapError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalOptions {
    /// Score generated sentences only where the verdict matched gold.
    pub correct_index_only: bool,
}

/// Join gold records with results by id, preserving gold order.
pub fn pair_results<'a>(
    gold: &'a [GapRecord],
    results: &'a [PipelineResult],
) -> Result<Vec<(&'a GapRecord, &'a PipelineResult)>, EvalError> {
    let mut seen = BTreeSet::new();
    for record in gold {
        if !seen.insert(record.id.as_str()) {
            return Err(EvalError::DuplicateGold(record.id.clone()));
        }
    }
    let by_id: BTreeMap<&str, &PipelineResult> =
        results.iter().map(|r| (r.id.as_str(), r)).collect();
    let missing: Vec<String> = gold
        .iter()
        .filter(|g| !by_id.contains_key(g.id.as_str()))
        .map(|g| g.id.clone())
        .collect();
    let unknown: Vec<String> = results
        .iter()
        .filter(|r| !seen.contains(r.id.as_str()))
        .map(|r| r.id.clone())
        .collect();
    if !missing.is_empty() || !unknown.is_empty() {
        return Err(EvalError::Orphans { missing, unknown });
    }
    Ok(gold.iter().map(|g| (g, by_id[g.id.as_str()])).collect())
}

/// Build the full metrics report. Sections appear only when the data feeds
/// them: verdicts always (given any pair), emotions when gold carries
/// per-sentence labels, generation when both sides have a sentence, lexicon
/// deviations when a lexicon is supplied.
pub fn build_report(
    gold: &[GapRecord],
    results: &[PipelineResult],
    lexicon: Option<&VadLexicon>,
    options: EvalOptions,
    meta: BTreeMap<String, String>,
) -> Result<MetricsReport, EvalError> {
    let pairs = pair_results(gold, results)?;
    let degraded = pairs.iter().filter(|(_, r)| r.degraded()).count();
    let mut report = MetricsReport::new(meta, pairs.len(), degraded);

    let verdict_pairs: Vec<(GapVerdict, Option<GapVerdict>)> = pairs
        .iter()
        .map(|(g, r)| Ok((g.gold_verdict()?, r.verdict_as_gap())))
        .collect::<Result<_, GapError>>()?;
    if !verdict_pairs.is_empty() {
        report.verdict = Some(verdict_report(&verdict_pairs));
    }

    report.emotion = emotion_section(&pairs)?;

    let mut generation_pairs: Vec<(&str, &str)> = Vec::new();
    for (g, r) in &pairs {
        let Some(reference) = g.gold_sentence.as_deref().filter(|s| !s.trim().is_empty())
        else {
            continue;
        };
        let Some(candidate) = r.generated_sentence.as_deref() else { continue };
        if options.correct_index_only && r.verdict_as_gap() != Some(g.gold_verdict()?) {
            continue;
        }
        generation_pairs.push((candidate, reference));
    }
    if !generation_pairs.is_empty() {
        report.generation = Some(generation_section(&generation_pairs));
        if let Some(lexicon) = lexicon {
            let summary = VadSummary::collect(
                generation_pairs
                    .iter()
                    .map(|(candidate, reference)| vad_deviation(candidate, reference, lexicon)),
            );
            report.vad = Some(VadReport { summary });
        }
    }

    Ok(report)
}

/// Per-cell comparison of predicted emotion labels against gold labels over
/// the gapped story, for pairs whose gold record carries them.
fn emotion_section(
    pairs: &[(&GapRecord, &PipelineResult)],
) -> Result<Option<EmotionReport>, EvalError> {
    let mut tally = ConfusionTally::new();
    let mut cells = 0usize;
    for (g, r) in pairs {
        let Some(labels) = &g.story_emotions else { continue };
        let shape_ok = labels.len() == r.annotations.len()
            && labels
                .iter()
                .zip(&r.annotations)
                .all(|(gold_row, result_row)| gold_row.len() == result_row.len());
        if !shape_ok {
            return Err(EvalError::Shape { id: g.id.clone() });
        }
        for (gold_row, result_row) in labels.iter().zip(&r.annotations) {
            for (gold_label, annotation) in gold_row.iter().zip(result_row) {
                tally.record(gold_label.as_str(), annotation.emotion.emotion().as_str());
                cells += 1;
            }
        }
    }
    if cells == 0 {
        return Ok(None);
    }
    let per_label = tally.per_class();
    let support = per_label
        .keys()
        .map(|label| (label.clone(), tally.support(label)))
        .collect();
    let none_class = BTreeSet::from([EmotionLabel::None.as_str().to_string()]);
    Ok(Some(EmotionReport {
        per_label,
        support,
        micro_excluding_none: tally.micro(&none_class),
        micro_including_none: tally.micro(&BTreeSet::new()),
        pairs: cells,
    }))
}

/// Score reconstructions against the originals they were rebuilt from. A
/// missing reconstruction scores as an empty candidate: it zeroes into the
/// sentence averages and ROUGE mean and is counted by `degraded`, though
/// corpus-pooled BLEU by definition skips token-less candidates.
pub fn build_round_trip_report(
    round_trips: &[RoundTripResult],
    meta: BTreeMap<String, String>,
) -> RoundTripReport {
    let pairs: Vec<(&str, &str)> = round_trips
        .iter()
        .map(|r| (r.reconstruction.as_deref().unwrap_or(""), r.original.as_str()))
        .collect();
    let degraded =
        round_trips.iter().filter(|r| r.degraded() || r.reconstruction.is_none()).count();
    let mut report = RoundTripReport {
        schema_version: crate::metrics::SCHEMA_VERSION,
        meta,
        tokenizer: crate::metrics::TOKENIZER_VERSION.to_string(),
        pairs: pairs.len(),
        degraded,
        ..RoundTripReport::default()
    };
    if pairs.is_empty() {
        return report;
    }
    let corpus: Vec<(&str, Vec<&str>)> = pairs.iter().map(|(c, r)| (*c, vec![*r])).collect();
    let sentence_avg = |n: usize| -> f64 {
        pairs.iter().map(|(c, r)| bleu(c, &[*r], n)).sum::<f64>() / pairs.len() as f64
    };
    report.bleu1_corpus = bleu_corpus(&corpus, 1);
    report.bleu2_corpus = bleu_corpus(&corpus, 2);
    report.bleu1_sentence_avg = sentence_avg(1);
    report.bleu2_sentence_avg = sentence_avg(2);
    report.rouge_l = mean_rouge(&pairs, RougeKind::RougeL);
    report
}

fn mean_rouge(pairs: &[(&str, &str)], kind: RougeKind) -> Prf {
    let n = pairs.len() as f64;
    let mut sum = Prf::default();
    for (candidate, reference) in pairs {
        let score = rouge(candidate, reference, kind);
        sum.precision += score.precision;
        sum.recall += score.recall;
        sum.f1 += score.f1;
    }
    Prf { precision: sum.precision / n, recall: sum.recall / n, f1: sum.f1 / n }
}

fn generation_section(pairs: &[(&str, &str)]) -> GenerationReport {
    let corpus: Vec<(&str, Vec<&str>)> =
        pairs.iter().map(|(c, r)| (*c, vec![*r])).collect();
    let sentence_avg = |n: usize| -> f64 {
        pairs.iter().map(|(c, r)| bleu(c, &[*r], n)).sum::<f64>() / pairs.len() as f64
    };
    GenerationReport {
        pairs: pairs.len(),
        bleu1_corpus: bleu_corpus(&corpus, 1),
        bleu2_corpus: bleu_corpus(&corpus, 2),
        bleu4_corpus: bleu_corpus(&corpus, 4),
        bleu1_sentence_avg: sentence_avg(1),
        bleu2_sentence_avg: sentence_avg(2),
        bleu4_sentence_avg: sentence_avg(4),
        rouge1: mean_rouge(pairs, RougeKind::Rouge1),
        rouge2: mean_rouge(pairs, RougeKind::Rouge2),
        rouge_l: mean_rouge(pairs, RougeKind::RougeL),
    }
}
