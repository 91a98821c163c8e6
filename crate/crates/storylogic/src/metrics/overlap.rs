//! Textual overlap metrics: BLEU and ROUGE on a fixed, versioned tokenizer.

use std::collections::BTreeMap;

/// Tokenization rule identifier, recorded in reports so scores stay
/// comparable across runs. `ws-punct-1`: lower-case, pad every ASCII
/// punctuation character with spaces, split on Unicode whitespace.
pub const TOKENIZER_VERSION: &str = "ws-punct-1";

/// Additive smoothing applied to a zero n-gram precision.
const EPSILON: f64 = 1e-9;

pub fn tokenize(text: &str) -> Vec<String> {
    let mut padded = String::with_capacity(text.len() + 8);
    for ch in text.chars() {
        if ch.is_ascii_punctuation() {
            padded.push(' ');
            padded.push(ch);
            padded.push(' ');
        } else {
            padded.push(ch);
        }
    }
    padded
        .split_whitespace()
        .map(|t| t.to_lowercase())
        .collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<&[String], u64> {
    let mut counts: BTreeMap<&[String], u64> = BTreeMap::new();
    if tokens.len() >= n && n > 0 {
        for window in tokens.windows(n) {
            *counts.entry(window).or_insert(0) += 1;
        }
    }
    counts
}

struct BleuCounts {
    /// Per order n: (clipped matches, candidate n-gram total).
    per_order: Vec<(u64, u64)>,
    candidate_len: u64,
    reference_len: u64,
}

/// Closest reference length to `c`; ties go to the shorter reference.
fn effective_reference_length(c: usize, references: &[Vec<String>]) -> usize {
    references
        .iter()
        .map(|r| r.len())
        .min_by_key(|&r| (r.abs_diff(c), r))
        .unwrap_or(0)
}

fn bleu_counts(candidate: &[String], references: &[Vec<String>], max_n: usize) -> BleuCounts {
    let mut per_order = Vec::with_capacity(max_n);
    for n in 1..=max_n {
        let cand_counts = ngram_counts(candidate, n);
        let total: u64 = cand_counts.values().sum();
        let mut clipped = 0u64;
        for (gram, &count) in &cand_counts {
            let max_ref = references
                .iter()
                .map(|r| ngram_counts(r, n).get(gram).copied().unwrap_or(0))
                .max()
                .unwrap_or(0);
            clipped += count.min(max_ref);
        }
        per_order.push((clipped, total));
    }
    BleuCounts {
        per_order,
        candidate_len: candidate.len() as u64,
        reference_len: effective_reference_length(candidate.len(), references) as u64,
    }
}

fn bleu_from_counts(counts: &BleuCounts, max_n: usize) -> f64 {
    if counts.candidate_len == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for &(clipped, total) in &counts.per_order {
        let p = if clipped == 0 || total == 0 {
            EPSILON
        } else {
            clipped as f64 / total as f64
        };
        log_sum += p.ln();
    }
    let geo_mean = (log_sum / max_n as f64).exp();
    let c = counts.candidate_len as f64;
    let r = counts.reference_len as f64;
    let brevity = if counts.candidate_len > counts.reference_len {
        1.0
    } else {
        (1.0 - r / c).exp()
    };
    100.0 * brevity * geo_mean
}

/// Sentence-level BLEU in [0, 100] with clipped modified n-gram precision,
/// `1e-9` smoothing on zero counts, and the standard brevity penalty
/// (applied only when the candidate is shorter than the closest reference).
/// An empty candidate scores 0 and logs a warning.
pub fn bleu(candidate: &str, references: &[&str], max_n: usize) -> f64 {
    assert!(
        matches!(max_n, 1 | 2 | 4),
        "supported BLEU orders are 1, 2 and 4"
    );
    let cand = tokenize(candidate);
    if cand.is_empty() {
        log::warn!("BLEU candidate has no tokens; scoring 0");
        return 0.0;
    }
    let refs: Vec<Vec<String>> = references.iter().map(|r| tokenize(r)).collect();
    bleu_from_counts(&bleu_counts(&cand, &refs, max_n), max_n)
}

/// Corpus-level BLEU: n-gram matches and lengths are pooled over all pairs
/// before the precision, geometric mean and brevity penalty are taken.
pub fn bleu_corpus(pairs: &[(&str, Vec<&str>)], max_n: usize) -> f64 {
    assert!(
        matches!(max_n, 1 | 2 | 4),
        "supported BLEU orders are 1, 2 and 4"
    );
    let mut pooled = BleuCounts {
        per_order: vec![(0, 0); max_n],
        candidate_len: 0,
        reference_len: 0,
    };
    for (candidate, references) in pairs {
        let cand = tokenize(candidate);
        if cand.is_empty() {
            log::warn!("BLEU candidate has no tokens; it contributes nothing");
            continue;
        }
        let refs: Vec<Vec<String>> = references.iter().map(|r| tokenize(r)).collect();
        let counts = bleu_counts(&cand, &refs, max_n);
        for (slot, (clipped, total)) in pooled.per_order.iter_mut().zip(&counts.per_order) {
            slot.0 += clipped;
            slot.1 += total;
        }
        pooled.candidate_len += counts.candidate_len;
        pooled.reference_len += counts.reference_len;
    }
    if pooled.candidate_len == 0 {
        return 0.0;
    }
    bleu_from_counts(&pooled, max_n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RougeKind {
    Rouge1,
    Rouge2,
    RougeL,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn lcs_length(a: &[String], b: &[String]) -> usize {
    // One-row dynamic programming table.
    let mut row = vec![0usize; b.len() + 1];
    for ai in a {
        let mut prev_diag = 0usize;
        for (j, bj) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if ai == bj {
                prev_diag + 1
            } else {
                up.max(row[j])
            };
            prev_diag = up;
        }
    }
    row[b.len()]
}

fn prf(matches: usize, cand_total: usize, ref_total: usize) -> RougeScore {
    let precision = if cand_total == 0 {
        0.0
    } else {
        matches as f64 / cand_total as f64
    };
    let recall = if ref_total == 0 {
        0.0
    } else {
        matches as f64 / ref_total as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    RougeScore {
        precision,
        recall,
        f1,
    }
}

/// ROUGE-1, ROUGE-2 (clipped n-gram overlap) or ROUGE-L (longest common
/// subsequence), each as precision/recall/F1 in [0, 1]. An empty side scores
/// (0, 0, 0) with a warning.
pub fn rouge(candidate: &str, reference: &str, kind: RougeKind) -> RougeScore {
    let cand = tokenize(candidate);
    let refr = tokenize(reference);
    if cand.is_empty() || refr.is_empty() {
        log::warn!("ROUGE input has no tokens; scoring 0");
        return RougeScore::default();
    }
    match kind {
        RougeKind::RougeL => prf(lcs_length(&cand, &refr), cand.len(), refr.len()),
        RougeKind::Rouge1 | RougeKind::Rouge2 => {
            let n = if kind == RougeKind::Rouge1 { 1 } else { 2 };
            let cand_counts = ngram_counts(&cand, n);
            let ref_counts = ngram_counts(&refr, n);
            let matches: u64 = cand_counts
                .iter()
                .map(|(gram, &count)| count.min(ref_counts.get(gram).copied().unwrap_or(0)))
                .sum();
            let cand_total: u64 = cand_counts.values().sum();
            let ref_total: u64 = ref_counts.values().sum();
            prf(matches as usize, cand_total as usize, ref_total as usize)
        }
    }
}
