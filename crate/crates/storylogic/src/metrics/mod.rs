//! Evaluation metrics: confusion tallies with micro/macro aggregation,
//! BLEU and ROUGE text overlap, lexicon-based affect deviation, and
//! plain-text report rendering.

mod confusion;
mod overlap;
mod report;
mod vad;

pub use confusion::{verdict_report, ConfusionTally, Prf, VerdictReport};
pub use overlap::{bleu, bleu_corpus, rouge, tokenize, RougeKind, RougeScore, TOKENIZER_VERSION};
pub use report::{
    render_emotion_table, render_generation_table, render_round_trip_table, render_vad_table,
    render_verdict_table, EmotionReport, GenerationReport, MetricsReport, RoundTripReport,
    VadReport, SCHEMA_VERSION,
};
pub use vad::{vad_deviation, VadDeviation, VadEntry, VadLexicon, VadSummary};
