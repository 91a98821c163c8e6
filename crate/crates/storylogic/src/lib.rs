//! Toolkit for modelling short stories as per-character action and emotion
//! chains, fabricating missing-sentence gaps, driving a chat-completion
//! backend through detection / prediction / generation stages, and scoring
//! the results.
//!
//! The crate is organised by role:
//!
//! - [`story`]: core domain types (stories, emotion labels, action records,
//!   annotation grids), corpus ingestion, annotator-vote consolidation and
//!   deterministic corpus splitting.
//! - [`codec`]: the wire grammars spoken with the model. Tolerant parsers for
//!   action blocks, emotion blocks, prediction blocks and index verdicts, and
//!   strict canonical serializers. Grammar reference lives in
//!   `docs/formats.md`.
//! - [`gaps`]: emotion geometry on the eight-label ring, emotional-change
//!   scoring, deterministic removal-index selection and gap-instance
//!   fabrication.
//! - [`gateway`]: prompt templates, shot handling, transport abstraction with
//!   retry/backoff/rate limiting, an HTTP chat-completions client and a
//!   replayable mock backend.
//! - [`pipeline`]: the staged flow (actions, emotions, logic check, gap
//!   prediction, sentence generation), the text-to-actions-to-text round
//!   trip, fine-tuning exports and the batch runner.
//! - [`metrics`]: confusion tallies with micro/macro aggregation, BLEU and
//!   ROUGE, lexicon-based affect deviation and report rendering.
//!
//! All sentence indices exposed by this crate are 1-based; a verdict of
//! `InsertBefore(3)` means a sentence is missing immediately before the third
//! sentence currently shown. The special verdict `Complete` is written as
//! `-1` on the wire.

pub mod codec;
pub mod gaps;
pub mod gateway;
pub mod metrics;
pub mod pipeline;
pub mod story;

pub use codec::GapVerdict;
pub use story::{
    ActionRecord, AnnotatedStory, Annotation, EmotionAnnotation, EmotionLabel, RawStory, Story,
};
