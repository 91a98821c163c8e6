//! The shipped demo fixtures must stay loadable through the public APIs.

use std::path::PathBuf;

use storylogic::gaps::{make_gap_instance, load_gap_file, GapError};
use storylogic::gateway::{ExemplarSet, MockTransport, Stage};
use storylogic::metrics::VadLexicon;
use storylogic::story::{consolidate_emotions, load_corpus, EmotionLabel};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

#[test]
fn smoke_corpus_loads_and_consolidates() {
    let raw = load_corpus(&fixture("corpus_smoke.jsonl")).unwrap();
    assert_eq!(raw.len(), 10);
    let ids: Vec<&str> = raw.iter().map(|r| r.story().id()).collect();
    assert!(ids.contains(&"quiet") && ids.contains(&"note") && ids.contains(&"market"));

    for r in &raw {
        let annotated = consolidate_emotions(r);
        assert_eq!(annotated.grid().len(), r.story().len());
    }
}

#[test]
fn all_neutral_story_gaps_at_the_first_interior_sentence() {
    let raw = load_corpus(&fixture("corpus_smoke.jsonl")).unwrap();
    let quiet = raw.iter().find(|r| r.story().id() == "quiet").unwrap();
    let annotated = consolidate_emotions(quiet);
    for row in annotated.grid() {
        for a in row {
            assert_eq!(a.emotion.emotion(), EmotionLabel::None);
        }
    }
    let instance = make_gap_instance(&annotated).unwrap();
    assert_eq!(instance.gold_k, 2, "a scoreless tie falls back to the smallest index");
}

#[test]
fn two_sentence_story_is_too_short_to_gap() {
    let raw = load_corpus(&fixture("corpus_smoke.jsonl")).unwrap();
    let note = raw.iter().find(|r| r.story().id() == "note").unwrap();
    let err = make_gap_instance(&consolidate_emotions(note)).unwrap_err();
    assert!(matches!(err, GapError::TooShort { n: 2 }));
}

#[test]
fn batch_corpus_is_fully_gap_eligible() {
    let raw = load_corpus(&fixture("corpus_50.jsonl")).unwrap();
    assert_eq!(raw.len(), 50);
    for r in &raw {
        assert!(r.story().len() >= 4, "{} is too short", r.story().id());
        let instance = make_gap_instance(&consolidate_emotions(r)).unwrap();
        assert!(instance.gold_k >= 2);
        assert!(!instance.gold_sentence.trim().is_empty());
    }
}

#[test]
fn demo_lexicon_covers_the_fixture_vocabulary() {
    let lexicon = VadLexicon::load(&fixture("lexicon_demo.tsv")).unwrap();
    for word in ["kite", "laptop", "telescope", "fence", "mangoes"] {
        assert!(lexicon.get(word).is_some(), "missing `{word}`");
    }
    let d = storylogic::metrics::vad_deviation(
        "Mia built a kite from paper and string.",
        "The kite climbed until it was a speck.",
        &lexicon,
    );
    assert!(d.is_some());
}

#[test]
fn demo_exemplars_cover_every_stage_twice() {
    let set = ExemplarSet::load(&fixture("exemplars_demo.jsonl")).unwrap();
    for stage in Stage::ALL {
        assert!(set.for_stage(stage).len() >= 2, "{stage:?} needs at least two exemplars");
    }
}

#[test]
fn bundled_gap_file_round_trips_into_an_instance() {
    let records = load_gap_file(&fixture("gaps_laptop.jsonl")).unwrap();
    assert_eq!(records.len(), 1);
    let record = &records[0];
    assert_eq!(record.gold_k, 3);
    let instance = record.to_instance().unwrap();
    assert_eq!(instance.gapped.len(), 4);
    assert!(instance.annotated_gapped().is_some());
}

#[test]
fn mock_directories_load() {
    MockTransport::from_dir(&fixture("mock_laptop")).unwrap();
    MockTransport::from_dir(&fixture("mock_synthetic")).unwrap();
}
