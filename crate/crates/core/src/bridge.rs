//! Glue between silver labels and an external sequence-to-sequence
//! generator: training-file export, grounding of generated phrase strings,
//! and merging of annotator and generator predictions.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::filter::{filter_candidates, FilterConfig};
use crate::text::{PhraseSet, PhraseSource, Sentence};

/// Separator between phrases in a target string.
pub const TARGET_SEPARATOR: &str = " , ";

/// Default cap on phrases parsed from one generated string.
pub const DEFAULT_MAX_PHRASES: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum BridgeError {
    #[error("unknown sentence id {0}")]
    UnknownSentence(String),
    #[error("cannot merge phrase sets of different sentences: {0} and {1}")]
    SentenceMismatch(String, String),
}

/// One line of the training file: source sentence and its target string.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub sentence_id: String,
    pub source: String,
    pub target: String,
}

/// One line of generator output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedRecord {
    pub sentence_id: String,
    pub target_text: String,
}

/// Builds the training record for a sentence, or `None` when it has no
/// silver phrase. Phrases are joined in `(start, end)` order.
pub fn train_record(silver: &PhraseSet, sentence: &Sentence) -> Result<Option<TrainRecord>, BridgeError> {
    if silver.sentence_id != sentence.id {
        return Err(BridgeError::SentenceMismatch(silver.sentence_id.clone(), sentence.id.clone()));
    }
    if silver.is_empty() {
        return Ok(None);
    }
    let surfaces: Vec<String> = silver
        .spans()
        .map(|s| {
            sentence
                .span_surface(s.start, s.end)
                .unwrap_or_else(|_| s.surface.clone())
        })
        .collect();
    Ok(Some(TrainRecord {
        sentence_id: sentence.id.clone(),
        source: sentence.text.clone(),
        target: surfaces.join(TARGET_SEPARATOR),
    }))
}

/// Training records for every silver set, in the order given. Ids missing
/// from `lookup` are an error.
pub fn export_train<'a, I, F>(silver: I, mut lookup: F) -> Result<Vec<TrainRecord>, BridgeError>
where
    I: IntoIterator<Item = &'a PhraseSet>,
    F: FnMut(&str) -> Option<&'a Sentence>,
{
    let mut out = Vec::new();
    for set in silver {
        let sentence = lookup(&set.sentence_id).ok_or_else(|| BridgeError::UnknownSentence(set.sentence_id.clone()))?;
        out.extend(train_record(set, sentence)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParseOutcome {
    pub phrases: PhraseSet,
    /// Phrase strings with no occurrence in the sentence.
    pub hallucinated: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseConfig {
    pub max_phrases: usize,
}

impl Default for ParseConfig {
    fn default() -> Self {
        Self {
            max_phrases: DEFAULT_MAX_PHRASES,
        }
    }
}

/// First `[start, end)` whose lowercased tokens equal `words`.
fn ground(words: &[String], sentence: &Sentence) -> Option<(usize, usize)> {
    let n = words.len();
    if n == 0 || n > sentence.len() {
        return None;
    }
    (0..=sentence.len() - n)
        .find(|&s| {
            sentence.tokens[s..s + n]
                .iter()
                .zip(words)
                .all(|(tok, w)| tok.text.to_lowercase() == *w)
        })
        .map(|s| (s, s + n))
}

/// Splits a generated target string on commas, grounds each phrase to its
/// first case-insensitive occurrence in the sentence and filters the
/// grounded spans like annotator chunks.
pub fn parse_generated(
    record: &GeneratedRecord,
    sentence: &Sentence,
    filter: &FilterConfig,
    config: &ParseConfig,
) -> ParseOutcome {
    let mut seen = HashSet::new();
    let mut chunks = Vec::new();
    let mut hallucinated = 0;
    let phrases = record
        .target_text
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>())
        .filter(|words| seen.insert(words.clone()))
        .take(config.max_phrases);
    for words in phrases {
        match ground(&words, sentence) {
            Some((s, e)) => chunks.push(s..e),
            None => hallucinated += 1,
        }
    }
    ParseOutcome {
        phrases: PhraseSet::from_spans(
            record.sentence_id.clone(),
            PhraseSource::Generator,
            filter_candidates(&chunks, sentence, filter),
        ),
        hallucinated,
    }
}

/// Union of two phrase sets of the same sentence.
pub fn merge(a: &PhraseSet, g: &PhraseSet) -> Result<PhraseSet, BridgeError> {
    if a.sentence_id != g.sentence_id {
        return Err(BridgeError::SentenceMismatch(a.sentence_id.clone(), g.sentence_id.clone()));
    }
    Ok(PhraseSet::from_spans(
        a.sentence_id.clone(),
        PhraseSource::Merged,
        a.spans().chain(g.spans()).cloned(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::PhraseSpan;

    fn sensor_sentence() -> Sentence {
        Sentence::from_tagged(
            "sensor",
            &[
                ("sensor", Some("NN")),
                ("selection", Some("NN")),
                ("for", Some("IN")),
                ("energy-efficient", Some("JJ")),
                ("ambulatory", Some("JJ")),
                ("medical", Some("JJ")),
                ("monitoring", Some("NN")),
                (".", Some(".")),
            ],
        )
    }

    fn set(id: &str, source: PhraseSource, keys: &[(usize, usize)]) -> PhraseSet {
        PhraseSet::from_spans(
            id,
            source,
            keys.iter().map(|&(start, end)| PhraseSpan {
                start,
                end,
                surface: String::new(),
            }),
        )
    }

    fn generated(text: &str) -> GeneratedRecord {
        GeneratedRecord {
            sentence_id: "sensor".into(),
            target_text: text.into(),
        }
    }

    #[test]
    fn target_joins_in_source_order() {
        let s = sensor_sentence();
        let silver = set("sensor", PhraseSource::Annotator, &[(4, 7), (0, 2)]);
        let rec = train_record(&silver, &s).unwrap().unwrap();
        assert_eq!(rec.target, "sensor selection , ambulatory medical monitoring");
        assert_eq!(rec.source, s.text);
    }

    #[test]
    fn single_and_empty_targets() {
        let s = sensor_sentence();
        let one = train_record(&set("sensor", PhraseSource::Annotator, &[(0, 2)]), &s).unwrap().unwrap();
        assert_eq!(one.target, "sensor selection");
        assert!(train_record(&set("sensor", PhraseSource::Annotator, &[]), &s).unwrap().is_none());
    }

    #[test]
    fn export_rejects_unknown_ids() {
        let s = sensor_sentence();
        let sets = vec![set("nope", PhraseSource::Annotator, &[(0, 2)])];
        let err = export_train(&sets, |id| (id == s.id).then_some(&s)).unwrap_err();
        assert!(matches!(err, BridgeError::UnknownSentence(id) if id == "nope"));
    }

    #[test]
    fn parse_grounds_phrases() {
        let s = sensor_sentence();
        let out = parse_generated(
            &generated("sensor selection , medical monitoring"),
            &s,
            &FilterConfig::default(),
            &ParseConfig::default(),
        );
        let keys: Vec<_> = out.phrases.keys().collect();
        assert_eq!(keys, vec![(0, 2), (5, 7)]);
        assert_eq!(out.hallucinated, 0);
        assert_eq!(out.phrases.source, PhraseSource::Generator);
    }

    #[test]
    fn parse_counts_hallucinations() {
        let out = parse_generated(
            &generated("quantum blockchain"),
            &sensor_sentence(),
            &FilterConfig::default(),
            &ParseConfig::default(),
        );
        assert!(out.phrases.is_empty());
        assert_eq!(out.hallucinated, 1);
    }

    #[test]
    fn parse_empty_and_case_and_caps() {
        let s = sensor_sentence();
        let cfg = FilterConfig::default();
        assert!(parse_generated(&generated(""), &s, &cfg, &ParseConfig::default()).phrases.is_empty());
        let out = parse_generated(&generated("Sensor Selection,sensor selection"), &s, &cfg, &ParseConfig::default());
        assert_eq!(out.phrases.keys().collect::<Vec<_>>(), vec![(0, 2)]);
        let capped = parse_generated(
            &generated("sensor selection , medical monitoring"),
            &s,
            &cfg,
            &ParseConfig { max_phrases: 1 },
        );
        assert_eq!(capped.phrases.len(), 1);
    }

    #[test]
    fn parse_applies_filter() {
        let out = parse_generated(
            &generated("for energy-efficient"),
            &sensor_sentence(),
            &FilterConfig::default(),
            &ParseConfig::default(),
        );
        assert!(out.phrases.is_empty());
        assert_eq!(out.hallucinated, 0);
    }

    #[test]
    fn merge_examples() {
        let a = set("s", PhraseSource::Annotator, &[(0, 2)]);
        let g = set("s", PhraseSource::Generator, &[(4, 7)]);
        let m = merge(&a, &g).unwrap();
        assert_eq!(m.keys().collect::<Vec<_>>(), vec![(0, 2), (4, 7)]);
        assert_eq!(m.source, PhraseSource::Merged);

        let a = set("s", PhraseSource::Annotator, &[(0, 4)]);
        let g = set("s", PhraseSource::Generator, &[(2, 4)]);
        assert_eq!(merge(&a, &g).unwrap().len(), 2);

        let same = merge(&a, &a).unwrap();
        assert_eq!(same.keys().collect::<Vec<_>>(), a.keys().collect::<Vec<_>>());

        assert!(merge(&a, &set("t", PhraseSource::Generator, &[])).is_err());
    }
}
