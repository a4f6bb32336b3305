//! Candidate filtering: stopword trimming and splitting, the noun-phrase
//! tag pattern `<NN.*|JJ>* <NN.*>`, and the multi-word requirement.

use std::collections::HashSet;
use std::ops::Range;
use std::path::Path;

use crate::text::{PhraseSpan, Sentence};

/// Stopword list shipped with the crate, one lowercase word per line.
pub const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords.txt");

/// Minimum number of words in a quality phrase.
pub const MIN_PHRASE_LEN: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterConfig {
    stopwords: HashSet<String>,
    /// When false the POS pattern is not checked (degraded mode).
    pub pos_filter: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self::from_list(DEFAULT_STOPWORDS)
    }
}

impl FilterConfig {
    /// Parses a stopword list: one word per line, blank lines and `#`
    /// comments ignored, case folded.
    pub fn from_list(list: &str) -> Self {
        Self::with_stopwords(
            list.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        )
    }

    pub fn with_stopwords<S: AsRef<str>>(words: impl IntoIterator<Item = S>) -> Self {
        Self {
            stopwords: words.into_iter().map(|w| w.as_ref().to_lowercase()).collect(),
            pos_filter: true,
        }
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        Ok(Self::from_list(&std::fs::read_to_string(path)?))
    }

    pub fn without_pos_filter(mut self) -> Self {
        self.pos_filter = false;
        self
    }

    pub fn stopwords(&self) -> &HashSet<String> {
        &self.stopwords
    }

    pub fn is_stopword(&self, word: &str) -> bool {
        self.stopwords.contains(&word.to_lowercase())
    }
}

pub fn is_noun_like(tag: &str) -> bool {
    tag.starts_with("NN")
}

pub fn is_adjective_like(tag: &str) -> bool {
    tag == "JJ"
}

/// Removes leading and trailing stopwords from `chunk` and splits what is
/// left at interior stopwords. Empty pieces are dropped.
pub fn strip_and_split(chunk: Range<usize>, sentence: &Sentence, config: &FilterConfig) -> Vec<Range<usize>> {
    let end = chunk.end.min(sentence.tokens.len());
    let mut out = Vec::new();
    let mut run_start = None;
    for k in chunk.start..end {
        if config.is_stopword(&sentence.tokens[k].text) {
            if let Some(s) = run_start.take() {
                out.push(s..k);
            }
        } else if run_start.is_none() {
            run_start = Some(k);
        }
    }
    if let Some(s) = run_start {
        out.push(s..end);
    }
    out
}

/// Tag matcher for `<NN.*|JJ>* <NN.*>`: every tag noun- or adjective-like,
/// the last one noun-like, none absent.
pub fn matches_np_tags<'a>(tags: impl IntoIterator<Item = Option<&'a str>>) -> bool {
    // states: start (nothing read), body (last tag JJ), noun (last tag NN*)
    #[derive(PartialEq)]
    enum State {
        Start,
        Body,
        Noun,
    }
    let mut state = State::Start;
    for tag in tags {
        state = match tag {
            Some(t) if is_noun_like(t) => State::Noun,
            Some(t) if is_adjective_like(t) => State::Body,
            _ => return false,
        };
    }
    state == State::Noun
}

pub fn is_noun_phrase(span: Range<usize>, sentence: &Sentence) -> bool {
    if span.is_empty() || span.end > sentence.tokens.len() {
        return false;
    }
    matches_np_tags(sentence.tokens[span].iter().map(|t| t.pos.as_deref()))
}

/// Strips and splits every chunk, then keeps multi-word noun phrases.
/// The result is ordered by `(start, end)` and free of duplicates.
pub fn filter_candidates(chunks: &[Range<usize>], sentence: &Sentence, config: &FilterConfig) -> Vec<PhraseSpan> {
    let mut keep: Vec<Range<usize>> = chunks
        .iter()
        .flat_map(|c| strip_and_split(c.clone(), sentence, config))
        .filter(|r| r.len() >= MIN_PHRASE_LEN)
        .filter(|r| !config.pos_filter || is_noun_phrase(r.clone(), sentence))
        .collect();
    keep.sort_by_key(|r| (r.start, r.end));
    keep.dedup();
    keep.into_iter()
        .map(|r| sentence.span(r.start, r.end).expect("range checked by strip_and_split"))
        .collect()
}
