//! Corpus model: tokens, sentences, documents and phrase spans.
//!
//! Documents are read from JSONL, one document per line. Token offsets are
//! character offsets (not bytes) into the sentence text and are validated on
//! ingestion; a document that violates them is rejected as a whole.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum TextError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("document {doc_id}, sentence {sentence_id}, token {token}: {message}")]
    Offsets {
        doc_id: String,
        sentence_id: String,
        token: usize,
        message: String,
    },
    #[error("document {doc_id}: {message}")]
    InvalidDocument { doc_id: String, message: String },
    #[error("span [{start}, {end}) out of range for sentence of {len} tokens")]
    SpanOutOfRange { start: usize, end: usize, len: usize },
}

/// A word with its POS tag and character offsets into the owning sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos: Option<String>,
    #[serde(rename = "start")]
    pub char_start: usize,
    #[serde(rename = "end")]
    pub char_end: usize,
    /// Subword pieces, filled by a backend tokenizer. Never serialized.
    #[serde(skip)]
    pub pieces: Vec<String>,
}

impl Token {
    pub fn new(text: impl Into<String>, pos: Option<&str>, char_start: usize, char_end: usize) -> Self {
        Self {
            text: text.into(),
            pos: pos.map(str::to_owned),
            char_start,
            char_end,
            pieces: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: String,
    pub text: String,
    pub tokens: Vec<Token>,
}

impl Sentence {
    /// Builds a sentence from `(word, pos)` pairs joined by single spaces,
    /// computing offsets. Handy for fixtures and generated inputs.
    pub fn from_tagged(id: impl Into<String>, words: &[(&str, Option<&str>)]) -> Self {
        let mut text = String::new();
        let mut tokens = Vec::with_capacity(words.len());
        let mut offset = 0;
        for (k, (word, pos)) in words.iter().enumerate() {
            if k > 0 {
                text.push(' ');
                offset += 1;
            }
            let len = word.chars().count();
            text.push_str(word);
            tokens.push(Token::new(*word, *pos, offset, offset + len));
            offset += len;
        }
        Self {
            id: id.into(),
            text,
            tokens,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Token texts of `[start, end)` joined by single spaces.
    pub fn span_surface(&self, start: usize, end: usize) -> Result<String, TextError> {
        if start >= end || end > self.tokens.len() {
            return Err(TextError::SpanOutOfRange {
                start,
                end,
                len: self.tokens.len(),
            });
        }
        let words: Vec<&str> = self.tokens[start..end].iter().map(|t| t.text.as_str()).collect();
        Ok(words.join(" "))
    }

    /// Builds a [`PhraseSpan`] for `[start, end)` with its surface filled in.
    pub fn span(&self, start: usize, end: usize) -> Result<PhraseSpan, TextError> {
        Ok(PhraseSpan {
            start,
            end,
            surface: self.span_surface(start, end)?,
        })
    }

    fn validate(&self, doc_id: &str) -> Result<(), TextError> {
        let offsets_err = |token: usize, message: String| TextError::Offsets {
            doc_id: doc_id.to_owned(),
            sentence_id: self.id.clone(),
            token,
            message,
        };
        if self.tokens.is_empty() {
            return Err(TextError::InvalidDocument {
                doc_id: doc_id.to_owned(),
                message: format!("sentence {} has no tokens", self.id),
            });
        }
        let chars: Vec<char> = self.text.chars().collect();
        let mut prev_end = 0;
        for (k, tok) in self.tokens.iter().enumerate() {
            if tok.text.is_empty() {
                return Err(offsets_err(k, "empty token text".into()));
            }
            if tok.char_start >= tok.char_end {
                return Err(offsets_err(
                    k,
                    format!("start {} is not before end {}", tok.char_start, tok.char_end),
                ));
            }
            if k > 0 && tok.char_start < prev_end {
                return Err(offsets_err(
                    k,
                    format!("start {} overlaps previous token ending at {}", tok.char_start, prev_end),
                ));
            }
            if tok.char_end > chars.len() {
                return Err(offsets_err(
                    k,
                    format!("end {} exceeds sentence length {}", tok.char_end, chars.len()),
                ));
            }
            let slice: String = chars[tok.char_start..tok.char_end].iter().collect();
            if slice != tok.text {
                return Err(offsets_err(
                    k,
                    format!("text {:?} does not match sentence substring {:?}", tok.text, slice),
                ));
            }
            prev_end = tok.char_end;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub sentences: Vec<Sentence>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_keyphrases: Option<Vec<String>>,
}

impl Document {
    /// Checks token offsets and sentence-id uniqueness.
    pub fn validate(&self) -> Result<(), TextError> {
        let mut seen = std::collections::HashSet::new();
        for sentence in &self.sentences {
            if !seen.insert(sentence.id.as_str()) {
                return Err(TextError::InvalidDocument {
                    doc_id: self.id.clone(),
                    message: format!("duplicate sentence id {}", sentence.id),
                });
            }
            sentence.validate(&self.id)?;
        }
        Ok(())
    }
}

/// Half-open word span `[start, end)` over a sentence's tokens.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PhraseSpan {
    pub start: usize,
    pub end: usize,
    #[serde(default)]
    pub surface: String,
}

impl PhraseSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn key(&self) -> (usize, usize) {
        (self.start, self.end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhraseSource {
    Annotator,
    Generator,
    Merged,
    Gold,
}

impl fmt::Display for PhraseSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PhraseSource::Annotator => "annotator",
            PhraseSource::Generator => "generator",
            PhraseSource::Merged => "merged",
            PhraseSource::Gold => "gold",
        };
        f.write_str(s)
    }
}

/// Phrase spans of one sentence, unique by `(start, end)`. Overlaps are allowed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhraseSet {
    pub sentence_id: String,
    pub source: PhraseSource,
    spans: BTreeMap<(usize, usize), PhraseSpan>,
}

impl PhraseSet {
    pub fn new(sentence_id: impl Into<String>, source: PhraseSource) -> Self {
        Self {
            sentence_id: sentence_id.into(),
            source,
            spans: BTreeMap::new(),
        }
    }

    pub fn from_spans(
        sentence_id: impl Into<String>,
        source: PhraseSource,
        spans: impl IntoIterator<Item = PhraseSpan>,
    ) -> Self {
        let mut set = Self::new(sentence_id, source);
        for span in spans {
            set.insert(span);
        }
        set
    }

    /// Inserts a span; returns false if `(start, end)` was already present.
    pub fn insert(&mut self, span: PhraseSpan) -> bool {
        match self.spans.entry(span.key()) {
            std::collections::btree_map::Entry::Occupied(_) => false,
            std::collections::btree_map::Entry::Vacant(slot) => {
                slot.insert(span);
                true
            }
        }
    }

    pub fn contains(&self, start: usize, end: usize) -> bool {
        self.spans.contains_key(&(start, end))
    }

    /// Spans ordered by start, then end.
    pub fn spans(&self) -> impl Iterator<Item = &PhraseSpan> {
        self.spans.values()
    }

    pub fn keys(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.spans.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }
}

/// One line of the silver-label / prediction JSONL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhraseRecord {
    pub sentence_id: String,
    #[serde(alias = "gold")]
    pub phrases: Vec<PhraseSpan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<PhraseSource>,
}

impl PhraseRecord {
    pub fn from_set(set: &PhraseSet) -> Self {
        Self {
            sentence_id: set.sentence_id.clone(),
            phrases: set.spans().cloned().collect(),
            source: Some(set.source),
        }
    }

    /// Converts to a set; `default_source` applies when the record carries none.
    pub fn into_set(self, default_source: PhraseSource) -> PhraseSet {
        let source = self.source.unwrap_or(default_source);
        PhraseSet::from_spans(self.sentence_id, source, self.phrases)
    }
}

/// Streaming reader over a corpus JSONL file.
///
/// Yields `Err` for malformed lines and for documents that fail validation;
/// iteration continues past rejected documents.
pub struct CorpusReader<R> {
    lines: std::io::Lines<R>,
    line_no: usize,
}

impl CorpusReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self, TextError> {
        Ok(Self::new(BufReader::new(File::open(path)?)))
    }
}

impl<R: BufRead> CorpusReader<R> {
    pub fn new(reader: R) -> Self {
        Self {
            lines: reader.lines(),
            line_no: 0,
        }
    }
}

impl<R: BufRead> Iterator for CorpusReader<R> {
    type Item = Result<Document, TextError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(e) => return Some(Err(e.into())),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            let doc: Document = match serde_json::from_str(&line) {
                Ok(doc) => doc,
                Err(e) => {
                    return Some(Err(TextError::Malformed {
                        line: self.line_no,
                        message: e.to_string(),
                    }))
                }
            };
            return Some(doc.validate().map(|()| doc));
        }
    }
}

/// Reads a whole corpus. The first malformed line or invalid document aborts.
pub fn ingest_corpus(path: &Path) -> Result<Vec<Document>, TextError> {
    CorpusReader::open(path)?.collect()
}

pub fn write_document<W: Write>(out: &mut W, doc: &Document) -> Result<(), TextError> {
    serde_json::to_writer(&mut *out, doc).map_err(std::io::Error::from)?;
    out.write_all(b"\n")?;
    Ok(())
}

/// Reads a JSONL file of one `T` per line, with line-numbered errors.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, TextError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| TextError::Malformed {
            line: k + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_jsonl_line<W: Write, T: Serialize>(out: &mut W, value: &T) -> Result<(), TextError> {
    serde_json::to_writer(&mut *out, value).map_err(std::io::Error::from)?;
    out.write_all(b"\n")?;
    Ok(())
}

/// Reads a phrase-record JSONL file (silver, generated-grounded, merged or
/// gold) into a map keyed by sentence id. Later duplicates are merged in.
pub fn read_phrase_sets(
    path: &Path,
    default_source: PhraseSource,
) -> Result<BTreeMap<String, PhraseSet>, TextError> {
    let mut out: BTreeMap<String, PhraseSet> = BTreeMap::new();
    for record in read_jsonl::<PhraseRecord>(path)? {
        let set = record.into_set(default_source);
        match out.get_mut(&set.sentence_id) {
            Some(existing) => {
                for span in set.spans() {
                    existing.insert(span.clone());
                }
            }
            None => {
                out.insert(set.sentence_id.clone(), set);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    const MINIMAL: &str = r#"{"id":"d1","sentences":[{"id":"s1","text":"a b","tokens":[{"text":"a","pos":"DT","start":0,"end":1},{"text":"b","pos":"NN","start":2,"end":3}]}]}"#;

    fn read(input: &str) -> Vec<Result<Document, TextError>> {
        CorpusReader::new(Cursor::new(input.to_owned())).collect()
    }

    #[test]
    fn minimal_record() {
        let docs = read(MINIMAL);
        assert_eq!(docs.len(), 1);
        let doc = docs[0].as_ref().unwrap();
        assert_eq!(doc.sentences.len(), 1);
        assert_eq!(doc.sentences[0].tokens.len(), 2);
        assert_eq!(doc.sentences[0].tokens[1].pos.as_deref(), Some("NN"));
    }

    #[test]
    fn bad_offsets_reject_document() {
        let bad = MINIMAL.replace(r#""start":2,"end":3"#, r#""start":2,"end":5"#);
        let docs = read(&bad);
        assert!(matches!(docs[0], Err(TextError::Offsets { token: 1, .. })));
    }

    #[test]
    fn mismatched_text_rejected() {
        let bad = MINIMAL.replace(r#"{"text":"b""#, r#"{"text":"c""#);
        assert!(matches!(read(&bad)[0], Err(TextError::Offsets { .. })));
    }

    #[test]
    fn empty_input_is_empty_corpus() {
        assert!(read("").is_empty());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let input = format!("{MINIMAL}\n{{not json\n");
        let docs = read(&input);
        assert!(docs[0].is_ok());
        assert!(matches!(docs[1], Err(TextError::Malformed { line: 2, .. })));
    }

    #[test]
    fn missing_pos_is_absent() {
        let input = MINIMAL.replace(r#","pos":"DT""#, "");
        let doc = read(&input).pop().unwrap().unwrap();
        assert_eq!(doc.sentences[0].tokens[0].pos, None);
    }

    #[test]
    fn duplicate_sentence_ids_rejected() {
        let s = r#"{"id":"s1","text":"a","tokens":[{"text":"a","start":0,"end":1}]}"#;
        let input = format!(r#"{{"id":"d","sentences":[{s},{s}]}}"#);
        assert!(matches!(read(&input)[0], Err(TextError::InvalidDocument { .. })));
    }

    #[test]
    fn offsets_count_characters() {
        let s = r#"{"id":"d","sentences":[{"id":"s","text":"café au","tokens":[{"text":"café","start":0,"end":4},{"text":"au","start":5,"end":7}]}]}"#;
        assert!(read(s)[0].is_ok());
    }

    #[test]
    fn span_surface_joins_with_spaces() {
        let s = Sentence::from_tagged("s", &[("medical", None), ("monitoring", None)]);
        assert_eq!(s.span_surface(0, 2).unwrap(), "medical monitoring");
        let s = Sentence::from_tagged("s", &[("a", None), ("b", None), ("c", None)]);
        assert_eq!(s.span_surface(1, 3).unwrap(), "b c");
        assert!(s.span_surface(2, 2).is_err());
        assert!(s.span_surface(2, 4).is_err());
    }

    #[test]
    fn round_trip_is_identity() {
        let doc = read(MINIMAL).pop().unwrap().unwrap();
        let mut buf = Vec::new();
        write_document(&mut buf, &doc).unwrap();
        let again = read(std::str::from_utf8(&buf).unwrap()).pop().unwrap().unwrap();
        assert_eq!(doc, again);
    }

    #[test]
    fn phrase_set_dedups_by_span() {
        let mut set = PhraseSet::new("s", PhraseSource::Gold);
        assert!(set.insert(PhraseSpan { start: 0, end: 2, surface: "a b".into() }));
        assert!(!set.insert(PhraseSpan { start: 0, end: 2, surface: "other".into() }));
        assert!(set.insert(PhraseSpan { start: 1, end: 2, surface: "b".into() }));
        assert_eq!(set.len(), 2);
    }

    #[test]
    fn gold_schema_is_accepted() {
        let rec: PhraseRecord =
            serde_json::from_str(r#"{"sentence_id":"s1","gold":[{"start":0,"end":2}]}"#).unwrap();
        let set = rec.into_set(PhraseSource::Gold);
        assert!(set.contains(0, 2));
        assert_eq!(set.source, PhraseSource::Gold);
    }
}
