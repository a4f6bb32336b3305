//! Sentence-level tagging scores and document-level keyphrase ranking.
//!
//! Sentence tagging is scored micro-averaged: true/false positives and false
//! negatives are summed over all sentences before computing precision,
//! recall and F1. Document keyphrases are ranked by TF-IDF over the
//! aggregated candidates and scored by F1 of the top 10 with stemmed
//! matching, macro-averaged over documents.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::stem::stem_phrase;
use crate::text::{Document, PhraseSet};

/// Number of ranked phrases scored per document.
pub const TOP_K: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("predicted sentence {0} has no gold entry")]
    UnknownSentence(String),
    #[error("corpus statistics cover zero documents")]
    EmptyCorpus,
    #[error("candidate {0:?} has no document frequency")]
    MissingDf(String),
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    /// Exact `(start, end)` equality.
    #[default]
    Span,
    /// Lowercased surface equality within the sentence.
    Surface,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceCounts {
    pub sentence_id: String,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceEvalReport {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_sentence: Vec<SentenceCounts>,
}

impl SentenceEvalReport {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        Self {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1: f1(precision, recall),
            per_sentence: Vec::new(),
        }
    }
}

fn match_keys(set: Option<&PhraseSet>, mode: MatchMode) -> HashSet<String> {
    let Some(set) = set else { return HashSet::new() };
    set.spans()
        .map(|s| match mode {
            MatchMode::Span => format!("{}:{}", s.start, s.end),
            MatchMode::Surface => s.surface.to_lowercase(),
        })
        .collect()
}

/// Micro P/R/F1 over all sentences in `gold`. Predicted ids must appear in
/// `gold`; gold sentences without predictions count as empty predictions.
pub fn eval_sentences(
    pred: &BTreeMap<String, PhraseSet>,
    gold: &BTreeMap<String, PhraseSet>,
    mode: MatchMode,
) -> Result<SentenceEvalReport, EvalError> {
    if let Some(id) = pred.keys().find(|id| !gold.contains_key(*id)) {
        return Err(EvalError::UnknownSentence(id.clone()));
    }
    let mut per_sentence = Vec::with_capacity(gold.len());
    for (id, gold_set) in gold {
        let g = match_keys(Some(gold_set), mode);
        let p = match_keys(pred.get(id), mode);
        let tp = p.intersection(&g).count();
        per_sentence.push(SentenceCounts {
            sentence_id: id.clone(),
            tp,
            fp: p.len() - tp,
            fn_: g.len() - tp,
        });
    }
    let (tp, fp, fn_) = per_sentence
        .iter()
        .fold((0, 0, 0), |(a, b, c), s| (a + s.tp, b + s.fp, c + s.fn_));
    let mut report = SentenceEvalReport::from_counts(tp, fp, fn_);
    report.per_sentence = per_sentence;
    Ok(report)
}

/// A lowercased candidate phrase of one document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub surface: String,
    pub count: usize,
    /// Document-wide word offset of the first occurrence.
    pub first_position: usize,
}

/// Collects predicted phrases of all sentences of `doc`, merging repeated
/// surfaces case-insensitively. Ordered by first occurrence.
pub fn aggregate_candidates(doc: &Document, preds: &HashMap<String, PhraseSet>) -> Vec<Candidate> {
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut out: Vec<Candidate> = Vec::new();
    let mut offset = 0;
    for sentence in &doc.sentences {
        if let Some(set) = preds.get(&sentence.id) {
            for span in set.spans() {
                let surface = sentence
                    .span_surface(span.start, span.end)
                    .unwrap_or_else(|_| span.surface.clone())
                    .to_lowercase();
                let position = offset + span.start;
                match index.get(&surface) {
                    Some(&k) => {
                        out[k].count += 1;
                        out[k].first_position = out[k].first_position.min(position);
                    }
                    None => {
                        index.insert(surface.clone(), out.len());
                        out.push(Candidate {
                            surface,
                            count: 1,
                            first_position: position,
                        });
                    }
                }
            }
        }
        offset += sentence.len();
    }
    out.sort_by_key(|c| c.first_position);
    out
}

/// Document count and per-surface document frequency over a corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorpusStats {
    pub n_docs: usize,
    pub df: HashMap<String, usize>,
}

impl CorpusStats {
    pub fn add_document(&mut self, candidates: &[Candidate]) {
        self.n_docs += 1;
        let distinct: HashSet<&str> = candidates.iter().map(|c| c.surface.as_str()).collect();
        for surface in distinct {
            *self.df.entry(surface.to_owned()).or_default() += 1;
        }
    }

    pub fn from_documents<'a>(docs: impl IntoIterator<Item = &'a [Candidate]>) -> Self {
        let mut stats = Self::default();
        for c in docs {
            stats.add_document(c);
        }
        stats
    }

    /// Combines statistics of disjoint document sets.
    pub fn merge(mut self, other: CorpusStats) -> Self {
        self.n_docs += other.n_docs;
        for (k, v) in other.df {
            *self.df.entry(k).or_default() += v;
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPhrase {
    pub surface: String,
    pub score: f64,
}

/// `tf * ln(N / df)` for one candidate.
pub fn tfidf_score(candidate: &Candidate, stats: &CorpusStats) -> Result<f64, EvalError> {
    if stats.n_docs == 0 {
        return Err(EvalError::EmptyCorpus);
    }
    let df = *stats
        .df
        .get(&candidate.surface)
        .filter(|&&d| d > 0)
        .ok_or_else(|| EvalError::MissingDf(candidate.surface.clone()))?;
    Ok(candidate.count as f64 * (stats.n_docs as f64 / df as f64).ln())
}

/// Top `k` candidates by TF-IDF; ties go to the earlier first occurrence,
/// then to the lexicographically smaller surface.
pub fn tfidf_rank(candidates: &[Candidate], stats: &CorpusStats, k: usize) -> Result<Vec<RankedPhrase>, EvalError> {
    if stats.n_docs == 0 {
        return Err(EvalError::EmptyCorpus);
    }
    let mut scored = candidates
        .iter()
        .map(|c| tfidf_score(c, stats).map(|s| (c, s)))
        .collect::<Result<Vec<_>, _>>()?;
    scored.sort_by(|(a, sa), (b, sb)| {
        sb.partial_cmp(sa)
            .unwrap_or(Ordering::Equal)
            .then(a.first_position.cmp(&b.first_position))
            .then_with(|| a.surface.cmp(&b.surface))
    });
    Ok(scored
        .into_iter()
        .take(k)
        .map(|(c, score)| RankedPhrase {
            surface: c.surface.clone(),
            score,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocScore {
    pub doc_id: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub top: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocEvalReport {
    pub f1_at_10: f64,
    pub per_document: Vec<DocScore>,
}

fn is_multi_word(phrase: &str) -> bool {
    phrase.split_whitespace().nth(1).is_some()
}

/// Scores one ranked list against gold keyphrases. Only multi-word gold
/// phrases count; each distinct stemmed gold phrase matches at most once.
/// Returns `None` when the document has no multi-word gold phrase.
pub fn score_document(doc_id: &str, returned: &[String], gold: &[String]) -> Option<DocScore> {
    let gold_stems: HashSet<Vec<String>> = gold
        .iter()
        .filter(|g| is_multi_word(g))
        .map(|g| stem_phrase(g))
        .collect();
    if gold_stems.is_empty() {
        return None;
    }
    let mut unmatched = gold_stems.clone();
    let matches = returned
        .iter()
        .filter(|p| unmatched.remove(&stem_phrase(p)))
        .count();
    let precision = ratio(matches, returned.len());
    let recall = ratio(matches, gold_stems.len());
    Some(DocScore {
        doc_id: doc_id.to_owned(),
        precision,
        recall,
        f1: f1(precision, recall),
        top: returned.to_vec(),
    })
}

/// Macro-averaged F1@10 over documents that have multi-word gold phrases.
/// `ranked` holds `(doc_id, returned phrases)`; at most [`TOP_K`] are used.
pub fn eval_documents(ranked: &[(String, Vec<String>)], gold: &HashMap<String, Vec<String>>) -> DocEvalReport {
    let per_document: Vec<DocScore> = ranked
        .iter()
        .filter_map(|(id, list)| {
            let g = gold.get(id)?;
            let top = &list[..list.len().min(TOP_K)];
            score_document(id, top, g)
        })
        .collect();
    let f1_at_10 = if per_document.is_empty() {
        0.0
    } else {
        per_document.iter().map(|d| d.f1).sum::<f64>() / per_document.len() as f64
    };
    DocEvalReport { f1_at_10, per_document }
}
