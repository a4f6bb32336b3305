//! Perturbed-masking annotator.
//!
//! For words `x_i`, `x_j` of a sentence the impact `f(x_i, x_j)` is the
//! distance between the representation of `x_i` with `x_i` masked and the
//! representation of `x_i` with both `x_i` and `x_j` masked. Words split into
//! several pieces are masked whole and their per-piece distances averaged.
//! Segmentation joins adjacent words whose impact `f(x_k, x_{k+1})` is
//! strictly above the sentence's q-th percentile of such values.

use std::fmt::Write as _;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::encoder::{EncodeRequest, EncoderBackend, EncoderError};
use crate::filter::{filter_candidates, FilterConfig};
use crate::text::{PhraseSet, PhraseSource, Sentence};

/// Percentile used for the segmentation threshold unless configured.
pub const DEFAULT_PERCENTILE: f64 = 40.0;

#[derive(Debug, thiserror::Error)]
pub enum AnnotateError {
    #[error("sentence {sentence_id}: tokenization failed: {source}")]
    Tokenize {
        sentence_id: String,
        #[source]
        source: EncoderError,
    },
    #[error("sentence {sentence_id}, pair ({i}, {j}): {source}")]
    Encode {
        sentence_id: String,
        i: usize,
        j: usize,
        #[source]
        source: EncoderError,
    },
    #[error("word index {index} out of range for sentence {sentence_id} of {len} words")]
    WordIndex {
        sentence_id: String,
        index: usize,
        len: usize,
    },
    #[error("adjacency profile is empty (single-word sentence)")]
    EmptyProfile,
    #[error("percentile {0} outside (0, 100]")]
    Percentile(f64),
    #[error("impact matrix for {matrix} ({matrix_len} words) does not belong to sentence {sentence} ({sentence_len} words)")]
    MatrixMismatch {
        matrix: String,
        matrix_len: usize,
        sentence: String,
        sentence_len: usize,
    },
}

impl AnnotateError {
    pub fn is_backend_failure(&self) -> bool {
        match self {
            AnnotateError::Tokenize { source, .. } | AnnotateError::Encode { source, .. } => {
                source.is_backend_failure()
            }
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Euclidean,
    CosineDistance,
}

impl Metric {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            Metric::CosineDistance => {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                if na == 0.0 || nb == 0.0 {
                    return if na == nb { 0.0 } else { 1.0 };
                }
                (1.0 - dot / (na * nb)).max(0.0)
            }
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "cosine" | "cosine_distance" => Ok(Metric::CosineDistance),
            other => Err(format!("unknown metric {other:?}")),
        }
    }
}

/// Pieces of a sentence and the piece range of each word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment {
    pub pieces: Vec<String>,
    pub words: Vec<Range<usize>>,
}

impl Alignment {
    /// Uses each token's `pieces` when already filled, otherwise asks the
    /// backend tokenizer.
    pub fn compute<B: EncoderBackend + ?Sized>(sentence: &Sentence, backend: &B) -> Result<Self, AnnotateError> {
        let tokenize_err = |source| AnnotateError::Tokenize {
            sentence_id: sentence.id.clone(),
            source,
        };
        let missing: Vec<&str> = sentence
            .tokens
            .iter()
            .filter(|t| t.pieces.is_empty())
            .map(|t| t.text.as_str())
            .collect();
        let mut fresh = backend.tokenize_words(&missing).map_err(tokenize_err)?.into_iter();
        let mut pieces = Vec::new();
        let mut words = Vec::with_capacity(sentence.tokens.len());
        for tok in &sentence.tokens {
            let word_pieces = if tok.pieces.is_empty() {
                fresh.next().ok_or_else(|| {
                    tokenize_err(EncoderError::Malformed("tokenizer returned too few words".into()))
                })?
            } else {
                tok.pieces.clone()
            };
            if word_pieces.is_empty() {
                return Err(tokenize_err(EncoderError::Malformed(format!(
                    "word {:?} has no pieces",
                    tok.text
                ))));
            }
            let start = pieces.len();
            pieces.extend(word_pieces);
            words.push(start..pieces.len());
        }
        Ok(Self { pieces, words })
    }

    fn request(&self, masked_words: &[usize], want_word: usize) -> EncodeRequest {
        EncodeRequest::new(
            self.pieces.clone(),
            masked_words.iter().flat_map(|&w| self.words[w].clone()),
            self.words[want_word].clone(),
        )
    }
}

/// Word-level `t x t` impact matrix, row-major. `get(i, j)` is the impact of
/// word `j` on word `i`; the diagonal is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpactMatrix {
    pub sentence_id: String,
    pub t: usize,
    values: Vec<f64>,
}

impl ImpactMatrix {
    pub fn from_rows(sentence_id: impl Into<String>, rows: Vec<Vec<f64>>) -> Self {
        let t = rows.len();
        assert!(rows.iter().all(|r| r.len() == t), "impact matrix must be square");
        Self {
            sentence_id: sentence_id.into(),
            t,
            values: rows.into_iter().flatten().collect(),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.t + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.t..(i + 1) * self.t]
    }

    /// The superdiagonal `get(k, k + 1)`.
    pub fn adjacency_profile(&self) -> AdjacencyProfile {
        AdjacencyProfile {
            sentence_id: self.sentence_id.clone(),
            pairs: (0..self.t.saturating_sub(1)).map(|k| self.get(k, k + 1)).collect(),
        }
    }

    /// CSV with the word surfaces as header and one row per word.
    pub fn to_csv(&self, sentence: &Sentence) -> String {
        let mut out = String::new();
        let header: Vec<String> = sentence.tokens.iter().map(|t| csv_field(&t.text)).collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for i in 0..self.t {
            let row: Vec<String> = self.row(i).iter().map(|v| format!("{v}")).collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyProfile {
    pub sentence_id: String,
    pub pairs: Vec<f64>,
}

fn check_word(sentence: &Sentence, index: usize) -> Result<(), AnnotateError> {
    if index >= sentence.len() {
        return Err(AnnotateError::WordIndex {
            sentence_id: sentence.id.clone(),
            index,
            len: sentence.len(),
        });
    }
    Ok(())
}

fn mean_distance(
    alignment: &Alignment,
    i: usize,
    base: &crate::encoder::ContextVectors,
    perturbed: &crate::encoder::ContextVectors,
    metric: Metric,
) -> Result<f64, EncoderError> {
    let range = alignment.words[i].clone();
    let n = range.len() as f64;
    let mut total = 0.0;
    for p in range {
        let a = base
            .get(p)
            .ok_or_else(|| EncoderError::Malformed(format!("missing vector {p}")))?;
        let b = perturbed
            .get(p)
            .ok_or_else(|| EncoderError::Malformed(format!("missing vector {p}")))?;
        total += metric.distance(a, b);
    }
    Ok(total / n)
}

/// Impact of word `j` on word `i`, computed with two unbatched encoder calls.
pub fn word_impact<B: EncoderBackend + ?Sized>(
    sentence: &Sentence,
    i: usize,
    j: usize,
    backend: &B,
    metric: Metric,
) -> Result<f64, AnnotateError> {
    check_word(sentence, i)?;
    check_word(sentence, j)?;
    if i == j {
        return Ok(0.0);
    }
    let alignment = Alignment::compute(sentence, backend)?;
    let encode_err = |source| AnnotateError::Encode {
        sentence_id: sentence.id.clone(),
        i,
        j,
        source,
    };
    let base = backend.encode(&alignment.request(&[i], i)).map_err(encode_err)?;
    let perturbed = backend.encode(&alignment.request(&[i, j], i)).map_err(encode_err)?;
    mean_distance(&alignment, i, &base, &perturbed, metric).map_err(encode_err)
}

/// Full impact matrix from `t` single-mask requests and `t (t - 1)` pair
/// requests, sent as one batch.
pub fn build_impact_matrix<B: EncoderBackend + ?Sized>(
    sentence: &Sentence,
    backend: &B,
    metric: Metric,
) -> Result<ImpactMatrix, AnnotateError> {
    let t = sentence.len();
    if t <= 1 {
        return Ok(ImpactMatrix::from_rows(sentence.id.clone(), vec![vec![0.0; t]; t]));
    }
    let alignment = Alignment::compute(sentence, backend)?;

    // requests 0..t are the single masks; then ordered pairs row by row
    let mut requests = Vec::with_capacity(t * t);
    let mut pairs = Vec::with_capacity(t * (t - 1));
    for i in 0..t {
        requests.push(alignment.request(&[i], i));
    }
    for i in 0..t {
        for j in (0..t).filter(|&j| j != i) {
            requests.push(alignment.request(&[i, j], i));
            pairs.push((i, j));
        }
    }
    let outputs = backend.encode_batch(&requests).map_err(|e| {
        let (i, j) = match &e {
            EncoderError::Batch { index, .. } if *index < t => (*index, *index),
            EncoderError::Batch { index, .. } => pairs[index - t],
            _ => (0, 0),
        };
        AnnotateError::Encode {
            sentence_id: sentence.id.clone(),
            i,
            j,
            source: e,
        }
    })?;

    let mut values = vec![0.0; t * t];
    for (k, &(i, j)) in pairs.iter().enumerate() {
        values[i * t + j] = mean_distance(&alignment, i, &outputs[i], &outputs[t + k], metric).map_err(
            |source| AnnotateError::Encode {
                sentence_id: sentence.id.clone(),
                i,
                j,
                source,
            },
        )?;
    }
    Ok(ImpactMatrix {
        sentence_id: sentence.id.clone(),
        t,
        values,
    })
}

fn check_percentile(q: f64) -> Result<(), AnnotateError> {
    if q.is_nan() || q <= 0.0 || q > 100.0 {
        return Err(AnnotateError::Percentile(q));
    }
    Ok(())
}

/// Nearest-rank percentile: the sorted value at 1-based rank `ceil(q n / 100)`.
pub fn percentile_threshold(pairs: &[f64], q: f64) -> Result<f64, AnnotateError> {
    check_percentile(q)?;
    if pairs.is_empty() {
        return Err(AnnotateError::EmptyProfile);
    }
    let mut sorted = pairs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = ((q * n as f64) / 100.0).ceil() as usize;
    Ok(sorted[rank.clamp(1, n) - 1])
}

/// Chunks of a sentence with `pairs.len() + 1` words, joining words `k` and
/// `k + 1` when `pairs[k]` exceeds the percentile threshold.
#[allow(clippy::single_range_in_vec_init)]
pub fn segment_profile(pairs: &[f64], q: f64) -> Result<Vec<Range<usize>>, AnnotateError> {
    check_percentile(q)?;
    if pairs.is_empty() {
        return Ok(vec![0..1]);
    }
    let threshold = percentile_threshold(pairs, q)?;
    let mut chunks = Vec::new();
    let mut start = 0;
    for (k, &v) in pairs.iter().enumerate() {
        if v <= threshold {
            chunks.push(start..k + 1);
            start = k + 1;
        }
    }
    chunks.push(start..pairs.len() + 1);
    Ok(chunks)
}

pub fn segment(sentence: &Sentence, matrix: &ImpactMatrix, q: f64) -> Result<Vec<Range<usize>>, AnnotateError> {
    if matrix.sentence_id != sentence.id || matrix.t != sentence.len() {
        return Err(AnnotateError::MatrixMismatch {
            matrix: matrix.sentence_id.clone(),
            matrix_len: matrix.t,
            sentence: sentence.id.clone(),
            sentence_len: sentence.len(),
        });
    }
    segment_profile(&matrix.adjacency_profile().pairs, q)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorConfig {
    pub percentile: f64,
    pub metric: Metric,
}

impl Default for AnnotatorConfig {
    fn default() -> Self {
        Self {
            percentile: DEFAULT_PERCENTILE,
            metric: Metric::Euclidean,
        }
    }
}

/// Silver-label phrases for one sentence.
pub fn annotate<B: EncoderBackend + ?Sized>(
    sentence: &Sentence,
    backend: &B,
    config: &AnnotatorConfig,
    filter: &FilterConfig,
) -> Result<PhraseSet, AnnotateError> {
    check_percentile(config.percentile)?;
    let matrix = build_impact_matrix(sentence, backend, config.metric)?;
    let chunks = segment(sentence, &matrix, config.percentile)?;
    Ok(PhraseSet::from_spans(
        sentence.id.clone(),
        PhraseSource::Annotator,
        filter_candidates(&chunks, sentence, filter),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{CachedBackend, ReferenceBackend, MASK_PIECE};

    fn words(ws: &[&str]) -> Sentence {
        let pairs: Vec<(&str, Option<&str>)> = ws.iter().map(|w| (*w, Some("NN"))).collect();
        Sentence::from_tagged("s", &pairs)
    }

    fn dist(a: &[f64], b: &[f64]) -> f64 {
        Metric::Euclidean.distance(a, b)
    }

    #[test]
    fn single_piece_impact_matches_closed_form() {
        let b = ReferenceBackend::new(5);
        let s = words(&["alpha", "beta", "gamma", "delta"]);
        let mask = b.embedding(MASK_PIECE);
        for (i, j) in [(0usize, 1usize), (0, 3), (2, 0), (3, 1)] {
            let k = i.abs_diff(j) as f64;
            let expected = dist(&b.embedding(&s.tokens[j].text), &mask) / k;
            let got = word_impact(&s, i, j, &b, Metric::Euclidean).unwrap();
            assert!((got - expected).abs() < 1e-12, "({i},{j}) {got} vs {expected}");
        }
    }

    #[test]
    fn mask_surface_word_has_no_impact() {
        let b = ReferenceBackend::new(5);
        let s = words(&["alpha", MASK_PIECE, "gamma"]);
        assert_eq!(word_impact(&s, 0, 1, &b, Metric::Euclidean).unwrap(), 0.0);
    }

    #[test]
    fn split_word_impact_is_mean_over_pieces() {
        let b = ReferenceBackend::new(9);
        let s = words(&["energy-efficient", "ambulatory", "monitoring"]);
        // pieces: energy(0) -(1) efficient(2) ambulatory(3) monitoring(4)
        let mask = b.embedding(MASK_PIECE);
        let delta = dist(&b.embedding("monitoring"), &mask);
        let brute: f64 = [0usize, 1, 2].iter().map(|&p| delta / (4 - p) as f64).sum::<f64>() / 3.0;
        let got = word_impact(&s, 0, 2, &b, Metric::Euclidean).unwrap();
        assert!((got - brute).abs() < 1e-12);
    }

    #[test]
    fn one_word_matrix_is_zero() {
        let b = ReferenceBackend::new(1);
        let m = build_impact_matrix(&words(&["solo"]), &b, Metric::Euclidean).unwrap();
        assert_eq!(m.t, 1);
        assert_eq!(m.get(0, 0), 0.0);
    }

    #[test]
    fn matrix_is_asymmetric_and_zero_diagonal() {
        let b = ReferenceBackend::new(2);
        let m = build_impact_matrix(&words(&["a", "b", "c"]), &b, Metric::Euclidean).unwrap();
        assert!((m.get(0, 1) - m.get(1, 0)).abs() > 1e-6);
        for i in 0..3 {
            assert_eq!(m.get(i, i), 0.0);
        }
    }

    #[test]
    fn batched_cached_matches_naive() {
        let s = words(&["x", "energy-efficient", "y", "z", "w"]);
        let plain = ReferenceBackend::new(4);
        let cached = CachedBackend::new(ReferenceBackend::new(4), 1000);
        let m = build_impact_matrix(&s, &cached, Metric::Euclidean).unwrap();
        let again = build_impact_matrix(&s, &cached, Metric::Euclidean).unwrap();
        assert_eq!(m, again);
        for i in 0..s.len() {
            for j in 0..s.len() {
                let naive = word_impact(&s, i, j, &plain, Metric::Euclidean).unwrap();
                assert_eq!(m.get(i, j).to_bits(), naive.to_bits());
            }
        }
    }

    #[test]
    fn encode_failure_names_the_pair() {
        let b = ReferenceBackend::new(1).with_max_pieces(2);
        let err = build_impact_matrix(&words(&["a", "b", "c"]), &b, Metric::Euclidean).unwrap_err();
        assert!(matches!(err, AnnotateError::Encode { i: 0, j: 0, .. }));
    }

    #[test]
    fn percentile_examples() {
        assert_eq!(percentile_threshold(&[0.1, 0.2, 0.5, 0.8, 0.9], 40.0).unwrap(), 0.2);
        assert_eq!(percentile_threshold(&[0.9, 0.8, 0.5, 0.2, 0.1], 40.0).unwrap(), 0.2);
        assert_eq!(percentile_threshold(&[0.7], 40.0).unwrap(), 0.7);
        for q in [1.0, 40.0, 100.0] {
            assert_eq!(percentile_threshold(&[0.3, 0.3, 0.3], q).unwrap(), 0.3);
        }
        assert!(matches!(percentile_threshold(&[], 40.0), Err(AnnotateError::EmptyProfile)));
        assert!(percentile_threshold(&[0.1], 0.0).is_err());
        assert!(percentile_threshold(&[0.1], 100.5).is_err());
    }

    #[test]
    fn segment_example() {
        let chunks = segment_profile(&[0.9, 0.1, 0.8, 0.1, 0.7], 40.0).unwrap();
        assert_eq!(chunks, vec![0..2, 2..4, 4..6]);
    }

    #[test]
    fn two_words_never_join() {
        assert_eq!(segment_profile(&[5.0], 40.0).unwrap(), vec![0..1, 1..2]);
        assert_eq!(segment_profile(&[], 40.0).unwrap(), vec![0..1]);
    }

    #[test]
    fn segment_rejects_foreign_matrix() {
        let s = words(&["a", "b"]);
        let m = ImpactMatrix::from_rows("other", vec![vec![0.0; 2]; 2]);
        assert!(segment(&s, &m, 40.0).is_err());
    }

    #[test]
    fn cosine_distance_basics() {
        assert_eq!(Metric::CosineDistance.distance(&[1.0, 0.0], &[2.0, 0.0]), 0.0);
        assert!((Metric::CosineDistance.distance(&[1.0, 0.0], &[0.0, 1.0]) - 1.0).abs() < 1e-15);
        assert_eq!(Metric::CosineDistance.distance(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
    }

    #[test]
    fn all_stopword_sentence_yields_nothing() {
        let s = Sentence::from_tagged(
            "s",
            &[("of", Some("IN")), ("the", Some("DT")), ("and", Some("CC")), ("to", Some("TO"))],
        );
        let out = annotate(&s, &ReferenceBackend::new(1), &AnnotatorConfig::default(), &FilterConfig::default())
            .unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn csv_has_header_and_rows() {
        let s = words(&["a", "b,c"]);
        let m = ImpactMatrix::from_rows("s", vec![vec![0.0, 1.5], vec![2.0, 0.0]]);
        assert_eq!(m.to_csv(&s), "a,\"b,c\"\n0,1.5\n2,0\n");
    }
}
