//! Contextual encoders with maskable positions.
//!
//! A backend maps a sequence of subword pieces, some of them replaced by the
//! mask piece, to one vector per requested position. Two implementations
//! exist: [`ReferenceBackend`], a deterministic closed-form encoder used for
//! testing and offline runs, and [`RemoteBackend`], a client for an HTTP
//! service hosting a real masked language model. [`CachedBackend`] wraps
//! either one with an LRU cache.

mod cache;
mod reference;
mod remote;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use cache::CachedBackend;
pub use reference::{ReferenceBackend, DEFAULT_DIM, MASK_PIECE};
pub use remote::{RemoteBackend, RemoteConfig};

#[derive(Debug, thiserror::Error)]
pub enum EncoderError {
    #[error("request has {pieces} pieces, backend accepts at most {max}")]
    Oversized { pieces: usize, max: usize },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("server returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("batch element {index}: {source}")]
    Batch {
        index: usize,
        #[source]
        source: Box<EncoderError>,
    },
}

impl EncoderError {
    /// True for failures of the transport or remote service, as opposed to
    /// a malformed request built by the caller.
    pub fn is_backend_failure(&self) -> bool {
        match self {
            EncoderError::Batch { source, .. } => source.is_backend_failure(),
            EncoderError::Oversized { .. } | EncoderError::InvalidRequest(_) => false,
            _ => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub name: String,
    pub dim: usize,
    pub mask_piece: String,
    pub max_pieces: usize,
}

/// Pieces to encode, which of them to mask and which vectors to return.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EncodeRequest {
    pub pieces: Vec<String>,
    pub masked: BTreeSet<usize>,
    pub want: BTreeSet<usize>,
}

impl EncodeRequest {
    pub fn new(
        pieces: Vec<String>,
        masked: impl IntoIterator<Item = usize>,
        want: impl IntoIterator<Item = usize>,
    ) -> Self {
        Self {
            pieces,
            masked: masked.into_iter().collect(),
            want: want.into_iter().collect(),
        }
    }

    /// Checks index bounds and the size limit of `descriptor`.
    pub fn validate(&self, descriptor: &BackendDescriptor) -> Result<(), EncoderError> {
        let n = self.pieces.len();
        if n > descriptor.max_pieces {
            return Err(EncoderError::Oversized {
                pieces: n,
                max: descriptor.max_pieces,
            });
        }
        if self.want.is_empty() {
            return Err(EncoderError::InvalidRequest("want is empty".into()));
        }
        if let Some(&i) = self.masked.iter().chain(&self.want).find(|&&i| i >= n) {
            return Err(EncoderError::InvalidRequest(format!(
                "index {i} out of range for {n} pieces"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextVectors {
    pub dim: usize,
    pub vectors: BTreeMap<usize, Vec<f64>>,
}

impl ContextVectors {
    pub fn get(&self, index: usize) -> Option<&[f64]> {
        self.vectors.get(&index).map(Vec::as_slice)
    }

    /// Checks that every wanted index is present with `dim` finite components.
    pub fn check(&self, req: &EncodeRequest, dim: usize) -> Result<(), EncoderError> {
        if self.dim != dim {
            return Err(EncoderError::DimMismatch {
                expected: dim,
                actual: self.dim,
            });
        }
        for &i in &req.want {
            let v = self
                .vectors
                .get(&i)
                .ok_or_else(|| EncoderError::Malformed(format!("missing vector for index {i}")))?;
            if v.len() != dim {
                return Err(EncoderError::DimMismatch {
                    expected: dim,
                    actual: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(EncoderError::Malformed(format!("non-finite component at index {i}")));
            }
        }
        Ok(())
    }
}

pub trait EncoderBackend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    /// Hidden layer the vectors come from, when the backend exposes a choice.
    fn layer(&self) -> Option<i64> {
        None
    }

    fn tokenize_word(&self, word: &str) -> Result<Vec<String>, EncoderError>;

    fn tokenize_words(&self, words: &[&str]) -> Result<Vec<Vec<String>>, EncoderError> {
        words.iter().map(|w| self.tokenize_word(w)).collect()
    }

    fn encode(&self, req: &EncodeRequest) -> Result<ContextVectors, EncoderError>;

    /// Element-wise [`encode`](Self::encode), order preserved. A failing
    /// element fails the batch with its index attached.
    fn encode_batch(&self, reqs: &[EncodeRequest]) -> Result<Vec<ContextVectors>, EncoderError> {
        reqs.iter()
            .enumerate()
            .map(|(index, req)| {
                self.encode(req).map_err(|e| EncoderError::Batch {
                    index,
                    source: Box::new(e),
                })
            })
            .collect()
    }
}

impl<B: EncoderBackend + ?Sized> EncoderBackend for Box<B> {
    fn descriptor(&self) -> &BackendDescriptor {
        (**self).descriptor()
    }
    fn layer(&self) -> Option<i64> {
        (**self).layer()
    }
    fn tokenize_word(&self, word: &str) -> Result<Vec<String>, EncoderError> {
        (**self).tokenize_word(word)
    }
    fn tokenize_words(&self, words: &[&str]) -> Result<Vec<Vec<String>>, EncoderError> {
        (**self).tokenize_words(words)
    }
    fn encode(&self, req: &EncodeRequest) -> Result<ContextVectors, EncoderError> {
        (**self).encode(req)
    }
    fn encode_batch(&self, reqs: &[EncodeRequest]) -> Result<Vec<ContextVectors>, EncoderError> {
        (**self).encode_batch(reqs)
    }
}

impl<B: EncoderBackend + ?Sized> EncoderBackend for std::sync::Arc<B> {
    fn descriptor(&self) -> &BackendDescriptor {
        (**self).descriptor()
    }
    fn layer(&self) -> Option<i64> {
        (**self).layer()
    }
    fn tokenize_word(&self, word: &str) -> Result<Vec<String>, EncoderError> {
        (**self).tokenize_word(word)
    }
    fn tokenize_words(&self, words: &[&str]) -> Result<Vec<Vec<String>>, EncoderError> {
        (**self).tokenize_words(words)
    }
    fn encode(&self, req: &EncodeRequest) -> Result<ContextVectors, EncoderError> {
        (**self).encode(req)
    }
    fn encode_batch(&self, reqs: &[EncodeRequest]) -> Result<Vec<ContextVectors>, EncoderError> {
        (**self).encode_batch(reqs)
    }
}
