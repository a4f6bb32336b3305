//! Unsupervised quality-phrase mining.
//!
//! The pipeline probes a masked language model for how much masking one word
//! shifts the representation of another, segments each sentence where
//! adjacent words are weakly related, and keeps multi-word noun phrases as
//! silver labels. Silver labels can be exported to train a sequence-to-sequence
//! generator whose output is grounded back to spans and merged in.
//! [`eval`] scores sentence-level tagging and document-level keyphrase
//! extraction.

pub mod annotator;
pub mod bridge;
pub mod encoder;
pub mod eval;
pub mod filter;
pub mod stem;
pub mod text;

pub use annotator::{annotate, build_impact_matrix, AnnotatorConfig, ImpactMatrix, Metric};
pub use encoder::{CachedBackend, EncoderBackend, ReferenceBackend, RemoteBackend, RemoteConfig};
pub use filter::FilterConfig;
pub use text::{Document, PhraseSet, PhraseSource, PhraseSpan, Sentence, Token};
