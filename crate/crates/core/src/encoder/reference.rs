use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use parking_lot::RwLock;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{BackendDescriptor, ContextVectors, EncodeRequest, EncoderBackend, EncoderError};

pub const DEFAULT_DIM: usize = 32;
pub const DEFAULT_MAX_PIECES: usize = 512;
pub const MASK_PIECE: &str = "[MASK]";

/// Deterministic closed-form encoder.
///
/// Every piece gets a fixed unit vector `emb(p)` drawn from a ChaCha stream
/// seeded by the global seed and the FNV-1a hash of the piece. The vector at
/// position `i` is `sum over j != i of emb(effective_j) / |i - j|`, where a
/// masked position contributes `emb(mask)`. Position `i` never sees its own
/// piece, so impacts between words are known analytically.
pub struct ReferenceBackend {
    descriptor: BackendDescriptor,
    seed: u64,
    table: RwLock<HashMap<String, Arc<[f64]>>>,
}

impl ReferenceBackend {
    pub fn new(seed: u64) -> Self {
        Self::with_dim(seed, DEFAULT_DIM)
    }

    pub fn with_dim(seed: u64, dim: usize) -> Self {
        assert!(dim > 0, "dimension must be positive");
        Self {
            descriptor: BackendDescriptor {
                name: format!("reference-d{dim}-s{seed}"),
                dim,
                mask_piece: MASK_PIECE.to_owned(),
                max_pieces: DEFAULT_MAX_PIECES,
            },
            seed,
            table: RwLock::new(HashMap::new()),
        }
    }

    pub fn with_max_pieces(mut self, max_pieces: usize) -> Self {
        self.descriptor.max_pieces = max_pieces;
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The unit embedding of `piece`.
    pub fn embedding(&self, piece: &str) -> Arc<[f64]> {
        if let Some(v) = self.table.read().get(piece) {
            return Arc::clone(v);
        }
        let v: Arc<[f64]> = piece_embedding(self.seed, piece, self.descriptor.dim).into();
        self.table
            .write()
            .entry(piece.to_owned())
            .or_insert_with(|| Arc::clone(&v));
        v
    }
}

pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn piece_embedding(seed: u64, piece: &str, dim: usize) -> Vec<f64> {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&fnv1a64(piece.as_bytes()).to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    // a zero draw has probability zero, but keep the vector finite regardless
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

impl EncoderBackend for ReferenceBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn tokenize_word(&self, word: &str) -> Result<Vec<String>, EncoderError> {
        if word.is_empty() {
            return Err(EncoderError::InvalidRequest("empty word".into()));
        }
        let mut pieces = Vec::new();
        let mut current = String::new();
        for ch in word.chars() {
            if ch == '-' {
                if !current.is_empty() {
                    pieces.push(std::mem::take(&mut current));
                }
                pieces.push("-".to_owned());
            } else {
                current.push(ch);
            }
        }
        if !current.is_empty() {
            pieces.push(current);
        }
        Ok(pieces)
    }

    fn encode(&self, req: &EncodeRequest) -> Result<ContextVectors, EncoderError> {
        req.validate(&self.descriptor)?;
        let dim = self.descriptor.dim;
        let mask = self.embedding(&self.descriptor.mask_piece);
        let effective: Vec<Arc<[f64]>> = req
            .pieces
            .iter()
            .enumerate()
            .map(|(j, p)| {
                if req.masked.contains(&j) {
                    Arc::clone(&mask)
                } else {
                    self.embedding(p)
                }
            })
            .collect();

        let mut vectors = BTreeMap::new();
        for &i in &req.want {
            let mut acc = vec![0.0; dim];
            for (j, emb) in effective.iter().enumerate() {
                if j == i {
                    continue;
                }
                let w = 1.0 / i.abs_diff(j) as f64;
                for (a, e) in acc.iter_mut().zip(emb.iter()) {
                    *a += e * w;
                }
            }
            vectors.insert(i, acc);
        }
        Ok(ContextVectors { dim, vectors })
    }
}
