use std::num::NonZeroUsize;
use std::sync::atomic::{AtomicU64, Ordering};

use lru::LruCache;
use parking_lot::Mutex;

use super::{BackendDescriptor, ContextVectors, EncodeRequest, EncoderBackend, EncoderError};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct CacheKey {
    backend: String,
    layer: Option<i64>,
    request: EncodeRequest,
}

/// LRU cache in front of another backend.
///
/// Entries are keyed by backend name, layer and the full request, so cached
/// and uncached outputs are identical. A capacity of zero disables caching.
pub struct CachedBackend<B> {
    inner: B,
    cache: Option<Mutex<LruCache<CacheKey, ContextVectors>>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl<B: EncoderBackend> CachedBackend<B> {
    pub fn new(inner: B, capacity: usize) -> Self {
        Self {
            inner,
            cache: NonZeroUsize::new(capacity).map(|c| Mutex::new(LruCache::new(c))),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    /// `(hits, misses)` since construction.
    pub fn stats(&self) -> (u64, u64) {
        (self.hits.load(Ordering::Relaxed), self.misses.load(Ordering::Relaxed))
    }

    fn key(&self, req: &EncodeRequest) -> CacheKey {
        CacheKey {
            backend: self.inner.descriptor().name.clone(),
            layer: self.inner.layer(),
            request: req.clone(),
        }
    }
}

impl<B: EncoderBackend> EncoderBackend for CachedBackend<B> {
    fn descriptor(&self) -> &BackendDescriptor {
        self.inner.descriptor()
    }

    fn layer(&self) -> Option<i64> {
        self.inner.layer()
    }

    fn tokenize_word(&self, word: &str) -> Result<Vec<String>, EncoderError> {
        self.inner.tokenize_word(word)
    }

    fn tokenize_words(&self, words: &[&str]) -> Result<Vec<Vec<String>>, EncoderError> {
        self.inner.tokenize_words(words)
    }

    fn encode(&self, req: &EncodeRequest) -> Result<ContextVectors, EncoderError> {
        let Some(cache) = &self.cache else {
            return self.inner.encode(req);
        };
        let key = self.key(req);
        if let Some(hit) = cache.lock().get(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(hit.clone());
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let out = self.inner.encode(req)?;
        cache.lock().put(key, out.clone());
        Ok(out)
    }

    fn encode_batch(&self, reqs: &[EncodeRequest]) -> Result<Vec<ContextVectors>, EncoderError> {
        let Some(cache) = &self.cache else {
            return self.inner.encode_batch(reqs);
        };
        let keys: Vec<CacheKey> = reqs.iter().map(|r| self.key(r)).collect();
        let mut results: Vec<Option<ContextVectors>> = {
            let mut guard = cache.lock();
            keys.iter().map(|k| guard.get(k).cloned()).collect()
        };
        let miss_idx: Vec<usize> = (0..reqs.len()).filter(|&i| results[i].is_none()).collect();
        self.hits
            .fetch_add((reqs.len() - miss_idx.len()) as u64, Ordering::Relaxed);
        self.misses.fetch_add(miss_idx.len() as u64, Ordering::Relaxed);

        if !miss_idx.is_empty() {
            let misses: Vec<EncodeRequest> = miss_idx.iter().map(|&i| reqs[i].clone()).collect();
            let fetched = self.inner.encode_batch(&misses).map_err(|e| match e {
                EncoderError::Batch { index, source } => EncoderError::Batch {
                    index: miss_idx[index],
                    source,
                },
                other => other,
            })?;
            let mut guard = cache.lock();
            for (&i, out) in miss_idx.iter().zip(fetched) {
                guard.put(keys[i].clone(), out.clone());
                results[i] = Some(out);
            }
        }
        Ok(results.into_iter().map(|r| r.expect("filled above")).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::ReferenceBackend;

    fn req(words: &[&str], masked: &[usize]) -> EncodeRequest {
        EncodeRequest::new(
            words.iter().map(|s| s.to_string()).collect(),
            masked.iter().copied(),
            [0],
        )
    }

    #[test]
    fn cached_equals_uncached() {
        let plain = ReferenceBackend::new(11);
        let cached = CachedBackend::new(ReferenceBackend::new(11), 4);
        let reqs = vec![req(&["a", "b"], &[]), req(&["a", "b", "c"], &[1]), req(&["a", "b"], &[])];
        assert_eq!(cached.encode_batch(&reqs).unwrap(), plain.encode_batch(&reqs).unwrap());
        assert_eq!(cached.encode_batch(&reqs).unwrap(), plain.encode_batch(&reqs).unwrap());
        let (hits, misses) = cached.stats();
        assert_eq!(misses, 3);
        assert_eq!(hits, 3);
        assert_eq!(cached.encode(&reqs[1]).unwrap(), plain.encode(&reqs[1]).unwrap());
    }

    #[test]
    fn zero_capacity_disables() {
        let cached = CachedBackend::new(ReferenceBackend::new(1), 0);
        cached.encode(&req(&["a", "b"], &[])).unwrap();
        cached.encode(&req(&["a", "b"], &[])).unwrap();
        assert_eq!(cached.stats(), (0, 0));
    }

    #[test]
    fn batch_error_index_refers_to_caller_batch() {
        let cached = CachedBackend::new(ReferenceBackend::new(1).with_max_pieces(2), 8);
        let ok = req(&["a", "b"], &[]);
        cached.encode(&ok).unwrap();
        let reqs = vec![ok.clone(), ok, req(&["a", "b", "c"], &[])];
        match cached.encode_batch(&reqs).unwrap_err() {
            EncoderError::Batch { index, .. } => assert_eq!(index, 2),
            other => panic!("unexpected {other}"),
        }
    }
}
