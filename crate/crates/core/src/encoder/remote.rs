use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{BackendDescriptor, ContextVectors, EncodeRequest, EncoderBackend, EncoderError};

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    /// Base URL, e.g. `http://127.0.0.1:8000`.
    pub url: String,
    pub timeout: Duration,
    /// Extra attempts after a transport failure or 5xx response.
    pub retries: u32,
    /// Hidden layer to read; `None` lets the server use its last layer.
    pub layer: Option<i64>,
    /// Requests per `/encode_batch` call.
    pub batch_size: usize,
    /// Concurrent `/encode_batch` calls per `encode_batch` invocation.
    pub max_in_flight: usize,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            url: "http://127.0.0.1:8000".into(),
            timeout: Duration::from_secs(60),
            retries: 2,
            layer: None,
            batch_size: 64,
            max_in_flight: 4,
        }
    }
}

#[derive(Serialize)]
struct WireEncode<'a> {
    pieces: &'a [String],
    masked: &'a BTreeSet<usize>,
    want: &'a BTreeSet<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    layer: Option<i64>,
}

#[derive(Serialize)]
struct WireBatch<'a> {
    requests: Vec<WireEncode<'a>>,
}

#[derive(Deserialize)]
struct WireVectors {
    dim: usize,
    vectors: BTreeMap<String, Vec<f64>>,
}

#[derive(Deserialize)]
struct WireBatchResponse {
    results: Vec<WireVectors>,
}

#[derive(Serialize)]
struct WireTokenize<'a> {
    words: &'a [&'a str],
}

#[derive(Deserialize)]
struct WireTokenizeResponse {
    pieces: Vec<Vec<String>>,
}

/// Client for the encoder wire protocol (JSON over HTTP).
pub struct RemoteBackend {
    client: reqwest::blocking::Client,
    config: RemoteConfig,
    descriptor: BackendDescriptor,
}

impl RemoteBackend {
    /// Connects and fetches the service descriptor.
    pub fn connect(config: RemoteConfig) -> Result<Self, EncoderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| EncoderError::Transport(e.to_string()))?;
        let mut backend = Self {
            client,
            config,
            descriptor: BackendDescriptor {
                name: String::new(),
                dim: 0,
                mask_piece: String::new(),
                max_pieces: 0,
            },
        };
        let descriptor: BackendDescriptor = backend.post("descriptor", &serde_json::json!({}))?;
        if descriptor.dim == 0 || descriptor.max_pieces == 0 {
            return Err(EncoderError::Malformed(format!(
                "descriptor has dim {} and max_pieces {}",
                descriptor.dim, descriptor.max_pieces
            )));
        }
        backend.descriptor = descriptor;
        Ok(backend)
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn post<Req: Serialize + ?Sized, Resp: serde::de::DeserializeOwned>(
        &self,
        endpoint: &str,
        body: &Req,
    ) -> Result<Resp, EncoderError> {
        let url = format!("{}/{}", self.config.url.trim_end_matches('/'), endpoint);
        let mut attempt = 0;
        loop {
            match self.post_once(&url, body) {
                Ok(resp) => return Ok(resp),
                Err(e) if attempt < self.config.retries && retryable(&e) => {
                    log::warn!("{endpoint}: {e}; retrying");
                    std::thread::sleep(Duration::from_millis(50 << attempt.min(6)));
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn post_once<Req: Serialize + ?Sized, Resp: serde::de::DeserializeOwned>(
        &self,
        url: &str,
        body: &Req,
    ) -> Result<Resp, EncoderError> {
        let resp = self
            .client
            .post(url)
            .json(body)
            .send()
            .map_err(|e| EncoderError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| EncoderError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(EncoderError::Status {
                status: status.as_u16(),
                body: text,
            });
        }
        serde_json::from_str(&text).map_err(|e| EncoderError::Malformed(e.to_string()))
    }

    fn wire<'a>(&self, req: &'a EncodeRequest) -> WireEncode<'a> {
        WireEncode {
            pieces: &req.pieces,
            masked: &req.masked,
            want: &req.want,
            layer: self.config.layer,
        }
    }

    fn convert(&self, req: &EncodeRequest, wire: WireVectors) -> Result<ContextVectors, EncoderError> {
        let vectors = wire
            .vectors
            .into_iter()
            .map(|(k, v)| {
                k.parse::<usize>()
                    .map(|i| (i, v))
                    .map_err(|_| EncoderError::Malformed(format!("non-integer vector key {k:?}")))
            })
            .collect::<Result<BTreeMap<_, _>, _>>()?;
        let out = ContextVectors {
            dim: wire.dim,
            vectors,
        };
        out.check(req, self.descriptor.dim)?;
        Ok(out)
    }

    fn map_status(&self, req: &EncodeRequest, e: EncoderError) -> EncoderError {
        match e {
            EncoderError::Status { status: 413, .. } => EncoderError::Oversized {
                pieces: req.pieces.len(),
                max: self.descriptor.max_pieces,
            },
            EncoderError::Status { status: 400, body } => EncoderError::InvalidRequest(body),
            other => other,
        }
    }

    fn encode_chunk(&self, reqs: &[EncodeRequest], offset: usize) -> Result<Vec<ContextVectors>, EncoderError> {
        let body = WireBatch {
            requests: reqs.iter().map(|r| self.wire(r)).collect(),
        };
        let resp: WireBatchResponse = self.post("encode_batch", &body)?;
        if resp.results.len() != reqs.len() {
            return Err(EncoderError::Malformed(format!(
                "batch of {} returned {} results",
                reqs.len(),
                resp.results.len()
            )));
        }
        reqs.iter()
            .zip(resp.results)
            .enumerate()
            .map(|(k, (req, wire))| {
                self.convert(req, wire).map_err(|e| EncoderError::Batch {
                    index: offset + k,
                    source: Box::new(e),
                })
            })
            .collect()
    }
}

fn retryable(e: &EncoderError) -> bool {
    match e {
        EncoderError::Transport(_) => true,
        EncoderError::Status { status, .. } => *status >= 500,
        _ => false,
    }
}

impl EncoderBackend for RemoteBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn layer(&self) -> Option<i64> {
        self.config.layer
    }

    fn tokenize_word(&self, word: &str) -> Result<Vec<String>, EncoderError> {
        Ok(self.tokenize_words(&[word])?.pop().unwrap_or_default())
    }

    fn tokenize_words(&self, words: &[&str]) -> Result<Vec<Vec<String>>, EncoderError> {
        if words.is_empty() {
            return Ok(Vec::new());
        }
        if words.iter().any(|w| w.is_empty()) {
            return Err(EncoderError::InvalidRequest("empty word".into()));
        }
        let resp: WireTokenizeResponse = self.post("tokenize", &WireTokenize { words })?;
        if resp.pieces.len() != words.len() {
            return Err(EncoderError::Malformed(format!(
                "tokenized {} words into {} piece lists",
                words.len(),
                resp.pieces.len()
            )));
        }
        if let Some(k) = resp.pieces.iter().position(Vec::is_empty) {
            return Err(EncoderError::Malformed(format!("word {:?} has no pieces", words[k])));
        }
        Ok(resp.pieces)
    }

    fn encode(&self, req: &EncodeRequest) -> Result<ContextVectors, EncoderError> {
        req.validate(&self.descriptor)?;
        let wire: WireVectors = self
            .post("encode", &self.wire(req))
            .map_err(|e| self.map_status(req, e))?;
        self.convert(req, wire)
    }

    fn encode_batch(&self, reqs: &[EncodeRequest]) -> Result<Vec<ContextVectors>, EncoderError> {
        for (index, req) in reqs.iter().enumerate() {
            req.validate(&self.descriptor).map_err(|e| EncoderError::Batch {
                index,
                source: Box::new(e),
            })?;
        }
        let chunk = self.config.batch_size.max(1);
        let chunks: Vec<(usize, &[EncodeRequest])> = reqs
            .chunks(chunk)
            .enumerate()
            .map(|(k, c)| (k * chunk, c))
            .collect();
        let mut out = Vec::with_capacity(reqs.len());
        for wave in chunks.chunks(self.config.max_in_flight.max(1)) {
            let results: Vec<Result<Vec<ContextVectors>, EncoderError>> = std::thread::scope(|scope| {
                let handles: Vec<_> = wave
                    .iter()
                    .map(|&(offset, c)| scope.spawn(move || self.encode_chunk(c, offset)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("encode worker panicked"))
                    .collect()
            });
            for r in results {
                out.extend(r?);
            }
        }
        Ok(out)
    }
}
