//! Dual text/image embedding providers with a content-hash cache.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use base64::Engine as _;
use ivg_core::embedding::{PairEmbedding, EMBEDDING_DIM};
use ivg_core::{parse_prompt, PhraseTable};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::store::content_hash;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbedError {
    #[error("embedding provider: {0}")]
    Provider(String),
    #[error("{} record(s) failed to embed; first: record {}: {}", .0.len(), .0[0].0, .0[0].1)]
    Records(Vec<(usize, String)>),
}

fn unit_gaussian(seed: [u8; 32]) -> Vec<f64> {
    let mut rng = ChaCha8Rng::from_seed(seed);
    let mut uniform = || (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
    let mut v = Vec::with_capacity(EMBEDDING_DIM);
    while v.len() < EMBEDDING_DIM {
        let u1 = uniform().max(f64::MIN_POSITIVE);
        let u2 = uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let t = std::f64::consts::TAU * u2;
        v.push(r * t.cos());
        if v.len() < EMBEDDING_DIM {
            v.push(r * t.sin());
        }
    }
    normalize(v)
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

fn hash_seed(domain: &str, bytes: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(domain.as_bytes());
    h.update([0]);
    h.update(bytes);
    h.finalize().into()
}

/// Normalized sum of one hash-seeded unit vector per prompt token.
pub fn stub_text_vec(prompt: &str) -> Vec<f64> {
    let tokens = parse_prompt(prompt, &PhraseTable::new());
    if tokens.is_empty() {
        return unit_gaussian(hash_seed("empty-prompt", b""));
    }
    let mut sum = vec![0.0; EMBEDDING_DIM];
    for t in tokens.texts() {
        for (s, x) in sum.iter_mut().zip(unit_gaussian(hash_seed("token", t.as_bytes()))) {
            *s += x;
        }
    }
    normalize(sum)
}

pub fn stub_image_vec(bytes: &[u8]) -> Vec<f64> {
    unit_gaussian(hash_seed("image", bytes))
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
    images: Vec<String>,
}

#[derive(Deserialize)]
struct EmbedResponse {
    text_vecs: Vec<Vec<f64>>,
    image_vecs: Vec<Vec<f64>>,
}

/// Remote encoder. Request `{"texts": [..], "images": [base64 png, ..]}`,
/// response `{"text_vecs": [[512 floats], ..], "image_vecs": [..]}`.
#[derive(Debug, Clone)]
pub struct HttpProvider {
    pub url: String,
    client: reqwest::Client,
}

impl HttpProvider {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        HttpProvider {
            url: url.into(),
            client: reqwest::Client::builder()
                .timeout(timeout)
                .build()
                .expect("http client"),
        }
    }

    async fn embed(&self, texts: &[String], images: &[Vec<u8>]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>), EmbedError> {
        let b64 = base64::engine::general_purpose::STANDARD;
        let request = EmbedRequest {
            texts,
            images: images.iter().map(|b| b64.encode(b)).collect(),
        };
        let fail = |e: String| EmbedError::Provider(e);
        let response = self
            .client
            .post(&self.url)
            .json(&request)
            .send()
            .await
            .map_err(|e| fail(e.to_string()))?;
        if !response.status().is_success() {
            return Err(fail(format!("status {}", response.status())));
        }
        let body: EmbedResponse = response.json().await.map_err(|e| fail(e.to_string()))?;
        if body.text_vecs.len() != texts.len() || body.image_vecs.len() != images.len() {
            return Err(fail(format!(
                "expected {} text and {} image vectors, got {} and {}",
                texts.len(),
                images.len(),
                body.text_vecs.len(),
                body.image_vecs.len()
            )));
        }
        Ok((body.text_vecs, body.image_vecs))
    }
}

#[derive(Debug, Clone)]
pub enum Provider {
    Stub,
    Http(HttpProvider),
}

/// One image and the prompt that produced it.
#[derive(Debug, Clone)]
pub struct EmbedRecord {
    pub prompt: String,
    pub image: Arc<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedded {
    pub embeddings: Vec<PairEmbedding>,
    /// Records that fell back to stub vectors.
    pub degraded: Vec<usize>,
}

/// Provider plus a cache keyed by content hash, so repeated prompts and
/// identical image bytes are encoded once.
pub struct Embedder {
    pub provider: Provider,
    cache: Mutex<HashMap<String, Arc<Vec<f64>>>>,
}

fn text_key(prompt: &str) -> String {
    format!("t:{}", content_hash(prompt.as_bytes()))
}

fn image_key(bytes: &[u8]) -> String {
    format!("i:{}", content_hash(bytes))
}

fn check_vec(v: &[f64]) -> Result<(), String> {
    if v.len() != EMBEDDING_DIM {
        return Err(format!("vector has {} components, expected {EMBEDDING_DIM}", v.len()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err("vector has non-finite components".into());
    }
    Ok(())
}

impl Embedder {
    pub fn new(provider: Provider) -> Self {
        Embedder {
            provider,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn cached_len(&self) -> usize {
        self.cache.lock().unwrap().len()
    }

    /// One embedding per record. A provider failure fails every record it
    /// left unencoded; with `allow_degraded` those records get stub vectors
    /// instead and are listed in [`Embedded::degraded`].
    pub async fn embed_records(&self, records: &[EmbedRecord], allow_degraded: bool) -> Result<Embedded, EmbedError> {
        let mut missing_texts: Vec<String> = Vec::new();
        let mut missing_images: Vec<Vec<u8>> = Vec::new();
        {
            let cache = self.cache.lock().unwrap();
            let mut seen = std::collections::HashSet::new();
            for r in records {
                let tk = text_key(&r.prompt);
                if !cache.contains_key(&tk) && seen.insert(tk) {
                    missing_texts.push(r.prompt.clone());
                }
                let ik = image_key(&r.image);
                if !cache.contains_key(&ik) && seen.insert(ik) {
                    missing_images.push(r.image.to_vec());
                }
            }
        }

        let encoded = match &self.provider {
            _ if missing_texts.is_empty() && missing_images.is_empty() => Ok((Vec::new(), Vec::new())),
            Provider::Stub => Ok((
                missing_texts.iter().map(|t| stub_text_vec(t)).collect(),
                missing_images.iter().map(|b| stub_image_vec(b)).collect(),
            )),
            Provider::Http(http) => http.embed(&missing_texts, &missing_images).await,
        };

        let mut failures: HashMap<String, String> = HashMap::new();
        {
            let mut cache = self.cache.lock().unwrap();
            match encoded {
                Ok((texts, images)) => {
                    for (t, v) in missing_texts.iter().zip(texts) {
                        match check_vec(&v) {
                            Ok(()) => drop(cache.insert(text_key(t), Arc::new(v))),
                            Err(e) => drop(failures.insert(text_key(t), e)),
                        }
                    }
                    for (b, v) in missing_images.iter().zip(images) {
                        match check_vec(&v) {
                            Ok(()) => drop(cache.insert(image_key(b), Arc::new(v))),
                            Err(e) => drop(failures.insert(image_key(b), e)),
                        }
                    }
                }
                Err(e) => {
                    for t in &missing_texts {
                        failures.insert(text_key(t), e.to_string());
                    }
                    for b in &missing_images {
                        failures.insert(image_key(b), e.to_string());
                    }
                }
            }
        }

        let cache = self.cache.lock().unwrap();
        let mut out = Embedded {
            embeddings: Vec::with_capacity(records.len()),
            degraded: Vec::new(),
        };
        let mut errors = Vec::new();
        for (i, r) in records.iter().enumerate() {
            let (tk, ik) = (text_key(&r.prompt), image_key(&r.image));
            match (cache.get(&tk), cache.get(&ik)) {
                (Some(t), Some(im)) => out.embeddings.push(PairEmbedding {
                    text_vec: t.to_vec(),
                    image_vec: im.to_vec(),
                }),
                (t, im) => {
                    let reason = failures
                        .get(&tk)
                        .or_else(|| failures.get(&ik))
                        .cloned()
                        .unwrap_or_else(|| "not encoded".into());
                    if !allow_degraded {
                        errors.push((i, reason));
                        continue;
                    }
                    out.degraded.push(i);
                    out.embeddings.push(PairEmbedding {
                        text_vec: t.map_or_else(|| stub_text_vec(&r.prompt), |v| v.to_vec()),
                        image_vec: im.map_or_else(|| stub_image_vec(&r.image), |v| v.to_vec()),
                    });
                }
            }
        }
        if errors.is_empty() {
            Ok(out)
        } else {
            Err(EmbedError::Records(errors))
        }
    }
}
