//! Text-to-image backends.
//!
//! `Backend::Stub` paints a deterministic color field per image. `Backend::Http`
//! talks to a txt2img server using the common `/sdapi/v1/txt2img` JSON shape.

use std::time::Duration;

use base64::Engine as _;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::store::png_dimensions;

pub const DEFAULT_MAX_BATCH: usize = 8;
pub const DEFAULT_RETRY_AFTER: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub n: usize,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenerationError {
    #[error("batch size {n} is outside 1..={max}")]
    BatchSize { n: usize, max: usize },
    #[error("image size {width}x{height} is not a positive multiple of 8")]
    Dimensions { width: u32, height: u32 },
    #[error("backend unavailable: {reason}")]
    Unavailable { reason: String, retry_after: Duration },
    #[error("backend rejected the request ({status}): {body}")]
    Rejected { status: u16, body: String },
    #[error("bad backend response: {0}")]
    BadResponse(String),
}

impl GenerationError {
    pub fn retry_after(&self) -> Option<Duration> {
        match self {
            GenerationError::Unavailable { retry_after, .. } => Some(*retry_after),
            _ => None,
        }
    }
}

impl GenerationRequest {
    pub fn validate(&self, max_batch: usize) -> Result<(), GenerationError> {
        if self.n == 0 || self.n > max_batch {
            return Err(GenerationError::BatchSize { n: self.n, max: max_batch });
        }
        let ok = |d: u32| d > 0 && d.is_multiple_of(8) && d <= 4096;
        if !ok(self.width) || !ok(self.height) {
            return Err(GenerationError::Dimensions {
                width: self.width,
                height: self.height,
            });
        }
        Ok(())
    }
}

/// Color-field image for one batch slot, a pure function of
/// `(prompt, seed, index, width, height)`.
pub fn stub_image(prompt: &str, seed: u64, index: usize, width: u32, height: u32) -> Vec<u8> {
    let mut h = Sha256::new();
    h.update(prompt.as_bytes());
    h.update([0]);
    h.update(seed.to_le_bytes());
    h.update((index as u64).to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(h.finalize().into());

    let mut color = || {
        let v = rng.next_u32();
        [v as u8, (v >> 8) as u8, (v >> 16) as u8]
    };
    let (a, b, c) = (color(), color(), color());
    let angle = (rng.next_u32() as f64 / u32::MAX as f64) * std::f64::consts::TAU;
    let (dx, dy) = (angle.cos(), angle.sin());
    let cx = rng.next_u32() as f64 / u32::MAX as f64;
    let cy = rng.next_u32() as f64 / u32::MAX as f64;
    let radius = 0.15 + 0.25 * (rng.next_u32() as f64 / u32::MAX as f64);

    let (w, hgt) = (width as usize, height as usize);
    let mut pixels = Vec::with_capacity(w * hgt * 3);
    for y in 0..hgt {
        for x in 0..w {
            let u = (x as f64 + 0.5) / w as f64;
            let v = (y as f64 + 0.5) / hgt as f64;
            let t = ((u - 0.5) * dx + (v - 0.5) * dy + 0.71) / 1.42;
            let in_disc = (u - cx).powi(2) + (v - cy).powi(2) < radius * radius;
            for k in 0..3 {
                let base = a[k] as f64 * (1.0 - t) + b[k] as f64 * t;
                let px = if in_disc { (base + c[k] as f64) / 2.0 } else { base };
                pixels.push(px.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    encode_png(&pixels, width, height)
}

fn encode_png(rgb: &[u8], width: u32, height: u32) -> Vec<u8> {
    let mut out = Vec::new();
    let mut encoder = png::Encoder::new(&mut out, width, height);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().expect("in-memory png header");
    writer.write_image_data(rgb).expect("in-memory png data");
    writer.finish().expect("in-memory png");
    out
}

#[derive(Debug, Clone)]
pub struct HttpBackend {
    pub url: String,
    pub timeout: Duration,
    client: reqwest::Client,
}

#[derive(Serialize)]
struct Txt2ImgRequest<'a> {
    prompt: &'a str,
    seed: u64,
    batch_size: usize,
    n_iter: usize,
    width: u32,
    height: u32,
}

#[derive(Deserialize)]
struct Txt2ImgResponse {
    images: Vec<String>,
}

impl HttpBackend {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        HttpBackend {
            url: url.into().trim_end_matches('/').to_owned(),
            timeout,
            client: reqwest::Client::builder()
                .timeout(timeout)
                .build()
                .expect("http client"),
        }
    }

    async fn generate(&self, req: &GenerationRequest) -> Result<Vec<Vec<u8>>, GenerationError> {
        let unavailable = |reason: String, retry_after| GenerationError::Unavailable { reason, retry_after };
        let response = self
            .client
            .post(format!("{}/sdapi/v1/txt2img", self.url))
            .json(&Txt2ImgRequest {
                prompt: &req.prompt,
                seed: req.seed,
                batch_size: req.n,
                n_iter: 1,
                width: req.width,
                height: req.height,
            })
            .send()
            .await
            .map_err(|e| unavailable(e.to_string(), DEFAULT_RETRY_AFTER))?;

        let status = response.status();
        if status.is_server_error() || status.as_u16() == 429 {
            let retry_after = response
                .headers()
                .get(reqwest::header::RETRY_AFTER)
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse::<u64>().ok())
                .map_or(DEFAULT_RETRY_AFTER, Duration::from_secs);
            return Err(unavailable(format!("status {status}"), retry_after));
        }
        if !status.is_success() {
            let body = response.text().await.unwrap_or_default();
            return Err(GenerationError::Rejected {
                status: status.as_u16(),
                body,
            });
        }
        let body: Txt2ImgResponse = response
            .json()
            .await
            .map_err(|e| if e.is_timeout() {
                unavailable(e.to_string(), DEFAULT_RETRY_AFTER)
            } else {
                GenerationError::BadResponse(e.to_string())
            })?;
        if body.images.len() < req.n {
            return Err(GenerationError::BadResponse(format!(
                "expected {} images, got {}",
                req.n,
                body.images.len()
            )));
        }
        body.images
            .iter()
            .take(req.n)
            .map(|b64| {
                let data = b64.rsplit_once(',').map_or(b64.as_str(), |(_, d)| d);
                let bytes = base64::engine::general_purpose::STANDARD
                    .decode(data.trim())
                    .map_err(|e| GenerationError::BadResponse(e.to_string()))?;
                let dims = png_dimensions(&bytes).map_err(GenerationError::BadResponse)?;
                if dims != (req.width, req.height) {
                    return Err(GenerationError::BadResponse(format!(
                        "image is {}x{}, requested {}x{}",
                        dims.0, dims.1, req.width, req.height
                    )));
                }
                Ok(bytes)
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub enum Backend {
    Stub,
    Http(HttpBackend),
}

impl Backend {
    pub fn model_tag(&self) -> String {
        match self {
            Backend::Stub => "stub".into(),
            Backend::Http(h) => h.url.clone(),
        }
    }
}

/// Validates requests and forwards them to the configured backend.
#[derive(Debug, Clone)]
pub struct Gateway {
    pub backend: Backend,
    pub max_batch: usize,
}

impl Gateway {
    pub fn new(backend: Backend) -> Self {
        Gateway {
            backend,
            max_batch: DEFAULT_MAX_BATCH,
        }
    }

    pub fn validate(&self, req: &GenerationRequest) -> Result<(), GenerationError> {
        req.validate(self.max_batch)
    }

    pub async fn generate(&self, req: &GenerationRequest) -> Result<Vec<Vec<u8>>, GenerationError> {
        self.validate(req)?;
        match &self.backend {
            Backend::Stub => Ok((0..req.n)
                .map(|i| stub_image(&req.prompt, req.seed, i, req.width, req.height))
                .collect()),
            Backend::Http(h) => h.generate(req).await,
        }
    }
}
