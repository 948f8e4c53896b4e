//! Blocking JSON client for the model host's `/health`, `/score` and
//! `/detect` endpoints.

use std::io::Cursor;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::OnceLock;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use image::{ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bundle::{ExplanationBundle, Task};
use crate::metrics::{ScoreError, Scorer};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClientError {
    #[error("{url}: timed out")]
    Timeout { url: String },
    #[error("{url}: {message}")]
    Transport { url: String, message: String },
    /// 4xx: retrying the same request cannot succeed.
    #[error("{url}: HTTP {status}: {message}")]
    Rejected {
        url: String,
        status: u16,
        message: String,
    },
    #[error("{url}: HTTP {status}: {message}")]
    Server {
        url: String,
        status: u16,
        message: String,
    },
    #[error("{url}: malformed response: {message}")]
    Protocol { url: String, message: String },
    #[error("model host is not usable: {0}")]
    Unhealthy(String),
}

impl ClientError {
    pub fn is_retriable(&self) -> bool {
        matches!(
            self,
            ClientError::Timeout { .. } | ClientError::Transport { .. } | ClientError::Server { .. }
        )
    }
}

impl From<ClientError> for ScoreError {
    fn from(e: ClientError) -> Self {
        if e.is_retriable() {
            ScoreError::Transient(e.to_string())
        } else {
            ScoreError::Permanent(e.to_string())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerConfig {
    /// Base URL, e.g. `http://127.0.0.1:8500`.
    pub endpoint: String,
    /// Expected model; checked against `/health` when set.
    #[serde(default)]
    pub model_id: Option<String>,
    pub timeout_ms: u64,
    pub max_batch: usize,
    /// Extra attempts after a retriable failure.
    pub retries: u32,
}

impl ScorerConfig {
    pub fn new(endpoint: &str) -> Self {
        Self {
            endpoint: endpoint.trim_end_matches('/').to_string(),
            model_id: None,
            timeout_ms: 30_000,
            max_batch: 32,
            retries: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub model_id: String,
    pub task: Task,
    pub status: String,
}

/// A detection as reported by `/detect`, also used as scoring reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectedObject {
    /// `[x0, y0, x1, y1]`.
    pub bbox: [f64; 4],
    pub score: f64,
    pub class_label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_probs: Option<Vec<f64>>,
}

/// What a perturbed image is compared against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScoreReference {
    /// Original detections, matched by the host.
    Detection { objects: Vec<DetectedObject> },
    /// Originally predicted class.
    Classification { class_label: String },
}

impl ScoreReference {
    /// Reference built from the objects recorded in a bundle.
    pub fn from_bundle(bundle: &ExplanationBundle, task: Task) -> Self {
        match task {
            Task::Detection => ScoreReference::Detection {
                objects: bundle
                    .objects_in_order()
                    .into_iter()
                    .map(|o| DetectedObject {
                        bbox: [o.bbox.x0, o.bbox.y0, o.bbox.x1, o.bbox.y1],
                        score: o.score,
                        class_label: o.class_label.clone(),
                        class_probs: None,
                    })
                    .collect(),
            },
            Task::Classification => ScoreReference::Classification {
                class_label: bundle
                    .objects
                    .first()
                    .map(|o| o.class_label.clone())
                    .unwrap_or_default(),
            },
        }
    }
}

#[derive(Debug, Serialize)]
struct ScoreRequest<'a> {
    request_id: String,
    task: Task,
    reference: &'a ScoreReference,
    images: &'a [String],
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    threshold: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct ScoreResponse {
    scores: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct DetectRequest {
    image: String,
}

#[derive(Debug, Deserialize)]
struct DetectResponse {
    objects: Vec<DetectedObject>,
}

/// Lossless PNG, base64-encoded.
pub fn encode_png_base64(image: &RgbImage) -> String {
    let mut buf = Cursor::new(Vec::new());
    image
        .write_to(&mut buf, ImageFormat::Png)
        .expect("PNG encoding to memory");
    BASE64.encode(buf.into_inner())
}

pub fn decode_png_base64(text: &str) -> Option<RgbImage> {
    let bytes = BASE64.decode(text).ok()?;
    image::load_from_memory_with_format(&bytes, ImageFormat::Png)
        .ok()
        .map(|i| i.to_rgb8())
}

pub struct ScorerClient {
    config: ScorerConfig,
    agent: ureq::Agent,
    health: OnceLock<Health>,
    next_request: AtomicU64,
}

impl ScorerClient {
    pub fn new(config: ScorerConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            config,
            agent,
            health: OnceLock::new(),
            next_request: AtomicU64::new(0),
        }
    }

    pub fn config(&self) -> &ScorerConfig {
        &self.config
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.config.endpoint, path)
    }

    fn classify(url: &str, err: ureq::Error) -> ClientError {
        match err {
            ureq::Error::Timeout(_) => ClientError::Timeout { url: url.into() },
            ureq::Error::Io(e) if e.kind() == std::io::ErrorKind::TimedOut => {
                ClientError::Timeout { url: url.into() }
            }
            ureq::Error::Json(e) => ClientError::Protocol {
                url: url.into(),
                message: e.to_string(),
            },
            other => ClientError::Transport {
                url: url.into(),
                message: other.to_string(),
            },
        }
    }

    fn handle<T: serde::de::DeserializeOwned>(
        url: &str,
        result: Result<ureq::http::Response<ureq::Body>, ureq::Error>,
    ) -> Result<T, ClientError> {
        let mut resp = result.map_err(|e| Self::classify(url, e))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Self::classify(url, e))?;
        if status >= 400 {
            let message = server_message(&body);
            return Err(if status < 500 {
                ClientError::Rejected {
                    url: url.into(),
                    status,
                    message,
                }
            } else {
                ClientError::Server {
                    url: url.into(),
                    status,
                    message,
                }
            });
        }
        serde_json::from_str(&body).map_err(|e| ClientError::Protocol {
            url: url.into(),
            message: e.to_string(),
        })
    }

    fn with_retries<T>(&self, mut f: impl FnMut() -> Result<T, ClientError>) -> Result<T, ClientError> {
        let mut attempt = 0;
        loop {
            match f() {
                Err(e) if e.is_retriable() && attempt < self.config.retries => {
                    attempt += 1;
                    log::warn!("retrying after {e} (attempt {attempt})");
                }
                other => return other,
            }
        }
    }

    /// `GET /health`; fails unless the status is `ok` and the model matches.
    pub fn health(&self) -> Result<Health, ClientError> {
        let url = self.url("/health");
        let health: Health =
            self.with_retries(|| Self::handle(&url, self.agent.get(&url).call()))?;
        if health.status != "ok" {
            return Err(ClientError::Unhealthy(format!("status {:?}", health.status)));
        }
        if let Some(expected) = &self.config.model_id {
            if &health.model_id != expected {
                return Err(ClientError::Unhealthy(format!(
                    "serving model {:?}, expected {expected:?}",
                    health.model_id
                )));
            }
        }
        Ok(health)
    }

    fn ensure_healthy(&self) -> Result<&Health, ClientError> {
        if let Some(h) = self.health.get() {
            return Ok(h);
        }
        let h = self.health()?;
        Ok(self.health.get_or_init(|| h))
    }

    /// Scores images in chunks of at most `max_batch`, preserving order.
    pub fn score(
        &self,
        task: Task,
        reference: &ScoreReference,
        images: &[RgbImage],
        seed: u64,
        threshold: Option<f64>,
    ) -> Result<Vec<f64>, ClientError> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        self.ensure_healthy()?;
        let url = self.url("/score");
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(self.config.max_batch.max(1)) {
            let encoded: Vec<String> = chunk.iter().map(encode_png_base64).collect();
            let request = ScoreRequest {
                request_id: format!("req-{}", self.next_request.fetch_add(1, Ordering::Relaxed)),
                task,
                reference,
                images: &encoded,
                seed,
                threshold,
            };
            let resp: ScoreResponse =
                self.with_retries(|| Self::handle(&url, self.agent.post(&url).send_json(&request)))?;
            if resp.scores.len() != chunk.len() {
                return Err(ClientError::Protocol {
                    url,
                    message: format!("{} scores for {} images", resp.scores.len(), chunk.len()),
                });
            }
            if let Some(bad) = resp.scores.iter().find(|s| !s.is_finite()) {
                return Err(ClientError::Protocol {
                    url,
                    message: format!("non-finite score {bad}"),
                });
            }
            out.extend(resp.scores);
        }
        Ok(out)
    }

    /// `POST /detect` on one image.
    pub fn detect(&self, image: &RgbImage) -> Result<Vec<DetectedObject>, ClientError> {
        self.ensure_healthy()?;
        let url = self.url("/detect");
        let request = DetectRequest {
            image: encode_png_base64(image),
        };
        let resp: DetectResponse =
            self.with_retries(|| Self::handle(&url, self.agent.post(&url).send_json(&request)))?;
        Ok(resp.objects)
    }

    /// A [`Scorer`] for the curves of one image.
    pub fn bind<'a>(&'a self, context: ScoreContext) -> BoundScorer<'a> {
        BoundScorer {
            client: self,
            context,
        }
    }
}

/// Everything besides the images that a `/score` request carries.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreContext {
    pub task: Task,
    pub reference: ScoreReference,
    pub seed: u64,
    pub threshold: Option<f64>,
}

pub struct BoundScorer<'a> {
    client: &'a ScorerClient,
    context: ScoreContext,
}

impl Scorer for BoundScorer<'_> {
    fn score_batch(&self, images: &[RgbImage]) -> Result<Vec<f64>, ScoreError> {
        let c = &self.context;
        Ok(self
            .client
            .score(c.task, &c.reference, images, c.seed, c.threshold)?)
    }

    fn max_batch(&self) -> usize {
        self.client.config.max_batch.max(1)
    }
}

/// Message from a JSON error body (`error`, `detail` or `message`), else
/// the raw text.
fn server_message(body: &str) -> String {
    if let Ok(serde_json::Value::Object(map)) = serde_json::from_str::<serde_json::Value>(body) {
        for key in ["error", "detail", "message"] {
            match map.get(key) {
                Some(serde_json::Value::String(s)) => return s.clone(),
                Some(other) if !other.is_null() => return other.to_string(),
                _ => {}
            }
        }
    }
    body.trim().to_string()
}
