//! Client for a promptable segmenter.
//!
//! The toolkit never touches image pixels. A backend receives the image
//! reference and one box prompt per grounded role and answers with one mask
//! per prompt, in prompt order.
//!
//! HTTP: `POST {endpoint}/segment` with
//! `{image_ref, width, height, boxes: [{role, x1, y1, x2, y2}]}`; the reply is
//! the mask file schema, optionally with a `backend_id` field.
//! `GET {endpoint}/probe` answers `{backend_id, max_prompts?}`.
//!
//! File: the request JSON is written to `<dir>/<stem>.request.json` and the
//! backend is expected to drop `<dir>/<stem>.response.json`.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{box_to_mask, BoundingBox, EntityMask, MaskSet};

pub const BOX_FILL_ID: &str = "box-fill";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Error)]
pub enum SegmentError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("segmenter unreachable after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("segmenter timed out after {0:?}")]
    Timeout(Duration),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("file exchange: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub role: String,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentRequest {
    pub image_ref: String,
    pub width: usize,
    pub height: usize,
    pub prompts: Vec<Prompt>,
}

impl SegmentRequest {
    pub fn validate(&self) -> Result<(), SegmentError> {
        if self.prompts.is_empty() {
            return Err(SegmentError::InvalidRequest("no prompts".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(SegmentError::InvalidRequest("image dimensions must be positive".into()));
        }
        Ok(())
    }

    fn wire(&self) -> WireRequest<'_> {
        WireRequest {
            image_ref: &self.image_ref,
            width: self.width,
            height: self.height,
            boxes: self
                .prompts
                .iter()
                .map(|p| WireBox {
                    role: &p.role,
                    x1: p.bbox.x1,
                    y1: p.bbox.y1,
                    x2: p.bbox.x2,
                    y2: p.bbox.y2,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Serialize)]
struct WireRequest<'a> {
    image_ref: &'a str,
    width: usize,
    height: usize,
    boxes: Vec<WireBox<'a>>,
}

#[derive(Debug, Serialize)]
struct WireBox<'a> {
    role: &'a str,
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentResponse {
    /// One mask per prompt, same order.
    pub entities: Vec<EntityMask>,
    pub backend_id: String,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HttpBackend {
    pub endpoint: String,
    pub timeout: Duration,
    /// Extra attempts after a failed connection.
    pub retries: u32,
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>) -> Self {
        HttpBackend {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            timeout: DEFAULT_TIMEOUT,
            retries: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FileBackend {
    pub dir: PathBuf,
    pub timeout: Duration,
    pub poll_interval: Duration,
}

impl FileBackend {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        FileBackend {
            dir: dir.into(),
            timeout: DEFAULT_TIMEOUT,
            poll_interval: Duration::from_millis(50),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum Backend {
    /// Masks are the rasterized prompt boxes.
    #[default]
    BoxFill,
    Http(HttpBackend),
    File(FileBackend),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Capability {
    pub reachable: bool,
    pub backend_id: String,
    pub max_prompts: Option<usize>,
}

#[derive(Debug, Deserialize)]
struct ProbeReply {
    backend_id: String,
    #[serde(default)]
    max_prompts: Option<usize>,
}

impl Backend {
    pub fn segment(&self, request: &SegmentRequest) -> Result<SegmentResponse, SegmentError> {
        request.validate()?;
        let started = Instant::now();
        let (entities, backend_id) = match self {
            Backend::BoxFill => (box_fill(request)?, BOX_FILL_ID.to_string()),
            Backend::Http(h) => http_segment(h, request)?,
            Backend::File(f) => file_segment(f, request)?,
        };
        check_alignment(request, &entities)?;
        Ok(SegmentResponse {
            entities,
            backend_id,
            elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
        })
    }

    /// Reports reachability; never fails.
    pub fn probe(&self) -> Capability {
        match self {
            Backend::BoxFill => Capability {
                reachable: true,
                backend_id: BOX_FILL_ID.into(),
                max_prompts: None,
            },
            Backend::Http(h) => {
                let reply = client(h.timeout).and_then(|c| {
                    c.get(format!("{}/probe", h.endpoint))
                        .send()
                        .and_then(|r| r.error_for_status())
                        .and_then(|r| r.json::<ProbeReply>())
                        .map_err(|e| e.to_string())
                });
                match reply {
                    Ok(p) => Capability {
                        reachable: true,
                        backend_id: p.backend_id,
                        max_prompts: p.max_prompts,
                    },
                    Err(_) => Capability {
                        reachable: false,
                        backend_id: "http".into(),
                        max_prompts: None,
                    },
                }
            }
            Backend::File(f) => Capability {
                reachable: f.dir.is_dir(),
                backend_id: "file".into(),
                max_prompts: None,
            },
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            Backend::BoxFill => BOX_FILL_ID,
            Backend::Http(_) => "http",
            Backend::File(_) => "file",
        }
    }
}

fn box_fill(request: &SegmentRequest) -> Result<Vec<EntityMask>, SegmentError> {
    request
        .prompts
        .iter()
        .map(|p| {
            let raster = box_to_mask(&p.bbox, request.width, request.height)
                .map_err(|e| SegmentError::InvalidRequest(e.to_string()))?;
            if let Some(w) = raster.warning {
                log::warn!("{}: {w}", p.role);
            }
            Ok(EntityMask {
                role: p.role.clone(),
                mask: raster.mask,
                confidence: 1.0,
            })
        })
        .collect()
}

fn check_alignment(request: &SegmentRequest, entities: &[EntityMask]) -> Result<(), SegmentError> {
    if entities.len() != request.prompts.len() {
        return Err(SegmentError::Protocol(format!(
            "{} masks for {} prompts",
            entities.len(),
            request.prompts.len()
        )));
    }
    for (i, (e, p)) in entities.iter().zip(&request.prompts).enumerate() {
        if e.role != p.role {
            return Err(SegmentError::Protocol(format!(
                "mask {i} labelled {:?}, prompt was {:?}",
                e.role, p.role
            )));
        }
        if e.mask.width() != request.width || e.mask.height() != request.height {
            return Err(SegmentError::Protocol(format!(
                "mask {i} is {}x{}, image is {}x{}",
                e.mask.width(),
                e.mask.height(),
                request.width,
                request.height
            )));
        }
    }
    Ok(())
}

fn decode_reply(body: &str) -> Result<(Vec<EntityMask>, Option<String>), SegmentError> {
    let mut value: serde_json::Value =
        serde_json::from_str(body).map_err(|e| SegmentError::Protocol(format!("malformed reply: {e}")))?;
    let backend_id = value
        .as_object_mut()
        .and_then(|o| o.remove("backend_id"))
        .and_then(|v| v.as_str().map(str::to_string));
    let set: MaskSet =
        serde_json::from_value(value).map_err(|e| SegmentError::Protocol(format!("invalid mask set: {e}")))?;
    Ok((set.entities, backend_id))
}

fn client(timeout: Duration) -> Result<reqwest::blocking::Client, String> {
    reqwest::blocking::Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| e.to_string())
}

fn http_segment(h: &HttpBackend, request: &SegmentRequest) -> Result<(Vec<EntityMask>, String), SegmentError> {
    let client = client(h.timeout).map_err(|message| SegmentError::Transport { attempts: 0, message })?;
    let url = format!("{}/segment", h.endpoint);
    let body = request.wire();
    let mut attempts = 0;
    loop {
        attempts += 1;
        match client.post(&url).json(&body).send() {
            Ok(resp) => {
                let status = resp.status();
                let text = resp.text().map_err(|e| {
                    if e.is_timeout() {
                        SegmentError::Timeout(h.timeout)
                    } else {
                        SegmentError::Protocol(e.to_string())
                    }
                })?;
                if !status.is_success() {
                    return Err(SegmentError::Protocol(format!("status {status}: {text}")));
                }
                let (entities, id) = decode_reply(&text)?;
                return Ok((entities, id.unwrap_or_else(|| "http".into())));
            }
            Err(e) if e.is_timeout() => return Err(SegmentError::Timeout(h.timeout)),
            Err(e) if attempts > h.retries => {
                return Err(SegmentError::Transport {
                    attempts,
                    message: e.to_string(),
                })
            }
            Err(_) => {
                let jitter = rand::rng().random_range(50..150);
                std::thread::sleep(Duration::from_millis(jitter));
            }
        }
    }
}

static FILE_SEQ: AtomicU64 = AtomicU64::new(0);

fn file_stem(image_ref: &str) -> String {
    let base = Path::new(image_ref)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let clean: String = base
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!(
        "{clean}-{}-{}",
        std::process::id(),
        FILE_SEQ.fetch_add(1, Ordering::Relaxed)
    )
}

fn file_segment(f: &FileBackend, request: &SegmentRequest) -> Result<(Vec<EntityMask>, String), SegmentError> {
    let stem = file_stem(&request.image_ref);
    let req_path = f.dir.join(format!("{stem}.request.json"));
    let resp_path = f.dir.join(format!("{stem}.response.json"));
    let tmp = f.dir.join(format!("{stem}.request.json.tmp"));
    std::fs::write(&tmp, serde_json::to_vec(&request.wire()).expect("request serialization"))?;
    std::fs::rename(&tmp, &req_path)?;
    let deadline = Instant::now() + f.timeout;
    loop {
        match std::fs::read_to_string(&resp_path) {
            Ok(body) => {
                let _ = std::fs::remove_file(&resp_path);
                let _ = std::fs::remove_file(&req_path);
                let (entities, id) = decode_reply(&body)?;
                return Ok((entities, id.unwrap_or_else(|| "file".into())));
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(e.into()),
        }
        if Instant::now() >= deadline {
            let _ = std::fs::remove_file(&req_path);
            return Err(SegmentError::Timeout(f.timeout));
        }
        std::thread::sleep(f.poll_interval);
    }
}
