//! HTTP front end for the per-sample reward.
//!
//! `POST /v1/reward` scores a batch of raw rollouts; `GET /v1/health`
//! reports whether the ground-truth store has finished loading. The store
//! is read-only once loaded, so requests never contend on it.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::BufReader;
use std::net::SocketAddr;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use rxndp_core::idmap::{map_from_value, IdentifierMap};
use rxndp_core::lines::read_annotations;
use rxndp_core::matching::{Counts, Thresholds};
use rxndp_core::model::{parse_ground_truth, DiagramAnnotation};
use rxndp_core::prediction::OutputFormat;
use rxndp_core::reward::{sample_reward, RewardResult, RewardSpec};

pub const DEFAULT_MAX_BATCH: usize = 512;
pub const DEFAULT_PORT: u16 = 8757;
pub const PORT_ENV: &str = "RXN_REWARD_PORT";
const BODY_LIMIT: usize = 256 << 20;

/// An annotation with the identifier map derived from it.
#[derive(Debug, Clone)]
pub struct StoredGt {
    pub annotation: DiagramAnnotation,
    pub map: IdentifierMap,
}

#[derive(Debug, Default)]
pub struct GtStore {
    entries: HashMap<String, StoredGt>,
}

impl GtStore {
    pub fn from_annotations(annotations: Vec<DiagramAnnotation>) -> Result<Self, String> {
        let mut entries = HashMap::with_capacity(annotations.len());
        for a in annotations {
            let id = a.image_id.clone();
            let map = IdentifierMap::from_annotation(&a);
            if entries.insert(id.clone(), StoredGt { annotation: a, map }).is_some() {
                return Err(format!("duplicate image_id {id:?} in ground truth"));
            }
        }
        Ok(GtStore { entries })
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let f = File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let anns = read_annotations(BufReader::new(f)).map_err(|e| format!("{}: {e}", path.display()))?;
        GtStore::from_annotations(anns)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, image_id: &str) -> Option<&StoredGt> {
        self.entries.get(image_id)
    }
}

#[derive(Debug)]
pub struct ServiceState {
    pub spec: RewardSpec,
    pub max_batch: usize,
    store: OnceLock<Result<GtStore, String>>,
}

impl ServiceState {
    pub fn new(spec: RewardSpec, max_batch: usize) -> Self {
        ServiceState {
            spec,
            max_batch,
            store: OnceLock::new(),
        }
    }

    /// Installs the store; later calls are ignored.
    pub fn set_store(&self, store: Result<GtStore, String>) {
        let _ = self.store.set(store);
    }

    pub fn store(&self) -> Option<&GtStore> {
        self.store.get().and_then(|r| r.as_ref().ok())
    }

    pub fn health(&self) -> HealthReport {
        let (status, error) = match self.store.get() {
            None => ("initializing", None),
            Some(Ok(_)) => ("ready", None),
            Some(Err(e)) => ("failed", Some(e.clone())),
        };
        HealthReport {
            status,
            loaded_gt_count: self.store().map_or(0, GtStore::len),
            spec: self.spec,
            max_batch: self.max_batch,
            error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HealthReport {
    pub status: &'static str,
    pub loaded_gt_count: usize,
    pub spec: RewardSpec,
    pub max_batch: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub sample_id: String,
    pub raw: String,
    pub format: OutputFormat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identifier_map: Option<Value>,
}

/// Per-request replacement for the service's reward settings. Missing
/// fields keep the service default.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SpecOverride {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iou: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ned: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRequest {
    pub samples: Vec<Sample>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<SpecOverride>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleErrorKind {
    UnknownImageId,
    StoreNotReady,
    MissingGroundTruth,
    InvalidGroundTruth,
    InvalidIdentifierMap,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleError {
    pub kind: SampleErrorKind,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleDetail {
    pub sample_id: String,
    #[serde(flatten)]
    pub result: RewardResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<SampleError>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Timing {
    pub elapsed_ms: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RewardResponse {
    pub rewards: Vec<f64>,
    pub details: Vec<SampleDetail>,
    pub spec: RewardSpec,
    pub timing: Timing,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnvelopeError {
    #[error("malformed request: {0}")]
    Malformed(String),
    #[error("duplicate sample_id {0:?}")]
    DuplicateSampleId(String),
    #[error("batch of {size} samples exceeds the maximum of {max}")]
    BatchTooLarge { size: usize, max: usize },
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
}

fn effective_spec(base: RewardSpec, o: Option<&SpecOverride>) -> Result<RewardSpec, EnvelopeError> {
    let Some(o) = o else { return Ok(base) };
    let mut spec = match &o.ratio {
        Some(r) => r.parse::<RewardSpec>().map_err(EnvelopeError::InvalidSpec)?,
        None => base,
    };
    spec.soft = base.soft;
    spec.hybrid = base.hybrid;
    if o.iou.is_some() || o.ned.is_some() {
        let t = Thresholds::new(o.iou.unwrap_or(base.hybrid.iou), o.ned.unwrap_or(base.hybrid.ned))
            .map_err(EnvelopeError::InvalidSpec)?;
        spec = spec.with_thresholds(t);
    }
    Ok(spec)
}

fn zero_result() -> RewardResult {
    RewardResult {
        reward: 0.0,
        soft_component: 0.0,
        hybrid_component: 0.0,
        parse_ok: false,
        failure: None,
        soft: Counts::default(),
        hybrid: Counts::default(),
        unresolved: Vec::new(),
    }
}

fn sample_error(kind: SampleErrorKind, message: impl Into<String>) -> (RewardResult, Option<SampleError>) {
    let e = SampleError {
        kind,
        message: message.into(),
    };
    (zero_result(), Some(e))
}

fn score_sample(state: &ServiceState, s: &Sample, spec: &RewardSpec) -> (RewardResult, Option<SampleError>) {
    use SampleErrorKind::*;
    let inline_map = match &s.identifier_map {
        Some(v) => match map_from_value(v) {
            Ok(m) => Some(m),
            Err(e) => return sample_error(InvalidIdentifierMap, e.to_string()),
        },
        None => None,
    };
    if let Some(v) = &s.ground_truth {
        let gt = match serde_json::to_vec(v).map_err(|e| e.to_string()).and_then(|b| {
            parse_ground_truth(&b).map_err(|e| e.to_string())
        }) {
            Ok(gt) => gt,
            Err(e) => return sample_error(InvalidGroundTruth, e),
        };
        let map = inline_map.unwrap_or_else(|| IdentifierMap::from_annotation(&gt));
        return (sample_reward(&s.raw, &gt, &map, s.format, spec), None);
    }
    let Some(id) = &s.image_id else {
        return sample_error(MissingGroundTruth, "sample has neither image_id nor ground_truth");
    };
    let Some(store) = state.store() else {
        return sample_error(StoreNotReady, "ground-truth store is not loaded");
    };
    let Some(stored) = store.get(id) else {
        return sample_error(UnknownImageId, format!("no ground truth for image_id {id:?}"));
    };
    let map = inline_map.as_ref().unwrap_or(&stored.map);
    (sample_reward(&s.raw, &stored.annotation, map, s.format, spec), None)
}

/// Parses and scores one request body. Only envelope problems are errors;
/// anything wrong with a single sample scores that sample 0.
pub fn handle_reward_batch(state: &ServiceState, body: &[u8]) -> Result<RewardResponse, EnvelopeError> {
    let start = Instant::now();
    let req: RewardRequest = serde_json::from_slice(body).map_err(|e| EnvelopeError::Malformed(e.to_string()))?;
    if req.samples.len() > state.max_batch {
        return Err(EnvelopeError::BatchTooLarge {
            size: req.samples.len(),
            max: state.max_batch,
        });
    }
    let mut seen = HashSet::with_capacity(req.samples.len());
    for s in &req.samples {
        if !seen.insert(s.sample_id.as_str()) {
            return Err(EnvelopeError::DuplicateSampleId(s.sample_id.clone()));
        }
    }
    let spec = effective_spec(state.spec, req.spec.as_ref())?;
    let details: Vec<SampleDetail> = req
        .samples
        .par_iter()
        .map(|s| {
            let (result, error) = catch_unwind(AssertUnwindSafe(|| score_sample(state, s, &spec)))
                .unwrap_or_else(|_| sample_error(SampleErrorKind::Internal, "scoring panicked"));
            SampleDetail {
                sample_id: s.sample_id.clone(),
                result,
                error,
            }
        })
        .collect();
    Ok(RewardResponse {
        rewards: details.iter().map(|d| d.result.reward).collect(),
        timing: Timing {
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
            samples: details.len(),
        },
        details,
        spec,
    })
}

async fn reward_route(State(state): State<Arc<ServiceState>>, body: Bytes) -> Response {
    let result = tokio::task::spawn_blocking(move || handle_reward_batch(&state, &body)).await;
    match result {
        Ok(Ok(resp)) => Json(resp).into_response(),
        Ok(Err(e)) => {
            let body = serde_json::json!({ "error": e.to_string() });
            (StatusCode::BAD_REQUEST, Json(body)).into_response()
        }
        Err(e) => {
            log::error!("reward worker failed: {e}");
            (StatusCode::INTERNAL_SERVER_ERROR, Json(serde_json::json!({ "error": "internal error" }))).into_response()
        }
    }
}

async fn health_route(State(state): State<Arc<ServiceState>>) -> Json<HealthReport> {
    Json(state.health())
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/v1/reward", post(reward_route))
        .route("/v1/health", get(health_route))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(state)
}

/// Loads the store on a background thread; health reports `initializing`
/// until it finishes.
pub fn spawn_loader(state: Arc<ServiceState>, path: PathBuf) -> std::thread::JoinHandle<()> {
    std::thread::spawn(move || {
        let store = GtStore::load(&path);
        match &store {
            Ok(s) => log::info!("loaded {} ground-truth images from {}", s.len(), path.display()),
            Err(e) => log::error!("ground-truth load failed: {e}"),
        }
        state.set_store(store);
    })
}

/// The port to listen on: `RXN_REWARD_PORT` when set, else `flag`.
pub fn resolve_port(flag: u16) -> Result<u16, String> {
    match std::env::var(PORT_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| format!("{PORT_ENV}={v:?} is not a port number")),
        Err(_) => Ok(flag),
    }
}

pub async fn serve(listener: tokio::net::TcpListener, state: Arc<ServiceState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

/// Blocking entry point: binds `addr`, starts loading `gt` (if any) and
/// serves until the process is stopped.
pub fn run(state: Arc<ServiceState>, gt: Option<PathBuf>, addr: SocketAddr) -> std::io::Result<()> {
    match gt {
        Some(path) => {
            spawn_loader(state.clone(), path);
        }
        None => state.set_store(Ok(GtStore::default())),
    }
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        log::info!("listening on {}", listener.local_addr()?);
        serve(listener, state).await
    })
}
