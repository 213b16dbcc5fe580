//! HTTP routes and JSON bodies.

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, Path, Query, Request, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::Router;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use dins_core::metrics::MetricReport;
use dins_core::transforms::{ClickSet, Polarity};
use dins_core::volume::{decode_raw, encode_raw, BoundingBox, Mask, RawHeader, Volume, VoxelIndex};
use dins_harness::backend::BackendKind;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::render::{contours, encode_png, extract, Axis};
use crate::state::{Event, Segmenter, Snapshot};
use crate::{ApiError, AppState, Session};

type AppResult<T> = Result<axum::Json<T>, ApiError>;

/// JSON extractor whose rejections use the service's error body.
pub struct Json<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for Json<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        axum::Json::<T>::from_request(req, state)
            .await
            .map(|axum::Json(v)| Json(v))
            .map_err(|e: JsonRejection| ApiError::BadRequest(e.body_text()))
    }
}

/// A volume as a raw+json pair with a base64 payload.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RawVolume {
    pub header: RawHeader,
    pub payload_b64: String,
}

impl RawVolume {
    pub fn encode(v: &Volume) -> Self {
        Self { header: RawHeader::for_volume(v), payload_b64: B64.encode(encode_raw(v)) }
    }

    pub fn decode(&self) -> Result<Volume, ApiError> {
        let bytes = B64.decode(&self.payload_b64).map_err(|e| ApiError::BadRequest(format!("payload is not base64: {e}")))?;
        decode_raw(&self.header, &bytes).map_err(|e| ApiError::BadRequest(e.to_string()))
    }
}

#[derive(Debug, Deserialize)]
pub struct CreateRequest {
    #[serde(flatten)]
    pub volume: RawVolume,
    /// Defaults to the server's backend.
    #[serde(default)]
    pub backend: Option<String>,
    #[serde(default)]
    pub sigma: Option<[f64; 3]>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub id: u64,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub revision: u64,
}

/// Session state as seen by a client.
#[derive(Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: u64,
    pub revision: u64,
    pub backend: BackendKind,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    /// Clicks in placement order.
    pub clicks: Vec<ClickView>,
    pub click_set: ClickSet,
    pub boxes: Vec<BoundingBox>,
    pub sigma: [f64; 3],
    pub prediction_voxels: usize,
    pub has_ground_truth: bool,
    pub events: Vec<Event>,
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
pub struct ClickView {
    pub polarity: Polarity,
    pub at: VoxelIndex,
}

impl SessionView {
    pub fn new(session: &Session, s: &Snapshot) -> Self {
        Self {
            id: session.id,
            revision: s.revision,
            backend: session.segmenter.kind(),
            dims: s.volume.dims().as_array(),
            spacing: s.volume.spacing().as_array(),
            clicks: s.inputs.clicks.iter().map(|&(polarity, at)| ClickView { polarity, at }).collect(),
            click_set: s.inputs.click_set(),
            boxes: s.inputs.boxes.clone(),
            sigma: s.inputs.exp.sigma,
            prediction_voxels: s.prediction.count(),
            has_ground_truth: s.truth.is_some(),
            events: s.events.clone(),
        }
    }
}

#[derive(Debug, Deserialize)]
pub struct ClickRequest {
    pub revision: u64,
    pub polarity: Polarity,
    pub at: VoxelIndex,
}

#[derive(Debug, Deserialize)]
pub struct BoxesRequest {
    pub revision: u64,
    pub boxes: Vec<BoundingBox>,
}

#[derive(Debug, Deserialize)]
pub struct SigmaRequest {
    pub revision: u64,
    pub sigma: [f64; 3],
}

#[derive(Debug, Deserialize)]
pub struct RevisionRequest {
    pub revision: u64,
}

#[derive(Debug, Deserialize)]
pub struct GroundTruthRequest {
    pub revision: u64,
    #[serde(flatten)]
    pub volume: RawVolume,
}

#[derive(Debug, Deserialize)]
pub struct SliceQuery {
    pub axis: Axis,
    pub index: usize,
    /// `lo,hi`; defaults to the volume's min and max.
    #[serde(default)]
    pub window: Option<String>,
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
pub struct Marker {
    pub polarity: Polarity,
    pub row: usize,
    pub col: usize,
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceView {
    pub revision: u64,
    pub axis: Axis,
    pub index: usize,
    pub rows: usize,
    pub cols: usize,
    pub window: [f32; 2],
    pub png_b64: String,
    /// Closed (row, col) polylines of the prediction.
    pub contours: Vec<Vec<[f64; 2]>>,
    pub ground_truth_contours: Vec<Vec<[f64; 2]>>,
    pub clicks: Vec<Marker>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MaskView {
    pub revision: u64,
    #[serde(flatten)]
    pub volume: RawVolume,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MetricsView {
    pub revision: u64,
    #[serde(flatten)]
    pub report: MetricReport,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(show).delete(remove))
        .route("/sessions/{id}/clicks", post(add_click))
        .route("/sessions/{id}/boxes", post(set_boxes))
        .route("/sessions/{id}/sigma", post(set_sigma))
        .route("/sessions/{id}/undo", post(undo))
        .route("/sessions/{id}/reset", post(reset))
        .route("/sessions/{id}/groundtruth", post(ground_truth))
        .route("/sessions/{id}/slice", get(slice))
        .route("/sessions/{id}/mask", get(mask))
        .route("/sessions/{id}/metrics", get(metrics))
        .with_state(state)
}

async fn create(State(app): State<Arc<AppState>>, Json(req): Json<CreateRequest>) -> Result<(StatusCode, axum::Json<Created>), ApiError> {
    let volume = Arc::new(req.volume.decode()?);
    let kind = match &req.backend {
        Some(name) => name.parse().map_err(|e: dins_harness::HarnessError| ApiError::BadRequest(e.to_string()))?,
        None => app.config.backend,
    };
    let segmenter = Segmenter::new(kind, app.config.params.clone(), app.config.model.clone())?;
    let mut exp = app.config.default_exp();
    if let Some(sigma) = req.sigma {
        exp.sigma = sigma;
        exp.validate().map_err(|e| ApiError::BadRequest(e.to_string()))?;
    }
    let snapshot = Snapshot::initial(volume.clone(), exp, &segmenter)?;
    let session = app.insert(segmenter, snapshot);
    log::info!("session {} created, dims {:?}", session.id, volume.dims().as_array());
    let body = Created { id: session.id, dims: volume.dims().as_array(), spacing: volume.spacing().as_array(), revision: 0 };
    Ok((StatusCode::CREATED, axum::Json(body)))
}

async fn show(State(app): State<Arc<AppState>>, Path(id): Path<u64>) -> AppResult<SessionView> {
    let session = app.session(id)?;
    Ok(axum::Json(SessionView::new(&session, &session.snapshot())))
}

async fn remove(State(app): State<Arc<AppState>>, Path(id): Path<u64>) -> Result<StatusCode, ApiError> {
    app.remove(id)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn commit(app: &AppState, id: u64, revision: u64, event: Event, truth: Option<Arc<Mask>>) -> AppResult<SessionView> {
    let session = app.session(id)?;
    let snapshot = session.mutate(revision, event, truth).await?;
    Ok(axum::Json(SessionView::new(&session, &snapshot)))
}

async fn add_click(State(app): State<Arc<AppState>>, Path(id): Path<u64>, Json(r): Json<ClickRequest>) -> AppResult<SessionView> {
    commit(&app, id, r.revision, Event::Click { polarity: r.polarity, at: r.at }, None).await
}

async fn set_boxes(State(app): State<Arc<AppState>>, Path(id): Path<u64>, Json(r): Json<BoxesRequest>) -> AppResult<SessionView> {
    commit(&app, id, r.revision, Event::Boxes { boxes: r.boxes }, None).await
}

async fn set_sigma(State(app): State<Arc<AppState>>, Path(id): Path<u64>, Json(r): Json<SigmaRequest>) -> AppResult<SessionView> {
    commit(&app, id, r.revision, Event::Sigma { sigma: r.sigma }, None).await
}

async fn undo(State(app): State<Arc<AppState>>, Path(id): Path<u64>, Json(r): Json<RevisionRequest>) -> AppResult<SessionView> {
    commit(&app, id, r.revision, Event::Undo, None).await
}

async fn reset(State(app): State<Arc<AppState>>, Path(id): Path<u64>, Json(r): Json<RevisionRequest>) -> AppResult<SessionView> {
    commit(&app, id, r.revision, Event::Reset, None).await
}

/// Voxels above 0.5 are foreground.
async fn ground_truth(State(app): State<Arc<AppState>>, Path(id): Path<u64>, Json(r): Json<GroundTruthRequest>) -> AppResult<SessionView> {
    let session = app.session(id)?;
    let gt = r.volume.decode()?;
    let dims = session.snapshot().volume.dims();
    if gt.dims() != dims {
        return Err(ApiError::BadRequest(format!("ground truth dims {:?} differ from volume dims {:?}", gt.dims().as_array(), dims.as_array())));
    }
    commit(&app, id, r.revision, Event::GroundTruth, Some(Arc::new(gt.threshold(0.5)))).await
}

fn parse_window(s: &str) -> Result<(f32, f32), ApiError> {
    let bad = || ApiError::BadRequest(format!("window must be lo,hi with lo < hi, got {s:?}"));
    let (lo, hi) = s.split_once(',').ok_or_else(bad)?;
    let lo: f32 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f32 = hi.trim().parse().map_err(|_| bad())?;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(bad());
    }
    Ok((lo, hi))
}

/// Renders one slice of a committed snapshot.
pub fn render_slice(s: &Snapshot, q: &SliceQuery) -> Result<SliceView, ApiError> {
    let window = match &q.window {
        Some(w) => parse_window(w)?,
        None => s.volume.min_max(),
    };
    let (rows, cols, values) = extract(&s.volume, q.axis, q.index)?;
    let png = encode_png(rows, cols, &values, window)?;
    let outline = |m: &Mask| -> Result<_, ApiError> {
        let (_, _, data) = extract(m, q.axis, q.index)?;
        Ok(contours(rows, cols, &data))
    };
    let clicks = s
        .inputs
        .clicks
        .iter()
        .filter_map(|&(polarity, v)| q.axis.project(q.index, v).map(|(row, col)| Marker { polarity, row, col }))
        .collect();
    Ok(SliceView {
        revision: s.revision,
        axis: q.axis,
        index: q.index,
        rows,
        cols,
        window: [window.0, window.1],
        png_b64: B64.encode(png),
        contours: outline(&s.prediction)?,
        ground_truth_contours: s.truth.as_deref().map(outline).transpose()?.unwrap_or_default(),
        clicks,
    })
}

async fn slice(State(app): State<Arc<AppState>>, Path(id): Path<u64>, Query(q): Query<SliceQuery>) -> AppResult<SliceView> {
    let snapshot = app.session(id)?.snapshot();
    Ok(axum::Json(render_slice(&snapshot, &q)?))
}

async fn mask(State(app): State<Arc<AppState>>, Path(id): Path<u64>) -> AppResult<MaskView> {
    let s = app.session(id)?.snapshot();
    Ok(axum::Json(MaskView { revision: s.revision, volume: RawVolume::encode(&s.prediction.to_volume()) }))
}

async fn metrics(State(app): State<Arc<AppState>>, Path(id): Path<u64>) -> AppResult<MetricsView> {
    let s = app.session(id)?.snapshot();
    let truth = s.truth.as_deref().ok_or_else(|| ApiError::BadRequest("no ground truth".into()))?;
    let clicks = s.inputs.click_set();
    let report = MetricReport::compute(&s.prediction, truth, clicks.positives.len(), clicks.negatives.len())
        .map_err(|e| ApiError::BadRequest(e.to_string()))?;
    Ok(axum::Json(MetricsView { revision: s.revision, report }))
}
