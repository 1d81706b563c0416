//! HTTP service for labeling sessions driven by a human oracle.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use activeseed::active::{fit_initial_model, ActiveError, Checkpoint, PalSession, StrategyKind, Weights};
use activeseed::dataset::{stratified_kfold, AttributeKind, FoldSplit, SampleId};
use activeseed::kernels::KernelKind;
use activeseed::mixture::{MixtureModel, ViConfig, ViGrid};
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::manifest::{CellSettings, LoadedDataset};
use crate::CliError;

/// Points of pool context sent with a scatter view.
const SCATTER_CONTEXT: usize = 2000;

#[derive(Debug, Clone, Default)]
pub struct ServeConfig {
    pub vi_grid: ViGrid,
    pub vi: ViConfig,
    pub folds: usize,
    pub seed: u64,
    pub settings: CellSettings,
    /// Sessions are written here after every change when set.
    pub checkpoint_dir: Option<PathBuf>,
}

struct Entry {
    dataset: Arc<LoadedDataset>,
    session: PalSession,
}

pub struct AppState {
    datasets: BTreeMap<String, Arc<LoadedDataset>>,
    cfg: ServeConfig,
    sessions: Mutex<HashMap<u64, Arc<Mutex<Entry>>>>,
    next_id: AtomicU64,
    models: Mutex<HashMap<(String, usize), (FoldSplit, MixtureModel)>>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }

    fn not_found(what: &str, id: impl std::fmt::Display) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, format!("unknown {what} {id}"))
    }
}

impl From<ActiveError> for ApiError {
    fn from(e: ActiveError) -> Self {
        let status = match e {
            ActiveError::Invalid(_)
            | ActiveError::NotQueried(_)
            | ActiveError::MissingLabel(_)
            | ActiveError::BadLabel { .. } => StatusCode::BAD_REQUEST,
            ActiveError::Finished => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateSession {
    pub dataset: String,
    pub strategy: StrategyKind,
    pub kernel: KernelKind,
    #[serde(default)]
    pub budget: Option<usize>,
    /// Queries per round.
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub fold: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuerySample {
    pub id: SampleId,
    pub features: Vec<f64>,
    pub render: Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Queries {
    pub round: usize,
    pub finished: bool,
    pub samples: Vec<QuerySample>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelBatch {
    pub labels: BTreeMap<SampleId, usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Accepted {
    pub accepted: usize,
    pub next_round: usize,
    pub finished: bool,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n: usize,
    pub test_acc: f64,
    pub train_acc: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Weights>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub dataset: String,
    pub strategy: StrategyKind,
    pub kernel: KernelKind,
    pub round: usize,
    pub labeled_count: usize,
    pub budget: usize,
    pub finished: bool,
    pub learning_curve: Vec<CurvePoint>,
    pub weights_4ds: Option<Weights>,
    pub final_accuracy: Option<f64>,
}

impl AppState {
    pub fn new(datasets: Vec<LoadedDataset>, cfg: ServeConfig) -> Self {
        AppState {
            datasets: datasets.into_iter().map(|d| (d.entry.name.clone(), Arc::new(d))).collect(),
            cfg,
            sessions: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(1),
            models: Mutex::new(HashMap::new()),
        }
    }

    /// Replays every checkpoint found in the checkpoint directory.
    pub fn restore(&self) -> Result<usize, CliError> {
        let Some(dir) = &self.cfg.checkpoint_dir else {
            return Ok(0);
        };
        if !dir.exists() {
            return Ok(0);
        }
        let mut restored = 0;
        for f in std::fs::read_dir(dir)? {
            let path = f?.path();
            let Some(id) = path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse::<u64>().ok()) else {
                continue;
            };
            let cp: Checkpoint = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
            let Some(d) = self.datasets.get(&cp.dataset) else {
                tracing::warn!("skipping checkpoint {}: unknown dataset {}", path.display(), cp.dataset);
                continue;
            };
            let session = PalSession::resume(Arc::clone(&d.data), cp)?;
            self.sessions.lock().expect("session map").insert(
                id,
                Arc::new(Mutex::new(Entry {
                    dataset: Arc::clone(d),
                    session,
                })),
            );
            self.next_id.fetch_max(id + 1, Ordering::SeqCst);
            restored += 1;
        }
        Ok(restored)
    }

    fn entry(&self, id: &str) -> Result<(u64, Arc<Mutex<Entry>>), ApiError> {
        let key: u64 = id.parse().map_err(|_| ApiError::not_found("session", id))?;
        let map = self.sessions.lock().expect("session map");
        map.get(&key).cloned().map(|e| (key, e)).ok_or_else(|| ApiError::not_found("session", id))
    }

    fn initial_model(&self, d: &LoadedDataset, fold: usize) -> Result<(FoldSplit, MixtureModel), ApiError> {
        let key = (d.entry.name.clone(), fold);
        if let Some(hit) = self.models.lock().expect("model cache").get(&key) {
            return Ok(hit.clone());
        }
        let internal = |e: String| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e);
        let folds = self.cfg.folds.max(2);
        if fold >= folds {
            return Err(ApiError::new(StatusCode::BAD_REQUEST, format!("fold {fold} out of {folds}")));
        }
        let split = stratified_kfold(&d.data, folds, self.cfg.seed).map_err(|e| internal(e.to_string()))?.swap_remove(fold);
        let vi = ViConfig {
            seed: self.cfg.seed,
            ..self.cfg.vi.clone()
        };
        let (_, model, _) =
            fit_initial_model(&d.data, &split.pool, &self.cfg.vi_grid, &vi).map_err(|e| internal(e.to_string()))?;
        let value = (split, model);
        self.models.lock().expect("model cache").insert(key, value.clone());
        Ok(value)
    }

    fn save(&self, id: u64, session: &PalSession) -> Result<(), ApiError> {
        let Some(dir) = &self.cfg.checkpoint_dir else {
            return Ok(());
        };
        let write = || -> Result<(), CliError> {
            std::fs::create_dir_all(dir)?;
            let tmp = dir.join(format!("{id}.json.tmp"));
            std::fs::write(&tmp, serde_json::to_vec(&session.checkpoint())?)?;
            std::fs::rename(&tmp, dir.join(format!("{id}.json")))?;
            Ok(())
        };
        write().map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("checkpoint: {e}")))
    }

    fn create(&self, req: CreateSession) -> Result<Created, ApiError> {
        let d = self.datasets.get(&req.dataset).cloned().ok_or_else(|| ApiError::not_found("dataset", &req.dataset))?;
        let (split, model) = self.initial_model(&d, req.fold.unwrap_or(0))?;
        let mut cfg = self.cfg.settings.config(req.strategy, req.kernel, req.budget.unwrap_or(d.entry.budget), self.cfg.seed);
        if req.k.is_some() {
            cfg.query_size = req.k;
        }
        let session = PalSession::new(Arc::clone(&d.data), split, model, cfg)?;
        let id = self.next_id.fetch_add(1, Ordering::SeqCst);
        self.save(id, &session)?;
        self.sessions
            .lock()
            .expect("session map")
            .insert(id, Arc::new(Mutex::new(Entry { dataset: d, session })));
        Ok(Created {
            session_id: id.to_string(),
        })
    }

    fn queries(&self, id: &str) -> Result<Queries, ApiError> {
        let (_, entry) = self.entry(id)?;
        let mut e = entry.lock().expect("session");
        let round = e.session.round() + 1;
        if e.session.is_finished() {
            return Ok(Queries {
                round,
                finished: true,
                samples: Vec::new(),
            });
        }
        let ids = e.session.next_queries()?;
        let samples = ids
            .iter()
            .map(|&id| QuerySample {
                id,
                features: e.dataset.data.samples[id].continuous.clone(),
                render: render(&e.dataset, &e.session, id),
            })
            .collect();
        Ok(Queries {
            round,
            finished: false,
            samples,
        })
    }

    fn labels(&self, id: &str, batch: LabelBatch) -> Result<Accepted, ApiError> {
        let (key, entry) = self.entry(id)?;
        let mut e = entry.lock().expect("session");
        let answers: Vec<(SampleId, usize)> = batch.labels.into_iter().collect();
        let record = e.session.submit(&answers)?;
        self.save(key, &e.session)?;
        Ok(Accepted {
            accepted: answers.len(),
            next_round: e.session.round() + 1,
            finished: e.session.is_finished(),
            test_accuracy: record.test_accuracy,
        })
    }

    fn state(&self, id: &str) -> Result<SessionState, ApiError> {
        let (key, entry) = self.entry(id)?;
        let e = entry.lock().expect("session");
        let s = &e.session;
        let four_ds = s.config().strategy == StrategyKind::FourDs;
        Ok(SessionState {
            session_id: key.to_string(),
            dataset: e.dataset.entry.name.clone(),
            strategy: s.config().strategy,
            kernel: s.config().kernel,
            round: s.round(),
            labeled_count: s.labeled().len(),
            budget: s.config().budget,
            finished: s.is_finished(),
            learning_curve: s
                .rounds()
                .iter()
                .map(|r| CurvePoint {
                    n: r.labeled,
                    test_acc: r.test_accuracy,
                    train_acc: r.train_accuracy,
                    weights: r.weights,
                })
                .collect(),
            weights_4ds: four_ds.then(|| s.weights()),
            final_accuracy: s.is_finished().then(|| s.rounds().last().map(|r| r.test_accuracy)).flatten(),
        })
    }

    fn roster(&self) -> Vec<Value> {
        self.datasets
            .values()
            .map(|d| {
                let schema = &d.raw.schema;
                let attributes: Vec<Value> = schema
                    .attributes
                    .iter()
                    .map(|a| match &a.kind {
                        AttributeKind::Continuous => json!({"name": a.name, "kind": "continuous"}),
                        AttributeKind::Categorical { categories } => {
                            json!({"name": a.name, "kind": "categorical", "categories": categories})
                        }
                    })
                    .collect();
                json!({
                    "name": d.entry.name,
                    "samples": d.data.len(),
                    "features": d.data.layout().n_continuous,
                    "classes": schema.label.classes,
                    "attributes": if d.images.is_some() { Vec::new() } else { attributes },
                    "render": render_kind(d),
                    "budget": d.entry.budget,
                })
            })
            .collect()
    }
}

fn render_kind(d: &LoadedDataset) -> &'static str {
    let layout = d.raw.layout();
    if d.images.is_some() {
        "image"
    } else if layout.n_continuous == 2 && layout.n_categorical() == 0 {
        "scatter2d"
    } else {
        "table"
    }
}

fn render(d: &LoadedDataset, session: &PalSession, id: SampleId) -> Value {
    let kind = render_kind(d);
    let payload = match kind {
        "image" => {
            let img = d.images.as_ref().expect("image kind");
            json!({"rows": img.rows, "cols": img.cols, "pixels": img.image(id)})
        }
        "scatter2d" => {
            let xy = |i: SampleId| &d.raw.samples[i].continuous;
            let pool = session.pool();
            let step = pool.len().div_ceil(SCATTER_CONTEXT).max(1);
            let context: Vec<&Vec<f64>> = pool.iter().step_by(step).map(|&i| xy(i)).collect();
            let labeled: Vec<Value> = session
                .labeled()
                .iter()
                .map(|&(i, c)| json!([xy(i)[0], xy(i)[1], c]))
                .collect();
            json!({
                "point": xy(id),
                "pool": context,
                "labeled": labeled,
                "classes": d.raw.schema.label.classes,
            })
        }
        _ => {
            let sample = &d.raw.samples[id];
            let mut cont = sample.continuous.iter();
            let mut cats = d.raw.schema.decode_categories(sample).into_iter();
            let rows: Vec<Value> = d
                .raw
                .schema
                .attributes
                .iter()
                .map(|a| match a.kind {
                    AttributeKind::Continuous => json!({"name": a.name, "value": cont.next()}),
                    AttributeKind::Categorical { .. } => json!({"name": a.name, "value": cats.next()}),
                })
                .collect();
            json!({ "attributes": rows })
        }
    };
    json!({ "kind": kind, "payload": payload })
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map(Json)
}

async fn create_session(State(st): State<Arc<AppState>>, Json(req): Json<CreateSession>) -> Result<(StatusCode, Json<Created>), ApiError> {
    let created = blocking(move || st.create(req)).await?;
    Ok((StatusCode::CREATED, created))
}

async fn get_queries(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Queries> {
    blocking(move || st.queries(&id)).await
}

async fn post_labels(State(st): State<Arc<AppState>>, Path(id): Path<String>, Json(batch): Json<LabelBatch>) -> ApiResult<Accepted> {
    blocking(move || st.labels(&id, batch)).await
}

async fn get_state(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<SessionState> {
    blocking(move || st.state(&id)).await
}

async fn list_datasets(State(st): State<Arc<AppState>>) -> Json<Vec<Value>> {
    Json(st.roster())
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/datasets", get(list_datasets))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/queries", get(get_queries))
        .route("/sessions/{id}/labels", post(post_labels))
        .route("/sessions/{id}/state", get(get_state))
        .with_state(state)
}

/// Serves until interrupted.
pub async fn serve(state: Arc<AppState>, port: u16) -> Result<(), CliError> {
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port))
        .await
        .map_err(|e| CliError::Bind(port, e))?;
    tracing::info!("listening on port {port}");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
