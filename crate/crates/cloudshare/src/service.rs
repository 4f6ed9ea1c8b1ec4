//! Management service.
//!
//! The simulation lives on its own thread. Request handlers send closures
//! over a single command channel and await the reply, so connections are
//! served concurrently while every mutation is applied in order, between
//! events. The clock only moves on `POST /v1/sim/step`.
//!
//! | method | path | body |
//! |---|---|---|
//! | GET  | `/v1/managers` | |
//! | GET  | `/v1/managers/{name}` | |
//! | POST | `/v1/managers/{name}/suspend`, `/resume` | |
//! | GET  | `/v1/projects/{id}/quota` | |
//! | PUT  | `/v1/projects/{id}/quota` | `{"vcpus": 8, "memory_mb": 16384}` |
//! | GET  | `/v1/queue` | |
//! | GET  | `/v1/nodes` | |
//! | POST | `/v1/nodes/{id}/transition` | `{"target": "cloud", "tenant": "A", "ttl": 600}` |
//! | GET  | `/v1/sim` | |
//! | POST | `/v1/sim/step` | `{"until": 3600}` or `{"seconds": 60}` |
//! | GET  | `/v1/metrics/latest` | |
//! | GET  | `/v1/summary` | |

use std::collections::BTreeSet;
use std::thread;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cloudshare_core::director::{NodeState, Partition, TransitionRequest};
use cloudshare_core::dispatch::ProjectQuota;
use cloudshare_core::queue::Journal;
use cloudshare_core::sim::{Manager, ManagerDescriptor, ManagerStatus, MetricsFrame, QueuedRequest, Simulation, Summary};
use cloudshare_core::{Error, NodeId, ProjectId, ResourceVector, SimTime};
use serde::{Deserialize, Serialize};
use tokio::sync::{mpsc, oneshot};

pub type ServiceSim = Simulation<Box<dyn Journal + Send>>;
type Job = Box<dyn FnOnce(&mut ServiceSim) + Send>;

/// Sends work to the simulation thread.
#[derive(Clone)]
pub struct SimHandle {
    tx: mpsc::UnboundedSender<Job>,
}

impl SimHandle {
    /// Moves `sim` onto a new thread that runs until every handle is dropped.
    pub fn spawn(mut sim: ServiceSim) -> (SimHandle, thread::JoinHandle<()>) {
        let (tx, mut rx) = mpsc::unbounded_channel::<Job>();
        let worker = thread::spawn(move || {
            while let Some(job) = rx.blocking_recv() {
                job(&mut sim);
            }
        });
        (SimHandle { tx }, worker)
    }

    pub async fn call<T, F>(&self, f: F) -> Result<T, ApiError>
    where
        T: Send + 'static,
        F: FnOnce(&mut ServiceSim) -> T + Send + 'static,
    {
        let (reply, rx) = oneshot::channel();
        let job: Job = Box::new(move |sim| {
            let _ = reply.send(f(sim));
        });
        self.tx.send(job).map_err(|_| ApiError::gone())?;
        rx.await.map_err(|_| ApiError::gone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub error: String,
}

impl ApiError {
    fn new(status: StatusCode, error: impl Into<String>) -> Self {
        ApiError { status: status.as_u16(), error: error.into() }
    }

    fn gone() -> Self {
        ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "simulation thread stopped")
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::UnknownProject(_)
            | Error::UnknownUser(_)
            | Error::UnknownRequest(_)
            | Error::UnknownHost(_)
            | Error::UnknownNode(_)
            | Error::UnknownGroup(_) => StatusCode::NOT_FOUND,
            Error::QuotaConflict(_)
            | Error::QuotaOversubscribed { .. }
            | Error::NodeNotStable { .. }
            | Error::IllegalNodeTransition { .. }
            | Error::NegativeEntitlement { .. }
            | Error::ManagerSuspended(_) => StatusCode::CONFLICT,
            Error::Invariant(_) | Error::Journal(_) | Error::CorruptJournal { .. } => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuotaView {
    pub project: ProjectId,
    #[serde(flatten)]
    pub quota: ProjectQuota,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeView {
    pub id: NodeId,
    pub state: NodeState,
    pub dynp: u8,
    pub capacity: ResourceVector,
    pub tenant: Option<ProjectId>,
    pub ttl_deadline: Option<SimTime>,
    pub batch_jobs: BTreeSet<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionBody {
    pub target: Partition,
    #[serde(default)]
    pub tenant: Option<String>,
    #[serde(default)]
    pub ttl: Option<SimTime>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionAccepted {
    pub node: NodeId,
    /// Instant the request was queued; it is processed on the next step.
    pub at: SimTime,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepBody {
    pub until: Option<SimTime>,
    pub seconds: Option<SimTime>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStatus {
    pub now: SimTime,
    pub horizon: SimTime,
    pub frames: usize,
    pub queue_len: usize,
    pub next_event: Option<SimTime>,
}

fn status(sim: &ServiceSim) -> SimStatus {
    SimStatus {
        now: sim.now(),
        horizon: sim.horizon(),
        frames: sim.frames().len(),
        queue_len: sim.queue().len(),
        next_event: sim.peek_time(),
    }
}

fn manager(name: &str) -> Result<Manager, ApiError> {
    Manager::from_name(name).ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown manager `{name}`")))
}

fn describe(sim: &ServiceSim, m: Manager) -> ManagerDescriptor {
    sim.managers().into_iter().find(|d| d.name == m).expect("every manager is listed")
}

async fn list_managers(State(h): State<SimHandle>) -> ApiResult<Vec<ManagerDescriptor>> {
    Ok(Json(h.call(|sim| sim.managers()).await?))
}

async fn get_manager(State(h): State<SimHandle>, Path(name): Path<String>) -> ApiResult<ManagerDescriptor> {
    let m = manager(&name)?;
    Ok(Json(h.call(move |sim| describe(sim, m)).await?))
}

async fn set_manager(h: SimHandle, name: String, status: ManagerStatus) -> ApiResult<ManagerDescriptor> {
    let m = manager(&name)?;
    let d = h
        .call(move |sim| {
            sim.set_manager(m, status)?;
            Ok::<_, Error>(describe(sim, m))
        })
        .await??;
    Ok(Json(d))
}

async fn suspend(State(h): State<SimHandle>, Path(name): Path<String>) -> ApiResult<ManagerDescriptor> {
    set_manager(h, name, ManagerStatus::Suspended).await
}

async fn resume(State(h): State<SimHandle>, Path(name): Path<String>) -> ApiResult<ManagerDescriptor> {
    set_manager(h, name, ManagerStatus::Active).await
}

async fn get_quota(State(h): State<SimHandle>, Path(id): Path<String>) -> ApiResult<QuotaView> {
    let project = ProjectId::from(id.as_str());
    let view = h
        .call(move |sim| {
            let quota = sim.project_quota(&project)?.clone();
            Ok::<_, Error>(QuotaView { project, quota })
        })
        .await??;
    Ok(Json(view))
}

async fn put_quota(
    State(h): State<SimHandle>,
    Path(id): Path<String>,
    Json(size): Json<ResourceVector>,
) -> ApiResult<QuotaView> {
    let project = ProjectId::from(id.as_str());
    let view = h
        .call(move |sim| {
            sim.set_private_quota(&project, size)?;
            let quota = sim.project_quota(&project)?.clone();
            Ok::<_, Error>(QuotaView { project, quota })
        })
        .await??;
    Ok(Json(view))
}

async fn list_queue(State(h): State<SimHandle>) -> ApiResult<Vec<QueuedRequest>> {
    Ok(Json(h.call(|sim| sim.queue_snapshot()).await?))
}

async fn list_nodes(State(h): State<SimHandle>) -> ApiResult<Vec<NodeView>> {
    let nodes = h
        .call(|sim| {
            sim.director()
                .nodes()
                .map(|n| NodeView {
                    id: n.id,
                    state: n.state(),
                    dynp: n.dynp(),
                    capacity: n.capacity,
                    tenant: n.cloud_tenant.clone(),
                    ttl_deadline: n.ttl_deadline(),
                    batch_jobs: n.batch_jobs().clone(),
                })
                .collect()
        })
        .await?;
    Ok(Json(nodes))
}

async fn transition(
    State(h): State<SimHandle>,
    Path(id): Path<u32>,
    Json(body): Json<TransitionBody>,
) -> Result<(StatusCode, Json<TransitionAccepted>), ApiError> {
    let request = TransitionRequest {
        node: NodeId(id),
        target: body.target,
        tenant: body.tenant.as_deref().map(ProjectId::from),
        ttl: body.ttl,
    };
    let at = h
        .call(move |sim| {
            sim.request_node_transition(request)?;
            Ok::<_, Error>(sim.now())
        })
        .await??;
    Ok((StatusCode::ACCEPTED, Json(TransitionAccepted { node: NodeId(id), at })))
}

async fn sim_status(State(h): State<SimHandle>) -> ApiResult<SimStatus> {
    Ok(Json(h.call(|sim| status(sim)).await?))
}

async fn step(State(h): State<SimHandle>, body: Option<Json<StepBody>>) -> ApiResult<SimStatus> {
    let body = body.map(|Json(b)| b).unwrap_or_default();
    let s = h
        .call(move |sim| {
            match (body.until, body.seconds) {
                (Some(t), _) if t < sim.now() => {
                    return Err(ApiError::new(StatusCode::BAD_REQUEST, format!("cannot step back to {t}, now is {}", sim.now())))
                }
                (Some(t), _) => sim.run_until(t)?,
                (None, Some(d)) => sim.run_until(sim.now().saturating_add(d))?,
                // Bare step: one event.
                (None, None) => {
                    sim.step()?;
                }
            }
            Ok::<_, ApiError>(status(sim))
        })
        .await??;
    Ok(Json(s))
}

async fn latest_frame(State(h): State<SimHandle>) -> ApiResult<Option<MetricsFrame>> {
    Ok(Json(h.call(|sim| sim.frames().last().cloned()).await?))
}

async fn summary(State(h): State<SimHandle>) -> ApiResult<Summary> {
    Ok(Json(h.call(|sim| sim.summary()).await??))
}

pub fn router(handle: SimHandle) -> Router {
    Router::new()
        .route("/v1/managers", get(list_managers))
        .route("/v1/managers/{name}", get(get_manager))
        .route("/v1/managers/{name}/suspend", post(suspend))
        .route("/v1/managers/{name}/resume", post(resume))
        .route("/v1/projects/{id}/quota", get(get_quota).put(put_quota))
        .route("/v1/queue", get(list_queue))
        .route("/v1/nodes", get(list_nodes))
        .route("/v1/nodes/{id}/transition", post(transition))
        .route("/v1/sim", get(sim_status))
        .route("/v1/sim/step", post(step))
        .route("/v1/metrics/latest", get(latest_frame))
        .route("/v1/summary", get(summary))
        .with_state(handle)
}

/// Serves `router(handle)` on `listener` until the task is dropped.
pub async fn serve(listener: tokio::net::TcpListener, handle: SimHandle) -> std::io::Result<()> {
    axum::serve(listener, router(handle)).await
}
