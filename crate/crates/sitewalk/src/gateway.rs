//! Local HTTP gateway for the operator console.
//!
//! JSON endpoints plus a server-sent event stream, backed by one relay client
//! session. The gateway keeps no durable state; inspections live in the relay.

use std::convert::Infallible;
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use serde::{Deserialize, Serialize};
use sitewalk_core::{Drp, Pose2D};
use tokio::sync::broadcast;
use tracing::{info, warn};

use crate::client::{mission_deadline, ClientError, MissionPlanner, RelayClient};
use crate::protocol::{IndexedCapture, InspectionRecord, MissionProgress};

pub struct GatewayConfig {
    /// Bearer token the console must present.
    pub token: String,
    /// Pacing of the robot, used for mission deadlines.
    pub time_scale: f64,
    /// Inspection date for new missions; today when unset.
    pub date: Option<String>,
    /// Served verbatim at `/schedule` when present.
    pub schedule: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoseView {
    pub pose: Pose2D,
    pub localization_degraded: bool,
    /// RFC 3339 time the pose was received.
    pub updated_at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActiveMission {
    pub mission_id: String,
    pub drp_ids: Vec<String>,
    pub waypoint_index: usize,
    pub waypoint_count: usize,
    pub captures_taken: usize,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaptureView {
    pub order: usize,
    pub capture_id: String,
    pub mission_id: String,
    pub drp_id: String,
    pub pose_at_capture: Pose2D,
    pub timestamp: f64,
    pub image_url: String,
}

impl From<&IndexedCapture> for CaptureView {
    fn from(c: &IndexedCapture) -> Self {
        Self {
            order: c.order,
            capture_id: c.capture_id.clone(),
            mission_id: c.mission_id.clone(),
            drp_id: c.drp_id.clone(),
            pose_at_capture: c.pose_at_capture,
            timestamp: c.timestamp,
            image_url: format!("/captures/{}/image", c.capture_id),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecordView {
    pub project_id: String,
    pub inspection_date: String,
    pub mission_id: String,
    pub total_time: f64,
    pub captures: Vec<CaptureView>,
}

impl From<&InspectionRecord> for RecordView {
    fn from(r: &InspectionRecord) -> Self {
        Self {
            project_id: r.project_id.clone(),
            inspection_date: r.inspection_date.clone(),
            mission_id: r.mission_id.clone(),
            total_time: r.total_time,
            captures: r.captures.iter().map(CaptureView::from).collect(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SessionView {
    pub robot_pose: Option<PoseView>,
    pub active_mission: Option<ActiveMission>,
    /// Captures of the last completed mission, in DRP order.
    pub last_result: Option<RecordView>,
    pub last_error: Option<String>,
}

/// One server-sent event.
#[derive(Debug, Clone)]
pub struct GatewayEvent {
    pub name: &'static str,
    pub data: serde_json::Value,
}

pub struct Gateway {
    client: RelayClient,
    planner: MissionPlanner,
    model_doc: Vec<u8>,
    config: GatewayConfig,
    view: RwLock<SessionView>,
    /// Mission id of the mission in flight, or "" while one is being dispatched.
    active: Mutex<Option<String>>,
    events: broadcast::Sender<GatewayEvent>,
}

impl Gateway {
    pub fn new(client: RelayClient, planner: MissionPlanner, model_doc: Vec<u8>, config: GatewayConfig) -> Arc<Self> {
        let (events, _) = broadcast::channel(1024);
        Arc::new(Self {
            client,
            planner,
            model_doc,
            config,
            view: RwLock::new(SessionView::default()),
            active: Mutex::new(None),
            events,
        })
    }

    pub fn view(&self) -> SessionView {
        self.view.read().unwrap().clone()
    }

    pub fn subscribe(&self) -> broadcast::Receiver<GatewayEvent> {
        self.events.subscribe()
    }

    fn emit(&self, name: &'static str, data: impl Serialize) {
        let data = serde_json::to_value(data).expect("event serializes");
        let _ = self.events.send(GatewayEvent { name, data });
    }

    fn set_pose(&self, pose: Pose2D, degraded: bool) {
        self.view.write().unwrap().robot_pose = Some(PoseView {
            pose,
            localization_degraded: degraded,
            updated_at: chrono::Utc::now().to_rfc3339(),
        });
    }

    fn on_progress(&self, p: &MissionProgress) {
        self.set_pose(p.pose, p.localization_degraded);
        if let Some(active) = self.view.write().unwrap().active_mission.as_mut() {
            active.waypoint_index = p.waypoint_index;
            active.captures_taken = p.captures_taken;
            active.t = p.t;
        }
        self.emit("progress", p);
    }

    async fn refresh_pose(&self) -> Result<(), ClientError> {
        let state = self.client.robot_state().await?;
        self.set_pose(state.pose, state.localization_degraded);
        self.emit("pose", &state);
        Ok(())
    }
}

pub fn router(gw: Arc<Gateway>) -> Router {
    Router::new()
        .route("/model", get(model))
        .route("/state", get(state))
        .route("/events", get(events))
        .route("/missions", post(post_mission))
        .route("/captures", get(captures))
        .route("/captures/{id}/image", get(capture_image))
        .route("/dates", get(dates))
        .route("/schedule", get(schedule))
        .layer(middleware::from_fn_with_state(gw.clone(), auth))
        .with_state(gw)
}

pub async fn serve(gw: Arc<Gateway>, listen: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(listen).await?;
    info!(addr = %listener.local_addr()?, "gateway listening");
    axum::serve(listener, router(gw)).await
}

#[derive(Serialize)]
struct ApiError {
    code: String,
    message: String,
}

fn api_error(status: StatusCode, code: &str, message: impl Into<String>) -> Response {
    (status, Json(ApiError { code: code.into(), message: message.into() })).into_response()
}

fn client_error(e: ClientError) -> Response {
    let (status, code) = match &e {
        ClientError::Plan(_) | ClientError::Input(_) | ClientError::Model(_) => (StatusCode::UNPROCESSABLE_ENTITY, "PLANNING"),
        ClientError::NoRobotOnline(_) => (StatusCode::SERVICE_UNAVAILABLE, "NO_ROBOT_ONLINE"),
        ClientError::Unauthorized(_) => (StatusCode::BAD_GATEWAY, "UNAUTHORIZED"),
        ClientError::RequestTimeout(_) | ClientError::MissionTimeout { .. } => (StatusCode::GATEWAY_TIMEOUT, "TIMEOUT"),
        ClientError::Connect(_) | ClientError::ConnectionLost | ClientError::Protocol(_) => {
            (StatusCode::BAD_GATEWAY, "RELAY_UNAVAILABLE")
        }
        ClientError::Remote { code, .. } => {
            return api_error(StatusCode::BAD_GATEWAY, &code.to_string(), e.to_string());
        }
    };
    api_error(status, code, e.to_string())
}

#[derive(Deserialize)]
struct TokenQuery {
    token: Option<String>,
}

async fn auth(State(gw): State<Arc<Gateway>>, Query(q): Query<TokenQuery>, headers: HeaderMap, req: Request, next: Next) -> Response {
    let bearer = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    // EventSource cannot set headers, so the token may also come as ?token=.
    let presented = bearer.or(q.token.as_deref());
    if presented != Some(gw.config.token.as_str()) {
        return api_error(StatusCode::UNAUTHORIZED, "UNAUTHORIZED", "missing or wrong gateway token");
    }
    next.run(req).await
}

async fn model(State(gw): State<Arc<Gateway>>) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], gw.model_doc.clone()).into_response()
}

async fn state(State(gw): State<Arc<Gateway>>) -> Json<SessionView> {
    let idle = gw.active.lock().unwrap().is_none();
    if idle {
        if let Err(e) = gw.refresh_pose().await {
            warn!("robot state unavailable: {e}");
        }
    }
    Json(gw.view())
}

async fn events(State(gw): State<Arc<Gateway>>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let rx = gw.subscribe();
    let stream = futures::stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(ev) => {
                    let event = Event::default().event(ev.name).data(ev.data.to_string());
                    return Some((Ok(event), rx));
                }
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    Sse::new(stream).keep_alive(KeepAlive::default())
}

#[derive(Debug, Deserialize)]
pub struct MissionRequest {
    pub drps: Vec<Drp>,
    #[serde(default)]
    pub date: Option<String>,
    /// Planning start; the robot's reported pose when absent.
    #[serde(default)]
    pub start: Option<Pose2D>,
}

#[derive(Debug, Serialize)]
struct MissionAccepted {
    mission_id: String,
    drp_ids: Vec<String>,
    estimated_duration_s: f64,
}

/// Clears the dispatch claim unless disarmed.
struct Claim<'a>(&'a Mutex<Option<String>>, bool);

impl Drop for Claim<'_> {
    fn drop(&mut self) {
        if self.1 {
            *self.0.lock().unwrap() = None;
        }
    }
}

async fn post_mission(State(gw): State<Arc<Gateway>>, Json(req): Json<MissionRequest>) -> Response {
    {
        let mut active = gw.active.lock().unwrap();
        if let Some(id) = active.as_ref() {
            return api_error(StatusCode::CONFLICT, "MISSION_ACTIVE", format!("mission {id} is still running"));
        }
        *active = Some(String::new());
    }
    let mut claim = Claim(&gw.active, true);

    let start = match req.start {
        Some(p) => p,
        None => match gw.client.robot_state().await {
            Ok(s) => {
                gw.set_pose(s.pose, s.localization_degraded);
                s.pose
            }
            Err(e) => return client_error(e),
        },
    };
    let date = req
        .date
        .or_else(|| gw.config.date.clone())
        .unwrap_or_else(|| chrono::Utc::now().format("%Y-%m-%d").to_string());
    let mission = match gw.planner.plan(&start, &req.drps, &date) {
        Ok(m) => m,
        Err(e) => return client_error(e),
    };
    let pending = match gw.client.dispatch(&mission).await {
        Ok(p) => p,
        Err(e) => return client_error(e),
    };

    claim.1 = false;
    *gw.active.lock().unwrap() = Some(mission.mission_id.clone());
    {
        let mut view = gw.view.write().unwrap();
        view.active_mission = Some(ActiveMission {
            mission_id: mission.mission_id.clone(),
            drp_ids: mission.drp_ids(),
            waypoint_index: 0,
            waypoint_count: mission.waypoints.len(),
            captures_taken: 0,
            t: 0.0,
        });
        view.last_error = None;
    }
    let waypoints: Vec<serde_json::Value> = mission
        .waypoints
        .iter()
        .map(|w| serde_json::json!({"x": w.point.x, "y": w.point.y, "is_drp": w.is_drp, "drp_id": w.drp_id}))
        .collect();
    gw.emit(
        "mission_started",
        serde_json::json!({"mission_id": mission.mission_id, "drp_ids": mission.drp_ids(), "waypoints": waypoints}),
    );

    let accepted = MissionAccepted {
        mission_id: mission.mission_id.clone(),
        drp_ids: mission.drp_ids(),
        estimated_duration_s: pending.ack.estimated_duration_s,
    };
    let deadline = mission_deadline(&mission, gw.config.time_scale);
    let bg = gw.clone();
    tokio::spawn(async move {
        let outcome = pending.collect(deadline, |p| bg.on_progress(p)).await;
        let mut view = bg.view.write().unwrap();
        view.active_mission = None;
        match outcome {
            Ok(record) => {
                let rv = RecordView::from(&record);
                view.last_result = Some(rv.clone());
                drop(view);
                bg.emit("mission_complete", &rv);
            }
            Err(e) => {
                view.last_error = Some(e.to_string());
                drop(view);
                bg.emit("mission_failed", serde_json::json!({"mission_id": mission.mission_id, "error": e.to_string()}));
            }
        }
        *bg.active.lock().unwrap() = None;
    });
    (StatusCode::ACCEPTED, Json(accepted)).into_response()
}

#[derive(Deserialize)]
struct DateQuery {
    date: Option<String>,
}

async fn captures(State(gw): State<Arc<Gateway>>, Query(q): Query<DateQuery>) -> Response {
    let Some(date) = q.date else {
        return api_error(StatusCode::BAD_REQUEST, "BAD_REQUEST", "date query parameter required");
    };
    match gw.client.fetch(&date).await {
        Ok(records) => Json(records.iter().map(RecordView::from).collect::<Vec<_>>()).into_response(),
        Err(e) => client_error(e),
    }
}

async fn capture_image(State(gw): State<Arc<Gateway>>, Path(id): Path<String>) -> Response {
    match gw.client.capture(&id).await {
        Ok(Some(c)) => ([(header::CONTENT_TYPE, "image/png")], c.payload).into_response(),
        Ok(None) => api_error(StatusCode::NOT_FOUND, "NOT_FOUND", format!("no capture {id}")),
        Err(e) => client_error(e),
    }
}

async fn dates(State(gw): State<Arc<Gateway>>) -> Response {
    match gw.client.dates().await {
        Ok(d) => Json(d).into_response(),
        Err(e) => client_error(e),
    }
}

async fn schedule(State(gw): State<Arc<Gateway>>) -> Response {
    match &gw.config.schedule {
        Some(doc) => doc.clone().into_response(),
        None => api_error(StatusCode::NOT_FOUND, "NOT_FOUND", "no schedule configured"),
    }
}
