//! Mission client: plans missions, talks to the relay as role `client`,
//! collects capture bundles and queries stored inspections.

use std::sync::Arc;
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use sitewalk_core::model::DEFAULT_ROBOT_RADIUS;
use sitewalk_core::sim::{DEFAULT_DWELL, DEFAULT_SPEED};
use sitewalk_core::{
    build_nav_grid, compose_mission, extract_walkable_region, BuildingModel, Drp, Mission, ModelError, NavGrid,
    PlanError, Pose2D, DEFAULT_CELL_SIZE,
};
use tokio::io::{AsyncRead, AsyncWrite};
use tokio::sync::{broadcast, mpsc, watch};
use tokio::task::JoinSet;

use crate::protocol::{
    self, CapturesResult, Envelope, ErrorBody, ErrorCode, Hello, IndexedCapture, InspectionRecord, MessageType,
    MissionAck, MissionProgress, ProtocolError, QueryCaptures, RobotState, Role,
};

pub const REQUEST_TIMEOUT: Duration = Duration::from_secs(10);
/// Shortest mission deadline, so that near-instant missions still get a chance.
pub const MIN_MISSION_TIMEOUT: Duration = Duration::from_secs(1);

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("planning failed: {0}")]
    Plan(#[from] PlanError),
    #[error("building model: {0}")]
    Model(#[from] ModelError),
    #[error("{0}")]
    Input(String),
    #[error("cannot reach relay: {0}")]
    Connect(std::io::Error),
    #[error("relay connection lost")]
    ConnectionLost,
    #[error("no robot online: {0}")]
    NoRobotOnline(String),
    #[error("unauthorized: {0}")]
    Unauthorized(String),
    #[error("mission {mission_id} timed out after {:.1} s", .after.as_secs_f64())]
    MissionTimeout { mission_id: String, after: Duration },
    #[error("no reply to {0} within the request timeout")]
    RequestTimeout(MessageType),
    #[error("{code}: {message}")]
    Remote { code: ErrorCode, message: String },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

impl ClientError {
    /// Process exit status: 2 planning, 3 connectivity, 4 auth, 5 timeout.
    pub fn exit_code(&self) -> i32 {
        match self {
            ClientError::Plan(_) => 2,
            ClientError::Connect(_) | ClientError::ConnectionLost | ClientError::NoRobotOnline(_) => 3,
            ClientError::RequestTimeout(_) | ClientError::Protocol(_) => 3,
            ClientError::Unauthorized(_) => 4,
            ClientError::MissionTimeout { .. } => 5,
            ClientError::Model(_) | ClientError::Input(_) | ClientError::Remote { .. } => 1,
        }
    }

    fn from_remote(body: ErrorBody) -> Self {
        match body.code {
            ErrorCode::Unauthorized => ClientError::Unauthorized(body.message),
            ErrorCode::NoRobotOnline => ClientError::NoRobotOnline(body.message),
            code => ClientError::Remote { code, message: body.message },
        }
    }
}

/// Grid and settings for composing missions over one building model.
pub struct MissionPlanner {
    pub model: BuildingModel,
    pub grid: NavGrid,
    pub speed_mps: f64,
    pub dwell_s: f64,
}

impl MissionPlanner {
    pub fn new(model: BuildingModel) -> Result<Self, ClientError> {
        Self::with_resolution(model, DEFAULT_ROBOT_RADIUS, DEFAULT_CELL_SIZE)
    }

    pub fn with_resolution(model: BuildingModel, robot_radius: f64, cell_size: f64) -> Result<Self, ClientError> {
        let region = extract_walkable_region(&model, robot_radius)?;
        let grid = build_nav_grid(&region, cell_size)?;
        Ok(Self {
            model,
            grid,
            speed_mps: DEFAULT_SPEED,
            dwell_s: DEFAULT_DWELL,
        })
    }

    /// Mission from `start` through `drps` in greedy order, stamped with
    /// midnight UTC of `date` (`YYYY-MM-DD`).
    pub fn plan(&self, start: &Pose2D, drps: &[Drp], date: &str) -> Result<Mission, ClientError> {
        chrono::NaiveDate::parse_from_str(date, "%Y-%m-%d")
            .map_err(|_| ClientError::Input(format!("bad date `{date}`, expected YYYY-MM-DD")))?;
        let created_at = format!("{date}T00:00:00Z");
        Ok(compose_mission(&self.grid, start, drps, self.speed_mps, self.dwell_s, &created_at)?)
    }
}

pub fn parse_drps(bytes: &[u8]) -> Result<Vec<Drp>, ClientError> {
    serde_json::from_slice(bytes).map_err(|e| ClientError::Input(format!("DRP list: {e}")))
}

/// Wall-clock deadline for a mission: the middleware's own abort limit
/// (3x the estimated duration) converted at the robot's pacing.
pub fn mission_deadline(mission: &Mission, time_scale: f64) -> Duration {
    let simulated = 3.0 * mission.estimated_duration();
    let wall = if time_scale > 0.0 { simulated / time_scale } else { 0.0 };
    Duration::from_secs_f64(wall).max(MIN_MISSION_TIMEOUT)
}

/// One authenticated relay session.
pub struct RelayClient {
    project: String,
    session_id: String,
    out: mpsc::Sender<Envelope>,
    incoming: broadcast::Sender<Arc<Envelope>>,
    closed: watch::Receiver<bool>,
    _tasks: JoinSet<()>,
}

impl RelayClient {
    pub async fn connect(relay: &str, token: &str, project: &str) -> Result<Self, ClientError> {
        let stream = tokio::net::TcpStream::connect(relay).await.map_err(ClientError::Connect)?;
        let _ = stream.set_nodelay(true);
        Self::over(stream, token, project).await
    }

    /// Handshakes over any byte stream.
    pub async fn over<S>(io: S, token: &str, project: &str) -> Result<Self, ClientError>
    where
        S: AsyncRead + AsyncWrite + Unpin + Send + 'static,
    {
        let mut transport = protocol::framed(io);
        let hello = Envelope::new(MessageType::Hello, Role::Client, project, &Hello { token: token.to_string() });
        protocol::send(&mut transport, &hello).await?;
        let reply = match tokio::time::timeout(REQUEST_TIMEOUT, protocol::recv(&mut transport)).await {
            Ok(Ok(r)) => r,
            Ok(Err(ProtocolError::Closed)) => return Err(ClientError::ConnectionLost),
            Ok(Err(e)) => return Err(e.into()),
            Err(_) => return Err(ClientError::RequestTimeout(MessageType::Hello)),
        };
        let session_id = match reply.kind {
            MessageType::HelloAck => reply.body::<protocol::HelloAck>()?.session_id,
            MessageType::Error => return Err(ClientError::from_remote(reply.body()?)),
            other => return Err(ProtocolError::Envelope(format!("expected HELLO_ACK, got {other}")).into()),
        };

        let (mut sink, mut stream) = transport.split();
        let (out, mut rx) = mpsc::channel::<Envelope>(256);
        let (incoming, _) = broadcast::channel(4096);
        let (closed_tx, closed) = watch::channel(false);
        let mut tasks = JoinSet::new();
        tasks.spawn(async move {
            while let Some(env) = rx.recv().await {
                if sink.send(env.to_bytes()).await.is_err() {
                    break;
                }
            }
        });
        let fan_out = incoming.clone();
        tasks.spawn(async move {
            while let Some(Ok(frame)) = stream.next().await {
                if let Ok(env) = Envelope::from_bytes(&frame) {
                    let _ = fan_out.send(Arc::new(env));
                }
            }
            let _ = closed_tx.send(true);
        });
        Ok(Self {
            project: project.to_string(),
            session_id,
            out,
            incoming,
            closed,
            _tasks: tasks,
        })
    }

    pub fn project(&self) -> &str {
        &self.project
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn is_connected(&self) -> bool {
        !*self.closed.borrow()
    }

    /// Every envelope received from now on.
    pub fn subscribe(&self) -> Inbox {
        Inbox {
            rx: self.incoming.subscribe(),
            closed: self.closed.clone(),
        }
    }

    pub async fn send(&self, env: Envelope) -> Result<(), ClientError> {
        self.out.send(env).await.map_err(|_| ClientError::ConnectionLost)
    }

    fn envelope<B: serde::Serialize>(&self, kind: MessageType, body: &B) -> Envelope {
        Envelope::new(kind, Role::Client, &self.project, body)
    }

    /// Sends `env` and waits for the first reply correlated to it.
    pub async fn request(&self, env: Envelope, timeout: Duration) -> Result<Arc<Envelope>, ClientError> {
        let mut inbox = self.subscribe();
        let id = env.message_id.clone();
        let kind = env.kind;
        self.send(env).await?;
        let reply = tokio::time::timeout(timeout, inbox.next_matching(|e| e.correlation_id.as_deref() == Some(&id)))
            .await
            .map_err(|_| ClientError::RequestTimeout(kind))??;
        if reply.kind == MessageType::Error {
            return Err(ClientError::from_remote(reply.body()?));
        }
        Ok(reply)
    }

    pub async fn robot_state(&self) -> Result<RobotState, ClientError> {
        let env = self.envelope(MessageType::RobotStateRequest, &serde_json::json!({}));
        Ok(self.request(env, REQUEST_TIMEOUT).await?.body()?)
    }

    /// Sends the mission and waits for the middleware to accept it.
    pub async fn dispatch(&self, mission: &Mission) -> Result<PendingMission, ClientError> {
        let body = serde_json::value::RawValue::from_string(mission.to_wire().trim_end().to_string())
            .map_err(|e| ClientError::Input(e.to_string()))?;
        let env = Envelope::with_raw_body(MessageType::MissionDispatch, Role::Client, &self.project, body);
        let dispatch_id = env.message_id.clone();
        // Subscribe before sending so nothing correlated can be missed.
        let inbox = self.subscribe();
        let reply = self.request(env, REQUEST_TIMEOUT).await?;
        if reply.kind != MessageType::MissionAck {
            return Err(ProtocolError::Envelope(format!("expected MISSION_ACK, got {}", reply.kind)).into());
        }
        Ok(PendingMission {
            mission: mission.clone(),
            ack: reply.body()?,
            dispatch_id,
            inbox,
        })
    }

    /// Dispatches, follows progress and returns the stored inspection record.
    pub async fn dispatch_and_collect(
        &self,
        mission: &Mission,
        time_scale: f64,
        on_progress: impl FnMut(&MissionProgress),
    ) -> Result<InspectionRecord, ClientError> {
        let pending = self.dispatch(mission).await?;
        pending.collect(mission_deadline(mission, time_scale), on_progress).await
    }

    async fn query(&self, q: QueryCaptures) -> Result<CapturesResult, ClientError> {
        let env = self.envelope(MessageType::QueryCaptures, &q);
        Ok(self.request(env, REQUEST_TIMEOUT).await?.body()?)
    }

    pub async fn fetch(&self, date: &str) -> Result<Vec<InspectionRecord>, ClientError> {
        Ok(self.query(QueryCaptures { date: Some(date.to_string()), ..Default::default() }).await?.records)
    }

    pub async fn dates(&self) -> Result<Vec<String>, ClientError> {
        let q = QueryCaptures { list_dates: true, ..Default::default() };
        Ok(self.query(q).await?.dates.unwrap_or_default())
    }

    pub async fn capture(&self, capture_id: &str) -> Result<Option<IndexedCapture>, ClientError> {
        let q = QueryCaptures { capture_id: Some(capture_id.to_string()), ..Default::default() };
        let result = self.query(q).await?;
        Ok(result.records.into_iter().flat_map(|r| r.captures).next())
    }
}

/// Receiving side of a client session.
pub struct Inbox {
    rx: broadcast::Receiver<Arc<Envelope>>,
    closed: watch::Receiver<bool>,
}

impl Inbox {
    pub async fn next(&mut self) -> Result<Arc<Envelope>, ClientError> {
        loop {
            tokio::select! {
                msg = self.rx.recv() => match msg {
                    Ok(env) => return Ok(env),
                    // Fell behind on telemetry; keep reading.
                    Err(broadcast::error::RecvError::Lagged(_)) => continue,
                    Err(broadcast::error::RecvError::Closed) => return Err(ClientError::ConnectionLost),
                },
                changed = self.closed.wait_for(|c| *c) => {
                    let _ = changed;
                    // Drain whatever arrived before the close.
                    return match self.rx.try_recv() {
                        Ok(env) => Ok(env),
                        Err(_) => Err(ClientError::ConnectionLost),
                    };
                }
            }
        }
    }

    pub async fn next_matching(&mut self, pred: impl Fn(&Envelope) -> bool) -> Result<Arc<Envelope>, ClientError> {
        loop {
            let env = self.next().await?;
            if pred(&env) {
                return Ok(env);
            }
        }
    }
}

/// A mission the middleware has accepted.
pub struct PendingMission {
    pub mission: Mission,
    pub ack: MissionAck,
    pub dispatch_id: String,
    inbox: Inbox,
}

impl PendingMission {
    /// Waits for the bundle. Captures come back in the order the relay
    /// stored them, which must be the mission's DRP order.
    pub async fn collect(
        mut self,
        deadline: Duration,
        mut on_progress: impl FnMut(&MissionProgress),
    ) -> Result<InspectionRecord, ClientError> {
        let id = self.dispatch_id.clone();
        let wait = async {
            loop {
                let env = self.inbox.next_matching(|e| e.correlation_id.as_deref() == Some(&id)).await?;
                match env.kind {
                    MessageType::MissionProgress => on_progress(&env.body()?),
                    MessageType::Error => return Err(ClientError::from_remote(env.body()?)),
                    MessageType::CapturesResult => {
                        let result: CapturesResult = env.body()?;
                        let record = result
                            .records
                            .into_iter()
                            .find(|r| r.mission_id == self.mission.mission_id)
                            .ok_or_else(|| ProtocolError::Envelope("result without the mission's record".into()))?;
                        return Ok(record);
                    }
                    _ => {}
                }
            }
        };
        let record = tokio::time::timeout(deadline, wait).await.map_err(|_| ClientError::MissionTimeout {
            mission_id: self.mission.mission_id.clone(),
            after: deadline,
        })??;
        if record.drp_ids() != self.mission.drp_ids() {
            return Err(ProtocolError::Envelope(format!(
                "captures {:?} out of mission order {:?}",
                record.drp_ids(),
                self.mission.drp_ids()
            ))
            .into());
        }
        Ok(record)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use sitewalk_core::{MissionWaypoint, Point};

    #[test]
    fn exit_codes() {
        assert_eq!(ClientError::Plan(PlanError::InvalidCellSize(0.0)).exit_code(), 2);
        assert_eq!(ClientError::NoRobotOnline(String::new()).exit_code(), 3);
        assert_eq!(ClientError::Unauthorized(String::new()).exit_code(), 4);
        let t = ClientError::MissionTimeout { mission_id: "m".into(), after: Duration::ZERO };
        assert_eq!(t.exit_code(), 5);
    }

    #[test]
    fn deadline_scales_with_pacing() {
        let m = Mission {
            mission_id: "m".into(),
            created_at: "2026-01-01T00:00:00Z".into(),
            speed_mps: 0.5,
            dwell_s: 10.0,
            waypoints: vec![MissionWaypoint::plain(Point::new(0.0, 0.0)), MissionWaypoint::drp(Point::new(5.0, 0.0), "a")],
        };
        assert_eq!(mission_deadline(&m, 1.0), Duration::from_secs(60));
        assert_eq!(mission_deadline(&m, 10.0), Duration::from_secs(6));
        assert_eq!(mission_deadline(&m, 1000.0), MIN_MISSION_TIMEOUT);
    }
}
