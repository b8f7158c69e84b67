//! Site middleware: receives missions from the relay, drives the simulated
//! robot, buffers captures and uploads them as one bundle per mission.

use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use serde::Deserialize;
use sitewalk_core::sim::{Phase, DEFAULT_DT};
use sitewalk_core::{
    load_building_model, observe_pose, BuildingModel, Capture, Mission, MissionError, Pose2D, SimConfig, SimError,
    Simulator,
};
use tokio::io::{AsyncRead, AsyncWrite};
use tokio::sync::mpsc;
use tokio::task::JoinSet;
use tokio::time::Instant;
use tracing::{info, warn};

use crate::protocol::{
    self, CaptureBundle, Envelope, ErrorBody, ErrorCode, Hello, MessageType, MissionAck, MissionProgress,
    ProtocolError, RobotActivity, RobotState, Role,
};

pub const DEFAULT_PROGRESS_INTERVAL: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct SpawnPose {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default)]
pub struct SimSettings {
    pub dt: f64,
    pub visibility_range: f64,
    pub robot_radius: f64,
    pub observation_noise: f64,
    pub timeout_factor: f64,
    pub seed: u64,
    /// Simulated seconds per wall-clock second; 0 runs unpaced.
    pub time_scale: f64,
    /// Simulated seconds between MISSION_PROGRESS messages.
    pub progress_interval: f64,
}

impl Default for SimSettings {
    fn default() -> Self {
        let sim = SimConfig::default();
        Self {
            dt: DEFAULT_DT,
            visibility_range: sim.visibility_range,
            robot_radius: sim.robot_radius,
            observation_noise: sim.observation_noise,
            timeout_factor: sim.timeout_factor,
            seed: 0,
            time_scale: 1.0,
            progress_interval: DEFAULT_PROGRESS_INTERVAL,
        }
    }
}

impl SimSettings {
    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            dt: self.dt,
            visibility_range: self.visibility_range,
            robot_radius: self.robot_radius,
            observation_noise: self.observation_noise,
            timeout_factor: self.timeout_factor,
            ..SimConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct MiddlewareConfig {
    pub relay: String,
    pub token: String,
    pub project: String,
    pub model: PathBuf,
    pub spawn: SpawnPose,
    #[serde(default)]
    pub sim: SimSettings,
}

impl MiddlewareConfig {
    /// Reads a TOML config; a relative model path is resolved against the config's directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let mut cfg: MiddlewareConfig = toml::from_str(&std::fs::read_to_string(path)?)?;
        if cfg.model.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.model = dir.join(&cfg.model);
            }
        }
        Ok(cfg)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MiddlewareError {
    #[error("robot busy with mission {mission_id}")]
    Busy { mission_id: String },
    #[error(transparent)]
    MissionParse(#[from] MissionError),
    #[error("mission execution failed: {0}")]
    Execution(#[from] SimError),
    #[error("mission ended with {captured} captures for {expected} DRPs")]
    Incomplete { captured: usize, expected: usize },
    #[error("relay refused the session: {} {}", .0.code, .0.message)]
    Rejected(ErrorBody),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("configuration: {0}")]
    Config(String),
}

impl MiddlewareError {
    fn code(&self) -> ErrorCode {
        match self {
            MiddlewareError::Busy { .. } => ErrorCode::Busy,
            MiddlewareError::MissionParse(_) => ErrorCode::MissionParseError,
            _ => ErrorCode::ExecutionError,
        }
    }
}

/// What the middleware holds at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct MiddlewareSession {
    pub session_id: String,
    pub state: RobotActivity,
    pub current_mission: Option<Mission>,
    pub buffer: Vec<Capture>,
    pub true_pose: Pose2D,
    pub estimated_pose: Pose2D,
    pub localization_degraded: bool,
    pub mission_time: Option<f64>,
}

pub struct Middleware {
    project: String,
    token: String,
    model: Arc<BuildingModel>,
    settings: SimSettings,
    session: RwLock<MiddlewareSession>,
}

impl Middleware {
    pub fn new(
        project: &str,
        token: &str,
        model: BuildingModel,
        spawn: Pose2D,
        settings: SimSettings,
    ) -> Result<Arc<Self>, MiddlewareError> {
        if !(settings.progress_interval > 0.0) {
            return Err(MiddlewareError::Config("progress_interval must be positive".into()));
        }
        if !(settings.time_scale >= 0.0) {
            return Err(MiddlewareError::Config("time_scale must be non-negative".into()));
        }
        let observed = observe_pose(&spawn, &model, settings.visibility_range);
        Ok(Arc::new(Self {
            project: project.to_string(),
            token: token.to_string(),
            session: RwLock::new(MiddlewareSession {
                session_id: String::new(),
                state: RobotActivity::Idle,
                current_mission: None,
                buffer: Vec::new(),
                true_pose: spawn,
                estimated_pose: observed.as_ref().map_or(spawn, |(p, _)| *p),
                localization_degraded: observed.is_none(),
                mission_time: None,
            }),
            model: Arc::new(model),
            settings,
        }))
    }

    pub fn from_config(cfg: &MiddlewareConfig) -> anyhow::Result<Arc<Self>> {
        let bytes = std::fs::read(&cfg.model).map_err(|e| anyhow::anyhow!("{}: {e}", cfg.model.display()))?;
        let model = load_building_model(&bytes)?;
        let spawn = Pose2D::new(cfg.spawn.x, cfg.spawn.y, cfg.spawn.theta);
        Ok(Self::new(&cfg.project, &cfg.token, model, spawn, cfg.sim.clone())?)
    }

    pub fn session(&self) -> MiddlewareSession {
        self.session.read().unwrap().clone()
    }

    /// Current pose report; never blocks on mission execution.
    pub fn answer_robot_state(&self) -> RobotState {
        let s = self.session.read().unwrap();
        RobotState {
            pose: s.estimated_pose,
            localization_degraded: s.localization_degraded,
            timestamp: chrono::Utc::now().to_rfc3339(),
            state: s.state,
            mission_id: s.current_mission.as_ref().map(|m| m.mission_id.clone()),
            mission_time: s.mission_time,
        }
    }

    /// Validates a mission document and claims the robot for it.
    pub fn handle_mission(&self, doc: &[u8]) -> Result<(Simulator, MissionAck), MiddlewareError> {
        let mut s = self.session.write().unwrap();
        if s.state != RobotActivity::Idle {
            let mission_id = s.current_mission.as_ref().map(|m| m.mission_id.clone()).unwrap_or_default();
            return Err(MiddlewareError::Busy { mission_id });
        }
        let mission = Mission::from_wire(doc)?;
        let sim = Simulator::new(mission.clone(), self.model.clone(), self.settings.sim_config(), self.settings.seed)?;
        let ack = MissionAck {
            mission_id: mission.mission_id.clone(),
            estimated_duration_s: mission.estimated_duration(),
            drp_count: mission.drp_count(),
        };
        s.state = RobotActivity::Executing;
        s.current_mission = Some(mission);
        s.buffer.clear();
        s.mission_time = Some(0.0);
        Ok((sim, ack))
    }

    fn finish(&self) {
        let mut s = self.session.write().unwrap();
        s.state = RobotActivity::Idle;
        s.current_mission = None;
        s.buffer.clear();
        s.mission_time = None;
    }

    /// Runs a claimed mission to the end and returns the bundle to upload.
    /// Progress reports go to `progress` without ever waiting on it.
    pub async fn execute(
        &self,
        mut sim: Simulator,
        progress: impl Fn(MissionProgress),
    ) -> Result<CaptureBundle, MiddlewareError> {
        let mission = sim.mission().clone();
        let waypoint_count = mission.waypoints.len();
        let drp_count = mission.drp_count();
        let interval = self.settings.progress_interval;
        let time_scale = self.settings.time_scale;
        let started = Instant::now();

        let report = |state: &sitewalk_core::SimState, taken: usize| MissionProgress {
            mission_id: mission.mission_id.clone(),
            t: state.elapsed,
            pose: state.estimated_pose,
            localization_degraded: state.localization_degraded,
            fiducial_id: state.localized_by.clone(),
            waypoint_index: state.waypoint_index,
            waypoint_count,
            captures_taken: taken,
            drp_count,
        };

        let mut state = sim.initial_state();
        self.observe(&state, &[]);
        progress(report(&state, 0));
        let mut next_report = interval;
        let mut taken = 0;
        let mut steps_since_yield = 0u32;
        while state.phase != Phase::Done {
            let out = match sim.step(&state) {
                Ok(out) => out,
                Err(e) => {
                    self.finish();
                    return Err(e.into());
                }
            };
            state = out.state;
            taken += out.captures.len();
            self.observe(&state, &out.captures);
            if state.elapsed + 1e-9 >= next_report || state.phase == Phase::Done {
                progress(report(&state, taken));
                while next_report <= state.elapsed + 1e-9 {
                    next_report += interval;
                }
            }
            if time_scale > 0.0 {
                let due = started + Duration::from_secs_f64(state.elapsed / time_scale);
                if due > Instant::now() {
                    tokio::time::sleep_until(due).await;
                }
            } else {
                steps_since_yield += 1;
                if steps_since_yield >= 256 {
                    steps_since_yield = 0;
                    tokio::task::yield_now().await;
                }
            }
        }

        let mut s = self.session.write().unwrap();
        s.state = RobotActivity::Uploading;
        let captures = s.buffer.clone();
        drop(s);
        if captures.len() != drp_count {
            self.finish();
            return Err(MiddlewareError::Incomplete {
                captured: captures.len(),
                expected: drp_count,
            });
        }
        Ok(CaptureBundle {
            inspection_date: inspection_date(&mission.created_at),
            mission_id: mission.mission_id.clone(),
            drp_ids: mission.drp_ids(),
            total_time: state.elapsed,
            captures,
        })
    }

    fn observe(&self, state: &sitewalk_core::SimState, captures: &[Capture]) {
        let mut s = self.session.write().unwrap();
        s.true_pose = state.true_pose;
        s.estimated_pose = state.estimated_pose;
        s.localization_degraded = state.localization_degraded;
        s.mission_time = Some(state.elapsed);
        s.buffer.extend_from_slice(captures);
    }

    /// Holds one relay session until the connection ends. Dropping the future
    /// stops any mission in flight.
    pub async fn run<S>(self: Arc<Self>, io: S) -> Result<(), MiddlewareError>
    where
        S: AsyncRead + AsyncWrite + Unpin + Send + 'static,
    {
        let mut transport = protocol::framed(io);
        let hello = Envelope::new(MessageType::Hello, Role::Middleware, &self.project, &Hello { token: self.token.clone() });
        protocol::send(&mut transport, &hello).await?;
        let reply = protocol::recv(&mut transport).await?;
        match reply.kind {
            MessageType::HelloAck => {
                let ack: protocol::HelloAck = reply.body()?;
                self.session.write().unwrap().session_id = ack.session_id;
            }
            MessageType::Error => return Err(MiddlewareError::Rejected(reply.body()?)),
            other => return Err(ProtocolError::Envelope(format!("expected HELLO_ACK, got {other}")).into()),
        }
        info!(project = %self.project, "middleware online");

        let (mut sink, mut stream) = transport.split();
        let (tx, mut rx) = mpsc::channel::<Envelope>(1024);
        let mut tasks = JoinSet::new();
        tasks.spawn(async move {
            while let Some(env) = rx.recv().await {
                if sink.send(env.to_bytes()).await.is_err() {
                    break;
                }
            }
        });

        while let Some(frame) = stream.next().await {
            let env = match Envelope::from_bytes(&frame.map_err(ProtocolError::from)?) {
                Ok(env) => env,
                Err(e) => {
                    warn!("dropping malformed frame: {e}");
                    continue;
                }
            };
            match env.kind {
                MessageType::RobotStateRequest => {
                    let reply = env.reply(MessageType::RobotState, Role::Middleware, &self.answer_robot_state());
                    let _ = tx.send(reply).await;
                }
                MessageType::MissionDispatch => match self.handle_mission(env.body.get().as_bytes()) {
                    Ok((sim, ack)) => {
                        info!(mission = %ack.mission_id, drps = ack.drp_count, "mission accepted");
                        let _ = tx.send(env.reply(MessageType::MissionAck, Role::Middleware, &ack)).await;
                        let me = self.clone();
                        let tx = tx.clone();
                        let dispatch = env.message_id.clone();
                        tasks.spawn(async move { me.execute_and_upload(sim, dispatch, tx).await });
                    }
                    Err(e) => {
                        warn!("mission refused: {e}");
                        let body = ErrorBody::new(e.code(), e.to_string());
                        let _ = tx.send(env.reply(MessageType::Error, Role::Middleware, &body)).await;
                    }
                },
                MessageType::CapturesResult => info!("bundle receipt from relay"),
                MessageType::Error => {
                    let body: Result<ErrorBody, _> = env.body();
                    warn!("relay error: {body:?}");
                }
                other => warn!("ignoring {other}"),
            }
        }
        info!("relay connection closed");
        Ok(())
    }

    async fn execute_and_upload(&self, sim: Simulator, dispatch_id: String, tx: mpsc::Sender<Envelope>) {
        let project = self.project.clone();
        let progress_tx = tx.clone();
        let dispatch = dispatch_id.clone();
        let result = self
            .execute(sim, move |p| {
                let env = Envelope::new(MessageType::MissionProgress, Role::Middleware, &project, &p).correlated(&dispatch);
                // Telemetry is soft state: skip a report rather than stall the robot.
                let _ = progress_tx.try_send(env);
            })
            .await;
        let env = match result {
            Ok(bundle) => {
                info!(mission = %bundle.mission_id, captures = bundle.captures.len(), "uploading bundle");
                Envelope::new(MessageType::CaptureBundle, Role::Middleware, &self.project, &bundle).correlated(&dispatch_id)
            }
            Err(e) => {
                warn!("mission failed: {e}");
                let body = ErrorBody::new(ErrorCode::ExecutionError, e.to_string());
                Envelope::new(MessageType::Error, Role::Middleware, &self.project, &body).correlated(&dispatch_id)
            }
        };
        let _ = tx.send(env).await;
        self.finish();
    }

    pub async fn connect(self: Arc<Self>, relay: &str) -> Result<(), MiddlewareError> {
        let stream = tokio::net::TcpStream::connect(relay).await.map_err(ProtocolError::from)?;
        let _ = stream.set_nodelay(true);
        self.run(stream).await
    }
}

/// Calendar date of a mission's `created_at`, or today when it has none.
fn inspection_date(created_at: &str) -> String {
    created_at
        .get(..10)
        .filter(|d| chrono::NaiveDate::parse_from_str(d, "%Y-%m-%d").is_ok())
        .map(str::to_string)
        .unwrap_or_else(|| chrono::Utc::now().format("%Y-%m-%d").to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use sitewalk_core::{MissionWaypoint, Point};

    const MODEL: &str = r#"{"units":"m","bounds":[0,0,10,10],
      "elements":[{"id":"floor","layer":"floor","footprint":[[0,0],[10,0],[10,10],[0,10]],"height":0}],
      "fiducials":[{"id":"F","pose":{"x":0.05,"y":5,"theta":0},"orientation_error":0}]}"#;

    fn middleware(spawn: Pose2D) -> Arc<Middleware> {
        let settings = SimSettings { time_scale: 0.0, ..SimSettings::default() };
        Middleware::new("p", "t", load_building_model(MODEL.as_bytes()).unwrap(), spawn, settings).unwrap()
    }

    fn mission() -> Mission {
        Mission {
            mission_id: "m-1".into(),
            created_at: "2026-03-04T00:00:00Z".into(),
            speed_mps: 0.4,
            dwell_s: 1.0,
            waypoints: vec![
                MissionWaypoint::plain(Point::new(2.0, 5.0)),
                MissionWaypoint::drp(Point::new(4.0, 5.0), "a"),
                MissionWaypoint::drp(Point::new(4.0, 7.0), "b"),
            ],
        }
    }

    #[tokio::test]
    async fn lifecycle_and_busy() {
        let mw = middleware(Pose2D::new(2.0, 5.0, 0.0));
        let state = mw.answer_robot_state();
        assert_eq!(state.state, RobotActivity::Idle);
        assert!(!state.localization_degraded);
        assert!(state.pose.position().distance(Point::new(2.0, 5.0)) < 1e-12);

        assert!(matches!(mw.handle_mission(b"{nope"), Err(MiddlewareError::MissionParse(_))));
        assert_eq!(mw.session().state, RobotActivity::Idle);

        let (sim, ack) = mw.handle_mission(mission().to_wire().as_bytes()).unwrap();
        assert_eq!(ack.drp_count, 2);
        assert!(matches!(mw.handle_mission(mission().to_wire().as_bytes()), Err(MiddlewareError::Busy { .. })));

        let seen = std::sync::Mutex::new(Vec::new());
        let bundle = mw.execute(sim, |p| seen.lock().unwrap().push(p)).await.unwrap();
        assert_eq!(mw.session().state, RobotActivity::Uploading);
        assert_eq!(bundle.drp_ids, ["a", "b"]);
        assert_eq!(bundle.inspection_date, "2026-03-04");
        assert_eq!(bundle.captures.len(), 2);
        mw.finish();
        assert!(mw.session().buffer.is_empty());

        let seen = seen.into_inner().unwrap();
        let times: Vec<f64> = seen.iter().map(|p| p.t).collect();
        assert!(times.windows(2).all(|w| w[1] > w[0]));
        for w in times[..times.len() - 1].windows(2) {
            assert!((w[1] - w[0] - 0.2).abs() < 0.051, "{w:?}");
        }
        assert_eq!(seen.last().unwrap().captures_taken, 2);
    }

    #[test]
    fn occluded_spawn_is_degraded() {
        let mw = middleware(Pose2D::new(9.5, 5.0, 0.0));
        assert!(mw.answer_robot_state().localization_degraded);
    }

    #[test]
    fn dates_come_from_created_at() {
        assert_eq!(inspection_date("2026-10-16T08:00:00Z"), "2026-10-16");
        assert_eq!(inspection_date("garbage").len(), 10);
    }
}
