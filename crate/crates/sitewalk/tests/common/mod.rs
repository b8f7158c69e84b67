#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use sitewalk::middleware::SimSettings;
use sitewalk::protocol::Role;
use sitewalk::relay::TokenGrant;
use sitewalk::{Middleware, MissionPlanner, Relay, RelayClient, RelayConfig};
use sitewalk_core::{load_building_model, BuildingModel, Drp, Mission, Pose2D};
use tokio::task::JoinHandle;

pub const CLIENT_A: &str = "client-a";
pub const ROBOT_A: &str = "robot-a";
pub const CLIENT_B: &str = "client-b";
pub const ROBOT_B: &str = "robot-b";
pub const DATE: &str = "2026-03-02";

pub fn fixture_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

pub fn model() -> BuildingModel {
    load_building_model(&std::fs::read(fixture_path("bfh_approx.json")).unwrap()).unwrap()
}

pub fn drps() -> Vec<Drp> {
    sitewalk::client::parse_drps(&std::fs::read(fixture_path("bfh_drps.json")).unwrap()).unwrap()
}

pub fn spawn_pose() -> Pose2D {
    Pose2D::new(2.0, 2.0, 0.0)
}

pub fn planner() -> MissionPlanner {
    MissionPlanner::new(model()).unwrap()
}

pub fn bfh_mission(date: &str) -> Mission {
    planner().plan(&spawn_pose(), &drps(), date).unwrap()
}

pub fn grants() -> Vec<TokenGrant> {
    let g = |token: &str, role, project: &str| TokenGrant { token: token.into(), role, project: project.into() };
    vec![
        g(CLIENT_A, Role::Client, "alpha"),
        g(ROBOT_A, Role::Middleware, "alpha"),
        g(CLIENT_B, Role::Client, "beta"),
        g(ROBOT_B, Role::Middleware, "beta"),
    ]
}

pub fn relay_config(storage: &Path) -> RelayConfig {
    RelayConfig {
        listen: "127.0.0.1:0".into(),
        storage: storage.to_path_buf(),
        outbox_capacity: sitewalk::relay::DEFAULT_OUTBOX_CAPACITY,
        tokens: grants(),
    }
}

pub struct RunningRelay {
    pub addr: SocketAddr,
    pub relay: Relay,
    pub task: JoinHandle<()>,
}

impl Drop for RunningRelay {
    fn drop(&mut self) {
        self.task.abort();
    }
}

pub async fn start_relay(config: &RelayConfig) -> RunningRelay {
    let relay = Relay::new(config).unwrap();
    let (addr, task) = relay.clone().spawn("127.0.0.1:0").await.unwrap();
    RunningRelay { addr, relay, task }
}

pub fn settings(time_scale: f64) -> SimSettings {
    SimSettings { time_scale, seed: 7, ..SimSettings::default() }
}

pub struct RunningMiddleware {
    pub mw: Arc<Middleware>,
    pub task: JoinHandle<()>,
}

impl Drop for RunningMiddleware {
    fn drop(&mut self) {
        self.task.abort();
    }
}

/// Connects a simulated robot and waits until the relay reports it online.
pub async fn start_middleware(relay: &RunningRelay, project: &str, token: &str, time_scale: f64) -> RunningMiddleware {
    let mw = Middleware::new(project, token, model(), spawn_pose(), settings(time_scale)).unwrap();
    let addr = relay.addr.to_string();
    let m = mw.clone();
    let task = tokio::spawn(async move {
        let _ = m.connect(&addr).await;
    });
    for _ in 0..500 {
        if relay.relay.middleware_online(project) {
            return RunningMiddleware { mw, task };
        }
        tokio::time::sleep(std::time::Duration::from_millis(10)).await;
    }
    panic!("middleware for {project} never came online");
}

pub async fn client(relay: &RunningRelay, token: &str, project: &str) -> RelayClient {
    RelayClient::connect(&relay.addr.to_string(), token, project).await.unwrap()
}

/// The same mission run in-process with the robot's settings.
pub fn local_run(mission: &Mission) -> sitewalk_core::MissionLog {
    let s = settings(0.0);
    sitewalk_core::Simulator::new(mission.clone(), Arc::new(model()), s.sim_config(), s.seed)
        .unwrap()
        .run()
        .unwrap()
}
