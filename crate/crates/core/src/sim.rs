//! Kinematic simulation of the quadruped and its 360° camera.
//!
//! The robot follows mission waypoints at constant speed with instantaneous
//! turns, dwells at every DRP and fires the camera when the dwell ends. Each
//! step re-localizes from the nearest visible fiducial, falling back to dead
//! reckoning when none is in view.

use crate::capture::{capture_panorama, Capture};
use crate::geometry::Point;
use crate::localization::{pose_from_fiducial, visible_fiducials, FiducialObservation, Pose2D, DEFAULT_VISIBILITY_RANGE};
use crate::mission::{Mission, MissionError};
use crate::model::{extract_walkable_region, BuildingModel, WalkableRegion, DEFAULT_ROBOT_RADIUS};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

pub const DEFAULT_DT: f64 = 0.05;
pub const DEFAULT_SPEED: f64 = 0.4;
/// (230 s - 42.4 m / 0.4 m/s) / 6 DRPs.
pub const DEFAULT_DWELL: f64 = 20.667;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("robot left the walkable region at ({x:.3}, {y:.3}) after {t:.2} s")]
    InvariantViolation { t: f64, x: f64, y: f64 },
    #[error("mission exceeded its time budget ({elapsed:.1} s > {limit:.1} s)")]
    Timeout { elapsed: f64, limit: f64 },
    #[error(transparent)]
    Mission(#[from] MissionError),
    #[error("invalid simulation config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub visibility_range: f64,
    pub robot_radius: f64,
    /// Clearance the simulated robot may lose relative to the planner's
    /// inflation before the run is declared invalid (grid discretization).
    pub clearance_tolerance: f64,
    /// Standard deviation (m) of additive noise on fiducial observations.
    pub observation_noise: f64,
    /// Abort once simulated time exceeds this multiple of the planned duration.
    pub timeout_factor: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: DEFAULT_DT,
            visibility_range: DEFAULT_VISIBILITY_RANGE,
            robot_radius: DEFAULT_ROBOT_RADIUS,
            clearance_tolerance: 0.15,
            observation_noise: 0.0,
            timeout_factor: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Moving,
    Dwelling,
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub true_pose: Pose2D,
    pub estimated_pose: Pose2D,
    /// Index of the next waypoint to reach.
    pub waypoint_index: usize,
    pub elapsed: f64,
    pub phase: Phase,
    pub dwell_remaining: f64,
    pub localization_degraded: bool,
    pub localized_by: Option<String>,
    pub distance_travelled: f64,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetrySample {
    pub t: f64,
    pub estimated_pose: Pose2D,
    pub true_pose: Pose2D,
    pub localization_degraded: bool,
    pub fiducial_id: Option<String>,
    pub waypoint_index: usize,
}

impl TelemetrySample {
    pub fn localization_error(&self) -> f64 {
        self.estimated_pose.position().distance(self.true_pose.position())
    }

    fn of(state: &SimState) -> Self {
        Self {
            t: state.elapsed,
            estimated_pose: state.estimated_pose,
            true_pose: state.true_pose,
            localization_degraded: state.localization_degraded,
            fiducial_id: state.localized_by.clone(),
            waypoint_index: state.waypoint_index,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionLog {
    pub mission_id: String,
    pub captures: Vec<Capture>,
    pub telemetry: Vec<TelemetrySample>,
    pub total_time: f64,
    pub distance_travelled: f64,
    pub max_localization_error: f64,
}

impl MissionLog {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("mission log serializes")
    }
}

/// Result of advancing the simulation by one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: SimState,
    pub captures: Vec<Capture>,
}

pub struct Simulator {
    mission: Mission,
    model: Arc<BuildingModel>,
    region: WalkableRegion,
    config: SimConfig,
    rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
}

impl Simulator {
    pub fn new(mission: Mission, model: Arc<BuildingModel>, config: SimConfig, seed: u64) -> Result<Self, SimError> {
        mission.validate()?;
        if !(config.dt > 0.0 && config.dt.is_finite()) {
            return Err(SimError::Config(format!("dt must be positive, got {}", config.dt)));
        }
        if !(config.visibility_range > 0.0) {
            return Err(SimError::Config("visibility range must be positive".into()));
        }
        let check_radius = (config.robot_radius - config.clearance_tolerance).max(0.0);
        let region = extract_walkable_region(&model, check_radius)
            .map_err(|e| SimError::Config(e.to_string()))?;
        let noise = (config.observation_noise > 0.0)
            .then(|| Normal::new(0.0, config.observation_noise))
            .transpose()
            .map_err(|e| SimError::Config(e.to_string()))?;
        Ok(Self {
            mission,
            model,
            region,
            config,
            rng: ChaCha8Rng::seed_from_u64(seed),
            noise,
        })
    }

    pub fn mission(&self) -> &Mission {
        &self.mission
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    /// Simulated time after which the run is aborted.
    pub fn time_limit(&self) -> f64 {
        self.config.timeout_factor * self.mission.estimated_duration() + self.config.dt
    }

    /// Robot standing on the first waypoint, facing the second.
    pub fn initial_state(&mut self) -> SimState {
        let wps = &self.mission.waypoints;
        let start = wps[0].point;
        let heading = wps
            .get(1)
            .map(|w| w.point - start)
            .filter(|d| d.norm() > 0.0)
            .map_or(0.0, |d| d.y.atan2(d.x));
        let true_pose = Pose2D::new(start.x, start.y, heading);
        let (estimated_pose, localized_by) = self.localize(&true_pose, None);
        let mut state = SimState {
            true_pose,
            estimated_pose,
            waypoint_index: 0,
            elapsed: 0.0,
            phase: Phase::Moving,
            dwell_remaining: 0.0,
            localization_degraded: localized_by.is_none(),
            localized_by,
            distance_travelled: 0.0,
            steps: 0,
        };
        self.arrive(&mut state);
        state
    }

    fn arrive(&self, state: &mut SimState) {
        let k = state.waypoint_index;
        state.waypoint_index = k + 1;
        if self.mission.waypoints[k].is_drp {
            state.phase = Phase::Dwelling;
            state.dwell_remaining = self.mission.dwell_s;
        } else if state.waypoint_index == self.mission.waypoints.len() {
            state.phase = Phase::Done;
        } else {
            state.phase = Phase::Moving;
        }
    }

    /// Pose estimate from the nearest visible fiducial; dead reckoning from the
    /// previous estimate when none is visible (`previous` = (estimate, truth)).
    fn localize(&mut self, truth: &Pose2D, previous: Option<(&Pose2D, &Pose2D)>) -> (Pose2D, Option<String>) {
        let visible = visible_fiducials(truth, &self.model, self.config.visibility_range);
        if let Some(spec) = visible.first().and_then(|id| self.model.fiducial(id)) {
            let mut relative = spec.installed_pose().relative(truth);
            if let Some(noise) = &self.noise {
                relative = Pose2D::new(
                    relative.x + noise.sample(&mut self.rng),
                    relative.y + noise.sample(&mut self.rng),
                    relative.theta,
                );
            }
            let obs = FiducialObservation::new(spec.id.clone(), relative);
            return (pose_from_fiducial(&obs, &spec.pose), Some(spec.id.clone()));
        }
        match previous {
            Some((est, prev_truth)) => (est.compose(&prev_truth.relative(truth)), None),
            None => (*truth, None),
        }
    }

    /// Advances `state` by one `dt`. Motion never overshoots a waypoint; time
    /// left over after an arrival carries into the dwell or the next segment.
    pub fn step(&mut self, state: &SimState) -> Result<StepOutcome, SimError> {
        let mut s = state.clone();
        let mut captures = Vec::new();
        if s.phase == Phase::Done {
            return Ok(StepOutcome { state: s, captures });
        }
        let dt = self.config.dt;
        let speed = self.mission.speed_mps;
        let t0 = s.steps as f64 * dt;
        let previous_truth = s.true_pose;
        let previous_estimate = s.estimated_pose;
        let mut budget = dt;

        loop {
            match s.phase {
                Phase::Done => break,
                Phase::Moving => {
                    if budget <= 0.0 {
                        break;
                    }
                    let target = self.mission.waypoints[s.waypoint_index].point;
                    let here = s.true_pose.position();
                    let delta = target - here;
                    let dist = delta.norm();
                    let heading = if dist > 0.0 { delta.y.atan2(delta.x) } else { s.true_pose.theta };
                    let reach = speed * budget;
                    if reach < dist {
                        let p = here + delta * (reach / dist);
                        s.true_pose = Pose2D::new(p.x, p.y, heading);
                        s.distance_travelled += reach;
                        budget = 0.0;
                    } else {
                        s.true_pose = Pose2D::new(target.x, target.y, heading);
                        s.distance_travelled += dist;
                        budget -= dist / speed;
                        self.arrive(&mut s);
                    }
                }
                Phase::Dwelling => {
                    if s.dwell_remaining > budget {
                        s.dwell_remaining -= budget;
                        budget = 0.0;
                        break;
                    }
                    budget -= s.dwell_remaining;
                    s.dwell_remaining = 0.0;
                    let (est, _) = self.localize(&s.true_pose, Some((&previous_estimate, &previous_truth)));
                    let wp = &self.mission.waypoints[s.waypoint_index - 1];
                    let drp_id = wp.drp_id.as_deref().unwrap_or_default();
                    let mut capture = capture_panorama(&self.mission.mission_id, drp_id, &est);
                    capture.timestamp = t0 + (dt - budget);
                    captures.push(capture);
                    s.phase = if s.waypoint_index == self.mission.waypoints.len() {
                        Phase::Done
                    } else {
                        Phase::Moving
                    };
                }
            }
        }

        s.steps += 1;
        s.elapsed = if s.phase == Phase::Done { t0 + (dt - budget) } else { s.steps as f64 * dt };
        let (est, by) = self.localize(&s.true_pose, Some((&previous_estimate, &previous_truth)));
        s.estimated_pose = est;
        s.localization_degraded = by.is_none();
        s.localized_by = by;

        let p: Point = s.true_pose.position();
        if !self.region.contains(p) {
            return Err(SimError::InvariantViolation { t: s.elapsed, x: p.x, y: p.y });
        }
        if s.elapsed > self.time_limit() {
            return Err(SimError::Timeout {
                elapsed: s.elapsed,
                limit: self.time_limit(),
            });
        }
        Ok(StepOutcome { state: s, captures })
    }

    /// Steps until the mission is done.
    pub fn run(&mut self) -> Result<MissionLog, SimError> {
        let mut state = self.initial_state();
        let mut telemetry = vec![TelemetrySample::of(&state)];
        let mut captures = Vec::new();
        while state.phase != Phase::Done {
            let out = self.step(&state)?;
            state = out.state;
            captures.extend(out.captures);
            telemetry.push(TelemetrySample::of(&state));
        }
        let max_localization_error = telemetry
            .iter()
            .map(TelemetrySample::localization_error)
            .fold(0.0, f64::max);
        Ok(MissionLog {
            mission_id: self.mission.mission_id.clone(),
            captures,
            total_time: state.elapsed,
            distance_travelled: state.distance_travelled,
            max_localization_error,
            telemetry,
        })
    }
}

/// Runs `mission` to completion with the default simulation settings.
pub fn execute_mission(mission: &Mission, model: &BuildingModel, seed: u64) -> Result<MissionLog, SimError> {
    execute_mission_with(mission, model, SimConfig::default(), seed)
}

pub fn execute_mission_with(
    mission: &Mission,
    model: &BuildingModel,
    config: SimConfig,
    seed: u64,
) -> Result<MissionLog, SimError> {
    Simulator::new(mission.clone(), Arc::new(model.clone()), config, seed)?.run()
}
