//! Planning, localization and simulation core for robotic reality capture on
//! construction sites.
//!
//! A [`model::BuildingModel`] describes one floor of the building. The planner
//! rasterizes its walkable region into a [`grid::NavGrid`], orders the capture
//! points greedily and emits a [`mission::Mission`]. The [`sim`] module drives
//! a kinematic robot through that mission, localizing from fiducials and
//! producing one synthetic panorama per capture point.

pub mod capture;
pub mod geometry;
pub mod grid;
pub mod localization;
pub mod mission;
pub mod model;
pub mod planner;
pub mod sim;

pub use capture::{capture_panorama, Capture};
pub use geometry::{Point, Polygon, Rect};
pub use grid::{build_nav_grid, GridCost, NavGrid, DEFAULT_CELL_SIZE};
pub use localization::{
    observe_pose, placement_error_deviation, pose_from_fiducial, validate_fiducial_coverage, visible_fiducials,
    waypoint_to_robot_frame, CoverageReport, FiducialObservation, Pose2D, Transform2D,
};
pub use mission::{Mission, MissionError, MissionWaypoint};
pub use model::{extract_walkable_region, load_building_model, BuildingModel, Layer, ModelError, WalkableRegion};
pub use planner::{compose_mission, order_drps_greedy, shortest_path, Drp, Path, PlanError};
pub use sim::{execute_mission, MissionLog, SimConfig, SimError, SimState, Simulator};
