//! Frame math for fiducial-based localization.
//!
//! Three frames are involved: the world (model) frame, the frame of each
//! fiducial marker and the robot body frame. A [`Pose2D`] expressed in frame A
//! doubles as the rigid transform taking coordinates from its own frame into A.

use crate::geometry::Point;
use crate::model::BuildingModel;
use crate::planner::Path;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

pub const DEFAULT_VISIBILITY_RANGE: f64 = 8.0;
pub const DEFAULT_SAMPLE_STEP: f64 = 0.25;

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(theta: f64) -> f64 {
    let mut a = theta.rem_euclid(TAU);
    if a > PI {
        a -= TAU;
    }
    // rem_euclid can return TAU itself for tiny negative inputs
    if a <= -PI {
        a += TAU;
    }
    a
}

/// Planar pose; heading is always normalized into `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "RawPose")]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

#[derive(Deserialize)]
struct RawPose {
    x: f64,
    y: f64,
    theta: f64,
}

impl From<RawPose> for Pose2D {
    fn from(p: RawPose) -> Self {
        Pose2D::new(p.x, p.y, p.theta)
    }
}

impl Pose2D {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    pub fn position(&self) -> Point {
        Point::new(self.x, self.y)
    }

    pub fn to_transform(self) -> Transform2D {
        Transform2D {
            rotation: self.theta,
            dx: self.x,
            dy: self.y,
        }
    }

    /// `self ∘ other`: `other` is expressed in the frame described by `self`.
    pub fn compose(&self, other: &Pose2D) -> Pose2D {
        self.to_transform().compose(&other.to_transform()).to_pose()
    }

    /// `other` re-expressed in the frame described by `self`.
    pub fn relative(&self, other: &Pose2D) -> Pose2D {
        self.to_transform().inverse().compose(&other.to_transform()).to_pose()
    }
}

/// Rigid planar transform: rotate by `rotation`, then translate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform2D {
    pub rotation: f64,
    pub dx: f64,
    pub dy: f64,
}

impl Transform2D {
    pub const IDENTITY: Transform2D = Transform2D {
        rotation: 0.0,
        dx: 0.0,
        dy: 0.0,
    };

    pub fn apply(&self, p: Point) -> Point {
        let (s, c) = self.rotation.sin_cos();
        Point::new(c * p.x - s * p.y + self.dx, s * p.x + c * p.y + self.dy)
    }

    /// Rotates a free vector (no translation).
    pub fn apply_vector(&self, v: Point) -> Point {
        let (s, c) = self.rotation.sin_cos();
        Point::new(c * v.x - s * v.y, s * v.x + c * v.y)
    }

    /// `self ∘ other`, applying `other` first.
    pub fn compose(&self, other: &Transform2D) -> Transform2D {
        let t = self.apply(Point::new(other.dx, other.dy));
        Transform2D {
            rotation: normalize_angle(self.rotation + other.rotation),
            dx: t.x,
            dy: t.y,
        }
    }

    pub fn inverse(&self) -> Transform2D {
        let (s, c) = self.rotation.sin_cos();
        Transform2D {
            rotation: normalize_angle(-self.rotation),
            dx: -(c * self.dx + s * self.dy),
            dy: -(-s * self.dx + c * self.dy),
        }
    }

    pub fn to_pose(self) -> Pose2D {
        Pose2D::new(self.dx, self.dy, self.rotation)
    }
}

/// What the robot's cameras report about one marker: the robot pose in the
/// marker frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiducialObservation {
    pub fiducial_id: String,
    pub relative_pose: Pose2D,
    pub range: f64,
}

impl FiducialObservation {
    pub fn new(fiducial_id: impl Into<String>, relative_pose: Pose2D) -> Self {
        Self {
            fiducial_id: fiducial_id.into(),
            range: relative_pose.position().norm(),
            relative_pose,
        }
    }
}

/// World pose of the robot from a marker observation and the marker's
/// modelled world pose.
pub fn pose_from_fiducial(obs: &FiducialObservation, fiducial_world: &Pose2D) -> Pose2D {
    fiducial_world.compose(&obs.relative_pose)
}

/// Vector from the robot to `waypoint`, in the robot body frame.
pub fn waypoint_to_robot_frame(waypoint: Point, robot_world: &Pose2D) -> Point {
    let d = waypoint - robot_world.position();
    let (s, c) = robot_world.theta.sin_cos();
    Point::new(c * d.x + s * d.y, -s * d.x + c * d.y)
}

/// Fiducials in range with an unobstructed sight line, nearest first.
pub fn visible_fiducials(pose: &Pose2D, model: &BuildingModel, visibility_range: f64) -> Vec<String> {
    let here = pose.position();
    let mut seen: Vec<(f64, &str)> = model
        .fiducials
        .iter()
        .filter_map(|f| {
            let d = f.pose.position().distance(here);
            (d <= visibility_range && model.line_of_sight(here, f.pose.position()))
                .then_some((d, f.id.as_str()))
        })
        .collect();
    seen.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    seen.into_iter().map(|(_, id)| id.to_string()).collect()
}

/// Arc-length interval (m) along a path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub covered: bool,
    /// Spans of consecutive samples that saw no fiducial, first to last uncovered sample.
    pub gaps: Vec<Interval>,
    pub max_gap_distance: f64,
}


/// Noise-free estimate of where a robot at `truth` believes it is: the nearest
/// visible marker is observed in its installed frame and resolved against its
/// modelled pose. `None` when no marker is in view.
pub fn observe_pose(truth: &Pose2D, model: &BuildingModel, visibility_range: f64) -> Option<(Pose2D, String)> {
    let id = visible_fiducials(truth, model, visibility_range).into_iter().next()?;
    let spec = model.fiducial(&id)?;
    let obs = FiducialObservation::new(id.clone(), spec.installed_pose().relative(truth));
    Some((pose_from_fiducial(&obs, &spec.pose), id))
}

/// Samples `path` every `sample_step` meters (plus its end point) and reports
/// where no fiducial would be visible.
///
/// # Panics
/// If `sample_step` is not positive.
pub fn validate_fiducial_coverage(
    path: &Path,
    model: &BuildingModel,
    visibility_range: f64,
    sample_step: f64,
) -> CoverageReport {
    assert!(sample_step > 0.0, "sample_step must be positive");
    let total = path.length;
    let mut stations = Vec::new();
    let mut k = 0usize;
    loop {
        let s = k as f64 * sample_step;
        if s >= total {
            break;
        }
        stations.push(s);
        k += 1;
    }
    stations.push(total);

    let mut gaps = Vec::new();
    let mut open: Option<Interval> = None;
    for s in stations {
        let p = path.point_at(s);
        let visible = !visible_fiducials(&Pose2D::new(p.x, p.y, 0.0), model, visibility_range).is_empty();
        match (&mut open, visible) {
            (Some(gap), false) => gap.end = s,
            (None, false) => open = Some(Interval { start: s, end: s }),
            (Some(_), true) => gaps.extend(open.take()),
            (None, true) => {}
        }
    }
    gaps.extend(open);
    let max_gap_distance = gaps.iter().map(Interval::len).fold(0.0, f64::max);
    CoverageReport {
        covered: gaps.is_empty(),
        gaps,
        max_gap_distance,
    }
}

/// Position error of a pose localized at `distance` from a fiducial whose
/// installed frame is rotated by `orientation_error` relative to the model:
/// the chord `2 d sin(|θ| / 2)`.
pub fn placement_error_deviation(distance: f64, orientation_error: f64) -> f64 {
    2.0 * distance * (orientation_error.abs() / 2.0).sin()
}
