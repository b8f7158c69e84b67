//! The mission document: the serialized unit of robot work.
//!
//! Layout is fixed (field order and 6-decimal floats) so that documents are
//! byte-stable and can be compared against golden files.

use crate::geometry::Point;
use crate::planner::{polyline_length, Path};
use serde::Deserialize;
use std::collections::HashSet;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MissionError {
    #[error("malformed mission document: {0}")]
    Parse(String),
    #[error("invalid mission: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissionWaypoint {
    pub point: Point,
    pub is_drp: bool,
    pub drp_id: Option<String>,
}

impl MissionWaypoint {
    pub fn plain(point: Point) -> Self {
        Self {
            point,
            is_drp: false,
            drp_id: None,
        }
    }

    pub fn drp(point: Point, id: impl Into<String>) -> Self {
        Self {
            point,
            is_drp: true,
            drp_id: Some(id.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mission {
    pub mission_id: String,
    /// RFC 3339 timestamp.
    pub created_at: String,
    pub speed_mps: f64,
    pub dwell_s: f64,
    pub waypoints: Vec<MissionWaypoint>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MissionDoc {
    mission_id: String,
    created_at: String,
    speed_mps: f64,
    dwell_s: f64,
    waypoints: Vec<WaypointDoc>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WaypointDoc {
    x: f64,
    y: f64,
    is_drp: bool,
    drp_id: Option<String>,
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("strings serialize")
}

impl Mission {
    pub fn path_length(&self) -> f64 {
        polyline_length(&self.points())
    }

    pub fn points(&self) -> Vec<Point> {
        self.waypoints.iter().map(|w| w.point).collect()
    }

    pub fn path(&self) -> Path {
        Path::new(self.points())
    }

    pub fn drp_count(&self) -> usize {
        self.waypoints.iter().filter(|w| w.is_drp).count()
    }

    /// DRP ids in visiting order.
    pub fn drp_ids(&self) -> Vec<String> {
        self.waypoints.iter().filter_map(|w| w.drp_id.clone()).collect()
    }

    /// Travel time plus dwell time at every DRP.
    pub fn estimated_duration(&self) -> f64 {
        self.path_length() / self.speed_mps + self.drp_count() as f64 * self.dwell_s
    }

    pub fn validate(&self) -> Result<(), MissionError> {
        let bad = |m: String| Err(MissionError::Invalid(m));
        if self.mission_id.is_empty() {
            return bad("empty mission_id".into());
        }
        if !(self.speed_mps.is_finite() && self.speed_mps > 0.0) {
            return bad(format!("speed_mps must be positive, got {}", self.speed_mps));
        }
        if !(self.dwell_s.is_finite() && self.dwell_s >= 0.0) {
            return bad(format!("dwell_s must be non-negative, got {}", self.dwell_s));
        }
        if self.waypoints.is_empty() {
            return bad("mission has no waypoints".into());
        }
        let mut ids = HashSet::new();
        for (i, w) in self.waypoints.iter().enumerate() {
            if !(w.point.x.is_finite() && w.point.y.is_finite()) {
                return bad(format!("waypoint {i} is not finite"));
            }
            match (&w.drp_id, w.is_drp) {
                (Some(id), true) if !id.is_empty() => {
                    if !ids.insert(id.as_str()) {
                        return bad(format!("DRP `{id}` appears twice"));
                    }
                }
                (None, false) => {}
                _ => return bad(format!("waypoint {i}: is_drp and drp_id disagree")),
            }
        }
        Ok(())
    }

    /// The wire document.
    pub fn to_wire(&self) -> String {
        let mut out = String::new();
        out.push_str("{\n");
        let _ = writeln!(out, "  \"mission_id\": {},", json_str(&self.mission_id));
        let _ = writeln!(out, "  \"created_at\": {},", json_str(&self.created_at));
        let _ = writeln!(out, "  \"speed_mps\": {:.6},", self.speed_mps);
        let _ = writeln!(out, "  \"dwell_s\": {:.6},", self.dwell_s);
        out.push_str("  \"waypoints\": [");
        for (i, w) in self.waypoints.iter().enumerate() {
            out.push_str(if i == 0 { "\n" } else { ",\n" });
            let drp = w.drp_id.as_deref().map_or_else(|| "null".to_string(), json_str);
            let _ = write!(
                out,
                "    {{\"x\": {:.6}, \"y\": {:.6}, \"is_drp\": {}, \"drp_id\": {}}}",
                w.point.x, w.point.y, w.is_drp, drp
            );
        }
        out.push_str("\n  ]\n}\n");
        out
    }

    /// Parses and validates a wire document.
    pub fn from_wire(bytes: &[u8]) -> Result<Mission, MissionError> {
        let doc: MissionDoc = serde_json::from_slice(bytes).map_err(|e| MissionError::Parse(e.to_string()))?;
        let mission = Mission {
            mission_id: doc.mission_id,
            created_at: doc.created_at,
            speed_mps: doc.speed_mps,
            dwell_s: doc.dwell_s,
            waypoints: doc
                .waypoints
                .into_iter()
                .map(|w| MissionWaypoint {
                    point: Point::new(w.x, w.y),
                    is_drp: w.is_drp,
                    drp_id: w.drp_id,
                })
                .collect(),
        };
        mission.validate()?;
        Ok(mission)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Mission {
        Mission {
            mission_id: "m-1".into(),
            created_at: "2026-10-16T00:00:00Z".into(),
            speed_mps: 0.4,
            dwell_s: 20.667,
            waypoints: vec![
                MissionWaypoint::plain(Point::new(0.0, 0.0)),
                MissionWaypoint::plain(Point::new(3.0, 0.0)),
                MissionWaypoint::drp(Point::new(3.0, 4.0), "d\"1"),
            ],
        }
    }

    #[test]
    fn wire_round_trip_is_byte_identical() {
        let m = sample();
        let wire = m.to_wire();
        let back = Mission::from_wire(wire.as_bytes()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_wire(), wire);
        assert!(wire.contains("\"speed_mps\": 0.400000"));
    }

    #[test]
    fn derived_quantities() {
        let m = sample();
        assert_eq!(m.path_length(), 7.0);
        assert_eq!(m.drp_ids(), vec!["d\"1".to_string()]);
        assert!((m.estimated_duration() - (7.0 / 0.4 + 20.667)).abs() < 1e-12);
    }

    #[test]
    fn rejects_inconsistent_documents() {
        assert!(matches!(Mission::from_wire(b"{]"), Err(MissionError::Parse(_))));
        let mut m = sample();
        m.waypoints[1].is_drp = true;
        assert!(matches!(Mission::from_wire(m.to_wire().as_bytes()), Err(MissionError::Invalid(_))));
        let mut m = sample();
        m.speed_mps = 0.0;
        assert!(matches!(Mission::from_wire(m.to_wire().as_bytes()), Err(MissionError::Invalid(_))));
        let mut m = sample();
        m.waypoints.push(MissionWaypoint::drp(Point::new(1.0, 1.0), "d\"1"));
        assert!(m.validate().is_err());
    }
}
