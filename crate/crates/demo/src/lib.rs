//! WebAssembly bindings for the planning and localization core.
//!
//! `Site` holds a building model and its navigation grid. The page draws the
//! walkable mask, asks for a mission through clicked DRPs, checks fiducial
//! coverage along it and plots the placement error curve.

use serde::Serialize;
use sitewalk_core::localization::DEFAULT_VISIBILITY_RANGE;
use sitewalk_core::model::DEFAULT_ROBOT_RADIUS;
use sitewalk_core::sim::{DEFAULT_DWELL, DEFAULT_SPEED};
use sitewalk_core::{
    build_nav_grid, compose_mission, extract_walkable_region, load_building_model, placement_error_deviation,
    validate_fiducial_coverage, BuildingModel, Drp, NavGrid, Point, Pose2D, DEFAULT_CELL_SIZE,
};
use wasm_bindgen::prelude::*;

pub const BFH_MODEL: &str = include_str!("../../../fixtures/bfh_approx.json");

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlannedMission {
    pub mission_id: String,
    pub drp_ids: Vec<String>,
    /// Flattened `[x0, y0, x1, y1, ...]`.
    pub waypoints: Vec<f64>,
    pub length: f64,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coverage {
    pub covered: bool,
    /// Flattened `[start0, end0, start1, end1, ...]` arc-length spans.
    pub gaps: Vec<f64>,
    pub max_gap: f64,
}

#[derive(Debug, Clone, Serialize)]
struct FiducialView {
    id: String,
    x: f64,
    y: f64,
    theta: f64,
}

#[wasm_bindgen]
pub struct Site {
    model: BuildingModel,
    grid: NavGrid,
}

impl Site {
    pub fn load(model_json: &str) -> Result<Site, String> {
        let model = load_building_model(model_json.as_bytes()).map_err(|e| e.to_string())?;
        let region = extract_walkable_region(&model, DEFAULT_ROBOT_RADIUS).map_err(|e| e.to_string())?;
        let grid = build_nav_grid(&region, DEFAULT_CELL_SIZE).map_err(|e| e.to_string())?;
        Ok(Site { model, grid })
    }

    /// Greedy mission from `(x, y)` through `drps`, given as `[x0, y0, x1, y1, ...]`
    /// and named `P1`, `P2`, ... in input order.
    pub fn plan_points(&self, x: f64, y: f64, drps: &[f64]) -> Result<PlannedMission, String> {
        if drps.len() % 2 != 0 {
            return Err("DRP coordinates must come in pairs".into());
        }
        let drps: Vec<Drp> = drps
            .chunks(2)
            .enumerate()
            .map(|(i, c)| Drp::new(format!("P{}", i + 1), c[0], c[1]))
            .collect();
        let mission = compose_mission(
            &self.grid,
            &Pose2D::new(x, y, 0.0),
            &drps,
            DEFAULT_SPEED,
            DEFAULT_DWELL,
            "1970-01-01T00:00:00Z",
        )
        .map_err(|e| e.to_string())?;
        Ok(PlannedMission {
            mission_id: mission.mission_id.clone(),
            drp_ids: mission.drp_ids(),
            waypoints: mission.waypoints.iter().flat_map(|w| [w.point.x, w.point.y]).collect(),
            length: mission.path_length(),
            duration: mission.estimated_duration(),
        })
    }

    /// Fiducial coverage along a polyline given as `[x0, y0, x1, y1, ...]`.
    pub fn coverage_along(&self, polyline: &[f64], range: f64) -> Result<Coverage, String> {
        if polyline.len() < 2 || polyline.len() % 2 != 0 {
            return Err("polyline needs at least one point".into());
        }
        if !(range.is_finite() && range > 0.0) {
            return Err(format!("visibility range must be positive, got {range}"));
        }
        let points: Vec<Point> = polyline.chunks(2).map(|c| Point::new(c[0], c[1])).collect();
        let report = validate_fiducial_coverage(&sitewalk_core::Path::new(points), &self.model, range, 0.1);
        Ok(Coverage {
            covered: report.covered,
            gaps: report.gaps.iter().flat_map(|g| [g.start, g.end]).collect(),
            max_gap: report.max_gap_distance,
        })
    }
}

fn js_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("plain data serializes")
}

#[wasm_bindgen]
impl Site {
    #[wasm_bindgen(constructor)]
    pub fn new(model_json: &str) -> Result<Site, JsError> {
        Site::load(model_json).map_err(|e| JsError::new(&e))
    }

    pub fn bfh() -> Site {
        Site::load(BFH_MODEL).expect("bundled model loads")
    }

    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.grid.width()
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.grid.height()
    }

    #[wasm_bindgen(getter, js_name = cellSize)]
    pub fn cell_size(&self) -> f64 {
        self.grid.cell_size()
    }

    #[wasm_bindgen(getter, js_name = originX)]
    pub fn origin_x(&self) -> f64 {
        self.grid.origin().x
    }

    #[wasm_bindgen(getter, js_name = originY)]
    pub fn origin_y(&self) -> f64 {
        self.grid.origin().y
    }

    /// Row-major walkable mask, row 0 at the smallest y.
    #[wasm_bindgen(js_name = walkableMask)]
    pub fn walkable_mask(&self) -> Vec<u8> {
        self.grid.occupancy().iter().map(|&w| w as u8).collect()
    }

    /// Fiducials as a JSON array of `{id, x, y, theta}`.
    pub fn fiducials(&self) -> String {
        let list: Vec<FiducialView> = self
            .model
            .fiducials
            .iter()
            .map(|f| FiducialView { id: f.id.clone(), x: f.pose.x, y: f.pose.y, theta: f.pose.theta })
            .collect();
        js_json(&list)
    }

    /// Mission as JSON; see [`PlannedMission`].
    pub fn plan(&self, x: f64, y: f64, drps: &[f64]) -> Result<String, JsError> {
        self.plan_points(x, y, drps).map(|m| js_json(&m)).map_err(|e| JsError::new(&e))
    }

    /// Coverage report as JSON; see [`Coverage`].
    pub fn coverage(&self, polyline: &[f64], range: f64) -> Result<String, JsError> {
        self.coverage_along(polyline, range).map(|c| js_json(&c)).map_err(|e| JsError::new(&e))
    }
}

#[wasm_bindgen(js_name = defaultVisibilityRange)]
pub fn default_visibility_range() -> f64 {
    DEFAULT_VISIBILITY_RANGE
}

/// Position error at each of `samples` distances spread evenly over
/// `[0, max_distance]`, for a marker rotated by `orientation_error_deg`.
#[wasm_bindgen(js_name = errorCurve)]
pub fn error_curve(max_distance: f64, orientation_error_deg: f64, samples: usize) -> Vec<f64> {
    let theta = orientation_error_deg.to_radians();
    let n = samples.max(2);
    (0..n)
        .map(|i| placement_error_deviation(max_distance * i as f64 / (n - 1) as f64, theta))
        .collect()
}
