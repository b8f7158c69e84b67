//! Building model document loading, validation and walkable-region extraction.
//!
//! The model is a 2.5D layered description of one floor: every element has a
//! footprint polygon and a semantic layer. Floors make up the walkable surface,
//! walls and furniture block it (inflated by the robot radius) and doors never
//! subtract area.

use crate::geometry::{Point, Polygon, Rect};
use crate::localization::Pose2D;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::f64::consts::FRAC_PI_2;
use thiserror::Error;

pub const DEFAULT_ROBOT_RADIUS: f64 = 0.3;

/// Resolution used when measuring region area.
pub const AREA_SAMPLE_SIZE: f64 = 0.1;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("malformed building model: {0}")]
    Parse(String),
    #[error("invalid element `{id}`: {reason}")]
    Validation { id: String, reason: String },
    #[error("robot radius must be a finite non-negative length, got {0}")]
    InvalidRadius(f64),
    #[error("walkable region is empty")]
    EmptyRegion,
}

impl ModelError {
    fn invalid(id: impl Into<String>, reason: impl Into<String>) -> Self {
        ModelError::Validation {
            id: id.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    Wall,
    Floor,
    Door,
    Furniture,
    Other,
}

impl Layer {
    /// Layers whose footprints block the robot.
    pub fn is_obstacle(self) -> bool {
        matches!(self, Layer::Wall | Layer::Furniture)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub id: String,
    pub layer: Layer,
    pub footprint: Polygon,
    /// Informational only; planning is planar.
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiducialSpec {
    pub id: String,
    /// Pose of the marker frame as recorded in the model.
    pub pose: Pose2D,
    /// Rotation between the modelled and the installed marker. Simulation only.
    pub placement_orientation_error: f64,
}

impl FiducialSpec {
    /// Where the marker actually hangs on site.
    pub fn installed_pose(&self) -> Pose2D {
        Pose2D::new(
            self.pose.x,
            self.pose.y,
            self.pose.theta + self.placement_orientation_error,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildingModel {
    pub units: String,
    pub bounds: Rect,
    pub elements: Vec<Element>,
    pub fiducials: Vec<FiducialSpec>,
}

// Wire shapes of the JSON document.

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    units: String,
    bounds: [f64; 4],
    elements: Vec<ElementDoc>,
    #[serde(default)]
    fiducials: Vec<FiducialDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ElementDoc {
    id: String,
    layer: Layer,
    footprint: Vec<[f64; 2]>,
    #[serde(default)]
    height: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FiducialDoc {
    id: String,
    pose: PoseDoc,
    #[serde(default)]
    orientation_error: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseDoc {
    x: f64,
    y: f64,
    theta: f64,
}

/// Parses and validates a building-model document.
pub fn load_building_model(document: &[u8]) -> Result<BuildingModel, ModelError> {
    let doc: ModelDoc =
        serde_json::from_slice(document).map_err(|e| ModelError::Parse(e.to_string()))?;
    BuildingModel::from_doc(doc)
}

impl BuildingModel {
    fn from_doc(doc: ModelDoc) -> Result<Self, ModelError> {
        if doc.units != "m" {
            return Err(ModelError::invalid(
                "units",
                format!("unsupported unit `{}`", doc.units),
            ));
        }
        let [x0, y0, x1, y1] = doc.bounds;
        if !doc.bounds.iter().all(|v| v.is_finite()) || x1 <= x0 || y1 <= y0 {
            return Err(ModelError::invalid("bounds", "bounds must be [x0, y0, x1, y1] with x0 < x1 and y0 < y1"));
        }
        let bounds = Rect::new(x0, y0, x1, y1);

        let mut seen = HashSet::new();
        let mut elements = Vec::with_capacity(doc.elements.len());
        for e in doc.elements {
            if !seen.insert(e.id.clone()) {
                return Err(ModelError::invalid(&e.id, "duplicate element id"));
            }
            if !(e.height.is_finite() && e.height >= 0.0) {
                return Err(ModelError::invalid(&e.id, "height must be non-negative"));
            }
            let vertices: Vec<Point> = e.footprint.iter().map(|&[x, y]| Point::new(x, y)).collect();
            if vertices.iter().any(|v| !v.x.is_finite() || !v.y.is_finite()) {
                return Err(ModelError::invalid(&e.id, "non-finite vertex"));
            }
            let footprint = Polygon::new(vertices)
                .ok_or_else(|| ModelError::invalid(&e.id, "footprint needs at least 3 vertices"))?;
            if footprint.vertices().iter().any(|&v| !bounds.contains(v)) {
                return Err(ModelError::invalid(&e.id, "footprint leaves the model bounds"));
            }
            if !footprint.is_simple() {
                return Err(ModelError::invalid(&e.id, "footprint is not a simple polygon"));
            }
            elements.push(Element {
                id: e.id,
                layer: e.layer,
                footprint,
                height: e.height,
            });
        }

        let mut seen = HashSet::new();
        let mut fiducials = Vec::with_capacity(doc.fiducials.len());
        for f in doc.fiducials {
            if !seen.insert(f.id.clone()) {
                return Err(ModelError::invalid(&f.id, "duplicate fiducial id"));
            }
            let p = Point::new(f.pose.x, f.pose.y);
            if !bounds.contains(p) || !f.pose.theta.is_finite() {
                return Err(ModelError::invalid(&f.id, "fiducial lies outside the model bounds"));
            }
            if !(f.orientation_error.abs() < FRAC_PI_2) {
                return Err(ModelError::invalid(&f.id, "orientation error must be within (-pi/2, pi/2)"));
            }
            fiducials.push(FiducialSpec {
                id: f.id,
                pose: Pose2D::new(f.pose.x, f.pose.y, f.pose.theta),
                placement_orientation_error: f.orientation_error,
            });
        }

        Ok(BuildingModel {
            units: doc.units,
            bounds,
            elements,
            fiducials,
        })
    }

    fn to_doc(&self) -> ModelDoc {
        ModelDoc {
            units: self.units.clone(),
            bounds: [self.bounds.min.x, self.bounds.min.y, self.bounds.max.x, self.bounds.max.y],
            elements: self
                .elements
                .iter()
                .map(|e| ElementDoc {
                    id: e.id.clone(),
                    layer: e.layer,
                    footprint: e.footprint.vertices().iter().map(|v| [v.x, v.y]).collect(),
                    height: e.height,
                })
                .collect(),
            fiducials: self
                .fiducials
                .iter()
                .map(|f| FiducialDoc {
                    id: f.id.clone(),
                    pose: PoseDoc {
                        x: f.pose.x,
                        y: f.pose.y,
                        theta: f.pose.theta,
                    },
                    orientation_error: f.placement_orientation_error,
                })
                .collect(),
        }
    }

    /// Renders the model back into its document form.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_doc()).expect("model serializes")
    }

    pub fn elements_on(&self, layer: Layer) -> impl Iterator<Item = &Element> {
        self.elements.iter().filter(move |e| e.layer == layer)
    }

    pub fn obstacles(&self) -> impl Iterator<Item = &Element> {
        self.elements.iter().filter(|e| e.layer.is_obstacle())
    }

    /// Sum of floor footprint areas (overlaps counted twice).
    pub fn floor_area(&self) -> f64 {
        self.elements_on(Layer::Floor).map(|e| e.footprint.area()).fold(0.0, |a, b| a + b)
    }

    pub fn fiducial(&self, id: &str) -> Option<&FiducialSpec> {
        self.fiducials.iter().find(|f| f.id == id)
    }

    /// True when the sight line between two points crosses no wall or furniture.
    pub fn line_of_sight(&self, a: Point, b: Point) -> bool {
        !self.obstacles().any(|e| e.footprint.intersects_segment(a, b))
    }
}

/// Floor area that the robot centre may occupy.
///
/// Represented implicitly: a point is walkable when it lies on some floor
/// footprint, outside every obstacle, and at least `robot_radius` from each
/// obstacle boundary. Area and connectivity are evaluated on a raster.
#[derive(Debug, Clone)]
pub struct WalkableRegion {
    floors: Vec<Polygon>,
    obstacles: Vec<Polygon>,
    robot_radius: f64,
    bounds: Rect,
}

impl WalkableRegion {
    pub fn robot_radius(&self) -> f64 {
        self.robot_radius
    }

    /// Bounding box of the floor footprints.
    pub fn bounds(&self) -> Rect {
        self.bounds
    }

    pub fn floors(&self) -> &[Polygon] {
        &self.floors
    }

    pub fn obstacles(&self) -> &[Polygon] {
        &self.obstacles
    }

    pub fn contains(&self, p: Point) -> bool {
        if !self.floors.iter().any(|f| f.contains(p)) {
            return false;
        }
        let reach = self.robot_radius;
        self.obstacles.iter().all(|o| {
            if !o.bbox().expanded(reach).contains(p) {
                return true;
            }
            !o.contains(p) && o.boundary_distance(p) >= reach
        })
    }

    /// Area estimated by counting raster cells whose centres are walkable.
    pub fn area_at(&self, cell_size: f64) -> f64 {
        let nx = cells_spanning(self.bounds.width(), cell_size);
        let ny = cells_spanning(self.bounds.height(), cell_size);
        let mut count = 0usize;
        for j in 0..ny {
            let y = self.bounds.min.y + (j as f64 + 0.5) * cell_size;
            for i in 0..nx {
                let x = self.bounds.min.x + (i as f64 + 0.5) * cell_size;
                if self.contains(Point::new(x, y)) {
                    count += 1;
                }
            }
        }
        count as f64 * cell_size * cell_size
    }

    pub fn area(&self) -> f64 {
        self.area_at(AREA_SAMPLE_SIZE)
    }
}

/// Number of cells of `cell_size` needed to cover `length`, tolerant of
/// quotients like `10.0 / 0.1` landing a hair above an integer.
pub(crate) fn cells_spanning(length: f64, cell_size: f64) -> usize {
    ((length / cell_size) - 1e-9).ceil().max(1.0) as usize
}

/// Floor footprints minus wall and furniture footprints dilated by `robot_radius`.
pub fn extract_walkable_region(
    model: &BuildingModel,
    robot_radius: f64,
) -> Result<WalkableRegion, ModelError> {
    if !(robot_radius.is_finite() && robot_radius >= 0.0) {
        return Err(ModelError::InvalidRadius(robot_radius));
    }
    let floors: Vec<Polygon> = model
        .elements_on(Layer::Floor)
        .map(|e| e.footprint.clone())
        .collect();
    let Some(first) = floors.first() else {
        return Err(ModelError::EmptyRegion);
    };
    let bounds = floors.iter().fold(first.bbox(), |b, f| b.union(&f.bbox()));
    let region = WalkableRegion {
        floors,
        obstacles: model.obstacles().map(|e| e.footprint.clone()).collect(),
        robot_radius,
        bounds,
    };
    if region.area() == 0.0 {
        return Err(ModelError::EmptyRegion);
    }
    Ok(region)
}
