mod common;

use proptest::prelude::*;
use sitewalk_core::localization::{normalize_angle, DEFAULT_SAMPLE_STEP, DEFAULT_VISIBILITY_RANGE};
use sitewalk_core::sim::execute_mission_with;
use sitewalk_core::{
    build_nav_grid, compose_mission, extract_walkable_region, load_building_model, placement_error_deviation,
    pose_from_fiducial, validate_fiducial_coverage, FiducialObservation, Mission, MissionWaypoint, Point, Pose2D,
    SimConfig, Transform2D,
};

fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(std::f64::consts::TAU);
    d.min(std::f64::consts::TAU - d)
}

fn pose() -> impl Strategy<Value = Pose2D> {
    (-50.0f64..50.0, -50.0f64..50.0, -10.0f64..10.0).prop_map(|(x, y, t)| Pose2D::new(x, y, t))
}

/// Homogeneous 3x3 matrix of a pose, built independently of the library.
fn matrix(p: &Pose2D) -> [[f64; 3]; 3] {
    let (s, c) = p.theta.sin_cos();
    [[c, -s, p.x], [s, c, p.y], [0.0, 0.0, 1.0]]
}

fn matmul(a: [[f64; 3]; 3], b: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn pose_round_trips(a in pose(), b in pose()) {
        // a ∘ (a⁻¹ ∘ b) == b
        let back = a.compose(&a.relative(&b));
        prop_assert!((back.x - b.x).abs() < 1e-9 && (back.y - b.y).abs() < 1e-9);
        prop_assert!(angle_diff(back.theta, b.theta) < 1e-9);

        let t = a.to_transform();
        let id = t.compose(&t.inverse());
        prop_assert!(id.dx.abs() < 1e-9 && id.dy.abs() < 1e-9 && angle_diff(id.rotation, 0.0) < 1e-9);

        let p = Point::new(b.x, b.y);
        let q = t.inverse().apply(t.apply(p));
        prop_assert!(q.distance(p) < 1e-9);
    }

    #[test]
    fn composition_matches_matrix_product(a in pose(), b in pose(), c in pose()) {
        let lib = a.compose(&b);
        let m = matmul(matrix(&a), matrix(&b));
        prop_assert!((lib.x - m[0][2]).abs() < 1e-9 && (lib.y - m[1][2]).abs() < 1e-9);
        prop_assert!(angle_diff(lib.theta, m[1][0].atan2(m[0][0])) < 1e-9);

        let left = a.compose(&b).compose(&c);
        let right = a.compose(&b.compose(&c));
        prop_assert!(left.position().distance(right.position()) < 1e-9);
        prop_assert!(angle_diff(left.theta, right.theta) < 1e-9);

        let id = Transform2D::IDENTITY.compose(&a.to_transform()).to_pose();
        prop_assert!(id.position().distance(a.position()) < 1e-12 && angle_diff(id.theta, a.theta) < 1e-12);
    }

    #[test]
    fn exact_fiducial_gives_ground_truth(truth in pose(), marker in pose()) {
        let obs = FiducialObservation::new("f", marker.relative(&truth));
        let est = pose_from_fiducial(&obs, &marker);
        prop_assert!(est.position().distance(truth.position()) < 1e-9);
        prop_assert!(angle_diff(est.theta, truth.theta) < 1e-9);
    }

    #[test]
    fn misplaced_fiducial_error_is_the_chord(d in 0.1f64..20.0, bearing in -3.1f64..3.1, err in -0.5f64..0.5, marker in pose()) {
        // Robot at distance d from the installed marker; the observation is
        // taken against the installed frame, the estimate uses the model frame.
        let installed = Pose2D::new(marker.x, marker.y, marker.theta + err);
        let truth = Pose2D::new(marker.x + d * bearing.cos(), marker.y + d * bearing.sin(), 0.3);
        let obs = FiducialObservation::new("f", installed.relative(&truth));
        let est = pose_from_fiducial(&obs, &marker);
        let oracle = 2.0 * d * (err.abs() / 2.0).sin();
        prop_assert!((est.position().distance(truth.position()) - oracle).abs() < 1e-6);
        prop_assert!((placement_error_deviation(d, err) - oracle).abs() < 1e-12);
    }
}

#[test]
fn normalized_angles_are_half_open() {
    use std::f64::consts::PI;
    assert_eq!(normalize_angle(PI), PI);
    assert_eq!(normalize_angle(-PI), PI);
    assert!((normalize_angle(3.0 * PI) - PI).abs() < 1e-12);
    assert!((normalize_angle(0.5 + 4.0 * PI) - 0.5).abs() < 1e-12);
}

#[test]
fn error_grows_with_distance() {
    let theta = 1f64.to_radians();
    let errs: Vec<f64> = (0..=40).map(|k| placement_error_deviation(k as f64 * 0.5, theta)).collect();
    assert!(errs.windows(2).all(|w| w[1] > w[0]));
    assert!((placement_error_deviation(8.0, theta) - 0.1396245).abs() < 1e-6);
}

/// A straight corridor walk past a single marker rotated by one degree: the
/// simulator's localization error must equal the chord at every sample.
#[test]
fn simulated_error_follows_the_chord() {
    let doc = r#"{
      "units": "m", "bounds": [0, 0, 20, 4],
      "elements": [{"id": "floor", "layer": "floor", "footprint": [[0,0],[20,0],[20,4],[0,4]], "height": 0}],
      "fiducials": [{"id": "F", "pose": {"x": 0.05, "y": 2.0, "theta": 0.0}, "orientation_error": 0.017453292519943295}]
    }"#;
    let model = load_building_model(doc.as_bytes()).unwrap();
    let mission = Mission {
        mission_id: "m-corridor".into(),
        created_at: "2026-10-16T00:00:00Z".into(),
        speed_mps: 0.4,
        dwell_s: 1.0,
        waypoints: vec![
            MissionWaypoint::plain(Point::new(1.0, 2.0)),
            MissionWaypoint::drp(Point::new(7.5, 2.0), "end"),
        ],
    };
    let log = execute_mission_with(&mission, &model, SimConfig::default(), 3).unwrap();
    let theta = 1f64.to_radians();
    let marker = Point::new(0.05, 2.0);
    let mut last = 0.0;
    for s in &log.telemetry {
        assert_eq!(s.fiducial_id.as_deref(), Some("F"));
        let d = s.true_pose.position().distance(marker);
        let expected = 2.0 * d * (theta / 2.0).sin();
        assert!((s.localization_error() - expected).abs() < 1e-6, "t={} d={d}", s.t);
        assert!(s.localization_error() >= last - 1e-12);
        last = s.localization_error();
    }
    assert!(log.max_localization_error > 0.1);
}

fn bfh_mission(model_name: &str) -> (sitewalk_core::BuildingModel, Mission) {
    let model = common::model(model_name);
    let drps = common::drps("bfh_drps.json");
    let grid = build_nav_grid(&extract_walkable_region(&model, 0.3).unwrap(), 0.1).unwrap();
    let start = drps[0].position;
    let m = compose_mission(&grid, &Pose2D::new(start.x, start.y, 0.0), &drps, 0.4, 20.667, "2026-10-16T00:00:00Z").unwrap();
    (model, m)
}

#[test]
fn five_fiducials_cover_the_bfh_route() {
    let (model, mission) = bfh_mission("bfh_approx.json");
    assert_eq!(model.fiducials.len(), 5);
    let spacing = mission.path_length() / model.fiducials.len() as f64;
    assert!((7.0..=9.0).contains(&spacing), "mean spacing {spacing}");
    let report = validate_fiducial_coverage(&mission.path(), &model, DEFAULT_VISIBILITY_RANGE, DEFAULT_SAMPLE_STEP);
    assert!(report.covered, "{report:?}");
}

#[test]
fn thinned_fiducials_leave_gaps() {
    let (model, mission) = bfh_mission("bfh_sparse_fiducials.json");
    let report = validate_fiducial_coverage(&mission.path(), &model, DEFAULT_VISIBILITY_RANGE, DEFAULT_SAMPLE_STEP);
    assert!(!report.covered);
    assert!(report.max_gap_distance > 1.0, "{report:?}");
    for g in &report.gaps {
        let mid = mission.path().point_at((g.start + g.end) / 2.0);
        assert!(sitewalk_core::visible_fiducials(&Pose2D::new(mid.x, mid.y, 0.0), &model, 8.0).is_empty());
    }
}
