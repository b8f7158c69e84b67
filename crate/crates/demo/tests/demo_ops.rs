use sitewalk_demo::{error_curve, Site, BFH_MODEL};

const BFH_DRPS: [f64; 12] = [2.0, 2.0, 3.6, 10.5, 8.0, 13.0, 16.4, 10.5, 12.0, 13.0, 10.0, 5.0];

#[test]
fn mask_matches_grid_shape() {
    let site = Site::bfh();
    let mask = site.walkable_mask();
    assert_eq!(mask.len(), site.width() * site.height());
    assert!(mask.iter().all(|&m| m <= 1));
    let walkable = mask.iter().filter(|&&m| m == 1).count() as f64 * site.cell_size().powi(2);
    assert!(walkable > 250.0 && walkable < 449.8, "{walkable}");
}

#[test]
fn bfh_plan_follows_greedy_order() {
    let site = Site::bfh();
    let m = site.plan_points(2.0, 2.0, &BFH_DRPS).unwrap();
    assert_eq!(m.drp_ids, ["P1", "P2", "P3", "P6", "P4", "P5"]);
    assert!((40.3..=44.5).contains(&m.length), "{}", m.length);
    assert_eq!(m.waypoints.len() % 2, 0);
    assert_eq!(m, site.plan_points(2.0, 2.0, &BFH_DRPS).unwrap());
    let json: serde_json::Value = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
    assert_eq!(json["drp_ids"][0], "P1");
}

#[test]
fn bad_inputs_are_errors() {
    let site = Site::bfh();
    assert!(site.plan_points(2.0, 2.0, &[1.0]).is_err());
    assert!(site.plan_points(2.0, 2.0, &[-40.0, -40.0]).is_err());
    assert!(site.coverage_along(&[], 8.0).is_err());
    assert!(site.coverage_along(&[2.0, 2.0], 0.0).is_err());
    assert!(Site::load("{}").is_err());
}

#[test]
fn coverage_of_the_planned_route() {
    let site = Site::bfh();
    let m = site.plan_points(2.0, 2.0, &BFH_DRPS).unwrap();
    let full = site.coverage_along(&m.waypoints, 8.0).unwrap();
    assert!(full.covered);
    let short = site.coverage_along(&m.waypoints, 1.0).unwrap();
    assert!(!short.covered);
    assert_eq!(short.gaps.len() % 2, 0);
    assert!(short.max_gap > 0.0);
}

#[test]
fn error_curve_is_the_chord() {
    let curve = error_curve(8.0, 1.0, 9);
    assert_eq!(curve.len(), 9);
    assert_eq!(curve[0], 0.0);
    assert!((curve[8] - 16.0 * (0.5f64.to_radians()).sin()).abs() < 1e-12);
    assert!(curve.windows(2).all(|w| w[1] > w[0]));
    assert_eq!(error_curve(8.0, 1.0, 0).len(), 2);
}

#[test]
fn bundled_model_is_the_fixture() {
    let on_disk = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/bfh_approx.json")).unwrap();
    assert_eq!(BFH_MODEL, on_disk);
    let fids: serde_json::Value = serde_json::from_str(&Site::bfh().fiducials()).unwrap();
    assert_eq!(fids.as_array().unwrap().len(), 5);
}
