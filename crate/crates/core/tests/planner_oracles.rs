mod common;

use common::*;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sitewalk_core::{
    build_nav_grid, compose_mission, extract_walkable_region, order_drps_greedy, shortest_path, Drp, PlanError,
    Point, Pose2D,
};
use std::time::Instant;

#[test]
fn astar_cost_equals_dijkstra_on_random_grids() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let (w, h) = (50, 50);
    let mut compared = 0;
    for _ in 0..100 {
        let free = random_occupancy(&mut rng, w, h, 0.2);
        let grid = grid_from(w, h, free.clone());
        let open: Vec<(usize, usize)> = (0..w * h).filter(|&i| free[i]).map(|i| (i % w, i / w)).collect();
        for _ in 0..50 {
            let s = *open.choose(&mut rng).unwrap();
            let g = *open.choose(&mut rng).unwrap();
            let oracle = oracle_distances(w, h, &free, s)[g.1 * w + g.0];
            let got = grid.astar(s, g);
            match (oracle, got) {
                (None, None) => {}
                (Some(o), Some((cost, cells))) => {
                    assert_eq!((cost.straight, cost.diagonal), o, "{s:?} -> {g:?}");
                    assert_eq!(cells.first(), Some(&s));
                    assert_eq!(cells.last(), Some(&g));
                    compared += 1;
                }
                (o, g2) => panic!("reachability disagrees: oracle {o:?}, astar {:?}", g2.map(|x| x.0)),
            }
        }
    }
    assert!(compared > 2500, "too few connected pairs: {compared}");
    assert!(started.elapsed().as_secs() < 60);
}

#[test]
fn library_dijkstra_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let free = random_occupancy(&mut rng, 40, 30, 0.25);
        let grid = grid_from(40, 30, free.clone());
        let s = (rng.random_range(0..40), rng.random_range(0..30));
        let lib: Vec<_> = grid.distances_from(s).into_iter().map(|c| c.map(|c| (c.straight, c.diagonal))).collect();
        assert_eq!(lib, oracle_distances(40, 30, &free, s));
    }
}

#[test]
fn greedy_order_matches_oracle_and_stays_within_ratio() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 1.0;
    for _ in 0..50 {
        let inst = random_instance(&mut rng);
        let grid = grid_from(W, H, inst.free.clone());
        let drps: Vec<Drp> = inst.drps.iter().map(|(id, c)| Drp { id: id.clone(), position: centre(*c) }).collect();
        let got: Vec<String> = order_drps_greedy(&grid, centre(inst.start), &drps)
            .unwrap()
            .into_iter()
            .map(|d| d.id)
            .collect();
        let expected = oracle_greedy(&inst);
        assert_eq!(got, expected);
        let ratio = tour_length(&inst, &got) / optimal_length(&inst);
        assert!(ratio >= 1.0 - 1e-12);
        worst = worst.max(ratio);
    }
    assert!(worst <= 2.5, "greedy/optimal ratio {worst}");
    assert!(started.elapsed().as_secs() < 60);
}

#[test]
fn collinear_and_tied_orders() {
    let grid = grid_from(40, 1, vec![true; 40]);
    let drps = vec![Drp::new("c", 30.5, 0.5), Drp::new("a", 10.5, 0.5), Drp::new("b", 20.5, 0.5)];
    let ids: Vec<_> = order_drps_greedy(&grid, Point::new(0.5, 0.5), &drps).unwrap().into_iter().map(|d| d.id).collect();
    assert_eq!(ids, ["a", "b", "c"]);

    // 0.9 m east and 1.0 m west of the robot.
    let grid = grid_from(100, 1, vec![true; 100]);
    let at = |x: f64| Point::new(50.5 + x * 10.0, 0.5);
    let drps = vec![
        Drp { id: "east".into(), position: at(0.9) },
        Drp { id: "west".into(), position: at(-1.0) },
    ];
    let ids: Vec<_> = order_drps_greedy(&grid, at(0.0), &drps).unwrap().into_iter().map(|d| d.id).collect();
    assert_eq!(ids, ["east", "west"]);
    let brute = [["east", "west"], ["west", "east"]]
        .into_iter()
        .min_by(|a, b| {
            let len = |o: &[&str; 2]| {
                let p = |id: &str| -> f64 { if id == "east" { 0.9 } else { -1.0 } };
                p(o[0]).abs() + (p(o[1]) - p(o[0])).abs()
            };
            len(a).total_cmp(&len(b))
        })
        .unwrap();
    assert_eq!(brute, ["east", "west"]);
}

#[test]
fn smoothed_paths_are_sound() {
    let model = common::model("bfh_approx.json");
    let region = extract_walkable_region(&model, 0.3).unwrap();
    let grid = build_nav_grid(&region, 0.1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let b = model.bounds;
    let mut checked = 0;
    while checked < 40 {
        let p = Point::new(rng.random_range(b.min.x..b.max.x), rng.random_range(b.min.y..b.max.y));
        let q = Point::new(rng.random_range(b.min.x..b.max.x), rng.random_range(b.min.y..b.max.y));
        if !(grid.point_is_walkable(p) && grid.point_is_walkable(q)) {
            continue;
        }
        let path = shortest_path(&grid, p, q).unwrap();
        let dist = grid.distances_from(grid.cell_of(p).unwrap());
        let grid_len = dist[grid.index(grid.cell_of(q).unwrap())].unwrap().value() * grid.cell_size();
        assert!(path.length >= p.distance(q) - 1e-9);
        // Smoothing never lengthens the cell route (up to the half-cell
        // offsets of the true endpoints from their cell centres).
        assert!(path.length <= grid_len + 2.0 * grid.cell_size());
        for pair in path.waypoints.windows(2) {
            assert!(grid.line_of_sight(pair[0], pair[1]));
            let steps = (pair[0].distance(pair[1]) / 0.02).ceil() as usize;
            for k in 0..=steps {
                let s = pair[0].lerp(pair[1], k as f64 / steps.max(1) as f64);
                assert!(region.contains(s) || grid.point_is_walkable(s), "{s:?} off the walkable area");
            }
        }
        checked += 1;
    }
}

#[test]
fn tiny_cells_are_rejected() {
    let model = common::model("bfh_approx.json");
    let region = extract_walkable_region(&model, 0.3).unwrap();
    assert!(matches!(build_nav_grid(&region, 1e-6), Err(PlanError::Resolution { .. })));
    assert!(matches!(build_nav_grid(&region, 0.0), Err(PlanError::InvalidCellSize(_))));
}

#[test]
fn bfh_mission_reproduces_path_band() {
    let model = common::model("bfh_approx.json");
    let drps = common::drps("bfh_drps.json");
    let region = extract_walkable_region(&model, 0.3).unwrap();
    let grid = build_nav_grid(&region, 0.1).unwrap();
    let start = drps[0].position;
    let m = compose_mission(&grid, &Pose2D::new(start.x, start.y, 0.0), &drps, 0.4, 20.667, "2026-10-16T00:00:00Z").unwrap();
    assert_eq!(m.drp_count(), 6);
    assert!((40.3..=44.5).contains(&m.path_length()), "length {}", m.path_length());
}

#[test]
fn empty_drp_list_gives_zero_length_mission() {
    let model = common::model("empty_floor.json");
    let grid = build_nav_grid(&extract_walkable_region(&model, 0.3).unwrap(), 0.1).unwrap();
    let m = compose_mission(&grid, &Pose2D::new(5.0, 5.0, 0.0), &[], 0.4, 20.667, "t").unwrap();
    assert_eq!(m.path_length(), 0.0);
    assert_eq!(m.drp_count(), 0);
}
