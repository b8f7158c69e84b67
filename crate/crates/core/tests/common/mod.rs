#![allow(dead_code)]

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::path::PathBuf;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sitewalk_core::{load_building_model, BuildingModel, Drp, NavGrid, Point};

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

pub fn fixture(name: &str) -> Vec<u8> {
    std::fs::read(fixture_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn model(name: &str) -> BuildingModel {
    load_building_model(&fixture(name)).unwrap()
}

pub fn drps(name: &str) -> Vec<Drp> {
    serde_json::from_slice(&fixture(name)).unwrap()
}

pub fn random_occupancy(rng: &mut impl Rng, w: usize, h: usize, blocked: f64) -> Vec<bool> {
    (0..w * h).map(|_| !rng.random_bool(blocked)).collect()
}

/// Plain Dijkstra over an 8-connected occupancy grid, written without any of
/// the library's grid code. Costs are (straight, diagonal) move counts.
pub fn oracle_distances(w: usize, h: usize, free: &[bool], start: (usize, usize)) -> Vec<Option<(u32, u32)>> {
    let value = |c: (u32, u32)| c.0 as f64 + c.1 as f64 * std::f64::consts::SQRT_2;
    let free_at = |x: i64, y: i64| x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && free[y as usize * w + x as usize];
    let mut dist: Vec<Option<(u32, u32)>> = vec![None; w * h];
    let mut done = vec![false; w * h];
    if !free_at(start.0 as i64, start.1 as i64) {
        return dist;
    }
    let s = start.1 * w + start.0;
    dist[s] = Some((0, 0));
    let mut heap = BinaryHeap::new();
    heap.push(Reverse((ordered(0.0), s)));
    while let Some(Reverse((_, i))) = heap.pop() {
        if done[i] {
            continue;
        }
        done[i] = true;
        let (x, y) = ((i % w) as i64, (i / w) as i64);
        let here = dist[i].unwrap();
        for dx in -1i64..=1 {
            for dy in -1i64..=1 {
                if (dx, dy) == (0, 0) || !free_at(x + dx, y + dy) {
                    continue;
                }
                let diagonal = dx != 0 && dy != 0;
                if diagonal && !(free_at(x + dx, y) && free_at(x, y + dy)) {
                    continue;
                }
                let j = (y + dy) as usize * w + (x + dx) as usize;
                let cand = if diagonal { (here.0, here.1 + 1) } else { (here.0 + 1, here.1) };
                if dist[j].is_none_or(|old| value(cand) < value(old)) {
                    dist[j] = Some(cand);
                    heap.push(Reverse((ordered(value(cand)), j)));
                }
            }
        }
    }
    dist
}

fn ordered(v: f64) -> u64 {
    // Non-negative floats order like their bit patterns.
    v.to_bits()
}

pub fn grid_from(w: usize, h: usize, free: Vec<bool>) -> NavGrid {
    NavGrid::from_occupancy(Point::new(0.0, 0.0), 1.0, w, h, free)
}

pub fn value(c: (u32, u32)) -> f64 {
    c.0 as f64 + c.1 as f64 * std::f64::consts::SQRT_2
}

/// All orderings of `items` (Heap's algorithm).
pub fn permutations<T: Clone>(items: &[T]) -> Vec<Vec<T>> {
    fn go<T: Clone>(k: usize, a: &mut Vec<T>, out: &mut Vec<Vec<T>>) {
        if k <= 1 {
            out.push(a.clone());
            return;
        }
        for i in 0..k {
            go(k - 1, a, out);
            let j = if k % 2 == 0 { i } else { 0 };
            a.swap(j, k - 1);
        }
    }
    let mut out = Vec::new();
    let mut a = items.to_vec();
    go(a.len(), &mut a, &mut out);
    out
}

pub struct Instance {
    pub free: Vec<bool>,
    pub start: (usize, usize),
    pub drps: Vec<(String, (usize, usize))>,
}

pub const W: usize = 30;
pub const H: usize = 30;

pub fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    loop {
        let free = random_occupancy(rng, W, H, 0.15);
        let open: Vec<usize> = (0..W * H).filter(|&i| free[i]).collect();
        let s = *open.choose(rng).unwrap();
        let start = (s % W, s / W);
        let dist = oracle_distances(W, H, &free, start);
        let reachable: Vec<usize> = open.into_iter().filter(|&i| i != s && dist[i].is_some()).collect();
        if reachable.len() < 50 {
            continue;
        }
        let n = rng.random_range(2..=7);
        let cells: Vec<usize> = reachable.choose_multiple(rng, n).copied().collect();
        // Shuffled ids so that id order and input order are unrelated.
        let mut ids: Vec<usize> = (0..n).collect();
        ids.sort_by_key(|_| rng.random::<u32>());
        let drps = cells
            .into_iter()
            .zip(ids)
            .map(|(i, id)| (format!("p{id}"), (i % W, i / W)))
            .collect();
        return Instance { free, start, drps };
    }
}

pub fn centre((x, y): (usize, usize)) -> Point {
    Point::new(x as f64 + 0.5, y as f64 + 0.5)
}

/// Independent greedy: pairwise oracle distances, nearest first, ties by id.
pub fn oracle_greedy(inst: &Instance) -> Vec<String> {
    let mut current = inst.start;
    let mut left = inst.drps.clone();
    let mut order = Vec::new();
    while !left.is_empty() {
        let dist = oracle_distances(W, H, &inst.free, current);
        let mut best = 0;
        for k in 1..left.len() {
            let (a, b) = (&left[k], &left[best]);
            let (da, db) = (dist[a.1 .1 * W + a.1 .0].unwrap(), dist[b.1 .1 * W + b.1 .0].unwrap());
            if value(da) < value(db) || (da == db && a.0 < b.0) {
                best = k;
            }
        }
        let (id, cell) = left.remove(best);
        order.push(id);
        current = cell;
    }
    order
}

pub fn tour_length(inst: &Instance, order: &[String]) -> f64 {
    let mut at = inst.start;
    let mut total = 0.0;
    for id in order {
        let cell = inst.drps.iter().find(|d| &d.0 == id).unwrap().1;
        total += value(oracle_distances(W, H, &inst.free, at)[cell.1 * W + cell.0].unwrap());
        at = cell;
    }
    total
}

pub fn optimal_length(inst: &Instance) -> f64 {
    let mut nodes = vec![inst.start];
    nodes.extend(inst.drps.iter().map(|d| d.1));
    let table: Vec<Vec<f64>> = nodes
        .iter()
        .map(|&n| {
            let d = oracle_distances(W, H, &inst.free, n);
            nodes.iter().map(|m| value(d[m.1 * W + m.0].unwrap())).collect()
        })
        .collect();
    permutations(&(1..nodes.len()).collect::<Vec<_>>())
        .into_iter()
        .map(|perm| {
            let mut at = 0;
            let mut total = 0.0;
            for k in perm {
                total += table[at][k];
                at = k;
            }
            total
        })
        .fold(f64::INFINITY, f64::min)
}

