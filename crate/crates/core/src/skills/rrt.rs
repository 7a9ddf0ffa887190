//! Sampling-based path planning (k-nearest RRT*) on the planar collision map.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{CollisionMap, Pose2D};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RrtParams {
    pub step_size: f64,
    pub goal_bias: f64,
    pub max_samples: usize,
    pub rewire_neighbors: usize,
    pub goal_tolerance: f64,
    /// Extra samples spent improving the tree after the first solution.
    pub refine_samples: usize,
    /// Greedy shortcutting of the final waypoint list.
    pub shortcut: bool,
}

impl Default for RrtParams {
    fn default() -> Self {
        Self {
            step_size: 0.3,
            goal_bias: 0.1,
            max_samples: 5000,
            rewire_neighbors: 32,
            goal_tolerance: 0.1,
            refine_samples: 400,
            shortcut: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub waypoints: Vec<Pose2D>,
    pub length: f64,
}

impl Path {
    pub fn new(points: Vec<(f64, f64)>) -> Self {
        let mut waypoints = Vec::with_capacity(points.len());
        for (i, &(x, y)) in points.iter().enumerate() {
            let heading = match (points.get(i + 1), i.checked_sub(1).map(|j| points[j])) {
                (Some(&(nx, ny)), _) if (nx - x).hypot(ny - y) > 1e-12 => (ny - y).atan2(nx - x),
                (_, Some((px, py))) if (x - px).hypot(y - py) > 1e-12 => (y - py).atan2(x - px),
                _ => 0.0,
            };
            waypoints.push(Pose2D::new(x, y, heading));
        }
        let length = points
            .windows(2)
            .map(|w| (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1))
            .sum();
        Self { waypoints, length }
    }

    pub fn points(&self) -> Vec<(f64, f64)> {
        self.waypoints.iter().map(|p| (p.x, p.y)).collect()
    }

    pub fn start(&self) -> &Pose2D {
        &self.waypoints[0]
    }

    pub fn end(&self) -> &Pose2D {
        self.waypoints.last().expect("path has at least one waypoint")
    }

    /// Re-check every edge against `map` at the map's resolution.
    pub fn is_collision_free(&self, map: &CollisionMap) -> bool {
        self.waypoints.iter().all(|p| map.point_free(p.x, p.y))
            && self
                .waypoints
                .windows(2)
                .all(|w| map.segment_free(w[0].x, w[0].y, w[1].x, w[1].y))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlanError {
    #[error("start ({0:.2}, {1:.2}) is in collision")]
    StartInCollision(f64, f64),
    #[error("goal ({0:.2}, {1:.2}) is in collision")]
    GoalInCollision(f64, f64),
    #[error("no path found within {0} samples")]
    Unreachable(usize),
}

struct Node {
    x: f64,
    y: f64,
    parent: Option<usize>,
    children: Vec<usize>,
    cost: f64,
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// Plan a collision-free path from `start` to within the goal tolerance of
/// `goal`. Deterministic for a fixed generator state.
pub fn rrt_plan(
    start: &Pose2D,
    goal: &Pose2D,
    map: &CollisionMap,
    params: &RrtParams,
    rng: &mut impl Rng,
) -> Result<Path, PlanError> {
    if !map.point_free(start.x, start.y) {
        return Err(PlanError::StartInCollision(start.x, start.y));
    }
    if !map.point_free(goal.x, goal.y) {
        return Err(PlanError::GoalInCollision(goal.x, goal.y));
    }
    let s = (start.x, start.y);
    let g = (goal.x, goal.y);
    if dist(s, g) <= 1e-9 {
        return Ok(Path::new(vec![s]));
    }
    if map.segment_free(s.0, s.1, g.0, g.1) {
        return Ok(Path::new(vec![s, g]));
    }

    let b = map.bounds;
    let mut nodes = vec![Node {
        x: s.0,
        y: s.1,
        parent: None,
        children: Vec::new(),
        cost: 0.0,
    }];
    let mut best_goal: Option<usize> = None;
    let mut budget = params.max_samples;
    let mut scratch: Vec<(f64, usize)> = Vec::new();

    let mut sample = 0;
    while sample < budget {
        sample += 1;
        let q = if rng.gen::<f64>() < params.goal_bias {
            g
        } else {
            (rng.gen_range(b.x_min..=b.x_max), rng.gen_range(b.y_min..=b.y_max))
        };

        let nearest = nodes
            .iter()
            .enumerate()
            .min_by(|a, c| {
                dist((a.1.x, a.1.y), q)
                    .partial_cmp(&dist((c.1.x, c.1.y), q))
                    .unwrap()
            })
            .map(|(i, _)| i)
            .unwrap();
        let n = (nodes[nearest].x, nodes[nearest].y);
        let d = dist(n, q);
        if d < 1e-9 {
            continue;
        }
        let p = if d <= params.step_size {
            q
        } else {
            let t = params.step_size / d;
            (n.0 + (q.0 - n.0) * t, n.1 + (q.1 - n.1) * t)
        };
        if !map.point_free(p.0, p.1) || !map.segment_free(n.0, n.1, p.0, p.1) {
            continue;
        }

        scratch.clear();
        scratch.extend(
            nodes
                .iter()
                .enumerate()
                .map(|(i, nd)| (dist((nd.x, nd.y), p), i)),
        );
        let k = params.rewire_neighbors.min(scratch.len());
        if k < scratch.len() {
            scratch.select_nth_unstable_by(k, |a, c| a.partial_cmp(c).unwrap());
            scratch.truncate(k);
        }
        scratch.sort_by(|a, c| a.partial_cmp(c).unwrap());

        let mut parent = nearest;
        let mut cost = nodes[nearest].cost + dist(n, p);
        for &(dn, i) in scratch.iter() {
            let c = nodes[i].cost + dn;
            if c < cost && map.segment_free(nodes[i].x, nodes[i].y, p.0, p.1) {
                parent = i;
                cost = c;
            }
        }
        let new = nodes.len();
        nodes.push(Node {
            x: p.0,
            y: p.1,
            parent: Some(parent),
            children: Vec::new(),
            cost,
        });
        nodes[parent].children.push(new);
        for &(dn, i) in scratch.iter() {
            if i == parent {
                continue;
            }
            let c = cost + dn;
            if c + 1e-12 < nodes[i].cost && map.segment_free(p.0, p.1, nodes[i].x, nodes[i].y) {
                let delta = nodes[i].cost - c;
                if let Some(old) = nodes[i].parent {
                    nodes[old].children.retain(|&ch| ch != i);
                }
                nodes[new].children.push(i);
                nodes[i].parent = Some(new);
                nodes[i].cost = c;
                propagate(&mut nodes, i, delta);
            }
        }

        if dist(p, g) <= params.goal_tolerance {
            let better = best_goal.is_none_or(|bg| nodes[new].cost < nodes[bg].cost);
            if better {
                best_goal = Some(new);
            }
            if budget == params.max_samples {
                budget = (sample + params.refine_samples).min(params.max_samples);
            }
        }
    }

    let goal_node = best_goal
        .into_iter()
        .chain(
            nodes
                .iter()
                .enumerate()
                .filter(|(_, nd)| dist((nd.x, nd.y), g) <= params.goal_tolerance)
                .map(|(i, _)| i),
        )
        .min_by(|&a, &c| nodes[a].cost.partial_cmp(&nodes[c].cost).unwrap())
        .ok_or(PlanError::Unreachable(params.max_samples))?;

    let mut points = Vec::new();
    let mut cur = Some(goal_node);
    while let Some(i) = cur {
        points.push((nodes[i].x, nodes[i].y));
        cur = nodes[i].parent;
    }
    points.reverse();
    if params.shortcut {
        points = shortcut(&points, map);
    }
    Ok(Path::new(points))
}

/// Subtree costs drop by the same amount as their rewired root.
fn propagate(nodes: &mut [Node], root: usize, delta: f64) {
    let mut stack = nodes[root].children.clone();
    while let Some(i) = stack.pop() {
        nodes[i].cost -= delta;
        stack.extend_from_slice(&nodes[i].children);
    }
}

fn shortcut(points: &[(f64, f64)], map: &CollisionMap) -> Vec<(f64, f64)> {
    let mut out = vec![points[0]];
    let mut i = 0;
    while i + 1 < points.len() {
        let mut j = points.len() - 1;
        while j > i + 1 && !map.segment_free(points[i].0, points[i].1, points[j].0, points[j].1) {
            j -= 1;
        }
        out.push(points[j]);
        i = j;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Bounds, Rect};
    use crate::rng::stream;

    fn open_map(rects: Vec<Rect>) -> CollisionMap {
        let bounds = Bounds {
            x_min: -6.0,
            x_max: 6.0,
            y_min: -10.0,
            y_max: 10.0,
        };
        CollisionMap::new(rects, 0.3, bounds, 0.1)
    }

    #[test]
    fn free_space_is_straight() {
        let map = open_map(vec![]);
        let path = rrt_plan(
            &Pose2D::at(0.0, 0.0),
            &Pose2D::at(1.0, 0.0),
            &map,
            &RrtParams::default(),
            &mut stream(1, &[]),
        )
        .unwrap();
        assert!((path.length - 1.0).abs() < 1e-9);
    }

    #[test]
    fn goal_in_obstacle_is_rejected() {
        let map = open_map(vec![Rect::new(2.0, 0.0, 0.5, 0.5)]);
        let err = rrt_plan(
            &Pose2D::at(0.0, 0.0),
            &Pose2D::at(2.0, 0.0),
            &map,
            &RrtParams::default(),
            &mut stream(1, &[]),
        )
        .unwrap_err();
        assert!(matches!(err, PlanError::GoalInCollision(..)));
    }

    #[test]
    fn wall_with_gap_is_routed_around() {
        let map = open_map(vec![Rect::new(-1.0, 0.0, 5.0, 0.5)]);
        let start = Pose2D::at(0.0, -3.0);
        let goal = Pose2D::at(0.0, 3.0);
        for seed in 0..5 {
            let path = rrt_plan(&start, &goal, &map, &RrtParams::default(), &mut stream(seed, &[]))
                .unwrap();
            assert!(path.is_collision_free(&map));
            assert!(path.length >= 6.0);
            assert!(path.end().distance(&goal) <= 0.1);
        }
    }

    #[test]
    fn sealed_goal_is_unreachable() {
        let map = open_map(vec![Rect::new(0.0, 5.0, 7.0, 0.5)]);
        let params = RrtParams {
            max_samples: 500,
            ..RrtParams::default()
        };
        let err = rrt_plan(
            &Pose2D::at(0.0, 0.0),
            &Pose2D::at(0.0, 8.0),
            &map,
            &params,
            &mut stream(1, &[]),
        )
        .unwrap_err();
        assert_eq!(err, PlanError::Unreachable(500));
    }

    #[test]
    fn deterministic_per_seed() {
        let map = open_map(vec![Rect::new(-1.0, 0.0, 5.0, 0.5)]);
        let plan = |seed| {
            rrt_plan(
                &Pose2D::at(0.0, -3.0),
                &Pose2D::at(0.0, 3.0),
                &map,
                &RrtParams::default(),
                &mut stream(seed, &[]),
            )
            .unwrap()
        };
        assert_eq!(plan(4), plan(4));
    }

    mod props {
        use super::*;
        use crate::world::{init_scene, Difficulty};
        use proptest::prelude::*;
        use std::cmp::Reverse;
        use std::collections::BinaryHeap;

        /// Shortest 8-connected path length over the free cells of a 0.1 m
        /// grid, or `None` when the goal cell is unreachable.
        fn grid_shortest(map: &CollisionMap, s: (f64, f64), g: (f64, f64)) -> Option<f64> {
            let h = 0.1;
            let b = map.bounds;
            let nx = ((b.x_max - b.x_min) / h).round() as i64 + 1;
            let ny = ((b.y_max - b.y_min) / h).round() as i64 + 1;
            let cell = |p: (f64, f64)| (((p.0 - b.x_min) / h).round() as i64, ((p.1 - b.y_min) / h).round() as i64);
            let pos = |c: (i64, i64)| (b.x_min + c.0 as f64 * h, b.y_min + c.1 as f64 * h);
            let free: Vec<bool> = (0..nx * ny).map(|i| { let p = pos((i % nx, i / nx)); map.point_free(p.0, p.1) }).collect();
            let (sc, gc) = (cell(s), cell(g));
            let idx = |c: (i64, i64)| (c.1 * nx + c.0) as usize;
            if !free[idx(sc)] || !free[idx(gc)] {
                return None;
            }
            let mut dist = vec![u64::MAX; (nx * ny) as usize];
            let mut heap = BinaryHeap::new();
            dist[idx(sc)] = 0;
            heap.push(Reverse((0u64, sc)));
            // Integer costs: 1000 per straight cell, 1414 per diagonal.
            while let Some(Reverse((d, c))) = heap.pop() {
                if c == gc {
                    let to_grid = (s.0 - pos(sc).0).hypot(s.1 - pos(sc).1) + (g.0 - pos(gc).0).hypot(g.1 - pos(gc).1);
                    return Some(d as f64 / 1000.0 * h + to_grid);
                }
                if d > dist[idx(c)] {
                    continue;
                }
                for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)] {
                    let n = (c.0 + dx, c.1 + dy);
                    if n.0 < 0 || n.1 < 0 || n.0 >= nx || n.1 >= ny || !free[idx(n)] {
                        continue;
                    }
                    let step = if dx != 0 && dy != 0 { 1414 } else { 1000 };
                    let nd = d + step;
                    if nd < dist[idx(n)] {
                        dist[idx(n)] = nd;
                        heap.push(Reverse((nd, n)));
                    }
                }
            }
            None
        }

        fn rect_clearance(rects: &[Rect], x: f64, y: f64) -> f64 {
            rects
                .iter()
                .map(|r| {
                    let dx = ((x - r.cx).abs() - r.hx).max(0.0);
                    let dy = ((y - r.cy).abs() - r.hy).max(0.0);
                    (dx * dx + dy * dy).sqrt()
                })
                .fold(f64::INFINITY, f64::min)
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn paths_are_clear_and_near_shortest(
                scene in 0u64..1000,
                hard: bool,
                s in (-5.5..5.5f64, -5.8..5.8f64),
                g in (-5.5..5.5f64, -9.5..9.5f64),
                seed: u64,
            ) {
                let world = init_scene(scene, if hard { Difficulty::Hard } else { Difficulty::Easy }).unwrap();
                let map = world.collision_map(None);
                prop_assume!(map.point_free(s.0, s.1) && map.point_free(g.0, g.1));
                let shortest = grid_shortest(&map, s, g);
                prop_assume!(shortest.is_some());
                let (start, goal) = (Pose2D::at(s.0, s.1), Pose2D::at(g.0, g.1));
                let path = rrt_plan(&start, &goal, &map, &RrtParams::default(), &mut stream(seed, &[])).unwrap();
                let pts = path.points();
                for w in pts.windows(2) {
                    let len = (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1);
                    let n = ((len / 0.1).ceil() as usize).max(1);
                    for i in 0..=n {
                        let t = i as f64 / n as f64;
                        let (x, y) = (w[0].0 + (w[1].0 - w[0].0) * t, w[0].1 + (w[1].1 - w[0].1) * t);
                        prop_assert!(rect_clearance(&map.rects, x, y) >= map.margin - 1e-9);
                    }
                }
                let tol = RrtParams::default().goal_tolerance;
                prop_assert!(path.end().distance(&goal) <= tol + 1e-9);
                prop_assert!(path.length + 1e-9 >= start.distance(&path.end()));
                prop_assert!(path.length + tol + 1e-9 >= start.distance(&goal));
                prop_assert!(path.length <= 3.0 * shortest.unwrap(), "{} vs grid {}", path.length, shortest.unwrap());
            }
        }
    }
}
