//! Unicycle path following and straight-line placement legs.

use serde::{Deserialize, Serialize};

use super::rrt::Path;
use crate::geometry::{normalize_angle, CollisionMap, Pose2D};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriveParams {
    pub v_max: f64,
    pub omega_max: f64,
    pub dt: f64,
    pub lookahead: f64,
    pub goal_tolerance: f64,
    pub max_cross_track: f64,
}

impl Default for DriveParams {
    fn default() -> Self {
        Self {
            v_max: 1.0,
            omega_max: 2.0,
            dt: 0.05,
            lookahead: 0.3,
            goal_tolerance: 0.1,
            max_cross_track: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DriveError {
    #[error("tracking diverged: cross-track error {0:.2} m")]
    Diverged(f64),
    #[error("did not reach the path end within {0} control steps")]
    Timeout(usize),
    #[error("segment ({0:.2}, {1:.2}) -> ({2:.2}, {3:.2}) is blocked")]
    Blocked(f64, f64, f64, f64),
}

fn point_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 <= 1e-18 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let q = (a.0 + dx * t, a.1 + dy * t);
    ((p.0 - q.0).hypot(p.1 - q.1), t)
}

/// Track `path` with speed-limited pure pursuit. The returned trajectory
/// starts at `pose` and its final sample coincides with the path end.
pub fn follow_path_diff_drive(
    pose: &Pose2D,
    path: &Path,
    params: &DriveParams,
) -> Result<Vec<Pose2D>, DriveError> {
    let pts = path.points();
    let mut traj = vec![*pose];
    if pts.len() < 2 || path.length <= 1e-12 {
        return Ok(traj);
    }
    let end = *pts.last().unwrap();
    let mut cum = vec![0.0];
    for w in pts.windows(2) {
        cum.push(cum.last().unwrap() + (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1));
    }
    let total = *cum.last().unwrap();
    let point_at = |s: f64| -> (f64, f64) {
        let s = s.clamp(0.0, total);
        let mut i = 0;
        while i + 2 < cum.len() && cum[i + 1] < s {
            i += 1;
        }
        let span = cum[i + 1] - cum[i];
        let t = if span <= 1e-12 { 0.0 } else { (s - cum[i]) / span };
        (
            pts[i].0 + (pts[i + 1].0 - pts[i].0) * t,
            pts[i].1 + (pts[i + 1].1 - pts[i].1) * t,
        )
    };

    let max_steps = ((total / (params.v_max * params.dt)) * 4.0) as usize + 400;
    let mut cur = *pose;
    let mut seg = 0;
    let mut progress = 0.0;
    for _ in 0..max_steps {
        if cur.distance_to(end.0, end.1) <= params.goal_tolerance * 0.5 {
            break;
        }
        // Project onto the path near the current segment; progress is monotone.
        let mut best = (f64::INFINITY, seg, 0.0);
        for i in seg..(seg + 4).min(pts.len() - 1) {
            let (d, t) = point_segment((cur.x, cur.y), pts[i], pts[i + 1]);
            if d < best.0 - 1e-12 {
                best = (d, i, t);
            }
        }
        let (cross, s_i, s_t) = best;
        if cross > params.max_cross_track {
            return Err(DriveError::Diverged(cross));
        }
        seg = s_i;
        progress = f64::max(progress, cum[s_i] + (cum[s_i + 1] - cum[s_i]) * s_t);
        let target = point_at(progress + params.lookahead);

        let dx = target.0 - cur.x;
        let dy = target.1 - cur.y;
        let ld = dx.hypot(dy).max(1e-9);
        let alpha = normalize_angle(dy.atan2(dx) - cur.heading);
        let (v, omega) = if alpha.abs() > std::f64::consts::FRAC_PI_2 {
            (0.0, params.omega_max * alpha.signum())
        } else {
            let kappa = 2.0 * alpha.sin() / ld;
            let mut v = params.v_max.min(ld / params.dt);
            if kappa.abs() > 1e-12 {
                v = v.min(params.omega_max / kappa.abs());
            }
            (v, (v * kappa).clamp(-params.omega_max, params.omega_max))
        };
        let heading = cur.heading + omega * params.dt;
        let mid = cur.heading + omega * params.dt * 0.5;
        cur = Pose2D::new(
            cur.x + v * mid.cos() * params.dt,
            cur.y + v * mid.sin() * params.dt,
            heading,
        );
        traj.push(cur);
    }
    if cur.distance_to(end.0, end.1) > params.goal_tolerance {
        return Err(DriveError::Timeout(max_steps));
    }
    if cur.distance_to(end.0, end.1) > 1e-12 {
        traj.push(Pose2D::new(end.0, end.1, cur.heading));
    }
    Ok(traj)
}

/// Linear interpolation at the map resolution, ending exactly at `target`.
pub fn straight_line_delivery(
    pose: &Pose2D,
    target: &Pose2D,
    map: &CollisionMap,
) -> Result<Vec<Pose2D>, DriveError> {
    if !map.segment_free(pose.x, pose.y, target.x, target.y) {
        return Err(DriveError::Blocked(pose.x, pose.y, target.x, target.y));
    }
    let len = pose.distance(target);
    if len <= 1e-12 {
        return Ok(vec![Pose2D::new(target.x, target.y, pose.heading)]);
    }
    let heading = pose.bearing_to(target);
    let n = (len / map.resolution - 1e-9).ceil().max(1.0) as usize;
    Ok((0..=n)
        .map(|i| {
            if i == n {
                Pose2D::new(target.x, target.y, heading)
            } else {
                let t = i as f64 / n as f64;
                Pose2D::new(
                    pose.x + (target.x - pose.x) * t,
                    pose.y + (target.y - pose.y) * t,
                    heading,
                )
            }
        })
        .collect())
}
