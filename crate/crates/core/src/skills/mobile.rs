//! AGV and humanoid locomotion skills.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::drive::{follow_path_diff_drive, straight_line_delivery};
use super::rrt::{rrt_plan, Path, PlanError};
use super::{Execution, FailureReason, SkillConfig, SkillOutcome};
use crate::geometry::{CollisionMap, Pose2D};
use crate::types::{ObjectId, Verb};
use crate::world::{AgentState, EntityRef, ObstacleKind, WorldState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HumanoidParams {
    pub pickup_radius: f64,
    /// Distance the humanoid stays short of a set-down obstacle's center.
    pub drop_backoff: f64,
    pub sample_spacing: f64,
}

impl Default for HumanoidParams {
    fn default() -> Self {
        Self {
            pickup_radius: 0.5,
            drop_backoff: 1.1,
            sample_spacing: 0.1,
        }
    }
}

fn plan_failure(here: Pose2D, err: PlanError) -> Execution {
    let reason = match err {
        PlanError::Unreachable(_) => FailureReason::Unreachable,
        _ => FailureReason::Infeasible,
    };
    Execution::stationary(SkillOutcome::failed(here, reason, err.to_string()))
}

/// Poses along the polyline spaced at most `spacing` apart, ending exactly at
/// its last point.
pub fn densify(path: &Path, spacing: f64, start_heading: f64) -> Vec<Pose2D> {
    let pts = path.points();
    let mut out = vec![Pose2D::new(pts[0].0, pts[0].1, start_heading)];
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = (b.0 - a.0).hypot(b.1 - a.1);
        if len <= 1e-12 {
            continue;
        }
        let heading = (b.1 - a.1).atan2(b.0 - a.0);
        let n = (len / spacing - 1e-9).ceil().max(1.0) as usize;
        for i in 1..=n {
            let t = i as f64 / n as f64;
            out.push(Pose2D::new(a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t, heading));
        }
    }
    out
}

fn sweeps_into_obstacle(world: &WorldState, traj: &[Pose2D], exclude: Option<ObjectId>) -> bool {
    traj.iter().any(|p| !world.placement_valid(p.x, p.y, exclude))
}

/// Plan and track with the differential-drive follower.
#[allow(clippy::result_large_err)]
fn drive_to(
    from: &Pose2D,
    to: &Pose2D,
    map: &CollisionMap,
    world: &WorldState,
    config: &SkillConfig,
    rng: &mut impl Rng,
) -> Result<Vec<Pose2D>, Execution> {
    let path = rrt_plan(from, to, map, &config.rrt, rng).map_err(|e| plan_failure(*from, e))?;
    let traj = follow_path_diff_drive(from, &path, &config.drive).map_err(|e| {
        Execution::stationary(SkillOutcome::failed(
            *from,
            FailureReason::Infeasible,
            e.to_string(),
        ))
    })?;
    if sweeps_into_obstacle(world, &traj, None) {
        return Err(Execution::stationary(SkillOutcome::failed(
            *from,
            FailureReason::Infeasible,
            "tracked trajectory clips an obstacle",
        )));
    }
    Ok(traj)
}

pub fn move_skill(
    agent: &AgentState,
    target: &Pose2D,
    world: &WorldState,
    config: &SkillConfig,
    rng: &mut impl Rng,
) -> Execution {
    let map = world.collision_map(None);
    match drive_to(&agent.pose, target, &map, world, config, rng) {
        Ok(traj) => {
            let mut outcome = SkillOutcome::unchanged(agent.pose);
            outcome.new_agent_pose = *traj.last().unwrap();
            Execution {
                outcome,
                trajectory: traj,
            }
        }
        Err(e) => e,
    }
}

/// Drive to the object, then deliver it to `target`; the final placement leg
/// is a straight segment ending exactly on the target.
pub fn push_skill(
    agent: &AgentState,
    object: ObjectId,
    target: &Pose2D,
    world: &WorldState,
    config: &SkillConfig,
    rng: &mut impl Rng,
) -> Execution {
    let here = agent.pose;
    let fail = |reason, text: String| Execution::stationary(SkillOutcome::failed(here, reason, text));
    let comp = match world.entity(object) {
        Some(EntityRef::Component(c)) => c,
        Some(EntityRef::Obstacle(o)) => {
            return fail(
                FailureReason::Infeasible,
                format!("{} is an obstacle and cannot be pushed", o.name),
            )
        }
        None => {
            return fail(
                FailureReason::Infeasible,
                format!("state inconsistency: no object with id {object}"),
            )
        }
    };
    if !comp.pushable {
        return fail(
            FailureReason::Infeasible,
            format!("{} is too heavy to push and has to be carried", comp.name),
        );
    }
    if comp.attached {
        return fail(FailureReason::Infeasible, format!("{} is already attached", comp.name));
    }
    if comp.carrier.is_some() {
        return fail(FailureReason::Infeasible, format!("{} is being carried", comp.name));
    }
    let map = world.collision_map(None);
    let approach = match drive_to(&here, &comp.pose, &map, world, config, rng) {
        Ok(t) => t,
        Err(e) => return e,
    };
    let contact = *approach.last().unwrap();
    let path = match rrt_plan(&contact, target, &map, &config.rrt, rng) {
        Ok(p) => p,
        Err(e) => return plan_failure(here, e),
    };
    let carried = match follow_path_diff_drive(&contact, &path, &config.drive) {
        Ok(t) => t,
        Err(e) => return fail(FailureReason::Infeasible, e.to_string()),
    };
    let last = *carried.last().unwrap();
    let placement = match straight_line_delivery(&last, target, &map) {
        Ok(t) => t,
        Err(e) => return fail(FailureReason::Infeasible, e.to_string()),
    };
    let mut traj = approach;
    traj.extend(carried.into_iter().skip(1));
    traj.extend(placement.into_iter().skip(1));
    if sweeps_into_obstacle(world, &traj, None) {
        return fail(
            FailureReason::Infeasible,
            "tracked trajectory clips an obstacle".to_string(),
        );
    }
    let end = *traj.last().unwrap();
    let mut outcome = SkillOutcome::unchanged(here);
    outcome.new_agent_pose = end;
    outcome.moved_component = Some((comp.id, Pose2D::new(target.x, target.y, comp.pose.heading)));
    outcome.diagnostic = format!("{} delivered", comp.name);
    Execution {
        outcome,
        trajectory: traj,
    }
}

/// Planned path densified for a walking gait, closed exactly onto `target`.
#[allow(clippy::result_large_err)]
fn walk_path(
    here: &Pose2D,
    target: &Pose2D,
    map: &CollisionMap,
    config: &SkillConfig,
    rng: &mut impl Rng,
) -> Result<Vec<Pose2D>, Execution> {
    let path = rrt_plan(here, target, map, &config.rrt, rng).map_err(|e| plan_failure(*here, e))?;
    let mut traj = densify(&path, config.humanoid.sample_spacing, here.heading);
    let end = *traj.last().unwrap();
    if end.distance(target) > 1e-12 {
        if !map.segment_free(end.x, end.y, target.x, target.y) {
            return Err(Execution::stationary(SkillOutcome::failed(
                *here,
                FailureReason::Infeasible,
                "cannot close the final gap to the target",
            )));
        }
        traj.push(Pose2D::new(target.x, target.y, end.bearing_to(target)));
    }
    Ok(traj)
}

/// Kinematic walk or carry along a planned path.
pub fn humanoid_skill(
    agent: &AgentState,
    verb: Verb,
    object: Option<ObjectId>,
    target: &Pose2D,
    world: &WorldState,
    config: &SkillConfig,
    rng: &mut impl Rng,
) -> Execution {
    let here = agent.pose;
    let params = &config.humanoid;
    let fail = |reason, text: String| Execution::stationary(SkillOutcome::failed(here, reason, text));
    match verb {
        Verb::Walk => {
            let map = world.collision_map(None);
            match walk_path(&here, target, &map, config, rng) {
                Ok(traj) => {
                    let mut outcome = SkillOutcome::unchanged(here);
                    outcome.new_agent_pose = *traj.last().unwrap();
                    Execution {
                        outcome,
                        trajectory: traj,
                    }
                }
                Err(e) => e,
            }
        }
        Verb::Carry => {
            let Some(id) = object else {
                return fail(
                    FailureReason::Infeasible,
                    "state inconsistency: carry needs an object".to_string(),
                );
            };
            match world.entity(id) {
                None => fail(
                    FailureReason::Infeasible,
                    format!("state inconsistency: no object with id {id}"),
                ),
                Some(EntityRef::Component(c)) => {
                    if c.attached {
                        return fail(
                            FailureReason::Infeasible,
                            format!("{} is already attached", c.name),
                        );
                    }
                    let d = here.distance(&c.pose);
                    if d > params.pickup_radius && c.carrier != Some(agent.id) {
                        return fail(
                            FailureReason::Infeasible,
                            format!(
                                "{} is {d:.2} m away, beyond the {:.2} m pickup radius",
                                c.name, params.pickup_radius
                            ),
                        );
                    }
                    let map = world.collision_map(None);
                    match walk_path(&here, target, &map, config, rng) {
                        Ok(traj) => {
                            let mut outcome = SkillOutcome::unchanged(here);
                            outcome.new_agent_pose = *traj.last().unwrap();
                            outcome.moved_component =
                                Some((c.id, Pose2D::new(target.x, target.y, c.pose.heading)));
                            outcome.diagnostic = format!("{} carried", c.name);
                            Execution {
                                outcome,
                                trajectory: traj,
                            }
                        }
                        Err(e) => e,
                    }
                }
                Some(EntityRef::Obstacle(o)) => {
                    if o.kind == ObstacleKind::Wall {
                        return fail(
                            FailureReason::Infeasible,
                            format!("{} is a fixed wall", o.name),
                        );
                    }
                    let d = o.footprint().distance_to(here.x, here.y);
                    if d > params.pickup_radius {
                        return fail(
                            FailureReason::Infeasible,
                            format!(
                                "{} is {d:.2} m away, beyond the {:.2} m pickup radius",
                                o.name, params.pickup_radius
                            ),
                        );
                    }
                    let dropped = o.footprint_at(target.x, target.y);
                    let domain = world.layout.domain;
                    let fits = domain.contains_with_margin(target.x, target.y, o.half_extents.0.max(o.half_extents.1))
                        && world
                            .obstacles
                            .iter()
                            .filter(|other| other.id != o.id)
                            .all(|other| !other.footprint().overlaps(&dropped));
                    if !fits {
                        return fail(
                            FailureReason::Infeasible,
                            format!("no room to set {} down at ({:.2}, {:.2})", o.name, target.x, target.y),
                        );
                    }
                    let map = world.collision_map(Some(o.id));
                    let full = match walk_path(&here, target, &map, config, rng) {
                        Ok(t) => t,
                        Err(e) => return e,
                    };
                    let traj = back_off(&full, params.drop_backoff);
                    let end = *traj.last().unwrap();
                    let clear = !dropped.intrudes(end.x, end.y, world.layout.robot_radius);
                    if !clear {
                        return fail(
                            FailureReason::Infeasible,
                            format!("no room to stand clear of {} at its new position", o.name),
                        );
                    }
                    let mut outcome = SkillOutcome::unchanged(here);
                    outcome.new_agent_pose = end;
                    outcome.moved_obstacle = Some((o.id, Pose2D::new(target.x, target.y, o.center.heading)));
                    outcome.diagnostic = format!("{} relocated", o.name);
                    Execution {
                        outcome,
                        trajectory: traj,
                    }
                }
            }
        }
        _ => fail(
            FailureReason::Infeasible,
            format!("incorrect agent selection: humanoid cannot {verb}"),
        ),
    }
}

/// Truncate a dense trajectory so it stops `backoff` metres (arc length)
/// short of its end.
fn back_off(traj: &[Pose2D], backoff: f64) -> Vec<Pose2D> {
    let mut remaining = backoff;
    let mut i = traj.len() - 1;
    while i > 0 {
        let seg = traj[i].distance(&traj[i - 1]);
        if seg >= remaining {
            let t = (seg - remaining) / seg;
            let mut out = traj[..i].to_vec();
            let p = traj[i - 1].lerp(&traj[i], t);
            out.push(Pose2D::new(p.x, p.y, traj[i].heading));
            return out;
        }
        remaining -= seg;
        i -= 1;
    }
    vec![traj[0]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::types::AgentId;
    use crate::world::{init_scene, Difficulty};

    #[test]
    fn densify_spacing_and_end() {
        let path = Path::new(vec![(0.0, 0.0), (1.0, 0.0), (1.0, 0.35)]);
        let d = densify(&path, 0.1, 0.0);
        assert_eq!(d.len(), 1 + 10 + 4);
        for w in d.windows(2) {
            assert!(w[0].distance(&w[1]) <= 0.1 + 1e-12);
        }
        assert_eq!((d.last().unwrap().x, d.last().unwrap().y), (1.0, 0.35));
    }

    #[test]
    fn back_off_stops_short() {
        let path = Path::new(vec![(0.0, 0.0), (3.0, 0.0)]);
        let d = densify(&path, 0.1, 0.0);
        let b = back_off(&d, 1.1);
        assert!((b.last().unwrap().x - 1.9).abs() < 1e-9);
        assert_eq!(back_off(&d, 5.0).len(), 1);
    }

    #[test]
    fn walk_reaches_target_exactly() {
        let world = init_scene(2, Difficulty::Easy).unwrap();
        let hum = world.agent(AgentId(5)).unwrap();
        let target = Pose2D::at(-4.0, 8.0);
        let ex = humanoid_skill(
            hum,
            Verb::Walk,
            None,
            &target,
            &world,
            &SkillConfig::default(),
            &mut stream(1, &[]),
        );
        assert!(ex.outcome.success, "{}", ex.outcome.diagnostic);
        assert_eq!(ex.outcome.new_agent_pose.x, -4.0);
        assert_eq!(ex.outcome.new_agent_pose.y, 8.0);
    }
}
