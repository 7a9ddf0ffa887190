//! Planar arm skills: reach gating, two-phase impedance pick, magnetic
//! attachment.

use serde::{Deserialize, Serialize};

use super::impedance::{track_until, Gains, ImpedanceState};
use super::{FailureReason, SkillOutcome};
use crate::geometry::Pose2D;
use crate::world::{AgentState, ComponentState};

pub const DEFAULT_REACH: f64 = 0.855;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArmParams {
    pub gains: Gains,
    /// Coarse phase ends once the end effector is this close.
    pub gripper_threshold: f64,
    /// Fine phase ends once the end effector is this close.
    pub grasp_radius: f64,
    pub attach_range: f64,
    pub coarse_dt: f64,
    pub fine_dt: f64,
    /// Simulated seconds allowed per phase.
    pub phase_budget: f64,
}

impl Default for ArmParams {
    fn default() -> Self {
        Self {
            gains: Gains::default(),
            gripper_threshold: 0.05,
            grasp_radius: 0.03,
            attach_range: 0.03,
            coarse_dt: 0.05,
            fine_dt: 0.005,
            phase_budget: 20.0,
        }
    }
}

fn reach(arm: &AgentState) -> f64 {
    arm.reach.unwrap_or(DEFAULT_REACH)
}

/// True iff the object lies within the arm's planar reach (inclusive).
pub fn arm_check(arm: &AgentState, object: &ComponentState) -> bool {
    arm.pose.distance(&object.pose) <= reach(arm)
}

/// Snap a component onto its socket when it lies within the attraction range.
pub fn magnetic_attach(
    component: &ComponentState,
    socket: &Pose2D,
    range: f64,
) -> Result<ComponentState, FailureReason> {
    if component.pose.distance(socket) <= range {
        let mut out = component.clone();
        out.pose = Pose2D::new(socket.x, socket.y, component.pose.heading);
        out.attached = true;
        out.carrier = None;
        Ok(out)
    } else {
        Err(FailureReason::Infeasible)
    }
}

/// Move the end effector from `from` to `to` in a coarse then a fine phase.
fn reach_point(
    from: ImpedanceState,
    to: &Pose2D,
    params: &ArmParams,
) -> Option<ImpedanceState> {
    let target = [to.x, to.y];
    let (coarse, _) = track_until(
        &from,
        &target,
        params.coarse_dt,
        params.gripper_threshold,
        params.phase_budget,
    )?;
    let (fine, _) = track_until(
        &coarse,
        &target,
        params.fine_dt,
        params.grasp_radius,
        params.phase_budget,
    )?;
    Some(fine)
}

pub fn arm_pick(
    arm: &AgentState,
    object: &ComponentState,
    location: &Pose2D,
    socket: &Pose2D,
    params: &ArmParams,
) -> SkillOutcome {
    let here = arm.pose;
    let r = reach(arm);
    if object.attached {
        return SkillOutcome::failed(
            here,
            FailureReason::Infeasible,
            format!("{} is already attached", object.name),
        );
    }
    if object.carrier.is_some() {
        return SkillOutcome::failed(
            here,
            FailureReason::Infeasible,
            format!("{} is held by another agent", object.name),
        );
    }
    if !arm_check(arm, object) {
        return SkillOutcome::failed(
            here,
            FailureReason::Unreachable,
            format!(
                "{} is {:.2} m from the arm base, reach is {:.3} m",
                object.name,
                here.distance(&object.pose),
                r
            ),
        );
    }
    if here.distance(location) > r {
        return SkillOutcome::failed(
            here,
            FailureReason::Infeasible,
            format!(
                "placement ({:.2}, {:.2}) is beyond reach",
                location.x, location.y
            ),
        );
    }
    let rest = ImpedanceState::at_rest(vec![here.x, here.y], params.gains);
    let Some(grasp) = reach_point(rest, &object.pose, params) else {
        return SkillOutcome::failed(here, FailureReason::Infeasible, "grasp did not converge");
    };
    let Some(_) = reach_point(grasp, location, params) else {
        return SkillOutcome::failed(here, FailureReason::Infeasible, "placement did not converge");
    };

    let mut placed = object.clone();
    placed.pose = Pose2D::new(location.x, location.y, object.pose.heading);
    let mut outcome = SkillOutcome::unchanged(here);
    match magnetic_attach(&placed, socket, params.attach_range) {
        Ok(attached) => {
            outcome.moved_component = Some((attached.id, attached.pose));
            outcome.attached = Some(attached.id);
            outcome.diagnostic = format!("{} attached", object.name);
        }
        Err(_) => {
            outcome.moved_component = Some((placed.id, placed.pose));
            outcome.diagnostic = format!(
                "{} placed {:.3} m from its socket, not attached",
                object.name,
                placed.pose.distance(socket)
            );
        }
    }
    outcome
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{AgentId, AgentKind, ObjectId};
    use crate::world::ComponentKind;

    fn arm() -> AgentState {
        AgentState {
            id: AgentId(1),
            name: "franka".into(),
            kind: AgentKind::Arm,
            pose: Pose2D::at(0.0, -2.0),
            holding: None,
            busy: false,
            reach: Some(0.855),
        }
    }

    fn wheel_at(x: f64, y: f64) -> ComponentState {
        ComponentState {
            id: ObjectId(10),
            name: "wheel_1".into(),
            kind: ComponentKind::Wheel,
            pose: Pose2D::at(x, y),
            attached: false,
            carrier: None,
            socket: "socket_wheel_1".into(),
            pushable: true,
        }
    }

    #[test]
    fn reach_boundary_is_inclusive() {
        assert!(arm_check(&arm(), &wheel_at(0.5, -2.0)));
        assert!(arm_check(&arm(), &wheel_at(0.855, -2.0)));
        assert!(!arm_check(&arm(), &wheel_at(0.8551, -2.0)));
        assert!(!arm_check(&arm(), &wheel_at(4.0, 8.0)));
    }

    #[test]
    fn attach_boundary() {
        let socket = Pose2D::at(0.25, -1.3);
        for (d, ok) in [(0.0, true), (0.029, true), (0.031, false)] {
            let c = wheel_at(0.25 + d, -1.3);
            let r = magnetic_attach(&c, &socket, 0.03);
            assert_eq!(r.is_ok(), ok, "distance {d}");
            if let Ok(c) = r {
                assert!(c.attached);
                assert_eq!((c.pose.x, c.pose.y), (0.25, -1.3));
            }
        }
    }

    #[test]
    fn pick_to_socket_attaches() {
        let socket = Pose2D::at(0.25, -1.3);
        let out = arm_pick(&arm(), &wheel_at(0.3, -2.0), &socket, &socket, &ArmParams::default());
        assert!(out.success);
        assert_eq!(out.attached, Some(ObjectId(10)));
    }

    #[test]
    fn pick_near_socket_places_without_attaching() {
        let socket = Pose2D::at(0.25, -1.3);
        let loc = Pose2D::at(0.29, -1.3);
        let out = arm_pick(&arm(), &wheel_at(0.3, -2.0), &loc, &socket, &ArmParams::default());
        assert!(out.success);
        assert_eq!(out.attached, None);
        assert_eq!(out.moved_component.unwrap().1, loc);
    }

    #[test]
    fn far_object_is_unreachable() {
        let socket = Pose2D::at(0.25, -1.3);
        let out = arm_pick(&arm(), &wheel_at(2.0, -2.0), &socket, &socket, &ArmParams::default());
        assert_eq!(out.failure_reason, Some(FailureReason::Unreachable));
        assert!(out.diagnostic.contains("reach"));
    }

    #[test]
    fn reach_check_agrees_with_distance_on_a_grid() {
        let mut a = arm();
        a.pose = Pose2D::at(0.0, 0.0);
        for k in 0..=2000 {
            let d = k as f64 * 0.001;
            for (x, y) in [(d, 0.0), (-d, 0.0), (0.0, d), (0.0, -d)] {
                assert_eq!(arm_check(&a, &wheel_at(x, y)), d <= 0.855, "distance {d}");
            }
        }
    }
}
