//! Low-level skills per robot kind.
//!
//! Skills are pure functions of the pre-step world and a seeded generator.
//! They return an [`Execution`]: the outcome to apply plus the swept
//! trajectory, which the world uses for conflict detection.

mod arm;
mod drive;
mod failure;
mod impedance;
mod mobile;
mod rrt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::Pose2D;
use crate::types::{AgentId, Location, ObjectId, Verb};
use crate::world::WorldState;

pub use arm::{arm_check, arm_pick, magnetic_attach, ArmParams};
pub use drive::{follow_path_diff_drive, straight_line_delivery, DriveError, DriveParams};
pub use failure::{apply_stochastic_failure, FailureRates};
pub use impedance::{impedance_track, track_until, Gains, ImpedanceState};
pub use mobile::{densify, humanoid_skill, move_skill, push_skill, HumanoidParams};
pub use rrt::{rrt_plan, Path, PlanError, RrtParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillInvocation {
    pub agent: AgentId,
    pub verb: Verb,
    pub object: Option<ObjectId>,
    pub location: Option<Location>,
}

impl SkillInvocation {
    pub fn wait(agent: AgentId) -> Self {
        Self {
            agent,
            verb: Verb::Wait,
            object: None,
            location: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    Infeasible,
    Conflict,
    Stochastic,
    Unreachable,
}

impl FailureReason {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureReason::Infeasible => "infeasible",
            FailureReason::Conflict => "conflict",
            FailureReason::Stochastic => "stochastic",
            FailureReason::Unreachable => "unreachable",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillOutcome {
    pub success: bool,
    /// Pose before the skill; restored on rollback.
    pub initial_pose: Pose2D,
    pub new_agent_pose: Pose2D,
    pub moved_component: Option<(ObjectId, Pose2D)>,
    pub moved_obstacle: Option<(ObjectId, Pose2D)>,
    pub attached: Option<ObjectId>,
    pub failure_reason: Option<FailureReason>,
    pub diagnostic: String,
}

impl SkillOutcome {
    pub fn unchanged(pose: Pose2D) -> Self {
        Self {
            success: true,
            initial_pose: pose,
            new_agent_pose: pose,
            moved_component: None,
            moved_obstacle: None,
            attached: None,
            failure_reason: None,
            diagnostic: String::new(),
        }
    }

    pub fn failed(pose: Pose2D, reason: FailureReason, diagnostic: impl Into<String>) -> Self {
        Self::unchanged(pose).rolled_back(reason, diagnostic)
    }

    /// Discard every effect and mark the outcome failed.
    pub fn rolled_back(self, reason: FailureReason, diagnostic: impl Into<String>) -> Self {
        Self {
            success: false,
            initial_pose: self.initial_pose,
            new_agent_pose: self.initial_pose,
            moved_component: None,
            moved_obstacle: None,
            attached: None,
            failure_reason: Some(reason),
            diagnostic: diagnostic.into(),
        }
    }

    pub fn with_diagnostic(mut self, text: impl Into<String>) -> Self {
        self.diagnostic = text.into();
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    pub outcome: SkillOutcome,
    /// Swept agent poses; empty for skills that do not move the agent.
    pub trajectory: Vec<Pose2D>,
}

impl Execution {
    pub fn stationary(outcome: SkillOutcome) -> Self {
        Self {
            outcome,
            trajectory: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SkillConfig {
    pub rrt: RrtParams,
    pub drive: DriveParams,
    pub arm: ArmParams,
    pub humanoid: HumanoidParams,
}

/// Evaluate one invocation against the pre-step world.
pub fn execute(
    world: &WorldState,
    inv: &SkillInvocation,
    config: &SkillConfig,
    rng: &mut impl Rng,
) -> Execution {
    let Some(agent) = world.agent(inv.agent) else {
        return Execution::stationary(SkillOutcome::failed(
            Pose2D::at(0.0, 0.0),
            FailureReason::Infeasible,
            format!("state inconsistency: no agent with id {}", inv.agent),
        ));
    };
    let here = agent.pose;
    if !agent.kind.permits(inv.verb) {
        return Execution::stationary(SkillOutcome::failed(
            here,
            FailureReason::Infeasible,
            format!(
                "incorrect agent selection: {} cannot {}",
                agent.kind.label(),
                inv.verb
            ),
        ));
    }
    if inv.verb == Verb::Wait {
        return Execution::stationary(SkillOutcome::unchanged(here));
    }
    if let Some(id) = inv.object {
        if world.entity(id).is_none() {
            return Execution::stationary(SkillOutcome::failed(
                here,
                FailureReason::Infeasible,
                format!("state inconsistency: no object with id {id}"),
            ));
        }
    } else if inv.verb.needs_object() {
        return Execution::stationary(SkillOutcome::failed(
            here,
            FailureReason::Infeasible,
            format!("state inconsistency: {} needs an object", inv.verb),
        ));
    }
    let target = match &inv.location {
        Some(loc) => match world.resolve(loc) {
            Some(p) => Some(p),
            None => {
                return Execution::stationary(SkillOutcome::failed(
                    here,
                    FailureReason::Infeasible,
                    format!("state inconsistency: unknown location {loc}"),
                ))
            }
        },
        None if inv.verb.needs_location() => {
            return Execution::stationary(SkillOutcome::failed(
                here,
                FailureReason::Infeasible,
                format!("state inconsistency: {} needs a location", inv.verb),
            ))
        }
        None => None,
    };

    match inv.verb {
        Verb::Wait => unreachable!(),
        Verb::Check => {
            let comp = inv.object.and_then(|id| world.component(id));
            let outcome = match comp {
                Some(c) if arm_check(agent, c) => SkillOutcome::unchanged(here)
                    .with_diagnostic(format!("{} is within reach", c.name)),
                Some(c) => SkillOutcome::failed(
                    here,
                    FailureReason::Unreachable,
                    format!(
                        "{} is {:.2} m away, beyond reach",
                        c.name,
                        here.distance(&c.pose)
                    ),
                ),
                None => SkillOutcome::failed(
                    here,
                    FailureReason::Infeasible,
                    "state inconsistency: only components can be checked",
                ),
            };
            Execution::stationary(outcome)
        }
        Verb::Pick => {
            let target = target.expect("resolved above");
            let Some(comp) = inv.object.and_then(|id| world.component(id)) else {
                return Execution::stationary(SkillOutcome::failed(
                    here,
                    FailureReason::Infeasible,
                    "state inconsistency: only components can be picked",
                ));
            };
            if comp.kind == crate::world::ComponentKind::Wheel
                && !world
                    .components
                    .iter()
                    .any(|c| c.kind == crate::world::ComponentKind::Trunk && c.attached)
            {
                return Execution::stationary(SkillOutcome::failed(
                    here,
                    FailureReason::Infeasible,
                    format!("{} cannot be mounted before the trunk", comp.name),
                ));
            }
            let socket = world
                .socket_pose(comp)
                .unwrap_or(Pose2D::at(f64::INFINITY, f64::INFINITY));
            Execution::stationary(arm_pick(agent, comp, &target, &socket, &config.arm))
        }
        Verb::Move => move_skill(agent, &target.expect("resolved above"), world, config, rng),
        Verb::Push => push_skill(
            agent,
            inv.object.expect("checked above"),
            &target.expect("resolved above"),
            world,
            config,
            rng,
        ),
        Verb::Walk | Verb::Carry => humanoid_skill(
            agent,
            inv.verb,
            inv.object,
            &target.expect("resolved above"),
            world,
            config,
            rng,
        ),
    }
}
