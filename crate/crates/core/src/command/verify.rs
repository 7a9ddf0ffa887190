//! Capability, selection, parsing and judge stages, applied in that order
//! with short-circuit on the first failure.

use serde::{Deserialize, Serialize};

use super::grammar::{parse_body, parse_header, CommandHeader};
use super::{AgentRef, FailureCategory, FailureFeedback, RawCommand, Stage, StructuredCommand};
use crate::skills::SkillInvocation;
use crate::types::{AgentId, AgentKind, GroupId, Verb};
use crate::world::{ComponentKind, Layout, ObstacleKind, Observation};

pub const DEFAULT_TAU_C: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RosterEntry {
    pub id: AgentId,
    pub name: String,
    pub kind: AgentKind,
}

/// Everything verification may read. It never sees ground truth beyond the
/// commanding group's observations.
#[derive(Debug, Clone, Copy)]
pub struct VerifyContext<'a> {
    pub gid: GroupId,
    pub members: &'a [AgentId],
    pub roster: &'a [RosterEntry],
    pub observations: &'a [Observation],
    pub layout: &'a Layout,
    pub tau_c: f64,
    /// Backend-scored capability confidence; `None` selects rule scoring.
    pub confidence: Option<f64>,
    pub pickup_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapabilityResult {
    pub score: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub passed: bool,
    pub invocations: Vec<SkillInvocation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseResult {
    pub passed: bool,
    pub command: Option<StructuredCommand>,
    pub invocations: Vec<SkillInvocation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub passed: bool,
    pub diagnostic: String,
    /// Failure may resolve with newer observations.
    pub deferrable: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageResults {
    pub capability: Option<CapabilityResult>,
    pub selection: Option<SelectionResult>,
    pub parsing: Option<ParseResult>,
    pub judge: Option<JudgeVerdict>,
}

impl StageResults {
    pub fn evaluated(&self) -> Vec<Stage> {
        let mut out = Vec::new();
        if self.capability.is_some() {
            out.push(Stage::Capability);
        }
        if self.selection.is_some() {
            out.push(Stage::Selection);
        }
        if self.parsing.is_some() {
            out.push(Stage::Parsing);
        }
        if self.judge.is_some() {
            out.push(Stage::Judge);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationResult {
    pub raw: RawCommand,
    pub stages: StageResults,
    pub accepted: bool,
    pub deferred: bool,
    pub rejection_reason: Option<String>,
    pub feedback: Option<FailureFeedback>,
}

impl VerificationResult {
    /// Invocations ready for execution; empty unless accepted.
    pub fn invocations(&self) -> &[SkillInvocation] {
        match (&self.stages.parsing, self.accepted) {
            (Some(p), true) => &p.invocations,
            _ => &[],
        }
    }

    pub fn command(&self) -> Option<&StructuredCommand> {
        self.stages.parsing.as_ref().and_then(|p| p.command.as_ref())
    }

    pub fn category(&self) -> Option<FailureCategory> {
        self.feedback.as_ref().map(|f| f.category)
    }

    fn fail(
        mut self,
        stage: Stage,
        category: FailureCategory,
        diagnostic: String,
        deferred: bool,
    ) -> Self {
        let diagnostic = if deferred {
            format!("{diagnostic} (deferred)")
        } else {
            diagnostic
        };
        self.accepted = false;
        self.deferred = deferred;
        self.rejection_reason = Some(diagnostic.clone());
        self.feedback = Some(FailureFeedback {
            command: self.raw.clone(),
            stage,
            category,
            diagnostic,
        });
        self
    }
}

pub enum CapabilityFailure {
    Rejected(FailureCategory, String),
    Deferred(String),
}

/// Rule scoring: 1 when every named agent's kind offers the verb, else 0.
/// A backend-supplied confidence replaces the rule score.
pub fn verify_capability(
    agents: &[AgentRef],
    verb: Verb,
    ctx: &VerifyContext<'_>,
) -> (CapabilityResult, Option<CapabilityFailure>) {
    for a in agents {
        match ctx.roster.iter().find(|r| r.id == a.id) {
            None => {
                return (
                    CapabilityResult {
                        score: 0.0,
                        passed: false,
                    },
                    Some(CapabilityFailure::Rejected(
                        FailureCategory::IncorrectAgentSelection,
                        format!("unknown agent id {}", a.id),
                    )),
                )
            }
            Some(r) if r.name != a.name => {
                return (
                    CapabilityResult {
                        score: 0.0,
                        passed: false,
                    },
                    Some(CapabilityFailure::Rejected(
                        FailureCategory::IncorrectAgentSelection,
                        format!("agent id {} is {}, not {}", a.id, r.name, a.name),
                    )),
                )
            }
            Some(_) => {}
        }
    }
    let kinds: Vec<AgentKind> = agents
        .iter()
        .filter_map(|a| ctx.roster.iter().find(|r| r.id == a.id).map(|r| r.kind))
        .collect();
    let rule_ok = kinds.iter().all(|k| k.permits(verb));
    let score = ctx
        .confidence
        .unwrap_or(if rule_ok { 1.0 } else { 0.0 })
        .clamp(0.0, 1.0);
    let passed = score >= ctx.tau_c;
    let result = CapabilityResult { score, passed };
    if passed {
        return (result, None);
    }
    if ctx.confidence.is_some() && score > 0.0 {
        return (
            result,
            Some(CapabilityFailure::Deferred(format!(
                "capability confidence {score:.2} is below {:.2}",
                ctx.tau_c
            ))),
        );
    }
    let group_can = ctx
        .members
        .iter()
        .filter_map(|m| ctx.roster.iter().find(|r| r.id == *m))
        .any(|r| r.kind.permits(verb));
    let offender = agents
        .iter()
        .zip(&kinds)
        .find(|(_, k)| !k.permits(verb))
        .map(|(a, k)| format!("{}({}) is a {} and cannot {verb}", a.name, a.id, k.label()))
        .unwrap_or_else(|| format!("capability score {score:.2} below threshold"));
    let category = if group_can {
        FailureCategory::IncorrectAgentSelection
    } else {
        FailureCategory::ImproperGrouping
    };
    let diagnostic = if group_can {
        offender
    } else {
        format!("no robot in group {} can {verb}; {offender}", ctx.gid)
    };
    (result, Some(CapabilityFailure::Rejected(category, diagnostic)))
}

/// Fan a command header out into one invocation skeleton per named agent.
pub fn select_action(
    header: &CommandHeader,
    ctx: &VerifyContext<'_>,
) -> Result<Vec<SkillInvocation>, (FailureCategory, String)> {
    if header.group != ctx.gid {
        return Err((
            FailureCategory::ImproperGrouping,
            format!("command addressed to group {} but issued by group {}", header.group, ctx.gid),
        ));
    }
    let mut out = Vec::new();
    for a in &header.agents {
        if !ctx.members.contains(&a.id) {
            return Err((
                FailureCategory::ImproperGrouping,
                format!("{}({}) is not a member of group {}", a.name, a.id, ctx.gid),
            ));
        }
        let kind = ctx
            .roster
            .iter()
            .find(|r| r.id == a.id)
            .map(|r| r.kind)
            .ok_or((
                FailureCategory::IncorrectAgentSelection,
                format!("unknown agent id {}", a.id),
            ))?;
        if !kind.permits(header.verb) {
            return Err((
                FailureCategory::IncorrectAgentSelection,
                format!("{} is not in the action set of {}({})", header.verb, a.name, a.id),
            ));
        }
        out.push(SkillInvocation {
            agent: a.id,
            verb: header.verb,
            object: None,
            location: None,
        });
    }
    Ok(out)
}

fn verdict_fail(diagnostic: String, deferrable: bool) -> JudgeVerdict {
    JudgeVerdict {
        passed: false,
        diagnostic,
        deferrable,
    }
}

/// Format, semantic, feasibility and safety checks against observations and
/// the batch already accepted this cycle.
pub fn judge(
    cmd: &StructuredCommand,
    invocations: &[SkillInvocation],
    ctx: &VerifyContext<'_>,
    batch: &[SkillInvocation],
) -> JudgeVerdict {
    // Format.
    if cmd.verb.needs_object() && cmd.object.is_none() {
        return verdict_fail(format!("{} requires an object", cmd.verb), false);
    }
    if cmd.verb.needs_location() && cmd.location.is_none() {
        return verdict_fail(format!("{} requires a location", cmd.verb), false);
    }
    let target = match &cmd.location {
        Some(loc) => match ctx.layout.resolve(loc) {
            Some(p) => Some(p),
            None => return verdict_fail(format!("unknown location {loc}"), false),
        },
        None => None,
    };

    // Semantics.
    let obs = ctx.observations;
    let seen_component = cmd
        .object
        .as_ref()
        .and_then(|o| obs.iter().find_map(|ob| ob.component(o.id)));
    let seen_obstacle = cmd
        .object
        .as_ref()
        .and_then(|o| obs.iter().find_map(|ob| ob.obstacle(o.id)));
    if let Some(o) = &cmd.object {
        let seen_name = seen_component
            .map(|c| c.name.as_str())
            .or(seen_obstacle.map(|s| s.name.as_str()));
        match seen_name {
            None => {
                return verdict_fail(
                    format!("{}({}) has not been observed by group {}", o.name, o.id, ctx.gid),
                    true,
                )
            }
            Some(n) if n != o.name => {
                return verdict_fail(format!("object {} is {n}, not {}", o.id, o.name), false)
            }
            Some(_) => {}
        }
    }

    // Feasibility, from each executing agent's own view.
    for inv in invocations {
        let Some(me) = obs.iter().find(|o| o.observer == inv.agent).map(|o| &o.self_state) else {
            return verdict_fail(format!("no observation for agent {}", inv.agent), true);
        };
        let reach = me.reach.unwrap_or(ctx.layout.arm_reach);
        match cmd.verb {
            Verb::Check | Verb::Pick => {
                let Some(c) = seen_component else {
                    return verdict_fail(format!("{} needs a component", cmd.verb), false);
                };
                let d = me.pose.distance(&c.pose);
                if d > reach {
                    return verdict_fail(
                        format!("{} is {d:.2} m away, beyond the {reach:.3} m reach", c.name),
                        true,
                    );
                }
                if cmd.verb == Verb::Pick {
                    if c.attached {
                        return verdict_fail(format!("{} is already attached", c.name), false);
                    }
                    if me.holding.is_some() {
                        return verdict_fail(format!("{} is already holding an object", me.name), true);
                    }
                    let t = target.expect("pick has a location");
                    if me.pose.distance(&t) > reach {
                        return verdict_fail(
                            format!("placement {} is beyond reach", cmd.location.as_ref().unwrap()),
                            false,
                        );
                    }
                }
            }
            Verb::Push => {
                let Some(c) = seen_component else {
                    return verdict_fail("only components can be pushed".into(), false);
                };
                if c.kind != ComponentKind::Wheel {
                    return verdict_fail(format!("{} is too heavy to push", c.name), false);
                }
                if c.attached {
                    return verdict_fail(format!("{} is already attached", c.name), false);
                }
            }
            Verb::Carry => {
                let d = match (seen_component, seen_obstacle) {
                    (Some(c), _) if c.attached => {
                        return verdict_fail(format!("{} is already attached", c.name), false)
                    }
                    (Some(c), _) => me.pose.distance(&c.pose),
                    (None, Some(o)) if o.kind == ObstacleKind::Wall => {
                        return verdict_fail(format!("{} is a fixed wall", o.name), false)
                    }
                    (None, Some(o)) => crate::geometry::Rect::new(
                        o.center.x,
                        o.center.y,
                        o.half_extents.0,
                        o.half_extents.1,
                    )
                    .distance_to(me.pose.x, me.pose.y),
                    (None, None) => unreachable!("semantic check passed"),
                };
                if d > ctx.pickup_radius {
                    return verdict_fail(
                        format!(
                            "{} is {d:.2} m away, beyond the {:.2} m pickup radius",
                            cmd.object.as_ref().unwrap().name,
                            ctx.pickup_radius
                        ),
                        true,
                    );
                }
            }
            Verb::Move | Verb::Walk | Verb::Wait => {}
        }
        if matches!(cmd.verb, Verb::Move | Verb::Walk | Verb::Push | Verb::Carry) {
            let t = target.expect("mobile verbs have a location");
            if !ctx.layout.domain.contains(t.x, t.y) {
                return verdict_fail(format!("target {} is outside the workspace", cmd.location.as_ref().unwrap()), false);
            }
            let carried = seen_obstacle.map(|o| o.id);
            let blocked = obs.iter().flat_map(|o| &o.visible_obstacles).find(|o| {
                Some(o.id) != carried
                    && crate::geometry::Rect::new(o.center.x, o.center.y, o.half_extents.0, o.half_extents.1)
                        .intrudes(t.x, t.y, 0.0)
            });
            if let Some(o) = blocked {
                return verdict_fail(
                    format!("target {} lies inside {}", cmd.location.as_ref().unwrap(), o.name),
                    false,
                );
            }
        }
    }

    // Safety.
    let mut seen_objects: Vec<_> = batch.iter().filter_map(|b| b.object).collect();
    let mut seen_agents: Vec<_> = batch.iter().map(|b| b.agent).collect();
    for inv in invocations {
        if seen_agents.contains(&inv.agent) {
            return verdict_fail(format!("agent {} already has a command this cycle", inv.agent), false);
        }
        seen_agents.push(inv.agent);
        if let Some(o) = inv.object {
            if seen_objects.contains(&o) {
                return verdict_fail(
                    format!("object {o} is already targeted by another command this cycle"),
                    false,
                );
            }
            seen_objects.push(o);
        }
    }
    JudgeVerdict {
        passed: true,
        diagnostic: String::new(),
        deferrable: false,
    }
}

pub fn verify(
    raw: &RawCommand,
    ctx: &VerifyContext<'_>,
    batch: &[SkillInvocation],
) -> VerificationResult {
    let mut result = VerificationResult {
        raw: raw.clone(),
        stages: StageResults::default(),
        accepted: false,
        deferred: false,
        rejection_reason: None,
        feedback: None,
    };

    let header = match parse_header(&raw.text) {
        Ok(h) => h,
        Err(e) => {
            result.stages.capability = Some(CapabilityResult {
                score: 0.0,
                passed: false,
            });
            return result.fail(Stage::Parsing, FailureCategory::StateInconsistency, e.to_string(), false);
        }
    };

    let (cap, failure) = verify_capability(&header.agents, header.verb, ctx);
    result.stages.capability = Some(cap);
    match failure {
        Some(CapabilityFailure::Rejected(cat, text)) => {
            return result.fail(Stage::Capability, cat, text, false)
        }
        Some(CapabilityFailure::Deferred(text)) => {
            return result.fail(
                Stage::Capability,
                FailureCategory::IncorrectAgentSelection,
                text,
                true,
            )
        }
        None => {}
    }

    let skeletons = match select_action(&header, ctx) {
        Ok(s) => s,
        Err((cat, text)) => {
            result.stages.selection = Some(SelectionResult {
                passed: false,
                invocations: Vec::new(),
            });
            return result.fail(Stage::Selection, cat, text, false);
        }
    };
    result.stages.selection = Some(SelectionResult {
        passed: true,
        invocations: skeletons.clone(),
    });

    let (object, location) = match parse_body(header.verb, &header.body) {
        Ok(parts) => parts,
        Err(e) => {
            result.stages.parsing = Some(ParseResult {
                passed: false,
                command: None,
                invocations: Vec::new(),
            });
            return result.fail(Stage::Parsing, FailureCategory::StateInconsistency, e.to_string(), false);
        }
    };
    let command = StructuredCommand {
        group: header.group,
        agents: header.agents.clone(),
        verb: header.verb,
        object: object.clone(),
        location: location.clone(),
    };
    let invocations: Vec<SkillInvocation> = skeletons
        .into_iter()
        .map(|s| SkillInvocation {
            object: object.as_ref().map(|o| o.id),
            location: location.clone(),
            ..s
        })
        .collect();
    result.stages.parsing = Some(ParseResult {
        passed: true,
        command: Some(command.clone()),
        invocations: invocations.clone(),
    });

    let verdict = judge(&command, &invocations, ctx, batch);
    let passed = verdict.passed;
    let deferrable = verdict.deferrable;
    let text = verdict.diagnostic.clone();
    result.stages.judge = Some(verdict);
    if !passed {
        return result.fail(Stage::Judge, FailureCategory::StateInconsistency, text, deferrable);
    }
    result.accepted = true;
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose2D;
    use crate::types::ObjectId;
    use crate::world::{init_scene, observe, Difficulty, WorldState};

    struct Fixture {
        world: WorldState,
        roster: Vec<RosterEntry>,
    }

    impl Fixture {
        fn new() -> Self {
            let mut world = init_scene(0, Difficulty::Easy).unwrap();
            let set = |w: &mut WorldState, name: &str, x: f64, y: f64| {
                w.agents.iter_mut().find(|a| a.name == name).unwrap().pose = Pose2D::at(x, y);
            };
            set(&mut world, "franka", 0.0, -2.0);
            set(&mut world, "agv_1", 1.5, -2.0);
            set(&mut world, "agv_2", 4.0, 7.0);
            set(&mut world, "humanoid", -1.0, -3.0);
            let put = |w: &mut WorldState, name: &str, x: f64, y: f64| {
                w.components.iter_mut().find(|c| c.name == name).unwrap().pose = Pose2D::at(x, y);
            };
            put(&mut world, "wheel_1", 2.5, -2.0);
            put(&mut world, "wheel_2", 0.5, -2.0);
            put(&mut world, "wheel_3", 4.0, 8.0);
            put(&mut world, "trunk", -1.3, -3.0);
            let roster = world
                .agents
                .iter()
                .map(|a| RosterEntry {
                    id: a.id,
                    name: a.name.clone(),
                    kind: a.kind,
                })
                .collect();
            Self { world, roster }
        }

        fn id(&self, name: &str) -> AgentId {
            self.world.agent_by_name(name).unwrap().id
        }

        fn run(&self, text: &str, members: &[&str], tau_c: f64, confidence: Option<f64>, batch: &[SkillInvocation]) -> VerificationResult {
            let ids: Vec<AgentId> = members.iter().map(|m| self.id(m)).collect();
            let observations: Vec<Observation> = ids.iter().map(|a| observe(&self.world, *a).unwrap()).collect();
            let ctx = VerifyContext {
                gid: GroupId(1),
                members: &ids,
                roster: &self.roster,
                observations: &observations,
                layout: &self.world.layout,
                tau_c,
                confidence,
                pickup_radius: 0.5,
            };
            verify(&RawCommand::new(text), &ctx, batch)
        }
    }

    fn check(f: &Fixture, text: &str, members: &[&str]) -> VerificationResult {
        f.run(text, members, DEFAULT_TAU_C, None, &[])
    }

    #[test]
    fn agv_push_of_observed_wheel_is_accepted() {
        let f = Fixture::new();
        let r = check(&f, "group 1: agent agv_1(2) [push] wheel_1(10) to dock_e", &["agv_1"]);
        assert!(r.accepted, "{:?}", r.rejection_reason);
        assert_eq!(r.stages.capability.as_ref().unwrap().score, 1.0);
        assert_eq!(
            r.invocations(),
            [SkillInvocation {
                agent: AgentId(2),
                verb: Verb::Push,
                object: Some(ObjectId(10)),
                location: Some(crate::types::Location::Named("dock_e".into())),
            }]
        );
    }

    #[test]
    fn agv_pick_stops_at_capability() {
        let f = Fixture::new();
        let alone = check(&f, "group 1: agent agv_1(2) [pick] wheel_1(10) on socket_wheel_1", &["agv_1"]);
        assert!(!alone.accepted);
        assert_eq!(alone.stages.capability.as_ref().unwrap().score, 0.0);
        assert_eq!(alone.stages.evaluated(), [Stage::Capability]);
        assert_eq!(alone.category(), Some(FailureCategory::ImproperGrouping));
        let with_arm = check(&f, "group 1: agent agv_1(2) [pick] wheel_1(10) on socket_wheel_1", &["agv_1", "franka"]);
        assert_eq!(with_arm.category(), Some(FailureCategory::IncorrectAgentSelection));
        assert!(with_arm.stages.judge.is_none());
    }

    #[test]
    fn humanoid_carry_passes_capability() {
        let f = Fixture::new();
        let r = check(&f, "group 1: agent humanoid(5) [carry] trunk(14) to dock_s", &["humanoid"]);
        assert!(r.accepted, "{:?}", r.rejection_reason);
    }

    #[test]
    fn low_backend_confidence_defers() {
        let f = Fixture::new();
        let r = f.run("group 1: agent agv_1(2) [push] wheel_1(10) to dock_e", &["agv_1"], 0.5, Some(0.4), &[]);
        assert!(!r.accepted);
        assert!(r.deferred);
        assert_eq!(r.feedback.as_ref().unwrap().stage, Stage::Capability);
    }

    #[test]
    fn unknown_agent_is_incorrect_selection() {
        let f = Fixture::new();
        let r = check(&f, "group 1: agent ghost(42) [wait]", &["agv_1"]);
        assert_eq!(r.category(), Some(FailureCategory::IncorrectAgentSelection));
        let r = check(&f, "group 1: agent agv_2(2) [wait]", &["agv_1"]);
        assert_eq!(r.category(), Some(FailureCategory::IncorrectAgentSelection));
    }

    #[test]
    fn multi_agent_commands_fan_out() {
        let f = Fixture::new();
        let r = check(
            &f,
            "group 1: agent agv_1(2), agv_2(3) [move] to (1.0, 1.0)",
            &["agv_1", "agv_2"],
        );
        assert!(r.accepted, "{:?}", r.rejection_reason);
        let inv = r.invocations();
        assert_eq!(inv.len(), 2);
        assert_eq!((inv[0].agent, inv[1].agent), (AgentId(2), AgentId(3)));
        assert_eq!(inv[0].location, inv[1].location);
        assert_eq!(inv[0].verb, inv[1].verb);
    }

    #[test]
    fn wait_has_no_object_or_location() {
        let f = Fixture::new();
        let r = check(&f, "group 1: agent franka(1) [wait]", &["franka"]);
        assert!(r.accepted);
        assert_eq!(r.invocations(), [SkillInvocation::wait(AgentId(1))]);
    }

    #[test]
    fn member_of_another_group_is_improper_grouping() {
        let f = Fixture::new();
        let r = check(&f, "group 1: agent agv_2(3) [move] to (1.0, 1.0)", &["agv_1"]);
        assert_eq!(r.feedback.as_ref().unwrap().stage, Stage::Selection);
        assert_eq!(r.category(), Some(FailureCategory::ImproperGrouping));
        let r = check(&f, "group 2: agent agv_1(2) [move] to (1.0, 1.0)", &["agv_1"]);
        assert_eq!(r.category(), Some(FailureCategory::ImproperGrouping));
    }

    #[test]
    fn arm_pick_in_reach_passes_and_far_pick_fails_feasibility() {
        let f = Fixture::new();
        let r = check(&f, "group 1: agent franka(1) [pick] wheel_2(11) on socket_wheel_2", &["franka"]);
        assert!(r.accepted, "{:?}", r.rejection_reason);
        // wheel_3 at (4, 8) is seen by agv_2 but lies far outside the reach.
        let r = check(&f, "group 1: agent franka(1) [pick] wheel_3(12) on socket_wheel_3", &["franka", "agv_2"]);
        assert!(!r.accepted);
        assert_eq!(r.feedback.as_ref().unwrap().stage, Stage::Judge);
        assert!(r.rejection_reason.as_ref().unwrap().contains("beyond"));
    }

    #[test]
    fn unobserved_object_is_state_inconsistency() {
        let f = Fixture::new();
        let r = check(&f, "group 1: agent agv_1(2) [push] wheel_3(12) to dock_e", &["agv_1"]);
        assert_eq!(r.category(), Some(FailureCategory::StateInconsistency));
        assert!(r.deferred);
    }

    #[test]
    fn duplicate_object_in_batch_fails_safety() {
        let f = Fixture::new();
        let batch = [SkillInvocation {
            agent: AgentId(3),
            verb: Verb::Push,
            object: Some(ObjectId(10)),
            location: None,
        }];
        let r = f.run("group 1: agent agv_1(2) [push] wheel_1(10) to dock_e", &["agv_1"], 0.5, None, &batch);
        assert!(!r.accepted);
        assert!(r.rejection_reason.unwrap().contains("already targeted"));
    }

    #[test]
    fn malformed_header_fails_parsing() {
        let f = Fixture::new();
        let r = check(&f, "please push the wheel", &["agv_1"]);
        assert_eq!(r.feedback.as_ref().unwrap().stage, Stage::Parsing);
        assert!(!r.accepted);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        const AGENTS: [&str; 7] = ["franka(1)", "agv_1(2)", "agv_2(3)", "agv_3(4)", "humanoid(5)", "agv_1(3)", "ghost(9)"];
        const VERBS: [&str; 8] = ["check", "pick", "move", "push", "walk", "carry", "wait", "fly"];
        const OBJECTS: [&str; 8] = ["wheel_1(10)", "wheel_2(11)", "wheel_3(12)", "trunk(14)", "blocker_1(20)", "wall_1(30)", "wheel_1(11)", "bolt(77)"];
        const PLACES: [&str; 6] = ["dock_e", "socket_wheel_2", "(1.0, 1.0)", "(40.0, 0.0)", "nowhere", "(-5.3, 0.0)"];
        const NAMES: [&str; 5] = ["franka", "agv_1", "agv_2", "agv_3", "humanoid"];

        /// Commands assembled from real and bogus parts, optionally cut short.
        fn text() -> impl Strategy<Value = String> {
            (
                0u32..3,
                proptest::collection::vec(0..AGENTS.len(), 1..3),
                0..VERBS.len(),
                proptest::option::of(0..OBJECTS.len()),
                proptest::option::of((0..2usize, 0..PLACES.len())),
                proptest::option::of(0..80usize),
            )
                .prop_map(|(g, agents, verb, object, place, cut)| {
                    let names: Vec<&str> = agents.iter().map(|&i| AGENTS[i]).collect();
                    let mut s = format!("group {g}: agent {} [{}]", names.join(", "), VERBS[verb]);
                    if let Some(o) = object {
                        s.push_str(&format!(" {}", OBJECTS[o]));
                    }
                    if let Some((p, l)) = place {
                        s.push_str(&format!(" {} {}", ["to", "on"][p], PLACES[l]));
                    }
                    match cut {
                        Some(n) if n < s.len() => s[..n].to_string(),
                        _ => s,
                    }
                })
        }

        fn members() -> impl Strategy<Value = Vec<&'static str>> {
            proptest::sample::subsequence(NAMES.to_vec(), 1..=5)
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(400))]

            #[test]
            fn stages_form_a_prefix_and_failures_explain_themselves(t in text(), m in members(), conf in proptest::option::of(0.0..1.0f64)) {
                let f = Fixture::new();
                let before = f.world.clone();
                let r = f.run(&t, &m, DEFAULT_TAU_C, conf, &[]);
                prop_assert_eq!(&f.world, &before);
                let order = [Stage::Capability, Stage::Selection, Stage::Parsing, Stage::Judge];
                let got = r.stages.evaluated();
                prop_assert_eq!(&got[..], &order[..got.len()]);
                if r.accepted {
                    prop_assert_eq!(got.len(), 4);
                    prop_assert!(r.feedback.is_none());
                } else {
                    let fb = r.feedback.as_ref().unwrap();
                    prop_assert!(!fb.diagnostic.trim().is_empty());
                    prop_assert_eq!(r.rejection_reason.as_deref(), Some(fb.diagnostic.as_str()));
                    prop_assert_eq!(r.category(), Some(fb.category));
                    // The stage that failed is the last one evaluated, except
                    // that a header that does not parse is reported at parsing.
                    if let Some(&last) = got.last() {
                        prop_assert!(fb.stage == last || fb.stage == Stage::Parsing);
                    }
                }
            }

            #[test]
            fn raising_the_threshold_never_admits(t in text(), m in members(), conf in proptest::option::of(0.0..1.0f64), lo in 0.0..1.0f64, bump in 0.0..0.5f64) {
                let f = Fixture::new();
                let low = f.run(&t, &m, lo, conf, &[]);
                let high = f.run(&t, &m, (lo + bump).min(1.0), conf, &[]);
                prop_assert!(low.accepted || !high.accepted);
            }
        }
    }
}
