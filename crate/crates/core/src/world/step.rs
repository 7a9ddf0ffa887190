//! Synchronous world step: evaluate skills on the pre-state, detect
//! conflicts, apply the stochastic layer, validate, then commit atomically.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{observe, ConflictKind, ConflictReport, EnvFeedback, WorldState};
use crate::geometry::{resample_by_fraction, Pose2D};
use crate::rng::stream;
use crate::skills::{
    apply_stochastic_failure, execute, Execution, FailureRates, FailureReason, SkillConfig,
    SkillInvocation, SkillOutcome,
};
use crate::types::{AgentId, Verb};

pub type ActionMap = BTreeMap<AgentId, SkillInvocation>;

/// Paths closer than this at a matched fraction are in conflict.
pub const PATH_CONFLICT_DISTANCE: f64 = 0.5;
const CONFLICT_SAMPLES: usize = 100;

/// How otherwise successful skills are turned into failures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum FailureLayer {
    Off,
    Rates { rates: FailureRates },
    /// Fail exactly the `nth` (1-based) successful execution of `verb`.
    Inject { verb: Verb, nth: u32, seen: u32 },
}

impl FailureLayer {
    pub fn inject(verb: Verb, nth: u32) -> Self {
        FailureLayer::Inject { verb, nth, seen: 0 }
    }

    /// True once an injected failure has fired.
    pub fn injected(&self) -> bool {
        matches!(self, FailureLayer::Inject { nth, seen, .. } if seen >= nth)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub world: WorldState,
    pub feedback: EnvFeedback,
    pub outcomes: BTreeMap<AgentId, SkillOutcome>,
    pub trajectories: BTreeMap<AgentId, Vec<Pose2D>>,
}

fn detect_conflicts(
    actions: &ActionMap,
    executions: &BTreeMap<AgentId, Execution>,
) -> Vec<ConflictReport> {
    let active: Vec<(&AgentId, &SkillInvocation)> = actions
        .iter()
        .filter(|(_, inv)| inv.verb != Verb::Wait)
        .collect();
    let resampled: BTreeMap<AgentId, Vec<(f64, f64)>> = executions
        .iter()
        .filter(|(_, ex)| ex.trajectory.len() >= 2)
        .map(|(id, ex)| {
            let pts: Vec<(f64, f64)> = ex.trajectory.iter().map(|p| (p.x, p.y)).collect();
            (*id, resample_by_fraction(&pts, CONFLICT_SAMPLES))
        })
        .collect();
    let mut reports = Vec::new();
    for (i, (a, ia)) in active.iter().enumerate() {
        for (b, ib) in active.iter().skip(i + 1) {
            if let (Some(oa), Some(ob)) = (ia.object, ib.object) {
                if oa == ob {
                    reports.push(ConflictReport {
                        agents: (**a, **b),
                        kind: ConflictKind::SameObject,
                        detail: format!(
                            "agents {a} and {b} both targeted object {oa} ({} and {})",
                            ia.verb, ib.verb
                        ),
                    });
                    continue;
                }
            }
            if let (Some(pa), Some(pb)) = (resampled.get(a), resampled.get(b)) {
                let d0 = (pa[0].0 - pb[0].0).hypot(pa[0].1 - pb[0].1);
                let hit = (1..pa.len()).find(|&k| {
                    let d = (pa[k].0 - pb[k].0).hypot(pa[k].1 - pb[k].1);
                    d < PATH_CONFLICT_DISTANCE && d < d0
                });
                if let Some(k) = hit {
                    let f = k as f64 / CONFLICT_SAMPLES as f64;
                    reports.push(ConflictReport {
                        agents: (**a, **b),
                        kind: ConflictKind::PathOverlap,
                        detail: format!(
                            "paths of agents {a} and {b} come within {PATH_CONFLICT_DISTANCE} m near ({:.2}, {:.2}) at {:.0}% progress",
                            pa[k].0,
                            pa[k].1,
                            f * 100.0
                        ),
                    });
                }
            }
        }
    }
    reports
}

/// Advance the world by one synchronous round. Agents absent from `actions`
/// wait.
pub fn step(
    world: &WorldState,
    actions: &ActionMap,
    config: &SkillConfig,
    failures: &mut FailureLayer,
) -> StepOutput {
    let step_index = world.step;
    let mut executions: BTreeMap<AgentId, Execution> = BTreeMap::new();
    for (&id, inv) in actions {
        let mut inv = inv.clone();
        if inv.agent != id {
            inv.agent = id;
        }
        let mut rng = stream(world.rng_seed, &[step_index, id.0 as u64, 0]);
        executions.insert(id, execute(world, &inv, config, &mut rng));
    }

    let conflicts = detect_conflicts(actions, &executions);
    let mut outcomes: BTreeMap<AgentId, SkillOutcome> = executions
        .iter()
        .map(|(id, ex)| (*id, ex.outcome.clone()))
        .collect();
    for report in &conflicts {
        for id in [report.agents.0, report.agents.1] {
            if let Some(o) = outcomes.remove(&id) {
                let text = format!("conflict: {}", report.detail);
                outcomes.insert(id, o.rolled_back(FailureReason::Conflict, text));
            }
        }
    }

    for (&id, outcome) in outcomes.iter_mut() {
        let verb = actions[&id].verb;
        if verb == Verb::Wait || !outcome.success {
            continue;
        }
        let mut rng = stream(world.rng_seed, &[step_index, id.0 as u64, 1]);
        *outcome = match failures {
            FailureLayer::Off => outcome.clone(),
            FailureLayer::Rates { rates } => {
                apply_stochastic_failure(outcome.clone(), verb, &mut rng, rates)
            }
            FailureLayer::Inject { verb: v, nth, seen } => {
                if *v == verb && *seen < *nth {
                    *seen += 1;
                    if *seen == *nth {
                        outcome
                            .clone()
                            .rolled_back(FailureReason::Stochastic, format!("{verb} failed during execution"))
                    } else {
                        outcome.clone()
                    }
                } else {
                    outcome.clone()
                }
            }
        };
    }

    validate(world, &mut outcomes);

    let mut next = world.clone();
    for (id, outcome) in &outcomes {
        if !outcome.success {
            continue;
        }
        if let Some(agent) = next.agents.iter_mut().find(|a| a.id == *id) {
            agent.pose = outcome.new_agent_pose;
            agent.holding = None;
            agent.busy = false;
        }
        if let Some((cid, pose)) = outcome.moved_component {
            if let Some(c) = next.components.iter_mut().find(|c| c.id == cid) {
                c.pose = pose;
                c.carrier = None;
                c.attached = outcome.attached == Some(cid);
            }
        }
        if let Some((oid, pose)) = outcome.moved_obstacle {
            if let Some(o) = next.obstacles.iter_mut().find(|o| o.id == oid) {
                o.center = pose;
            }
        }
    }
    next.step = step_index + 1;

    let state_updates = next
        .agents
        .iter()
        .map(|a| observe(&next, a.id).expect("agent exists"))
        .collect();
    let trajectories = executions
        .into_iter()
        .filter(|(id, ex)| outcomes.get(id).is_some_and(|o| o.success) && !ex.trajectory.is_empty())
        .map(|(id, ex)| (id, ex.trajectory))
        .collect();
    StepOutput {
        world: next,
        feedback: EnvFeedback {
            step: step_index,
            state_updates,
            conflicts,
        },
        outcomes,
        trajectories,
    }
}

/// Fail any outcome whose end state would leave the domain or sit inside an
/// obstacle footprint, including obstacles relocated this step.
fn validate(world: &WorldState, outcomes: &mut BTreeMap<AgentId, SkillOutcome>) {
    let moved: BTreeMap<_, _> = outcomes
        .iter()
        .filter(|(_, o)| o.success)
        .filter_map(|(id, o)| o.moved_obstacle.map(|(oid, p)| (oid, (*id, p))))
        .collect();
    let footprints: Vec<(crate::types::ObjectId, AgentId, crate::geometry::Rect)> = world
        .obstacles
        .iter()
        .map(|o| match moved.get(&o.id) {
            Some(&(mover, p)) => (o.id, mover, o.footprint_at(p.x, p.y)),
            None => (o.id, AgentId(0), o.footprint()),
        })
        .collect();
    let final_pose = |id: AgentId, outcomes: &BTreeMap<AgentId, SkillOutcome>| {
        outcomes
            .get(&id)
            .filter(|o| o.success)
            .map(|o| o.new_agent_pose)
            .or_else(|| world.agent(id).map(|a| a.pose))
            .unwrap()
    };

    let mut failures: BTreeMap<AgentId, String> = BTreeMap::new();
    for (&id, o) in outcomes.iter().filter(|(_, o)| o.success) {
        let mut points = vec![("agent", o.new_agent_pose)];
        if let Some((_, p)) = o.moved_component {
            points.push(("object", p));
        }
        for (what, p) in points {
            if !p.is_finite() || !world.layout.domain.contains(p.x, p.y) {
                failures.insert(id, format!("{what} would leave the workspace"));
            } else if footprints
                .iter()
                .any(|(oid, _, r)| Some(*oid) != o.moved_obstacle.map(|m| m.0) && r.intrudes(p.x, p.y, 0.0))
            {
                failures.insert(id, format!("{what} would end inside an obstacle"));
            }
        }
    }
    // A relocated obstacle may not land on any agent or loose component.
    for (oid, (mover, p)) in &moved {
        let o = world.obstacle(*oid).unwrap();
        let r = o.footprint_at(p.x, p.y);
        let covers_agent = world
            .agents
            .iter()
            .any(|a| r.intrudes(final_pose(a.id, outcomes).x, final_pose(a.id, outcomes).y, 0.0));
        let covers_component = world.components.iter().any(|c| {
            let pose = outcomes
                .values()
                .filter(|o| o.success)
                .find_map(|o| o.moved_component.filter(|m| m.0 == c.id).map(|m| m.1))
                .unwrap_or(c.pose);
            r.intrudes(pose.x, pose.y, 0.0)
        });
        if covers_agent || covers_component {
            failures.insert(*mover, format!("{} would be set down on top of something", o.name));
        }
    }
    for (id, text) in failures {
        if let Some(o) = outcomes.remove(&id) {
            outcomes.insert(id, o.rolled_back(FailureReason::Infeasible, text));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Location, ObjectId};
    use crate::world::{init_scene, Difficulty};

    fn cfg() -> SkillConfig {
        SkillConfig::default()
    }

    #[test]
    fn all_wait_only_advances_the_counter() {
        let world = init_scene(0, Difficulty::Easy).unwrap();
        let out = step(&world, &ActionMap::new(), &cfg(), &mut FailureLayer::Off);
        let mut expected = world.clone();
        expected.step = 1;
        assert_eq!(out.world, expected);
        assert!(out.feedback.conflicts.is_empty());
        assert_eq!(out.feedback.state_updates.len(), 5);
        assert_eq!(out.feedback.step, 0);
    }

    #[test]
    fn unknown_object_fails_only_that_skill() {
        let world = init_scene(0, Difficulty::Easy).unwrap();
        let mut actions = ActionMap::new();
        actions.insert(
            AgentId(2),
            SkillInvocation {
                agent: AgentId(2),
                verb: Verb::Push,
                object: Some(ObjectId(99)),
                location: Some(Location::Named("dock_e".into())),
            },
        );
        let out = step(&world, &actions, &cfg(), &mut FailureLayer::Off);
        let o = &out.outcomes[&AgentId(2)];
        assert!(!o.success);
        assert!(o.diagnostic.contains("state inconsistency"));
        assert_eq!(out.world.step, 1);
    }

    #[test]
    fn single_move_lands_on_trajectory_end() {
        let world = init_scene(5, Difficulty::Easy).unwrap();
        let mut actions = ActionMap::new();
        actions.insert(
            AgentId(3),
            SkillInvocation {
                agent: AgentId(3),
                verb: Verb::Move,
                object: None,
                location: Some(Location::point(2.0, 3.0)),
            },
        );
        let out = step(&world, &actions, &cfg(), &mut FailureLayer::Off);
        assert!(out.outcomes[&AgentId(3)].success);
        let end = *out.trajectories[&AgentId(3)].last().unwrap();
        assert_eq!(out.world.agent(AgentId(3)).unwrap().pose, end);
        assert!(end.distance_to(2.0, 3.0) <= 0.1);
    }

    #[test]
    fn injection_fires_once() {
        let world = init_scene(5, Difficulty::Easy).unwrap();
        let mut actions = ActionMap::new();
        actions.insert(
            AgentId(3),
            SkillInvocation {
                agent: AgentId(3),
                verb: Verb::Move,
                object: None,
                location: Some(Location::point(2.0, 3.0)),
            },
        );
        let mut layer = FailureLayer::inject(Verb::Move, 1);
        let first = step(&world, &actions, &cfg(), &mut layer);
        assert_eq!(
            first.outcomes[&AgentId(3)].failure_reason,
            Some(FailureReason::Stochastic)
        );
        assert!(layer.injected());
        let second = step(&first.world, &actions, &cfg(), &mut layer);
        assert!(second.outcomes[&AgentId(3)].success);
    }

    mod props {
        use super::*;
        use crate::geometry::Pose2D;
        use proptest::prelude::*;

        const OBJECTS: [u32; 13] = [10, 11, 12, 13, 14, 20, 21, 22, 30, 31, 32, 33, 99];
        const NAMED: [&str; 6] = ["dock_e", "dock_s", "gap_north", "clearing_south", "staging_north", "socket_trunk"];

        #[derive(Debug, Clone)]
        struct Action {
            verb: usize,
            object: usize,
            location: Result<(f64, f64), usize>,
        }

        fn action() -> impl Strategy<Value = Option<Action>> {
            let location = prop_oneof![
                (-8.0..8.0f64, -12.0..12.0f64).prop_map(Ok),
                (0..NAMED.len()).prop_map(Err),
            ];
            proptest::option::of((0..3usize, 0..OBJECTS.len(), location).prop_map(|(verb, object, location)| Action {
                verb,
                object,
                location,
            }))
        }

        fn actions_for(world: &WorldState, picks: &[Option<Action>]) -> ActionMap {
            world
                .agents
                .iter()
                .zip(picks)
                .filter_map(|(a, p)| {
                    let p = p.as_ref()?;
                    let verb = a.kind.skills()[p.verb];
                    Some((
                        a.id,
                        SkillInvocation {
                            agent: a.id,
                            verb,
                            object: verb.needs_object().then_some(ObjectId(OBJECTS[p.object])),
                            location: verb.needs_location().then(|| match p.location {
                                Ok((x, y)) => Location::point(x, y),
                                Err(i) => Location::Named(NAMED[i].into()),
                            }),
                        },
                    ))
                })
                .collect()
        }

        fn world(seed: u64, hard: bool) -> WorldState {
            init_scene(seed, if hard { Difficulty::Hard } else { Difficulty::Easy }).unwrap()
        }

        fn pairs(reports: &[ConflictReport]) -> Vec<(AgentId, AgentId, ConflictKind)> {
            let mut v: Vec<_> = reports.iter().map(|r| (r.agents.0, r.agents.1, r.kind)).collect();
            v.sort_by_key(|p| (p.0, p.1, p.2 as u8));
            v
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn step_advances_by_one_and_stays_valid(
                seed in 0u64..1000,
                hard: bool,
                picks in proptest::collection::vec(action(), 5),
            ) {
                let w = world(seed, hard);
                let actions = actions_for(&w, &picks);
                let out = step(&w, &actions, &cfg(), &mut FailureLayer::Off);
                prop_assert_eq!(out.world.step, w.step + 1);
                let d = out.world.layout.domain;
                for a in &out.world.agents {
                    prop_assert!(d.contains(a.pose.x, a.pose.y), "{} left the domain", a.name);
                    for o in &out.world.obstacles {
                        prop_assert!(!o.footprint().intrudes(a.pose.x, a.pose.y, 0.0), "{} inside {}", a.name, o.name);
                    }
                }
                for c in out.world.components.iter().filter(|c| !c.attached) {
                    prop_assert!(d.contains(c.pose.x, c.pose.y), "{} left the domain", c.name);
                    for o in &out.world.obstacles {
                        prop_assert!(!o.footprint().intrudes(c.pose.x, c.pose.y, 0.0), "{} inside {}", c.name, o.name);
                    }
                }
                // Zero failure rates make execution a pure function of the inputs.
                let again = step(&w, &actions, &cfg(), &mut FailureLayer::Rates { rates: crate::skills::FailureRates::zero() });
                prop_assert_eq!(&again.world, &out.world);
                prop_assert_eq!(&again.outcomes, &out.outcomes);
            }

            #[test]
            fn conflicts_do_not_depend_on_which_agent_is_which(
                seed in 0u64..1000,
                a in (-3.5..3.5f64, -5.0..5.0f64),
                b in (-3.5..3.5f64, -5.0..5.0f64),
                ta in (-3.5..3.5f64, -5.0..5.0f64),
                tb in (-3.5..3.5f64, -5.0..5.0f64),
            ) {
                // Two AGVs in the open middle of the workspace, where every
                // route is a straight line.
                let place = |w: &mut WorldState, id: u32, p: (f64, f64)| {
                    w.agents.iter_mut().find(|x| x.id == AgentId(id)).unwrap().pose = Pose2D::at(p.0, p.1);
                };
                let mv = |id: u32, t: (f64, f64)| SkillInvocation {
                    agent: AgentId(id),
                    verb: Verb::Move,
                    object: None,
                    location: Some(Location::point(t.0, t.1)),
                };
                let mut w1 = world(seed, false);
                place(&mut w1, 2, a);
                place(&mut w1, 3, b);
                let mut w2 = w1.clone();
                place(&mut w2, 2, b);
                place(&mut w2, 3, a);
                let one: ActionMap = [(AgentId(2), mv(2, ta)), (AgentId(3), mv(3, tb))].into_iter().collect();
                let two: ActionMap = [(AgentId(3), mv(3, ta)), (AgentId(2), mv(2, tb))].into_iter().collect();
                let r1 = step(&w1, &one, &cfg(), &mut FailureLayer::Off).feedback.conflicts;
                let r2 = step(&w2, &two, &cfg(), &mut FailureLayer::Off).feedback.conflicts;
                prop_assert_eq!(pairs(&r1), pairs(&r2));
                for r in &r1 {
                    prop_assert!(r.agents.0 < r.agents.1);
                }
            }
        }
    }
}
