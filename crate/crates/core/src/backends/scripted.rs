//! Deterministic stand-ins for the language model.
//!
//! [`ScriptedBackend`] follows a hand-derived minimal-step plan per task. Each
//! robot works through its own job list; a job is reissued until its
//! completion condition shows up in the observations, so failed skills are
//! retried on the next cycle. At most one robot travels through each wall gap
//! per cycle, which keeps paths apart.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Mutex, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, BackendRequest, BackendResponse, Payload, Role};
use crate::command::RosterEntry;
use crate::geometry::{resample_by_fraction, Pose2D};
use crate::memory::PlannerContext;
use crate::orchestrator::{Proposal, SubgroupAssignment};
use crate::types::{AgentId, AgentKind, GroupId, Location, ObjectId, Verb};
use crate::world::{ConflictReport, Layout, Observation};

const AT_TOLERANCE: f64 = 0.15;

/// Object ids of the benchmark scene.
fn object_id(name: &str) -> Option<ObjectId> {
    let n = |prefix: &str| name.strip_prefix(prefix).and_then(|k| k.parse::<u32>().ok());
    if name == "trunk" {
        Some(ObjectId(14))
    } else if let Some(k) = n("wheel_").filter(|k| (1..=4).contains(k)) {
        Some(ObjectId(9 + k))
    } else {
        n("blocker_").filter(|k| (1..=3).contains(k)).map(|k| ObjectId(19 + k))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corridor {
    North,
    South,
}

/// A robot by name, or an AGV role bound to a concrete AGV at the start of
/// the episode.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Actor {
    Named(String),
    Role(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cond {
    AgentAt(Actor, Location),
    /// Also true once the component is mounted.
    ComponentAt(String, Location),
    Attached(String),
    ObstacleAt(String, Location),
    CycleAtLeast(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub actor: Actor,
    pub verb: Verb,
    pub object: Option<String>,
    pub location: Option<Location>,
    pub done: Cond,
    pub after: Vec<Cond>,
    pub not_before: u64,
    pub corridor: Option<Corridor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskScript {
    pub name: String,
    /// Listed in priority order.
    pub jobs: Vec<Job>,
}

fn named(s: &str) -> Location {
    Location::Named(s.to_string())
}

fn role(r: &str) -> Actor {
    Actor::Role(r.to_string())
}

fn robot(r: &str) -> Actor {
    Actor::Named(r.to_string())
}

struct Builder {
    jobs: Vec<Job>,
}

impl Builder {
    fn go(&mut self, actor: Actor, verb: Verb, to: Location, not_before: u64, corridor: Option<Corridor>) -> &mut Self {
        self.jobs.push(Job {
            done: Cond::AgentAt(actor.clone(), to.clone()),
            actor,
            verb,
            object: None,
            location: Some(to),
            after: Vec::new(),
            not_before,
            corridor,
        });
        self
    }

    #[allow(clippy::too_many_arguments)]
    fn haul(
        &mut self,
        actor: Actor,
        verb: Verb,
        object: &str,
        to: Location,
        not_before: u64,
        corridor: Option<Corridor>,
        after: Vec<Cond>,
    ) -> &mut Self {
        let done = if object.starts_with("blocker") {
            Cond::ObstacleAt(object.to_string(), to.clone())
        } else {
            Cond::ComponentAt(object.to_string(), to.clone())
        };
        self.jobs.push(Job {
            actor,
            verb,
            object: Some(object.to_string()),
            location: Some(to),
            done,
            after,
            not_before,
            corridor,
        });
        self
    }

    /// Mount `object` once it sits on `dock`; wheels also wait for the trunk.
    fn mount(&mut self, object: &str, dock: &str) -> &mut Self {
        let mut after = vec![Cond::ComponentAt(object.to_string(), named(dock))];
        if object != "trunk" {
            after.push(Cond::Attached("trunk".into()));
        }
        self.jobs.push(Job {
            actor: robot("franka"),
            verb: Verb::Pick,
            object: Some(object.to_string()),
            location: Some(named(&format!("socket_{object}"))),
            done: Cond::Attached(object.to_string()),
            after,
            not_before: 0,
            corridor: None,
        });
        self
    }

    /// One-off inspection while the arm would otherwise idle.
    fn inspect(&mut self, object: &str, dock: &str, cycle: u64) -> &mut Self {
        self.jobs.push(Job {
            actor: robot("franka"),
            verb: Verb::Check,
            object: Some(object.to_string()),
            location: None,
            done: Cond::CycleAtLeast(cycle + 1),
            after: vec![Cond::ComponentAt(object.to_string(), named(dock))],
            not_before: cycle,
            corridor: None,
        });
        self
    }
}

const NORTH: Option<Corridor> = Some(Corridor::North);
const SOUTH: Option<Corridor> = Some(Corridor::South);

fn post(x: f64, y: f64) -> Location {
    Location::point(x, y)
}

impl TaskScript {
    /// Plans for the four benchmark tasks.
    pub fn for_task(name: &str) -> Option<TaskScript> {
        let (h, a, b, c) = (robot("humanoid"), role("agv_a"), role("agv_b"), role("agv_c"));
        let p_ne = post(1.5, 5.0);
        let p_nw = post(-1.5, 5.0);
        let p_se = post(1.5, -5.0);
        let p_sw = post(-1.5, -5.0);
        let trunk_moved = |dock: &str| vec![Cond::ComponentAt("trunk".into(), named(dock))];
        let mut s = Builder { jobs: Vec::new() };
        match name {
            // Trunk stacked on wheel_4 in the south-east corner.
            "task1" => {
                s.go(h.clone(), Verb::Walk, named("anchor_se"), 0, SOUTH)
                    .haul(h, Verb::Carry, "trunk", named("dock_s"), 0, SOUTH, vec![])
                    .go(a.clone(), Verb::Move, p_ne, 0, None)
                    .haul(a.clone(), Verb::Push, "wheel_1", named("dock_e"), 0, NORTH, vec![])
                    .go(a.clone(), Verb::Move, p_se, 2, None)
                    .haul(a, Verb::Push, "wheel_4", named("dock_se"), 0, SOUTH, trunk_moved("dock_s"))
                    .go(b.clone(), Verb::Move, p_nw, 0, None)
                    .haul(b, Verb::Push, "wheel_2", named("dock_w"), 2, NORTH, vec![])
                    .go(c.clone(), Verb::Move, p_sw, 0, None)
                    .haul(c, Verb::Push, "wheel_3", named("dock_sw"), 3, SOUTH, vec![])
                    .mount("trunk", "dock_s")
                    .mount("wheel_1", "dock_e")
                    .mount("wheel_2", "dock_w")
                    .mount("wheel_3", "dock_sw")
                    .mount("wheel_4", "dock_se");
            }
            // Trunk stacked on wheel_2 in the north-west corner.
            "task2" => {
                s.go(h.clone(), Verb::Walk, named("anchor_nw"), 0, NORTH)
                    .haul(h, Verb::Carry, "trunk", named("dock_s"), 0, NORTH, vec![])
                    .go(a.clone(), Verb::Move, p_se, 0, None)
                    .haul(a.clone(), Verb::Push, "wheel_4", named("dock_se"), 0, SOUTH, vec![])
                    .go(a.clone(), Verb::Move, p_nw, 3, None)
                    .haul(a, Verb::Push, "wheel_2", named("dock_w"), 0, NORTH, trunk_moved("dock_s"))
                    .go(b.clone(), Verb::Move, p_sw, 0, None)
                    .haul(b, Verb::Push, "wheel_3", named("dock_sw"), 2, SOUTH, vec![])
                    .go(c.clone(), Verb::Move, p_ne, 0, None)
                    .haul(c, Verb::Push, "wheel_1", named("dock_e"), 2, NORTH, vec![])
                    .mount("trunk", "dock_s")
                    .mount("wheel_4", "dock_se")
                    .mount("wheel_3", "dock_sw")
                    .mount("wheel_1", "dock_e")
                    .mount("wheel_2", "dock_w");
            }
            // North gap sealed by blockers; trunk stacked on wheel_1 in the
            // north-east corner.
            "task3" => {
                s.go(h.clone(), Verb::Walk, named("gap_north"), 0, None)
                    .haul(h.clone(), Verb::Carry, "blocker_2", named("clearing_north"), 0, None, vec![])
                    .go(h.clone(), Verb::Walk, named("anchor_ne"), 0, NORTH)
                    .haul(h, Verb::Carry, "trunk", named("dock_w"), 0, NORTH, vec![])
                    .go(a.clone(), Verb::Move, p_sw, 1, None)
                    .haul(a, Verb::Push, "wheel_3", named("dock_sw"), 0, SOUTH, vec![])
                    .go(b.clone(), Verb::Move, p_se, 1, None)
                    .haul(b, Verb::Push, "wheel_4", named("dock_se"), 0, SOUTH, vec![])
                    .go(c.clone(), Verb::Move, p_nw.clone(), 4, None)
                    .haul(c.clone(), Verb::Push, "wheel_2", named("dock_w"), 0, NORTH, trunk_moved("dock_w"))
                    .go(c.clone(), Verb::Move, p_ne, 0, None)
                    .haul(c, Verb::Push, "wheel_1", named("dock_e"), 0, NORTH, trunk_moved("dock_w"))
                    .inspect("wheel_3", "dock_sw", 3)
                    .mount("trunk", "dock_w")
                    .mount("wheel_3", "dock_sw")
                    .mount("wheel_4", "dock_se")
                    .mount("wheel_2", "dock_w")
                    .mount("wheel_1", "dock_e");
            }
            // South gap sealed; trunk stacked on wheel_4 in the south-east
            // corner.
            "task4" => {
                s.go(h.clone(), Verb::Walk, named("gap_south"), 0, None)
                    .haul(h.clone(), Verb::Carry, "blocker_2", named("clearing_south"), 0, None, vec![])
                    .go(h.clone(), Verb::Walk, named("anchor_se"), 0, SOUTH)
                    .haul(h, Verb::Carry, "trunk", named("dock_w"), 0, SOUTH, vec![])
                    .go(a.clone(), Verb::Move, p_nw, 1, None)
                    .haul(a, Verb::Push, "wheel_2", named("dock_w"), 0, NORTH, vec![])
                    .go(b.clone(), Verb::Move, p_ne, 1, None)
                    .haul(b, Verb::Push, "wheel_1", named("dock_e"), 0, NORTH, vec![])
                    .go(c.clone(), Verb::Move, p_sw, 4, None)
                    .haul(c.clone(), Verb::Push, "wheel_3", named("dock_sw"), 0, SOUTH, trunk_moved("dock_w"))
                    .go(c.clone(), Verb::Move, p_se, 0, None)
                    .haul(c, Verb::Push, "wheel_4", named("dock_se"), 0, SOUTH, trunk_moved("dock_w"))
                    .inspect("wheel_2", "dock_w", 3)
                    .mount("trunk", "dock_w")
                    .mount("wheel_2", "dock_w")
                    .mount("wheel_1", "dock_e")
                    .mount("wheel_3", "dock_sw")
                    .mount("wheel_4", "dock_se");
            }
            _ => return None,
        }
        Some(TaskScript {
            name: name.to_string(),
            jobs: s.jobs,
        })
    }

    fn roles(&self) -> Vec<String> {
        let mut out = Vec::new();
        for j in &self.jobs {
            if let Actor::Role(r) = &j.actor {
                if !out.contains(r) {
                    out.push(r.clone());
                }
            }
        }
        out
    }

    fn first_target(&self, role: &str) -> Option<&Location> {
        self.jobs
            .iter()
            .find(|j| j.actor == Actor::Role(role.to_string()))
            .and_then(|j| j.location.as_ref())
    }
}

/// What the script can tell about the world from a set of observations.
struct View<'a> {
    obs: &'a [Observation],
    layout: &'a Layout,
    roster: &'a [RosterEntry],
    binding: &'a BTreeMap<String, AgentId>,
    cycle: u64,
}

impl View<'_> {
    fn agent_id(&self, actor: &Actor) -> Option<AgentId> {
        match actor {
            Actor::Named(n) => self.roster.iter().find(|r| &r.name == n).map(|r| r.id),
            Actor::Role(r) => self.binding.get(r).copied(),
        }
    }

    fn near(&self, p: &Pose2D, loc: &Location) -> bool {
        self.layout
            .resolve(loc)
            .is_some_and(|t| p.distance(&t) <= AT_TOLERANCE)
    }

    fn holds(&self, cond: &Cond) -> bool {
        match cond {
            Cond::AgentAt(actor, loc) => self.agent_id(actor).is_some_and(|id| {
                self.obs
                    .iter()
                    .find(|o| o.observer == id)
                    .is_some_and(|o| self.near(&o.self_state.pose, loc))
            }),
            Cond::ComponentAt(name, loc) => self.obs.iter().any(|o| {
                o.visible_components
                    .iter()
                    .any(|c| &c.name == name && (c.attached || self.near(&c.pose, loc)))
            }),
            Cond::Attached(name) => self.obs.iter().any(|o| {
                o.visible_components
                    .iter()
                    .any(|c| &c.name == name && c.attached)
            }),
            Cond::ObstacleAt(name, loc) => self.obs.iter().any(|o| {
                o.visible_obstacles
                    .iter()
                    .any(|b| &b.name == name && self.near(&b.center, loc))
            }),
            Cond::CycleAtLeast(n) => self.cycle >= *n,
        }
    }
}

/// Rough route of a job: start, object, target, with a detour through the
/// wall gap whenever a leg crosses a wall row.
fn predicted_route(start: Pose2D, job: &Job, view: &View<'_>) -> Vec<(f64, f64)> {
    let mut pts = vec![(start.x, start.y)];
    let leg = |to: (f64, f64), pts: &mut Vec<(f64, f64)>| {
        let from = *pts.last().unwrap();
        for side in [1.0, -1.0] {
            let beyond = |p: (f64, f64)| p.1 * side > GAP_ROW;
            if beyond(from) != beyond(to) {
                let outer = if beyond(from) { from } else { to };
                let gx = outer.0.clamp(-GAP_HALF_WIDTH, GAP_HALF_WIDTH);
                let (near, far) = ((gx, side * (GAP_ROW - 0.8)), (gx, side * (GAP_ROW + 0.8)));
                if beyond(from) {
                    pts.extend([far, near]);
                } else {
                    pts.extend([near, far]);
                }
            }
        }
        pts.push(to);
    };
    if let Some(name) = &job.object {
        let at = view.obs.iter().find_map(|o| {
            o.visible_components
                .iter()
                .find(|c| &c.name == name)
                .map(|c| (c.pose.x, c.pose.y))
                .or_else(|| {
                    o.visible_obstacles
                        .iter()
                        .find(|b| &b.name == name)
                        .map(|b| (b.center.x, b.center.y))
                })
        });
        if let Some(at) = at {
            leg(at, &mut pts);
        }
    }
    if let Some(t) = job.location.as_ref().and_then(|l| view.layout.resolve(l)) {
        leg((t.x, t.y), &mut pts);
    }
    pts
}

const GAP_ROW: f64 = 6.5;
const GAP_HALF_WIDTH: f64 = 1.6;
/// Predicted routes closer than this are treated as a conflict.
const ROUTE_MARGIN: f64 = 1.1;

fn routes_clash(a: &[(f64, f64)], b: &[(f64, f64)]) -> bool {
    let (ra, rb) = (resample_by_fraction(a, 60), resample_by_fraction(b, 60));
    let d = |k: usize| (ra[k].0 - rb[k].0).hypot(ra[k].1 - rb[k].1);
    let d0 = d(0);
    (1..ra.len().min(rb.len())).any(|k| d(k) < ROUTE_MARGIN && d(k) < d0)
}

/// Jobs to issue this cycle, keyed by agent.
fn schedule(script: &TaskScript, view: &View<'_>, conflicts: &[ConflictReport]) -> BTreeMap<AgentId, usize> {
    let mut by_agent: BTreeMap<AgentId, Vec<usize>> = BTreeMap::new();
    for (i, j) in script.jobs.iter().enumerate() {
        if let Some(id) = view.agent_id(&j.actor) {
            by_agent.entry(id).or_default().push(i);
        }
    }
    let ready = |i: usize| {
        let j = &script.jobs[i];
        view.cycle >= j.not_before && j.after.iter().all(|c| view.holds(c))
    };
    let mut candidates: Vec<(usize, AgentId)> = Vec::new();
    for (id, list) in &by_agent {
        let arm = script.jobs[list[0]].actor == Actor::Named("franka".into());
        let pick = if arm {
            // The arm takes whichever mount is ready.
            list.iter()
                .copied()
                .find(|&i| !view.holds(&script.jobs[i].done) && ready(i))
        } else {
            // Resume after the last job whose lasting effect is observed;
            // standing somewhere proves nothing about progress.
            let start = list
                .iter()
                .rposition(|&i| {
                    let done = &script.jobs[i].done;
                    !matches!(done, Cond::AgentAt(..)) && view.holds(done)
                })
                .map(|p| p + 1)
                .unwrap_or(0);
            list[start..]
                .iter()
                .copied()
                .find(|&i| !view.holds(&script.jobs[i].done))
                .filter(|&i| ready(i))
        };
        if let Some(i) = pick {
            candidates.push((i, *id));
        }
    }
    candidates.sort();
    // After a reported conflict the lower-priority robot of the pair yields.
    let rank: BTreeMap<AgentId, usize> = candidates.iter().map(|&(i, id)| (id, i)).collect();
    let mut yielding = BTreeSet::new();
    for c in conflicts {
        let (a, b) = c.agents;
        if let (Some(ra), Some(rb)) = (rank.get(&a), rank.get(&b)) {
            yielding.insert(if ra < rb { b } else { a });
        }
    }
    let mut used = BTreeSet::new();
    let mut routes: Vec<Vec<(f64, f64)>> = Vec::new();
    let mut out = BTreeMap::new();
    for (i, id) in candidates {
        if yielding.contains(&id) {
            continue;
        }
        let job = &script.jobs[i];
        if let Some(c) = job.corridor {
            if used.contains(&c) {
                continue;
            }
        }
        let start = view
            .obs
            .iter()
            .find(|o| o.observer == id)
            .map(|o| o.self_state.pose);
        let mobile = job.verb != Verb::Pick && job.verb != Verb::Check;
        if let (true, Some(start)) = (mobile, start) {
            let route = predicted_route(start, job, view);
            if routes.iter().any(|r| routes_clash(r, &route)) {
                continue;
            }
            routes.push(route);
        }
        if let Some(c) = job.corridor {
            used.insert(c);
        }
        out.insert(id, i);
    }
    out
}

fn clause(job: &Job, who: &RosterEntry) -> String {
    let mut s = format!("{}({}): {}", who.name, who.id, job.verb);
    if let Some(o) = &job.object {
        match object_id(o) {
            Some(id) => s.push_str(&format!(" {o}({id})")),
            None => s.push_str(&format!(" {o}")),
        }
    }
    if let Some(l) = &job.location {
        s.push_str(&format!(" {} {l}", job.verb.preposition()));
    }
    s
}

fn kind_groups(roster: &[RosterEntry]) -> Vec<(GroupId, AgentKind, Vec<AgentId>)> {
    let mut out = Vec::new();
    for (g, kind) in [AgentKind::Agv, AgentKind::Humanoid, AgentKind::Arm].into_iter().enumerate() {
        let members: Vec<AgentId> = roster.iter().filter(|r| r.kind == kind).map(|r| r.id).collect();
        if !members.is_empty() {
            out.push((GroupId(g as u32 + 1), kind, members));
        }
    }
    out
}

fn mounted(obs: &[Observation]) -> Vec<String> {
    let mut names: BTreeSet<String> = BTreeSet::new();
    for o in obs {
        for c in &o.visible_components {
            if c.attached {
                names.insert(c.name.clone());
            }
        }
    }
    names.into_iter().collect()
}

fn proposal_text(ctx: &PlannerContext, assignments: Vec<SubgroupAssignment>, pending: usize) -> String {
    let obs = &ctx.latest_env.state_updates;
    let done = mounted(obs);
    let mut seen: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    for o in obs {
        for c in &o.visible_components {
            seen.insert(c.name.clone(), (c.pose.x, c.pose.y));
        }
    }
    let spatial = if seen.is_empty() {
        "No components in view yet.".to_string()
    } else {
        seen.iter()
            .map(|(n, (x, y))| format!("{n} at ({x:.2}, {y:.2})"))
            .collect::<Vec<_>>()
            .join("; ")
    };
    let subgoals = assignments
        .iter()
        .map(|a| format!("group {}: {}", a.gid, a.subtask))
        .collect::<Vec<_>>()
        .join("\n");
    let p = Proposal {
        situation_analysis: format!(
            "Cycle {}. {} of 5 components mounted{}.",
            ctx.cycle,
            done.len(),
            if done.is_empty() {
                String::new()
            } else {
                format!(" ({})", done.join(", "))
            }
        ),
        spatial_analysis: spatial,
        task_decomposition: format!(
            "{pending} scripted jobs remain: clear the way, bring the trunk and wheels to the docks, mount the trunk, then the wheels."
        ),
        grouping_strategy: "Group by robot kind: AGVs fetch wheels, the humanoid clears the way and carries the trunk, the arm mounts components.".into(),
        subgoal_assignment: subgoals,
        coordination_strategy: "At most one robot travels through each wall gap per cycle; the trunk is mounted before any wheel.".into(),
        risk_assessment: "Paths may meet near the gaps and the docks; a failed skill is repeated next cycle.".into(),
        assignments,
    };
    p.render()
}

pub struct ScriptedBackend {
    script: TaskScript,
    binding: Mutex<BTreeMap<String, AgentId>>,
}

impl ScriptedBackend {
    pub fn new(script: TaskScript) -> Self {
        Self {
            script,
            binding: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn for_task(name: &str) -> Option<Self> {
        TaskScript::for_task(name).map(Self::new)
    }

    pub fn script(&self) -> &TaskScript {
        &self.script
    }

    /// Assign AGV roles to AGVs so the summed distance to each role's first
    /// target is smallest; straight-line trips then never cross.
    fn bind(&self, obs: &[Observation], roster: &[RosterEntry], layout: &Layout) -> BTreeMap<String, AgentId> {
        let roles = self.script.roles();
        let agvs: Vec<(AgentId, Pose2D)> = roster
            .iter()
            .filter(|r| r.kind == AgentKind::Agv)
            .filter_map(|r| obs.iter().find(|o| o.observer == r.id).map(|o| (r.id, o.self_state.pose)))
            .collect();
        let targets: Vec<Option<Pose2D>> = roles
            .iter()
            .map(|r| self.script.first_target(r).and_then(|l| layout.resolve(l)))
            .collect();
        let mut best: Option<(f64, Vec<usize>)> = None;
        let mut perm: Vec<usize> = (0..agvs.len()).collect();
        permutations(&mut perm, 0, &mut |p| {
            let cost: f64 = roles
                .iter()
                .enumerate()
                .filter_map(|(k, _)| {
                    let (_, pose) = agvs.get(*p.get(k)?)?;
                    Some(targets[k].map(|t| pose.distance(&t)).unwrap_or(0.0))
                })
                .sum();
            if best.as_ref().is_none_or(|(c, _)| cost < *c - 1e-12) {
                best = Some((cost, p.to_vec()));
            }
        });
        let mut out = BTreeMap::new();
        if let Some((_, p)) = best {
            for (k, r) in roles.iter().enumerate() {
                if let Some(&i) = p.get(k) {
                    out.insert(r.clone(), agvs[i].0);
                }
            }
        }
        out
    }

    fn plan(&self, req: &BackendRequest, ctx: &PlannerContext) -> String {
        let obs = &ctx.latest_env.state_updates;
        let binding = {
            let mut b = self.binding.lock().unwrap_or_else(|e| e.into_inner());
            if ctx.cycle == 0 || b.is_empty() {
                *b = self.bind(obs, &req.roster, &req.layout);
            }
            b.clone()
        };
        let view = View {
            obs,
            layout: &req.layout,
            roster: &req.roster,
            binding: &binding,
            cycle: ctx.cycle,
        };
        let issued = schedule(&self.script, &view, &ctx.latest_env.conflicts);
        let pending = self
            .script
            .jobs
            .iter()
            .filter(|j| !view.holds(&j.done))
            .count();
        let assignments = kind_groups(&req.roster)
            .into_iter()
            .map(|(gid, _, members)| {
                let clauses: Vec<String> = members
                    .iter()
                    .filter_map(|m| {
                        let job = &self.script.jobs[*issued.get(m)?];
                        let who = req.roster.iter().find(|r| r.id == *m)?;
                        Some(clause(job, who))
                    })
                    .collect();
                SubgroupAssignment {
                    gid,
                    members,
                    subtask: if clauses.is_empty() {
                        "stand by".into()
                    } else {
                        clauses.join("; ")
                    },
                }
            })
            .collect();
        proposal_text(ctx, assignments, pending)
    }
}

fn permutations(p: &mut Vec<usize>, k: usize, visit: &mut dyn FnMut(&[usize])) {
    if k == p.len() {
        visit(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permutations(p, k + 1, visit);
        p.swap(k, i);
    }
}

fn clause_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*([A-Za-z_]\w*)\((\d+)\):\s*([A-Za-z]+)\s*(.*?)\s*$").unwrap())
}

/// Turn `name(id): verb rest` clauses of a subtask into commands.
fn manager_reply(assignment: &SubgroupAssignment) -> String {
    let mut lines = Vec::new();
    for part in assignment.subtask.split(';') {
        if let Some(c) = clause_re().captures(part) {
            let rest = if c[4].is_empty() {
                String::new()
            } else {
                format!(" {}", &c[4])
            };
            lines.push(format!("group {}: agent {}({}) [{}]{rest}", assignment.gid, &c[1], &c[2], &c[3]));
        }
    }
    format!("BEGIN_COMMANDS\n{}\nEND_COMMANDS", lines.join("\n"))
}

fn rule_confidence(req: &BackendRequest) -> f64 {
    let Payload::Capability { command } = &req.payload else {
        return 0.0;
    };
    match crate::command::parse_header(&command.text) {
        Ok(h) => {
            let ok = h.agents.iter().all(|a| {
                req.roster
                    .iter()
                    .find(|r| r.id == a.id)
                    .is_some_and(|r| r.kind.permits(h.verb))
            });
            if ok {
                0.95
            } else {
                0.05
            }
        }
        Err(_) => 0.0,
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, req: &BackendRequest) -> Result<BackendResponse, BackendError> {
        let text = match (&req.payload, req.key.role) {
            (Payload::Planner { ctx, .. }, Role::GeneralPlanner) => self.plan(req, ctx),
            (Payload::Subgroup { assignment, .. }, Role::SubgroupManager) => manager_reply(assignment),
            (_, Role::Executor) => "DECISION: execute".into(),
            (_, Role::CapabilityScorer) => format!("CONFIDENCE: {:.2}", rule_confidence(req)),
            _ => {
                return Err(BackendError::Config(format!(
                    "payload does not match role {}",
                    req.key.role.as_str()
                )))
            }
        };
        Ok(BackendResponse::text(text))
    }

    fn label(&self) -> String {
        format!("scripted:{}", self.script.name)
    }
}

/// Groups robots by kind but never issues a command, so every robot waits.
pub struct IdleBackend;

impl Backend for IdleBackend {
    fn complete(&self, req: &BackendRequest) -> Result<BackendResponse, BackendError> {
        let text = match (&req.payload, req.key.role) {
            (Payload::Planner { ctx, .. }, Role::GeneralPlanner) => {
                let assignments = kind_groups(&req.roster)
                    .into_iter()
                    .map(|(gid, _, members)| SubgroupAssignment {
                        gid,
                        members,
                        subtask: "wait".into(),
                    })
                    .collect();
                proposal_text(ctx, assignments, 0)
            }
            (_, Role::SubgroupManager) => "BEGIN_COMMANDS\nEND_COMMANDS".into(),
            (_, Role::Executor) => "DECISION: execute".into(),
            _ => "CONFIDENCE: 1.0".into(),
        };
        Ok(BackendResponse::text(text))
    }

    fn label(&self) -> String {
        "always-wait".into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmark_object_ids() {
        assert_eq!(object_id("wheel_1"), Some(ObjectId(10)));
        assert_eq!(object_id("wheel_4"), Some(ObjectId(13)));
        assert_eq!(object_id("trunk"), Some(ObjectId(14)));
        assert_eq!(object_id("blocker_2"), Some(ObjectId(21)));
        assert_eq!(object_id("wheel_5"), None);
    }

    #[test]
    fn manager_turns_clauses_into_commands() {
        let a = SubgroupAssignment {
            gid: GroupId(2),
            members: vec![AgentId(2), AgentId(3)],
            subtask: "agv_1(2): push wheel_1(10) to dock_e; agv_2(3): move to (1.5, 5.0)".into(),
        };
        assert_eq!(
            manager_reply(&a),
            "BEGIN_COMMANDS\ngroup 2: agent agv_1(2) [push] wheel_1(10) to dock_e\n\
             group 2: agent agv_2(3) [move] to (1.5, 5.0)\nEND_COMMANDS"
        );
    }

    #[test]
    fn every_task_has_a_script() {
        for t in ["task1", "task2", "task3", "task4"] {
            let s = TaskScript::for_task(t).unwrap();
            assert_eq!(s.roles().len(), 3);
            assert_eq!(s.jobs.iter().filter(|j| j.verb == Verb::Pick).count(), 5);
        }
        assert!(TaskScript::for_task("task5").is_none());
    }
}
