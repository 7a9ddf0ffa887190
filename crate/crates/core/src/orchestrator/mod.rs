//! The grouping, planning, execution and feedback cycle.
//!
//! Each cycle the general planner proposes a partition of the robots into
//! subgroups, every subgroup manager issues commands for its members, the
//! commands are verified and checked by the executing robots, and the
//! accepted skills run in one synchronous world step.

mod logs;
mod proposal;

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::backends::{
    fenced, render_capabilities, render_feedback, render_history, render_locations,
    render_observations, render_prompt, render_skills, Backend, BackendError, BackendRequest,
    Exchange, Payload, PromptError, PromptTemplates, RequestKey, Role, TaskBrief, COMMANDS_SCHEMA,
    CONFIDENCE_SCHEMA, DECISION_SCHEMA, PROPOSAL_SCHEMA,
};
use crate::command::{
    parse_header, reconsider_deferred, render, verify, Deferred, FailureCategory, RawCommand,
    RosterEntry, Stage, StructuredCommand, VerificationResult, VerifyContext, COMMAND_GRAMMAR,
    DEFAULT_TAU_C,
};
use crate::memory::{
    Ablations, AgentFeedback, ContextMemory, Entry, MemoryError, Outcome, PlannerContext, Speaker,
    SubgroupContext,
};
use crate::skills::{FailureReason, SkillConfig, SkillInvocation, SkillOutcome};
use crate::types::{AgentId, GroupId, Verb};
use crate::world::{
    check_assembly_complete, observe, step, ActionMap, AgentState, EnvFeedback, FailureLayer,
    Layout, Observation, WorldState,
};

pub use logs::{parallel_execution_lines, scene_dynamics_lines};
pub use proposal::{parse_proposal, Proposal, ProposalError, SubgroupAssignment, SECTION_TITLES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapabilityMode {
    Rule,
    Backend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrchestratorConfig {
    pub tau_c: f64,
    pub capability_mode: CapabilityMode,
    pub max_reprompts: u32,
    /// Run subgroup managers on separate threads.
    pub parallel: bool,
    /// Ask the backend for a decision after the executor's own checks pass.
    pub executor_backend: bool,
    pub skills: SkillConfig,
    pub ablations: Ablations,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        Self {
            tau_c: DEFAULT_TAU_C,
            capability_mode: CapabilityMode::Rule,
            max_reprompts: 2,
            parallel: true,
            executor_backend: true,
            skills: SkillConfig::default(),
            ablations: Ablations::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum OrchestratorError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    World(#[from] crate::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Execute,
    Idle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutorDecision {
    pub agent: AgentId,
    pub command: StructuredCommand,
    pub decision: Decision,
    pub invocation: Option<SkillInvocation>,
    pub feedback: AgentFeedback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationSummary {
    pub gid: GroupId,
    pub command: RawCommand,
    pub accepted: bool,
    pub deferred: bool,
    /// Came from the deferred queue rather than this cycle's managers.
    pub reconsidered: bool,
    pub stage: Option<Stage>,
    pub category: Option<FailureCategory>,
    pub diagnostic: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: u64,
    pub proposal: Proposal,
    /// Why the single-group fallback replaced the planner's proposal.
    pub fallback: Option<String>,
    pub subgroup_commands: BTreeMap<GroupId, Vec<RawCommand>>,
    pub subgroup_errors: BTreeMap<GroupId, String>,
    pub verification: Vec<VerificationSummary>,
    pub decisions: Vec<ExecutorDecision>,
    pub outcomes: BTreeMap<AgentId, SkillOutcome>,
    pub env_feedback: EnvFeedback,
}

/// Read-only inputs shared by every request of an episode.
pub struct Planner<'a> {
    pub templates: &'a PromptTemplates,
    pub roster: &'a [RosterEntry],
    pub layout: &'a Layout,
    pub task: &'a TaskBrief,
    pub config: &'a OrchestratorConfig,
}

const SYSTEM_PROMPT: &str = "You coordinate a team of heterogeneous robots assembling a four-wheeled vehicle in a planar workspace. Follow the requested output format exactly.";

#[derive(Debug, Clone)]
pub struct Grouping {
    pub proposal: Proposal,
    pub text: String,
    pub fallback: Option<String>,
    pub exchanges: Vec<Exchange>,
}

#[derive(Debug, Clone, Default)]
pub struct SubgroupPlan {
    pub commands: Vec<RawCommand>,
    pub text: String,
    pub error: Option<String>,
    pub exchanges: Vec<Exchange>,
}

impl Planner<'_> {
    fn agent_ids(&self) -> Vec<AgentId> {
        self.roster.iter().map(|r| r.id).collect()
    }

    fn token(&self, id: AgentId) -> String {
        self.roster
            .iter()
            .find(|r| r.id == id)
            .map(|r| format!("{}({})", r.name, r.id))
            .unwrap_or_else(|| format!("agent({id})"))
    }

    fn request(
        &self,
        key: RequestKey,
        mut vars: BTreeMap<&'static str, String>,
        schema: &'static str,
        payload: Payload,
    ) -> Result<BackendRequest, PromptError> {
        vars.insert("cycle", key.cycle.to_string());
        vars.insert("schema", schema.to_string());
        vars.insert("locations", render_locations(self.layout));
        vars.entry("capabilities").or_insert_with(|| render_capabilities(self.roster));
        vars.entry("skills").or_insert_with(|| render_skills(&Verb::ALL));
        let rendered_prompt = render_prompt(self.templates.get(key.role), &vars)?;
        Ok(BackendRequest {
            key,
            system: SYSTEM_PROMPT.to_string(),
            rendered_prompt,
            schema,
            roster: self.roster.to_vec(),
            layout: self.layout.clone(),
            payload,
        })
    }
}

fn exchange(
    backend: &dyn Backend,
    request: &BackendRequest,
) -> Result<(String, Exchange), BackendError> {
    let response = backend.complete(request)?;
    let text = response.text.clone();
    Ok((
        text,
        Exchange {
            key: request.key,
            prompt_hash: request.prompt_hash(),
            response,
        },
    ))
}

/// Ask the general planner for a proposal, re-prompting on malformed output
/// and falling back to one all-robot group.
pub fn propose_grouping(
    planner: &Planner<'_>,
    ctx: &PlannerContext,
    backend: &dyn Backend,
) -> Result<Grouping, OrchestratorError> {
    let no_grouping = ctx.ablations.no_grouping;
    let mut vars = BTreeMap::new();
    vars.insert("task", planner.task.instruction.clone());
    vars.insert("observations", render_observations(&ctx.latest_env.state_updates));
    vars.insert("history", render_history(&ctx.recent_turns));
    vars.insert(
        "feedback",
        render_feedback(&ctx.recent_agent_feedback, &ctx.latest_env.conflicts),
    );
    vars.insert(
        "grouping",
        if no_grouping {
            "Grouping is disabled for this run: put every robot in group 1.".to_string()
        } else {
            "Group the robots so that groups can work in parallel without interfering.".to_string()
        },
    );
    let base = planner.request(
        RequestKey {
            cycle: ctx.cycle,
            role: Role::GeneralPlanner,
            gid: None,
            agent: None,
            attempt: 0,
        },
        vars,
        PROPOSAL_SCHEMA,
        Payload::Planner {
            ctx: Box::new(ctx.clone()),
            task: planner.task.clone(),
        },
    )?;
    let ids = planner.agent_ids();
    let mut exchanges = Vec::new();
    let mut last_error = String::new();
    let mut last_text = String::new();
    for attempt in 0..=planner.config.max_reprompts {
        let mut req = base.clone();
        req.key.attempt = attempt;
        if attempt > 0 {
            req.rendered_prompt.push_str(&format!(
                "\n\nYour previous reply could not be used: {last_error}. Reply again, following the format exactly."
            ));
        }
        let (text, ex) = exchange(backend, &req)?;
        exchanges.push(ex);
        match parse_proposal(&text, &ids) {
            Ok(mut proposal) => {
                if no_grouping {
                    let subtask = proposal
                        .assignments
                        .iter()
                        .map(|a| a.subtask.as_str())
                        .filter(|s| !s.trim().is_empty())
                        .collect::<Vec<_>>()
                        .join("; ");
                    let subtask = if subtask.is_empty() {
                        planner.task.instruction.clone()
                    } else {
                        subtask
                    };
                    proposal.assignments = vec![SubgroupAssignment {
                        gid: GroupId(1),
                        members: ids.clone(),
                        subtask,
                    }];
                }
                return Ok(Grouping {
                    proposal,
                    text,
                    fallback: None,
                    exchanges,
                });
            }
            Err(e) => {
                tracing::debug!(cycle = ctx.cycle, attempt, "malformed proposal: {e}");
                last_error = e.to_string();
                last_text = text;
            }
        }
    }
    let note = format!("planner output unusable ({last_error})");
    Ok(Grouping {
        proposal: Proposal::single_group(&ids, &planner.task.instruction, &note),
        text: last_text,
        fallback: Some(last_error),
        exchanges,
    })
}

fn strip_bullet(line: &str) -> &str {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"^\s*(?:[-*]\s+|\d+[.)]\s+)?`?(.*?)`?\s*$").unwrap());
    re.captures(line)
        .and_then(|c| c.get(1))
        .map(|m| m.as_str())
        .unwrap_or(line)
}

/// Command lines from a manager reply: the fenced block when present,
/// otherwise every line with a bracketed verb.
pub fn extract_commands(text: &str) -> Vec<RawCommand> {
    let (body, fenced_block) = match fenced(text, "BEGIN_COMMANDS", "END_COMMANDS") {
        Some(b) => (b, true),
        None => (text, false),
    };
    body.lines()
        .map(strip_bullet)
        .filter(|l| !l.is_empty() && (fenced_block || l.contains('[')))
        .map(RawCommand::new)
        .collect()
}

/// One manager call producing at most one command per member.
pub fn subgroup_plan(
    planner: &Planner<'_>,
    assignment: &SubgroupAssignment,
    ctx: &SubgroupContext,
    backend: &dyn Backend,
) -> Result<SubgroupPlan, PromptError> {
    let mut vars = BTreeMap::new();
    vars.insert("gid", assignment.gid.to_string());
    vars.insert(
        "members",
        assignment
            .members
            .iter()
            .map(|m| planner.token(*m))
            .collect::<Vec<_>>()
            .join(", "),
    );
    vars.insert("subtask", assignment.subtask.clone());
    vars.insert("observations", render_observations(&ctx.observations));
    vars.insert("history", render_history(&ctx.recent_turns));
    vars.insert("feedback", render_feedback(&ctx.recent_agent_feedback, &[]));
    vars.insert("grammar", COMMAND_GRAMMAR.to_string());
    let members: Vec<RosterEntry> = planner
        .roster
        .iter()
        .filter(|r| assignment.members.contains(&r.id))
        .cloned()
        .collect();
    vars.insert("capabilities", render_capabilities(&members));
    let req = planner.request(
        RequestKey {
            cycle: ctx.cycle,
            role: Role::SubgroupManager,
            gid: Some(assignment.gid),
            agent: None,
            attempt: 0,
        },
        vars,
        COMMANDS_SCHEMA,
        Payload::Subgroup {
            assignment: assignment.clone(),
            ctx: Box::new(ctx.clone()),
        },
    )?;
    let mut plan = SubgroupPlan::default();
    match exchange(backend, &req) {
        Ok((text, ex)) => {
            plan.exchanges.push(ex);
            let mut commands = extract_commands(&text);
            if commands.len() > assignment.members.len() {
                plan.error = Some(format!(
                    "{} commands for {} members; extra commands dropped",
                    commands.len(),
                    assignment.members.len()
                ));
                commands.truncate(assignment.members.len());
            }
            plan.commands = commands;
            plan.text = text;
        }
        Err(e) => plan.error = Some(format!("manager unavailable, members wait: {e}")),
    }
    Ok(plan)
}

fn idle(
    cmd: &StructuredCommand,
    inv: &SkillInvocation,
    gid: GroupId,
    cycle: u64,
    category: FailureCategory,
    diagnostic: String,
) -> ExecutorDecision {
    ExecutorDecision {
        agent: inv.agent,
        command: cmd.clone(),
        decision: Decision::Idle,
        invocation: None,
        feedback: AgentFeedback {
            agent: Some(inv.agent),
            group: Some(gid),
            cycle,
            outcome: Outcome::Failure,
            stage: Some(Stage::Execution),
            category: Some(category),
            command: Some(cmd.raw()),
            diagnostic,
        },
    }
}

/// The executing robot's own feasibility check, optionally confirmed by the
/// backend.
#[allow(clippy::too_many_arguments)]
pub fn executor_decide(
    planner: &Planner<'_>,
    cmd: &StructuredCommand,
    inv: &SkillInvocation,
    gid: GroupId,
    agent: &AgentState,
    obs: &Observation,
    backend: &dyn Backend,
    cycle: u64,
) -> Result<(ExecutorDecision, Vec<Exchange>), PromptError> {
    let token = agent.token();
    if !agent.kind.permits(inv.verb) {
        let d = format!("{token} is a {} and cannot {}", agent.kind.label(), inv.verb);
        return Ok((idle(cmd, inv, gid, cycle, FailureCategory::IncorrectAgentSelection, d), Vec::new()));
    }
    let target = inv.object.and_then(|o| obs.component(o));
    if inv.verb == Verb::Pick && agent.holding.is_some() {
        let d = format!("{token} is already holding an object");
        return Ok((idle(cmd, inv, gid, cycle, FailureCategory::StateInconsistency, d), Vec::new()));
    }
    if matches!(inv.verb, Verb::Pick | Verb::Check) {
        let reach = agent.reach.unwrap_or(planner.layout.arm_reach);
        match target {
            None => {
                let d = format!("{token} cannot see object {}", inv.object.map(|o| o.to_string()).unwrap_or_default());
                return Ok((idle(cmd, inv, gid, cycle, FailureCategory::StateInconsistency, d), Vec::new()));
            }
            Some(c) if agent.pose.distance(&c.pose) > reach => {
                let d = format!("{} is out of reach of {token}", c.name);
                return Ok((idle(cmd, inv, gid, cycle, FailureCategory::StateInconsistency, d), Vec::new()));
            }
            _ => {}
        }
    }
    if matches!(inv.verb, Verb::Pick | Verb::Push | Verb::Carry) {
        if let Some(c) = target.filter(|c| c.attached) {
            let d = format!("{} is already mounted", c.name);
            return Ok((idle(cmd, inv, gid, cycle, FailureCategory::StateInconsistency, d), Vec::new()));
        }
    }
    let mut exchanges = Vec::new();
    if planner.config.executor_backend {
        let mut vars = BTreeMap::new();
        vars.insert("agent", token.clone());
        vars.insert("skills", render_skills(agent.kind.skills()));
        vars.insert("command", render(cmd));
        vars.insert("observations", render_observations(std::slice::from_ref(obs)));
        let req = planner.request(
            RequestKey {
                cycle,
                role: Role::Executor,
                gid: Some(gid),
                agent: Some(agent.id),
                attempt: 0,
            },
            vars,
            DECISION_SCHEMA,
            Payload::Executor {
                command: cmd.clone(),
                agent: Box::new(agent.clone()),
                observation: Box::new(obs.clone()),
            },
        )?;
        match exchange(backend, &req) {
            Ok((text, ex)) => {
                exchanges.push(ex);
                if let Some(reason) = parse_idle(&text) {
                    return Ok((
                        idle(cmd, inv, gid, cycle, FailureCategory::StateInconsistency, reason),
                        exchanges,
                    ));
                }
            }
            Err(e) => {
                let d = format!("executor backend unavailable: {e}");
                return Ok((idle(cmd, inv, gid, cycle, FailureCategory::StateInconsistency, d), exchanges));
            }
        }
    }
    Ok((
        ExecutorDecision {
            agent: inv.agent,
            command: cmd.clone(),
            decision: Decision::Execute,
            invocation: Some(inv.clone()),
            feedback: AgentFeedback {
                agent: Some(inv.agent),
                group: Some(gid),
                cycle,
                outcome: Outcome::Success,
                stage: None,
                category: None,
                command: Some(cmd.raw()),
                diagnostic: String::new(),
            },
        },
        exchanges,
    ))
}

/// `Some(reason)` when the reply declines the command.
fn parse_idle(text: &str) -> Option<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"(?i)DECISION\s*:\s*\**\s*(execute|idle)").unwrap());
    let decision = re.captures(text).map(|c| c[1].to_ascii_lowercase());
    if decision.as_deref() != Some("idle") {
        return None;
    }
    let reason = text
        .lines()
        .find_map(|l| {
            let l = l.trim();
            l.get(..7)
                .filter(|p| p.eq_ignore_ascii_case("reason:"))
                .map(|_| l[7..].trim().to_string())
        })
        .filter(|r| !r.is_empty())
        .unwrap_or_else(|| "executor declined the command".to_string());
    Some(reason)
}

fn parse_confidence(text: &str) -> Option<f64> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"(?i)CONFIDENCE\s*:\s*([0-9]*\.?[0-9]+)").unwrap());
    re.captures(text)
        .and_then(|c| c[1].parse::<f64>().ok())
        .map(|v| v.clamp(0.0, 1.0))
}

fn category_of(outcome: &SkillOutcome) -> FailureCategory {
    if outcome.diagnostic.starts_with("incorrect agent selection") {
        FailureCategory::IncorrectAgentSelection
    } else {
        FailureCategory::StateInconsistency
    }
}

/// Agent and group a verification failure is charged to.
fn attribution(raw: &RawCommand, gid: GroupId) -> (Option<AgentId>, Option<GroupId>) {
    let agent = parse_header(&raw.text)
        .ok()
        .and_then(|h| h.agents.first().map(|a| a.id));
    (agent, Some(gid))
}

pub struct Episode {
    pub task: TaskBrief,
    pub world: WorldState,
    pub memory: ContextMemory,
    pub deferred: Vec<Deferred>,
    pub failures: FailureLayer,
    pub records: Vec<CycleRecord>,
    pub exchanges: Vec<Exchange>,
    pub config: OrchestratorConfig,
    pub templates: PromptTemplates,
    pub roster: Vec<RosterEntry>,
}

impl Episode {
    pub fn new(
        world: WorldState,
        task: TaskBrief,
        config: OrchestratorConfig,
        templates: PromptTemplates,
        failures: FailureLayer,
    ) -> Result<Self, OrchestratorError> {
        let state_updates = world
            .agents
            .iter()
            .map(|a| observe(&world, a.id))
            .collect::<Result<Vec<_>, _>>()?;
        let initial = EnvFeedback {
            step: world.step,
            state_updates,
            conflicts: Vec::new(),
        };
        let roster = world
            .agents
            .iter()
            .map(|a| RosterEntry {
                id: a.id,
                name: a.name.clone(),
                kind: a.kind,
            })
            .collect();
        Ok(Self {
            task,
            memory: ContextMemory::with_initial(config.ablations, initial),
            world,
            deferred: Vec::new(),
            failures,
            records: Vec::new(),
            exchanges: Vec::new(),
            config,
            templates,
            roster,
        })
    }

    pub fn complete(&self) -> bool {
        check_assembly_complete(&self.world)
    }

    /// Loop cycles until the assembly is complete or `budget` steps are used.
    pub fn run(&mut self, budget: u64, backend: &dyn Backend) -> Result<bool, OrchestratorError> {
        while !self.complete() && self.world.step < budget {
            self.run_cycle(backend)?;
        }
        Ok(self.complete())
    }

    /// One grouping, planning, execution and feedback round; exactly one
    /// world step.
    pub fn run_cycle(&mut self, backend: &dyn Backend) -> Result<&CycleRecord, OrchestratorError> {
        let cycle = self.world.step;
        let planner = Planner {
            templates: &self.templates,
            roster: &self.roster,
            layout: &self.world.layout,
            task: &self.task,
            config: &self.config,
        };

        let planner_ctx = self.memory.context_for_planner()?;
        let grouping = propose_grouping(&planner, &planner_ctx, backend)?;
        self.exchanges.extend(grouping.exchanges.iter().cloned());
        let turn = if grouping.text.is_empty() {
            grouping.proposal.render()
        } else {
            grouping.text.clone()
        };
        self.memory.record_turn(cycle, Speaker::GeneralPlanner, turn)?;
        let groups: BTreeMap<GroupId, Vec<AgentId>> = grouping
            .proposal
            .assignments
            .iter()
            .map(|a| (a.gid, a.members.clone()))
            .collect();
        self.memory.set_groups(cycle, groups)?;

        let contexts = grouping
            .proposal
            .assignments
            .iter()
            .map(|a| Ok((a, self.memory.context_for_subgroup(a.gid, &a.members)?)))
            .collect::<Result<Vec<_>, MemoryError>>()?;
        let plans: Vec<Result<SubgroupPlan, PromptError>> = if self.config.parallel && contexts.len() > 1 {
            std::thread::scope(|s| {
                let handles: Vec<_> = contexts
                    .iter()
                    .map(|(a, ctx)| {
                        let planner = &planner;
                        s.spawn(move || subgroup_plan(planner, a, ctx, backend))
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("subgroup manager thread panicked"))
                    .collect()
            })
        } else {
            contexts
                .iter()
                .map(|(a, ctx)| subgroup_plan(&planner, a, ctx, backend))
                .collect()
        };
        let mut subgroup_commands = BTreeMap::new();
        let mut subgroup_errors = BTreeMap::new();
        let mut planned = Vec::new();
        for ((a, _), plan) in contexts.iter().zip(plans) {
            let plan = plan?;
            self.exchanges.extend(plan.exchanges.iter().cloned());
            let content = if plan.commands.is_empty() {
                "(no commands)".to_string()
            } else {
                plan.commands.iter().map(|c| c.text.clone()).collect::<Vec<_>>().join("\n")
            };
            self.memory.record_turn(cycle, Speaker::SubgroupManager(a.gid), content)?;
            if let Some(e) = &plan.error {
                self.memory.record(Entry::Agent(AgentFeedback {
                    agent: None,
                    group: Some(a.gid),
                    cycle,
                    outcome: Outcome::Failure,
                    stage: None,
                    category: None,
                    command: None,
                    diagnostic: e.clone(),
                }))?;
                subgroup_errors.insert(a.gid, e.clone());
            }
            subgroup_commands.insert(a.gid, plan.commands.clone());
            planned.push(((*a).clone(), plan.commands));
        }

        // Verification: deferred commands first, then this cycle's commands
        // in group order.
        let latest = self
            .memory
            .latest_env()
            .cloned()
            .ok_or(MemoryError::NotStepped)?;
        let all_ids: Vec<AgentId> = self.roster.iter().map(|r| r.id).collect();
        let base = VerifyContext {
            gid: GroupId(0),
            members: &all_ids,
            roster: &self.roster,
            observations: &latest.state_updates,
            layout: &self.world.layout,
            tau_c: self.config.tau_c,
            confidence: None,
            pickup_radius: self.config.skills.humanoid.pickup_radius,
        };
        let mut batch: Vec<SkillInvocation> = Vec::new();
        let mut summaries = Vec::new();
        let mut accepted: Vec<(GroupId, VerificationResult)> = Vec::new();
        let mut feedback: Vec<AgentFeedback> = Vec::new();
        let mut new_exchanges = Vec::new();
        let backend_scoring = self.config.capability_mode == CapabilityMode::Backend;
        let mut score_index = 0u32;
        let mut score = |raw: &RawCommand, gid: GroupId, exchanges: &mut Vec<Exchange>| -> Option<f64> {
            if !backend_scoring {
                return None;
            }
            let header = parse_header(&raw.text).ok()?;
            let named: Vec<RosterEntry> = planner
                .roster
                .iter()
                .filter(|r| header.agents.iter().any(|a| a.id == r.id))
                .cloned()
                .collect();
            let mut vars = BTreeMap::new();
            vars.insert("command", raw.text.clone());
            vars.insert("capabilities", render_capabilities(&named));
            let req = planner
                .request(
                    RequestKey {
                        cycle,
                        role: Role::CapabilityScorer,
                        gid: Some(gid),
                        agent: None,
                        attempt: score_index,
                    },
                    vars,
                    CONFIDENCE_SCHEMA,
                    Payload::Capability { command: raw.clone() },
                )
                .ok()?;
            score_index += 1;
            match exchange(backend, &req) {
                Ok((text, ex)) => {
                    exchanges.push(ex);
                    parse_confidence(&text)
                }
                Err(e) => {
                    tracing::warn!("capability scoring failed, using rule score: {e}");
                    None
                }
            }
        };

        let pending = std::mem::take(&mut self.deferred);
        let mut scored = Vec::new();
        let reconsidered = reconsider_deferred(pending, &base, &mut batch, &mut |d: &Deferred| {
            score(&d.raw, d.group, &mut scored)
        });
        new_exchanges.append(&mut scored);
        for r in reconsidered.released {
            let gid = parse_header(&r.raw.text).map(|h| h.group).unwrap_or(GroupId(0));
            summaries.push(VerificationSummary {
                gid,
                command: r.raw.clone(),
                accepted: true,
                deferred: false,
                reconsidered: true,
                stage: None,
                category: None,
                diagnostic: None,
            });
            accepted.push((gid, r));
        }
        for d in &reconsidered.pending {
            summaries.push(VerificationSummary {
                gid: d.group,
                command: d.raw.clone(),
                accepted: false,
                deferred: true,
                reconsidered: true,
                stage: d.last.feedback.as_ref().map(|f| f.stage),
                category: d.last.category(),
                diagnostic: d.last.rejection_reason.clone(),
            });
        }
        for fb in &reconsidered.dropped {
            let gid = parse_header(&fb.command.text).map(|h| h.group).unwrap_or(GroupId(0));
            let (agent, group) = attribution(&fb.command, gid);
            summaries.push(VerificationSummary {
                gid,
                command: fb.command.clone(),
                accepted: false,
                deferred: false,
                reconsidered: true,
                stage: Some(fb.stage),
                category: Some(fb.category),
                diagnostic: Some(fb.diagnostic.clone()),
            });
            feedback.push(AgentFeedback {
                agent,
                group,
                cycle,
                outcome: Outcome::Failure,
                stage: Some(fb.stage),
                category: Some(fb.category),
                command: Some(fb.command.clone()),
                diagnostic: fb.diagnostic.clone(),
            });
        }
        let mut still_deferred = reconsidered.pending;

        for (assignment, commands) in &planned {
            let observations: Vec<Observation> = latest
                .state_updates
                .iter()
                .filter(|o| assignment.members.contains(&o.observer))
                .cloned()
                .collect();
            for raw in commands {
                let mut scored = Vec::new();
                let confidence = score(raw, assignment.gid, &mut scored);
                new_exchanges.append(&mut scored);
                let ctx = VerifyContext {
                    gid: assignment.gid,
                    members: &assignment.members,
                    observations: &observations,
                    confidence,
                    ..base
                };
                let result = verify(raw, &ctx, &batch);
                summaries.push(VerificationSummary {
                    gid: assignment.gid,
                    command: raw.clone(),
                    accepted: result.accepted,
                    deferred: result.deferred,
                    reconsidered: false,
                    stage: result.feedback.as_ref().map(|f| f.stage),
                    category: result.category(),
                    diagnostic: result.rejection_reason.clone(),
                });
                if result.accepted {
                    batch.extend_from_slice(result.invocations());
                    accepted.push((assignment.gid, result));
                    continue;
                }
                if let Some(fb) = &result.feedback {
                    let (agent, group) = attribution(raw, assignment.gid);
                    feedback.push(AgentFeedback {
                        agent,
                        group,
                        cycle,
                        outcome: Outcome::Failure,
                        stage: Some(fb.stage),
                        category: Some(fb.category),
                        command: Some(raw.clone()),
                        diagnostic: fb.diagnostic.clone(),
                    });
                }
                if result.deferred {
                    still_deferred.push(Deferred::new(
                        result,
                        assignment.gid,
                        assignment.members.clone(),
                        cycle,
                    ));
                }
            }
        }
        self.exchanges.append(&mut new_exchanges);
        self.deferred = still_deferred;
        for f in feedback {
            self.memory.record(Entry::Agent(f))?;
        }

        // Executors.
        let mut decisions = Vec::new();
        let mut actions = ActionMap::new();
        for (gid, result) in &accepted {
            let Some(cmd) = result.command() else { continue };
            for inv in result.invocations() {
                let Some(agent) = self.world.agent(inv.agent) else { continue };
                let Some(obs) = latest.observation(inv.agent) else { continue };
                let (decision, ex) =
                    executor_decide(&planner, cmd, inv, *gid, agent, obs, backend, cycle)?;
                self.exchanges.extend(ex);
                let report = match decision.decision {
                    Decision::Execute => format!("execute `{}`", render(cmd)),
                    Decision::Idle => format!("idle: {}", decision.feedback.diagnostic),
                };
                self.memory.record_turn(cycle, Speaker::Executor(inv.agent), report)?;
                if let Some(i) = &decision.invocation {
                    actions.insert(i.agent, i.clone());
                } else {
                    self.memory.record(Entry::Agent(decision.feedback.clone()))?;
                }
                decisions.push(decision);
            }
        }

        let out = step(&self.world, &actions, &self.config.skills, &mut self.failures);
        for d in &decisions {
            let Some(inv) = &d.invocation else { continue };
            let Some(o) = out.outcomes.get(&inv.agent) else { continue };
            let diagnostic = if o.success || !o.diagnostic.trim().is_empty() {
                o.diagnostic.clone()
            } else {
                o.failure_reason
                    .unwrap_or(FailureReason::Infeasible)
                    .as_str()
                    .to_string()
            };
            self.memory.record(Entry::Agent(AgentFeedback {
                agent: Some(inv.agent),
                group: d.feedback.group,
                cycle,
                outcome: if o.success { Outcome::Success } else { Outcome::Failure },
                stage: (!o.success).then_some(Stage::Execution),
                category: (!o.success).then(|| category_of(o)),
                command: d.feedback.command.clone(),
                diagnostic,
            }))?;
        }
        self.memory.record(Entry::Env(out.feedback.clone()))?;
        self.world = out.world;
        self.records.push(CycleRecord {
            cycle,
            proposal: grouping.proposal,
            fallback: grouping.fallback,
            subgroup_commands,
            subgroup_errors,
            verification: summaries,
            decisions,
            outcomes: out.outcomes,
            env_feedback: out.feedback,
        });
        Ok(self.records.last().unwrap())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extracts_fenced_and_loose_commands() {
        let text = "Plan:\nBEGIN_COMMANDS\n- group 1: agent agv_1(2) [move] to dock_e\n\n`group 1: agent agv_2(3) [wait]`\nEND_COMMANDS\nthanks";
        let c = extract_commands(text);
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].text, "group 1: agent agv_1(2) [move] to dock_e");
        assert_eq!(c[1].text, "group 1: agent agv_2(3) [wait]");
        let loose = extract_commands("Sure.\ngroup 2: agent humanoid(5) [walk] to gap_north\nDone.");
        assert_eq!(loose.len(), 1);
    }

    #[test]
    fn idle_and_confidence_replies() {
        assert_eq!(parse_idle("DECISION: execute"), None);
        assert_eq!(
            parse_idle("DECISION: idle\nREASON: wheel is too far").as_deref(),
            Some("wheel is too far")
        );
        assert_eq!(parse_confidence("CONFIDENCE: 0.35"), Some(0.35));
        assert_eq!(parse_confidence("CONFIDENCE: 7"), Some(1.0));
        assert_eq!(parse_confidence("no idea"), None);
    }
}
