//! Append-only context memory with windowed views per consumer.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::command::{FailureCategory, RawCommand, Stage};
use crate::types::{AgentId, GroupId};
use crate::world::{EnvFeedback, Observation};

pub const TURN_WINDOW: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MemoryError {
    #[error("cycle regression: entry for cycle {got} after cycle {latest}")]
    CycleRegression { latest: u64, got: u64 },
    #[error("world not yet stepped")]
    NotStepped,
    #[error("unknown group {0} in cycle {1}")]
    UnknownGroup(GroupId, u64),
    #[error("failure feedback needs a diagnostic")]
    EmptyDiagnostic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "role", content = "id")]
pub enum Speaker {
    GeneralPlanner,
    SubgroupManager(GroupId),
    Executor(AgentId),
}

impl Speaker {
    pub fn label(&self) -> String {
        match self {
            Speaker::GeneralPlanner => "general planner".into(),
            Speaker::SubgroupManager(g) => format!("group {g} manager"),
            Speaker::Executor(a) => format!("executor {a}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueTurn {
    pub cycle: u64,
    pub speaker: Speaker,
    pub content: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Failure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentFeedback {
    /// Absent when the command could not be attributed to an agent.
    pub agent: Option<AgentId>,
    pub group: Option<GroupId>,
    pub cycle: u64,
    pub outcome: Outcome,
    pub stage: Option<Stage>,
    pub category: Option<FailureCategory>,
    pub command: Option<RawCommand>,
    pub diagnostic: String,
}

impl AgentFeedback {
    pub fn render(&self) -> String {
        let who = match (self.agent, self.group) {
            (Some(a), _) => format!("agent {a}"),
            (None, Some(g)) => format!("group {g}"),
            (None, None) => "unattributed".into(),
        };
        let mut out = format!("cycle {} {who}: ", self.cycle);
        match self.outcome {
            Outcome::Success => out.push_str("succeeded"),
            Outcome::Failure => {
                out.push_str("failed");
                if let Some(c) = self.category {
                    out.push_str(&format!(" [{}]", c.as_str()));
                }
                if let Some(s) = self.stage {
                    out.push_str(&format!(" at {}", s.as_str()));
                }
            }
        }
        if let Some(c) = &self.command {
            out.push_str(&format!(" `{c}`"));
        }
        if !self.diagnostic.is_empty() {
            out.push_str(&format!(": {}", self.diagnostic));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablations {
    pub no_history: bool,
    pub no_feedback: bool,
    pub no_grouping: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Entry {
    Turn(DialogueTurn),
    Agent(AgentFeedback),
    Env(EnvFeedback),
}

impl Entry {
    fn cycle(&self) -> u64 {
        match self {
            Entry::Turn(t) => t.cycle,
            Entry::Agent(f) => f.cycle,
            Entry::Env(e) => e.step,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerContext {
    pub cycle: u64,
    pub recent_turns: Vec<DialogueTurn>,
    pub latest_env: EnvFeedback,
    pub recent_agent_feedback: Vec<AgentFeedback>,
    pub ablations: Ablations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupContext {
    pub cycle: u64,
    pub gid: GroupId,
    pub members: Vec<AgentId>,
    pub observations: Vec<Observation>,
    pub recent_turns: Vec<DialogueTurn>,
    pub recent_agent_feedback: Vec<AgentFeedback>,
    pub ablations: Ablations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextMemory {
    pub turns: Vec<DialogueTurn>,
    pub agent_feedback: Vec<AgentFeedback>,
    /// One entry per completed world step.
    pub env_feedback: Vec<EnvFeedback>,
    /// Observations taken before the first step.
    pub initial: Option<EnvFeedback>,
    pub ablations: Ablations,
    /// Groups assigned in the current cycle.
    pub groups: BTreeMap<GroupId, Vec<AgentId>>,
    pub cycle: u64,
}

impl ContextMemory {
    pub fn new(ablations: Ablations) -> Self {
        Self {
            turns: Vec::new(),
            agent_feedback: Vec::new(),
            env_feedback: Vec::new(),
            initial: None,
            ablations,
            groups: BTreeMap::new(),
            cycle: 0,
        }
    }

    pub fn with_initial(ablations: Ablations, initial: EnvFeedback) -> Self {
        Self {
            initial: Some(initial),
            ..Self::new(ablations)
        }
    }

    pub fn len(&self) -> usize {
        self.turns.len() + self.agent_feedback.len() + self.env_feedback.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn record(&mut self, entry: Entry) -> Result<(), MemoryError> {
        let got = entry.cycle();
        if got < self.cycle {
            return Err(MemoryError::CycleRegression {
                latest: self.cycle,
                got,
            });
        }
        match entry {
            Entry::Turn(t) => self.turns.push(t),
            Entry::Agent(f) => {
                if f.outcome == Outcome::Failure && f.diagnostic.trim().is_empty() {
                    return Err(MemoryError::EmptyDiagnostic);
                }
                self.agent_feedback.push(f)
            }
            Entry::Env(e) => self.env_feedback.push(e),
        }
        self.cycle = got;
        Ok(())
    }

    pub fn record_turn(&mut self, cycle: u64, speaker: Speaker, content: impl Into<String>) -> Result<(), MemoryError> {
        self.record(Entry::Turn(DialogueTurn {
            cycle,
            speaker,
            content: content.into(),
        }))
    }

    /// Replace the current cycle's group table.
    pub fn set_groups(&mut self, cycle: u64, groups: BTreeMap<GroupId, Vec<AgentId>>) -> Result<(), MemoryError> {
        if cycle < self.cycle {
            return Err(MemoryError::CycleRegression {
                latest: self.cycle,
                got: cycle,
            });
        }
        self.cycle = cycle;
        self.groups = groups;
        Ok(())
    }

    pub fn latest_env(&self) -> Option<&EnvFeedback> {
        self.env_feedback.last().or(self.initial.as_ref())
    }

    /// The cycle about to run: one past the last world step.
    pub fn current_cycle(&self) -> u64 {
        let next = match (self.env_feedback.last(), &self.initial) {
            (Some(e), _) => e.step + 1,
            (None, Some(i)) => i.step,
            (None, None) => 0,
        };
        next.max(self.cycle)
    }

    /// Cycle of the most recent proposal, if any.
    fn last_proposal_cycle(&self) -> Option<u64> {
        self.turns
            .iter()
            .rev()
            .find(|t| t.speaker == Speaker::GeneralPlanner)
            .map(|t| t.cycle)
    }

    fn feedback_since_proposal(&self) -> impl Iterator<Item = &AgentFeedback> {
        let since = self.last_proposal_cycle();
        self.agent_feedback
            .iter()
            .filter(move |f| since.is_none_or(|c| f.cycle >= c))
    }

    fn window<'a>(&'a self, keep: impl Fn(&DialogueTurn) -> bool) -> Vec<DialogueTurn> {
        if self.ablations.no_history {
            return Vec::new();
        }
        let no_feedback = self.ablations.no_feedback;
        let relevant: Vec<&'a DialogueTurn> = self
            .turns
            .iter()
            .filter(|t| keep(t) && !(no_feedback && matches!(t.speaker, Speaker::Executor(_))))
            .collect();
        let start = relevant.len().saturating_sub(TURN_WINDOW);
        relevant[start..].iter().map(|t| (*t).clone()).collect()
    }

    pub fn context_for_planner(&self) -> Result<PlannerContext, MemoryError> {
        let env = self.latest_env().ok_or(MemoryError::NotStepped)?;
        let mut latest_env = env.clone();
        let recent_agent_feedback = if self.ablations.no_feedback {
            latest_env.conflicts.clear();
            Vec::new()
        } else {
            self.feedback_since_proposal().cloned().collect()
        };
        Ok(PlannerContext {
            cycle: self.current_cycle(),
            recent_turns: self.window(|_| true),
            latest_env,
            recent_agent_feedback,
            ablations: self.ablations,
        })
    }

    pub fn context_for_subgroup(&self, gid: GroupId, members: &[AgentId]) -> Result<SubgroupContext, MemoryError> {
        if !self.groups.contains_key(&gid) {
            return Err(MemoryError::UnknownGroup(gid, self.cycle));
        }
        let env = self.latest_env().ok_or(MemoryError::NotStepped)?;
        let observations = members
            .iter()
            .filter_map(|m| env.observation(*m).cloned())
            .collect();
        let recent_turns = self.window(|t| match t.speaker {
            Speaker::GeneralPlanner => true,
            Speaker::SubgroupManager(g) => g == gid,
            Speaker::Executor(a) => members.contains(&a),
        });
        let recent_agent_feedback = if self.ablations.no_feedback {
            Vec::new()
        } else {
            self.feedback_since_proposal()
                .filter(|f| f.agent.is_some_and(|a| members.contains(&a)) || (f.agent.is_none() && f.group == Some(gid)))
                .cloned()
                .collect()
        };
        Ok(SubgroupContext {
            cycle: self.current_cycle(),
            gid,
            members: members.to_vec(),
            observations,
            recent_turns,
            recent_agent_feedback,
            ablations: self.ablations,
        })
    }
}
