//! Planner backends: a live chat-completion client, a scripted oracle and a
//! log replayer, all behind [`Backend`].

mod http;
mod prompt;
mod replay;
mod scripted;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::command::{RawCommand, RosterEntry, StructuredCommand};
use crate::memory::{PlannerContext, SubgroupContext};
use crate::orchestrator::SubgroupAssignment;
use crate::types::{AgentId, GroupId};
use crate::world::{AgentState, Layout, Observation};

pub use http::{HttpBackend, HttpConfig};
pub use prompt::{
    render_capabilities, render_feedback, render_history, render_locations, render_observations,
    lint_templates, render_prompt, render_skills, supplied_placeholders, PromptError, PromptTemplate,
    PromptTemplates,
};
pub use replay::ReplayBackend;
pub use scripted::{Actor, Cond, Corridor, IdleBackend, Job, ScriptedBackend, TaskScript};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    GeneralPlanner,
    SubgroupManager,
    Executor,
    CapabilityScorer,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::GeneralPlanner => "general_planner",
            Role::SubgroupManager => "subgroup_manager",
            Role::Executor => "executor",
            Role::CapabilityScorer => "capability_scorer",
        }
    }
}

/// Identifies one backend exchange within an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RequestKey {
    pub cycle: u64,
    pub role: Role,
    pub gid: Option<GroupId>,
    pub agent: Option<AgentId>,
    /// Re-prompt index, or the command index for capability scoring.
    pub attempt: u32,
}

impl fmt::Display for RequestKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "cycle {} {}", self.cycle, self.role.as_str())?;
        if let Some(g) = self.gid {
            write!(f, " group {g}")?;
        }
        if let Some(a) = self.agent {
            write!(f, " agent {a}")?;
        }
        if self.attempt > 0 {
            write!(f, " attempt {}", self.attempt)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskBrief {
    pub name: String,
    pub instruction: String,
}

/// Structured view of what the prompt was rendered from. Text-only backends
/// ignore it.
#[derive(Debug, Clone)]
pub enum Payload {
    Planner {
        ctx: Box<PlannerContext>,
        task: TaskBrief,
    },
    Subgroup {
        assignment: SubgroupAssignment,
        ctx: Box<SubgroupContext>,
    },
    Executor {
        command: StructuredCommand,
        agent: Box<AgentState>,
        observation: Box<Observation>,
    },
    Capability {
        command: RawCommand,
    },
}

#[derive(Debug, Clone)]
pub struct BackendRequest {
    pub key: RequestKey,
    pub system: String,
    pub rendered_prompt: String,
    /// Expected response shape, also embedded in the prompt.
    pub schema: &'static str,
    pub roster: Vec<RosterEntry>,
    pub layout: Layout,
    pub payload: Payload,
}

impl BackendRequest {
    pub fn prompt_hash(&self) -> String {
        let text = format!("{}\u{0}{}", self.system, self.rendered_prompt);
        format!("{:016x}", crate::rng::label_key(&text))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendResponse {
    pub text: String,
    pub usage: Option<Usage>,
    pub latency: Option<f64>,
}

impl BackendResponse {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            usage: None,
            latency: None,
        }
    }
}

/// One request/response pair as stored in the episode log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub key: RequestKey,
    pub prompt_hash: String,
    pub response: BackendResponse,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("backend transport failure after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend rejected the request with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("backend configuration error: {0}")]
    Config(String),
    #[error("replay diverged at {key}: {reason}")]
    Divergence { key: RequestKey, reason: String },
}

pub const PROPOSAL_SCHEMA: &str = "After the seven sections, give the grouping as JSON between the lines BEGIN_JSON and END_JSON:\n\
BEGIN_JSON\n{\"assignments\": [{\"gid\": 1, \"members\": [2, 3], \"subtask\": \"...\"}]}\nEND_JSON\n\
Members are robot ids. No robot may appear in two groups; robots left out wait this cycle.";

pub const COMMANDS_SCHEMA: &str =
    "Reply with the commands between the lines BEGIN_COMMANDS and END_COMMANDS, one per line.";

pub const DECISION_SCHEMA: &str =
    "Reply with `DECISION: execute` or `DECISION: idle`, followed by a line `REASON: ...` when idle.";

pub const CONFIDENCE_SCHEMA: &str = "Reply with a single line `CONFIDENCE: <number between 0 and 1>`.";

pub trait Backend: Send + Sync {
    fn complete(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError>;

    fn label(&self) -> String;
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn complete(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        (**self).complete(request)
    }

    fn label(&self) -> String {
        (**self).label()
    }
}

impl<B: Backend + ?Sized> Backend for &B {
    fn complete(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        (**self).complete(request)
    }

    fn label(&self) -> String {
        (**self).label()
    }
}

/// Text between the first `begin` marker and the next `end` marker.
pub fn fenced<'a>(text: &'a str, begin: &str, end: &str) -> Option<&'a str> {
    let start = text.find(begin)? + begin.len();
    let stop = text[start..].find(end).map(|i| start + i)?;
    Some(&text[start..stop])
}
