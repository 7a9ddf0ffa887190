//! Command schema, parsing, and the staged verification pipeline.

mod deferred;
mod grammar;
mod verify;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::types::{AgentId, GroupId, Location, ObjectId, Verb};

pub use deferred::{reconsider_deferred, Deferred, Reconsidered, RETRY_BUDGET};
pub use grammar::{parse_body, parse_command, parse_header, render, CommandHeader, ParseError, COMMAND_GRAMMAR};
pub use verify::{
    judge, select_action, verify, verify_capability, CapabilityFailure, CapabilityResult,
    JudgeVerdict, ParseResult, RosterEntry, SelectionResult, StageResults, VerificationResult,
    VerifyContext, DEFAULT_TAU_C,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RawCommand {
    pub text: String,
}

impl RawCommand {
    pub fn new(text: impl Into<String>) -> Self {
        Self { text: text.into() }
    }
}

impl fmt::Display for RawCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentRef {
    pub name: String,
    pub id: AgentId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectRef {
    pub name: String,
    pub id: ObjectId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredCommand {
    pub group: GroupId,
    pub agents: Vec<AgentRef>,
    pub verb: Verb,
    pub object: Option<ObjectRef>,
    pub location: Option<Location>,
}

impl StructuredCommand {
    pub fn raw(&self) -> RawCommand {
        RawCommand::new(render(self))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Capability,
    Selection,
    Parsing,
    Judge,
    Execution,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Capability => "capability",
            Stage::Selection => "selection",
            Stage::Parsing => "parsing",
            Stage::Judge => "judge",
            Stage::Execution => "execution",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureCategory {
    ImproperGrouping,
    IncorrectAgentSelection,
    StateInconsistency,
}

impl FailureCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureCategory::ImproperGrouping => "improper grouping",
            FailureCategory::IncorrectAgentSelection => "incorrect agent selection",
            FailureCategory::StateInconsistency => "state inconsistency",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureFeedback {
    pub command: RawCommand,
    pub stage: Stage,
    pub category: FailureCategory,
    pub diagnostic: String,
}

impl fmt::Display for FailureFeedback {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {}: {} ({})",
            self.category.as_str(),
            self.stage.as_str(),
            self.diagnostic,
            self.command
        )
    }
}
