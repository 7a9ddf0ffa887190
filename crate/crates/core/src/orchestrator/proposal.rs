//! Seven-section task proposals and their grouping payload.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::backends::fenced;
use crate::types::{AgentId, GroupId};

pub const SECTION_TITLES: [&str; 7] = [
    "Situation Analysis",
    "Spatial Analysis",
    "Task Decomposition",
    "Grouping Strategy",
    "Subgoal Assignment",
    "Coordination Strategy",
    "Risk Assessment",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubgroupAssignment {
    pub gid: GroupId,
    pub members: Vec<AgentId>,
    pub subtask: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub situation_analysis: String,
    pub spatial_analysis: String,
    pub task_decomposition: String,
    pub grouping_strategy: String,
    pub subgoal_assignment: String,
    pub coordination_strategy: String,
    pub risk_assessment: String,
    pub assignments: Vec<SubgroupAssignment>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProposalError {
    #[error("missing or empty section `{0}`")]
    MissingSection(&'static str),
    #[error("missing BEGIN_JSON/END_JSON grouping block")]
    MissingJson,
    #[error("invalid grouping JSON: {0}")]
    InvalidJson(String),
    #[error("group {0} has no members")]
    EmptyGroup(GroupId),
    #[error("group id {0} used twice")]
    DuplicateGroup(GroupId),
    #[error("agent {0} assigned to more than one group")]
    Overlap(AgentId),
    #[error("unknown agent id {0}")]
    UnknownAgent(AgentId),
}

#[derive(Deserialize)]
struct GroupingJson {
    assignments: Vec<SubgroupAssignment>,
}

fn header_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        let titles = SECTION_TITLES.join("|");
        Regex::new(&format!(
            r"(?im)^[ \t]*(?:#+[ \t]*)?(?:\(?\d+[.)][ \t]*)?(?:\*\*)?({titles})(?:\*\*)?[ \t]*:?[ \t]*(?:\*\*)?[ \t]*(.*)$"
        ))
        .unwrap()
    })
}

impl Proposal {
    pub fn sections(&self) -> [&str; 7] {
        [
            &self.situation_analysis,
            &self.spatial_analysis,
            &self.task_decomposition,
            &self.grouping_strategy,
            &self.subgoal_assignment,
            &self.coordination_strategy,
            &self.risk_assessment,
        ]
    }

    /// Single group holding every agent, used when grouping is disabled or
    /// the planner output is unusable.
    pub fn single_group(agents: &[AgentId], subtask: &str, note: &str) -> Self {
        let s = |t: &str| t.to_string();
        Proposal {
            situation_analysis: s(note),
            spatial_analysis: s(note),
            task_decomposition: s(subtask),
            grouping_strategy: s("all robots in one group"),
            subgoal_assignment: s(subtask),
            coordination_strategy: s("one manager coordinates every robot"),
            risk_assessment: s(note),
            assignments: vec![SubgroupAssignment {
                gid: GroupId(1),
                members: agents.to_vec(),
                subtask: subtask.to_string(),
            }],
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (title, body) in SECTION_TITLES.iter().zip(self.sections()) {
            out.push_str(&format!("## {title}\n{}\n\n", body.trim()));
        }
        let json = serde_json::json!({ "assignments": self.assignments });
        out.push_str(&format!("BEGIN_JSON\n{json}\nEND_JSON\n"));
        out
    }
}

pub fn parse_proposal(text: &str, known: &[AgentId]) -> Result<Proposal, ProposalError> {
    let json_start = text.find("BEGIN_JSON").unwrap_or(text.len());
    let prose = &text[..json_start];
    let re = header_re();
    let heads: Vec<(usize, usize, usize, String)> = re
        .captures_iter(prose)
        .map(|c| {
            let m = c.get(0).unwrap();
            let title = SECTION_TITLES
                .iter()
                .position(|t| t.eq_ignore_ascii_case(&c[1]))
                .unwrap();
            (title, m.start(), m.end(), c[2].trim().to_string())
        })
        .collect();
    let mut bodies: [Option<String>; 7] = Default::default();
    for (i, &(title, _, end, ref inline)) in heads.iter().enumerate() {
        let stop = heads.get(i + 1).map(|h| h.1).unwrap_or(prose.len());
        let mut body = inline.clone();
        let rest = prose[end..stop].trim();
        if !rest.is_empty() {
            if !body.is_empty() {
                body.push('\n');
            }
            body.push_str(rest);
        }
        if bodies[title].is_none() {
            bodies[title] = Some(body);
        }
    }
    let mut sections = Vec::with_capacity(7);
    for (i, b) in bodies.into_iter().enumerate() {
        match b {
            Some(b) if !b.trim().is_empty() => sections.push(b),
            _ => return Err(ProposalError::MissingSection(SECTION_TITLES[i])),
        }
    }
    let json = fenced(text, "BEGIN_JSON", "END_JSON").ok_or(ProposalError::MissingJson)?;
    let grouping: GroupingJson =
        serde_json::from_str(json.trim()).map_err(|e| ProposalError::InvalidJson(e.to_string()))?;
    let mut gids = BTreeSet::new();
    let mut seen = BTreeSet::new();
    for a in &grouping.assignments {
        if !gids.insert(a.gid) {
            return Err(ProposalError::DuplicateGroup(a.gid));
        }
        if a.members.is_empty() {
            return Err(ProposalError::EmptyGroup(a.gid));
        }
        for m in &a.members {
            if !known.contains(m) {
                return Err(ProposalError::UnknownAgent(*m));
            }
            if !seen.insert(*m) {
                return Err(ProposalError::Overlap(*m));
            }
        }
    }
    let mut it = sections.into_iter();
    let mut next = || it.next().unwrap();
    Ok(Proposal {
        situation_analysis: next(),
        spatial_analysis: next(),
        task_decomposition: next(),
        grouping_strategy: next(),
        subgoal_assignment: next(),
        coordination_strategy: next(),
        risk_assessment: next(),
        assignments: grouping.assignments,
    })
}
