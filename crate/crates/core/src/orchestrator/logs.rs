//! Line-oriented JSON views of an episode: who was grouped with whom each
//! cycle, and which skills ran side by side.

use serde_json::json;

use super::{CycleRecord, Decision};
use crate::command::RosterEntry;
use crate::types::AgentId;

fn token(roster: &[RosterEntry], id: AgentId) -> String {
    roster
        .iter()
        .find(|r| r.id == id)
        .map(|r| format!("{}({})", r.name, r.id))
        .unwrap_or_else(|| id.to_string())
}

pub fn scene_dynamics_lines(records: &[CycleRecord], roster: &[RosterEntry]) -> Vec<String> {
    records
        .iter()
        .map(|r| {
            let groups: Vec<_> = r
                .proposal
                .assignments
                .iter()
                .map(|a| {
                    json!({
                        "gid": a.gid,
                        "members": a.members.iter().map(|m| token(roster, *m)).collect::<Vec<_>>(),
                        "subtask": a.subtask,
                    })
                })
                .collect();
            json!({ "cycle": r.cycle, "fallback": r.fallback.is_some(), "groups": groups }).to_string()
        })
        .collect()
}

pub fn parallel_execution_lines(records: &[CycleRecord], roster: &[RosterEntry]) -> Vec<String> {
    records
        .iter()
        .map(|r| {
            let skills: Vec<_> = r
                .decisions
                .iter()
                .filter(|d| d.decision == Decision::Execute)
                .map(|d| {
                    let outcome = r.outcomes.get(&d.agent);
                    json!({
                        "agent": token(roster, d.agent),
                        "command": d.command.raw().text,
                        "success": outcome.map(|o| o.success).unwrap_or(false),
                        "diagnostic": outcome.map(|o| o.diagnostic.as_str()).unwrap_or(""),
                    })
                })
                .collect();
            json!({ "cycle": r.cycle, "skills": skills }).to_string()
        })
        .collect()
}
