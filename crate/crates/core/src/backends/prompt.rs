//! Prompt templates with `{name}` placeholders and the renderers that fill
//! them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::Role;
use crate::command::RosterEntry;
use crate::memory::{AgentFeedback, DialogueTurn};
use crate::types::Verb;
use crate::world::{ConflictReport, Layout, Observation};

const NONE: &str = "(none)";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("template for {role} uses unresolved placeholder {{{name}}}")]
    Unresolved { role: &'static str, name: String },
    #[error("cannot read template {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub role: Role,
    pub text: String,
}

impl PromptTemplate {
    pub fn placeholders(&self) -> Vec<String> {
        let mut out: Vec<String> = placeholder_re()
            .captures_iter(&self.text)
            .map(|c| c[1].to_string())
            .collect();
        out.sort();
        out.dedup();
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplates {
    pub general_planner: PromptTemplate,
    pub subgroup_manager: PromptTemplate,
    pub executor: PromptTemplate,
    pub capability_scorer: PromptTemplate,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        let t = |role, text: &str| PromptTemplate {
            role,
            text: text.to_string(),
        };
        Self {
            general_planner: t(Role::GeneralPlanner, include_str!("../../templates/general_planner.txt")),
            subgroup_manager: t(Role::SubgroupManager, include_str!("../../templates/subgroup_manager.txt")),
            executor: t(Role::Executor, include_str!("../../templates/executor.txt")),
            capability_scorer: t(
                Role::CapabilityScorer,
                include_str!("../../templates/capability_scorer.txt"),
            ),
        }
    }
}

impl PromptTemplates {
    /// Defaults, with any `<role>.txt` present in `dir` taking precedence.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut out = Self::default();
        for t in out.all_mut() {
            let path = dir.join(format!("{}.txt", t.role.as_str()));
            if path.exists() {
                t.text = std::fs::read_to_string(&path).map_err(|e| PromptError::Io {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?;
            }
        }
        Ok(out)
    }

    pub fn get(&self, role: Role) -> &PromptTemplate {
        match role {
            Role::GeneralPlanner => &self.general_planner,
            Role::SubgroupManager => &self.subgroup_manager,
            Role::Executor => &self.executor,
            Role::CapabilityScorer => &self.capability_scorer,
        }
    }

    pub fn all(&self) -> [&PromptTemplate; 4] {
        [
            &self.general_planner,
            &self.subgroup_manager,
            &self.executor,
            &self.capability_scorer,
        ]
    }

    fn all_mut(&mut self) -> [&mut PromptTemplate; 4] {
        [
            &mut self.general_planner,
            &mut self.subgroup_manager,
            &mut self.executor,
            &mut self.capability_scorer,
        ]
    }
}

/// Placeholders the orchestrator fills for each role.
pub fn supplied_placeholders(role: Role) -> &'static [&'static str] {
    const COMMON: [&str; 5] = ["cycle", "schema", "locations", "capabilities", "skills"];
    static TABLE: OnceLock<BTreeMap<&'static str, Vec<&'static str>>> = OnceLock::new();
    let table = TABLE.get_or_init(|| {
        let with = |extra: &[&'static str]| COMMON.iter().chain(extra).copied().collect::<Vec<_>>();
        BTreeMap::from([
            (
                Role::GeneralPlanner.as_str(),
                with(&["task", "observations", "history", "feedback", "grouping"]),
            ),
            (
                Role::SubgroupManager.as_str(),
                with(&["gid", "members", "subtask", "observations", "history", "feedback", "grammar"]),
            ),
            (Role::Executor.as_str(), with(&["agent", "command", "observations"])),
            (Role::CapabilityScorer.as_str(), with(&["command"])),
        ])
    });
    &table[role.as_str()]
}

/// Problems that would make a template fail at render time or lose the
/// output format it must request.
pub fn lint_templates(templates: &PromptTemplates) -> Vec<String> {
    let mut problems = Vec::new();
    for t in templates.all() {
        let supplied = supplied_placeholders(t.role);
        for p in t.placeholders() {
            if !supplied.contains(&p.as_str()) {
                problems.push(format!("{}: unknown placeholder {{{p}}}", t.role.as_str()));
            }
        }
        if !t.text.contains("{schema}") {
            problems.push(format!("{}: does not include {{schema}}", t.role.as_str()));
        }
    }
    problems
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z_]+)\}").unwrap())
}

/// Substitute every `{name}` in one pass; substituted text is not rescanned.
pub fn render_prompt(
    template: &PromptTemplate,
    vars: &BTreeMap<&str, String>,
) -> Result<String, PromptError> {
    let re = placeholder_re();
    if let Some(missing) = re
        .captures_iter(&template.text)
        .map(|c| c[1].to_string())
        .find(|name| !vars.contains_key(name.as_str()))
    {
        return Err(PromptError::Unresolved {
            role: template.role.as_str(),
            name: missing,
        });
    }
    Ok(re
        .replace_all(&template.text, |c: &regex::Captures<'_>| vars[&c[1]].clone())
        .into_owned())
}

pub fn render_capabilities(roster: &[RosterEntry]) -> String {
    let mut out = String::new();
    for r in roster {
        let skills: Vec<&str> = r.kind.skills().iter().map(|v| v.as_str()).collect();
        let _ = writeln!(out, "- {}({}): {}; skills: {}", r.name, r.id, r.kind.label(), skills.join(", "));
    }
    out.trim_end().to_string()
}

pub fn render_skills(verbs: &[Verb]) -> String {
    let mut out = String::new();
    for v in verbs {
        let line = match v {
            Verb::Check => "check <object>: the arm inspects a component within its reach",
            Verb::Pick => "pick <object> on <location>: the arm grasps a component within reach and mounts it on a socket; wheels need the trunk mounted first",
            Verb::Move => "move to <location>: an AGV drives to a location",
            Verb::Push => "push <object> to <location>: an AGV drives to a wheel and pushes it to a location",
            Verb::Walk => "walk to <location>: the humanoid walks to a location",
            Verb::Carry => "carry <object> to <location>: the humanoid lifts a component or a movable blocker within 0.5 m and carries it to a location",
            Verb::Wait => "wait: do nothing this cycle",
        };
        let _ = writeln!(out, "- {line}");
    }
    out.trim_end().to_string()
}

pub fn render_locations(layout: &Layout) -> String {
    layout
        .locations
        .iter()
        .map(|(k, (x, y))| format!("{k} ({x:.2}, {y:.2})"))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Observations ordered by observer id, entities by id.
pub fn render_observations(observations: &[Observation]) -> String {
    if observations.is_empty() {
        return NONE.to_string();
    }
    let mut obs: Vec<&Observation> = observations.iter().collect();
    obs.sort_by_key(|o| o.observer);
    let mut out = String::new();
    for o in obs {
        let me = &o.self_state;
        let holding = me
            .holding
            .map(|h| h.to_string())
            .unwrap_or_else(|| "nothing".into());
        let _ = writeln!(
            out,
            "{} at ({:.2}, {:.2}), heading {:.2}, holding {holding}",
            me.token(),
            me.pose.x,
            me.pose.y,
            me.pose.heading
        );
        let mut agents: Vec<_> = o.visible_agents.iter().collect();
        agents.sort_by_key(|a| a.id);
        for a in agents {
            let _ = writeln!(out, "  sees {}({}) at ({:.2}, {:.2})", a.name, a.id, a.pose.x, a.pose.y);
        }
        let mut comps: Vec<_> = o.visible_components.iter().collect();
        comps.sort_by_key(|c| c.id);
        for c in comps {
            let state = if c.attached { "mounted" } else { "loose" };
            let kind = match c.kind {
                crate::world::ComponentKind::Wheel => "wheel",
                crate::world::ComponentKind::Trunk => "trunk",
            };
            let _ = writeln!(
                out,
                "  sees {}({}) [{kind}, {state}] at ({:.2}, {:.2})",
                c.name, c.id, c.pose.x, c.pose.y
            );
        }
        let mut obstacles: Vec<_> = o.visible_obstacles.iter().collect();
        obstacles.sort_by_key(|b| b.id);
        for b in obstacles {
            let kind = match b.kind {
                crate::world::ObstacleKind::Wall => "wall",
                crate::world::ObstacleKind::Blocker => "movable blocker",
            };
            let _ = writeln!(
                out,
                "  sees {}({}) [{kind}] centered at ({:.2}, {:.2}), {:.1} x {:.1} m",
                b.name,
                b.id,
                b.center.x,
                b.center.y,
                2.0 * b.half_extents.0,
                2.0 * b.half_extents.1
            );
        }
    }
    out.trim_end().to_string()
}

pub fn render_history(turns: &[DialogueTurn]) -> String {
    if turns.is_empty() {
        return NONE.to_string();
    }
    turns
        .iter()
        .map(|t| format!("[cycle {}] {}: {}", t.cycle, t.speaker.label(), t.content.trim()))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn render_feedback(feedback: &[AgentFeedback], conflicts: &[ConflictReport]) -> String {
    let mut lines: Vec<String> = feedback.iter().map(AgentFeedback::render).collect();
    lines.extend(conflicts.iter().map(|c| {
        let kind = match c.kind {
            crate::world::ConflictKind::SameObject => "same object",
            crate::world::ConflictKind::PathOverlap => "path overlap",
        };
        format!("conflict ({kind}) between agents {} and {}: {}", c.agents.0, c.agents.1, c.detail)
    }));
    if lines.is_empty() {
        NONE.to_string()
    } else {
        lines.join("\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vars(pairs: &[(&'static str, &str)]) -> BTreeMap<&'static str, String> {
        pairs.iter().map(|(k, v)| (*k, v.to_string())).collect()
    }

    #[test]
    fn substitutes_once_and_reports_missing() {
        let t = PromptTemplate {
            role: Role::Executor,
            text: "a {x} b {y} {x}".into(),
        };
        let out = render_prompt(&t, &vars(&[("x", "{y}"), ("y", "2")])).unwrap();
        assert_eq!(out, "a {y} b 2 {y}");
        assert_eq!(
            render_prompt(&t, &vars(&[("x", "1")])),
            Err(PromptError::Unresolved {
                role: "executor",
                name: "y".into()
            })
        );
    }

    #[test]
    fn empty_history_is_none() {
        assert_eq!(render_history(&[]), "(none)");
        assert_eq!(render_feedback(&[], &[]), "(none)");
    }

    #[test]
    fn defaults_are_loaded() {
        let t = PromptTemplates::default();
        for tpl in t.all() {
            assert!(!tpl.text.is_empty());
        }
        assert!(t.general_planner.placeholders().contains(&"observations".to_string()));
    }

    #[test]
    fn bundled_templates_lint_clean() {
        assert_eq!(lint_templates(&PromptTemplates::default()), Vec::<String>::new());
        let mut t = PromptTemplates::default();
        t.executor.text.push_str("{weather}");
        assert_eq!(lint_templates(&t), vec!["executor: unknown placeholder {weather}".to_string()]);
    }
}
