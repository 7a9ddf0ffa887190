//! Text form of commands.
//!
//! ```text
//! group <G>: agent <name>(<id>)[, <name>(<id>)...] [<verb>] [<object>(<id>)] [to|on|at <location>]
//! ```
//!
//! A location is either a layout name or a literal point `(x, y)`.

use std::sync::OnceLock;

use regex::Regex;

use super::{AgentRef, ObjectRef, StructuredCommand};
use crate::types::{AgentId, GroupId, Location, ObjectId, Verb};

/// Human-readable grammar shown to planners.
pub const COMMAND_GRAMMAR: &str =
    "group <G>: agent <name>(<id>)[, <name>(<id>)...] [<verb>] <object>(<id>) to|on|at <location>";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("missing {0} field")]
    Missing(&'static str),
    #[error("malformed {field} field: `{text}`")]
    Malformed { field: &'static str, text: String },
    #[error("unknown verb `{0}`")]
    UnknownVerb(String),
    #[error("agent id {0} appears twice")]
    DuplicateAgent(AgentId),
}

struct Patterns {
    group: Regex,
    agents_field: Regex,
    agent_item: Regex,
    verb: Regex,
    header: Regex,
    object: Regex,
    location: Regex,
    point: Regex,
    name: Regex,
}

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| Patterns {
        group: Regex::new(r"(?i)\bgroup\s+(\d+)\s*:").unwrap(),
        agents_field: Regex::new(r"(?i)\bagents?\s+[A-Za-z_]\w*\s*\(\s*\d+\s*\)").unwrap(),
        agent_item: Regex::new(r"^\s*([A-Za-z_]\w*)\s*\(\s*(\d+)\s*\)\s*$").unwrap(),
        verb: Regex::new(r"\[\s*([A-Za-z]+)\s*\]").unwrap(),
        header: Regex::new(
            r"(?is)^\s*group\s+(\d+)\s*:\s*agents?\s+(.+?)\s*\[\s*([A-Za-z]+)\s*\]\s*(.*?)\s*$",
        )
        .unwrap(),
        object: Regex::new(r"^([A-Za-z_]\w*)\s*\(\s*(\d+)\s*\)\s*(.*)$").unwrap(),
        location: Regex::new(r"(?is)^(?:to|on|at)\s+(.+?)\s*\.?$").unwrap(),
        point: Regex::new(r"^\(\s*([-+]?[0-9.eE+-]+)\s*,\s*([-+]?[0-9.eE+-]+)\s*\)$").unwrap(),
        name: Regex::new(r"^[A-Za-z_]\w*$").unwrap(),
    })
}

/// Group, agents and verb: the part of a command the capability and
/// selection stages need.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandHeader {
    pub group: GroupId,
    pub agents: Vec<AgentRef>,
    pub verb: Verb,
    /// Unparsed remainder holding the object and location.
    pub body: String,
}

/// Report the first absent field in agent, verb, group order.
fn missing_field(text: &str) -> ParseError {
    let p = patterns();
    if !p.agents_field.is_match(text) {
        ParseError::Missing("agent")
    } else if !p.verb.is_match(text) {
        ParseError::Missing("verb")
    } else if !p.group.is_match(text) {
        ParseError::Missing("group")
    } else {
        ParseError::Malformed {
            field: "command",
            text: text.trim().to_string(),
        }
    }
}

pub fn parse_header(text: &str) -> Result<CommandHeader, ParseError> {
    let p = patterns();
    let caps = p.header.captures(text).ok_or_else(|| missing_field(text))?;
    let group = caps[1]
        .parse::<u32>()
        .map(GroupId)
        .map_err(|_| ParseError::Malformed {
            field: "group",
            text: caps[1].to_string(),
        })?;
    let mut agents = Vec::new();
    for item in caps[2].split(',') {
        let m = p.agent_item.captures(item).ok_or_else(|| ParseError::Malformed {
            field: "agent",
            text: item.trim().to_string(),
        })?;
        let id = m[2].parse::<u32>().map(AgentId).map_err(|_| ParseError::Malformed {
            field: "agent",
            text: item.trim().to_string(),
        })?;
        if agents.iter().any(|a: &AgentRef| a.id == id) {
            return Err(ParseError::DuplicateAgent(id));
        }
        agents.push(AgentRef {
            name: m[1].to_string(),
            id,
        });
    }
    let verb: Verb = caps[3]
        .parse()
        .map_err(|_| ParseError::UnknownVerb(caps[3].to_string()))?;
    Ok(CommandHeader {
        group,
        agents,
        verb,
        body: caps[4].to_string(),
    })
}

fn parse_location(text: &str) -> Result<Location, ParseError> {
    let p = patterns();
    let t = text.trim();
    if let Some(c) = p.point.captures(t) {
        let x = c[1].parse::<f64>();
        let y = c[2].parse::<f64>();
        return match (x, y) {
            (Ok(x), Ok(y)) => Ok(Location::Point { x, y }),
            _ => Err(ParseError::Malformed {
                field: "location",
                text: t.to_string(),
            }),
        };
    }
    if p.name.is_match(t) {
        Ok(Location::Named(t.to_string()))
    } else {
        Err(ParseError::Malformed {
            field: "location",
            text: t.to_string(),
        })
    }
}

/// Object and location, validated against what the verb requires.
pub fn parse_body(
    verb: Verb,
    body: &str,
) -> Result<(Option<ObjectRef>, Option<Location>), ParseError> {
    let p = patterns();
    let body = body.trim();
    let (object, rest) = match p.object.captures(body) {
        Some(c) => {
            let id = c[2].parse::<u32>().map(ObjectId).map_err(|_| ParseError::Malformed {
                field: "object",
                text: c[0].to_string(),
            })?;
            (
                Some(ObjectRef {
                    name: c[1].to_string(),
                    id,
                }),
                c[3].trim().to_string(),
            )
        }
        None => (None, body.to_string()),
    };
    let location = if rest.is_empty() {
        None
    } else {
        let c = p.location.captures(&rest).ok_or_else(|| {
            if object.is_none() && verb.needs_object() {
                ParseError::Missing("object")
            } else {
                ParseError::Malformed {
                    field: "location",
                    text: rest.clone(),
                }
            }
        })?;
        Some(parse_location(&c[1])?)
    };
    if verb.needs_object() && object.is_none() {
        return Err(ParseError::Missing("object"));
    }
    if verb.needs_location() && location.is_none() {
        return Err(ParseError::Missing("location"));
    }
    Ok((object, location))
}

pub fn parse_command(text: &str) -> Result<StructuredCommand, ParseError> {
    let header = parse_header(text)?;
    let (object, location) = parse_body(header.verb, &header.body)?;
    Ok(StructuredCommand {
        group: header.group,
        agents: header.agents,
        verb: header.verb,
        object,
        location,
    })
}

/// Canonical text form; `parse_command(&render(c)) == Ok(c)`.
pub fn render(cmd: &StructuredCommand) -> String {
    let agents = cmd
        .agents
        .iter()
        .map(|a| format!("{}({})", a.name, a.id))
        .collect::<Vec<_>>()
        .join(", ");
    let mut out = format!("group {}: agent {} [{}]", cmd.group, agents, cmd.verb);
    if let Some(o) = &cmd.object {
        out.push_str(&format!(" {}({})", o.name, o.id));
    }
    if let Some(l) = &cmd.location {
        out.push_str(&format!(" {} {}", cmd.verb.preposition(), l));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_the_canonical_example() {
        let c = parse_command("group 1: agent agv_2(3) [push] wheel_1(10) to assembly_zone").unwrap();
        assert_eq!(c.group, GroupId(1));
        assert_eq!(
            c.agents,
            vec![AgentRef {
                name: "agv_2".into(),
                id: AgentId(3)
            }]
        );
        assert_eq!(c.verb, Verb::Push);
        assert_eq!(
            c.object,
            Some(ObjectRef {
                name: "wheel_1".into(),
                id: ObjectId(10)
            })
        );
        assert_eq!(c.location, Some(Location::Named("assembly_zone".into())));
    }

    #[test]
    fn tolerant_of_whitespace_and_case() {
        let c = parse_command("  GROUP 2 :  agents agv_1 ( 2 ) ,agv_3(4)  [ MOVE ]  to ( 1.5 , -2 ) ")
            .unwrap();
        assert_eq!(c.agents.len(), 2);
        assert_eq!(c.verb, Verb::Move);
        assert_eq!(c.location, Some(Location::point(1.5, -2.0)));
    }

    #[test]
    fn missing_fields_are_named() {
        assert_eq!(
            parse_command("do something useful"),
            Err(ParseError::Missing("agent"))
        );
        assert_eq!(
            parse_command("group 1: agent agv_1(2) push wheel_1(10) to dock_e"),
            Err(ParseError::Missing("verb"))
        );
        assert_eq!(
            parse_command("agent agv_1(2) [push] wheel_1(10) to dock_e"),
            Err(ParseError::Missing("group"))
        );
        assert_eq!(
            parse_command("group 1: agent agv_1(2) [push] to dock_e"),
            Err(ParseError::Missing("object"))
        );
        assert_eq!(
            parse_command("group 1: agent agv_1(2) [push] wheel_1(10)"),
            Err(ParseError::Missing("location"))
        );
    }

    #[test]
    fn optional_parts() {
        let wait = parse_command("group 3: agent franka(1) [wait]").unwrap();
        assert_eq!(wait.object, None);
        assert_eq!(wait.location, None);
        let check = parse_command("group 3: agent franka(1) [check] trunk(14)").unwrap();
        assert_eq!(check.location, None);
        let walk = parse_command("group 3: agent humanoid(5) [walk] to anchor_ne").unwrap();
        assert_eq!(walk.object, None);
    }

    #[test]
    fn duplicate_agent_rejected() {
        assert_eq!(
            parse_command("group 1: agent agv_1(2), agv_1(2) [move] to dock_e"),
            Err(ParseError::DuplicateAgent(AgentId(2)))
        );
    }

    #[test]
    fn render_round_trips() {
        for text in [
            "group 1: agent agv_2(3) [push] wheel_1(10) to assembly_zone",
            "group 4: agent franka(1) [pick] trunk(14) on socket_trunk",
            "group 2: agent agv_1(2), agv_3(4) [move] to (-0.1, 3.25)",
            "group 7: agent franka(1) [wait]",
        ] {
            let c = parse_command(text).unwrap();
            assert_eq!(render(&c), text);
            assert_eq!(parse_command(&render(&c)).unwrap(), c);
        }
    }

    mod props {
        use super::*;
        use crate::command::AgentRef;
        use proptest::prelude::*;

        fn name() -> impl Strategy<Value = String> {
            "[A-Za-z_][A-Za-z0-9_]{0,10}"
        }

        fn coord() -> impl Strategy<Value = f64> {
            prop_oneof![
                -20.0..20.0f64,
                proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO,
            ]
        }

        fn location() -> impl Strategy<Value = Location> {
            prop_oneof![
                name().prop_map(Location::Named),
                (coord(), coord()).prop_map(|(x, y)| Location::point(x, y)),
            ]
        }

        fn command() -> impl Strategy<Value = StructuredCommand> {
            (
                0u32..1000,
                proptest::collection::btree_map(0u32..10_000, name(), 1..4),
                proptest::sample::select(Verb::ALL.to_vec()),
                (name(), 0u32..10_000),
                location(),
                any::<bool>(),
            )
                .prop_map(|(g, agents, verb, (oname, oid), loc, extra_loc)| StructuredCommand {
                    group: GroupId(g),
                    agents: agents.into_iter().map(|(id, name)| AgentRef { name, id: AgentId(id) }).collect(),
                    verb,
                    object: verb.needs_object().then_some(ObjectRef { name: oname, id: ObjectId(oid) }),
                    location: (verb.needs_location() || extra_loc).then_some(loc),
                })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(2000))]

            #[test]
            fn parse_inverts_render(cmd in command()) {
                let text = render(&cmd);
                prop_assert_eq!(parse_command(&text), Ok(cmd), "{}", text);
            }

            #[test]
            fn arbitrary_text_never_panics(text in "\\PC{0,80}") {
                let _ = parse_command(&text);
            }
        }
    }
}
