//! Identifiers and small vocabulary types shared across modules.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::geometry::Pose2D;

macro_rules! id_newtype {
    ($name:ident) => {
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

id_newtype!(AgentId);
id_newtype!(ObjectId);
id_newtype!(GroupId);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Arm,
    Agv,
    Humanoid,
}

impl AgentKind {
    /// Skill vocabulary per robot kind.
    pub fn skills(self) -> &'static [Verb] {
        match self {
            AgentKind::Arm => &[Verb::Check, Verb::Pick, Verb::Wait],
            AgentKind::Agv => &[Verb::Move, Verb::Push, Verb::Wait],
            AgentKind::Humanoid => &[Verb::Walk, Verb::Carry, Verb::Wait],
        }
    }

    pub fn permits(self, verb: Verb) -> bool {
        self.skills().contains(&verb)
    }

    pub fn label(self) -> &'static str {
        match self {
            AgentKind::Arm => "robotic arm",
            AgentKind::Agv => "AGV",
            AgentKind::Humanoid => "humanoid",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verb {
    Check,
    Pick,
    Move,
    Push,
    Walk,
    Carry,
    Wait,
}

impl Verb {
    pub const ALL: [Verb; 7] = [
        Verb::Check,
        Verb::Pick,
        Verb::Move,
        Verb::Push,
        Verb::Walk,
        Verb::Carry,
        Verb::Wait,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Verb::Check => "check",
            Verb::Pick => "pick",
            Verb::Move => "move",
            Verb::Push => "push",
            Verb::Walk => "walk",
            Verb::Carry => "carry",
            Verb::Wait => "wait",
        }
    }

    pub fn needs_object(self) -> bool {
        matches!(self, Verb::Check | Verb::Pick | Verb::Push | Verb::Carry)
    }

    pub fn needs_location(self) -> bool {
        matches!(self, Verb::Pick | Verb::Move | Verb::Push | Verb::Walk | Verb::Carry)
    }

    /// Preposition used when rendering the location clause.
    pub fn preposition(self) -> &'static str {
        match self {
            Verb::Pick => "on",
            _ => "to",
        }
    }
}

impl fmt::Display for Verb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Verb {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        Verb::ALL
            .iter()
            .copied()
            .find(|v| v.as_str() == lower)
            .ok_or_else(|| format!("unknown verb `{s}`"))
    }
}

/// A skill target: a named location from the scene layout or a literal point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Location {
    Named(String),
    Point { x: f64, y: f64 },
}

impl Location {
    pub fn point(x: f64, y: f64) -> Self {
        Location::Point { x, y }
    }

    pub fn from_pose(p: &Pose2D) -> Self {
        Location::Point { x: p.x, y: p.y }
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Named(name) => f.write_str(name),
            Location::Point { x, y } => write!(f, "({x:?}, {y:?})"),
        }
    }
}
