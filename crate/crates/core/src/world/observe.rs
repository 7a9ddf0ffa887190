//! Radius-limited partial observation.

use serde::{Deserialize, Serialize};

use super::{ComponentKind, ObstacleKind, Observation, WorldState};
use crate::geometry::Pose2D;
use crate::types::{AgentId, AgentKind, ObjectId};
use crate::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeenAgent {
    pub id: AgentId,
    pub name: String,
    pub kind: AgentKind,
    pub pose: Pose2D,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeenComponent {
    pub id: ObjectId,
    pub name: String,
    pub kind: ComponentKind,
    pub pose: Pose2D,
    pub attached: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeenObstacle {
    pub id: ObjectId,
    pub name: String,
    pub kind: ObstacleKind,
    pub center: Pose2D,
    pub half_extents: (f64, f64),
}

/// Everything within `perception_radius` of the agent. Agents and components
/// are points; obstacles count as visible when any part of their footprint is
/// in range.
pub fn observe(world: &WorldState, agent: AgentId) -> Result<Observation, Error> {
    let me = world.agent(agent).ok_or(Error::NoSuchAgent(agent))?;
    let r = world.layout.perception_radius;
    let visible_agents = world
        .agents
        .iter()
        .filter(|a| a.id != agent && me.pose.distance(&a.pose) <= r)
        .map(|a| SeenAgent {
            id: a.id,
            name: a.name.clone(),
            kind: a.kind,
            pose: a.pose,
        })
        .collect();
    let visible_components = world
        .components
        .iter()
        .filter(|c| me.pose.distance(&c.pose) <= r)
        .map(|c| SeenComponent {
            id: c.id,
            name: c.name.clone(),
            kind: c.kind,
            pose: c.pose,
            attached: c.attached,
        })
        .collect();
    let visible_obstacles = world
        .obstacles
        .iter()
        .filter(|o| o.footprint().distance_to(me.pose.x, me.pose.y) <= r)
        .map(|o| SeenObstacle {
            id: o.id,
            name: o.name.clone(),
            kind: o.kind,
            center: o.center,
            half_extents: o.half_extents,
        })
        .collect();
    Ok(Observation {
        observer: agent,
        visible_agents,
        visible_components,
        visible_obstacles,
        self_state: me.clone(),
    })
}

impl Observation {
    pub fn sees_object(&self, id: ObjectId) -> bool {
        self.visible_components.iter().any(|c| c.id == id)
            || self.visible_obstacles.iter().any(|o| o.id == id)
    }

    pub fn component(&self, id: ObjectId) -> Option<&SeenComponent> {
        self.visible_components.iter().find(|c| c.id == id)
    }

    pub fn obstacle(&self, id: ObjectId) -> Option<&SeenObstacle> {
        self.visible_obstacles.iter().find(|o| o.id == id)
    }
}
