//! Planar kinematic world model.
//!
//! The world is a 12 m x 20 m workspace holding one fixed arm, three AGVs,
//! one humanoid, five assembly components and a set of rectangular
//! obstacles. It advances in synchronous rounds: every agent executes at most
//! one skill per [`step`](step::step), outcomes are applied atomically and a
//! fresh observation is produced for every agent.

mod observe;
mod scene;
mod step;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::geometry::{Bounds, CollisionMap, Pose2D, Rect};
use crate::types::{AgentId, AgentKind, Location, ObjectId};

pub use observe::{observe, SeenAgent, SeenComponent, SeenObstacle};
pub use scene::{build_scene, init_scene, Difficulty, SceneConfig, SceneError, SceneOverrides};
pub use step::{step, ActionMap, FailureLayer, StepOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObstacleKind {
    Wall,
    Blocker,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub id: ObjectId,
    pub name: String,
    pub center: Pose2D,
    pub half_extents: (f64, f64),
    pub kind: ObstacleKind,
}

impl Obstacle {
    pub fn footprint(&self) -> Rect {
        Rect::new(
            self.center.x,
            self.center.y,
            self.half_extents.0,
            self.half_extents.1,
        )
    }

    pub fn footprint_at(&self, x: f64, y: f64) -> Rect {
        Rect::new(x, y, self.half_extents.0, self.half_extents.1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentKind {
    Wheel,
    Trunk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentState {
    pub id: ObjectId,
    pub name: String,
    pub kind: ComponentKind,
    pub pose: Pose2D,
    pub attached: bool,
    pub carrier: Option<AgentId>,
    /// Named location of this component's assembly socket.
    pub socket: String,
    /// Whether an AGV may push it; the trunk has to be carried.
    pub pushable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub id: AgentId,
    pub name: String,
    pub kind: AgentKind,
    pub pose: Pose2D,
    pub holding: Option<ObjectId>,
    pub busy: bool,
    /// Planar reach radius; only meaningful for the arm.
    pub reach: Option<f64>,
}

impl AgentState {
    /// The `name(id)` token used by the command grammar.
    pub fn token(&self) -> String {
        format!("{}({})", self.name, self.id)
    }
}

/// Static description of the workspace carried alongside the dynamic state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub domain: Bounds,
    pub locations: BTreeMap<String, (f64, f64)>,
    pub perception_radius: f64,
    pub robot_radius: f64,
    pub arm_reach: f64,
    pub collision_resolution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub agents: Vec<AgentState>,
    pub components: Vec<ComponentState>,
    pub obstacles: Vec<Obstacle>,
    pub step: u64,
    pub rng_seed: u64,
    pub difficulty: Difficulty,
    pub layout: Layout,
}

/// A reference to any named entity in the world.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EntityRef<'a> {
    Component(&'a ComponentState),
    Obstacle(&'a Obstacle),
}

impl WorldState {
    pub fn agent(&self, id: AgentId) -> Option<&AgentState> {
        self.agents.iter().find(|a| a.id == id)
    }

    pub fn agent_by_name(&self, name: &str) -> Option<&AgentState> {
        self.agents.iter().find(|a| a.name == name)
    }

    pub fn component(&self, id: ObjectId) -> Option<&ComponentState> {
        self.components.iter().find(|c| c.id == id)
    }

    pub fn component_by_name(&self, name: &str) -> Option<&ComponentState> {
        self.components.iter().find(|c| c.name == name)
    }

    pub fn obstacle(&self, id: ObjectId) -> Option<&Obstacle> {
        self.obstacles.iter().find(|o| o.id == id)
    }

    pub fn entity(&self, id: ObjectId) -> Option<EntityRef<'_>> {
        self.component(id)
            .map(EntityRef::Component)
            .or_else(|| self.obstacle(id).map(EntityRef::Obstacle))
    }

    pub fn object_name(&self, id: ObjectId) -> Option<&str> {
        match self.entity(id)? {
            EntityRef::Component(c) => Some(&c.name),
            EntityRef::Obstacle(o) => Some(&o.name),
        }
    }

    pub fn resolve(&self, location: &Location) -> Option<Pose2D> {
        self.layout.resolve(location)
    }

    /// Collision map of all obstacles, optionally ignoring one of them
    /// (the obstacle currently being carried).
    pub fn collision_map(&self, exclude: Option<ObjectId>) -> CollisionMap {
        let rects = self
            .obstacles
            .iter()
            .filter(|o| Some(o.id) != exclude)
            .map(Obstacle::footprint)
            .collect();
        CollisionMap::new(
            rects,
            self.layout.robot_radius,
            self.layout.domain,
            self.layout.collision_resolution,
        )
    }

    /// True when `(x, y)` lies inside the domain and outside every raw
    /// obstacle footprint.
    pub fn placement_valid(&self, x: f64, y: f64, exclude: Option<ObjectId>) -> bool {
        self.layout.domain.contains(x, y)
            && self
                .obstacles
                .iter()
                .filter(|o| Some(o.id) != exclude)
                .all(|o| !o.footprint().intrudes(x, y, 0.0))
    }

    pub fn socket_pose(&self, component: &ComponentState) -> Option<Pose2D> {
        self.resolve(&Location::Named(component.socket.clone()))
    }
}

impl Layout {
    pub fn resolve(&self, location: &Location) -> Option<Pose2D> {
        match location {
            Location::Named(name) => self
                .locations
                .get(name)
                .map(|&(x, y)| Pose2D::at(x, y)),
            Location::Point { x, y } if x.is_finite() && y.is_finite() => Some(Pose2D::at(*x, *y)),
            Location::Point { .. } => None,
        }
    }
}

/// True iff the trunk and all four wheels are attached.
pub fn check_assembly_complete(world: &WorldState) -> bool {
    !world.components.is_empty() && world.components.iter().all(|c| c.attached)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConflictKind {
    SameObject,
    PathOverlap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictReport {
    /// Ordered pair, lower id first.
    pub agents: (AgentId, AgentId),
    pub kind: ConflictKind,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub observer: AgentId,
    pub visible_agents: Vec<SeenAgent>,
    pub visible_components: Vec<SeenComponent>,
    pub visible_obstacles: Vec<SeenObstacle>,
    pub self_state: AgentState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvFeedback {
    /// Index of the world step that produced this feedback.
    pub step: u64,
    pub state_updates: Vec<Observation>,
    pub conflicts: Vec<ConflictReport>,
}

impl EnvFeedback {
    pub fn observation(&self, agent: AgentId) -> Option<&Observation> {
        self.state_updates.iter().find(|o| o.observer == agent)
    }
}
