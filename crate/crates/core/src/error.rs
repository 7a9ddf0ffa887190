//! Crate-level error type.

use thiserror::Error;

use crate::types::AgentId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no such agent: {0}")]
    NoSuchAgent(AgentId),
    #[error(transparent)]
    Scene(#[from] crate::world::SceneError),
}
