//! Serve responses recorded in an earlier episode log.

use std::collections::BTreeMap;

use super::{Backend, BackendError, BackendRequest, BackendResponse, Exchange, RequestKey};

pub struct ReplayBackend {
    recorded: BTreeMap<RequestKey, Exchange>,
    label: String,
}

impl ReplayBackend {
    pub fn new(exchanges: impl IntoIterator<Item = Exchange>, label: impl Into<String>) -> Self {
        Self {
            recorded: exchanges.into_iter().map(|e| (e.key, e)).collect(),
            label: label.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.recorded.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recorded.is_empty()
    }
}

impl Backend for ReplayBackend {
    fn complete(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        let Some(e) = self.recorded.get(&request.key) else {
            return Err(BackendError::Divergence {
                key: request.key,
                reason: "no recorded response".into(),
            });
        };
        let hash = request.prompt_hash();
        if e.prompt_hash != hash {
            return Err(BackendError::Divergence {
                key: request.key,
                reason: format!(
                    "prompt differs from the recording ({} vs {}); observations or history changed",
                    hash, e.prompt_hash
                ),
            });
        }
        Ok(e.response.clone())
    }

    fn label(&self) -> String {
        format!("replay:{}", self.label)
    }
}
