//! Commands held back because their preconditions may still come true.

use serde::{Deserialize, Serialize};

use super::verify::{verify, VerificationResult, VerifyContext};
use super::{FailureFeedback, RawCommand};
use crate::skills::SkillInvocation;
use crate::types::{AgentId, GroupId};

/// Total verification failures, the first deferral included, before a
/// command is dropped.
pub const RETRY_BUDGET: u32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deferred {
    pub raw: RawCommand,
    pub group: GroupId,
    pub members: Vec<AgentId>,
    pub failures: u32,
    pub deferred_at: u64,
    pub last: VerificationResult,
}

impl Deferred {
    pub fn new(result: VerificationResult, group: GroupId, members: Vec<AgentId>, cycle: u64) -> Self {
        Self {
            raw: result.raw.clone(),
            group,
            members,
            failures: 1,
            deferred_at: cycle,
            last: result,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Reconsidered {
    pub released: Vec<VerificationResult>,
    pub pending: Vec<Deferred>,
    pub dropped: Vec<FailureFeedback>,
}

/// Re-verify every pending entry against fresh observations. Released
/// commands extend `batch`. `confidence` re-scores capability when a backend
/// does the scoring.
pub fn reconsider_deferred(
    pending: Vec<Deferred>,
    ctx: &VerifyContext<'_>,
    batch: &mut Vec<SkillInvocation>,
    confidence: &mut dyn FnMut(&Deferred) -> Option<f64>,
) -> Reconsidered {
    let mut out = Reconsidered::default();
    for mut d in pending {
        let local = VerifyContext {
            gid: d.group,
            members: &d.members,
            confidence: confidence(&d),
            ..*ctx
        };
        let result = verify(&d.raw, &local, batch);
        if result.accepted {
            batch.extend_from_slice(result.invocations());
            out.released.push(result);
            continue;
        }
        d.failures += 1;
        let feedback = result.feedback.clone();
        if result.deferred && d.failures < RETRY_BUDGET {
            d.last = result;
            out.pending.push(d);
        } else if let Some(mut fb) = feedback {
            if result.deferred {
                fb.diagnostic = format!(
                    "dropped after {} failed verifications: {}",
                    d.failures, fb.diagnostic
                );
            }
            out.dropped.push(fb);
        }
    }
    out
}
