//! Stochastic execution failures.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{FailureReason, SkillOutcome};
use crate::types::Verb;

/// Per-verb probability that an otherwise successful skill fails.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FailureRates {
    pub check: f64,
    pub pick: f64,
    #[serde(rename = "move")]
    pub move_: f64,
    pub push: f64,
    pub walk: f64,
    pub carry: f64,
    pub wait: f64,
}

impl Default for FailureRates {
    fn default() -> Self {
        Self {
            check: 0.0,
            pick: 0.05,
            move_: 0.05,
            push: 0.10,
            walk: 0.05,
            carry: 0.10,
            wait: 0.0,
        }
    }
}

impl FailureRates {
    pub fn zero() -> Self {
        Self::uniform(0.0)
    }

    pub fn uniform(p: f64) -> Self {
        Self {
            check: p,
            pick: p,
            move_: p,
            push: p,
            walk: p,
            carry: p,
            wait: p,
        }
    }

    pub fn rate(&self, verb: Verb) -> f64 {
        match verb {
            Verb::Check => self.check,
            Verb::Pick => self.pick,
            Verb::Move => self.move_,
            Verb::Push => self.push,
            Verb::Walk => self.walk,
            Verb::Carry => self.carry,
            Verb::Wait => self.wait,
        }
    }

    pub fn set(&mut self, verb: Verb, p: f64) {
        let slot = match verb {
            Verb::Check => &mut self.check,
            Verb::Pick => &mut self.pick,
            Verb::Move => &mut self.move_,
            Verb::Push => &mut self.push,
            Verb::Walk => &mut self.walk,
            Verb::Carry => &mut self.carry,
            Verb::Wait => &mut self.wait,
        };
        *slot = p;
    }
}

/// One Bernoulli draw per successful outcome; a hit rolls the outcome back.
pub fn apply_stochastic_failure(
    outcome: SkillOutcome,
    verb: Verb,
    rng: &mut impl Rng,
    rates: &FailureRates,
) -> SkillOutcome {
    if !outcome.success {
        return outcome;
    }
    let draw: f64 = rng.gen();
    if draw < rates.rate(verb) {
        outcome.rolled_back(
            FailureReason::Stochastic,
            format!("{verb} failed during execution"),
        )
    } else {
        outcome
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose2D;
    use crate::rng::stream;

    fn moved() -> SkillOutcome {
        let mut o = SkillOutcome::unchanged(Pose2D::at(0.0, 0.0));
        o.new_agent_pose = Pose2D::at(1.0, 0.0);
        o
    }

    #[test]
    fn zero_rates_are_identity() {
        let mut rng = stream(0, &[]);
        for _ in 0..100 {
            let o = apply_stochastic_failure(moved(), Verb::Move, &mut rng, &FailureRates::zero());
            assert_eq!(o, moved());
        }
    }

    #[test]
    fn certain_failure_rolls_back() {
        let mut rng = stream(0, &[]);
        let o = apply_stochastic_failure(moved(), Verb::Move, &mut rng, &FailureRates::uniform(1.0));
        assert!(!o.success);
        assert_eq!(o.failure_reason, Some(FailureReason::Stochastic));
        assert_eq!(o.new_agent_pose, Pose2D::at(0.0, 0.0));
    }

    #[test]
    fn toml_uses_verb_names() {
        let r: FailureRates = toml::from_str("move = 0.2\npush = 0.3").unwrap();
        assert_eq!(r.rate(Verb::Move), 0.2);
        assert_eq!(r.rate(Verb::Push), 0.3);
        assert_eq!(r.rate(Verb::Pick), 0.05);
    }
}
