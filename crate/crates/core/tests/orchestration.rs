//! Whole-episode invariants over the bundled tasks.

use std::collections::BTreeSet;

use cohort_core::backends::{Backend, IdleBackend, PromptTemplates, ScriptedBackend};
use cohort_core::harness::{benchmark_tasks, run_episode, EpisodeLog, EpisodeResult, SuiteConfig, TaskSpec};
use cohort_core::memory::Ablations;
use cohort_core::orchestrator::Decision;
use cohort_core::skills::FailureRates;
use cohort_core::types::AgentId;
use cohort_core::world::FailureLayer;

fn episode(task: &TaskSpec, backend: &dyn Backend, config: &SuiteConfig) -> (EpisodeResult, EpisodeLog) {
    run_episode(task, 0, backend, config, &PromptTemplates::default()).unwrap()
}

fn scripted(task: &TaskSpec) -> ScriptedBackend {
    ScriptedBackend::for_task(&task.id).unwrap()
}

fn configs() -> Vec<SuiteConfig> {
    let mut out = Vec::new();
    for seed in 0..4 {
        for failures in [
            FailureLayer::Off,
            FailureLayer::Rates {
                rates: FailureRates::default(),
            },
        ] {
            out.push(SuiteConfig {
                seed,
                failures,
                ..SuiteConfig::default()
            });
        }
    }
    out
}

#[test]
fn groups_partition_the_roster_and_agents_act_once_per_step() {
    for task in benchmark_tasks() {
        for config in configs() {
            let (_, log) = episode(&task, &scripted(&task), &config);
            let all: BTreeSet<AgentId> = (1..=5).map(AgentId).collect();
            assert_eq!(log.records.len() as u64, log.steps);
            for (k, r) in log.records.iter().enumerate() {
                assert_eq!(r.cycle, k as u64);
                let mut seen = BTreeSet::new();
                for a in &r.proposal.assignments {
                    assert!(!a.members.is_empty());
                    for m in &a.members {
                        assert!(seen.insert(*m), "{} cycle {k}: agent in two groups", task.id);
                    }
                }
                assert_eq!(seen, all, "{} cycle {k}", task.id);
                let mut acting = BTreeSet::new();
                for d in r.decisions.iter().filter(|d| d.decision == Decision::Execute) {
                    assert!(d.invocation.is_some());
                    assert!(acting.insert(d.agent), "{} cycle {k}: agent invoked twice", task.id);
                }
                assert!(r.outcomes.keys().all(|a| all.contains(a)));
            }
        }
    }
}

#[test]
fn scripted_commands_pass_verification_when_nothing_fails() {
    for task in benchmark_tasks() {
        for seed in 0..4 {
            let config = SuiteConfig {
                seed,
                ..SuiteConfig::default()
            };
            let (r, log) = episode(&task, &scripted(&task), &config);
            assert!(r.success);
            for rec in &log.records {
                for v in &rec.verification {
                    assert!(v.accepted, "{} cycle {}: {:?} {:?}", task.id, rec.cycle, v.command, v.diagnostic);
                }
            }
        }
    }
}

#[test]
fn parallel_and_sequential_managers_agree() {
    for task in benchmark_tasks() {
        for mut config in configs() {
            config.orchestrator.parallel = true;
            let (_, a) = episode(&task, &scripted(&task), &config);
            config.orchestrator.parallel = false;
            let (_, mut b) = episode(&task, &scripted(&task), &config);
            b.orchestrator.parallel = true;
            assert_eq!(a.to_json(), b.to_json(), "{} seed {}", task.id, config.seed);
        }
    }
}

#[test]
fn timeouts_count_the_budget_and_never_exceed_it() {
    for task in benchmark_tasks() {
        let (r, log) = episode(&task, &IdleBackend, &SuiteConfig::default());
        assert!(!r.success);
        assert_eq!(log.steps, task.budget());
        assert_eq!(r.steps, 2 * task.gt_steps);
        for config in configs() {
            let (r, _) = episode(&task, &scripted(&task), &config);
            assert!(r.steps <= task.budget());
            assert!(r.steps_taken <= task.budget());
        }
    }
}

#[test]
fn no_grouping_keeps_everyone_in_one_group() {
    for task in benchmark_tasks() {
        let mut config = SuiteConfig::default();
        config.orchestrator.ablations = Ablations {
            no_grouping: true,
            ..Ablations::default()
        };
        let (_, log) = episode(&task, &scripted(&task), &config);
        assert!(!log.records.is_empty());
        for r in &log.records {
            assert_eq!(r.proposal.assignments.len(), 1, "{} cycle {}", task.id, r.cycle);
            assert_eq!(r.proposal.assignments[0].members.len(), 5);
        }
    }
}
