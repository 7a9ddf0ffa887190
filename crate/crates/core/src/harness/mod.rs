//! Benchmark tasks, the evaluation protocol and result aggregation.

mod report;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backends::{Backend, BackendError, PromptTemplates, ReplayBackend, TaskBrief};
use crate::memory::ContextMemory;
use crate::orchestrator::{CycleRecord, Episode, OrchestratorConfig, OrchestratorError};
use crate::rng::{derive_seed, label_key};
use crate::world::{build_scene, Difficulty, FailureLayer, SceneConfig, SceneError, SceneOverrides};

pub use report::{compute_metrics, emit_report, render_table, MetricsError, ReportFormat, RunReport, TaskMetrics};

const BENCHMARK_TASKS: &str = include_str!("../../tasks/benchmark.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub difficulty: Difficulty,
    /// Suite seeds are mixed with this to derive per-trial scene seeds.
    pub seed: u64,
    pub gt_steps: u64,
    pub instruction: String,
    #[serde(default)]
    pub overrides: SceneOverrides,
}

impl TaskSpec {
    pub fn budget(&self) -> u64 {
        2 * self.gt_steps
    }

    pub fn brief(&self) -> TaskBrief {
        TaskBrief {
            name: self.id.clone(),
            instruction: self.instruction.clone(),
        }
    }

    /// Scene seed for one trial; a pure function of its arguments.
    pub fn trial_seed(&self, suite_seed: u64, trial: u32) -> u64 {
        derive_seed(suite_seed, &[label_key(&self.id), self.seed, trial as u64])
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TaskError {
    #[error("task file: {0}")]
    Parse(String),
    #[error("task file {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("unknown task `{0}`")]
    Unknown(String),
}

#[derive(Deserialize)]
struct TaskFile {
    task: Vec<TaskSpec>,
}

pub fn parse_tasks(text: &str) -> Result<Vec<TaskSpec>, TaskError> {
    toml::from_str::<TaskFile>(text)
        .map(|f| f.task)
        .map_err(|e| TaskError::Parse(e.to_string()))
}

pub fn load_tasks(path: &Path) -> Result<Vec<TaskSpec>, TaskError> {
    let text = fs::read_to_string(path).map_err(|source| TaskError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_tasks(&text)
}

/// The four benchmark tasks: two easy, two with a sealed passage.
pub fn benchmark_tasks() -> Vec<TaskSpec> {
    parse_tasks(BENCHMARK_TASKS).expect("bundled task file parses")
}

/// Select tasks by id; an empty selection means all of them.
pub fn select_tasks(all: &[TaskSpec], ids: &[String]) -> Result<Vec<TaskSpec>, TaskError> {
    if ids.is_empty() {
        return Ok(all.to_vec());
    }
    ids.iter()
        .map(|id| {
            all.iter()
                .find(|t| t.id.eq_ignore_ascii_case(id))
                .cloned()
                .ok_or_else(|| TaskError::Unknown(id.clone()))
        })
        .collect()
}

/// Steps a failed episode contributes to the average.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeoutSteps {
    /// The budget itself.
    #[default]
    Budget,
    /// One past the budget.
    BudgetPlusOne,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub seed: u64,
    pub trials: u32,
    pub label: String,
    pub failures: FailureLayer,
    pub timeout_steps: TimeoutSteps,
    pub orchestrator: OrchestratorConfig,
    pub scene: SceneConfig,
    /// One JSON log per episode is written here when set.
    pub log_dir: Option<PathBuf>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            trials: 5,
            label: "full".into(),
            failures: FailureLayer::Off,
            timeout_steps: TimeoutSteps::Budget,
            orchestrator: OrchestratorConfig::default(),
            scene: SceneConfig::default(),
            log_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub task: TaskSpec,
    pub trial: u32,
    pub seed: u64,
    pub label: String,
    pub success: bool,
    /// Steps counted towards the average.
    pub steps: u64,
    /// World steps actually taken.
    pub steps_taken: u64,
    pub log_path: Option<PathBuf>,
}

/// Everything needed to audit or replay one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub task: TaskSpec,
    pub trial: u32,
    pub seed: u64,
    pub budget: u64,
    pub success: bool,
    pub steps: u64,
    pub scene: SceneConfig,
    pub orchestrator: OrchestratorConfig,
    pub failures: FailureLayer,
    pub records: Vec<CycleRecord>,
    pub exchanges: Vec<crate::backends::Exchange>,
    pub memory: ContextMemory,
}

impl EpisodeLog {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("episode log serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::Io(path.to_path_buf(), e))?;
        Self::from_json(&text).map_err(|e| HarnessError::Log(path.to_path_buf(), e.to_string()))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("scene for {task}: {source}")]
    Scene { task: String, source: SceneError },
    #[error("episode {task} trial {trial}: {source}")]
    Episode {
        task: String,
        trial: u32,
        source: OrchestratorError,
    },
    #[error("backend for {task}: {source}")]
    Backend { task: String, source: BackendError },
    #[error("{0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error("{0}: {1}")]
    Log(PathBuf, String),
    #[error("trials must be at least 1")]
    NoTrials,
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Creates the backend used for every trial of one task.
pub type BackendFactory<'a> = dyn Fn(&TaskSpec) -> Result<Box<dyn Backend>, BackendError> + 'a;

/// Run one episode to completion or budget.
pub fn run_episode(
    task: &TaskSpec,
    trial: u32,
    backend: &dyn Backend,
    config: &SuiteConfig,
    templates: &PromptTemplates,
) -> Result<(EpisodeResult, EpisodeLog), HarnessError> {
    let seed = task.trial_seed(config.seed, trial);
    let log = play(task, trial, seed, backend, &config.scene, &config.orchestrator, &config.failures, templates)?;
    let steps = if log.success {
        log.steps
    } else {
        match config.timeout_steps {
            TimeoutSteps::Budget => log.budget,
            TimeoutSteps::BudgetPlusOne => log.budget + 1,
        }
    };
    let result = EpisodeResult {
        task: task.clone(),
        trial,
        seed,
        label: config.label.clone(),
        success: log.success,
        steps,
        steps_taken: log.steps,
        log_path: None,
    };
    Ok((result, log))
}

#[allow(clippy::too_many_arguments)]
fn play(
    task: &TaskSpec,
    trial: u32,
    seed: u64,
    backend: &dyn Backend,
    scene: &SceneConfig,
    orchestrator: &OrchestratorConfig,
    failures: &FailureLayer,
    templates: &PromptTemplates,
) -> Result<EpisodeLog, HarnessError> {
    let world = build_scene(scene, seed, task.difficulty, &task.overrides).map_err(|source| HarnessError::Scene {
        task: task.id.clone(),
        source,
    })?;
    let episode_err = |source| HarnessError::Episode {
        task: task.id.clone(),
        trial,
        source,
    };
    let mut ep = Episode::new(world, task.brief(), orchestrator.clone(), templates.clone(), failures.clone())
        .map_err(episode_err)?;
    let budget = task.budget();
    let success = ep.run(budget, backend).map_err(episode_err)?;
    Ok(EpisodeLog {
        task: task.clone(),
        trial,
        seed,
        budget,
        success,
        steps: ep.world.step,
        scene: scene.clone(),
        orchestrator: orchestrator.clone(),
        failures: failures.clone(),
        records: ep.records,
        exchanges: ep.exchanges,
        memory: ep.memory,
    })
}

/// Re-run a logged episode against its recorded responses.
pub fn replay_episode(log: &EpisodeLog, templates: &PromptTemplates) -> Result<EpisodeLog, HarnessError> {
    let backend = ReplayBackend::new(log.exchanges.iter().cloned(), &log.task.id);
    play(
        &log.task,
        log.trial,
        log.seed,
        &backend,
        &log.scene,
        &log.orchestrator,
        &log.failures,
        templates,
    )
}

#[derive(Debug)]
pub struct SuiteOutcome {
    pub report: RunReport,
    pub results: Vec<EpisodeResult>,
    pub logs: Vec<EpisodeLog>,
}

/// Partial results of a suite that stopped on an error.
#[derive(Debug, thiserror::Error)]
#[error("suite aborted after {} episodes: {source}", results.len())]
pub struct SuiteAborted {
    pub results: Vec<EpisodeResult>,
    pub source: HarnessError,
}

fn log_file_name(task: &str, trial: u32) -> String {
    format!("{task}_trial{trial}.json")
}

/// Run every task `config.trials` times and aggregate SR and AS.
pub fn run_suite(
    tasks: &[TaskSpec],
    backends: &BackendFactory<'_>,
    config: &SuiteConfig,
    templates: &PromptTemplates,
) -> Result<SuiteOutcome, SuiteAborted> {
    let mut results = Vec::new();
    let mut logs = Vec::new();
    let abort = |results: Vec<EpisodeResult>, source| SuiteAborted { results, source };
    if config.trials == 0 {
        return Err(abort(results, HarnessError::NoTrials));
    }
    if let Some(dir) = &config.log_dir {
        if let Err(e) = fs::create_dir_all(dir) {
            return Err(abort(results, HarnessError::Io(dir.clone(), e)));
        }
    }
    for task in tasks {
        let backend = match backends(task) {
            Ok(b) => b,
            Err(source) => {
                return Err(abort(
                    results,
                    HarnessError::Backend {
                        task: task.id.clone(),
                        source,
                    },
                ))
            }
        };
        for trial in 0..config.trials {
            let (mut result, log) = match run_episode(task, trial, backend.as_ref(), config, templates) {
                Ok(r) => r,
                Err(e) => return Err(abort(results, e)),
            };
            tracing::info!(task = %task.id, trial, success = result.success, steps = result.steps, "episode finished");
            if let Some(dir) = &config.log_dir {
                let path = dir.join(log_file_name(&task.id, trial));
                if let Err(e) = fs::write(&path, log.to_json()) {
                    return Err(abort(results, HarnessError::Io(path, e)));
                }
                result.log_path = Some(path);
            }
            results.push(result);
            logs.push(log);
        }
    }
    let report = match compute_metrics(&results) {
        Ok(r) => r,
        Err(e) => return Err(abort(results, e.into())),
    };
    if let Some(dir) = &config.log_dir {
        let path = dir.join("report.json");
        if let Err(e) = fs::write(&path, emit_report(&report, ReportFormat::Json)) {
            return Err(abort(results, HarnessError::Io(path, e)));
        }
    }
    Ok(SuiteOutcome { report, results, logs })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationKind {
    NoHistory,
    NoFeedback,
    NoGrouping,
}

impl AblationKind {
    pub const ALL: [AblationKind; 3] = [Self::NoHistory, Self::NoFeedback, Self::NoGrouping];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::NoHistory => "no_history",
            Self::NoFeedback => "no_feedback",
            Self::NoGrouping => "no_grouping",
        }
    }
}

impl std::str::FromStr for AblationKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s.replace('-', "_"))
            .ok_or_else(|| format!("unknown ablation `{s}`"))
    }
}

/// Run the suite with one ablation switched on; the report carries its name.
pub fn run_ablation(
    kind: AblationKind,
    tasks: &[TaskSpec],
    backends: &BackendFactory<'_>,
    config: &SuiteConfig,
    templates: &PromptTemplates,
) -> Result<SuiteOutcome, SuiteAborted> {
    let mut config = config.clone();
    let a = &mut config.orchestrator.ablations;
    match kind {
        AblationKind::NoHistory => a.no_history = true,
        AblationKind::NoFeedback => a.no_feedback = true,
        AblationKind::NoGrouping => a.no_grouping = true,
    }
    config.label = kind.as_str().to_string();
    run_suite(tasks, backends, &config, templates)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_tasks_match_the_benchmark() {
        let tasks = benchmark_tasks();
        let gt: Vec<u64> = tasks.iter().map(|t| t.gt_steps).collect();
        assert_eq!(gt, vec![7, 7, 9, 9]);
        let diff: Vec<Difficulty> = tasks.iter().map(|t| t.difficulty).collect();
        assert_eq!(
            diff,
            vec![Difficulty::Easy, Difficulty::Easy, Difficulty::Hard, Difficulty::Hard]
        );
        assert_eq!(tasks[0].budget(), 14);
        assert_eq!(tasks[3].budget(), 18);
    }

    #[test]
    fn bundled_tasks_build_scenes() {
        for t in benchmark_tasks() {
            let w = build_scene(&SceneConfig::default(), t.trial_seed(7, 0), t.difficulty, &t.overrides).unwrap();
            assert_eq!(w.components.len(), 5);
        }
    }

    #[test]
    fn trial_seeds_are_pure_and_distinct() {
        let t = &benchmark_tasks()[0];
        assert_eq!(t.trial_seed(1, 2), t.trial_seed(1, 2));
        assert_ne!(t.trial_seed(1, 2), t.trial_seed(1, 3));
        assert_ne!(t.trial_seed(1, 2), benchmark_tasks()[1].trial_seed(1, 2));
    }

    #[test]
    fn select_by_id() {
        let all = benchmark_tasks();
        let s = select_tasks(&all, &["TASK3".into()]).unwrap();
        assert_eq!(s[0].id, "task3");
        assert!(select_tasks(&all, &["task9".into()]).is_err());
        assert_eq!(select_tasks(&all, &[]).unwrap().len(), 4);
    }

    #[test]
    fn ablation_names_parse() {
        for k in AblationKind::ALL {
            assert_eq!(k.as_str().parse::<AblationKind>().unwrap(), k);
        }
        assert_eq!("no-grouping".parse::<AblationKind>().unwrap(), AblationKind::NoGrouping);
    }
}
