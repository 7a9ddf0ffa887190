//! SR/AS aggregation and report rendering.

use serde::{Deserialize, Serialize};

use super::EpisodeResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task: String,
    pub difficulty: crate::world::Difficulty,
    pub gt_steps: u64,
    pub trials: u32,
    pub sr: f64,
    #[serde(rename = "as")]
    pub avg_steps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub label: String,
    pub tasks: Vec<TaskMetrics>,
    pub average_sr: f64,
    pub average_as: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("no episode results")]
    Empty,
    #[error("results mix labels `{0}` and `{1}`")]
    MixedLabels(String, String),
}

/// Mean success and mean steps per task, tasks in order of first appearance.
pub fn compute_metrics(results: &[EpisodeResult]) -> Result<RunReport, MetricsError> {
    let first = results.first().ok_or(MetricsError::Empty)?;
    if let Some(other) = results.iter().find(|r| r.label != first.label) {
        return Err(MetricsError::MixedLabels(first.label.clone(), other.label.clone()));
    }
    let mut order: Vec<&str> = Vec::new();
    for r in results {
        if !order.contains(&r.task.id.as_str()) {
            order.push(&r.task.id);
        }
    }
    let tasks: Vec<TaskMetrics> = order
        .iter()
        .map(|id| {
            let rs: Vec<&EpisodeResult> = results.iter().filter(|r| r.task.id == *id).collect();
            let n = rs.len() as f64;
            TaskMetrics {
                task: id.to_string(),
                difficulty: rs[0].task.difficulty,
                gt_steps: rs[0].task.gt_steps,
                trials: rs.len() as u32,
                sr: rs.iter().filter(|r| r.success).count() as f64 / n,
                avg_steps: rs.iter().map(|r| r.steps as f64).sum::<f64>() / n,
            }
        })
        .collect();
    let k = tasks.len() as f64;
    Ok(RunReport {
        label: first.label.clone(),
        average_sr: tasks.iter().map(|t| t.sr).sum::<f64>() / k,
        average_as: tasks.iter().map(|t| t.avg_steps).sum::<f64>() / k,
        tasks,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Table,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "table" => Ok(Self::Table),
            "json" => Ok(Self::Json),
            _ => Err(format!("unknown report format `{s}`")),
        }
    }
}

fn title(id: &str) -> String {
    match id.strip_prefix("task") {
        Some(n) => format!("Task {n}"),
        None => id.to_string(),
    }
}

/// One row per report, SR and AS per task followed by the average. Reports
/// are expected to cover the same tasks; the header follows the first.
pub fn render_table(reports: &[&RunReport], with_gt: bool) -> String {
    let Some(first) = reports.first() else {
        return String::new();
    };
    let mut head = format!("{:<14}", "Method");
    let mut sub = format!("{:<14}", "");
    for t in &first.tasks {
        head.push_str(&format!(" | {:^13}", format!("{} ({})", title(&t.task), t.difficulty.as_str())));
        sub.push_str(&format!(" | {:>5} {:>7}", "SR", "AS"));
    }
    head.push_str(&format!(" | {:^13}", "Average"));
    sub.push_str(&format!(" | {:>5} {:>7}", "SR", "AS"));
    let mut lines = vec![head, sub];
    for r in reports {
        let mut row = format!("{:<14}", r.label);
        for t in &r.tasks {
            row.push_str(&format!(" | {:>5.3} {:>7.1}", t.sr, t.avg_steps));
        }
        row.push_str(&format!(" | {:>5.3} {:>7.1}", r.average_sr, r.average_as));
        lines.push(row);
    }
    if with_gt {
        let mut row = format!("{:<14}", "GT");
        for t in &first.tasks {
            row.push_str(&format!(" | {:>5} {:>7.1}", "--", t.gt_steps as f64));
        }
        let avg = first.tasks.iter().map(|t| t.gt_steps as f64).sum::<f64>() / first.tasks.len().max(1) as f64;
        row.push_str(&format!(" | {:>5} {:>7.1}", "--", avg));
        lines.push(row);
    }
    lines.join("\n") + "\n"
}

pub fn emit_report(report: &RunReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Table => render_table(&[report], true),
        ReportFormat::Json => serde_json::to_string_pretty(report).expect("report serializes") + "\n",
    }
}
