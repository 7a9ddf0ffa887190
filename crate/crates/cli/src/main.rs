use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use cohort_core::backends::{
    lint_templates, Backend, BackendError, HttpBackend, HttpConfig, IdleBackend, PromptTemplates, ScriptedBackend,
};
use cohort_core::harness::{
    benchmark_tasks, compute_metrics, emit_report, load_tasks, render_table, replay_episode, run_ablation,
    run_episode, run_suite, select_tasks, AblationKind, EpisodeLog, EpisodeResult, ReportFormat, RunReport,
    SuiteConfig, TaskSpec,
};
use cohort_core::skills::FailureRates;
use cohort_core::types::Verb;
use cohort_core::world::FailureLayer;

#[derive(Parser)]
#[command(name = "cohort", version, about = "Run and inspect multi-robot assembly episodes")]
struct Cli {
    /// Log verbosity: -v info, -vv debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    /// Hand-derived plans for the benchmark tasks.
    Scripted,
    /// Never issues a command.
    Idle,
    /// Chat-completion endpoint configured through the environment.
    Http,
}

#[derive(Subcommand)]
enum Command {
    /// Run a suite of episodes and print the report.
    Run {
        /// Task ids, comma separated; all tasks when omitted.
        #[arg(long, value_delimiter = ',')]
        tasks: Vec<String>,
        /// Task file replacing the bundled benchmark tasks.
        #[arg(long)]
        task_file: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "scripted")]
        backend: BackendKind,
        #[arg(long)]
        trials: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
        /// no_history, no_feedback or no_grouping.
        #[arg(long)]
        ablation: Option<AblationKind>,
        /// off, rates, rates:P, inject:VERB or inject:VERB:N.
        #[arg(long)]
        failures: Option<String>,
        /// Suite configuration in TOML; flags take precedence.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory with per-role template overrides.
        #[arg(long)]
        templates: Option<PathBuf>,
        /// Results directory for episode logs and the report.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "table")]
        format: ReportFormat,
    },
    /// Re-run a logged episode from its recorded responses and compare.
    Replay {
        log: PathBuf,
        #[arg(long)]
        templates: Option<PathBuf>,
    },
    /// Summarize results directories.
    Report {
        dirs: Vec<PathBuf>,
        #[arg(long, default_value = "table")]
        format: ReportFormat,
    },
    /// Lint prompt templates and check the scripted plans reach their step
    /// targets.
    Validate {
        #[arg(long)]
        templates: Option<PathBuf>,
        /// Seeds tried per task.
        #[arg(long, default_value_t = 10)]
        seeds: u64,
    },
}

fn parse_failures(spec: &str) -> Result<FailureLayer> {
    let parts: Vec<&str> = spec.split(':').collect();
    Ok(match parts.as_slice() {
        ["off"] => FailureLayer::Off,
        ["rates"] => FailureLayer::Rates {
            rates: FailureRates::default(),
        },
        ["rates", p] => FailureLayer::Rates {
            rates: FailureRates::uniform(p.parse().context("failure rate")?),
        },
        ["inject", verb] => FailureLayer::inject(verb.parse::<Verb>().map_err(|e| anyhow!(e))?, 1),
        ["inject", verb, n] => FailureLayer::inject(
            verb.parse::<Verb>().map_err(|e| anyhow!(e))?,
            n.parse().context("injection index")?,
        ),
        _ => bail!("unrecognized failure spec `{spec}`"),
    })
}

fn templates(dir: Option<&Path>) -> Result<PromptTemplates> {
    Ok(match dir {
        Some(d) => PromptTemplates::from_dir(d)?,
        None => PromptTemplates::default(),
    })
}

fn make_backend(kind: BackendKind, task: &TaskSpec) -> Result<Box<dyn Backend>, BackendError> {
    match kind {
        BackendKind::Scripted => ScriptedBackend::for_task(&task.id)
            .map(|b| Box::new(b) as Box<dyn Backend>)
            .ok_or_else(|| BackendError::Config(format!("no scripted plan for task `{}`", task.id))),
        BackendKind::Idle => Ok(Box::new(IdleBackend)),
        BackendKind::Http => Ok(Box::new(HttpBackend::new(HttpConfig::from_env())?)),
    }
}

#[allow(clippy::too_many_arguments)]
fn run(
    ids: Vec<String>,
    task_file: Option<PathBuf>,
    backend: BackendKind,
    trials: Option<u32>,
    seed: Option<u64>,
    ablation: Option<AblationKind>,
    failures: Option<String>,
    config: Option<PathBuf>,
    template_dir: Option<PathBuf>,
    out: Option<PathBuf>,
    format: ReportFormat,
) -> Result<()> {
    let mut suite = match &config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str::<SuiteConfig>(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => SuiteConfig::default(),
    };
    if let Some(t) = trials {
        suite.trials = t;
    }
    if let Some(s) = seed {
        suite.seed = s;
    }
    if let Some(f) = failures {
        suite.failures = parse_failures(&f)?;
    }
    if out.is_some() {
        suite.log_dir = out;
    }
    if suite.label == SuiteConfig::default().label {
        suite.label = match backend {
            BackendKind::Scripted => "scripted",
            BackendKind::Idle => "always-wait",
            BackendKind::Http => "llm",
        }
        .into();
    }
    let all = match task_file {
        Some(p) => load_tasks(&p)?,
        None => benchmark_tasks(),
    };
    let tasks = select_tasks(&all, &ids)?;
    let templates = templates(template_dir.as_deref())?;
    let factory = |t: &TaskSpec| make_backend(backend, t);
    let outcome = match ablation {
        Some(kind) => run_ablation(kind, &tasks, &factory, &suite, &templates),
        None => run_suite(&tasks, &factory, &suite, &templates),
    };
    match outcome {
        Ok(o) => {
            print!("{}", emit_report(&o.report, format));
            Ok(())
        }
        Err(e) => {
            for r in &e.results {
                eprintln!("{} trial {}: success={} steps={}", r.task.id, r.trial, r.success, r.steps);
            }
            Err(e.into())
        }
    }
}

fn replay(path: &Path, template_dir: Option<PathBuf>) -> Result<bool> {
    let log = EpisodeLog::load(path)?;
    let again = replay_episode(&log, &templates(template_dir.as_deref())?)?;
    let same = again.to_json() == log.to_json();
    println!(
        "{} trial {} seed {}: success={} steps={} replay {}",
        log.task.id,
        log.trial,
        log.seed,
        again.success,
        again.steps,
        if same { "identical" } else { "differs" }
    );
    Ok(same)
}

fn load_report(dir: &Path) -> Result<RunReport> {
    let path = dir.join("report.json");
    if path.exists() {
        let text = fs::read_to_string(&path)?;
        return serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()));
    }
    // Without a stored report, aggregate the episode logs directly.
    let label = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "results".into());
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut results = Vec::new();
    for p in paths {
        let log = EpisodeLog::load(&p)?;
        results.push(EpisodeResult {
            steps: if log.success { log.steps } else { log.budget },
            steps_taken: log.steps,
            task: log.task,
            trial: log.trial,
            seed: log.seed,
            label: label.clone(),
            success: log.success,
            log_path: Some(p),
        });
    }
    Ok(compute_metrics(&results)?)
}

fn report(dirs: &[PathBuf], format: ReportFormat) -> Result<()> {
    if dirs.is_empty() {
        bail!("no results directories given");
    }
    let reports = dirs.iter().map(|d| load_report(d)).collect::<Result<Vec<_>>>()?;
    match format {
        ReportFormat::Table => print!("{}", render_table(&reports.iter().collect::<Vec<_>>(), true)),
        ReportFormat::Json => {
            for r in &reports {
                print!("{}", emit_report(r, ReportFormat::Json));
            }
        }
    }
    Ok(())
}

fn validate(template_dir: Option<PathBuf>, seeds: u64) -> Result<bool> {
    let templates = templates(template_dir.as_deref())?;
    let mut ok = true;
    for problem in lint_templates(&templates) {
        ok = false;
        println!("template: {problem}");
    }
    for task in benchmark_tasks() {
        let backend = make_backend(BackendKind::Scripted, &task)?;
        let mut misses = Vec::new();
        for seed in 0..seeds {
            let config = SuiteConfig {
                seed,
                ..SuiteConfig::default()
            };
            let (r, _) = run_episode(&task, 0, backend.as_ref(), &config, &templates)?;
            if !r.success || r.steps != task.gt_steps {
                misses.push(format!("seed {seed}: success={} steps={}", r.success, r.steps));
            }
        }
        if misses.is_empty() {
            println!("{}: {} of {seeds} seeds finish in {} steps", task.id, seeds, task.gt_steps);
        } else {
            ok = false;
            println!("{}: {} seeds miss {} steps", task.id, misses.len(), task.gt_steps);
            for m in misses {
                println!("  {m}");
            }
        }
    }
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        _ => tracing::Level::DEBUG,
    };
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .init();
    let result = match cli.command {
        Command::Run {
            tasks,
            task_file,
            backend,
            trials,
            seed,
            ablation,
            failures,
            config,
            templates,
            out,
            format,
        } => run(
            tasks, task_file, backend, trials, seed, ablation, failures, config, templates, out, format,
        )
        .map(|_| true),
        Command::Replay { log, templates } => replay(&log, templates),
        Command::Report { dirs, format } => report(&dirs, format).map(|_| true),
        Command::Validate { templates, seeds } => validate(templates, seeds),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
