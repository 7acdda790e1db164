//! `memograph` command-line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use memograph::embedding::{EmbeddingSpec, DEFAULT_SEED};
use memograph::harness::report::render;
use memograph::harness::{
    generate_family, parse_rows, run_experiment, summarize, sweep, ExperimentSettings, Family, FamilyConfig, Mode,
    ReportFormat, RunConfig, SweepGrid, SweepRow,
};
use memograph::memo::TaskSpec;
use memograph::repository::{QueryParams, Store, StoreError, TaskProbe};
use memograph::{Error, ReasoningGraph};

#[derive(Parser)]
#[command(name = "memograph", version, about = "Graph memoization store and experiment harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create an empty store.
    Init {
        store: PathBuf,
        #[arg(long, default_value_t = memograph::graph::DEFAULT_DIM)]
        dim: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
    /// Generate a task family and its cold plans.
    Gen {
        /// Family config (JSON, FamilyConfig keys).
        #[arg(long)]
        family: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a task sequence against a store, cold or memoized.
    Run {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, value_parser = parse_mode)]
        mode: Mode,
        /// Run config: reuse-policy keys plus optional cost/similarity/family sections.
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Overrides the family seed and seeds the simulated executor.
        #[arg(long)]
        seed: Option<u64>,
        /// Directory written by `gen`; by default the family comes from the config.
        #[arg(long)]
        tasks: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep lambda / tau_margin / beam width over a grid.
    Sweep {
        #[arg(long)]
        grid: PathBuf,
        /// Output table; `.json` writes JSON, anything else CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Retrieve stored subgraphs for a task description.
    Query {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        text: String,
        #[arg(long, default_value_t = 5)]
        top_k: usize,
        #[arg(long, default_value_t = 0.0)]
        tau_sim: f64,
    },
    /// Convert a sweep table or run report to CSV or JSON rows.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_parser = parse_format)]
        format: ReportFormat,
        /// Defaults to standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidConfig(_) | Error::Json(_) => 2,
        Error::Store(StoreError::Corrupt(_) | StoreError::Mismatch(_)) => 3,
        _ => 4,
    }
}

fn read(path: &Path) -> Result<Vec<u8>, Error> {
    std::fs::read(path).map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), Error> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| io_failure(path, e))
}

fn io_failure(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn pretty(v: &impl serde::Serialize) -> Result<String, Error> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

#[derive(serde::Serialize, serde::Deserialize)]
struct GeneratedTask {
    task: TaskSpec,
    plan: ReasoningGraph,
}

fn load_tasks(dir: &Path, config: FamilyConfig) -> Result<Family, Error> {
    let items: Vec<GeneratedTask> = serde_json::from_slice(&read(&dir.join("tasks.json"))?)
        .map_err(|e| Error::InvalidConfig(format!("tasks.json: {e}")))?;
    let (tasks, plans) = items.into_iter().map(|g| (g.task, g.plan)).unzip();
    Ok(Family {
        config,
        tasks,
        plans,
        shared: Vec::new(),
    })
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Init { store, dim, seed } => {
            let s = Store::create(
                &store,
                EmbeddingSpec {
                    dim,
                    seed,
                    ..EmbeddingSpec::default()
                },
            )?;
            println!("{}", serde_json::to_string(s.meta())?);
        }
        Command::Gen { family, out } => {
            let cfg: FamilyConfig =
                serde_json::from_slice(&read(&family)?).map_err(|e| Error::InvalidConfig(format!("family config: {e}")))?;
            let fam = generate_family(&cfg, &EmbeddingSpec::default().embedder()?)?;
            let items: Vec<GeneratedTask> = fam
                .tasks
                .into_iter()
                .zip(fam.plans)
                .map(|(task, plan)| GeneratedTask { task, plan })
                .collect();
            write(&out.join("tasks.json"), pretty(&items)?)?;
            write(&out.join("family.json"), pretty(&cfg)?)?;
            println!("{} tasks written to {}", items.len(), out.display());
        }
        Command::Run {
            store,
            mode,
            policy,
            seed,
            tasks,
            out,
        } => {
            let mut cfg = match &policy {
                Some(p) => RunConfig::from_json(&read(p)?)?,
                None => RunConfig::default(),
            };
            if let Some(seed) = seed {
                cfg.family.seed = seed;
            }
            let store = Store::open(&store)?;
            let family = match &tasks {
                Some(dir) => load_tasks(dir, cfg.family.clone())?,
                None => generate_family(&cfg.family, &store.meta().embedding.embedder()?)?,
            };
            let settings = ExperimentSettings {
                policy: cfg.policy.clone(),
                coeffs: cfg.cost,
                similarity: cfg.similarity,
                latency_jitter_pct: cfg.latency_jitter_pct,
                exec_seed: seed.unwrap_or(0),
            };
            let reports = run_experiment(&family.tasks, &family, &store, &settings, mode)?;
            let summary = summarize(&reports);
            let doc = json!({
                "config": cfg.to_value(),
                "mode": mode,
                "summary": summary,
                "reports": reports,
            });
            write(&out, pretty(&doc)?)?;
            println!("{}", serde_json::to_string(&summary)?);
        }
        Command::Sweep { grid, out } => {
            let (grid, base) = SweepGrid::from_json(&read(&grid)?)?;
            let rows = sweep(&grid, &base)?;
            let format = if out.extension().is_some_and(|e| e == "json") {
                ReportFormat::Json
            } else {
                ReportFormat::Csv
            };
            write(&out, render(&rows, format)?)?;
            println!("{} rows written to {}", rows.len(), out.display());
        }
        Command::Query {
            store,
            text,
            top_k,
            tau_sim,
        } => {
            let store = Store::open(&store)?;
            let embedding = store.meta().embedding.embedder()?.embed_text(&text);
            let params = QueryParams {
                top_k,
                tau_sim,
                depth: memograph::memo::ReusePolicy::default().candidate_depth,
            };
            let probe = TaskProbe { embedding, graph: None };
            let results = store.snapshot().query(&probe, &params, &Default::default())?;
            for r in results {
                println!("{}", serde_json::to_string(&r)?);
            }
        }
        Command::Report { input, format, out } => {
            let text = String::from_utf8(read(&input)?).map_err(|_| Error::InvalidConfig("input is not UTF-8".into()))?;
            let rows = rows_from_input(&text)?;
            if rows.is_empty() {
                return Err(Error::InvalidConfig("input holds no rows".into()));
            }
            let rendered = render(&rows, format)?;
            match out {
                Some(p) => write(&p, rendered)?,
                None => print!("{rendered}"),
            }
        }
    }
    Ok(())
}

/// Sweep tables pass through; a run report becomes one row from its summary.
fn rows_from_input(text: &str) -> Result<Vec<SweepRow>, Error> {
    if let Ok(Value::Object(doc)) = serde_json::from_str::<Value>(text) {
        let (Some(config), Some(summary)) = (doc.get("config"), doc.get("summary")) else {
            return Err(Error::InvalidConfig("expected a run report with config and summary".into()));
        };
        let cfg = RunConfig::from_value(config.clone())?;
        let s: memograph::harness::Summary = serde_json::from_value(summary.clone())?;
        return Ok(vec![SweepRow {
            lambda: cfg.policy.lambda,
            tau_margin: cfg.policy.tau_margin,
            beam: cfg.policy.beam_width,
            mean_cost: s.mean_cost,
            mean_inconsistency: s.mean_inconsistency,
            mean_rho: s.mean_rho,
            mean_loss: s.mean_loss,
        }]);
    }
    parse_rows(text)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("memograph: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
