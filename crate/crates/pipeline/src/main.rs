//! `procopt` command line: run pipeline stages, serve the HTTP API, or
//! verify that a run replays exactly.
//!
//! Exit codes: 0 on success, 1 on invalid configuration or arguments, 2 when
//! a stage fails.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use procopt::error::{PipelineError, Result, Stage};
use procopt::store::{self, RecordHandle, RunDir};
use procopt::{advance, open_run, PipelineConfig};
use procopt_core::cleaning::ReductionLedger;
use procopt_core::Dataset;

#[derive(Debug, Parser)]
#[command(name = "procopt", version, about = "Surrogate-based multi-objective process optimization")]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; every random stream derives from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Run directory; defaults to `<service.store>/<run id>`.
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse and homogenize the source files.
    Ingest,
    /// Clean the raw dataset and write the reduction ledger.
    Clean,
    /// Rank features and compute the selection curve, optionally recording
    /// expert overrides.
    Select {
        #[arg(long = "add")]
        add: Vec<String>,
        #[arg(long = "remove")]
        remove: Vec<String>,
    },
    /// Train and screen the surrogate families.
    Train,
    /// Run the multi-objective optimizer.
    Optimize,
    /// Reconstruct the top recipes (runs every pending stage).
    Recipes,
    /// Serve the HTTP API.
    Serve {
        /// Listen address; defaults to `service.bind` or 127.0.0.1:8080.
        #[arg(long)]
        bind: Option<String>,
        /// Directory holding one subdirectory per run; defaults to
        /// `service.store` or `runs`.
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Check that the ledger replays onto the cleaned dataset and that a
    /// fresh run reproduces every artifact byte for byte.
    Replay,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    tracing_subscriber::fmt().with_env_filter(env_filter()).with_writer(std::io::stderr).init();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn env_filter() -> tracing_subscriber::EnvFilter {
    tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into())
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    let path = path.ok_or_else(|| PipelineError::validation("--config is required for this command"))?;
    PipelineConfig::load(path)
}

fn run_dir(cli: &Cli, config: &PipelineConfig) -> RunDir {
    match &cli.run_dir {
        Some(d) => RunDir::new(d),
        None => RunDir::new(Path::new(&config.service.store).join(config.run_id(cli.seed))),
    }
}

fn execute(cli: Cli) -> Result<()> {
    if let Command::Serve { bind, store } = &cli.command {
        let config = cli.config.as_deref().map(PipelineConfig::load).transpose()?;
        let service = config.map(|c| c.service).unwrap_or_default();
        let bind = bind.clone().unwrap_or(service.bind);
        let store = store.clone().unwrap_or_else(|| PathBuf::from(service.store));
        return procopt::service::serve(&bind, &store);
    }
    let config = load_config(cli.config.as_deref())?;
    let dir = run_dir(&cli, &config);
    if let Command::Replay = cli.command {
        return replay(config, cli.seed, dir);
    }
    let handle = open_run(config, cli.seed, dir)?;
    let until = match &cli.command {
        Command::Ingest => Stage::Ingest,
        Command::Clean => Stage::Clean,
        Command::Select { add, remove } => {
            if !add.is_empty() || !remove.is_empty() {
                submit_overrides(&handle, add, remove)?;
            }
            Stage::Select
        }
        Command::Train => Stage::Train,
        Command::Optimize => Stage::Optimize,
        Command::Recipes => Stage::Recipes,
        Command::Serve { .. } | Command::Replay => unreachable!(),
    };
    let record = advance(&handle, until, &mut ())?;
    let completed: Vec<&str> = record.completed.iter().map(|s| s.name()).collect();
    println!("run {}: {:?}, completed [{}]", record.id, record.status, completed.join(", "));
    if record.awaiting_overrides && until > Stage::Select {
        println!("waiting for expert overrides: rerun `select` with --add/--remove, or with neither to accept");
    }
    println!("{}", handle.dir().root().display());
    Ok(())
}

fn submit_overrides(handle: &RecordHandle, add: &[String], remove: &[String]) -> Result<()> {
    handle.try_update(|r| {
        if !r.accepts_overrides() {
            return Err(PipelineError::Conflict("overrides are closed once training has started".into()));
        }
        r.overrides.add = add.to_vec();
        r.overrides.remove = remove.to_vec();
        r.overrides_submitted = true;
        r.awaiting_overrides = false;
        Ok(())
    })
}

fn replay(config: PipelineConfig, seed: u64, dir: RunDir) -> Result<()> {
    let raw: Dataset = dir.read_json(store::RAW)?;
    let clean: Dataset = dir.read_json(store::CLEAN)?;
    let ledger = ReductionLedger::from_jsonl(&dir.read_text(store::LEDGER)?)
        .map_err(PipelineError::stage(Stage::Clean))?;
    let replayed = ledger.replay(&raw).map_err(PipelineError::stage(Stage::Clean))?;
    if serde_json::to_string(&replayed).ok() != serde_json::to_string(&clean).ok() {
        return Err(PipelineError::StageMessage {
            stage: Stage::Clean,
            message: "ledger replay does not reproduce the cleaned dataset".into(),
        });
    }
    println!("ledger replay: {} entries reproduce the cleaned dataset", ledger.entries.len());

    let original = RecordHandle::open(dir.clone())?.snapshot();
    let scratch = tempfile::tempdir().map_err(|e| PipelineError::io(Path::new("tempdir"), e))?;
    let fresh = RunDir::new(scratch.path());
    let handle = open_run(config, seed, fresh.clone())?;
    if original.overrides_submitted {
        submit_overrides(&handle, &original.overrides.add, &original.overrides.remove)?;
    }
    let last = original.completed.iter().max().copied();
    if let Some(last) = last {
        advance(&handle, last, &mut ())?;
    }
    let mut mismatched = Vec::new();
    for name in dir.artifact_names()? {
        if name == store::STATE {
            continue;
        }
        let a = std::fs::read(dir.path(&name)).map_err(|e| PipelineError::io(&dir.path(&name), e))?;
        match std::fs::read(fresh.path(&name)) {
            Ok(b) if a == b => {}
            _ => mismatched.push(name),
        }
    }
    if !mismatched.is_empty() {
        return Err(PipelineError::StageMessage {
            stage: last.unwrap_or(Stage::Ingest),
            message: format!("artifacts differ on replay: {}", mismatched.join(", ")),
        });
    }
    println!("replay: every artifact reproduced byte for byte");
    Ok(())
}
