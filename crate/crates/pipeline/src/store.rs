//! Run directories: one directory per run, one JSON document per artifact
//! and an append-only JSON-lines log of iteration records.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::Mutex;
use procopt_core::moo::{IterationRecord, SteeringEvent};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{PipelineError, Result, Stage};

pub const RUN_SCHEMA: &str = "run-v1";

pub const STATE: &str = "state.json";
pub const RAW: &str = "dataset.raw.json";
pub const INGEST_REPORT: &str = "ingest_report.json";
pub const CLEAN: &str = "dataset.clean.json";
pub const LEDGER: &str = "ledger.jsonl";
pub const VIOLATIONS: &str = "violations.json";
pub const RANKING: &str = "ranking.json";
pub const CURVE: &str = "curve.json";
pub const EXHAUSTIVE: &str = "exhaustive.json";
pub const SELECTION: &str = "selection.json";
pub const MODEL: &str = "model.json";
pub const TRAINING: &str = "training.json";
pub const ITERATIONS: &str = "iterations.jsonl";
pub const OPTIMIZER: &str = "optimizer.json";
pub const ARCHIVE: &str = "archive.json";
pub const RECIPES: &str = "recipes.json";

/// Artifact files produced by each stage.
pub fn stage_artifacts(stage: Stage) -> &'static [&'static str] {
    match stage {
        Stage::Ingest => &[RAW, INGEST_REPORT],
        Stage::Clean => &[CLEAN, LEDGER, VIOLATIONS],
        Stage::Select => &[RANKING, CURVE, EXHAUSTIVE],
        Stage::Train => &[SELECTION, MODEL, TRAINING],
        Stage::Optimize => &[ITERATIONS, OPTIMIZER, ARCHIVE],
        Stage::Recipes => &[RECIPES],
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn exists(&self, name: &str) -> bool {
        self.path(name).is_file()
    }

    pub fn create(&self) -> Result<()> {
        fs::create_dir_all(&self.root).map_err(|e| PipelineError::io(&self.root, e))
    }

    /// Writes through a temporary file and a rename so readers never see a
    /// partial document.
    pub fn write_text(&self, name: &str, text: &str) -> Result<()> {
        self.create()?;
        let target = self.path(name);
        let tmp = self.path(&format!(".{name}.tmp"));
        fs::write(&tmp, text).map_err(|e| PipelineError::io(&tmp, e))?;
        fs::rename(&tmp, &target).map_err(|e| PipelineError::io(&target, e))
    }

    pub fn read_text(&self, name: &str) -> Result<String> {
        let p = self.path(name);
        fs::read_to_string(&p).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                PipelineError::NotFound(format!("artifact `{name}`"))
            } else {
                PipelineError::io(&p, e)
            }
        })
    }

    pub fn write_json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| PipelineError::io(&self.path(name), e))?;
        text.push('\n');
        self.write_text(name, &text)
    }

    pub fn read_json<T: DeserializeOwned>(&self, name: &str) -> Result<T> {
        let text = self.read_text(name)?;
        serde_json::from_str(&text).map_err(|e| PipelineError::io(&self.path(name), e))
    }

    pub fn remove(&self, name: &str) -> Result<()> {
        let p = self.path(name);
        match fs::remove_file(&p) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
            Err(e) => Err(PipelineError::io(&p, e)),
        }
    }

    /// Appends one iteration record as a single JSON line.
    pub fn append_iteration(&self, record: &IterationRecord) -> Result<()> {
        self.create()?;
        let p = self.path(ITERATIONS);
        let mut line = serde_json::to_string(record).map_err(|e| PipelineError::io(&p, e))?;
        line.push('\n');
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&p)
            .map_err(|e| PipelineError::io(&p, e))?;
        f.write_all(line.as_bytes()).map_err(|e| PipelineError::io(&p, e))
    }

    /// Complete iteration records; a trailing partial line is ignored.
    pub fn read_iterations(&self) -> Result<Vec<IterationRecord>> {
        let text = match self.read_text(ITERATIONS) {
            Ok(t) => t,
            Err(PipelineError::NotFound(_)) => return Ok(Vec::new()),
            Err(e) => return Err(e),
        };
        let p = self.path(ITERATIONS);
        text.split_inclusive('\n')
            .filter(|l| l.ends_with('\n') && !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| PipelineError::io(&p, e)))
            .collect()
    }

    /// Keeps only the first `n` iteration records.
    pub fn truncate_iterations(&self, n: usize) -> Result<()> {
        let records = self.read_iterations()?;
        if records.len() <= n {
            return Ok(());
        }
        let p = self.path(ITERATIONS);
        let mut text = String::new();
        for r in &records[..n] {
            text.push_str(&serde_json::to_string(r).map_err(|e| PipelineError::io(&p, e))?);
            text.push('\n');
        }
        self.write_text(ITERATIONS, &text)
    }

    /// Names of every artifact file present, sorted.
    pub fn artifact_names(&self) -> Result<Vec<String>> {
        let mut names = Vec::new();
        let entries = fs::read_dir(&self.root).map_err(|e| PipelineError::io(&self.root, e))?;
        for e in entries {
            let e = e.map_err(|e| PipelineError::io(&self.root, e))?;
            let name = e.file_name().to_string_lossy().into_owned();
            if e.path().is_file() && !name.starts_with('.') {
                names.push(name);
            }
        }
        names.sort();
        Ok(names)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Created,
    Cleaning,
    Selecting,
    Training,
    Optimizing,
    Paused,
    Done,
    Failed,
}

impl RunStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, RunStatus::Done | RunStatus::Failed)
    }

    pub fn accepts_steering(self) -> bool {
        matches!(self, RunStatus::Optimizing | RunStatus::Paused)
    }

    /// Status shown while a stage runs.
    pub fn for_stage(stage: Stage) -> Self {
        match stage {
            Stage::Ingest | Stage::Clean => RunStatus::Cleaning,
            Stage::Select => RunStatus::Selecting,
            Stage::Train => RunStatus::Training,
            Stage::Optimize | Stage::Recipes => RunStatus::Optimizing,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: Stage,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    #[serde(default)]
    pub add: Vec<String>,
    #[serde(default)]
    pub remove: Vec<String>,
}

/// A steering request as received, with the number of iterations that were
/// complete at the time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringLogEntry {
    pub after_k: usize,
    pub event: SteeringEvent,
}

/// The persisted run document (`state.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema: String,
    pub id: String,
    pub seed: u64,
    pub status: RunStatus,
    pub completed: Vec<Stage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<StageFailure>,
    /// The curve is ready and the run waits for expert overrides.
    #[serde(default)]
    pub awaiting_overrides: bool,
    /// Overrides were submitted explicitly (API or CLI).
    #[serde(default)]
    pub overrides_submitted: bool,
    /// Overrides in effect: the configured ones unless replaced through the
    /// API or CLI.
    pub overrides: Overrides,
    #[serde(default)]
    pub steering: Vec<SteeringLogEntry>,
    pub config: PipelineConfig,
}

impl RunRecord {
    pub fn new(config: PipelineConfig, seed: u64) -> Self {
        let overrides = Overrides { add: config.selection.add.clone(), remove: config.selection.remove.clone() };
        Self {
            schema: RUN_SCHEMA.into(),
            id: config.run_id(seed),
            seed,
            status: RunStatus::Created,
            completed: Vec::new(),
            error: None,
            awaiting_overrides: false,
            overrides_submitted: false,
            overrides,
            steering: Vec::new(),
            config,
        }
    }

    pub fn is_complete(&self, stage: Stage) -> bool {
        self.completed.contains(&stage)
    }

    /// Overrides can change until training starts.
    pub fn accepts_overrides(&self) -> bool {
        !self.is_complete(Stage::Train)
            && matches!(
                self.status,
                RunStatus::Created | RunStatus::Cleaning | RunStatus::Selecting | RunStatus::Failed
            )
    }
}

/// Shared, persisted run document. Every mutation goes through
/// [`RecordHandle::update`], which serializes writers and rewrites
/// `state.json`.
#[derive(Debug, Clone)]
pub struct RecordHandle {
    dir: RunDir,
    record: Arc<Mutex<RunRecord>>,
}

impl RecordHandle {
    pub fn new(dir: RunDir, record: RunRecord) -> Self {
        Self { dir, record: Arc::new(Mutex::new(record)) }
    }

    /// Loads `state.json` from a run directory.
    pub fn open(dir: RunDir) -> Result<Self> {
        let record: RunRecord = dir.read_json(STATE)?;
        Ok(Self::new(dir, record))
    }

    pub fn dir(&self) -> &RunDir {
        &self.dir
    }

    pub fn snapshot(&self) -> RunRecord {
        self.record.lock().clone()
    }

    pub fn update<T>(&self, f: impl FnOnce(&mut RunRecord) -> T) -> Result<T> {
        let mut guard = self.record.lock();
        let out = f(&mut guard);
        self.dir.write_json(STATE, &*guard)?;
        Ok(out)
    }

    /// Like [`Self::update`], but `f` may refuse the change.
    pub fn try_update<T>(&self, f: impl FnOnce(&mut RunRecord) -> Result<T>) -> Result<T> {
        let mut guard = self.record.lock();
        let mut draft = guard.clone();
        let out = f(&mut draft)?;
        self.dir.write_json(STATE, &draft)?;
        *guard = draft;
        Ok(out)
    }
}
