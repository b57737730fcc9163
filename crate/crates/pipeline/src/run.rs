//! End-to-end orchestration: ingest → clean → select → train (with
//! screening) → optimize → recipes, persisted stage by stage so a run can
//! resume from any completed stage.

use std::sync::mpsc::Receiver;

use procopt_core::cleaning::{self, default_fill, LedgerEntry, ReductionLedger, RuleViolation};
use procopt_core::ingestion::{homogenize, parse_source, IngestReport};
use procopt_core::moo::{
    self, pareto_filter, rank_by_contribution, Candidate, Evaluator, IterationRecord, Observer, RunState,
    SteeringEvent,
};
use procopt_core::selection::{
    apply_expert_overrides, exhaustive_search, nested_rmse_curve, rank_importance, SelectionCurve,
    SubsetScore,
};
use procopt_core::surrogate::{self, merit_scalarize, Family, MeritModel, ScreeningVerdict, SurrogateModel};
use procopt_core::{seed, Dataset, Direction, MetricReport};
use serde::{Deserialize, Serialize};

use crate::config::{ModelMetric, PipelineConfig, DEFAULT_K_MAX};
use crate::error::{PipelineError, Result, Stage};
use crate::recipe::{reconstruct_recipe, PredictedObjective, Provenance, Recipe};
use crate::store::{self, RecordHandle, RunDir, RunRecord, RunStatus, StageFailure};

/// Callbacks a driver (CLI or service) can hook into a run.
pub trait RunHooks {
    /// Channel the optimizer drains for steering events between
    /// iterations. Called once per optimize stage.
    fn take_steering(&mut self) -> Option<Receiver<SteeringEvent>> {
        None
    }
    fn on_iteration(&mut self, _record: &IterationRecord) {}
    fn on_status(&mut self, _record: &RunRecord) {}
}

impl RunHooks for () {}

/// The features the model is trained on, with the fill values of the
/// cleaned inputs left out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionDoc {
    pub features: Vec<String>,
    /// `curve` or `exhaustive`.
    pub source: String,
    pub chosen_k: usize,
    pub added: Vec<String>,
    pub removed: Vec<String>,
    pub unselected: Vec<LedgerEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCandidate {
    pub family: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalized_train_rmse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalized_test_rmse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_adjusted_r2: Option<f64>,
    #[serde(default)]
    pub metrics: Vec<MetricReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<ScreeningVerdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub features: Vec<String>,
    pub objectives: Vec<String>,
    pub metric: ModelMetric,
    pub candidates: Vec<ModelCandidate>,
    pub chosen: Family,
}

/// Optimizer state after the last persisted iteration; the records
/// themselves live in the iteration log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSnapshot {
    pub iterations: usize,
    pub state: RunState,
}

/// The final archive with what is needed to read it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveDoc {
    pub k: usize,
    pub features: Vec<String>,
    /// Optimized objective names (`merit` in merit mode).
    pub objectives: Vec<String>,
    pub directions: Vec<Direction>,
    pub reference: Vec<f64>,
    pub stopped: bool,
    pub points: Vec<Candidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecipesDoc {
    pub run_id: String,
    pub k: usize,
    pub features: Vec<String>,
    pub objectives: Vec<String>,
    pub recipes: Vec<Recipe>,
}

/// Surrogate predictions over the unit box, optionally collapsed to a
/// merit score.
pub struct ModelEvaluator<'a> {
    pub model: &'a SurrogateModel,
    pub merit: Option<MeritModel<'a>>,
}

impl Evaluator for ModelEvaluator<'_> {
    fn dim(&self) -> usize {
        self.model.n_features()
    }

    fn n_objectives(&self) -> usize {
        if self.merit.is_some() {
            1
        } else {
            self.model.n_outputs()
        }
    }

    fn evaluate(&self, unit: &[f64]) -> procopt_core::Result<Vec<f64>> {
        let x = self.decode(unit);
        let p = self.model.predict(&x)?;
        Ok(match &self.merit {
            Some(m) => vec![m.score(&p.values)],
            None => p.values,
        })
    }

    fn decode(&self, unit: &[f64]) -> Vec<f64> {
        self.model.normalization.from_unit(unit)
    }
}

/// Opens the run for `(config, seed)` in `dir`, creating it when absent.
pub fn open_run(config: PipelineConfig, seed: u64, dir: RunDir) -> Result<RecordHandle> {
    config.validate()?;
    if dir.exists(store::STATE) {
        let handle = RecordHandle::open(dir)?;
        let id = config.run_id(seed);
        let existing = handle.snapshot();
        if existing.id != id {
            return Err(PipelineError::Conflict(format!(
                "{} holds run {} but this configuration and seed give run {id}",
                handle.dir().root().display(),
                existing.id
            )));
        }
        return Ok(handle);
    }
    let handle = RecordHandle::new(dir, RunRecord::new(config, seed));
    handle.update(|_| ())?;
    Ok(handle)
}

/// Runs every stage from raw sources to recipes in `dir`.
pub fn run_pipeline(config: PipelineConfig, seed: u64, dir: RunDir) -> Result<RunRecord> {
    let handle = open_run(config, seed, dir)?;
    advance(&handle, Stage::Recipes, &mut ())
}

/// Runs the stages that are not complete yet, up to and including `until`.
/// Stops early, without error, while the run waits for expert overrides.
pub fn advance(handle: &RecordHandle, until: Stage, hooks: &mut dyn RunHooks) -> Result<RunRecord> {
    for stage in Stage::ALL.into_iter().filter(|s| *s <= until) {
        let record = handle.snapshot();
        if record.is_complete(stage) {
            continue;
        }
        if stage == Stage::Train && record.awaiting_overrides {
            return Ok(record);
        }
        let record = handle.update(|r| {
            r.status = RunStatus::for_stage(stage);
            r.error = None;
            r.clone()
        })?;
        hooks.on_status(&record);
        let ctx = Ctx { handle, dir: handle.dir(), config: &record.config, seed: record.seed };
        let outcome = match stage {
            Stage::Ingest => ctx.ingest(),
            Stage::Clean => ctx.clean(),
            Stage::Select => ctx.select(),
            Stage::Train => ctx.train(),
            Stage::Optimize => ctx.optimize(hooks),
            Stage::Recipes => ctx.recipes(),
        };
        if let Err(e) = outcome {
            let message = match &e {
                PipelineError::Stage { source, .. } => source.to_string(),
                PipelineError::StageMessage { message, .. } => message.clone(),
                other => other.to_string(),
            };
            let record = handle.update(|r| {
                r.status = RunStatus::Failed;
                r.error = Some(StageFailure { stage, message });
                r.clone()
            })?;
            hooks.on_status(&record);
            return Err(match e {
                PipelineError::Stage { .. } | PipelineError::StageMessage { .. } => e,
                other => PipelineError::StageMessage { stage, message: other.to_string() },
            });
        }
        let record = handle.update(|r| {
            r.completed.push(stage);
            if stage == Stage::Select {
                r.awaiting_overrides = r.config.selection.await_overrides && !r.overrides_submitted;
            }
            if stage == Stage::Recipes {
                r.status = RunStatus::Done;
            }
            r.clone()
        })?;
        hooks.on_status(&record);
    }
    Ok(handle.snapshot())
}

struct Ctx<'a> {
    handle: &'a RecordHandle,
    dir: &'a RunDir,
    config: &'a PipelineConfig,
    seed: u64,
}

fn msg(stage: Stage, message: impl Into<String>) -> PipelineError {
    PipelineError::StageMessage { stage, message: message.into() }
}

impl Ctx<'_> {
    fn objectives(&self) -> Vec<String> {
        self.config.objectives.outputs()
    }

    fn ingest(&self) -> Result<()> {
        let schema = self.config.schema();
        let mut parsed = Vec::new();
        let mut reports: Vec<IngestReport> = Vec::new();
        for f in &self.config.sources.files {
            let content = match (&f.content, &f.path) {
                (Some(c), _) => c.clone(),
                (None, Some(p)) => std::fs::read_to_string(p).map_err(|e| msg(Stage::Ingest, format!("{p}: {e}")))?,
                (None, None) => return Err(msg(Stage::Ingest, format!("source `{}` has no content", f.id))),
            };
            let desc = f.descriptor();
            let (rows, report) = parse_source(&desc, &schema, content.as_bytes()).map_err(PipelineError::stage(Stage::Ingest))?;
            parsed.push((rows, desc));
            reports.push(report);
        }
        let raw = homogenize(&schema, &parsed).map_err(PipelineError::stage(Stage::Ingest))?;
        self.dir.write_json(store::INGEST_REPORT, &reports)?;
        self.dir.write_json(store::RAW, &raw)
    }

    fn clean(&self) -> Result<()> {
        let raw: Dataset = self.dir.read_json(store::RAW)?;
        let outcome = cleaning::clean(&raw, &self.config.cleaning_config()).map_err(PipelineError::stage(Stage::Clean))?;
        let ledger = outcome.ledger.to_jsonl().map_err(PipelineError::stage(Stage::Clean))?;
        self.dir.write_text(store::LEDGER, &ledger)?;
        self.dir.write_json::<Vec<RuleViolation>>(store::VIOLATIONS, &outcome.violations)?;
        self.dir.write_json(store::CLEAN, &outcome.dataset)
    }

    fn select(&self) -> Result<()> {
        let clean: Dataset = self.dir.read_json(store::CLEAN)?;
        let objectives = self.objectives();
        let ranking = rank_importance(&clean, &objectives).map_err(PipelineError::stage(Stage::Select))?;
        let n = ranking.features.len();
        let k_max = self.config.selection.k_max.unwrap_or(DEFAULT_K_MAX).min(n);
        let plan = self.config.fit_plan();
        let curve = nested_rmse_curve(&clean, &ranking, &plan, k_max, seed::derive(self.seed, "select"))
            .map_err(PipelineError::stage(Stage::Select))?;
        if let Some(ex) = &self.config.selection.exhaustive {
            let candidates = ranking.top(ex.candidates.min(n));
            let hi = ex.max_size.min(candidates.len());
            let lo = ex.min_size.min(hi);
            let results = exhaustive_search(
                &clean,
                &candidates,
                &objectives,
                lo..=hi,
                &plan,
                seed::derive(self.seed, "exhaustive"),
                ex.budget,
            )
            .map_err(PipelineError::stage(Stage::Select))?;
            self.dir.write_json::<Vec<SubsetScore>>(store::EXHAUSTIVE, &results)?;
        }
        self.dir.write_json(store::RANKING, &ranking)?;
        self.dir.write_json(store::CURVE, &curve)
    }

    fn train(&self) -> Result<()> {
        let overrides = self.handle.snapshot().overrides;
        let clean: Dataset = self.dir.read_json(store::CLEAN)?;
        let mut curve: SelectionCurve = self.dir.read_json(store::CURVE)?;
        let mut source = "curve";
        if self.config.selection.exhaustive.as_ref().is_some_and(|e| e.adopt) {
            let results: Vec<SubsetScore> = self.dir.read_json(store::EXHAUSTIVE)?;
            if let Some(best) = results.iter().find(|s| s.score.is_some()) {
                curve.chosen = curve.ranked.iter().filter(|n| best.features.contains(n)).cloned().collect();
                curve.chosen_k = curve.chosen.len();
                source = "exhaustive";
            }
        }
        let curve = apply_expert_overrides(&curve, &overrides.add, &overrides.remove)
            .map_err(PipelineError::stage(Stage::Train))?;
        let features: Vec<String> = clean.input_names().into_iter().filter(|n| curve.chosen.contains(n)).collect();
        let unselected = clean
            .inputs
            .iter()
            .enumerate()
            .filter(|(_, p)| !features.contains(&p.name))
            .map(|(j, p)| LedgerEntry::DroppedUnselected { name: p.name.clone(), fill_value: default_fill(&clean, j) })
            .collect();
        let selection = SelectionDoc {
            features: features.clone(),
            source: source.into(),
            chosen_k: curve.chosen_k,
            added: curve.added.clone(),
            removed: curve.removed.clone(),
            unselected,
        };
        self.dir.write_json(store::SELECTION, &selection)?;

        let objectives = self.objectives();
        let sur = &self.config.surrogate;
        let train_seed = seed::derive(self.seed, "train");
        let mut candidates = Vec::new();
        let mut models = Vec::new();
        for &family in &sur.families {
            match surrogate::train(&clean, &features, &objectives, &sur.config(family), train_seed) {
                Ok(m) => {
                    let verdict = m.screen(&sur.screening);
                    candidates.push(ModelCandidate {
                        family,
                        normalized_train_rmse: Some(m.normalized_train_rmse()).filter(|v| v.is_finite()),
                        normalized_test_rmse: Some(m.normalized_test_rmse()).filter(|v| v.is_finite()),
                        mean_adjusted_r2: m.mean_adjusted_r2().filter(|v| v.is_finite()),
                        metrics: m.metrics.clone(),
                        verdict: Some(verdict),
                        error: None,
                    });
                    models.push(Some(m));
                }
                Err(e) => {
                    candidates.push(ModelCandidate {
                        family,
                        normalized_train_rmse: None,
                        normalized_test_rmse: None,
                        mean_adjusted_r2: None,
                        metrics: Vec::new(),
                        verdict: None,
                        error: Some(e.to_string()),
                    });
                    models.push(None);
                }
            }
        }
        let score = |c: &ModelCandidate| match sur.metric {
            ModelMetric::RmseTest => c.normalized_test_rmse.unwrap_or(f64::INFINITY),
            ModelMetric::AdjustedR2 => -c.mean_adjusted_r2.unwrap_or(f64::NEG_INFINITY),
        };
        let best = (0..candidates.len())
            .filter(|&i| candidates[i].verdict.as_ref().is_some_and(|v| v.passed))
            .min_by(|&a, &b| score(&candidates[a]).total_cmp(&score(&candidates[b])).then(a.cmp(&b)));
        let report = |chosen| TrainingReport {
            features: features.clone(),
            objectives: objectives.clone(),
            metric: sur.metric,
            candidates: candidates.clone(),
            chosen,
        };
        let Some(best) = best else {
            let reasons: Vec<String> = candidates
                .iter()
                .map(|c| {
                    let why = match (&c.error, &c.verdict) {
                        (Some(e), _) => e.clone(),
                        (None, Some(v)) => v.reasons.join("; "),
                        (None, None) => "not trained".into(),
                    };
                    format!("{}: {why}", c.family)
                })
                .collect();
            self.dir.write_json(store::TRAINING, &report(sur.families[0]))?;
            return Err(msg(Stage::Train, format!("no model passed screening ({})", reasons.join(" | "))));
        };
        let model = models[best].take().expect("screened model exists");
        self.dir.write_json(store::TRAINING, &report(model.family))?;
        let json = model.to_json().map_err(PipelineError::stage(Stage::Train))?;
        self.dir.write_text(store::MODEL, &(json + "\n"))
    }

    fn optimize(&self, hooks: &mut dyn RunHooks) -> Result<()> {
        let model = load_model(self.dir)?;
        let clean: Dataset = self.dir.read_json(store::CLEAN)?;
        let obj = &self.config.objectives;
        let merit_fn = obj.merit();
        let merit = match &merit_fn {
            Some(m) => Some(merit_scalarize(&model, m).map_err(PipelineError::stage(Stage::Optimize))?),
            None => None,
        };
        let directions = obj.directions();
        let out_idx = clean.output_indices(&obj.outputs()).map_err(PipelineError::stage(Stage::Optimize))?;
        let observed: Vec<Vec<f64>> = clean
            .rows
            .iter()
            .map(|r| {
                let v: Vec<f64> = out_idx.iter().map(|&k| r.output(k)).collect();
                match &merit {
                    Some(m) => vec![m.score(&v)],
                    None => v,
                }
            })
            .collect();
        let reference = match &self.config.optimizer.reference {
            Some(r) => r.clone(),
            None => default_reference(&observed, &directions, self.config.optimizer.reference_margin),
        };
        let opt_config = self.config.optimizer.build(directions.clone(), reference);

        let experiments: Vec<Vec<f64>> = if self.config.optimizer.use_experiments {
            let feat_idx = clean.input_indices(&model.features).map_err(PipelineError::stage(Stage::Optimize))?;
            let (front, _) = pareto_filter(&observed, &directions);
            front
                .iter()
                .map(|&i| {
                    let x: Vec<f64> = feat_idx.iter().map(|&j| clean.rows[i].input(j)).collect();
                    model.normalization.to_unit(&x).into_iter().map(|u| u.clamp(0.0, 1.0)).collect()
                })
                .collect()
        } else {
            Vec::new()
        };

        let state = if self.dir.exists(store::OPTIMIZER) {
            let snap: OptimizerSnapshot = self.dir.read_json(store::OPTIMIZER)?;
            self.dir.truncate_iterations(snap.iterations)?;
            let records = self.dir.read_iterations()?;
            if records.len() != snap.iterations {
                return Err(msg(
                    Stage::Optimize,
                    format!("iteration log holds {} records, snapshot expects {}", records.len(), snap.iterations),
                ));
            }
            let mut state = snap.state;
            state.records = records;
            state
        } else {
            self.dir.remove(store::ITERATIONS)?;
            RunState::new(opt_config, seed::derive(self.seed, "optimize")).map_err(PipelineError::stage(Stage::Optimize))?
        };

        let evaluator = ModelEvaluator { model: &model, merit };
        let steering = hooks.take_steering();
        let mut observer = PersistObserver { handle: self.handle, hooks, error: None };
        let state = moo::run(&evaluator, state, &experiments, steering.as_ref(), &mut observer)
            .map_err(PipelineError::stage(Stage::Optimize))?;
        if let Some(e) = observer.error {
            return Err(e);
        }
        write_snapshot(self.dir, &state)?;
        let archive = ArchiveDoc {
            k: state.iterations_done(),
            features: model.features.clone(),
            objectives: if merit_fn.is_some() { vec!["merit".into()] } else { obj.outputs() },
            directions: state.config.directions.clone(),
            reference: state.config.reference.clone(),
            stopped: state.stopped,
            points: state.archive.clone(),
        };
        self.dir.write_json(store::ARCHIVE, &archive)
    }

    fn recipes(&self) -> Result<()> {
        let model = load_model(self.dir)?;
        let raw: Dataset = self.dir.read_json(store::RAW)?;
        let archive: ArchiveDoc = self.dir.read_json(store::ARCHIVE)?;
        let selection: SelectionDoc = self.dir.read_json(store::SELECTION)?;
        let ledger = load_ledger(self.dir)?;
        let mut entries = ledger.entries;
        entries.extend(selection.unselected.iter().cloned());
        let merit = match self.config.objectives.merit() {
            Some(m) => Some(merit_scalarize(&model, &m).map_err(PipelineError::stage(Stage::Recipes))?),
            None => None,
        };
        let points: Vec<Vec<f64>> = archive.points.iter().map(|c| c.objectives.clone()).collect();
        let contributions =
            moo::hypervolume_contributions(&points, &archive.reference, &archive.directions).map_err(PipelineError::stage(Stage::Recipes))?;
        let order = rank_by_contribution(&points, &archive.reference, &archive.directions)
            .map_err(PipelineError::stage(Stage::Recipes))?;
        let run_id = self.handle.snapshot().id;
        let mut recipes = Vec::new();
        for (rank, &i) in order.iter().take(self.config.optimizer.top_k).enumerate() {
            let c = &archive.points[i];
            let recon = reconstruct_recipe(&model.features, &c.x, &raw.inputs, &entries, &self.config.rules)
                .map_err(|e| msg(Stage::Recipes, e.to_string()))?;
            let p = model.predict(&c.x).map_err(PipelineError::stage(Stage::Recipes))?;
            let predicted = model
                .objectives
                .iter()
                .zip(p.values.iter().zip(&p.half_width))
                .map(|(name, (&value, &half_width))| PredictedObjective { name: name.clone(), value, half_width })
                .collect();
            recipes.push(Recipe {
                provenance: Provenance {
                    run_id: run_id.clone(),
                    k: archive.k,
                    archive_index: i,
                    rank: rank + 1,
                    contribution: contributions[i],
                },
                reduced: c.x.clone(),
                values: recon.values,
                predicted,
                merit: merit.as_ref().map(|m| m.score(&p.values)),
                checks: recon.checks,
                valid: recon.valid,
                violations: recon.violations,
                flags: recon.flags,
            });
        }
        let doc = RecipesDoc {
            run_id,
            k: archive.k,
            features: model.features.clone(),
            objectives: model.objectives.clone(),
            recipes,
        };
        self.dir.write_json(store::RECIPES, &doc)
    }
}

/// Reference point just beyond the worst observed value of each objective.
pub fn default_reference(observed: &[Vec<f64>], directions: &[Direction], margin: f64) -> Vec<f64> {
    directions
        .iter()
        .enumerate()
        .map(|(k, d)| {
            let col = observed.iter().map(|v| v[k]);
            let (lo, hi) = col.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            let width = if hi > lo { hi - lo } else { lo.abs().max(1.0) };
            match d {
                Direction::Maximize => lo - margin * width,
                Direction::Minimize => hi + margin * width,
            }
        })
        .collect()
}

pub fn load_model(dir: &RunDir) -> Result<SurrogateModel> {
    let text = dir.read_text(store::MODEL)?;
    SurrogateModel::from_json(&text).map_err(|e| PipelineError::io(&dir.path(store::MODEL), e))
}

pub fn load_ledger(dir: &RunDir) -> Result<ReductionLedger> {
    let text = dir.read_text(store::LEDGER)?;
    ReductionLedger::from_jsonl(&text).map_err(|e| PipelineError::io(&dir.path(store::LEDGER), e))
}

fn write_snapshot(dir: &RunDir, state: &RunState) -> Result<()> {
    let mut state = state.clone();
    let iterations = std::mem::take(&mut state.records).len();
    dir.write_json(store::OPTIMIZER, &OptimizerSnapshot { iterations, state })
}

struct PersistObserver<'a, 'h> {
    handle: &'a RecordHandle,
    hooks: &'h mut dyn RunHooks,
    error: Option<PipelineError>,
}

impl Observer for PersistObserver<'_, '_> {
    fn on_record(&mut self, record: &IterationRecord, state: &RunState) {
        if self.error.is_some() {
            return;
        }
        let dir = self.handle.dir();
        if let Err(e) = dir.append_iteration(record).and_then(|_| write_snapshot(dir, state)) {
            self.error = Some(e);
            return;
        }
        self.hooks.on_iteration(record);
    }

    fn on_pause(&mut self, paused: bool) {
        let status = if paused { RunStatus::Paused } else { RunStatus::Optimizing };
        match self.handle.update(|r| {
            r.status = status;
            r.clone()
        }) {
            Ok(record) => self.hooks.on_status(&record),
            Err(e) => self.error = Some(e),
        }
    }
}
