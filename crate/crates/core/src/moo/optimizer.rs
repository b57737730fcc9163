//! Steerable elitist evolutionary loop over the unit box.
//!
//! Each generation mixes `⌈ρP⌉` uniform samples (exploration) with children
//! of archive members produced by simulated binary crossover and Gaussian
//! mutation of scale `σ` (exploitation). The archive keeps the nondominated
//! union of everything evaluated so far, truncated by L1 crowding when a cap
//! is set.

use std::sync::mpsc::{Receiver, TryRecvError};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dominance::pareto_filter;
use super::hypervolume::{hypervolume, hypervolume_contributions, inside_reference};
use super::metrics::{coverage, crowding_distance, l1, spacing};
use super::wasserstein::{wasserstein, GroundCost};
use crate::error::{Error, Result};
use crate::seed;
use crate::types::Direction;

pub const ITERATION_SCHEMA: &str = "iter-v1";

/// Objective function over the unit box.
pub trait Evaluator: Sync {
    fn dim(&self) -> usize;
    fn n_objectives(&self) -> usize;
    fn evaluate(&self, unit: &[f64]) -> Result<Vec<f64>>;
    /// Native decision vector for a unit-box point.
    fn decode(&self, unit: &[f64]) -> Vec<f64> {
        unit.to_vec()
    }
}

/// Wraps a closure as an [`Evaluator`] whose native space is the unit box.
pub struct FnEvaluator<F> {
    pub dim: usize,
    pub n_objectives: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> Vec<f64> + Sync> Evaluator for FnEvaluator<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn n_objectives(&self) -> usize {
        self.n_objectives
    }
    fn evaluate(&self, unit: &[f64]) -> Result<Vec<f64>> {
        Ok((self.f)(unit))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    /// Latin-hypercube or uniform fill of the first generation.
    Seed,
    /// An existing experiment injected into the first generation.
    Experiment,
    Explore,
    Exploit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub unit: Vec<f64>,
    pub x: Vec<f64>,
    pub objectives: Vec<f64>,
    pub origin: Origin,
    /// Iteration that produced the candidate.
    pub iteration: usize,
}

/// What the hypervolume metric does with archive points that are not
/// strictly better than the reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OutsideReference {
    /// Measure only the points inside the reference box and note the rest.
    #[default]
    Exclude,
    /// Mark the metric failed for that iteration.
    Fail,
}

fn default_population() -> usize {
    40
}
fn default_iterations() -> usize {
    50
}
fn default_rho() -> f64 {
    0.1
}
fn default_sigma() -> f64 {
    0.1
}
fn default_crossover() -> f64 {
    0.9
}
fn default_eta() -> f64 {
    15.0
}
fn default_cap() -> Option<usize> {
    Some(200)
}
fn default_w_max() -> usize {
    400
}
fn default_coverage_samples() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default = "default_population")]
    pub population: usize,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    /// Share of each generation drawn uniformly from the box.
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Mutation scale in unit-box coordinates.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_crossover")]
    pub crossover: f64,
    /// Distribution index of the simulated binary crossover.
    #[serde(default = "default_eta")]
    pub sbx_eta: f64,
    pub directions: Vec<Direction>,
    /// Hypervolume reference point in objective units.
    pub reference: Vec<f64>,
    /// Per-objective widths dividing objective vectors before transport and
    /// crowding. Defaults to the distance between the reference and the best
    /// value of the first generation.
    #[serde(default)]
    pub scale: Option<Vec<f64>>,
    /// `None` keeps the full nondominated archive.
    #[serde(default = "default_cap")]
    pub archive_cap: Option<usize>,
    #[serde(default)]
    pub wasserstein: GroundCost,
    /// Fronts larger than this skip the transport metric.
    #[serde(default = "default_w_max")]
    pub wasserstein_max_points: usize,
    #[serde(default)]
    pub outside_reference: OutsideReference,
    #[serde(default = "default_coverage_samples")]
    pub coverage_samples: usize,
}

impl OptimizerConfig {
    pub fn new(directions: Vec<Direction>, reference: Vec<f64>) -> Self {
        Self {
            population: default_population(),
            iterations: default_iterations(),
            rho: default_rho(),
            sigma: default_sigma(),
            crossover: default_crossover(),
            sbx_eta: default_eta(),
            directions,
            reference,
            scale: None,
            archive_cap: default_cap(),
            wasserstein: GroundCost::W2,
            wasserstein_max_points: default_w_max(),
            outside_reference: OutsideReference::Exclude,
            coverage_samples: default_coverage_samples(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.population < 4 || self.population % 2 != 0 {
            return fail(format!("population must be even and at least 4, got {}", self.population));
        }
        if self.iterations == 0 {
            return fail("iterations must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return fail(format!("rho must be in [0, 1], got {}", self.rho));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return fail(format!("sigma must be positive, got {}", self.sigma));
        }
        if !(0.0..=1.0).contains(&self.crossover) {
            return fail(format!("crossover must be in [0, 1], got {}", self.crossover));
        }
        if !(self.sbx_eta >= 0.0) {
            return fail("sbx_eta must be non-negative".into());
        }
        let d = self.directions.len();
        if !(1..=3).contains(&d) {
            return Err(Error::UnsupportedDimension(d));
        }
        if self.reference.len() != d || self.reference.iter().any(|v| !v.is_finite()) {
            return fail(format!("reference must have {d} finite coordinates"));
        }
        if let Some(s) = &self.scale {
            if s.len() != d || s.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return fail(format!("scale must have {d} positive widths"));
            }
        }
        if self.archive_cap.is_some_and(|c| c < 2) {
            return fail("archive_cap must be at least 2".into());
        }
        Ok(())
    }
}

/// Changes requested while a run is in flight. They take effect at the next
/// iteration boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SteeringEvent {
    Rho { value: f64 },
    Sigma { value: f64 },
    Pause,
    Resume,
    Stop,
}

impl SteeringEvent {
    pub fn validate(&self) -> Result<()> {
        match self {
            SteeringEvent::Rho { value } if !(0.0..=1.0).contains(value) => {
                Err(Error::Config(format!("rho must be in [0, 1], got {value}")))
            }
            SteeringEvent::Sigma { value } if !(*value > 0.0 && value.is_finite()) => {
                Err(Error::Config(format!("sigma must be positive, got {value}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppliedEvent {
    pub event: SteeringEvent,
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontMetrics {
    pub hypervolume: Option<f64>,
    pub spacing: Option<f64>,
    pub wasserstein_to_previous: Option<f64>,
    /// Fraction of the unit box within `σ` of an archive point.
    pub coverage: f64,
    /// Why a metric is missing, or which points it left out.
    #[serde(default)]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub schema: String,
    /// 1-based iteration index.
    pub k: usize,
    pub rho: f64,
    pub sigma: f64,
    pub candidates: Vec<Candidate>,
    /// Archive after this iteration.
    pub front: Vec<Candidate>,
    pub metrics: FrontMetrics,
    pub events: Vec<AppliedEvent>,
    /// Archive members dropped by the cap.
    pub truncated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    /// Current settings, including steering changes.
    pub config: OptimizerConfig,
    pub seed: u64,
    /// Objective widths in effect; empty until the first generation.
    pub scale: Vec<f64>,
    pub archive: Vec<Candidate>,
    pub records: Vec<IterationRecord>,
    pub stopped: bool,
    /// Events received after the last iteration.
    #[serde(default)]
    pub pending_events: Vec<AppliedEvent>,
}

impl RunState {
    pub fn new(config: OptimizerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            scale: config.scale.clone().unwrap_or_default(),
            config,
            seed,
            archive: Vec::new(),
            records: Vec::new(),
            stopped: false,
            pending_events: Vec::new(),
        })
    }

    pub fn iterations_done(&self) -> usize {
        self.records.len()
    }

    pub fn finished(&self) -> bool {
        self.stopped || self.records.len() >= self.config.iterations
    }

    /// Applies ρ/σ changes; pause, resume and stop are acknowledged here and
    /// acted on by the caller.
    pub fn apply(&mut self, event: SteeringEvent) -> AppliedEvent {
        if let Err(e) = event.validate() {
            return AppliedEvent { event, accepted: false, note: Some(e.to_string()) };
        }
        match event {
            SteeringEvent::Rho { value } => self.config.rho = value,
            SteeringEvent::Sigma { value } => self.config.sigma = value,
            SteeringEvent::Stop => self.stopped = true,
            SteeringEvent::Pause | SteeringEvent::Resume => {}
        }
        AppliedEvent { event, accepted: true, note: None }
    }
}

fn latin_hypercube(n: usize, dim: usize, rng: &mut seed::Rng) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; dim]; n];
    for j in 0..dim {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        for (i, p) in perm.into_iter().enumerate() {
            pts[i][j] = (p as f64 + rng.random_range(0.0..1.0)) / n as f64;
        }
    }
    pts
}

fn uniform(dim: usize, rng: &mut seed::Rng) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(0.0..1.0)).collect()
}

fn sbx(p1: &[f64], p2: &[f64], eta: f64, rng: &mut seed::Rng) -> (Vec<f64>, Vec<f64>) {
    let mut c1 = p1.to_vec();
    let mut c2 = p2.to_vec();
    for j in 0..p1.len() {
        if rng.random_bool(0.5) && (p1[j] - p2[j]).abs() > 1e-14 {
            let u: f64 = rng.random_range(0.0..1.0);
            let beta = if u <= 0.5 {
                (2.0 * u).powf(1.0 / (eta + 1.0))
            } else {
                (1.0 / (2.0 * (1.0 - u))).powf(1.0 / (eta + 1.0))
            };
            c1[j] = 0.5 * ((1.0 + beta) * p1[j] + (1.0 - beta) * p2[j]);
            c2[j] = 0.5 * ((1.0 - beta) * p1[j] + (1.0 + beta) * p2[j]);
        }
    }
    (c1, c2)
}

fn mutate(x: &mut [f64], sigma: f64, rng: &mut seed::Rng) {
    let normal = Normal::new(0.0, sigma).expect("sigma validated positive");
    let p = 1.0 / x.len() as f64;
    for v in x.iter_mut() {
        if rng.random_bool(p) {
            *v += normal.sample(rng);
        }
        *v = v.clamp(0.0, 1.0);
    }
}

fn scaled(points: &[Candidate], scale: &[f64]) -> Vec<Vec<f64>> {
    points
        .iter()
        .map(|c| c.objectives.iter().zip(scale).map(|(v, s)| v / s).collect())
        .collect()
}

/// Removes the most crowded member (smallest summed L1 distance to its two
/// nearest neighbours) until the archive fits, never removing the best
/// point of any objective.
fn truncate(archive: &mut Vec<Candidate>, cap: usize, scale: &[f64], directions: &[Direction]) -> usize {
    let mut removed = 0;
    while archive.len() > cap {
        let pts = scaled(archive, scale);
        let mut protected = vec![false; pts.len()];
        for (k, d) in directions.iter().enumerate() {
            let best = (0..pts.len())
                .max_by(|&a, &b| (pts[a][k] * d.sign()).total_cmp(&(pts[b][k] * d.sign())).then(b.cmp(&a)))
                .expect("archive is nonempty");
            protected[best] = true;
        }
        let mut victim = None;
        let mut best_density = f64::INFINITY;
        for i in 0..pts.len() {
            if protected[i] {
                continue;
            }
            let (mut d1, mut d2) = (f64::INFINITY, f64::INFINITY);
            for j in 0..pts.len() {
                if j != i {
                    let d = l1(&pts[i], &pts[j]);
                    if d < d1 {
                        d2 = d1;
                        d1 = d;
                    } else if d < d2 {
                        d2 = d;
                    }
                }
            }
            let density = d1 + if d2.is_finite() { d2 } else { 0.0 };
            if density < best_density {
                best_density = density;
                victim = Some(i);
            }
        }
        match victim {
            Some(i) => {
                archive.remove(i);
                removed += 1;
            }
            None => break,
        }
    }
    removed
}

/// Binary tournament preferring the less crowded archive member.
fn tournament(crowding: &[f64], rng: &mut seed::Rng) -> usize {
    let a = rng.random_range(0..crowding.len());
    let b = rng.random_range(0..crowding.len());
    if crowding[b] > crowding[a] {
        b
    } else {
        a
    }
}

/// One optimizer iteration. `events` are the steering events applied since
/// the previous iteration; they are copied into the record.
pub fn step<E: Evaluator + ?Sized>(
    evaluator: &E,
    state: &mut RunState,
    experiments: &[Vec<f64>],
    events: Vec<AppliedEvent>,
) -> Result<IterationRecord> {
    let cfg = state.config.clone();
    let k = state.records.len() + 1;
    let dim = evaluator.dim();
    let p = cfg.population;
    let mut rng = seed::rng(seed::derive_indexed(state.seed, "iteration", k as u64));

    let mut units: Vec<(Vec<f64>, Origin)> = Vec::with_capacity(p);
    if state.archive.is_empty() {
        let n_lhs = p.div_ceil(2);
        units.extend(latin_hypercube(n_lhs, dim, &mut rng).into_iter().map(|u| (u, Origin::Seed)));
        for e in experiments.iter().take(p - n_lhs) {
            units.push((e.iter().map(|v| v.clamp(0.0, 1.0)).collect(), Origin::Experiment));
        }
        while units.len() < p {
            units.push((uniform(dim, &mut rng), Origin::Seed));
        }
    } else {
        let n_explore = ((cfg.rho * p as f64).ceil() as usize).min(p);
        for _ in 0..n_explore {
            units.push((uniform(dim, &mut rng), Origin::Explore));
        }
        let crowding = crowding_distance(&scaled(&state.archive, &state.scale_or_unit()));
        while units.len() < p {
            let a = &state.archive[tournament(&crowding, &mut rng)].unit;
            let b = &state.archive[tournament(&crowding, &mut rng)].unit;
            let (mut c1, mut c2) = if rng.random_bool(cfg.crossover) {
                sbx(a, b, cfg.sbx_eta, &mut rng)
            } else {
                (a.clone(), b.clone())
            };
            mutate(&mut c1, cfg.sigma, &mut rng);
            mutate(&mut c2, cfg.sigma, &mut rng);
            units.push((c1, Origin::Exploit));
            if units.len() < p {
                units.push((c2, Origin::Exploit));
            }
        }
    }

    let evaluated: Vec<Result<Vec<f64>>> = units.par_iter().map(|(u, _)| evaluator.evaluate(u)).collect();
    let mut candidates = Vec::with_capacity(p);
    let mut notes = Vec::new();
    let mut rejected = 0;
    for ((unit, origin), objectives) in units.into_iter().zip(evaluated) {
        let objectives = objectives?;
        if objectives.len() != cfg.directions.len() {
            return Err(Error::Contract(format!(
                "evaluator returned {} objectives, expected {}",
                objectives.len(),
                cfg.directions.len()
            )));
        }
        if objectives.iter().any(|v| !v.is_finite()) {
            rejected += 1;
            continue;
        }
        candidates.push(Candidate { x: evaluator.decode(&unit), unit, objectives, origin, iteration: k });
    }
    if rejected > 0 {
        notes.push(format!("{rejected} candidates had non-finite objectives and were discarded"));
    }

    if state.scale.is_empty() {
        state.scale = cfg
            .reference
            .iter()
            .zip(&cfg.directions)
            .enumerate()
            .map(|(j, (r, d))| {
                let best = candidates
                    .iter()
                    .map(|c| c.objectives[j] * d.sign())
                    .fold(f64::NEG_INFINITY, f64::max);
                let w = (best - r * d.sign()).abs();
                if w > 0.0 && w.is_finite() {
                    w
                } else {
                    1.0
                }
            })
            .collect();
    }

    let mut merged = std::mem::take(&mut state.archive);
    merged.extend(candidates.iter().cloned());
    let objs: Vec<Vec<f64>> = merged.iter().map(|c| c.objectives.clone()).collect();
    let (keep, _) = pareto_filter(&objs, &cfg.directions);
    let mut archive: Vec<Candidate> = Vec::with_capacity(keep.len());
    for i in keep {
        if !archive.iter().any(|a| a.objectives == merged[i].objectives) {
            archive.push(merged[i].clone());
        }
    }
    let truncated = match cfg.archive_cap {
        Some(cap) => truncate(&mut archive, cap, &state.scale, &cfg.directions),
        None => 0,
    };

    let front: Vec<Vec<f64>> = archive.iter().map(|c| c.objectives.clone()).collect();
    let hv = match cfg.outside_reference {
        OutsideReference::Exclude => {
            let inside: Vec<Vec<f64>> =
                front.iter().filter(|p| inside_reference(p, &cfg.reference, &cfg.directions)).cloned().collect();
            if inside.len() < front.len() {
                notes.push(format!(
                    "hypervolume excludes {} archive points outside the reference box",
                    front.len() - inside.len()
                ));
            }
            hypervolume(&inside, &cfg.reference, &cfg.directions)
        }
        OutsideReference::Fail => hypervolume(&front, &cfg.reference, &cfg.directions),
    };
    let hypervolume = hv.map_err(|e| notes.push(format!("hypervolume: {e}"))).ok();
    let spacing = spacing(&front).map_err(|e| notes.push(format!("spacing: {e}"))).ok();
    let wasserstein_to_previous = match state.records.last() {
        None => None,
        Some(prev) => {
            let largest = prev.front.len().max(archive.len());
            if largest > cfg.wasserstein_max_points {
                notes.push(format!(
                    "wasserstein skipped: front of {largest} points exceeds {}",
                    cfg.wasserstein_max_points
                ));
                None
            } else {
                wasserstein(&scaled(&prev.front, &state.scale), &scaled(&archive, &state.scale), cfg.wasserstein)
                    .map_err(|e| notes.push(format!("wasserstein: {e}")))
                    .ok()
            }
        }
    };
    let units_archive: Vec<Vec<f64>> = archive.iter().map(|c| c.unit.clone()).collect();
    let coverage = coverage(
        &units_archive,
        dim,
        cfg.sigma,
        cfg.coverage_samples,
        seed::derive_indexed(state.seed, "coverage", k as u64),
    );

    let record = IterationRecord {
        schema: ITERATION_SCHEMA.into(),
        k,
        rho: cfg.rho,
        sigma: cfg.sigma,
        candidates,
        front: archive.clone(),
        metrics: FrontMetrics { hypervolume, spacing, wasserstein_to_previous, coverage, notes },
        events,
        truncated,
    };
    state.archive = archive;
    state.records.push(record.clone());
    Ok(record)
}

impl RunState {
    fn scale_or_unit(&self) -> Vec<f64> {
        if self.scale.is_empty() {
            vec![1.0; self.config.directions.len()]
        } else {
            self.scale.clone()
        }
    }
}

/// Receives iteration records and pause transitions as they happen.
pub trait Observer {
    /// Called after every iteration with the updated state.
    fn on_record(&mut self, _record: &IterationRecord, _state: &RunState) {}
    fn on_pause(&mut self, _paused: bool) {}
}

impl Observer for () {}

impl<F: FnMut(&IterationRecord)> Observer for F {
    fn on_record(&mut self, record: &IterationRecord, _state: &RunState) {
        self(record)
    }
}

/// Runs (or continues) the loop until `iterations` are done or a stop event
/// arrives. Pending steering events are drained before every iteration; a
/// pause blocks until resume or stop.
pub fn run<E: Evaluator + ?Sized>(
    evaluator: &E,
    mut state: RunState,
    experiments: &[Vec<f64>],
    steering: Option<&Receiver<SteeringEvent>>,
    observer: &mut dyn Observer,
) -> Result<RunState> {
    let mut paused = false;
    while !state.finished() {
        let mut events = std::mem::take(&mut state.pending_events);
        if let Some(rx) = steering {
            loop {
                let next = if paused {
                    match rx.recv() {
                        Ok(e) => Some(e),
                        // Nobody can resume the run any more; carry on.
                        Err(_) => {
                            paused = false;
                            observer.on_pause(false);
                            None
                        }
                    }
                } else {
                    match rx.try_recv() {
                        Ok(e) => Some(e),
                        Err(TryRecvError::Empty | TryRecvError::Disconnected) => None,
                    }
                };
                let Some(event) = next else { break };
                let applied = state.apply(event);
                if applied.accepted {
                    match applied.event {
                        SteeringEvent::Pause if !paused => {
                            paused = true;
                            observer.on_pause(true);
                        }
                        SteeringEvent::Resume if paused => {
                            paused = false;
                            observer.on_pause(false);
                        }
                        _ => {}
                    }
                }
                events.push(applied);
                if state.stopped {
                    break;
                }
            }
        }
        if state.stopped {
            state.pending_events = events;
            break;
        }
        let record = step(evaluator, &mut state, experiments, events)?;
        observer.on_record(&record, &state);
    }
    Ok(state)
}

/// Archive indices ordered by exclusive hypervolume contribution, largest
/// first, ties by index.
pub fn rank_by_contribution(front: &[Vec<f64>], reference: &[f64], directions: &[Direction]) -> Result<Vec<usize>> {
    let c = hypervolume_contributions(front, reference, directions)?;
    let mut order: Vec<usize> = (0..front.len()).collect();
    order.sort_by(|&a, &b| c[b].total_cmp(&c[a]).then(a.cmp(&b)));
    Ok(order)
}
