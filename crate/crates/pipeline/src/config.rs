//! The pipeline configuration document.
//!
//! One TOML (or JSON) document with the sections `[sources]`, `[[rules]]`,
//! `[cleaning]`, `[selection]`, `[surrogate]`, `[objectives]`,
//! `[optimizer]` and `[service]`. Unknown keys are rejected everywhere.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use procopt_core::cleaning::{Aggregation, CleaningConfig, ConstraintRule, ExcludedParameter};
use procopt_core::ingestion::{ColumnRole, Schema, SourceFileDescriptor, SourceFormat};
use procopt_core::moo::{GroundCost, OptimizerConfig, OutsideReference};
use procopt_core::selection::{FitPlan, DEFAULT_BUDGET};
use procopt_core::surrogate::{ExtrapolationPolicy, Family, MeritFunction, MlpConfig, ScreeningConfig, SurrogateConfig};
use procopt_core::{Direction, ObjectiveSpec, OutputSpec, ParameterSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{PipelineError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub sources: SourcesSection,
    #[serde(default)]
    pub rules: Vec<ConstraintRule>,
    #[serde(default)]
    pub cleaning: CleaningSection,
    #[serde(default)]
    pub selection: SelectionSection,
    #[serde(default)]
    pub surrogate: SurrogateSection,
    pub objectives: ObjectivesSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub service: ServiceSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourcesSection {
    /// Canonical input parameters. Numeric parameters without bounds take
    /// the observed range.
    pub parameters: Vec<ParameterSpec>,
    pub outputs: Vec<OutputSpec>,
    pub files: Vec<SourceEntry>,
}

fn default_delimiter() -> char {
    ','
}

fn default_decimal() -> char {
    '.'
}

/// One source file: either a `path` (relative to the configuration file)
/// or inline `content`. Loading a configuration from disk embeds the file
/// content so a run snapshot is self-contained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceEntry {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content: Option<String>,
    #[serde(default)]
    pub format: SourceFormat,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    #[serde(default = "default_decimal")]
    pub decimal: char,
    #[serde(default)]
    pub columns: BTreeMap<String, String>,
    #[serde(default)]
    pub roles: BTreeMap<String, ColumnRole>,
}

impl SourceEntry {
    pub fn descriptor(&self) -> SourceFileDescriptor {
        SourceFileDescriptor {
            id: self.id.clone(),
            path: self.path.clone(),
            format: self.format,
            delimiter: self.delimiter,
            decimal: self.decimal,
            columns: self.columns.clone(),
            roles: self.roles.clone(),
        }
    }
}

/// `[cleaning]`: the cleaning thresholds. Objectives and rules come from
/// their own sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleaningSection {
    pub correlation_threshold: f64,
    pub outlier_z: f64,
    pub replicate_tolerance: f64,
    pub aggregation: Aggregation,
    pub min_fill_rate: f64,
    pub strict_rules: bool,
    pub exclude: Vec<ExcludedParameter>,
}

impl Default for CleaningSection {
    fn default() -> Self {
        let c = CleaningConfig::default();
        Self {
            correlation_threshold: c.correlation_threshold,
            outlier_z: c.outlier_z,
            replicate_tolerance: c.replicate_tolerance,
            aggregation: c.aggregation,
            min_fill_rate: c.min_fill_rate,
            strict_rules: c.strict_rules,
            exclude: c.exclude,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExhaustiveSection {
    /// Number of top-ranked inputs to combine.
    pub candidates: usize,
    pub min_size: usize,
    pub max_size: usize,
    pub budget: u128,
    /// Use the best subset instead of the nested-curve choice.
    pub adopt: bool,
}

impl Default for ExhaustiveSection {
    fn default() -> Self {
        Self { candidates: 8, min_size: 1, max_size: 3, budget: DEFAULT_BUDGET, adopt: false }
    }
}

/// `[selection]`: importance ranking and the nested-model curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionSection {
    /// Longest nested model; all cleaned inputs (at most 20) when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_max: Option<usize>,
    pub family: Family,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub folds: Option<usize>,
    pub add: Vec<String>,
    pub remove: Vec<String>,
    /// Stop after the curve and wait for expert overrides.
    pub await_overrides: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exhaustive: Option<ExhaustiveSection>,
}

impl Default for SelectionSection {
    fn default() -> Self {
        Self {
            k_max: None,
            family: Family::RbfKernel,
            folds: None,
            add: Vec::new(),
            remove: Vec::new(),
            await_overrides: false,
            exhaustive: None,
        }
    }
}

pub const DEFAULT_K_MAX: usize = 20;

/// Criterion used to pick one model among the screened candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ModelMetric {
    #[default]
    RmseTest,
    AdjustedR2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateSection {
    /// Families trained on the selected features; the best one that passes
    /// screening is kept.
    pub families: Vec<Family>,
    pub metric: ModelMetric,
    pub screening: ScreeningConfig,
    pub extrapolation: ExtrapolationPolicy,
    pub linear_lambda: f64,
    pub kernel_lambda: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel_bandwidth: Option<f64>,
    pub test_fraction: f64,
    pub mlp: MlpConfig,
}

impl Default for SurrogateSection {
    fn default() -> Self {
        let s = SurrogateConfig::new(Family::RbfKernel);
        Self {
            families: vec![Family::RbfKernel, Family::Mlp, Family::LinearRidge],
            metric: ModelMetric::RmseTest,
            screening: ScreeningConfig::default(),
            extrapolation: s.extrapolation,
            linear_lambda: s.linear_lambda,
            kernel_lambda: s.kernel_lambda,
            kernel_bandwidth: s.kernel_bandwidth,
            test_fraction: s.test_fraction,
            mlp: s.mlp,
        }
    }
}

impl SurrogateSection {
    pub fn config(&self, family: Family) -> SurrogateConfig {
        SurrogateConfig {
            family,
            linear_lambda: self.linear_lambda,
            kernel_lambda: self.kernel_lambda,
            kernel_bandwidth: self.kernel_bandwidth,
            mlp: self.mlp.clone(),
            test_fraction: self.test_fraction,
            extrapolation: self.extrapolation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveMode {
    /// Optimize the objectives jointly for a Pareto front.
    #[default]
    Pareto,
    /// Optimize one weighted merit score.
    Merit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectivesSection {
    pub entries: Vec<ObjectiveSpec>,
    #[serde(default)]
    pub mode: ObjectiveMode,
    /// Merit weights, one per entry.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<Vec<[f64; 2]>>,
}

impl ObjectivesSection {
    pub fn outputs(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.output.clone()).collect()
    }

    pub fn merit(&self) -> Option<MeritFunction> {
        (self.mode == ObjectiveMode::Merit)
            .then(|| MeritFunction { weights: self.weights.clone(), normalization: self.normalization.clone() })
    }

    /// Directions of the optimized objective vector.
    pub fn directions(&self) -> Vec<Direction> {
        match self.mode {
            ObjectiveMode::Pareto => self.entries.iter().map(|e| e.direction).collect(),
            ObjectiveMode::Merit => vec![Direction::Maximize],
        }
    }
}

/// `[optimizer]`: the optimizer settings plus recipe selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub population: usize,
    pub iterations: usize,
    pub rho: f64,
    pub sigma: f64,
    pub crossover: f64,
    pub sbx_eta: f64,
    /// Archive size limit; 0 keeps the whole nondominated set.
    pub archive_cap: usize,
    /// Hypervolume reference; by default each objective's worst observed
    /// value moved outwards by `reference_margin` of its observed range.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<Vec<f64>>,
    pub reference_margin: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale: Option<Vec<f64>>,
    pub wasserstein: GroundCost,
    pub wasserstein_max_points: usize,
    pub outside_reference: OutsideReference,
    pub coverage_samples: usize,
    /// Seed the first generation with the nondominated cleaned experiments.
    pub use_experiments: bool,
    /// Number of recipes emitted from the final front.
    pub top_k: usize,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let o = OptimizerConfig::new(Vec::new(), Vec::new());
        Self {
            population: o.population,
            iterations: o.iterations,
            rho: o.rho,
            sigma: o.sigma,
            crossover: o.crossover,
            sbx_eta: o.sbx_eta,
            archive_cap: o.archive_cap.unwrap_or(0),
            reference: None,
            reference_margin: 0.05,
            scale: None,
            wasserstein: o.wasserstein,
            wasserstein_max_points: o.wasserstein_max_points,
            outside_reference: o.outside_reference,
            coverage_samples: o.coverage_samples,
            use_experiments: true,
            top_k: 10,
        }
    }
}

impl OptimizerSection {
    pub fn build(&self, directions: Vec<Direction>, reference: Vec<f64>) -> OptimizerConfig {
        OptimizerConfig {
            population: self.population,
            iterations: self.iterations,
            rho: self.rho,
            sigma: self.sigma,
            crossover: self.crossover,
            sbx_eta: self.sbx_eta,
            directions,
            reference,
            scale: self.scale.clone(),
            archive_cap: (self.archive_cap > 0).then_some(self.archive_cap),
            wasserstein: self.wasserstein,
            wasserstein_max_points: self.wasserstein_max_points,
            outside_reference: self.outside_reference,
            coverage_samples: self.coverage_samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceSection {
    pub bind: String,
    /// Directory holding one sub-directory per run.
    pub store: String,
}

impl Default for ServiceSection {
    fn default() -> Self {
        Self { bind: "127.0.0.1:8080".into(), store: "runs".into() }
    }
}

impl PipelineConfig {
    /// Parses a TOML document without touching the filesystem.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| PipelineError::validation(format!("config: {e}")))
    }

    /// Reads a TOML file, embeds the referenced source files and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::validation(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text)?;
        config.embed_sources(path.parent().unwrap_or(Path::new(".")))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads every `path`-only source relative to `base` into `content`.
    pub fn embed_sources(&mut self, base: &Path) -> Result<()> {
        for f in &mut self.sources.files {
            if f.content.is_some() {
                continue;
            }
            let Some(rel) = &f.path else {
                return Err(PipelineError::validation(format!("source `{}` has neither path nor content", f.id)));
            };
            let p = base.join(rel);
            f.content = Some(std::fs::read_to_string(&p).map_err(|e| {
                PipelineError::validation(format!("source `{}`: cannot read {}: {e}", f.id, p.display()))
            })?);
        }
        Ok(())
    }

    pub fn schema(&self) -> Schema {
        Schema { inputs: self.sources.parameters.clone(), outputs: self.sources.outputs.clone() }
    }

    pub fn cleaning_config(&self) -> CleaningConfig {
        let c = &self.cleaning;
        CleaningConfig {
            objectives: self.objectives.outputs(),
            correlation_threshold: c.correlation_threshold,
            outlier_z: c.outlier_z,
            replicate_tolerance: c.replicate_tolerance,
            aggregation: c.aggregation,
            min_fill_rate: c.min_fill_rate,
            strict_rules: c.strict_rules,
            rules: self.rules.clone(),
            exclude: c.exclude.clone(),
        }
    }

    pub fn fit_plan(&self) -> FitPlan {
        FitPlan { surrogate: self.surrogate.config(self.selection.family), folds: self.selection.folds }
    }

    /// Run identifier: the first 16 hex digits of the SHA-256 of the
    /// canonical JSON form of the configuration and the seed.
    pub fn run_id(&self, seed: u64) -> String {
        let json = serde_json::to_string(self).expect("configuration serializes");
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        h.update(seed.to_le_bytes());
        hex::encode(h.finalize())[..16].to_string()
    }

    /// Checks everything that can be checked before any data is read.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(PipelineError::Validation(m));
        let s = &self.sources;
        if s.parameters.is_empty() {
            return fail("sources.parameters must list at least one input".into());
        }
        if s.outputs.is_empty() {
            return fail("sources.outputs must list at least one output".into());
        }
        let mut names = BTreeSet::new();
        for p in &s.parameters {
            let mut probe = p.clone();
            if probe.bounds.is_none() {
                probe.bounds = Some([0.0, 1.0]);
            }
            probe.validate().map_err(|e| PipelineError::validation(e.to_string()))?;
            if !names.insert(p.name.as_str()) {
                return fail(format!("duplicate column name `{}`", p.name));
            }
        }
        for o in &s.outputs {
            if !names.insert(o.name.as_str()) {
                return fail(format!("duplicate column name `{}`", o.name));
            }
        }
        if s.files.is_empty() {
            return fail("sources.files must list at least one file".into());
        }
        let schema = self.schema();
        let mut ids = BTreeSet::new();
        for f in &s.files {
            if !ids.insert(f.id.as_str()) {
                return fail(format!("duplicate source id `{}`", f.id));
            }
            if f.path.is_none() && f.content.is_none() {
                return fail(format!("source `{}` has neither path nor content", f.id));
            }
            f.descriptor().validate(&schema).map_err(|e| PipelineError::validation(e.to_string()))?;
        }
        for r in &self.rules {
            let parsed = r.parse().map_err(|e| PipelineError::validation(e.to_string()))?;
            for p in parsed.params() {
                if !s.parameters.iter().any(|q| q.name == p) {
                    return fail(format!("rule `{}` references unknown parameter `{p}`", r.expression));
                }
            }
        }

        let c = &self.cleaning;
        if !(c.correlation_threshold > 0.0 && c.correlation_threshold <= 1.0) {
            return fail(format!("cleaning.correlation_threshold must be in (0, 1], got {}", c.correlation_threshold));
        }
        if !(c.outlier_z > 0.0) {
            return fail(format!("cleaning.outlier_z must be positive, got {}", c.outlier_z));
        }
        if !(c.replicate_tolerance >= 0.0) {
            return fail("cleaning.replicate_tolerance must be >= 0".into());
        }
        if !(0.0..=1.0).contains(&c.min_fill_rate) {
            return fail(format!("cleaning.min_fill_rate must be in [0, 1], got {}", c.min_fill_rate));
        }
        for ex in &c.exclude {
            if !s.parameters.iter().any(|p| p.name == ex.name) {
                return fail(format!("cleaning.exclude names unknown parameter `{}`", ex.name));
            }
        }

        let sel = &self.selection;
        if sel.k_max == Some(0) {
            return fail("selection.k_max must be at least 1".into());
        }
        if sel.folds.is_some_and(|f| f < 2) {
            return fail("selection.folds must be at least 2".into());
        }
        if let Some(ex) = &sel.exhaustive {
            if ex.candidates == 0 || ex.min_size == 0 || ex.min_size > ex.max_size || ex.max_size > ex.candidates {
                return fail("selection.exhaustive needs 1 <= min_size <= max_size <= candidates".into());
            }
        }
        for n in sel.add.iter().chain(&sel.remove) {
            if !s.parameters.iter().any(|p| &p.name == n) {
                return fail(format!("selection override names unknown parameter `{n}`"));
            }
        }

        let sur = &self.surrogate;
        if sur.families.is_empty() {
            return fail("surrogate.families must not be empty".into());
        }
        if !(sur.test_fraction > 0.0 && sur.test_fraction < 1.0) {
            return fail(format!("surrogate.test_fraction must be in (0, 1), got {}", sur.test_fraction));
        }
        if !(sur.linear_lambda >= 0.0 && sur.kernel_lambda > 0.0) {
            return fail("surrogate regularization must be non-negative (kernel_lambda positive)".into());
        }
        if sur.kernel_bandwidth.is_some_and(|b| !(b > 0.0)) {
            return fail("surrogate.kernel_bandwidth must be positive".into());
        }

        let obj = &self.objectives;
        if obj.entries.is_empty() {
            return fail("objectives.entries must list at least one objective".into());
        }
        let mut seen = BTreeSet::new();
        for e in &obj.entries {
            if !s.outputs.iter().any(|o| o.name == e.output) {
                return fail(format!("objective `{}` is not a declared output", e.output));
            }
            if !seen.insert(e.output.as_str()) {
                return fail(format!("objective `{}` is listed twice", e.output));
            }
        }
        match obj.mode {
            ObjectiveMode::Pareto => {
                if obj.entries.len() > 3 {
                    return fail(format!("at most 3 objectives are supported, got {}", obj.entries.len()));
                }
                if !obj.weights.is_empty() {
                    return fail("objectives.weights only apply in merit mode".into());
                }
            }
            ObjectiveMode::Merit => {
                if obj.weights.len() != obj.entries.len() {
                    return fail(format!(
                        "merit mode needs one weight per objective ({} weights, {} objectives)",
                        obj.weights.len(),
                        obj.entries.len()
                    ));
                }
                if obj.weights.iter().all(|w| *w == 0.0) || obj.weights.iter().any(|w| !w.is_finite()) {
                    return fail("merit weights must be finite and not all zero".into());
                }
                if let Some(n) = &obj.normalization {
                    if n.len() != obj.entries.len() || n.iter().any(|[_, s]| *s == 0.0) {
                        return fail("objectives.normalization needs a nonzero scale per objective".into());
                    }
                }
            }
        }

        let opt = &self.optimizer;
        let directions = obj.directions();
        let reference = opt.reference.clone().unwrap_or_else(|| vec![0.0; directions.len()]);
        if reference.len() != directions.len() {
            return fail(format!(
                "optimizer.reference needs {} coordinates, got {}",
                directions.len(),
                reference.len()
            ));
        }
        opt.build(directions, reference)
            .validate()
            .map_err(|e| PipelineError::validation(format!("optimizer: {e}")))?;
        if opt.top_k == 0 {
            return fail("optimizer.top_k must be at least 1".into());
        }
        if !(opt.reference_margin > 0.0 && opt.reference_margin.is_finite()) {
            return fail("optimizer.reference_margin must be positive".into());
        }
        Ok(())
    }
}
