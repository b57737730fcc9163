//! Input ranking and subset choice.
//!
//! Inputs are ranked by absolute Pearson correlation with the objectives,
//! then nested models over the top-k ranked inputs give an RMSE curve from
//! which the subset size is chosen. Exhaustive subset search is available
//! for small candidate pools, and experts can add or remove inputs.

use std::collections::BTreeSet;
use std::ops::RangeInclusive;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;
use crate::surrogate::{self, kfold_splits, split_indices, Family, SurrogateConfig, SurrogateModel};
use crate::types::{Dataset, MetricReport, ParameterKind};

/// Minimum rows needed to rank inputs.
pub const MIN_RANK_ROWS: usize = 10;

/// `chosen_k` is the smallest k whose test score is within this relative
/// margin of the best.
pub const CHOSEN_K_MARGIN: f64 = 0.02;

pub const DEFAULT_BUDGET: u128 = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub name: String,
    /// Normalized so the strongest input scores 1, quantized to 1e-9.
    pub score: f64,
    /// Raw |r| against each objective.
    pub per_output: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRanking {
    pub objectives: Vec<String>,
    pub features: Vec<FeatureImportance>,
}

impl ImportanceRanking {
    pub fn names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn top(&self, k: usize) -> Vec<String> {
        self.features.iter().take(k).map(|f| f.name.clone()).collect()
    }
}

/// |r| of an input against an output; for categorical inputs the maximum
/// over the level indicator columns.
fn input_correlation(dataset: &Dataset, j: usize, y: &[f64]) -> f64 {
    let spec = &dataset.inputs[j];
    let x = dataset.input_column(j);
    match spec.kind {
        ParameterKind::Categorical => (0..spec.levels.len())
            .map(|l| {
                let ind: Vec<f64> = x.iter().map(|&v| if v as usize == l { 1.0 } else { 0.0 }).collect();
                stats::pearson(&ind, y).abs()
            })
            .fold(0.0, f64::max),
        _ => stats::pearson(&x, y).abs(),
    }
}

pub fn rank_importance(dataset: &Dataset, objectives: &[String]) -> Result<ImportanceRanking> {
    if dataset.n_rows() < MIN_RANK_ROWS {
        return Err(Error::InsufficientData(format!(
            "ranking needs at least {MIN_RANK_ROWS} rows, got {}",
            dataset.n_rows()
        )));
    }
    if objectives.is_empty() {
        return Err(Error::Contract("ranking needs at least one objective".into()));
    }
    let out_cols = dataset.output_indices(objectives)?;
    let ys: Vec<Vec<f64>> = out_cols.iter().map(|&k| dataset.output_column(k)).collect();
    if ys.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Contract("objective columns must be complete before ranking".into()));
    }

    let mut raw = Vec::with_capacity(dataset.inputs.len());
    for (j, spec) in dataset.inputs.iter().enumerate() {
        let col = dataset.input_column(j);
        let (lo, hi) = col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if !(hi > lo) {
            return Err(Error::Consistency(format!("input `{}` has no variance after cleaning", spec.name)));
        }
        let per_output: Vec<f64> = ys.iter().map(|y| input_correlation(dataset, j, y)).collect();
        raw.push((j, per_output));
    }
    let max_score = raw.iter().flat_map(|(_, p)| p.iter().copied()).fold(0.0, f64::max);
    let mut ranked: Vec<(i64, usize, FeatureImportance)> = raw
        .into_iter()
        .map(|(j, per_output)| {
            let best = per_output.iter().copied().fold(0.0, f64::max);
            let score = if max_score > 0.0 { best / max_score } else { 0.0 };
            // Scores are quantized to 1e-9 so rounding noise cannot split a
            // tie that the canonical order should decide.
            let key = (score * 1e9).round() as i64;
            let score = key as f64 / 1e9;
            (key, j, FeatureImportance { name: dataset.inputs[j].name.clone(), score, per_output })
        })
        .collect();
    ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(ImportanceRanking {
        objectives: objectives.to_vec(),
        features: ranked.into_iter().map(|(_, _, f)| f).collect(),
    })
}

/// Model family and validation scheme used to score a feature subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitPlan {
    pub surrogate: SurrogateConfig,
    /// k-fold cross-validation instead of the single split, for small tables.
    #[serde(default)]
    pub folds: Option<usize>,
}

impl FitPlan {
    pub fn new(family: Family) -> Self {
        Self { surrogate: SurrogateConfig::new(family), folds: None }
    }
}

impl Default for FitPlan {
    fn default() -> Self {
        Self::new(Family::RbfKernel)
    }
}

/// Scores of one fitted subset. `rmse_*` are means over outputs of the RMSE
/// divided by the output's standard deviation, so outputs in different units
/// weigh equally.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetFit {
    pub rmse_train: f64,
    pub rmse_test: f64,
    pub adjusted_r2_test: Option<f64>,
    /// Per-output metrics of the single-split fit; empty under cross-validation.
    pub per_output: Vec<MetricReport>,
}

fn from_model(m: &SurrogateModel) -> SubsetFit {
    SubsetFit {
        rmse_train: m.normalized_train_rmse(),
        rmse_test: m.normalized_test_rmse(),
        adjusted_r2_test: m.mean_adjusted_r2(),
        per_output: m.metrics.clone(),
    }
}

pub fn fit_subset(
    dataset: &Dataset,
    features: &[String],
    objectives: &[String],
    plan: &FitPlan,
    seed: u64,
) -> Result<SubsetFit> {
    match plan.folds {
        None => {
            let split = split_indices(dataset.n_rows(), plan.surrogate.test_fraction, seed);
            let m = surrogate::train_on_split(dataset, features, objectives, &plan.surrogate, &split, seed)?;
            Ok(from_model(&m))
        }
        Some(f) => {
            if f < 2 || f > dataset.n_rows() {
                return Err(Error::Contract(format!("{f} folds for {} rows", dataset.n_rows())));
            }
            let fits = kfold_splits(dataset.n_rows(), f, seed)
                .iter()
                .map(|s| surrogate::train_on_split(dataset, features, objectives, &plan.surrogate, s, seed).map(|m| from_model(&m)))
                .collect::<Result<Vec<_>>>()?;
            let n = fits.len() as f64;
            let adj: Option<Vec<f64>> = fits.iter().map(|s| s.adjusted_r2_test).collect();
            Ok(SubsetFit {
                rmse_train: fits.iter().map(|s| s.rmse_train).sum::<f64>() / n,
                rmse_test: fits.iter().map(|s| s.rmse_test).sum::<f64>() / n,
                adjusted_r2_test: adj.map(|v| stats::mean(&v)),
                per_output: Vec::new(),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub k: usize,
    pub rmse_train: Option<f64>,
    pub rmse_test: Option<f64>,
    pub adjusted_r2_test: Option<f64>,
    #[serde(default)]
    pub per_output: Vec<MetricReport>,
    /// Training error at this k; the point is excluded from the choice.
    #[serde(default)]
    pub failed: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionCurve {
    pub objectives: Vec<String>,
    /// Every cleaned input in ranking order.
    pub ranked: Vec<String>,
    pub points: Vec<CurvePoint>,
    pub chosen_k: usize,
    /// Final selection, after overrides.
    pub chosen: Vec<String>,
    pub added: Vec<String>,
    pub removed: Vec<String>,
}

/// Smallest `k` whose test score is within the margin of the minimum.
pub fn choose_k(points: &[CurvePoint]) -> Option<usize> {
    let best = points.iter().filter_map(|p| p.rmse_test).fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return None;
    }
    points
        .iter()
        .find(|p| p.rmse_test.is_some_and(|r| r <= best * (1.0 + CHOSEN_K_MARGIN)))
        .map(|p| p.k)
}

/// Fits the top-1, top-2, ..., top-`k_max` ranked inputs on one shared split.
pub fn nested_rmse_curve(
    dataset: &Dataset,
    ranking: &ImportanceRanking,
    plan: &FitPlan,
    k_max: usize,
    seed: u64,
) -> Result<SelectionCurve> {
    if k_max == 0 || k_max > ranking.features.len() {
        return Err(Error::Contract(format!(
            "k_max must be in 1..={}, got {k_max}",
            ranking.features.len()
        )));
    }
    let points: Vec<CurvePoint> = (1..=k_max)
        .into_par_iter()
        .map(|k| match fit_subset(dataset, &ranking.top(k), &ranking.objectives, plan, seed) {
            Ok(s) => CurvePoint {
                k,
                rmse_train: Some(s.rmse_train),
                rmse_test: Some(s.rmse_test),
                adjusted_r2_test: s.adjusted_r2_test,
                per_output: s.per_output,
                failed: None,
            },
            Err(e) => CurvePoint {
                k,
                rmse_train: None,
                rmse_test: None,
                adjusted_r2_test: None,
                per_output: Vec::new(),
                failed: Some(e.to_string()),
            },
        })
        .collect();
    let chosen_k = choose_k(&points).ok_or_else(|| {
        Error::InsufficientData(format!(
            "every nested model failed; first error: {}",
            points[0].failed.as_deref().unwrap_or("unknown")
        ))
    })?;
    Ok(SelectionCurve {
        objectives: ranking.objectives.clone(),
        ranked: ranking.names(),
        chosen: ranking.top(chosen_k),
        points,
        chosen_k,
        added: Vec::new(),
        removed: Vec::new(),
    })
}

/// `(chosen ∖ remove) ∪ add`, keeping the existing order and appending new
/// names in the order given.
pub fn apply_expert_overrides(curve: &SelectionCurve, add: &[String], remove: &[String]) -> Result<SelectionCurve> {
    for name in add.iter().chain(remove) {
        if !curve.ranked.contains(name) {
            return Err(Error::UnknownName { name: name.clone(), valid: curve.ranked.clone() });
        }
    }
    if let Some(name) = remove.iter().find(|n| !curve.chosen.contains(n)) {
        return Err(Error::Contract(format!("cannot remove `{name}`: it is not in the current selection")));
    }
    let removed: BTreeSet<&String> = remove.iter().collect();
    let mut out = curve.clone();
    out.chosen.retain(|n| !removed.contains(n));
    for name in add {
        if !out.chosen.contains(name) {
            out.chosen.push(name.clone());
        }
    }

    let auto = curve.ranked[..curve.chosen_k].to_vec();
    out.added = out.chosen.iter().filter(|n| !auto.contains(n)).cloned().collect();
    out.removed = auto.into_iter().filter(|n| !out.chosen.contains(n)).collect();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetScore {
    pub features: Vec<String>,
    /// Mean z-scored test RMSE; `None` when training failed.
    pub score: Option<f64>,
    pub fit: Option<SubsetFit>,
    #[serde(default)]
    pub failed: Option<String>,
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c.saturating_mul((n - i) as u128) / (i + 1) as u128;
    }
    c
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    if k > n {
        return out;
    }
    loop {
        out.push(idx.clone());
        let Some(i) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            return out;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Trains every subset of `candidates` whose size is in `sizes` and returns
/// them sorted by ascending test score, failed subsets last.
pub fn exhaustive_search(
    dataset: &Dataset,
    candidates: &[String],
    objectives: &[String],
    sizes: RangeInclusive<usize>,
    plan: &FitPlan,
    seed: u64,
    budget: u128,
) -> Result<Vec<SubsetScore>> {
    let n = candidates.len();
    if *sizes.start() == 0 || *sizes.end() > n || sizes.is_empty() {
        return Err(Error::Contract(format!("subset sizes {sizes:?} are invalid for {n} candidates")));
    }
    let required: u128 = sizes.clone().map(|k| binomial(n, k)).fold(0, u128::saturating_add);
    if required > budget {
        return Err(Error::BudgetExceeded { required, allowed: budget });
    }
    let subsets: Vec<Vec<String>> = sizes
        .flat_map(|k| combinations(n, k))
        .map(|c| c.into_iter().map(|i| candidates[i].clone()).collect())
        .collect();
    let mut scored: Vec<SubsetScore> = subsets
        .into_par_iter()
        .map(|features| match fit_subset(dataset, &features, objectives, plan, seed) {
            Ok(fit) => SubsetScore { score: Some(fit.rmse_test), fit: Some(fit), features, failed: None },
            Err(e) => SubsetScore { features, score: None, fit: None, failed: Some(e.to_string()) },
        })
        .collect();
    scored.sort_by(|a, b| match (a.score, b.score) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    Ok(scored)
}
