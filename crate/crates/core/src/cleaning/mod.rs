//! Turns a raw dataset into a consistent, reduced table.
//!
//! Every stage computes a list of [`LedgerEntry`] values and applies them
//! through [`LedgerEntry::apply`]; the composite ledger therefore replays
//! onto the raw dataset to give the cleaned one exactly.

mod ledger;
pub mod rules;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;
use crate::types::{Dataset, ParameterKind};

pub use ledger::{default_fill, Aggregation, LedgerEntry, ReductionLedger, LEDGER_SCHEMA};
pub use rules::{ConstraintRule, ParsedRule, RuleKind};

/// MAD to standard deviation consistency constant for Gaussian data.
pub const MAD_SCALE: f64 = 1.4826;

fn apply_all(mut dataset: Dataset, entries: &[LedgerEntry]) -> Result<Dataset> {
    for e in entries {
        e.apply(&mut dataset)?;
    }
    Ok(dataset)
}

fn present(dataset: &Dataset, j: usize) -> Vec<f64> {
    dataset.rows.iter().filter_map(|r| r.inputs[j]).collect()
}

/// Removes input columns with no spread (range ≤ 1e-12·max(1, |mean|)).
pub fn drop_constant_columns(dataset: &Dataset) -> Result<(Dataset, Vec<LedgerEntry>)> {
    let mut entries = Vec::new();
    for (j, spec) in dataset.inputs.iter().enumerate() {
        let vals = present(dataset, j);
        let Some(&first) = vals.first() else { continue };
        let (lo, hi) = vals.iter().fold((first, first), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if hi - lo <= 1e-12 * stats::mean(&vals).abs().max(1.0) {
            entries.push(LedgerEntry::DroppedConstantColumn { name: spec.name.clone(), value: first });
        }
    }
    Ok((apply_all(dataset.clone(), &entries)?, entries))
}

/// Drops later numeric columns that correlate with an earlier kept column
/// at |r| ≥ `threshold`, recording the least-squares affine relation
/// `dropped ≈ slope·kept + intercept`.
pub fn prune_correlated(dataset: &Dataset, threshold: f64) -> Result<(Dataset, Vec<LedgerEntry>)> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::Config(format!("correlation threshold {threshold} is outside (0, 1]")));
    }
    if dataset.n_rows() < 3 {
        return Err(Error::InsufficientData(format!(
            "correlation pruning needs at least 3 rows, got {}",
            dataset.n_rows()
        )));
    }
    let mut kept: Vec<usize> = Vec::new();
    let mut entries = Vec::new();
    for (j, spec) in dataset.inputs.iter().enumerate() {
        if !spec.is_numeric() {
            continue;
        }
        let col = dataset.input_column(j);
        let hit = kept.iter().find_map(|&i| {
            let (a, b) = complete_pairs(&dataset.input_column(i), &col);
            if a.len() < 3 {
                return None;
            }
            let r = stats::pearson(&a, &b);
            (r.abs() >= threshold).then(|| {
                let (slope, intercept) = stats::affine_fit(&a, &b);
                LedgerEntry::DroppedCorrelatedColumn {
                    name: spec.name.clone(),
                    kept: dataset.inputs[i].name.clone(),
                    slope,
                    intercept,
                    r,
                }
            })
        });
        match hit {
            Some(e) => entries.push(e),
            None => kept.push(j),
        }
    }
    Ok((apply_all(dataset.clone(), &entries)?, entries))
}

fn complete_pairs(a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
    a.iter().zip(b).filter(|(x, y)| !x.is_nan() && !y.is_nan()).map(|(x, y)| (*x, *y)).unzip()
}

/// Removes rows whose robust z-score `|x − median| / (1.4826·MAD)` exceeds
/// `z_threshold` in any of the given output columns. Columns with zero MAD
/// are skipped.
pub fn detect_outliers(
    dataset: &Dataset,
    z_threshold: f64,
    output_cols: &[usize],
) -> Result<(Dataset, Vec<LedgerEntry>)> {
    if dataset.n_rows() < 5 {
        return Err(Error::InsufficientData(format!(
            "outlier detection needs at least 5 rows, got {}",
            dataset.n_rows()
        )));
    }
    let mut worst: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    for &k in output_cols {
        let vals: Vec<f64> = dataset.rows.iter().filter_map(|r| r.outputs[k]).collect();
        if vals.is_empty() {
            continue;
        }
        let med = stats::median(&vals);
        let mad = stats::mad(&vals);
        if mad == 0.0 {
            continue;
        }
        for (pos, r) in dataset.rows.iter().enumerate() {
            let Some(v) = r.outputs[k] else { continue };
            let z = (v - med).abs() / (MAD_SCALE * mad);
            if z > z_threshold {
                let e = worst.entry(pos).or_insert((k, z));
                if z > e.1 {
                    *e = (k, z);
                }
            }
        }
    }
    let entries: Vec<LedgerEntry> = worst
        .into_iter()
        .map(|(pos, (k, z))| LedgerEntry::DroppedOutlierRow {
            row_id: dataset.rows[pos].id,
            column: dataset.outputs[k].name.clone(),
            robust_z: z,
        })
        .collect();
    Ok((apply_all(dataset.clone(), &entries)?, entries))
}

/// Merges rows whose inputs coincide within `input_tolerance` (L∞ distance
/// in normalized box units, categorical levels must match). Grouping is
/// transitive; the first member is the representative.
pub fn aggregate_replicates(
    dataset: &Dataset,
    input_tolerance: f64,
    aggregation: Aggregation,
) -> Result<(Dataset, Vec<LedgerEntry>)> {
    let n = dataset.n_rows();
    let widths: Vec<Option<f64>> = dataset
        .inputs
        .iter()
        .map(|p| match p.kind {
            ParameterKind::Categorical => None,
            _ => {
                let (lo, hi) = p.range();
                Some(hi - lo)
            }
        })
        .collect();
    let coincide = |a: usize, b: usize| {
        let (ra, rb) = (&dataset.rows[a], &dataset.rows[b]);
        widths.iter().enumerate().all(|(j, w)| match (ra.inputs[j], rb.inputs[j], w) {
            (Some(x), Some(y), Some(w)) => (x - y).abs() / w <= input_tolerance,
            (Some(x), Some(y), None) => x == y,
            (None, None, _) => true,
            _ => false,
        })
    };
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for a in 0..n {
        for b in a + 1..n {
            if coincide(a, b) {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    // Root at the smaller position so roots are first members.
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(i);
    }
    let entries: Vec<LedgerEntry> = groups
        .into_values()
        .filter(|g| g.len() > 1)
        .enumerate()
        .map(|(group_id, g)| LedgerEntry::MergedReplicateGroup {
            group_id,
            members: g.iter().map(|&p| dataset.rows[p].id).collect(),
            aggregation,
        })
        .collect();
    Ok((apply_all(dataset.clone(), &entries)?, entries))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleViolation {
    pub row_id: usize,
    pub rule: String,
    pub residual: f64,
}

/// Applies constraint rules.
///
/// Rules that determine a column (fixed/ratio/linear) remove it; bound rules
/// tighten the parameter box; rows violating a rule beyond its tolerance are
/// reported, and removed when `strict`.
pub fn apply_rules(
    dataset: &Dataset,
    rules: &[ConstraintRule],
    strict: bool,
) -> Result<(Dataset, Vec<LedgerEntry>, Vec<RuleViolation>)> {
    let parsed = rules.iter().map(ConstraintRule::parse).collect::<Result<Vec<_>>>()?;
    for p in &parsed {
        for name in p.params() {
            if dataset.input_index(name).is_none() {
                return Err(Error::UnknownName { name: name.into(), valid: dataset.input_names() });
            }
        }
    }
    check_rule_conflicts(dataset, rules, &parsed)?;

    let mut violations = Vec::new();
    for r in &dataset.rows {
        let lookup = |n: &str| dataset.input_index(n).and_then(|j| r.inputs[j]);
        for (rule, p) in rules.iter().zip(&parsed) {
            if let Some(res) = p.residual(lookup) {
                if res > rule.tolerance {
                    violations.push(RuleViolation { row_id: r.id, rule: rule.expression.clone(), residual: res });
                }
            }
        }
    }

    let mut entries = Vec::new();
    if strict {
        let mut seen = BTreeSet::new();
        for v in &violations {
            if seen.insert(v.row_id) {
                entries.push(LedgerEntry::DroppedRuleViolationRow {
                    row_id: v.row_id,
                    rule: v.rule.clone(),
                    residual: v.residual,
                });
            }
        }
    }
    let mut bounds: BTreeMap<usize, [f64; 2]> = BTreeMap::new();
    for p in &parsed {
        if let ParsedRule::Bound { param, lo, hi } = p {
            let j = dataset.input_index(param).expect("checked above");
            let spec = &dataset.inputs[j];
            let cur = *bounds.entry(j).or_insert_with(|| {
                let (a, b) = spec.range();
                [a, b]
            });
            bounds.insert(j, [cur[0].max(*lo), cur[1].min(*hi)]);
        }
    }
    for (j, to) in bounds {
        let spec = &dataset.inputs[j];
        let (a, b) = spec.range();
        if spec.is_numeric() && [a, b] != to {
            entries.push(LedgerEntry::TightenedBounds { name: spec.name.clone(), from: [a, b], to });
        }
    }
    for (rule, p) in rules.iter().zip(&parsed) {
        if let Some((target, sources)) = p.determined() {
            if entries.iter().any(|e| e.dropped_column() == Some(target)) {
                continue;
            }
            entries.push(LedgerEntry::RuleBoundColumn {
                name: target.into(),
                rule: rule.expression.clone(),
                sources: sources.into_iter().map(String::from).collect(),
            });
        }
    }
    Ok((apply_all(dataset.clone(), &entries)?, entries, violations))
}

fn check_rule_conflicts(dataset: &Dataset, rules: &[ConstraintRule], parsed: &[ParsedRule]) -> Result<()> {
    let mut determined: BTreeMap<&str, (&ParsedRule, &str)> = BTreeMap::new();
    for (rule, p) in rules.iter().zip(parsed) {
        if let Some((target, _)) = p.determined() {
            if let Some((prev, expr)) = determined.insert(target, (p, &rule.expression)) {
                if prev != p {
                    return Err(Error::RuleConflict {
                        name: target.into(),
                        detail: format!("`{expr}` and `{}` both determine it", rule.expression),
                    });
                }
            }
        }
    }
    // Bounds: the intersection with the parameter box must stay nonempty.
    let mut boxes: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    for p in parsed {
        if let ParsedRule::Bound { param, lo, hi } = p {
            let j = dataset.input_index(param).expect("checked by caller");
            let init = dataset.inputs[j].range();
            let cur = boxes.entry(param).or_insert(init);
            *cur = (cur.0.max(*lo), cur.1.min(*hi));
            if cur.0 > cur.1 {
                return Err(Error::RuleConflict {
                    name: param.clone(),
                    detail: format!("bounds intersect to the empty interval [{}, {}]", cur.0, cur.1),
                });
            }
        }
    }
    for (target, (p, expr)) in &determined {
        if let (ParsedRule::Fixed { value, .. }, Some((lo, hi))) = (p, boxes.get(target)) {
            if value < lo || value > hi {
                return Err(Error::RuleConflict {
                    name: (*target).into(),
                    detail: format!("`{expr}` lies outside its bound [{lo}, {hi}]"),
                });
            }
        }
    }
    // Determination must be acyclic so recipes can be rebuilt.
    for start in determined.keys() {
        let mut cur = *start;
        let mut steps = 0;
        while let Some((p, _)) = determined.get(cur) {
            let Some((_, sources)) = p.determined() else { break };
            let Some(&next) = sources.first() else { break };
            steps += 1;
            if next == *start || steps > determined.len() {
                return Err(Error::RuleConflict {
                    name: (*start).into(),
                    detail: "rules determine this parameter cyclically".into(),
                });
            }
            cur = next;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedParameter {
    pub name: String,
    #[serde(default)]
    pub reason: String,
}

fn default_corr() -> f64 {
    0.95
}
fn default_z() -> f64 {
    3.5
}
fn default_rep_tol() -> f64 {
    1e-9
}
fn default_fill_rate() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CleaningConfig {
    /// Outputs screened for outliers and required to be present. Empty
    /// means every output.
    #[serde(default)]
    pub objectives: Vec<String>,
    #[serde(default = "default_corr")]
    pub correlation_threshold: f64,
    #[serde(default = "default_z")]
    pub outlier_z: f64,
    #[serde(default = "default_rep_tol")]
    pub replicate_tolerance: f64,
    #[serde(default)]
    pub aggregation: Aggregation,
    /// Input columns observed in fewer than this fraction of rows are
    /// dropped before rows with missing inputs are removed.
    #[serde(default = "default_fill_rate")]
    pub min_fill_rate: f64,
    #[serde(default)]
    pub strict_rules: bool,
    #[serde(default)]
    pub rules: Vec<ConstraintRule>,
    #[serde(default)]
    pub exclude: Vec<ExcludedParameter>,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        Self {
            objectives: Vec::new(),
            correlation_threshold: default_corr(),
            outlier_z: default_z(),
            replicate_tolerance: default_rep_tol(),
            aggregation: Aggregation::Median,
            min_fill_rate: default_fill_rate(),
            strict_rules: false,
            rules: Vec::new(),
            exclude: Vec::new(),
        }
    }
}

/// Minimum number of rows a cleaned dataset must keep.
pub const MIN_CLEAN_ROWS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleaningOutcome {
    pub dataset: Dataset,
    pub ledger: ReductionLedger,
    pub violations: Vec<RuleViolation>,
}

/// Runs the full cleaning pipeline:
/// user exclusions → sparse columns → rows with missing values → rules →
/// out-of-bounds rows → constant columns → outliers → constant columns
/// (again, outlier removal can expose them) → correlated columns →
/// replicate aggregation.
pub fn clean(raw: &Dataset, config: &CleaningConfig) -> Result<CleaningOutcome> {
    raw.validate(false)?;
    let objective_cols = if config.objectives.is_empty() {
        (0..raw.outputs.len()).collect()
    } else {
        raw.output_indices(&config.objectives)?
    };
    let mut ledger = ReductionLedger::new();
    let mut d = raw.clone();

    let mut stage = |d: &mut Dataset, entries: Vec<LedgerEntry>| -> Result<()> {
        for e in &entries {
            e.apply(d)?;
        }
        ledger.extend(entries);
        Ok(())
    };

    let mut excluded = Vec::new();
    for ex in &config.exclude {
        let j = d.input_index(&ex.name).ok_or_else(|| Error::UnknownName {
            name: ex.name.clone(),
            valid: d.input_names(),
        })?;
        excluded.push(LedgerEntry::DroppedUserExcluded {
            name: ex.name.clone(),
            reason: ex.reason.clone(),
            fill_value: default_fill(&d, j),
        });
    }
    stage(&mut d, excluded)?;

    let n = d.n_rows().max(1) as f64;
    let sparse: Vec<LedgerEntry> = (0..d.inputs.len())
        .filter_map(|j| {
            let rate = present(&d, j).len() as f64 / n;
            (rate < config.min_fill_rate).then(|| LedgerEntry::DroppedSparseColumn {
                name: d.inputs[j].name.clone(),
                fill_rate: rate,
                fill_value: default_fill(&d, j),
            })
        })
        .collect();
    stage(&mut d, sparse)?;

    let missing: Vec<LedgerEntry> = d
        .rows
        .iter()
        .filter_map(|r| {
            let col = objective_cols
                .iter()
                .find(|&&k| r.outputs[k].is_none())
                .map(|&k| d.outputs[k].name.clone())
                .or_else(|| r.inputs.iter().position(Option::is_none).map(|j| d.inputs[j].name.clone()))?;
            Some(LedgerEntry::DroppedMissingRow { row_id: r.id, column: col })
        })
        .collect();
    stage(&mut d, missing)?;

    let (_, rule_entries, violations) = apply_rules(&d, &config.rules, config.strict_rules)?;
    stage(&mut d, rule_entries)?;

    let oob: Vec<LedgerEntry> = d
        .rows
        .iter()
        .filter_map(|r| {
            d.inputs.iter().zip(&r.inputs).find_map(|(spec, v)| {
                let v = (*v)?;
                (!spec.contains(v, crate::ABS_TOL)).then(|| LedgerEntry::DroppedOutOfBoundsRow {
                    row_id: r.id,
                    column: spec.name.clone(),
                    value: v,
                })
            })
        })
        .collect();
    stage(&mut d, oob)?;

    if d.n_rows() < MIN_CLEAN_ROWS {
        return Err(insufficient(d.n_rows()));
    }
    let (_, e) = drop_constant_columns(&d)?;
    stage(&mut d, e)?;
    let (_, e) = detect_outliers(&d, config.outlier_z, &objective_cols)?;
    stage(&mut d, e)?;
    let (_, e) = drop_constant_columns(&d)?;
    stage(&mut d, e)?;
    if d.n_rows() < MIN_CLEAN_ROWS {
        return Err(insufficient(d.n_rows()));
    }
    let (_, e) = prune_correlated(&d, config.correlation_threshold)?;
    stage(&mut d, e)?;
    let (_, e) = aggregate_replicates(&d, config.replicate_tolerance, config.aggregation)?;
    stage(&mut d, e)?;
    if d.n_rows() < MIN_CLEAN_ROWS {
        return Err(insufficient(d.n_rows()));
    }
    d.validate(true)?;
    Ok(CleaningOutcome { dataset: d, ledger, violations })
}

fn insufficient(n: usize) -> Error {
    Error::InsufficientData(format!("only {n} rows survive cleaning, at least {MIN_CLEAN_ROWS} required"))
}
