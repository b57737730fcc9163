//! Rebuilding complete recipes from reduced optimizer vectors.
//!
//! The reduction ledger is walked backwards: every column it removed is
//! restored from the information the entry kept (constant value, affine
//! relation, determining rule or fill value), then every rule and every
//! original bound is checked again.

use std::collections::BTreeMap;

use procopt_core::cleaning::{ConstraintRule, LedgerEntry, ParsedRule};
use procopt_core::{ParameterKind, ParameterSpec};
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};

/// Slack added to rule tolerances and bounds when re-checking.
pub const CHECK_SLACK: f64 = 1e-9;

pub const FLAG_EXPERT_EXCLUDED: &str = "default, expert-excluded";
pub const FLAG_SPARSE: &str = "default, sparse-column";
pub const FLAG_UNSELECTED: &str = "default, unselected";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValueOrigin {
    Optimized,
    Constant,
    Correlated { kept: String, slope: f64, intercept: f64 },
    RuleBound { rule: String },
    ExpertExcluded,
    Sparse,
    Unselected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterValue {
    pub name: String,
    /// Native units; the level index for categorical parameters.
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<String>,
    pub origin: ValueOrigin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintCheck {
    /// Rule expression, or `bounds(<name>)` for a parameter box check.
    pub rule: String,
    /// `None` when the residual cannot be computed or is not finite.
    pub residual: Option<f64>,
    pub tolerance: f64,
    pub passed: bool,
}

/// A full parameter assignment rebuilt from a reduced vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reconstruction {
    /// One value per original input, in original column order.
    pub values: Vec<ParameterValue>,
    pub checks: Vec<ConstraintCheck>,
    pub valid: bool,
    /// Failed checks, by rule.
    pub violations: Vec<String>,
    pub flags: Vec<String>,
}

impl Reconstruction {
    pub fn value(&self, name: &str) -> Option<f64> {
        self.values.iter().find(|v| v.name == name).map(|v| v.value)
    }
}

/// Rebuilds every original input from the values of the reduced features.
///
/// `ledger` holds the cleaning entries followed by the selection entries.
/// A recipe that breaks a rule or a bound after reconstruction is returned
/// with `valid = false` and the offending checks listed.
pub fn reconstruct_recipe(
    features: &[String],
    reduced: &[f64],
    original: &[ParameterSpec],
    ledger: &[LedgerEntry],
    rules: &[ConstraintRule],
) -> Result<Reconstruction> {
    if features.len() != reduced.len() {
        return Err(PipelineError::validation(format!(
            "{} feature names for {} values",
            features.len(),
            reduced.len()
        )));
    }
    let dropped: Vec<&str> = ledger.iter().filter_map(LedgerEntry::dropped_column).collect();
    let mut expected: Vec<&str> = original
        .iter()
        .map(|p| p.name.as_str())
        .filter(|n| !dropped.contains(n))
        .collect();
    let mut given: Vec<&str> = features.iter().map(String::as_str).collect();
    expected.sort_unstable();
    given.sort_unstable();
    if expected != given {
        return Err(PipelineError::validation(format!(
            "reduced vector covers [{}] but the ledger leaves [{}]",
            given.join(", "),
            expected.join(", ")
        )));
    }

    let spec_of = |name: &str| original.iter().find(|p| p.name == name);
    let mut known: BTreeMap<String, (f64, ValueOrigin)> = BTreeMap::new();
    for (n, &v) in features.iter().zip(reduced) {
        known.insert(n.clone(), (v, ValueOrigin::Optimized));
    }
    for entry in ledger.iter().rev() {
        let Some(name) = entry.dropped_column() else { continue };
        let (value, origin) = match entry {
            LedgerEntry::DroppedConstantColumn { value, .. } => (*value, ValueOrigin::Constant),
            LedgerEntry::DroppedCorrelatedColumn { kept, slope, intercept, .. } => {
                let Some((k, _)) = known.get(kept) else {
                    return Err(PipelineError::validation(format!(
                        "`{name}` depends on `{kept}`, which cannot be reconstructed"
                    )));
                };
                (
                    slope * k + intercept,
                    ValueOrigin::Correlated { kept: kept.clone(), slope: *slope, intercept: *intercept },
                )
            }
            LedgerEntry::RuleBoundColumn { rule, .. } => {
                let parsed = rules
                    .iter()
                    .find(|r| &r.expression == rule)
                    .ok_or_else(|| PipelineError::validation(format!("ledger references unknown rule `{rule}`")))?
                    .parse()
                    .map_err(|e| PipelineError::validation(e.to_string()))?;
                let v = parsed.compute(|n| known.get(n).map(|(v, _)| *v)).ok_or_else(|| {
                    PipelineError::validation(format!("rule `{rule}` cannot be evaluated for `{name}`"))
                })?;
                (v, ValueOrigin::RuleBound { rule: rule.clone() })
            }
            LedgerEntry::DroppedUserExcluded { fill_value, .. } => (*fill_value, ValueOrigin::ExpertExcluded),
            LedgerEntry::DroppedSparseColumn { fill_value, .. } => (*fill_value, ValueOrigin::Sparse),
            LedgerEntry::DroppedUnselected { fill_value, .. } => (*fill_value, ValueOrigin::Unselected),
            _ => continue,
        };
        let value = match spec_of(name).map(|p| p.kind) {
            Some(ParameterKind::Integer | ParameterKind::Categorical) => value.round(),
            _ => value,
        };
        known.insert(name.to_string(), (value, origin));
    }

    let mut values = Vec::with_capacity(original.len());
    let mut flags = Vec::new();
    for spec in original {
        let Some((value, origin)) = known.get(&spec.name).cloned() else {
            return Err(PipelineError::validation(format!("no value for `{}`", spec.name)));
        };
        let flag = match origin {
            ValueOrigin::ExpertExcluded => Some(FLAG_EXPERT_EXCLUDED),
            ValueOrigin::Sparse => Some(FLAG_SPARSE),
            ValueOrigin::Unselected => Some(FLAG_UNSELECTED),
            _ => None,
        }
        .map(String::from);
        if let Some(f) = &flag {
            flags.push(format!("{}: {f}", spec.name));
        }
        let level = (spec.kind == ParameterKind::Categorical)
            .then(|| spec.levels.get(value as usize).cloned())
            .flatten();
        values.push(ParameterValue { name: spec.name.clone(), value, level, origin, flag });
    }

    let lookup = |n: &str| known.get(n).map(|(v, _)| *v);
    let mut checks = Vec::new();
    for rule in rules {
        let parsed: ParsedRule = rule.parse().map_err(|e| PipelineError::validation(e.to_string()))?;
        let residual = parsed.residual(lookup).filter(|r| r.is_finite());
        checks.push(ConstraintCheck {
            rule: rule.expression.clone(),
            residual,
            tolerance: rule.tolerance,
            passed: residual.is_some_and(|r| r <= rule.tolerance + CHECK_SLACK),
        });
    }
    for (spec, v) in original.iter().zip(&values) {
        let residual = match spec.kind {
            ParameterKind::Categorical => {
                (v.value >= 0.0 && (v.value as usize) < spec.levels.len()).then_some(0.0)
            }
            _ => match spec.bounds {
                Some([lo, hi]) => Some((lo - v.value).max(v.value - hi).max(0.0)),
                None => Some(0.0),
            },
        }
        .filter(|_| v.value.is_finite());
        checks.push(ConstraintCheck {
            rule: format!("bounds({})", spec.name),
            residual,
            tolerance: 0.0,
            passed: residual.is_some_and(|r| r <= CHECK_SLACK),
        });
    }
    let violations: Vec<String> = checks.iter().filter(|c| !c.passed).map(|c| c.rule.clone()).collect();
    Ok(Reconstruction { values, checks, valid: violations.is_empty(), violations, flags })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub run_id: String,
    /// Iteration whose archive the recipe comes from.
    pub k: usize,
    pub archive_index: usize,
    /// 1-based position in descending hypervolume contribution.
    pub rank: usize,
    pub contribution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedObjective {
    pub name: String,
    pub value: f64,
    /// Half-width of the prediction band.
    pub half_width: f64,
}

/// A complete, checked recipe ready for review.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recipe {
    pub provenance: Provenance,
    /// The reduced vector the optimizer found, in feature order.
    pub reduced: Vec<f64>,
    pub values: Vec<ParameterValue>,
    pub predicted: Vec<PredictedObjective>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merit: Option<f64>,
    pub checks: Vec<ConstraintCheck>,
    pub valid: bool,
    pub violations: Vec<String>,
    pub flags: Vec<String>,
}

impl Recipe {
    /// Flat native-unit document: `param:<name>`, `pred:<objective>`,
    /// `band:<objective>` plus run id, rank and validity.
    pub fn export(&self) -> BTreeMap<String, serde_json::Value> {
        let mut out = BTreeMap::new();
        for v in &self.values {
            out.insert(format!("param:{}", v.name), number(v.value));
            if let Some(l) = &v.level {
                out.insert(format!("level:{}", v.name), serde_json::Value::from(l.clone()));
            }
        }
        for p in &self.predicted {
            out.insert(format!("pred:{}", p.name), number(p.value));
            out.insert(format!("band:{}", p.name), number(p.half_width));
        }
        if let Some(m) = self.merit {
            out.insert("merit".into(), number(m));
        }
        out.insert("run_id".into(), self.provenance.run_id.clone().into());
        out.insert("rank".into(), self.provenance.rank.into());
        out.insert("k".into(), self.provenance.k.into());
        out.insert("valid".into(), self.valid.into());
        out
    }

    /// The flat document as a two-line CSV (header, values).
    pub fn export_csv(&self) -> String {
        let flat = self.export();
        let cell = |v: &serde_json::Value| match v {
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        let header: Vec<&str> = flat.keys().map(String::as_str).collect();
        let values: Vec<String> = flat.values().map(cell).collect();
        format!("{}\n{}\n", header.join(","), values.join(","))
    }
}

fn number(v: f64) -> serde_json::Value {
    serde_json::Number::from_f64(v).map(serde_json::Value::Number).unwrap_or(serde_json::Value::Null)
}
