//! The reduction ledger: an ordered, replayable record of every cleaning
//! and reduction action, exported as `ledger-v1` JSON lines.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;
use crate::types::{Dataset, ParameterKind};

pub const LEDGER_SCHEMA: &str = "ledger-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Median,
    Mean,
    /// Keep the first member's outputs and drop the others.
    Drop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LedgerEntry {
    DroppedUserExcluded { name: String, reason: String, fill_value: f64 },
    DroppedSparseColumn { name: String, fill_rate: f64, fill_value: f64 },
    DroppedMissingRow { row_id: usize, column: String },
    DroppedRuleViolationRow { row_id: usize, rule: String, residual: f64 },
    TightenedBounds { name: String, from: [f64; 2], to: [f64; 2] },
    RuleBoundColumn { name: String, rule: String, sources: Vec<String> },
    DroppedOutOfBoundsRow { row_id: usize, column: String, value: f64 },
    DroppedConstantColumn { name: String, value: f64 },
    DroppedOutlierRow { row_id: usize, column: String, robust_z: f64 },
    DroppedCorrelatedColumn { name: String, kept: String, slope: f64, intercept: f64, r: f64 },
    MergedReplicateGroup { group_id: usize, members: Vec<usize>, aggregation: Aggregation },
    /// Cleaned input left out by feature selection.
    DroppedUnselected { name: String, fill_value: f64 },
}

impl LedgerEntry {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LedgerEntry::DroppedUserExcluded { .. } => "dropped_user_excluded",
            LedgerEntry::DroppedSparseColumn { .. } => "dropped_sparse_column",
            LedgerEntry::DroppedMissingRow { .. } => "dropped_missing_row",
            LedgerEntry::DroppedRuleViolationRow { .. } => "dropped_rule_violation_row",
            LedgerEntry::TightenedBounds { .. } => "tightened_bounds",
            LedgerEntry::RuleBoundColumn { .. } => "rule_bound_column",
            LedgerEntry::DroppedOutOfBoundsRow { .. } => "dropped_out_of_bounds_row",
            LedgerEntry::DroppedConstantColumn { .. } => "dropped_constant_column",
            LedgerEntry::DroppedOutlierRow { .. } => "dropped_outlier_row",
            LedgerEntry::DroppedCorrelatedColumn { .. } => "dropped_correlated_column",
            LedgerEntry::MergedReplicateGroup { .. } => "merged_replicate_group",
            LedgerEntry::DroppedUnselected { .. } => "dropped_unselected",
        }
    }

    /// Name of the input column this entry removes, if any.
    pub fn dropped_column(&self) -> Option<&str> {
        match self {
            LedgerEntry::DroppedUserExcluded { name, .. }
            | LedgerEntry::DroppedSparseColumn { name, .. }
            | LedgerEntry::RuleBoundColumn { name, .. }
            | LedgerEntry::DroppedConstantColumn { name, .. }
            | LedgerEntry::DroppedCorrelatedColumn { name, .. }
            | LedgerEntry::DroppedUnselected { name, .. } => Some(name),
            _ => None,
        }
    }

    /// Id of the row this entry removes, if any.
    pub fn dropped_row(&self) -> Option<usize> {
        match self {
            LedgerEntry::DroppedMissingRow { row_id, .. }
            | LedgerEntry::DroppedRuleViolationRow { row_id, .. }
            | LedgerEntry::DroppedOutOfBoundsRow { row_id, .. }
            | LedgerEntry::DroppedOutlierRow { row_id, .. } => Some(*row_id),
            _ => None,
        }
    }

    /// Applies this entry to a dataset. Cleaning stages compute their
    /// entries and then mutate through this function only, so replaying a
    /// ledger follows exactly the same code path.
    pub fn apply(&self, dataset: &mut Dataset) -> Result<()> {
        if let Some(name) = self.dropped_column() {
            let j = column(dataset, name)?;
            dataset.inputs.remove(j);
            for r in &mut dataset.rows {
                r.inputs.remove(j);
            }
            return Ok(());
        }
        if let Some(id) = self.dropped_row() {
            let pos = row_position(dataset, id)?;
            dataset.rows.remove(pos);
            return Ok(());
        }
        match self {
            LedgerEntry::TightenedBounds { name, to, .. } => {
                let j = column(dataset, name)?;
                dataset.inputs[j].bounds = Some(*to);
            }
            LedgerEntry::MergedReplicateGroup { group_id, members, aggregation } => {
                let positions = members
                    .iter()
                    .map(|&id| row_position(dataset, id))
                    .collect::<Result<Vec<_>>>()?;
                let Some(&first) = positions.first() else {
                    return Err(Error::Consistency(format!("replicate group {group_id} has no members")));
                };
                let n_out = dataset.outputs.len();
                let merged: Vec<Option<f64>> = (0..n_out)
                    .map(|k| {
                        let vals: Vec<f64> = positions.iter().filter_map(|&p| dataset.rows[p].outputs[k]).collect();
                        if vals.is_empty() {
                            return None;
                        }
                        Some(match aggregation {
                            Aggregation::Median => stats::median(&vals),
                            Aggregation::Mean => stats::mean(&vals),
                            Aggregation::Drop => dataset.rows[first].outputs[k].unwrap_or(vals[0]),
                        })
                    })
                    .collect();
                dataset.rows[first].outputs = merged;
                dataset.rows[first].replicate_group = Some(*group_id);
                let mut rest: Vec<usize> = positions[1..].to_vec();
                rest.sort_unstable_by(|a, b| b.cmp(a));
                for p in rest {
                    dataset.rows.remove(p);
                }
            }
            _ => unreachable!("column and row drops handled above"),
        }
        Ok(())
    }
}

fn column(dataset: &Dataset, name: &str) -> Result<usize> {
    dataset
        .input_index(name)
        .ok_or_else(|| Error::Consistency(format!("ledger references unknown column `{name}`")))
}

fn row_position(dataset: &Dataset, id: usize) -> Result<usize> {
    dataset
        .rows
        .iter()
        .position(|r| r.id == id)
        .ok_or_else(|| Error::Consistency(format!("ledger references unknown row {id}")))
}

/// Value used to fill a column that is no longer optimized: the median for
/// numeric columns (rounded for integers), the most frequent level for
/// categorical ones.
pub fn default_fill(dataset: &Dataset, j: usize) -> f64 {
    let vals: Vec<f64> = dataset.rows.iter().filter_map(|r| r.inputs[j]).collect();
    if vals.is_empty() {
        let (lo, hi) = dataset.inputs[j].range();
        return if dataset.inputs[j].kind == ParameterKind::Categorical { 0.0 } else { lo + (hi - lo) / 2.0 };
    }
    match dataset.inputs[j].kind {
        ParameterKind::Continuous => stats::median(&vals),
        ParameterKind::Integer => stats::median(&vals).round(),
        ParameterKind::Categorical => {
            let levels = dataset.inputs[j].levels.len();
            let mut counts = vec![0usize; levels.max(1)];
            for v in vals {
                if let Some(c) = counts.get_mut(v as usize) {
                    *c += 1;
                }
            }
            (0..counts.len()).fold(0, |b, i| if counts[i] > counts[b] { i } else { b }) as f64
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReductionLedger {
    pub entries: Vec<LedgerEntry>,
}

#[derive(Serialize, Deserialize)]
struct LedgerHeader {
    schema: String,
    entries: usize,
}

impl ReductionLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn extend(&mut self, entries: impl IntoIterator<Item = LedgerEntry>) {
        self.entries.extend(entries);
    }

    /// Replays every entry against a raw dataset.
    pub fn replay(&self, raw: &Dataset) -> Result<Dataset> {
        let mut d = raw.clone();
        for e in &self.entries {
            e.apply(&mut d)?;
        }
        Ok(d)
    }

    /// Count of entries per kind name.
    pub fn census(&self) -> std::collections::BTreeMap<&'static str, usize> {
        let mut m = std::collections::BTreeMap::new();
        for e in &self.entries {
            *m.entry(e.kind_name()).or_insert(0) += 1;
        }
        m
    }

    /// One JSON document per line, preceded by a schema header line.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = serde_json::to_string(&LedgerHeader {
            schema: LEDGER_SCHEMA.into(),
            entries: self.entries.len(),
        })?;
        out.push('\n');
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: LedgerHeader = serde_json::from_str(
            lines.next().ok_or_else(|| Error::Serialization("empty ledger document".into()))?,
        )?;
        if header.schema != LEDGER_SCHEMA {
            return Err(Error::Serialization(format!("unsupported ledger schema `{}`", header.schema)));
        }
        let entries = lines.map(serde_json::from_str).collect::<std::result::Result<Vec<_>, _>>()?;
        if entries.len() != header.entries {
            return Err(Error::Serialization(format!(
                "ledger header announces {} entries, found {}",
                header.entries,
                entries.len()
            )));
        }
        Ok(Self { entries })
    }
}
