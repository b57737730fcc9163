//! Shared domain types.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParameterKind {
    Continuous,
    Integer,
    Categorical,
}

/// An input process parameter. Bounds hold the machine/process limits in
/// native units; categorical parameters carry ordered level labels instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpec {
    pub name: String,
    pub kind: ParameterKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub levels: Vec<String>,
    #[serde(default)]
    pub unit: String,
}

impl ParameterSpec {
    pub fn continuous(name: impl Into<String>, lo: f64, hi: f64) -> Self {
        Self {
            name: name.into(),
            kind: ParameterKind::Continuous,
            bounds: Some([lo, hi]),
            levels: Vec::new(),
            unit: String::new(),
        }
    }

    pub fn integer(name: impl Into<String>, lo: f64, hi: f64) -> Self {
        Self {
            kind: ParameterKind::Integer,
            ..Self::continuous(name, lo, hi)
        }
    }

    pub fn categorical<S: Into<String>>(name: impl Into<String>, levels: impl IntoIterator<Item = S>) -> Self {
        Self {
            name: name.into(),
            kind: ParameterKind::Categorical,
            bounds: None,
            levels: levels.into_iter().map(Into::into).collect(),
            unit: String::new(),
        }
    }

    pub fn with_unit(mut self, unit: impl Into<String>) -> Self {
        self.unit = unit.into();
        self
    }

    pub fn is_numeric(&self) -> bool {
        self.kind != ParameterKind::Categorical
    }

    /// Lower and upper bound. Categorical parameters span level indices.
    pub fn range(&self) -> (f64, f64) {
        match (self.kind, self.bounds) {
            (ParameterKind::Categorical, _) => (0.0, self.levels.len().saturating_sub(1) as f64),
            (_, Some([lo, hi])) => (lo, hi),
            (_, None) => (f64::NAN, f64::NAN),
        }
    }

    pub fn level_index(&self, label: &str) -> Option<usize> {
        let label = label.trim();
        self.levels.iter().position(|l| l == label)
    }

    /// Whether a native value is admissible (within bounds, or a valid level).
    pub fn contains(&self, value: f64, tol: f64) -> bool {
        match self.kind {
            ParameterKind::Categorical => {
                value >= 0.0 && value.fract() == 0.0 && (value as usize) < self.levels.len()
            }
            _ => {
                let (lo, hi) = self.range();
                value >= lo - tol && value <= hi + tol
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::Schema("parameter name must be nonempty".into()));
        }
        match self.kind {
            ParameterKind::Categorical => {
                if self.levels.len() < 2 {
                    return Err(Error::Schema(format!(
                        "categorical parameter `{}` needs at least 2 levels",
                        self.name
                    )));
                }
                let distinct: HashSet<&String> = self.levels.iter().collect();
                if distinct.len() != self.levels.len() {
                    return Err(Error::Schema(format!(
                        "categorical parameter `{}` has duplicate levels",
                        self.name
                    )));
                }
            }
            _ => match self.bounds {
                Some([lo, hi]) if lo.is_finite() && hi.is_finite() && lo < hi => {}
                Some([lo, hi]) => {
                    return Err(Error::Schema(format!(
                        "parameter `{}` has invalid bounds [{lo}, {hi}]",
                        self.name
                    )))
                }
                None => {
                    return Err(Error::Schema(format!("parameter `{}` has no bounds", self.name)))
                }
            },
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputSpec {
    pub name: String,
    #[serde(default)]
    pub unit: String,
}

impl OutputSpec {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), unit: String::new() }
    }
}

/// One experiment. Values are in native units, categorical inputs hold the
/// level index, and `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub id: usize,
    pub inputs: Vec<Option<f64>>,
    pub outputs: Vec<Option<f64>>,
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicate_group: Option<usize>,
}

impl ExperimentRow {
    pub fn complete(id: usize, inputs: Vec<f64>, outputs: Vec<f64>) -> Self {
        Self {
            id,
            inputs: inputs.into_iter().map(Some).collect(),
            outputs: outputs.into_iter().map(Some).collect(),
            source: String::new(),
            replicate_group: None,
        }
    }

    /// Input value, treating a missing cell as NaN.
    pub fn input(&self, j: usize) -> f64 {
        self.inputs[j].unwrap_or(f64::NAN)
    }

    pub fn output(&self, j: usize) -> f64 {
        self.outputs[j].unwrap_or(f64::NAN)
    }
}

/// A rectangular table of experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub inputs: Vec<ParameterSpec>,
    pub outputs: Vec<OutputSpec>,
    pub rows: Vec<ExperimentRow>,
}

impl Dataset {
    pub fn new(inputs: Vec<ParameterSpec>, outputs: Vec<OutputSpec>) -> Self {
        Self { inputs, outputs, rows: Vec::new() }
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn input_index(&self, name: &str) -> Option<usize> {
        self.inputs.iter().position(|p| p.name == name)
    }

    pub fn output_index(&self, name: &str) -> Option<usize> {
        self.outputs.iter().position(|o| o.name == name)
    }

    pub fn input_names(&self) -> Vec<String> {
        self.inputs.iter().map(|p| p.name.clone()).collect()
    }

    pub fn output_names(&self) -> Vec<String> {
        self.outputs.iter().map(|o| o.name.clone()).collect()
    }

    /// Resolves input names to column indices.
    pub fn input_indices(&self, names: &[String]) -> Result<Vec<usize>> {
        names
            .iter()
            .map(|n| {
                self.input_index(n).ok_or_else(|| Error::UnknownName {
                    name: n.clone(),
                    valid: self.input_names(),
                })
            })
            .collect()
    }

    pub fn output_indices(&self, names: &[String]) -> Result<Vec<usize>> {
        names
            .iter()
            .map(|n| {
                self.output_index(n).ok_or_else(|| Error::UnknownName {
                    name: n.clone(),
                    valid: self.output_names(),
                })
            })
            .collect()
    }

    /// Input column with missing cells as NaN.
    pub fn input_column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.input(j)).collect()
    }

    pub fn output_column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.output(j)).collect()
    }

    pub fn has_missing(&self) -> bool {
        self.rows
            .iter()
            .any(|r| r.inputs.iter().chain(&r.outputs).any(Option::is_none))
    }

    /// Checks the structural invariants. `cleaned` additionally requires
    /// complete inputs with every value inside its bounds.
    pub fn validate(&self, cleaned: bool) -> Result<()> {
        let mut names = HashSet::new();
        for p in &self.inputs {
            p.validate()?;
            if !names.insert(p.name.as_str()) {
                return Err(Error::Schema(format!("duplicate input name `{}`", p.name)));
            }
        }
        let mut out_names = HashSet::new();
        for o in &self.outputs {
            if o.name.trim().is_empty() || !out_names.insert(o.name.as_str()) {
                return Err(Error::Schema(format!("invalid or duplicate output name `{}`", o.name)));
            }
        }
        for r in &self.rows {
            if r.inputs.len() != self.inputs.len() || r.outputs.len() != self.outputs.len() {
                return Err(Error::Schema(format!("row {} has the wrong arity", r.id)));
            }
            if cleaned {
                for (spec, v) in self.inputs.iter().zip(&r.inputs) {
                    match v {
                        Some(v) if spec.contains(*v, crate::ABS_TOL) => {}
                        Some(v) => {
                            return Err(Error::Schema(format!(
                                "row {}: `{}` = {v} is outside its bounds",
                                r.id, spec.name
                            )))
                        }
                        None => {
                            return Err(Error::Schema(format!("row {}: `{}` is missing", r.id, spec.name)))
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Maximize,
    Minimize,
}

impl Direction {
    /// Multiplier that turns the objective into a maximization.
    pub fn sign(self) -> f64 {
        match self {
            Direction::Maximize => 1.0,
            Direction::Minimize => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub output: String,
    pub direction: Direction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<[f64; 2]>,
}

impl ObjectiveSpec {
    pub fn maximize(output: impl Into<String>) -> Self {
        Self { output: output.into(), direction: Direction::Maximize, target: None }
    }

    pub fn minimize(output: impl Into<String>) -> Self {
        Self { output: output.into(), direction: Direction::Minimize, target: None }
    }

    pub fn validate(&self, dataset: &Dataset) -> Result<()> {
        if dataset.output_index(&self.output).is_none() {
            return Err(Error::UnknownName {
                name: self.output.clone(),
                valid: dataset.output_names(),
            });
        }
        if let Some([lo, hi]) = self.target {
            if lo > hi {
                return Err(Error::Config(format!(
                    "objective `{}` has target window [{lo}, {hi}] with lo > hi",
                    self.output
                )));
            }
        }
        Ok(())
    }
}

/// Train/test metrics for one output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rmse_train: f64,
    pub rmse_test: f64,
    pub r2_train: f64,
    pub r2_test: f64,
    /// `None` when the held-out split is too small for the feature count.
    pub adjusted_r2_test: Option<f64>,
    pub n_train: usize,
    pub n_test: usize,
    pub n_features: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_invariants() {
        assert!(ParameterSpec::continuous("a", 0.0, 1.0).validate().is_ok());
        assert!(ParameterSpec::continuous("a", 1.0, 1.0).validate().is_err());
        assert!(ParameterSpec::continuous("", 0.0, 1.0).validate().is_err());
        assert!(ParameterSpec::categorical("c", ["x"]).validate().is_err());
        assert!(ParameterSpec::categorical("c", ["x", "x"]).validate().is_err());
        assert!(ParameterSpec::categorical("c", ["x", "y"]).validate().is_ok());
    }

    #[test]
    fn dataset_validation_catches_duplicates_and_bounds() {
        let mut d = Dataset::new(
            vec![ParameterSpec::continuous("a", 0.0, 1.0)],
            vec![OutputSpec::new("y"), OutputSpec::new("y")],
        );
        assert!(d.validate(false).is_err());
        d.outputs.pop();
        d.rows.push(ExperimentRow::complete(0, vec![2.0], vec![1.0]));
        assert!(d.validate(false).is_ok());
        assert!(d.validate(true).is_err());
    }

    #[test]
    fn objective_window_must_be_ordered() {
        let d = Dataset::new(vec![], vec![OutputSpec::new("y")]);
        let mut o = ObjectiveSpec::maximize("y");
        o.target = Some([2.0, 1.0]);
        assert!(o.validate(&d).is_err());
        assert!(ObjectiveSpec::maximize("z").validate(&d).is_err());
    }
}
