//! Affine input scaling, one-hot encoding and output z-scoring.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;
use crate::types::{Dataset, ParameterKind, ParameterSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "encoding", rename_all = "kebab-case")]
pub enum InputEncoding {
    /// `[lo, hi]` maps to `[0, 1]`; integer parameters round on decode.
    Affine { lo: f64, hi: f64, integer: bool },
    /// One indicator column per level.
    OneHot { levels: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputMap {
    pub name: String,
    #[serde(flatten)]
    pub encoding: InputEncoding,
}

impl InputMap {
    pub fn from_spec(spec: &ParameterSpec) -> Result<Self> {
        let encoding = match spec.kind {
            ParameterKind::Categorical => InputEncoding::OneHot { levels: spec.levels.clone() },
            kind => {
                let (lo, hi) = spec.range();
                if !(hi - lo > 0.0) {
                    return Err(Error::DegenerateColumn {
                        column: spec.name.clone(),
                        reason: format!("zero-width bounds [{lo}, {hi}]"),
                    });
                }
                InputEncoding::Affine { lo, hi, integer: kind == ParameterKind::Integer }
            }
        };
        Ok(Self { name: spec.name.clone(), encoding })
    }

    pub fn width(&self) -> usize {
        match &self.encoding {
            InputEncoding::Affine { .. } => 1,
            InputEncoding::OneHot { levels } => levels.len(),
        }
    }

    /// Single decision coordinate in `[0, 1]` for a native value.
    pub fn to_unit(&self, v: f64) -> f64 {
        match &self.encoding {
            InputEncoding::Affine { lo, hi, .. } => (v - lo) / (hi - lo),
            InputEncoding::OneHot { levels } => (v + 0.5) / levels.len() as f64,
        }
    }

    /// Native value for a decision coordinate; integer and categorical
    /// parameters snap to admissible values.
    pub fn from_unit(&self, u: f64) -> f64 {
        match &self.encoding {
            InputEncoding::Affine { lo, hi, integer } => {
                let v = u * (hi - lo) + lo;
                if *integer {
                    v.round().clamp(lo.ceil(), hi.floor())
                } else {
                    v
                }
            }
            InputEncoding::OneHot { levels } => {
                let l = levels.len();
                ((u * l as f64).floor().max(0.0) as usize).min(l - 1) as f64
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputMap {
    pub name: String,
    pub mean: f64,
    pub std: f64,
}

/// Every affine map and one-hot layout applied to a table, so encoded values
/// can be mapped back to native units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationRecord {
    pub inputs: Vec<InputMap>,
    pub outputs: Vec<OutputMap>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedTable {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
}

impl NormalizationRecord {
    /// Builds the record for the given input and output columns. Input maps
    /// come from the parameter bounds, output maps from the row statistics.
    pub fn fit(dataset: &Dataset, input_cols: &[usize], output_cols: &[usize]) -> Result<Self> {
        let inputs = input_cols
            .iter()
            .map(|&j| InputMap::from_spec(&dataset.inputs[j]))
            .collect::<Result<Vec<_>>>()?;
        let outputs = output_cols
            .iter()
            .map(|&j| {
                let col = dataset.output_column(j);
                let std = stats::std_dev(&col);
                if !(std > 0.0) || !std.is_finite() {
                    return Err(Error::DegenerateColumn {
                        column: dataset.outputs[j].name.clone(),
                        reason: "zero output variance".into(),
                    });
                }
                Ok(OutputMap { name: dataset.outputs[j].name.clone(), mean: stats::mean(&col), std })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { inputs, outputs })
    }

    pub fn encoded_width(&self) -> usize {
        self.inputs.iter().map(InputMap::width).sum()
    }

    pub fn encode_inputs(&self, native: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.encoded_width());
        for (map, &v) in self.inputs.iter().zip(native) {
            match &map.encoding {
                InputEncoding::Affine { lo, hi, .. } => out.push((v - lo) / (hi - lo)),
                InputEncoding::OneHot { levels } => {
                    out.extend((0..levels.len()).map(|l| if l as f64 == v { 1.0 } else { 0.0 }))
                }
            }
        }
        out
    }

    pub fn decode_inputs(&self, encoded: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.inputs.len());
        let mut at = 0;
        for map in &self.inputs {
            match &map.encoding {
                InputEncoding::Affine { lo, hi, .. } => out.push(encoded[at] * (hi - lo) + lo),
                InputEncoding::OneHot { levels } => {
                    let block = &encoded[at..at + levels.len()];
                    let best = (0..block.len()).fold(0, |b, i| if block[i] > block[b] { i } else { b });
                    out.push(best as f64);
                }
            }
            at += map.width();
        }
        out
    }

    pub fn to_unit(&self, native: &[f64]) -> Vec<f64> {
        self.inputs.iter().zip(native).map(|(m, &v)| m.to_unit(v)).collect()
    }

    pub fn from_unit(&self, unit: &[f64]) -> Vec<f64> {
        self.inputs.iter().zip(unit).map(|(m, &u)| m.from_unit(u)).collect()
    }

    pub fn encode_output(&self, j: usize, v: f64) -> f64 {
        (v - self.outputs[j].mean) / self.outputs[j].std
    }

    pub fn decode_output(&self, j: usize, z: f64) -> f64 {
        z * self.outputs[j].std + self.outputs[j].mean
    }
}

/// Normalizes every input and output column of a cleaned dataset.
pub fn normalize(dataset: &Dataset) -> Result<(NormalizedTable, NormalizationRecord)> {
    if dataset.n_rows() < 2 {
        return Err(Error::InsufficientData(format!(
            "normalize needs at least 2 rows, got {}",
            dataset.n_rows()
        )));
    }
    let in_cols: Vec<usize> = (0..dataset.inputs.len()).collect();
    let out_cols: Vec<usize> = (0..dataset.outputs.len()).collect();
    let record = NormalizationRecord::fit(dataset, &in_cols, &out_cols)?;
    let table = encode_rows(dataset, &record, &in_cols, &out_cols);
    Ok((table, record))
}

/// Encodes the rows of a dataset through an existing record.
pub fn encode_rows(
    dataset: &Dataset,
    record: &NormalizationRecord,
    input_cols: &[usize],
    output_cols: &[usize],
) -> NormalizedTable {
    let x = dataset
        .rows
        .iter()
        .map(|r| {
            let native: Vec<f64> = input_cols.iter().map(|&j| r.input(j)).collect();
            record.encode_inputs(&native)
        })
        .collect();
    let y = dataset
        .rows
        .iter()
        .map(|r| {
            output_cols
                .iter()
                .enumerate()
                .map(|(k, &j)| record.encode_output(k, r.output(j)))
                .collect()
        })
        .collect();
    NormalizedTable { x, y }
}
