//! One- and two-dimensional prediction slices through the model box.

use procopt_core::surrogate::{axis_values, SurrogateModel};
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};

pub const MAX_RESOLUTION: usize = 201;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceCell {
    /// Index along the x axis.
    pub i: usize,
    /// Index along the y axis (0 for a 1D slice).
    pub j: usize,
    pub x: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<f64>,
    pub values: Vec<f64>,
    pub half_width: Vec<f64>,
    /// Some archive point projects onto this cell.
    pub occupied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionSlice {
    pub x_axis: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_axis: Option<String>,
    pub x_values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub y_values: Vec<f64>,
    /// Fixed values of the other features, in feature order.
    pub base: Vec<f64>,
    pub features: Vec<String>,
    pub objectives: Vec<String>,
    /// Row-major over `(i, j)`: `cells[i * ny + j]`.
    pub cells: Vec<SliceCell>,
}

/// Centre of the model box in native units.
pub fn box_center(model: &SurrogateModel) -> Vec<f64> {
    model.normalization.from_unit(&vec![0.5; model.n_features()])
}

fn nearest(values: &[f64], v: f64) -> usize {
    (0..values.len())
        .min_by(|&a, &b| (values[a] - v).abs().total_cmp(&(values[b] - v).abs()).then(a.cmp(&b)))
        .unwrap_or(0)
}

/// Predictions on a `resolution` grid over feature `x` (and `y`), the other
/// features held at `base`. `archive` holds native feature vectors; a cell
/// is occupied when a point's nearest grid coordinates are that cell.
pub fn decision_slice(
    model: &SurrogateModel,
    archive: &[Vec<f64>],
    x: &str,
    y: Option<&str>,
    resolution: usize,
    base: Option<&[f64]>,
) -> Result<DecisionSlice> {
    let index = |name: &str| {
        model.feature_index(name).ok_or_else(|| {
            PipelineError::validation(format!(
                "`{name}` is not a model feature; features are {}",
                model.features.join(", ")
            ))
        })
    };
    let xi = index(x)?;
    let yi = y.map(index).transpose()?;
    if yi == Some(xi) {
        return Err(PipelineError::validation("slice axes must be two different features"));
    }
    if !(2..=MAX_RESOLUTION).contains(&resolution) {
        return Err(PipelineError::validation(format!("resolution must be in 2..={MAX_RESOLUTION}, got {resolution}")));
    }
    let base = match base {
        Some(b) if b.len() != model.n_features() => {
            return Err(PipelineError::validation(format!(
                "base needs {} values, got {}",
                model.n_features(),
                b.len()
            )))
        }
        Some(b) => b.to_vec(),
        None => box_center(model),
    };
    model.predict(&base).map_err(|e| PipelineError::validation(format!("base point: {e}")))?;

    let x_values = axis_values(&model.normalization.inputs[xi].encoding, resolution);
    let y_values = yi.map(|j| axis_values(&model.normalization.inputs[j].encoding, resolution)).unwrap_or_default();
    let ny = y_values.len().max(1);
    let mut occupied = vec![false; x_values.len() * ny];
    for p in archive {
        if p.len() != model.n_features() {
            continue;
        }
        let i = nearest(&x_values, p[xi]);
        let j = yi.map(|yj| nearest(&y_values, p[yj])).unwrap_or(0);
        occupied[i * ny + j] = true;
    }
    let mut cells = Vec::with_capacity(occupied.len());
    for (i, &xv) in x_values.iter().enumerate() {
        for j in 0..ny {
            let mut point = base.clone();
            point[xi] = xv;
            let yv = yi.map(|yj| {
                point[yj] = y_values[j];
                y_values[j]
            });
            let p = model.predict(&point).map_err(|e| PipelineError::validation(e.to_string()))?;
            cells.push(SliceCell {
                i,
                j,
                x: xv,
                y: yv,
                values: p.values,
                half_width: p.half_width,
                occupied: occupied[i * ny + j],
            });
        }
    }
    Ok(DecisionSlice {
        x_axis: x.into(),
        y_axis: y.map(String::from),
        x_values,
        y_values,
        base,
        features: model.features.clone(),
        objectives: model.objectives.clone(),
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use procopt_core::surrogate::{train, Family, SurrogateConfig};
    use procopt_core::{Dataset, ExperimentRow, OutputSpec, ParameterSpec};

    fn model() -> SurrogateModel {
        let mut ds = Dataset::new(
            vec![
                ParameterSpec::continuous("a", 0.0, 1.0),
                ParameterSpec::continuous("b", 0.0, 2.0),
                ParameterSpec::continuous("c", -1.0, 1.0),
            ],
            vec![OutputSpec::new("y")],
        );
        for i in 0..30 {
            let (a, b, c) = ((i % 5) as f64 / 4.0, (i % 3) as f64, ((i * 7) % 11) as f64 / 5.0 - 1.0);
            ds.rows.push(ExperimentRow::complete(i, vec![a, b, c], vec![2.0 * a - b + 0.5 * c]));
        }
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        train(&ds, &names, &["y".to_string()], &SurrogateConfig::new(Family::LinearRidge), 1).unwrap()
    }

    #[test]
    fn resolution_two_gives_corners() {
        let m = model();
        let s = decision_slice(&m, &[], "a", Some("b"), 2, None).unwrap();
        assert_eq!(s.cells.len(), 4);
        let corners: Vec<(f64, f64)> = s.cells.iter().map(|c| (c.x, c.y.unwrap())).collect();
        assert_eq!(corners, vec![(0.0, 0.0), (0.0, 2.0), (1.0, 0.0), (1.0, 2.0)]);
    }

    #[test]
    fn cells_equal_direct_predictions() {
        let m = model();
        let base = vec![0.3, 1.1, 0.2];
        let s = decision_slice(&m, &[], "c", Some("a"), 5, Some(&base)).unwrap();
        for c in &s.cells {
            let p = m.predict(&[c.y.unwrap(), 1.1, c.x]).unwrap();
            assert_eq!(c.values, p.values);
            assert_eq!(c.half_width, p.half_width);
        }
    }

    #[test]
    fn archive_points_mark_cells() {
        let m = model();
        let s = decision_slice(&m, &[vec![0.26, 1.9, 0.0]], "a", Some("b"), 5, None).unwrap();
        let hit: Vec<(usize, usize)> = s.cells.iter().filter(|c| c.occupied).map(|c| (c.i, c.j)).collect();
        assert_eq!(hit, vec![(1, 4)]);
    }

    #[test]
    fn one_dimensional_slice_matches_predict_slice() {
        let m = model();
        let base = box_center(&m);
        let s = decision_slice(&m, &[], "b", None, 7, None).unwrap();
        let direct = m.predict_slice(&base, "b", 7).unwrap();
        assert_eq!(s.cells.len(), 7);
        for (c, d) in s.cells.iter().zip(&direct) {
            assert_eq!(c.x, d.axis_value);
            assert_eq!(c.values, d.values);
        }
    }

    #[test]
    fn invalid_requests() {
        let m = model();
        assert!(matches!(decision_slice(&m, &[], "a", Some("a"), 3, None), Err(PipelineError::Validation(_))));
        assert!(decision_slice(&m, &[], "zz", None, 3, None).is_err());
        assert!(decision_slice(&m, &[], "a", None, 1, None).is_err());
        assert!(decision_slice(&m, &[], "a", None, 3, Some(&[0.0])).is_err());
    }
}
