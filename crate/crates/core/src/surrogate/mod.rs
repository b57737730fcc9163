//! Multi-output surrogate models.
//!
//! One submodel is trained per objective, independently of the others.
//! Inputs are scaled to the unit box from the parameter bounds and outputs
//! are z-scored before fitting; metrics and bands are reported in native
//! output units.

pub mod kernel;
pub mod mlp;

use rayon::prelude::*;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normalize::{encode_rows, InputEncoding, NormalizationRecord};
use crate::types::{Dataset, MetricReport};
use crate::{seed, stats};

pub use mlp::{Activation, GradientMethod, Mlp, MlpConfig};

pub const MODEL_SCHEMA: &str = "model-v1";

/// Minimum rows needed to train.
pub const MIN_TRAIN_ROWS: usize = 10;

/// Predictions this far outside the box (in box widths) are refused.
pub const EXTRAPOLATION_LIMIT: f64 = 0.1;

/// Half-width of the uncertainty band in held-out residual standard
/// deviations.
pub const BAND_Z: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    LinearRidge,
    RbfKernel,
    Mlp,
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Family::LinearRidge => "linear-ridge",
            Family::RbfKernel => "rbf-kernel",
            Family::Mlp => "mlp",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ExtrapolationPolicy {
    /// Refuse predictions far outside the box.
    #[default]
    Error,
    /// Predict anyway, flag the result and double the band.
    Warn,
}

fn default_linear_lambda() -> f64 {
    1e-6
}
fn default_kernel_lambda() -> f64 {
    1e-3
}
fn default_test_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateConfig {
    pub family: Family,
    #[serde(default = "default_linear_lambda")]
    pub linear_lambda: f64,
    #[serde(default = "default_kernel_lambda")]
    pub kernel_lambda: f64,
    /// Gaussian bandwidth in normalized units; median pairwise distance
    /// when unset.
    #[serde(default)]
    pub kernel_bandwidth: Option<f64>,
    #[serde(default)]
    pub mlp: MlpConfig,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub extrapolation: ExtrapolationPolicy,
}

impl SurrogateConfig {
    pub fn new(family: Family) -> Self {
        Self {
            family,
            linear_lambda: default_linear_lambda(),
            kernel_lambda: default_kernel_lambda(),
            kernel_bandwidth: None,
            mlp: MlpConfig::default(),
            test_fraction: default_test_fraction(),
            extrapolation: ExtrapolationPolicy::Error,
        }
    }
}

/// Deterministic shuffle split of `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> Split {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng(seed::derive(seed, "split")));
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let mut test = idx[..n_test].to_vec();
    let mut train = idx[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Split { train, test }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Submodel {
    LinearRidge { weights: Vec<f64>, intercept: f64 },
    /// `centers` is the row-major training matrix, `dim` columns wide.
    RbfKernel { dim: usize, centers: Vec<f64>, alpha: Vec<f64>, bandwidth: f64 },
    Mlp(Mlp),
}

impl Submodel {
    fn fit(xs: &[Vec<f64>], ys: &[f64], config: &SurrogateConfig, seed: u64) -> Result<Self> {
        Ok(match config.family {
            Family::LinearRidge => {
                let (weights, intercept) = kernel::fit_ridge(xs, ys, config.linear_lambda)?;
                Submodel::LinearRidge { weights, intercept }
            }
            Family::RbfKernel => {
                let bandwidth = config.kernel_bandwidth.unwrap_or_else(|| kernel::median_bandwidth(xs));
                let alpha = kernel::fit_kernel_ridge(xs, ys, bandwidth, config.kernel_lambda)?;
                Submodel::RbfKernel {
                    dim: xs.first().map_or(0, Vec::len),
                    centers: xs.concat(),
                    alpha,
                    bandwidth,
                }
            }
            Family::Mlp => {
                Submodel::Mlp(Mlp::train(xs, ys, &config.mlp, seed)?)
            }
        })
    }

    /// Prediction in normalized output units.
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Submodel::LinearRidge { weights, intercept } => {
                intercept + weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            }
            Submodel::RbfKernel { dim, centers, alpha, bandwidth } => centers
                .chunks(*dim)
                .zip(alpha)
                .map(|(c, a)| a * kernel::gaussian(x, c, *bandwidth))
                .sum(),
            Submodel::Mlp(net) => net.forward(x),
        }
    }

    pub fn as_mlp(&self) -> Option<&Mlp> {
        match self {
            Submodel::Mlp(net) => Some(net),
            _ => None,
        }
    }
}

/// A trained multi-output model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateModel {
    pub schema: String,
    pub family: Family,
    pub features: Vec<String>,
    pub objectives: Vec<String>,
    pub normalization: NormalizationRecord,
    pub submodels: Vec<Submodel>,
    pub metrics: Vec<MetricReport>,
    /// Standard deviation of held-out residuals per output, native units.
    pub residual_std: Vec<f64>,
    pub extrapolation: ExtrapolationPolicy,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub values: Vec<f64>,
    /// Constant-width band: 1.96 × held-out residual std per output.
    pub half_width: Vec<f64>,
    pub out_of_box: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlicePoint {
    pub axis_value: f64,
    pub values: Vec<f64>,
    pub half_width: Vec<f64>,
}

fn default_overfit() -> f64 {
    2.0
}
fn default_min_r2() -> f64 {
    0.3
}

/// Overfit/underfit gate applied to trained models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScreeningConfig {
    /// Reject when test RMSE exceeds this multiple of train RMSE.
    #[serde(default = "default_overfit")]
    pub max_overfit_ratio: f64,
    /// Reject when test R² falls below this value.
    #[serde(default = "default_min_r2")]
    pub min_r2_test: f64,
}

impl Default for ScreeningConfig {
    fn default() -> Self {
        Self { max_overfit_ratio: default_overfit(), min_r2_test: default_min_r2() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningVerdict {
    pub passed: bool,
    pub reasons: Vec<String>,
}

/// Trains one independent submodel per objective on a seeded 80/20 split.
pub fn train(
    dataset: &Dataset,
    features: &[String],
    objectives: &[String],
    config: &SurrogateConfig,
    seed: u64,
) -> Result<SurrogateModel> {
    let split = split_indices(dataset.n_rows(), config.test_fraction, seed);
    train_on_split(dataset, features, objectives, config, &split, seed)
}

/// Deterministic `k`-fold partition of `0..n`; fold `i` is the test set of
/// the `i`-th split.
pub fn kfold_splits(n: usize, folds: usize, seed: u64) -> Vec<Split> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng(seed::derive(seed, "folds")));
    (0..folds)
        .map(|f| {
            let (mut train, mut test) = (Vec::new(), Vec::new());
            for (pos, &i) in idx.iter().enumerate() {
                if pos % folds == f {
                    test.push(i);
                } else {
                    train.push(i);
                }
            }
            train.sort_unstable();
            test.sort_unstable();
            Split { train, test }
        })
        .collect()
}

/// Same as [`train`] with an explicit split.
pub fn train_on_split(
    dataset: &Dataset,
    features: &[String],
    objectives: &[String],
    config: &SurrogateConfig,
    split: &Split,
    seed: u64,
) -> Result<SurrogateModel> {
    if split.train.is_empty() || split.test.is_empty() {
        return Err(Error::Contract("train and test partitions must both be non-empty".into()));
    }
    if dataset.n_rows() < MIN_TRAIN_ROWS {
        return Err(Error::InsufficientData(format!(
            "training needs at least {MIN_TRAIN_ROWS} rows, got {}",
            dataset.n_rows()
        )));
    }
    if features.is_empty() {
        return Err(Error::Contract("training needs at least one feature".into()));
    }
    if objectives.is_empty() {
        return Err(Error::Contract("training needs at least one objective".into()));
    }
    let feat_cols = dataset.input_indices(features)?;
    let out_cols = dataset.output_indices(objectives)?;
    for r in &dataset.rows {
        if feat_cols.iter().any(|&j| r.inputs[j].is_none()) || out_cols.iter().any(|&k| r.outputs[k].is_none()) {
            return Err(Error::Contract(format!("row {} has missing values; clean the dataset first", r.id)));
        }
    }
    let record = NormalizationRecord::fit(dataset, &feat_cols, &out_cols)?;
    let table = encode_rows(dataset, &record, &feat_cols, &out_cols);
    let x_train: Vec<Vec<f64>> = split.train.iter().map(|&i| table.x[i].clone()).collect();

    let fitted: Vec<Result<Submodel>> = (0..out_cols.len())
        .into_par_iter()
        .map(|k| {
            let y: Vec<f64> = split.train.iter().map(|&i| table.y[i][k]).collect();
            Submodel::fit(&x_train, &y, config, seed::derive_indexed(seed, "submodel", k as u64))
        })
        .collect();
    let submodels = fitted.into_iter().collect::<Result<Vec<_>>>()?;

    let mut metrics = Vec::with_capacity(out_cols.len());
    let mut residual_std = Vec::with_capacity(out_cols.len());
    for (k, sub) in submodels.iter().enumerate() {
        let eval = |rows: &[usize]| -> (Vec<f64>, Vec<f64>) {
            rows.iter()
                .map(|&i| (record.decode_output(k, sub.eval(&table.x[i])), dataset.rows[i].output(out_cols[k])))
                .unzip()
        };
        let (p_train, t_train) = eval(&split.train);
        let (p_test, t_test) = eval(&split.test);
        let r2_test = stats::r2(&p_test, &t_test)?;
        metrics.push(MetricReport {
            rmse_train: stats::rmse(&p_train, &t_train)?,
            rmse_test: stats::rmse(&p_test, &t_test)?,
            r2_train: stats::r2(&p_train, &t_train)?,
            r2_test,
            adjusted_r2_test: stats::adjusted_r2(r2_test, t_test.len(), features.len()).ok(),
            n_train: t_train.len(),
            n_test: t_test.len(),
            n_features: features.len(),
        });
        let residuals: Vec<f64> = p_test.iter().zip(&t_test).map(|(p, t)| t - p).collect();
        residual_std.push(if residuals.len() >= 2 { stats::std_dev(&residuals) } else { residuals[0].abs() });
    }

    Ok(SurrogateModel {
        schema: MODEL_SCHEMA.into(),
        family: config.family,
        features: features.to_vec(),
        objectives: objectives.to_vec(),
        normalization: record,
        submodels,
        metrics,
        residual_std,
        extrapolation: config.extrapolation,
        seed,
    })
}

impl SurrogateModel {
    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn n_outputs(&self) -> usize {
        self.submodels.len()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f == name)
    }

    /// Native range of a feature (level indices for categorical ones).
    pub fn feature_range(&self, j: usize) -> (f64, f64) {
        match &self.normalization.inputs[j].encoding {
            InputEncoding::Affine { lo, hi, .. } => (*lo, *hi),
            InputEncoding::OneHot { levels } => (0.0, (levels.len() - 1) as f64),
        }
    }

    /// Point prediction and band for a native-unit feature vector.
    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        if x.len() != self.features.len() {
            return Err(Error::Contract(format!(
                "expected {} features, got {}",
                self.features.len(),
                x.len()
            )));
        }
        let mut out_of_box = false;
        let mut inflate = 1.0;
        for (j, (map, &v)) in self.normalization.inputs.iter().zip(x).enumerate() {
            match &map.encoding {
                InputEncoding::Affine { .. } => {
                    let u = map.to_unit(v);
                    let excess = (-u).max(u - 1.0).max(0.0);
                    if !v.is_finite() {
                        return Err(Error::Contract(format!("feature `{}` is not finite", self.features[j])));
                    }
                    if excess > 0.0 {
                        out_of_box = true;
                    }
                    if excess > EXTRAPOLATION_LIMIT {
                        match self.extrapolation {
                            ExtrapolationPolicy::Error => {
                                return Err(Error::Extrapolation { feature: self.features[j].clone(), excess })
                            }
                            ExtrapolationPolicy::Warn => inflate = 2.0,
                        }
                    }
                }
                InputEncoding::OneHot { levels } => {
                    if v < 0.0 || v.fract() != 0.0 || v as usize >= levels.len() {
                        return Err(Error::Contract(format!(
                            "`{}` = {v} is not a valid level index",
                            self.features[j]
                        )));
                    }
                }
            }
        }
        let enc = self.normalization.encode_inputs(x);
        let values = self
            .submodels
            .iter()
            .enumerate()
            .map(|(k, s)| self.normalization.decode_output(k, s.eval(&enc)))
            .collect();
        let half_width = self.residual_std.iter().map(|s| BAND_Z * s * inflate).collect();
        Ok(Prediction { values, half_width, out_of_box })
    }

    /// Predictions along one feature across its full range, other features
    /// frozen at `base`. Every point goes through [`Self::predict`].
    pub fn predict_slice(&self, base: &[f64], axis: &str, n_steps: usize) -> Result<Vec<SlicePoint>> {
        let j = self.feature_index(axis).ok_or_else(|| Error::UnknownName {
            name: axis.into(),
            valid: self.features.clone(),
        })?;
        if n_steps < 2 {
            return Err(Error::Contract("a slice needs at least 2 steps".into()));
        }
        self.predict(base)?;
        let values = axis_values(&self.normalization.inputs[j].encoding, n_steps);
        values
            .into_iter()
            .map(|v| {
                let mut x = base.to_vec();
                x[j] = v;
                let p = self.predict(&x)?;
                Ok(SlicePoint { axis_value: v, values: p.values, half_width: p.half_width })
            })
            .collect()
    }

    /// Mean over outputs of test RMSE divided by the output's standard
    /// deviation.
    pub fn normalized_test_rmse(&self) -> f64 {
        let n = self.metrics.len() as f64;
        self.metrics
            .iter()
            .zip(&self.normalization.outputs)
            .map(|(m, o)| m.rmse_test / o.std)
            .sum::<f64>()
            / n
    }

    pub fn normalized_train_rmse(&self) -> f64 {
        let n = self.metrics.len() as f64;
        self.metrics
            .iter()
            .zip(&self.normalization.outputs)
            .map(|(m, o)| m.rmse_train / o.std)
            .sum::<f64>()
            / n
    }

    /// Mean adjusted test R² over outputs, when defined for all of them.
    pub fn mean_adjusted_r2(&self) -> Option<f64> {
        let vals: Option<Vec<f64>> = self.metrics.iter().map(|m| m.adjusted_r2_test).collect();
        vals.map(|v| stats::mean(&v))
    }

    pub fn screen(&self, config: &ScreeningConfig) -> ScreeningVerdict {
        let mut reasons = Vec::new();
        for ((m, name), o) in self.metrics.iter().zip(&self.objectives).zip(&self.normalization.outputs) {
            // An absolute floor keeps exact fits from tripping the ratio on
            // rounding noise.
            if m.rmse_test > config.max_overfit_ratio * m.rmse_train + 1e-9 * o.std {
                reasons.push(format!(
                    "`{name}` overfits: test RMSE {:.4} > {} × train RMSE {:.4}",
                    m.rmse_test, config.max_overfit_ratio, m.rmse_train
                ));
            }
            if m.r2_test < config.min_r2_test {
                reasons.push(format!("`{name}` underfits: test R² {:.4} < {}", m.r2_test, config.min_r2_test));
            }
        }
        ScreeningVerdict { passed: reasons.is_empty(), reasons }
    }

    /// Native-unit coefficients and intercept of a linear-ridge submodel.
    pub fn linear_coefficients(&self, k: usize) -> Option<(Vec<f64>, f64)> {
        let Submodel::LinearRidge { weights, intercept } = &self.submodels[k] else {
            return None;
        };
        let std = self.normalization.outputs[k].std;
        let mean = self.normalization.outputs[k].mean;
        let mut coef = Vec::new();
        let mut b = intercept * std + mean;
        let mut at = 0;
        for map in &self.normalization.inputs {
            match &map.encoding {
                InputEncoding::Affine { lo, hi, .. } => {
                    let c = weights[at] * std / (hi - lo);
                    coef.push(c);
                    b -= c * lo;
                }
                InputEncoding::OneHot { .. } => return None,
            }
            at += map.width();
        }
        Some((coef, b))
    }

    /// Backprop vs finite-difference check on an MLP submodel, using the
    /// normalized squared loss against a zero target at the given native
    /// input. `None` for other families.
    pub fn gradient_check(&self, x: &[f64], output: usize) -> Option<f64> {
        let net = self.submodels.get(output)?.as_mlp()?;
        Some(net.gradient_check(&self.normalization.encode_inputs(x), 0.0, 1e-5))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        if m.schema != MODEL_SCHEMA {
            return Err(Error::Serialization(format!("unsupported model schema `{}`", m.schema)));
        }
        Ok(m)
    }
}

/// Evenly spaced native values across an encoding's range.
pub fn axis_values(encoding: &InputEncoding, n_steps: usize) -> Vec<f64> {
    match encoding {
        InputEncoding::Affine { lo, hi, integer } => (0..n_steps)
            .map(|i| {
                let v = if i + 1 == n_steps { *hi } else { lo + (hi - lo) * i as f64 / (n_steps - 1) as f64 };
                if *integer {
                    v.round().clamp(lo.ceil(), hi.floor())
                } else {
                    v
                }
            })
            .collect(),
        InputEncoding::OneHot { levels } => (0..n_steps)
            .map(|i| ((i * levels.len()) / n_steps).min(levels.len() - 1) as f64)
            .collect(),
    }
}

/// Weighted scalarization of the objectives. Positive weights reward an
/// objective, negative weights penalize it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeritFunction {
    pub weights: Vec<f64>,
    /// Optional `(offset, scale)` per objective: the merit uses
    /// `(ŷ − offset) / scale`.
    #[serde(default)]
    pub normalization: Option<Vec<[f64; 2]>>,
}

/// A surrogate collapsed to a single score.
#[derive(Debug, Clone)]
pub struct MeritModel<'a> {
    pub model: &'a SurrogateModel,
    pub merit: MeritFunction,
}

pub fn merit_scalarize<'a>(model: &'a SurrogateModel, merit: &MeritFunction) -> Result<MeritModel<'a>> {
    if merit.weights.len() != model.n_outputs() {
        return Err(Error::InvalidMerit(format!(
            "{} weights for {} objectives",
            merit.weights.len(),
            model.n_outputs()
        )));
    }
    if merit.weights.iter().all(|w| *w == 0.0) {
        return Err(Error::InvalidMerit("all weights are zero".into()));
    }
    if let Some(norm) = &merit.normalization {
        if norm.len() != merit.weights.len() || norm.iter().any(|[_, s]| *s == 0.0) {
            return Err(Error::InvalidMerit("normalization must give a nonzero scale per objective".into()));
        }
    }
    Ok(MeritModel { model, merit: merit.clone() })
}

impl MeritModel<'_> {
    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        let p = self.model.predict(x)?;
        Ok(self.score(&p.values))
    }

    pub fn score(&self, values: &[f64]) -> f64 {
        values
            .iter()
            .enumerate()
            .map(|(i, y)| {
                let v = match &self.merit.normalization {
                    Some(n) => (y - n[i][0]) / n[i][1],
                    None => *y,
                };
                self.merit.weights[i] * v
            })
            .sum()
    }
}
