//! Cross-module invariants checked as properties over seeded random inputs.

use procopt_core::cleaning::{self, CleaningConfig, LedgerEntry};
use procopt_core::moo::{self, pareto_filter, FnEvaluator, IterationRecord, Observer, OptimizerConfig, RunState};
use procopt_core::normalize::normalize;
use procopt_core::selection::{nested_rmse_curve, rank_importance, FitPlan};
use procopt_core::stats::{adjusted_r2, pearson};
use procopt_core::surrogate::{self, Family, SurrogateConfig};
use procopt_core::{seed, Dataset, Direction, ExperimentRow, OutputSpec, ParameterSpec};
use proptest::prelude::*;
use rand::Rng;

fn random_dataset(s: u64, n_rows: usize, n_inputs: usize, noise: f64) -> Dataset {
    let mut rng = seed::rng(s);
    let inputs = (0..n_inputs).map(|j| ParameterSpec::continuous(format!("x{j}"), -2.0, 3.0)).collect();
    let mut ds = Dataset::new(inputs, vec![OutputSpec::new("y"), OutputSpec::new("z")]);
    for id in 0..n_rows {
        let x: Vec<f64> = (0..n_inputs).map(|_| rng.random_range(-2.0..3.0)).collect();
        let y = x.iter().enumerate().map(|(j, v)| (j as f64 + 1.0) * v).sum::<f64>() + noise * rng.random_range(-1.0..1.0);
        let z = x[0] * x[0] - x[n_inputs - 1] + noise * rng.random_range(-1.0..1.0);
        ds.rows.push(ExperimentRow::complete(id, x, vec![y, z]));
    }
    ds
}

/// Dataset with constant, duplicated and outlying parts for the cleaner.
fn messy_dataset(s: u64) -> Dataset {
    let mut rng = seed::rng(s);
    let mut ds = random_dataset(s, 40, 3, 0.1);
    ds.inputs.push(ParameterSpec::continuous("flat", 0.0, 10.0));
    ds.inputs.push(ParameterSpec::continuous("copy", -2.0, 3.0));
    for row in &mut ds.rows {
        let x0 = row.input(0);
        row.inputs.push(Some(4.0));
        row.inputs.push(Some(x0));
    }
    for _ in 0..rng.random_range(0..4) {
        let i = rng.random_range(0..ds.rows.len());
        ds.rows[i].outputs[0] = ds.rows[i].outputs[0].map(|v| v + 500.0);
    }
    for _ in 0..rng.random_range(0..5) {
        let mut dup = ds.rows[rng.random_range(0..40)].clone();
        dup.id = ds.rows.len();
        dup.outputs[1] = dup.outputs[1].map(|v| v + rng.random_range(-0.2..0.2));
        ds.rows.push(dup);
    }
    if rng.random_bool(0.5) {
        let i = rng.random_range(0..ds.rows.len());
        ds.rows[i].outputs[1] = None;
    }
    ds
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn adjusted_r2_never_exceeds_r2(r2 in -5.0f64..0.999_999, p in 1usize..30, extra in 2usize..500) {
        let n = p + extra;
        prop_assert!(adjusted_r2(r2, n, p).unwrap() <= r2);
    }

    #[test]
    fn normalization_round_trips_random_vectors(s in 0u64..10_000) {
        let ds = random_dataset(s, 12, 4, 0.5);
        let (_, record) = normalize(&ds).unwrap();
        let mut rng = seed::rng(seed::derive(s, "vectors"));
        for _ in 0..1000 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..3.0)).collect();
            let back = record.from_unit(&record.to_unit(&x));
            for (a, b) in x.iter().zip(&back) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn cleaning_is_deterministic_and_conserves_rows(s in 0u64..10_000) {
        let raw = messy_dataset(s);
        let config = CleaningConfig::default();
        let first = cleaning::clean(&raw, &config).unwrap();
        let second = cleaning::clean(&raw, &config).unwrap();
        prop_assert_eq!(&first.dataset, &second.dataset);
        prop_assert_eq!(&first.ledger, &second.ledger);

        let mut dropped = 0;
        let mut merged_away = 0;
        for e in &first.ledger.entries {
            match e {
                LedgerEntry::DroppedMissingRow { .. }
                | LedgerEntry::DroppedRuleViolationRow { .. }
                | LedgerEntry::DroppedOutOfBoundsRow { .. }
                | LedgerEntry::DroppedOutlierRow { .. } => dropped += 1,
                LedgerEntry::MergedReplicateGroup { members, .. } => merged_away += members.len() - 1,
                _ => {}
            }
        }
        prop_assert_eq!(raw.rows.len(), first.dataset.rows.len() + dropped + merged_away);
    }

    #[test]
    fn pruning_keeps_columns_below_the_threshold(s in 0u64..10_000, threshold in 0.5f64..0.99) {
        let raw = messy_dataset(s);
        let ds = Dataset { rows: raw.rows.iter().filter(|r| !r.outputs.contains(&None)).cloned().collect(), ..raw };
        let (kept, entries) = cleaning::prune_correlated(&ds, threshold).unwrap();
        let kept_names = kept.input_names();
        for e in &entries {
            let LedgerEntry::DroppedCorrelatedColumn { name, .. } = e else { continue };
            let dropped = ds.input_column(ds.input_index(name).unwrap());
            let linked = kept_names.iter().any(|k| {
                let col = ds.input_column(ds.input_index(k).unwrap());
                pearson(&dropped, &col).abs() >= threshold
            });
            prop_assert!(linked, "{name} was dropped without a correlated kept column");
        }
    }

    #[test]
    fn linear_train_rmse_is_non_increasing_in_k(s in 0u64..10_000) {
        let ds = random_dataset(s, 60, 6, 0.3);
        let objectives = vec!["y".to_string(), "z".to_string()];
        let ranking = rank_importance(&ds, &objectives).unwrap();
        let plan = FitPlan::new(Family::LinearRidge);
        let curve = nested_rmse_curve(&ds, &ranking, &plan, 6, s).unwrap();
        let train: Vec<f64> = curve.points.iter().filter_map(|p| p.rmse_train).collect();
        prop_assert_eq!(train.len(), curve.points.len());
        for w in train.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9, "{train:?}");
        }
        prop_assert_eq!(&curve, &nested_rmse_curve(&ds, &ranking, &plan, 6, s).unwrap());
    }

    #[test]
    fn fronts_never_contain_dominated_points(s in 0u64..10_000) {
        let evaluator = FnEvaluator {
            dim: 3,
            n_objectives: 2,
            f: |x: &[f64]| vec![x[0] + x[2] * x[2], (1.0 - x[0]).powi(2) + x[1]],
        };
        let mut config = OptimizerConfig::new(vec![Direction::Minimize, Direction::Maximize], vec![3.0, -1.0]);
        config.population = 16;
        config.iterations = 8;
        let state = RunState::new(config, s).unwrap();
        let mut check = FrontCheck(Vec::new());
        moo::run(&evaluator, state, &[], None, &mut check).unwrap();
        prop_assert!(check.0.is_empty(), "{:?}", check.0);
    }
}

struct FrontCheck(Vec<usize>);

impl Observer for FrontCheck {
    fn on_record(&mut self, record: &IterationRecord, state: &RunState) {
        let points: Vec<Vec<f64>> = record.front.iter().map(|c| c.objectives.clone()).collect();
        let (_, dominated) = pareto_filter(&points, &state.config.directions);
        if !dominated.is_empty() {
            self.0.push(record.k);
        }
    }
}

fn surrogate_config(family: Family) -> SurrogateConfig {
    let mut config = SurrogateConfig::new(family);
    config.mlp.epochs = 150;
    config
}

#[test]
fn training_is_deterministic_for_every_family() {
    let ds = random_dataset(5, 50, 3, 0.2);
    let features = ds.input_names();
    let objectives = ds.output_names();
    for family in [Family::LinearRidge, Family::RbfKernel, Family::Mlp] {
        let config = surrogate_config(family);
        let a = surrogate::train(&ds, &features, &objectives, &config, 17).unwrap();
        let b = surrogate::train(&ds, &features, &objectives, &config, 17).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap(), "{family}");
    }
}

#[test]
fn permuting_one_output_leaves_the_other_submodel_unchanged() {
    let ds = random_dataset(6, 50, 3, 0.2);
    let mut shuffled = ds.clone();
    let n = shuffled.rows.len();
    for i in 0..n {
        let j = (i * 7 + 3) % n;
        let (a, b) = (shuffled.rows[i].outputs[1], shuffled.rows[j].outputs[1]);
        shuffled.rows[i].outputs[1] = b;
        shuffled.rows[j].outputs[1] = a;
    }
    let features = ds.input_names();
    let objectives = ds.output_names();
    let probe: Vec<Vec<f64>> = (0..20).map(|i| vec![-2.0 + 0.25 * i as f64, 0.1 * i as f64, 1.0 - 0.1 * i as f64]).collect();
    for family in [Family::LinearRidge, Family::RbfKernel, Family::Mlp] {
        let config = surrogate_config(family);
        let a = surrogate::train(&ds, &features, &objectives, &config, 3).unwrap();
        let b = surrogate::train(&shuffled, &features, &objectives, &config, 3).unwrap();
        for x in &probe {
            let (pa, pb) = (a.predict(x).unwrap(), b.predict(x).unwrap());
            assert_eq!(pa.values[0].to_bits(), pb.values[0].to_bits(), "{family}");
        }
    }
}

#[test]
fn ridge_recovers_exact_linear_coefficients() {
    let mut ds = random_dataset(8, 40, 4, 0.0);
    let truth = [1.5, -2.0, 0.25, 4.0];
    for row in &mut ds.rows {
        let y = 0.7 + (0..4).map(|j| truth[j] * row.input(j)).sum::<f64>();
        row.outputs = vec![Some(y)];
    }
    ds.outputs.truncate(1);
    let mut config = SurrogateConfig::new(Family::LinearRidge);
    config.linear_lambda = 1e-12;
    let model = surrogate::train(&ds, &ds.input_names(), &ds.output_names(), &config, 1).unwrap();
    // Coefficients are reported in native units.
    let (coefficients, intercept) = model.linear_coefficients(0).unwrap();
    for (c, t) in coefficients.iter().zip(truth) {
        assert!((c - t).abs() <= 1e-6 * t.abs(), "{coefficients:?}");
    }
    assert!((intercept - 0.7).abs() <= 1e-6 * 0.7, "{intercept}");
}

#[test]
fn slices_equal_pointwise_predictions() {
    let ds = random_dataset(9, 50, 3, 0.2);
    let features = ds.input_names();
    for family in [Family::LinearRidge, Family::RbfKernel, Family::Mlp] {
        let model = surrogate::train(&ds, &features, &ds.output_names(), &surrogate_config(family), 2).unwrap();
        let base = [0.3, -1.0, 2.0];
        for axis in &features {
            let j = model.feature_index(axis).unwrap();
            for point in model.predict_slice(&base, axis, 17).unwrap() {
                let mut x = base.to_vec();
                x[j] = point.axis_value;
                let direct = model.predict(&x).unwrap();
                let bits = |v: &[f64]| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
                assert_eq!(bits(&point.values), bits(&direct.values), "{family} {axis}");
                assert_eq!(bits(&point.half_width), bits(&direct.half_width), "{family} {axis}");
            }
        }
    }
}

#[test]
fn a_persisted_run_state_resumes_identically() {
    let evaluator = FnEvaluator {
        dim: 4,
        n_objectives: 2,
        f: |x: &[f64]| vec![x.iter().sum::<f64>(), x.iter().map(|v| (v - 0.6).powi(2)).sum()],
    };
    let mut config = OptimizerConfig::new(vec![Direction::Minimize, Direction::Minimize], vec![5.0, 5.0]);
    config.population = 12;
    config.iterations = 10;
    let full = moo::run(&evaluator, RunState::new(config.clone(), 44).unwrap(), &[], None, &mut ()).unwrap();

    config.iterations = 4;
    let partial = moo::run(&evaluator, RunState::new(config, 44).unwrap(), &[], None, &mut ()).unwrap();
    let mut reloaded: RunState = serde_json::from_str(&serde_json::to_string(&partial).unwrap()).unwrap();
    assert_eq!(reloaded, partial);
    reloaded.config.iterations = 10;
    let resumed = moo::run(&evaluator, reloaded, &[], None, &mut ()).unwrap();
    assert_eq!(serde_json::to_string(&resumed).unwrap(), serde_json::to_string(&full).unwrap());
}
