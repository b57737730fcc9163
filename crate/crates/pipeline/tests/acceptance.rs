//! Acceptance suite: one test per criterion, each printing a
//! `criterion N: PASS|FAIL` line before asserting. Every check compares the
//! library against an oracle written here independently.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::time::Instant;

use procopt::recipe::reconstruct_recipe;
use procopt::run::{load_ledger, ArchiveDoc, RecipesDoc, SelectionDoc};
use procopt::store::{self, RunDir, RunStatus};
use procopt::{advance, golden, open_run, run_pipeline, Stage};
use procopt_core::cleaning::{self, Aggregation, CleaningConfig, LedgerEntry, ReductionLedger};
use procopt_core::moo::{
    self, hypervolume, pareto_filter, wasserstein, FnEvaluator, GroundCost, IterationRecord, Observer,
    OptimizerConfig, RunState,
};
use procopt_core::selection::{nested_rmse_curve, rank_importance, FitPlan};
use procopt_core::surrogate::mlp::{Activation, Mlp};
use procopt_core::{seed, Dataset, Direction, ExperimentRow, OutputSpec, ParameterSpec};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Writes straight to stdout so the line shows even when output is captured.
fn report(n: usize, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "criterion {n}: {verdict} ({detail})");
}

fn rng(label: &str) -> seed::Rng {
    seed::rng(seed::derive(20_240_601, label))
}

fn random_directions(rng: &mut seed::Rng, m: usize) -> Vec<Direction> {
    (0..m).map(|_| if rng.random_bool(0.5) { Direction::Minimize } else { Direction::Maximize }).collect()
}

/// `a` dominates `b`: no worse everywhere, strictly better somewhere.
fn oracle_dominates(a: &[f64], b: &[f64], dirs: &[Direction]) -> bool {
    let mut strictly = false;
    for k in 0..a.len() {
        let (x, y) = match dirs[k] {
            Direction::Minimize => (a[k], b[k]),
            Direction::Maximize => (-a[k], -b[k]),
        };
        if x > y {
            return false;
        }
        if x < y {
            strictly = true;
        }
    }
    strictly
}

fn oracle_front(points: &[Vec<f64>], dirs: &[Direction]) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| !(0..points.len()).any(|j| j != i && oracle_dominates(&points[j], &points[i], dirs)))
        .collect()
}

#[test]
fn criterion_01_pareto_filter_matches_pairwise_oracle() {
    let mut rng = rng("c1");
    let start = Instant::now();
    let mut mismatches = 0;
    for _ in 0..500 {
        let n = rng.random_range(1..=64);
        let m = rng.random_range(2..=3);
        let dirs = random_directions(&mut rng, m);
        let grid = rng.random_bool(0.5);
        let points: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..m)
                    .map(|_| if grid { rng.random_range(0..5) as f64 } else { rng.random_range(-1.0..1.0) })
                    .collect()
            })
            .collect();
        let (mut front, mut dominated) = pareto_filter(&points, &dirs);
        front.sort_unstable();
        dominated.sort_unstable();
        let expected = oracle_front(&points, &dirs);
        let expected_dominated: Vec<usize> = (0..n).filter(|i| !expected.contains(i)).collect();
        if front != expected || dominated != expected_dominated {
            mismatches += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = mismatches == 0 && secs < 5.0;
    report(1, pass, &format!("{mismatches} mismatches in 500 instances, {secs:.2} s"));
    assert!(pass);
}

/// Area dominated by a 2D minimization front, counted on the midpoint grid
/// of step `h` over `[lo, reference]`.
fn grid_area(front: &[Vec<f64>], reference: [f64; 2], lo: [f64; 2], h: f64) -> f64 {
    let nx = ((reference[0] - lo[0]) / h).ceil() as usize;
    let ny = ((reference[1] - lo[1]) / h).ceil() as usize;
    let mut cells = 0usize;
    for i in 0..nx {
        let xc = lo[0] + (i as f64 + 0.5) * h;
        // Lowest front value among points left of this column.
        let floor = front.iter().filter(|p| p[0] <= xc).map(|p| p[1]).fold(f64::INFINITY, f64::min);
        if floor.is_finite() {
            let first = ((floor - lo[1]) / h - 0.5).ceil().max(0.0) as usize;
            cells += ny.saturating_sub(first);
        }
    }
    cells as f64 * h * h
}

/// Flips maximized coordinates so the problem becomes a minimization.
fn as_minimization(points: &[Vec<f64>], reference: &[f64], dirs: &[Direction]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let flip = |v: &[f64]| v.iter().zip(dirs).map(|(x, d)| x * -d.sign()).collect::<Vec<f64>>();
    (points.iter().map(|p| flip(p)).collect(), flip(reference))
}

/// Exact volume dominated by a 3D minimization front: the grid of distinct
/// coordinates splits the box into cells that are wholly in or out.
fn cell_volume_3d(front: &[Vec<f64>], reference: &[f64]) -> f64 {
    let axes: Vec<Vec<f64>> = (0..3)
        .map(|k| {
            let mut v: Vec<f64> = front.iter().map(|p| p[k]).chain([reference[k]]).collect();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v.dedup();
            v
        })
        .collect();
    let mut volume = 0.0;
    for x in axes[0].windows(2) {
        for y in axes[1].windows(2) {
            for z in axes[2].windows(2) {
                let centre = [(x[0] + x[1]) / 2.0, (y[0] + y[1]) / 2.0, (z[0] + z[1]) / 2.0];
                if front.iter().any(|p| (0..3).all(|k| p[k] <= centre[k])) {
                    volume += (x[1] - x[0]) * (y[1] - y[0]) * (z[1] - z[0]);
                }
            }
        }
    }
    volume
}

#[test]
fn criterion_02_hypervolume_matches_grid_and_monte_carlo() {
    let mut rng = rng("c2");
    let start = Instant::now();
    let mut worst_2d: f64 = 0.0;
    for _ in 0..100 {
        let dirs = random_directions(&mut rng, 2);
        let n = rng.random_range(1..=30);
        let pts: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]).collect();
        let reference: Vec<f64> = dirs.iter().map(|d| if *d == Direction::Minimize { 1.1 } else { -0.1 }).collect();
        let front: Vec<Vec<f64>> = oracle_front(&pts, &dirs).into_iter().map(|i| pts[i].clone()).collect();
        let hv = hypervolume(&front, &reference, &dirs).unwrap();
        let (min_front, min_ref) = as_minimization(&front, &reference, &dirs);
        let lo = [
            min_front.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min),
            min_front.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min),
        ];
        let grid = grid_area(&min_front, [min_ref[0], min_ref[1]], lo, 1e-3);
        worst_2d = worst_2d.max((hv - grid).abs() / grid);
    }

    let mut worst_3d: f64 = 0.0;
    let mut worst_exact: f64 = 0.0;
    let samples = 1_000_000;
    for _ in 0..20 {
        let dirs = random_directions(&mut rng, 3);
        let n = rng.random_range(2..=25);
        // Points near the simplex x + y + z = 1 are mostly nondominated.
        let pts: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let w: Vec<f64> = (0..3).map(|_| rng.random_range(0.05..1.0)).collect();
                let s: f64 = w.iter().sum();
                w.iter().map(|v| v / s).collect()
            })
            .collect();
        let front: Vec<Vec<f64>> = oracle_front(&pts, &[Direction::Minimize; 3]).into_iter().map(|i| pts[i].clone()).collect();
        // Express the minimization front in the random directions.
        let front: Vec<Vec<f64>> =
            front.iter().map(|p| p.iter().zip(&dirs).map(|(x, d)| x * -d.sign()).collect()).collect();
        let reference: Vec<f64> = dirs.iter().map(|d| 1.1 * -d.sign()).collect();
        let hv = hypervolume(&front, &reference, &dirs).unwrap();

        let (min_front, min_ref) = as_minimization(&front, &reference, &dirs);
        let lo: Vec<f64> = (0..3).map(|k| min_front.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min)).collect();
        let volume: f64 = (0..3).map(|k| min_ref[k] - lo[k]).product();
        worst_exact = worst_exact.max((hv - cell_volume_3d(&min_front, &min_ref)).abs() / hv);
        let mut hits = 0usize;
        for _ in 0..samples {
            let y: Vec<f64> = (0..3).map(|k| rng.random_range(lo[k]..min_ref[k])).collect();
            if min_front.iter().any(|p| p.iter().zip(&y).all(|(a, b)| a <= b)) {
                hits += 1;
            }
        }
        let p = hits as f64 / samples as f64;
        let estimate = p * volume;
        let se = volume * (p * (1.0 - p) / samples as f64).sqrt();
        worst_3d = worst_3d.max((hv - estimate).abs() / se.max(f64::MIN_POSITIVE));
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst_2d <= 1e-2 && worst_3d <= 3.0 && worst_exact <= 1e-12 && secs < 60.0;
    report(
        2,
        pass,
        &format!(
            "2D worst relative error {worst_2d:.2e}, 3D worst Monte Carlo deviation {worst_3d:.2} SE, \
             3D worst relative error vs exact cells {worst_exact:.1e}, {secs:.1} s"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_03_wasserstein_is_a_metric() {
    let mut rng = rng("c3");
    let front = |rng: &mut seed::Rng| -> Vec<Vec<f64>> {
        let n = rng.random_range(1..=16);
        (0..n).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect()
    };
    let mut failures = Vec::new();
    let (mut worst_identity, mut worst_triangle, mut worst_translation): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for ground in [GroundCost::W2, GroundCost::W1] {
        for t in 0..200 {
            let (a, b, c) = (front(&mut rng), front(&mut rng), front(&mut rng));
            let w = |x: &[Vec<f64>], y: &[Vec<f64>]| wasserstein(x, y, ground).unwrap();
            if w(&a, &b).to_bits() != w(&b, &a).to_bits() {
                failures.push(format!("{ground:?} triple {t}: asymmetric"));
            }
            let mut shuffled = a.clone();
            shuffled.reverse();
            worst_identity = worst_identity.max(w(&a, &a)).max(w(&a, &shuffled));
            worst_triangle = worst_triangle.max(w(&a, &c) - (w(&a, &b) + w(&b, &c)));
            let shift = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let moved: Vec<Vec<f64>> = a.iter().map(|p| vec![p[0] + shift[0], p[1] + shift[1]]).collect();
            let norm = (shift[0] * shift[0] + shift[1] * shift[1]).sqrt();
            worst_translation = worst_translation.max((w(&a, &moved) - norm).abs());
        }
    }
    let pass = failures.is_empty() && worst_identity <= 1e-12 && worst_triangle <= 1e-9 && worst_translation <= 1e-9;
    report(
        3,
        pass,
        &format!(
            "{} asymmetric pairs, identity {worst_identity:.1e}, triangle excess {worst_triangle:.1e}, translation error {worst_translation:.1e}",
            failures.len()
        ),
    );
    assert!(pass, "{failures:?}");
}

struct CleaningFixture {
    raw: Dataset,
    constants: Vec<&'static str>,
    /// Column pairs that must be linked by a correlated-column entry.
    duplicates: Vec<(&'static str, &'static str)>,
    affine: Vec<(&'static str, &'static str)>,
    outliers: Vec<usize>,
    groups: Vec<BTreeSet<usize>>,
}

fn cleaning_fixture(index: u64) -> CleaningFixture {
    let mut rng = seed::rng(seed::derive_indexed(7, "cleaning-fixture", index));
    let noise = Normal::new(0.0, 0.3).unwrap();
    let inputs = vec![
        ParameterSpec::continuous("x1", 0.0, 1.0),
        ParameterSpec::continuous("x2", 0.0, 1.0),
        ParameterSpec::continuous("x3", 0.0, 1.0),
        ParameterSpec::continuous("x4", 0.0, 1.0),
        ParameterSpec::continuous("x5", 0.0, 1.0),
        ParameterSpec::continuous("const_a", 0.0, 20.0),
        ParameterSpec::continuous("const_b", -5.0, 5.0),
        ParameterSpec::continuous("x1_copy", 0.0, 1.0),
        ParameterSpec::continuous("x2_affine", -1.0, 2.0),
    ];
    let mut raw = Dataset::new(inputs, vec![OutputSpec::new("y1"), OutputSpec::new("y2")]);
    let (ca, cb) = (rng.random_range(1.0..19.0), rng.random_range(-4.0..4.0));
    let (slope, intercept) = (rng.random_range(0.5..1.5), rng.random_range(-0.5..0.5));
    let mut settings: Vec<[f64; 5]> = Vec::new();
    for _ in 0..60 {
        settings.push(std::array::from_fn(|_| rng.random_range(0.0..1.0)));
    }
    let row = |rng: &mut seed::Rng, id: usize, x: &[f64; 5]| {
        let y1 = 10.0 * x[0] + 5.0 * x[1] * x[1] + noise.sample(rng);
        let y2 = 3.0 * x[2] - 2.0 * x[3] + x[4] + noise.sample(rng);
        ExperimentRow::complete(
            id,
            vec![x[0], x[1], x[2], x[3], x[4], ca, cb, x[0], slope * x[1] + intercept],
            vec![y1, y2],
        )
    };
    for (id, x) in settings.iter().enumerate() {
        raw.rows.push(row(&mut rng, id, x));
    }
    let outliers = vec![10, 20, 30];
    for &i in &outliers {
        raw.rows[i].outputs[0] = raw.rows[i].outputs[0].map(|v| v + 60.0);
    }
    let mut groups = Vec::new();
    let mut next_id = raw.rows.len();
    for (base, copies) in [(40usize, 1usize), (41, 2), (42, 3)] {
        let mut g = BTreeSet::from([base]);
        for _ in 0..copies {
            raw.rows.push(row(&mut rng, next_id, &settings[base]));
            g.insert(next_id);
            next_id += 1;
        }
        groups.push(g);
    }
    // An exact duplicate row: same inputs and outputs.
    let mut dup = raw.rows[50].clone();
    dup.id = next_id;
    raw.rows.push(dup);
    groups.push(BTreeSet::from([50, next_id]));
    CleaningFixture {
        raw,
        constants: vec!["const_a", "const_b"],
        duplicates: vec![("x1", "x1_copy")],
        affine: vec![("x2", "x2_affine")],
        outliers,
        groups,
    }
}

fn correlated_pairs(ledger: &ReductionLedger) -> BTreeSet<BTreeSet<String>> {
    ledger
        .entries
        .iter()
        .filter_map(|e| match e {
            LedgerEntry::DroppedCorrelatedColumn { name, kept, .. } => Some(BTreeSet::from([name.clone(), kept.clone()])),
            _ => None,
        })
        .collect()
}

fn pair(a: &str, b: &str) -> BTreeSet<String> {
    BTreeSet::from([a.to_string(), b.to_string()])
}

#[test]
fn criterion_04_cleaning_finds_planted_artifacts_and_replays_exactly() {
    let mut planted = BTreeMap::<&str, (usize, usize)>::new();
    let mut replay_failures = 0;
    for index in 0..50 {
        let f = cleaning_fixture(index);
        let outcome = cleaning::clean(&f.raw, &CleaningConfig::default()).unwrap();
        let ledger = &outcome.ledger;
        let mut tally = |kind: &'static str, found: bool| {
            let e = planted.entry(kind).or_default();
            e.0 += 1;
            e.1 += usize::from(found);
        };
        let constants: BTreeSet<&str> = ledger
            .entries
            .iter()
            .filter_map(|e| match e {
                LedgerEntry::DroppedConstantColumn { name, .. } => Some(name.as_str()),
                _ => None,
            })
            .collect();
        for c in &f.constants {
            tally("constant", constants.contains(c));
        }
        let pairs = correlated_pairs(ledger);
        for (a, b) in &f.duplicates {
            tally("duplicate", pairs.contains(&pair(a, b)));
        }
        for (a, b) in &f.affine {
            tally("affine", pairs.contains(&pair(a, b)));
        }
        let outliers: BTreeSet<usize> = ledger
            .entries
            .iter()
            .filter_map(|e| match e {
                LedgerEntry::DroppedOutlierRow { row_id, .. } => Some(*row_id),
                _ => None,
            })
            .collect();
        for o in &f.outliers {
            tally("outlier", outliers.contains(o));
        }
        let merged: Vec<BTreeSet<usize>> = ledger
            .entries
            .iter()
            .filter_map(|e| match e {
                LedgerEntry::MergedReplicateGroup { members, .. } => Some(members.iter().copied().collect()),
                _ => None,
            })
            .collect();
        for g in &f.groups {
            tally("replicate group", merged.contains(g));
        }

        let reloaded = ReductionLedger::from_jsonl(&ledger.to_jsonl().unwrap()).unwrap();
        let replayed = reloaded.replay(&f.raw).unwrap();
        let same = replayed == outcome.dataset
            && serde_json::to_string(&replayed).unwrap() == serde_json::to_string(&outcome.dataset).unwrap();
        replay_failures += usize::from(!same);
    }
    let all_found = planted.values().all(|(n, found)| n == found);
    let summary: Vec<String> = planted.iter().map(|(k, (n, found))| format!("{k} {found}/{n}")).collect();
    let pass = all_found && replay_failures == 0;
    report(4, pass, &format!("{}; {replay_failures} replay mismatches in 50 fixtures", summary.join(", ")));
    assert!(pass);
}

fn oracle_median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Checks every merged row of `clean` against the median of its members'
/// outputs in `raw`. Returns (groups checked, mismatches, sizes seen).
fn check_medians(raw: &Dataset, clean: &Dataset, ledger: &[LedgerEntry]) -> (usize, usize, BTreeSet<usize>) {
    let (mut checked, mut wrong, mut sizes) = (0, 0, BTreeSet::new());
    for e in ledger {
        let LedgerEntry::MergedReplicateGroup { members, .. } = e else { continue };
        let merged = clean.rows.iter().find(|r| r.id == members[0]).expect("merged row kept");
        for k in 0..raw.outputs.len() {
            let vals: Vec<f64> =
                members.iter().map(|id| raw.rows.iter().find(|r| r.id == *id).unwrap().output(k)).collect();
            if merged.output(k).to_bits() != oracle_median(&vals).to_bits() {
                wrong += 1;
            }
        }
        sizes.insert(members.len());
        checked += 1;
    }
    (checked, wrong, sizes)
}

#[test]
fn criterion_05_replicates_merge_to_exact_medians() {
    let mut rng = rng("c5");
    let mut raw = Dataset::new(
        vec![ParameterSpec::continuous("a", 0.0, 1.0), ParameterSpec::continuous("b", 0.0, 1.0)],
        vec![OutputSpec::new("y"), OutputSpec::new("z")],
    );
    let mut id = 0;
    for size in 1..=7 {
        for _ in 0..3 {
            let (a, b) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
            for _ in 0..size {
                let outputs = vec![rng.random_range(-1e3..1e3) / 7.0, 0.1 + rng.random_range(0.0..1.0) / 3.0];
                raw.rows.push(ExperimentRow::complete(id, vec![a, b], outputs));
                id += 1;
            }
        }
    }
    let (clean, entries) = cleaning::aggregate_replicates(&raw, 1e-9, Aggregation::Median).unwrap();
    let (mut checked, mut wrong, mut sizes) = check_medians(&raw, &clean, &entries);

    for index in 0..50 {
        let f = cleaning_fixture(index);
        let outcome = cleaning::clean(&f.raw, &CleaningConfig::default()).unwrap();
        let (c, w, s) = check_medians(&f.raw, &outcome.dataset, &outcome.ledger.entries);
        checked += c;
        wrong += w;
        sizes.extend(s);
    }
    let both_parities = sizes.iter().any(|s| s % 2 == 0) && sizes.iter().any(|s| s % 2 == 1);
    let pass = wrong == 0 && both_parities && checked > 0;
    report(5, pass, &format!("{checked} merged groups, sizes {sizes:?}, {wrong} inexact outputs"));
    assert!(pass);
}

#[test]
fn criterion_06_selection_recovers_the_true_features() {
    let mut top2_hits = 0;
    let mut k_hits = 0;
    let mut chosen = Vec::new();
    for s in 0..20u64 {
        let mut rng = seed::rng(seed::derive_indexed(11, "c6", s));
        let mut inputs = vec![ParameterSpec::continuous("x1", 0.0, 1.0), ParameterSpec::continuous("x2", 0.0, 1.0)];
        inputs.extend((1..=18).map(|i| ParameterSpec::continuous(format!("d{i:02}"), 0.0, 1.0)));
        let mut ds = Dataset::new(inputs, vec![OutputSpec::new("y")]);
        let xs: Vec<Vec<f64>> = (0..150).map(|_| (0..20).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
        let signal: Vec<f64> = xs.iter().map(|x| 3.0 * x[0] - 2.0 * x[1] + 0.5 * x[0] * x[1]).collect();
        let mean = signal.iter().sum::<f64>() / signal.len() as f64;
        let sd = (signal.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (signal.len() - 1) as f64).sqrt();
        let noise = Normal::new(0.0, 0.05 * sd).unwrap();
        for (i, (x, y)) in xs.into_iter().zip(signal).enumerate() {
            ds.rows.push(ExperimentRow::complete(i, x, vec![y + noise.sample(&mut rng)]));
        }
        let objectives = vec!["y".to_string()];
        let ranking = rank_importance(&ds, &objectives).unwrap();
        let top: BTreeSet<String> = ranking.top(2).into_iter().collect();
        top2_hits += usize::from(top == pair("x1", "x2"));
        let curve = nested_rmse_curve(&ds, &ranking, &FitPlan::default(), 20, seed::derive(s, "select")).unwrap();
        k_hits += usize::from(matches!(curve.chosen_k, 2 | 3));
        chosen.push(curve.chosen_k);
    }
    let pass = top2_hits >= 18 && k_hits >= 18;
    report(6, pass, &format!("top-2 = {{x1, x2}} in {top2_hits}/20, chosen_k in {{2, 3}} in {k_hits}/20 (k: {chosen:?})"));
    assert!(pass);
}

#[test]
fn criterion_07_mlp_backprop_matches_finite_differences() {
    let mut rng = rng("c7");
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for net_index in 0..10u64 {
        let n_in = rng.random_range(2..=6);
        let mut net = Mlp::init(n_in, &[32, 32], Activation::Tanh, seed::derive_indexed(3, "c7-net", net_index));
        // Nonzero biases exercise every parameter.
        for p in net.params.iter_mut() {
            *p += rng.random_range(-0.1..0.1);
        }
        for _ in 0..5 {
            let x: Vec<f64> = (0..n_in).map(|_| rng.random_range(-1.0..1.0)).collect();
            let t = rng.random_range(-1.0..1.0);
            let (_, grad) = net.loss_and_gradient(std::slice::from_ref(&x), &[t]);
            let loss = |m: &Mlp| 0.5 * (m.forward(&x) - t).powi(2);
            let mut probe = net.clone();
            for i in 0..net.params.len() {
                let orig = probe.params[i];
                probe.params[i] = orig + h;
                let up = loss(&probe);
                probe.params[i] = orig - h;
                let down = loss(&probe);
                probe.params[i] = orig;
                let fd = (up - down) / (2.0 * h);
                let scale = grad[i].abs().max(fd.abs());
                // Relative error is meaningless for gradients at round-off level.
                if scale > 1e-7 {
                    worst = worst.max((grad[i] - fd).abs() / scale);
                }
            }
        }
    }
    let pass = worst < 1e-4;
    report(7, pass, &format!("max relative error {worst:.2e} over 10 networks x 5 points"));
    assert!(pass);
}

/// Exact 2D hypervolume of a minimization point set by sweeping `f1`.
fn sweep_hv_2d(points: &[Vec<f64>], reference: [f64; 2]) -> f64 {
    let mut pts: Vec<&Vec<f64>> = points.iter().filter(|p| p[0] < reference[0] && p[1] < reference[1]).collect();
    pts.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap().then(a[1].partial_cmp(&b[1]).unwrap()));
    let mut area = 0.0;
    let mut floor = reference[1];
    for (i, p) in pts.iter().enumerate() {
        floor = floor.min(p[1]);
        let right = pts.get(i + 1).map_or(reference[0], |q| q[0]);
        area += (right - p[0]) * (reference[1] - floor);
    }
    area
}

struct HvTrace(Vec<f64>);

impl Observer for HvTrace {
    fn on_record(&mut self, record: &IterationRecord, _state: &RunState) {
        let front: Vec<Vec<f64>> = record.front.iter().map(|c| c.objectives.clone()).collect();
        self.0.push(sweep_hv_2d(&front, [1.1, 1.1]));
    }
}

#[test]
fn criterion_08_optimizer_reaches_the_zdt1_front() {
    let analytic = 0.1 + 2.0 / 3.0 + 0.1 * 1.1;
    let zdt1 = FnEvaluator {
        dim: 6,
        n_objectives: 2,
        f: |x: &[f64]| {
            let g = 1.0 + 9.0 * x[1..].iter().sum::<f64>() / 5.0;
            vec![x[0], g * (1.0 - (x[0] / g).sqrt())]
        },
    };
    let mut finals = Vec::new();
    let mut monotone = true;
    let mut slowest: f64 = 0.0;
    for s in 0..5u64 {
        let mut config = OptimizerConfig::new(vec![Direction::Minimize; 2], vec![1.1, 1.1]);
        config.population = 60;
        config.iterations = 100;
        config.archive_cap = None;
        let start = Instant::now();
        let state = RunState::new(config, seed::derive_indexed(1, "zdt1", s)).unwrap();
        let mut trace = HvTrace(Vec::new());
        let state = moo::run(&zdt1, state, &[], None, &mut trace).unwrap();
        slowest = slowest.max(start.elapsed().as_secs_f64());
        monotone &= trace.0.windows(2).all(|w| w[1] >= w[0]);
        let archive: Vec<Vec<f64>> = state.archive.iter().map(|c| c.objectives.clone()).collect();
        finals.push(sweep_hv_2d(&archive, [1.1, 1.1]));
    }
    let mean = finals.iter().sum::<f64>() / finals.len() as f64;
    let ratio = mean / analytic;
    let pass = ratio >= 0.95 && monotone && slowest < 30.0;
    report(
        8,
        pass,
        &format!(
            "mean final hypervolume {mean:.4} = {:.2}% of {analytic:.5}, monotone {monotone}, slowest seed {slowest:.1} s",
            100.0 * ratio
        ),
    );
    assert!(pass, "{finals:?}");
}

fn files(dir: &RunDir) -> BTreeMap<String, Vec<u8>> {
    dir.artifact_names().unwrap().into_iter().map(|n| (n.clone(), std::fs::read(dir.path(&n)).unwrap())).collect()
}

#[test]
fn criterion_09_identical_runs_give_identical_bytes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (da, db) = (RunDir::new(a.path().join("run")), RunDir::new(b.path().join("run")));
    run_pipeline(common::golden_config(), 42, da.clone()).unwrap();
    run_pipeline(common::golden_config(), 42, db.clone()).unwrap();
    let (fa, fb) = (files(&da), files(&db));
    let differing: Vec<&String> = fa.keys().filter(|k| fa.get(*k) != fb.get(*k)).collect();
    let pass = fa.len() >= 15 && fa.keys().eq(fb.keys()) && differing.is_empty();
    report(9, pass, &format!("{} artifacts compared, differing: {differing:?}", fa.len()));
    assert!(pass);
}

#[test]
fn criterion_10_reduce_then_reconstruct_recovers_raw_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let config = common::golden_config();
    let rules = config.rules.clone();
    let handle = open_run(config, 0, RunDir::new(tmp.path().join("run"))).unwrap();
    advance(&handle, Stage::Train, &mut ()).unwrap();
    let dir = handle.dir();
    let raw: Dataset = dir.read_json(store::RAW).unwrap();
    let clean: Dataset = dir.read_json(store::CLEAN).unwrap();
    let selection: SelectionDoc = dir.read_json(store::SELECTION).unwrap();
    let mut ledger = load_ledger(dir).unwrap().entries;
    ledger.extend(selection.unselected.iter().cloned());
    let unrecoverable: BTreeSet<&str> = ledger
        .iter()
        .filter_map(|e| match e {
            LedgerEntry::DroppedUnselected { name, .. }
            | LedgerEntry::DroppedSparseColumn { name, .. }
            | LedgerEntry::DroppedUserExcluded { name, .. } => Some(name.as_str()),
            _ => None,
        })
        .collect();
    let tolerance = |name: &str, v: f64| match name {
        "flow_b" => golden::RULE_TOLERANCE * (1.0 + v.abs()),
        _ => 1e-6 * (1.0 + v.abs()),
    };

    let (mut rows, mut mismatches, mut invalid) = (0, Vec::new(), 0);
    for row in clean.rows.iter().filter(|r| r.replicate_group.is_none()).take(100) {
        let reduced: Vec<f64> =
            selection.features.iter().map(|f| row.input(clean.input_index(f).unwrap())).collect();
        let rec = reconstruct_recipe(&selection.features, &reduced, &raw.inputs, &ledger, &rules).unwrap();
        let original = raw.rows.iter().find(|r| r.id == row.id).unwrap();
        for (j, spec) in raw.inputs.iter().enumerate() {
            if unrecoverable.contains(spec.name.as_str()) {
                continue;
            }
            let (want, got) = (original.input(j), rec.value(&spec.name).unwrap());
            if (want - got).abs() > tolerance(&spec.name, want) {
                mismatches.push(format!("row {} {}: raw {want} rebuilt {got}", row.id, spec.name));
            }
        }
        invalid += usize::from(!rec.valid);
        rows += 1;
    }

    // Planted violations: an affine ledger entry inconsistent with the ratio
    // rule, and a reduced vector outside the bound rule.
    let tampered: Vec<LedgerEntry> = ledger
        .iter()
        .map(|e| match e {
            LedgerEntry::RuleBoundColumn { name, .. } if name == "flow_b" => LedgerEntry::DroppedCorrelatedColumn {
                name: name.clone(),
                kept: "flow_a".into(),
                slope: 0.55,
                intercept: 0.0,
                r: 1.0,
            },
            other => other.clone(),
        })
        .collect();
    let row = &clean.rows[0];
    let mut reduced: Vec<f64> =
        selection.features.iter().map(|f| row.input(clean.input_index(f).unwrap())).collect();
    let bad_ledger = reconstruct_recipe(&selection.features, &reduced, &raw.inputs, &tampered, &rules).unwrap();
    let fa = selection.features.iter().position(|f| f == "flow_a").unwrap();
    reduced[fa] = 95.0;
    let bad_bound = reconstruct_recipe(&selection.features, &reduced, &raw.inputs, &ledger, &rules).unwrap();
    let flagged = |r: &procopt::Reconstruction, rule: &str| !r.valid && r.violations.iter().any(|v| v.contains(rule));
    let planted_flagged = flagged(&bad_ledger, golden::RATIO_RULE) && flagged(&bad_bound, golden::BOUND_RULE);

    let pass = rows == 100 && mismatches.is_empty() && invalid == 0 && planted_flagged;
    report(
        10,
        pass,
        &format!(
            "{rows} rows, {} column mismatches, {invalid} invalid; planted violations flagged: {planted_flagged}",
            mismatches.len()
        ),
    );
    assert!(pass, "{mismatches:?} {:?} {:?}", bad_ledger.violations, bad_bound.violations);
}

#[test]
fn criterion_11_golden_run_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = RunDir::new(tmp.path().join("run"));
    let config = common::golden_config();
    let start = Instant::now();
    let record = run_pipeline(config.clone(), 0, dir.clone()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let recipes: RecipesDoc = dir.read_json(store::RECIPES).unwrap();
    let all_valid = recipes.recipes.iter().all(|r| r.valid && r.checks.iter().all(|c| c.passed));

    // The optimum of every input with a unique best value must lie inside
    // the front's decision-space range, give or take 5% of its bound width.
    let archive: ArchiveDoc = dir.read_json(store::ARCHIVE).unwrap();
    let clean: Dataset = dir.read_json(store::CLEAN).unwrap();
    let mut outside = Vec::new();
    for (i, u) in golden::OPTIMUM_UNIT.iter().enumerate() {
        let Some(u) = u else { continue };
        let name = golden::TRUE_INPUTS[i].0;
        let target = golden::native(i, *u);
        let j = archive.features.iter().position(|f| f == name).expect("true input selected");
        let (lo, hi) = clean.inputs[clean.input_index(name).unwrap()].range();
        let margin = 0.05 * (hi - lo);
        let values = archive.points.iter().map(|c| c.x[j]);
        let (min, max) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if target < min - margin || target > max + margin {
            outside.push(format!("{name}: optimum {target} outside [{min}, {max}]"));
        }
    }
    let pass = record.status == RunStatus::Done
        && secs < 120.0
        && recipes.recipes.len() == 10
        && all_valid
        && outside.is_empty();
    report(
        11,
        pass,
        &format!(
            "{} recipes in {secs:.1} s, all valid {all_valid}, optimum outside hull: {outside:?}",
            recipes.recipes.len()
        ),
    );
    assert!(pass);
}
