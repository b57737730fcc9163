use rand::Rng;

use crate::error::{Error, Result};
use crate::seed;

pub(crate) fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Schott spacing: sample standard deviation of L1 nearest-neighbour
/// distances.
pub fn spacing(front: &[Vec<f64>]) -> Result<f64> {
    let n = front.len();
    if n < 2 {
        return Err(Error::UndefinedMetric(format!("spacing needs at least 2 points, got {n}")));
    }
    let d: Vec<f64> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| l1(&front[i], &front[j]))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    Ok((d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt())
}

/// Crowding distance per point: sum over objectives of the normalized gap
/// between neighbours along that objective. Boundary points get infinity.
pub fn crowding_distance(points: &[Vec<f64>]) -> Vec<f64> {
    let n = points.len();
    let mut out = vec![0.0; n];
    if n == 0 {
        return out;
    }
    for k in 0..points[0].len() {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| points[a][k].total_cmp(&points[b][k]).then(a.cmp(&b)));
        let lo = points[order[0]][k];
        let hi = points[order[n - 1]][k];
        out[order[0]] = f64::INFINITY;
        out[order[n - 1]] = f64::INFINITY;
        if hi > lo {
            for w in 1..n.saturating_sub(1) {
                out[order[w]] += (points[order[w + 1]][k] - points[order[w - 1]][k]) / (hi - lo);
            }
        }
    }
    out
}

/// Monte Carlo estimate of the fraction of the unit box lying within `sigma`
/// (L∞) of at least one archive point. Small values next to a converged
/// front hint that exploration has collapsed.
pub fn coverage(points: &[Vec<f64>], dim: usize, sigma: f64, samples: usize, seed: u64) -> f64 {
    if points.is_empty() || samples == 0 {
        return 0.0;
    }
    let mut rng = seed::rng(seed);
    let mut hit = 0usize;
    let mut u = vec![0.0; dim];
    for _ in 0..samples {
        u.iter_mut().for_each(|v| *v = rng.random_range(0.0..1.0));
        if points.iter().any(|p| p.iter().zip(&u).all(|(a, b)| (a - b).abs() <= sigma)) {
            hit += 1;
        }
    }
    hit as f64 / samples as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn spacing_examples() {
        assert_eq!(spacing(&[vec![0.0, 2.0], vec![1.0, 1.0], vec![2.0, 0.0]]).unwrap(), 0.0);
        let s = spacing(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![3.0, 0.0]]).unwrap();
        let m = 4.0 / 3.0;
        let expected = (((1.0f64 - m).powi(2) * 2.0 + (2.0f64 - m).powi(2)) / 2.0).sqrt();
        assert!((s - expected).abs() < 1e-15);
        assert_eq!(spacing(&[vec![0.3, 7.0], vec![-2.0, 1.0]]).unwrap(), 0.0);
        assert!(matches!(spacing(&[vec![1.0, 1.0]]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn crowding_marks_extremes() {
        let c = crowding_distance(&[vec![0.0, 3.0], vec![1.0, 2.0], vec![2.0, 1.0], vec![3.0, 0.0]]);
        assert!(c[0].is_infinite() && c[3].is_infinite());
        assert!((c[1] - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn coverage_bounds() {
        assert_eq!(coverage(&[vec![0.5, 0.5]], 2, 0.5, 100, 1), 1.0);
        let c = coverage(&[vec![0.5, 0.5]], 2, 0.25, 20_000, 1);
        assert!((c - 0.25).abs() < 0.02, "{c}");
    }

    proptest! {
        #[test]
        fn spacing_translation_and_permutation_invariant(
            pts in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 2), 2..12),
            t in prop::collection::vec(-5.0f64..5.0, 2),
            rot in 0usize..12,
        ) {
            let base = spacing(&pts).unwrap();
            let moved: Vec<Vec<f64>> = pts.iter().map(|p| vec![p[0] + t[0], p[1] + t[1]]).collect();
            prop_assert!((spacing(&moved).unwrap() - base).abs() < 1e-9);
            let mut perm = pts.clone();
            perm.rotate_left(rot % pts.len());
            prop_assert!((spacing(&perm).unwrap() - base).abs() < 1e-12);
        }
    }
}
