use crate::error::{Error, Result};
use crate::types::Direction;

/// Whether `a` Pareto-dominates `b`.
pub fn dominates(a: &[f64], b: &[f64], directions: &[Direction]) -> Result<bool> {
    if a.len() != b.len() || a.len() != directions.len() {
        return Err(Error::Contract(format!(
            "dominance needs equal lengths, got {}, {} and {} directions",
            a.len(),
            b.len(),
            directions.len()
        )));
    }
    Ok(dominates_unchecked(a, b, directions))
}

pub(crate) fn dominates_unchecked(a: &[f64], b: &[f64], directions: &[Direction]) -> bool {
    let mut strict = false;
    for ((x, y), d) in a.iter().zip(b).zip(directions) {
        let (x, y) = (x * d.sign(), y * d.sign());
        if x < y {
            return false;
        }
        if x > y {
            strict = true;
        }
    }
    strict
}

/// Splits indices into (nondominated, dominated), each in input order.
/// Copies of a nondominated vector are all kept.
pub fn pareto_filter(points: &[Vec<f64>], directions: &[Direction]) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..points.len()).collect();
    // After sorting lexicographically best-first, a point can only be
    // dominated by one that precedes it.
    order.sort_by(|&i, &j| {
        for (k, d) in directions.iter().enumerate() {
            let c = (points[j][k] * d.sign()).total_cmp(&(points[i][k] * d.sign()));
            if c.is_ne() {
                return c;
            }
        }
        i.cmp(&j)
    });
    let mut front: Vec<usize> = Vec::new();
    let mut dominated = vec![false; points.len()];
    for &i in &order {
        if front.iter().any(|&f| dominates_unchecked(&points[f], &points[i], directions)) {
            dominated[i] = true;
        } else {
            front.push(i);
        }
    }
    (0..points.len()).partition(|&i| !dominated[i])
}

#[cfg(test)]
mod tests {
    use super::*;
    use Direction::{Maximize as Max, Minimize as Min};

    #[test]
    fn dominance_examples() {
        assert!(dominates(&[2.0, 2.0], &[1.0, 1.0], &[Max, Max]).unwrap());
        assert!(!dominates(&[1.0, 1.0], &[1.0, 1.0], &[Max, Max]).unwrap());
        assert!(!dominates(&[2.0, 0.0], &[1.0, 1.0], &[Max, Max]).unwrap());
        assert!(dominates(&[0.0, 2.0], &[1.0, 1.0], &[Min, Max]).unwrap());
        assert!(dominates(&[1.0], &[1.0, 2.0], &[Max]).is_err());
    }

    #[test]
    fn filter_examples() {
        let pts = vec![vec![1.0, 3.0], vec![2.0, 2.0], vec![3.0, 1.0], vec![1.0, 1.0]];
        assert_eq!(pareto_filter(&pts, &[Max, Max]), (vec![0, 1, 2], vec![3]));
        assert_eq!(pareto_filter(&pts[..1], &[Max, Max]), (vec![0], vec![]));
        let same = vec![vec![1.0, 1.0]; 4];
        assert_eq!(pareto_filter(&same, &[Max, Max]), (vec![0, 1, 2, 3], vec![]));
        let dup = vec![vec![2.0, 2.0], vec![1.0, 1.0], vec![2.0, 2.0]];
        assert_eq!(pareto_filter(&dup, &[Max, Max]), (vec![0, 2], vec![1]));
    }
}
