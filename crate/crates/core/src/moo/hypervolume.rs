//! Exact hypervolume in one to three objectives.
//!
//! Points are mapped to minimization (`p·(-sign)`), so every box spans from
//! the point up to the reference.

use crate::error::{Error, Result};
use crate::types::Direction;

fn to_min(points: &[Vec<f64>], reference: &[f64], directions: &[Direction]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let d = directions.len();
    if !(1..=3).contains(&d) {
        return Err(Error::UnsupportedDimension(d));
    }
    if reference.len() != d {
        return Err(Error::Contract(format!("reference has {} coordinates for {d} objectives", reference.len())));
    }
    let r: Vec<f64> = reference.iter().zip(directions).map(|(v, s)| -v * s.sign()).collect();
    let mut out = Vec::with_capacity(points.len());
    for p in points {
        if p.len() != d {
            return Err(Error::Contract(format!("point has {} coordinates for {d} objectives", p.len())));
        }
        let q: Vec<f64> = p.iter().zip(directions).map(|(v, s)| -v * s.sign()).collect();
        if q.iter().zip(&r).any(|(a, b)| !(a < b)) {
            return Err(Error::ReferenceViolation { point: p.clone(), reference: reference.to_vec() });
        }
        out.push(q);
    }
    Ok((out, r))
}

/// Area dominated by minimization points `(x, y)` below reference `(rx, ry)`.
fn area_2d(points: &mut [[f64; 2]], rx: f64, ry: f64) -> f64 {
    points.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    let mut area = 0.0;
    let mut y_prev = ry;
    for p in points.iter() {
        if p[1] < y_prev {
            area += (rx - p[0]) * (y_prev - p[1]);
            y_prev = p[1];
        }
    }
    area
}

fn volume_3d(points: &[Vec<f64>], r: &[f64]) -> f64 {
    let mut order: Vec<&Vec<f64>> = points.iter().collect();
    order.sort_by(|a, b| a[2].total_cmp(&b[2]));
    let mut volume = 0.0;
    let mut slab: Vec<[f64; 2]> = Vec::with_capacity(order.len());
    for (i, p) in order.iter().enumerate() {
        slab.push([p[0], p[1]]);
        let z_next = order.get(i + 1).map_or(r[2], |q| q[2]);
        if z_next > p[2] {
            volume += area_2d(&mut slab, r[0], r[1]) * (z_next - p[2]);
        }
    }
    volume
}

/// Measure of the region dominated by `front` and bounded by `reference`.
/// Every point must be strictly better than the reference in all objectives.
pub fn hypervolume(front: &[Vec<f64>], reference: &[f64], directions: &[Direction]) -> Result<f64> {
    let (pts, r) = to_min(front, reference, directions)?;
    if pts.is_empty() {
        return Ok(0.0);
    }
    Ok(match directions.len() {
        1 => r[0] - pts.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min),
        2 => {
            let mut xy: Vec<[f64; 2]> = pts.iter().map(|p| [p[0], p[1]]).collect();
            area_2d(&mut xy, r[0], r[1])
        }
        _ => volume_3d(&pts, &r),
    })
}

/// Whether `point` is strictly better than `reference` in every objective.
pub fn inside_reference(point: &[f64], reference: &[f64], directions: &[Direction]) -> bool {
    point.iter().zip(reference).zip(directions).all(|((p, r), d)| p * d.sign() > r * d.sign())
}

/// Hypervolume lost when each point is removed on its own. Points outside
/// the reference box contribute zero.
pub fn hypervolume_contributions(front: &[Vec<f64>], reference: &[f64], directions: &[Direction]) -> Result<Vec<f64>> {
    let inside: Vec<usize> = (0..front.len()).filter(|&i| inside_reference(&front[i], reference, directions)).collect();
    let pts: Vec<Vec<f64>> = inside.iter().map(|&i| front[i].clone()).collect();
    let total = hypervolume(&pts, reference, directions)?;
    let mut out = vec![0.0; front.len()];
    for (pos, &i) in inside.iter().enumerate() {
        let mut rest = pts.clone();
        rest.remove(pos);
        out[i] = (total - hypervolume(&rest, reference, directions)?).max(0.0);
    }
    Ok(out)
}
