//! Distances between one-dimensional empirical distributions.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DistanceError {
    #[error("cannot compare an empty sample")]
    EmptySample,
    #[error("sample contains a non-finite value")]
    NonFinite,
}

fn sorted(values: &[f64]) -> Result<Vec<f64>, DistanceError> {
    if values.is_empty() {
        return Err(DistanceError::EmptySample);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(DistanceError::NonFinite);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Walks the merged support of two sorted samples, calling `visit` with
/// each distinct point, the next point (if any), and both ECDF values at the
/// point.
fn walk_ecdfs(a: &[f64], b: &[f64], mut visit: impl FnMut(f64, Option<f64>, f64, f64)) {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(&p), Some(&q)) => p.min(q),
            (Some(&p), None) => p,
            (None, Some(&q)) => q,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        let next = match (a.get(i), b.get(j)) {
            (Some(&p), Some(&q)) => Some(p.min(q)),
            (Some(&p), None) => Some(p),
            (None, Some(&q)) => Some(q),
            (None, None) => None,
        };
        visit(x, next, i as f64 / na, j as f64 / nb);
    }
}

/// First Wasserstein distance, the integral of |F_a - F_b| over the line.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> Result<f64, DistanceError> {
    let (a, b) = (sorted(a)?, sorted(b)?);
    let mut total = 0.0;
    walk_ecdfs(&a, &b, |x, next, fa, fb| {
        if let Some(n) = next {
            total += (fa - fb).abs() * (n - x);
        }
    });
    Ok(total)
}

/// Two-sample Kolmogorov-Smirnov statistic, the largest gap between the
/// right-continuous ECDFs.
pub fn ks_distance(a: &[f64], b: &[f64]) -> Result<f64, DistanceError> {
    let (a, b) = (sorted(a)?, sorted(b)?);
    let mut best: f64 = 0.0;
    walk_ecdfs(&a, &b, |_, _, fa, fb| best = best.max((fa - fb).abs()));
    Ok(best)
}
