use rand::RngCore;

use super::GaussianSummary;
use crate::error::{check_dim, BridgeError, Result};
use crate::oracle::{standard_normal, State};

/// W1 between two equal-size empirical samples on the line: mean absolute
/// difference of the sorted samples.
pub fn wasserstein1_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dim(a.len(), b.len())?;
    if a.is_empty() {
        return Err(BridgeError::Domain("W1 needs non-empty samples".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

/// Sample mean and unbiased per-dimension variance.
pub fn sample_summary(samples: &[State]) -> Result<GaussianSummary> {
    if samples.len() < 2 {
        return Err(BridgeError::Domain("need at least two samples".into()));
    }
    let d = samples[0].len();
    let n = samples.len() as f64;
    let mut mean = State::zeros(d);
    for s in samples {
        check_dim(d, s.len())?;
        mean += s;
    }
    mean /= n;
    let mut var = State::zeros(d);
    for s in samples {
        var += (s - &mean).map(|x| x * x);
    }
    var /= n - 1.0;
    GaussianSummary::new(mean, var)
}

fn coordinate(samples: &[State], i: usize) -> Vec<f64> {
    samples.iter().map(|s| s[i]).collect()
}

/// W1 of every coordinate marginal.
pub fn per_dimension_w1(a: &[State], b: &[State]) -> Result<Vec<f64>> {
    let d = a.first().map_or(0, |s| s.len());
    (0..d)
        .map(|i| wasserstein1_1d(&coordinate(a, i), &coordinate(b, i)))
        .collect()
}

/// Largest W1 over `directions` random unit projections.
pub fn projected_w1(
    a: &[State],
    b: &[State],
    directions: usize,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    let d = a.first().map_or(0, |s| s.len());
    let mut worst = 0.0f64;
    for _ in 0..directions {
        let u = standard_normal(d, rng).normalize();
        let pa: Vec<f64> = a.iter().map(|s| s.dot(&u)).collect();
        let pb: Vec<f64> = b.iter().map(|s| s.dot(&u)).collect();
        worst = worst.max(wasserstein1_1d(&pa, &pb)?);
    }
    Ok(worst)
}
