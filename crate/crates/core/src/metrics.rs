//! Two-sample distances.
//!
//! The energy distance is the V-statistic
//! `2 mean|a - b| - mean|a - a'| - mean|b - b'|` with all ordered pairs
//! (including `a = a'`), which is nonnegative and exactly zero for identical
//! multisets.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{EfmError, Result};
use crate::rng::{seeded_stream, Stream};

/// Largest per-side sample the exact energy distance runs on.
pub const ENERGY_DISTANCE_CAP: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub statistic: f64,
    pub n_a: usize,
    pub n_b: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub null_quantiles: Option<NullQuantiles>,
}

/// Quantiles of a permutation null distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullQuantiles {
    pub q50: f64,
    pub q90: f64,
    pub q95: f64,
    pub q99: f64,
}

fn check_dims(a: &Dataset, b: &Dataset) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(EfmError::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(())
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn mean_cross_distance(a: &Dataset, b: &Dataset) -> f64 {
    // Row sums in parallel, then summed in index order.
    let rows: Vec<f64> = (0..a.len())
        .into_par_iter()
        .map(|i| {
            let p = a.point(i);
            b.points().map(|q| dist(p, q)).sum::<f64>()
        })
        .collect();
    rows.iter().sum::<f64>() / (a.len() as f64 * b.len() as f64)
}

fn mean_self_distance(a: &Dataset) -> f64 {
    let n = a.len();
    let rows: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let p = a.point(i);
            (i + 1..n).map(|j| dist(p, a.point(j))).sum::<f64>()
        })
        .collect();
    2.0 * rows.iter().sum::<f64>() / (n as f64 * n as f64)
}

fn cap(ds: &Dataset, label: &str) -> Dataset {
    if ds.len() <= ENERGY_DISTANCE_CAP {
        return ds.clone();
    }
    log::warn!(
        "energy distance: subsampling {label} from {} to {ENERGY_DISTANCE_CAP} points",
        ds.len()
    );
    let mut s = seeded_stream(ds.len() as u64, "energy-distance-cap");
    let idx = rand::seq::index::sample(&mut s, ds.len(), ENERGY_DISTANCE_CAP).into_vec();
    ds.select(&idx).expect("nonempty")
}

/// Energy distance between the empirical distributions of `a` and `b`.
pub fn energy_distance(a: &Dataset, b: &Dataset) -> Result<DistanceReport> {
    check_dims(a, b)?;
    let (a, b) = (cap(a, "A"), cap(b, "B"));
    let stat = 2.0 * mean_cross_distance(&a, &b) - mean_self_distance(&a) - mean_self_distance(&b);
    Ok(DistanceReport {
        statistic: stat.max(0.0),
        n_a: a.len(),
        n_b: b.len(),
        null_quantiles: None,
    })
}

/// Wasserstein-1 distance between two 1-D samples.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    if a.len() == b.len() {
        return a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64;
    }
    // Integrate |F^-1(u) - G^-1(u)| over the merged quantile breakpoints.
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut u = 0.0;
    let mut total = 0.0;
    while i < a.len() && j < b.len() {
        let next_a = (i + 1) as f64 / na;
        let next_b = (j + 1) as f64 / nb;
        let next = next_a.min(next_b);
        total += (next - u) * (a[i] - b[j]).abs();
        u = next;
        if next_a <= next {
            i += 1;
        }
        if next_b <= next {
            j += 1;
        }
    }
    total
}

fn random_direction(dim: usize, stream: &mut Stream) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| stream.sample(StandardNormal)).collect();
        let n = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|c| c / n).collect();
        }
    }
}

/// Mean over random unit directions of the 1-D W1 distance between the
/// projected samples.
pub fn sliced_w1(a: &Dataset, b: &Dataset, n_projections: usize, stream: &mut Stream) -> Result<DistanceReport> {
    check_dims(a, b)?;
    if n_projections == 0 {
        return Err(EfmError::InvalidArgument("n_projections must be ≥ 1".into()));
    }
    let mut total = 0.0;
    for _ in 0..n_projections {
        let dir = random_direction(a.dim(), stream);
        let pa: Vec<f64> = a.points().map(|p| crate::types::dot(p, &dir)).collect();
        let pb: Vec<f64> = b.points().map(|p| crate::types::dot(p, &dir)).collect();
        total += wasserstein_1d(&pa, &pb);
    }
    Ok(DistanceReport {
        statistic: total / n_projections as f64,
        n_a: a.len(),
        n_b: b.len(),
        null_quantiles: None,
    })
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Null distribution of `statistic` under random relabelling of the pooled
/// sample, returning its quantiles and the sorted values.
pub fn permutation_null<F>(
    a: &Dataset,
    b: &Dataset,
    statistic: F,
    n_perm: usize,
    stream: &mut Stream,
) -> Result<(NullQuantiles, Vec<f64>)>
where
    F: Fn(&Dataset, &Dataset) -> Result<f64>,
{
    check_dims(a, b)?;
    if n_perm < 50 {
        return Err(EfmError::InvalidArgument("n_perm must be ≥ 50".into()));
    }
    let mut pooled: Vec<usize> = (0..a.len() + b.len()).collect();
    let point = |i: usize| -> &[f64] {
        if i < a.len() {
            a.point(i)
        } else {
            b.point(i - a.len())
        }
    };
    let mut values = Vec::with_capacity(n_perm);
    for _ in 0..n_perm {
        pooled.shuffle(stream);
        let mut left = Vec::with_capacity(a.len() * a.dim());
        let mut right = Vec::with_capacity(b.len() * a.dim());
        for (k, &i) in pooled.iter().enumerate() {
            if k < a.len() {
                left.extend_from_slice(point(i));
            } else {
                right.extend_from_slice(point(i));
            }
        }
        let da = Dataset::from_flat(left, a.dim(), "perm_a")?;
        let db = Dataset::from_flat(right, a.dim(), "perm_b")?;
        values.push(statistic(&da, &db)?);
    }
    values.sort_by(f64::total_cmp);
    let q = NullQuantiles {
        q50: quantile(&values, 0.50),
        q90: quantile(&values, 0.90),
        q95: quantile(&values, 0.95),
        q99: quantile(&values, 0.99),
    };
    Ok((q, values))
}

/// Energy distance with its permutation null attached.
pub fn energy_distance_test(a: &Dataset, b: &Dataset, n_perm: usize, stream: &mut Stream) -> Result<DistanceReport> {
    let mut report = energy_distance(a, b)?;
    let (q, _) = permutation_null(a, b, |x, y| Ok(energy_distance(x, y)?.statistic), n_perm, stream)?;
    report.null_quantiles = Some(q);
    Ok(report)
}
