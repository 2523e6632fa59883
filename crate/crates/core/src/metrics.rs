//! Distortion and distribution metrics on batches of latent vectors.

use crate::error::{param, Result};
use crate::rng::{self, normal_vec, RngStream};

pub const DEFAULT_PROJECTIONS: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub mse: f64,
    /// MSE over the reference batch's per-dimension variance.
    pub nmse: f64,
    pub sw2: f64,
    /// Unbiased estimate; may dip slightly below zero.
    pub mmd2: f64,
}

fn check_shapes(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<usize> {
    if a.len() != b.len() {
        return Err(param(format!("batch sizes differ: {} vs {}", a.len(), b.len())));
    }
    let d = a.first().map_or(0, Vec::len);
    if a.iter().chain(b).any(|v| v.len() != d) {
        return Err(param("batch vectors differ in dimension"));
    }
    Ok(d)
}

pub fn mse(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let d = check_shapes(a, b)?;
    if a.is_empty() || d == 0 {
        return Err(param("mse of an empty batch"));
    }
    let total: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>())
        .sum();
    Ok(total / (a.len() * d) as f64)
}

/// Per-dimension sample variance averaged over dimensions.
pub fn mean_variance(batch: &[Vec<f64>]) -> Result<f64> {
    let n = batch.len();
    if n < 2 {
        return Err(param("variance needs at least two vectors"));
    }
    let d = batch[0].len();
    let mut acc = 0.0;
    for i in 0..d {
        let mean = batch.iter().map(|v| v[i]).sum::<f64>() / n as f64;
        acc += batch.iter().map(|v| (v[i] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    }
    Ok(acc / d as f64)
}

fn w2_sq_sorted(mut xs: Vec<f64>, mut ys: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    xs.iter().zip(&ys).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / xs.len() as f64
}

/// Sliced 2-Wasserstein distance over `projections` random unit directions.
pub fn sliced_w2(x: &[Vec<f64>], y: &[Vec<f64>], projections: usize, rng: &mut RngStream) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(param("sliced Wasserstein of an empty batch"));
    }
    if projections == 0 {
        return Err(param("need at least one projection"));
    }
    let d = check_shapes(x, y)?;
    let mut acc = 0.0;
    for _ in 0..projections {
        let mut dir = normal_vec(rng, d);
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        dir.iter_mut().for_each(|v| *v /= norm);
        let project = |b: &[Vec<f64>]| -> Vec<f64> {
            b.iter().map(|v| v.iter().zip(&dir).map(|(a, u)| a * u).sum()).collect()
        };
        acc += w2_sq_sorted(project(x), project(y));
    }
    Ok((acc / projections as f64).sqrt())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

pub fn gaussian_kernel(a: &[f64], b: &[f64], bandwidth: f64) -> f64 {
    (-sq_dist(a, b) / (2.0 * bandwidth * bandwidth)).exp()
}

/// Median pairwise Euclidean distance over the pooled batches.
pub fn median_bandwidth(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<f64> {
    let pooled: Vec<&Vec<f64>> = x.iter().chain(y).collect();
    let mut dists = Vec::with_capacity(pooled.len() * pooled.len().saturating_sub(1) / 2);
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            dists.push(sq_dist(pooled[i], pooled[j]).sqrt());
        }
    }
    if dists.is_empty() {
        return Err(param("bandwidth needs at least two points"));
    }
    let bw = crate::analysis::median(&mut dists);
    if bw > 0.0 {
        Ok(bw)
    } else {
        Ok(1.0)
    }
}

/// Unbiased squared MMD with a Gaussian kernel.
pub fn mmd2_unbiased(x: &[Vec<f64>], y: &[Vec<f64>], bandwidth: f64) -> Result<f64> {
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(param(format!("bandwidth must be positive (got {bandwidth})")));
    }
    let (n, m) = (x.len(), y.len());
    if n < 2 || m < 2 {
        return Err(param("mmd2 needs at least two vectors per batch"));
    }
    let within = |b: &[Vec<f64>]| {
        let mut s = 0.0;
        for i in 0..b.len() {
            for j in i + 1..b.len() {
                s += gaussian_kernel(&b[i], &b[j], bandwidth);
            }
        }
        2.0 * s / (b.len() * (b.len() - 1)) as f64
    };
    let mut cross = 0.0;
    for a in x {
        for b in y {
            cross += gaussian_kernel(a, b, bandwidth);
        }
    }
    Ok(within(x) + within(y) - 2.0 * cross / (n * m) as f64)
}

#[derive(Debug, Clone, Copy)]
pub struct MetricSettings {
    pub projections: usize,
    pub seed: u64,
}

impl Default for MetricSettings {
    fn default() -> Self {
        Self { projections: DEFAULT_PROJECTIONS, seed: 0 }
    }
}

/// All metrics of `decoded` against `reference`.
pub fn evaluate(decoded: &[Vec<f64>], reference: &[Vec<f64>], settings: &MetricSettings) -> Result<MetricReport> {
    let mse = mse(decoded, reference)?;
    let var = mean_variance(reference)?;
    let mut proj = rng::stream(settings.seed, rng::ids::METRICS);
    let sw2 = sliced_w2(decoded, reference, settings.projections, &mut proj)?;
    let bw = median_bandwidth(decoded, reference)?;
    let mmd2 = mmd2_unbiased(decoded, reference, bw)?;
    Ok(MetricReport { mse, nmse: mse / var, sw2, mmd2 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn batch(seed: u64, n: usize, d: usize, shift: f64) -> Vec<Vec<f64>> {
        let mut r = stream(seed, 1);
        (0..n).map(|_| normal_vec(&mut r, d).into_iter().map(|v| v + shift).collect()).collect()
    }

    #[test]
    fn mse_cases() {
        let a = batch(1, 10, 3, 0.0);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert_eq!(mse(&[vec![0.0; 4]], &[vec![1.0; 4]]).unwrap(), 1.0);
        let b = batch(2, 10, 3, 0.0);
        let mut naive = 0.0;
        for i in 0..10 {
            for j in 0..3 {
                naive += (a[i][j] - b[i][j]).powi(2);
            }
        }
        assert!((mse(&a, &b).unwrap() - naive / 30.0).abs() < 1e-12);
        assert!(mse(&a, &b[..9]).is_err());
        let shifted: Vec<Vec<f64>> = a.iter().map(|v| v.iter().map(|x| x + 0.5).collect()).collect();
        assert!((mse(&a, &shifted).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn sliced_w2_identical_is_zero_and_symmetric() {
        let a = batch(3, 50, 4, 0.0);
        let b = batch(4, 50, 4, 0.3);
        assert_eq!(sliced_w2(&a, &a, 16, &mut stream(0, 5)).unwrap(), 0.0);
        let ab = sliced_w2(&a, &b, 16, &mut stream(0, 5)).unwrap();
        let ba = sliced_w2(&b, &a, 16, &mut stream(0, 5)).unwrap();
        assert!((ab - ba).abs() < 1e-15);
        assert!(sliced_w2(&[], &[], 4, &mut stream(0, 5)).is_err());
        assert!(sliced_w2(&a, &b, 0, &mut stream(0, 5)).is_err());
    }

    #[test]
    fn sliced_w2_one_dimensional_matches_sort() {
        let a = batch(5, 40, 1, 0.0);
        let b = batch(6, 40, 1, 1.0);
        let mut xs: Vec<f64> = a.iter().map(|v| v[0]).collect();
        let mut ys: Vec<f64> = b.iter().map(|v| v[0]).collect();
        xs.sort_by(f64::total_cmp);
        ys.sort_by(f64::total_cmp);
        let direct = (xs.iter().zip(&ys).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / 40.0).sqrt();
        let sw = sliced_w2(&a, &b, 7, &mut stream(1, 5)).unwrap();
        assert!((sw - direct).abs() < 1e-12);
    }

    #[test]
    fn sliced_w2_recovers_gaussian_shift() {
        let a = batch(7, 10_000, 1, 0.0);
        let b = batch(8, 10_000, 1, 2.0);
        let sw = sliced_w2(&a, &b, 8, &mut stream(2, 5)).unwrap();
        assert!((sw - 2.0).abs() < 0.2, "{sw}");
    }

    #[test]
    fn mmd_matches_naive_double_loop() {
        let a = batch(9, 12, 3, 0.0);
        let b = batch(10, 15, 3, 0.4);
        let bw = 1.3;
        let k = |p: &Vec<f64>, q: &Vec<f64>| (-sq_dist(p, q) / (2.0 * bw * bw)).exp();
        let mut xx = 0.0;
        for i in 0..12 {
            for j in 0..12 {
                if i != j {
                    xx += k(&a[i], &a[j]);
                }
            }
        }
        let mut yy = 0.0;
        for i in 0..15 {
            for j in 0..15 {
                if i != j {
                    yy += k(&b[i], &b[j]);
                }
            }
        }
        let mut xy = 0.0;
        for p in &a {
            for q in &b {
                xy += k(p, q);
            }
        }
        let naive = xx / (12.0 * 11.0) + yy / (15.0 * 14.0) - 2.0 * xy / (12.0 * 15.0);
        let got = mmd2_unbiased(&a, &b, bw).unwrap();
        assert!((got - naive).abs() < 1e-12);
        assert!((got - mmd2_unbiased(&b, &a, bw).unwrap()).abs() < 1e-15);
        assert_eq!(gaussian_kernel(&a[0], &a[0], bw), 1.0);
        assert!(mmd2_unbiased(&a, &b, 0.0).is_err());
        assert!(mmd2_unbiased(&a[..1], &b, 1.0).is_err());
    }

    #[test]
    fn mmd_null_is_small() {
        let n = 1000;
        for seed in 0..20 {
            let a = batch(100 + seed, n, 2, 0.0);
            let b = batch(200 + seed, n, 2, 0.0);
            let bw = median_bandwidth(&a, &b).unwrap();
            let v = mmd2_unbiased(&a, &b, bw).unwrap();
            assert!(v.abs() < 5.0 / n as f64, "seed {seed}: {v}");
        }
    }
}
