//! Sample-based distances between point clouds.

use rand_distr::{Distribution, StandardNormal};
use scorekit::OracleGmm;

use crate::error::{HarnessError, Result};

fn empty(what: &str) -> HarnessError {
    HarnessError::Metric(format!("{what}: empty sample set"))
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Exact 2-Wasserstein distance between two 1-D empirical measures.
///
/// Equal sizes reduce to sorted pairing; otherwise the quantile functions are
/// integrated piecewise over the merged breakpoints `i/n ∪ j/m`.
pub fn w2_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(empty("w2_1d"));
    }
    let (a, b) = (sorted(a), sorted(b));
    if a.len() == b.len() {
        let s: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
        return Ok((s / a.len() as f64).sqrt());
    }
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut u = 0.0;
    let mut acc = 0.0;
    while i < a.len() && j < b.len() {
        let next = ((i + 1) as f64 / n).min((j + 1) as f64 / m);
        let d = a[i] - b[j];
        acc += (next - u) * d * d;
        u = next;
        if (i + 1) as f64 / n <= next {
            i += 1;
        }
        if (j + 1) as f64 / m <= next {
            j += 1;
        }
    }
    Ok(acc.sqrt())
}

fn check_cloud(a: &[Vec<f64>], what: &str) -> Result<usize> {
    let d = a.first().ok_or_else(|| empty(what))?.len();
    if a.iter().any(|r| r.len() != d) {
        return Err(HarnessError::Metric(format!("{what}: ragged sample set")));
    }
    Ok(d)
}

/// Random unit directions in `dim` dimensions.
pub fn random_directions<R: rand::Rng + ?Sized>(
    dim: usize,
    n: usize,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| loop {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break v.into_iter().map(|x| x / norm).collect();
            }
        })
        .collect()
}

/// Mean of [`w2_1d`] over projections onto `n_projections` random unit directions.
pub fn sliced_w2<R: rand::Rng + ?Sized>(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    n_projections: usize,
    rng: &mut R,
) -> Result<f64> {
    let d = check_cloud(a, "sliced_w2")?;
    let db = check_cloud(b, "sliced_w2")?;
    if d != db {
        return Err(HarnessError::Metric(format!(
            "sliced_w2: dimension {d} vs {db}"
        )));
    }
    if n_projections == 0 {
        return Err(HarnessError::Metric(
            "sliced_w2: need at least one projection".into(),
        ));
    }
    if d == 1 {
        let pa: Vec<f64> = a.iter().map(|r| r[0]).collect();
        let pb: Vec<f64> = b.iter().map(|r| r[0]).collect();
        return w2_1d(&pa, &pb);
    }
    let dirs = random_directions(d, n_projections, rng);
    let mut total = 0.0;
    for dir in &dirs {
        let proj = |cloud: &[Vec<f64>]| -> Vec<f64> {
            cloud
                .iter()
                .map(|r| r.iter().zip(dir).map(|(x, u)| x * u).sum())
                .collect()
        };
        total += w2_1d(&proj(a), &proj(b))?;
    }
    Ok(total / n_projections as f64)
}

/// Two-pass sample mean and (biased) covariance.
pub fn mean_cov(a: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let d = check_cloud(a, "moments")?;
    let n = a.len() as f64;
    let mut mean = vec![0.0; d];
    for r in a {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = vec![vec![0.0; d]; d];
    for r in a {
        for i in 0..d {
            let di = r[i] - mean[i];
            for j in 0..d {
                cov[i][j] += di * (r[j] - mean[j]);
            }
        }
    }
    cov.iter_mut().flatten().for_each(|c| *c /= n);
    Ok((mean, cov))
}

/// `(‖mean_A − mean_B‖₂, ‖cov_A − cov_B‖_F)`.
pub fn moments(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<(f64, f64)> {
    let (ma, ca) = mean_cov(a)?;
    let (mb, cb) = mean_cov(b)?;
    if ma.len() != mb.len() {
        return Err(HarnessError::Metric(format!(
            "moments: dimension {} vs {}",
            ma.len(),
            mb.len()
        )));
    }
    let mean_err = ma
        .iter()
        .zip(&mb)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let cov_err = ca
        .iter()
        .flatten()
        .zip(cb.iter().flatten())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok((mean_err, cov_err))
}

/// Fraction of samples whose nearest component mean is each component.
pub fn mode_fractions(samples: &[Vec<f64>], gmm: &OracleGmm) -> Result<Vec<f64>> {
    let d = check_cloud(samples, "mode_mass")?;
    if d != gmm.dim() {
        return Err(HarnessError::Metric(format!(
            "mode_mass: dimension {d} vs {}",
            gmm.dim()
        )));
    }
    let mut counts = vec![0usize; gmm.components().len()];
    for s in samples {
        let nearest = gmm
            .components()
            .iter()
            .map(|c| {
                c.mean
                    .iter()
                    .zip(s)
                    .map(|(m, x)| (m - x).powi(2))
                    .sum::<f64>()
            })
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(k, _)| k)
            .expect("mixture has components");
        counts[nearest] += 1;
    }
    Ok(counts
        .into_iter()
        .map(|c| c as f64 / samples.len() as f64)
        .collect())
}

/// Total-variation distance between nearest-mode fractions and mixture weights.
pub fn mode_mass_err(samples: &[Vec<f64>], gmm: &OracleGmm) -> Result<f64> {
    let f = mode_fractions(samples, gmm)?;
    Ok(0.5
        * f.iter()
            .zip(gmm.components())
            .map(|(f, c)| (f - c.weight).abs())
            .sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use scorekit::rng_from_seed;

    #[test]
    fn w2_basics() {
        let a = [0.3, -1.0, 2.0, 5.5];
        assert_eq!(w2_1d(&a, &a).unwrap(), 0.0);
        let b: Vec<f64> = a.iter().map(|x| x + 1.25).collect();
        assert!((w2_1d(&a, &b).unwrap() - 1.25).abs() < 1e-14);
        assert!(w2_1d(&[], &a).is_err());
    }

    #[test]
    fn unequal_sizes_match_replication() {
        // Repeating every point k times does not change the empirical measure.
        let a = [0.1, 0.9, -0.4];
        let b = [1.0, 2.0];
        let a6: Vec<f64> = a.iter().flat_map(|x| [*x, *x]).collect();
        let b6: Vec<f64> = b.iter().flat_map(|x| [*x, *x, *x]).collect();
        let exact = w2_1d(&a6, &b6).unwrap();
        assert!((w2_1d(&a, &b).unwrap() - exact).abs() < 1e-14);
    }

    #[test]
    fn sliced_reduces_to_1d() {
        let a: Vec<Vec<f64>> = [0.1, 0.5, 2.0].iter().map(|x| vec![*x]).collect();
        let b: Vec<Vec<f64>> = [0.0, 0.7, 1.0].iter().map(|x| vec![*x]).collect();
        let s = sliced_w2(&a, &b, 7, &mut rng_from_seed(0)).unwrap();
        assert_eq!(s, w2_1d(&[0.1, 0.5, 2.0], &[0.0, 0.7, 1.0]).unwrap());
        assert_eq!(sliced_w2(&a, &a, 3, &mut rng_from_seed(0)).unwrap(), 0.0);
    }

    #[test]
    fn shifted_moments() {
        let a = vec![vec![0.0, 1.0], vec![2.0, -1.0], vec![1.0, 3.0]];
        let b: Vec<Vec<f64>> = a.iter().map(|r| vec![r[0] + 3.0, r[1] - 4.0]).collect();
        let (m, c) = moments(&a, &b).unwrap();
        assert!((m - 5.0).abs() < 1e-14 && c < 1e-14);
        assert_eq!(moments(&a, &a).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn mode_mass_of_exact_samples_is_small() {
        let g = OracleGmm::benchmark();
        let s = g.sample(&mut rng_from_seed(1), 30_000);
        assert!(mode_mass_err(&s, &g).unwrap() < 0.02);
        let g2 = OracleGmm::two_component();
        let left = vec![vec![-1.0, 0.0]; 10];
        assert!((mode_mass_err(&left, &g2).unwrap() - 0.5).abs() < 1e-15);
    }
}
