//! Analytic data distributions: isotropic Gaussian / Dirac mixtures.
//!
//! A mixture perturbed with `N(0, σ²I)` noise is again a mixture with
//! per-component variance `std² + σ²`, so densities, scores, posterior means
//! and component posteriors are all available in closed form. These serve
//! as the ground-truth denoiser for samplers and as test oracles.

use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Isotropic standard deviation; zero is a point mass.
    pub std: f64,
}

impl Component {
    pub fn new(weight: f64, mean: Vec<f64>, std: f64) -> Self {
        Self { weight, mean, std }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleGmm {
    dim: usize,
    components: Vec<Component>,
}

impl OracleGmm {
    pub fn new(dim: usize, components: Vec<Component>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dim must be positive".into()));
        }
        if components.is_empty() {
            return Err(Error::InvalidParameter(
                "mixture needs at least one component".into(),
            ));
        }
        let mut total = 0.0;
        for (k, c) in components.iter().enumerate() {
            check_dim(dim, c.mean.len())?;
            if !(c.weight > 0.0) || !c.weight.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "component {k}: weight must be positive"
                )));
            }
            if !(c.std >= 0.0) || !c.std.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "component {k}: std must be >= 0"
                )));
            }
            if c.mean.iter().any(|m| !m.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "component {k}: non-finite mean"
                )));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(Self { dim, components })
    }

    /// Builds a mixture from unnormalized weights.
    pub fn normalized(dim: usize, mut components: Vec<Component>) -> Result<Self> {
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if !(total > 0.0) {
            return Err(Error::InvalidParameter("weights must be positive".into()));
        }
        for c in &mut components {
            c.weight /= total;
        }
        Self::new(dim, components)
    }

    pub fn gaussian(mean: Vec<f64>, std: f64) -> Result<Self> {
        Self::new(mean.len(), vec![Component::new(1.0, mean, std)])
    }

    pub fn dirac(point: Vec<f64>) -> Result<Self> {
        Self::gaussian(point, 0.0)
    }

    /// Two equal-weight point masses at ±1 in one dimension.
    pub fn two_peak_dirac() -> Self {
        Self::new(
            1,
            vec![
                Component::new(0.5, vec![-1.0], 0.0),
                Component::new(0.5, vec![1.0], 0.0),
            ],
        )
        .expect("valid mixture")
    }

    /// Standard 2-D benchmark: three equal components on the unit circle, std 0.15.
    pub fn benchmark() -> Self {
        let comps = (0..3)
            .map(|k| {
                let a = std::f64::consts::FRAC_PI_2 + 2.0 * std::f64::consts::PI * k as f64 / 3.0;
                Component::new(1.0 / 3.0, vec![a.cos(), a.sin()], 0.15)
            })
            .collect();
        Self::normalized(2, comps).expect("valid mixture")
    }

    /// Two equal components at (±1, 0) with std 0.25.
    pub fn two_component() -> Self {
        Self::new(
            2,
            vec![
                Component::new(0.5, vec![-1.0, 0.0], 0.25),
                Component::new(0.5, vec![1.0, 0.0], 0.25),
            ],
        )
        .expect("valid mixture")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn has_dirac(&self) -> bool {
        self.components.iter().any(|c| c.std == 0.0)
    }

    /// Overall mean of the mixture.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for c in &self.components {
            for (mi, ci) in m.iter_mut().zip(&c.mean) {
                *mi += c.weight * ci;
            }
        }
        m
    }

    /// Root of the average per-coordinate variance, the usual `σ_data`.
    pub fn data_std(&self) -> f64 {
        let mean = self.mean();
        let mut var = 0.0;
        for c in &self.components {
            let spread: f64 = c
                .mean
                .iter()
                .zip(&mean)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            var += c.weight * (spread / self.dim as f64 + c.std * c.std);
        }
        var.sqrt()
    }

    fn check(&self, x: &[f64], sigma: f64, need_density: bool) -> Result<()> {
        check_dim(self.dim, x.len())?;
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::Domain(format!(
                "sigma must be finite and >= 0, got {sigma}"
            )));
        }
        if need_density && sigma == 0.0 && self.has_dirac() {
            return Err(Error::Domain(
                "density of a point mass at sigma = 0 is undefined".into(),
            ));
        }
        Ok(())
    }

    /// Per-component log densities of the perturbed mixture, including log weights.
    fn joint_log_terms(&self, x: &[f64], sigma: f64) -> Vec<f64> {
        let d = self.dim as f64;
        self.components
            .iter()
            .map(|c| {
                let var = c.std * c.std + sigma * sigma;
                let sq: f64 = x.iter().zip(&c.mean).map(|(a, b)| (a - b) * (a - b)).sum();
                c.weight.ln() - 0.5 * d * (LN_2PI + var.ln()) - 0.5 * sq / var
            })
            .collect()
    }

    fn responsibilities(&self, x: &[f64], sigma: f64) -> (Vec<f64>, f64) {
        let terms = self.joint_log_terms(x, sigma);
        let lse = log_sum_exp(&terms);
        let resp = terms.iter().map(|t| (t - lse).exp()).collect();
        (resp, lse)
    }

    /// `log q(x; σ)`, the mixture density convolved with `N(0, σ²I)`.
    pub fn log_density(&self, x: &[f64], sigma: f64) -> Result<f64> {
        self.check(x, sigma, true)?;
        Ok(log_sum_exp(&self.joint_log_terms(x, sigma)))
    }

    /// `∇ₓ log q(x; σ)`.
    pub fn score(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
        self.check(x, sigma, true)?;
        let (resp, _) = self.responsibilities(x, sigma);
        let mut s = vec![0.0; self.dim];
        for (c, r) in self.components.iter().zip(&resp) {
            let var = c.std * c.std + sigma * sigma;
            for ((si, xi), mi) in s.iter_mut().zip(x).zip(&c.mean) {
                *si += r * (mi - xi) / var;
            }
        }
        Ok(s)
    }

    /// Posterior mean `E[x₀ | x]`, equal to `x + σ²·score`. Identity at `σ = 0`.
    pub fn denoise(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
        self.check(x, sigma, false)?;
        if sigma == 0.0 {
            return Ok(x.to_vec());
        }
        let score = self.score(x, sigma)?;
        let s2 = sigma * sigma;
        Ok(x.iter().zip(&score).map(|(xi, si)| xi + s2 * si).collect())
    }

    /// `p(component k | x)` under the perturbed mixture.
    pub fn component_posterior(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
        self.check(x, sigma, true)?;
        Ok(self.responsibilities(x, sigma).0)
    }

    /// Mixture restricted to `labels`, weights renormalized.
    pub fn restrict(&self, labels: &[usize]) -> Result<OracleGmm> {
        if labels.is_empty() {
            return Err(Error::EmptySelection);
        }
        if let Some(k) = labels.iter().find(|&&k| k >= self.components.len()) {
            return Err(Error::InvalidParameter(format!(
                "component index {k} out of range"
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        let comps: Vec<Component> = labels
            .iter()
            .filter(|k| seen.insert(**k))
            .map(|&k| self.components[k].clone())
            .collect();
        Self::normalized(self.dim, comps)
    }

    /// Conjugate posterior over clean data given `y = x₀ + σ_obs·n`.
    pub fn posterior_given_observation(&self, y: &[f64], sigma_obs: f64) -> Result<OracleGmm> {
        check_dim(self.dim, y.len())?;
        if !(sigma_obs > 0.0) {
            return Err(Error::Domain("observation noise must be positive".into()));
        }
        let log_w = self.joint_log_terms(y, sigma_obs);
        let lse = log_sum_exp(&log_w);
        let ov = sigma_obs * sigma_obs;
        let comps = self
            .components
            .iter()
            .zip(&log_w)
            .map(|(c, lw)| {
                let cv = c.std * c.std;
                let gain = cv / (cv + ov);
                let mean = c
                    .mean
                    .iter()
                    .zip(y)
                    .map(|(m, yi)| m + gain * (yi - m))
                    .collect();
                Component::new((lw - lse).exp(), mean, (cv * ov / (cv + ov)).sqrt())
            })
            .collect();
        Self::normalized(self.dim, comps)
    }

    pub fn sample_one<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = self.components.len() - 1;
        for (k, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                chosen = k;
                break;
            }
        }
        let c = &self.components[chosen];
        c.mean
            .iter()
            .map(|m| {
                let n: f64 = rng.sample(StandardNormal);
                m + c.std * n
            })
            .collect()
    }

    /// `n` i.i.d. draws.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.sample_one(rng)).collect()
    }
}

/// `x₀ + σ·n`, `n ~ N(0, I)`.
pub fn perturb<R: rand::Rng + ?Sized>(x0: &[f64], sigma: f64, rng: &mut R) -> Vec<f64> {
    x0.iter()
        .map(|x| {
            let n: f64 = rng.sample(StandardNormal);
            x + sigma * n
        })
        .collect()
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_from_seed;
    use rand::Rng;

    fn random_gmm(seed: u64) -> OracleGmm {
        let mut rng = rng_from_seed(seed);
        let comps = (0..3)
            .map(|_| {
                Component::new(
                    0.2 + rng.random::<f64>(),
                    vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)],
                    rng.random_range(0.1..0.8),
                )
            })
            .collect();
        OracleGmm::normalized(2, comps).unwrap()
    }

    #[test]
    fn standard_normal_at_mode() {
        let g = OracleGmm::gaussian(vec![0.0], 1.0).unwrap();
        assert!((g.log_density(&[0.0], 0.0).unwrap() + 0.918_938_533_204_672_7).abs() < 1e-14);
        let d = OracleGmm::dirac(vec![0.0]).unwrap();
        assert!((d.log_density(&[0.0], 1.0).unwrap() + 0.918_938_533_204_672_7).abs() < 1e-14);
    }

    #[test]
    fn dirac_density_at_zero_sigma_is_domain_error() {
        let d = OracleGmm::dirac(vec![0.0]).unwrap();
        assert!(matches!(d.log_density(&[0.0], 0.0), Err(Error::Domain(_))));
        assert!(matches!(d.score(&[0.0], 0.0), Err(Error::Domain(_))));
        assert!(matches!(
            d.log_density(&[0.0, 1.0], 1.0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn log_density_matches_naive_sum() {
        let g = random_gmm(3);
        let mut rng = rng_from_seed(4);
        for _ in 0..50 {
            let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let sigma = 0.7;
            let naive: f64 = g
                .components()
                .iter()
                .map(|c| {
                    let v = c.std * c.std + sigma * sigma;
                    let sq: f64 = x.iter().zip(&c.mean).map(|(a, b)| (a - b) * (a - b)).sum();
                    c.weight * (-0.5 * sq / v).exp() / (2.0 * std::f64::consts::PI * v)
                })
                .sum();
            let got = g.log_density(&x, sigma).unwrap();
            assert!((got - naive.ln()).abs() / naive.ln().abs().max(1.0) < 1e-12);
        }
    }

    #[test]
    fn log_density_survives_far_tails() {
        let g = OracleGmm::gaussian(vec![0.0], 1.0).unwrap();
        let lp = g.log_density(&[1414.0], 0.0).unwrap();
        assert!(lp.is_finite() && lp < -9.9e5);
    }

    #[test]
    fn closed_forms() {
        let mu = vec![0.3, -1.2];
        let d = OracleGmm::dirac(mu.clone()).unwrap();
        let x = [2.0, 5.0];
        let s = d.score(&x, 0.5).unwrap();
        for i in 0..2 {
            assert!((s[i] - (mu[i] - x[i]) / 0.25).abs() < 1e-12);
        }
        let den = d.denoise(&x, 0.5).unwrap();
        for i in 0..2 {
            assert!((den[i] - mu[i]).abs() < 1e-12);
        }
        let two = OracleGmm::two_peak_dirac();
        assert_eq!(two.score(&[0.0], 1.0).unwrap(), vec![0.0]);
        assert!(two.denoise(&[0.0], 3.0).unwrap()[0].abs() < 1e-15);
        assert_eq!(two.denoise(&[0.4], 0.0).unwrap(), vec![0.4]);
    }

    #[test]
    fn posterior_basics() {
        let g = OracleGmm::gaussian(vec![1.0, 1.0], 0.5).unwrap();
        assert_eq!(g.component_posterior(&[3.0, 0.0], 0.2).unwrap(), vec![1.0]);
        let two = OracleGmm::two_peak_dirac();
        let p = two.component_posterior(&[0.0], 0.8).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn posterior_matches_direct_bayes() {
        let g = random_gmm(11);
        let mut rng = rng_from_seed(12);
        for _ in 0..50 {
            let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let sigma = rng.random_range(0.01..3.0);
            let joint: Vec<f64> = g
                .components()
                .iter()
                .map(|c| {
                    let single = OracleGmm::gaussian(c.mean.clone(), c.std).unwrap();
                    c.weight * single.log_density(&x, sigma).unwrap().exp()
                })
                .collect();
            let total: f64 = joint.iter().sum();
            let p = g.component_posterior(&x, sigma).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (a, b) in p.iter().zip(&joint) {
                assert!((a - b / total).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn restrict_renormalizes() {
        let g = OracleGmm::new(
            1,
            vec![
                Component::new(0.2, vec![0.0], 1.0),
                Component::new(0.3, vec![1.0], 1.0),
                Component::new(0.5, vec![2.0], 1.0),
            ],
        )
        .unwrap();
        let r = g.restrict(&[1, 2]).unwrap();
        assert!((r.components()[0].weight - 0.375).abs() < 1e-15);
        assert!((r.components()[1].weight - 0.625).abs() < 1e-15);
        assert_eq!(g.restrict(&[0, 1, 2]).unwrap(), g);
        assert_eq!(g.restrict(&[0]).unwrap().components()[0].weight, 1.0);
        assert_eq!(g.restrict(&[]), Err(Error::EmptySelection));
        assert!(g.restrict(&[7]).is_err());
    }

    #[test]
    fn sampling_moments_and_determinism() {
        let g = OracleGmm::gaussian(vec![0.0], 1.0).unwrap();
        let xs = g.sample(&mut rng_from_seed(1), 100_000);
        let mean = xs.iter().map(|v| v[0]).sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|v| (v[0] - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.02 && (var - 1.0).abs() < 0.03);
        assert_eq!(xs, g.sample(&mut rng_from_seed(1), 100_000));
        let d = OracleGmm::dirac(vec![2.0, -1.0]).unwrap();
        assert!(d
            .sample(&mut rng_from_seed(2), 10)
            .iter()
            .all(|p| p == &vec![2.0, -1.0]));
    }

    #[test]
    fn perturb_moments() {
        let x0 = [1.5, -2.0];
        assert_eq!(perturb(&x0, 0.0, &mut rng_from_seed(0)), x0.to_vec());
        let mut rng = rng_from_seed(9);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| perturb(&[0.0], 2.0, &mut rng)[0])
            .collect();
        let sd = (draws.iter().map(|v| v * v).sum::<f64>() / draws.len() as f64).sqrt();
        assert!((sd - 2.0).abs() / 2.0 < 0.02);
        assert_eq!(
            perturb(&x0, 0.3, &mut rng_from_seed(5)),
            perturb(&x0, 0.3, &mut rng_from_seed(5))
        );
    }

    #[test]
    fn observation_posterior_is_conjugate() {
        let g = OracleGmm::gaussian(vec![1.0], 0.8).unwrap();
        let post = g.posterior_given_observation(&[2.0], 0.5).unwrap();
        let c = &post.components()[0];
        let gain = 0.64 / (0.64 + 0.25);
        assert!((c.mean[0] - (1.0 + gain)).abs() < 1e-14);
        assert!((c.std - (0.64f64 * 0.25 / 0.89).sqrt()).abs() < 1e-14);
    }
}
