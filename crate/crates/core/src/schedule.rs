//! Training-time noise distributions, sampling step grids and loss weights.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distribution of σ used to draw training noise levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainNoise {
    /// `ln σ ~ N(p_mean, p_std²)`.
    LogNormal { p_mean: f64, p_std: f64 },
    /// `ln σ ~ U(ln σ_min, ln σ_max)`.
    LogUniform { sigma_min: f64, sigma_max: f64 },
    /// `t ~ U(0,1)`, `σ = tan(πt/2)` clipped to the bounds.
    CosineUniform { sigma_min: f64, sigma_max: f64 },
    /// `t ~ U(0,1)`, `logSNR = offset − slope·logit(t)`, `σ = exp(−logSNR/2)` clipped to the bounds.
    SigmoidUniform {
        sigma_min: f64,
        sigma_max: f64,
        slope: f64,
        offset: f64,
    },
    /// `t = sigmoid(N(p_mean, p_std²))`, `σ = t/(1−t)`.
    LogitNormal { p_mean: f64, p_std: f64 },
}

impl TrainNoise {
    pub fn name(&self) -> &'static str {
        match self {
            TrainNoise::LogNormal { .. } => "log_normal",
            TrainNoise::LogUniform { .. } => "log_uniform",
            TrainNoise::CosineUniform { .. } => "cosine_uniform",
            TrainNoise::SigmoidUniform { .. } => "sigmoid_uniform",
            TrainNoise::LogitNormal { .. } => "logit_normal",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            TrainNoise::LogNormal { p_mean, p_std } | TrainNoise::LogitNormal { p_mean, p_std } => {
                if !p_mean.is_finite() || !(p_std > 0.0) || !p_std.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "{}: need finite p_mean and p_std > 0",
                        self.name()
                    )));
                }
            }
            TrainNoise::LogUniform {
                sigma_min,
                sigma_max,
            }
            | TrainNoise::CosineUniform {
                sigma_min,
                sigma_max,
            } => check_bounds(sigma_min, sigma_max)?,
            TrainNoise::SigmoidUniform {
                sigma_min,
                sigma_max,
                slope,
                offset,
            } => {
                check_bounds(sigma_min, sigma_max)?;
                if !(slope > 0.0) || !offset.is_finite() {
                    return Err(Error::InvalidParameter(
                        "sigmoid_uniform: need slope > 0".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            TrainNoise::LogNormal { p_mean, p_std } => {
                let n: f64 = rng.sample(StandardNormal);
                (p_mean + p_std * n).exp()
            }
            TrainNoise::LogUniform {
                sigma_min,
                sigma_max,
            } => {
                let (a, b) = (sigma_min.ln(), sigma_max.ln());
                (a + (b - a) * rng.random::<f64>())
                    .exp()
                    .clamp(sigma_min, sigma_max)
            }
            TrainNoise::CosineUniform {
                sigma_min,
                sigma_max,
            } => {
                let t = open_unit(rng);
                (FRAC_PI_2 * t).tan().clamp(sigma_min, sigma_max)
            }
            TrainNoise::SigmoidUniform {
                sigma_min,
                sigma_max,
                slope,
                offset,
            } => {
                let t = open_unit(rng);
                let logit = (t / (1.0 - t)).ln();
                let log_snr = offset - slope * logit;
                (-0.5 * log_snr).exp().clamp(sigma_min, sigma_max)
            }
            TrainNoise::LogitNormal { p_mean, p_std } => {
                let n: f64 = rng.sample(StandardNormal);
                let t = 1.0 / (1.0 + (-(p_mean + p_std * n)).exp());
                t / (1.0 - t)
            }
        }
    }
}

fn open_unit<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

fn check_bounds(sigma_min: f64, sigma_max: f64) -> Result<()> {
    if sigma_min > 0.0 && sigma_min < sigma_max && sigma_max.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidRange(format!(
            "need 0 < sigma_min < sigma_max, got [{sigma_min}, {sigma_max}]"
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    /// `σᵢ = (σ_max^{1/ρ} + i/(N−1)·(σ_min^{1/ρ} − σ_max^{1/ρ}))^ρ`.
    Polynomial,
    Linear,
    /// Quadratic in the step index, denser near `σ_min`.
    Quadratic,
    /// Geometric spacing (uniform in `λ = −ln σ`).
    LogLinear,
    /// Uniform in trigonometric time `t = (2/π)·atan σ`.
    CosineLogsnr,
    /// Uniform in linear-interpolation time `t = σ/(1+σ)`.
    LinearLogsnr,
}

impl GridKind {
    pub const ALL: [GridKind; 6] = [
        GridKind::Polynomial,
        GridKind::Linear,
        GridKind::Quadratic,
        GridKind::LogLinear,
        GridKind::CosineLogsnr,
        GridKind::LinearLogsnr,
    ];
}

impl fmt::Display for GridKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GridKind::Polynomial => "polynomial",
            GridKind::Linear => "linear",
            GridKind::Quadratic => "quadratic",
            GridKind::LogLinear => "log_linear",
            GridKind::CosineLogsnr => "cosine_logsnr",
            GridKind::LinearLogsnr => "linear_logsnr",
        })
    }
}

impl FromStr for GridKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        GridKind::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown grid kind `{s}`")))
    }
}

/// Strictly decreasing noise levels ending in an explicit terminal `0`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepGrid {
    sigmas: Vec<f64>,
}

impl StepGrid {
    pub fn from_sigmas(sigmas: Vec<f64>) -> Result<Self> {
        if sigmas.last() != Some(&0.0) {
            return Err(Error::InvalidRange("grid must end with sigma = 0".into()));
        }
        if sigmas.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidRange("grid contains non-finite sigma".into()));
        }
        if sigmas.windows(2).any(|w| !(w[0] > w[1])) {
            return Err(Error::InvalidRange(
                "grid must be strictly decreasing".into(),
            ));
        }
        Ok(Self { sigmas })
    }

    pub fn build(
        kind: GridKind,
        steps: usize,
        sigma_min: f64,
        sigma_max: f64,
        rho: f64,
    ) -> Result<Self> {
        check_bounds(sigma_min, sigma_max)?;
        if steps == 0 {
            return Err(Error::InvalidParameter(
                "grid needs at least one step".into(),
            ));
        }
        if kind == GridKind::Polynomial && !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::InvalidRho(rho));
        }
        let n = steps;
        let mut sigmas = Vec::with_capacity(n + 1);
        if n == 1 {
            sigmas.push(sigma_max);
        } else {
            let last = (n - 1) as f64;
            let interp = |a: f64, b: f64, i: usize| a + (i as f64 / last) * (b - a);
            for i in 0..n {
                let s = match kind {
                    GridKind::Polynomial => {
                        let (a, b) = (sigma_max.powf(1.0 / rho), sigma_min.powf(1.0 / rho));
                        interp(a, b, i).powf(rho)
                    }
                    GridKind::Linear => interp(sigma_max, sigma_min, i),
                    GridKind::Quadratic => {
                        let u = 1.0 - i as f64 / last;
                        sigma_min + (sigma_max - sigma_min) * u * u
                    }
                    GridKind::LogLinear => interp(sigma_max.ln(), sigma_min.ln(), i).exp(),
                    GridKind::CosineLogsnr => {
                        let t = interp(sigma_max.atan(), sigma_min.atan(), i);
                        t.tan()
                    }
                    GridKind::LinearLogsnr => {
                        let t = interp(
                            sigma_max / (1.0 + sigma_max),
                            sigma_min / (1.0 + sigma_min),
                            i,
                        );
                        t / (1.0 - t)
                    }
                };
                sigmas.push(s);
            }
            sigmas[0] = sigma_max;
            sigmas[n - 1] = sigma_min;
        }
        sigmas.push(0.0);
        Self::from_sigmas(sigmas)
    }

    /// The default polynomial grid, `ρ = 7` over `[0.002, 80]`.
    pub fn edm_default(steps: usize) -> Result<Self> {
        Self::build(GridKind::Polynomial, steps, 0.002, 80.0, 7.0)
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    /// Number of steps (one fewer than the number of nodes).
    pub fn steps(&self) -> usize {
        self.sigmas.len() - 1
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigmas[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossWeighting {
    /// `1/c_out(σ)² = (σ² + σ_d²)/(σ·σ_d)²`.
    Edm {
        sigma_data: f64,
    },
    Uniform,
    InvSigma2,
    /// `1/c_out(σ)`.
    InvCout {
        sigma_data: f64,
    },
}

impl LossWeighting {
    pub fn name(&self) -> &'static str {
        match self {
            LossWeighting::Edm { .. } => "edm",
            LossWeighting::Uniform => "uniform",
            LossWeighting::InvSigma2 => "inv_sigma2",
            LossWeighting::InvCout { .. } => "inv_cout",
        }
    }

    pub fn weight(&self, sigma: f64) -> Result<f64> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Domain(format!(
                "loss weight needs sigma > 0, got {sigma}"
            )));
        }
        Ok(match *self {
            LossWeighting::Edm { sigma_data } => {
                (sigma * sigma + sigma_data * sigma_data) / (sigma * sigma_data).powi(2)
            }
            LossWeighting::Uniform => 1.0,
            LossWeighting::InvSigma2 => 1.0 / (sigma * sigma),
            LossWeighting::InvCout { sigma_data } => {
                (sigma * sigma + sigma_data * sigma_data).sqrt() / (sigma * sigma_data)
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param::Preconditioner;
    use crate::rng_from_seed;

    fn median(mut v: Vec<f64>) -> f64 {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[v.len() / 2]
    }

    fn draws(spec: TrainNoise, seed: u64) -> Vec<f64> {
        let mut rng = rng_from_seed(seed);
        (0..100_000).map(|_| spec.sample(&mut rng)).collect()
    }

    #[test]
    fn train_noise_medians() {
        let m = median(draws(
            TrainNoise::LogNormal {
                p_mean: -0.4,
                p_std: 1.2,
            },
            1,
        ));
        assert!((m / (-0.4f64).exp() - 1.0).abs() < 0.03, "{m}");
        let m = median(draws(
            TrainNoise::LogUniform {
                sigma_min: 0.01,
                sigma_max: 100.0,
            },
            2,
        ));
        assert!((m - 1.0).abs() < 0.03, "{m}");
        let m = median(draws(
            TrainNoise::LogitNormal {
                p_mean: 0.0,
                p_std: 1.0,
            },
            3,
        ));
        assert!((m - 1.0).abs() < 0.05, "{m}");
    }

    #[test]
    fn bounded_samplers_respect_support() {
        let specs = [
            TrainNoise::LogUniform {
                sigma_min: 0.002,
                sigma_max: 80.0,
            },
            TrainNoise::CosineUniform {
                sigma_min: 0.002,
                sigma_max: 80.0,
            },
            TrainNoise::SigmoidUniform {
                sigma_min: 0.002,
                sigma_max: 80.0,
                slope: 1.0,
                offset: 0.0,
            },
        ];
        for spec in specs {
            spec.validate().unwrap();
            assert!(draws(spec, 4).iter().all(|&s| (0.002..=80.0).contains(&s)));
        }
        assert!(TrainNoise::LogNormal {
            p_mean: 0.0,
            p_std: 0.0
        }
        .validate()
        .is_err());
        assert!(TrainNoise::LogUniform {
            sigma_min: 1.0,
            sigma_max: 0.5
        }
        .validate()
        .is_err());
    }

    #[test]
    fn grid_endpoints_and_monotonicity() {
        for kind in GridKind::ALL {
            for n in [1, 2, 5, 64] {
                let g = StepGrid::build(kind, n, 0.002, 80.0, 7.0).unwrap();
                let s = g.sigmas();
                assert_eq!(s.len(), n + 1);
                assert_eq!(s[0], 80.0);
                if n > 1 {
                    assert_eq!(s[n - 1], 0.002);
                }
                assert_eq!(s[n], 0.0);
                assert!(s.windows(2).all(|w| w[0] > w[1]), "{kind} {n}");
            }
        }
    }

    #[test]
    fn grid_examples() {
        let poly = StepGrid::build(GridKind::Polynomial, 9, 0.1, 10.0, 1.0).unwrap();
        let lin = StepGrid::build(GridKind::Linear, 9, 0.1, 10.0, 7.0).unwrap();
        for (a, b) in poly.sigmas().iter().zip(lin.sigmas()) {
            assert!((a - b).abs() < 1e-12);
        }
        let g = StepGrid::build(GridKind::LogLinear, 3, 0.01, 100.0, 7.0).unwrap();
        assert_eq!(g.sigmas()[0], 100.0);
        assert!((g.sigmas()[1] - 1.0).abs() < 1e-14);
        assert_eq!(&g.sigmas()[2..], &[0.01, 0.0]);
        assert_eq!(
            StepGrid::build(GridKind::Linear, 1, 0.5, 2.0, 7.0)
                .unwrap()
                .sigmas(),
            &[2.0, 0.0]
        );
    }

    #[test]
    fn grid_errors() {
        assert!(matches!(
            StepGrid::build(GridKind::Linear, 4, 1.0, 1.0, 7.0),
            Err(Error::InvalidRange(_))
        ));
        assert!(matches!(
            StepGrid::build(GridKind::Linear, 4, 0.0, 1.0, 7.0),
            Err(Error::InvalidRange(_))
        ));
        assert!(matches!(
            StepGrid::build(GridKind::Polynomial, 4, 0.1, 1.0, 0.0),
            Err(Error::InvalidRho(_))
        ));
        assert!(StepGrid::build(GridKind::Linear, 0, 0.1, 1.0, 7.0).is_err());
        assert!(StepGrid::from_sigmas(vec![2.0, 1.0]).is_err());
        assert!(StepGrid::from_sigmas(vec![1.0, 2.0, 0.0]).is_err());
        assert_eq!(StepGrid::from_sigmas(vec![0.0]).unwrap().steps(), 0);
    }

    #[test]
    fn grid_is_deterministic() {
        let a = StepGrid::build(GridKind::CosineLogsnr, 33, 0.002, 80.0, 7.0).unwrap();
        let b = StepGrid::build(GridKind::CosineLogsnr, 33, 0.002, 80.0, 7.0).unwrap();
        assert!(a
            .sigmas()
            .iter()
            .zip(b.sigmas())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn loss_weights() {
        let w = LossWeighting::Edm { sigma_data: 0.5 };
        assert!((w.weight(0.5).unwrap() - 2.0 / 0.25).abs() < 1e-12);
        assert_eq!(LossWeighting::Uniform.weight(3.0).unwrap(), 1.0);
        assert_eq!(LossWeighting::InvSigma2.weight(2.0).unwrap(), 0.25);
        assert!(LossWeighting::Uniform.weight(0.0).is_err());
        let pc = Preconditioner::new(0.5).unwrap();
        for s in [1e-3, 0.02, 0.5, 7.0, 80.0] {
            assert!((w.weight(s).unwrap() * pc.c_out(s).powi(2) - 1.0).abs() < 1e-13);
            let lit = LossWeighting::InvCout { sigma_data: 0.5 }
                .weight(s)
                .unwrap();
            assert!((lit * pc.c_out(s) - 1.0).abs() < 1e-13);
        }
    }
}
