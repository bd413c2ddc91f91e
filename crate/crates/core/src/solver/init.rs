use std::fmt;
use std::str::FromStr;

use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::oracle::{perturb, Component, OracleGmm};

/// How the starting point `x_T` of a reverse solve is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InitKind {
    /// `N(0, σ_max²·I)`.
    Standard,
    /// The exact noisy marginal of an oracle at `σ_max`.
    ExactPrior,
    /// `y + σ_start·n` around an informed estimate `y`.
    WarmStart,
}

impl fmt::Display for InitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitKind::Standard => "standard",
            InitKind::ExactPrior => "exact_prior",
            InitKind::WarmStart => "warm_start",
        })
    }
}

impl FromStr for InitKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(InitKind::Standard),
            "exact_prior" => Ok(InitKind::ExactPrior),
            "warm_start" => Ok(InitKind::WarmStart),
            _ => Err(Error::InvalidParameter(format!("unknown init kind `{s}`"))),
        }
    }
}

pub fn standard_init<R: rand::Rng + ?Sized>(dim: usize, sigma_max: f64, rng: &mut R) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let n: f64 = rng.sample(StandardNormal);
            sigma_max * n
        })
        .collect()
}

/// A draw from `q(x; σ_max)`: pick a component, then `μ_k + √(std_k² + σ_max²)·n`.
pub fn exact_prior_init<R: rand::Rng + ?Sized>(
    gmm: &OracleGmm,
    sigma_max: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(sigma_max >= 0.0 && sigma_max.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "sigma_max must be finite and >= 0, got {sigma_max}"
        )));
    }
    let widened = gmm
        .components()
        .iter()
        .map(|c| Component::new(c.weight, c.mean.clone(), c.std.hypot(sigma_max)))
        .collect();
    Ok(OracleGmm::normalized(gmm.dim(), widened)?.sample_one(rng))
}

pub fn warm_start_init<R: rand::Rng + ?Sized>(
    y: &[f64],
    sigma_start: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(sigma_start > 0.0 && sigma_start.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "sigma_start must be finite and > 0, got {sigma_start}"
        )));
    }
    Ok(perturb(y, sigma_start, rng))
}
