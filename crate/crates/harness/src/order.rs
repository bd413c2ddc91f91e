//! Empirical order of convergence against the single-Gaussian closed form.

use scorekit::solver::{OracleDenoiser, Sampler};
use scorekit::{GridKind, OracleGmm, StepGrid};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// Endpoint errors below this are treated as exact.
pub const ERROR_FLOOR: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderStatus {
    Measured,
    /// Errors sit at the floor (e.g. a point mass), so no slope is fitted.
    SkippedAtFloor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderReport {
    pub sampler: String,
    pub steps: Vec<usize>,
    pub errors: Vec<f64>,
    pub slope: Option<f64>,
    pub status: OrderStatus,
}

/// PF-ODE endpoint for `N(μ, s²I)` data started at `x_T` at `σ_max`:
/// `μ + (x_T − μ)·s/√(s² + σ_max²)`.
pub fn gaussian_endpoint(mean: &[f64], std: f64, x_t: &[f64], sigma_max: f64) -> Vec<f64> {
    let k = std / std.hypot(sigma_max);
    mean.iter().zip(x_t).map(|(m, x)| m + (x - m) * k).collect()
}

/// Least-squares slope of `−log(error)` against `log(N)`.
pub fn loglog_slope(steps: &[usize], errors: &[f64]) -> Result<f64> {
    if steps.len() != errors.len() || steps.len() < 2 {
        return Err(HarnessError::Metric(
            "slope fit needs matching inputs of length >= 2".into(),
        ));
    }
    let lx: Vec<f64> = steps.iter().map(|n| (*n as f64).ln()).collect();
    let ly: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(HarnessError::Metric(
            "slope fit needs distinct step counts".into(),
        ));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(-sxy / sxx)
}

/// Measures the convergence order of `sampler` on a single-component oracle.
#[allow(clippy::too_many_arguments)]
pub fn measure_order(
    sampler: Sampler,
    gmm: &OracleGmm,
    steps: &[usize],
    grid: GridKind,
    sigma_min: f64,
    sigma_max: f64,
    rho: f64,
    x_t: &[f64],
) -> Result<OrderReport> {
    if steps.len() < 4 {
        return Err(HarnessError::Metric(
            "order measurement needs at least 4 grid sizes".into(),
        ));
    }
    let [c] = gmm.components() else {
        return Err(HarnessError::Metric(
            "order measurement needs a single-component oracle".into(),
        ));
    };
    let exact = gaussian_endpoint(&c.mean, c.std, x_t, sigma_max);
    let d = OracleDenoiser::new(gmm.clone());
    let mut errors = Vec::with_capacity(steps.len());
    for &n in steps {
        let g = StepGrid::build(grid, n, sigma_min, sigma_max, rho)?;
        let x = sampler.solve(&d, &g, x_t, None)?.x;
        errors.push(
            x.iter()
                .zip(&exact)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt(),
        );
    }
    let (slope, status) = if errors.iter().any(|e| *e < ERROR_FLOOR) {
        (None, OrderStatus::SkippedAtFloor)
    } else {
        (Some(loglog_slope(steps, &errors)?), OrderStatus::Measured)
    };
    Ok(OrderReport {
        sampler: sampler.to_string(),
        steps: steps.to_vec(),
        errors,
        slope,
        status,
    })
}
