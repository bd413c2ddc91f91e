use rand_distr::StandardNormal;

use super::handle::{Condition, Denoiser};
use super::ode::{Solution, Trajectory, TrajectoryRecord};
use crate::error::{check_dim, Error, Result};
use crate::schedule::StepGrid;

/// One Euler–Maruyama step of the reverse SDE with `g(σ) = √(2σ)`, `f = 0`:
///
/// `x' = x − drift_scale·2σ·score·Δ + noise_scale·√(2σ)·√(−Δ)·n`, `Δ = σ' − σ`.
///
/// `drift_scale = 1, noise_scale = 1` is the reverse SDE; `drift_scale = ½,
/// noise_scale = 0` is the PF-ODE Euler step.
pub fn em_step(
    x: &[f64],
    score: &[f64],
    sigma: f64,
    sigma_next: f64,
    noise: &[f64],
    drift_scale: f64,
    noise_scale: f64,
) -> Result<Vec<f64>> {
    check_dim(x.len(), score.len())?;
    check_dim(x.len(), noise.len())?;
    let delta = sigma_next - sigma;
    if delta > 0.0 {
        return Err(Error::InvalidRange(format!(
            "reverse step must decrease sigma: {sigma} -> {sigma_next}"
        )));
    }
    let diffusion = noise_scale * (2.0 * sigma).sqrt() * (-delta).sqrt();
    Ok(x.iter()
        .zip(score)
        .zip(noise)
        .map(|((x, s), n)| x - drift_scale * 2.0 * sigma * s * delta + diffusion * n)
        .collect())
}

/// Reverse-SDE sampler. The score is read off the denoiser as `(D − x)/σ²`.
pub fn sde_euler_maruyama<R: rand::Rng + ?Sized>(
    d: &dyn Denoiser,
    grid: &StepGrid,
    x_t: &[f64],
    cond: Option<&Condition>,
    rng: &mut R,
    record: bool,
) -> Result<Solution> {
    let mut x = x_t.to_vec();
    let mut nfe = 0;
    let mut trajectory = record.then(Trajectory::default);
    for (i, w) in grid.sigmas().windows(2).enumerate() {
        let (s, sn) = (w[0], w[1]);
        nfe += d.evaluations(s);
        let den = d.denoise(&x, s, cond)?;
        check_dim(x.len(), den.len())?;
        if let Some(t) = &mut trajectory {
            t.records.push(TrajectoryRecord {
                sigma: s,
                x: x.clone(),
                denoised: Some(den.clone()),
            });
        }
        let score: Vec<f64> = den.iter().zip(&x).map(|(d, x)| (d - x) / (s * s)).collect();
        let noise: Vec<f64> = (0..x.len()).map(|_| rng.sample(StandardNormal)).collect();
        x = em_step(&x, &score, s, sn, &noise, 1.0, 1.0)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalDivergence { step: i });
        }
    }
    if let Some(t) = &mut trajectory {
        t.records.push(TrajectoryRecord {
            sigma: 0.0,
            x: x.clone(),
            denoised: None,
        });
    }
    Ok(Solution { x, nfe, trajectory })
}
