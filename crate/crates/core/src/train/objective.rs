use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use super::tape::Tape;
use crate::error::{check_dim, Error, Result};
use crate::param::{Parameterization, Preconditioner};
use crate::schedule::{LossWeighting, TrainNoise};
use crate::solver::Condition;

/// Interpolation times for rectified flow stay inside `[T_EPS, 1 − T_EPS]`.
pub const T_EPS: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Preconditioned denoiser regression, weighted by `λ(σ)`.
    EdmDenoise,
    /// Noise prediction.
    Epsilon,
    /// Velocity prediction in the trigonometric frame, on unit-variance data.
    VPred,
    /// Linear-interpolation flow matching on unit-variance data.
    RectifiedFlow,
}

impl Objective {
    pub const ALL: [Objective; 4] = [
        Objective::EdmDenoise,
        Objective::Epsilon,
        Objective::VPred,
        Objective::RectifiedFlow,
    ];

    pub fn parameterization(self) -> Parameterization {
        match self {
            Objective::EdmDenoise => Parameterization::Denoiser,
            Objective::Epsilon => Parameterization::Epsilon,
            Objective::VPred => Parameterization::Velocity,
            Objective::RectifiedFlow => Parameterization::Flow,
        }
    }

    /// Whether data is divided by `σ_data` before entering the model.
    pub fn scales_data(self) -> bool {
        matches!(self, Objective::VPred | Objective::RectifiedFlow)
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::EdmDenoise => "edm_denoise",
            Objective::Epsilon => "epsilon",
            Objective::VPred => "v_pred",
            Objective::RectifiedFlow => "rectified_flow",
        })
    }
}

impl FromStr for Objective {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Objective::ALL
            .into_iter()
            .find(|o| o.to_string() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown objective `{s}`")))
    }
}

/// Network inputs, regression targets and per-example weights for one batch.
///
/// Every objective reduces to `mean_i wᵢ·‖F(x_netᵢ, c_noiseᵢ) − targetᵢ‖²`.
#[derive(Debug, Clone)]
pub struct PreparedBatch {
    pub x_net: Array2<f64>,
    pub c_noise: Vec<f64>,
    pub conds: Vec<Option<Condition>>,
    pub target: Array2<f64>,
    pub weights: Array1<f64>,
    /// Noise level of each example in data units.
    pub sigma: Vec<f64>,
}

/// Raw network interface, used to score a batch with any model.
pub trait RawModel {
    fn raw(&self, x_net: &[f64], c_noise: f64, cond: Option<&Condition>) -> Result<Vec<f64>>;
}

impl RawModel for Mlp {
    fn raw(&self, x_net: &[f64], c_noise: f64, cond: Option<&Condition>) -> Result<Vec<f64>> {
        self.forward(x_net, c_noise, cond)
    }
}

fn c_noise(sigma: f64) -> f64 {
    sigma.ln() / 4.0
}

#[allow(clippy::too_many_arguments)]
pub fn prepare_batch<R: rand::Rng + ?Sized>(
    objective: Objective,
    x0: &[Vec<f64>],
    conds: Vec<Option<Condition>>,
    noise: &TrainNoise,
    weighting: &LossWeighting,
    sigma_data: f64,
    rng: &mut R,
) -> Result<PreparedBatch> {
    let b = x0.len();
    if b == 0 {
        return Err(Error::InvalidParameter("empty training batch".into()));
    }
    if conds.len() != b {
        return Err(Error::Shape(format!(
            "{b} examples but {} conditions",
            conds.len()
        )));
    }
    let d = x0[0].len();
    let pc = Preconditioner::new(sigma_data)?;
    let mut x_net = Array2::zeros((b, d));
    let mut target = Array2::zeros((b, d));
    let mut weights = Array1::zeros(b);
    let mut c_noises = Vec::with_capacity(b);
    let mut sigmas = Vec::with_capacity(b);
    for (i, x0) in x0.iter().enumerate() {
        check_dim(d, x0.len())?;
        let n: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let sigma = match objective {
            Objective::RectifiedFlow => {
                let t = T_EPS + (1.0 - 2.0 * T_EPS) * rng.random::<f64>();
                sigma_data * t / (1.0 - t)
            }
            _ => noise.sample(rng),
        };
        let mut xr = x_net.row_mut(i);
        let mut tr = target.row_mut(i);
        match objective {
            Objective::EdmDenoise => {
                let (c_in, c_skip, c_out) = (pc.c_in(sigma), pc.c_skip(sigma), pc.c_out(sigma));
                for j in 0..d {
                    let x = x0[j] + sigma * n[j];
                    xr[j] = c_in * x;
                    tr[j] = (x0[j] - c_skip * x) / c_out;
                }
                weights[i] = weighting.weight(sigma)? * c_out * c_out;
                c_noises.push(c_noise(sigma));
            }
            Objective::Epsilon => {
                let c_in = pc.c_in(sigma);
                for j in 0..d {
                    xr[j] = c_in * (x0[j] + sigma * n[j]);
                    tr[j] = n[j];
                }
                weights[i] = 1.0;
                c_noises.push(c_noise(sigma));
            }
            Objective::VPred => {
                let s = sigma / sigma_data;
                let r = (1.0 + s * s).sqrt();
                let (cos, sin) = (1.0 / r, s / r);
                for j in 0..d {
                    let x = x0[j] / sigma_data;
                    xr[j] = cos * x + sin * n[j];
                    tr[j] = cos * n[j] - sin * x;
                }
                weights[i] = 1.0;
                c_noises.push(c_noise(s));
            }
            Objective::RectifiedFlow => {
                let s = sigma / sigma_data;
                let t = s / (1.0 + s);
                for j in 0..d {
                    let x = x0[j] / sigma_data;
                    xr[j] = (1.0 - t) * x + t * n[j];
                    tr[j] = n[j] - x;
                }
                weights[i] = 1.0;
                c_noises.push(c_noise(s));
            }
        }
        sigmas.push(sigma);
    }
    Ok(PreparedBatch {
        x_net,
        c_noise: c_noises,
        conds,
        target,
        weights,
        sigma: sigmas,
    })
}

/// Evaluates the batch loss with an arbitrary raw model.
pub fn batch_loss(model: &dyn RawModel, batch: &PreparedBatch) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..batch.x_net.nrows() {
        let out = model.raw(
            batch.x_net.row(i).as_slice().expect("row-major"),
            batch.c_noise[i],
            batch.conds[i].as_ref(),
        )?;
        check_dim(batch.target.ncols(), out.len())?;
        let sq: f64 = out
            .iter()
            .zip(batch.target.row(i))
            .map(|(o, t)| (o - t) * (o - t))
            .sum();
        total += batch.weights[i] * sq;
    }
    Ok(total / batch.x_net.nrows() as f64)
}

/// Draws noise for `x0` and returns the objective's loss under `model`.
#[allow(clippy::too_many_arguments)]
pub fn compute_loss<R: rand::Rng + ?Sized>(
    objective: Objective,
    model: &dyn RawModel,
    x0: &[Vec<f64>],
    conds: Vec<Option<Condition>>,
    noise: &TrainNoise,
    weighting: &LossWeighting,
    sigma_data: f64,
    rng: &mut R,
) -> Result<f64> {
    let batch = prepare_batch(objective, x0, conds, noise, weighting, sigma_data, rng)?;
    batch_loss(model, &batch)
}

/// Loss and its gradient with respect to every network parameter.
pub fn loss_and_grad(model: &Mlp, batch: &PreparedBatch) -> Result<(f64, Vec<Array2<f64>>)> {
    let mut tape = Tape::new();
    let out = model.forward_tape(&mut tape, &batch.x_net, &batch.c_noise, &batch.conds)?;
    let loss = tape.weighted_sse(out, batch.target.clone(), batch.weights.clone());
    let value = tape.value(loss)[[0, 0]];
    let grads = tape
        .backward(loss, model.params().len())
        .into_iter()
        .zip(model.params())
        .map(|(g, p)| g.unwrap_or_else(|| Array2::zeros(p.raw_dim())))
        .collect();
    Ok((value, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::OracleGmm;
    use crate::rng_from_seed;
    use crate::train::mlp::{Conditioning, MlpSpec};

    struct Zero;
    impl RawModel for Zero {
        fn raw(&self, x: &[f64], _: f64, _: Option<&Condition>) -> Result<Vec<f64>> {
            Ok(vec![0.0; x.len()])
        }
    }

    struct Constant(Vec<f64>);
    impl RawModel for Constant {
        fn raw(&self, _: &[f64], _: f64, _: Option<&Condition>) -> Result<Vec<f64>> {
            Ok(self.0.clone())
        }
    }

    /// The exact oracle expressed through the preconditioned raw output.
    struct OracleRaw {
        gmm: OracleGmm,
        pc: Preconditioner,
    }
    impl RawModel for OracleRaw {
        fn raw(&self, x_in: &[f64], c_noise: f64, _: Option<&Condition>) -> Result<Vec<f64>> {
            let sigma = (4.0 * c_noise).exp();
            let x: Vec<f64> = x_in.iter().map(|v| v / self.pc.c_in(sigma)).collect();
            let d = self.gmm.denoise(&x, sigma)?;
            Ok(x.iter()
                .zip(&d)
                .map(|(x, d)| (d - self.pc.c_skip(sigma) * x) / self.pc.c_out(sigma))
                .collect())
        }
    }

    const NOISE: TrainNoise = TrainNoise::LogNormal {
        p_mean: -1.2,
        p_std: 1.2,
    };

    #[test]
    fn oracle_on_dirac_data_has_zero_loss() {
        let gmm = OracleGmm::dirac(vec![0.5, -0.5]).unwrap();
        let pc = Preconditioner::new(0.5).unwrap();
        let x0 = vec![vec![0.5, -0.5]; 64];
        let w = LossWeighting::Edm { sigma_data: 0.5 };
        let loss = compute_loss(
            Objective::EdmDenoise,
            &OracleRaw { gmm, pc },
            &x0,
            vec![None; 64],
            &NOISE,
            &w,
            0.5,
            &mut rng_from_seed(1),
        )
        .unwrap();
        assert!(loss < 1e-20, "{loss}");
    }

    #[test]
    fn zero_network_matches_closed_form_expectation() {
        // D = c_skip·x on a point mass at 0, so the loss is λ(σ)·c_skip²·σ²·‖n‖².
        let sd = 0.5;
        let pc = Preconditioner::new(sd).unwrap();
        let w = LossWeighting::Edm { sigma_data: sd };
        let n = 200_000;
        let x0 = vec![vec![0.0, 0.0]; n];
        let loss = compute_loss(
            Objective::EdmDenoise,
            &Zero,
            &x0,
            vec![None; n],
            &NOISE,
            &w,
            sd,
            &mut rng_from_seed(2),
        )
        .unwrap();
        // Reference: integrate E_σ[λ·c_skip²·σ²]·d over the log-normal density by quadrature.
        let (m, s) = (-1.2, 1.2);
        let k = 4000;
        let (lo, hi) = (m - 8.0 * s, m + 8.0 * s);
        let h = (hi - lo) / k as f64;
        let mut expect = 0.0;
        for i in 0..=k {
            let z: f64 = lo + i as f64 * h;
            let sigma = z.exp();
            let pdf = (-(z - m).powi(2) / (2.0 * s * s)).exp()
                / (s * (2.0 * std::f64::consts::PI).sqrt());
            let f = w.weight(sigma).unwrap() * pc.c_skip(sigma).powi(2) * sigma * sigma * 2.0;
            let wq = if i == 0 || i == k { 0.5 } else { 1.0 };
            expect += wq * h * pdf * f;
        }
        assert!((loss / expect - 1.0).abs() < 0.02, "{loss} vs {expect}");
    }

    #[test]
    fn rectified_flow_constant_model_matches_closed_form() {
        // E‖c − (n − x0')‖² = ‖c + E x0'‖² + d + Σ Var(x0')
        let gmm = OracleGmm::two_component();
        let sd = gmm.data_std();
        let mut rng = rng_from_seed(3);
        let n = 200_000;
        let x0 = gmm.sample(&mut rng, n);
        let c = vec![0.3, -0.2];
        let w = LossWeighting::Uniform;
        let loss = compute_loss(
            Objective::RectifiedFlow,
            &Constant(c.clone()),
            &x0,
            vec![None; n],
            &NOISE,
            &w,
            sd,
            &mut rng,
        )
        .unwrap();
        let mean = gmm.mean();
        let var_sum = 2.0 * sd * sd; // σ_d² is the per-coordinate average variance
        let expect: f64 = c
            .iter()
            .zip(&mean)
            .map(|(c, m)| (c + m / sd).powi(2))
            .sum::<f64>()
            + 2.0
            + var_sum / (sd * sd);
        assert!((loss / expect - 1.0).abs() < 0.02, "{loss} vs {expect}");
    }

    #[test]
    fn tape_loss_equals_direct_loss() {
        let mut rng = rng_from_seed(4);
        let spec = MlpSpec::new(
            2,
            vec![8, 8],
            Conditioning::Adaln {
                labels: 2,
                embed_dim: 3,
            },
        )
        .unwrap();
        let m = Mlp::new(spec, &mut rng);
        let gmm = OracleGmm::two_component();
        let x0 = gmm.sample(&mut rng, 16);
        let conds: Vec<_> = (0..16)
            .map(|i| (i % 3 != 0).then_some(Condition::Label(i % 2)))
            .collect();
        for obj in Objective::ALL {
            let batch = prepare_batch(
                obj,
                &x0,
                conds.clone(),
                &NOISE,
                &LossWeighting::Edm { sigma_data: 0.5 },
                0.5,
                &mut rng,
            )
            .unwrap();
            let (tape_loss, _) = loss_and_grad(&m, &batch).unwrap();
            let direct = batch_loss(&m, &batch).unwrap();
            assert!(
                (tape_loss - direct).abs() < 1e-12 * direct.max(1.0),
                "{obj}"
            );
        }
    }

    #[test]
    fn empty_batch_is_rejected() {
        let r = compute_loss(
            Objective::Epsilon,
            &Zero,
            &[],
            vec![],
            &NOISE,
            &LossWeighting::Uniform,
            0.5,
            &mut rng_from_seed(0),
        );
        assert!(r.is_err());
    }

    #[test]
    fn objective_names_round_trip() {
        for o in Objective::ALL {
            assert_eq!(o.to_string().parse::<Objective>().unwrap(), o);
        }
    }
}
