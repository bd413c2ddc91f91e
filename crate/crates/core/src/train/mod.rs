//! A small trainable denoiser: SiLU MLP, reverse-mode gradients, AdamW with
//! EMA, and denoising / ε / v / rectified-flow objectives.

mod mlp;
mod model;
mod objective;
mod optim;
mod tape;

pub use mlp::{noise_features, Conditioning, Mlp, MlpSpec, NOISE_FREQUENCIES};
pub use model::{TrainedModel, MODEL_SCHEMA_VERSION};
pub use objective::{
    batch_loss, compute_loss, loss_and_grad, prepare_batch, Objective, PreparedBatch, RawModel,
    T_EPS,
};
pub use optim::{drop_condition, ema_update, AdamW};
pub use tape::{Tape, Var};

use crate::error::{Error, Result};
use crate::oracle::{perturb, OracleGmm};
use crate::schedule::{LossWeighting, TrainNoise};
use crate::solver::Condition;

/// Which conditioning signal accompanies the training data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Task {
    Unconditional,
    /// Component labels through adaptive modulation.
    Labels {
        embed_dim: usize,
    },
    /// Noisy copy `y = x₀ + σ_obs·n` appended to the input.
    Enhancement {
        sigma_obs: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub objective: Objective,
    pub train_noise: TrainNoise,
    pub weighting: LossWeighting,
    pub lr: f64,
    pub weight_decay: f64,
    pub ema_beta: f64,
    pub cfg_dropout: f64,
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
    pub hidden: Vec<usize>,
    /// Loss curve resolution: one averaged point per `log_every` steps.
    pub log_every: usize,
}

impl TrainConfig {
    /// Desk-scale defaults for data with standard deviation `sigma_data`.
    pub fn desk(objective: Objective, sigma_data: f64) -> Self {
        Self {
            objective,
            train_noise: TrainNoise::LogNormal {
                p_mean: -1.2,
                p_std: 1.2,
            },
            weighting: LossWeighting::Edm { sigma_data },
            lr: 1e-3,
            weight_decay: 0.0,
            ema_beta: 0.999,
            cfg_dropout: 0.1,
            steps: 5000,
            batch: 128,
            seed: 0,
            hidden: vec![64, 64, 64],
            log_every: 50,
        }
    }

    /// Optimizer settings used for the large audio models: lr 5e-4, decay 0.01, EMA 0.9999.
    pub fn reference_preset(objective: Objective, sigma_data: f64) -> Self {
        Self {
            lr: 5e-4,
            weight_decay: 0.01,
            ema_beta: 0.9999,
            ..Self::desk(objective, sigma_data)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train_noise.validate()?;
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be >= 0".into());
        }
        if !(0.0..1.0).contains(&self.ema_beta) {
            return bad(format!("ema_beta {} not in [0, 1)", self.ema_beta));
        }
        if !(0.0..=1.0).contains(&self.cfg_dropout) {
            return bad(format!("cfg_dropout {} not in [0, 1]", self.cfg_dropout));
        }
        if self.steps == 0 || self.batch == 0 || self.log_every == 0 {
            return bad("steps, batch and log_every must be positive".into());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden widths must be non-empty and positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: TrainedModel,
    pub ema: TrainedModel,
    /// Mean training loss over consecutive windows of `log_every` steps.
    pub losses: Vec<f64>,
}

fn conditioning_for(task: Task, gmm: &OracleGmm) -> Result<Conditioning> {
    Ok(match task {
        Task::Unconditional => Conditioning::None,
        Task::Labels { embed_dim } => Conditioning::Adaln {
            labels: gmm.components().len(),
            embed_dim,
        },
        Task::Enhancement { sigma_obs } => {
            if !(sigma_obs > 0.0 && sigma_obs.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "sigma_obs must be positive, got {sigma_obs}"
                )));
            }
            Conditioning::Concat { obs_dim: gmm.dim() }
        }
    })
}

/// Draws one example with its (possibly dropped) condition.
fn draw_example<R: rand::Rng + ?Sized>(
    gmm: &OracleGmm,
    task: Task,
    dropout: f64,
    rng: &mut R,
) -> (Vec<f64>, Option<Condition>) {
    let (x0, cond) = match task {
        Task::Unconditional => (gmm.sample_one(rng), None),
        Task::Labels { .. } => {
            // Sample the label first so the example is drawn from its component.
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut k = gmm.components().len() - 1;
            for (i, c) in gmm.components().iter().enumerate() {
                acc += c.weight;
                if u < acc {
                    k = i;
                    break;
                }
            }
            let restricted = gmm.restrict(&[k]).expect("label in range");
            (restricted.sample_one(rng), Some(Condition::Label(k)))
        }
        Task::Enhancement { sigma_obs } => {
            let x0 = gmm.sample_one(rng);
            let y = perturb(&x0, sigma_obs, rng);
            (x0, Some(Condition::Observation(y)))
        }
    };
    let cond = if task == Task::Unconditional {
        cond
    } else {
        drop_condition(cond, dropout, rng)
    };
    (x0, cond)
}

/// Trains a network on draws from `gmm`; deterministic given `config.seed`.
pub fn train_loop(config: &TrainConfig, gmm: &OracleGmm, task: Task) -> Result<TrainOutput> {
    config.validate()?;
    let sigma_data = gmm.data_std();
    let spec = MlpSpec::new(
        gmm.dim(),
        config.hidden.clone(),
        conditioning_for(task, gmm)?,
    )?;
    let mut rng = crate::rng_from_seed(config.seed);
    let mut mlp = Mlp::new(spec, &mut rng);
    let mut ema = mlp.params().to_vec();
    let mut opt = AdamW::new(config.lr, config.weight_decay)?;
    let mut losses = Vec::with_capacity(config.steps / config.log_every + 1);
    let mut window = 0.0;
    let mut in_window = 0;
    for step in 0..config.steps {
        let (x0, conds): (Vec<_>, Vec<_>) = (0..config.batch)
            .map(|_| {
                let (x0, c) = draw_example(gmm, task, config.cfg_dropout, &mut rng);
                (x0, model::scale_observation(c, sigma_data))
            })
            .unzip();
        let batch = prepare_batch(
            config.objective,
            &x0,
            conds,
            &config.train_noise,
            &config.weighting,
            sigma_data,
            &mut rng,
        )?;
        let (loss, grads) = loss_and_grad(&mlp, &batch)?;
        if !loss.is_finite() || grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::NumericalDivergence { step });
        }
        opt.step(mlp.params_mut(), &grads)?;
        ema_update(&mut ema, mlp.params(), config.ema_beta)?;
        window += loss;
        in_window += 1;
        if in_window == config.log_every || step + 1 == config.steps {
            losses.push(window / in_window as f64);
            window = 0.0;
            in_window = 0;
        }
    }
    let ema_mlp = Mlp::from_params(mlp.spec().clone(), ema)?;
    Ok(TrainOutput {
        model: TrainedModel::new(mlp, config.objective, sigma_data)?,
        ema: TrainedModel::new(ema_mlp, config.objective, sigma_data)?,
        losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(objective: Objective, steps: usize) -> TrainConfig {
        TrainConfig {
            steps,
            batch: 32,
            hidden: vec![16, 16],
            log_every: 10,
            seed: 5,
            ..TrainConfig::desk(objective, 0.5)
        }
    }

    #[test]
    fn same_seed_same_curve() {
        let gmm = OracleGmm::two_component();
        let a = train_loop(&quick(Objective::EdmDenoise, 40), &gmm, Task::Unconditional).unwrap();
        let b = train_loop(&quick(Objective::EdmDenoise, 40), &gmm, Task::Unconditional).unwrap();
        assert_eq!(a.losses, b.losses);
        assert_eq!(a.ema, b.ema);
        assert_eq!(a.losses.len(), 4);
    }

    #[test]
    fn conditioned_tasks_run() {
        let gmm = OracleGmm::two_component();
        for task in [
            Task::Labels { embed_dim: 4 },
            Task::Enhancement { sigma_obs: 0.5 },
        ] {
            for obj in Objective::ALL {
                let out = train_loop(&quick(obj, 20), &gmm, task).unwrap();
                assert!(out.losses.iter().all(|l| l.is_finite()));
            }
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let gmm = OracleGmm::two_component();
        let mut c = quick(Objective::Epsilon, 10);
        c.ema_beta = 1.0;
        assert!(train_loop(&c, &gmm, Task::Unconditional).is_err());
        let mut c = quick(Objective::Epsilon, 10);
        c.cfg_dropout = 1.5;
        assert!(c.validate().is_err());
        let mut c = quick(Objective::Epsilon, 10);
        c.lr = f64::NAN;
        assert!(c.validate().is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let gmm = OracleGmm::two_component();
        let mut c = quick(Objective::EdmDenoise, 50);
        c.lr = 1e300;
        let err = train_loop(&c, &gmm, Task::Unconditional).unwrap_err();
        assert!(matches!(err, Error::NumericalDivergence { .. }), "{err:?}");
    }
}
