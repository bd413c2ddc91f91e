//! Building models from a config, drawing samples and scoring them.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use scorekit::solver::{
    exact_prior_init, guided_denoiser, sde_euler_maruyama, standard_init, warm_start_init,
    Auxiliary, Counted, FrameAdapter, GmmClassifier, InitKind, OracleDenoiser, OracleModel,
    Trajectory,
};
use scorekit::train::{train_loop, TrainOutput, TrainedModel};
use scorekit::{
    substream, Condition, Denoiser, GuidanceMode, OracleGmm, Parameterization, StepGrid,
};
use serde::{Deserialize, Serialize};

use crate::config::{ModelKind, RunConfig};
use crate::error::{HarnessError, Result};
use crate::metrics::{mode_mass_err, moments, sliced_w2};

/// Stream index reserved for reference samples.
const REFERENCE_STREAM: u64 = 1 << 62;
/// Stream index reserved for projection directions.
const PROJECTION_STREAM: u64 = REFERENCE_STREAM + 1;

/// One line of the metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub run_id: String,
    pub sampler: String,
    pub grid: String,
    pub steps: usize,
    /// Denoiser evaluations per sample.
    pub nfe: u64,
    pub order: usize,
    pub guidance_scale: f64,
    pub seed: u64,
    pub sw2: f64,
    pub mean_err: f64,
    pub cov_err: f64,
    pub mode_mass_err: f64,
    pub wall_ms: f64,
}

impl MetricsRow {
    /// The row with wall time cleared, for determinism comparisons.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_ms: 0.0,
            ..self.clone()
        }
    }
}

/// A denoiser loaded or trained according to a config.
pub type SharedModel = Arc<dyn Denoiser>;

/// Trains the network described by the `train` sections.
pub fn train_from_config(cfg: &RunConfig) -> Result<TrainOutput> {
    cfg.validate_train()?;
    let gmm = cfg.gmm()?;
    Ok(train_loop(&cfg.train_config()?, &gmm, cfg.train_task()?)?)
}

/// The model named by the `model` section.
pub fn build_model(cfg: &RunConfig) -> Result<SharedModel> {
    let gmm = cfg.gmm()?;
    Ok(match cfg.model.kind {
        ModelKind::Oracle => {
            let mut oracle = OracleDenoiser::new(gmm);
            if let Some(s) = cfg.data.sigma_obs {
                oracle = oracle.with_observation_noise(s);
            }
            let (frame, kind) = (cfg.model.frame, cfg.model.parameterization);
            if frame == scorekit::Frame::Edm && kind == Parameterization::Denoiser {
                Arc::new(oracle)
            } else {
                Arc::new(FrameAdapter::new(OracleModel::new(oracle, frame, kind)))
            }
        }
        ModelKind::Mlp => {
            let path = cfg
                .model
                .path
                .as_ref()
                .ok_or_else(|| HarnessError::validation("model.path", "missing"))?;
            let text = std::fs::read_to_string(path)?;
            Arc::new(TrainedModel::from_json(&text)?)
        }
        ModelKind::TrainInline => {
            let out = train_from_config(cfg)?;
            Arc::new(if cfg.train.use_ema {
                out.ema
            } else {
                out.model
            })
        }
    })
}

/// The condition supplied to the sampler, if any.
pub fn condition(cfg: &RunConfig) -> Option<Condition> {
    match (&cfg.guidance.label, &cfg.run.observation) {
        (Some(k), _) => Some(Condition::Label(*k)),
        (None, Some(y)) => Some(Condition::Observation(y.clone())),
        _ => None,
    }
}

/// The distribution samples should follow: the data mixture restricted to a
/// label, or its posterior given an observation.
pub fn target_distribution(cfg: &RunConfig) -> Result<OracleGmm> {
    let mut oracle = OracleDenoiser::new(cfg.gmm()?);
    if let Some(s) = cfg.data.sigma_obs {
        oracle = oracle.with_observation_noise(s);
    }
    Ok(oracle.target(condition(cfg).as_ref())?)
}

pub fn run_id(cfg: &RunConfig) -> String {
    cfg.run.id.clone().unwrap_or_else(|| {
        format!(
            "{}{}-{}-n{}-g{}-s{}",
            cfg.sampler.kind.name(),
            cfg.sampler_order(),
            cfg.sampler.grid,
            cfg.sampler.steps,
            cfg.guidance.scale,
            cfg.run.seed
        )
    })
}

/// Samples drawn by one run and the per-sample evaluation count.
#[derive(Debug, Clone)]
pub struct SampleSet {
    pub points: Vec<Vec<f64>>,
    pub nfe: u64,
    pub trajectories: Vec<Trajectory>,
}

/// Draws `cfg.run.samples` endpoints with `model`. Sample `i` uses its own
/// random stream, so results do not depend on the thread count.
pub fn draw_samples(cfg: &RunConfig, model: &SharedModel, record: bool) -> Result<SampleSet> {
    let id = run_id(cfg);
    let wrap = |e: scorekit::Error| HarnessError::Run {
        run_id: id.clone(),
        source: e,
    };
    let gmm = cfg.gmm()?;
    let target = target_distribution(cfg)?;
    let cond = condition(cfg);
    let sigma_start = cfg.sigma_start();
    let grid = StepGrid::build(
        cfg.sampler.grid,
        cfg.sampler.steps,
        cfg.sampler.sigma_min,
        sigma_start,
        cfg.sampler.rho,
    )
    .map_err(wrap)?;
    let counted = Counted::new(model.clone());
    let classifier = GmmClassifier::new(gmm.clone());
    let spec = cfg.guidance_spec()?;
    let aux = match spec.mode {
        GuidanceMode::None => Auxiliary::None,
        GuidanceMode::Cfg => Auxiliary::Unconditional(&counted),
        GuidanceMode::Classifier => Auxiliary::Classifier(&classifier),
    };
    let guided = guided_denoiser(&counted, spec, aux).map_err(wrap)?;
    let sampler = cfg.sampler_choice()?;
    let results: Vec<scorekit::Result<scorekit::Solution>> = (0..cfg.run.samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(cfg.run.seed, i);
            let x_t = match cfg.init.kind {
                InitKind::Standard => standard_init(gmm.dim(), sigma_start, &mut rng),
                InitKind::ExactPrior => exact_prior_init(&target, sigma_start, &mut rng)?,
                InitKind::WarmStart => {
                    let y = cfg
                        .run
                        .observation
                        .as_deref()
                        .expect("validated: warm start has an observation");
                    warm_start_init(y, sigma_start, &mut rng)?
                }
            };
            match sampler {
                Some(s) if record => s.solve_recorded(&guided, &grid, &x_t, cond.as_ref()),
                Some(s) => s.solve(&guided, &grid, &x_t, cond.as_ref()),
                None => sde_euler_maruyama(&guided, &grid, &x_t, cond.as_ref(), &mut rng, record),
            }
        })
        .collect();
    let mut points = Vec::with_capacity(results.len());
    let mut trajectories = Vec::new();
    let mut total_nfe = 0;
    let mut nfe = None;
    for r in results {
        let sol = r.map_err(wrap)?;
        total_nfe += sol.nfe;
        if *nfe.get_or_insert(sol.nfe) != sol.nfe {
            return Err(HarnessError::Format(format!(
                "{id}: samples used different evaluation counts"
            )));
        }
        points.push(sol.x);
        trajectories.extend(sol.trajectory);
    }
    if total_nfe != counted.count() {
        return Err(HarnessError::Format(format!(
            "{id}: solver reported {total_nfe} evaluations but the model saw {}",
            counted.count()
        )));
    }
    Ok(SampleSet {
        points,
        nfe: nfe.unwrap_or(0),
        trajectories,
    })
}

/// Reference draws from the target distribution for scoring a run.
pub fn reference_samples(cfg: &RunConfig) -> Result<Vec<Vec<f64>>> {
    let target = target_distribution(cfg)?;
    let n = cfg.run.reference_samples.unwrap_or(cfg.run.samples);
    Ok(target.sample(&mut substream(cfg.run.seed, REFERENCE_STREAM), n))
}

/// Scores `points` against reference draws and the target mixture.
pub fn score_samples(cfg: &RunConfig, points: &[Vec<f64>]) -> Result<(f64, f64, f64, f64)> {
    let target = target_distribution(cfg)?;
    let reference = reference_samples(cfg)?;
    let mut rng = substream(cfg.run.seed, PROJECTION_STREAM);
    let sw2 = sliced_w2(points, &reference, cfg.run.projections, &mut rng)?;
    let (mean_err, cov_err) = moments(points, &reference)?;
    let mm = mode_mass_err(points, &target)?;
    Ok((sw2, mean_err, cov_err, mm))
}

/// Runs one config with an already-built model.
pub fn run_with_model(cfg: &RunConfig, model: &SharedModel) -> Result<(Vec<Vec<f64>>, MetricsRow)> {
    let start = Instant::now();
    let set = draw_samples(cfg, model, false)?;
    let (sw2, mean_err, cov_err, mode_mass_err) = score_samples(cfg, &set.points)?;
    let row = MetricsRow {
        run_id: run_id(cfg),
        sampler: cfg.sampler.kind.name().to_string(),
        grid: cfg.sampler.grid.to_string(),
        steps: cfg.sampler.steps,
        nfe: set.nfe,
        order: cfg.sampler_order(),
        guidance_scale: cfg.guidance.scale,
        seed: cfg.run.seed,
        sw2,
        mean_err,
        cov_err,
        mode_mass_err,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    Ok((set.points, row))
}

/// Builds the model, draws samples and scores them.
pub fn run_sample(cfg: &RunConfig) -> Result<(Vec<Vec<f64>>, MetricsRow)> {
    cfg.validate()?;
    let model = build_model(cfg)?;
    run_with_model(cfg, &model)
}

/// Writes points as CSV with header `x0,x1,...`.
pub fn write_points(path: &std::path::Path, points: &[Vec<f64>]) -> Result<()> {
    let dim = points.first().map_or(0, Vec::len);
    let mut out = (0..dim)
        .map(|j| format!("x{j}"))
        .collect::<Vec<_>>()
        .join(",");
    out.push('\n');
    for p in points {
        out.push_str(
            &p.iter()
                .map(|v| format!("{v}"))
                .collect::<Vec<_>>()
                .join(","),
        );
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads points written by [`write_points`].
pub fn read_points(path: &std::path::Path) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| HarnessError::Format(format!("{}: empty file", path.display())))?;
    let dim = header.split(',').count();
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let row: Vec<f64> = l
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| HarnessError::Format(format!("{}:{}: {e}", path.display(), i + 2)))?;
            if row.len() != dim {
                return Err(HarnessError::Format(format!(
                    "{}:{}: expected {dim} columns",
                    path.display(),
                    i + 2
                )));
            }
            Ok(row)
        })
        .collect()
}
