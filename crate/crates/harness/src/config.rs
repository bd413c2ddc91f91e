//! Flat `section.key = value` run configuration.
//!
//! Lines are `section.key = value`; `[section]` headers let following lines
//! use bare `key = value`. `#` starts a comment. Lists are written `[a, b]`.
//! Grid files add `grid.<section>.<key> = [v1, v2, ...]`.
//! `data.component = [weight, mean..., std]` may repeat.

use std::fmt::Write as _;
use std::str::FromStr;

use scorekit::param::Frame;
use scorekit::schedule::{GridKind, LossWeighting, TrainNoise};
use scorekit::solver::{InitKind, Sampler};
use scorekit::train::{Objective, Task, TrainConfig};
use scorekit::{Component, GuidanceMode, GuidanceSpec, OracleGmm, Parameterization};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataKind {
    Benchmark,
    TwoComponent,
    TwoPeakDirac,
    Gaussian,
    Dirac,
    Custom,
}

impl DataKind {
    const NAMES: [(DataKind, &'static str); 6] = [
        (DataKind::Benchmark, "benchmark"),
        (DataKind::TwoComponent, "two_component"),
        (DataKind::TwoPeakDirac, "two_peak_dirac"),
        (DataKind::Gaussian, "gaussian"),
        (DataKind::Dirac, "dirac"),
        (DataKind::Custom, "custom"),
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Oracle,
    Mlp,
    TrainInline,
}

impl ModelKind {
    const NAMES: [(ModelKind, &'static str); 3] = [
        (ModelKind::Oracle, "oracle"),
        (ModelKind::Mlp, "mlp"),
        (ModelKind::TrainInline, "train_inline"),
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    Euler,
    Heun,
    Dpmpp,
    Unipc,
    Sde,
}

impl SamplerKind {
    const NAMES: [(SamplerKind, &'static str); 5] = [
        (SamplerKind::Euler, "euler"),
        (SamplerKind::Heun, "heun"),
        (SamplerKind::Dpmpp, "dpmpp"),
        (SamplerKind::Unipc, "unipc"),
        (SamplerKind::Sde, "sde"),
    ];

    pub fn name(self) -> &'static str {
        name_of(&Self::NAMES, self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Unconditional,
    Labels,
    Enhancement,
}

impl TaskKind {
    const NAMES: [(TaskKind, &'static str); 3] = [
        (TaskKind::Unconditional, "unconditional"),
        (TaskKind::Labels, "labels"),
        (TaskKind::Enhancement, "enhancement"),
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightingKind {
    Edm,
    Uniform,
    InvSigma2,
    InvCout,
}

impl WeightingKind {
    const NAMES: [(WeightingKind, &'static str); 4] = [
        (WeightingKind::Edm, "edm"),
        (WeightingKind::Uniform, "uniform"),
        (WeightingKind::InvSigma2, "inv_sigma2"),
        (WeightingKind::InvCout, "inv_cout"),
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    LogNormal,
    LogUniform,
    CosineUniform,
    SigmoidUniform,
    LogitNormal,
}

impl NoiseKind {
    const NAMES: [(NoiseKind, &'static str); 5] = [
        (NoiseKind::LogNormal, "log_normal"),
        (NoiseKind::LogUniform, "log_uniform"),
        (NoiseKind::CosineUniform, "cosine_uniform"),
        (NoiseKind::SigmoidUniform, "sigmoid_uniform"),
        (NoiseKind::LogitNormal, "logit_normal"),
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
    Svg,
}

impl OutputFormat {
    const NAMES: [(OutputFormat, &'static str); 3] = [
        (OutputFormat::Csv, "csv"),
        (OutputFormat::Json, "json"),
        (OutputFormat::Svg, "svg"),
    ];
}

fn name_of<T: PartialEq + Copy>(names: &[(T, &'static str)], v: T) -> &'static str {
    names
        .iter()
        .find(|(k, _)| *k == v)
        .map(|(_, n)| *n)
        .expect("every variant is named")
}

fn parse_named<T: Copy>(names: &[(T, &'static str)], key: &str, v: &str) -> Result<T> {
    names
        .iter()
        .find(|(_, n)| *n == v)
        .map(|(k, _)| *k)
        .ok_or_else(|| {
            let options: Vec<_> = names.iter().map(|(_, n)| *n).collect();
            HarnessError::validation(key, format!("`{v}` is not one of {}", options.join(", ")))
        })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub kind: DataKind,
    pub mean: Vec<f64>,
    pub std: f64,
    /// `[weight, mean..., std]` rows for `custom`.
    pub components: Vec<Vec<f64>>,
    pub sigma_obs: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub path: Option<String>,
    pub parameterization: Parameterization,
    pub frame: Frame,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSection {
    pub objective: Objective,
    pub task: TaskKind,
    pub embed_dim: usize,
    pub weighting: WeightingKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub ema_beta: f64,
    pub use_ema: bool,
    pub cfg_dropout: f64,
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub log_every: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainNoiseSection {
    pub kind: NoiseKind,
    pub p_mean: f64,
    pub p_std: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub slope: f64,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerSection {
    pub kind: SamplerKind,
    pub order: Option<usize>,
    pub grid: GridKind,
    pub steps: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceSection {
    pub mode: GuidanceMode,
    pub scale: f64,
    pub sigma_lo: f64,
    pub sigma_hi: f64,
    pub label: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitSection {
    pub kind: InitKind,
    pub sigma_start: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSection {
    pub id: Option<String>,
    pub seed: u64,
    pub samples: usize,
    pub reference_samples: Option<usize>,
    pub projections: usize,
    pub observation: Option<Vec<f64>>,
    pub max_cells: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSection {
    pub dir: Option<String>,
    pub formats: Vec<OutputFormat>,
}

/// Everything needed for one sampling (or training) run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub train_noise: TrainNoiseSection,
    pub sampler: SamplerSection,
    pub guidance: GuidanceSection,
    pub init: InitSection,
    pub run: RunSection,
    pub output: OutputSection,
}

/// A base config plus per-key value lists whose Cartesian product forms the cells.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub base: RunConfig,
    pub axes: Vec<(String, Vec<String>)>,
}

impl RunConfig {
    /// Defaults for every key; `data.kind` must still be supplied when parsing.
    pub fn with_data(kind: DataKind) -> Self {
        Self {
            data: DataConfig {
                kind,
                mean: vec![0.0, 0.0],
                std: 0.5,
                components: Vec::new(),
                sigma_obs: None,
            },
            model: ModelConfig {
                kind: ModelKind::Oracle,
                path: None,
                parameterization: Parameterization::Denoiser,
                frame: Frame::Edm,
            },
            train: TrainSection {
                objective: Objective::EdmDenoise,
                task: TaskKind::Unconditional,
                embed_dim: 8,
                weighting: WeightingKind::Edm,
                lr: 1e-3,
                weight_decay: 0.0,
                ema_beta: 0.999,
                use_ema: true,
                cfg_dropout: 0.1,
                steps: 5000,
                batch: 128,
                seed: 0,
                hidden: vec![64, 64, 64],
                log_every: 50,
            },
            train_noise: TrainNoiseSection {
                kind: NoiseKind::LogNormal,
                p_mean: -1.2,
                p_std: 1.2,
                sigma_min: 0.002,
                sigma_max: 80.0,
                slope: 1.0,
                offset: 0.0,
            },
            sampler: SamplerSection {
                kind: SamplerKind::Dpmpp,
                order: None,
                grid: GridKind::Polynomial,
                steps: 32,
                sigma_min: 0.002,
                sigma_max: 80.0,
                rho: 7.0,
            },
            guidance: GuidanceSection {
                mode: GuidanceMode::None,
                scale: 1.0,
                sigma_lo: 0.0,
                sigma_hi: f64::INFINITY,
                label: None,
            },
            init: InitSection {
                kind: InitKind::Standard,
                sigma_start: None,
            },
            run: RunSection {
                id: None,
                seed: 0,
                samples: 10_000,
                reference_samples: None,
                projections: 64,
                observation: None,
                max_cells: 1024,
            },
            output: OutputSection {
                dir: None,
                formats: vec![OutputFormat::Csv, OutputFormat::Json, OutputFormat::Svg],
            },
        }
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "data.kind" => self.data.kind = parse_named(&DataKind::NAMES, key, &unquote(v))?,
            "data.mean" => self.data.mean = parse_list(key, v)?,
            "data.std" => self.data.std = parse_num(key, v)?,
            "data.component" => self.data.components.push(parse_list(key, v)?),
            "data.sigma_obs" => self.data.sigma_obs = Some(parse_num(key, v)?),
            "model.kind" => self.model.kind = parse_named(&ModelKind::NAMES, key, &unquote(v))?,
            "model.path" => self.model.path = Some(unquote(v)),
            "model.parameterization" => self.model.parameterization = parse_enum(key, v)?,
            "model.frame" => self.model.frame = parse_enum(key, v)?,
            "train.objective" => self.train.objective = parse_enum(key, v)?,
            "train.task" => self.train.task = parse_named(&TaskKind::NAMES, key, &unquote(v))?,
            "train.embed_dim" => self.train.embed_dim = parse_num(key, v)?,
            "train.weighting" => {
                self.train.weighting = parse_named(&WeightingKind::NAMES, key, &unquote(v))?
            }
            "train.lr" => self.train.lr = parse_num(key, v)?,
            "train.weight_decay" => self.train.weight_decay = parse_num(key, v)?,
            "train.ema_beta" => self.train.ema_beta = parse_num(key, v)?,
            "train.use_ema" => self.train.use_ema = parse_num(key, v)?,
            "train.cfg_dropout" => self.train.cfg_dropout = parse_num(key, v)?,
            "train.steps" => self.train.steps = parse_num(key, v)?,
            "train.batch" => self.train.batch = parse_num(key, v)?,
            "train.seed" => self.train.seed = parse_num(key, v)?,
            "train.hidden" => self.train.hidden = parse_list(key, v)?,
            "train.log_every" => self.train.log_every = parse_num(key, v)?,
            "train_noise.kind" => {
                self.train_noise.kind = parse_named(&NoiseKind::NAMES, key, &unquote(v))?
            }
            "train_noise.p_mean" => self.train_noise.p_mean = parse_num(key, v)?,
            "train_noise.p_std" => self.train_noise.p_std = parse_num(key, v)?,
            "train_noise.sigma_min" => self.train_noise.sigma_min = parse_num(key, v)?,
            "train_noise.sigma_max" => self.train_noise.sigma_max = parse_num(key, v)?,
            "train_noise.slope" => self.train_noise.slope = parse_num(key, v)?,
            "train_noise.offset" => self.train_noise.offset = parse_num(key, v)?,
            "sampler.kind" => {
                self.sampler.kind = parse_named(&SamplerKind::NAMES, key, &unquote(v))?
            }
            "sampler.order" => self.sampler.order = Some(parse_num(key, v)?),
            "sampler.grid" => self.sampler.grid = parse_enum(key, v)?,
            "sampler.steps" => self.sampler.steps = parse_num(key, v)?,
            "sampler.sigma_min" => self.sampler.sigma_min = parse_num(key, v)?,
            "sampler.sigma_max" => self.sampler.sigma_max = parse_num(key, v)?,
            "sampler.rho" => self.sampler.rho = parse_num(key, v)?,
            "guidance.mode" => self.guidance.mode = parse_enum(key, v)?,
            "guidance.scale" => self.guidance.scale = parse_num(key, v)?,
            "guidance.sigma_lo" => self.guidance.sigma_lo = parse_num(key, v)?,
            "guidance.sigma_hi" => self.guidance.sigma_hi = parse_num(key, v)?,
            "guidance.label" => self.guidance.label = Some(parse_num(key, v)?),
            "init.kind" => self.init.kind = parse_enum(key, v)?,
            "init.sigma_start" => self.init.sigma_start = Some(parse_num(key, v)?),
            "run.id" => self.run.id = Some(unquote(v)),
            "run.seed" => self.run.seed = parse_num(key, v)?,
            "run.samples" => self.run.samples = parse_num(key, v)?,
            "run.reference_samples" => self.run.reference_samples = Some(parse_num(key, v)?),
            "run.projections" => self.run.projections = parse_num(key, v)?,
            "run.observation" => self.run.observation = Some(parse_list(key, v)?),
            "run.max_cells" => self.run.max_cells = parse_num(key, v)?,
            "output.dir" => self.output.dir = Some(unquote(v)),
            "output.formats" => {
                self.output.formats = split_list(key, v)?
                    .iter()
                    .map(|f| parse_named(&OutputFormat::NAMES, key, &unquote(f)))
                    .collect::<Result<_>>()?
            }
            _ => return Err(HarnessError::validation(key, "unknown key")),
        }
        Ok(())
    }

    /// Every key and value, in a canonical order that [`parse_config`] reads back.
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut e: Vec<(String, String)> = Vec::new();
        let mut push = |k: &str, v: String| e.push((k.to_string(), v));
        push(
            "data.kind",
            name_of(&DataKind::NAMES, self.data.kind).into(),
        );
        push("data.mean", fmt_list(&self.data.mean));
        push("data.std", fmt_f64(self.data.std));
        for c in &self.data.components {
            push("data.component", fmt_list(c));
        }
        if let Some(s) = self.data.sigma_obs {
            push("data.sigma_obs", fmt_f64(s));
        }
        push(
            "model.kind",
            name_of(&ModelKind::NAMES, self.model.kind).into(),
        );
        if let Some(p) = &self.model.path {
            push("model.path", quote(p));
        }
        push(
            "model.parameterization",
            self.model.parameterization.to_string(),
        );
        push("model.frame", self.model.frame.to_string());
        let t = &self.train;
        push("train.objective", t.objective.to_string());
        push("train.task", name_of(&TaskKind::NAMES, t.task).into());
        push("train.embed_dim", t.embed_dim.to_string());
        push(
            "train.weighting",
            name_of(&WeightingKind::NAMES, t.weighting).into(),
        );
        push("train.lr", fmt_f64(t.lr));
        push("train.weight_decay", fmt_f64(t.weight_decay));
        push("train.ema_beta", fmt_f64(t.ema_beta));
        push("train.use_ema", t.use_ema.to_string());
        push("train.cfg_dropout", fmt_f64(t.cfg_dropout));
        push("train.steps", t.steps.to_string());
        push("train.batch", t.batch.to_string());
        push("train.seed", t.seed.to_string());
        push("train.hidden", fmt_list(&t.hidden));
        push("train.log_every", t.log_every.to_string());
        let n = &self.train_noise;
        push(
            "train_noise.kind",
            name_of(&NoiseKind::NAMES, n.kind).into(),
        );
        push("train_noise.p_mean", fmt_f64(n.p_mean));
        push("train_noise.p_std", fmt_f64(n.p_std));
        push("train_noise.sigma_min", fmt_f64(n.sigma_min));
        push("train_noise.sigma_max", fmt_f64(n.sigma_max));
        push("train_noise.slope", fmt_f64(n.slope));
        push("train_noise.offset", fmt_f64(n.offset));
        let s = &self.sampler;
        push("sampler.kind", s.kind.name().into());
        if let Some(o) = s.order {
            push("sampler.order", o.to_string());
        }
        push("sampler.grid", s.grid.to_string());
        push("sampler.steps", s.steps.to_string());
        push("sampler.sigma_min", fmt_f64(s.sigma_min));
        push("sampler.sigma_max", fmt_f64(s.sigma_max));
        push("sampler.rho", fmt_f64(s.rho));
        let g = &self.guidance;
        push("guidance.mode", g.mode.to_string());
        push("guidance.scale", fmt_f64(g.scale));
        push("guidance.sigma_lo", fmt_f64(g.sigma_lo));
        push("guidance.sigma_hi", fmt_f64(g.sigma_hi));
        if let Some(l) = g.label {
            push("guidance.label", l.to_string());
        }
        push("init.kind", self.init.kind.to_string());
        if let Some(s) = self.init.sigma_start {
            push("init.sigma_start", fmt_f64(s));
        }
        let r = &self.run;
        if let Some(id) = &r.id {
            push("run.id", quote(id));
        }
        push("run.seed", r.seed.to_string());
        push("run.samples", r.samples.to_string());
        if let Some(n) = r.reference_samples {
            push("run.reference_samples", n.to_string());
        }
        push("run.projections", r.projections.to_string());
        if let Some(y) = &r.observation {
            push("run.observation", fmt_list(y));
        }
        push("run.max_cells", r.max_cells.to_string());
        if let Some(d) = &self.output.dir {
            push("output.dir", quote(d));
        }
        let formats: Vec<&str> = self
            .output
            .formats
            .iter()
            .map(|f| name_of(&OutputFormat::NAMES, *f))
            .collect();
        push("output.formats", format!("[{}]", formats.join(", ")));
        e
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Cross-key checks run after all keys are read.
    pub fn validate(&self) -> Result<()> {
        let bad = |k: &str, m: String| Err(HarnessError::validation(k, m));
        self.gmm()
            .map_err(|e| HarnessError::validation("data", e.to_string()))?;
        if self.sampler.steps == 0 {
            return bad("sampler.steps", "must be >= 1".into());
        }
        if self.run.samples == 0 {
            return bad("run.samples", "must be >= 1".into());
        }
        if self.run.reference_samples == Some(0) {
            return bad("run.reference_samples", "must be >= 1".into());
        }
        if self.run.projections == 0 {
            return bad("run.projections", "must be >= 1".into());
        }
        if self.run.max_cells == 0 {
            return bad("run.max_cells", "must be >= 1".into());
        }
        if let Some(s) = self.sampler_choice()? {
            s.validate()
                .map_err(|e| HarnessError::validation("sampler.order", e.to_string()))?;
        } else if self.sampler.order.is_some() {
            return bad("sampler.order", "the sde sampler has no order".into());
        }
        scorekit::StepGrid::build(
            self.sampler.grid,
            self.sampler.steps,
            self.sampler.sigma_min,
            self.sigma_start(),
            self.sampler.rho,
        )
        .map_err(|e| HarnessError::validation("sampler", e.to_string()))?;
        self.guidance_spec()?;
        if self.model.kind == ModelKind::Mlp && self.model.path.is_none() {
            return bad("model.path", "required when model.kind = mlp".into());
        }
        if self.model.kind != ModelKind::Oracle && self.guidance.mode == GuidanceMode::Classifier {
            return bad(
                "guidance.mode",
                "classifier guidance needs the oracle model".into(),
            );
        }
        if self.model.kind != ModelKind::Oracle
            && (self.model.frame != Frame::Edm
                || self.model.parameterization != Parameterization::Denoiser)
        {
            return bad(
                "model.frame",
                "frame and parameterization apply to the oracle model only".into(),
            );
        }
        if self.model.parameterization == Parameterization::Flow && self.model.frame != Frame::Rf {
            return bad(
                "model.parameterization",
                "flow outputs need the rf frame".into(),
            );
        }
        if let Some(l) = self.guidance.label {
            let k = self.gmm().map(|g| g.components().len()).unwrap_or(0);
            if l >= k {
                return bad(
                    "guidance.label",
                    format!("label {l} out of range for {k} components"),
                );
            }
        }
        if self.guidance.mode != GuidanceMode::None && self.condition_kind_is_none() {
            return bad(
                "guidance.mode",
                "guidance needs guidance.label or run.observation".into(),
            );
        }
        if self.guidance.label.is_some() && self.run.observation.is_some() {
            return bad(
                "run.observation",
                "use either guidance.label or run.observation".into(),
            );
        }
        if let Some(y) = &self.run.observation {
            if self.data.sigma_obs.is_none() {
                return bad("data.sigma_obs", "required with run.observation".into());
            }
            if y.len() != self.gmm().map(|g| g.dim()).unwrap_or(0) {
                return bad("run.observation", "dimension differs from the data".into());
            }
        }
        if self.init.kind == InitKind::WarmStart && self.run.observation.is_none() {
            return bad(
                "init.kind",
                "warm_start needs run.observation as the informed estimate".into(),
            );
        }
        if let Some(s) = self.init.sigma_start {
            if self.init.kind != InitKind::WarmStart {
                return bad(
                    "init.sigma_start",
                    "only used with init.kind = warm_start".into(),
                );
            }
            if !(s > self.sampler.sigma_min && s.is_finite()) {
                return bad("init.sigma_start", "must exceed sampler.sigma_min".into());
            }
        }
        if self.model.kind == ModelKind::TrainInline {
            self.validate_train()?;
        }
        if self.output.formats.is_empty() {
            return bad("output.formats", "at least one format".into());
        }
        Ok(())
    }

    /// Checks the `train` and `train_noise` sections.
    pub fn validate_train(&self) -> Result<()> {
        self.train_config()?
            .validate()
            .map_err(|e| HarnessError::validation("train", e.to_string()))?;
        if self.train.task == TaskKind::Enhancement && self.data.sigma_obs.is_none() {
            return Err(HarnessError::validation(
                "data.sigma_obs",
                "required for train.task = enhancement",
            ));
        }
        Ok(())
    }

    fn condition_kind_is_none(&self) -> bool {
        self.guidance.label.is_none() && self.run.observation.is_none()
    }

    /// The data distribution described by the `data` section.
    pub fn gmm(&self) -> scorekit::Result<OracleGmm> {
        let d = &self.data;
        match d.kind {
            DataKind::Benchmark => Ok(OracleGmm::benchmark()),
            DataKind::TwoComponent => Ok(OracleGmm::two_component()),
            DataKind::TwoPeakDirac => Ok(OracleGmm::two_peak_dirac()),
            DataKind::Gaussian => OracleGmm::gaussian(d.mean.clone(), d.std),
            DataKind::Dirac => OracleGmm::dirac(d.mean.clone()),
            DataKind::Custom => {
                let dim = d
                    .components
                    .first()
                    .map_or(0, |c| c.len().saturating_sub(2));
                let comps = d
                    .components
                    .iter()
                    .map(|c| {
                        if c.len() != dim + 2 || dim == 0 {
                            return Err(scorekit::Error::InvalidParameter(
                                "data.component rows are [weight, mean..., std] with a common dimension".into(),
                            ));
                        }
                        Ok(Component::new(c[0], c[1..=dim].to_vec(), c[dim + 1]))
                    })
                    .collect::<scorekit::Result<Vec<_>>>()?;
                if comps.is_empty() {
                    return Err(scorekit::Error::InvalidParameter(
                        "custom data needs data.component rows".into(),
                    ));
                }
                OracleGmm::normalized(dim, comps)
            }
        }
    }

    /// Deterministic solver, or `None` for the SDE sampler.
    pub fn sampler_choice(&self) -> Result<Option<Sampler>> {
        let order = self.sampler.order;
        Ok(match self.sampler.kind {
            SamplerKind::Euler | SamplerKind::Heun if order.is_some() => {
                return Err(HarnessError::validation(
                    "sampler.order",
                    "euler and heun have a fixed order",
                ));
            }
            SamplerKind::Euler => Some(Sampler::Euler),
            SamplerKind::Heun => Some(Sampler::Heun),
            SamplerKind::Dpmpp => Some(Sampler::DpmPP {
                order: order.unwrap_or(3),
            }),
            SamplerKind::Unipc => Some(Sampler::UniPc {
                order: order.unwrap_or(3),
            }),
            SamplerKind::Sde => None,
        })
    }

    /// Nominal order reported in tables.
    pub fn sampler_order(&self) -> usize {
        match self.sampler_choice() {
            Ok(Some(s)) => s.order(),
            _ => 1,
        }
    }

    /// Largest noise level of the sampling grid.
    pub fn sigma_start(&self) -> f64 {
        match self.init.kind {
            InitKind::WarmStart => self.init.sigma_start.unwrap_or(self.sampler.sigma_max),
            _ => self.sampler.sigma_max,
        }
    }

    pub fn guidance_spec(&self) -> Result<GuidanceSpec> {
        let g = &self.guidance;
        GuidanceSpec::new(g.mode, g.scale, g.sigma_lo, g.sigma_hi)
            .map_err(|e| HarnessError::validation("guidance", e.to_string()))
    }

    pub fn train_noise(&self) -> TrainNoise {
        let n = &self.train_noise;
        match n.kind {
            NoiseKind::LogNormal => TrainNoise::LogNormal {
                p_mean: n.p_mean,
                p_std: n.p_std,
            },
            NoiseKind::LogUniform => TrainNoise::LogUniform {
                sigma_min: n.sigma_min,
                sigma_max: n.sigma_max,
            },
            NoiseKind::CosineUniform => TrainNoise::CosineUniform {
                sigma_min: n.sigma_min,
                sigma_max: n.sigma_max,
            },
            NoiseKind::SigmoidUniform => TrainNoise::SigmoidUniform {
                sigma_min: n.sigma_min,
                sigma_max: n.sigma_max,
                slope: n.slope,
                offset: n.offset,
            },
            NoiseKind::LogitNormal => TrainNoise::LogitNormal {
                p_mean: n.p_mean,
                p_std: n.p_std,
            },
        }
    }

    pub fn train_task(&self) -> Result<Task> {
        Ok(match self.train.task {
            TaskKind::Unconditional => Task::Unconditional,
            TaskKind::Labels => Task::Labels {
                embed_dim: self.train.embed_dim,
            },
            TaskKind::Enhancement => Task::Enhancement {
                sigma_obs: self.data.sigma_obs.ok_or_else(|| {
                    HarnessError::validation("data.sigma_obs", "required for enhancement")
                })?,
            },
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let sd = self
            .gmm()
            .map_err(|e| HarnessError::validation("data", e.to_string()))?
            .data_std();
        let t = &self.train;
        let weighting = match t.weighting {
            WeightingKind::Edm => LossWeighting::Edm { sigma_data: sd },
            WeightingKind::Uniform => LossWeighting::Uniform,
            WeightingKind::InvSigma2 => LossWeighting::InvSigma2,
            WeightingKind::InvCout => LossWeighting::InvCout { sigma_data: sd },
        };
        Ok(TrainConfig {
            objective: t.objective,
            train_noise: self.train_noise(),
            weighting,
            lr: t.lr,
            weight_decay: t.weight_decay,
            ema_beta: t.ema_beta,
            cfg_dropout: t.cfg_dropout,
            steps: t.steps,
            batch: t.batch,
            seed: t.seed,
            hidden: t.hidden.clone(),
            log_every: t.log_every,
        })
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse::<T>()
        .map_err(|_| HarnessError::validation(key, format!("cannot parse `{v}`")))
}

fn parse_enum<T: FromStr<Err = scorekit::Error>>(key: &str, v: &str) -> Result<T> {
    unquote(v)
        .parse::<T>()
        .map_err(|e| HarnessError::validation(key, e.to_string()))
}

fn split_list(key: &str, v: &str) -> Result<Vec<String>> {
    let inner = v
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| {
            HarnessError::validation(key, format!("expected a list `[a, b, ...]`, got `{v}`"))
        })?;
    if inner.trim().is_empty() {
        return Ok(Vec::new());
    }
    Ok(inner.split(',').map(|s| s.trim().to_string()).collect())
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    split_list(key, v)?
        .iter()
        .map(|s| parse_num(key, s))
        .collect()
}

fn unquote(v: &str) -> String {
    let v = v.trim();
    v.strip_prefix('"')
        .and_then(|s| s.strip_suffix('"'))
        .unwrap_or(v)
        .to_string()
}

fn quote(s: &str) -> String {
    format!("\"{s}\"")
}

fn fmt_f64(v: f64) -> String {
    // `Display` for f64 prints the shortest representation that parses back exactly.
    format!("{v}")
}

fn fmt_list<T: ToString>(v: &[T]) -> String {
    format!(
        "[{}]",
        v.iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(", ")
    )
}

/// One `key = value` assignment with its 1-based source line.
struct Assignment {
    line: usize,
    key: String,
    value: String,
}

fn assignments(text: &str) -> Result<Vec<Assignment>> {
    let mut out = Vec::new();
    let mut section: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let name = name.trim();
            if name.is_empty() || name.contains(char::is_whitespace) {
                return Err(HarnessError::Parse {
                    line: line_no,
                    message: format!("bad section header `{line}`"),
                });
            }
            section = Some(name.to_string());
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| HarnessError::Parse {
            line: line_no,
            message: format!("expected `key = value`, got `{line}`"),
        })?;
        let k = k.trim();
        let v = v.trim();
        if k.is_empty() || v.is_empty() || k.contains(char::is_whitespace) {
            return Err(HarnessError::Parse {
                line: line_no,
                message: format!("malformed assignment `{line}`"),
            });
        }
        let key = match &section {
            Some(s) if !k.contains('.') || s == "grid" => format!("{s}.{k}"),
            _ => k.to_string(),
        };
        out.push(Assignment {
            line: line_no,
            key,
            value: v.to_string(),
        });
    }
    Ok(out)
}

fn strip_comment(line: &str) -> &str {
    let mut in_quote = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => in_quote = !in_quote,
            '#' if !in_quote => return &line[..i],
            _ => {}
        }
    }
    line
}

fn with_line(line: usize, e: HarnessError) -> HarnessError {
    match e {
        HarnessError::Validation { key, message } => HarnessError::Validation {
            key: key.clone(),
            message: format!("{message} (line {line})"),
        },
        other => other,
    }
}

type Axes = Vec<(String, Vec<String>)>;

fn parse_into(text: &str, allow_grid: bool) -> Result<(RunConfig, Axes)> {
    let items = assignments(text)?;
    let kind_line = items
        .iter()
        .find(|a| a.key == "data.kind")
        .ok_or_else(|| HarnessError::validation("data.kind", "required key missing"))?;
    let kind = parse_named(&DataKind::NAMES, "data.kind", &unquote(&kind_line.value))
        .map_err(|e| with_line(kind_line.line, e))?;
    let mut cfg = RunConfig::with_data(kind);
    let mut seen = std::collections::HashSet::new();
    let mut axes = Vec::new();
    for a in &items {
        if let Some(target) = a.key.strip_prefix("grid.") {
            if !allow_grid {
                return Err(with_line(
                    a.line,
                    HarnessError::validation(&a.key, "grid keys belong in grid files"),
                ));
            }
            let values = split_list(&a.key, &a.value).map_err(|e| with_line(a.line, e))?;
            if values.is_empty() {
                return Err(with_line(
                    a.line,
                    HarnessError::validation(&a.key, "empty value list"),
                ));
            }
            // Validate the target key and each value against a scratch copy.
            let mut probe = cfg.clone();
            for v in &values {
                probe.set(target, v).map_err(|e| with_line(a.line, e))?;
            }
            if axes
                .iter()
                .any(|(k, _): &(String, Vec<String>)| k == target)
            {
                return Err(with_line(
                    a.line,
                    HarnessError::validation(&a.key, "duplicate grid axis"),
                ));
            }
            axes.push((target.to_string(), values));
            continue;
        }
        if a.key != "data.component" && !seen.insert(a.key.clone()) {
            return Err(with_line(
                a.line,
                HarnessError::validation(&a.key, "duplicate key"),
            ));
        }
        cfg.set(&a.key, &a.value)
            .map_err(|e| with_line(a.line, e))?;
    }
    Ok((cfg, axes))
}

/// Parses and validates a run config.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let (cfg, _) = parse_into(text, false)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Parses a grid file: a run config plus `grid.<key> = [...]` axes.
pub fn parse_grid(text: &str) -> Result<GridSpec> {
    let (base, axes) = parse_into(text, true)?;
    let spec = GridSpec { base, axes };
    let n = spec.cell_count();
    if n > spec.base.run.max_cells {
        return Err(HarnessError::validation(
            "run.max_cells",
            format!("grid has {n} cells, cap is {}", spec.base.run.max_cells),
        ));
    }
    for cell in spec.cells()? {
        cell.validate()?;
    }
    Ok(spec)
}

impl GridSpec {
    pub fn cell_count(&self) -> usize {
        self.axes.iter().map(|(_, v)| v.len()).product()
    }

    /// Every cell config in row-major order over the axes.
    pub fn cells(&self) -> Result<Vec<RunConfig>> {
        let mut out = vec![self.base.clone()];
        for (key, values) in &self.axes {
            let mut next = Vec::with_capacity(out.len() * values.len());
            for cfg in &out {
                for v in values {
                    let mut c = cfg.clone();
                    if key == "data.component" {
                        c.data.components.clear();
                    }
                    c.set(key, v)?;
                    next.push(c);
                }
            }
            out = next;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_round_trips() {
        let cfg = parse_config("data.kind = benchmark\n").unwrap();
        let again = parse_config(&cfg.serialize()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn full_config_round_trips() {
        let text = r#"
            # a custom mixture
            [data]
            kind = custom
            component = [0.25, -1, 0, 0.3]
            component = [0.75, 1, 0.5, 0.1]
            sigma_obs = 0.5

            [sampler]
            kind = unipc
            order = 4
            grid = log_linear
            steps = 17
            sigma_max = 12.5

            guidance.mode = cfg
            guidance.scale = 2.5
            guidance.sigma_hi = 3
            guidance.label = 1
            run.id = "my run"
            run.samples = 99
            output.formats = [csv]
        "#;
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.data.components.len(), 2);
        assert_eq!(
            cfg.sampler_choice().unwrap(),
            Some(Sampler::UniPc { order: 4 })
        );
        assert_eq!(cfg.run.id.as_deref(), Some("my run"));
        assert_eq!(parse_config(&cfg.serialize()).unwrap(), cfg);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = parse_config("data.kind = benchmark\nsampler.stpes = 8\n").unwrap_err();
        match err {
            HarnessError::Validation { key, message } => {
                assert_eq!(key, "sampler.stpes");
                assert!(message.contains("line 2"), "{message}");
            }
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn missing_data_kind() {
        let err = parse_config("sampler.steps = 8\n").unwrap_err();
        assert!(
            matches!(err, HarnessError::Validation { ref key, .. } if key == "data.kind"),
            "{err:?}"
        );
    }

    #[test]
    fn parse_errors_carry_lines() {
        let err = parse_config("data.kind = benchmark\n\nthis is not valid\n").unwrap_err();
        assert!(
            matches!(err, HarnessError::Parse { line: 3, .. }),
            "{err:?}"
        );
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn invalid_values_rejected() {
        for bad in [
            "sampler.steps = 0",
            "sampler.kind = rk4",
            "sampler.kind = dpmpp\nsampler.order = 5",
            "sampler.kind = euler\nsampler.order = 2",
            "guidance.mode = cfg",
            "guidance.sigma_lo = 5\nguidance.sigma_hi = 1\nguidance.label = 0",
            "model.kind = mlp",
            "run.samples = 0",
            "sampler.steps = 8\nsampler.steps = 9",
            "grid.sampler.steps = [8, 16]",
            "init.kind = warm_start",
        ] {
            let text = format!("data.kind = benchmark\n{bad}\n");
            assert!(parse_config(&text).is_err(), "accepted: {bad}");
        }
    }

    #[test]
    fn grid_cells_form_a_product() {
        let text = "data.kind = benchmark\ngrid.sampler.steps = [8, 16, 32]\ngrid.sampler.kind = [euler, heun]\n";
        let spec = parse_grid(text).unwrap();
        let cells = spec.cells().unwrap();
        assert_eq!(cells.len(), 6);
        assert_eq!(cells[1].sampler.kind, SamplerKind::Heun);
        assert_eq!(cells[1].sampler.steps, 8);
        assert_eq!(cells[5].sampler.steps, 32);
        let capped = format!("{text}run.max_cells = 5\n");
        assert!(parse_grid(&capped).is_err());
        assert!(parse_grid("data.kind = benchmark\ngrid.sampler.stpes = [1]\n").is_err());
    }
}
