//! Parameterization algebra.
//!
//! Conversions between denoiser / ε / score / velocity / flow outputs,
//! EDM-style preconditioning, coordinate-frame rescaling and the guidance
//! combinators. All conversions are expressed in EDM coordinates
//! (`x = x₀ + σ·ε`) unless a frame is named explicitly.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Noising geometry `x_t = s(t)·(x₀ + σ(t)·ε)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    /// `s = 1`, `σ = √t`.
    Ve,
    /// Trigonometric variance-preserving frame: `s = cos(πt/2)`, `σ = tan(πt/2)`.
    Vp,
    /// `s = 1`, `σ = t`.
    Edm,
    /// Linear interpolation `x_t = (1−t)·x₀ + t·ε`: `s = 1−t`, `σ = t/(1−t)`.
    Rf,
}

impl Frame {
    pub const ALL: [Frame; 4] = [Frame::Ve, Frame::Vp, Frame::Edm, Frame::Rf];

    fn check_t(self, t: f64) -> Result<()> {
        let ok = match self {
            Frame::Ve | Frame::Edm => t >= 0.0 && t.is_finite(),
            Frame::Vp | Frame::Rf => (0.0..1.0).contains(&t),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "t = {t} outside the {self} frame's range"
            )))
        }
    }

    /// `(s(t), σ(t))`.
    pub fn scale(self, t: f64) -> Result<(f64, f64)> {
        self.check_t(t)?;
        Ok(match self {
            Frame::Edm => (1.0, t),
            Frame::Ve => (1.0, t.sqrt()),
            Frame::Vp => {
                let a = FRAC_PI_2 * t;
                (a.cos(), a.tan())
            }
            Frame::Rf => (1.0 - t, t / (1.0 - t)),
        })
    }

    /// Inverse of `σ(t)`.
    pub fn time_of_sigma(self, sigma: f64) -> Result<f64> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::Domain(format!(
                "sigma = {sigma} must be finite and >= 0"
            )));
        }
        Ok(match self {
            Frame::Edm => sigma,
            Frame::Ve => sigma * sigma,
            Frame::Vp => sigma.atan() / FRAC_PI_2,
            Frame::Rf => sigma / (1.0 + sigma),
        })
    }

    /// Scaling factor `s` at the time whose noise level is `sigma`.
    pub fn scale_at_sigma(self, sigma: f64) -> Result<f64> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::Domain(format!(
                "sigma = {sigma} must be finite and >= 0"
            )));
        }
        Ok(match self {
            Frame::Edm | Frame::Ve => 1.0,
            Frame::Vp => 1.0 / (1.0 + sigma * sigma).sqrt(),
            Frame::Rf => 1.0 / (1.0 + sigma),
        })
    }

    /// Maps a frame-native noisy input to EDM coordinates: `x̂ = x/s(t)`, `σ̂ = σ(t)`.
    pub fn rescale_to_edm(self, x_frame: &[f64], t: f64) -> Result<(Vec<f64>, f64)> {
        let (s, sigma) = self.scale(t)?;
        if !(s > 0.0) {
            return Err(Error::Domain(format!("s(t) = {s} is not invertible")));
        }
        Ok((x_frame.iter().map(|v| v / s).collect(), sigma))
    }

    /// Inverse of [`Frame::rescale_to_edm`]: EDM `(x, σ)` to native `(x_frame, t)`.
    pub fn from_edm(self, x: &[f64], sigma: f64) -> Result<(Vec<f64>, f64)> {
        let t = self.time_of_sigma(sigma)?;
        let s = self.scale_at_sigma(sigma)?;
        Ok((x.iter().map(|v| v * s).collect(), t))
    }
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Frame::Ve => "ve",
            Frame::Vp => "vp",
            Frame::Edm => "edm",
            Frame::Rf => "rf",
        })
    }
}

impl FromStr for Frame {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ve" => Ok(Frame::Ve),
            "vp" => Ok(Frame::Vp),
            "edm" => Ok(Frame::Edm),
            "rf" => Ok(Frame::Rf),
            _ => Err(Error::InvalidParameter(format!("unknown frame `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parameterization {
    Denoiser,
    Epsilon,
    Score,
    /// v-prediction in the unit-data-variance trigonometric convention.
    Velocity,
    /// Rectified-flow velocity `u = ε − x₀`.
    Flow,
}

impl fmt::Display for Parameterization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Parameterization::Denoiser => "denoiser",
            Parameterization::Epsilon => "epsilon",
            Parameterization::Score => "score",
            Parameterization::Velocity => "velocity",
            Parameterization::Flow => "flow",
        })
    }
}

impl FromStr for Parameterization {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "denoiser" => Ok(Parameterization::Denoiser),
            "epsilon" => Ok(Parameterization::Epsilon),
            "score" => Ok(Parameterization::Score),
            "velocity" => Ok(Parameterization::Velocity),
            "flow" => Ok(Parameterization::Flow),
            _ => Err(Error::InvalidParameter(format!(
                "unknown parameterization `{s}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub kind: Parameterization,
    pub value: Vec<f64>,
}

impl ModelOutput {
    pub fn new(kind: Parameterization, value: Vec<f64>) -> Self {
        Self { kind, value }
    }
}

/// Frame and native time; required to interpret flow outputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameContext {
    pub frame: Frame,
    pub t: f64,
}

impl FrameContext {
    /// RF context matching EDM noise level `sigma`.
    pub fn rf_at_sigma(sigma: f64) -> Self {
        Self {
            frame: Frame::Rf,
            t: sigma / (1.0 + sigma),
        }
    }

    fn rf_scale(ctx: Option<FrameContext>) -> Result<(f64, f64)> {
        let ctx = ctx.ok_or(Error::MissingFrame)?;
        if ctx.frame != Frame::Rf {
            return Err(Error::MissingFrame);
        }
        let (s, _) = ctx.frame.scale(ctx.t)?;
        Ok((s, ctx.t))
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("sigma = {sigma} must be positive")))
    }
}

/// Converts a model output at EDM coordinates `(x, σ)` to the posterior-mean estimate `x̂₀`.
pub fn to_denoiser(
    out: &ModelOutput,
    x: &[f64],
    sigma: f64,
    ctx: Option<FrameContext>,
) -> Result<Vec<f64>> {
    check_dim(x.len(), out.value.len())?;
    check_sigma(sigma)?;
    let v = &out.value;
    Ok(match out.kind {
        Parameterization::Denoiser => v.clone(),
        Parameterization::Score => x
            .iter()
            .zip(v)
            .map(|(x, s)| x + sigma * sigma * s)
            .collect(),
        Parameterization::Epsilon => x.iter().zip(v).map(|(x, e)| x - sigma * e).collect(),
        Parameterization::Velocity => {
            let r = 1.0 + sigma * sigma;
            let rs = r.sqrt();
            x.iter()
                .zip(v)
                .map(|(x, v)| x / r - sigma * v / rs)
                .collect()
        }
        Parameterization::Flow => {
            let (s, t) = FrameContext::rf_scale(ctx)?;
            x.iter().zip(v).map(|(x, u)| s * x - t * u).collect()
        }
    })
}

/// Inverse of [`to_denoiser`].
pub fn from_denoiser(
    kind: Parameterization,
    x0_hat: &[f64],
    x: &[f64],
    sigma: f64,
    ctx: Option<FrameContext>,
) -> Result<ModelOutput> {
    check_dim(x.len(), x0_hat.len())?;
    check_sigma(sigma)?;
    let value = match kind {
        Parameterization::Denoiser => x0_hat.to_vec(),
        Parameterization::Score => x0_hat
            .iter()
            .zip(x)
            .map(|(d, x)| (d - x) / (sigma * sigma))
            .collect(),
        Parameterization::Epsilon => x0_hat.iter().zip(x).map(|(d, x)| (x - d) / sigma).collect(),
        Parameterization::Velocity => {
            let r = 1.0 + sigma * sigma;
            let rs = r.sqrt();
            x0_hat
                .iter()
                .zip(x)
                .map(|(d, x)| (x / r - d) * rs / sigma)
                .collect()
        }
        Parameterization::Flow => {
            let (s, t) = FrameContext::rf_scale(ctx)?;
            x0_hat.iter().zip(x).map(|(d, x)| (s * x - d) / t).collect()
        }
    };
    Ok(ModelOutput { kind, value })
}

/// EDM preconditioning coefficients for data standard deviation `σ_data`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Preconditioner {
    pub sigma_data: f64,
}

impl Preconditioner {
    pub fn new(sigma_data: f64) -> Result<Self> {
        if sigma_data > 0.0 && sigma_data.is_finite() {
            Ok(Self { sigma_data })
        } else {
            Err(Error::InvalidParameter(format!(
                "sigma_data = {sigma_data} must be positive"
            )))
        }
    }

    pub fn c_skip(&self, sigma: f64) -> f64 {
        let sd2 = self.sigma_data * self.sigma_data;
        sd2 / (sigma * sigma + sd2)
    }

    pub fn c_out(&self, sigma: f64) -> f64 {
        sigma * self.sigma_data / (sigma * sigma + self.sigma_data * self.sigma_data).sqrt()
    }

    pub fn c_in(&self, sigma: f64) -> f64 {
        1.0 / (sigma * sigma + self.sigma_data * self.sigma_data).sqrt()
    }

    pub fn c_noise(&self, sigma: f64) -> f64 {
        sigma.ln() / 4.0
    }

    /// `D(x, σ) = c_skip·x + c_out·F(c_in·x, c_noise)`.
    pub fn apply<F>(&self, x: &[f64], sigma: f64, raw: F) -> Result<Vec<f64>>
    where
        F: FnOnce(&[f64], f64) -> Result<Vec<f64>>,
    {
        check_sigma(sigma)?;
        let c_in = self.c_in(sigma);
        let scaled: Vec<f64> = x.iter().map(|v| c_in * v).collect();
        let f = raw(&scaled, self.c_noise(sigma))?;
        check_dim(x.len(), f.len())?;
        let (cs, co) = (self.c_skip(sigma), self.c_out(sigma));
        Ok(x.iter().zip(&f).map(|(x, f)| cs * x + co * f).collect())
    }
}

/// Wraps a raw network map `F(x_in, c_noise)` into a denoiser `D(x, σ)`.
pub fn precondition_wrap<F>(raw: F, pc: Preconditioner) -> impl Fn(&[f64], f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64], f64) -> Result<Vec<f64>>,
{
    move |x, sigma| pc.apply(x, sigma, &raw)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GuidanceMode {
    None,
    Cfg,
    Classifier,
}

impl fmt::Display for GuidanceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GuidanceMode::None => "none",
            GuidanceMode::Cfg => "cfg",
            GuidanceMode::Classifier => "classifier",
        })
    }
}

impl FromStr for GuidanceMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(GuidanceMode::None),
            "cfg" => Ok(GuidanceMode::Cfg),
            "classifier" => Ok(GuidanceMode::Classifier),
            _ => Err(Error::InvalidParameter(format!(
                "unknown guidance mode `{s}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceSpec {
    pub mode: GuidanceMode,
    pub scale: f64,
    pub sigma_lo: f64,
    pub sigma_hi: f64,
}

impl GuidanceSpec {
    pub fn new(mode: GuidanceMode, scale: f64, sigma_lo: f64, sigma_hi: f64) -> Result<Self> {
        if !scale.is_finite() {
            return Err(Error::InvalidParameter(
                "guidance scale must be finite".into(),
            ));
        }
        if !(sigma_lo <= sigma_hi) {
            return Err(Error::InvalidRange(format!(
                "guidance interval [{sigma_lo}, {sigma_hi}]"
            )));
        }
        Ok(Self {
            mode,
            scale,
            sigma_lo,
            sigma_hi,
        })
    }

    /// Guidance over every noise level.
    pub fn everywhere(mode: GuidanceMode, scale: f64) -> Self {
        Self {
            mode,
            scale,
            sigma_lo: 0.0,
            sigma_hi: f64::INFINITY,
        }
    }

    pub fn active_at(&self, sigma: f64) -> bool {
        self.mode != GuidanceMode::None && sigma >= self.sigma_lo && sigma <= self.sigma_hi
    }
}

/// `(1 − s)·uncond + s·cond`.
pub fn cfg_combine(cond: &[f64], uncond: &[f64], scale: f64) -> Result<Vec<f64>> {
    check_dim(cond.len(), uncond.len())?;
    if scale == 1.0 {
        return Ok(cond.to_vec());
    }
    if scale == 0.0 {
        return Ok(uncond.to_vec());
    }
    Ok(cond
        .iter()
        .zip(uncond)
        .map(|(c, u)| (1.0 - scale) * u + scale * c)
        .collect())
}

/// `score_uncond + s·∇ₓ log p(y | x)`.
pub fn classifier_guided_score(
    score_uncond: &[f64],
    classifier_logprob_grad: &[f64],
    scale: f64,
) -> Result<Vec<f64>> {
    check_dim(score_uncond.len(), classifier_logprob_grad.len())?;
    Ok(score_uncond
        .iter()
        .zip(classifier_logprob_grad)
        .map(|(s, g)| s + scale * g)
        .collect())
}
