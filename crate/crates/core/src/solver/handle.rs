use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{check_dim, Result};
use crate::oracle::OracleGmm;
use crate::param::{
    from_denoiser, to_denoiser, Frame, FrameContext, ModelOutput, Parameterization,
};

/// Conditioning signal passed alongside a noisy input. `None` is the null token.
#[derive(Debug, Clone, PartialEq)]
pub enum Condition {
    /// Class label (an oracle component index).
    Label(usize),
    /// Degraded observation of the clean signal.
    Observation(Vec<f64>),
}

/// `x̂₀ = D(x, σ | condition)` in EDM coordinates.
pub trait Denoiser: Send + Sync {
    fn denoise(&self, x: &[f64], sigma: f64, cond: Option<&Condition>) -> Result<Vec<f64>>;

    /// Network evaluations one call costs at `sigma`.
    fn evaluations(&self, _sigma: f64) -> u64 {
        1
    }
}

impl<T: Denoiser + ?Sized> Denoiser for &T {
    fn denoise(&self, x: &[f64], sigma: f64, cond: Option<&Condition>) -> Result<Vec<f64>> {
        (**self).denoise(x, sigma, cond)
    }
    fn evaluations(&self, sigma: f64) -> u64 {
        (**self).evaluations(sigma)
    }
}

impl<T: Denoiser + ?Sized> Denoiser for Box<T> {
    fn denoise(&self, x: &[f64], sigma: f64, cond: Option<&Condition>) -> Result<Vec<f64>> {
        (**self).denoise(x, sigma, cond)
    }
    fn evaluations(&self, sigma: f64) -> u64 {
        (**self).evaluations(sigma)
    }
}

impl<T: Denoiser + ?Sized> Denoiser for Arc<T> {
    fn denoise(&self, x: &[f64], sigma: f64, cond: Option<&Condition>) -> Result<Vec<f64>> {
        (**self).denoise(x, sigma, cond)
    }
    fn evaluations(&self, sigma: f64) -> u64 {
        (**self).evaluations(sigma)
    }
}

/// Counts calls to the wrapped denoiser.
#[derive(Debug)]
pub struct Counted<D> {
    inner: D,
    count: AtomicU64,
}

impl<D> Counted<D> {
    pub fn new(inner: D) -> Self {
        Self {
            inner,
            count: AtomicU64::new(0),
        }
    }

    pub fn count(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.count.store(0, Ordering::Relaxed);
    }

    pub fn inner(&self) -> &D {
        &self.inner
    }
}

impl<D: Denoiser> Denoiser for Counted<D> {
    fn denoise(&self, x: &[f64], sigma: f64, cond: Option<&Condition>) -> Result<Vec<f64>> {
        self.count.fetch_add(1, Ordering::Relaxed);
        self.inner.denoise(x, sigma, cond)
    }
}

/// Exact posterior-mean denoiser of an [`OracleGmm`].
///
/// `Label(k)` conditions on component `k`; `Observation(y)` conditions on
/// `y = x₀ + σ_obs·n` and requires `sigma_obs`.
#[derive(Debug, Clone)]
pub struct OracleDenoiser {
    gmm: OracleGmm,
    per_label: Vec<OracleGmm>,
    sigma_obs: Option<f64>,
}

impl OracleDenoiser {
    pub fn new(gmm: OracleGmm) -> Self {
        let per_label = (0..gmm.components().len())
            .map(|k| gmm.restrict(&[k]).expect("index in range"))
            .collect();
        Self {
            gmm,
            per_label,
            sigma_obs: None,
        }
    }

    pub fn with_observation_noise(mut self, sigma_obs: f64) -> Self {
        self.sigma_obs = Some(sigma_obs);
        self
    }

    pub fn gmm(&self) -> &OracleGmm {
        &self.gmm
    }

    /// The distribution this denoiser targets under `cond`.
    pub fn target(&self, cond: Option<&Condition>) -> Result<OracleGmm> {
        match cond {
            None => Ok(self.gmm.clone()),
            Some(Condition::Label(k)) => {
                self.per_label.get(*k).cloned().ok_or_else(|| {
                    crate::Error::InvalidParameter(format!("label {k} out of range"))
                })
            }
            Some(Condition::Observation(y)) => {
                let s = self.sigma_obs.ok_or_else(|| {
                    crate::Error::InvalidParameter("observation condition without sigma_obs".into())
                })?;
                self.gmm.posterior_given_observation(y, s)
            }
        }
    }
}

impl Denoiser for OracleDenoiser {
    fn denoise(&self, x: &[f64], sigma: f64, cond: Option<&Condition>) -> Result<Vec<f64>> {
        match cond {
            None => self.gmm.denoise(x, sigma),
            Some(Condition::Label(k)) => match self.per_label.get(*k) {
                Some(g) => g.denoise(x, sigma),
                None => Err(crate::Error::InvalidParameter(format!(
                    "label {k} out of range"
                ))),
            },
            Some(Condition::Observation(_)) => self.target(cond)?.denoise(x, sigma),
        }
    }
}

/// A model that consumes frame-native inputs `(x_frame, t)`.
pub trait NativeModel: Send + Sync {
    fn frame(&self) -> Frame;
    fn parameterization(&self) -> Parameterization;
    fn eval(&self, x_frame: &[f64], t: f64, cond: Option<&Condition>) -> Result<ModelOutput>;
}

/// Exposes a [`NativeModel`] as an EDM-frame [`Denoiser`].
///
/// The EDM input is mapped into the model's frame, the native output is
/// interpreted per its parameterization and converted back to `x̂₀`.
/// Score outputs are gradients in frame coordinates and are rescaled by `s`.
#[derive(Debug, Clone)]
pub struct FrameAdapter<M> {
    model: M,
}

impl<M: NativeModel> FrameAdapter<M> {
    pub fn new(model: M) -> Self {
        Self { model }
    }

    pub fn model(&self) -> &M {
        &self.model
    }
}

impl<M: NativeModel> Denoiser for FrameAdapter<M> {
    fn denoise(&self, x: &[f64], sigma: f64, cond: Option<&Condition>) -> Result<Vec<f64>> {
        let frame = self.model.frame();
        let (x_frame, t) = frame.from_edm(x, sigma)?;
        let mut out = self.model.eval(&x_frame, t, cond)?;
        check_dim(x.len(), out.value.len())?;
        if out.kind == Parameterization::Score {
            let s = frame.scale_at_sigma(sigma)?;
            out.value.iter_mut().for_each(|v| *v *= s);
        }
        to_denoiser(&out, x, sigma, Some(FrameContext::rf_at_sigma(sigma)))
    }
}

/// The oracle emitting a chosen parameterization from frame-native inputs.
#[derive(Debug, Clone)]
pub struct OracleModel {
    oracle: OracleDenoiser,
    frame: Frame,
    kind: Parameterization,
}

impl OracleModel {
    pub fn new(oracle: OracleDenoiser, frame: Frame, kind: Parameterization) -> Self {
        Self {
            oracle,
            frame,
            kind,
        }
    }
}

impl NativeModel for OracleModel {
    fn frame(&self) -> Frame {
        self.frame
    }

    fn parameterization(&self) -> Parameterization {
        self.kind
    }

    fn eval(&self, x_frame: &[f64], t: f64, cond: Option<&Condition>) -> Result<ModelOutput> {
        let (x, sigma) = self.frame.rescale_to_edm(x_frame, t)?;
        let d = self.oracle.denoise(&x, sigma, cond)?;
        let mut out = from_denoiser(
            self.kind,
            &d,
            &x,
            sigma,
            Some(FrameContext::rf_at_sigma(sigma)),
        )?;
        if self.kind == Parameterization::Score {
            let (s, _) = self.frame.scale(t)?;
            out.value.iter_mut().for_each(|v| *v /= s);
        }
        Ok(out)
    }
}
