use super::handle::{Condition, Denoiser};
use crate::error::{check_dim, Error, Result};
use crate::oracle::OracleGmm;
use crate::param::{cfg_combine, classifier_guided_score, GuidanceMode, GuidanceSpec};

/// Noise-conditional classifier gradient `∇ₓ log p(y | x; σ)`.
pub trait Classifier: Send + Sync {
    fn log_prob_grad(&self, x: &[f64], sigma: f64, cond: &Condition) -> Result<Vec<f64>>;
}

/// Exact classifier of an oracle mixture: `p(component k | x; σ)`.
///
/// The gradient of the log posterior is the restricted-mixture score minus
/// the full-mixture score.
#[derive(Debug, Clone)]
pub struct GmmClassifier {
    gmm: OracleGmm,
    per_label: Vec<OracleGmm>,
}

impl GmmClassifier {
    pub fn new(gmm: OracleGmm) -> Self {
        let per_label = (0..gmm.components().len())
            .map(|k| gmm.restrict(&[k]).expect("index in range"))
            .collect();
        Self { gmm, per_label }
    }

    pub fn log_prob(&self, x: &[f64], sigma: f64, label: usize) -> Result<f64> {
        let post = self.gmm.component_posterior(x, sigma)?;
        post.get(label)
            .map(|p| p.ln())
            .ok_or_else(|| Error::InvalidParameter(format!("label {label} out of range")))
    }
}

impl Classifier for GmmClassifier {
    fn log_prob_grad(&self, x: &[f64], sigma: f64, cond: &Condition) -> Result<Vec<f64>> {
        let Condition::Label(k) = cond else {
            return Err(Error::InvalidParameter(
                "classifier guidance needs a label".into(),
            ));
        };
        let restricted = self
            .per_label
            .get(*k)
            .ok_or_else(|| Error::InvalidParameter(format!("label {k} out of range")))?;
        let sk = restricted.score(x, sigma)?;
        let s = self.gmm.score(x, sigma)?;
        Ok(sk.iter().zip(&s).map(|(a, b)| a - b).collect())
    }
}

pub enum Auxiliary<'a> {
    None,
    /// Model queried with the null condition for classifier-free guidance.
    Unconditional(&'a dyn Denoiser),
    Classifier(&'a dyn Classifier),
}

/// Denoiser applying CFG or classifier guidance inside `[σ_lo, σ_hi]`.
///
/// For CFG, `base` is the conditional model and the combination happens in
/// denoiser space. For classifier guidance, `base` is unconditional and the
/// classifier gradient is added in score space.
pub struct Guided<'a> {
    base: &'a dyn Denoiser,
    spec: GuidanceSpec,
    aux: Auxiliary<'a>,
}

pub fn guided_denoiser<'a>(
    base: &'a dyn Denoiser,
    spec: GuidanceSpec,
    aux: Auxiliary<'a>,
) -> Result<Guided<'a>> {
    match (spec.mode, &aux) {
        (GuidanceMode::Cfg, Auxiliary::Unconditional(_))
        | (GuidanceMode::Classifier, Auxiliary::Classifier(_))
        | (GuidanceMode::None, _) => Ok(Guided { base, spec, aux }),
        (GuidanceMode::Cfg, _) => Err(Error::MissingAuxiliary("cfg")),
        (GuidanceMode::Classifier, _) => Err(Error::MissingAuxiliary("classifier")),
    }
}

impl Guided<'_> {
    pub fn spec(&self) -> &GuidanceSpec {
        &self.spec
    }
}

impl Denoiser for Guided<'_> {
    fn denoise(&self, x: &[f64], sigma: f64, cond: Option<&Condition>) -> Result<Vec<f64>> {
        if !self.spec.active_at(sigma) {
            return match self.spec.mode {
                GuidanceMode::Classifier => self.base.denoise(x, sigma, None),
                _ => self.base.denoise(x, sigma, cond),
            };
        }
        match &self.aux {
            Auxiliary::Unconditional(uncond) => {
                let c = self.base.denoise(x, sigma, cond)?;
                let u = uncond.denoise(x, sigma, None)?;
                cfg_combine(&c, &u, self.spec.scale)
            }
            Auxiliary::Classifier(clf) => {
                let d = self.base.denoise(x, sigma, None)?;
                let Some(cond) = cond else {
                    return Ok(d);
                };
                check_dim(x.len(), d.len())?;
                let s2 = sigma * sigma;
                let score: Vec<f64> = d.iter().zip(x).map(|(d, x)| (d - x) / s2).collect();
                let grad = clf.log_prob_grad(x, sigma, cond)?;
                let guided = classifier_guided_score(&score, &grad, self.spec.scale)?;
                Ok(x.iter().zip(&guided).map(|(x, s)| x + s2 * s).collect())
            }
            Auxiliary::None => self.base.denoise(x, sigma, cond),
        }
    }

    fn evaluations(&self, sigma: f64) -> u64 {
        match (&self.aux, self.spec.active_at(sigma)) {
            (Auxiliary::Unconditional(u), true) => {
                self.base.evaluations(sigma) + u.evaluations(sigma)
            }
            _ => self.base.evaluations(sigma),
        }
    }
}
