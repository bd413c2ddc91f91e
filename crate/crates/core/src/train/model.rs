use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::mlp::{Conditioning, Mlp, MlpSpec, NOISE_FREQUENCIES};
use super::objective::Objective;
use crate::error::{Error, Result};
use crate::param::{to_denoiser, FrameContext, ModelOutput, Preconditioner};
use crate::solver::{Condition, Denoiser};

pub const MODEL_SCHEMA_VERSION: u32 = 1;

/// A trained network together with how its output is interpreted.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub mlp: Mlp,
    pub objective: Objective,
    pub sigma_data: f64,
}

/// Observations enter the network in units of `σ_data`, in training and
/// at inference alike.
pub(crate) fn scale_observation(cond: Option<Condition>, sigma_data: f64) -> Option<Condition> {
    match cond {
        Some(Condition::Observation(y)) => Some(Condition::Observation(
            y.iter().map(|v| v / sigma_data).collect(),
        )),
        other => other,
    }
}

impl TrainedModel {
    pub fn new(mlp: Mlp, objective: Objective, sigma_data: f64) -> Result<Self> {
        Preconditioner::new(sigma_data)?;
        Ok(Self {
            mlp,
            objective,
            sigma_data,
        })
    }

    fn net_condition(&self, cond: Option<&Condition>) -> Option<Condition> {
        scale_observation(cond.cloned(), self.sigma_data)
    }

    pub fn to_json(&self) -> Result<String> {
        let spec = self.mlp.spec();
        let tensors = spec
            .layout()
            .into_iter()
            .zip(self.mlp.params())
            .map(|((name, (r, c)), p)| TensorDoc {
                name,
                shape: [r, c],
                data: p.iter().copied().collect(),
            })
            .collect();
        let doc = ModelDoc {
            schema_version: MODEL_SCHEMA_VERSION,
            activation: "silu".into(),
            widths: spec.widths(),
            noise_features: 2 * NOISE_FREQUENCIES,
            conditioning: spec.conditioning,
            sigma_data: self.sigma_data,
            parameterization: self.objective,
            tensors,
        };
        serde_json::to_string_pretty(&doc).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDoc = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        if doc.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "unsupported model schema version {}",
                doc.schema_version
            )));
        }
        if doc.activation != "silu" {
            return Err(Error::Format(format!(
                "unsupported activation `{}`",
                doc.activation
            )));
        }
        if doc.noise_features != 2 * NOISE_FREQUENCIES {
            return Err(Error::Format(format!(
                "expected {} noise features",
                2 * NOISE_FREQUENCIES
            )));
        }
        let w = &doc.widths;
        if w.len() < 3 {
            return Err(Error::Format(
                "widths need input, at least one hidden layer and output".into(),
            ));
        }
        let data_dim = w[w.len() - 1];
        let spec = MlpSpec::new(data_dim, w[1..w.len() - 1].to_vec(), doc.conditioning)?;
        if spec.widths() != doc.widths {
            return Err(Error::Format(format!(
                "widths {:?} inconsistent with conditioning",
                doc.widths
            )));
        }
        let layout = spec.layout();
        if layout.len() != doc.tensors.len() {
            return Err(Error::Format(format!(
                "expected {} tensors, found {}",
                layout.len(),
                doc.tensors.len()
            )));
        }
        let params = layout
            .iter()
            .zip(doc.tensors)
            .map(|((name, shape), t)| {
                if *name != t.name || [shape.0, shape.1] != t.shape {
                    return Err(Error::Format(format!(
                        "tensor `{}` does not match expected `{name}` {shape:?}",
                        t.name
                    )));
                }
                Array2::from_shape_vec(*shape, t.data)
                    .map_err(|e| Error::Format(format!("{name}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(
            Mlp::from_params(spec, params)?,
            doc.parameterization,
            doc.sigma_data,
        )
    }
}

#[derive(Serialize, Deserialize)]
struct TensorDoc {
    name: String,
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    schema_version: u32,
    activation: String,
    widths: Vec<usize>,
    noise_features: usize,
    conditioning: Conditioning,
    sigma_data: f64,
    parameterization: Objective,
    tensors: Vec<TensorDoc>,
}

impl Denoiser for TrainedModel {
    fn denoise(&self, x: &[f64], sigma: f64, cond: Option<&Condition>) -> Result<Vec<f64>> {
        let cond = self.net_condition(cond);
        let cond = cond.as_ref();
        let sd = self.sigma_data;
        let pc = Preconditioner::new(sd)?;
        match self.objective {
            Objective::EdmDenoise => pc.apply(x, sigma, |x_in, c_noise| {
                self.mlp.forward(x_in, c_noise, cond)
            }),
            Objective::Epsilon => {
                let c_in = pc.c_in(sigma);
                let x_in: Vec<f64> = x.iter().map(|v| c_in * v).collect();
                let eps = self.mlp.forward(&x_in, pc.c_noise(sigma), cond)?;
                to_denoiser(
                    &ModelOutput::new(self.objective.parameterization(), eps),
                    x,
                    sigma,
                    None,
                )
            }
            Objective::VPred | Objective::RectifiedFlow => {
                // Unit-variance coordinates: x' = x/σ_d at noise level σ' = σ/σ_d.
                let s = sigma / sd;
                let xs: Vec<f64> = x.iter().map(|v| v / sd).collect();
                let scale = match self.objective {
                    Objective::VPred => 1.0 / (1.0 + s * s).sqrt(),
                    _ => 1.0 / (1.0 + s),
                };
                let x_frame: Vec<f64> = xs.iter().map(|v| scale * v).collect();
                let out = self.mlp.forward(&x_frame, pc.c_noise(s), cond)?;
                let d = to_denoiser(
                    &ModelOutput::new(self.objective.parameterization(), out),
                    &xs,
                    s,
                    Some(FrameContext::rf_at_sigma(s)),
                )?;
                Ok(d.into_iter().map(|v| v * sd).collect())
            }
        }
    }
}
