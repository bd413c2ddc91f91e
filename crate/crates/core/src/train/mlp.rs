use ndarray::{Array1, Array2, ArrayView1};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::tape::{silu, Tape, Var};
use crate::error::{Error, Result};
use crate::solver::Condition;

/// Sine/cosine pairs in the noise embedding (16 features).
pub const NOISE_FREQUENCIES: usize = 8;

/// How a condition reaches the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Conditioning {
    None,
    /// Label embedding modulating every hidden pre-activation as `z·(1 + e·S) + e·H`.
    /// The null label maps to the zero embedding, i.e. no modulation.
    Adaln {
        labels: usize,
        embed_dim: usize,
    },
    /// Observation appended to the input features; null is all zeros.
    Concat {
        obs_dim: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub data_dim: usize,
    pub hidden: Vec<usize>,
    pub conditioning: Conditioning,
}

impl MlpSpec {
    pub fn new(data_dim: usize, hidden: Vec<usize>, conditioning: Conditioning) -> Result<Self> {
        if data_dim == 0 || hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::InvalidParameter(
                "network needs data_dim > 0 and non-empty hidden widths".into(),
            ));
        }
        match conditioning {
            Conditioning::Adaln { labels, embed_dim } if labels == 0 || embed_dim == 0 => {
                return Err(Error::InvalidParameter(
                    "adaln needs labels > 0 and embed_dim > 0".into(),
                ));
            }
            Conditioning::Concat { obs_dim: 0 } => {
                return Err(Error::InvalidParameter("concat needs obs_dim > 0".into()));
            }
            _ => {}
        }
        Ok(Self {
            data_dim,
            hidden,
            conditioning,
        })
    }

    pub fn input_dim(&self) -> usize {
        let obs = match self.conditioning {
            Conditioning::Concat { obs_dim } => obs_dim,
            _ => 0,
        };
        self.data_dim + 2 * NOISE_FREQUENCIES + obs
    }

    /// Layer widths from input to output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(&self.hidden);
        w.push(self.data_dim);
        w
    }

    /// Names and shapes of every parameter tensor, in storage order.
    pub fn layout(&self) -> Vec<(String, (usize, usize))> {
        let w = self.widths();
        let mut out = Vec::new();
        for l in 0..w.len() - 1 {
            out.push((format!("layer{l}.weight"), (w[l], w[l + 1])));
            out.push((format!("layer{l}.bias"), (1, w[l + 1])));
        }
        if let Conditioning::Adaln { labels, embed_dim } = self.conditioning {
            out.push(("label_embedding".into(), (labels, embed_dim)));
            for (l, &h) in self.hidden.iter().enumerate() {
                out.push((format!("adaln{l}.scale"), (embed_dim, h)));
                out.push((format!("adaln{l}.shift"), (embed_dim, h)));
            }
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.layout().iter().map(|(_, (r, c))| r * c).sum()
    }
}

/// Sinusoidal features of `c_noise` at geometric frequencies `2^{k/2}`.
pub fn noise_features(c_noise: f64) -> [f64; 2 * NOISE_FREQUENCIES] {
    let mut f = [0.0; 2 * NOISE_FREQUENCIES];
    for k in 0..NOISE_FREQUENCIES {
        let w = (k as f64 / 2.0).exp2();
        f[2 * k] = (w * c_noise).sin();
        f[2 * k + 1] = (w * c_noise).cos();
    }
    f
}

/// Small SiLU multilayer perceptron `F(x_in, c_noise, condition)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    params: Vec<Array2<f64>>,
}

impl Mlp {
    /// Gaussian init with variance `1/fan_in` for weights and label
    /// embeddings; biases and modulation tensors start at zero.
    pub fn new<R: rand::Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Self {
        let params = spec
            .layout()
            .into_iter()
            .map(|(name, (r, c))| {
                let std = if name.ends_with(".weight") {
                    1.0 / (r as f64).sqrt()
                } else if name == "label_embedding" {
                    1.0
                } else {
                    0.0
                };
                Array2::from_shape_fn((r, c), |_| {
                    if std == 0.0 {
                        0.0
                    } else {
                        let n: f64 = rng.sample(StandardNormal);
                        std * n
                    }
                })
            })
            .collect();
        Self { spec, params }
    }

    pub fn zeros(spec: MlpSpec) -> Self {
        let params = spec
            .layout()
            .into_iter()
            .map(|(_, shape)| Array2::zeros(shape))
            .collect();
        Self { spec, params }
    }

    pub fn from_params(spec: MlpSpec, params: Vec<Array2<f64>>) -> Result<Self> {
        let layout = spec.layout();
        if layout.len() != params.len() {
            return Err(Error::Shape(format!(
                "expected {} tensors, got {}",
                layout.len(),
                params.len()
            )));
        }
        for ((name, shape), p) in layout.iter().zip(&params) {
            if p.dim() != *shape {
                return Err(Error::Shape(format!(
                    "{name}: expected {shape:?}, got {:?}",
                    p.dim()
                )));
            }
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Array2<f64>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Array2::len).sum()
    }

    fn n_layers(&self) -> usize {
        self.spec.hidden.len() + 1
    }

    fn adaln_base(&self) -> usize {
        2 * self.n_layers()
    }

    /// Observation features or the null token for one input row.
    fn condition_row(&self, cond: Option<&Condition>) -> Result<(Option<usize>, Option<Vec<f64>>)> {
        match (self.spec.conditioning, cond) {
            (_, None) => Ok((None, None)),
            (Conditioning::Adaln { labels, .. }, Some(Condition::Label(k))) => {
                if *k < labels {
                    Ok((Some(*k), None))
                } else {
                    Err(Error::InvalidParameter(format!(
                        "label {k} out of range for {labels} labels"
                    )))
                }
            }
            (Conditioning::Concat { obs_dim }, Some(Condition::Observation(y))) => {
                crate::error::check_dim(obs_dim, y.len())?;
                Ok((None, Some(y.clone())))
            }
            (c, Some(other)) => Err(Error::InvalidParameter(format!(
                "condition {other:?} does not fit network conditioning {c:?}"
            ))),
        }
    }

    /// Single-input forward pass.
    pub fn forward(
        &self,
        x_in: &[f64],
        c_noise: f64,
        cond: Option<&Condition>,
    ) -> Result<Vec<f64>> {
        crate::error::check_dim(self.spec.data_dim, x_in.len())?;
        let (label, obs) = self.condition_row(cond)?;
        let mut h: Vec<f64> = x_in.to_vec();
        h.extend(noise_features(c_noise));
        if let Conditioning::Concat { obs_dim } = self.spec.conditioning {
            h.extend(obs.unwrap_or_else(|| vec![0.0; obs_dim]));
        }
        let mut h = Array1::from(h);
        let embedding = label.map(|k| self.params[self.adaln_base()].row(k));
        for l in 0..self.n_layers() {
            let mut z = h.dot(&self.params[2 * l]) + self.params[2 * l + 1].row(0);
            if l + 1 == self.n_layers() {
                return Ok(z.to_vec());
            }
            if let Some(e) = embedding {
                let scale = self.modulation(e, 2 * l + 1);
                let shift = self.modulation(e, 2 * l + 2);
                z = z * (scale + 1.0) + shift;
            }
            h = z.mapv(silu);
        }
        unreachable!("the output layer returns")
    }

    fn modulation(&self, e: ArrayView1<'_, f64>, offset: usize) -> Array1<f64> {
        e.dot(&self.params[self.adaln_base() + offset])
    }

    /// Batched forward pass recorded on `tape`; returns the output node.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        x_in: &Array2<f64>,
        c_noise: &[f64],
        conds: &[Option<Condition>],
    ) -> Result<Var> {
        let b = x_in.nrows();
        if c_noise.len() != b || conds.len() != b || x_in.ncols() != self.spec.data_dim {
            return Err(Error::Shape("batch inputs disagree in size".into()));
        }
        let mut labels = Vec::with_capacity(b);
        let mut obs_rows = Vec::with_capacity(b);
        for c in conds {
            let (l, o) = self.condition_row(c.as_ref())?;
            labels.push(l);
            obs_rows.push(o);
        }
        let params: Vec<Var> = self
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| tape.param(i, p))
            .collect();
        let emb = Array2::from_shape_fn((b, 2 * NOISE_FREQUENCIES), |(i, j)| {
            noise_features(c_noise[i])[j]
        });
        let mut parts = vec![tape.constant(x_in.clone()), tape.constant(emb)];
        if let Conditioning::Concat { obs_dim } = self.spec.conditioning {
            let obs = Array2::from_shape_fn((b, obs_dim), |(i, j)| {
                obs_rows[i].as_ref().map_or(0.0, |o| o[j])
            });
            parts.push(tape.constant(obs));
        }
        let mut h = tape.concat(&parts);
        let embedding = match self.spec.conditioning {
            Conditioning::Adaln { .. } => Some(tape.gather(params[self.adaln_base()], labels)),
            _ => None,
        };
        for l in 0..self.n_layers() {
            let z = tape.matmul(h, params[2 * l]);
            let mut z = tape.add_row(z, params[2 * l + 1]);
            if l + 1 == self.n_layers() {
                return Ok(z);
            }
            if let Some(e) = embedding {
                let scale = tape.matmul(e, params[self.adaln_base() + 2 * l + 1]);
                let scale = tape.add_scalar(scale, 1.0);
                let shift = tape.matmul(e, params[self.adaln_base() + 2 * l + 2]);
                let zs = tape.mul(z, scale);
                z = tape.add(zs, shift);
            }
            h = tape.silu(z);
        }
        unreachable!("the output layer returns")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_from_seed;
    use rand::Rng;

    fn specs() -> Vec<MlpSpec> {
        vec![
            MlpSpec::new(2, vec![16, 16], Conditioning::None).unwrap(),
            MlpSpec::new(
                2,
                vec![8, 8],
                Conditioning::Adaln {
                    labels: 3,
                    embed_dim: 4,
                },
            )
            .unwrap(),
            MlpSpec::new(2, vec![8], Conditioning::Concat { obs_dim: 2 }).unwrap(),
        ]
    }

    fn cond_for(spec: &MlpSpec, i: usize) -> Option<Condition> {
        match spec.conditioning {
            Conditioning::None => None,
            Conditioning::Adaln { labels, .. } => {
                (!i.is_multiple_of(4)).then_some(Condition::Label(i % labels))
            }
            Conditioning::Concat { .. } => {
                (!i.is_multiple_of(3)).then(|| Condition::Observation(vec![0.1 * i as f64, -0.4]))
            }
        }
    }

    #[test]
    fn zero_network_outputs_zero() {
        for spec in specs() {
            let m = Mlp::zeros(spec.clone());
            let out = m
                .forward(&[3.0, -1.0], 0.4, cond_for(&spec, 1).as_ref())
                .unwrap();
            assert_eq!(out, vec![0.0, 0.0]);
        }
    }

    #[test]
    fn parameter_count_matches_layout() {
        let spec = MlpSpec::new(2, vec![64, 64, 64], Conditioning::None).unwrap();
        assert_eq!(
            spec.num_params(),
            (18 * 64 + 64) + 2 * (64 * 64 + 64) + (64 * 2 + 2)
        );
        assert!(spec.num_params() <= 10_000);
    }

    #[test]
    fn tape_forward_agrees_with_direct_forward() {
        let mut rng = rng_from_seed(3);
        for spec in specs() {
            let mut m = Mlp::new(spec.clone(), &mut rng);
            for p in m.params_mut() {
                p.mapv_inplace(|v| v + 0.1 * rng.random::<f64>());
            }
            let b = 7;
            let x = Array2::from_shape_fn((b, 2), |_| rng.random_range(-2.0..2.0));
            let cn: Vec<f64> = (0..b).map(|_| rng.random_range(-1.0..1.0)).collect();
            let conds: Vec<Option<Condition>> = (0..b).map(|i| cond_for(&spec, i)).collect();
            let mut tape = Tape::new();
            let out = m.forward_tape(&mut tape, &x, &cn, &conds).unwrap();
            for i in 0..b {
                let direct = m
                    .forward(x.row(i).as_slice().unwrap(), cn[i], conds[i].as_ref())
                    .unwrap();
                for (j, d) in direct.iter().enumerate() {
                    assert!((tape.value(out)[[i, j]] - d).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn null_label_equals_unmodulated_network() {
        let mut rng = rng_from_seed(5);
        let spec = MlpSpec::new(
            2,
            vec![8, 8],
            Conditioning::Adaln {
                labels: 2,
                embed_dim: 4,
            },
        )
        .unwrap();
        let mut m = Mlp::new(spec, &mut rng);
        for p in m.params_mut() {
            p.mapv_inplace(|v| v + rng.random::<f64>());
        }
        let plain_spec = MlpSpec::new(2, vec![8, 8], Conditioning::None).unwrap();
        let plain = Mlp::from_params(plain_spec, m.params()[..6].to_vec()).unwrap();
        let a = m.forward(&[0.3, 0.9], -0.2, None).unwrap();
        let b = plain.forward(&[0.3, 0.9], -0.2, None).unwrap();
        assert_eq!(a, b);
        assert_ne!(
            a,
            m.forward(&[0.3, 0.9], -0.2, Some(&Condition::Label(1)))
                .unwrap()
        );
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let spec = specs().remove(1);
        let a = Mlp::new(spec.clone(), &mut rng_from_seed(11));
        let b = Mlp::new(spec, &mut rng_from_seed(11));
        assert_eq!(a, b);
        let c = Some(Condition::Label(2));
        assert_eq!(
            a.forward(&[1.0, 2.0], 0.1, c.as_ref()).unwrap(),
            b.forward(&[1.0, 2.0], 0.1, c.as_ref()).unwrap()
        );
    }

    #[test]
    fn mismatched_condition_is_rejected() {
        let m = Mlp::zeros(specs().remove(0));
        assert!(m
            .forward(&[0.0, 0.0], 0.0, Some(&Condition::Label(0)))
            .is_err());
        let m = Mlp::zeros(specs().remove(1));
        assert!(m
            .forward(&[0.0, 0.0], 0.0, Some(&Condition::Label(3)))
            .is_err());
    }
}
