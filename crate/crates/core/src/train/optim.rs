use ndarray::{Array2, Zip};

use crate::error::{Error, Result};
use crate::solver::Condition;

/// Adam with bias correction and decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) || !(weight_decay >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "need lr > 0 and weight_decay >= 0, got {lr}, {weight_decay}"
            )));
        }
        Ok(Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [Array2<f64>], grads: &[Array2<f64>]) -> Result<()> {
        if params.len() != grads.len() || params.iter().zip(grads).any(|(p, g)| p.dim() != g.dim())
        {
            return Err(Error::Shape("parameter and gradient shapes differ".into()));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Array2::zeros(p.raw_dim())).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, lr, eps, wd) = (self.beta1, self.beta2, self.lr, self.eps, self.weight_decay);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * *p);
            });
        }
        Ok(())
    }
}

/// `ema ← β·ema + (1 − β)·params`.
pub fn ema_update(ema: &mut [Array2<f64>], params: &[Array2<f64>], beta: f64) -> Result<()> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::InvalidParameter(format!(
            "ema beta {beta} not in [0, 1)"
        )));
    }
    if ema.len() != params.len() || ema.iter().zip(params).any(|(e, p)| e.dim() != p.dim()) {
        return Err(Error::Shape("ema and parameter shapes differ".into()));
    }
    for (e, p) in ema.iter_mut().zip(params) {
        Zip::from(e)
            .and(p)
            .for_each(|e, &p| *e = beta * *e + (1.0 - beta) * p);
    }
    Ok(())
}

/// Replaces the condition by the null token with probability `p`.
pub fn drop_condition<R: rand::Rng + ?Sized>(
    cond: Option<Condition>,
    p: f64,
    rng: &mut R,
) -> Option<Condition> {
    assert!(
        (0.0..=1.0).contains(&p),
        "drop probability {p} not in [0, 1]"
    );
    if p > 0.0 && rng.random::<f64>() < p {
        None
    } else {
        cond
    }
}
