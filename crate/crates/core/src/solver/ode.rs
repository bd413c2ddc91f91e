use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use super::handle::{Condition, Denoiser};
use crate::error::{check_dim, Error, Result};
use crate::schedule::StepGrid;

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub sigma: f64,
    pub x: Vec<f64>,
    pub denoised: Option<Vec<f64>>,
}

/// States visited by a solve, one record per grid node.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub records: Vec<TrajectoryRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub x: Vec<f64>,
    /// Network evaluations spent, as reported by [`Denoiser::evaluations`].
    pub nfe: u64,
    pub trajectory: Option<Trajectory>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sampler {
    Euler,
    Heun,
    /// DPM-Solver++ multistep of order 1–3.
    DpmPP {
        order: usize,
    },
    /// UniPC predictor-corrector of order 2–4.
    UniPc {
        order: usize,
    },
}

impl Sampler {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Sampler::DpmPP { order } if !(1..=3).contains(&order) => Err(Error::InvalidParameter(
                format!("dpmpp order {order} not in 1..=3"),
            )),
            Sampler::UniPc { order } if !(2..=4).contains(&order) => Err(Error::InvalidParameter(
                format!("unipc order {order} not in 2..=4"),
            )),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Sampler::Euler => "euler",
            Sampler::Heun => "heun",
            Sampler::DpmPP { .. } => "dpmpp",
            Sampler::UniPc { .. } => "unipc",
        }
    }

    pub fn order(&self) -> usize {
        match *self {
            Sampler::Euler => 1,
            Sampler::Heun => 2,
            Sampler::DpmPP { order } | Sampler::UniPc { order } => order,
        }
    }

    pub fn solve(
        &self,
        d: &dyn Denoiser,
        grid: &StepGrid,
        x_t: &[f64],
        cond: Option<&Condition>,
    ) -> Result<Solution> {
        self.run(d, grid, x_t, cond, false)
    }

    /// Like [`Sampler::solve`], also returning the visited states.
    pub fn solve_recorded(
        &self,
        d: &dyn Denoiser,
        grid: &StepGrid,
        x_t: &[f64],
        cond: Option<&Condition>,
    ) -> Result<Solution> {
        self.run(d, grid, x_t, cond, true)
    }

    fn run(
        &self,
        d: &dyn Denoiser,
        grid: &StepGrid,
        x_t: &[f64],
        cond: Option<&Condition>,
        record: bool,
    ) -> Result<Solution> {
        self.validate()?;
        if x_t.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalDivergence { step: 0 });
        }
        let mut run = Run {
            d,
            cond,
            nfe: 0,
            trajectory: record.then(Trajectory::default),
        };
        let x = match *self {
            Sampler::Euler => euler(&mut run, grid, x_t)?,
            Sampler::Heun => heun(&mut run, grid, x_t)?,
            Sampler::DpmPP { order } => multistep(&mut run, grid, x_t, order, false)?,
            Sampler::UniPc { order } => multistep(&mut run, grid, x_t, order, true)?,
        };
        run.push(0.0, &x, None);
        Ok(Solution {
            x,
            nfe: run.nfe,
            trajectory: run.trajectory,
        })
    }
}

impl fmt::Display for Sampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sampler::Euler | Sampler::Heun => f.write_str(self.name()),
            Sampler::DpmPP { order } | Sampler::UniPc { order } => {
                write!(f, "{}{}", self.name(), order)
            }
        }
    }
}

impl FromStr for Sampler {
    type Err = Error;
    /// Parses `euler`, `heun`, `dpmpp<m>` or `unipc<p>`.
    fn from_str(s: &str) -> Result<Self> {
        let parse_order = |rest: &str| {
            rest.parse::<usize>()
                .map_err(|_| Error::InvalidParameter(format!("bad sampler order in `{s}`")))
        };
        let sampler = match s {
            "euler" => Sampler::Euler,
            "heun" => Sampler::Heun,
            _ if s.starts_with("dpmpp") => Sampler::DpmPP {
                order: parse_order(&s[5..])?,
            },
            _ if s.starts_with("unipc") => Sampler::UniPc {
                order: parse_order(&s[5..])?,
            },
            _ => return Err(Error::InvalidParameter(format!("unknown sampler `{s}`"))),
        };
        sampler.validate()?;
        Ok(sampler)
    }
}

pub fn euler_solve(
    d: &dyn Denoiser,
    grid: &StepGrid,
    x_t: &[f64],
    cond: Option<&Condition>,
) -> Result<Solution> {
    Sampler::Euler.solve(d, grid, x_t, cond)
}

pub fn heun_solve(
    d: &dyn Denoiser,
    grid: &StepGrid,
    x_t: &[f64],
    cond: Option<&Condition>,
) -> Result<Solution> {
    Sampler::Heun.solve(d, grid, x_t, cond)
}

pub fn dpmpp_solve(
    d: &dyn Denoiser,
    grid: &StepGrid,
    x_t: &[f64],
    order: usize,
    cond: Option<&Condition>,
) -> Result<Solution> {
    Sampler::DpmPP { order }.solve(d, grid, x_t, cond)
}

pub fn unipc_solve(
    d: &dyn Denoiser,
    grid: &StepGrid,
    x_t: &[f64],
    order: usize,
    cond: Option<&Condition>,
) -> Result<Solution> {
    Sampler::UniPc { order }.solve(d, grid, x_t, cond)
}

struct Run<'a> {
    d: &'a dyn Denoiser,
    cond: Option<&'a Condition>,
    nfe: u64,
    trajectory: Option<Trajectory>,
}

impl Run<'_> {
    fn eval(&mut self, x: &[f64], sigma: f64, step: usize) -> Result<Vec<f64>> {
        self.nfe += self.d.evaluations(sigma);
        let out = self.d.denoise(x, sigma, self.cond)?;
        check_dim(x.len(), out.len())?;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalDivergence { step });
        }
        Ok(out)
    }

    fn push(&mut self, sigma: f64, x: &[f64], denoised: Option<&[f64]>) {
        if let Some(t) = &mut self.trajectory {
            t.records.push(TrajectoryRecord {
                sigma,
                x: x.to_vec(),
                denoised: denoised.map(<[f64]>::to_vec),
            });
        }
    }
}

fn ensure_finite(x: &[f64], step: usize) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericalDivergence { step })
    }
}

fn slope(x: &[f64], d: &[f64], sigma: f64) -> Vec<f64> {
    x.iter().zip(d).map(|(x, d)| (x - d) / sigma).collect()
}

fn euler(run: &mut Run<'_>, grid: &StepGrid, x_t: &[f64]) -> Result<Vec<f64>> {
    let mut x = x_t.to_vec();
    for (i, w) in grid.sigmas().windows(2).enumerate() {
        let (s, sn) = (w[0], w[1]);
        let den = run.eval(&x, s, i)?;
        run.push(s, &x, Some(&den));
        let d = slope(&x, &den, s);
        x.iter_mut().zip(&d).for_each(|(x, d)| *x += (sn - s) * d);
        ensure_finite(&x, i)?;
    }
    Ok(x)
}

fn heun(run: &mut Run<'_>, grid: &StepGrid, x_t: &[f64]) -> Result<Vec<f64>> {
    let mut x = x_t.to_vec();
    for (i, w) in grid.sigmas().windows(2).enumerate() {
        let (s, sn) = (w[0], w[1]);
        let den = run.eval(&x, s, i)?;
        run.push(s, &x, Some(&den));
        let d = slope(&x, &den, s);
        let pred: Vec<f64> = x.iter().zip(&d).map(|(x, d)| x + (sn - s) * d).collect();
        if sn == 0.0 {
            x = pred;
        } else {
            let den2 = run.eval(&pred, sn, i)?;
            let d2 = slope(&pred, &den2, sn);
            x.iter_mut()
                .zip(d.iter().zip(&d2))
                .for_each(|(x, (a, b))| *x += (sn - s) * 0.5 * (a + b));
        }
        ensure_finite(&x, i)?;
    }
    Ok(x)
}

/// Recent `(λ = −ln σ, D)` pairs, oldest first.
struct History {
    cap: usize,
    nodes: VecDeque<(f64, Vec<f64>)>,
}

impl History {
    fn new(cap: usize) -> Self {
        Self {
            cap,
            nodes: VecDeque::with_capacity(cap),
        }
    }

    fn push(&mut self, lambda: f64, d: Vec<f64>) {
        debug_assert!(self.nodes.back().is_none_or(|(l, _)| lambda > *l));
        if self.nodes.len() == self.cap {
            self.nodes.pop_front();
        }
        self.nodes.push_back((lambda, d));
    }

    fn last(&self, k: usize) -> impl Iterator<Item = &(f64, Vec<f64>)> {
        self.nodes.iter().skip(self.nodes.len().saturating_sub(k))
    }
}

/// One exponential-integrator step from `λ_from` to `λ_to`:
/// `x ← e^{−h}·x + ∫ e^{λ−λ_to}·P(λ) dλ`, with `P` interpolating `nodes`.
fn ei_step<'n>(
    x: &[f64],
    lambda_from: f64,
    lambda_to: f64,
    nodes: impl Iterator<Item = (f64, &'n [f64])>,
) -> Vec<f64> {
    let (lams, values): (Vec<f64>, Vec<&[f64]>) = nodes.unzip();
    let weights = ei_weights(lambda_from, lambda_to, &lams);
    let h = lambda_to - lambda_from;
    let decay = (-h).exp();
    let mut out: Vec<f64> = x.iter().map(|v| decay * v).collect();
    for (w, d) in weights.iter().zip(values) {
        out.iter_mut().zip(d).for_each(|(o, d)| *o += w * d);
    }
    out
}

/// Quadrature weights `wⱼ = ∫_{λ_from}^{λ_to} e^{λ−λ_to}·Lⱼ(λ) dλ` for the
/// Lagrange basis `Lⱼ` on `node_lambdas`.
pub fn ei_weights(lambda_from: f64, lambda_to: f64, node_lambdas: &[f64]) -> Vec<f64> {
    let h = lambda_to - lambda_from;
    let k = node_lambdas.len();
    // Work in u = (λ − λ_to)/h ∈ [−1, 0].
    let nodes: Vec<f64> = node_lambdas.iter().map(|l| (l - lambda_to) / h).collect();
    let moments = exp_moments(h, k);
    (0..k)
        .map(|j| {
            let mut poly = vec![1.0];
            let mut denom = 1.0;
            for (m, &um) in nodes.iter().enumerate() {
                if m == j {
                    continue;
                }
                poly = poly_mul_linear(&poly, -um);
                denom *= nodes[j] - um;
            }
            h * poly.iter().zip(&moments).map(|(c, m)| c * m).sum::<f64>() / denom
        })
        .collect()
}

/// Multiplies a polynomial (ascending coefficients) by `(u + c)`.
fn poly_mul_linear(p: &[f64], c: f64) -> Vec<f64> {
    let mut out = vec![0.0; p.len() + 1];
    for (i, a) in p.iter().enumerate() {
        out[i] += c * a;
        out[i + 1] += a;
    }
    out
}

/// `Jₖ(h) = ∫_{−1}^{0} e^{hu}·uᵏ du` for `k < n`.
fn exp_moments(h: f64, n: usize) -> Vec<f64> {
    if h < 1.0 {
        // Alternating series; terms decay like h^m/m!.
        (0..n)
            .map(|k| {
                let mut sum = 0.0;
                let mut term = 1.0; // h^m / m!
                for m in 0..60 {
                    let sign = if (m + k) % 2 == 0 { 1.0 } else { -1.0 };
                    let t = sign * term / (m + k + 1) as f64;
                    sum += t;
                    if t.abs() < 1e-18 * sum.abs() {
                        break;
                    }
                    term *= h / (m + 1) as f64;
                }
                sum
            })
            .collect()
    } else {
        let e = (-h).exp();
        let mut out = Vec::with_capacity(n);
        let mut prev = -(-h).exp_m1() / h;
        out.push(prev);
        for k in 1..n {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            let cur = -e * sign / h - (k as f64 / h) * prev;
            out.push(cur);
            prev = cur;
        }
        out.truncate(n);
        out
    }
}

/// DPM-Solver++ (`corrector = false`) and UniPC (`corrector = true`).
///
/// The last step to `σ = 0` returns the most recent denoised estimate, the
/// `e^{−h} → 0` limit of the first-order update.
fn multistep(
    run: &mut Run<'_>,
    grid: &StepGrid,
    x_t: &[f64],
    order: usize,
    corrector: bool,
) -> Result<Vec<f64>> {
    let sig = grid.sigmas();
    let mut x = x_t.to_vec();
    if grid.steps() == 0 {
        return Ok(x);
    }
    let predictor_order = if corrector { order - 1 } else { order };
    let mut hist = History::new(predictor_order);
    let mut den = run.eval(&x, sig[0], 0)?;
    for i in 0..grid.steps() {
        let (s, sn) = (sig[i], sig[i + 1]);
        run.push(s, &x, Some(&den));
        let lam = -s.ln();
        hist.push(lam, den.clone());
        if sn == 0.0 {
            x = den;
            break;
        }
        let lam_next = -sn.ln();
        let nodes = hist.last(predictor_order).map(|(l, d)| (*l, d.as_slice()));
        let pred = ei_step(&x, lam, lam_next, nodes);
        ensure_finite(&pred, i)?;
        let den_next = run.eval(&pred, sn, i + 1)?;
        x = if corrector {
            let nodes = hist
                .last(predictor_order)
                .map(|(l, d)| (*l, d.as_slice()))
                .chain(std::iter::once((lam_next, den_next.as_slice())));
            ei_step(&x, lam, lam_next, nodes)
        } else {
            pred
        };
        ensure_finite(&x, i)?;
        den = den_next;
    }
    Ok(x)
}
