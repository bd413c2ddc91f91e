//! Reverse-mode differentiation over row-batched matrices.

use ndarray::{concatenate, s, Array1, Array2, Axis};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(usize),
    MatMul(Var, Var),
    /// `a + 1ᵀb` with `b` a single row.
    AddRow(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddScalar(Var),
    Silu(Var),
    Concat(Vec<Var>),
    /// Row lookup into a table; `None` yields a zero row.
    Gather(Var, Vec<Option<usize>>),
    /// `Σᵢ wᵢ·‖predᵢ − targetᵢ‖² / B` as a 1×1 value.
    WeightedSse {
        pred: Var,
        target: Array2<f64>,
        weights: Array1<f64>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Records a computation so gradients of a scalar can be pulled back to parameters.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Constant)
    }

    /// A leaf whose gradient is reported under `index` by [`Tape::backward`].
    pub fn param(&mut self, index: usize, value: &Array2<f64>) -> Var {
        self.push(value.clone(), Op::Param(index))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) + c;
        self.push(v, Op::AddScalar(a))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(silu);
        self.push(v, Op::Silu(a))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = concatenate(Axis(1), &views).expect("row counts agree");
        self.push(v, Op::Concat(parts.to_vec()))
    }

    pub fn gather(&mut self, table: Var, rows: Vec<Option<usize>>) -> Var {
        let t = self.value(table);
        let mut v = Array2::zeros((rows.len(), t.ncols()));
        for (i, r) in rows.iter().enumerate() {
            if let Some(r) = r {
                v.row_mut(i).assign(&t.row(*r));
            }
        }
        self.push(v, Op::Gather(table, rows))
    }

    pub fn weighted_sse(&mut self, pred: Var, target: Array2<f64>, weights: Array1<f64>) -> Var {
        let p = self.value(pred);
        let b = p.nrows() as f64;
        let diff = p - &target;
        let per_row = (&diff * &diff).sum_axis(Axis(1));
        let loss = per_row.dot(&weights) / b;
        self.push(
            Array2::from_elem((1, 1), loss),
            Op::WeightedSse {
                pred,
                target,
                weights,
            },
        )
    }

    /// Gradients of the 1×1 node `loss` with respect to each parameter index
    /// `0..n_params`. Unreached parameters get zero gradients of the leaf's shape.
    pub fn backward(&self, loss: Var, n_params: usize) -> Vec<Option<Array2<f64>>> {
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::ones((1, 1)));
        let mut out = vec![None; n_params];
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant => {}
                Op::Param(k) => {
                    accumulate(&mut out[*k], g);
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    accumulate(&mut grads[a.0], ga);
                    accumulate(&mut grads[b.0], gb);
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads[row.0], gr);
                    accumulate(&mut grads[a.0], g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[b.0], g.clone());
                    accumulate(&mut grads[a.0], g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    accumulate(&mut grads[a.0], ga);
                    accumulate(&mut grads[b.0], gb);
                }
                Op::AddScalar(a) => accumulate(&mut grads[a.0], g),
                Op::Silu(a) => {
                    let ga = &g * &self.value(*a).mapv(silu_grad);
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Concat(parts) => {
                    let mut col = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        accumulate(&mut grads[p.0], g.slice(s![.., col..col + w]).to_owned());
                        col += w;
                    }
                }
                Op::Gather(table, rows) => {
                    let mut gt = Array2::zeros(self.value(*table).raw_dim());
                    for (i, r) in rows.iter().enumerate() {
                        if let Some(r) = r {
                            let mut dst = gt.row_mut(*r);
                            dst += &g.row(i);
                        }
                    }
                    accumulate(&mut grads[table.0], gt);
                }
                Op::WeightedSse {
                    pred,
                    target,
                    weights,
                } => {
                    let p = self.value(*pred);
                    let scale = 2.0 * g[[0, 0]] / p.nrows() as f64;
                    let mut gp = p - target;
                    for (mut row, w) in gp.rows_mut().into_iter().zip(weights) {
                        row *= scale * w;
                    }
                    accumulate(&mut grads[pred.0], gp);
                }
            }
        }
        for (k, o) in out.iter_mut().enumerate() {
            if o.is_none() {
                if let Some(n) = self
                    .nodes
                    .iter()
                    .find(|n| matches!(n.op, Op::Param(j) if j == k))
                {
                    *o = Some(Array2::zeros(n.value.raw_dim()));
                }
            }
        }
        out
    }
}

fn accumulate(slot: &mut Option<Array2<f64>>, g: Array2<f64>) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

pub(crate) fn silu(z: f64) -> f64 {
    z / (1.0 + (-z).exp())
}

fn silu_grad(z: f64) -> f64 {
    let s = 1.0 / (1.0 + (-z).exp());
    s * (1.0 + z * (1.0 - s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn matmul_and_loss_gradients() {
        // L = ½·‖xW − t‖² / 1 with w = 0.5 weight per row.
        let x = array![[1.0, 2.0]];
        let w = array![[0.5], [-1.0]];
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let wv = tape.param(0, &w);
        let y = tape.matmul(xv, wv);
        let loss = tape.weighted_sse(y, array![[1.0]], array![0.5]);
        // y = -1.5, residual -2.5, L = 0.5·6.25
        assert!((tape.value(loss)[[0, 0]] - 3.125).abs() < 1e-15);
        let g = tape.backward(loss, 1)[0].clone().unwrap();
        // dL/dW = 2·0.5·(−2.5)·xᵀ
        assert!((g[[0, 0]] + 2.5).abs() < 1e-15 && (g[[1, 0]] + 5.0).abs() < 1e-15);
    }

    #[test]
    fn silu_derivative_matches_differences() {
        for z in [-4.0, -0.3, 0.0, 0.7, 5.0] {
            let h = 1e-6;
            let fd = (silu(z + h) - silu(z - h)) / (2.0 * h);
            assert!((fd - silu_grad(z)).abs() < 1e-8);
        }
    }

    #[test]
    fn gather_skips_null_rows() {
        let table = array![[1.0, 2.0], [3.0, 4.0]];
        let mut tape = Tape::new();
        let t = tape.param(0, &table);
        let g = tape.gather(t, vec![Some(1), None, Some(1)]);
        assert_eq!(tape.value(g), &array![[3.0, 4.0], [0.0, 0.0], [3.0, 4.0]]);
        let loss = tape.weighted_sse(g, Array2::zeros((3, 2)), array![1.0, 1.0, 1.0]);
        let grad = tape.backward(loss, 1)[0].clone().unwrap();
        assert_eq!(grad.row(0), array![0.0, 0.0]);
        assert!(grad[[1, 0]] > 0.0);
    }
}
