//! Define-by-run tape with exact reverse-mode gradients.

use std::rc::Rc;

use thiserror::Error;

use super::{matmul, matmul_at, matmul_bt, Tensor};

/// Floor applied inside logarithms of probabilities.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite value produced by node {index} ({op})")]
    NonFinite { index: usize, op: &'static str },
}

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Sparse weighted row selection: output row `r` is `Σ w · table[idx]`.
pub type BagRows = Rc<Vec<Vec<(usize, f64)>>>;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Concat(Vec<Var>),
    Bag {
        table: Var,
        rows: BagRows,
    },
    Blend {
        new: Var,
        old: Var,
        mask: Rc<Vec<f64>>,
    },
    Noise {
        z: Var,
        p: Var,
    },
    BceProb {
        probs: Var,
        targets: Rc<Tensor>,
        weights: Rc<Tensor>,
    },
    BceLogits {
        logits: Var,
        targets: Rc<Tensor>,
        weights: Rc<Tensor>,
    },
    BinaryKl {
        p: Var,
        q: Var,
        weights: Rc<Tensor>,
    },
    Sum(Var),
    RowCosine(Var, Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddConst(..) => "add_const",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Concat(..) => "concat",
            Op::Bag { .. } => "bag",
            Op::Blend { .. } => "blend",
            Op::Noise { .. } => "noise_channel",
            Op::BceProb { .. } => "bce_prob",
            Op::BceLogits { .. } => "bce_logits",
            Op::BinaryKl { .. } => "binary_kl",
            Op::Sum(..) => "sum",
            Op::RowCosine(..) => "row_cosine",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// A single-threaded computation record. Build one per forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn clamp_prob(v: f64) -> f64 {
    v.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Leaf node (parameter, input or constant).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (n, k) = self.dims(a);
        let (k2, m) = self.dims(b);
        assert_eq!(k, k2, "matmul inner dimensions");
        let out = matmul(self.value(a).data(), self.value(b).data(), n, k, m);
        self.push(
            Tensor {
                shape: vec![n, m],
                data: out,
            },
            Op::MatMul(a, b),
        )
    }

    /// Adds a `1×m` bias to every row of an `n×m` matrix.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let (n, m) = self.dims(a);
        assert_eq!(self.value(bias).len(), m, "bias width");
        let mut out = self.value(a).clone();
        let b = self.value(bias).data().to_vec();
        for r in 0..n {
            for (o, bv) in out.data[r * m..(r + 1) * m].iter_mut().zip(&b) {
                *o += bv;
            }
        }
        out.shape = vec![n, m];
        self.push(out, Op::AddBias(a, bias))
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.len(), tb.len(), "elementwise shapes");
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = ta.shape().to_vec();
        self.push(Tensor { shape, data }, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| c * x);
        self.push(v, Op::Scale(a, c))
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::AddConst(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    /// Column-wise concatenation of matrices with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let n = self.dims(parts[0]).0;
        let widths: Vec<usize> = parts.iter().map(|&p| self.dims(p).1).collect();
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; n * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            assert_eq!(self.dims(p).0, n, "concat rows");
            let src = self.value(p).data();
            for r in 0..n {
                data[r * total + off..r * total + off + w]
                    .copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            off += w;
        }
        self.push(
            Tensor {
                shape: vec![n, total],
                data,
            },
            Op::Concat(parts.to_vec()),
        )
    }

    /// Weighted sums of table rows. An empty bag yields a zero row.
    pub fn bag(&mut self, table: Var, rows: BagRows) -> Var {
        let d = self.dims(table).1;
        let t = self.value(table).data();
        let mut data = vec![0.0; rows.len() * d];
        for (r, bag) in rows.iter().enumerate() {
            let out = &mut data[r * d..(r + 1) * d];
            for &(idx, w) in bag {
                for (o, &tv) in out.iter_mut().zip(&t[idx * d..(idx + 1) * d]) {
                    *o += w * tv;
                }
            }
        }
        let n = rows.len();
        self.push(
            Tensor {
                shape: vec![n, d],
                data,
            },
            Op::Bag { table, rows },
        )
    }

    /// Row-wise `mask·new + (1 − mask)·old`.
    pub fn blend(&mut self, new: Var, old: Var, mask: Rc<Vec<f64>>) -> Var {
        let (n, m) = self.dims(new);
        assert_eq!(mask.len(), n);
        let (a, b) = (self.value(new).data(), self.value(old).data());
        let mut data = vec![0.0; n * m];
        for r in 0..n {
            let w = mask[r];
            for c in 0..m {
                let i = r * m + c;
                data[i] = w * a[i] + (1.0 - w) * b[i];
            }
        }
        self.push(
            Tensor {
                shape: vec![n, m],
                data,
            },
            Op::Blend { new, old, mask },
        )
    }

    /// Per-type flip channel: `p·z + (1 − p)·(1 − z)` with `p` broadcast over rows.
    pub fn noise_channel(&mut self, z: Var, p: Var) -> Var {
        let (n, m) = self.dims(z);
        assert_eq!(self.value(p).len(), m, "noise parameter width");
        let pv = self.value(p).data().to_vec();
        let zv = self.value(z).data();
        let mut data = vec![0.0; n * m];
        for r in 0..n {
            for c in 0..m {
                let (zz, pp) = (zv[r * m + c], pv[c]);
                data[r * m + c] = pp * zz + (1.0 - pp) * (1.0 - zz);
            }
        }
        self.push(
            Tensor {
                shape: vec![n, m],
                data,
            },
            Op::Noise { z, p },
        )
    }

    /// `Σ w·BCE(prob, target)` with probabilities clamped away from 0 and 1.
    pub fn bce_prob(&mut self, probs: Var, targets: Rc<Tensor>, weights: Rc<Tensor>) -> Var {
        let pv = self.value(probs).data();
        assert_eq!(pv.len(), targets.len());
        assert_eq!(pv.len(), weights.len());
        let mut total = 0.0;
        for ((&p, &t), &w) in pv.iter().zip(targets.data()).zip(weights.data()) {
            if w == 0.0 {
                continue;
            }
            let p = clamp_prob(p);
            total -= w * (t * p.ln() + (1.0 - t) * (1.0 - p).ln());
        }
        self.push(
            Tensor::scalar(total),
            Op::BceProb {
                probs,
                targets,
                weights,
            },
        )
    }

    /// `Σ w·BCE(σ(logit), target)` in log-sigmoid form.
    pub fn bce_logits(&mut self, logits: Var, targets: Rc<Tensor>, weights: Rc<Tensor>) -> Var {
        let lv = self.value(logits).data();
        assert_eq!(lv.len(), targets.len());
        assert_eq!(lv.len(), weights.len());
        let mut total = 0.0;
        for ((&x, &t), &w) in lv.iter().zip(targets.data()).zip(weights.data()) {
            if w == 0.0 {
                continue;
            }
            total -= w * (t * log_sigmoid(x) + (1.0 - t) * log_sigmoid(-x));
        }
        self.push(
            Tensor::scalar(total),
            Op::BceLogits {
                logits,
                targets,
                weights,
            },
        )
    }

    /// `Σ w·KL(Bern(p) ‖ Bern(q))` elementwise, probabilities clamped.
    pub fn binary_kl(&mut self, p: Var, q: Var, weights: Rc<Tensor>) -> Var {
        let (pv, qv) = (self.value(p).data(), self.value(q).data());
        assert_eq!(pv.len(), qv.len());
        assert_eq!(pv.len(), weights.len());
        let mut total = 0.0;
        for ((&a, &b), &w) in pv.iter().zip(qv).zip(weights.data()) {
            if w == 0.0 {
                continue;
            }
            total += w * binary_kl(a, b);
        }
        self.push(Tensor::scalar(total), Op::BinaryKl { p, q, weights })
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Row-wise cosine similarity, `n×1`. A zero row has similarity 0.
    pub fn row_cosine(&mut self, a: Var, b: Var) -> Var {
        let (n, m) = self.dims(a);
        assert_eq!(self.dims(b), (n, m));
        let (av, bv) = (self.value(a), self.value(b));
        let data = (0..n)
            .map(|r| super::cosine(av.row_slice(r), bv.row_slice(r)))
            .collect();
        self.push(
            Tensor {
                shape: vec![n, 1],
                data,
            },
            Op::RowCosine(a, b),
        )
    }

    /// First node holding a NaN or infinity, if any.
    pub fn check_finite(&self) -> Result<(), GraphError> {
        for (index, node) in self.nodes.iter().enumerate() {
            if !node.value.is_finite() {
                return Err(GraphError::NonFinite {
                    index,
                    op: node.op.name(),
                });
            }
        }
        Ok(())
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients, GraphError> {
        let shape = self.value(loss).shape().to_vec();
        if self.value(loss).len() != 1 {
            return Err(GraphError::NonScalarLoss(shape));
        }
        self.check_finite()?;
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(&shape, 1.0));

        for i in (0..=loss.0).rev() {
            let Some(gout) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            let go = gout.data();
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(gout);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (n, k) = self.dims(*a);
                    let m = self.dims(*b).1;
                    let da = matmul_bt(go, self.value(*b).data(), n, m, k);
                    let db = matmul_at(self.value(*a).data(), go, n, k, m);
                    accumulate(&mut grads, *a, self.value(*a), da);
                    accumulate(&mut grads, *b, self.value(*b), db);
                }
                Op::AddBias(a, bias) => {
                    let (n, m) = self.dims(*a);
                    let mut db = vec![0.0; m];
                    for r in 0..n {
                        for (d, g) in db.iter_mut().zip(&go[r * m..(r + 1) * m]) {
                            *d += g;
                        }
                    }
                    accumulate(&mut grads, *a, self.value(*a), go.to_vec());
                    accumulate(&mut grads, *bias, self.value(*bias), db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, self.value(*a), go.to_vec());
                    accumulate(&mut grads, *b, self.value(*b), go.to_vec());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, self.value(*a), go.to_vec());
                    accumulate(
                        &mut grads,
                        *b,
                        self.value(*b),
                        go.iter().map(|g| -g).collect(),
                    );
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    let da = go.iter().zip(bv).map(|(g, y)| g * y).collect();
                    let db = go.iter().zip(av).map(|(g, x)| g * x).collect();
                    accumulate(&mut grads, *a, self.value(*a), da);
                    accumulate(&mut grads, *b, self.value(*b), db);
                }
                Op::Scale(a, c) => {
                    accumulate(
                        &mut grads,
                        *a,
                        self.value(*a),
                        go.iter().map(|g| c * g).collect(),
                    );
                }
                Op::AddConst(a) => {
                    accumulate(&mut grads, *a, self.value(*a), go.to_vec());
                }
                Op::Relu(a) => {
                    let x = self.value(*a).data();
                    let d = go
                        .iter()
                        .zip(x)
                        .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *a, self.value(*a), d);
                }
                Op::Sigmoid(a) => {
                    let y = node.value.data();
                    let d = go.iter().zip(y).map(|(g, &s)| g * s * (1.0 - s)).collect();
                    accumulate(&mut grads, *a, self.value(*a), d);
                }
                Op::Tanh(a) => {
                    let y = node.value.data();
                    let d = go.iter().zip(y).map(|(g, &t)| g * (1.0 - t * t)).collect();
                    accumulate(&mut grads, *a, self.value(*a), d);
                }
                Op::Concat(parts) => {
                    let n = node.value.rows();
                    let total = node.value.cols();
                    let mut off = 0;
                    for &p in parts {
                        let w = self.dims(p).1;
                        let mut d = vec![0.0; n * w];
                        for r in 0..n {
                            d[r * w..(r + 1) * w]
                                .copy_from_slice(&go[r * total + off..r * total + off + w]);
                        }
                        accumulate(&mut grads, p, self.value(p), d);
                        off += w;
                    }
                }
                Op::Bag { table, rows } => {
                    let d = self.dims(*table).1;
                    let mut dt = vec![0.0; self.value(*table).len()];
                    for (r, bag) in rows.iter().enumerate() {
                        let g = &go[r * d..(r + 1) * d];
                        for &(idx, w) in bag {
                            for (o, gv) in dt[idx * d..(idx + 1) * d].iter_mut().zip(g) {
                                *o += w * gv;
                            }
                        }
                    }
                    accumulate(&mut grads, *table, self.value(*table), dt);
                }
                Op::Blend { new, old, mask } => {
                    let (n, m) = self.dims(*new);
                    let mut dn = vec![0.0; n * m];
                    let mut dold = vec![0.0; n * m];
                    for r in 0..n {
                        for c in 0..m {
                            let i = r * m + c;
                            dn[i] = mask[r] * go[i];
                            dold[i] = (1.0 - mask[r]) * go[i];
                        }
                    }
                    accumulate(&mut grads, *new, self.value(*new), dn);
                    accumulate(&mut grads, *old, self.value(*old), dold);
                }
                Op::Noise { z, p } => {
                    let (n, m) = self.dims(*z);
                    let (zv, pv) = (self.value(*z).data(), self.value(*p).data());
                    let mut dz = vec![0.0; n * m];
                    let mut dp = vec![0.0; m];
                    for r in 0..n {
                        for c in 0..m {
                            let i = r * m + c;
                            dz[i] = go[i] * (2.0 * pv[c] - 1.0);
                            dp[c] += go[i] * (2.0 * zv[i] - 1.0);
                        }
                    }
                    accumulate(&mut grads, *z, self.value(*z), dz);
                    accumulate(&mut grads, *p, self.value(*p), dp);
                }
                Op::BceProb {
                    probs,
                    targets,
                    weights,
                } => {
                    let g0 = go[0];
                    let pv = self.value(*probs).data();
                    let d = pv
                        .iter()
                        .zip(targets.data())
                        .zip(weights.data())
                        .map(|((&p, &t), &w)| {
                            if w == 0.0 || p <= PROB_FLOOR || p >= 1.0 - PROB_FLOOR {
                                0.0
                            } else {
                                g0 * w * (-t / p + (1.0 - t) / (1.0 - p))
                            }
                        })
                        .collect();
                    accumulate(&mut grads, *probs, self.value(*probs), d);
                }
                Op::BceLogits {
                    logits,
                    targets,
                    weights,
                } => {
                    let g0 = go[0];
                    let lv = self.value(*logits).data();
                    let d = lv
                        .iter()
                        .zip(targets.data())
                        .zip(weights.data())
                        .map(|((&x, &t), &w)| g0 * w * (sigmoid(x) - t))
                        .collect();
                    accumulate(&mut grads, *logits, self.value(*logits), d);
                }
                Op::BinaryKl { p, q, weights } => {
                    let g0 = go[0];
                    let (pv, qv) = (self.value(*p).data(), self.value(*q).data());
                    let mut dp = vec![0.0; pv.len()];
                    let mut dq = vec![0.0; qv.len()];
                    for i in 0..pv.len() {
                        let w = weights.data()[i];
                        if w == 0.0 {
                            continue;
                        }
                        let (a, b) = (pv[i], qv[i]);
                        let (ac, bc) = (clamp_prob(a), clamp_prob(b));
                        if ac == a {
                            dp[i] = g0 * w * ((ac / bc).ln() - ((1.0 - ac) / (1.0 - bc)).ln());
                        }
                        if bc == b {
                            dq[i] = g0 * w * (-ac / bc + (1.0 - ac) / (1.0 - bc));
                        }
                    }
                    accumulate(&mut grads, *p, self.value(*p), dp);
                    accumulate(&mut grads, *q, self.value(*q), dq);
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    accumulate(&mut grads, *a, self.value(*a), vec![go[0]; n]);
                }
                Op::RowCosine(a, b) => {
                    let (n, m) = self.dims(*a);
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let mut da = vec![0.0; n * m];
                    let mut db = vec![0.0; n * m];
                    for r in 0..n {
                        let (x, y) = (ta.row_slice(r), tb.row_slice(r));
                        let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                        let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
                        if nx == 0.0 || ny == 0.0 {
                            continue;
                        }
                        let c = node.value.data()[r];
                        for k in 0..m {
                            da[r * m + k] = go[r] * (y[k] / (nx * ny) - c * x[k] / (nx * nx));
                            db[r * m + k] = go[r] * (x[k] / (nx * ny) - c * y[k] / (ny * ny));
                        }
                    }
                    accumulate(&mut grads, *a, ta, da);
                    accumulate(&mut grads, *b, tb, db);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

pub(crate) fn binary_kl(p: f64, q: f64) -> f64 {
    let (p, q) = (clamp_prob(p), clamp_prob(q));
    p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln()
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, like: &Tensor, d: Vec<f64>) {
    match &mut grads[v.0] {
        Some(g) => {
            for (a, b) in g.data.iter_mut().zip(&d) {
                *a += b;
            }
        }
        slot @ None => {
            *slot = Some(Tensor {
                shape: like.shape().to_vec(),
                data: d,
            })
        }
    }
}

/// Gradients of one backward sweep, indexed by leaf handle.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of `v`, or `None` if the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v` with zeros when the loss does not depend on it.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numeric(build: impl Fn(&mut Graph, Var) -> Var, x: &Tensor) -> Vec<f64> {
        let h = 1e-6;
        (0..x.len())
            .map(|i| {
                let eval = |delta: f64| {
                    let mut t = x.clone();
                    t.data_mut()[i] += delta;
                    let mut g = Graph::new();
                    let v = g.leaf(t);
                    let out = build(&mut g, v);
                    g.value(out).item()
                };
                (eval(h) - eval(-h)) / (2.0 * h)
            })
            .collect()
    }

    fn check(build: impl Fn(&mut Graph, Var) -> Var, x: Tensor) {
        let mut g = Graph::new();
        let v = g.leaf(x.clone());
        let out = build(&mut g, v);
        let grads = g.backward(out).unwrap();
        let analytic = grads.get_or_zeros(v, &x);
        for (a, n) in analytic.data().iter().zip(numeric(&build, &x)) {
            assert!((a - n).abs() < 1e-6 * (1.0 + a.abs()), "{a} vs {n}");
        }
    }

    fn x23() -> Tensor {
        Tensor::matrix(2, 3, vec![0.3, -0.7, 1.1, 0.5, 0.2, -1.4]).unwrap()
    }

    #[test]
    fn quadratic_gradient() {
        let mut g = Graph::new();
        let w = g.leaf(Tensor::row(vec![1.0, 2.0, 3.0]));
        let sq = g.mul(w, w);
        let loss = g.sum(sq);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn constant_loss_has_no_gradient() {
        let mut g = Graph::new();
        let w = g.leaf(Tensor::row(vec![1.0, 2.0]));
        let c = g.leaf(Tensor::scalar(3.0));
        let grads = g.backward(c).unwrap();
        assert!(grads.get(w).is_none());
        assert_eq!(grads.get_or_zeros(w, g.value(w)).data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let w = g.leaf(Tensor::row(vec![1.0, 2.0]));
        assert!(matches!(g.backward(w), Err(GraphError::NonScalarLoss(_))));
    }

    #[test]
    fn nan_is_reported_with_node() {
        let mut g = Graph::new();
        let w = g.leaf(Tensor::row(vec![f64::NAN]));
        let s = g.sum(w);
        assert_eq!(
            g.backward(s).unwrap_err(),
            GraphError::NonFinite {
                index: 0,
                op: "leaf"
            }
        );
    }

    #[test]
    fn elementwise_ops() {
        check(
            |g, x| {
                let y = g.tanh(x);
                g.sum(y)
            },
            x23(),
        );
        check(
            |g, x| {
                let y = g.sigmoid(x);
                let z = g.mul(y, x);
                g.sum(z)
            },
            x23(),
        );
        check(
            |g, x| {
                let y = g.relu(x);
                let z = g.scale(y, 2.5);
                g.sum(z)
            },
            x23(),
        );
        check(
            |g, x| {
                let y = g.add_const(x, 0.3);
                let z = g.mul(y, y);
                g.sum(z)
            },
            x23(),
        );
        check(
            |g, x| {
                let y = g.sigmoid(x);
                let z = g.sub(x, y);
                let q = g.mul(z, z);
                g.sum(q)
            },
            x23(),
        );
    }

    #[test]
    fn matmul_and_bias() {
        let w = Tensor::matrix(3, 2, vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6]).unwrap();
        check(
            |g, x| {
                let wv = g.leaf(w.clone());
                let m = g.matmul(x, wv);
                let b = g.leaf(Tensor::row(vec![0.1, -0.1]));
                let o = g.add_bias(m, b);
                let t = g.tanh(o);
                g.sum(t)
            },
            x23(),
        );
        // gradient w.r.t. the right operand and the bias
        let xin = x23();
        check(
            |g, wv| {
                let x = g.leaf(xin.clone());
                let m = g.matmul(x, wv);
                let t = g.sigmoid(m);
                g.sum(t)
            },
            w.clone(),
        );
        check(
            |g, b| {
                let x = g.leaf(xin.clone());
                let wv = g.leaf(w.clone());
                let m = g.matmul(x, wv);
                let o = g.add_bias(m, b);
                let t = g.sigmoid(o);
                let t2 = g.mul(t, t);
                g.sum(t2)
            },
            Tensor::row(vec![0.2, -0.3]),
        );
    }

    #[test]
    fn concat_bag_blend() {
        let rows: BagRows = Rc::new(vec![vec![(0, 1.0), (2, 2.0)], vec![], vec![(1, 0.5)]]);
        check(
            |g, table| {
                let b = g.bag(table, rows.clone());
                let t = g.tanh(b);
                let other = g.leaf(Tensor::matrix(3, 1, vec![0.1, 0.2, 0.3]).unwrap());
                let c = g.concat(&[t, other, b]);
                let s = g.sigmoid(c);
                g.sum(s)
            },
            Tensor::matrix(3, 2, vec![0.3, -0.1, 0.8, 0.5, -0.4, 0.2]).unwrap(),
        );
        let mask = Rc::new(vec![1.0, 0.0]);
        check(
            |g, x| {
                let y = g.tanh(x);
                let b = g.blend(y, x, mask.clone());
                let q = g.mul(b, b);
                g.sum(q)
            },
            x23(),
        );
    }

    #[test]
    fn noise_and_losses() {
        let targets = Rc::new(Tensor::matrix(2, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap());
        let weights = Rc::new(Tensor::matrix(2, 3, vec![0.5, 0.5, 0.5, 1.0, 0.0, 1.0]).unwrap());
        let (t2, w2) = (targets.clone(), weights.clone());
        check(
            move |g, x| {
                let z = g.sigmoid(x);
                let p = g.leaf(Tensor::row(vec![0.9, 0.7, 0.6]));
                let y = g.noise_channel(z, p);
                g.bce_prob(y, t2.clone(), w2.clone())
            },
            x23(),
        );
        check(
            |g, p| {
                let z = g.leaf(Tensor::matrix(2, 3, vec![0.2, 0.7, 0.9, 0.4, 0.55, 0.1]).unwrap());
                let y = g.noise_channel(z, p);
                g.bce_prob(y, targets.clone(), weights.clone())
            },
            Tensor::row(vec![0.9, 0.7, 0.6]),
        );
        let t3 = Rc::new(Tensor::matrix(2, 3, vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap());
        let w3 = Rc::new(Tensor::filled(&[2, 3], 1.0));
        check(move |g, x| g.bce_logits(x, t3.clone(), w3.clone()), x23());
        let w4 = Rc::new(Tensor::filled(&[2, 3], 0.7));
        check(
            move |g, x| {
                let p = g.sigmoid(x);
                let shifted = g.add_const(x, 0.4);
                let q = g.sigmoid(shifted);
                g.binary_kl(p, q, w4.clone())
            },
            x23(),
        );
    }

    #[test]
    fn row_cosine_gradient() {
        let other = Tensor::matrix(2, 3, vec![0.4, 0.1, -0.2, -0.3, 0.9, 0.6]).unwrap();
        check(
            |g, x| {
                let o = g.leaf(other.clone());
                let c = g.row_cosine(x, o);
                let s = g.mul(c, c);
                g.sum(s)
            },
            x23(),
        );
    }

    #[test]
    fn bce_logits_matches_probability_form() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::row(vec![0.3, -2.0]));
        let t = Rc::new(Tensor::row(vec![1.0, 0.0]));
        let w = Rc::new(Tensor::row(vec![1.0, 1.0]));
        let a = g.bce_logits(x, t.clone(), w.clone());
        let p = g.sigmoid(x);
        let b = g.bce_prob(p, t, w);
        assert!((g.value(a).item() - g.value(b).item()).abs() < 1e-12);
    }
}
