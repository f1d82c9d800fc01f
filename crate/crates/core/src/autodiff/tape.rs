//! Reverse-mode automatic differentiation over a per-batch tape.
//!
//! A tape is built fresh for every forward pass: leaves are inputs
//! (constants) and parameters, interior nodes record the operation and
//! whatever context the backward pass needs. Creation order is
//! topological, so the backward pass is a single reverse sweep.

use crate::error::{Error, Result};

use super::tensor::Tensor;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

pub const BN_EPS: f64 = 1e-5;

enum Op {
    /// Constant leaf: no gradient propagation.
    Input,
    /// Parameter leaf: gradient collected after backward.
    Param,
    MatMul(Var, Var),
    /// Row-broadcast bias add: (B x C) + (1 x C).
    AddBias(Var, Var),
    Add(Var, Var),
    Relu(Var),
    Tanh(Var),
    Abs(Var),
    Square(Var),
    /// Elementwise multiply by a constant tensor of the same shape.
    MulConst(Var, Tensor),
    /// Subtract a constant tensor of the same shape.
    SubConst(Var),
    /// Per-column max over rows: (N x C) -> (1 x C); saved argmax rows.
    ColMax(Var, Vec<usize>),
    /// Horizontal concat of 1-row tensors.
    ConcatCols(Vec<Var>),
    /// Vertical stack of equal-width tensors.
    StackRows(Vec<Var>),
    /// Column slice [start, end).
    SliceCols(Var, usize),
    /// Row slice [start, end).
    SliceRows(Var, usize),
    /// Batch normalization; saves (mode, xhat, inv_std) for backward.
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    /// Rotate N x 3 points by the normalized quaternion (1 x 4, wxyz).
    QuatRotate { quat: Var, points: Var },
    SumAll(Var),
    MeanAll(Var),
    /// Per-row binary cross entropy with logits; labels in {0, 1}.
    BceWithLogits(Var, Tensor),
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last backward target with respect to `v`. Zero
    /// tensor if the node never received a gradient.
    pub fn grad(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        n.grad
            .clone()
            .unwrap_or_else(|| Tensor::zeros(n.value.rows, n.value.cols))
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Param)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let x = self.value(a);
        let b = self.value(bias);
        assert_eq!(b.rows, 1);
        assert_eq!(x.cols, b.cols);
        let mut out = x.clone();
        for r in 0..out.rows {
            for c in 0..out.cols {
                *out.at_mut(r, c) += b.at(0, c);
            }
        }
        self.push(out, Op::AddBias(a, bias))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let x = self.value(a);
        let y = self.value(b);
        assert!(x.same_shape(y));
        let mut out = x.clone();
        out.add_in_place(y);
        self.push(out, Op::Add(a, b))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::abs);
        self.push(value, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v * v);
        self.push(value, Op::Square(a))
    }

    pub fn mul_const(&mut self, a: Var, k: Tensor) -> Var {
        let x = self.value(a);
        assert!(x.same_shape(&k));
        let mut out = x.clone();
        for (o, &c) in out.data.iter_mut().zip(&k.data) {
            *o *= c;
        }
        self.push(out, Op::MulConst(a, k))
    }

    pub fn sub_const(&mut self, a: Var, k: Tensor) -> Var {
        let x = self.value(a);
        assert!(x.same_shape(&k));
        let mut out = x.clone();
        for (o, &c) in out.data.iter_mut().zip(&k.data) {
            *o -= c;
        }
        self.push(out, Op::SubConst(a))
    }

    /// Channel-wise max over the rows of an N x C tensor. Gradient flows
    /// only to the argmax row per column; ties to the first such row.
    pub fn col_max(&mut self, a: Var) -> Var {
        let x = self.value(a);
        assert!(x.rows >= 1);
        let mut out = Tensor::zeros(1, x.cols);
        let mut argmax = vec![0usize; x.cols];
        for c in 0..x.cols {
            let mut best = x.at(0, c);
            let mut best_r = 0;
            for r in 1..x.rows {
                let v = x.at(r, c);
                if v > best {
                    best = v;
                    best_r = r;
                }
            }
            out.data[c] = best;
            argmax[c] = best_r;
        }
        self.push(out, Op::ColMax(a, argmax))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.rows, 1);
            data.extend_from_slice(&t.data);
        }
        let value = Tensor::row(data);
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn stack_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.cols, cols);
            rows += t.rows;
            data.extend_from_slice(&t.data);
        }
        let value = Tensor::from_vec(rows, cols, data);
        self.push(value, Op::StackRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let x = self.value(a);
        assert!(start < end && end <= x.cols);
        let mut out = Tensor::zeros(x.rows, end - start);
        for r in 0..x.rows {
            for c in start..end {
                *out.at_mut(r, c - start) = x.at(r, c);
            }
        }
        self.push(out, Op::SliceCols(a, start))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let x = self.value(a);
        assert!(start < end && end <= x.rows);
        let out = Tensor::from_vec(
            end - start,
            x.cols,
            x.data[start * x.cols..end * x.cols].to_vec(),
        );
        self.push(out, Op::SliceRows(a, start))
    }

    /// Batch normalization over the row (batch) dimension of a B x C
    /// tensor. In train mode batch statistics are used and returned as
    /// `(mean, var)` so the caller can update running stats; in eval mode
    /// the provided running stats are used and `None` is returned.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running: Option<(&[f64], &[f64])>,
        mode: BnMode,
    ) -> Result<(Var, Option<(Vec<f64>, Vec<f64>)>)> {
        let x = self.value(input).clone();
        let g = self.value(gamma).clone();
        let b = self.value(beta).clone();
        if g.cols != x.cols || b.cols != x.cols || g.rows != 1 || b.rows != 1 {
            return Err(Error::ShapeMismatch(format!(
                "batch_norm: input {}x{}, gamma 1x{}, beta 1x{}",
                x.rows, x.cols, g.cols, b.cols
            )));
        }
        let (mean, var, batch_stats) = match mode {
            BnMode::Train => {
                if x.rows < 2 {
                    return Err(Error::BatchTooSmall(x.rows));
                }
                let mut mean = vec![0.0; x.cols];
                let mut var = vec![0.0; x.cols];
                for c in 0..x.cols {
                    let mut m = 0.0;
                    for r in 0..x.rows {
                        m += x.at(r, c);
                    }
                    m /= x.rows as f64;
                    let mut v = 0.0;
                    for r in 0..x.rows {
                        let d = x.at(r, c) - m;
                        v += d * d;
                    }
                    v /= x.rows as f64;
                    mean[c] = m;
                    var[c] = v;
                }
                (mean.clone(), var.clone(), Some((mean, var)))
            }
            BnMode::Eval => {
                let (rm, rv) = running.ok_or_else(|| {
                    Error::ShapeMismatch("batch_norm eval mode needs running stats".into())
                })?;
                (rm.to_vec(), rv.to_vec(), None)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut xhat = Tensor::zeros(x.rows, x.cols);
        let mut out = Tensor::zeros(x.rows, x.cols);
        for r in 0..x.rows {
            for c in 0..x.cols {
                let h = (x.at(r, c) - mean[c]) * inv_std[c];
                *xhat.at_mut(r, c) = h;
                *out.at_mut(r, c) = g.at(0, c) * h + b.at(0, c);
            }
        }
        let var_handle = self.push(
            out,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                mode,
                xhat,
                inv_std,
            },
        );
        Ok((var_handle, batch_stats))
    }

    /// Rotate each row of an N x 3 point tensor by the quaternion (1 x 4,
    /// (w, x, y, z) order), normalized internally.
    pub fn quat_rotate(&mut self, quat: Var, points: Var) -> Result<Var> {
        let q = self.value(quat);
        let p = self.value(points);
        if q.rows != 1 || q.cols != 4 || p.cols != 3 {
            return Err(Error::ShapeMismatch(format!(
                "quat_rotate: quat {}x{}, points {}x{}",
                q.rows, q.cols, p.rows, p.cols
            )));
        }
        let norm = q.data.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(Error::NonFinite("quaternion norm underflow".into()));
        }
        let r: Vec<f64> = q.data.iter().map(|v| v / norm).collect();
        let m = crate::math::quat_to_matrix([r[0], r[1], r[2], r[3]]);
        let mut out = Tensor::zeros(p.rows, 3);
        for i in 0..p.rows {
            let v = crate::math::Vec3::new(p.at(i, 0), p.at(i, 1), p.at(i, 2));
            let rv = crate::math::mat_apply(&m, v);
            *out.at_mut(i, 0) = rv.x;
            *out.at_mut(i, 1) = rv.y;
            *out.at_mut(i, 2) = rv.z;
        }
        Ok(self.push(out, Op::QuatRotate { quat, points }))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data.iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s: f64 = t.data.iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::MeanAll(a))
    }

    /// Numerically stable per-row BCE with logits:
    /// `max(z, 0) - z*y + ln(1 + exp(-|z|))`.
    pub fn bce_with_logits(&mut self, logits: Var, labels: Tensor) -> Var {
        let z = self.value(logits);
        assert!(z.same_shape(&labels));
        let mut out = Tensor::zeros(z.rows, z.cols);
        for i in 0..z.len() {
            let zi = z.data[i];
            let yi = labels.data[i];
            out.data[i] = zi.max(0.0) - zi * yi + (-zi.abs()).exp().ln_1p();
        }
        self.push(out, Op::BceWithLogits(logits, labels))
    }

    fn accumulate(&mut self, v: Var, g: Tensor) {
        let node = &mut self.nodes[v.0];
        match &mut node.grad {
            Some(existing) => existing.add_in_place(&g),
            None => node.grad = Some(g),
        }
    }

    /// Accumulate a gradient that covers only the row range starting at
    /// `start` of `v`'s value, without materializing a full-size tensor.
    fn accumulate_rows(&mut self, v: Var, start: usize, g: &Tensor) {
        let node = &mut self.nodes[v.0];
        let (rows, cols) = (node.value.rows, node.value.cols);
        let grad = node
            .grad
            .get_or_insert_with(|| Tensor::zeros(rows, cols));
        let dst = &mut grad.data[start * cols..(start + g.rows) * cols];
        for (d, s) in dst.iter_mut().zip(&g.data) {
            *d += *s;
        }
    }

    /// Backpropagate from a scalar node. Gradients accumulate into every
    /// node; parameter gradients are read with [`Tape::grad`].
    pub fn backward(&mut self, target: Var) -> Result<()> {
        let t = &self.nodes[target.0];
        if t.value.len() != 1 {
            return Err(Error::ShapeMismatch("backward target must be scalar".into()));
        }
        self.nodes[target.0].grad = Some(Tensor::scalar(1.0));

        for i in (0..self.nodes.len()).rev() {
            let g = match self.nodes[i].grad.clone() {
                Some(g) => g,
                None => continue,
            };
            // borrow bookkeeping: clone whatever backward needs, then
            // accumulate into inputs
            match &self.nodes[i].op {
                Op::Input | Op::Param => {}
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    let av = self.nodes[a.0].value.clone();
                    let bv = self.nodes[b.0].value.clone();
                    let ga = g.matmul_t(&bv);
                    let gb = av.t_matmul(&g);
                    self.accumulate(a, ga);
                    self.accumulate(b, gb);
                }
                Op::AddBias(a, bias) => {
                    let (a, bias) = (*a, *bias);
                    let mut gb = Tensor::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for c in 0..g.cols {
                            gb.data[c] += g.at(r, c);
                        }
                    }
                    self.accumulate(a, g);
                    self.accumulate(bias, gb);
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    self.accumulate(a, g.clone());
                    self.accumulate(b, g);
                }
                Op::Relu(a) => {
                    let a = *a;
                    let x = &self.nodes[a.0].value;
                    let mut gx = g.clone();
                    for (gv, &xv) in gx.data.iter_mut().zip(&x.data) {
                        if xv <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                    self.accumulate(a, gx);
                }
                Op::Tanh(a) => {
                    let a = *a;
                    let y = self.nodes[i].value.clone();
                    let mut gx = g.clone();
                    for (gv, &yv) in gx.data.iter_mut().zip(&y.data) {
                        *gv *= 1.0 - yv * yv;
                    }
                    self.accumulate(a, gx);
                }
                Op::Abs(a) => {
                    let a = *a;
                    let x = &self.nodes[a.0].value;
                    let mut gx = g.clone();
                    for (gv, &xv) in gx.data.iter_mut().zip(&x.data) {
                        // subgradient 0 at the kink
                        *gv *= if xv > 0.0 {
                            1.0
                        } else if xv < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                    }
                    self.accumulate(a, gx);
                }
                Op::Square(a) => {
                    let a = *a;
                    let x = &self.nodes[a.0].value;
                    let mut gx = g.clone();
                    for (gv, &xv) in gx.data.iter_mut().zip(&x.data) {
                        *gv *= 2.0 * xv;
                    }
                    self.accumulate(a, gx);
                }
                Op::MulConst(a, k) => {
                    let a = *a;
                    let k = k.clone();
                    let mut gx = g.clone();
                    for (gv, &kv) in gx.data.iter_mut().zip(&k.data) {
                        *gv *= kv;
                    }
                    self.accumulate(a, gx);
                }
                Op::SubConst(a) => {
                    let a = *a;
                    self.accumulate(a, g);
                }
                Op::ColMax(a, argmax) => {
                    let a = *a;
                    let argmax = argmax.clone();
                    let x = &self.nodes[a.0].value;
                    let mut gx = Tensor::zeros(x.rows, x.cols);
                    for c in 0..x.cols {
                        *gx.at_mut(argmax[c], c) = g.data[c];
                    }
                    self.accumulate(a, gx);
                }
                Op::ConcatCols(parts) => {
                    let parts = parts.clone();
                    let mut offset = 0;
                    for p in parts {
                        let w = self.nodes[p.0].value.cols;
                        let gp = Tensor::row(g.data[offset..offset + w].to_vec());
                        offset += w;
                        self.accumulate(p, gp);
                    }
                }
                Op::StackRows(parts) => {
                    let parts = parts.clone();
                    let cols = g.cols;
                    let mut offset = 0;
                    for p in parts {
                        let rows = self.nodes[p.0].value.rows;
                        let gp = Tensor::from_vec(
                            rows,
                            cols,
                            g.data[offset * cols..(offset + rows) * cols].to_vec(),
                        );
                        offset += rows;
                        self.accumulate(p, gp);
                    }
                }
                Op::SliceCols(a, start) => {
                    let (a, start) = (*a, *start);
                    let x = &self.nodes[a.0].value;
                    let mut gx = Tensor::zeros(x.rows, x.cols);
                    for r in 0..g.rows {
                        for c in 0..g.cols {
                            *gx.at_mut(r, start + c) = g.at(r, c);
                        }
                    }
                    self.accumulate(a, gx);
                }
                Op::SliceRows(a, start) => {
                    let (a, start) = (*a, *start);
                    self.accumulate_rows(a, start, &g);
                }
                Op::BatchNorm {
                    input,
                    gamma,
                    beta,
                    mode,
                    xhat,
                    inv_std,
                } => {
                    let (input, gamma, beta, mode) = (*input, *gamma, *beta, *mode);
                    let xhat = xhat.clone();
                    let inv_std = inv_std.clone();
                    let gv = self.nodes[gamma.0].value.clone();
                    let rows = xhat.rows;
                    let cols = xhat.cols;

                    let mut ggamma = Tensor::zeros(1, cols);
                    let mut gbeta = Tensor::zeros(1, cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            ggamma.data[c] += g.at(r, c) * xhat.at(r, c);
                            gbeta.data[c] += g.at(r, c);
                        }
                    }

                    let mut gx = Tensor::zeros(rows, cols);
                    match mode {
                        BnMode::Train => {
                            let n = rows as f64;
                            for c in 0..cols {
                                let mut sum_dy = 0.0;
                                let mut sum_dy_xhat = 0.0;
                                for r in 0..rows {
                                    let dy = g.at(r, c) * gv.at(0, c);
                                    sum_dy += dy;
                                    sum_dy_xhat += dy * xhat.at(r, c);
                                }
                                for r in 0..rows {
                                    let dy = g.at(r, c) * gv.at(0, c);
                                    *gx.at_mut(r, c) = inv_std[c]
                                        * (dy - sum_dy / n - xhat.at(r, c) * sum_dy_xhat / n);
                                }
                            }
                        }
                        BnMode::Eval => {
                            for r in 0..rows {
                                for c in 0..cols {
                                    *gx.at_mut(r, c) = g.at(r, c) * gv.at(0, c) * inv_std[c];
                                }
                            }
                        }
                    }
                    self.accumulate(input, gx);
                    self.accumulate(gamma, ggamma);
                    self.accumulate(beta, gbeta);
                }
                Op::QuatRotate { quat, points } => {
                    let (quat, points) = (*quat, *points);
                    let qv = self.nodes[quat.0].value.clone();
                    let pv = self.nodes[points.0].value.clone();
                    let norm = qv.data.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let r: Vec<f64> = qv.data.iter().map(|v| v / norm).collect();
                    let (w, x, y, z) = (r[0], r[1], r[2], r[3]);
                    let m = crate::math::quat_to_matrix([w, x, y, z]);

                    // dR/dr_k, k = w, x, y, z
                    let dm = [
                        [
                            [0.0, -2.0 * z, 2.0 * y],
                            [2.0 * z, 0.0, -2.0 * x],
                            [-2.0 * y, 2.0 * x, 0.0],
                        ],
                        [
                            [0.0, 2.0 * y, 2.0 * z],
                            [2.0 * y, -4.0 * x, -2.0 * w],
                            [2.0 * z, 2.0 * w, -4.0 * x],
                        ],
                        [
                            [-4.0 * y, 2.0 * x, 2.0 * w],
                            [2.0 * x, 0.0, 2.0 * z],
                            [-2.0 * w, 2.0 * z, -4.0 * y],
                        ],
                        [
                            [-4.0 * z, -2.0 * w, 2.0 * x],
                            [2.0 * w, -4.0 * z, 2.0 * y],
                            [2.0 * x, 2.0 * y, 0.0],
                        ],
                    ];

                    // points gradient: R^T g_i per row
                    let mut gp = Tensor::zeros(pv.rows, 3);
                    for i in 0..pv.rows {
                        for a in 0..3 {
                            let mut acc = 0.0;
                            for b in 0..3 {
                                acc += m[b][a] * g.at(i, b);
                            }
                            *gp.at_mut(i, a) = acc;
                        }
                    }

                    // gradient wrt normalized quaternion
                    let mut gr = [0.0; 4];
                    for (k, dmk) in dm.iter().enumerate() {
                        let mut acc = 0.0;
                        for i in 0..pv.rows {
                            for a in 0..3 {
                                let mut dp = 0.0;
                                for b in 0..3 {
                                    dp += dmk[a][b] * pv.at(i, b);
                                }
                                acc += g.at(i, a) * dp;
                            }
                        }
                        gr[k] = acc;
                    }
                    // chain through normalization: dr/dq = (I - r r^T) / |q|
                    let dot: f64 = (0..4).map(|k| gr[k] * r[k]).sum();
                    let mut gq = Tensor::zeros(1, 4);
                    for k in 0..4 {
                        gq.data[k] = (gr[k] - dot * r[k]) / norm;
                    }
                    self.accumulate(points, gp);
                    self.accumulate(quat, gq);
                }
                Op::SumAll(a) => {
                    let a = *a;
                    let x = &self.nodes[a.0].value;
                    let gs = g.item();
                    let gx = Tensor::from_vec(x.rows, x.cols, vec![gs; x.len()]);
                    self.accumulate(a, gx);
                }
                Op::MeanAll(a) => {
                    let a = *a;
                    let x = &self.nodes[a.0].value;
                    let gs = g.item() / x.len() as f64;
                    let gx = Tensor::from_vec(x.rows, x.cols, vec![gs; x.len()]);
                    self.accumulate(a, gx);
                }
                Op::BceWithLogits(logits, labels) => {
                    let logits = *logits;
                    let labels = labels.clone();
                    let z = &self.nodes[logits.0].value;
                    let mut gx = g.clone();
                    for i in 0..z.len() {
                        // d/dz = sigma(z) - y
                        let s = 1.0 / (1.0 + (-z.data[i]).exp());
                        gx.data[i] *= s - labels.data[i];
                    }
                    self.accumulate(logits, gx);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Central finite difference of a scalar function of a flat parameter
    /// vector.
    pub fn finite_diff(
        f: &mut dyn FnMut(&[f64]) -> f64,
        params: &[f64],
        h: f64,
    ) -> Vec<f64> {
        let mut grads = Vec::with_capacity(params.len());
        let mut p = params.to_vec();
        for i in 0..params.len() {
            let orig = p[i];
            p[i] = orig + h;
            let fp = f(&p);
            p[i] = orig - h;
            let fm = f(&p);
            p[i] = orig;
            grads.push((fp - fm) / (2.0 * h));
        }
        grads
    }

    fn assert_close(analytic: &[f64], numeric: &[f64], tol: f64, what: &str) {
        for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
            let denom = a.abs().max(n.abs()).max(1e-6);
            assert!(
                (a - n).abs() / denom < tol,
                "{what}[{i}]: analytic {a} vs numeric {n}"
            );
        }
    }

    #[test]
    fn dense_identity_passthrough() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let w = tape.param(Tensor::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]));
        let b = tape.param(Tensor::row(vec![0.0, 0.0]));
        let h = tape.matmul(x, w);
        let y = tape.add_bias(h, b);
        assert_eq!(tape.value(y).data, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn dense_weight_gradient_is_input_sums() {
        // d sum(xW) / dW = column-replicated input sums
        let mut tape = Tape::new();
        let x = tape.input(Tensor::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let w = tape.param(Tensor::from_vec(2, 2, vec![0.5, -0.2, 0.1, 0.9]));
        let h = tape.matmul(x, w);
        let s = tape.sum_all(h);
        tape.backward(s).unwrap();
        // column sums of x: [4, 6] replicated across output columns
        assert_eq!(tape.grad(w).data, vec![4.0, 4.0, 6.0, 6.0]);
    }

    #[test]
    fn dense_gradcheck() {
        let mut rng = crate::rng::seeded_rng(50);
        let x_data: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w0: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b0: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let all: Vec<f64> = w0.iter().chain(&b0).copied().collect();
        let mut f = |p: &[f64]| {
            let mut tape = Tape::new();
            let x = tape.input(Tensor::from_vec(3, 4, x_data.clone()));
            let w = tape.param(Tensor::from_vec(4, 5, p[..20].to_vec()));
            let b = tape.param(Tensor::row(p[20..].to_vec()));
            let h = tape.matmul(x, w);
            let y = tape.add_bias(h, b);
            let t = tape.tanh(y);
            let s = tape.sum_all(t);
            tape.value(s).item()
        };
        let numeric = finite_diff(&mut f, &all, 1e-5);

        let mut tape = Tape::new();
        let x = tape.input(Tensor::from_vec(3, 4, x_data.clone()));
        let w = tape.param(Tensor::from_vec(4, 5, w0));
        let b = tape.param(Tensor::row(b0));
        let h = tape.matmul(x, w);
        let y = tape.add_bias(h, b);
        let t = tape.tanh(y);
        let s = tape.sum_all(t);
        tape.backward(s).unwrap();
        let analytic: Vec<f64> = tape.grad(w).data.into_iter().chain(tape.grad(b).data).collect();
        assert_close(&analytic, &numeric, 1e-6, "dense");
    }

    #[test]
    fn batch_norm_constant_channel_outputs_beta() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::from_vec(3, 1, vec![5.0, 5.0, 5.0]));
        let g = tape.param(Tensor::row(vec![2.0]));
        let b = tape.param(Tensor::row(vec![0.7]));
        let (y, stats) = tape.batch_norm(x, g, b, None, BnMode::Train).unwrap();
        for v in &tape.value(y).data {
            assert!((v - 0.7).abs() < 1e-9);
        }
        let (mean, var) = stats.unwrap();
        assert_eq!(mean, vec![5.0]);
        assert_eq!(var, vec![0.0]);
    }

    #[test]
    fn batch_norm_train_rejects_single_row() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::row(vec![1.0, 2.0]));
        let g = tape.param(Tensor::row(vec![1.0, 1.0]));
        let b = tape.param(Tensor::row(vec![0.0, 0.0]));
        assert!(matches!(
            tape.batch_norm(x, g, b, None, BnMode::Train),
            Err(Error::BatchTooSmall(1))
        ));
    }

    #[test]
    fn batch_norm_eval_is_affine_in_input() {
        let rm = vec![1.0, -2.0];
        let rv = vec![4.0, 0.25];
        let eval = |xv: Vec<f64>| {
            let mut tape = Tape::new();
            let x = tape.input(Tensor::from_vec(1, 2, xv));
            let g = tape.param(Tensor::row(vec![3.0, 0.5]));
            let b = tape.param(Tensor::row(vec![1.0, -1.0]));
            let (y, _) = tape
                .batch_norm(x, g, b, Some((&rm, &rv)), BnMode::Eval)
                .unwrap();
            tape.value(y).data.clone()
        };
        let y0 = eval(vec![0.0, 0.0]);
        let y1 = eval(vec![1.0, 1.0]);
        let y2 = eval(vec![2.0, 2.0]);
        for c in 0..2 {
            let d1 = y1[c] - y0[c];
            let d2 = y2[c] - y1[c];
            assert!((d1 - d2).abs() < 1e-12, "not affine in channel {c}");
        }
    }

    #[test]
    fn batch_norm_gradcheck() {
        let mut rng = crate::rng::seeded_rng(51);
        let x0: Vec<f64> = (0..12).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let g0: Vec<f64> = (0..3).map(|_| rng.gen_range(0.5..1.5)).collect();
        let b0: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let all: Vec<f64> = x0.iter().chain(&g0).chain(&b0).copied().collect();
        let mut f = |p: &[f64]| {
            let mut tape = Tape::new();
            let x = tape.param(Tensor::from_vec(4, 3, p[..12].to_vec()));
            let g = tape.param(Tensor::row(p[12..15].to_vec()));
            let b = tape.param(Tensor::row(p[15..].to_vec()));
            let (y, _) = tape.batch_norm(x, g, b, None, BnMode::Train).unwrap();
            let t = tape.tanh(y);
            let s = tape.sum_all(t);
            tape.value(s).item()
        };
        let numeric = finite_diff(&mut f, &all, 1e-5);

        let mut tape = Tape::new();
        let x = tape.param(Tensor::from_vec(4, 3, x0));
        let g = tape.param(Tensor::row(g0));
        let b = tape.param(Tensor::row(b0));
        let (y, _) = tape.batch_norm(x, g, b, None, BnMode::Train).unwrap();
        let t = tape.tanh(y);
        let s = tape.sum_all(t);
        tape.backward(s).unwrap();
        let analytic: Vec<f64> = tape
            .grad(x)
            .data
            .into_iter()
            .chain(tape.grad(g).data)
            .chain(tape.grad(b).data)
            .collect();
        assert_close(&analytic, &numeric, 1e-5, "batch_norm");
    }

    #[test]
    fn col_max_single_row_is_identity() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::row(vec![3.0, -1.0, 2.0]));
        let m = tape.col_max(x);
        assert_eq!(tape.value(m).data, vec![3.0, -1.0, 2.0]);
        let s = tape.sum_all(m);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).data, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn col_max_tie_routes_to_first_row() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::from_vec(2, 2, vec![1.0, 5.0, 1.0, 5.0]));
        let m = tape.col_max(x);
        let s = tape.sum_all(m);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).data, vec![1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn col_max_gradcheck_distinct() {
        let mut rng = crate::rng::seeded_rng(52);
        let x0: Vec<f64> = (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut f = |p: &[f64]| {
            let mut tape = Tape::new();
            let x = tape.param(Tensor::from_vec(5, 3, p.to_vec()));
            let m = tape.col_max(x);
            let t = tape.square(m);
            let s = tape.sum_all(t);
            tape.value(s).item()
        };
        let numeric = finite_diff(&mut f, &x0, 1e-6);
        let mut tape = Tape::new();
        let x = tape.param(Tensor::from_vec(5, 3, x0));
        let m = tape.col_max(x);
        let t = tape.square(m);
        let s = tape.sum_all(t);
        tape.backward(s).unwrap();
        assert_close(&tape.grad(x).data, &numeric, 1e-8, "col_max");
    }

    #[test]
    fn quat_identity_rotation() {
        let mut tape = Tape::new();
        let q = tape.param(Tensor::row(vec![1.0, 0.0, 0.0, 0.0]));
        let p = tape.input(Tensor::from_vec(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.0]));
        let r = tape.quat_rotate(q, p).unwrap();
        assert_eq!(tape.value(r).data, vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.0]);
    }

    #[test]
    fn quat_rotation_preserves_distances() {
        let mut tape = Tape::new();
        let q = tape.param(Tensor::row(vec![0.3, -0.6, 0.2, 0.9]));
        let pts = Tensor::from_vec(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.0]);
        let p = tape.input(pts.clone());
        let r = tape.quat_rotate(q, p).unwrap();
        let rv = tape.value(r);
        let d0 = ((pts.at(0, 0) - pts.at(1, 0)).powi(2)
            + (pts.at(0, 1) - pts.at(1, 1)).powi(2)
            + (pts.at(0, 2) - pts.at(1, 2)).powi(2))
        .sqrt();
        let d1 = ((rv.at(0, 0) - rv.at(1, 0)).powi(2)
            + (rv.at(0, 1) - rv.at(1, 1)).powi(2)
            + (rv.at(0, 2) - rv.at(1, 2)).powi(2))
        .sqrt();
        assert!((d0 - d1).abs() < 1e-12);
    }

    #[test]
    fn quat_rotate_gradcheck() {
        let mut rng = crate::rng::seeded_rng(53);
        let q0: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p0: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let all: Vec<f64> = q0.iter().chain(&p0).copied().collect();
        let mut f = |p: &[f64]| {
            let mut tape = Tape::new();
            let q = tape.param(Tensor::row(p[..4].to_vec()));
            let pts = tape.param(Tensor::from_vec(3, 3, p[4..].to_vec()));
            let r = tape.quat_rotate(q, pts).unwrap();
            let t = tape.square(r);
            let w = tape.tanh(t);
            let s = tape.sum_all(w);
            tape.value(s).item()
        };
        let numeric = finite_diff(&mut f, &all, 1e-5);
        let mut tape = Tape::new();
        let q = tape.param(Tensor::row(q0));
        let pts = tape.param(Tensor::from_vec(3, 3, p0));
        let r = tape.quat_rotate(q, pts).unwrap();
        let t = tape.square(r);
        let w = tape.tanh(t);
        let s = tape.sum_all(w);
        tape.backward(s).unwrap();
        let analytic: Vec<f64> = tape
            .grad(q)
            .data
            .into_iter()
            .chain(tape.grad(pts).data)
            .collect();
        assert_close(&analytic, &numeric, 1e-5, "quat_rotate");
    }

    #[test]
    fn bce_values() {
        let mut tape = Tape::new();
        // logits 0 -> ln 2 for either label
        let z = tape.param(Tensor::column(vec![0.0, 20.0, -20.0]));
        let labels = Tensor::column(vec![1.0, 1.0, 1.0]);
        let l = tape.bce_with_logits(z, labels);
        let v = tape.value(l);
        assert!((v.data[0] - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(v.data[1] < 1e-8); // confident correct
        assert!((v.data[2] - 20.0).abs() < 1e-6); // confident wrong: linear regime
    }

    #[test]
    fn bce_gradcheck() {
        let z0 = vec![0.3, -1.5, 2.0];
        let labels = Tensor::column(vec![1.0, 0.0, 1.0]);
        let mut f = |p: &[f64]| {
            let mut tape = Tape::new();
            let z = tape.param(Tensor::column(p.to_vec()));
            let l = tape.bce_with_logits(z, labels.clone());
            let s = tape.mean_all(l);
            tape.value(s).item()
        };
        let numeric = finite_diff(&mut f, &z0, 1e-6);
        let mut tape = Tape::new();
        let z = tape.param(Tensor::column(z0));
        let l = tape.bce_with_logits(z, labels);
        let s = tape.mean_all(l);
        tape.backward(s).unwrap();
        assert_close(&tape.grad(z).data, &numeric, 1e-7, "bce");
    }

    #[test]
    fn deep_composition_gradcheck() {
        // >= 5 stacked layers with mixed ops
        let mut rng = crate::rng::seeded_rng(54);
        let sizes = [(3usize, 4usize), (4, 4), (4, 4), (4, 3), (3, 2)];
        let mut layout = Vec::new();
        let mut total = 0;
        for &(i, o) in &sizes {
            layout.push((total, i, o));
            total += i * o + o;
        }
        let p0: Vec<f64> = (0..total).map(|_| rng.gen_range(-0.7..0.7)).collect();
        let x_data: Vec<f64> = (0..6 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let build = |tape: &mut Tape, p: &[f64]| {
            let x = tape.input(Tensor::from_vec(6, 3, x_data.clone()));
            let mut h = x;
            let mut params = Vec::new();
            for (k, &(off, i, o)) in layout.iter().enumerate() {
                let w = tape.param(Tensor::from_vec(i, o, p[off..off + i * o].to_vec()));
                let b = tape.param(Tensor::row(p[off + i * o..off + i * o + o].to_vec()));
                params.push(w);
                params.push(b);
                let z = tape.matmul(h, w);
                let z = tape.add_bias(z, b);
                h = if k < sizes.len() - 1 { tape.relu(z) } else { z };
            }
            let m = tape.col_max(h);
            let t = tape.tanh(m);
            let s = tape.sum_all(t);
            (s, params)
        };
        let mut f = |p: &[f64]| {
            let mut tape = Tape::new();
            let (s, _) = build(&mut tape, p);
            tape.value(s).item()
        };
        let numeric = finite_diff(&mut f, &p0, 1e-5);
        let mut tape = Tape::new();
        let (s, params) = build(&mut tape, &p0);
        tape.backward(s).unwrap();
        let mut analytic = Vec::new();
        for pr in params {
            analytic.extend(tape.grad(pr).data);
        }
        assert_close(&analytic, &numeric, 1e-4, "deep");
    }

    #[test]
    fn stack_and_slice_gradients() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::row(vec![1.0, 2.0]));
        let b = tape.param(Tensor::row(vec![3.0, 4.0]));
        let stacked = tape.stack_rows(&[a, b]);
        let col = tape.slice_cols(stacked, 1, 2);
        let s = tape.sum_all(col);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(a).data, vec![0.0, 1.0]);
        assert_eq!(tape.grad(b).data, vec![0.0, 1.0]);
    }

    #[test]
    fn slice_rows_values_and_gradients() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let mid = tape.slice_rows(a, 1, 2);
        assert_eq!(tape.value(mid).data, vec![3.0, 4.0]);
        let sq = tape.square(mid);
        let s = tape.sum_all(sq);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(a).data, vec![0.0, 0.0, 6.0, 8.0, 0.0, 0.0]);
    }
}
