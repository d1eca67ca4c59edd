//! Tape-based reverse-mode automatic differentiation.
//!
//! Nodes are appended in evaluation order, so the tape is topologically
//! sorted by construction and [`Graph::backward`] walks it once in reverse.

use crate::error::{Error, Result};
use crate::kernels::{self, col2im, gemm_nn, gemm_nt, gemm_tn, im2col, window_len};
use crate::param::{ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Probabilities are clamped to `[FOCAL_EPS, 1 - FOCAL_EPS]` inside the focal loss.
pub const FOCAL_EPS: f64 = 1e-7;

#[derive(Debug)]
enum Op<T> {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddRow(Var, Var),
    MulCol(Var, Var),
    MaskRows(Var, usize),
    Sigmoid(Var),
    Relu(Var),
    Softmax {
        x: Var,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        padding: usize,
        cols: Vec<T>,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Sum(Var),
    Focal {
        p: Var,
        target: Tensor<T>,
        weight: Tensor<T>,
        gamma: T,
        alpha: T,
    },
    Giou {
        pred: Var,
        target: Tensor<T>,
        mask: Tensor<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// A single forward evaluation and its reverse pass.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    skipped_targets: usize,
}

fn dim_err(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::Dimension {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            skipped_targets: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dims2()
    }

    /// Regression targets of zero length skipped by [`Graph::giou_loss`].
    pub fn skipped_targets(&self) -> usize {
        self.skipped_targets
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert!(
            value.is_finite() || matches!(op, Op::Input),
            "non-finite output from {:?}",
            std::mem::discriminant(&op)
        );
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Input, false)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(store.get(id).value.clone(), Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 || self.value(a).rank() != 2 || self.value(b).rank() != 2 {
            return Err(dim_err("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![T::zero(); m * n];
        gemm_nn(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (n, k2) = self.dims(b);
        if k != k2 {
            return Err(dim_err("matmul_nt", self.shape(a), self.shape(b)));
        }
        let mut out = vec![T::zero(); m * n];
        gemm_nt(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMulNt(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(value, Op::Transpose(a), rg)
    }

    fn binary(&mut self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let value = self.value(a).map(|x| x * s);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, s), rg)
    }

    /// `x[r×c] + b[c]`, broadcasting the bias over rows.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (r, c) = self.dims(x);
        if self.value(b).len() != c {
            return Err(dim_err("add_row", self.shape(x), self.shape(b)));
        }
        let mut value = self.value(x).clone();
        let bias = self.value(b).data();
        for i in 0..r {
            for (v, &bj) in value.data_mut()[i * c..(i + 1) * c].iter_mut().zip(bias) {
                *v += bj;
            }
        }
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(value, Op::AddRow(x, b), rg))
    }

    /// `x[r×c] ⊙ g[r×1]`, broadcasting one weight per row.
    pub fn mul_col(&mut self, x: Var, g: Var) -> Result<Var> {
        let (r, c) = self.dims(x);
        if self.value(g).len() != r {
            return Err(dim_err("mul_col", self.shape(x), self.shape(g)));
        }
        let mut value = self.value(x).clone();
        let gate = self.value(g).data();
        for i in 0..r {
            let gi = gate[i];
            value.data_mut()[i * c..(i + 1) * c]
                .iter_mut()
                .for_each(|v| *v *= gi);
        }
        let rg = self.rg(x) || self.rg(g);
        Ok(self.push(value, Op::MulCol(x, g), rg))
    }

    /// Zeroes every row at index `>= valid`.
    pub fn mask_rows(&mut self, x: Var, valid: usize) -> Var {
        let (r, c) = self.dims(x);
        if valid >= r {
            return x;
        }
        let mut value = self.value(x).clone();
        value.data_mut()[valid * c..].fill(T::zero());
        let rg = self.rg(x);
        self.push(value, Op::MaskRows(x, valid), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        let rg = self.rg(x);
        self.push(value, Op::Sigmoid(x), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(T::zero()));
        let rg = self.rg(x);
        self.push(value, Op::Relu(x), rg)
    }

    /// Softmax over the last dimension. When `key_valid` is set only the first
    /// `key_valid` entries of each row participate; the rest receive weight 0.
    /// A row with no valid entries is all zeros.
    pub fn softmax(&mut self, x: Var, key_valid: Option<usize>) -> Var {
        let (r, c) = self.dims(x);
        let valid = key_valid.unwrap_or(c).min(c);
        let mut value = Tensor::zeros(self.shape(x));
        {
            let src = self.value(x).data();
            let dst = value.data_mut();
            for i in 0..r {
                softmax_row(&src[i * c..i * c + valid], &mut dst[i * c..i * c + valid]);
            }
        }
        let rg = self.rg(x);
        self.push(value, Op::Softmax { x }, rg)
    }

    /// 1-D cross-correlation of `x[t×cin]` with `w[k×cin×cout]` plus bias `b[cout]`.
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (t, cin) = self.dims(x);
        let ws = self.shape(w).to_vec();
        if ws.len() != 3 || ws[1] != cin || self.value(b).len() != ws[2] {
            return Err(dim_err("conv1d", self.shape(x), &ws));
        }
        let (kernel, cout) = (ws[0], ws[2]);
        let t_out = window_len(t, kernel, stride, padding)
            .filter(|&n| n >= 1)
            .ok_or_else(|| {
                Error::geometry(
                    "conv1d",
                    format!("length {t}, kernel {kernel}, stride {stride}, padding {padding}"),
                )
            })?;
        let cols = im2col(self.value(x).data(), t, cin, kernel, stride, padding, t_out);
        let mut out = vec![T::zero(); t_out * cout];
        for row in out.chunks_mut(cout) {
            row.copy_from_slice(self.value(b).data());
        }
        gemm_nn(&cols, self.value(w).data(), &mut out, t_out, kernel * cin, cout);
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        let value = Tensor::new(vec![t_out, cout], out)?;
        Ok(self.push(
            value,
            Op::Conv1d {
                x,
                w,
                b,
                stride,
                padding,
                cols: if rg { cols } else { Vec::new() },
            },
            rg,
        ))
    }

    /// Per-channel windowed maximum along time. Ties resolve to the first index.
    pub fn maxpool1d(&mut self, x: Var, window: usize, stride: usize) -> Result<Var> {
        let (t, c) = self.dims(x);
        let t_out = window_len(t, window, stride, 0)
            .filter(|_| window >= 1)
            .ok_or_else(|| {
                Error::geometry("maxpool1d", format!("window {window} exceeds length {t}"))
            })?;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); t_out * c];
        let mut argmax = vec![0usize; t_out * c];
        for o in 0..t_out {
            for ch in 0..c {
                let mut best = o * stride;
                for s in o * stride + 1..o * stride + window {
                    if src[s * c + ch] > src[best * c + ch] {
                        best = s;
                    }
                }
                out[o * c + ch] = src[best * c + ch];
                argmax[o * c + ch] = best;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![t_out, c], out)?,
            Op::MaxPool { x, argmax },
            rg,
        ))
    }

    /// Layer normalization over the last dimension with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.dims(x);
        if self.value(gain).len() != c || self.value(bias).len() != c {
            return Err(dim_err("layer_norm", self.shape(x), self.shape(gain)));
        }
        let eps = T::of(1e-5);
        let n = T::of(c as f64);
        let src = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![T::zero(); r * c];
        let mut rstd = vec![T::zero(); r];
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let rs = T::one() / (var + eps).sqrt();
            rstd[i] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
        }
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            Tensor::new(vec![r, c], out)?,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = self.dims(parts[0]).0;
        let widths: Vec<usize> = parts.iter().map(|&p| self.dims(p).1).collect();
        if parts.iter().any(|&p| self.dims(p).0 != r) {
            return Err(dim_err("concat_cols", self.shape(parts[0]), self.shape(parts[1])));
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![T::zero(); r * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for i in 0..r {
                out[i * total + offset..i * total + offset + w]
                    .copy_from_slice(&src[i * w..(i + 1) * w]);
            }
            offset += w;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::new(vec![r, total], out)?,
            Op::ConcatCols(parts.to_vec()),
            rg,
        ))
    }

    /// Columns `[start, end)` of a rank-2 tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        if start >= end || end > c {
            return Err(Error::geometry(
                "slice_cols",
                format!("[{start}, {end}) of {c} columns"),
            ));
        }
        let w = end - start;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); r * w];
        for i in 0..r {
            out[i * w..(i + 1) * w].copy_from_slice(&src[i * c + start..i * c + end]);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![r, w], out)?, Op::SliceCols(x, start), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Weighted focal loss summed over all entries:
    /// `Σ w · [y·(-α(1-p)^γ ln p) + (1-y)·(-(1-α)p^γ ln(1-p))]`.
    pub fn focal_loss(
        &mut self,
        p: Var,
        target: Tensor<T>,
        weight: Tensor<T>,
        gamma: T,
        alpha: T,
    ) -> Result<Var> {
        if self.shape(p) != target.shape() || target.shape() != weight.shape() {
            return Err(dim_err("focal_loss", self.shape(p), target.shape()));
        }
        let mut total = T::zero();
        for ((&pi, &yi), &wi) in self
            .value(p)
            .data()
            .iter()
            .zip(target.data())
            .zip(weight.data())
        {
            if wi != T::zero() {
                total += wi * focal_term(pi, yi, gamma, alpha).0;
            }
        }
        let rg = self.rg(p);
        Ok(self.push(
            Tensor::scalar(total),
            Op::Focal {
                p,
                target,
                weight,
                gamma,
                alpha,
            },
            rg,
        ))
    }

    /// Summed `1 - GIoU` over masked entries of a class-aware regression map.
    ///
    /// `pred` and `target` are `[t × 2c]` with onsets in columns `[0, c)` and
    /// offsets in `[c, 2c)`; `mask` is `[t × c]`. Targets of zero length are
    /// skipped and counted in [`Graph::skipped_targets`].
    pub fn giou_loss(&mut self, pred: Var, target: Tensor<T>, mask: Tensor<T>) -> Result<Var> {
        let (t, c2) = self.dims(pred);
        let c = c2 / 2;
        if target.shape() != self.shape(pred) || mask.dims2() != (t, c) || c2 % 2 != 0 {
            return Err(dim_err("giou_loss", self.shape(pred), target.shape()));
        }
        let mut total = T::zero();
        let mut skipped = 0;
        let pv = self.value(pred).data();
        let tv = target.data();
        for i in 0..t {
            for k in 0..c {
                if mask.data()[i * c + k] == T::zero() {
                    continue;
                }
                let (ts, te) = (tv[i * c2 + k], tv[i * c2 + c + k]);
                if ts + te <= T::zero() {
                    skipped += 1;
                    continue;
                }
                let (ps, pe) = (pv[i * c2 + k], pv[i * c2 + c + k]);
                total += giou_term(ps, pe, ts, te).0;
            }
        }
        self.skipped_targets += skipped;
        let rg = self.rg(pred);
        Ok(self.push(Tensor::scalar(total), Op::Giou { pred, target, mask }, rg))
    }

    /// Reverse pass from a scalar `loss`, accumulating into `store` gradients.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));

        for idx in (0..=loss.0).rev() {
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.backprop_node(node, &gy, &mut grads, store)?;
        }
        Ok(())
    }

    fn backprop_node(
        &self,
        node: &Node<T>,
        gy: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
        store: &mut ParamStore<T>,
    ) -> Result<()> {
        let mut acc = |v: Var, g: Tensor<T>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        };
        let gyd = gy.data();
        match &node.op {
            Op::Input => {}
            Op::Param(id) => store.get_mut(*id).grad.add_assign(gy),
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).1;
                if self.rg(*a) {
                    let mut da = vec![T::zero(); m * k];
                    gemm_nt(gyd, self.value(*b).data(), &mut da, m, n, k);
                    acc(*a, Tensor::new(vec![m, k], da)?);
                }
                if self.rg(*b) {
                    let mut db = vec![T::zero(); k * n];
                    gemm_tn(self.value(*a).data(), gyd, &mut db, k, m, n);
                    acc(*b, Tensor::new(vec![k, n], db)?);
                }
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).0;
                if self.rg(*a) {
                    let mut da = vec![T::zero(); m * k];
                    gemm_nn(gyd, self.value(*b).data(), &mut da, m, n, k);
                    acc(*a, Tensor::new(vec![m, k], da)?);
                }
                if self.rg(*b) {
                    let mut db = vec![T::zero(); n * k];
                    gemm_tn(gyd, self.value(*a).data(), &mut db, n, m, k);
                    acc(*b, Tensor::new(vec![n, k], db)?);
                }
            }
            Op::Transpose(a) => acc(*a, gy.transpose()),
            Op::Add(a, b) => {
                acc(*a, gy.clone());
                acc(*b, gy.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, gy.clone());
                acc(*b, gy.map(|g| -g));
            }
            Op::Mul(a, b) => {
                acc(*a, gy.zip_map(self.value(*b), |g, y| g * y));
                acc(*b, gy.zip_map(self.value(*a), |g, x| g * x));
            }
            Op::Scale(a, s) => {
                let s = *s;
                acc(*a, gy.map(|g| g * s));
            }
            Op::AddRow(x, b) => {
                let (r, c) = self.dims(*x);
                acc(*x, gy.clone());
                if self.rg(*b) {
                    let mut db = Tensor::zeros(self.shape(*b));
                    for i in 0..r {
                        for (d, &g) in db.data_mut().iter_mut().zip(&gyd[i * c..(i + 1) * c]) {
                            *d += g;
                        }
                    }
                    acc(*b, db);
                }
            }
            Op::MulCol(x, g) => {
                let (r, c) = self.dims(*x);
                let gate = self.value(*g).data();
                if self.rg(*x) {
                    let mut dx = gy.clone();
                    for i in 0..r {
                        let gi = gate[i];
                        dx.data_mut()[i * c..(i + 1) * c]
                            .iter_mut()
                            .for_each(|v| *v *= gi);
                    }
                    acc(*x, dx);
                }
                if self.rg(*g) {
                    let xv = self.value(*x).data();
                    let mut dg = Tensor::zeros(self.shape(*g));
                    for i in 0..r {
                        dg.data_mut()[i] =
                            kernels::dot(&gyd[i * c..(i + 1) * c], &xv[i * c..(i + 1) * c]);
                    }
                    acc(*g, dg);
                }
            }
            Op::MaskRows(x, valid) => {
                let c = self.dims(*x).1;
                let mut dx = gy.clone();
                dx.data_mut()[valid * c..].fill(T::zero());
                acc(*x, dx);
            }
            Op::Sigmoid(x) => {
                acc(*x, gy.zip_map(&node.value, |g, s| g * s * (T::one() - s)));
            }
            Op::Relu(x) => {
                acc(
                    *x,
                    gy.zip_map(self.value(*x), |g, v| if v > T::zero() { g } else { T::zero() }),
                );
            }
            Op::Softmax { x, .. } => {
                let (r, c) = self.dims(*x);
                let y = node.value.data();
                let mut dx = vec![T::zero(); r * c];
                for i in 0..r {
                    let yr = &y[i * c..(i + 1) * c];
                    let gr = &gyd[i * c..(i + 1) * c];
                    let inner = kernels::dot(yr, gr);
                    for j in 0..c {
                        dx[i * c + j] = yr[j] * (gr[j] - inner);
                    }
                }
                acc(*x, Tensor::new(vec![r, c], dx)?);
            }
            Op::Conv1d {
                x,
                w,
                b,
                stride,
                padding,
                cols,
            } => {
                let (t, cin) = self.dims(*x);
                let ws = self.shape(*w);
                let (kernel, cout) = (ws[0], ws[2]);
                let t_out = node.value.dims2().0;
                let kc = kernel * cin;
                if self.rg(*w) {
                    let mut dw = vec![T::zero(); kc * cout];
                    gemm_tn(cols, gyd, &mut dw, kc, t_out, cout);
                    acc(*w, Tensor::new(ws.to_vec(), dw)?);
                }
                if self.rg(*b) {
                    let mut db = vec![T::zero(); cout];
                    for row in gyd.chunks(cout) {
                        for (d, &g) in db.iter_mut().zip(row) {
                            *d += g;
                        }
                    }
                    acc(*b, Tensor::new(vec![cout], db)?);
                }
                if self.rg(*x) {
                    let mut dcols = vec![T::zero(); t_out * kc];
                    gemm_nt(gyd, self.value(*w).data(), &mut dcols, t_out, cout, kc);
                    let mut dx = vec![T::zero(); t * cin];
                    col2im(&dcols, &mut dx, t, cin, kernel, *stride, *padding, t_out);
                    acc(*x, Tensor::new(vec![t, cin], dx)?);
                }
            }
            Op::MaxPool { x, argmax } => {
                let c = self.dims(*x).1;
                let mut dx = Tensor::zeros(self.shape(*x));
                for (o, (&g, &src)) in gyd.iter().zip(argmax).enumerate() {
                    dx.data_mut()[src * c + o % c] += g;
                }
                acc(*x, dx);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let (r, c) = self.dims(*x);
                let g = self.value(*gain).data();
                if self.rg(*gain) || self.rg(*bias) {
                    let mut dg = vec![T::zero(); c];
                    let mut db = vec![T::zero(); c];
                    for i in 0..r {
                        for j in 0..c {
                            dg[j] += gyd[i * c + j] * xhat[i * c + j];
                            db[j] += gyd[i * c + j];
                        }
                    }
                    acc(*gain, Tensor::new(vec![c], dg)?);
                    acc(*bias, Tensor::new(vec![c], db)?);
                }
                if self.rg(*x) {
                    let n = T::of(c as f64);
                    let mut dx = vec![T::zero(); r * c];
                    for i in 0..r {
                        let mut mean_dh = T::zero();
                        let mut mean_dh_h = T::zero();
                        for j in 0..c {
                            let dh = gyd[i * c + j] * g[j];
                            mean_dh += dh;
                            mean_dh_h += dh * xhat[i * c + j];
                        }
                        mean_dh = mean_dh / n;
                        mean_dh_h = mean_dh_h / n;
                        for j in 0..c {
                            let dh = gyd[i * c + j] * g[j];
                            dx[i * c + j] =
                                rstd[i] * (dh - mean_dh - xhat[i * c + j] * mean_dh_h);
                        }
                    }
                    acc(*x, Tensor::new(vec![r, c], dx)?);
                }
            }
            Op::ConcatCols(parts) => {
                let (r, total) = node.value.dims2();
                let mut offset = 0;
                for &p in parts {
                    let w = self.dims(p).1;
                    if self.rg(p) {
                        let mut dp = vec![T::zero(); r * w];
                        for i in 0..r {
                            dp[i * w..(i + 1) * w].copy_from_slice(
                                &gyd[i * total + offset..i * total + offset + w],
                            );
                        }
                        acc(p, Tensor::new(vec![r, w], dp)?);
                    }
                    offset += w;
                }
            }
            Op::SliceCols(x, start) => {
                let (r, c) = self.dims(*x);
                let w = node.value.dims2().1;
                let mut dx = vec![T::zero(); r * c];
                for i in 0..r {
                    dx[i * c + start..i * c + start + w].copy_from_slice(&gyd[i * w..(i + 1) * w]);
                }
                acc(*x, Tensor::new(self.shape(*x).to_vec(), dx)?);
            }
            Op::Sum(x) => {
                acc(*x, Tensor::full(self.shape(*x), gyd[0]));
            }
            Op::Focal {
                p,
                target,
                weight,
                gamma,
                alpha,
            } => {
                let g0 = gyd[0];
                let pv = self.value(*p).data();
                let dp: Vec<T> = pv
                    .iter()
                    .zip(target.data())
                    .zip(weight.data())
                    .map(|((&pi, &yi), &wi)| {
                        if wi == T::zero() {
                            T::zero()
                        } else {
                            g0 * wi * focal_term(pi, yi, *gamma, *alpha).1
                        }
                    })
                    .collect();
                acc(*p, Tensor::new(self.shape(*p).to_vec(), dp)?);
            }
            Op::Giou { pred, target, mask } => {
                let g0 = gyd[0];
                let (t, c2) = self.dims(*pred);
                let c = c2 / 2;
                let pv = self.value(*pred).data();
                let tv = target.data();
                let mut dp = vec![T::zero(); t * c2];
                for i in 0..t {
                    for k in 0..c {
                        if mask.data()[i * c + k] == T::zero() {
                            continue;
                        }
                        let (ts, te) = (tv[i * c2 + k], tv[i * c2 + c + k]);
                        if ts + te <= T::zero() {
                            continue;
                        }
                        let (ps, pe) = (pv[i * c2 + k], pv[i * c2 + c + k]);
                        let (_, ds, de) = giou_term(ps, pe, ts, te);
                        dp[i * c2 + k] = g0 * ds;
                        dp[i * c2 + c + k] = g0 * de;
                    }
                }
                acc(*pred, Tensor::new(vec![t, c2], dp)?);
            }
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Numerically stable softmax of one row into `out`.
pub(crate) fn softmax_row<T: Scalar>(row: &[T], out: &mut [T]) {
    if row.is_empty() {
        return;
    }
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o = *o / total;
    }
}

/// Focal loss of one entry and its derivative with respect to `p`.
pub(crate) fn focal_term<T: Scalar>(p: T, y: T, gamma: T, alpha: T) -> (T, T) {
    let eps = T::of(FOCAL_EPS);
    let clamped = p < eps || p > T::one() - eps;
    let p = p.max(eps).min(T::one() - eps);
    let q = T::one() - p;
    let (pos_v, pos_d) = {
        let w = q.powf(gamma);
        let v = -alpha * w * p.ln();
        let d = alpha * (gamma * q.powf(gamma - T::one()) * p.ln() - w / p);
        (v, d)
    };
    let (neg_v, neg_d) = {
        let w = p.powf(gamma);
        let v = -(T::one() - alpha) * w * q.ln();
        let d = -(T::one() - alpha) * (gamma * p.powf(gamma - T::one()) * q.ln() - w / q);
        (v, d)
    };
    let value = y * pos_v + (T::one() - y) * neg_v;
    let deriv = if clamped {
        T::zero()
    } else {
        y * pos_d + (T::one() - y) * neg_d
    };
    (value, deriv)
}

/// `1 - GIoU` of the segments `[-ps, pe]` and `[-ts, te]` around a shared
/// anchor, with derivatives with respect to `ps` and `pe`.
pub(crate) fn giou_term<T: Scalar>(ps: T, pe: T, ts: T, te: T) -> (T, T, T) {
    let zero = T::zero();
    let one = T::one();
    let raw_inter = ps.min(ts) + pe.min(te);
    let inter = raw_inter.max(zero);
    let union = ps + pe + ts + te - inter;
    let hull = ps.max(ts) + pe.max(te);
    if union <= zero || hull <= zero {
        return (one, zero, zero);
    }
    let loss = one - inter / union + (hull - union) / hull;

    let live = raw_inter > zero;
    let di_ds = if live && ps < ts { one } else { zero };
    let di_de = if live && pe < te { one } else { zero };
    let dh_ds = if ps > ts { one } else { zero };
    let dh_de = if pe > te { one } else { zero };
    let grad = |di: T, dh: T| {
        let du = one - di;
        -(di * union - inter * du) / (union * union) - (du * hull - union * dh) / (hull * hull)
    };
    (loss, grad(di_ds, dh_ds), grad(di_de, dh_de))
}
