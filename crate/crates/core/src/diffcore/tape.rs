//! Reverse-mode differentiation over an explicit computation tape.
//!
//! Every operation appends a node holding its output value and whatever it
//! needs for the backward pass. Parameter values are read from a borrowed
//! [`ParamStore`]; [`Tape::backward`] returns their gradients without
//! touching the store.

use rand::Rng;

use super::tensor::{Gradients, ParamId, ParamStore, Real, Tensor};
use crate::error::{Error, Result};

/// Variance regularizer inside layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Parameters of one multi-head self-attention block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionWeights {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
}

enum Op<T> {
    Input,
    Param(ParamId),
    Affine {
        x: Var,
        w: Var,
        b: Var,
    },
    Gelu {
        x: Var,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Softmax {
        x: Var,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        seq: usize,
        probs: Vec<T>,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    Add {
        a: Var,
        b: Var,
    },
    AddRow {
        x: Var,
        row: Var,
    },
    L2Normalize {
        x: Var,
        norms: Vec<T>,
    },
    Clamp {
        x: Var,
        lo: T,
        hi: T,
    },
    PrependTokens {
        x: Var,
        tokens: Var,
    },
    MeanPool {
        x: Var,
        seq: usize,
    },
}

struct Node<T> {
    value: Option<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
    // LayerNorm's bias is the only operand not recorded in its op
    extra: Option<Var>,
}

pub struct Tape<'p, T: Real> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
    scope: String,
}

fn sigma_pdf<T: Real>(x: T) -> T {
    let inv_sqrt_2pi = T::from_f64(0.398_942_280_401_432_7);
    inv_sqrt_2pi * (-(x * x) * T::from_f64(0.5)).exp()
}

fn gaussian_cdf<T: Real>(x: T) -> T {
    T::from_f64(0.5) * (T::one() + (x * T::from_f64(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

impl<'p, T: Real> Tape<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
            scope: String::new(),
        }
    }

    /// Label attached to non-finite errors raised by subsequent ops.
    pub fn set_scope(&mut self, scope: impl Into<String>) {
        self.scope = scope.into();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        match (&self.nodes[v.0].value, &self.nodes[v.0].op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => &self.params.get(*id).value,
            _ => unreachable!("node without value"),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool, name: &str) -> Result<Var> {
        if !value.is_finite() {
            let layer = if self.scope.is_empty() {
                name.to_string()
            } else {
                format!("{}/{}", self.scope, name)
            };
            return Err(Error::NonFinite { layer });
        }
        self.nodes.push(Node {
            value: Some(value),
            op,
            requires_grad,
            extra: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn input(&mut self, t: Tensor<T>) -> Result<Var> {
        self.push(t, Op::Input, false, "input")
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            requires_grad: true,
            extra: None,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    /// `y = x·W + b` for `x: [n, in]`, `W: [in, out]`, `b: [out]`.
    pub fn affine(&mut self, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
        let (w, b) = (self.param(w), self.param(b));
        self.affine_vars(x, w, b)
    }

    pub fn affine_vars(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if wv.shape().len() != 2 || xv.cols() != wv.shape()[0] {
            return Err(Error::Shape {
                op: "affine",
                lhs: xv.shape().to_vec(),
                rhs: wv.shape().to_vec(),
            });
        }
        let (n, inp, out) = (xv.rows(), wv.shape()[0], wv.shape()[1]);
        if bv.len() != out {
            return Err(Error::Shape {
                op: "affine bias",
                lhs: wv.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let mut y = Vec::with_capacity(n * out);
        for _ in 0..n {
            y.extend_from_slice(bv.data());
        }
        T::gemm(
            n,
            inp,
            out,
            xv.data(),
            (inp as isize, 1),
            wv.data(),
            (out as isize, 1),
            T::one(),
            &mut y,
        );
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = out;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        self.push(Tensor::new(shape, y)?, Op::Affine { x, w, b }, rg, "affine")
    }

    /// `x·Φ(x)` with the exact Gaussian CDF.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let y: Vec<T> = xv.data().iter().map(|&v| v * gaussian_cdf(v)).collect();
        let shape = xv.shape().to_vec();
        let rg = self.rg(x);
        self.push(Tensor::new(shape, y)?, Op::Gelu { x }, rg, "gelu")
    }

    pub fn layer_norm(&mut self, x: Var, gain: ParamId, bias: ParamId) -> Result<Var> {
        let (g, b) = (self.param(gain), self.param(bias));
        let (xv, gv, bv) = (self.value(x), self.value(g), self.value(b));
        let d = xv.cols();
        if d < 2 || gv.len() != d || bv.len() != d {
            return Err(Error::Shape {
                op: "layer_norm",
                lhs: xv.shape().to_vec(),
                rhs: gv.shape().to_vec(),
            });
        }
        let n = xv.rows();
        let eps = T::from_f64(LAYER_NORM_EPS);
        let dn = T::from_f64(d as f64);
        let mut xhat = Vec::with_capacity(n * d);
        let mut rstd = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n * d);
        for r in 0..n {
            let row = xv.row(r);
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let rs = T::one() / (var + eps).sqrt();
            rstd.push(rs);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * rs;
                xhat.push(h);
                y.push(h * gv.data()[j] + bv.data()[j]);
            }
        }
        let shape = xv.shape().to_vec();
        let rg = self.rg(x) || self.rg(g) || self.rg(b);
        let out = self.push(
            Tensor::new(shape, y)?,
            Op::LayerNorm { x, gain: g, xhat, rstd },
            rg,
            "layer_norm",
        )?;
        self.nodes[out.0].extra = Some(b);
        Ok(out)
    }

    /// Softmax over the last axis, with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let mut y = Vec::with_capacity(xv.len());
        for r in 0..xv.rows() {
            softmax_row(xv.row(r), &mut y);
        }
        let shape = xv.shape().to_vec();
        let rg = self.rg(x);
        self.push(Tensor::new(shape, y)?, Op::Softmax { x }, rg, "softmax")
    }

    /// Scaled dot-product attention over `q, k, v: [batch·seq, d]`, split into
    /// `heads` heads of width `d / heads`; sequences are the consecutive
    /// groups of `seq` rows.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, seq: usize) -> Result<Var> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.cols();
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!(
                "model width {d} is not divisible by {heads} heads"
            )));
        }
        if qv.shape() != kv.shape() || qv.shape() != vv.shape() {
            return Err(Error::Shape {
                op: "attention",
                lhs: qv.shape().to_vec(),
                rhs: kv.shape().to_vec(),
            });
        }
        let rows = qv.rows();
        if seq == 0 || rows % seq != 0 {
            return Err(Error::Config(format!(
                "{rows} rows do not split into sequences of length {seq}"
            )));
        }
        let dh = d / heads;
        let scale = T::one() / T::from_f64(dh as f64).sqrt();
        let batch = rows / seq;
        let mut probs = vec![T::zero(); batch * heads * seq * seq];
        let mut ctx = vec![T::zero(); rows * d];
        let mut scores = vec![T::zero(); seq];
        let mut p_row = Vec::with_capacity(seq);
        for b in 0..batch {
            for h in 0..heads {
                let off = h * dh;
                for s in 0..seq {
                    let qi = &qv.data()[(b * seq + s) * d + off..][..dh];
                    for (t, sc) in scores.iter_mut().enumerate() {
                        let kj = &kv.data()[(b * seq + t) * d + off..][..dh];
                        *sc = qi.iter().zip(kj).map(|(&a, &c)| a * c).sum::<T>() * scale;
                    }
                    p_row.clear();
                    softmax_row(&scores, &mut p_row);
                    let pbase = ((b * heads + h) * seq + s) * seq;
                    probs[pbase..pbase + seq].copy_from_slice(&p_row);
                    let out = &mut ctx[(b * seq + s) * d + off..][..dh];
                    for (t, &p) in p_row.iter().enumerate() {
                        let vj = &vv.data()[(b * seq + t) * d + off..][..dh];
                        for (o, &val) in out.iter_mut().zip(vj) {
                            *o += p * val;
                        }
                    }
                }
            }
        }
        let shape = qv.shape().to_vec();
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        self.push(
            Tensor::new(shape, ctx)?,
            Op::Attention {
                q,
                k,
                v,
                heads,
                seq,
                probs,
            },
            rg,
            "attention",
        )
    }

    /// Multi-head self-attention including the q/k/v and output projections.
    /// The residual connection is left to the caller.
    pub fn multi_head_attention(&mut self, x: Var, w: &AttentionWeights, heads: usize, seq: usize) -> Result<Var> {
        let d = self.value(x).cols();
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!(
                "model width {d} is not divisible by {heads} heads"
            )));
        }
        let q = self.affine(x, w.wq, w.bq)?;
        let k = self.affine(x, w.wk, w.bk)?;
        let v = self.affine(x, w.wv, w.bv)?;
        let ctx = self.attention(q, k, v, heads, seq)?;
        self.affine(ctx, w.wo, w.bo)
    }

    /// Inverted dropout: zeroes entries with probability `p` in training mode
    /// and rescales survivors by `1 / (1 - p)`; identity otherwise.
    pub fn dropout<R: Rng>(&mut self, x: Var, p: f64, mode: Mode, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let keep = T::from_f64(1.0 / (1.0 - p));
        let xv = self.value(x);
        let mask: Vec<T> = (0..xv.len())
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        let y: Vec<T> = xv.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let shape = xv.shape().to_vec();
        let rg = self.rg(x);
        self.push(Tensor::new(shape, y)?, Op::Dropout { x, mask }, rg, "dropout")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::Shape {
                op: "add",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let y = av.data().iter().zip(bv.data()).map(|(&p, &q)| p + q).collect();
        let shape = av.shape().to_vec();
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(shape, y)?, Op::Add { a, b }, rg, "add")
    }

    /// Adds a `[d]` vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xv, rv) = (self.value(x), self.value(row));
        let d = xv.cols();
        if rv.len() != d {
            return Err(Error::Shape {
                op: "add_row",
                lhs: xv.shape().to_vec(),
                rhs: rv.shape().to_vec(),
            });
        }
        let y = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + rv.data()[i % d])
            .collect();
        let shape = xv.shape().to_vec();
        let rg = self.rg(x) || self.rg(row);
        self.push(Tensor::new(shape, y)?, Op::AddRow { x, row }, rg, "add_row")
    }

    /// Scales every row to unit Euclidean norm.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let tiny = T::from_f64(1e-12);
        let mut norms = Vec::with_capacity(xv.rows());
        let mut y = Vec::with_capacity(xv.len());
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let n = row.iter().map(|&v| v * v).sum::<T>().sqrt().max(tiny);
            norms.push(n);
            y.extend(row.iter().map(|&v| v / n));
        }
        let shape = xv.shape().to_vec();
        let rg = self.rg(x);
        self.push(Tensor::new(shape, y)?, Op::L2Normalize { x, norms }, rg, "l2_normalize")
    }

    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Result<Var> {
        let xv = self.value(x);
        let y = xv.data().iter().map(|&v| v.max(lo).min(hi)).collect();
        let shape = xv.shape().to_vec();
        let rg = self.rg(x);
        self.push(Tensor::new(shape, y)?, Op::Clamp { x, lo, hi }, rg, "clamp")
    }

    /// Turns `x: [batch, d]` into `[batch·(k+1), d]` sequences
    /// `(x_b, t_1, …, t_k)` using the shared tokens `t: [k, d]`.
    pub fn prepend_tokens(&mut self, x: Var, tokens: Var) -> Result<Var> {
        let (xv, tv) = (self.value(x), self.value(tokens));
        let d = xv.cols();
        if tv.cols() != d {
            return Err(Error::Shape {
                op: "prepend_tokens",
                lhs: xv.shape().to_vec(),
                rhs: tv.shape().to_vec(),
            });
        }
        let (batch, k) = (xv.rows(), tv.rows());
        let mut y = Vec::with_capacity(batch * (k + 1) * d);
        for b in 0..batch {
            y.extend_from_slice(xv.row(b));
            y.extend_from_slice(tv.data());
        }
        let rg = self.rg(x) || self.rg(tokens);
        self.push(
            Tensor::new(vec![batch * (k + 1), d], y)?,
            Op::PrependTokens { x, tokens },
            rg,
            "prepend_tokens",
        )
    }

    /// Mean over each group of `seq` consecutive rows.
    pub fn mean_pool(&mut self, x: Var, seq: usize) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.cols();
        if seq == 0 || xv.rows() % seq != 0 {
            return Err(Error::Config(format!(
                "{} rows do not split into sequences of length {seq}",
                xv.rows()
            )));
        }
        let batch = xv.rows() / seq;
        let inv = T::one() / T::from_f64(seq as f64);
        let mut y = vec![T::zero(); batch * d];
        for b in 0..batch {
            for s in 0..seq {
                for (o, &v) in y[b * d..(b + 1) * d].iter_mut().zip(xv.row(b * seq + s)) {
                    *o += v * inv;
                }
            }
        }
        let rg = self.rg(x);
        self.push(
            Tensor::new(vec![batch, d], y)?,
            Op::MeanPool { x, seq },
            rg,
            "mean_pool",
        )
    }

    /// Back-propagates the given output gradients and returns the gradient
    /// of every parameter that was used.
    pub fn backward(&self, seeds: Vec<(Var, Tensor<T>)>) -> Result<Gradients<T>> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            if g.shape() != self.value(v).shape() {
                return Err(Error::Shape {
                    op: "backward seed",
                    lhs: self.value(v).shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            accumulate(&mut grads, v, g);
        }
        let mut out: Vec<Option<Tensor<T>>> = (0..self.params.len()).map(|_| None).collect();
        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Input => {}
                Op::Param(id) => match &mut out[id.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                },
                Op::Affine { x, w, b } => self.back_affine(&mut grads, &g, *x, *w, *b),
                Op::Gelu { x } => {
                    let dx = self
                        .value(*x)
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&v, &d)| d * (gaussian_cdf(v) + v * sigma_pdf(v)))
                        .collect();
                    self.send(&mut grads, *x, dx);
                }
                Op::LayerNorm { x, gain, xhat, rstd } => {
                    let bias = node.extra.expect("layer norm bias");
                    self.back_layer_norm(&mut grads, &g, *x, *gain, bias, xhat, rstd);
                }
                Op::Softmax { x } => {
                    let y = node.value.as_ref().unwrap();
                    let d = y.cols();
                    let mut dx = Vec::with_capacity(y.len());
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), &g.data()[r * d..(r + 1) * d]);
                        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        dx.extend(yr.iter().zip(gr).map(|(&a, &b)| a * (b - dot)));
                    }
                    self.send(&mut grads, *x, dx);
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    heads,
                    seq,
                    probs,
                } => self.back_attention(&mut grads, &g, (*q, *k, *v), *heads, *seq, probs),
                Op::Dropout { x, mask } => {
                    let dx = g.data().iter().zip(mask).map(|(&d, &m)| d * m).collect();
                    self.send(&mut grads, *x, dx);
                }
                Op::Add { a, b } => {
                    self.send(&mut grads, *a, g.data().to_vec());
                    self.send(&mut grads, *b, g.into_data());
                }
                Op::AddRow { x, row } => {
                    let d = g.cols();
                    let mut dr = vec![T::zero(); d];
                    for (j, &v) in g.data().iter().enumerate() {
                        dr[j % d] += v;
                    }
                    self.send(&mut grads, *row, dr);
                    self.send(&mut grads, *x, g.into_data());
                }
                Op::L2Normalize { x, norms } => {
                    let y = node.value.as_ref().unwrap();
                    let d = y.cols();
                    let mut dx = Vec::with_capacity(y.len());
                    for (r, &n) in norms.iter().enumerate() {
                        let (yr, gr) = (y.row(r), &g.data()[r * d..(r + 1) * d]);
                        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        dx.extend(yr.iter().zip(gr).map(|(&a, &b)| (b - a * dot) / n));
                    }
                    self.send(&mut grads, *x, dx);
                }
                Op::Clamp { x, lo, hi } => {
                    let dx = self
                        .value(*x)
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&v, &d)| if v >= *lo && v <= *hi { d } else { T::zero() })
                        .collect();
                    self.send(&mut grads, *x, dx);
                }
                Op::PrependTokens { x, tokens } => {
                    let d = g.cols();
                    let k = self.value(*tokens).rows();
                    let batch = g.rows() / (k + 1);
                    let mut dx = Vec::with_capacity(batch * d);
                    let mut dt = vec![T::zero(); k * d];
                    for b in 0..batch {
                        let base = b * (k + 1) * d;
                        dx.extend_from_slice(&g.data()[base..base + d]);
                        for (o, &v) in dt.iter_mut().zip(&g.data()[base + d..base + (k + 1) * d]) {
                            *o += v;
                        }
                    }
                    self.send(&mut grads, *x, dx);
                    self.send(&mut grads, *tokens, dt);
                }
                Op::MeanPool { x, seq } => {
                    let d = g.cols();
                    let inv = T::one() / T::from_f64(*seq as f64);
                    let mut dx = Vec::with_capacity(g.rows() * seq * d);
                    for b in 0..g.rows() {
                        for _ in 0..*seq {
                            dx.extend(g.row(b).iter().map(|&v| v * inv));
                        }
                    }
                    self.send(&mut grads, *x, dx);
                }
            }
        }
        Ok(Gradients(out))
    }

    fn send(&self, grads: &mut [Option<Tensor<T>>], to: Var, data: Vec<T>) {
        if !self.rg(to) {
            return;
        }
        let shape = self.value(to).shape().to_vec();
        accumulate(grads, to, Tensor::new(shape, data).expect("gradient shape"));
    }

    fn back_affine(&self, grads: &mut [Option<Tensor<T>>], g: &Tensor<T>, x: Var, w: Var, b: Var) {
        let (xv, wv) = (self.value(x), self.value(w));
        let (n, inp, out) = (xv.rows(), wv.shape()[0], wv.shape()[1]);
        if self.rg(x) {
            // dx = g · Wᵀ
            let mut dx = vec![T::zero(); n * inp];
            T::gemm(
                n,
                out,
                inp,
                g.data(),
                (out as isize, 1),
                wv.data(),
                (1, out as isize),
                T::zero(),
                &mut dx,
            );
            self.send(grads, x, dx);
        }
        if self.rg(w) {
            // dW = xᵀ · g
            let mut dw = vec![T::zero(); inp * out];
            T::gemm(
                inp,
                n,
                out,
                xv.data(),
                (1, inp as isize),
                g.data(),
                (out as isize, 1),
                T::zero(),
                &mut dw,
            );
            self.send(grads, w, dw);
        }
        if self.rg(b) {
            let mut db = vec![T::zero(); out];
            for r in 0..n {
                for (o, &v) in db.iter_mut().zip(g.row(r)) {
                    *o += v;
                }
            }
            self.send(grads, b, db);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn back_layer_norm(
        &self,
        grads: &mut [Option<Tensor<T>>],
        g: &Tensor<T>,
        x: Var,
        gain: Var,
        bias: Var,
        xhat: &[T],
        rstd: &[T],
    ) {
        let gv = self.value(gain);
        let d = g.cols();
        let dn = T::from_f64(d as f64);
        let mut dx = Vec::with_capacity(g.len());
        let mut dgain = vec![T::zero(); d];
        let mut dbias = vec![T::zero(); d];
        for (r, &rs) in rstd.iter().enumerate() {
            let gr = g.row(r);
            let hr = &xhat[r * d..(r + 1) * d];
            let mut mean_dh = T::zero();
            let mut mean_dh_h = T::zero();
            for j in 0..d {
                let dh = gr[j] * gv.data()[j];
                mean_dh += dh;
                mean_dh_h += dh * hr[j];
                dgain[j] += gr[j] * hr[j];
                dbias[j] += gr[j];
            }
            mean_dh = mean_dh / dn;
            mean_dh_h = mean_dh_h / dn;
            for j in 0..d {
                let dh = gr[j] * gv.data()[j];
                dx.push(rs * (dh - mean_dh - hr[j] * mean_dh_h));
            }
        }
        self.send(grads, x, dx);
        self.send(grads, gain, dgain);
        self.send(grads, bias, dbias);
    }

    fn back_attention(
        &self,
        grads: &mut [Option<Tensor<T>>],
        g: &Tensor<T>,
        (q, k, v): (Var, Var, Var),
        heads: usize,
        seq: usize,
        probs: &[T],
    ) {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.cols();
        let dh = d / heads;
        let scale = T::one() / T::from_f64(dh as f64).sqrt();
        let batch = qv.rows() / seq;
        let mut dq = vec![T::zero(); qv.len()];
        let mut dk = vec![T::zero(); kv.len()];
        let mut dv = vec![T::zero(); vv.len()];
        let mut dp = vec![T::zero(); seq];
        for b in 0..batch {
            for h in 0..heads {
                let off = h * dh;
                for s in 0..seq {
                    let row_s = (b * seq + s) * d + off;
                    let gs = &g.data()[row_s..row_s + dh];
                    let pbase = ((b * heads + h) * seq + s) * seq;
                    let p = &probs[pbase..pbase + seq];
                    for t in 0..seq {
                        let row_t = (b * seq + t) * d + off;
                        dp[t] = gs.iter().zip(&vv.data()[row_t..row_t + dh]).map(|(&a, &c)| a * c).sum();
                        for (o, &gv) in dv[row_t..row_t + dh].iter_mut().zip(gs) {
                            *o += p[t] * gv;
                        }
                    }
                    let dot: T = p.iter().zip(&dp).map(|(&a, &c)| a * c).sum();
                    for t in 0..seq {
                        let ds = p[t] * (dp[t] - dot) * scale;
                        let row_t = (b * seq + t) * d + off;
                        for j in 0..dh {
                            dq[row_s + j] += ds * kv.data()[row_t + j];
                            dk[row_t + j] += ds * qv.data()[row_s + j];
                        }
                    }
                }
            }
        }
        self.send(grads, q, dq);
        self.send(grads, k, dk);
        self.send(grads, v, dv);
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot => *slot = Some(g),
    }
}

fn softmax_row<T: Real>(row: &[T], out: &mut Vec<T>) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let start = out.len();
    let mut sum = T::zero();
    for &v in row {
        let e = (v - max).exp();
        sum += e;
        out.push(e);
    }
    for o in &mut out[start..] {
        *o = *o / sum;
    }
}
