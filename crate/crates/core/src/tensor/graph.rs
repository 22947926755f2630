//! Define-by-run tape. Every op appends a node whose inputs already exist, so
//! append order is a topological order and backward is a single reverse sweep.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ops::conv::{self, ConvGeom, ConvSpec};
use super::ops::lstm::{self, LstmCache, LstmDims, LstmGrads};
use super::ops::norm::{self, BnCache};
use super::ops::pool;
use super::ops::spatial3;
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T> {
    Constant,
    Param(ParamId),
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Dense {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        cache: BnCache<T>,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    Lstm {
        x: Var,
        w_ih: Var,
        w_hh: Var,
        b: Var,
        dims: LstmDims,
        cache: LstmCache<T>,
    },
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Crop {
        x: Var,
        offset: [usize; 3],
    },
    Concat(Vec<Var>),
    SliceFeatures {
        x: Var,
        start: usize,
    },
    Reshape(Var),
    SwapLast(Var),
    Bce {
        p: Var,
        labels: Vec<T>,
    },
    Sum(Var),
}

struct Node<T> {
    value: Tensor<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
    op: Op<T>,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
    kinks: Option<DefaultHasher>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    /// Tape that records everything needed for [`Graph::backward`].
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: true,
            kinks: None,
        }
    }

    /// Inference-only tape: nothing is saved for backward.
    pub fn no_grad() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: false,
            kinks: None,
        }
    }

    /// Also fingerprints every ReLU sign pattern and pooling argmax, so two
    /// evaluations can be compared for lying on the same smooth piece.
    pub fn with_kink_tracking(mut self) -> Self {
        self.kinks = Some(DefaultHasher::new());
        self
    }

    /// Fingerprint of the piecewise-linear choices made so far, if tracked.
    pub fn kink_signature(&self) -> Option<u64> {
        self.kinks.as_ref().map(|h| h.finish())
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

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    fn push(&mut self, value: Tensor<T>, inputs: &[Var], op: impl FnOnce() -> Op<T>) -> Var {
        let requires_grad =
            self.grad_enabled && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op() } else { Op::Constant };
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Non-differentiable input.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad: false,
            op: Op::Constant,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable leaf that is not a model parameter (used by tests and checks).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad: self.grad_enabled,
            op: Op::Constant,
        });
        Var(self.nodes.len() - 1)
    }

    /// Places a copy of a stored parameter on the tape.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let p = store.get(id);
        self.nodes.push(Node {
            value: p.value.clone(),
            grad: None,
            requires_grad: self.grad_enabled && p.trainable,
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn conv(&mut self, x: Var, w: Var, b: Option<Var>, spec: &ConvSpec) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(x), self.shape(w), spec)?;
        if let Some(b) = b {
            if self.value(b).len() != spec.out_channels {
                return Err(Error::dim(
                    "conv",
                    1,
                    "bias length differs from output channels",
                ));
            }
        }
        let out = conv::forward_raw(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &geom,
        );
        let mut shape = vec![geom.batch, geom.cout];
        shape.extend(spec.output_extents(&self.shape(x)[2..])?);
        let value = Tensor::new(shape, out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(value, &inputs, || Op::Conv { x, w, b, geom }))
    }

    pub fn max_pool(&mut self, x: Var, window: &[usize], stride: &[usize]) -> Result<Var> {
        let out = pool::max_pool_forward(self.value(x), window, stride)?;
        let argmax = out.argmax;
        if let Some(h) = self.kinks.as_mut() {
            argmax.hash(h);
        }
        Ok(self.push(out.output, &[x], || Op::MaxPool { x, argmax }))
    }

    /// `x · Wᵀ + b` with `x: [batch, n_in]`, `W: [n_out, n_in]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 2 || ws.len() != 2 {
            return Err(Error::dim(
                "dense",
                0,
                format!("expected matrices, got {xs:?} and {ws:?}"),
            ));
        }
        let (batch, n_in, n_out) = (xs[0], xs[1], ws[0]);
        if ws[1] != n_in {
            return Err(Error::dim(
                "dense",
                1,
                format!("input width {n_in} but weights expect {}", ws[1]),
            ));
        }
        let mut out = vec![T::zero(); batch * n_out];
        if let Some(b) = b {
            let bv = self.value(b).data();
            if bv.len() != n_out {
                return Err(Error::dim(
                    "dense",
                    1,
                    "bias length differs from output width",
                ));
            }
            for row in out.chunks_mut(n_out) {
                row.copy_from_slice(bv);
            }
        }
        T::gemm(
            batch,
            n_in,
            n_out,
            T::one(),
            self.value(x).data(),
            (n_in, 1),
            self.value(w).data(),
            (1, n_in),
            T::one(),
            &mut out,
            (n_out, 1),
        );
        let value = Tensor::new(vec![batch, n_out], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(value, &inputs, || Op::Dense { x, w, b }))
    }

    /// Batch normalization; in train mode the running statistics are updated in place.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &mut [T],
        running_var: &mut [T],
        mode: Mode,
    ) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(Error::dim(
                "batch_norm",
                0,
                "input needs batch and channel axes",
            ));
        }
        let nc = shape[1];
        for (what, len) in [
            ("gamma", self.value(gamma).len()),
            ("beta", self.value(beta).len()),
            ("running mean", running_mean.len()),
            ("running var", running_var.len()),
        ] {
            if len != nc {
                return Err(Error::dim(
                    "batch_norm",
                    1,
                    format!("{what} has {len} entries for {nc} channels"),
                ));
            }
        }
        let train = mode == Mode::Train;
        if train && shape[0] < 2 {
            return Err(Error::DegenerateBatch(shape[0]));
        }
        let (y, cache) = norm::forward(
            self.value(x).data(),
            &shape,
            self.value(gamma).data(),
            self.value(beta).data(),
            running_mean,
            running_var,
            train,
            T::from_f64_lossy(BN_MOMENTUM),
            T::from_f64_lossy(BN_EPSILON),
        );
        let value = Tensor::new(shape, y)?;
        Ok(self.push(value, &[x, gamma, beta], || Op::BatchNorm {
            x,
            gamma,
            beta,
            cache,
        }))
    }

    /// Inverted dropout: identity in eval mode.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        rate: f64,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::param(
                "dropout",
                format!("rate {rate} outside [0, 1)"),
            ));
        }
        if mode == Mode::Eval || rate == 0.0 {
            let value = self.value(x).clone();
            return Ok(self.push(value, &[x], || Op::Reshape(x)));
        }
        let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.value(x).len())
            .map(|_| {
                if rng.gen::<f64>() < rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let src = self.value(x);
        let data = src.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = Tensor::new(src.shape().to_vec(), data)?;
        Ok(self.push(value, &[x], || Op::Dropout { x, mask }))
    }

    /// LSTM over `x: [batch, time, features]`, returning the final hidden state `[batch, hidden]`.
    pub fn lstm(&mut self, x: Var, w_ih: Var, w_hh: Var, b: Var, hidden: usize) -> Result<Var> {
        if hidden == 0 {
            return Err(Error::param("lstm", "hidden size must be positive"));
        }
        let xs = self.shape(x);
        if xs.len() != 3 {
            return Err(Error::dim(
                "lstm",
                0,
                format!("expected [batch, time, features], got {xs:?}"),
            ));
        }
        let dims = LstmDims {
            batch: xs[0],
            time: xs[1],
            features: xs[2],
            hidden,
        };
        let expect = [
            ("w_ih", vec![4 * hidden, dims.features]),
            ("w_hh", vec![4 * hidden, hidden]),
            ("bias", vec![4 * hidden]),
        ];
        for ((name, shape), v) in expect.iter().zip([w_ih, w_hh, b]) {
            if self.shape(v) != shape.as_slice() {
                return Err(Error::dim(
                    "lstm",
                    0,
                    format!("{name} has shape {:?}, expected {shape:?}", self.shape(v)),
                ));
            }
        }
        let keep = self.grad_enabled
            && [x, w_ih, w_hh, b]
                .iter()
                .any(|v| self.nodes[v.0].requires_grad);
        let (h, cache) = lstm::forward(
            self.value(x).data(),
            dims,
            self.value(w_ih).data(),
            self.value(w_hh).data(),
            self.value(b).data(),
            keep,
        );
        let value = Tensor::new(vec![dims.batch, hidden], h)?;
        Ok(self.push(value, &[x, w_ih, w_hh, b], move || Op::Lstm {
            x,
            w_ih,
            w_hh,
            b,
            dims,
            cache: cache.expect("cache kept whenever gradients are required"),
        }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let src = &self.nodes[x.0].value;
        let data = src.data().iter().map(|&v| v.max(T::zero())).collect();
        if let Some(h) = self.kinks.as_mut() {
            src.data().iter().for_each(|&v| (v > T::zero()).hash(h));
        }
        let value = Tensor::new(src.shape().to_vec(), data).expect("same shape");
        self.push(value, &[x], || Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let data = src
            .data()
            .iter()
            .map(|&v| T::one() / (T::one() + (-v).exp()))
            .collect();
        let value = Tensor::new(src.shape().to_vec(), data).expect("same shape");
        self.push(value, &[x], || Op::Sigmoid(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(
                "add",
                0,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&p, &q)| p + q)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, &[a, b], || Op::Add(a, b)))
    }

    /// Centre crop of the spatial axes of `[batch, channels, spatial...]` to `target`.
    pub fn crop(&mut self, x: Var, target: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let spatial = &shape[2.min(shape.len())..];
        let (Some(src), Some(dst)) = (spatial3(spatial), spatial3(target)) else {
            return Err(Error::dim(
                "crop",
                0,
                format!("cannot crop {shape:?} to {target:?}"),
            ));
        };
        if spatial.len() != target.len() {
            return Err(Error::dim("crop", 0, "target rank differs from input"));
        }
        let mut offset = [0; 3];
        for a in 0..3 {
            if dst[a] > src[a] || dst[a] == 0 {
                return Err(Error::dim(
                    "crop",
                    a,
                    format!("cannot crop extent {} to {}", src[a], dst[a]),
                ));
            }
            offset[a] = (src[a] - dst[a]) / 2;
        }
        let planes = shape[0] * shape[1];
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(planes * dst.iter().product::<usize>());
        for p in 0..planes {
            let base = p * src.iter().product::<usize>();
            for z in 0..dst[0] {
                for y in 0..dst[1] {
                    let start =
                        base + ((z + offset[0]) * src[1] + y + offset[1]) * src[2] + offset[2];
                    out.extend_from_slice(&xv[start..start + dst[2]]);
                }
            }
        }
        let mut out_shape = shape[..2].to_vec();
        out_shape.extend_from_slice(target);
        let value = Tensor::new(out_shape, out)?;
        Ok(self.push(value, &[x], || Op::Crop { x, offset }))
    }

    /// Joins `[batch, n_i]` matrices along the feature axis.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return Err(Error::Contract("concat of zero tensors".into()));
        };
        let batch = self.shape(first)[0];
        let mut width = 0;
        for &v in xs {
            let s = self.shape(v);
            if s.len() != 2 {
                return Err(Error::dim(
                    "concat",
                    0,
                    format!("expected matrix, got {s:?}"),
                ));
            }
            if s[0] != batch {
                return Err(Error::dim(
                    "concat",
                    0,
                    format!("batch {} vs {batch}", s[0]),
                ));
            }
            width += s[1];
        }
        let mut out = Vec::with_capacity(batch * width);
        for r in 0..batch {
            for &v in xs {
                let n = self.shape(v)[1];
                out.extend_from_slice(&self.value(v).data()[r * n..(r + 1) * n]);
            }
        }
        let value = Tensor::new(vec![batch, width], out)?;
        Ok(self.push(value, xs, || Op::Concat(xs.to_vec())))
    }

    /// Columns `start..start + len` of a `[batch, n]` matrix.
    pub fn slice_features(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 || len == 0 || start + len > s[1] {
            return Err(Error::dim(
                "slice_features",
                1,
                format!("cannot take {start}..{} of {s:?}", start + len),
            ));
        }
        let (batch, n) = (s[0], s[1]);
        let xv = self.value(x).data();
        let out = (0..batch)
            .flat_map(|r| xv[r * n + start..r * n + start + len].iter().copied())
            .collect();
        let value = Tensor::new(vec![batch, len], out)?;
        Ok(self.push(value, &[x], || Op::SliceFeatures { x, start }))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(value, &[x], || Op::Reshape(x)))
    }

    /// Collapses every non-batch axis.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        let batch = s[0];
        let rest = s[1..].iter().product();
        self.reshape(x, vec![batch, rest])
    }

    /// `[batch, a, b] -> [batch, b, a]` (channels-first sequences to time-major features).
    pub fn swap_last(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(Error::dim(
                "swap_last",
                0,
                format!("expected rank 3, got {s:?}"),
            ));
        }
        let value = Tensor::new(
            vec![s[0], s[2], s[1]],
            transpose_inner(self.value(x).data(), s[0], s[1], s[2]),
        )?;
        Ok(self.push(value, &[x], || Op::SwapLast(x)))
    }

    /// Mean binary cross-entropy of probabilities `[batch, 1]` against 0/1 labels.
    pub fn bce(&mut self, p: Var, labels: &[T]) -> Result<Var> {
        let pv = self.value(p);
        if pv.len() != labels.len() {
            return Err(Error::dim(
                "bce",
                0,
                format!("{} probabilities for {} labels", pv.len(), labels.len()),
            ));
        }
        if let Some(bad) = labels.iter().find(|&&y| y != T::zero() && y != T::one()) {
            return Err(Error::Label(bad.to_f64_lossy()));
        }
        let eps = T::prob_clamp();
        let n = T::from_usize_lossy(labels.len());
        let total: T = pv
            .data()
            .iter()
            .zip(labels)
            .map(|(&p, &y)| {
                let p = p.max(eps).min(T::one() - eps);
                -(y * p.ln() + (T::one() - y) * (T::one() - p).ln())
            })
            .sum();
        let labels = labels.to_vec();
        Ok(self.push(Tensor::scalar(total / n), &[p], || Op::Bce { p, labels }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(total), &[x], || Op::Sum(x))
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.grad_enabled {
            return Err(Error::Contract("backward on a no-grad graph".into()));
        }
        self.nodes[loss.0].grad = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            if matches!(self.nodes[idx].op, Op::Constant | Op::Param(_)) {
                continue;
            }
            let Some(dy) = self.nodes[idx].grad.take() else {
                continue;
            };
            let op = std::mem::replace(&mut self.nodes[idx].op, Op::Constant);
            self.backward_op(idx, op, &dy);
            self.nodes[idx].grad = Some(dy);
        }
        Ok(())
    }

    fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        let len = node.value.len();
        Some(node.grad.take().unwrap_or_else(|| vec![T::zero(); len]))
    }

    fn put_grad(&mut self, v: Var, g: Option<Vec<T>>) {
        if let Some(g) = g {
            self.nodes[v.0].grad = Some(g);
        }
    }

    /// Adds `f(i)` to every element of `v`'s gradient.
    fn add_grad(&mut self, v: Var, f: impl Fn(usize) -> T) {
        if let Some(mut g) = self.take_grad(v) {
            for (i, gi) in g.iter_mut().enumerate() {
                *gi += f(i);
            }
            self.put_grad(v, Some(g));
        }
    }

    fn backward_op(&mut self, idx: usize, op: Op<T>, dy: &[T]) {
        match op {
            Op::Constant | Op::Param(_) => {}
            Op::Conv { x, w, b, geom } => {
                let mut dx = self.take_grad(x);
                let mut dw = self.take_grad(w);
                let mut db = b.and_then(|b| self.take_grad(b));
                conv::backward_raw(
                    self.value(x).data(),
                    self.value(w).data(),
                    dy,
                    &geom,
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                    dx.as_deref_mut(),
                );
                self.put_grad(x, dx);
                self.put_grad(w, dw);
                if let Some(b) = b {
                    self.put_grad(b, db);
                }
            }
            Op::MaxPool { x, argmax } => {
                if let Some(mut dx) = self.take_grad(x) {
                    for (&src, &g) in argmax.iter().zip(dy) {
                        dx[src] += g;
                    }
                    self.put_grad(x, Some(dx));
                }
            }
            Op::Dense { x, w, b } => {
                let (batch, n_in) = (self.shape(x)[0], self.shape(x)[1]);
                let n_out = self.shape(w)[0];
                if let Some(mut dx) = self.take_grad(x) {
                    T::gemm(
                        batch,
                        n_out,
                        n_in,
                        T::one(),
                        dy,
                        (n_out, 1),
                        self.value(w).data(),
                        (n_in, 1),
                        T::one(),
                        &mut dx,
                        (n_in, 1),
                    );
                    self.put_grad(x, Some(dx));
                }
                if let Some(mut dw) = self.take_grad(w) {
                    T::gemm(
                        n_out,
                        batch,
                        n_in,
                        T::one(),
                        dy,
                        (1, n_out),
                        self.value(x).data(),
                        (n_in, 1),
                        T::one(),
                        &mut dw,
                        (n_in, 1),
                    );
                    self.put_grad(w, Some(dw));
                }
                if let Some(b) = b {
                    self.add_grad(b, |j| (0..batch).map(|r| dy[r * n_out + j]).sum());
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                cache,
            } => {
                let shape = self.shape(x).to_vec();
                let mut dx = self.take_grad(x);
                let mut dg = self.take_grad(gamma);
                let mut db = self.take_grad(beta);
                norm::backward(
                    dy,
                    &shape,
                    self.value(gamma).data(),
                    &cache,
                    dx.as_deref_mut(),
                    dg.as_deref_mut(),
                    db.as_deref_mut(),
                );
                self.put_grad(x, dx);
                self.put_grad(gamma, dg);
                self.put_grad(beta, db);
            }
            Op::Dropout { x, mask } => self.add_grad(x, |i| dy[i] * mask[i]),
            Op::Lstm {
                x,
                w_ih,
                w_hh,
                b,
                dims,
                cache,
            } => {
                let mut dx = self.take_grad(x);
                let mut dwi = self.take_grad(w_ih);
                let mut dwh = self.take_grad(w_hh);
                let mut db = self.take_grad(b);
                lstm::backward(
                    self.value(x).data(),
                    dims,
                    self.value(w_ih).data(),
                    self.value(w_hh).data(),
                    &cache,
                    dy,
                    LstmGrads {
                        w_ih: dwi.as_deref_mut(),
                        w_hh: dwh.as_deref_mut(),
                        bias: db.as_deref_mut(),
                        x: dx.as_deref_mut(),
                    },
                );
                self.put_grad(x, dx);
                self.put_grad(w_ih, dwi);
                self.put_grad(w_hh, dwh);
                self.put_grad(b, db);
            }
            Op::Relu(x) => {
                let y = self.nodes[idx].value.data().to_vec();
                self.add_grad(x, |i| if y[i] > T::zero() { dy[i] } else { T::zero() });
            }
            Op::Sigmoid(x) => {
                let y = self.nodes[idx].value.data().to_vec();
                self.add_grad(x, |i| dy[i] * y[i] * (T::one() - y[i]));
            }
            Op::Add(a, b) => {
                self.add_grad(a, |i| dy[i]);
                self.add_grad(b, |i| dy[i]);
            }
            Op::Crop { x, offset } => {
                let src_shape = self.shape(x).to_vec();
                let dst_shape = self.nodes[idx].value.shape().to_vec();
                let src = spatial3(&src_shape[2..]).expect("validated on forward");
                let dst = spatial3(&dst_shape[2..]).expect("validated on forward");
                if let Some(mut dx) = self.take_grad(x) {
                    let planes = src_shape[0] * src_shape[1];
                    let (sv, dv) = (src.iter().product::<usize>(), dst.iter().product::<usize>());
                    for p in 0..planes {
                        for z in 0..dst[0] {
                            for y in 0..dst[1] {
                                let s = p * sv
                                    + ((z + offset[0]) * src[1] + y + offset[1]) * src[2]
                                    + offset[2];
                                let d = p * dv + (z * dst[1] + y) * dst[2];
                                for k in 0..dst[2] {
                                    dx[s + k] += dy[d + k];
                                }
                            }
                        }
                    }
                    self.put_grad(x, Some(dx));
                }
            }
            Op::Concat(xs) => {
                let width = self.nodes[idx].value.shape()[1];
                let mut col = 0;
                for v in xs {
                    let n = self.shape(v)[1];
                    self.add_grad(v, |i| dy[(i / n) * width + col + i % n]);
                    col += n;
                }
            }
            Op::SliceFeatures { x, start } => {
                let n = self.shape(x)[1];
                let len = self.nodes[idx].value.shape()[1];
                self.add_grad(x, |i| {
                    let c = i % n;
                    if c >= start && c < start + len {
                        dy[(i / n) * len + c - start]
                    } else {
                        T::zero()
                    }
                });
            }
            Op::Reshape(x) => self.add_grad(x, |i| dy[i]),
            Op::SwapLast(x) => {
                let s = self.shape(x).to_vec();
                // dy has shape [b, s2, s1]; transpose back.
                let back = transpose_inner(dy, s[0], s[2], s[1]);
                self.add_grad(x, |i| back[i]);
            }
            Op::Bce { p, labels } => {
                let eps = T::prob_clamp();
                let n = T::from_usize_lossy(labels.len());
                let pv = self.value(p).data().to_vec();
                // Through a sigmoid the product of both local derivatives is
                // `p - y`; applying it directly keeps the gradient alive when
                // the probability rounds to exactly 0 or 1.
                if let Op::Sigmoid(logit) = self.nodes[p.0].op {
                    if self.nodes[p.0].requires_grad {
                        self.add_grad(logit, |i| dy[0] * (pv[i] - labels[i]) / n);
                        return;
                    }
                }
                self.add_grad(p, |i| {
                    let q = pv[i].max(eps).min(T::one() - eps);
                    let y = labels[i];
                    dy[0] * (-y / q + (T::one() - y) / (T::one() - q)) / n
                });
            }
            Op::Sum(x) => self.add_grad(x, |_| dy[0]),
        }
    }

    /// Adds the gradients that reached parameter leaves into the store.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore<T>) {
        for node in &self.nodes {
            if let (Op::Param(id), Some(g)) = (&node.op, &node.grad) {
                for (acc, v) in store.get_mut(*id).grad.iter_mut().zip(g) {
                    *acc += *v;
                }
            }
        }
    }
}

fn transpose_inner<T: Scalar>(x: &[T], batch: usize, rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for b in 0..batch {
        let off = b * rows * cols;
        for r in 0..rows {
            for c in 0..cols {
                out[off + c * rows + r] = x[off + r * cols + c];
            }
        }
    }
    out
}
