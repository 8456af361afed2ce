use log::warn;

use super::kernels::{
    dot,
    correlate_same_acc, correlate_same_grad_input, correlate_same_grad_kernel, elu, sigmoid,
    softplus,
};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Batch-norm variance floor.
pub const BN_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An operation whose backward rule lives outside the tape.
pub trait CustomOp<T: Scalar>: Send {
    fn name(&self) -> &'static str;

    /// Returns one gradient buffer per input, each shaped like that input.
    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad_out: &[T]) -> Vec<Vec<T>>;
}

pub enum BnMode<'a, T> {
    Train,
    Eval { mean: &'a [T], var: &'a [T] },
}

/// Per-feature batch moments from a training-mode batch-norm call.
#[derive(Debug, Clone)]
pub struct BatchMoments<T> {
    pub mean: Vec<T>,
    /// Biased (divide-by-B) variance.
    pub var: Vec<T>,
    pub batch: usize,
}

enum Op<T: Scalar> {
    Leaf,
    Conv1dSame {
        input: Var,
        kernels: Var,
        bias: Option<Var>,
    },
    ConvMulti {
        input: Var,
        kernels: Var,
        bias: Option<Var>,
    },
    ChannelCollapse {
        input: Var,
        weights: Var,
    },
    AvgPool {
        input: Var,
        window: usize,
    },
    Elu {
        input: Var,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    Dense {
        input: Var,
        weights: Var,
        bias: Var,
    },
    Mask {
        input: Var,
        mask: Vec<T>,
    },
    Concat {
        inputs: Vec<Var>,
    },
    Row {
        input: Var,
        index: usize,
    },
    Reshape {
        input: Var,
    },
    Sum {
        input: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    BceWithLogits {
        logits: Vec<Var>,
        targets: Vec<f64>,
    },
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp<T>>,
    },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Wengert list of executed operations. Nodes are appended in execution
/// order, so every node's inputs precede it.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Gradients accumulate on it if `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let needs_grad = tensor.requires_grad();
        self.push(tensor, Op::Leaf, needs_grad)
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.push(tensor, Op::Leaf, false)
    }

    /// Gradient-tracking leaf; the accumulator starts at zero.
    pub fn param(&mut self, tensor: &Tensor<T>) -> Var {
        let t = Tensor::new(tensor.shape().to_vec(), tensor.data().to_vec())
            .expect("shape already validated")
            .with_grad();
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of a leaf (None for constants and non-leaves).
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn val(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Depthwise "same" temporal convolution. Input `[C, N]`, kernels `[K, P]`
    /// and optional bias `[K]`; output `[K*C, N]` with row `k*C + c` holding
    /// input row `c` correlated with kernel `k`.
    pub fn conv1d_same(&mut self, input: Var, kernels: Var, bias: Option<Var>) -> Result<Var> {
        let (c, n) = self.val(input).dims2("conv1d_same input")?;
        let (k, p) = self.val(kernels).dims2("conv1d_same kernels")?;
        if p == 0 {
            return Err(Error::shape("conv1d_same: kernel length must be >= 1"));
        }
        if let Some(b) = bias {
            if self.val(b).len() != k {
                return Err(Error::shape(format!(
                    "conv1d_same: bias length {} != kernel count {k}",
                    self.val(b).len()
                )));
            }
        }
        if p > n {
            warn!("conv1d_same: kernel length {p} exceeds signal length {n}");
        }
        let x = self.val(input).data();
        let w = self.val(kernels).data();
        let mut out = vec![T::zero(); k * c * n];
        for ki in 0..k {
            let kern = &w[ki * p..(ki + 1) * p];
            let b = bias.map_or(T::zero(), |b| self.val(b).data()[ki]);
            for ci in 0..c {
                let row = &mut out[(ki * c + ci) * n..(ki * c + ci + 1) * n];
                if b != T::zero() {
                    row.iter_mut().for_each(|v| *v = b);
                }
                correlate_same_acc(&x[ci * n..(ci + 1) * n], kern, row);
            }
        }
        let needs = self.needs(input) || self.needs(kernels) || bias.is_some_and(|b| self.needs(b));
        let value = Tensor::new(vec![k * c, n], out)?;
        Ok(self.push(
            value,
            Op::Conv1dSame {
                input,
                kernels,
                bias,
            },
            needs,
        ))
    }

    /// Full multi-channel "same" temporal convolution. Input `[C, N]`,
    /// kernels `[O, C, P]`, optional bias `[O]`; output `[O, N]`.
    pub fn conv1d_multi(&mut self, input: Var, kernels: Var, bias: Option<Var>) -> Result<Var> {
        let (c, n) = self.val(input).dims2("conv1d_multi input")?;
        let (o, kc, p) = match self.val(kernels).shape() {
            [o, kc, p] => (*o, *kc, *p),
            s => return Err(Error::shape(format!("conv1d_multi: kernels must be [O, C, P], got {s:?}"))),
        };
        if kc != c {
            return Err(Error::shape(format!("conv1d_multi: kernels expect {kc} channels, input has {c}")));
        }
        if p == 0 {
            return Err(Error::shape("conv1d_multi: kernel length must be >= 1"));
        }
        if let Some(b) = bias {
            if self.val(b).len() != o {
                return Err(Error::shape("conv1d_multi: bias length != output channels"));
            }
        }
        if p > n {
            warn!("conv1d_multi: kernel length {p} exceeds signal length {n}");
        }
        let x = self.val(input).data();
        let w = self.val(kernels).data();
        let mut out = vec![T::zero(); o * n];
        for oi in 0..o {
            let row = &mut out[oi * n..(oi + 1) * n];
            if let Some(b) = bias {
                let bv = self.val(b).data()[oi];
                row.iter_mut().for_each(|v| *v = bv);
            }
            for ci in 0..c {
                let kern = &w[(oi * c + ci) * p..(oi * c + ci + 1) * p];
                correlate_same_acc(&x[ci * n..(ci + 1) * n], kern, row);
            }
        }
        let needs = self.needs(input) || self.needs(kernels) || bias.is_some_and(|b| self.needs(b));
        let value = Tensor::new(vec![o, n], out)?;
        Ok(self.push(
            value,
            Op::ConvMulti {
                input,
                kernels,
                bias,
            },
            needs,
        ))
    }

    /// Weighted sum over channels. Weights `[C]` map `[C, N]` to `[1, N]`;
    /// weights `[G, C]` map `[G*C, N]` to `[G, N]`, collapsing each group.
    pub fn channel_collapse(&mut self, input: Var, weights: Var) -> Result<Var> {
        let (rows, n) = self.val(input).dims2("channel_collapse input")?;
        let (g, c) = match self.val(weights).shape() {
            [c] => (1, *c),
            [g, c] => (*g, *c),
            s => return Err(Error::shape(format!("channel_collapse: weights must be [C] or [G, C], got {s:?}"))),
        };
        if g * c != rows {
            return Err(Error::shape(format!(
                "channel_collapse: {g} groups of {c} channels do not match {rows} input rows"
            )));
        }
        let x = self.val(input).data();
        let w = self.val(weights).data();
        let mut out = vec![T::zero(); g * n];
        for gi in 0..g {
            let row = &mut out[gi * n..(gi + 1) * n];
            for ci in 0..c {
                let wv = w[gi * c + ci];
                let src = &x[(gi * c + ci) * n..(gi * c + ci + 1) * n];
                for (o, &s) in row.iter_mut().zip(src) {
                    *o = *o + wv * s;
                }
            }
        }
        let needs = self.needs(input) || self.needs(weights);
        let value = Tensor::new(vec![g, n], out)?;
        Ok(self.push(value, Op::ChannelCollapse { input, weights }, needs))
    }

    /// Non-overlapping mean pooling along time; trailing `N mod window` samples are dropped.
    pub fn avg_pool_time(&mut self, input: Var, window: usize) -> Result<Var> {
        let (c, n) = self.val(input).dims2("avg_pool_time input")?;
        if window == 0 {
            return Err(Error::shape("avg_pool_time: window must be >= 1"));
        }
        if window > n {
            return Err(Error::shape(format!(
                "avg_pool_time: window {window} leaves an empty time axis for length {n}"
            )));
        }
        let m = n / window;
        let x = self.val(input).data();
        let inv = T::one() / T::from_f64(window as f64);
        let mut out = vec![T::zero(); c * m];
        for ci in 0..c {
            for i in 0..m {
                let s: T = x[ci * n + i * window..ci * n + (i + 1) * window].iter().copied().sum();
                out[ci * m + i] = s * inv;
            }
        }
        let needs = self.needs(input);
        let value = Tensor::new(vec![c, m], out)?;
        Ok(self.push(value, Op::AvgPool { input, window }, needs))
    }

    pub fn elu(&mut self, input: Var) -> Var {
        let x = self.val(input);
        let out: Vec<T> = x.data().iter().map(|&v| elu(v)).collect();
        let value = Tensor::new(x.shape().to_vec(), out).expect("same shape");
        let needs = self.needs(input);
        self.push(value, Op::Elu { input }, needs)
    }

    /// Per-feature normalization of a `[B, F]` batch.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode<'_, T>,
    ) -> Result<(Var, Option<BatchMoments<T>>)> {
        let (b, f) = self.val(input).dims2("batch_norm input")?;
        if self.val(gamma).len() != f || self.val(beta).len() != f {
            return Err(Error::shape(format!("batch_norm: gamma/beta must have {f} features")));
        }
        let eps = T::from_f64(BN_EPS);
        let x = self.val(input).data();
        let (mean, var, train) = match mode {
            BnMode::Train => {
                if b < 2 {
                    return Err(Error::DegenerateBatch(format!(
                        "batch_norm in train mode needs at least 2 rows, got {b}"
                    )));
                }
                let mut mean = vec![0.0f64; f];
                let mut var = vec![0.0f64; f];
                for r in 0..b {
                    for j in 0..f {
                        mean[j] += x[r * f + j].as_f64();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= b as f64);
                for r in 0..b {
                    for j in 0..f {
                        let d = x[r * f + j].as_f64() - mean[j];
                        var[j] += d * d;
                    }
                }
                var.iter_mut().for_each(|v| *v /= b as f64);
                (
                    mean.into_iter().map(T::from_f64).collect::<Vec<_>>(),
                    var.into_iter().map(T::from_f64).collect::<Vec<_>>(),
                    true,
                )
            }
            BnMode::Eval { mean, var } => {
                if mean.len() != f || var.len() != f {
                    return Err(Error::shape("batch_norm: running moments have wrong length"));
                }
                (mean.to_vec(), var.to_vec(), false)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let g = self.val(gamma).data();
        let bt = self.val(beta).data();
        let mut xhat = vec![T::zero(); b * f];
        let mut out = vec![T::zero(); b * f];
        for r in 0..b {
            for j in 0..f {
                let h = (x[r * f + j] - mean[j]) * inv_std[j];
                xhat[r * f + j] = h;
                out[r * f + j] = g[j] * h + bt[j];
            }
        }
        let needs = self.needs(input) || self.needs(gamma) || self.needs(beta);
        let value = Tensor::new(vec![b, f], out)?;
        let v = self.push(
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            needs,
        );
        let moments = train.then_some(BatchMoments { mean, var, batch: b });
        Ok((v, moments))
    }

    /// Affine map of a length-`F` input through `[F, O]` weights plus `[O]` bias.
    pub fn dense(&mut self, input: Var, weights: Var, bias: Var) -> Result<Var> {
        let f = self.val(input).len();
        let (wf, o) = self.val(weights).dims2("dense weights")?;
        if wf != f {
            return Err(Error::shape(format!("dense: input has {f} features, weights expect {wf}")));
        }
        if self.val(bias).len() != o {
            return Err(Error::shape(format!("dense: bias length {} != {o}", self.val(bias).len())));
        }
        let x = self.val(input).data();
        let w = self.val(weights).data();
        let mut out = self.val(bias).data().to_vec();
        for (fi, &xv) in x.iter().enumerate() {
            for (oo, &wv) in out.iter_mut().zip(&w[fi * o..(fi + 1) * o]) {
                *oo = *oo + xv * wv;
            }
        }
        let needs = self.needs(input) || self.needs(weights) || self.needs(bias);
        Ok(self.push(
            Tensor::from_vec(out),
            Op::Dense {
                input,
                weights,
                bias,
            },
            needs,
        ))
    }

    /// Elementwise product with a constant mask (used for dropout).
    pub fn mask(&mut self, input: Var, mask: Vec<T>) -> Result<Var> {
        let x = self.val(input);
        if mask.len() != x.len() {
            return Err(Error::shape("mask length does not match input"));
        }
        let out: Vec<T> = x.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let value = Tensor::new(x.shape().to_vec(), out)?;
        let needs = self.needs(input);
        Ok(self.push(value, Op::Mask { input, mask }, needs))
    }

    /// Concatenates `[R_i, N]` tensors along the row axis.
    pub fn concat_rows(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = inputs.first().ok_or_else(|| Error::shape("concat_rows: no inputs"))?;
        let (_, n) = self.val(*first).dims2("concat_rows input")?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &v in inputs {
            let (r, nn) = self.val(v).dims2("concat_rows input")?;
            if nn != n {
                return Err(Error::shape(format!("concat_rows: time length {nn} != {n}")));
            }
            rows += r;
            data.extend_from_slice(self.val(v).data());
        }
        let needs = inputs.iter().any(|&v| self.needs(v));
        let value = Tensor::new(vec![rows, n], data)?;
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
            },
            needs,
        ))
    }

    /// Stacks equally sized tensors into a `[B, F]` matrix of flattened rows.
    pub fn stack(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = inputs.first().ok_or_else(|| Error::shape("stack: no inputs"))?;
        let f = self.val(*first).len();
        let mut data = Vec::with_capacity(f * inputs.len());
        for &v in inputs {
            if self.val(v).len() != f {
                return Err(Error::shape("stack: inputs differ in size"));
            }
            data.extend_from_slice(self.val(v).data());
        }
        let needs = inputs.iter().any(|&v| self.needs(v));
        let value = Tensor::new(vec![inputs.len(), f], data)?;
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
            },
            needs,
        ))
    }

    /// Row `index` of a `[B, F]` matrix, reshaped to `shape`.
    pub fn row(&mut self, input: Var, index: usize, shape: Vec<usize>) -> Result<Var> {
        let (b, f) = self.val(input).dims2("row input")?;
        if index >= b {
            return Err(Error::shape(format!("row {index} out of range for {b} rows")));
        }
        let data = self.val(input).data()[index * f..(index + 1) * f].to_vec();
        let value = Tensor::new(shape, data)?;
        let needs = self.needs(input);
        Ok(self.push(value, Op::Row { input, index }, needs))
    }

    pub fn reshape(&mut self, input: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.val(input).clone_value().reshape(shape)?;
        let needs = self.needs(input);
        Ok(self.push(value, Op::Reshape { input }, needs))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s: T = self.val(input).data().iter().copied().sum();
        let needs = self.needs(input);
        self.push(Tensor::scalar(s), Op::Sum { input }, needs)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.val(a), self.val(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape(format!("mul: {:?} vs {:?}", va.shape(), vb.shape())));
        }
        let out = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(va.shape().to_vec(), out)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Mul { a, b }, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.val(a), self.val(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape(format!("add: {:?} vs {:?}", va.shape(), vb.shape())));
        }
        let out = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(va.shape().to_vec(), out)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add { a, b }, needs))
    }

    /// Mean binary cross-entropy of single-element logits against 0/1 targets.
    pub fn bce_with_logits(&mut self, logits: &[Var], targets: &[f64]) -> Result<Var> {
        if logits.len() != targets.len() || logits.is_empty() {
            return Err(Error::shape("bce_with_logits: need one target per logit"));
        }
        let mut total = 0.0;
        for (&v, &y) in logits.iter().zip(targets) {
            let z = self.val(v);
            if z.len() != 1 {
                return Err(Error::Rank("bce_with_logits: logits must be scalars".into()));
            }
            let z = z.data()[0].as_f64();
            total += softplus(z) - y * z;
        }
        let loss = total / logits.len() as f64;
        let needs = logits.iter().any(|&v| self.needs(v));
        Ok(self.push(
            Tensor::scalar(T::from_f64(loss)),
            Op::BceWithLogits {
                logits: logits.to_vec(),
                targets: targets.to_vec(),
            },
            needs,
        ))
    }

    /// Records an operation with a caller-supplied backward rule.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor<T>, op: Box<dyn CustomOp<T>>) -> Var {
        let needs = inputs.iter().any(|&v| self.needs(v));
        self.push(
            output,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            needs,
        )
    }

    /// Reverse sweep from a scalar `loss`. Leaf gradients accumulate across calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Rank(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut leaf_grads = Vec::new();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                leaf_grads.push((i, g));
                continue;
            }
            for (v, contrib) in self.node_backward(i, &g) {
                match &mut grads[v.0] {
                    Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, &c)| *a = *a + c),
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        for (i, g) in leaf_grads {
            if let Some(acc) = self.nodes[i].value.grad_mut() {
                acc.iter_mut().zip(&g).for_each(|(a, &c)| *a = *a + c);
            }
        }
        Ok(())
    }

    fn node_backward(&self, i: usize, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let mut out = Vec::new();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Conv1dSame {
                input,
                kernels,
                bias,
            } => {
                let (c, n) = dims(self.val(*input));
                let (k, p) = dims(self.val(*kernels));
                let x = self.val(*input).data();
                let w = self.val(*kernels).data();
                if self.needs(*input) {
                    let mut gx = vec![T::zero(); c * n];
                    for ki in 0..k {
                        for ci in 0..c {
                            let r = ki * c + ci;
                            correlate_same_grad_input(
                                &g[r * n..(r + 1) * n],
                                &w[ki * p..(ki + 1) * p],
                                &mut gx[ci * n..(ci + 1) * n],
                            );
                        }
                    }
                    out.push((*input, gx));
                }
                if self.needs(*kernels) {
                    let mut gk = vec![T::zero(); k * p];
                    for ki in 0..k {
                        for ci in 0..c {
                            let r = ki * c + ci;
                            correlate_same_grad_kernel(
                                &g[r * n..(r + 1) * n],
                                &x[ci * n..(ci + 1) * n],
                                &mut gk[ki * p..(ki + 1) * p],
                            );
                        }
                    }
                    out.push((*kernels, gk));
                }
                if let Some(b) = bias.filter(|b| self.needs(*b)) {
                    let gb = (0..k)
                        .map(|ki| g[ki * c * n..(ki + 1) * c * n].iter().copied().sum())
                        .collect();
                    out.push((b, gb));
                }
            }
            Op::ConvMulti {
                input,
                kernels,
                bias,
            } => {
                let (c, n) = dims(self.val(*input));
                let &[o, _, p] = self.val(*kernels).shape() else {
                    unreachable!()
                };
                let x = self.val(*input).data();
                let w = self.val(*kernels).data();
                if self.needs(*input) {
                    let mut gx = vec![T::zero(); c * n];
                    for oi in 0..o {
                        for ci in 0..c {
                            correlate_same_grad_input(
                                &g[oi * n..(oi + 1) * n],
                                &w[(oi * c + ci) * p..(oi * c + ci + 1) * p],
                                &mut gx[ci * n..(ci + 1) * n],
                            );
                        }
                    }
                    out.push((*input, gx));
                }
                if self.needs(*kernels) {
                    let mut gk = vec![T::zero(); o * c * p];
                    for oi in 0..o {
                        for ci in 0..c {
                            correlate_same_grad_kernel(
                                &g[oi * n..(oi + 1) * n],
                                &x[ci * n..(ci + 1) * n],
                                &mut gk[(oi * c + ci) * p..(oi * c + ci + 1) * p],
                            );
                        }
                    }
                    out.push((*kernels, gk));
                }
                if let Some(b) = bias.filter(|b| self.needs(*b)) {
                    let gb = (0..o).map(|oi| g[oi * n..(oi + 1) * n].iter().copied().sum()).collect();
                    out.push((b, gb));
                }
            }
            Op::ChannelCollapse { input, weights } => {
                let (_, n) = dims(self.val(*input));
                let wt = self.val(*weights);
                let (gcount, c) = match wt.shape() {
                    [c] => (1, *c),
                    [gc, c] => (*gc, *c),
                    _ => unreachable!(),
                };
                let x = self.val(*input).data();
                let w = wt.data();
                if self.needs(*input) {
                    let mut gx = vec![T::zero(); gcount * c * n];
                    for gi in 0..gcount {
                        let go = &g[gi * n..(gi + 1) * n];
                        for ci in 0..c {
                            let wv = w[gi * c + ci];
                            let r = gi * c + ci;
                            for (d, &gv) in gx[r * n..(r + 1) * n].iter_mut().zip(go) {
                                *d = wv * gv;
                            }
                        }
                    }
                    out.push((*input, gx));
                }
                if self.needs(*weights) {
                    let mut gw = vec![T::zero(); gcount * c];
                    for gi in 0..gcount {
                        let go = &g[gi * n..(gi + 1) * n];
                        for ci in 0..c {
                            let r = gi * c + ci;
                            gw[r] = dot(go, &x[r * n..(r + 1) * n]);
                        }
                    }
                    out.push((*weights, gw));
                }
            }
            Op::AvgPool { input, window } => {
                let (c, n) = dims(self.val(*input));
                let m = n / window;
                let inv = T::one() / T::from_f64(*window as f64);
                let mut gx = vec![T::zero(); c * n];
                for ci in 0..c {
                    for i in 0..m {
                        let gv = g[ci * m + i] * inv;
                        gx[ci * n + i * window..ci * n + (i + 1) * window]
                            .iter_mut()
                            .for_each(|d| *d = gv);
                    }
                }
                out.push((*input, gx));
            }
            Op::Elu { input } => {
                let y = self.nodes[i].value.data();
                let gx = g
                    .iter()
                    .zip(y)
                    .map(|(&gv, &yv)| if yv > T::zero() { gv } else { gv * (yv + T::one()) })
                    .collect();
                out.push((*input, gx));
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let (b, f) = dims(self.val(*input));
                let gm = self.val(*gamma).data();
                let mut sum_g = vec![T::zero(); f];
                let mut sum_gx = vec![T::zero(); f];
                for r in 0..b {
                    for j in 0..f {
                        sum_g[j] = sum_g[j] + g[r * f + j];
                        sum_gx[j] = sum_gx[j] + g[r * f + j] * xhat[r * f + j];
                    }
                }
                if self.needs(*input) {
                    let mut gx = vec![T::zero(); b * f];
                    let bn = T::from_f64(b as f64);
                    for r in 0..b {
                        for j in 0..f {
                            let idx = r * f + j;
                            gx[idx] = if *train {
                                gm[j] * inv_std[j] / bn * (bn * g[idx] - sum_g[j] - xhat[idx] * sum_gx[j])
                            } else {
                                gm[j] * inv_std[j] * g[idx]
                            };
                        }
                    }
                    out.push((*input, gx));
                }
                if self.needs(*gamma) {
                    out.push((*gamma, sum_gx));
                }
                if self.needs(*beta) {
                    out.push((*beta, sum_g));
                }
            }
            Op::Dense {
                input,
                weights,
                bias,
            } => {
                let x = self.val(*input).data();
                let (f, o) = dims(self.val(*weights));
                let w = self.val(*weights).data();
                if self.needs(*input) {
                    let gx = (0..f)
                        .map(|fi| dot(&w[fi * o..(fi + 1) * o], g))
                        .collect();
                    out.push((*input, gx));
                }
                if self.needs(*weights) {
                    let mut gw = vec![T::zero(); f * o];
                    for fi in 0..f {
                        for oi in 0..o {
                            gw[fi * o + oi] = x[fi] * g[oi];
                        }
                    }
                    out.push((*weights, gw));
                }
                if self.needs(*bias) {
                    out.push((*bias, g.to_vec()));
                }
            }
            Op::Mask { input, mask } => {
                out.push((*input, g.iter().zip(mask).map(|(&a, &m)| a * m).collect()));
            }
            Op::Concat { inputs } => {
                let mut off = 0;
                for &v in inputs {
                    let len = self.val(v).len();
                    if self.needs(v) {
                        out.push((v, g[off..off + len].to_vec()));
                    }
                    off += len;
                }
            }
            Op::Row { input, index } => {
                let (b, f) = dims(self.val(*input));
                let mut gx = vec![T::zero(); b * f];
                gx[index * f..(index + 1) * f].copy_from_slice(g);
                out.push((*input, gx));
            }
            Op::Reshape { input } => out.push((*input, g.to_vec())),
            Op::Sum { input } => out.push((*input, vec![g[0]; self.val(*input).len()])),
            Op::Mul { a, b } => {
                if self.needs(*a) {
                    out.push((*a, g.iter().zip(self.val(*b).data()).map(|(&x, &y)| x * y).collect()));
                }
                if self.needs(*b) {
                    out.push((*b, g.iter().zip(self.val(*a).data()).map(|(&x, &y)| x * y).collect()));
                }
            }
            Op::Add { a, b } => {
                if self.needs(*a) {
                    out.push((*a, g.to_vec()));
                }
                if self.needs(*b) {
                    out.push((*b, g.to_vec()));
                }
            }
            Op::BceWithLogits { logits, targets } => {
                let scale = g[0].as_f64() / logits.len() as f64;
                for (&v, &y) in logits.iter().zip(targets) {
                    if self.needs(v) {
                        let z = self.val(v).data()[0].as_f64();
                        out.push((v, vec![T::from_f64((sigmoid(z) - y) * scale)]));
                    }
                }
            }
            Op::Custom { inputs, op } => {
                let vals: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.val(v)).collect();
                let grads = op.backward(&vals, &self.nodes[i].value, g);
                for (&v, gv) in inputs.iter().zip(grads) {
                    if self.needs(v) {
                        out.push((v, gv));
                    }
                }
            }
        }
        out
    }
}

fn dims<T: Scalar>(t: &Tensor<T>) -> (usize, usize) {
    match t.shape() {
        [a, b] => (*a, *b),
        _ => unreachable!("validated in forward"),
    }
}

impl<T: Scalar> Tensor<T> {
    fn clone_value(&self) -> Tensor<T> {
        Tensor::new(self.shape().to_vec(), self.data().to_vec()).expect("valid shape")
    }
}
