use rand::Rng;

use super::kernels::{self, ConvGeom, ConvTransposeGeom, Padding};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Running mean/variance buffers of a batch-normalization layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

/// Operation tag plus whatever the backward rule needs.
#[derive(Clone, Debug)]
pub enum OpKind<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    ConvTranspose {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvTransposeGeom,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Crop {
        x: Var,
        top: usize,
        left: usize,
    },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Dropout {
        x: Var,
        /// Zero for dropped elements, `1/(1-rate)` for survivors.
        scale: Vec<T>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        training: bool,
    },
    Concat {
        parts: Vec<Var>,
    },
    Scale {
        x: Var,
        factor: T,
    },
    Sum(Var),
    Bce {
        p: Var,
        y: Var,
        eps: T,
    },
    Dice {
        p: Var,
        y: Var,
        smooth: T,
    },
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: OpKind<T>,
    needs_grad: bool,
}

/// Append-only record of a computation; nodes are in topological order by
/// construction since every op only references existing handles.
#[derive(Clone, Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
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

    /// Records a leaf. Its gradient is accumulated iff
    /// [`Tensor::requires_grad`] is set.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        let needs_grad = value.requires_grad();
        self.push(value, OpKind::Leaf, needs_grad)
    }

    /// Every recorded handle in recording order.
    pub fn vars(&self) -> impl Iterator<Item = Var> {
        (0..self.nodes.len()).map(Var)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn op(&self, v: Var) -> &OpKind<T> {
        &self.nodes[v.0].op
    }

    /// Accumulated gradient of a leaf.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
    }

    fn push(&mut self, value: Tensor<T>, op: OpKind<T>, needs_grad: bool) -> Var {
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

    fn dims(&self, v: Var) -> Result<[usize; 4]> {
        self.value(v).dims4()
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        dilation: usize,
        padding: Padding,
    ) -> Result<Var> {
        self.conv2d_strided(x, w, b, dilation, 1, padding)
    }

    /// General strided convolution. The networks only use stride 1; the
    /// strided form exists as the adjoint partner of [`Tape::conv_transpose`].
    pub fn conv2d_strided(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        dilation: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        let geom = ConvGeom::new(self.dims(x)?, self.dims(w)?, dilation, stride, padding)?;
        if let Some(b) = b {
            if self.value(b).len() != geom.filters {
                return Err(Error::shape("bias length must equal the filter count"));
            }
        }
        let out = kernels::conv2d_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let value = Tensor::new(&geom.out_shape(), out)?;
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(value, OpKind::Conv2d { x, w, b, geom }, needs))
    }

    pub fn conv_transpose(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        let geom = ConvTransposeGeom::new(self.dims(x)?, self.dims(w)?, stride)?;
        if let Some(b) = b {
            if self.value(b).len() != geom.window.channels {
                return Err(Error::shape("bias length must equal the output channel count"));
            }
        }
        let out = kernels::conv_transpose_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let value = Tensor::new(&geom.out_shape(), out)?;
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(value, OpKind::ConvTranspose { x, w, b, geom }, needs))
    }

    pub fn maxpool2d(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.dims(x)?;
        let (out, argmax) = kernels::maxpool2_forward([n, c, h, w], self.value(x).data())?;
        let value = Tensor::new(&[n, c, h / 2, w / 2], out)?;
        let needs = self.needs(x);
        Ok(self.push(value, OpKind::MaxPool { x, argmax }, needs))
    }

    /// Spatial crop of every plane to `h x w` starting at `(top, left)`.
    pub fn crop(&mut self, x: Var, top: usize, left: usize, h: usize, w: usize) -> Result<Var> {
        let [n, c, ih, iw] = self.dims(x)?;
        if h == 0 || w == 0 || top + h > ih || left + w > iw {
            return Err(Error::shape(format!(
                "crop {h}x{w} at ({top},{left}) does not fit in {ih}x{iw}"
            )));
        }
        if (top, left, h, w) == (0, 0, ih, iw) {
            return Ok(x);
        }
        let out = kernels::crop_forward([n, c, ih, iw], self.value(x).data(), top, left, h, w);
        let value = Tensor::new(&[n, c, h, w], out)?;
        let needs = self.needs(x);
        Ok(self.push(value, OpKind::Crop { x, top, left }, needs))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: OpKind<T>) -> Var {
        let value = self.value(x).map(f);
        let needs = self.needs(x);
        self.push(value, op, needs)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(T::zero()), OpKind::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, |v| T::one() / (T::one() + (-v).exp()), OpKind::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.tanh(), OpKind::Tanh(x))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        self.unary(x, |v| v * factor, OpKind::Scale { x, factor })
    }

    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = T::lit(1.0 / (1.0 - rate));
        let scale: Vec<T> = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let src = self.value(x);
        let value = Tensor::new(
            src.shape(),
            src.data().iter().zip(&scale).map(|(&v, &s)| v * s).collect(),
        )?;
        let needs = self.needs(x);
        Ok(self.push(value, OpKind::Dropout { x, scale }, needs))
    }

    /// Per-channel batch normalization. Training mode normalizes with batch
    /// statistics and updates `running` as
    /// `running = (1 - momentum) * running + momentum * batch`; inference
    /// mode uses `running` unchanged.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: &mut RunningStats<T>,
        momentum: T,
        eps: T,
        training: bool,
    ) -> Result<Var> {
        let [n, c, h, w] = self.dims(x)?;
        if self.value(gamma).len() != c || self.value(beta).len() != c || running.mean.len() != c {
            return Err(Error::shape(format!("batchnorm parameters must have {c} channels")));
        }
        let (mean, var) = if training {
            let (mean, var) = kernels::channel_stats([n, c, h, w], self.value(x).data());
            let count = n * h * w;
            let unbias = if count > 1 {
                T::from_usize(count).unwrap() / T::from_usize(count - 1).unwrap()
            } else {
                T::one()
            };
            for ch in 0..c {
                running.mean[ch] = (T::one() - momentum) * running.mean[ch] + momentum * mean[ch];
                running.var[ch] = (T::one() - momentum) * running.var[ch] + momentum * var[ch] * unbias;
            }
            (mean, var)
        } else {
            (running.mean.clone(), running.var.clone())
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let plane = h * w;
        let xs = self.value(x).data();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![T::zero(); xs.len()];
        let mut out = vec![T::zero(); xs.len()];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * plane;
                for i in off..off + plane {
                    let z = (xs[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = z;
                    out[i] = g[ch] * z + bt[ch];
                }
            }
        }
        let value = Tensor::new(&[n, c, h, w], out)?;
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            value,
            OpKind::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                training,
            },
            needs,
        ))
    }

    /// Center-crops every input to the smallest spatial extent among them and
    /// concatenates along channels. Odd differences put the extra row/column
    /// on the bottom/right.
    pub fn concat_crop(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = *inputs.first().ok_or(Error::Empty("concat_crop needs at least one input"))?;
        let n = self.dims(first)?[0];
        let mut h = usize::MAX;
        let mut w = usize::MAX;
        for &v in inputs {
            let d = self.dims(v)?;
            if d[0] != n {
                return Err(Error::shape("concat inputs must share the batch size"));
            }
            h = h.min(d[2]);
            w = w.min(d[3]);
        }
        let mut parts = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let [_, _, ih, iw] = self.dims(v)?;
            parts.push(self.crop(v, (ih - h) / 2, (iw - w) / 2, h, w)?);
        }
        let channels: usize = parts.iter().map(|&p| self.value(p).shape()[1]).sum();
        let mut out = Vec::with_capacity(n * channels * h * w);
        for b in 0..n {
            for &p in &parts {
                let c = self.value(p).shape()[1];
                out.extend_from_slice(&self.value(p).data()[b * c * h * w..][..c * h * w]);
            }
        }
        let value = Tensor::new(&[n, channels, h, w], out)?;
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(value, OpKind::Concat { parts }, needs))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(s), OpKind::Sum(x), needs)
    }

    fn congruent(&self, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(format!(
                "{:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    /// Mean binary cross-entropy of predictions `p` against targets `y`.
    pub fn bce_loss(&mut self, p: Var, y: Var, eps: T) -> Result<Var> {
        self.congruent(p, y)?;
        let l = kernels::bce(self.value(p).data(), self.value(y).data(), eps);
        let needs = self.needs(p) || self.needs(y);
        Ok(self.push(Tensor::scalar(l), OpKind::Bce { p, y, eps }, needs))
    }

    pub fn dice_coeff(&mut self, p: Var, y: Var, smooth: T) -> Result<Var> {
        self.congruent(p, y)?;
        let d = kernels::dice(self.value(p).data(), self.value(y).data(), smooth);
        let needs = self.needs(p) || self.needs(y);
        Ok(self.push(Tensor::scalar(d), OpKind::Dice { p, y, smooth }, needs))
    }

    /// Reverse-mode sweep from a scalar node. Gradients of leaves accumulate
    /// across calls until [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            if let OpKind::Leaf = self.nodes[i].op {
                self.nodes[i].value.accumulate_grad(&g);
                continue;
            }
            for (input, contribution) in self.input_grads(i, &g) {
                let slot = &mut grads[input.0];
                match slot {
                    Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, &b)| *a = *a + b),
                    None => *slot = Some(contribution),
                }
            }
        }
        Ok(())
    }

    fn input_grads(&self, i: usize, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let node = &self.nodes[i];
        let val = |v: Var| self.nodes[v.0].value.data();
        let mut out = Vec::new();
        match &node.op {
            OpKind::Leaf => {}
            OpKind::Conv2d { x, w, b, geom } => {
                let (dx, dw, db) = kernels::conv2d_backward(geom, val(*x), val(*w), g, self.needs(*x));
                if let Some(dx) = dx {
                    out.push((*x, dx));
                }
                if self.needs(*w) {
                    out.push((*w, dw));
                }
                if let Some(b) = b.filter(|&b| self.needs(b)) {
                    out.push((b, db));
                }
            }
            OpKind::ConvTranspose { x, w, b, geom } => {
                let (dx, dw, db) =
                    kernels::conv_transpose_backward(geom, val(*x), val(*w), g, self.needs(*x));
                if let Some(dx) = dx {
                    out.push((*x, dx));
                }
                if self.needs(*w) {
                    out.push((*w, dw));
                }
                if let Some(b) = b.filter(|&b| self.needs(b)) {
                    out.push((b, db));
                }
            }
            OpKind::MaxPool { x, argmax } => {
                let mut dx = vec![T::zero(); val(*x).len()];
                for (&idx, &gv) in argmax.iter().zip(g) {
                    dx[idx] = dx[idx] + gv;
                }
                out.push((*x, dx));
            }
            OpKind::Crop { x, top, left } => {
                let shape = self.nodes[x.0].value.dims4().expect("4-d");
                let [_, _, h, w] = node.value.dims4().expect("4-d");
                let mut dx = vec![T::zero(); val(*x).len()];
                kernels::crop_backward_into(shape, g, &mut dx, *top, *left, h, w);
                out.push((*x, dx));
            }
            OpKind::Relu(x) => {
                let dx = val(*x)
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v > T::zero() { gv } else { T::zero() })
                    .collect();
                out.push((*x, dx));
            }
            OpKind::Sigmoid(x) => {
                let dx = node
                    .value
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&s, &gv)| gv * s * (T::one() - s))
                    .collect();
                out.push((*x, dx));
            }
            OpKind::Tanh(x) => {
                let dx = node
                    .value
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&t, &gv)| gv * (T::one() - t * t))
                    .collect();
                out.push((*x, dx));
            }
            OpKind::Dropout { x, scale } => {
                out.push((*x, g.iter().zip(scale).map(|(&gv, &s)| gv * s).collect()));
            }
            OpKind::Scale { x, factor } => {
                out.push((*x, g.iter().map(|&gv| gv * *factor).collect()));
            }
            OpKind::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                training,
            } => {
                let [n, c, h, w] = node.value.dims4().expect("4-d");
                let plane = h * w;
                let gam = val(*gamma);
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for b in 0..n {
                    for ch in 0..c {
                        let off = (b * c + ch) * plane;
                        for k in off..off + plane {
                            dgamma[ch] = dgamma[ch] + g[k] * xhat[k];
                            dbeta[ch] = dbeta[ch] + g[k];
                        }
                    }
                }
                if self.needs(*x) {
                    let mut dx = vec![T::zero(); g.len()];
                    let m = T::from_usize(n * plane).unwrap();
                    for ch in 0..c {
                        let scale = gam[ch] * inv_std[ch];
                        for b in 0..n {
                            let off = (b * c + ch) * plane;
                            for k in off..off + plane {
                                dx[k] = if *training {
                                    scale * (g[k] - dbeta[ch] / m - xhat[k] * dgamma[ch] / m)
                                } else {
                                    scale * g[k]
                                };
                            }
                        }
                    }
                    out.push((*x, dx));
                }
                if self.needs(*gamma) {
                    out.push((*gamma, dgamma));
                }
                if self.needs(*beta) {
                    out.push((*beta, dbeta));
                }
            }
            OpKind::Concat { parts } => {
                let [n, channels, h, w] = node.value.dims4().expect("4-d");
                let plane = h * w;
                let mut offset = 0;
                for &p in parts {
                    let c = self.nodes[p.0].value.shape()[1];
                    if self.needs(p) {
                        let mut dp = Vec::with_capacity(n * c * plane);
                        for b in 0..n {
                            dp.extend_from_slice(&g[(b * channels + offset) * plane..][..c * plane]);
                        }
                        out.push((p, dp));
                    }
                    offset += c;
                }
            }
            OpKind::Sum(x) => {
                out.push((*x, vec![g[0]; val(*x).len()]));
            }
            OpKind::Bce { p, y, eps } => {
                if self.needs(*p) {
                    let dp = kernels::bce_grad(val(*p), val(*y), *eps);
                    out.push((*p, dp.into_iter().map(|d| d * g[0]).collect()));
                }
            }
            OpKind::Dice { p, y, smooth } => {
                if self.needs(*p) {
                    let dp = kernels::dice_grad(val(*p), val(*y), *smooth);
                    out.push((*p, dp.into_iter().map(|d| d * g[0]).collect()));
                }
            }
        }
        out
    }
}
