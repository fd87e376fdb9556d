//! Minimal n-dimensional tensors with tape-based reverse-mode differentiation.
//!
//! The design is a Wengert tape: every operation appends a node holding its
//! forward value and whatever context backward needs (pooling argmax, dropout
//! mask). Creation order is execution order, so the tape is already
//! topologically sorted and [`Tape::backward`] is a single reverse sweep.
//!
//! Layout is batch-channel-height-width, row-major, 64-bit floats. A tape is
//! consumed by its backward pass; running backward twice is an error rather
//! than silent gradient accumulation.

mod conv;
pub mod gradcheck;

use rand::Rng;

use crate::error::{Error, Result};
use crate::seed;

/// An owned n-dimensional array, row-major. Zero extents are allowed (the
/// empty tensor); every operation that needs positive extents checks for them.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn dims4(&self) -> Result<[usize; 4]> {
        match self.shape[..] {
            [n, c, h, w] => Ok([n, c, h, w]),
            _ => Err(Error::shape(format!(
                "expected a rank-4 tensor, got shape {:?}",
                self.shape
            ))),
        }
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Conv2d {
        x: Var,
        k: Var,
        b: Var,
        pad: (usize, usize),
    },
    Relu {
        x: Var,
    },
    Sigmoid {
        x: Var,
    },
    MaxPool2d {
        x: Var,
        argmax: Vec<usize>,
    },
    Upsample2d {
        x: Var,
    },
    ConcatChannels {
        a: Var,
        b: Var,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>, // per element: 0.0 or 1/(1-d)
    },
    MseLoss {
        pred: Var,
        target: Var,
    },
    Sum {
        x: Var,
    },
}

struct Node {
    op: Op,
    value: Tensor,
    /// True when a gradient must flow into or through this node.
    needs_grad: bool,
}

/// Records a forward computation and replays it in reverse for gradients.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    /// Register an input or parameter tensor.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(Op::Leaf, value, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.node(v).value.shape()
    }

    /// Gradient of the last backward pass w.r.t. `v`, if one flowed there.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    fn needs(&self, v: Var) -> bool {
        self.node(v).needs_grad
    }

    /// "Same" 2-D convolution, stride 1: output spatial size equals input.
    ///
    /// `pad` is the zero padding per side and must satisfy `2*pad = kernel-1`
    /// in each dimension (odd kernels).
    pub fn conv2d(&mut self, x: Var, k: Var, b: Var, pad: (usize, usize)) -> Result<Var> {
        let xs = self.value(x).dims4()?;
        let ks = self.value(k).dims4()?;
        let [n, ci, h, w] = xs;
        let [co, kci, kh, kw] = ks;
        if kci != ci {
            return Err(Error::shape(format!(
                "conv2d: input has {ci} channels but kernel expects {kci}"
            )));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::invalid(format!(
                "conv2d: kernel extents must be odd, got {kh}x{kw}"
            )));
        }
        if 2 * pad.0 != kh - 1 || 2 * pad.1 != kw - 1 {
            return Err(Error::invalid(format!(
                "conv2d: pad {pad:?} does not give a same-size output for a {kh}x{kw} kernel"
            )));
        }
        if self.value(b).shape() != [co] {
            return Err(Error::shape(format!(
                "conv2d: bias shape {:?} does not match {co} output channels",
                self.value(b).shape()
            )));
        }
        let mut out = vec![0.0; n * co * h * w];
        conv::conv2d_forward(
            self.value(x).data(),
            xs,
            self.value(k).data(),
            ks,
            self.value(b).data(),
            pad,
            &mut out,
        );
        let needs = self.needs(x) || self.needs(k) || self.needs(b);
        Ok(self.push(
            Op::Conv2d { x, k, b, pad },
            Tensor::new(vec![n, co, h, w], out)?,
            needs,
        ))
    }

    /// Elementwise max(0, x). The gradient at exactly zero is taken as zero.
    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        let out = Tensor {
            shape: value.shape.clone(),
            data: value.data.iter().map(|&v| v.max(0.0)).collect(),
        };
        let needs = self.needs(x);
        self.push(Op::Relu { x }, out, needs)
    }

    /// Elementwise logistic function, clamped into the open interval (0, 1).
    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x);
        let out = Tensor {
            shape: value.shape.clone(),
            data: value.data.iter().map(|&v| sigmoid_scalar(v)).collect(),
        };
        let needs = self.needs(x);
        self.push(Op::Sigmoid { x }, out, needs)
    }

    /// 2x2 max pooling with stride 2; spatial extents must be even.
    pub fn maxpool2d(&mut self, x: Var) -> Result<Var> {
        let xs = self.value(x).dims4()?;
        let [n, c, h, w] = xs;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(format!(
                "maxpool2d: spatial extents must be even, got {h}x{w}"
            )));
        }
        let mut out = vec![0.0; n * c * (h / 2) * (w / 2)];
        let mut argmax = Vec::new();
        conv::maxpool2d_forward(self.value(x).data(), xs, &mut out, &mut argmax);
        let needs = self.needs(x);
        Ok(self.push(
            Op::MaxPool2d { x, argmax },
            Tensor::new(vec![n, c, h / 2, w / 2], out)?,
            needs,
        ))
    }

    /// Nearest-neighbour 2x upsampling: every value becomes a 2x2 block.
    pub fn upsample2d_nearest(&mut self, x: Var) -> Result<Var> {
        let xs = self.value(x).dims4()?;
        let [n, c, h, w] = xs;
        let mut out = vec![0.0; n * c * 4 * h * w];
        conv::upsample2d_forward(self.value(x).data(), xs, &mut out);
        let needs = self.needs(x);
        Ok(self.push(
            Op::Upsample2d { x },
            Tensor::new(vec![n, c, 2 * h, 2 * w], out)?,
            needs,
        ))
    }

    /// Concatenate along the channel dimension; batch and spatial extents must
    /// agree. Either input may have zero channels.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let [na, ca, ha, wa] = self.value(a).dims4()?;
        let [nb, cb, hb, wb] = self.value(b).dims4()?;
        if na != nb || ha != hb || wa != wb {
            return Err(Error::shape(format!(
                "concat_channels: {:?} and {:?} differ outside the channel dim",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let plane = ha * wa;
        let mut out = Vec::with_capacity(na * (ca + cb) * plane);
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        for ni in 0..na {
            out.extend_from_slice(&ad[ni * ca * plane..(ni + 1) * ca * plane]);
            out.extend_from_slice(&bd[ni * cb * plane..(ni + 1) * cb * plane]);
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(
            Op::ConcatChannels { a, b },
            Tensor::new(vec![na, ca + cb, ha, wa], out)?,
            needs,
        ))
    }

    /// Inverted dropout: in training mode a `rate` fraction of units is zeroed
    /// and survivors are scaled by 1/(1-rate), so inference is the identity.
    ///
    /// With `training == false` or `rate == 0` this is exactly the identity
    /// (the input var is returned unchanged and nothing is recorded).
    pub fn dropout(&mut self, x: Var, rate: f64, training: bool, mask_seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!(
                "dropout rate must lie in [0, 1), got {rate}"
            )));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - rate;
        let scale = 1.0 / keep;
        let mut rng = seed::stream_rng(mask_seed, 0);
        let value = self.value(x);
        let mask: Vec<f64> = (0..value.numel())
            .map(|_| if rng.random::<f64>() < keep { scale } else { 0.0 })
            .collect();
        let out = Tensor {
            shape: value.shape.clone(),
            data: value.data.iter().zip(&mask).map(|(&v, &m)| v * m).collect(),
        };
        let needs = self.needs(x);
        Ok(self.push(Op::Dropout { x, mask }, out, needs))
    }

    /// Mean over all elements of the squared difference. Scalar output.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        if self.value(pred).shape() != self.value(target).shape() {
            return Err(Error::shape(format!(
                "mse_loss: shapes {:?} and {:?} differ",
                self.value(pred).shape(),
                self.value(target).shape()
            )));
        }
        let n = self.value(pred).numel();
        if n == 0 {
            return Err(Error::contract("mse_loss over an empty tensor"));
        }
        let mut acc = 0.0;
        for (p, t) in self.value(pred).data().iter().zip(self.value(target).data()) {
            let d = p - t;
            acc += d * d;
        }
        let needs = self.needs(pred) || self.needs(target);
        Ok(self.push(
            Op::MseLoss { pred, target },
            Tensor::scalar(acc / n as f64),
            needs,
        ))
    }

    /// Sum over all elements. Scalar output.
    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        let needs = self.needs(x);
        self.push(Op::Sum { x }, Tensor::scalar(total), needs)
    }

    /// Reverse sweep from a scalar loss. Every leaf created with
    /// `requires_grad` that participates in the loss ends up with a gradient
    /// readable through [`Tape::grad`]. The tape is consumed: a second call
    /// is a contract error.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::contract(
                "backward called on an already-consumed tape",
            ));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.consumed = true;
        self.grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(dy) = self.grads[idx].take() else {
                continue;
            };
            self.backward_node(idx, &dy);
            self.grads[idx] = Some(dy);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, contribution: &[f64]) {
        let slot = &mut self.grads[v.0];
        match slot {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contribution) {
                    *gi += ci;
                }
            }
            None => *slot = Some(contribution.to_vec()),
        }
    }

    fn grad_or_zeros(&mut self, v: Var) -> &mut Vec<f64> {
        let numel = self.nodes[v.0].value.numel();
        self.grads[v.0].get_or_insert_with(|| vec![0.0; numel])
    }

    fn backward_node(&mut self, idx: usize, dy: &[f64]) {
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Conv2d { x, k, b, pad } => {
                let (x, k, b, pad) = (*x, *k, *b, *pad);
                let xs = self.value(x).dims4().expect("checked at forward");
                let ks = self.value(k).dims4().expect("checked at forward");
                if self.needs(x) {
                    let mut dx = vec![0.0; self.value(x).numel()];
                    conv::conv2d_backward_input(dy, self.value(k).data(), ks, xs, pad, &mut dx);
                    self.accumulate(x, &dx);
                }
                if self.needs(k) || self.needs(b) {
                    let mut dk = vec![0.0; self.value(k).numel()];
                    let mut db = vec![0.0; self.value(b).numel()];
                    conv::conv2d_backward_params(
                        dy,
                        self.value(x).data(),
                        xs,
                        ks,
                        pad,
                        &mut dk,
                        &mut db,
                    );
                    if self.needs(k) {
                        self.accumulate(k, &dk);
                    }
                    if self.needs(b) {
                        self.accumulate(b, &db);
                    }
                }
            }
            Op::Relu { x } => {
                let x = *x;
                if self.needs(x) {
                    let dx: Vec<f64> = self
                        .value(x)
                        .data()
                        .iter()
                        .zip(dy)
                        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                        .collect();
                    self.accumulate(x, &dx);
                }
            }
            Op::Sigmoid { x } => {
                let x = *x;
                if self.needs(x) {
                    let dx: Vec<f64> = self.nodes[idx]
                        .value
                        .data()
                        .iter()
                        .zip(dy)
                        .map(|(&s, &g)| g * s * (1.0 - s))
                        .collect();
                    self.accumulate(x, &dx);
                }
            }
            Op::MaxPool2d { x, argmax } => {
                let x = *x;
                if self.needs(x) {
                    let mut dx = vec![0.0; self.value(x).numel()];
                    for (o, &src) in argmax.iter().enumerate() {
                        dx[src] += dy[o];
                    }
                    self.accumulate(x, &dx);
                }
            }
            Op::Upsample2d { x } => {
                let x = *x;
                if self.needs(x) {
                    let xs = self.value(x).dims4().expect("checked at forward");
                    let mut dx = vec![0.0; self.value(x).numel()];
                    conv::upsample2d_backward(dy, xs, &mut dx);
                    self.accumulate(x, &dx);
                }
            }
            Op::ConcatChannels { a, b } => {
                let (a, b) = (*a, *b);
                let [na, ca, h, w] = self.value(a).dims4().expect("checked at forward");
                let cb = self.value(b).shape()[1];
                let plane = h * w;
                if self.needs(a) {
                    let mut da = vec![0.0; self.value(a).numel()];
                    for ni in 0..na {
                        let src = ni * (ca + cb) * plane;
                        da[ni * ca * plane..(ni + 1) * ca * plane]
                            .copy_from_slice(&dy[src..src + ca * plane]);
                    }
                    self.accumulate(a, &da);
                }
                if self.needs(b) {
                    let mut db = vec![0.0; self.value(b).numel()];
                    for ni in 0..na {
                        let src = ni * (ca + cb) * plane + ca * plane;
                        db[ni * cb * plane..(ni + 1) * cb * plane]
                            .copy_from_slice(&dy[src..src + cb * plane]);
                    }
                    self.accumulate(b, &db);
                }
            }
            Op::Dropout { x, mask } => {
                let x = *x;
                if self.needs(x) {
                    let dx: Vec<f64> = mask.iter().zip(dy).map(|(&m, &g)| m * g).collect();
                    self.accumulate(x, &dx);
                }
            }
            Op::MseLoss { pred, target } => {
                let (pred, target) = (*pred, *target);
                let n = self.value(pred).numel() as f64;
                let g = dy[0];
                if self.needs(pred) {
                    let dp: Vec<f64> = self
                        .value(pred)
                        .data()
                        .iter()
                        .zip(self.value(target).data())
                        .map(|(&p, &t)| g * 2.0 * (p - t) / n)
                        .collect();
                    self.accumulate(pred, &dp);
                }
                if self.needs(target) {
                    let dt: Vec<f64> = self
                        .value(pred)
                        .data()
                        .iter()
                        .zip(self.value(target).data())
                        .map(|(&p, &t)| g * -2.0 * (p - t) / n)
                        .collect();
                    self.accumulate(target, &dt);
                }
            }
            Op::Sum { x } => {
                let x = *x;
                if self.needs(x) {
                    let g = dy[0];
                    let numel = self.value(x).numel();
                    let dx = vec![g; numel];
                    self.accumulate(x, &dx);
                }
            }
        }
        let _ = self.grad_or_zeros(Var(idx)); // keep slot allocated for inspection
    }
}

/// Numerically stable logistic function with output clamped into (0, 1).
fn sigmoid_scalar(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    // Largest double below 1.0; keeps the open-interval guarantee for any
    // finite input.
    const ONE_BELOW: f64 = 1.0 - f64::EPSILON / 2.0;
    s.clamp(f64::MIN_POSITIVE, ONE_BELOW)
}
