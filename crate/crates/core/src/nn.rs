//! Parameter storage, layers and optimizers shared by the three networks.

use std::cell::RefCell;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::Var;
use crate::tensor::{ConvGeom, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BufferId(usize);

/// Whether normalization layers use batch statistics (and update their
/// running averages) or the stored running averages.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Named trainable parameters plus non-trainable buffers (running stats).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<(String, Tensor)>,
    buffers: Vec<(String, Tensor)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_param(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.params.push((name.into(), value));
        ParamId(self.params.len() - 1)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor) -> BufferId {
        self.buffers.push((name.into(), value));
        BufferId(self.buffers.len() - 1)
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.buffers.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn param(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].1
    }

    pub fn param_at(&self, index: usize) -> &Tensor {
        &self.params[index].1
    }

    pub fn set_param_at(&mut self, index: usize, value: Tensor) {
        assert_eq!(self.params[index].1.shape(), value.shape());
        self.params[index].1 = value;
    }

    pub fn buffer(&self, id: BufferId) -> &Tensor {
        &self.buffers[id.0].1
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Replaces every tensor, keeping names; shapes must agree.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<(), String> {
        if self.params.len() != other.params.len() || self.buffers.len() != other.buffers.len() {
            return Err("parameter layout differs".into());
        }
        for (mine, theirs) in self
            .params
            .iter_mut()
            .chain(self.buffers.iter_mut())
            .zip(other.params.iter().chain(other.buffers.iter()))
        {
            if mine.0 != theirs.0 || mine.1.shape() != theirs.1.shape() {
                return Err(format!(
                    "tensor {} {:?} does not match {} {:?}",
                    mine.0,
                    mine.1.shape(),
                    theirs.0,
                    theirs.1.shape()
                ));
            }
            mine.1 = theirs.1.clone();
        }
        Ok(())
    }

    /// Wraps the parameters as graph values for one forward pass.
    pub fn bind(&self, trainable: bool, mode: Mode) -> Bound<'_> {
        let vars = self
            .params
            .iter()
            .map(|(_, t)| {
                if trainable {
                    Var::leaf(t.clone())
                } else {
                    Var::constant(t.clone())
                }
            })
            .collect();
        Bound {
            store: self,
            vars,
            mode,
            updates: RefCell::new(Vec::new()),
        }
    }

    pub fn apply_buffer_updates(&mut self, updates: Vec<(BufferId, Tensor)>) {
        for (id, t) in updates {
            self.buffers[id.0].1 = t;
        }
    }
}

/// Parameters bound into the graph for one forward/backward pass.
pub struct Bound<'a> {
    store: &'a ParamStore,
    vars: Vec<Var>,
    mode: Mode,
    updates: RefCell<Vec<(BufferId, Tensor)>>,
}

impl Bound<'_> {
    pub fn var(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }

    pub fn vars(&self) -> Vec<&Var> {
        self.vars.iter().collect()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    fn buffer(&self, id: BufferId) -> &Tensor {
        self.store.buffer(id)
    }

    fn record(&self, id: BufferId, value: Tensor) {
        self.updates.borrow_mut().push((id, value));
    }

    /// Running-statistic updates produced by train-mode normalization.
    pub fn take_updates(&self) -> Vec<(BufferId, Tensor)> {
        std::mem::take(&mut self.updates.borrow_mut())
    }
}

pub fn normal_tensor(rng: &mut impl Rng, shape: &[usize], std: f64) -> Tensor {
    let dist = Normal::new(0.0, std).expect("std must be finite and non-negative");
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| dist.sample(rng)).collect())
}

/// How conv/linear weights are initialized.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// N(0, std²) regardless of fan-in.
    Normal(f64),
    /// N(0, 2 / fan_in).
    FanIn,
}

impl Init {
    fn std(self, fan_in: usize) -> f64 {
        match self {
            Init::Normal(s) => s,
            Init::FanIn => (2.0 / fan_in as f64).sqrt(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub geom: ConvGeom,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        rng: &mut impl Rng,
        init: Init,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        geom: ConvGeom,
        bias: bool,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let w = normal_tensor(rng, &[out_channels, in_channels, kernel, kernel], init.std(fan_in));
        let weight = store.add_param(format!("{name}.weight"), w);
        let bias = bias.then(|| store.add_param(format!("{name}.bias"), Tensor::zeros(&[1, out_channels, 1, 1])));
        Conv2d {
            weight,
            bias,
            geom,
            in_channels,
            out_channels,
            kernel,
        }
    }

    pub fn forward(&self, p: &Bound, x: &Var) -> Var {
        let y = x.conv2d(p.var(self.weight), self.geom);
        match self.bias {
            Some(b) => y.add(p.var(b)),
            None => y,
        }
    }
}

/// Transposed convolution; the weight is laid out `[in, out, k, k]`.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub geom: ConvGeom,
    pub kernel: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        rng: &mut impl Rng,
        init: Init,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        geom: ConvGeom,
        bias: bool,
    ) -> Self {
        let w = normal_tensor(rng, &[in_channels, out_channels, kernel, kernel], init.std(in_channels * kernel * kernel));
        let weight = store.add_param(format!("{name}.weight"), w);
        let bias = bias.then(|| store.add_param(format!("{name}.bias"), Tensor::zeros(&[1, out_channels, 1, 1])));
        ConvTranspose2d {
            weight,
            bias,
            geom,
            kernel,
        }
    }

    pub fn out_len(&self, input: usize) -> usize {
        (input - 1) * self.geom.stride + self.kernel - 2 * self.geom.pad
    }

    pub fn forward(&self, p: &Bound, x: &Var) -> Var {
        let s = x.shape();
        let hw = (self.out_len(s[2]), self.out_len(s[3]));
        let y = x.conv_transpose2d(p.var(self.weight), self.geom, hw);
        match self.bias {
            Some(b) => y.add(p.var(b)),
            None => y,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        rng: &mut impl Rng,
        init: Init,
        in_features: usize,
        out_features: usize,
    ) -> Self {
        let w = normal_tensor(rng, &[out_features, in_features], init.std(in_features));
        Linear {
            weight: store.add_param(format!("{name}.weight"), w),
            bias: store.add_param(format!("{name}.bias"), Tensor::zeros(&[1, out_features])),
            in_features,
            out_features,
        }
    }

    pub fn forward(&self, p: &Bound, x: &Var) -> Var {
        x.matmul(p.var(self.weight), false, true).add(p.var(self.bias))
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
    pub channels: usize,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm2d {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        let s = [1, channels, 1, 1];
        BatchNorm2d {
            gamma: store.add_param(format!("{name}.gamma"), Tensor::ones(&s)),
            beta: store.add_param(format!("{name}.beta"), Tensor::zeros(&s)),
            running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(&s)),
            running_var: store.add_buffer(format!("{name}.running_var"), Tensor::ones(&s)),
            channels,
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn forward(&self, p: &Bound, x: &Var) -> Var {
        let s = [1, self.channels, 1, 1];
        let (centered, var) = match p.mode() {
            Mode::Train => {
                let mean = x.mean_to(&s);
                let centered = x.sub(&mean);
                let var = centered.square().mean_to(&s);
                let n = (x.value().numel() / self.channels) as f64;
                let unbiased = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
                let m = self.momentum;
                let rm = p.buffer(self.running_mean);
                let rv = p.buffer(self.running_var);
                p.record(
                    self.running_mean,
                    rm.zip_with(mean.value(), |r, b| (1.0 - m) * r + m * b),
                );
                p.record(
                    self.running_var,
                    rv.zip_with(var.value(), |r, b| (1.0 - m) * r + m * b * unbiased),
                );
                (centered, var)
            }
            Mode::Eval => {
                let mean = Var::constant(p.buffer(self.running_mean).clone());
                let var = Var::constant(p.buffer(self.running_var).clone());
                (x.sub(&mean), var)
            }
        };
        let inv = var.add_scalar(self.eps).sqrt();
        centered.div(&inv).mul(p.var(self.gamma)).add(p.var(self.beta))
    }
}

/// Per-sample normalization over channels and space, with a per-channel
/// affine. Samples never interact, which the gradient penalty requires.
#[derive(Clone, Debug)]
pub struct LayerNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub channels: usize,
    pub eps: f64,
}

impl LayerNorm2d {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        let s = [1, channels, 1, 1];
        LayerNorm2d {
            gamma: store.add_param(format!("{name}.gamma"), Tensor::ones(&s)),
            beta: store.add_param(format!("{name}.beta"), Tensor::zeros(&s)),
            channels,
            eps: 1e-5,
        }
    }

    pub fn forward(&self, p: &Bound, x: &Var) -> Var {
        let n = x.shape()[0];
        let s = [n, 1, 1, 1];
        let centered = x.sub(&x.mean_to(&s));
        let var = centered.square().mean_to(&s);
        centered
            .div(&var.add_scalar(self.eps).sqrt())
            .mul(p.var(self.gamma))
            .add(p.var(self.beta))
    }
}

/// Mean cross-entropy of `[N, K]` logits against integer labels.
pub fn cross_entropy(logits: &Var, labels: &[usize]) -> Var {
    let k = logits.shape()[1];
    assert_eq!(logits.shape()[0], labels.len());
    let mut onehot = vec![0.0; labels.len() * k];
    for (i, &l) in labels.iter().enumerate() {
        onehot[i * k + l] = 1.0;
    }
    let onehot = Tensor::from_vec(logits.shape(), onehot);
    logits
        .log_softmax()
        .mul_const(&onehot)
        .sum()
        .scale(-1.0 / labels.len() as f64)
}

pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let k = logits.shape()[1];
    let mut out = Vec::with_capacity(logits.numel());
    for row in logits.data().chunks(k) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        out.extend(e.into_iter().map(|v| v / s));
    }
    Tensor::from_vec(logits.shape(), out)
}

/// Adaptive moment estimation over every parameter of a store.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            weight_decay: 0.0,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn with_weight_decay(mut self, wd: f64) -> Self {
        self.weight_decay = wd;
        self
    }

    /// Applies one update with gradients ordered as the store's parameters.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor]) {
        assert_eq!(grads.len(), store.param_count());
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.numel()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, g) in grads.iter().enumerate() {
            let mut p = store.param_at(i).to_vec();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, &gj) in g.data().iter().enumerate() {
                let gj = gj + self.weight_decay * p[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                p[j] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
            store.set_param_at(i, Tensor::from_vec(g.shape(), p));
        }
    }
}
