//! Small multilayer perceptrons with hand-written reverse mode.
//!
//! All trainable parameters of one network live in a single flat
//! [`ParamVector`]. Each layer stores its weight matrix row-major
//! (`rows = outputs`, `cols = inputs`) followed by its bias.

use std::fs;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, CgpoError, Result};
use crate::linalg::{all_finite, dot, norm};
use crate::seeding::rng_from;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply<S: Scalar>(self, z: S) -> S {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(S::zero()),
        }
    }

    /// Derivative expressed through the activation output `h`.
    #[inline]
    fn grad_from_output<S: Scalar>(self, h: S) -> S {
        match self {
            Activation::Tanh => S::one() - h * h,
            Activation::Relu => {
                if h > S::zero() {
                    S::one()
                } else {
                    S::zero()
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(bound = "S: Scalar", rename_all = "kebab-case", tag = "kind")]
pub enum OutputSquash<S> {
    #[default]
    None,
    /// `mid + half·tanh(z)` mapping onto `[low, high]`.
    TanhScaled { low: S, high: S },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct NetConfig<S> {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub output_squash: OutputSquash<S>,
    /// Adds a bias-free linear path from input to output, zero-initialised.
    #[serde(default)]
    pub linear_skip: bool,
}

impl<S: Scalar> NetConfig<S> {
    pub fn new(input_dim: usize, output_dim: usize, hidden: Vec<usize>) -> Self {
        Self {
            input_dim,
            output_dim,
            hidden,
            activation: Activation::Tanh,
            output_squash: OutputSquash::None,
            linear_skip: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(CgpoError::config("hidden", "network dimensions must be positive"));
        }
        if let OutputSquash::TanhScaled { low, high } = self.output_squash {
            if !(low < high) {
                return Err(CgpoError::config("output_squash", "low must be < high"));
            }
        }
        Ok(())
    }

    pub fn layer_shapes(&self) -> Vec<LayerShape> {
        let mut shapes = Vec::with_capacity(self.hidden.len() + 2);
        let mut fan_in = self.input_dim;
        for &width in &self.hidden {
            shapes.push(LayerShape::new(width, fan_in, true));
            fan_in = width;
        }
        shapes.push(LayerShape::new(self.output_dim, fan_in, true));
        if self.linear_skip {
            shapes.push(LayerShape::new(self.output_dim, self.input_dim, false));
        }
        shapes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub rows: usize,
    pub cols: usize,
    pub has_bias: bool,
}

impl LayerShape {
    pub fn new(rows: usize, cols: usize, has_bias: bool) -> Self {
        Self { rows, cols, has_bias }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols + if self.has_bias { self.rows } else { 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat parameters plus the shape descriptor that maps them onto layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct ParamVector<S> {
    pub values: Vec<S>,
    pub shape: Vec<LayerShape>,
}

/// One layer as an owned weight matrix (row-major) and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<S> {
    pub weights: Vec<S>,
    pub bias: Option<Vec<S>>,
    pub shape: LayerShape,
}

impl<S: Scalar> ParamVector<S> {
    pub fn zeros(shape: Vec<LayerShape>) -> Self {
        let n = shape.iter().map(LayerShape::len).sum();
        Self {
            values: vec![S::zero(); n],
            shape,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.shape.len());
        let mut off = 0;
        for s in &self.shape {
            out.push(off);
            off += s.len();
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let expected: usize = self.shape.iter().map(LayerShape::len).sum();
        check_dim("parameter vector", expected, self.values.len())?;
        if !all_finite(&self.values) {
            return Err(CgpoError::NonFinite {
                what: "parameters",
                step: 0,
            });
        }
        Ok(())
    }

    pub fn unflatten(&self) -> Vec<Layer<S>> {
        let mut layers = Vec::with_capacity(self.shape.len());
        let mut off = 0;
        for &shape in &self.shape {
            let nw = shape.rows * shape.cols;
            let weights = self.values[off..off + nw].to_vec();
            off += nw;
            let bias = if shape.has_bias {
                let b = self.values[off..off + shape.rows].to_vec();
                off += shape.rows;
                Some(b)
            } else {
                None
            };
            layers.push(Layer { weights, bias, shape });
        }
        layers
    }

    pub fn flatten(layers: &[Layer<S>]) -> Self {
        let mut values = Vec::new();
        let mut shape = Vec::with_capacity(layers.len());
        for layer in layers {
            values.extend_from_slice(&layer.weights);
            if let Some(b) = &layer.bias {
                values.extend_from_slice(b);
            }
            shape.push(layer.shape);
        }
        Self { values, shape }
    }
}

/// Orthonormalises the rows (or columns, whichever are fewer) of a Gaussian
/// draw with modified Gram–Schmidt and scales by `gain`.
fn orthogonal_init<S: Scalar, R: rand::Rng>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Vec<S> {
    let (n, m) = if rows <= cols { (rows, cols) } else { (cols, rows) };
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    while basis.len() < n {
        let mut v: Vec<f64> = (0..m).map(|_| StandardNormal.sample(rng)).collect();
        for u in &basis {
            let p = dot(&v, u);
            for (vi, ui) in v.iter_mut().zip(u) {
                *vi -= p * ui;
            }
        }
        let nv = norm(&v);
        if nv > 1e-8 {
            v.iter_mut().for_each(|x| *x /= nv);
            basis.push(v);
        }
    }
    let mut w = vec![S::zero(); rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            let x = if rows <= cols { basis[i][j] } else { basis[j][i] };
            w[i * cols + j] = S::lit(gain * x);
        }
    }
    w
}

/// Values kept from a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<S> {
    /// `acts[0]` is the input, `acts[l]` the output of hidden layer `l`.
    acts: Vec<Vec<S>>,
    /// Output before squashing.
    pre_out: Vec<S>,
    pub output: Vec<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackwardResult<S> {
    pub d_input: Vec<S>,
    pub d_params: Vec<S>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Mlp<S> {
    pub config: NetConfig<S>,
    pub params: ParamVector<S>,
}

impl<S: Scalar> Mlp<S> {
    /// Orthogonal hidden layers, zero biases, zero output (and skip) layer.
    pub fn new(config: NetConfig<S>, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamVector::zeros(config.layer_shapes());
        let gain = match config.activation {
            Activation::Tanh => 1.0,
            Activation::Relu => std::f64::consts::SQRT_2,
        };
        let mut rng = rng_from(seed);
        let offsets = params.offsets();
        for (l, &shape) in params.shape.clone().iter().enumerate().take(config.hidden.len()) {
            let w = orthogonal_init::<S, _>(shape.rows, shape.cols, gain, &mut rng);
            params.values[offsets[l]..offsets[l] + w.len()].copy_from_slice(&w);
        }
        Ok(Self { config, params })
    }

    pub fn from_params(config: NetConfig<S>, params: ParamVector<S>) -> Result<Self> {
        config.validate()?;
        params.validate()?;
        if params.shape != config.layer_shapes() {
            return Err(CgpoError::config("params", "shape descriptor does not match net config"));
        }
        Ok(Self { config, params })
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn n_dense(&self) -> usize {
        self.config.hidden.len() + 1
    }

    pub fn forward(&self, input: &[S]) -> Result<Vec<S>> {
        Ok(self.forward_cached(input)?.output)
    }

    pub fn forward_cached(&self, input: &[S]) -> Result<ForwardCache<S>> {
        check_dim("network input", self.config.input_dim, input.len())?;
        let values = &self.params.values;
        let mut acts: Vec<Vec<S>> = Vec::with_capacity(self.n_dense());
        acts.push(input.to_vec());
        let mut off = 0;
        let mut pre_out = Vec::new();
        for l in 0..self.n_dense() {
            let shape = self.params.shape[l];
            let x = &acts[l];
            let w = &values[off..off + shape.rows * shape.cols];
            let b = &values[off + shape.rows * shape.cols..off + shape.len()];
            let z: Vec<S> = (0..shape.rows)
                .map(|i| dot(&w[i * shape.cols..(i + 1) * shape.cols], x) + b[i])
                .collect();
            off += shape.len();
            if l + 1 < self.n_dense() {
                let act = self.config.activation;
                acts.push(z.into_iter().map(|v| act.apply(v)).collect());
            } else {
                pre_out = z;
            }
        }
        if self.config.linear_skip {
            let shape = self.params.shape[self.n_dense()];
            let w = &values[off..off + shape.rows * shape.cols];
            for (i, p) in pre_out.iter_mut().enumerate() {
                *p += dot(&w[i * shape.cols..(i + 1) * shape.cols], input);
            }
        }
        let output = match self.config.output_squash {
            OutputSquash::None => pre_out.clone(),
            OutputSquash::TanhScaled { low, high } => {
                let (mid, half) = squash_affine(low, high);
                pre_out.iter().map(|&z| mid + half * z.tanh()).collect()
            }
        };
        Ok(ForwardCache { acts, pre_out, output })
    }

    /// Reverse pass of `upstreamᵀ · net(input)`. Parameter gradients are
    /// added into `d_params`; the input gradient is returned.
    pub fn backward_into(&self, cache: &ForwardCache<S>, upstream: &[S], d_params: &mut [S]) -> Result<Vec<S>> {
        check_dim("upstream gradient", self.config.output_dim, upstream.len())?;
        check_dim("parameter gradient", self.params.len(), d_params.len())?;
        if !all_finite(upstream) {
            return Err(CgpoError::NonFinite {
                what: "upstream gradient",
                step: 0,
            });
        }
        let values = &self.params.values;
        let offsets = self.params.offsets();
        let mut dz: Vec<S> = match self.config.output_squash {
            OutputSquash::None => upstream.to_vec(),
            OutputSquash::TanhScaled { low, high } => {
                let (_, half) = squash_affine(low, high);
                upstream
                    .iter()
                    .zip(&cache.pre_out)
                    .map(|(&u, &z)| {
                        let t = z.tanh();
                        u * half * (S::one() - t * t)
                    })
                    .collect()
            }
        };
        let input = &cache.acts[0];
        let mut d_input = vec![S::zero(); self.config.input_dim];
        if self.config.linear_skip {
            let l = self.n_dense();
            let shape = self.params.shape[l];
            let off = offsets[l];
            for i in 0..shape.rows {
                if dz[i] == S::zero() {
                    continue;
                }
                for j in 0..shape.cols {
                    d_params[off + i * shape.cols + j] += dz[i] * input[j];
                    d_input[j] += dz[i] * values[off + i * shape.cols + j];
                }
            }
        }
        for l in (0..self.n_dense()).rev() {
            let shape = self.params.shape[l];
            let off = offsets[l];
            let x = &cache.acts[l];
            let boff = off + shape.rows * shape.cols;
            let mut dx = vec![S::zero(); shape.cols];
            for i in 0..shape.rows {
                let d = dz[i];
                if d == S::zero() {
                    continue;
                }
                let row = off + i * shape.cols;
                for j in 0..shape.cols {
                    d_params[row + j] += d * x[j];
                    dx[j] += d * values[row + j];
                }
                d_params[boff + i] += d;
            }
            if l == 0 {
                for (a, b) in d_input.iter_mut().zip(&dx) {
                    *a += *b;
                }
            } else {
                let act = self.config.activation;
                dz = dx
                    .iter()
                    .zip(x)
                    .map(|(&g, &h)| g * act.grad_from_output(h))
                    .collect();
            }
        }
        Ok(d_input)
    }

    pub fn backward(&self, input: &[S], upstream: &[S]) -> Result<BackwardResult<S>> {
        let cache = self.forward_cached(input)?;
        let mut d_params = vec![S::zero(); self.num_params()];
        let d_input = self.backward_into(&cache, upstream, &mut d_params)?;
        Ok(BackwardResult { d_input, d_params })
    }

    /// Crude global Lipschitz bound: product of layer Frobenius norms times
    /// the squash scale (tanh and relu are 1-Lipschitz).
    pub fn lipschitz_bound(&self) -> S {
        let layers = self.params.unflatten();
        let mut bound = S::one();
        for layer in layers.iter().take(self.n_dense()) {
            bound *= norm(&layer.weights);
        }
        if self.config.linear_skip {
            bound += norm(&layers[self.n_dense()].weights);
        }
        if let OutputSquash::TanhScaled { low, high } = self.config.output_squash {
            bound *= squash_affine(low, high).1;
        }
        bound
    }
}

fn squash_affine<S: Scalar>(low: S, high: S) -> (S, S) {
    let two = S::lit(2.0);
    ((low + high) / two, (high - low) / two)
}

/// Deterministic policy `a = π_θ(s)` squashed onto the action box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Policy<S> {
    pub net: Mlp<S>,
}

impl<S: Scalar> Policy<S> {
    pub fn new(state_dim: usize, action_dim: usize, hidden: Vec<usize>, low: S, high: S, seed: u64) -> Result<Self> {
        let mut config = NetConfig::new(state_dim, action_dim, hidden);
        config.output_squash = OutputSquash::TanhScaled { low, high };
        Ok(Self {
            net: Mlp::new(config, seed)?,
        })
    }

    pub fn act(&self, state: &[S]) -> Result<Vec<S>> {
        self.net.forward(state)
    }

    pub fn params(&self) -> &[S] {
        &self.net.params.values
    }

    pub fn params_mut(&mut self) -> &mut Vec<S> {
        &mut self.net.params.values
    }

    pub fn num_params(&self) -> usize {
        self.net.num_params()
    }

    pub fn with_params(&self, values: Vec<S>) -> Result<Self> {
        check_dim("policy parameters", self.num_params(), values.len())?;
        let mut out = self.clone();
        out.net.params.values = values;
        Ok(out)
    }
}

/// Finite-horizon value `V(s, t)`; time enters as the feature `t / T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Critic<S> {
    pub net: Mlp<S>,
    pub horizon: usize,
}

impl<S: Scalar> Critic<S> {
    pub fn new(state_dim: usize, horizon: usize, hidden: Vec<usize>, seed: u64) -> Result<Self> {
        if horizon == 0 {
            return Err(CgpoError::config("episode_length", "critic horizon must be >= 1"));
        }
        Ok(Self {
            net: Mlp::new(NetConfig::new(state_dim + 1, 1, hidden), seed)?,
            horizon,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.net.config.input_dim - 1
    }

    pub fn features(&self, state: &[S], t: usize) -> Result<Vec<S>> {
        if t > self.horizon {
            return Err(CgpoError::TimeOutOfRange {
                t,
                horizon: self.horizon,
            });
        }
        check_dim("critic state", self.state_dim(), state.len())?;
        let mut x = state.to_vec();
        x.push(S::from_usize_lossy(t) / S::from_usize_lossy(self.horizon));
        Ok(x)
    }

    pub fn value(&self, state: &[S], t: usize) -> Result<S> {
        Ok(self.net.forward(&self.features(state, t)?)?[0])
    }

    /// `∂V/∂s` at `(s, t)`.
    pub fn state_grad(&self, state: &[S], t: usize) -> Result<Vec<S>> {
        let mut g = self.net.backward(&self.features(state, t)?, &[S::one()])?.d_input;
        g.pop();
        Ok(g)
    }
}

/// One-step predictor of `(s', r, c)` from `(s, a)`. The state head
/// outputs the increment `s' − s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct WorldModel<S> {
    pub net: Mlp<S>,
    pub state_dim: usize,
    pub action_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<S> {
    pub next_state: Vec<S>,
    pub reward: S,
    pub cost: S,
}

impl<S: Scalar> WorldModel<S> {
    pub fn new(state_dim: usize, action_dim: usize, hidden: Vec<usize>, seed: u64) -> Result<Self> {
        let mut config = NetConfig::new(state_dim + action_dim, state_dim + 2, hidden);
        config.linear_skip = true;
        Ok(Self {
            net: Mlp::new(config, seed)?,
            state_dim,
            action_dim,
        })
    }

    pub fn input(&self, state: &[S], action: &[S]) -> Result<Vec<S>> {
        check_dim("model state", self.state_dim, state.len())?;
        check_dim("model action", self.action_dim, action.len())?;
        let mut x = state.to_vec();
        x.extend_from_slice(action);
        Ok(x)
    }

    pub fn predict(&self, state: &[S], action: &[S]) -> Result<Prediction<S>> {
        let out = self.net.forward(&self.input(state, action)?)?;
        let mut p = split_prediction(out, self.state_dim);
        for (n, &s) in p.next_state.iter_mut().zip(state) {
            *n += s;
        }
        Ok(p)
    }

    /// Target vector in the network's output layout.
    pub fn target(state: &[S], next_state: &[S], reward: S, cost: S) -> Vec<S> {
        let mut y: Vec<S> = next_state.iter().zip(state).map(|(&n, &s)| n - s).collect();
        y.push(reward);
        y.push(cost);
        y
    }
}

pub(crate) fn split_prediction<S: Scalar>(mut out: Vec<S>, state_dim: usize) -> Prediction<S> {
    let cost = out[state_dim + 1];
    let reward = out[state_dim];
    out.truncate(state_dim);
    Prediction {
        next_state: out,
        reward,
        cost,
    }
}

/// Adam on a flat parameter vector; `step` descends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Adam<S> {
    pub lr: S,
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
    m: Vec<S>,
    v: Vec<S>,
    t: u64,
}

impl<S: Scalar> Adam<S> {
    pub fn new(n: usize, lr: S) -> Self {
        Self {
            lr,
            beta1: S::lit(0.9),
            beta2: S::lit(0.999),
            eps: S::lit(1e-8),
            m: vec![S::zero(); n],
            v: vec![S::zero(); n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [S], grad: &[S]) {
        debug_assert_eq!(params.len(), grad.len());
        self.t += 1;
        let t = self.t.min(i32::MAX as u64) as i32;
        let c1 = S::one() - self.beta1.powi(t);
        let c2 = S::one() - self.beta2.powi(t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (S::one() - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (S::one() - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

pub const CHECKPOINT_FORMAT: u32 = 1;

/// JSON container for one network. Floats are written in shortest
/// round-trip form, so reloading is bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Checkpoint<S> {
    pub format: u32,
    pub role: String,
    pub config: NetConfig<S>,
    pub params: ParamVector<S>,
    #[serde(default)]
    pub horizon: Option<usize>,
}

impl<S: Scalar> Checkpoint<S> {
    pub fn new(role: &str, net: &Mlp<S>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT,
            role: role.to_string(),
            config: net.config.clone(),
            params: net.params.clone(),
            horizon: None,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_vec(self)?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt: Self = serde_json::from_slice(&fs::read(path)?)?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(CgpoError::config(
                "checkpoint",
                format!("unsupported format {}", ckpt.format),
            ));
        }
        Ok(ckpt)
    }

    pub fn into_mlp(self) -> Result<Mlp<S>> {
        Mlp::from_params(self.config, self.params)
    }
}
