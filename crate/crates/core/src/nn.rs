//! Stateful layers: parameters plus forward caches over the functional ops.
//!
//! The contract for every [`Layer`]:
//! - `forward` caches whatever the backward pass will need and returns the
//!   output;
//! - `backward` consumes that cache, *accumulates* parameter gradients
//!   (callers zero them between steps) and returns the input gradient;
//! - `visit` walks named parameters and buffers (batch-norm running
//!   statistics), which is the single mechanism shared by the optimizer,
//!   the checkpoint codec and parameter counting.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::ops::{
    activate, activate_backward, batchnorm_backward, batchnorm_eval, batchnorm_train, conv2d,
    conv2d_backward, global_pool, global_pool_backward, linear, linear_backward, pool2d_backward,
    pool2d_cached, Activation, BnCache, GlobalPoolKind, PoolCache, PoolKind, BN_EPS,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Forward-pass mode; affects batch normalization only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A named tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Param {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }
}

/// Receiver for [`Layer::visit`]: parameters are trained and checkpointed;
/// buffers (running statistics) are checkpointed only.
pub trait Visitor<T: Scalar> {
    fn param(&mut self, param: &mut Param<T>);
    fn buffer(&mut self, _name: &str, _value: &mut Tensor<T>) {}
}

pub trait Layer<T: Scalar>: Send {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>>;
    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>>;
    fn visit(&mut self, visitor: &mut dyn Visitor<T>);
}

fn missing_cache(layer: &str) -> Error {
    Error::config(format!("{layer}: backward called before forward"))
}

/// He-normal initialization: zero-mean Gaussian with `std = sqrt(2/fan_in)`,
/// the standard choice ahead of ReLU nonlinearities.
pub fn he_normal<T: Scalar, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| {
        let z: f64 = rng.sample(StandardNormal);
        T::from_f64(z * std)
    })
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

pub struct Conv2d<T: Scalar> {
    pub weight: Param<T>,
    stride: usize,
    padding: usize,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    /// Bias-free convolution with He-normal weights (`fan_in = in_ch*k*k`).
    pub fn new<R: Rng>(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let weight = he_normal(&[out_ch, in_ch, kernel, kernel], in_ch * kernel * kernel, rng);
        Conv2d {
            weight: Param::new(format!("{name}.weight"), weight),
            stride,
            padding,
            cache: None,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.dim(0)
    }
}

impl<T: Scalar> Layer<T> for Conv2d<T> {
    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let out = conv2d(input, &self.weight.value, self.stride, self.padding)?;
        self.cache = Some(input.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self.cache.as_ref().ok_or_else(|| missing_cache("conv2d"))?;
        let (dx, dw) =
            conv2d_backward(input, &self.weight.value, self.stride, self.padding, grad_out)?;
        self.weight.grad.add_assign(&dw)?;
        Ok(dx)
    }

    fn visit(&mut self, visitor: &mut dyn Visitor<T>) {
        visitor.param(&mut self.weight);
    }
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

pub struct BatchNorm2d<T: Scalar> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    running_mean: Tensor<T>,
    running_var: Tensor<T>,
    name: String,
    momentum: f64,
    eps: f64,
    cache: Option<BnCache<T>>,
}

impl<T: Scalar> BatchNorm2d<T> {
    /// Fresh batch norm: `gamma = 1`, `beta = 0`, running mean 0 and
    /// variance 1 (so an untrained layer in eval mode is an identity up to
    /// the affine transform).
    pub fn new(name: &str, channels: usize) -> Self {
        BatchNorm2d {
            gamma: Param::new(format!("{name}.gamma"), Tensor::filled(&[channels], T::one())),
            beta: Param::new(format!("{name}.beta"), Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], T::one()),
            name: name.to_string(),
            momentum: 0.1,
            eps: BN_EPS,
            cache: None,
        }
    }
}

impl<T: Scalar> Layer<T> for BatchNorm2d<T> {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        match mode {
            Mode::Train => {
                let (out, stats, cache) = batchnorm_train(
                    input,
                    self.gamma.value.data(),
                    self.beta.value.data(),
                    self.eps,
                )?;
                // Exponential moving average of the batch statistics.
                let m = self.momentum;
                for (r, &b) in self
                    .running_mean
                    .data_mut()
                    .iter_mut()
                    .zip(stats.mean.iter())
                {
                    *r = T::from_f64((1.0 - m) * r.as_f64() + m * b.as_f64());
                }
                for (r, &b) in self
                    .running_var
                    .data_mut()
                    .iter_mut()
                    .zip(stats.var.iter())
                {
                    *r = T::from_f64((1.0 - m) * r.as_f64() + m * b.as_f64());
                }
                self.cache = Some(cache);
                Ok(out)
            }
            Mode::Eval => {
                let (out, cache) = batchnorm_eval(
                    input,
                    self.gamma.value.data(),
                    self.beta.value.data(),
                    self.running_mean.data(),
                    self.running_var.data(),
                    self.eps,
                )?;
                self.cache = Some(cache);
                Ok(out)
            }
        }
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.as_ref().ok_or_else(|| missing_cache("batchnorm"))?;
        let (dx, dgamma, dbeta) = batchnorm_backward(cache, self.gamma.value.data(), grad_out)?;
        for (g, d) in self.gamma.grad.data_mut().iter_mut().zip(dgamma) {
            *g = *g + d;
        }
        for (g, d) in self.beta.grad.data_mut().iter_mut().zip(dbeta) {
            *g = *g + d;
        }
        Ok(dx)
    }

    fn visit(&mut self, visitor: &mut dyn Visitor<T>) {
        visitor.param(&mut self.gamma);
        visitor.param(&mut self.beta);
        let mean_name = format!("{}.running_mean", self.name);
        let var_name = format!("{}.running_var", self.name);
        visitor.buffer(&mean_name, &mut self.running_mean);
        visitor.buffer(&var_name, &mut self.running_var);
    }
}

// ---------------------------------------------------------------------------
// Activation
// ---------------------------------------------------------------------------

pub struct ActivationLayer<T: Scalar> {
    kind: Activation,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> ActivationLayer<T> {
    pub fn relu() -> Self {
        ActivationLayer {
            kind: Activation::Relu,
            cache: None,
        }
    }

    pub fn sigmoid() -> Self {
        ActivationLayer {
            kind: Activation::Sigmoid,
            cache: None,
        }
    }
}

impl<T: Scalar> Layer<T> for ActivationLayer<T> {
    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let out = activate(input, self.kind);
        self.cache = Some(out.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let out = self.cache.as_ref().ok_or_else(|| missing_cache("activation"))?;
        activate_backward(out, self.kind, grad_out)
    }

    fn visit(&mut self, _visitor: &mut dyn Visitor<T>) {}
}

// ---------------------------------------------------------------------------
// Windowed pooling
// ---------------------------------------------------------------------------

pub struct Pool2d<T: Scalar> {
    kind: PoolKind,
    kernel: usize,
    stride: usize,
    padding: usize,
    cache: Option<(Vec<usize>, PoolCache)>,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Scalar> Pool2d<T> {
    pub fn new(kind: PoolKind, kernel: usize, stride: usize, padding: usize) -> Self {
        Pool2d {
            kind,
            kernel,
            stride,
            padding,
            cache: None,
            _marker: std::marker::PhantomData,
        }
    }
}

impl<T: Scalar> Layer<T> for Pool2d<T> {
    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let (out, cache) = pool2d_cached(input, self.kind, self.kernel, self.stride, self.padding)?;
        self.cache = Some((input.shape().to_vec(), cache));
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let (shape, cache) = self.cache.as_ref().ok_or_else(|| missing_cache("pool2d"))?;
        pool2d_backward(
            shape,
            self.kind,
            self.kernel,
            self.stride,
            self.padding,
            cache,
            grad_out,
        )
    }

    fn visit(&mut self, _visitor: &mut dyn Visitor<T>) {}
}

// ---------------------------------------------------------------------------
// Global pooling
// ---------------------------------------------------------------------------

pub struct GlobalPool<T: Scalar> {
    kind: GlobalPoolKind,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> GlobalPool<T> {
    pub fn new(kind: GlobalPoolKind) -> Self {
        GlobalPool { kind, cache: None }
    }
}

impl<T: Scalar> Layer<T> for GlobalPool<T> {
    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let out = global_pool(input, self.kind)?;
        self.cache = Some(input.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self.cache.as_ref().ok_or_else(|| missing_cache("global_pool"))?;
        global_pool_backward(input, self.kind, grad_out)
    }

    fn visit(&mut self, _visitor: &mut dyn Visitor<T>) {}
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

pub struct Linear<T: Scalar> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Linear<T> {
    /// He-normal weights (`fan_in = in_dim`), zero bias.
    pub fn new<R: Rng>(name: &str, in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let weight = he_normal(&[in_dim, out_dim], in_dim, rng);
        Linear {
            weight: Param::new(format!("{name}.weight"), weight),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros(&[out_dim])),
            cache: None,
        }
    }
}

impl<T: Scalar> Layer<T> for Linear<T> {
    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let out = linear(input, &self.weight.value, &self.bias.value)?;
        self.cache = Some(input.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self.cache.as_ref().ok_or_else(|| missing_cache("linear"))?;
        let (dx, dw, db) = linear_backward(input, &self.weight.value, grad_out)?;
        self.weight.grad.add_assign(&dw)?;
        self.bias.grad.add_assign(&db)?;
        Ok(dx)
    }

    fn visit(&mut self, visitor: &mut dyn Visitor<T>) {
        visitor.param(&mut self.weight);
        visitor.param(&mut self.bias);
    }
}

// ---------------------------------------------------------------------------
// Sequential container
// ---------------------------------------------------------------------------

/// Runs layers in order; backward runs them in reverse.
pub struct Sequential<T: Scalar> {
    layers: Vec<Box<dyn Layer<T>>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new() -> Self {
        Sequential { layers: Vec::new() }
    }

    pub fn push(&mut self, layer: impl Layer<T> + 'static) {
        self.layers.push(Box::new(layer));
    }

    pub fn push_boxed(&mut self, layer: Box<dyn Layer<T>>) {
        self.layers.push(layer);
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

impl<T: Scalar> Default for Sequential<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Layer<T> for Sequential<T> {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut x = input.clone();
        for layer in &mut self.layers {
            x = layer.forward(&x, mode)?;
        }
        Ok(x)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = grad_out.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    fn visit(&mut self, visitor: &mut dyn Visitor<T>) {
        for layer in &mut self.layers {
            layer.visit(visitor);
        }
    }
}

// ---------------------------------------------------------------------------
// Common visitors
// ---------------------------------------------------------------------------

/// Counts trainable parameter elements.
#[derive(Default)]
pub struct ParamCounter {
    pub total: usize,
}

impl<T: Scalar> Visitor<T> for ParamCounter {
    fn param(&mut self, param: &mut Param<T>) {
        self.total += param.numel();
    }
}

/// Zeroes every gradient accumulator.
pub struct ZeroGrads;

impl<T: Scalar> Visitor<T> for ZeroGrads {
    fn param(&mut self, param: &mut Param<T>) {
        param.zero_grad();
    }
}

/// Clones all parameter and buffer tensors, keyed by name (used for
/// best-epoch snapshots and checkpointing).
#[derive(Default)]
pub struct Snapshot<T> {
    pub tensors: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> Visitor<T> for Snapshot<T> {
    fn param(&mut self, param: &mut Param<T>) {
        self.tensors.push((param.name.clone(), param.value.clone()));
    }

    fn buffer(&mut self, name: &str, value: &mut Tensor<T>) {
        self.tensors.push((name.to_string(), value.clone()));
    }
}

/// Writes tensors captured by a [`Snapshot`] back into the network.
/// Records names it could not match so callers can report them.
pub struct Restore<'a, T> {
    map: std::collections::HashMap<&'a str, &'a Tensor<T>>,
    pub missing: Vec<String>,
}

impl<'a, T: Scalar> Restore<'a, T> {
    pub fn new(tensors: &'a [(String, Tensor<T>)]) -> Self {
        Restore {
            map: tensors.iter().map(|(n, t)| (n.as_str(), t)).collect(),
            missing: Vec::new(),
        }
    }

    fn apply(&mut self, name: &str, value: &mut Tensor<T>) {
        match self.map.get(name) {
            Some(t) if t.shape() == value.shape() => *value = (*t).clone(),
            _ => self.missing.push(name.to_string()),
        }
    }
}

impl<'a, T: Scalar> Visitor<T> for Restore<'a, T> {
    fn param(&mut self, param: &mut Param<T>) {
        let name = param.name.clone();
        self.apply(&name, &mut param.value);
    }

    fn buffer(&mut self, name: &str, value: &mut Tensor<T>) {
        self.apply(name, value);
    }
}
