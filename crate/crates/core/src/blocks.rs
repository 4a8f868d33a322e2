//! Residual block families.
//!
//! Three structural kinds, all optionally wrapped with squeeze-and-excitation
//! channel gating and all sharing the same shortcut rule (identity when
//! shapes match, 1x1 conv + BN projection otherwise):
//!
//! - **basic**: `3x3(stride) -> BN -> ReLU -> 3x3 -> BN`, expansion 1;
//! - **bottleneck**: `1x1 -> BN -> ReLU -> 3x3(stride) -> BN -> ReLU -> 1x1
//!   -> BN`, expansion 2;
//! - **res2net**: like bottleneck, but the middle 3x3 is replaced by a
//!   hierarchy over `scale` channel groups. After the reducing 1x1 conv the
//!   feature is split into groups `x_1..x_s` of `group_width` channels each:
//!   `y_1 = x_1`, `y_2 = K_2(x_2)`, and `y_i = K_i(x_i + y_{i-1})` for
//!   `i > 2`, where each `K_i` is a 3x3 conv (+ BN + ReLU) at `group_width`
//!   channels. The `y_i` are concatenated and fed to the expanding 1x1 conv.
//!   When the block strides, the hierarchical additions are skipped (spatial
//!   sizes of `x_i` and `y_{i-1}` no longer match) and `x_1` goes through a
//!   3x3 stride-2 average pool instead of the identity.
//!
//! The multi-scale hierarchy gives its 3x3 stage a parameter footprint of
//! `9*H*H*(s-1)/s^2` for hidden width `H` versus `9*H*H` for the plain
//! bottleneck — the `(s-1)/s^2` saving that lets these models stay under a
//! couple million parameters.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{
    ActivationLayer, BatchNorm2d, Conv2d, Layer, Linear, Mode, ParamCounter, Pool2d, Visitor,
};
use crate::ops::{activate, activate_backward, global_pool, global_pool_backward, Activation,
    GlobalPoolKind, PoolKind};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Basic,
    Bottleneck,
    Res2Net,
}

/// Complete structural description of one residual block; everything the
/// builder and the closed-form parameter count need.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub in_channels: usize,
    /// Base width of the block (the "bracket" width of its stage); output
    /// channels are `width * expansion`.
    pub width: usize,
    pub stride: usize,
    pub expansion: usize,
    /// Number of channel groups in the res2net hierarchy (>= 2).
    pub scale: usize,
    /// Channels per hierarchy group. `None` means an even split of `width`
    /// into `scale` groups; model configurations may widen this
    /// independently of `width`.
    pub group_width: Option<usize>,
    /// Squeeze-and-excitation reduction ratio `r`; `None` disables the gate.
    pub se_ratio: Option<usize>,
}

impl BlockSpec {
    /// Basic two-conv block (expansion 1).
    pub fn basic(in_channels: usize, width: usize, stride: usize) -> Self {
        BlockSpec {
            kind: BlockKind::Basic,
            in_channels,
            width,
            stride,
            expansion: 1,
            scale: 1,
            group_width: None,
            se_ratio: None,
        }
    }

    /// 1x1 / 3x3 / 1x1 bottleneck (expansion 2).
    pub fn bottleneck(in_channels: usize, width: usize, stride: usize) -> Self {
        BlockSpec {
            kind: BlockKind::Bottleneck,
            in_channels,
            width,
            stride,
            expansion: 2,
            scale: 1,
            group_width: None,
            se_ratio: None,
        }
    }

    /// Multi-scale res2net block (expansion 2).
    pub fn res2net(in_channels: usize, width: usize, stride: usize, scale: usize) -> Self {
        BlockSpec {
            kind: BlockKind::Res2Net,
            in_channels,
            width,
            stride,
            expansion: 2,
            scale,
            group_width: None,
            se_ratio: None,
        }
    }

    /// Res2net block with squeeze-and-excitation (the "SE-Res2Net" unit).
    pub fn se_res2net(in_channels: usize, width: usize, stride: usize, scale: usize) -> Self {
        Self::res2net(in_channels, width, stride, scale).with_se(16)
    }

    pub fn with_se(mut self, ratio: usize) -> Self {
        self.se_ratio = Some(ratio);
        self
    }

    pub fn with_group_width(mut self, group_width: usize) -> Self {
        self.group_width = Some(group_width);
        self
    }

    pub fn out_channels(&self) -> usize {
        self.width * self.expansion
    }

    /// Channels per hierarchy group (res2net only).
    pub fn group_width(&self) -> usize {
        self.group_width.unwrap_or(self.width / self.scale.max(1))
    }

    /// Width of the block between the two 1x1 convs: `group_width * scale`
    /// for res2net (this is the `I = O` of the 3x3-stage parameter law),
    /// `width` otherwise.
    pub fn hidden_width(&self) -> usize {
        match self.kind {
            BlockKind::Res2Net => self.group_width() * self.scale,
            _ => self.width,
        }
    }

    pub fn needs_projection(&self) -> bool {
        self.stride != 1 || self.in_channels != self.out_channels()
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.width == 0 {
            return Err(Error::config("block: channels must be >= 1"));
        }
        if self.stride != 1 && self.stride != 2 {
            return Err(Error::config(format!("block: stride {} not supported", self.stride)));
        }
        if self.expansion == 0 {
            return Err(Error::config("block: expansion must be >= 1"));
        }
        if self.kind == BlockKind::Res2Net {
            if self.scale < 2 {
                return Err(Error::config("res2net block: scale must be >= 2"));
            }
            if self.group_width.is_none() && !self.width.is_multiple_of(self.scale) {
                return Err(Error::config(format!(
                    "res2net block: width {} not divisible by scale {}",
                    self.width, self.scale
                )));
            }
            if self.group_width() == 0 {
                return Err(Error::config("res2net block: group width must be >= 1"));
            }
        }
        if self.se_ratio == Some(0) {
            return Err(Error::config("block: SE ratio must be >= 1"));
        }
        Ok(())
    }

    /// Exact trainable parameter count of the block this spec builds
    /// (weights, batch-norm affine pairs, SE projections, shortcut).
    pub fn param_count(&self) -> usize {
        block_param_count(self)
    }
}

/// Closed-form parameter count for a block spec; validated in tests against
/// enumeration of a constructed block.
pub fn block_param_count(spec: &BlockSpec) -> usize {
    let out = spec.out_channels();
    let bn = |ch: usize| 2 * ch;
    let mut total = match spec.kind {
        BlockKind::Basic => {
            // 3x3 in->w, BN, 3x3 w->out, BN.
            9 * spec.in_channels * spec.width
                + bn(spec.width)
                + 9 * spec.width * out
                + bn(out)
        }
        BlockKind::Bottleneck => {
            let w = spec.width;
            spec.in_channels * w + bn(w) + 9 * w * w + bn(w) + w * out + bn(out)
        }
        BlockKind::Res2Net => {
            let g = spec.group_width();
            let hidden = spec.hidden_width();
            spec.in_channels * hidden
                + bn(hidden)
                + (spec.scale - 1) * (9 * g * g + bn(g))
                + hidden * out
                + bn(out)
        }
    };
    if let Some(r) = spec.se_ratio {
        let d = (out / r).max(1);
        // Two biased linears: C->d and d->C.
        total += out * d + d + d * out + out;
    }
    if spec.needs_projection() {
        total += spec.in_channels * out + bn(out);
    }
    total
}

// ---------------------------------------------------------------------------
// Squeeze-and-excitation gate
// ---------------------------------------------------------------------------

/// Channel attention: global average pool -> bottleneck MLP -> sigmoid ->
/// per-channel rescale of the input.
pub struct SeGate<T: Scalar> {
    fc1: Linear<T>,
    fc2: Linear<T>,
    cache: Option<SeCache<T>>,
}

struct SeCache<T> {
    input: Tensor<T>,
    relu_out: Tensor<T>,
    gate: Tensor<T>,
}

impl<T: Scalar> SeGate<T> {
    /// Bottleneck dimension is `max(1, channels/ratio)`.
    pub fn new<R: Rng>(name: &str, channels: usize, ratio: usize, rng: &mut R) -> Self {
        let d = (channels / ratio).max(1);
        SeGate {
            fc1: Linear::new(&format!("{name}.fc1"), channels, d, rng),
            fc2: Linear::new(&format!("{name}.fc2"), d, channels, rng),
            cache: None,
        }
    }

    /// The gate values `[N,C]` computed for `input` (sigmoid output).
    pub fn gate_values(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let pooled = global_pool(input, GlobalPoolKind::Avg)?;
        let a = self.fc1.forward(&pooled, Mode::Eval)?;
        let r = activate(&a, Activation::Relu);
        let b = self.fc2.forward(&r, Mode::Eval)?;
        let gate = activate(&b, Activation::Sigmoid);
        self.cache = Some(SeCache {
            input: input.clone(),
            relu_out: r,
            gate: gate.clone(),
        });
        Ok(gate)
    }

    fn scale_by_gate(input: &Tensor<T>, gate: &Tensor<T>) -> Tensor<T> {
        let (n, c, h, w) = (input.dim(0), input.dim(1), input.dim(2), input.dim(3));
        let plane = h * w;
        let mut out = input.clone();
        let o = out.data_mut();
        let g = gate.data();
        for ni in 0..n {
            for ci in 0..c {
                let s = g[ni * c + ci];
                let base = (ni * c + ci) * plane;
                for v in &mut o[base..base + plane] {
                    *v = *v * s;
                }
            }
        }
        out
    }
}

impl<T: Scalar> Layer<T> for SeGate<T> {
    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        if input.rank() != 4 {
            return Err(Error::config("se_gate: input must be [N,C,H,W]"));
        }
        let gate = self.gate_values(input)?;
        Ok(Self::scale_by_gate(input, &gate))
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::config("se_gate: backward called before forward"))?;
        let input = &cache.input;
        let (n, c, h, w) = (input.dim(0), input.dim(1), input.dim(2), input.dim(3));
        if grad_out.shape() != input.shape() {
            return Err(Error::config("se_gate: gradient shape mismatch"));
        }
        let plane = h * w;
        let x = input.data();
        let dy = grad_out.data();
        let g = cache.gate.data();

        // Direct path: y = x * s  =>  dx += dy * s, ds = sum_hw dy * x.
        let mut grad_in = Tensor::zeros(input.shape());
        let mut d_gate = Tensor::zeros(&[n, c]);
        {
            let dx = grad_in.data_mut();
            let ds = d_gate.data_mut();
            for ni in 0..n {
                for ci in 0..c {
                    let s = g[ni * c + ci];
                    let base = (ni * c + ci) * plane;
                    let mut acc = T::zero();
                    for i in base..base + plane {
                        dx[i] = dy[i] * s;
                        acc = acc + dy[i] * x[i];
                    }
                    ds[ni * c + ci] = acc;
                }
            }
        }

        // Gate path: back through sigmoid, fc2, relu, fc1, global average.
        let db = activate_backward(&cache.gate, Activation::Sigmoid, &d_gate)?;
        let dr = self.fc2.backward(&db)?;
        let da = activate_backward(&cache.relu_out, Activation::Relu, &dr)?;
        let d_pooled = self.fc1.backward(&da)?;
        let dx_pool = global_pool_backward(input, GlobalPoolKind::Avg, &d_pooled)?;
        grad_in.add_assign(&dx_pool)?;
        Ok(grad_in)
    }

    fn visit(&mut self, visitor: &mut dyn Visitor<T>) {
        self.fc1.visit(visitor);
        self.fc2.visit(visitor);
    }
}

// ---------------------------------------------------------------------------
// Shortcut
// ---------------------------------------------------------------------------

// One Shortcut lives per block, so the size gap between the variants is
// irrelevant; boxing the projection would only add indirection.
#[allow(clippy::large_enum_variant)]
enum Shortcut<T: Scalar> {
    Identity,
    Projection(Conv2d<T>, BatchNorm2d<T>),
}

impl<T: Scalar> Shortcut<T> {
    fn new<R: Rng>(spec: &BlockSpec, name: &str, rng: &mut R) -> Self {
        if spec.needs_projection() {
            let conv = Conv2d::new(
                &format!("{name}.proj"),
                spec.in_channels,
                spec.out_channels(),
                1,
                spec.stride,
                0,
                rng,
            );
            let bn = BatchNorm2d::new(&format!("{name}.proj.bn"), spec.out_channels());
            Shortcut::Projection(conv, bn)
        } else {
            Shortcut::Identity
        }
    }

    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        match self {
            Shortcut::Identity => Ok(input.clone()),
            Shortcut::Projection(conv, bn) => {
                let h = conv.forward(input, mode)?;
                bn.forward(&h, mode)
            }
        }
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Shortcut::Identity => Ok(grad_out.clone()),
            Shortcut::Projection(conv, bn) => {
                let g = bn.backward(grad_out)?;
                conv.backward(&g)
            }
        }
    }

    fn visit(&mut self, visitor: &mut dyn Visitor<T>) {
        if let Shortcut::Projection(conv, bn) = self {
            conv.visit(visitor);
            bn.visit(visitor);
        }
    }
}

// ---------------------------------------------------------------------------
// Basic block
// ---------------------------------------------------------------------------

pub struct BasicBlock<T: Scalar> {
    conv1: Conv2d<T>,
    bn1: BatchNorm2d<T>,
    relu1: ActivationLayer<T>,
    conv2: Conv2d<T>,
    bn2: BatchNorm2d<T>,
    se: Option<SeGate<T>>,
    shortcut: Shortcut<T>,
    relu_out: ActivationLayer<T>,
}

impl<T: Scalar> BasicBlock<T> {
    pub fn new<R: Rng>(spec: &BlockSpec, name: &str, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        if spec.kind != BlockKind::Basic {
            return Err(Error::config("BasicBlock requires a Basic spec"));
        }
        let out = spec.out_channels();
        Ok(BasicBlock {
            conv1: Conv2d::new(
                &format!("{name}.conv1"),
                spec.in_channels,
                spec.width,
                3,
                spec.stride,
                1,
                rng,
            ),
            bn1: BatchNorm2d::new(&format!("{name}.bn1"), spec.width),
            relu1: ActivationLayer::relu(),
            conv2: Conv2d::new(&format!("{name}.conv2"), spec.width, out, 3, 1, 1, rng),
            bn2: BatchNorm2d::new(&format!("{name}.bn2"), out),
            se: match spec.se_ratio {
                Some(r) => Some(SeGate::new(&format!("{name}.se"), out, r, rng)),
                None => None,
            },
            shortcut: Shortcut::new(spec, name, rng),
            relu_out: ActivationLayer::relu(),
        })
    }
}

impl<T: Scalar> Layer<T> for BasicBlock<T> {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let sc = self.shortcut.forward(input, mode)?;
        let mut h = self.conv1.forward(input, mode)?;
        h = self.bn1.forward(&h, mode)?;
        h = self.relu1.forward(&h, mode)?;
        h = self.conv2.forward(&h, mode)?;
        h = self.bn2.forward(&h, mode)?;
        if let Some(se) = &mut self.se {
            h = se.forward(&h, mode)?;
        }
        self.relu_out.forward(&h.add(&sc)?, mode)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let d = self.relu_out.backward(grad_out)?;
        let dsc = self.shortcut.backward(&d)?;
        let mut dm = d;
        if let Some(se) = &mut self.se {
            dm = se.backward(&dm)?;
        }
        dm = self.bn2.backward(&dm)?;
        dm = self.conv2.backward(&dm)?;
        dm = self.relu1.backward(&dm)?;
        dm = self.bn1.backward(&dm)?;
        let mut dx = self.conv1.backward(&dm)?;
        dx.add_assign(&dsc)?;
        Ok(dx)
    }

    fn visit(&mut self, visitor: &mut dyn Visitor<T>) {
        self.conv1.visit(visitor);
        self.bn1.visit(visitor);
        self.conv2.visit(visitor);
        self.bn2.visit(visitor);
        if let Some(se) = &mut self.se {
            se.visit(visitor);
        }
        self.shortcut.visit(visitor);
    }
}

// ---------------------------------------------------------------------------
// Bottleneck block
// ---------------------------------------------------------------------------

pub struct BottleneckBlock<T: Scalar> {
    conv1: Conv2d<T>,
    bn1: BatchNorm2d<T>,
    relu1: ActivationLayer<T>,
    conv2: Conv2d<T>,
    bn2: BatchNorm2d<T>,
    relu2: ActivationLayer<T>,
    conv3: Conv2d<T>,
    bn3: BatchNorm2d<T>,
    se: Option<SeGate<T>>,
    shortcut: Shortcut<T>,
    relu_out: ActivationLayer<T>,
}

impl<T: Scalar> BottleneckBlock<T> {
    pub fn new<R: Rng>(spec: &BlockSpec, name: &str, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        if spec.kind != BlockKind::Bottleneck {
            return Err(Error::config("BottleneckBlock requires a Bottleneck spec"));
        }
        let (w, out) = (spec.width, spec.out_channels());
        Ok(BottleneckBlock {
            conv1: Conv2d::new(&format!("{name}.conv1"), spec.in_channels, w, 1, 1, 0, rng),
            bn1: BatchNorm2d::new(&format!("{name}.bn1"), w),
            relu1: ActivationLayer::relu(),
            // The middle 3x3 carries the stride.
            conv2: Conv2d::new(&format!("{name}.conv2"), w, w, 3, spec.stride, 1, rng),
            bn2: BatchNorm2d::new(&format!("{name}.bn2"), w),
            relu2: ActivationLayer::relu(),
            conv3: Conv2d::new(&format!("{name}.conv3"), w, out, 1, 1, 0, rng),
            bn3: BatchNorm2d::new(&format!("{name}.bn3"), out),
            se: match spec.se_ratio {
                Some(r) => Some(SeGate::new(&format!("{name}.se"), out, r, rng)),
                None => None,
            },
            shortcut: Shortcut::new(spec, name, rng),
            relu_out: ActivationLayer::relu(),
        })
    }
}

impl<T: Scalar> Layer<T> for BottleneckBlock<T> {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let sc = self.shortcut.forward(input, mode)?;
        let mut h = self.conv1.forward(input, mode)?;
        h = self.bn1.forward(&h, mode)?;
        h = self.relu1.forward(&h, mode)?;
        h = self.conv2.forward(&h, mode)?;
        h = self.bn2.forward(&h, mode)?;
        h = self.relu2.forward(&h, mode)?;
        h = self.conv3.forward(&h, mode)?;
        h = self.bn3.forward(&h, mode)?;
        if let Some(se) = &mut self.se {
            h = se.forward(&h, mode)?;
        }
        self.relu_out.forward(&h.add(&sc)?, mode)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let d = self.relu_out.backward(grad_out)?;
        let dsc = self.shortcut.backward(&d)?;
        let mut dm = d;
        if let Some(se) = &mut self.se {
            dm = se.backward(&dm)?;
        }
        dm = self.bn3.backward(&dm)?;
        dm = self.conv3.backward(&dm)?;
        dm = self.relu2.backward(&dm)?;
        dm = self.bn2.backward(&dm)?;
        dm = self.conv2.backward(&dm)?;
        dm = self.relu1.backward(&dm)?;
        dm = self.bn1.backward(&dm)?;
        let mut dx = self.conv1.backward(&dm)?;
        dx.add_assign(&dsc)?;
        Ok(dx)
    }

    fn visit(&mut self, visitor: &mut dyn Visitor<T>) {
        self.conv1.visit(visitor);
        self.bn1.visit(visitor);
        self.conv2.visit(visitor);
        self.bn2.visit(visitor);
        self.conv3.visit(visitor);
        self.bn3.visit(visitor);
        if let Some(se) = &mut self.se {
            se.visit(visitor);
        }
        self.shortcut.visit(visitor);
    }
}

// ---------------------------------------------------------------------------
// Res2Net block
// ---------------------------------------------------------------------------

pub struct Res2NetBlock<T: Scalar> {
    scale: usize,
    group_width: usize,
    stride: usize,
    reduce: Conv2d<T>,
    reduce_bn: BatchNorm2d<T>,
    reduce_relu: ActivationLayer<T>,
    /// `K_2..K_s`: one 3x3 conv (+BN+ReLU) per group after the first.
    k_convs: Vec<Conv2d<T>>,
    k_bns: Vec<BatchNorm2d<T>>,
    k_relus: Vec<ActivationLayer<T>>,
    /// Downsampling for the first group when the block strides.
    x1_pool: Option<Pool2d<T>>,
    expand: Conv2d<T>,
    expand_bn: BatchNorm2d<T>,
    se: Option<SeGate<T>>,
    shortcut: Shortcut<T>,
    relu_out: ActivationLayer<T>,
}

impl<T: Scalar> Res2NetBlock<T> {
    pub fn new<R: Rng>(spec: &BlockSpec, name: &str, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        if spec.kind != BlockKind::Res2Net {
            return Err(Error::config("Res2NetBlock requires a Res2Net spec"));
        }
        let g = spec.group_width();
        let hidden = spec.hidden_width();
        let out = spec.out_channels();
        let mut k_convs = Vec::with_capacity(spec.scale - 1);
        let mut k_bns = Vec::with_capacity(spec.scale - 1);
        let mut k_relus = Vec::with_capacity(spec.scale - 1);
        for i in 2..=spec.scale {
            k_convs.push(Conv2d::new(&format!("{name}.k{i}"), g, g, 3, spec.stride, 1, rng));
            k_bns.push(BatchNorm2d::new(&format!("{name}.k{i}.bn"), g));
            k_relus.push(ActivationLayer::relu());
        }
        Ok(Res2NetBlock {
            scale: spec.scale,
            group_width: g,
            stride: spec.stride,
            reduce: Conv2d::new(&format!("{name}.reduce"), spec.in_channels, hidden, 1, 1, 0, rng),
            reduce_bn: BatchNorm2d::new(&format!("{name}.reduce.bn"), hidden),
            reduce_relu: ActivationLayer::relu(),
            k_convs,
            k_bns,
            k_relus,
            x1_pool: (spec.stride != 1).then(|| Pool2d::new(PoolKind::Avg, 3, spec.stride, 1)),
            expand: Conv2d::new(&format!("{name}.expand"), hidden, out, 1, 1, 0, rng),
            expand_bn: BatchNorm2d::new(&format!("{name}.expand.bn"), out),
            se: match spec.se_ratio {
                Some(r) => Some(SeGate::new(&format!("{name}.se"), out, r, rng)),
                None => None,
            },
            shortcut: Shortcut::new(spec, name, rng),
            relu_out: ActivationLayer::relu(),
        })
    }

    /// Hierarchy stage: split the reduced feature into groups and apply the
    /// `K_i` chain. Returns each group output `y_i` (used directly by tests
    /// pinning the hierarchy semantics) — the block output concatenates them.
    fn hierarchy_forward(&mut self, reduced: &Tensor<T>, mode: Mode) -> Result<Vec<Tensor<T>>> {
        let g = self.group_width;
        let mut ys: Vec<Tensor<T>> = Vec::with_capacity(self.scale);
        for i in 0..self.scale {
            let xi = reduced.slice_channels(i * g, (i + 1) * g)?;
            if i == 0 {
                // y_1: identity, or average-pool when the block strides.
                let y = match &mut self.x1_pool {
                    Some(pool) => pool.forward(&xi, mode)?,
                    None => xi,
                };
                ys.push(y);
                continue;
            }
            // Hierarchical addition feeds y_{i-1} into K_i's input — except
            // for K_2, and except when striding (the spatial sizes differ).
            let k_in = if i == 1 || self.stride != 1 {
                xi
            } else {
                xi.add(&ys[i - 1])?
            };
            let mut y = self.k_convs[i - 1].forward(&k_in, mode)?;
            y = self.k_bns[i - 1].forward(&y, mode)?;
            y = self.k_relus[i - 1].forward(&y, mode)?;
            ys.push(y);
        }
        Ok(ys)
    }

    fn hierarchy_backward(&mut self, d_cat: &Tensor<T>) -> Result<Tensor<T>> {
        let g = self.group_width;
        let mut d_ys: Vec<Tensor<T>> = (0..self.scale)
            .map(|i| d_cat.slice_channels(i * g, (i + 1) * g))
            .collect::<Result<_>>()?;
        let mut d_xs: Vec<Option<Tensor<T>>> = vec![None; self.scale];
        // Walk the hierarchy top-down so each d_y accumulates the
        // contribution flowing back from the next group first.
        for i in (1..self.scale).rev() {
            let mut d = self.k_relus[i - 1].backward(&d_ys[i])?;
            d = self.k_bns[i - 1].backward(&d)?;
            let d_kin = self.k_convs[i - 1].backward(&d)?;
            if i > 1 && self.stride == 1 {
                d_ys[i - 1].add_assign(&d_kin)?;
            }
            d_xs[i] = Some(d_kin);
        }
        d_xs[0] = Some(match &mut self.x1_pool {
            Some(pool) => pool.backward(&d_ys[0])?,
            None => d_ys[0].clone(),
        });
        let parts: Vec<Tensor<T>> = d_xs.into_iter().map(Option::unwrap).collect();
        Tensor::concat_channels(&parts)
    }
}

impl<T: Scalar> Layer<T> for Res2NetBlock<T> {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let sc = self.shortcut.forward(input, mode)?;
        let mut h = self.reduce.forward(input, mode)?;
        h = self.reduce_bn.forward(&h, mode)?;
        h = self.reduce_relu.forward(&h, mode)?;
        let ys = self.hierarchy_forward(&h, mode)?;
        let cat = Tensor::concat_channels(&ys)?;
        let mut z = self.expand.forward(&cat, mode)?;
        z = self.expand_bn.forward(&z, mode)?;
        if let Some(se) = &mut self.se {
            z = se.forward(&z, mode)?;
        }
        self.relu_out.forward(&z.add(&sc)?, mode)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let d = self.relu_out.backward(grad_out)?;
        let dsc = self.shortcut.backward(&d)?;
        let mut dz = d;
        if let Some(se) = &mut self.se {
            dz = se.backward(&dz)?;
        }
        dz = self.expand_bn.backward(&dz)?;
        let d_cat = self.expand.backward(&dz)?;
        let dh = self.hierarchy_backward(&d_cat)?;
        let mut dm = self.reduce_relu.backward(&dh)?;
        dm = self.reduce_bn.backward(&dm)?;
        let mut dx = self.reduce.backward(&dm)?;
        dx.add_assign(&dsc)?;
        Ok(dx)
    }

    fn visit(&mut self, visitor: &mut dyn Visitor<T>) {
        self.reduce.visit(visitor);
        self.reduce_bn.visit(visitor);
        for i in 0..self.k_convs.len() {
            self.k_convs[i].visit(visitor);
            self.k_bns[i].visit(visitor);
        }
        self.expand.visit(visitor);
        self.expand_bn.visit(visitor);
        if let Some(se) = &mut self.se {
            se.visit(visitor);
        }
        self.shortcut.visit(visitor);
    }
}

/// Construct the block a spec describes, boxed as a [`Layer`].
pub fn build_block<T: Scalar, R: Rng>(
    spec: &BlockSpec,
    name: &str,
    rng: &mut R,
) -> Result<Box<dyn Layer<T>>> {
    Ok(match spec.kind {
        BlockKind::Basic => Box::new(BasicBlock::new(spec, name, rng)?),
        BlockKind::Bottleneck => Box::new(BottleneckBlock::new(spec, name, rng)?),
        BlockKind::Res2Net => Box::new(Res2NetBlock::new(spec, name, rng)?),
    })
}

/// Count parameters of a constructed block by enumeration (the closed form
/// in [`block_param_count`] must agree; tests assert this).
pub fn measure_block_params<T: Scalar>(block: &mut dyn Layer<T>) -> usize {
    let mut counter = ParamCounter::default();
    block.visit(&mut counter);
    counter.total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Mode;
    use crate::ops::{batchnorm_eval, conv2d};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn specs_under_test() -> Vec<BlockSpec> {
        vec![
            BlockSpec::basic(16, 16, 1),
            BlockSpec::basic(16, 32, 2),
            BlockSpec::basic(32, 32, 1).with_se(16),
            BlockSpec::bottleneck(16, 16, 1),
            BlockSpec::bottleneck(32, 64, 2),
            BlockSpec::bottleneck(64, 64, 1).with_se(16),
            BlockSpec::res2net(16, 16, 1, 4),
            BlockSpec::res2net(32, 32, 2, 4),
            BlockSpec::res2net(32, 16, 1, 2).with_se(16),
            BlockSpec::res2net(16, 32, 2, 8).with_se(16),
            BlockSpec::res2net(16, 32, 1, 4).with_group_width(13),
            BlockSpec::se_res2net(24, 16, 2, 4).with_group_width(6),
        ]
    }

    #[test]
    fn closed_form_count_matches_enumeration_for_all_kinds() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for spec in specs_under_test() {
            let mut block = build_block::<f32, _>(&spec, "b", &mut rng).unwrap();
            let measured = measure_block_params(block.as_mut());
            assert_eq!(
                block_param_count(&spec),
                measured,
                "closed form disagrees with enumeration for {spec:?}"
            );
        }
    }

    #[test]
    fn even_split_hierarchy_convs_follow_the_scale_law() {
        // For hidden width H split evenly into s groups, the 3x3 stage
        // costs 9*H*H*(s-1)/s^2 — exactly, in integer arithmetic.
        for (width, scale) in [(16usize, 4usize), (32, 4), (64, 8), (32, 2)] {
            let g = width / scale;
            let convs = (scale - 1) * 9 * g * g;
            assert_eq!(9 * width * width * (scale - 1) % (scale * scale), 0);
            assert_eq!(convs, 9 * width * width * (scale - 1) / (scale * scale));
        }
        // The canonical small example: width 16, scale 4 -> 432 weights.
        assert_eq!(3 * 9 * 4 * 4, 432);
    }

    #[test]
    fn blocks_preserve_or_halve_spatial_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f32>::from_fn(&[2, 16, 8, 9], |i| (i % 17) as f32 * 0.1 - 0.8);
        for spec in specs_under_test() {
            if spec.in_channels != 16 {
                continue;
            }
            let mut block = build_block::<f32, _>(&spec, "b", &mut rng).unwrap();
            let y = block.forward(&x, Mode::Train).unwrap();
            let expect_hw = if spec.stride == 1 { [8, 9] } else { [4, 5] };
            assert_eq!(
                y.shape(),
                &[2, spec.out_channels(), expect_hw[0], expect_hw[1]],
                "bad output shape for {spec:?}"
            );
        }
    }

    /// Independent reconstruction of the hierarchy equation: with the block
    /// in eval mode (fresh running stats), recompute y_i from the block's
    /// own weights using only functional ops and compare.
    #[test]
    fn res2net_hierarchy_matches_equation_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let spec = BlockSpec::res2net(8, 8, 1, 4);
        let mut block = Res2NetBlock::<f64>::new(&spec, "b", &mut rng).unwrap();
        let x = Tensor::<f64>::from_fn(&[1, 8, 6, 6], |i| ((i * 7) % 13) as f64 * 0.25 - 1.5);

        // Reference: reduced = relu(bn(conv1x1(x))) with identity-stat BN.
        let g = spec.group_width();
        let bn_id = |t: &Tensor<f64>, c: usize| {
            batchnorm_eval(t, &vec![1.0; c], &vec![0.0; c], &vec![0.0; c], &vec![1.0; c],
                crate::ops::BN_EPS)
            .unwrap()
            .0
        };
        let reduced = {
            let h = conv2d(&x, &block.reduce.weight.value, 1, 0).unwrap();
            activate(&bn_id(&h, spec.hidden_width()), Activation::Relu)
        };
        let mut expected: Vec<Tensor<f64>> = Vec::new();
        for i in 0..spec.scale {
            let xi = reduced.slice_channels(i * g, (i + 1) * g).unwrap();
            if i == 0 {
                expected.push(xi);
                continue;
            }
            let k_in = if i == 1 {
                xi
            } else {
                xi.add(&expected[i - 1]).unwrap()
            };
            let conv = conv2d(&k_in, &block.k_convs[i - 1].weight.value, 1, 1).unwrap();
            expected.push(activate(&bn_id(&conv, g), Activation::Relu));
        }

        let reduced_again = {
            let h = block.reduce.forward(&x, Mode::Eval).unwrap();
            let h = block.reduce_bn.forward(&h, Mode::Eval).unwrap();
            block.reduce_relu.forward(&h, Mode::Eval).unwrap()
        };
        let ys = block.hierarchy_forward(&reduced_again, Mode::Eval).unwrap();
        assert_eq!(ys.len(), spec.scale);
        for (i, (y, e)) in ys.iter().zip(&expected).enumerate() {
            assert_eq!(y.shape(), e.shape());
            for (a, b) in y.data().iter().zip(e.data()) {
                assert!((a - b).abs() < 1e-12, "group {i} diverges: {a} vs {b}");
            }
        }
    }

    /// Zeroing K_j..K_s must zero y_j..y_s (each later group only sees its
    /// split through its own zeroed conv), while y_1..y_{j-1} are untouched.
    #[test]
    fn zeroed_hierarchy_tail_produces_zero_groups() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = BlockSpec::res2net(8, 8, 1, 4);
        for j in 2..=4usize {
            let mut block = Res2NetBlock::<f64>::new(&spec, "b", &mut rng).unwrap();
            for idx in (j - 1)..=3 {
                block.k_convs[idx - 1].weight.value.fill(0.0);
            }
            let x = Tensor::<f64>::from_fn(&[1, 8, 5, 5], |i| (i % 9) as f64 - 4.0);
            let h = block.reduce.forward(&x, Mode::Eval).unwrap();
            let h = block.reduce_bn.forward(&h, Mode::Eval).unwrap();
            let h = block.reduce_relu.forward(&h, Mode::Eval).unwrap();
            let ys = block.hierarchy_forward(&h, Mode::Eval).unwrap();
            for (i, y) in ys.iter().enumerate().skip(1) {
                let all_zero = y.data().iter().all(|v| v.abs() < 1e-12);
                if i + 1 >= j {
                    assert!(all_zero, "y_{} should be zero when K_{j}.. are zeroed", i + 1);
                } else {
                    assert!(!all_zero, "y_{} unexpectedly zero", i + 1);
                }
            }
        }
    }

    #[test]
    fn se_gate_with_saturated_positive_gate_is_identity() {
        // Force fc2 bias strongly positive: sigmoid ~ 1 -> output ~ input.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut se = SeGate::<f64>::new("se", 4, 2, &mut rng);
        se.fc2.weight.value.fill(0.0);
        se.fc2.bias.value.fill(40.0);
        let x = Tensor::<f64>::from_fn(&[2, 4, 3, 3], |i| i as f64 * 0.1);
        let y = se.forward(&x, Mode::Eval).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn se_gate_scales_channels_by_sigmoid_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut se = SeGate::<f64>::new("se", 2, 2, &mut rng);
        // Zero MLP: gate = sigmoid(0) = 0.5 everywhere.
        se.fc1.weight.value.fill(0.0);
        se.fc2.weight.value.fill(0.0);
        let x = Tensor::<f64>::from_fn(&[1, 2, 2, 2], |i| i as f64);
        let y = se.forward(&x, Mode::Eval).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - 0.5 * b).abs() < 1e-15);
        }
    }

    #[test]
    fn se_bottleneck_dimension_has_a_floor_of_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let spec = BlockSpec::res2net(8, 4, 1, 4).with_group_width(1).with_se(16);
        // out = 8, ratio 16 -> d = max(1, 0) = 1: fc params 8*1+1 + 1*8+8.
        let se_params = 8 + 1 + 8 + 8;
        let base = block_param_count(&BlockSpec::res2net(8, 4, 1, 4).with_group_width(1));
        assert_eq!(block_param_count(&spec), base + se_params);
        // And it builds.
        build_block::<f32, _>(&spec, "b", &mut rng).unwrap();
    }

    #[test]
    fn identity_shortcut_requires_matching_shape_and_unit_stride() {
        assert!(!BlockSpec::basic(16, 16, 1).needs_projection());
        assert!(BlockSpec::basic(16, 16, 2).needs_projection());
        assert!(BlockSpec::basic(8, 16, 1).needs_projection());
        // Bottleneck always projects on entry (in != width*2) unless the
        // input is already expanded.
        assert!(BlockSpec::bottleneck(16, 16, 1).needs_projection());
        assert!(!BlockSpec::bottleneck(32, 16, 1).needs_projection());
    }

    #[test]
    fn spec_validation_rejects_bad_configs() {
        assert!(BlockSpec::res2net(16, 16, 1, 1).validate().is_err()); // scale < 2
        assert!(BlockSpec::res2net(16, 18, 1, 4).validate().is_err()); // uneven split
        assert!(BlockSpec::res2net(16, 18, 1, 4).with_group_width(5).validate().is_ok());
        assert!(BlockSpec::basic(16, 16, 3).validate().is_err()); // stride 3
        assert!(BlockSpec::basic(0, 16, 1).validate().is_err());
        assert!(BlockSpec::basic(16, 16, 1).with_se(0).validate().is_err());
    }

    #[test]
    fn gradients_accumulate_into_every_parameter() {
        // After one forward/backward with a generic input, no parameter
        // gradient should be identically zero (catches disconnected wiring).
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for spec in [
            BlockSpec::basic(8, 8, 1).with_se(4),
            BlockSpec::bottleneck(8, 8, 2).with_se(4),
            BlockSpec::res2net(8, 8, 1, 4).with_se(4),
            BlockSpec::res2net(8, 8, 2, 4),
        ] {
            let mut block = build_block::<f64, _>(&spec, "b", &mut rng).unwrap();
            let x = Tensor::<f64>::from_fn(&[2, 8, 6, 6], |i| ((i * 31) % 23) as f64 * 0.1 - 1.0);
            let y = block.forward(&x, Mode::Train).unwrap();
            let dy = Tensor::<f64>::filled(y.shape(), 1.0);
            block.backward(&dy).unwrap();
            struct NonZero {
                failures: Vec<String>,
            }
            impl Visitor<f64> for NonZero {
                fn param(&mut self, p: &mut crate::nn::Param<f64>) {
                    if p.grad.data().iter().all(|v| *v == 0.0) {
                        self.failures.push(p.name.clone());
                    }
                }
            }
            let mut v = NonZero { failures: vec![] };
            block.visit(&mut v);
            assert!(
                v.failures.is_empty(),
                "zero gradients in {spec:?}: {:?}",
                v.failures
            );
        }
    }
}
