//! The detector network: DCT preprocessing, truncation, dense feature-reuse
//! blocks, global average pooling and a two-way softmax classifier.
//!
//! A [`NetGraph`] is a fixed topologically ordered list of nodes. The
//! classifier head is kept outside the node list so that the pooled
//! features can be extracted and reused on their own.

mod checkpoint;
mod dct;

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

pub use checkpoint::{peek_checkpoint, CheckpointMeta, CHECKPOINT_VERSION};
pub use dct::{basis_value, init_dct_kernels, DctIndexing, DctKernelBank};

use crate::error::{contract, ensure, Result};
use crate::jpeg::RealImage;
use crate::rng;
use crate::tensor::{
    abs, abs_backward, add_prefix, batch_norm_backward, batch_norm_forward, batch_norm_inference, concat_channels,
    conv2d, conv2d_backward, dense_logits, dense_softmax_xent, global_avg_pool, global_avg_pool_backward, relu,
    relu_backward, slice_channels, softmax, tlu, tlu_backward, BatchNormParams, BnCache, ConvParams, DenseParams,
    Shape4, Tensor4,
};

/// Length of the pooled feature vector of the proposed net.
pub const FEATURE_DIM: usize = 160;
pub const DEFAULT_TLU_THRESHOLD: f32 = 8.0;
const CONV_INIT_SIGMA: f64 = 0.01;
const CONV_INIT_BIAS: f32 = 0.2;
const GROWTH: usize = 32;
const BOTTLENECK: usize = 96;
const TRANSITION: usize = 128;
const TRANSITION_OUT: usize = 96;
/// Five stride-2 layers.
const DOWNSAMPLE: usize = 32;
/// Name of the first-layer node; its parameters are named `g1.dct.*`.
pub const DCT_NODE: &str = "g1.dct";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Variant {
    #[default]
    Proposed,
    /// #1: each 32-map output is added into the first 32 channels of the
    /// running block state instead of being concatenated.
    Addition,
    /// #2: no 1×1 bottleneck or transition layers.
    NoBottleneck,
    /// #3: the 1×1 bottleneck and transition layers become 3×3.
    WideBottleneck,
    /// #4: DCT kernels are not trained.
    FrozenDct,
    /// #5: absolute value between the DCT layer and the truncation.
    AbsoluteLayer,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Proposed,
        Variant::Addition,
        Variant::NoBottleneck,
        Variant::WideBottleneck,
        Variant::FrozenDct,
        Variant::AbsoluteLayer,
    ];

    /// 0 is the proposed net, 1..=5 the ablations.
    pub fn from_id(id: u8) -> Result<Self> {
        match Self::ALL.get(id as usize) {
            Some(v) => Ok(*v),
            None => contract!("unknown variant id {id}; expected 0 (proposed) or 1..5"),
        }
    }

    pub fn id(self) -> u8 {
        Self::ALL.iter().position(|&v| v == self).unwrap() as u8
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Proposed => f.write_str("proposed"),
            v => write!(f, "variant #{}", v.id()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TluConfig {
    pub threshold: f32,
}

impl TluConfig {
    pub fn new(threshold: f32) -> Result<Self> {
        ensure!(threshold.is_finite() && threshold > 0.0, "TLU threshold must be positive, got {threshold}");
        Ok(Self { threshold })
    }
}

impl Default for TluConfig {
    fn default() -> Self {
        Self { threshold: DEFAULT_TLU_THRESHOLD }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub variant: Variant,
    pub tlu: TluConfig,
    pub dct_indexing: DctIndexing,
    /// Seeds the Gaussian and Xavier initialization.
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self { variant: Variant::Proposed, tlu: TluConfig::default(), dct_indexing: DctIndexing::ZeroBased, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Input,
    Conv { params: ConvParams<f32>, trainable: bool },
    BatchNorm(BatchNormParams<f32>),
    Relu,
    Tlu(f32),
    Abs,
    Concat,
    /// `inputs = [state, update]`; update is added into the leading channels.
    AddPrefix,
    GlobalAvgPool,
}

impl Op {
    fn kind(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Conv { .. } => "conv",
            Op::BatchNorm(_) => "bn",
            Op::Relu => "relu",
            Op::Tlu(_) => "tlu",
            Op::Abs => "abs",
            Op::Concat => "concat",
            Op::AddPrefix => "add",
            Op::GlobalAvgPool => "gap",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub name: String,
    /// Row of the architecture table this node belongs to (1..=8).
    pub group: u8,
    pub op: Op,
    pub inputs: Vec<usize>,
}

/// Metadata for one learnable array, in gradient order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamInfo {
    pub name: String,
    pub len: usize,
    pub trainable: bool,
}

/// Forward-pass state kept for the backward pass.
pub struct Activations {
    values: Vec<Tensor4>,
    bn: Vec<Option<BnCache>>,
}

impl Activations {
    /// Pooled features, `(n, features, 1, 1)`.
    pub fn pooled(&self) -> &Tensor4 {
        self.values.last().expect("graph has nodes")
    }

    pub fn node(&self, index: usize) -> &Tensor4 {
        &self.values[index]
    }
}

/// Result of one training forward/backward pass.
pub struct Step {
    pub loss: f64,
    /// `n × 2` softmax probabilities.
    pub probs: Vec<f64>,
    /// Aligned with [`NetGraph::param_info`].
    pub grads: Vec<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetGraph {
    nodes: Vec<Node>,
    head: DenseParams<f32>,
    height: usize,
    width: usize,
    config: NetConfig,
}

pub fn build_proposed(h: usize, w: usize) -> Result<NetGraph> {
    NetGraph::build(&NetConfig::default(), h, w)
}

/// `id` in 1..=5.
pub fn build_variant(id: u8, h: usize, w: usize) -> Result<NetGraph> {
    ensure!((1..=5).contains(&id), "unknown variant id {id}; expected 1..5");
    NetGraph::build(&NetConfig { variant: Variant::from_id(id)?, ..NetConfig::default() }, h, w)
}

struct Builder<R: Rng> {
    nodes: Vec<Node>,
    channels: Vec<usize>,
    rng: R,
    variant: Variant,
}

impl<R: Rng> Builder<R> {
    fn push(&mut self, name: String, group: u8, op: Op, inputs: Vec<usize>, channels: usize) -> usize {
        self.nodes.push(Node { name, group, op, inputs });
        self.channels.push(channels);
        self.nodes.len() - 1
    }

    /// Conv-BN-ReLU. 3×3 layers get pad 1 and bias 0.2; 1×1 layers neither.
    fn conv_bn_relu(&mut self, name: &str, group: u8, input: usize, out_c: usize, k: usize, stride: usize) -> usize {
        let in_c = self.channels[input];
        let normal = Normal::new(0.0, CONV_INIT_SIGMA).expect("valid sigma");
        let shape = Shape4::new(out_c, in_c, k, k);
        let data = (0..shape.len()).map(|_| normal.sample(&mut self.rng) as f32).collect();
        let kernels = Tensor4::new(shape, data).expect("shape matches");
        let bias = (k > 1).then(|| vec![CONV_INIT_BIAS; out_c]);
        let params = ConvParams::new(kernels, bias, stride, k / 2);
        let c = self.push(name.into(), group, Op::Conv { params, trainable: true }, vec![input], out_c);
        let b = self.push(format!("{name}.bn"), group, Op::BatchNorm(BatchNormParams::new(out_c)), vec![c], out_c);
        self.push(format!("{name}.relu"), group, Op::Relu, vec![b], out_c)
    }

    /// Two feature-reuse layers on `state`; returns the new state.
    fn dense_block(&mut self, group: u8, mut state: usize) -> usize {
        for layer in 1..=2 {
            let prefix = format!("g{group}.layer{layer}");
            let x = match self.variant {
                Variant::NoBottleneck => state,
                Variant::WideBottleneck => self.conv_bn_relu(&format!("{prefix}.bottleneck"), group, state, BOTTLENECK, 3, 1),
                _ => self.conv_bn_relu(&format!("{prefix}.bottleneck"), group, state, BOTTLENECK, 1, 1),
            };
            let y = self.conv_bn_relu(&format!("{prefix}.conv"), group, x, GROWTH, 3, 1);
            let sc = self.channels[state];
            state = if self.variant == Variant::Addition {
                self.push(format!("{prefix}.add"), group, Op::AddPrefix, vec![state, y], sc)
            } else {
                self.push(format!("{prefix}.concat"), group, Op::Concat, vec![state, y], sc + GROWTH)
            };
        }
        state
    }

    fn transition(&mut self, group: u8, state: usize) -> usize {
        let prefix = format!("g{group}.transition");
        let x = match self.variant {
            Variant::NoBottleneck => state,
            Variant::WideBottleneck => self.conv_bn_relu(&format!("{prefix}.reduce"), group, state, TRANSITION, 3, 1),
            _ => self.conv_bn_relu(&format!("{prefix}.reduce"), group, state, TRANSITION, 1, 1),
        };
        self.conv_bn_relu(&format!("{prefix}.conv"), group, x, TRANSITION_OUT, 3, 2)
    }
}

impl NetGraph {
    /// Builds the graph for `h × w` single-channel inputs.
    pub fn build(cfg: &NetConfig, h: usize, w: usize) -> Result<Self> {
        ensure!(
            h > 0 && w > 0 && h.is_multiple_of(DOWNSAMPLE) && w.is_multiple_of(DOWNSAMPLE),
            "input size {h}x{w} must be a positive multiple of {DOWNSAMPLE}"
        );
        let mut b = Builder { nodes: Vec::new(), channels: Vec::new(), rng: rng::stream(cfg.seed, 1), variant: cfg.variant };
        let input = b.push("input".into(), 0, Op::Input, vec![], 1);

        let mut bank = DctKernelBank::new(cfg.dct_indexing);
        bank.trainable = cfg.variant != Variant::FrozenDct;
        let dct = Op::Conv { params: bank.to_conv(), trainable: bank.trainable };
        let mut x = b.push(DCT_NODE.into(), 1, dct, vec![input], 16);
        if cfg.variant == Variant::AbsoluteLayer {
            x = b.push("g2.abs".into(), 2, Op::Abs, vec![x], 16);
        }
        x = b.push("g2.tlu".into(), 2, Op::Tlu(cfg.tlu.threshold), vec![x], 16);

        x = b.conv_bn_relu("g3.conv1", 3, x, 32, 3, 1);
        x = b.conv_bn_relu("g3.conv2", 3, x, 64, 3, 2);
        for group in 4..=7 {
            x = b.dense_block(group, x);
            x = b.transition(group, x);
        }
        x = b.dense_block(8, x);
        let features = b.channels[x];
        b.push("g8.pool".into(), 8, Op::GlobalAvgPool, vec![x], features);

        let mut head = DenseParams::zeros(features, 2);
        let limit = (3.0 / features as f64).sqrt();
        for v in &mut head.weights {
            *v = b.rng.random_range(-limit..limit) as f32;
        }
        let graph = Self { nodes: b.nodes, head, height: h, width: w, config: cfg.clone() };
        graph.infer_shapes(1)?;
        Ok(graph)
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn head(&self) -> &DenseParams<f32> {
        &self.head
    }

    pub fn input_size(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Length of the pooled feature vector.
    pub fn feature_dim(&self) -> usize {
        self.head.inputs
    }

    /// Current first-layer kernels.
    pub fn dct_kernels(&self) -> &Tensor4 {
        match &self.nodes[1].op {
            Op::Conv { params, .. } => &params.kernels,
            _ => unreachable!("node 1 is the DCT layer"),
        }
    }

    /// Output shape of every node for a batch of `n`.
    pub fn infer_shapes(&self, n: usize) -> Result<Vec<Shape4>> {
        let mut shapes: Vec<Shape4> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let first = node.inputs.first().map(|&i| shapes[i]);
            let s = match &node.op {
                Op::Input => Shape4::new(n, 1, self.height, self.width),
                Op::Conv { params, .. } => params.output_shape(first.unwrap())?,
                Op::Concat | Op::AddPrefix => {
                    let a = first.unwrap();
                    let b = shapes[node.inputs[1]];
                    ensure!(
                        (a.n, a.h, a.w) == (b.n, b.h, b.w),
                        "{}: spatial size {}x{} != {}x{}",
                        node.name,
                        a.h,
                        a.w,
                        b.h,
                        b.w
                    );
                    if matches!(node.op, Op::Concat) {
                        Shape4::new(a.n, a.c + b.c, a.h, a.w)
                    } else {
                        ensure!(b.c <= a.c, "{}: update has more channels than state", node.name);
                        a
                    }
                }
                Op::GlobalAvgPool => {
                    let a = first.unwrap();
                    Shape4::new(a.n, a.c, 1, 1)
                }
                _ => first.unwrap(),
            };
            shapes.push(s);
        }
        let pooled = shapes.last().unwrap();
        ensure!(pooled.c == self.head.inputs, "pooled width {} != classifier inputs {}", pooled.c, self.head.inputs);
        Ok(shapes)
    }

    /// Output shape of groups 1..=9 for a batch of `n`.
    pub fn group_output_shapes(&self, n: usize) -> Result<Vec<Shape4>> {
        let shapes = self.infer_shapes(n)?;
        let mut out = Vec::with_capacity(9);
        for g in 1..=8u8 {
            let last = self.nodes.iter().rposition(|node| node.group == g).expect("every group has a node");
            out.push(shapes[last]);
        }
        out.push(Shape4::new(n, self.head.classes, 1, 1));
        Ok(out)
    }

    /// Learnable arrays in gradient order: per node kernels, bias, gamma,
    /// beta; then classifier weights and bias.
    pub fn param_info(&self) -> Vec<ParamInfo> {
        let mut out = Vec::new();
        let mut add = |name: String, len: usize, trainable: bool| out.push(ParamInfo { name, len, trainable });
        for node in &self.nodes {
            match &node.op {
                Op::Conv { params, trainable } => {
                    add(format!("{}.kernels", node.name), params.kernels.data().len(), *trainable);
                    if let Some(b) = &params.bias {
                        add(format!("{}.bias", node.name), b.len(), *trainable);
                    }
                }
                Op::BatchNorm(p) => {
                    add(format!("{}.gamma", node.name), p.gamma.len(), true);
                    add(format!("{}.beta", node.name), p.beta.len(), true);
                }
                _ => {}
            }
        }
        add("fc.weights".into(), self.head.weights.len(), true);
        add("fc.bias".into(), self.head.bias.len(), true);
        out
    }

    /// Every learnable value, frozen or not.
    pub fn parameter_count(&self) -> usize {
        self.param_info().iter().map(|p| p.len).sum()
    }

    pub fn trainable_parameter_count(&self) -> usize {
        self.param_info().iter().filter(|p| p.trainable).map(|p| p.len).sum()
    }

    /// Mutable views of the learnable arrays, aligned with [`param_info`](Self::param_info).
    pub fn params_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out: Vec<&mut [f32]> = Vec::new();
        for node in &mut self.nodes {
            match &mut node.op {
                Op::Conv { params, .. } => {
                    out.push(params.kernels.data_mut());
                    if let Some(b) = &mut params.bias {
                        out.push(b);
                    }
                }
                Op::BatchNorm(p) => {
                    out.push(&mut p.gamma);
                    out.push(&mut p.beta);
                }
                _ => {}
            }
        }
        out.push(&mut self.head.weights);
        out.push(&mut self.head.bias);
        out
    }

    /// Stable digest of the topology: node names, kinds, wiring and array
    /// shapes. Trainability and input size are excluded.
    pub fn structure_hash(&self) -> u64 {
        let mut h = Sha256::new();
        for node in &self.nodes {
            h.update(format!("{}|{}|{}|{:?};", node.name, node.group, node.op.kind(), node.inputs));
            match &node.op {
                Op::Conv { params, .. } => h.update(format!(
                    "{}:{}:{}:{}:{};",
                    params.kernels.shape(),
                    params.bias.is_some(),
                    params.stride,
                    params.pad,
                    params.pad_end
                )),
                Op::BatchNorm(p) => h.update(format!("{}:{};", p.channels(), p.epsilon)),
                Op::Tlu(t) => h.update(t.to_le_bytes()),
                _ => {}
            }
        }
        h.update(format!("fc:{}x{}", self.head.inputs, self.head.classes));
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }

    fn check_input(&self, batch: &Tensor4) -> Result<()> {
        let s = batch.shape();
        ensure!(
            s.c == 1 && s.h == self.height && s.w == self.width && s.n > 0,
            "network expects (n, 1, {}, {}) input, got {s}",
            self.height,
            self.width
        );
        Ok(())
    }

    /// Inference pass up to the pooled features.
    pub fn forward_inference(&self, batch: &Tensor4) -> Result<Activations> {
        self.check_input(batch)?;
        let mut values: Vec<Tensor4> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match &node.op {
                Op::BatchNorm(p) => batch_norm_inference(&values[node.inputs[0]], p)?,
                _ => self.eval_stateless(node, &values, batch)?,
            };
            values.push(v);
        }
        Ok(Activations { values, bn: Vec::new() })
    }

    /// Training-mode pass: batch statistics, running averages updated.
    pub fn forward_training(&mut self, batch: &Tensor4) -> Result<Activations> {
        self.check_input(batch)?;
        let mut values: Vec<Tensor4> = Vec::with_capacity(self.nodes.len());
        let mut caches = Vec::with_capacity(self.nodes.len());
        for i in 0..self.nodes.len() {
            let (v, cache) = if matches!(self.nodes[i].op, Op::BatchNorm(_)) {
                let src = self.nodes[i].inputs[0];
                let Op::BatchNorm(p) = &mut self.nodes[i].op else { unreachable!() };
                let (v, c) = batch_norm_forward(&values[src], p, true)?;
                (v, Some(c))
            } else {
                (self.eval_stateless(&self.nodes[i], &values, batch)?, None)
            };
            values.push(v);
            caches.push(cache);
        }
        Ok(Activations { values, bn: caches })
    }

    /// Replaces every batch-norm running mean and variance by the average of
    /// the batch statistics over `batches`, computed with the current
    /// weights. Nothing changes if `batches` is empty.
    pub fn recalibrate_batch_norm(&mut self, batches: impl IntoIterator<Item = Result<Tensor4>>) -> Result<()> {
        let mut fresh = self.clone();
        let mut seen = 0u32;
        for batch in batches {
            seen += 1;
            // Weight 1/k on the k-th batch makes the running value a plain mean.
            let keep = f64::from(seen - 1) / f64::from(seen);
            for node in &mut fresh.nodes {
                if let Op::BatchNorm(p) = &mut node.op {
                    p.momentum = keep;
                }
            }
            fresh.forward_training(&batch?)?;
        }
        if seen == 0 {
            return Ok(());
        }
        for (node, new) in self.nodes.iter_mut().zip(&fresh.nodes) {
            if let (Op::BatchNorm(p), Op::BatchNorm(q)) = (&mut node.op, &new.op) {
                p.running_mean.clone_from(&q.running_mean);
                p.running_var.clone_from(&q.running_var);
            }
        }
        Ok(())
    }

    fn eval_stateless(&self, node: &Node, values: &[Tensor4], batch: &Tensor4) -> Result<Tensor4> {
        let input = |k: usize| &values[node.inputs[k]];
        Ok(match &node.op {
            Op::Input => batch.clone(),
            Op::Conv { params, .. } => conv2d(input(0), params)?,
            Op::Relu => relu(input(0)),
            Op::Tlu(t) => tlu(input(0), *t)?,
            Op::Abs => abs(input(0)),
            Op::Concat => concat_channels(&[input(0), input(1)])?,
            Op::AddPrefix => add_prefix(input(0), input(1))?,
            Op::GlobalAvgPool => global_avg_pool(input(0)),
            Op::BatchNorm(_) => unreachable!("batch norm handled by caller"),
        })
    }

    /// Cover/stego probabilities per sample, `(n × 2)` flattened.
    /// `training` selects batch statistics (and updates the running ones).
    pub fn forward(&mut self, batch: &Tensor4, training: bool) -> Result<Vec<f64>> {
        let acts = if training { self.forward_training(batch)? } else { self.forward_inference(batch)? };
        self.classify(acts.pooled())
    }

    /// Inference-mode probabilities, `(n × 2)` flattened.
    pub fn predict(&self, batch: &Tensor4) -> Result<Vec<f64>> {
        self.classify(self.forward_inference(batch)?.pooled())
    }

    /// Applies the classifier head to pooled features `(n, d, 1, 1)`.
    pub fn classify(&self, pooled: &Tensor4) -> Result<Vec<f64>> {
        Ok(softmax(&dense_logits(pooled, &self.head)?, self.head.classes))
    }

    /// Pooled features for a batch, `(n, d, 1, 1)`.
    pub fn features(&self, batch: &Tensor4) -> Result<Tensor4> {
        let mut acts = self.forward_inference(batch)?;
        Ok(acts.values.pop().expect("graph has nodes"))
    }

    /// Pooled features of one image.
    pub fn extract_features(&self, image: &RealImage) -> Result<Vec<f32>> {
        Ok(self.features(&image_tensor(image))?.into_data())
    }

    /// Training step gradients for `labels` (0 cover, 1 stego).
    pub fn train_step(&mut self, batch: &Tensor4, labels: &[usize]) -> Result<Step> {
        let acts = self.forward_training(batch)?;
        let xent = dense_softmax_xent(acts.pooled(), &self.head, labels)?;
        let (node_grads, mut grads) = self.backward(&acts, xent.grad_input)?;
        drop(node_grads);
        grads.push(xent.grad_weights);
        grads.push(xent.grad_bias);
        Ok(Step { loss: xent.loss, probs: xent.probs, grads })
    }

    /// Reverse pass from the pooled-feature gradient. Returns the gradient
    /// of every node output (where reached) and the parameter gradients of
    /// the node list, in [`param_info`](Self::param_info) order without
    /// the classifier head.
    pub(crate) fn backward(
        &self,
        acts: &Activations,
        grad_pooled: Tensor4,
    ) -> Result<(Vec<Option<Tensor4>>, Vec<Vec<f32>>)> {
        ensure!(acts.bn.len() == self.nodes.len(), "backward needs a training-mode forward pass");
        let count = self.nodes.len();
        let mut node_grads: Vec<Option<Tensor4>> = vec![None; count];
        node_grads[count - 1] = Some(grad_pooled);
        let mut param_grads: Vec<Vec<Vec<f32>>> = vec![Vec::new(); count];

        for i in (1..count).rev() {
            let node = &self.nodes[i];
            let (earlier, rest) = node_grads.split_at_mut(i);
            let Some(g) = rest[0].as_ref() else {
                param_grads[i] = self.zero_param_grads(node);
                continue;
            };
            let input = |k: usize| &acts.values[node.inputs[k]];
            let mut to_inputs: Vec<(usize, Tensor4)> = Vec::with_capacity(2);
            match &node.op {
                Op::Input => {}
                Op::Conv { params, trainable } => {
                    let need_input = !matches!(self.nodes[node.inputs[0]].op, Op::Input);
                    let cg = conv2d_backward(input(0), params, g, need_input, *trainable)?;
                    if let Some(gi) = cg.input {
                        to_inputs.push((node.inputs[0], gi));
                    }
                    let mut pg = vec![cg.kernels.into_data()];
                    if let Some(b) = cg.bias {
                        pg.push(b);
                    }
                    param_grads[i] = pg;
                }
                Op::BatchNorm(p) => {
                    let cache = acts.bn[i].as_ref().expect("batch norm cache");
                    let bg = batch_norm_backward(cache, p, g)?;
                    to_inputs.push((node.inputs[0], bg.input));
                    param_grads[i] = vec![bg.gamma, bg.beta];
                }
                Op::Relu => to_inputs.push((node.inputs[0], relu_backward(input(0), g))),
                Op::Tlu(t) => to_inputs.push((node.inputs[0], tlu_backward(input(0), g, *t))),
                Op::Abs => to_inputs.push((node.inputs[0], abs_backward(input(0), g))),
                Op::Concat => {
                    let split = input(0).shape().c;
                    to_inputs.push((node.inputs[0], slice_channels(g, 0, split)?));
                    to_inputs.push((node.inputs[1], slice_channels(g, split, g.shape().c - split)?));
                }
                Op::AddPrefix => {
                    let update = slice_channels(g, 0, input(1).shape().c)?;
                    to_inputs.push((node.inputs[0], g.clone()));
                    to_inputs.push((node.inputs[1], update));
                }
                Op::GlobalAvgPool => {
                    to_inputs.push((node.inputs[0], global_avg_pool_backward(g, input(0).shape())));
                }
            }
            for (target, grad) in to_inputs {
                match &mut earlier[target] {
                    Some(acc) => acc.add_assign(&grad),
                    slot => *slot = Some(grad),
                }
            }
        }
        Ok((node_grads, param_grads.into_iter().flatten().collect()))
    }

    fn zero_param_grads(&self, node: &Node) -> Vec<Vec<f32>> {
        match &node.op {
            Op::Conv { params, .. } => {
                let mut v = vec![vec![0.0; params.kernels.data().len()]];
                if let Some(b) = &params.bias {
                    v.push(vec![0.0; b.len()]);
                }
                v
            }
            Op::BatchNorm(p) => vec![vec![0.0; p.channels()]; 2],
            _ => Vec::new(),
        }
    }
}

/// `(1, 1, h, w)` tensor of an image's values.
pub fn image_tensor(image: &RealImage) -> Tensor4 {
    Tensor4::new(Shape4::new(1, 1, image.height(), image.width()), image.values().to_vec()).expect("image shape")
}

#[cfg(test)]
mod tests;
