//! Analytic parameter, FLOP and activation-memory accounting.
//!
//! A model is described as a linear [`Schedule`] of ops, each with its
//! parameter count, FLOPs and output shape (per sample). FLOPs count
//! multiply-accumulates twice; elementwise ops count one FLOP per output
//! element, layer norm five, pooling `k²` and bilinear sampling eight.
//!
//! Peak memory is a liveness simulation, not an allocator trace. In
//! inference mode an activation lives from the op that creates it to its
//! last consumer. In training mode every activation is kept until the end
//! of the forward pass if the backward pass reads it: inputs of convs,
//! matmuls, activations, products and norms, and outputs of softmax and
//! sigmoid. Others (sums, pools, resampling results feeding only such
//! ops) are freed after their last forward consumer. Parameter gradients
//! are added in training mode. Views (reshape/permute) are free.
//!
//! The U-shape reference ([`unet_schedule`]) is a 4-level encoder-decoder
//! at full input resolution: two 3×3 conv + ReLU per level, widths
//! `C, 2C, 4C, 8C`, 2×2 max-pool down, 2×2 stride-2 transpose conv up,
//! channel concat with the skip, two 3×3 convs, then a 1×1 conv to the
//! classes and a sigmoid.

use std::fmt::Write as _;

use crate::config::ModelConfig;
use crate::error::{Error, Result};

/// What the backward rule of an op reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Saves {
    Nothing,
    Inputs,
    Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Inference,
    Training,
}

/// One schedule entry as reported.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerCost {
    pub name: String,
    pub params: u64,
    pub flops: u64,
    pub out_bytes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub height: usize,
    pub width: usize,
    pub batch: usize,
    pub element_bytes: usize,
    pub mode: Mode,
    pub params: u64,
    pub flops: u64,
    /// Live activations at the peak step plus parameter (and, when
    /// training, gradient) bytes.
    pub peak_activation_bytes: u64,
    pub peak_live_activation_bytes: u64,
    pub param_bytes: u64,
    pub grad_bytes: u64,
    pub per_layer: Vec<LayerCost>,
}

#[derive(Debug, Clone)]
struct Node {
    name: String,
    params: u64,
    flops: u64,
    shape: Vec<usize>,
    inputs: Vec<usize>,
    saves: Saves,
    /// Scales with the batch (false for batch-independent query work).
    batched: bool,
    /// Views and parameter handles hold no activation storage.
    stored: bool,
    alias_of: Option<usize>,
}

fn numel(shape: &[usize]) -> u64 {
    shape.iter().map(|&v| v as u64).product()
}

/// Linear op schedule; every builder method returns the id of the new node.
#[derive(Debug, Clone, Default)]
pub struct Schedule {
    nodes: Vec<Node>,
    output: Option<usize>,
}

impl Schedule {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn shape(&self, id: usize) -> &[usize] {
        &self.nodes[id].shape
    }

    fn batched_any(&self, inputs: &[usize]) -> bool {
        inputs.is_empty() || inputs.iter().any(|&i| self.nodes[i].batched)
    }

    /// Generic op with explicit cost and output shape whose backward reads
    /// its inputs.
    pub fn op(&mut self, name: impl Into<String>, inputs: &[usize], shape: &[usize], params: u64, flops: u64) -> usize {
        self.op_saving(name, inputs, shape, params, flops, Saves::Inputs)
    }

    pub fn op_saving(
        &mut self,
        name: impl Into<String>,
        inputs: &[usize],
        shape: &[usize],
        params: u64,
        flops: u64,
        saves: Saves,
    ) -> usize {
        let batched = self.batched_any(inputs);
        self.nodes.push(Node {
            name: name.into(),
            params,
            flops,
            shape: shape.to_vec(),
            inputs: inputs.to_vec(),
            saves,
            batched,
            stored: true,
            alias_of: None,
        });
        self.nodes.len() - 1
    }

    pub fn input(&mut self, name: impl Into<String>, shape: &[usize]) -> usize {
        self.op(name, &[], shape, 0, 0)
    }

    /// Batch-independent constant table (e.g. positional encodings).
    pub fn constant(&mut self, name: impl Into<String>, shape: &[usize]) -> usize {
        let id = self.op(name, &[], shape, 0, 0);
        self.nodes[id].batched = false;
        id
    }

    /// A learned tensor used directly as an activation; counts parameters
    /// but no activation storage.
    pub fn parameter(&mut self, name: impl Into<String>, shape: &[usize]) -> usize {
        let id = self.op(name, &[], shape, numel(shape), 0);
        let n = &mut self.nodes[id];
        n.batched = false;
        n.stored = false;
        id
    }

    /// Reinterpretation of `x` with a new shape; shares its storage.
    pub fn view(&mut self, x: usize, shape: &[usize]) -> usize {
        debug_assert_eq!(numel(shape), numel(&self.nodes[x].shape));
        let root = self.nodes[x].alias_of.unwrap_or(x);
        let name = format!("{}.view", self.nodes[x].name);
        let id = self.op_saving(name, &[x], shape, 0, 0, Saves::Nothing);
        let n = &mut self.nodes[id];
        n.stored = false;
        n.alias_of = Some(root);
        id
    }

    /// Stores a batched copy of a batch-independent tensor.
    pub fn broadcast(&mut self, name: impl Into<String>, x: usize) -> usize {
        let shape = self.nodes[x].shape.clone();
        let id = self.op_saving(name, &[x], &shape, 0, 0, Saves::Nothing);
        self.nodes[id].batched = true;
        id
    }

    fn chw(&self, x: usize) -> (usize, usize, usize) {
        match self.nodes[x].shape[..] {
            [c, h, w] => (c, h, w),
            ref s => panic!("{}: expected a CHW shape, got {s:?}", self.nodes[x].name),
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv2d(
        &mut self,
        name: impl Into<String>,
        x: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        groups: usize,
        bias: bool,
    ) -> usize {
        let (cin, h, w) = self.chw(x);
        let (ho, wo) = ((h + 2 * pad - k) / stride + 1, (w + 2 * pad - k) / stride + 1);
        let kk = (k * k * (cin / groups)) as u64;
        let params = kk * cout as u64 + if bias { cout as u64 } else { 0 };
        let flops = 2 * kk * cout as u64 * (ho * wo) as u64;
        self.op(name, &[x], &[cout, ho, wo], params, flops)
    }

    pub fn conv_transpose2d(&mut self, name: impl Into<String>, x: usize, cout: usize, k: usize, stride: usize, bias: bool) -> usize {
        let (cin, h, w) = self.chw(x);
        let (ho, wo) = ((h - 1) * stride + k, (w - 1) * stride + k);
        let kk = (k * k * cin) as u64;
        let params = kk * cout as u64 + if bias { cout as u64 } else { 0 };
        let flops = 2 * kk * cout as u64 * (h * w) as u64;
        self.op(name, &[x], &[cout, ho, wo], params, flops)
    }

    /// `x · W (+ b)` over the last axis.
    pub fn linear(&mut self, name: impl Into<String>, x: usize, out: usize, bias: bool) -> usize {
        let mut shape = self.nodes[x].shape.clone();
        let fan_in = *shape.last().expect("linear on a scalar");
        let rows = numel(&shape) / fan_in as u64;
        *shape.last_mut().unwrap() = out;
        let params = (fan_in * out) as u64 + if bias { out as u64 } else { 0 };
        self.op(name, &[x], &shape, params, 2 * rows * (fan_in * out) as u64)
    }

    /// Elementwise op shaped like its first input.
    pub fn elementwise(&mut self, name: impl Into<String>, inputs: &[usize], flops_per_elem: u64, saves: Saves) -> usize {
        let shape = self.nodes[inputs[0]].shape.clone();
        self.op_saving(name, inputs, &shape, 0, flops_per_elem * numel(&shape), saves)
    }

    /// Pointwise nonlinearity (reads its input on the way back).
    pub fn activation(&mut self, name: impl Into<String>, x: usize) -> usize {
        self.elementwise(name, &[x], 1, Saves::Inputs)
    }

    /// Sum or scaling (reads nothing on the way back).
    pub fn add(&mut self, name: impl Into<String>, inputs: &[usize]) -> usize {
        self.elementwise(name, inputs, 1, Saves::Nothing)
    }

    pub fn layer_norm(&mut self, name: impl Into<String>, x: usize) -> usize {
        let shape = self.nodes[x].shape.clone();
        let c = *shape.last().unwrap() as u64;
        self.op(name, &[x], &shape, 2 * c, 5 * numel(&shape))
    }

    /// Stride-1 same-padded average pool.
    pub fn avg_pool(&mut self, name: impl Into<String>, x: usize, k: usize) -> usize {
        self.elementwise(name, &[x], (k * k) as u64, Saves::Nothing)
    }

    pub fn bilinear(&mut self, name: impl Into<String>, x: usize, out_h: usize, out_w: usize) -> usize {
        let (c, _, _) = self.chw(x);
        let shape = [c, out_h, out_w];
        self.op_saving(name, &[x], &shape, 0, 8 * numel(&shape), Saves::Nothing)
    }

    /// Softmax attention of `q: [nq,d]` over `k: [nk,d]`, `v: [nk,c]`.
    /// Scores, probabilities and output are separate buffers.
    pub fn softmax_attention(&mut self, name: &str, q: usize, k: usize, v: usize) -> usize {
        let [nq, d] = self.nodes[q].shape[..] else { panic!("{name}: q must be 2-D") };
        let [nk, c] = self.nodes[v].shape[..] else { panic!("{name}: v must be 2-D") };
        let (nq64, nk64) = (nq as u64, nk as u64);
        let scores = self.op(format!("{name}.scores"), &[q, k], &[nq, nk], 0, nq64 * nk64 * (2 * d as u64 + 1));
        let probs = self.op_saving(format!("{name}.softmax"), &[scores], &[nq, nk], 0, 3 * nq64 * nk64, Saves::Output);
        self.op(format!("{name}.out"), &[probs, v], &[nq, c], 0, 2 * nq64 * nk64 * c as u64)
    }

    /// Factored kernel attention of `q, k: [n,d]` and `v: [n,c]`.
    pub fn dgla_attention(&mut self, name: &str, q: usize, k: usize, v: usize) -> usize {
        let [n, d] = self.nodes[q].shape[..] else { panic!("{name}: q must be 2-D") };
        let [_, c] = self.nodes[v].shape[..] else { panic!("{name}: v must be 2-D") };
        let (n64, d64, c64) = (n as u64, d as u64, c as u64);
        let fq = self.activation(format!("{name}.phi_q"), q);
        let fk = self.activation(format!("{name}.phi_k"), k);
        let state = self.op(format!("{name}.state"), &[fk, v], &[d, c], 0, 2 * n64 * d64 * c64);
        let z = self.op_saving(format!("{name}.z"), &[fk], &[d], 0, n64 * d64, Saves::Nothing);
        let num = self.op(format!("{name}.num"), &[fq, state], &[n, c], 0, 2 * n64 * d64 * c64);
        let den = self.op(format!("{name}.den"), &[fq, z], &[n], 0, 2 * n64 * d64);
        self.op(format!("{name}.out"), &[num, den], &[n, c], 0, n64 * c64)
    }

    /// Marks the node that survives to the end of the schedule.
    pub fn set_output(&mut self, id: usize) {
        self.output = Some(id);
    }

    pub fn params(&self) -> u64 {
        self.nodes.iter().map(|n| n.params).sum()
    }

    pub fn flops(&self, batch: usize) -> u64 {
        self.nodes
            .iter()
            .map(|n| if n.batched { n.flops * batch as u64 } else { n.flops })
            .sum()
    }

    fn bytes(&self, n: &Node, batch: usize, element_bytes: usize) -> u64 {
        if !n.stored {
            return 0;
        }
        let b = if n.batched { batch as u64 } else { 1 };
        numel(&n.shape) * b * element_bytes as u64
    }

    /// Peak live activation bytes over the schedule.
    pub fn peak_live_bytes(&self, batch: usize, element_bytes: usize, mode: Mode) -> u64 {
        let sizes: Vec<u64> = self.nodes.iter().map(|n| self.bytes(n, batch, element_bytes)).collect();
        let end = self.nodes.len().saturating_sub(1);
        let mut last_use: Vec<usize> = (0..self.nodes.len()).collect();
        let training = mode == Mode::Training;
        for (i, n) in self.nodes.iter().enumerate() {
            if training && n.saves == Saves::Output {
                last_use[i] = end;
            }
            for &p in &n.inputs {
                let root = self.nodes[p].alias_of.unwrap_or(p);
                let keep = training && n.saves == Saves::Inputs;
                last_use[root] = last_use[root].max(if keep { end } else { i });
            }
        }
        if let Some(o) = self.output {
            let root = self.nodes[o].alias_of.unwrap_or(o);
            last_use[root] = end;
        }
        // difference array over the live interval [i, last_use[i]]
        let mut delta = vec![0i128; self.nodes.len() + 1];
        for (i, &s) in sizes.iter().enumerate() {
            delta[i] += s as i128;
            delta[last_use[i] + 1] -= s as i128;
        }
        let mut live = 0i128;
        let mut peak = 0i128;
        for d in &delta[..self.nodes.len()] {
            live += d;
            peak = peak.max(live);
        }
        peak as u64
    }

    pub fn report(&self, height: usize, width: usize, batch: usize, element_bytes: usize, mode: Mode) -> CostReport {
        let params = self.params();
        let param_bytes = params * element_bytes as u64;
        let grad_bytes = if mode == Mode::Training { param_bytes } else { 0 };
        let live = self.peak_live_bytes(batch, element_bytes, mode);
        let per_layer = self
            .nodes
            .iter()
            .filter(|n| n.alias_of.is_none())
            .map(|n| LayerCost {
                name: n.name.clone(),
                params: n.params,
                flops: if n.batched { n.flops * batch as u64 } else { n.flops },
                out_bytes: self.bytes(n, batch, element_bytes),
            })
            .collect();
        CostReport {
            height,
            width,
            batch,
            element_bytes,
            mode,
            params,
            flops: self.flops(batch),
            peak_activation_bytes: live + param_bytes + grad_bytes,
            peak_live_activation_bytes: live,
            param_bytes,
            grad_bytes,
            per_layer,
        }
    }
}

/// FLOPs of factored kernel attention over `n` tokens: feature maps,
/// the `d × c` state and normalizer, numerator, denominator and division.
pub fn dgla_attention_flops(n: u64, d: u64, c: u64) -> u64 {
    4 * n * d * c + 5 * n * d + n * c
}

/// FLOPs of softmax attention with `nq` queries and `nk` keys.
pub fn softmax_attention_flops(nq: u64, nk: u64, d: u64, c: u64) -> u64 {
    2 * nq * nk * (d + c) + 4 * nq * nk
}

fn encoder_schedule(s: &mut Schedule, cfg: &ModelConfig, image: usize) -> usize {
    let (c1, hidden) = (cfg.c1, cfg.c1 * cfg.expansion_ratio);
    let p = cfg.patch_size;
    let mut x = s.conv2d("encoder.patch_embed", image, c1, p, p, 0, 1, true);
    for i in 0..cfg.n_mbconv {
        let n = format!("encoder.block{i}");
        let e = s.conv2d(format!("{n}.expand"), x, hidden, 1, 1, 0, 1, true);
        let e = s.activation(format!("{n}.expand.gelu"), e);
        let dw = s.conv2d(format!("{n}.dw"), e, hidden, 3, 1, 1, hidden, true);
        let dw = s.activation(format!("{n}.dw.gelu"), dw);
        let pr = s.conv2d(format!("{n}.project"), dw, c1, 1, 1, 0, 1, true);
        let r = s.add(format!("{n}.residual"), &[pr, x]);
        x = s.activation(format!("{n}.gelu"), r);
    }
    if cfg.n_dgla() == 0 {
        return x;
    }
    let (_, gh, gw) = s.chw(x);
    let mut t = s.view(x, &[gh * gw, c1]);
    for i in cfg.n_mbconv..cfg.depth {
        let n = format!("encoder.block{i}");
        let q = s.linear(format!("{n}.w_q"), t, cfg.d, false);
        let k = s.linear(format!("{n}.w_k"), t, cfg.d, false);
        let v = s.linear(format!("{n}.w_v"), t, cfg.d, false);
        let v = s.activation(format!("{n}.silu_v"), v);
        let vg = s.linear(format!("{n}.w_gate"), v, c1, false);
        let att = s.dgla_attention(&format!("{n}.attn"), q, k, vg);
        let g = s.linear(format!("{n}.w_x"), t, c1, false);
        let g = s.activation(format!("{n}.silu_x"), g);
        let m = s.elementwise(format!("{n}.gate_mul"), &[g, att], 1, Saves::Inputs);
        let ln = s.layer_norm(format!("{n}.norm"), m);
        let h = s.linear(format!("{n}.mlp.fc1"), ln, hidden, true);
        let h = s.activation(format!("{n}.mlp.gelu"), h);
        let f = s.linear(format!("{n}.mlp.fc2"), h, c1, true);
        t = s.add(format!("{n}.residual"), &[f, t]);
    }
    s.view(t, &[c1, gh, gw])
}

fn decoder_schedule(s: &mut Schedule, cfg: &ModelConfig, enc: usize, out_h: usize, out_w: usize) -> usize {
    let dd = cfg.decoder_dim;
    let (u1, u2) = cfg.head_widths();
    let x = s.conv2d("neck.conv1", enc, dd, 1, 1, 0, 1, true);
    let x = s.conv2d("neck.conv2", x, dd, 3, 1, 1, 1, true);
    let (_, h, w) = s.chw(x);
    let n = h * w;
    let mut tokens = s.view(x, &[n, dd]);
    let q0 = s.parameter("decoder.queries", &[cfg.c2, dd]);
    let qq = s.linear("decoder.self_attn.w_q", q0, dd, false);
    let kk = s.linear("decoder.self_attn.w_k", q0, dd, false);
    let vv = s.linear("decoder.self_attn.w_v", q0, dd, false);
    let a = s.softmax_attention("decoder.self_attn", qq, kk, vv);
    let q1 = s.add("decoder.self_attn.residual", &[a, q0]);
    let mut queries = s.broadcast("decoder.queries.broadcast", q1);
    let pos = s.constant("decoder.pos_enc", &[n, dd]);
    for r in 0..cfg.decoder_layers {
        let name = format!("decoder.round{r}");
        let e = s.view(tokens, &[dd, h, w]);
        let mut acc = e;
        for &k in &cfg.pool_kernels {
            let p = s.avg_pool(format!("{name}.pool{k}"), e, k);
            acc = s.add(format!("{name}.sum{k}"), &[acc, p]);
        }
        let fused = if cfg.pool_kernels.is_empty() {
            e
        } else {
            s.add(format!("{name}.mean"), &[acc])
        };
        let fused = s.view(fused, &[n, dd]);
        let keys = s.add(format!("{name}.keys"), &[tokens, pos]);
        let a = s.softmax_attention(&format!("{name}.q2i"), queries, keys, fused);
        queries = s.add(format!("{name}.q_residual"), &[a, queries]);
        let iq = s.add(format!("{name}.image_q"), &[fused, pos]);
        let a = s.softmax_attention(&format!("{name}.i2q"), iq, queries, queries);
        tokens = s.add(format!("{name}.t_residual"), &[a, fused]);
    }
    let e = s.view(tokens, &[dd, h, w]);
    let up = s.conv_transpose2d("decoder.head.up1", e, u1, 2, 2, true);
    let up = s.activation("decoder.head.up1.gelu", up);
    let up = s.conv_transpose2d("decoder.head.up2", up, u2, 2, 2, true);
    let up = s.activation("decoder.head.up2.gelu", up);
    let mut hyper = queries;
    for i in 1..=3 {
        let out = if i == 3 { u2 } else { dd };
        hyper = s.linear(format!("decoder.head.mlp.fc{i}"), hyper, out, true);
        if i < 3 {
            hyper = s.activation(format!("decoder.head.mlp.gelu{i}"), hyper);
        }
    }
    let (_, uh, uw) = s.chw(up);
    let flops = 2 * (cfg.c2 * u2 * uh * uw) as u64;
    let logits = s.op("decoder.head.logits", &[hyper, up], &[cfg.c2, uh, uw], 0, flops);
    let r = s.bilinear("decoder.head.resize", logits, out_h, out_w);
    let out = s.elementwise("decoder.head.sigmoid", &[r], 1, Saves::Output);
    s.set_output(out);
    out
}

/// Schedule of a full forward pass at input `h × w`, mask `out_h × out_w`.
pub fn model_schedule(cfg: &ModelConfig, h: usize, w: usize, out_h: usize, out_w: usize) -> Result<Schedule> {
    cfg.validate()?;
    cfg.check_input(h, w)?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::Config("mask size must be positive".into()));
    }
    let mut s = Schedule::new();
    let image = s.input("input", &[3, h, w]);
    let image = s.elementwise("preprocess", &[image], 2, Saves::Nothing);
    let enc = encoder_schedule(&mut s, cfg, image);
    decoder_schedule(&mut s, cfg, enc, out_h, out_w);
    Ok(s)
}

/// Schedule of the U-shape reference described in the module docs.
pub fn unet_schedule(base: usize, classes: usize, h: usize, w: usize) -> Result<Schedule> {
    if base == 0 || classes == 0 || !h.is_multiple_of(8) || !w.is_multiple_of(8) || h == 0 || w == 0 {
        return Err(Error::Config(format!("U-shape needs positive widths and sides divisible by 8, got {h}x{w}")));
    }
    let mut s = Schedule::new();
    let mut x = s.input("input", &[3, h, w]);
    let double_conv = |s: &mut Schedule, x: usize, c: usize, name: &str| {
        let a = s.conv2d(format!("{name}.conv1"), x, c, 3, 1, 1, 1, true);
        let a = s.activation(format!("{name}.relu1"), a);
        let b = s.conv2d(format!("{name}.conv2"), a, c, 3, 1, 1, 1, true);
        s.activation(format!("{name}.relu2"), b)
    };
    let mut skips = Vec::new();
    for level in 0..4 {
        if level > 0 {
            let (c, hh, ww) = s.chw(x);
            x = s.op(format!("down{level}.pool"), &[x], &[c, hh / 2, ww / 2], 0, (c * hh * ww) as u64);
        }
        x = double_conv(&mut s, x, base << level, &format!("enc{level}"));
        skips.push(x);
    }
    for level in (0..3).rev() {
        let c = base << level;
        let up = s.conv_transpose2d(format!("dec{level}.up"), x, c, 2, 2, true);
        let skip = skips[level];
        let (_, hh, ww) = s.chw(up);
        let cat = s.op_saving(format!("dec{level}.concat"), &[skip, up], &[2 * c, hh, ww], 0, 0, Saves::Nothing);
        x = double_conv(&mut s, cat, c, &format!("dec{level}"));
    }
    let x = s.conv2d("head", x, classes, 1, 1, 0, 1, true);
    let out = s.elementwise("head.sigmoid", &[x], 1, Saves::Output);
    s.set_output(out);
    Ok(s)
}

/// Parameter count of `cfg` with its per-layer breakdown (layers without
/// parameters omitted). Independent of the input resolution.
pub fn count_params(cfg: &ModelConfig) -> Result<(u64, Vec<(String, u64)>)> {
    let side = cfg.patch_size;
    let s = model_schedule(cfg, side, side, side, side)?;
    let per: Vec<(String, u64)> = s
        .nodes
        .iter()
        .filter(|n| n.params > 0)
        .map(|n| (n.name.clone(), n.params))
        .collect();
    Ok((s.params(), per))
}

pub fn estimate_flops(cfg: &ModelConfig, h: usize, w: usize, batch: usize) -> Result<(u64, Vec<LayerCost>)> {
    let r = model_schedule(cfg, h, w, h, w)?.report(h, w, batch, 4, Mode::Inference);
    Ok((r.flops, r.per_layer))
}

pub fn estimate_peak_memory(
    cfg: &ModelConfig,
    h: usize,
    w: usize,
    batch: usize,
    element_bytes: usize,
    mode: Mode,
) -> Result<u64> {
    Ok(cost_report(cfg, h, w, batch, element_bytes, mode)?.peak_activation_bytes)
}

pub fn cost_report(cfg: &ModelConfig, h: usize, w: usize, batch: usize, element_bytes: usize, mode: Mode) -> Result<CostReport> {
    if batch == 0 || element_bytes == 0 {
        return Err(Error::Config("batch and element_bytes must be positive".into()));
    }
    Ok(model_schedule(cfg, h, w, h, w)?.report(h, w, batch, element_bytes, mode))
}

/// Total FLOPs of the encoder's attention cores at input `h × w`.
pub fn encoder_attention_flops(cfg: &ModelConfig, h: usize, w: usize, softmax: bool) -> u64 {
    let (_, _, n) = cfg.grid(h, w);
    let (n, d, c) = (n as u64, cfg.d as u64, cfg.c1 as u64);
    let per = if softmax {
        softmax_attention_flops(n, n, d, c)
    } else {
        dgla_attention_flops(n, d, c)
    };
    per * cfg.n_dgla() as u64
}

const GB: f64 = 1e9;

impl CostReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mode = match self.mode {
            Mode::Inference => "inference",
            Mode::Training => "training",
        };
        let _ = writeln!(s, "input        {}x{}  batch {}  {} bytes/elem  {mode}", self.height, self.width, self.batch, self.element_bytes);
        let _ = writeln!(s, "params       {} ({:.3} M)", self.params, self.params as f64 / 1e6);
        let _ = writeln!(s, "flops        {} ({:.3} G)", self.flops, self.flops as f64 / 1e9);
        let _ = writeln!(s, "peak memory  {} bytes ({:.3} GB)", self.peak_activation_bytes, self.peak_activation_bytes as f64 / GB);
        let _ = writeln!(
            s,
            "  activations {:.3} GB, params {:.3} GB, grads {:.3} GB",
            self.peak_live_activation_bytes as f64 / GB,
            self.param_bytes as f64 / GB,
            self.grad_bytes as f64 / GB
        );
        let width = self.per_layer.iter().map(|l| l.name.len()).max().unwrap_or(5).max(5);
        let _ = writeln!(s, "{:<width$}  {:>10}  {:>16}  {:>14}", "layer", "params", "flops", "out_bytes");
        for l in &self.per_layer {
            let _ = writeln!(s, "{:<width$}  {:>10}  {:>16}  {:>14}", l.name, l.params, l.flops, l.out_bytes);
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,params,flops,out_bytes\n");
        for l in &self.per_layer {
            let _ = writeln!(s, "{},{},{},{}", l.name, l.params, l.flops, l.out_bytes);
        }
        s
    }
}

/// Reference figures for the default configuration at 1024², batch 16,
/// training: parameters, FLOPs per image, and memory.
pub const REFERENCE_PARAMS: f64 = 3.53e6;
pub const REFERENCE_FLOPS: f64 = 9.39e9;
pub const REFERENCE_MEMORY_BYTES: f64 = 0.59e9;

/// Ratio of an estimate to a reference figure and whether both share an
/// order of magnitude (ratio within a factor of ten).
pub fn anchor_ratio(estimate: f64, reference: f64) -> (f64, bool) {
    let r = estimate / reference;
    (r, (0.1..=10.0).contains(&r))
}

/// Side-by-side comparison against the reference figures. `flops` should be
/// the per-image count.
pub fn anchor_text(report: &CostReport, flops_per_image: u64) -> String {
    let mut s = String::new();
    let rows = [
        ("params", report.params as f64, REFERENCE_PARAMS, "M", 1e6),
        ("flops/img", flops_per_image as f64, REFERENCE_FLOPS, "G", 1e9),
        ("memory", report.peak_activation_bytes as f64, REFERENCE_MEMORY_BYTES, "GB", 1e9),
    ];
    let _ = writeln!(s, "{:<10} {:>12} {:>12} {:>8}  same order", "quantity", "estimate", "reference", "ratio");
    for (name, est, reference, unit, scale) in rows {
        let (ratio, ok) = anchor_ratio(est, reference);
        let _ = writeln!(
            s,
            "{name:<10} {:>10.3}{unit:<2} {:>10.3}{unit:<2} {ratio:>8.3}  {}",
            est / scale,
            reference / scale,
            if ok { "yes" } else { "no" }
        );
    }
    s.push_str(
        "note: the reference figures depend on hyperparameters that are not published \
         (attention width d, heads, decoder widths, allocator and precision settings); \
         the gap above is reported, not tuned away.\n",
    );
    s
}

#[derive(Debug, Clone)]
pub struct ScalingRow {
    pub side: usize,
    pub tokens: usize,
    pub model: CostReport,
    pub unet: CostReport,
    pub dgla_attention_flops: u64,
    pub softmax_attention_flops: u64,
}

#[derive(Debug, Clone)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
}

/// Cost reports at each square resolution, with the U-shape reference at
/// the same base width and the encoder attention FLOPs of both kernels.
pub fn scaling_report(cfg: &ModelConfig, sides: &[usize], batch: usize, mode: Mode) -> Result<ScalingReport> {
    let mut rows = Vec::new();
    for &side in sides {
        let model = cost_report(cfg, side, side, batch, 4, mode)?;
        let unet = unet_schedule(cfg.c1, cfg.c2, side, side)?.report(side, side, batch, 4, mode);
        rows.push(ScalingRow {
            side,
            tokens: cfg.grid(side, side).2,
            model,
            unet,
            dgla_attention_flops: encoder_attention_flops(cfg, side, side, false),
            softmax_attention_flops: encoder_attention_flops(cfg, side, side, true),
        });
    }
    Ok(ScalingReport { rows })
}

impl ScalingReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:>6} {:>7} {:>12} {:>12} {:>12} {:>12} {:>8} {:>10} {:>10}",
            "side", "tokens", "flops", "peak_bytes", "unet_peak", "dgla_attn", "ratio", "softmax", "ratio"
        );
        let mut prev: Option<&ScalingRow> = None;
        for r in &self.rows {
            let ratio = |a: u64, b: Option<u64>| b.map_or("-".to_string(), |b| format!("{:.3}", a as f64 / b as f64));
            let _ = writeln!(
                s,
                "{:>6} {:>7} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>8} {:>10.4e} {:>10}",
                r.side,
                r.tokens,
                r.model.flops as f64,
                r.model.peak_activation_bytes as f64,
                r.unet.peak_activation_bytes as f64,
                r.dgla_attention_flops as f64,
                ratio(r.dgla_attention_flops, prev.map(|p| p.dgla_attention_flops)),
                r.softmax_attention_flops as f64,
                ratio(r.softmax_attention_flops, prev.map(|p| p.softmax_attention_flops)),
            );
            prev = Some(r);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_conv() {
        let mut s = Schedule::new();
        let x = s.input("x", &[16, 8, 8]);
        s.conv2d("c", x, 32, 3, 1, 1, 1, true);
        assert_eq!(s.params(), 4640);
        assert_eq!(s.flops(1), 589_824);
    }

    #[test]
    fn single_conv_memory() {
        let mut s = Schedule::new();
        let x = s.input("x", &[3, 8, 8]);
        let y = s.conv2d("c", x, 4, 3, 1, 1, 1, true);
        s.set_output(y);
        let r = s.report(8, 8, 1, 4, Mode::Inference);
        assert_eq!(r.peak_activation_bytes, (192 + 256 + 112) * 4);
        let r2 = s.report(8, 8, 2, 4, Mode::Inference);
        assert_eq!(r2.peak_live_activation_bytes, 2 * r.peak_live_activation_bytes);
        assert_eq!(r2.param_bytes, r.param_bytes);
    }

    #[test]
    fn depthwise_is_dense_over_channels() {
        let mut s = Schedule::new();
        let x = s.input("x", &[24, 8, 8]);
        s.conv2d("dense", x, 24, 3, 1, 1, 1, false);
        let dense = s.flops(1);
        let mut s = Schedule::new();
        let x = s.input("x", &[24, 8, 8]);
        s.conv2d("dw", x, 24, 3, 1, 1, 24, false);
        assert_eq!(s.flops(1) * 24, dense);
    }

    #[test]
    fn totals_are_sums() {
        let r = cost_report(&ModelConfig::toy(), 64, 64, 2, 4, Mode::Training).unwrap();
        assert_eq!(r.params, r.per_layer.iter().map(|l| l.params).sum::<u64>());
        assert_eq!(r.flops, r.per_layer.iter().map(|l| l.flops).sum::<u64>());
    }
}
