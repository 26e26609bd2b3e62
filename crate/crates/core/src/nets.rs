//! Task encoder φ, tool encoder ψ, tool decoder ψ′ and success classifier σ;
//! reconstruction and task losses; two-phase training and checkpoints.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::distributions::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::Rng;
use revgrad::{grad_check, Adam, AdamConfig, GradCheckReport, Graph, Real, Tensor, Var, DEFAULT_STEP, PROB_EPS};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Raster;
use crate::scenegen::Instance;
use crate::seeds::derived_rng;

pub const TASK_CHANNELS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    pub resolution: usize,
    /// Output channels of each encoder block (stride-1 conv, then stride-2 conv).
    pub encoder_channels: Vec<usize>,
    pub kernel: usize,
    pub padding: usize,
    pub d_g: usize,
    pub d_t: usize,
    pub classifier_hidden: Vec<usize>,
    /// Hidden widths of the decoder MLP; its output is `resolution²`.
    pub decoder_hidden: Vec<usize>,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            resolution: 64,
            encoder_channels: vec![8, 16, 32, 64],
            kernel: 5,
            padding: 2,
            d_g: 64,
            d_t: 64,
            classifier_hidden: vec![128, 64],
            decoder_hidden: vec![256, 1024],
        }
    }
}

impl ArchConfig {
    pub fn paper_scale() -> Self {
        Self {
            resolution: 128,
            encoder_channels: vec![16, 32, 64, 64, 128],
            d_g: 256,
            d_t: 512,
            classifier_hidden: vec![1024, 512],
            decoder_hidden: vec![1024, 4096],
            ..Self::default()
        }
    }

    /// 8×8 network with every component present, small enough for
    /// exhaustive finite differences.
    pub fn miniature() -> Self {
        Self {
            resolution: 8,
            encoder_channels: vec![2, 3],
            kernel: 3,
            padding: 1,
            d_g: 3,
            d_t: 2,
            classifier_hidden: vec![4, 3],
            decoder_hidden: vec![5],
        }
    }

    /// Spatial side left after the strided blocks; also the kernel of the
    /// final embedding convolution.
    pub fn final_side(&self) -> usize {
        self.resolution >> self.encoder_channels.len()
    }

    pub fn classifier_input(&self) -> usize {
        self.d_g + self.d_t
    }

    pub fn validate(&self) -> Result<()> {
        let blocks = self.encoder_channels.len();
        if blocks == 0 || self.encoder_channels.contains(&0) {
            return Err(Error::Config("encoder needs at least one non-empty block".into()));
        }
        if self.resolution == 0 || self.resolution % (1 << blocks) != 0 {
            return Err(Error::Config(format!(
                "resolution {} is not divisible by 2^{blocks}",
                self.resolution
            )));
        }
        if self.kernel == 0 || self.kernel % 2 == 0 || self.padding * 2 + 1 != self.kernel {
            return Err(Error::Config(format!(
                "kernel {} with padding {} does not preserve size",
                self.kernel, self.padding
            )));
        }
        if self.d_g == 0 || self.d_t == 0 || self.classifier_hidden.contains(&0) || self.decoder_hidden.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Group {
    TaskEncoder,
    ToolEncoder,
    ToolDecoder,
    Classifier,
}

impl Group {
    pub const ALL: [Group; 4] = [Group::TaskEncoder, Group::ToolEncoder, Group::ToolDecoder, Group::Classifier];

    fn prefix(self) -> &'static str {
        match self {
            Group::TaskEncoder => "task_enc",
            Group::ToolEncoder => "tool_enc",
            Group::ToolDecoder => "tool_dec",
            Group::Classifier => "classifier",
        }
    }
}

/// How far a parameter set has been trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Initialized = 0,
    Pretrained = 1,
    TaskTrained = 2,
}

impl Phase {
    fn from_byte(b: u8) -> Option<Phase> {
        match b {
            0 => Some(Phase::Initialized),
            1 => Some(Phase::Pretrained),
            2 => Some(Phase::TaskTrained),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ConvLayer {
    w: usize,
    b: usize,
    stride: usize,
    padding: usize,
    activate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct DenseLayer {
    w: usize,
    b: usize,
}

/// Parameter indices of each component, in declaration order.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Layout {
    task_enc: Vec<ConvLayer>,
    tool_enc: Vec<ConvLayer>,
    decoder: Vec<DenseLayer>,
    classifier: Vec<DenseLayer>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub group: Group,
    pub value: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub arch: ArchConfig,
    pub params: Vec<Param<T>>,
    pub phase: Phase,
    /// Optimizer steps taken across both phases.
    pub step: u64,
    layout: Layout,
}

struct Declared {
    name: String,
    group: Group,
    shape: Vec<usize>,
    fan_in: usize,
    /// Whether an ELU follows this weight; sets the Kaiming gain.
    activated: bool,
}

fn declare(arch: &ArchConfig) -> (Vec<Declared>, Layout) {
    let mut decl = Vec::new();
    let mut push = |group: Group, name: String, shape: Vec<usize>, fan_in: usize, activated: bool| {
        decl.push(Declared {
            name: format!("{}.{name}", group.prefix()),
            group,
            shape,
            fan_in,
            activated,
        });
        decl.len() - 1
    };
    let k = arch.kernel;
    let mut encoder = |group: Group, in_ch: usize, out: usize, final_act: bool| {
        let mut layers = Vec::new();
        let mut c = in_ch;
        for (i, &ch) in arch.encoder_channels.iter().enumerate() {
            for (j, (stride, from)) in [(1, c), (2, ch)].into_iter().enumerate() {
                let w = push(group, format!("block{i}.conv{j}.w"), vec![ch, from, k, k], from * k * k, true);
                let b = push(group, format!("block{i}.conv{j}.b"), vec![ch], 0, true);
                layers.push(ConvLayer {
                    w,
                    b,
                    stride,
                    padding: arch.padding,
                    activate: true,
                });
            }
            c = ch;
        }
        let side = arch.final_side();
        let w = push(group, "embed.w".into(), vec![out, c, side, side], c * side * side, final_act);
        let b = push(group, "embed.b".into(), vec![out], 0, final_act);
        layers.push(ConvLayer {
            w,
            b,
            stride: 1,
            padding: 0,
            activate: final_act,
        });
        layers
    };
    let task_enc = encoder(Group::TaskEncoder, TASK_CHANNELS, arch.d_g, true);
    // the tool latent stays linear so traversal is unconstrained
    let tool_enc = encoder(Group::ToolEncoder, 1, arch.d_t, false);
    let mut dense = |group: Group, sizes: Vec<usize>| {
        let last = sizes.len() - 2;
        sizes
            .windows(2)
            .enumerate()
            .map(|(i, io)| DenseLayer {
                w: push(group, format!("fc{i}.w"), vec![io[1], io[0]], io[0], i < last),
                b: push(group, format!("fc{i}.b"), vec![io[1]], 0, i < last),
            })
            .collect::<Vec<_>>()
    };
    let mut dec_sizes = vec![arch.d_t];
    dec_sizes.extend(&arch.decoder_hidden);
    dec_sizes.push(arch.resolution * arch.resolution);
    let decoder = dense(Group::ToolDecoder, dec_sizes);
    let mut cls_sizes = vec![arch.classifier_input()];
    cls_sizes.extend(&arch.classifier_hidden);
    cls_sizes.push(2);
    let classifier = dense(Group::Classifier, cls_sizes);
    (
        decl,
        Layout {
            task_enc,
            tool_enc,
            decoder,
            classifier,
        },
    )
}

impl<T: Real> ModelParams<T> {
    /// All-zero parameters with the declared names and shapes.
    pub fn zeros(arch: &ArchConfig) -> Result<Self> {
        arch.validate()?;
        let (decl, layout) = declare(arch);
        let params = decl
            .into_iter()
            .map(|d| Param {
                name: d.name,
                group: d.group,
                value: Tensor::zeros(d.shape),
            })
            .collect();
        Ok(Self {
            arch: arch.clone(),
            params,
            phase: Phase::Initialized,
            step: 0,
            layout,
        })
    }

    /// Kaiming-uniform weights, zero biases. The bound is `sqrt(6 / fan_in)`
    /// before an ELU and `sqrt(3 / fan_in)` (unit gain) for linear outputs.
    pub fn init<R: Rng + ?Sized>(arch: &ArchConfig, rng: &mut R) -> Result<Self> {
        let mut params = Self::zeros(arch)?;
        let (decl, _) = declare(arch);
        for (p, d) in params.params.iter_mut().zip(decl) {
            if d.fan_in > 0 {
                let gain2 = if d.activated { 2.0 } else { 1.0 };
                let bound = (3.0 * gain2 / d.fan_in as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound);
                p.value.data_mut().iter_mut().for_each(|v| *v = T::of(dist.sample(rng)));
            }
        }
        Ok(params)
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            arch: self.arch.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    group: p.group,
                    value: p.value.cast(),
                })
                .collect(),
            phase: self.phase,
            step: self.step,
            layout: self.layout.clone(),
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn group_indices(&self, group: Group) -> Vec<usize> {
        (0..self.params.len()).filter(|&i| self.params[i].group == group).collect()
    }

    /// Flattened values of the given groups, in declaration order.
    pub fn flatten(&self, groups: &[Group]) -> Vec<T> {
        self.params
            .iter()
            .filter(|p| groups.contains(&p.group))
            .flat_map(|p| p.value.data().iter().copied())
            .collect()
    }

    pub fn set_flat(&mut self, groups: &[Group], flat: &[T]) -> Result<()> {
        let mut at = 0;
        for p in self.params.iter_mut().filter(|p| groups.contains(&p.group)) {
            let n = p.value.numel();
            let src = flat
                .get(at..at + n)
                .ok_or_else(|| Error::Shape(format!("flat vector too short for {}", p.name)))?;
            p.value.data_mut().copy_from_slice(src);
            at += n;
        }
        if at != flat.len() {
            return Err(Error::Shape(format!("flat vector has {} values, need {at}", flat.len())));
        }
        Ok(())
    }
}

/// Graph variables for the parameters of the bound groups.
pub struct Bound {
    vars: Vec<Option<Var>>,
}

impl Bound {
    fn var(&self, i: usize) -> Var {
        self.vars[i].expect("parameter group was bound")
    }

    pub fn get(&self, i: usize) -> Option<Var> {
        self.vars[i]
    }
}

/// Insert the parameters of `groups` into `g`. Groups listed in `trainable`
/// become gradient-receiving leaves, the rest constants.
pub fn bind<T: Real>(g: &mut Graph<T>, params: &ModelParams<T>, groups: &[Group], trainable: &[Group]) -> Bound {
    let vars = params
        .params
        .iter()
        .map(|p| {
            if !groups.contains(&p.group) {
                None
            } else if trainable.contains(&p.group) {
                Some(g.param(p.value.clone()))
            } else {
                Some(g.constant(p.value.clone()))
            }
        })
        .collect();
    Bound { vars }
}

fn encode<T: Real>(g: &mut Graph<T>, b: &Bound, layers: &[ConvLayer], x: Var) -> Result<Var> {
    let mut h = x;
    for l in layers {
        h = g.conv2d(h, b.var(l.w), b.var(l.b), l.stride, l.padding)?;
        if l.activate {
            h = g.elu(h);
        }
    }
    let n = g.value(h).shape()[0];
    let d = g.value(h).shape()[1];
    Ok(g.reshape(h, vec![n, d])?)
}

fn mlp<T: Real>(g: &mut Graph<T>, b: &Bound, layers: &[DenseLayer], x: Var) -> Result<Var> {
    let mut h = x;
    for (i, l) in layers.iter().enumerate() {
        h = g.linear(h, b.var(l.w), b.var(l.b))?;
        if i + 1 < layers.len() {
            h = g.elu(h);
        }
    }
    Ok(h)
}

impl<T: Real> ModelParams<T> {
    /// `[N, 3, R, R]` task images to `[N, d_G]`.
    pub fn task_encoder(&self, g: &mut Graph<T>, b: &Bound, x: Var) -> Result<Var> {
        encode(g, b, &self.layout.task_enc, x)
    }

    /// `[N, 1, R, R]` silhouettes to `[N, d_T]`.
    pub fn tool_encoder(&self, g: &mut Graph<T>, b: &Bound, x: Var) -> Result<Var> {
        encode(g, b, &self.layout.tool_enc, x)
    }

    /// `[N, d_T]` latents to `[N, R²]` occupancy probabilities.
    pub fn tool_decoder(&self, g: &mut Graph<T>, b: &Bound, z: Var) -> Result<Var> {
        let logits = mlp(g, b, &self.layout.decoder, z)?;
        Ok(g.sigmoid(logits))
    }

    /// `[N, d_G]`, `[N, d_T]` to `[N, 2]` logits over (infeasible, feasible).
    pub fn classifier_logits(&self, g: &mut Graph<T>, b: &Bound, z_g: Var, z_t: Var) -> Result<Var> {
        let h_cat = g.concat(&[z_g, z_t])?;
        debug_assert_eq!(g.value(h_cat).shape()[1], self.arch.classifier_input());
        mlp(g, b, &self.layout.classifier, h_cat)
    }
}

fn check_raster(r: &Raster, channels: usize, res: usize) -> Result<()> {
    if r.channels != channels || r.width != res || r.height != res {
        return Err(Error::Shape(format!(
            "expected {channels}x{res}x{res} raster, got {}x{}x{}",
            r.channels, r.height, r.width
        )));
    }
    Ok(())
}

fn stack<T: Real>(rasters: &[&Raster], channels: usize, res: usize) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(rasters.len() * channels * res * res);
    for r in rasters {
        check_raster(r, channels, res)?;
        data.extend(r.data().iter().map(|&v| T::of(v as f64)));
    }
    Ok(Tensor::new(vec![rasters.len(), channels, res, res], data)?)
}

const INFERENCE_BATCH: usize = 32;

impl<T: Real> ModelParams<T> {
    fn encode_many(&self, group: Group, rasters: &[&Raster]) -> Result<Vec<Vec<T>>> {
        let (channels, d) = match group {
            Group::TaskEncoder => (TASK_CHANNELS, self.arch.d_g),
            Group::ToolEncoder => (1, self.arch.d_t),
            _ => unreachable!("only encoders take rasters"),
        };
        let mut out = Vec::with_capacity(rasters.len());
        for chunk in rasters.chunks(INFERENCE_BATCH) {
            let mut g = Graph::new();
            let b = bind(&mut g, self, &[group], &[]);
            let x = g.constant(stack(chunk, channels, self.arch.resolution)?);
            let z = match group {
                Group::TaskEncoder => self.task_encoder(&mut g, &b, x)?,
                _ => self.tool_encoder(&mut g, &b, x)?,
            };
            out.extend(g.value(z).data().chunks_exact(d).map(<[T]>::to_vec));
        }
        Ok(out)
    }

    pub fn tool_encode_batch(&self, tools: &[&Raster]) -> Result<Vec<Vec<T>>> {
        self.encode_many(Group::ToolEncoder, tools)
    }

    pub fn task_encode_batch(&self, tasks: &[&Raster]) -> Result<Vec<Vec<T>>> {
        self.encode_many(Group::TaskEncoder, tasks)
    }

    /// Latent `z_T` of a single-channel silhouette.
    pub fn tool_encode(&self, tool: &Raster) -> Result<Vec<T>> {
        Ok(self.tool_encode_batch(&[tool])?.remove(0))
    }

    /// Embedding `z_G` of a three-channel task image.
    pub fn task_encode(&self, task: &Raster) -> Result<Vec<T>> {
        Ok(self.task_encode_batch(&[task])?.remove(0))
    }

    /// Occupancy probabilities decoded from `z_T`, as a silhouette raster.
    pub fn tool_decode(&self, z_t: &[T]) -> Result<Raster> {
        if z_t.len() != self.arch.d_t {
            return Err(Error::Shape(format!("z_T has {} values, need {}", z_t.len(), self.arch.d_t)));
        }
        let mut g = Graph::new();
        let b = bind(&mut g, self, &[Group::ToolDecoder], &[]);
        let z = g.constant(Tensor::new(vec![1, z_t.len()], z_t.to_vec())?);
        let p = self.tool_decoder(&mut g, &b, z)?;
        let res = self.arch.resolution;
        let data = g.value(p).data().iter().map(|v| v.as_f64() as f32).collect();
        Raster::from_data(1, res, res, data)
    }

    /// Both softmax outputs for each `(z_G, z_T)` pair.
    pub fn class_probs(&self, z_g: &[Vec<T>], z_t: &[Vec<T>]) -> Result<Vec<[f64; 2]>> {
        if z_g.len() != z_t.len() {
            return Err(Error::Shape(format!("{} task vs {} tool embeddings", z_g.len(), z_t.len())));
        }
        let mut out = Vec::with_capacity(z_g.len());
        for (cg, ct) in z_g.chunks(256).zip(z_t.chunks(256)) {
            let mut g = Graph::new();
            let b = bind(&mut g, self, &[Group::Classifier], &[]);
            let zg = g.constant(rows(cg, self.arch.d_g)?);
            let zt = g.constant(rows(ct, self.arch.d_t)?);
            let logits = self.classifier_logits(&mut g, &b, zg, zt)?;
            let p = g.softmax(logits)?;
            out.extend(g.value(p).data().chunks_exact(2).map(|c| [c[0].as_f64(), c[1].as_f64()]));
        }
        Ok(out)
    }

    /// Success probability σ(h_cat): the class-1 softmax output.
    pub fn classify(&self, z_g: &[T], z_t: &[T]) -> Result<f64> {
        Ok(self.class_probs(&[z_g.to_vec()], &[z_t.to_vec()])?[0][1])
    }

    /// Success probabilities for task/tool image pairs.
    pub fn predict(&self, tasks: &[&Raster], tools: &[&Raster]) -> Result<Vec<f64>> {
        let zg = self.task_encode_batch(tasks)?;
        let zt = self.tool_encode_batch(tools)?;
        Ok(self.class_probs(&zg, &zt)?.into_iter().map(|p| p[1]).collect())
    }
}

fn rows<T: Real>(vs: &[Vec<T>], d: usize) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(vs.len() * d);
    for v in vs {
        if v.len() != d {
            return Err(Error::Shape(format!("embedding of {} values, need {d}", v.len())));
        }
        data.extend_from_slice(v);
    }
    Ok(Tensor::new(vec![vs.len(), d], data)?)
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Binary cross-entropy of a success probability against a label, with the
/// probability clamped away from 0 and 1.
pub fn task_loss(prob: f64, label: u8) -> f64 {
    let p = clamp_prob(prob);
    if label == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Mean per-pixel clamped BCE between a decoded silhouette and its target,
/// plus `mu` times the total variation of the decoded image (summed absolute
/// neighbour differences over the pixel count).
pub fn recon_loss(decoded: &Raster, target: &Raster, mu: f64) -> Result<f64> {
    if (decoded.channels, decoded.height, decoded.width) != (target.channels, target.height, target.width) {
        return Err(Error::Shape("decoded and target silhouettes differ in shape".into()));
    }
    let n = decoded.data().len() as f64;
    let bce: f64 = decoded
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let (p, t) = (clamp_prob(p as f64), t as f64);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / n;
    if mu == 0.0 {
        return Ok(bce);
    }
    let (h, w) = (decoded.height, decoded.width);
    let mut tv = 0.0;
    for c in 0..decoded.channels {
        for r in 0..h {
            for col in 0..w {
                let v = decoded.get(c, r, col) as f64;
                if col + 1 < w {
                    tv += (decoded.get(c, r, col + 1) as f64 - v).abs();
                }
                if r + 1 < h {
                    tv += (decoded.get(c, r + 1, col) as f64 - v).abs();
                }
            }
        }
    }
    Ok(bce + mu * tv / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    TaskDriven,
    TaskUnaware,
}

impl Mode {
    pub const ALL: [Mode; 2] = [Mode::TaskDriven, Mode::TaskUnaware];

    pub fn name(self) -> &'static str {
        match self {
            Mode::TaskDriven => "task-driven",
            Mode::TaskUnaware => "task-unaware",
        }
    }

    /// Groups updated in the task phase.
    pub fn trainable(self) -> &'static [Group] {
        match self {
            Mode::TaskDriven => &Group::ALL,
            Mode::TaskUnaware => &[Group::TaskEncoder, Group::Classifier],
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "task-driven" | "task_driven" => Ok(Mode::TaskDriven),
            "task-unaware" | "task_unaware" => Ok(Mode::TaskUnaware),
            _ => Err(Error::Config(format!("unknown mode {s:?}"))),
        }
    }
}

/// In-memory training examples, flattened to network input layout.
#[derive(Debug, Clone)]
pub struct Examples {
    pub resolution: usize,
    pub tasks: Vec<f32>,
    pub tools: Vec<f32>,
    pub labels: Vec<usize>,
}

impl Examples {
    pub fn from_instances(instances: &[Instance], resolution: usize) -> Result<Self> {
        let plane = resolution * resolution;
        let mut ex = Examples {
            resolution,
            tasks: Vec::with_capacity(instances.len() * TASK_CHANNELS * plane),
            tools: Vec::with_capacity(instances.len() * plane),
            labels: Vec::with_capacity(instances.len()),
        };
        for inst in instances {
            check_raster(&inst.task_raster, TASK_CHANNELS, resolution)?;
            check_raster(&inst.tool_raster, 1, resolution)?;
            ex.tasks.extend_from_slice(inst.task_raster.data());
            ex.tools.extend_from_slice(inst.tool_raster.data());
            ex.labels.push(inst.record.label as usize);
        }
        Ok(ex)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn plane(&self) -> usize {
        self.resolution * self.resolution
    }

    pub fn batch<T: Real>(&self, idx: &[usize]) -> Result<Batch<T>> {
        let (plane, r) = (self.plane(), self.resolution);
        let gather = |src: &[f32], per: usize| -> Vec<T> {
            idx.iter()
                .flat_map(|&i| src[i * per..][..per].iter().map(|&v| T::of(v as f64)))
                .collect()
        };
        Ok(Batch {
            tasks: Tensor::new(vec![idx.len(), TASK_CHANNELS, r, r], gather(&self.tasks, TASK_CHANNELS * plane))?,
            tools: Tensor::new(vec![idx.len(), 1, r, r], gather(&self.tools, plane))?,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub tasks: Tensor<T>,
    pub tools: Tensor<T>,
    pub labels: Vec<usize>,
}

/// Loss terms of one batch, each a mean over the batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub recon: f64,
    pub task: f64,
    pub total: f64,
}

struct LossGraph<T> {
    g: Graph<T>,
    bound: Bound,
    recon: Option<Var>,
    task: Option<Var>,
    total: Var,
}

#[derive(Debug, Clone, Copy)]
struct LossPlan<'a> {
    recon: bool,
    task: bool,
    mode: Mode,
    mu: f64,
    trainable: &'a [Group],
}

/// Builds L = L_recon + L_task for a batch. In task-unaware mode the tool
/// latent reaches the classifier through a stop-gradient.
fn loss_graph<T: Real>(
    params: &ModelParams<T>,
    batch: &Batch<T>,
    plan: LossPlan<'_>,
    cached_zt: Option<Tensor<T>>,
) -> Result<LossGraph<T>> {
    let mut g = Graph::new();
    let mut groups = vec![];
    if plan.recon || cached_zt.is_none() {
        groups.extend([Group::ToolEncoder]);
    }
    if plan.recon {
        groups.push(Group::ToolDecoder);
    }
    if plan.task {
        groups.extend([Group::TaskEncoder, Group::Classifier]);
    }
    let bound = bind(&mut g, params, &groups, plan.trainable);
    let n = batch.labels.len();
    let res = params.arch.resolution;

    let z_t = match (&cached_zt, plan.recon) {
        (Some(_), false) => None,
        _ => {
            let x = g.constant(batch.tools.clone());
            Some(params.tool_encoder(&mut g, &bound, x)?)
        }
    };
    let recon = if plan.recon {
        let z = z_t.expect("tool latent computed for reconstruction");
        let decoded = params.tool_decoder(&mut g, &bound, z)?;
        let target = batch.tools.clone().reshaped(vec![n, res * res])?;
        let bce = g.bce(decoded, &target)?;
        let mut l = g.mean(bce);
        if plan.mu != 0.0 {
            let img = g.reshape(decoded, vec![n, 1, res, res])?;
            let tv = g.total_variation(img)?;
            let tv = g.mean(tv);
            let tv = g.scale(tv, T::of(plan.mu));
            l = g.add(l, tv)?;
        }
        Some(l)
    } else {
        None
    };
    let task = if plan.task {
        let zt_cls = match (cached_zt, plan.mode) {
            (Some(c), _) => g.constant(c),
            (None, Mode::TaskDriven) => z_t.expect("tool latent"),
            (None, Mode::TaskUnaware) => {
                let v = g.value(z_t.expect("tool latent")).clone();
                g.constant(v)
            }
        };
        let x = g.constant(batch.tasks.clone());
        let z_g = params.task_encoder(&mut g, &bound, x)?;
        let logits = params.classifier_logits(&mut g, &bound, z_g, zt_cls)?;
        let xent = g.softmax_xent(logits, &batch.labels)?;
        Some(g.mean(xent))
    } else {
        None
    };
    let total = match (recon, task) {
        (Some(r), Some(t)) => g.add(r, t)?,
        (Some(r), None) => r,
        (None, Some(t)) => t,
        (None, None) => return Err(Error::Config("loss with no terms".into())),
    };
    Ok(LossGraph {
        g,
        bound,
        recon,
        task,
        total,
    })
}

/// L = L_recon + L_task on a batch (no parameter update).
pub fn total_loss<T: Real>(params: &ModelParams<T>, batch: &Batch<T>, mode: Mode, mu: f64) -> Result<LossBreakdown> {
    let lg = loss_graph(
        params,
        batch,
        LossPlan {
            recon: true,
            task: true,
            mode,
            mu,
            trainable: &[],
        },
        None,
    )?;
    let v = |x: Option<Var>| x.map_or(0.0, |x| lg.g.value(x).item().as_f64());
    Ok(LossBreakdown {
        recon: v(lg.recon),
        task: v(lg.task),
        total: lg.g.value(lg.total).item().as_f64(),
    })
}

/// Gradient of L_task alone with respect to every parameter, flattened in
/// declaration order.
pub fn task_loss_gradient<T: Real>(params: &ModelParams<T>, batch: &Batch<T>, mode: Mode) -> Result<(f64, Vec<T>)> {
    loss_gradient(params, batch, mode, false, 0.0)
}

/// Gradient of the full loss (reconstruction included when `recon`).
pub fn loss_gradient<T: Real>(
    params: &ModelParams<T>,
    batch: &Batch<T>,
    mode: Mode,
    recon: bool,
    mu: f64,
) -> Result<(f64, Vec<T>)> {
    let mut lg = loss_graph(
        params,
        batch,
        LossPlan {
            recon,
            task: true,
            mode,
            mu,
            trainable: &Group::ALL,
        },
        None,
    )?;
    lg.g.backward(lg.total)?;
    let value = lg.g.value(lg.total).item().as_f64();
    let mut grad = Vec::with_capacity(params.num_parameters());
    for (i, p) in params.params.iter().enumerate() {
        match lg.bound.get(i) {
            Some(v) => grad.extend(lg.g.take_grad(v)),
            None => grad.extend(std::iter::repeat(T::zero()).take(p.value.numel())),
        }
    }
    Ok((value, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub pretrain_steps: usize,
    pub task_steps: usize,
    /// Weight of the smoothness term in L_recon.
    pub mu: f64,
    /// Validation and checkpoint cadence in task-phase steps.
    pub validate_every: usize,
    pub seed: u64,
    /// Progress log cadence in steps; 0 disables.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch: 16,
            pretrain_steps: 10_000,
            task_steps: 5_000,
            mu: 0.0,
            validate_every: 100,
            seed: 0,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self {
            pretrain_steps: 2_000,
            task_steps: 1_000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.batch == 0 || self.mu < 0.0 || self.validate_every == 0 {
            return Err(Error::Config(format!("invalid training config {self:?}")));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}

/// Seed-determined stream of minibatch indices, reshuffled every epoch.
struct Sampler<R> {
    order: Vec<usize>,
    at: usize,
    rng: R,
}

impl<R: Rng> Sampler<R> {
    fn new(n: usize, rng: R) -> Self {
        Self {
            order: (0..n).collect(),
            at: n,
            rng,
        }
    }

    fn next(&mut self, size: usize) -> Vec<usize> {
        (0..size)
            .map(|_| {
                if self.at == self.order.len() {
                    self.order.shuffle(&mut self.rng);
                    self.at = 0;
                }
                self.at += 1;
                self.order[self.at - 1]
            })
            .collect()
    }
}

fn adam_update<T: Real>(
    params: &mut ModelParams<T>,
    opt: &mut Adam<T>,
    lg: &mut LossGraph<T>,
    trainable: &[Group],
) -> Result<()> {
    let idx: Vec<usize> = (0..params.params.len())
        .filter(|&i| trainable.contains(&params.params[i].group))
        .collect();
    let grads: Vec<Vec<T>> = idx.iter().map(|&i| lg.g.take_grad(lg.bound.var(i))).collect();
    let grad_refs: Vec<&[T]> = grads.iter().map(Vec::as_slice).collect();
    let mut slices: Vec<&mut [T]> = params
        .params
        .iter_mut()
        .enumerate()
        .filter(|(i, _)| idx.contains(i))
        .map(|(_, p)| p.value.data_mut())
        .collect();
    opt.step(&mut slices, &grad_refs)?;
    params.step += 1;
    Ok(())
}

fn check_finite(step: usize, what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            step: step as u64,
            detail: format!("{what} is {v}"),
        })
    }
}

/// Phase 1: optimize L_recon over the training silhouettes, updating only
/// the tool encoder and decoder. Returns the per-step losses.
pub fn pretrain(params: &mut ModelParams<f32>, train: &Examples, cfg: &TrainConfig) -> Result<Vec<f32>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let trainable = [Group::ToolEncoder, Group::ToolDecoder];
    let mut opt = Adam::new(cfg.adam());
    let mut sampler = Sampler::new(train.len(), derived_rng(cfg.seed, &["pretrain", "batches"]));
    let mut losses = Vec::with_capacity(cfg.pretrain_steps);
    for step in 0..cfg.pretrain_steps {
        let batch = train.batch::<f32>(&sampler.next(cfg.batch))?;
        let plan = LossPlan {
            recon: true,
            task: false,
            mode: Mode::TaskDriven,
            mu: cfg.mu,
            trainable: &trainable,
        };
        let mut lg = loss_graph(params, &batch, plan, None)?;
        let loss = lg.g.value(lg.total).item();
        check_finite(step, "reconstruction loss", loss as f64)?;
        lg.g.backward(lg.total)?;
        adam_update(params, &mut opt, &mut lg, &trainable)?;
        losses.push(loss);
        if cfg.log_every > 0 && (step + 1) % cfg.log_every == 0 {
            let tail = &losses[losses.len().saturating_sub(cfg.log_every)..];
            log::info!(
                "pretrain step {}/{}: L_recon {:.5}",
                step + 1,
                cfg.pretrain_steps,
                tail.iter().sum::<f32>() / tail.len() as f32
            );
        }
    }
    params.phase = Phase::Pretrained;
    Ok(losses)
}

/// Mean validation L_task. `cached_zt` supplies tool latents when the tool
/// encoder is frozen.
pub fn validation_task_loss(params: &ModelParams<f32>, val: &Examples, cached_zt: Option<&[f32]>) -> Result<f64> {
    if val.is_empty() {
        return Err(Error::Config("empty validation set".into()));
    }
    let d_t = params.arch.d_t;
    let mut total = 0.0;
    let all: Vec<usize> = (0..val.len()).collect();
    for idx in all.chunks(INFERENCE_BATCH) {
        let batch = val.batch::<f32>(idx)?;
        let cache = cached_zt.map(|c| gather_rows(c, d_t, idx)).transpose()?;
        let mut g = Graph::new();
        let groups = if cache.is_some() {
            vec![Group::TaskEncoder, Group::Classifier]
        } else {
            vec![Group::TaskEncoder, Group::ToolEncoder, Group::Classifier]
        };
        let b = bind(&mut g, params, &groups, &[]);
        let z_t = match cache {
            Some(c) => g.constant(c),
            None => {
                let x = g.constant(batch.tools);
                params.tool_encoder(&mut g, &b, x)?
            }
        };
        let x = g.constant(batch.tasks);
        let z_g = params.task_encoder(&mut g, &b, x)?;
        let logits = params.classifier_logits(&mut g, &b, z_g, z_t)?;
        let xent = g.softmax_xent(logits, &batch.labels)?;
        total += g.value(xent).data().iter().map(|v| v.as_f64()).sum::<f64>();
    }
    Ok(total / val.len() as f64)
}

fn gather_rows(src: &[f32], d: usize, idx: &[usize]) -> Result<Tensor<f32>> {
    let data = idx.iter().flat_map(|&i| src[i * d..][..d].iter().copied()).collect();
    Ok(Tensor::new(vec![idx.len(), d], data)?)
}

fn encode_all_tools(params: &ModelParams<f32>, ex: &Examples) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(ex.len() * params.arch.d_t);
    let all: Vec<usize> = (0..ex.len()).collect();
    for idx in all.chunks(INFERENCE_BATCH) {
        let batch = ex.batch::<f32>(idx)?;
        let mut g = Graph::new();
        let b = bind(&mut g, params, &[Group::ToolEncoder], &[]);
        let x = g.constant(batch.tools);
        let z = params.tool_encoder(&mut g, &b, x)?;
        out.extend_from_slice(g.value(z).data());
    }
    Ok(out)
}

/// Identifies one saved task-phase checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub step: u64,
    pub val_task_loss: f64,
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TaskPhaseOutcome {
    pub mode: Mode,
    /// Per-step training losses (L_recon is 0 when frozen).
    pub losses: Vec<LossBreakdown>,
    pub checkpoints: Vec<CheckpointMeta>,
    pub best_index: usize,
    pub best: ModelParams<f32>,
}

/// Phase 2, starting from pretrained parameters. Task-driven mode optimizes
/// L_recon + L_task over all groups; task-unaware mode freezes the tool
/// encoder and decoder and fits the task encoder and classifier to L_task.
/// Every `validate_every` steps the validation L_task is recorded and a
/// checkpoint is kept (and written under `ckpt_dir` when given).
pub fn train_task_phase(
    pretrained: &ModelParams<f32>,
    train: &Examples,
    val: &Examples,
    cfg: &TrainConfig,
    mode: Mode,
    ckpt_dir: Option<&Path>,
) -> Result<TaskPhaseOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let mut params = pretrained.clone();
    let trainable = mode.trainable();
    let (train_zt, val_zt) = match mode {
        Mode::TaskUnaware => (
            Some(encode_all_tools(&params, train)?),
            Some(encode_all_tools(&params, val)?),
        ),
        Mode::TaskDriven => (None, None),
    };
    if let Some(dir) = ckpt_dir {
        fs::create_dir_all(dir)?;
    }
    let mut opt = Adam::new(cfg.adam());
    // both modes see the same batch sequence
    let mut sampler = Sampler::new(train.len(), derived_rng(cfg.seed, &["task", "batches"]));
    let mut losses = Vec::with_capacity(cfg.task_steps);
    let mut checkpoints = Vec::new();
    let mut best: Option<(usize, ModelParams<f32>)> = None;
    params.phase = Phase::TaskTrained;
    for step in 0..cfg.task_steps {
        let idx = sampler.next(cfg.batch);
        let batch = train.batch::<f32>(&idx)?;
        let cache = train_zt.as_deref().map(|c| gather_rows(c, params.arch.d_t, &idx)).transpose()?;
        let plan = LossPlan {
            recon: mode == Mode::TaskDriven,
            task: true,
            mode,
            mu: cfg.mu,
            trainable,
        };
        let mut lg = loss_graph(&params, &batch, plan, cache)?;
        let v = |x: Option<Var>| x.map_or(0.0, |x| lg.g.value(x).item().as_f64());
        let l = LossBreakdown {
            recon: v(lg.recon),
            task: v(lg.task),
            total: lg.g.value(lg.total).item().as_f64(),
        };
        check_finite(step, "training loss", l.total)?;
        lg.g.backward(lg.total)?;
        adam_update(&mut params, &mut opt, &mut lg, trainable)?;
        losses.push(l);
        if cfg.log_every > 0 && (step + 1) % cfg.log_every == 0 {
            let tail = &losses[losses.len().saturating_sub(cfg.log_every)..];
            let m = |f: fn(&LossBreakdown) -> f64| tail.iter().map(f).sum::<f64>() / tail.len() as f64;
            log::info!(
                "{} step {}/{}: L_recon {:.5} L_task {:.5}",
                mode.name(),
                step + 1,
                cfg.task_steps,
                m(|l| l.recon),
                m(|l| l.task)
            );
        }
        if (step + 1) % cfg.validate_every == 0 || step + 1 == cfg.task_steps {
            let val_loss = validation_task_loss(&params, val, val_zt.as_deref())?;
            check_finite(step, "validation L_task", val_loss)?;
            log::info!("{} step {}: validation L_task {:.5}", mode.name(), step + 1, val_loss);
            let path = match ckpt_dir {
                Some(dir) => {
                    let p = dir.join(format!("{}-step{:06}.ckpt", mode.name(), params.step));
                    save_checkpoint(&p, &params, Some(val_loss))?;
                    Some(p)
                }
                None => None,
            };
            checkpoints.push(CheckpointMeta {
                step: params.step,
                val_task_loss: val_loss,
                path,
            });
            let chosen = select_checkpoint(&checkpoints)?;
            if best.as_ref().map_or(true, |(i, _)| *i != chosen) {
                best = Some((chosen, params.clone()));
            }
        }
    }
    let (best_index, best) = best.ok_or(Error::NoCheckpoints)?;
    Ok(TaskPhaseOutcome {
        mode,
        losses,
        checkpoints,
        best_index,
        best,
    })
}

/// Index of the checkpoint with the lowest validation L_task; the earliest
/// wins ties. NaN losses are never selected.
pub fn select_checkpoint(checkpoints: &[CheckpointMeta]) -> Result<usize> {
    let mut best: Option<usize> = None;
    for (i, c) in checkpoints.iter().enumerate() {
        if c.val_task_loss.is_nan() {
            continue;
        }
        if best.map_or(true, |b| c.val_task_loss < checkpoints[b].val_task_loss) {
            best = Some(i);
        }
    }
    best.ok_or(Error::NoCheckpoints)
}

const MAGIC: &[u8; 8] = b"TOOLIMAG";
const FORMAT_VERSION: u32 = 1;

/// Header: magic, format version, phase byte, ArchConfig JSON, step,
/// validation loss (NaN when absent); then each parameter as name, shape and
/// little-endian f32 values in declaration order.
pub fn save_checkpoint(path: &Path, params: &ModelParams<f32>, val_task_loss: Option<f64>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&[params.phase as u8])?;
    let json = serde_json::to_vec(&params.arch)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(&params.step.to_le_bytes())?;
    w.write_all(&val_task_loss.unwrap_or(f64::NAN).to_le_bytes())?;
    w.write_all(&(params.params.len() as u32).to_le_bytes())?;
    for p in &params.params {
        w.write_all(&(p.name.len() as u32).to_le_bytes())?;
        w.write_all(p.name.as_bytes())?;
        w.write_all(&(p.value.shape().len() as u32).to_le_bytes())?;
        for &d in p.value.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in p.value.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Reader<R> {
    inner: R,
    path: PathBuf,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0; n];
        self.inner.read_exact(&mut buf).map_err(|e| self.fail(format!("truncated: {e}")))?;
        Ok(buf)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0; N];
        self.inner.read_exact(&mut buf).map_err(|e| self.fail(format!("truncated: {e}")))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn fail(&self, detail: String) -> Error {
        Error::Format {
            path: self.path.display().to_string(),
            detail,
        }
    }
}

/// Loaded checkpoint with its header fields.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: ModelParams<f32>,
    pub val_task_loss: Option<f64>,
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = Reader {
        inner: BufReader::new(fs::File::open(path)?),
        path: path.to_path_buf(),
    };
    if &r.array::<8>()? != MAGIC {
        return Err(r.fail("bad magic".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(r.fail(format!("unsupported version {version}")));
    }
    let [phase] = r.array::<1>()?;
    let phase = Phase::from_byte(phase).ok_or_else(|| r.fail(format!("bad phase {phase}")))?;
    let json_len = r.u32()? as usize;
    let arch: ArchConfig = serde_json::from_slice(&r.bytes(json_len)?)?;
    let step = u64::from_le_bytes(r.array()?);
    let val = f64::from_le_bytes(r.array()?);
    let mut params = ModelParams::<f32>::zeros(&arch)?;
    params.phase = phase;
    params.step = step;
    let count = r.u32()? as usize;
    if count != params.params.len() {
        return Err(r.fail(format!("{count} arrays, architecture declares {}", params.params.len())));
    }
    for p in params.params.iter_mut() {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.bytes(name_len)?).map_err(|_| r.fail("name is not UTF-8".into()))?;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if name != p.name || shape != p.value.shape() {
            return Err(r.fail(format!("array {name} {shape:?}, expected {} {:?}", p.name, p.value.shape())));
        }
        let raw = r.bytes(p.value.numel() * 4)?;
        for (dst, src) in p.value.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
            *dst = f32::from_le_bytes(src.try_into().expect("chunk of 4"));
        }
    }
    Ok(Checkpoint {
        params,
        val_task_loss: (!val.is_nan()).then_some(val),
    })
}

/// Central-difference check of the full loss gradient on the miniature
/// architecture, in double precision, for both training modes. In
/// task-unaware mode only the trained groups are perturbed, since the tool
/// branch is detached there.
pub fn miniature_grad_check(seed: u64) -> Result<Vec<(Mode, GradCheckReport)>> {
    let arch = ArchConfig::miniature();
    let base = ModelParams::<f64>::init(&arch, &mut derived_rng(seed, &["gradcheck", "init"]))?;
    let mut rng = derived_rng(seed, &["gradcheck", "batch"]);
    let (n, r) = (2, arch.resolution);
    let batch = Batch {
        tasks: Tensor::new(vec![n, TASK_CHANNELS, r, r], (0..n * TASK_CHANNELS * r * r).map(|_| rng.gen_bool(0.3) as u8 as f64).collect())?,
        tools: Tensor::new(vec![n, 1, r, r], (0..n * r * r).map(|_| rng.gen_bool(0.4) as u8 as f64).collect())?,
        labels: (0..n).map(|i| i % 2).collect(),
    };
    let mut offsets = Vec::with_capacity(base.params.len());
    let mut at = 0;
    for q in &base.params {
        offsets.push((at, q.value.numel()));
        at += q.value.numel();
    }
    let mut out = Vec::new();
    for mode in Mode::ALL {
        let groups: &[Group] = match mode {
            Mode::TaskDriven => &Group::ALL,
            Mode::TaskUnaware => &[Group::TaskEncoder, Group::Classifier],
        };
        let point = base.flatten(groups);
        let mut failure = None;
        let report = grad_check(
            |x| {
                let mut p = base.clone();
                let eval = p.set_flat(groups, x).and_then(|_| loss_gradient(&p, &batch, mode, true, 0.1));
                match eval {
                    Ok((v, full)) => {
                        let g = base
                            .params
                            .iter()
                            .zip(&offsets)
                            .filter(|(q, _)| groups.contains(&q.group))
                            .flat_map(|(_, &(o, n))| full[o..o + n].to_vec())
                            .collect();
                        (v, g)
                    }
                    Err(e) => {
                        failure.get_or_insert(e);
                        (f64::NAN, vec![0.0; x.len()])
                    }
                }
            },
            &point,
            DEFAULT_STEP,
        );
        if let Some(e) = failure {
            return Err(e);
        }
        out.push((mode, report));
    }
    Ok(out)
}
