//! Toy 3-D convolutional video encoder.
//!
//! Four blocks of `conv3x3x3 -> group norm -> ReLU -> pool` map a clip
//! `[F, S, S, Ch]` to an unpooled temporal feature sequence `[F / 4, D]`.
//! The temporal mean of that sequence feeds a linear classifier and a
//! non-linear projection head (`Linear -> BN -> ReLU -> Linear -> BN`,
//! hidden width `D / 4`) whose output is L2-normalised.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    avg_pool3d, avg_pool3d_backward, relu, relu_backward, BatchNorm1d, BatchNormCache, BatchStats,
    Conv3d, GroupNorm, GroupNormCache, Linear, Vol,
};
use crate::scalar::{norm, softmax, Scalar};
use crate::tensor::Tensor;

/// Pooling window `(time, height, width)` applied after blocks 1..=3. The
/// fourth block is followed by a global spatial mean.
const BLOCK_POOLS: [(usize, usize, usize); 3] = [(2, 2, 2), (2, 2, 2), (1, 2, 2)];

/// Product of the temporal pooling factors.
pub const TEMPORAL_STRIDE: usize = 4;

const NORMALIZE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    InvariantTeacher,
    DistinctiveTeacher,
    Student,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::InvariantTeacher => "invariant_teacher",
            Role::DistinctiveTeacher => "distinctive_teacher",
            Role::Student => "student",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Role::InvariantTeacher => 0,
            Role::DistinctiveTeacher => 1,
            Role::Student => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Role::InvariantTeacher),
            1 => Some(Role::DistinctiveTeacher),
            2 => Some(Role::Student),
            _ => None,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "invariant_teacher" => Ok(Role::InvariantTeacher),
            "distinctive_teacher" => Ok(Role::DistinctiveTeacher),
            "student" => Ok(Role::Student),
            other => Err(Error::Argument(format!("unknown role '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub in_channels: usize,
    /// Spatial side of the (square) clips fed to the backbone.
    pub input_size: usize,
    /// Output channels of the four backbone blocks; the last one is `D`.
    pub widths: [usize; 4],
    pub groups: usize,
    pub proj_dim: usize,
    pub num_classes: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            input_size: 16,
            widths: [4, 8, 16, 64],
            groups: 1,
            proj_dim: 16,
            num_classes: 10,
        }
    }
}

impl EncoderConfig {
    pub fn feature_dim(&self) -> usize {
        self.widths[3]
    }

    /// Hidden width of the projection head: a quarter of the feature width.
    pub fn proj_hidden(&self) -> usize {
        (self.feature_dim() / 4).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let spatial: usize = BLOCK_POOLS.iter().map(|p| p.1).product();
        if self.input_size == 0 || self.input_size % spatial != 0 {
            return Err(Error::Argument(format!(
                "input size {} must be a positive multiple of {spatial}",
                self.input_size
            )));
        }
        if self.widths.iter().any(|&w| w == 0 || w % self.groups.max(1) != 0) || self.groups == 0 {
            return Err(Error::Argument(format!(
                "widths {:?} must be positive multiples of groups {}",
                self.widths, self.groups
            )));
        }
        if self.proj_dim == 0 || self.num_classes < 2 || self.in_channels == 0 {
            return Err(Error::Argument(
                "proj_dim, in_channels must be positive and num_classes >= 2".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block<T> {
    pub conv: Conv3d<T>,
    pub norm: GroupNorm<T>,
}

/// All learnable parameters (plus projector running statistics) of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights<T> {
    pub config: EncoderConfig,
    pub role: Role,
    pub blocks: Vec<Block<T>>,
    pub classifier: Linear<T>,
    pub projector: ProjectionHead<T>,
}

/// Non-linear projection head `g`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead<T> {
    pub proj_in: Linear<T>,
    pub bn1: BatchNorm1d<T>,
    pub proj_out: Linear<T>,
    pub bn2: BatchNorm1d<T>,
}

/// Temporal feature sequence of one clip and its temporal mean.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipFeature<T> {
    pub unpooled: Vec<Vec<T>>,
    pub pooled: Vec<T>,
}

/// Unit-norm projection of a pooled feature.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection<T> {
    pub z: Vec<T>,
}

impl<T: Scalar> Projection<T> {
    /// L2-normalises `v` (guarded against a zero vector).
    pub fn normalize(v: &[T]) -> Self {
        let n = norm(v).max(T::of(NORMALIZE_EPS));
        Self {
            z: v.iter().map(|&x| x / n).collect(),
        }
    }
}

/// Probability vector on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionVector<T> {
    pub p: Vec<T>,
}

impl<T: Scalar> PredictionVector<T> {
    pub fn from_logits(logits: &[T]) -> Self {
        Self {
            p: softmax(logits),
        }
    }

    /// Wraps `p` after checking simplex membership to `1e-6`.
    pub fn new(p: Vec<T>) -> Result<Self> {
        let sum: T = p.iter().copied().sum();
        if p.iter().any(|&x| !(x >= T::zero())) || (sum - T::one()).abs() > T::of(1e-6) {
            return Err(Error::contract(format!(
                "not a probability vector (sum {sum})"
            )));
        }
        Ok(Self { p })
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Backbone,
    Classifier,
    Projector,
    /// Running statistics: serialised but never touched by the optimiser.
    Buffer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamMeta {
    pub name: String,
    pub shape: Vec<usize>,
    pub group: ParamGroup,
}

#[derive(Debug, Clone)]
struct BlockCache<T> {
    input: Vol<T>,
    norm: GroupNormCache<T>,
    activated: Vol<T>,
}

/// Activations retained by a training-mode backbone pass.
#[derive(Debug, Clone)]
pub struct BackboneCache<T> {
    blocks: Vec<BlockCache<T>>,
    final_dims: (usize, usize, usize, usize),
}

/// Activations retained by a training-mode projector pass.
#[derive(Debug, Clone)]
pub struct ProjectorCache<T> {
    inputs: Vec<Vec<T>>,
    bn1: BatchNormCache<T>,
    hidden: Vec<Vec<T>>,
    bn2: BatchNormCache<T>,
    pre_norm: Vec<Vec<T>>,
}

impl<T: Scalar> EncoderWeights<T> {
    pub fn new<R: Rng + ?Sized>(config: EncoderConfig, role: Role, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut blocks = Vec::with_capacity(4);
        let mut cin = config.in_channels;
        for &w in &config.widths {
            blocks.push(Block {
                conv: Conv3d::new(cin, w, rng),
                norm: GroupNorm::new(w, config.groups)?,
            });
            cin = w;
        }
        let d = config.feature_dim();
        let hidden = config.proj_hidden();
        Ok(Self {
            classifier: Linear::new(d, config.num_classes, true, rng),
            projector: ProjectionHead {
                proj_in: Linear::new(d, hidden, true, rng),
                bn1: BatchNorm1d::new(hidden),
                proj_out: Linear::new(hidden, config.proj_dim, false, rng),
                bn2: BatchNorm1d::new(config.proj_dim),
            },
            blocks,
            config,
            role,
        })
    }

    /// Same architecture with every tensor zeroed; used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            role: self.role,
            blocks: self
                .blocks
                .iter()
                .map(|b| Block {
                    conv: b.conv.zeros_like(),
                    norm: b.norm.zeros_like(),
                })
                .collect(),
            classifier: self.classifier.zeros_like(),
            projector: ProjectionHead {
                proj_in: self.projector.proj_in.zeros_like(),
                bn1: self.projector.bn1.zeros_like(),
                proj_out: self.projector.proj_out.zeros_like(),
                bn2: self.projector.bn2.zeros_like(),
            },
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    /// Tensor metadata in declaration order (the checkpoint order).
    pub fn param_meta(&self) -> Vec<ParamMeta> {
        let mut out = Vec::new();
        let mut push = |name: String, shape: Vec<usize>, group| out.push(ParamMeta { name, shape, group });
        for (i, b) in self.blocks.iter().enumerate() {
            push(format!("block{i}.conv.weight"), vec![3, 3, 3, b.conv.cin, b.conv.cout], ParamGroup::Backbone);
            push(format!("block{i}.conv.bias"), vec![b.conv.cout], ParamGroup::Backbone);
            push(format!("block{i}.norm.gamma"), vec![b.norm.gamma.len()], ParamGroup::Backbone);
            push(format!("block{i}.norm.beta"), vec![b.norm.beta.len()], ParamGroup::Backbone);
        }
        let c = &self.classifier;
        push("classifier.weight".into(), vec![c.input, c.output], ParamGroup::Classifier);
        push("classifier.bias".into(), vec![c.output], ParamGroup::Classifier);
        let p = &self.projector.proj_in;
        push("projector.0.weight".into(), vec![p.input, p.output], ParamGroup::Projector);
        push("projector.0.bias".into(), vec![p.output], ParamGroup::Projector);
        for (idx, bn) in [(1, &self.projector.bn1), (4, &self.projector.bn2)] {
            let dim = bn.dim();
            push(format!("projector.{idx}.gamma"), vec![dim], ParamGroup::Projector);
            push(format!("projector.{idx}.beta"), vec![dim], ParamGroup::Projector);
            push(format!("projector.{idx}.running_mean"), vec![dim], ParamGroup::Buffer);
            push(format!("projector.{idx}.running_var"), vec![dim], ParamGroup::Buffer);
            if idx == 1 {
                let q = &self.projector.proj_out;
                push("projector.3.weight".into(), vec![q.input, q.output], ParamGroup::Projector);
            }
        }
        out
    }

    /// Tensor contents, in the same order as [`Self::param_meta`].
    pub fn tensors(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        for b in &self.blocks {
            out.extend([&b.conv.weight[..], &b.conv.bias, &b.norm.gamma, &b.norm.beta]);
        }
        out.push(&self.classifier.weight);
        out.push(self.classifier.bias.as_deref().unwrap_or(&[]));
        let head = &self.projector;
        out.push(&head.proj_in.weight);
        out.push(head.proj_in.bias.as_deref().unwrap_or(&[]));
        let b1 = &head.bn1;
        out.extend([&b1.gamma[..], &b1.beta, &b1.running_mean, &b1.running_var]);
        out.push(&head.proj_out.weight);
        let b2 = &head.bn2;
        out.extend([&b2.gamma[..], &b2.beta, &b2.running_mean, &b2.running_var]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for b in &mut self.blocks {
            out.push(&mut b.conv.weight);
            out.push(&mut b.conv.bias);
            out.push(&mut b.norm.gamma);
            out.push(&mut b.norm.beta);
        }
        out.push(&mut self.classifier.weight);
        out.push(self.classifier.bias.as_deref_mut().unwrap_or(&mut []));
        let head = &mut self.projector;
        out.push(&mut head.proj_in.weight);
        out.push(head.proj_in.bias.as_deref_mut().unwrap_or(&mut []));
        let b1 = &mut head.bn1;
        out.push(&mut b1.gamma);
        out.push(&mut b1.beta);
        out.push(&mut b1.running_mean);
        out.push(&mut b1.running_var);
        out.push(&mut head.proj_out.weight);
        let b2 = &mut head.bn2;
        out.push(&mut b2.gamma);
        out.push(&mut b2.beta);
        out.push(&mut b2.running_mean);
        out.push(&mut b2.running_var);
        out
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Converts every tensor into another scalar type.
    pub fn cast<U: Scalar>(&self) -> EncoderWeights<U> {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut out = EncoderWeights::<U>::new(self.config.clone(), self.role, &mut rng)
            .expect("configuration already validated");
        for (dst, src) in out.tensors_mut().into_iter().zip(self.tensors()) {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = U::of(s.to_f64_lossy());
            }
        }
        out
    }

    fn check_clip(&self, clip: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
        let s = clip.shape();
        let c = &self.config;
        if s.len() != 4
            || s[1] != c.input_size
            || s[2] != c.input_size
            || s[3] != c.in_channels
            || s[0] == 0
            || s[0] % TEMPORAL_STRIDE != 0
        {
            return Err(Error::contract(format!(
                "clip shape {s:?} does not match [F, {0}, {0}, {1}] with F a positive multiple of {TEMPORAL_STRIDE}",
                c.input_size, c.in_channels
            )));
        }
        Ok((s[0], s[1], s[2], s[3]))
    }

    /// Deterministic forward pass of the backbone.
    pub fn encode_clip(&self, clip: &Tensor<T>) -> Result<ClipFeature<T>> {
        self.encode_clip_cached(clip).map(|(f, _)| f)
    }

    /// Order-preserving batch of [`Self::encode_clip`].
    pub fn encode_batch(&self, clips: &[Tensor<T>]) -> Result<Vec<ClipFeature<T>>> {
        clips.par_iter().map(|c| self.encode_clip(c)).collect()
    }

    /// Forward pass that also returns the activations needed by
    /// [`Self::backbone_backward`].
    pub fn encode_clip_cached(&self, clip: &Tensor<T>) -> Result<(ClipFeature<T>, BackboneCache<T>)> {
        let (t, h, w, c) = self.check_clip(clip)?;
        let mut x = Vol {
            t,
            h,
            w,
            c,
            data: clip.data().to_vec(),
        };
        let mut caches = Vec::with_capacity(4);
        for (i, block) in self.blocks.iter().enumerate() {
            let conv = block.conv.forward(&x);
            let (mut y, ncache) = block.norm.forward(&conv);
            relu(&mut y);
            let next = match BLOCK_POOLS.get(i) {
                Some(&window) => avg_pool3d(&y, window)?,
                None => y.clone(),
            };
            caches.push(BlockCache {
                input: x,
                norm: ncache,
                activated: y,
            });
            x = next;
        }
        let final_dims = (x.t, x.h, x.w, x.c);
        let spatial = x.h * x.w;
        let inv = T::one() / T::of(spatial as f64);
        let mut unpooled = vec![vec![T::zero(); x.c]; x.t];
        for (ti, row) in unpooled.iter_mut().enumerate() {
            for s in 0..spatial {
                let base = (ti * spatial + s) * x.c;
                for (r, &v) in row.iter_mut().zip(&x.data[base..base + x.c]) {
                    *r += v * inv;
                }
            }
        }
        let pooled = temporal_mean(&unpooled);
        Ok((
            ClipFeature { unpooled, pooled },
            BackboneCache {
                blocks: caches,
                final_dims,
            },
        ))
    }

    /// Back-propagates a gradient on the unpooled features into `grad`.
    pub fn backbone_backward(&self, cache: &BackboneCache<T>, d_unpooled: &[Vec<T>], grad: &mut Self) {
        let (t, h, w, c) = cache.final_dims;
        let spatial = h * w;
        let inv = T::one() / T::of(spatial as f64);
        let mut dx = Vol::zeros(t, h, w, c);
        for (ti, drow) in d_unpooled.iter().enumerate() {
            for s in 0..spatial {
                let base = (ti * spatial + s) * c;
                for (d, &g) in dx.data[base..base + c].iter_mut().zip(drow) {
                    *d = g * inv;
                }
            }
        }
        for i in (0..self.blocks.len()).rev() {
            let bc = &cache.blocks[i];
            let block = &self.blocks[i];
            let mut dy = match BLOCK_POOLS.get(i) {
                Some(&window) => {
                    let a = &bc.activated;
                    avg_pool3d_backward((a.t, a.h, a.w, a.c), &dx, window)
                }
                None => dx,
            };
            relu_backward(&bc.activated, &mut dy);
            let dconv = block.norm.backward(&bc.norm, &dy, &mut grad.blocks[i].norm);
            let need_dx = i > 0;
            dx = block
                .conv
                .backward(&bc.input, &dconv, &mut grad.blocks[i].conv, need_dx)
                .unwrap_or_else(|| Vol::zeros(0, 0, 0, 0));
        }
    }

    /// Backward pass for a gradient on the pooled feature only.
    pub fn backbone_backward_pooled(&self, cache: &BackboneCache<T>, d_pooled: &[T], grad: &mut Self) {
        let steps = cache.final_dims.0;
        let inv = T::one() / T::of(steps as f64);
        let row: Vec<T> = d_pooled.iter().map(|&g| g * inv).collect();
        self.backbone_backward(cache, &vec![row; steps], grad);
    }

    pub fn logits(&self, pooled: &[T]) -> Vec<T> {
        self.classifier.forward(pooled)
    }

    /// Linear classifier followed by softmax.
    pub fn classify(&self, pooled: &[T]) -> PredictionVector<T> {
        PredictionVector::from_logits(&self.logits(pooled))
    }

    pub fn classifier_backward(&self, pooled: &[T], d_logits: &[T], grad: &mut Self) -> Vec<T> {
        self.classifier.backward(pooled, d_logits, &mut grad.classifier)
    }

    /// Projection of a single pooled feature with running statistics.
    pub fn project(&self, pooled: &[T]) -> Result<Projection<T>> {
        Ok(self.project_eval(std::slice::from_ref(&pooled.to_vec()))?.remove(0))
    }

    /// Evaluation-mode projection of a batch.
    pub fn project_eval(&self, pooled: &[Vec<T>]) -> Result<Vec<Projection<T>>> {
        Ok(self.projector.forward(pooled, false)?.0)
    }

    /// Training-mode projection with batch statistics. Folds the batch
    /// statistics into the running estimates when `update_running` is set.
    pub fn project_train(
        &mut self,
        pooled: &[Vec<T>],
        update_running: bool,
    ) -> Result<(Vec<Projection<T>>, ProjectorCache<T>)> {
        let (z, cache, stats) = self.projector.forward(pooled, true)?;
        if update_running {
            if let Some((s1, s2)) = stats {
                self.projector.bn1.update_running(&s1);
                self.projector.bn2.update_running(&s2);
            }
        }
        Ok((z, cache))
    }

    /// Back-propagates gradients on projections to the pooled inputs.
    pub fn projector_backward(&self, cache: &ProjectorCache<T>, dz: &[Vec<T>], grad: &mut Self) -> Vec<Vec<T>> {
        let eps = T::of(NORMALIZE_EPS);
        let dv: Vec<Vec<T>> = cache
            .pre_norm
            .iter()
            .zip(dz)
            .map(|(v, g)| normalize_backward(v, g, eps))
            .collect();
        let head = &self.projector;
        let ghead = &mut grad.projector;
        let dhidden_bn = head.bn2.backward(&cache.bn2, &dv, &mut ghead.bn2);
        let mut dact: Vec<Vec<T>> = cache
            .hidden
            .iter()
            .zip(&dhidden_bn)
            .map(|(h, d)| head.proj_out.backward(h, d, &mut ghead.proj_out))
            .collect();
        for (row, h) in dact.iter_mut().zip(&cache.hidden) {
            for (d, &a) in row.iter_mut().zip(h) {
                if a <= T::zero() {
                    *d = T::zero();
                }
            }
        }
        let dlin = head.bn1.backward(&cache.bn1, &dact, &mut ghead.bn1);
        cache
            .inputs
            .iter()
            .zip(&dlin)
            .map(|(x, d)| head.proj_in.backward(x, d, &mut ghead.proj_in))
            .collect()
    }

    /// Encodes a clip spanning `n` local-clip durations and mean-pools each
    /// of `n` equal contiguous segments of its unpooled features.
    pub fn temporal_slices(&self, global_clip: &Tensor<T>, n: usize) -> Result<Vec<Vec<T>>> {
        let feature = self.encode_clip(global_clip)?;
        slice_features(&feature.unpooled, n)
    }
}

type HeadStats<T> = Option<(BatchStats<T>, BatchStats<T>)>;

impl<T: Scalar> ProjectionHead<T> {
    fn forward(&self, pooled: &[Vec<T>], train: bool) -> Result<(Vec<Projection<T>>, ProjectorCache<T>, HeadStats<T>)> {
        if pooled.iter().any(|p| p.len() != self.proj_in.input) {
            return Err(Error::contract("pooled feature width does not match projector"));
        }
        let lin1: Vec<Vec<T>> = pooled.iter().map(|p| self.proj_in.forward(p)).collect();
        let (mut hidden, bn1, s1) = self.bn1.forward(&lin1, train)?;
        for row in hidden.iter_mut() {
            for v in row.iter_mut() {
                if *v < T::zero() {
                    *v = T::zero();
                }
            }
        }
        let lin2: Vec<Vec<T>> = hidden.iter().map(|h| self.proj_out.forward(h)).collect();
        let (pre_norm, bn2, s2) = self.bn2.forward(&lin2, train)?;
        let z = pre_norm.iter().map(|v| Projection::normalize(v)).collect();
        Ok((
            z,
            ProjectorCache {
                inputs: pooled.to_vec(),
                bn1,
                hidden,
                bn2,
                pre_norm,
            },
            s1.zip(s2),
        ))
    }
}

fn normalize_backward<T: Scalar>(v: &[T], dz: &[T], eps: T) -> Vec<T> {
    let n = norm(v);
    if n <= eps {
        return dz.iter().map(|&g| g / eps).collect();
    }
    let z: Vec<T> = v.iter().map(|&x| x / n).collect();
    let proj: T = z.iter().zip(dz).map(|(&a, &b)| a * b).sum();
    z.iter().zip(dz).map(|(&zi, &gi)| (gi - zi * proj) / n).collect()
}

pub fn temporal_mean<T: Scalar>(rows: &[Vec<T>]) -> Vec<T> {
    let dim = rows.first().map_or(0, Vec::len);
    let inv = T::one() / T::of(rows.len().max(1) as f64);
    let mut out = vec![T::zero(); dim];
    for r in rows {
        for (o, &v) in out.iter_mut().zip(r) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o *= inv);
    out
}

/// Partitions a temporal feature sequence into `n` contiguous equal segments
/// and mean-pools each one.
pub fn slice_features<T: Scalar>(unpooled: &[Vec<T>], n: usize) -> Result<Vec<Vec<T>>> {
    if n == 0 || unpooled.len() % n != 0 {
        return Err(Error::contract(format!(
            "{} temporal steps cannot be split into {n} equal slices",
            unpooled.len()
        )));
    }
    let len = unpooled.len() / n;
    Ok(unpooled.chunks(len).map(temporal_mean).collect())
}

/// Gradient of [`slice_features`]: spreads each slice gradient uniformly
/// over the steps it pooled.
pub fn slice_features_backward<T: Scalar>(d_slices: &[Vec<T>], steps: usize) -> Vec<Vec<T>> {
    let len = steps / d_slices.len();
    let inv = T::one() / T::of(len as f64);
    d_slices
        .iter()
        .flat_map(|d| {
            let row: Vec<T> = d.iter().map(|&g| g * inv).collect();
            std::iter::repeat_n(row, len)
        })
        .collect()
}
