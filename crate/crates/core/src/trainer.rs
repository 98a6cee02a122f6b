//! Training stages: contrastive teacher pretraining, supervised teacher
//! finetuning and semi-supervised student distillation.
//!
//! Every stage runs Adam under [`LrSchedule`] and reports one
//! [`EpochMetrics`] per epoch through an optional hook. All randomness is
//! drawn from a ChaCha stream keyed by the stage and the configured seed, and
//! gradients are accumulated in a fixed order, so a stage is reproducible
//! bit for bit.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::balance::{combine_teachers, FALLBACK_SCORE};
use crate::checkpoint::OptimizerState;
use crate::config::{Config, Reweight, StudentInit};
use crate::datamodel::{augment_with_rng, frame_window, random_start, AugmentSpec, VideoInstance};
use crate::encoder::{slice_features, slice_features_backward, BackboneCache, EncoderConfig, EncoderWeights, ParamGroup, Role};
use crate::error::{Error, Result};
use crate::losses::{
    cross_entropy_logits, distill, loss_distinctive_pooled_grad, loss_distinctive_unpooled_grad,
    loss_invariant_grad, softmax_backward, ContrastiveBatch, Divergence,
};
use crate::metrics::EpochMetrics;
use crate::optim::{Adam, LrSchedule};
use crate::scalar::{argmax, softmax};
use crate::tensor::Tensor;

type Weights = EncoderWeights<f32>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Invariant,
    Distinctive,
}

impl Objective {
    pub fn role(self) -> Role {
        match self {
            Objective::Invariant => Role::InvariantTeacher,
            Objective::Distinctive => Role::DistinctiveTeacher,
        }
    }
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "invariant" => Ok(Objective::Invariant),
            "distinctive" => Ok(Objective::Distinctive),
            _ => Err(Error::Argument(format!("objective must be 'invariant' or 'distinctive', got '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    PretrainInvariant,
    PretrainDistinctive,
    FinetuneTeacher,
    TrainStudent,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::PretrainInvariant => "pretrain_invariant",
            Stage::PretrainDistinctive => "pretrain_distinctive",
            Stage::FinetuneTeacher => "finetune_teacher",
            Stage::TrainStudent => "train_student",
        }
    }

    fn tag(self) -> u64 {
        match self {
            Stage::PretrainInvariant => 0x11,
            Stage::PretrainDistinctive => 0x22,
            Stage::FinetuneTeacher => 0x33,
            Stage::TrainStudent => 0x44,
        }
    }
}

/// Hyper-parameters of one training stage.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub stage: Stage,
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub patience: usize,
    pub omega: f64,
    pub tau: f64,
    /// Consecutive clips per video.
    pub n: usize,
    /// Clip length `F`.
    pub clip_len: usize,
    pub seed: u64,
    /// Passes over the labeled set per finetuning epoch.
    pub repeats: usize,
    /// Labeled samples in each student batch.
    pub labeled_per_batch: usize,
    pub distill: Divergence,
    pub reweight: Reweight,
    pub augment: AugmentSpec,
}

impl TrainConfig {
    pub fn from_config(cfg: &Config, stage: Stage) -> Self {
        let (epochs, clip_len) = match stage {
            Stage::PretrainInvariant | Stage::PretrainDistinctive => (cfg.pretrain.epochs, cfg.pretrain.clip_len),
            Stage::FinetuneTeacher => (cfg.finetune.epochs, cfg.finetune.clip_len),
            Stage::TrainStudent => (cfg.student.epochs, cfg.student.clip_len),
        };
        Self {
            stage,
            epochs,
            batch_size: cfg.train.batch_size,
            base_lr: cfg.train.base_lr,
            warmup_epochs: cfg.train.warmup_epochs,
            patience: cfg.train.patience,
            omega: cfg.train.omega,
            tau: cfg.train.tau,
            n: cfg.n,
            clip_len,
            seed: cfg.seed,
            repeats: cfg.finetune.repeats,
            labeled_per_batch: cfg.student.labeled_per_batch,
            distill: cfg.train.distill,
            reweight: cfg.student.reweight,
            augment: cfg.augment_spec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < self.warmup_epochs {
            return Err(Error::Argument(format!(
                "epochs {} below warmup epochs {}",
                self.epochs, self.warmup_epochs
            )));
        }
        if !(self.base_lr > 0.0) || self.patience == 0 || self.batch_size == 0 {
            return Err(Error::Argument("base_lr, patience and batch_size must be positive".into()));
        }
        if !(self.tau > 0.0) || !(self.omega >= 0.0) {
            return Err(Error::Argument("tau must be positive and omega non-negative".into()));
        }
        Ok(())
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(mix(self.seed ^ mix(self.stage.tag() << 8 | stream)))
    }
}

fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Fresh Adam state and schedule for `weights`.
pub fn make_optimizer(weights: &Weights, cfg: &TrainConfig) -> Result<OptimizerState> {
    let lengths: Vec<usize> = weights.tensors().iter().map(|t| t.len()).collect();
    Ok(OptimizerState {
        adam: Adam::new(&lengths),
        schedule: LrSchedule::new(cfg.base_lr, cfg.warmup_epochs, cfg.patience)?,
    })
}

#[derive(Debug, Clone)]
pub struct StageResult {
    pub weights: Weights,
    pub optimizer: OptimizerState,
    pub metrics: Vec<EpochMetrics>,
}

/// Called after every epoch with the epoch's metrics and current state.
pub type EpochHook<'a> = dyn FnMut(&EpochMetrics, &Weights, &OptimizerState) -> Result<()> + 'a;

#[derive(Debug, Default, Clone)]
struct StepStats {
    loss: f64,
    l_i: Option<f64>,
    l_d1: Option<f64>,
    l_d2: Option<f64>,
    sup_sum: f64,
    sup_count: usize,
    unsup_sum: f64,
    unsup_count: usize,
    correct: usize,
}

#[derive(Default)]
struct EpochTotals {
    steps: usize,
    loss: f64,
    l_i: Option<f64>,
    l_d1: Option<f64>,
    l_d2: Option<f64>,
    sup_sum: f64,
    sup_count: usize,
    unsup_sum: f64,
    unsup_count: usize,
    correct: usize,
}

impl EpochTotals {
    fn add(&mut self, s: &StepStats) {
        let acc = |slot: &mut Option<f64>, v: Option<f64>| {
            if let Some(v) = v {
                *slot = Some(slot.unwrap_or(0.0) + v);
            }
        };
        self.steps += 1;
        self.loss += s.loss;
        acc(&mut self.l_i, s.l_i);
        acc(&mut self.l_d1, s.l_d1);
        acc(&mut self.l_d2, s.l_d2);
        self.sup_sum += s.sup_sum;
        self.sup_count += s.sup_count;
        self.unsup_sum += s.unsup_sum;
        self.unsup_count += s.unsup_count;
        self.correct += s.correct;
    }

    fn finish(self, m: &mut EpochMetrics) {
        let steps = self.steps.max(1) as f64;
        m.steps = self.steps;
        m.loss = self.loss / steps;
        m.l_i = self.l_i.map(|v| v / steps);
        m.l_d1 = self.l_d1.map(|v| v / steps);
        m.l_d2 = self.l_d2.map(|v| v / steps);
        if self.sup_count > 0 {
            m.l_sup = Some(self.sup_sum / self.sup_count as f64);
            m.accuracy = Some(self.correct as f64 / self.sup_count as f64);
        }
        if self.unsup_count > 0 {
            m.l_unsup = Some(self.unsup_sum / self.unsup_count as f64);
        }
    }
}

fn trainable_mask(weights: &Weights, groups: &[ParamGroup]) -> Vec<bool> {
    weights.param_meta().iter().map(|m| groups.contains(&m.group)).collect()
}

/// Shared epoch loop. `plan` lays out the epoch's batches; `step` returns
/// the statistics and gradient of one batch.
fn run_stage<B>(
    cfg: &TrainConfig,
    mut weights: Weights,
    trainable: Vec<bool>,
    rng: &mut ChaCha8Rng,
    mut plan: impl FnMut(&mut ChaCha8Rng) -> Vec<B>,
    mut step: impl FnMut(&mut Weights, &B, &mut ChaCha8Rng) -> Result<(StepStats, Weights)>,
    describe: impl Fn(&B) -> String,
    mut hook: Option<&mut EpochHook<'_>>,
) -> Result<StageResult> {
    cfg.validate()?;
    let mut opt = make_optimizer(&weights, cfg)?;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut metrics = EpochMetrics::new(cfg.stage.as_str(), weights.role.as_str(), epoch, opt.schedule.epoch_lr(epoch));
        let batches = plan(rng);
        let mut totals = EpochTotals::default();
        for (k, batch) in batches.iter().enumerate() {
            let (stats, grad) = step(&mut weights, batch, rng)?;
            if !stats.loss.is_finite() || !grad.all_finite() {
                return Err(Error::Numerical(format!(
                    "{} epoch {} step {}: non-finite loss {} on batch [{}]",
                    cfg.stage.as_str(),
                    epoch + 1,
                    k,
                    stats.loss,
                    describe(batch)
                )));
            }
            let lr = opt.schedule.step_lr(epoch, k, batches.len());
            opt.adam.update(weights.tensors_mut(), grad.tensors(), &trainable, lr)?;
            totals.add(&stats);
        }
        totals.finish(&mut metrics);
        if !weights.all_finite() {
            return Err(Error::Numerical(format!(
                "{} epoch {}: weights became non-finite",
                cfg.stage.as_str(),
                epoch + 1
            )));
        }
        opt.schedule.observe(epoch, metrics.loss);
        log::info!(
            "{} epoch {}/{} loss {:.5} lr {:.3e}",
            cfg.stage.as_str(),
            epoch + 1,
            cfg.epochs,
            metrics.loss,
            metrics.lr
        );
        if let Some(h) = hook.as_mut() {
            h(&metrics, &weights, &opt)?;
        }
        history.push(metrics);
    }
    Ok(StageResult {
        weights,
        optimizer: opt,
        metrics: history,
    })
}

/// Shuffled batches of indices; a trailing batch smaller than `min_len`
/// is merged into the previous one.
fn shuffled_batches(count: usize, batch: usize, min_len: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(rng);
    let mut out: Vec<Vec<usize>> = order.chunks(batch).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() < min_len) {
        let tail = out.pop().expect("nonempty");
        out.last_mut().expect("nonempty").extend(tail);
    }
    out
}

fn ids(videos: &[VideoInstance], idx: &[usize]) -> String {
    idx.iter().map(|&i| videos[i].id.as_str()).collect::<Vec<_>>().join(", ")
}

fn encode_all(w: &Weights, clips: &[Tensor<f32>]) -> Result<Vec<(crate::encoder::ClipFeature<f32>, BackboneCache<f32>)>> {
    clips.par_iter().map(|c| w.encode_clip_cached(c)).collect()
}

fn augmented_clips<R: Rng>(
    video: &VideoInstance,
    start: usize,
    n: usize,
    clip_len: usize,
    aug: &AugmentSpec,
    rng: &mut R,
) -> Result<Vec<Tensor<f32>>> {
    (0..n)
        .map(|t| augment_with_rng(&frame_window(video, start + t * clip_len, clip_len)?, aug, rng))
        .collect()
}

/// Contrastive pretraining of one teacher on every video (labels ignored).
pub fn pretrain_teacher(
    objective: Objective,
    encoder: EncoderConfig,
    videos: &[VideoInstance],
    cfg: &TrainConfig,
    hook: Option<&mut EpochHook<'_>>,
) -> Result<StageResult> {
    if videos.is_empty() {
        return Err(Error::Argument("pretraining needs at least one video".into()));
    }
    if objective == Objective::Invariant && videos.len() < 2 {
        return Err(Error::Argument("invariant pretraining needs at least 2 videos".into()));
    }
    let mut init_rng = cfg.rng(1);
    let weights = EncoderWeights::new(encoder, objective.role(), &mut init_rng)?;
    let trainable = trainable_mask(&weights, &[ParamGroup::Backbone, ParamGroup::Projector]);
    let mut rng = cfg.rng(2);
    let batch = cfg.batch_size.max(2);
    run_stage(
        cfg,
        weights,
        trainable,
        &mut rng,
        |rng| shuffled_batches(videos.len(), batch, 2, rng),
        |w, idx, rng| {
            let batch: Vec<&VideoInstance> = idx.iter().map(|&i| &videos[i]).collect();
            match objective {
                Objective::Invariant => invariant_step(w, &batch, cfg, rng),
                Objective::Distinctive => distinctive_step(w, &batch, cfg, rng),
            }
        },
        |idx| ids(videos, idx),
        hook,
    )
}

fn invariant_step(
    w: &mut Weights,
    batch: &[&VideoInstance],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(StepStats, Weights)> {
    let (n, f) = (cfg.n, cfg.clip_len);
    let mut clips = Vec::with_capacity(batch.len() * n);
    for v in batch {
        let start = random_start(v, n * f, rng)?;
        clips.extend(augmented_clips(v, start, n, f, &cfg.augment, rng)?);
    }
    let encoded = encode_all(w, &clips)?;
    let pooled: Vec<Vec<f32>> = encoded.iter().map(|(feat, _)| feat.pooled.clone()).collect();
    let (z, pcache) = w.project_train(&pooled, true)?;
    let z: Vec<Vec<Vec<f32>>> = z.chunks(n).map(|c| c.iter().map(|p| p.z.clone()).collect()).collect();
    let lg = loss_invariant_grad(&ContrastiveBatch::new(z, cfg.tau as f32))?;
    let dz: Vec<Vec<f32>> = lg.grad.into_iter().flatten().collect();
    let mut grad = w.zeros_like();
    let dpooled = w.projector_backward(&pcache, &dz, &mut grad);
    for ((_, cache), d) in encoded.iter().zip(&dpooled) {
        w.backbone_backward_pooled(cache, d, &mut grad);
    }
    let value = f64::from(lg.value);
    Ok((
        StepStats {
            loss: value,
            l_i: Some(value),
            ..Default::default()
        },
        grad,
    ))
}

fn distinctive_step(
    w: &mut Weights,
    batch: &[&VideoInstance],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(StepStats, Weights)> {
    let (n, f, b) = (cfg.n, cfg.clip_len, batch.len());
    let mut view1 = Vec::with_capacity(b * n);
    let mut view2 = Vec::with_capacity(b * n);
    let mut globals = Vec::with_capacity(b);
    for v in batch {
        let start = random_start(v, n * f, rng)?;
        view1.extend(augmented_clips(v, start, n, f, &cfg.augment, rng)?);
        view2.extend(augmented_clips(v, start, n, f, &cfg.augment, rng)?);
        globals.push(augment_with_rng(&frame_window(v, start, n * f)?, &cfg.augment, rng)?);
    }
    let enc1 = encode_all(w, &view1)?;
    let enc2 = encode_all(w, &view2)?;
    let encg = encode_all(w, &globals)?;
    let mut rows: Vec<Vec<f32>> = enc1.iter().chain(&enc2).map(|(feat, _)| feat.pooled.clone()).collect();
    for (feat, _) in &encg {
        rows.extend(slice_features(&feat.unpooled, n)?);
    }
    let (z, pcache) = w.project_train(&rows, true)?;
    let group = |range: std::ops::Range<usize>| -> Vec<Vec<Vec<f32>>> {
        z[range].chunks(n).map(|c| c.iter().map(|p| p.z.clone()).collect()).collect()
    };
    let (z1, z2, zs) = (group(0..b * n), group(b * n..2 * b * n), group(2 * b * n..3 * b * n));
    let tau = cfg.tau as f32;
    let d1 = loss_distinctive_pooled_grad(&ContrastiveBatch::with_second_view(z1.clone(), z2, tau))?;
    let d2 = loss_distinctive_unpooled_grad(&z1, &zs, tau)?;
    let mut dz: Vec<Vec<f32>> = Vec::with_capacity(3 * b * n);
    for (ga, gb) in d1.grad.iter().flatten().zip(d2.grad.iter().flatten()) {
        dz.push(ga.iter().zip(gb).map(|(x, y)| x + y).collect());
    }
    dz.extend(d1.grad_other.expect("two views").into_iter().flatten());
    dz.extend(d2.grad_other.expect("slices").into_iter().flatten());
    let mut grad = w.zeros_like();
    let drows = w.projector_backward(&pcache, &dz, &mut grad);
    for ((_, cache), d) in enc1.iter().chain(&enc2).zip(&drows) {
        w.backbone_backward_pooled(cache, d, &mut grad);
    }
    for (i, (feat, cache)) in encg.iter().enumerate() {
        let start = 2 * b * n + i * n;
        let d_unpooled = slice_features_backward(&drows[start..start + n], feat.unpooled.len());
        w.backbone_backward(cache, &d_unpooled, &mut grad);
    }
    let (l1, l2) = (f64::from(d1.value), f64::from(d2.value));
    Ok((
        StepStats {
            loss: l1 + l2,
            l_d1: Some(l1),
            l_d2: Some(l2),
            ..Default::default()
        },
        grad,
    ))
}

/// Supervised finetuning of backbone and classifier with cross-entropy.
/// The projection head is frozen.
pub fn finetune_teacher(
    weights: Weights,
    labeled: &[VideoInstance],
    cfg: &TrainConfig,
    hook: Option<&mut EpochHook<'_>>,
) -> Result<StageResult> {
    if labeled.is_empty() {
        return Err(Error::Argument("finetuning needs a nonempty labeled set".into()));
    }
    check_labels(labeled, weights.num_classes())?;
    let trainable = trainable_mask(&weights, &[ParamGroup::Backbone, ParamGroup::Classifier]);
    let mut rng = cfg.rng(2 + weights.role as u64);
    let repeats = cfg.repeats.max(1);
    run_stage(
        cfg,
        weights,
        trainable,
        &mut rng,
        |rng| {
            (0..repeats)
                .flat_map(|_| shuffled_batches(labeled.len(), cfg.batch_size, 1, rng))
                .collect()
        },
        |w, idx, rng| {
            let samples: Vec<(&VideoInstance, Option<usize>)> =
                idx.iter().map(|&i| (&labeled[i], labeled[i].label)).collect();
            supervised_step(w, &samples, None, cfg, rng)
        },
        |idx| ids(labeled, idx),
        hook,
    )
}

fn check_labels(videos: &[VideoInstance], classes: usize) -> Result<()> {
    for v in videos {
        match v.label {
            Some(y) if y < classes => {}
            Some(y) => {
                return Err(Error::contract(format!(
                    "video {} has label {y} but the model has {classes} classes",
                    v.id
                )))
            }
            None => return Err(Error::contract(format!("video {} in the labeled set has no label", v.id))),
        }
    }
    Ok(())
}

/// Frozen teachers and per-video scores used by the student.
pub struct TeacherPair<'a> {
    pub invariant: &'a Weights,
    pub distinctive: &'a Weights,
    pub scores: &'a BTreeMap<String, f64>,
}

struct SampleOut {
    stats: StepStats,
    pooled: Vec<f32>,
    d_logits: Vec<f32>,
    cache: BackboneCache<f32>,
}

/// One batch of per-sample `CE (labeled only) + omega * distill`, averaged
/// over the batch. Without teachers only the supervised term is used.
fn supervised_step(
    w: &mut Weights,
    samples: &[(&VideoInstance, Option<usize>)],
    teachers: Option<&TeacherPair<'_>>,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(StepStats, Weights)> {
    let f = cfg.clip_len;
    let clips = samples
        .iter()
        .map(|(v, _)| {
            let start = random_start(v, f, rng)?;
            augment_with_rng(&frame_window(v, start, f)?, &cfg.augment, rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let scale = 1.0 / samples.len() as f32;
    let omega = cfg.omega as f32;
    let student: &Weights = w;
    let outs = samples
        .par_iter()
        .zip(clips.par_iter())
        .map(|((video, label), clip)| -> Result<SampleOut> {
            let (feat, cache) = student.encode_clip_cached(clip)?;
            let logits = student.logits(&feat.pooled);
            let p_s = softmax(&logits);
            let mut stats = StepStats::default();
            let mut d_logits = vec![0f32; logits.len()];
            let mut loss = 0f64;
            if let Some(y) = *label {
                let (ce, d) = cross_entropy_logits(&logits, y)?;
                d_logits = d;
                loss += f64::from(ce);
                stats.sup_sum = f64::from(ce);
                stats.sup_count = 1;
                stats.correct = usize::from(argmax(&logits) == y);
            }
            if let Some(t) = teachers.filter(|_| omega > 0.0) {
                let s = match cfg.reweight {
                    Reweight::Uniform => 0.5,
                    Reweight::Tstr => t.scores.get(&video.id).copied().unwrap_or(FALLBACK_SCORE),
                };
                let p_i = t.invariant.classify(&t.invariant.encode_clip(clip)?.pooled).p;
                let p_d = t.distinctive.classify(&t.distinctive.encode_clip(clip)?.pooled).p;
                let p_t = combine_teachers(&p_i, &p_d, s as f32)?;
                let (value, d_ps) = distill(&p_t, &p_s, cfg.distill)?;
                let d_unsup = softmax_backward(&p_s, &d_ps);
                for (d, u) in d_logits.iter_mut().zip(&d_unsup) {
                    *d += omega * u;
                }
                loss += cfg.omega * f64::from(value);
                stats.unsup_sum = f64::from(value);
                stats.unsup_count = 1;
            }
            stats.loss = loss;
            Ok(SampleOut {
                stats,
                pooled: feat.pooled,
                d_logits,
                cache,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut grad = w.zeros_like();
    let mut total = StepStats::default();
    for out in &outs {
        let d: Vec<f32> = out.d_logits.iter().map(|&g| g * scale).collect();
        let dpooled = w.classifier_backward(&out.pooled, &d, &mut grad);
        w.backbone_backward_pooled(&out.cache, &dpooled, &mut grad);
        total.loss += out.stats.loss;
        total.sup_sum += out.stats.sup_sum;
        total.sup_count += out.stats.sup_count;
        total.unsup_sum += out.stats.unsup_sum;
        total.unsup_count += out.stats.unsup_count;
        total.correct += out.stats.correct;
    }
    total.loss /= samples.len() as f64;
    Ok((total, grad))
}

/// Initial student weights: a copy of a self-supervised checkpoint or a
/// fresh random network.
pub fn student_init(
    init: StudentInit,
    ssl: Option<&Weights>,
    encoder: EncoderConfig,
    seed: u64,
) -> Result<Weights> {
    match init {
        StudentInit::Ssl => {
            let mut w = ssl
                .ok_or_else(|| Error::Argument("ssl student init needs a pretrained checkpoint".into()))?
                .clone();
            if w.config != encoder {
                return Err(Error::Argument("pretrained checkpoint does not match the model configuration".into()));
            }
            w.role = Role::Student;
            Ok(w)
        }
        StudentInit::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(seed ^ 0x5757));
            EncoderWeights::new(encoder, Role::Student, &mut rng)
        }
    }
}

/// Semi-supervised student training. Each batch holds
/// `labeled_per_batch` labeled samples (resampled cyclically) and fills
/// the rest with unlabeled samples; an epoch is one pass over the
/// unlabeled set. Teachers are only read.
pub fn train_student(
    init: Weights,
    teachers: &TeacherPair<'_>,
    labeled: &[VideoInstance],
    unlabeled: &[VideoInstance],
    cfg: &TrainConfig,
    hook: Option<&mut EpochHook<'_>>,
) -> Result<StageResult> {
    if labeled.is_empty() {
        return Err(Error::Argument("student training needs a nonempty labeled set".into()));
    }
    check_labels(labeled, init.num_classes())?;
    for t in [teachers.invariant, teachers.distinctive] {
        if t.num_classes() != init.num_classes() {
            return Err(Error::Argument("teacher and student class counts differ".into()));
        }
    }
    if cfg.reweight == Reweight::Tstr && cfg.omega > 0.0 {
        let missing = labeled
            .iter()
            .chain(unlabeled)
            .filter(|v| !teachers.scores.contains_key(&v.id))
            .count();
        if missing > 0 {
            log::warn!("{missing} training videos have no similarity score, using s = {FALLBACK_SCORE}");
        }
    }
    let trainable = trainable_mask(&init, &[ParamGroup::Backbone, ParamGroup::Classifier]);
    let mut rng = cfg.rng(2);
    let per_labeled = if unlabeled.is_empty() {
        cfg.batch_size
    } else {
        cfg.labeled_per_batch.min(cfg.batch_size)
    };
    let per_unlabeled = cfg.batch_size - per_labeled;
    let mut labeled_stream: Vec<usize> = Vec::new();
    run_stage(
        cfg,
        init,
        trainable,
        &mut rng,
        |rng| {
            let steps = if unlabeled.is_empty() || per_unlabeled == 0 {
                labeled.len().div_ceil(per_labeled)
            } else {
                unlabeled.len().div_ceil(per_unlabeled)
            };
            let mut order: Vec<usize> = (0..unlabeled.len()).collect();
            order.shuffle(rng);
            let mut u_iter = order.into_iter();
            (0..steps)
                .map(|_| {
                    let mut batch: Vec<(bool, usize)> = Vec::with_capacity(cfg.batch_size);
                    for _ in 0..per_labeled {
                        if labeled_stream.is_empty() {
                            labeled_stream = (0..labeled.len()).collect();
                            labeled_stream.shuffle(rng);
                        }
                        batch.push((true, labeled_stream.pop().expect("refilled")));
                    }
                    batch.extend(u_iter.by_ref().take(per_unlabeled).map(|i| (false, i)));
                    batch
                })
                .collect::<Vec<_>>()
        },
        |w, batch, rng| {
            let samples: Vec<(&VideoInstance, Option<usize>)> = batch
                .iter()
                .map(|&(is_labeled, i)| {
                    if is_labeled {
                        (&labeled[i], labeled[i].label)
                    } else {
                        (&unlabeled[i], None)
                    }
                })
                .collect();
            supervised_step(w, &samples, Some(teachers), cfg, rng)
        },
        |batch| {
            batch
                .iter()
                .map(|&(l, i)| if l { labeled[i].id.as_str() } else { unlabeled[i].id.as_str() })
                .collect::<Vec<_>>()
                .join(", ")
        },
        hook,
    )
}
