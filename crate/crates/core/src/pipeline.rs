//! End-to-end runs on an in-memory synthetic corpus: both teachers,
//! similarity scores, student variants and held-out evaluation.

use std::collections::BTreeMap;

use crate::balance::{precompute_scores, ScoreCache};
use crate::checkpoint::{content_hash, Checkpoint};
use crate::config::{Config, Reweight};
use crate::datamodel::{split_videos, SplitSpec, VideoInstance, VideoKind};
use crate::encoder::EncoderWeights;
use crate::error::Result;
use crate::eval::{evaluate, EvalReport, Protocol};
use crate::metrics::{EpochMetrics, MetricsLog};
use crate::synthgen::gen_corpus;
use crate::trainer::{
    finetune_teacher, pretrain_teacher, student_init, train_student, EpochHook, Objective, Stage, StageResult,
    TeacherPair, TrainConfig,
};

type Weights = EncoderWeights<f32>;

#[derive(Debug, Clone)]
pub struct Corpus {
    pub train: Vec<VideoInstance>,
    pub labeled: Vec<VideoInstance>,
    pub unlabeled: Vec<VideoInstance>,
    pub test: Vec<VideoInstance>,
    pub class_names: Vec<String>,
    pub kinds: Vec<VideoKind>,
}

impl Corpus {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }
}

/// Training and held-out corpora generated from the configuration, with
/// the training corpus split into labeled and unlabeled sets.
pub fn synthetic_corpus(cfg: &Config) -> Result<Corpus> {
    let spec = cfg.synth_spec();
    let train = gen_corpus(&spec)?;
    let test = gen_corpus(&cfg.test_synth_spec())?;
    let split = SplitSpec {
        labeled_fraction: cfg.data.labeled_fraction,
        seed: cfg.seed,
    };
    let (labeled, unlabeled) = split_videos(train.clone(), split)?;
    Ok(Corpus {
        train,
        labeled,
        unlabeled,
        test,
        class_names: (0..spec.num_classes()).map(|c| spec.class_name(c)).collect(),
        kinds: (0..spec.num_classes()).filter_map(|c| spec.kind_of(c)).collect(),
    })
}

#[derive(Debug, Clone)]
pub struct Teachers {
    pub invariant_ssl: Weights,
    pub distinctive_ssl: Weights,
    pub invariant: Weights,
    pub distinctive: Weights,
    pub scores: ScoreCache,
}

impl Teachers {
    pub fn score_map(&self) -> BTreeMap<String, f64> {
        self.scores.scores()
    }
}

fn logging_hook(log: Option<&MetricsLog>) -> impl FnMut(&EpochMetrics, &Weights, &crate::checkpoint::OptimizerState) -> Result<()> + '_ {
    move |m, _, _| match log {
        Some(l) => l.append(m),
        None => Ok(()),
    }
}

fn ssl_hash(w: &Weights) -> Result<String> {
    content_hash(&Checkpoint {
        weights: w.clone(),
        optimizer: None,
        parent: None,
    })
}

/// Self-supervised teachers and the similarity scores they assign.
#[derive(Debug, Clone)]
pub struct PretrainedTeachers {
    pub invariant_ssl: Weights,
    pub distinctive_ssl: Weights,
    pub scores: ScoreCache,
}

/// Pretrains both teachers on the whole training corpus and scores every
/// training video with them.
pub fn pretrain_teachers(cfg: &Config, corpus: &Corpus, log: Option<&MetricsLog>) -> Result<PretrainedTeachers> {
    let encoder = cfg.encoder_config(corpus.num_classes());
    let mut hook = logging_hook(log);
    let inv_cfg = TrainConfig::from_config(cfg, Stage::PretrainInvariant);
    let invariant_ssl = pretrain_teacher(Objective::Invariant, encoder.clone(), &corpus.train, &inv_cfg, Some(&mut hook as &mut EpochHook<'_>))?.weights;
    let dis_cfg = TrainConfig::from_config(cfg, Stage::PretrainDistinctive);
    let distinctive_ssl = pretrain_teacher(Objective::Distinctive, encoder, &corpus.train, &dis_cfg, Some(&mut hook as &mut EpochHook<'_>))?.weights;
    let scores = ScoreCache {
        hash_invariant: ssl_hash(&invariant_ssl)?,
        hash_distinctive: ssl_hash(&distinctive_ssl)?,
        n: cfg.n,
        records: precompute_scores(&invariant_ssl, &distinctive_ssl, &corpus.train, cfg.n, cfg.pretrain.clip_len)?,
    };
    Ok(PretrainedTeachers {
        invariant_ssl,
        distinctive_ssl,
        scores,
    })
}

/// Finetunes both pretrained teachers on the labeled split.
pub fn finetune_teachers(
    cfg: &Config,
    corpus: &Corpus,
    pretrained: PretrainedTeachers,
    log: Option<&MetricsLog>,
) -> Result<Teachers> {
    let mut hook = logging_hook(log);
    let ft_cfg = TrainConfig::from_config(cfg, Stage::FinetuneTeacher);
    let invariant = finetune_teacher(pretrained.invariant_ssl.clone(), &corpus.labeled, &ft_cfg, Some(&mut hook as &mut EpochHook<'_>))?.weights;
    let distinctive = finetune_teacher(pretrained.distinctive_ssl.clone(), &corpus.labeled, &ft_cfg, Some(&mut hook as &mut EpochHook<'_>))?.weights;
    Ok(Teachers {
        invariant_ssl: pretrained.invariant_ssl,
        distinctive_ssl: pretrained.distinctive_ssl,
        invariant,
        distinctive,
        scores: pretrained.scores,
    })
}

/// Both teacher stages back to back.
pub fn train_teachers(cfg: &Config, corpus: &Corpus, log: Option<&MetricsLog>) -> Result<Teachers> {
    let pretrained = pretrain_teachers(cfg, corpus, log)?;
    finetune_teachers(cfg, corpus, pretrained, log)
}

/// Student variant: `omega` and `reweight` override the configuration.
pub fn train_student_variant(
    cfg: &Config,
    corpus: &Corpus,
    teachers: &Teachers,
    omega: f64,
    reweight: Reweight,
    log: Option<&MetricsLog>,
) -> Result<StageResult> {
    let mut scfg = TrainConfig::from_config(cfg, Stage::TrainStudent);
    scfg.omega = omega;
    scfg.reweight = reweight;
    let encoder = cfg.encoder_config(corpus.num_classes());
    let init = student_init(cfg.student.init, Some(&teachers.distinctive_ssl), encoder, cfg.seed)?;
    let scores = teachers.score_map();
    let pair = TeacherPair {
        invariant: &teachers.invariant,
        distinctive: &teachers.distinctive,
        scores: &scores,
    };
    let mut hook = logging_hook(log);
    train_student(init, &pair, &corpus.labeled, &corpus.unlabeled, &scfg, Some(&mut hook as &mut EpochHook<'_>))
}

pub fn protocol(cfg: &Config) -> Protocol {
    Protocol {
        num_clips: cfg.eval.num_clips,
        num_scales: cfg.eval.num_scales,
        clip_len: cfg.finetune.clip_len,
    }
}

pub fn evaluate_on_test(cfg: &Config, corpus: &Corpus, weights: &Weights) -> Result<EvalReport> {
    evaluate(weights, &corpus.test, &protocol(cfg))
}

#[derive(Debug, Clone)]
pub struct PipelineSummary {
    pub teachers: Teachers,
    pub student: Weights,
    pub student_report: EvalReport,
    pub invariant_report: EvalReport,
    pub distinctive_report: EvalReport,
}

/// Every stage in order with the configured student variant; metrics of
/// every epoch go to `log` when given.
pub fn run(cfg: &Config, log: Option<&MetricsLog>) -> Result<PipelineSummary> {
    let corpus = synthetic_corpus(cfg)?;
    let teachers = train_teachers(cfg, &corpus, log)?;
    let student = train_student_variant(cfg, &corpus, &teachers, cfg.train.omega, cfg.student.reweight, log)?.weights;
    Ok(PipelineSummary {
        student_report: evaluate_on_test(cfg, &corpus, &student)?,
        invariant_report: evaluate_on_test(cfg, &corpus, &teachers.invariant)?,
        distinctive_report: evaluate_on_test(cfg, &corpus, &teachers.distinctive)?,
        teachers,
        student,
    })
}
