use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use timebalance::balance::load_or_compute;
use timebalance::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use timebalance::config::{Config, StudentInit};
use timebalance::datamodel::{class_names, load_all, load_dataset, write_split_manifest, SplitSpec};
use timebalance::encoder::Role;
use timebalance::eval::{classwise_delta, evaluate, EvalReport};
use timebalance::metrics::MetricsLog;
use timebalance::pipeline::protocol;
use timebalance::synthgen::gen_benchmark;
use timebalance::trainer::{
    finetune_teacher, pretrain_teacher, student_init, train_student, EpochHook, Objective, Stage, TeacherPair,
    TrainConfig,
};
use timebalance::{Error, Result};

#[derive(Parser)]
#[command(name = "timebalance", version, about = "Semi-supervised video action recognition with two self-supervised teachers")]
struct Cli {
    /// Configuration file (`key = value` lines).
    #[arg(long, global = true, alias = "spec")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic training and held-out corpora under OUT/train and OUT/test.
    GenSynthetic,
    /// Contrastive pretraining of one teacher.
    Pretrain {
        #[arg(long, value_parser = ["invariant", "distinctive"])]
        objective: String,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Supervised finetuning of a pretrained teacher on the labeled split.
    FinetuneTeacher {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Temporal similarity scores from the two pretrained teachers.
    ComputeSimilarity {
        #[arg(long, num_args = 2, value_names = ["INVARIANT", "DISTINCTIVE"])]
        teachers: Vec<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Semi-supervised student training from two finetuned teachers.
    TrainStudent {
        #[arg(long, num_args = 2, value_names = ["INVARIANT", "DISTINCTIVE"])]
        teachers: Vec<PathBuf>,
        /// Similarity cache written by compute-similarity.
        #[arg(long)]
        scores: PathBuf,
        /// Pretrained checkpoint used when `student.init = ssl`.
        #[arg(long)]
        init_checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Multi-clip, multi-scale top-1 accuracy on a labeled corpus.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Report path (default OUT/report_<role>.json).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Per-class accuracy delta between a distinctive and an invariant report.
    ClasswiseDelta {
        #[arg(long)]
        distinctive: PathBuf,
        #[arg(long)]
        invariant: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => {
            let mut cfg = Config::default();
            cfg.apply_env()?;
            Ok(cfg)
        }
    }
}

fn data_root(flag: Option<PathBuf>, configured: Option<&PathBuf>) -> Result<PathBuf> {
    flag.or_else(|| configured.cloned())
        .ok_or_else(|| Error::Argument("no data directory: pass --data or set data.root".into()))
}

fn save_weights(path: &Path, ckpt: &Checkpoint) -> Result<String> {
    let hash = save_checkpoint(path, ckpt)?;
    println!("{}\t{hash}", path.display());
    Ok(hash)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(cli.config.as_deref())?;
    let out = cli.out;
    std::fs::create_dir_all(&out).map_err(|e| Error::Io {
        path: out.clone(),
        source: e,
    })?;
    let metrics = MetricsLog::open(&out.join("metrics.jsonl"))?;
    match cli.command {
        Command::GenSynthetic => {
            let train = gen_benchmark(&cfg.synth_spec(), &out.join("train"))?;
            let test = if cfg.synth.test_videos_per_class > 0 {
                gen_benchmark(&cfg.test_synth_spec(), &out.join("test"))?
            } else {
                0
            };
            println!("wrote {train} training and {test} held-out videos under {}", out.display());
        }
        Command::Pretrain { objective, data } => {
            let objective: Objective = objective.parse()?;
            let root = data_root(data, cfg.data.root.as_ref())?;
            let videos = load_all(&root, cfg.n * cfg.pretrain.clip_len)?;
            let classes = class_names(&root)?.len();
            let stage = match objective {
                Objective::Invariant => Stage::PretrainInvariant,
                Objective::Distinctive => Stage::PretrainDistinctive,
            };
            let tcfg = TrainConfig::from_config(&cfg, stage);
            let name = objective.role().as_str();
            let latest = out.join(format!("{name}_ssl.latest.tbck"));
            let mut hook = |m: &_, w: &_, o: &_| -> Result<()> {
                metrics.append(m)?;
                save_checkpoint(
                    &latest,
                    &Checkpoint {
                        weights: Clone::clone(w),
                        optimizer: Some(Clone::clone(o)),
                        parent: None,
                    },
                )?;
                Ok(())
            };
            let result = pretrain_teacher(
                objective,
                cfg.encoder_config(classes),
                &videos,
                &tcfg,
                Some(&mut hook as &mut EpochHook<'_>),
            )?;
            save_weights(
                &out.join(format!("{name}_ssl.tbck")),
                &Checkpoint {
                    weights: result.weights,
                    optimizer: Some(result.optimizer),
                    parent: None,
                },
            )?;
        }
        Command::FinetuneTeacher { checkpoint, data } => {
            let (ssl, ssl_hash) = load_checkpoint(&checkpoint)?;
            let root = data_root(data, cfg.data.root.as_ref())?;
            let (labeled, unlabeled) = load_dataset(&root, split_spec(&cfg), cfg.n * cfg.finetune.clip_len)?;
            write_split_manifest(&out.join("split.csv"), &labeled, &unlabeled)?;
            let tcfg = TrainConfig::from_config(&cfg, Stage::FinetuneTeacher);
            let mut hook = |m: &_, _: &_, _: &_| metrics.append(m);
            let role = ssl.weights.role;
            let result = finetune_teacher(ssl.weights, &labeled, &tcfg, Some(&mut hook as &mut EpochHook<'_>))?;
            save_weights(
                &out.join(format!("{}_finetuned.tbck", role.as_str())),
                &Checkpoint {
                    weights: result.weights,
                    optimizer: Some(result.optimizer),
                    parent: Some(ssl_hash),
                },
            )?;
        }
        Command::ComputeSimilarity { teachers, data } => {
            let (ti, hi) = load_checkpoint(&teachers[0])?;
            let (td, hd) = load_checkpoint(&teachers[1])?;
            check_role(&ti.weights.role, Role::InvariantTeacher, &teachers[0])?;
            check_role(&td.weights.role, Role::DistinctiveTeacher, &teachers[1])?;
            let root = data_root(data, cfg.data.root.as_ref())?;
            let videos = load_all(&root, 0)?;
            let (cache, computed) = load_or_compute(
                &out.join("scores.tsv"),
                &ti.weights,
                &hi,
                &td.weights,
                &hd,
                &videos,
                cfg.n,
                cfg.pretrain.clip_len,
            )?;
            println!(
                "{} scores ({}) in {}",
                cache.records.len(),
                if computed { "computed" } else { "cached" },
                out.join("scores.tsv").display()
            );
        }
        Command::TrainStudent {
            teachers,
            scores,
            init_checkpoint,
            data,
        } => {
            let (ti, hi) = load_checkpoint(&teachers[0])?;
            let (td, hd) = load_checkpoint(&teachers[1])?;
            check_role(&ti.weights.role, Role::InvariantTeacher, &teachers[0])?;
            check_role(&td.weights.role, Role::DistinctiveTeacher, &teachers[1])?;
            let cache = timebalance::balance::ScoreCache::load(&scores)?;
            let parents = (ti.parent.as_deref().unwrap_or(""), td.parent.as_deref().unwrap_or(""));
            if !cache.matches(parents.0, parents.1) {
                return Err(Error::Checkpoint {
                    path: scores,
                    reason: "similarity cache was computed from different teacher checkpoints".into(),
                });
            }
            let root = data_root(data, cfg.data.root.as_ref())?;
            let (labeled, unlabeled) = load_dataset(&root, split_spec(&cfg), cfg.student.clip_len)?;
            let ssl = match (cfg.student.init, init_checkpoint) {
                (StudentInit::Ssl, Some(p)) => Some(load_checkpoint(&p)?.0.weights),
                (StudentInit::Ssl, None) => {
                    return Err(Error::Argument("student.init = ssl needs --init-checkpoint".into()))
                }
                (StudentInit::Random, _) => None,
            };
            let classes = class_names(&root)?.len();
            let init = student_init(cfg.student.init, ssl.as_ref(), cfg.encoder_config(classes), cfg.seed)?;
            let score_map = cache.scores();
            let pair = TeacherPair {
                invariant: &ti.weights,
                distinctive: &td.weights,
                scores: &score_map,
            };
            let tcfg = TrainConfig::from_config(&cfg, Stage::TrainStudent);
            let mut hook = |m: &_, _: &_, _: &_| metrics.append(m);
            let result = train_student(init, &pair, &labeled, &unlabeled, &tcfg, Some(&mut hook as &mut EpochHook<'_>))?;
            for (path, before) in teachers.iter().zip([&hi, &hd]) {
                if &load_checkpoint(path)?.1 != before {
                    return Err(Error::Checkpoint {
                        path: path.clone(),
                        reason: "teacher checkpoint changed during student training".into(),
                    });
                }
            }
            save_weights(
                &out.join("student.tbck"),
                &Checkpoint {
                    weights: result.weights,
                    optimizer: Some(result.optimizer),
                    parent: Some(hd),
                },
            )?;
        }
        Command::Evaluate {
            checkpoint,
            data,
            report,
        } => {
            let (ckpt, _) = load_checkpoint(&checkpoint)?;
            let root = data_root(data, cfg.data.test_root.as_ref().or(cfg.data.root.as_ref()))?;
            let videos = load_all(&root, cfg.finetune.clip_len)?;
            let rep = evaluate(&ckpt.weights, &videos, &protocol(&cfg))?;
            let path = report.unwrap_or_else(|| out.join(format!("report_{}.json", ckpt.weights.role.as_str())));
            rep.save(&path)?;
            println!("top1 {:.4} on {} videos -> {}", rep.top1, rep.num_videos, path.display());
        }
        Command::ClasswiseDelta {
            distinctive,
            invariant,
        } => {
            let rd = EvalReport::load(&distinctive)?;
            let ri = EvalReport::load(&invariant)?;
            let table = classwise_delta(&rd, &ri, cfg.eval.delta_k)?;
            let names = match cfg.data.test_root.as_ref().or(cfg.data.root.as_ref()) {
                Some(root) => class_names(root)?,
                None => Vec::new(),
            };
            let path = out.join("classwise_delta.csv");
            std::fs::write(&path, table.to_csv(&names)).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn split_spec(cfg: &Config) -> SplitSpec {
    SplitSpec {
        labeled_fraction: cfg.data.labeled_fraction,
        seed: cfg.seed,
    }
}

fn check_role(actual: &Role, expected: Role, path: &Path) -> Result<()> {
    if *actual != expected {
        return Err(Error::Checkpoint {
            path: path.to_path_buf(),
            reason: format!("expected a {expected} checkpoint, found {actual}"),
        });
    }
    Ok(())
}
