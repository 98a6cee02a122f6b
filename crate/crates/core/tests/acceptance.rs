//! Acceptance run: one pass/fail line per criterion.
//!
//! The directional criteria train the full default pipeline on three seeds,
//! which takes tens of minutes on one core.

mod common;

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use timebalance::balance::{combine_teachers, similarity_matrix, similarity_score};
use timebalance::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use timebalance::config::{Config, Reweight};
use timebalance::datamodel::{resize_to, VideoKind};
use timebalance::eval::{classwise_delta, clip_starts, predict_video, sign_test_p, EvalReport, Protocol};
use timebalance::losses::{
    loss_cross_entropy, loss_distill, loss_distinctive_pooled, loss_distinctive_unpooled, loss_invariant,
    ContrastiveBatch, Divergence,
};
use timebalance::metrics::{read_metrics, MetricsLog};
use timebalance::pipeline::{
    evaluate_on_test, finetune_teachers, pretrain_teachers, run, synthetic_corpus, train_student_variant, Corpus,
    Teachers,
};
use timebalance::Tensor;

const SEEDS: [u64; 3] = [0, 1, 2];

struct Outcome {
    id: &'static str,
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(id: &'static str, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            id,
            pass,
            detail: detail.into(),
        }
    }

    fn failed(id: &'static str, err: impl std::fmt::Display) -> Self {
        Self::new(id, false, format!("error: {err}"))
    }
}

fn minutes(d: Duration) -> f64 {
    d.as_secs_f64() / 60.0
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    for seed in 0..common::SEEDS {
        let checks = [
            ("L_I", invariant_grad_err(seed)),
            ("L_D1", distinctive_pooled_grad_err(seed)),
            ("L_D2", distinctive_unpooled_grad_err(seed)),
            ("CE", cross_entropy_grad_err(seed)),
            ("L2", distill_grad_err(Divergence::L2, seed)),
        ];
        for (name, err) in checks {
            let w = worst.entry(name).or_insert(0.0);
            *w = w.max(err);
        }
    }
    let elapsed = start.elapsed();
    let pass = worst.values().all(|&e| e < TOL) && elapsed < Duration::from_secs(120);
    let detail = worst
        .iter()
        .map(|(k, v)| format!("{k} {v:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    Outcome::new("C1", pass, format!("max rel err {detail}; {:.1}s", elapsed.as_secs_f64()))
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0f64;
    let mut track = |got: f64, want: f64| {
        let err = (got - want).abs() / want.abs().max(1e-12);
        worst = worst.max(if (got - want).abs() < 1e-12 { 0.0 } else { err });
    };
    for _ in 0..500 {
        let b = rng.random_range(1..=4);
        let n = rng.random_range(2..=4);
        let d = rng.random_range(2..=8);
        let tau = rng.random_range(0.05..1.0);
        let z = views(&mut rng, b, n, d);
        let zt = views(&mut rng, b, n, d);
        if b >= 2 {
            track(loss_invariant(&ContrastiveBatch::new(z.clone(), tau)).unwrap(), oracle_invariant(&z, tau));
        }
        track(
            loss_distinctive_pooled(&ContrastiveBatch::with_second_view(z.clone(), zt.clone(), tau)).unwrap(),
            oracle_distinctive_pooled(&z, &zt, tau),
        );
        track(loss_distinctive_unpooled(&z, &zt, tau).unwrap(), oracle_distinctive_unpooled(&z, &zt, tau));
        let ci = similarity_matrix(&z[0]).unwrap();
        let cd = similarity_matrix(&zt[0]).unwrap();
        for a in 0..n {
            for c in 0..n {
                track(ci[a][c], cos(&z[0][a], &z[0][c]));
            }
        }
        track(similarity_score(&ci, &cd).unwrap(), oracle_similarity_score(&z[0], &zt[0]));
        let classes = rng.random_range(2..=8);
        let (p_i, p_d) = (simplex(&mut rng, classes), simplex(&mut rng, classes));
        let s: f64 = rng.random_range(0.0..=1.0);
        let p_t = combine_teachers(&p_i, &p_d, s).unwrap();
        for k in 0..classes {
            track(p_t[k], s * p_i[k] + (1.0 - s) * p_d[k]);
        }
        let p_s = simplex(&mut rng, classes);
        track(loss_distill(&p_t, &p_s).unwrap(), oracle_distill(&p_t, &p_s));
        let y = rng.random_range(0..classes);
        track(loss_cross_entropy(&p_s, y).unwrap(), -p_s[y].ln());
    }
    let orth = vec![vec![basis(4, 0), basis(4, 1)], vec![basis(4, 2), basis(4, 3)]];
    let pair = vec![vec![basis(2, 0), basis(2, 1)]];
    let closed = [
        (loss_invariant(&ContrastiveBatch::new(orth, 1.0)).unwrap(), 2.0 * 3f64.ln()),
        (
            loss_distinctive_pooled(&ContrastiveBatch::with_second_view(pair.clone(), pair.clone(), 0.1)).unwrap(),
            2.0 * (2f64.ln() - 10.0),
        ),
        (loss_distinctive_unpooled(&pair, &pair, 0.1).unwrap(), 2.0 * (3f64.ln() - 10.0)),
        (
            similarity_score(&[vec![1.0, 1.0], vec![1.0, 1.0]], &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            0.5,
        ),
        (combine_teachers(&[0.8, 0.2], &[0.2, 0.8], 0.5).unwrap()[0], 0.5),
    ];
    let closed_ok = closed.iter().all(|&(got, want)| rel_close(got, want, 1e-6));
    Outcome::new(
        "C2",
        worst <= 1e-6 && closed_ok,
        format!("max rel err {worst:.1e} over 500 random cases; closed forms {}", if closed_ok { "match" } else { "MISMATCH" }),
    )
}

fn teacher_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut bitwise = true;
    let mut worst = 0f64;
    for _ in 0..1000 {
        let c = rng.random_range(2..=10);
        let p_i = simplex(&mut rng, c);
        let p_d = simplex(&mut rng, c);
        let s: f64 = rng.random_range(0.0..=1.0);
        let p_t = combine_teachers(&p_i, &p_d, s).unwrap();
        worst = worst.max((p_t.iter().sum::<f64>() - 1.0).abs());
        if p_t.iter().any(|&p| p < 0.0) {
            worst = f64::INFINITY;
        }
        bitwise &= combine_teachers(&p_i, &p_d, 1.0).unwrap() == p_i;
        bitwise &= combine_teachers(&p_i, &p_d, 0.0).unwrap() == p_d;
        let (f_i, f_d): (Vec<f32>, Vec<f32>) = (p_i.iter().map(|&x| x as f32).collect(), p_d.iter().map(|&x| x as f32).collect());
        bitwise &= combine_teachers(&f_i, &f_d, 1.0).unwrap() == f_i;
        bitwise &= combine_teachers(&f_i, &f_d, 0.0).unwrap() == f_d;
    }
    Outcome::new(
        "C3",
        bitwise && worst <= 1e-6,
        format!("endpoints bitwise {bitwise}; max simplex deviation {worst:.1e} over 1000 cases"),
    )
}

/// Everything the directional criteria need from one seed.
struct SeedRun {
    seed: u64,
    corpus: Corpus,
    teachers: Teachers,
    pretrain_time: Duration,
    total_time: Duration,
    mean_s: (f64, f64),
    report_i: EvalReport,
    report_d: EvalReport,
    full: f64,
    supervised: f64,
    uniform: f64,
}

fn run_seed(seed: u64) -> timebalance::Result<SeedRun> {
    let start = Instant::now();
    let cfg = Config {
        seed,
        ..Config::default()
    };
    let corpus = synthetic_corpus(&cfg)?;
    let pretrained = pretrain_teachers(&cfg, &corpus, None)?;
    let pretrain_time = start.elapsed();
    let scores = pretrained.scores.scores();
    let mut by_kind: BTreeMap<bool, Vec<f64>> = BTreeMap::new();
    for v in &corpus.train {
        by_kind.entry(v.kind == Some(VideoKind::Atomic)).or_default().push(scores[&v.id]);
    }
    let mean = |xs: &Vec<f64>| xs.iter().sum::<f64>() / xs.len() as f64;
    let mean_s = (mean(&by_kind[&true]), mean(&by_kind[&false]));
    let teachers = finetune_teachers(&cfg, &corpus, pretrained, None)?;
    let report_i = evaluate_on_test(&cfg, &corpus, &teachers.invariant)?;
    let report_d = evaluate_on_test(&cfg, &corpus, &teachers.distinctive)?;
    let student = |omega: f64, reweight: Reweight| -> timebalance::Result<f64> {
        let weights = train_student_variant(&cfg, &corpus, &teachers, omega, reweight, None)?.weights;
        Ok(evaluate_on_test(&cfg, &corpus, &weights)?.top1)
    };
    let full = student(1.0, Reweight::Tstr)?;
    let supervised = student(0.0, Reweight::Tstr)?;
    let uniform = student(1.0, Reweight::Uniform)?;
    println!(
        "  seed {seed}: s atomic {:.3} composite {:.3}; teachers I {:.3} D {:.3}; student full {full:.3} sup {supervised:.3} uniform {uniform:.3}; {:.1} min",
        mean_s.0,
        mean_s.1,
        report_i.top1,
        report_d.top1,
        minutes(start.elapsed())
    );
    Ok(SeedRun {
        seed,
        corpus,
        teachers,
        pretrain_time,
        total_time: start.elapsed(),
        mean_s,
        report_i,
        report_d,
        full,
        supervised,
        uniform,
    })
}

fn similarity_direction(runs: &[SeedRun]) -> Outcome {
    let gaps: Vec<f64> = runs.iter().map(|r| r.mean_s.0 - r.mean_s.1).collect();
    let slowest = runs.iter().map(|r| r.pretrain_time).max().unwrap();
    let pass = gaps.iter().all(|&g| g >= 0.1) && slowest < Duration::from_secs(20 * 60);
    let gaps = gaps.iter().map(|g| format!("{g:.3}")).collect::<Vec<_>>().join(", ");
    Outcome::new(
        "C4",
        pass,
        format!("atomic - composite mean s per seed [{gaps}]; pretraining + scoring {:.1} min max", minutes(slowest)),
    )
}

fn classwise_direction(runs: &[SeedRun], k: usize) -> Outcome {
    let (mut successes, mut trials) = (0, 0);
    let (mut composite_top, mut atomic_bottom, mut slots) = (0, 0, 0);
    let mut lines = Vec::new();
    for r in runs {
        let table = match classwise_delta(&r.report_d, &r.report_i, k) {
            Ok(t) => t,
            Err(e) => return Outcome::failed("C5", e),
        };
        let kind = |c: usize| r.corpus.kinds[c];
        let top = table.top().iter().filter(|&&(c, d)| d > 0.0 && kind(c) == VideoKind::Composite).count();
        let bottom = table.bottom().iter().filter(|&&(c, d)| d < 0.0 && kind(c) == VideoKind::Atomic).count();
        composite_top += top;
        atomic_bottom += bottom;
        slots += table.top().len();
        // Sign test over the extremes; zero deltas carry no sign and drop out.
        let mut extremes: Vec<(usize, f64)> = table.top().to_vec();
        extremes.extend(table.bottom().iter().filter(|e| !table.top().contains(e)));
        for (c, d) in extremes {
            if d != 0.0 {
                trials += 1;
                successes += usize::from((d > 0.0) == (kind(c) == VideoKind::Composite));
            }
        }
        lines.push(format!("seed {}: {top}/{} composite in top, {bottom}/{} atomic in bottom", r.seed, table.top().len(), table.bottom().len()));
    }
    let p = sign_test_p(successes, trials);
    let pass = 2 * composite_top > slots && 2 * atomic_bottom > slots && p < 0.05;
    Outcome::new(
        "C5",
        pass,
        format!("{}; sign test {successes}/{trials}, p = {p:.4}", lines.join("; ")),
    )
}

fn student_direction(runs: &[SeedRun]) -> Outcome {
    let count = runs.len() as f64;
    let mean = |f: fn(&SeedRun) -> f64| runs.iter().map(f).sum::<f64>() / count;
    let gain_teachers = mean(|r| r.full - r.supervised);
    let gain_reweight = mean(|r| r.full - r.uniform);
    let total: Duration = runs.iter().map(|r| r.total_time).sum();
    let pass = gain_teachers >= 0.02 && gain_reweight >= -0.005 && total < Duration::from_secs(45 * 60);
    Outcome::new(
        "C6",
        pass,
        format!(
            "full - student-only {:+.2} pts, tstr - uniform {:+.2} pts (3-seed means); {:.1} min total",
            100.0 * gain_teachers,
            100.0 * gain_reweight,
            minutes(total)
        ),
    )
}

fn divergences(run: &SeedRun) -> Outcome {
    let dir = match tempfile::tempdir() {
        Ok(d) => d,
        Err(e) => return Outcome::failed("C7", e),
    };
    let mut cfg = Config {
        seed: run.seed,
        ..Config::default()
    };
    cfg.student.epochs = 2;
    cfg.train.warmup_epochs = 1;
    let mut notes = Vec::new();
    let mut pass = true;
    for divergence in [Divergence::L2, Divergence::Kl, Divergence::Js] {
        cfg.train.distill = divergence;
        let path = dir.path().join(format!("{divergence}.jsonl"));
        let outcome = (|| -> timebalance::Result<bool> {
            let log = MetricsLog::open(&path)?;
            let result = train_student_variant(&cfg, &run.corpus, &run.teachers, 1.0, Reweight::Tstr, Some(&log))?;
            let records = read_metrics(&path)?;
            let finite = records.len() == 2
                && records.iter().all(|m| {
                    m.loss.is_finite() && m.l_sup.is_some_and(f64::is_finite) && m.l_unsup.is_some_and(f64::is_finite)
                });
            let ckpt_path = dir.path().join(format!("{divergence}.tbck"));
            let hash = save_checkpoint(
                &ckpt_path,
                &Checkpoint {
                    weights: result.weights.clone(),
                    optimizer: Some(result.optimizer.clone()),
                    parent: None,
                },
            )?;
            let (back, back_hash) = load_checkpoint(&ckpt_path)?;
            Ok(finite && hash == back_hash && back.weights == result.weights && back.optimizer == Some(result.optimizer))
        })();
        let ok = matches!(outcome, Ok(true));
        pass &= ok;
        notes.push(format!("{divergence} {}", if ok { "ok" } else { "FAILED" }));
    }
    Outcome::new("C7", pass, notes.join(", "))
}

fn reduced_config() -> Config {
    let mut cfg = Config::default();
    cfg.seed = 3;
    cfg.synth.videos_per_class = 4;
    cfg.synth.test_videos_per_class = 2;
    cfg.data.labeled_fraction = 0.5;
    cfg.model.widths = [2, 4, 4, 8];
    cfg.model.proj_dim = 4;
    cfg.train.batch_size = 4;
    cfg.train.warmup_epochs = 1;
    cfg.pretrain.epochs = 2;
    cfg.finetune.epochs = 2;
    cfg.finetune.repeats = 1;
    cfg.student.epochs = 2;
    cfg.student.labeled_per_batch = 2;
    cfg.eval.num_clips = 2;
    cfg.eval.num_scales = 1;
    cfg
}

fn determinism() -> Outcome {
    let outcome = (|| -> Result<(bool, usize), String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let cfg = reduced_config();
        let mut logs = Vec::new();
        let mut reports = Vec::new();
        for name in ["a", "b"] {
            let path = dir.path().join(format!("{name}.jsonl"));
            let log = MetricsLog::open(&path).map_err(|e| e.to_string())?;
            let summary = run(&cfg, Some(&log)).map_err(|e| e.to_string())?;
            logs.push(std::fs::read(&path).map_err(|e| e.to_string())?);
            reports.push(summary.student_report);
        }
        let lines = logs[0].iter().filter(|&&b| b == b'\n').count();
        Ok((logs[0] == logs[1] && reports[0] == reports[1] && lines > 0, lines))
    })();
    match outcome {
        Ok((same, lines)) => Outcome::new("C8", same, format!("two runs, {lines} metric lines each, identical {same}")),
        Err(e) => Outcome::failed("C8", e),
    }
}

/// Start frames by counting: the largest `s` with `s (clips - 1) <= k (T - F)`.
fn enumerated_starts(t: usize, f: usize, clips: usize) -> Vec<usize> {
    if clips == 1 {
        return vec![0];
    }
    (0..clips)
        .map(|k| {
            let mut s = 0;
            while (s + 1) * (clips - 1) <= k * (t - f) {
                s += 1;
            }
            s
        })
        .collect()
}

fn protocol_exactness(run: &SeedRun) -> Outcome {
    let weights = &run.teachers.distinctive;
    let clip_len = Config::default().finetune.clip_len;
    let protocol = Protocol {
        num_clips: 1,
        num_scales: 1,
        clip_len,
    };
    let size = weights.config.input_size;
    let mut identical = 0;
    let videos = &run.corpus.test[..20];
    for v in videos {
        let frame = v.frames.len() / v.num_frames();
        let s = v.frames.shape();
        let clip = Tensor::from_vec(&[clip_len, s[1], s[2], s[3]], v.frames.data()[..clip_len * frame].to_vec()).unwrap();
        let direct = weights.classify(&weights.encode_clip(&resize_to(&clip, size, size)).unwrap().pooled).p;
        if predict_video(weights, v, &protocol).ok().map(|p| p.p) == Some(direct) {
            identical += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut schedules = 0;
    for _ in 0..20 {
        let f = rng.random_range(1..=32);
        let t = rng.random_range(f..=f + 200);
        let clips = rng.random_range(1..=12);
        if clip_starts(t, f, clips).ok() == Some(enumerated_starts(t, f, clips)) {
            schedules += 1;
        }
    }
    Outcome::new(
        "C9",
        identical == videos.len() && schedules == 20,
        format!("{identical}/{} single-clip predictions bitwise equal; {schedules}/20 clip schedules match", videos.len()),
    )
}

fn main() -> ExitCode {
    let mut outcomes = vec![gradient_suite(), oracle_equivalence(), teacher_identities()];
    println!("training the default pipeline on seeds {SEEDS:?}");
    let runs: timebalance::Result<Vec<SeedRun>> = SEEDS.iter().map(|&s| run_seed(s)).collect();
    match runs {
        Ok(runs) => {
            outcomes.push(similarity_direction(&runs));
            outcomes.push(classwise_direction(&runs, Config::default().eval.delta_k));
            outcomes.push(student_direction(&runs));
            outcomes.push(divergences(&runs[0]));
            outcomes.push(determinism());
            outcomes.push(protocol_exactness(&runs[0]));
        }
        Err(e) => {
            for id in ["C4", "C5", "C6", "C7", "C9"] {
                outcomes.push(Outcome::failed(id, &e));
            }
            outcomes.push(determinism());
        }
    }
    outcomes.sort_by_key(|o| o.id);
    for o in &outcomes {
        println!("{} {}: {}", o.id, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    if outcomes.iter().all(|o| o.pass) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
