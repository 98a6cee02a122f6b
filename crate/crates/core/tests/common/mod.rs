//! Brute-force oracles and finite-difference helpers shared by the test targets.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use timebalance::losses::{
    cross_entropy_logits, distill, loss_distinctive_pooled_grad, loss_distinctive_unpooled_grad,
    loss_invariant_grad, softmax_backward, ContrastiveBatch, Divergence,
};
use timebalance::scalar::softmax;

pub const STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
pub const SEEDS: u64 = 10;

/// Largest absolute deviation relative to the largest gradient entry.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-12);
    analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()))
        / scale
}

pub fn numeric_grad(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|k| {
            let orig = x[k];
            x[k] = orig + STEP;
            let up = f(&x);
            x[k] = orig - STEP;
            let down = f(&x);
            x[k] = orig;
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

pub fn flatten(v: &Views) -> Vec<f64> {
    v.iter().flatten().flatten().copied().collect()
}

pub fn unflatten(flat: &[f64], b: usize, n: usize, d: usize) -> Views {
    (0..b)
        .map(|i| (0..n).map(|t| flat[(i * n + t) * d..(i * n + t + 1) * d].to_vec()).collect())
        .collect()
}

pub fn random_views(rng: &mut ChaCha8Rng, b: usize, n: usize, d: usize) -> Views {
    (0..b)
        .map(|_| {
            (0..n)
                .map(|_| {
                    let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let s = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    v.iter().map(|x| x / s).collect()
                })
                .collect()
        })
        .collect()
}

pub type Views = Vec<Vec<Vec<f64>>>;

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for k in 0..a.len() {
        ab += a[k] * b[k];
        aa += a[k] * a[k];
        bb += b[k] * b[k];
    }
    ab / (aa.sqrt() * bb.sqrt())
}

pub fn h(a: &[f64], b: &[f64], tau: f64) -> f64 {
    (cos(a, b) / tau).exp()
}

pub fn oracle_invariant(z: &Views, tau: f64) -> f64 {
    let b = z.len();
    let n = z[0].len();
    let mut total = 0.0;
    for i in 0..b {
        let mut li = 0.0;
        for t1 in 0..n {
            for t2 in 0..n {
                if t1 == t2 {
                    continue;
                }
                let num = h(&z[i][t1], &z[i][t2], tau);
                let mut den = num;
                for j in 0..b {
                    if j == i {
                        continue;
                    }
                    den += h(&z[i][t1], &z[j][t1], tau);
                    den += h(&z[i][t1], &z[j][t2], tau);
                }
                li += -(num / den).ln();
            }
        }
        total += li;
    }
    total / b as f64
}

pub fn oracle_distinctive_pooled(z: &Views, zt: &Views, tau: f64) -> f64 {
    let b = z.len();
    let n = z[0].len();
    let mut total = 0.0;
    for i in 0..b {
        for t1 in 0..n {
            let num = h(&z[i][t1], &zt[i][t1], tau);
            let mut den = 0.0;
            for t2 in 0..n {
                if t2 == t1 {
                    continue;
                }
                den += h(&z[i][t1], &z[i][t2], tau);
                den += h(&z[i][t1], &zt[i][t2], tau);
            }
            total += -(num / den).ln();
        }
    }
    total / b as f64
}

pub fn oracle_distinctive_unpooled(local: &Views, slices: &Views, tau: f64) -> f64 {
    let b = local.len();
    let n = local[0].len();
    let mut total = 0.0;
    for i in 0..b {
        for t1 in 0..n {
            let num = h(&local[i][t1], &slices[i][t1], tau);
            let mut den = 0.0;
            for t2 in 0..n {
                if t2 == t1 {
                    continue;
                }
                den += h(&local[i][t1], &slices[i][t2], tau);
                den += h(&local[i][t1], &local[i][t2], tau);
                den += h(&slices[i][t1], &slices[i][t2], tau);
            }
            total += -(num / den).ln();
        }
    }
    total / b as f64
}

pub fn oracle_similarity_score(zi: &[Vec<f64>], zd: &[Vec<f64>]) -> f64 {
    let n = zi.len();
    let mut sum = 0.0;
    for a in 0..n {
        for b in 0..n {
            if a != b {
                sum += cos(&zi[a], &zi[b]) + cos(&zd[a], &zd[b]);
            }
        }
    }
    (sum / (2 * n * (n - 1)) as f64).clamp(0.0, 1.0)
}

pub fn oracle_distill(p_t: &[f64], p_s: &[f64]) -> f64 {
    let mut sum = 0.0;
    for c in 0..p_t.len() {
        sum += (p_t[c] - p_s[c]) * (p_t[c] - p_s[c]);
    }
    sum
}

pub fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

pub fn views(rng: &mut ChaCha8Rng, b: usize, n: usize, d: usize) -> Views {
    (0..b).map(|_| (0..n).map(|_| unit(rng, d)).collect()).collect()
}

pub fn simplex(rng: &mut ChaCha8Rng, c: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..c).map(|_| rng.random_range(0.01..1.0)).collect();
    let s: f64 = v.iter().sum();
    v.iter().map(|x| x / s).collect()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-12)
}

pub fn basis(d: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; d];
    v[k] = 1.0;
    v
}


pub fn dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize, f64) {
    (
        rng.random_range(2..=4),
        rng.random_range(2..=4),
        rng.random_range(2..=8),
        rng.random_range(0.1..1.0),
    )
}

pub fn invariant_grad_err(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, n, d, tau) = dims(&mut rng);
    let z = random_views(&mut rng, b, n, d);
    let lg = loss_invariant_grad(&ContrastiveBatch::new(z.clone(), tau)).unwrap();
    let num = numeric_grad(&flatten(&z), |x| {
        loss_invariant_grad(&ContrastiveBatch::new(unflatten(x, b, n, d), tau))
            .unwrap()
            .value
    });
    rel_err(&flatten(&lg.grad), &num)
}

pub fn distinctive_pooled_grad_err(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
    let (b, n, d, tau) = dims(&mut rng);
    let z = random_views(&mut rng, b, n, d);
    let zt = random_views(&mut rng, b, n, d);
    let lg = loss_distinctive_pooled_grad(&ContrastiveBatch::with_second_view(z.clone(), zt.clone(), tau)).unwrap();
    let num_z = numeric_grad(&flatten(&z), |x| {
        loss_distinctive_pooled_grad(&ContrastiveBatch::with_second_view(unflatten(x, b, n, d), zt.clone(), tau))
            .unwrap()
            .value
    });
    let num_zt = numeric_grad(&flatten(&zt), |x| {
        loss_distinctive_pooled_grad(&ContrastiveBatch::with_second_view(z.clone(), unflatten(x, b, n, d), tau))
            .unwrap()
            .value
    });
    rel_err(&flatten(&lg.grad), &num_z).max(rel_err(&flatten(&lg.grad_other.unwrap()), &num_zt))
}

pub fn distinctive_unpooled_grad_err(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
    let (b, n, d, tau) = dims(&mut rng);
    let local = random_views(&mut rng, b, n, d);
    let slices = random_views(&mut rng, b, n, d);
    let lg = loss_distinctive_unpooled_grad(&local, &slices, tau).unwrap();
    let num_l = numeric_grad(&flatten(&local), |x| {
        loss_distinctive_unpooled_grad(&unflatten(x, b, n, d), &slices, tau).unwrap().value
    });
    let num_s = numeric_grad(&flatten(&slices), |x| {
        loss_distinctive_unpooled_grad(&local, &unflatten(x, b, n, d), tau).unwrap().value
    });
    rel_err(&flatten(&lg.grad), &num_l).max(rel_err(&flatten(&lg.grad_other.unwrap()), &num_s))
}

pub fn cross_entropy_grad_err(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
    let c = rng.random_range(2..=10);
    let logits: Vec<f64> = (0..c).map(|_| rng.random_range(-3.0..3.0)).collect();
    let y = rng.random_range(0..c);
    let (_, grad) = cross_entropy_logits(&logits, y).unwrap();
    let num = numeric_grad(&logits, |x| cross_entropy_logits(x, y).unwrap().0);
    rel_err(&grad, &num)
}

/// Error of the distillation gradient with respect to the student
/// probabilities and, through the softmax, the student logits.
pub fn distill_grad_err(divergence: Divergence, seed: u64) -> f64 {
    let base = match divergence {
        Divergence::L2 => 400,
        Divergence::Kl => 500,
        Divergence::Js => 600,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(base + seed);
    let c = rng.random_range(2..=10);
    let teacher: Vec<f64> = (0..c).map(|_| rng.random_range(-3.0..3.0)).collect();
    let p_t = softmax(&teacher);
    let student: Vec<f64> = (0..c).map(|_| rng.random_range(-3.0..3.0)).collect();
    let p_s = softmax(&student);
    let (_, d_ps) = distill(&p_t, &p_s, divergence).unwrap();
    let num_p = numeric_grad(&p_s, |x| distill(&p_t, x, divergence).unwrap().0);
    let analytic = softmax_backward(&p_s, &d_ps);
    let num_l = numeric_grad(&student, |x| distill(&p_t, &softmax(x), divergence).unwrap().0);
    rel_err(&d_ps, &num_p).max(rel_err(&analytic, &num_l))
}
