//! Loss values against straightforward loop implementations.

mod common;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use timebalance::balance::{combine_teachers, similarity_matrix, similarity_score};
use timebalance::losses::{
    cross_entropy_logits, loss_cross_entropy, loss_distill, loss_distinctive_pooled, loss_distinctive_unpooled,
    loss_invariant, ContrastiveBatch,
};

#[test]
fn invariant_matches_loops_on_random_batches() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for _ in 0..200 {
        let b = rng.random_range(2..=4);
        let n = rng.random_range(2..=4);
        let d = rng.random_range(2..=8);
        let tau = rng.random_range(0.05..1.0);
        let z = views(&mut rng, b, n, d);
        let got = loss_invariant(&ContrastiveBatch::new(z.clone(), tau)).unwrap();
        let want = oracle_invariant(&z, tau);
        assert!(rel_close(got, want, 1e-6), "{got} vs {want}");
    }
}

#[test]
fn distinctive_pooled_matches_loops_on_random_batches() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for _ in 0..200 {
        let b = rng.random_range(1..=4);
        let n = rng.random_range(2..=4);
        let d = rng.random_range(2..=8);
        let tau = rng.random_range(0.05..1.0);
        let z = views(&mut rng, b, n, d);
        let zt = views(&mut rng, b, n, d);
        let got = loss_distinctive_pooled(&ContrastiveBatch::with_second_view(z.clone(), zt.clone(), tau)).unwrap();
        let want = oracle_distinctive_pooled(&z, &zt, tau);
        assert!(rel_close(got, want, 1e-6), "{got} vs {want}");
    }
}

#[test]
fn distinctive_unpooled_matches_loops_on_random_batches() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    for _ in 0..200 {
        let b = rng.random_range(1..=4);
        let n = rng.random_range(2..=4);
        let d = rng.random_range(2..=8);
        let tau = rng.random_range(0.05..1.0);
        let local = views(&mut rng, b, n, d);
        let slices = views(&mut rng, b, n, d);
        let got = loss_distinctive_unpooled(&local, &slices, tau).unwrap();
        let want = oracle_distinctive_unpooled(&local, &slices, tau);
        assert!(rel_close(got, want, 1e-6), "{got} vs {want}");
    }
}

#[test]
fn similarity_score_matches_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    for _ in 0..200 {
        let n = rng.random_range(2..=4);
        let d = rng.random_range(2..=8);
        let zi: Vec<Vec<f64>> = (0..n).map(|_| unit(&mut rng, d)).collect();
        let zd: Vec<Vec<f64>> = (0..n).map(|_| unit(&mut rng, d)).collect();
        let ci = similarity_matrix(&zi).unwrap();
        let cd = similarity_matrix(&zd).unwrap();
        for a in 0..n {
            for b in 0..n {
                assert!(rel_close(ci[a][b], cos(&zi[a], &zi[b]), 1e-6) || (ci[a][b] - cos(&zi[a], &zi[b])).abs() < 1e-12);
            }
        }
        let got = similarity_score(&ci, &cd).unwrap();
        let want = oracle_similarity_score(&zi, &zd);
        assert!((got - want).abs() <= 1e-6 * want.abs().max(1e-9) || (got - want).abs() < 1e-12, "{got} vs {want}");
    }
}

#[test]
fn combine_and_distill_match_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    for _ in 0..200 {
        let c = rng.random_range(2..=8);
        let p_i = simplex(&mut rng, c);
        let p_d = simplex(&mut rng, c);
        let s: f64 = rng.random_range(0.0..=1.0);
        let p_t = combine_teachers(&p_i, &p_d, s).unwrap();
        for k in 0..c {
            let want = s * p_i[k] + (1.0 - s) * p_d[k];
            assert!(rel_close(p_t[k], want, 1e-6));
        }
        let p_s = simplex(&mut rng, c);
        assert!(rel_close(loss_distill(&p_t, &p_s).unwrap(), oracle_distill(&p_t, &p_s), 1e-6));
    }
}

#[test]
fn cross_entropy_matches_log_of_softmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    for _ in 0..200 {
        let c = rng.random_range(2..=8);
        let logits: Vec<f64> = (0..c).map(|_| rng.random_range(-5.0..5.0)).collect();
        let y = rng.random_range(0..c);
        let mut z = 0.0;
        for l in &logits {
            z += l.exp();
        }
        let want = -(logits[y].exp() / z).ln();
        let (got, _) = cross_entropy_logits(&logits, y).unwrap();
        assert!(rel_close(got, want, 1e-6), "{got} vs {want}");
    }
}

#[test]
fn invariant_orthogonal_closed_form() {
    let z = vec![vec![basis(4, 0), basis(4, 1)], vec![basis(4, 2), basis(4, 3)]];
    let got = loss_invariant(&ContrastiveBatch::new(z.clone(), 1.0)).unwrap();
    let want = 2.0 * 3f64.ln();
    assert!(rel_close(got, want, 1e-6), "{got} vs {want}");
    assert!(rel_close(oracle_invariant(&z, 1.0), want, 1e-12));
}

#[test]
fn distinctive_pooled_closed_form() {
    let z = vec![vec![basis(2, 0), basis(2, 1)]];
    let got = loss_distinctive_pooled(&ContrastiveBatch::with_second_view(z.clone(), z.clone(), 0.1)).unwrap();
    let want = 2.0 * (2f64.ln() - 10.0);
    assert!(rel_close(got, want, 1e-6), "{got} vs {want}");
    assert!(rel_close(oracle_distinctive_pooled(&z, &z, 0.1), want, 1e-12));
}

#[test]
fn distinctive_unpooled_closed_form() {
    let z = vec![vec![basis(2, 0), basis(2, 1)]];
    let got = loss_distinctive_unpooled(&z, &z, 0.1).unwrap();
    let want = 2.0 * (3f64.ln() - 10.0);
    assert!(rel_close(got, want, 1e-6), "{got} vs {want}");
    assert!(rel_close(oracle_distinctive_unpooled(&z, &z, 0.1), want, 1e-12));
}

#[test]
fn half_score_and_midpoint_closed_forms() {
    let ones = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
    let eye = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    assert_eq!(similarity_score(&ones, &eye).unwrap(), 0.5);
    assert_eq!(similarity_score(&ones, &ones).unwrap(), 1.0);
    let p_t: Vec<f64> = combine_teachers(&[0.8, 0.2], &[0.2, 0.8], 0.5).unwrap();
    assert!((p_t[0] - 0.5).abs() < 1e-15 && (p_t[1] - 0.5).abs() < 1e-15);
}

#[test]
fn cross_entropy_and_distill_reference_values() {
    assert!(rel_close(loss_cross_entropy(&[0.5, 0.5], 0).unwrap(), 2f64.ln(), 1e-9));
    assert!(rel_close(loss_cross_entropy(&[0.1; 10], 3).unwrap(), 10f64.ln(), 1e-9));
    assert_eq!(loss_cross_entropy(&[1.0, 0.0], 0).unwrap(), 0.0);
    assert_eq!(loss_distill(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 2.0);
    assert_eq!(loss_distill(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
}
