//! Training objectives and their analytic gradients.
//!
//! Every contrastive loss here is a sum of terms
//! `-log( h(a, b) / sum_{(x, y) in D} h(x, y) )` with
//! `h(u, v) = exp(cos(u, v) / tau)`. They are evaluated in log space, so a
//! term is `-cos(a, b) / tau + logsumexp(cos(x, y) / tau)`.
//!
//! Denominator conventions:
//! * invariant loss: `D` holds the other instances' clips at `t1` and every
//!   instance's clip at `t2`, so the positive pair itself is part of `D`;
//! * both distinctive losses: `D` holds only temporally misaligned pairs.
//!   The positive is not in `D`, so these losses can be negative.
//!
//! Per-instance losses are averaged over the batch.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{dot, log_sum_exp, norm, Scalar};

/// Default contrastive temperature.
pub const DEFAULT_TAU: f64 = 0.1;

const PROB_FLOOR: f64 = 1e-12;

pub fn cosine<T: Scalar>(u1: &[T], u2: &[T]) -> T {
    dot(u1, u2) / (norm(u1) * norm(u2))
}

/// `exp(cos(u1, u2) / tau)`.
pub fn kernel_h<T: Scalar>(u1: &[T], u2: &[T], tau: T) -> Result<T> {
    check_tau(tau)?;
    if u1.len() != u2.len() {
        return Err(Error::contract("kernel arguments differ in length"));
    }
    if norm(u1) == T::zero() || norm(u2) == T::zero() {
        return Err(Error::Argument("kernel arguments must be nonzero".into()));
    }
    Ok((cosine(u1, u2) / tau).exp())
}

fn check_tau<T: Scalar>(tau: T) -> Result<()> {
    if !(tau > T::zero()) || !tau.is_finite() {
        return Err(Error::Argument(format!("temperature must be positive, got {tau}")));
    }
    Ok(())
}

/// Projections of a batch: `z[i][t]` is instance `i`, timestamp `t`.
#[derive(Debug, Clone)]
pub struct ContrastiveBatch<T> {
    pub z: Vec<Vec<Vec<T>>>,
    /// Second augmented view with identical indexing.
    pub z_tilde: Option<Vec<Vec<Vec<T>>>>,
    pub tau: T,
}

impl<T: Scalar> ContrastiveBatch<T> {
    pub fn new(z: Vec<Vec<Vec<T>>>, tau: T) -> Self {
        Self { z, z_tilde: None, tau }
    }

    pub fn with_second_view(z: Vec<Vec<Vec<T>>>, z_tilde: Vec<Vec<Vec<T>>>, tau: T) -> Self {
        Self {
            z,
            z_tilde: Some(z_tilde),
            tau,
        }
    }

    pub fn batch_size(&self) -> usize {
        self.z.len()
    }

    pub fn num_clips(&self) -> usize {
        self.z.first().map_or(0, Vec::len)
    }

    fn check_rectangular(views: &[Vec<Vec<T>>], n: usize) -> Result<()> {
        let dim = views.first().and_then(|v| v.first()).map_or(0, Vec::len);
        for inst in views {
            if inst.len() != n || inst.iter().any(|z| z.len() != dim) {
                return Err(Error::contract("ragged contrastive batch"));
            }
        }
        Ok(())
    }
}

/// Loss value plus gradients with respect to every input vector.
#[derive(Debug, Clone)]
pub struct LossAndGrad<T> {
    pub value: T,
    /// Same indexing as `ContrastiveBatch::z` (or the first argument).
    pub grad: Vec<Vec<Vec<T>>>,
    /// Same indexing as the second view / slices, when present.
    pub grad_other: Option<Vec<Vec<Vec<T>>>>,
}

/// Accumulates `-log softmax` terms over cosine similarities between a flat
/// list of vectors, together with the gradient of the total.
struct PairTerms<'a, T> {
    vecs: Vec<&'a [T]>,
    norms: Vec<T>,
    inv_tau: T,
    d_cos: Vec<T>,
    cos: Vec<Option<T>>,
    value: T,
}

impl<'a, T: Scalar> PairTerms<'a, T> {
    fn new(vecs: Vec<&'a [T]>, tau: T) -> Self {
        let n = vecs.len();
        Self {
            norms: vecs.iter().map(|v| norm(v)).collect(),
            vecs,
            inv_tau: T::one() / tau,
            d_cos: vec![T::zero(); n * n],
            cos: vec![None; n * n],
            value: T::zero(),
        }
    }

    fn cos(&mut self, a: usize, b: usize) -> T {
        let n = self.vecs.len();
        if let Some(c) = self.cos[a * n + b] {
            return c;
        }
        let c = dot(self.vecs[a], self.vecs[b]) / (self.norms[a] * self.norms[b]);
        self.cos[a * n + b] = Some(c);
        c
    }

    /// Adds `weight * -log(h(pos) / sum_{den} h)`.
    fn add(&mut self, pos: (usize, usize), den: &[(usize, usize)], weight: T) {
        let n = self.vecs.len();
        let logits: Vec<T> = den.iter().map(|&(x, y)| self.cos(x, y) * self.inv_tau).collect();
        let lse = log_sum_exp(&logits);
        let pos_logit = self.cos(pos.0, pos.1) * self.inv_tau;
        self.value += weight * (lse - pos_logit);
        self.d_cos[pos.0 * n + pos.1] -= weight * self.inv_tau;
        for (&(x, y), &l) in den.iter().zip(&logits) {
            self.d_cos[x * n + y] += weight * self.inv_tau * (l - lse).exp();
        }
    }

    fn finish(self) -> (T, Vec<Vec<T>>) {
        let n = self.vecs.len();
        let mut grads: Vec<Vec<T>> = self.vecs.iter().map(|v| vec![T::zero(); v.len()]).collect();
        for a in 0..n {
            for b in 0..n {
                let g = self.d_cos[a * n + b];
                if g == T::zero() {
                    continue;
                }
                let c = self.cos[a * n + b].expect("cosine cached when used");
                let (na, nb) = (self.norms[a], self.norms[b]);
                // d cos / d a = b / (|a||b|) - cos * a / |a|^2, symmetric for b.
                for k in 0..self.vecs[a].len() {
                    let va = self.vecs[a][k];
                    let vb = self.vecs[b][k];
                    grads[a][k] += g * (vb / (na * nb) - c * va / (na * na));
                    grads[b][k] += g * (va / (na * nb) - c * vb / (nb * nb));
                }
            }
        }
        (self.value, grads)
    }
}

fn unflatten<T: Clone>(flat: &mut std::vec::IntoIter<Vec<T>>, b: usize, n: usize) -> Vec<Vec<Vec<T>>> {
    (0..b).map(|_| flat.by_ref().take(n).collect()).collect()
}

/// Temporally-invariant contrastive loss, batch mean of the per-instance
/// loss summed over ordered clip pairs `(t1, t2)`, `t1 != t2`.
pub fn loss_invariant<T: Scalar>(batch: &ContrastiveBatch<T>) -> Result<T> {
    loss_invariant_grad(batch).map(|r| r.value)
}

pub fn loss_invariant_grad<T: Scalar>(batch: &ContrastiveBatch<T>) -> Result<LossAndGrad<T>> {
    check_tau(batch.tau)?;
    let (b, n) = (batch.batch_size(), batch.num_clips());
    if b < 2 {
        return Err(Error::contract("invariant loss needs at least 2 instances for negatives"));
    }
    if n < 2 {
        return Err(Error::contract("invariant loss needs at least 2 clips per instance"));
    }
    ContrastiveBatch::check_rectangular(&batch.z, n)?;
    let vecs: Vec<&[T]> = batch.z.iter().flatten().map(Vec::as_slice).collect();
    let id = |i: usize, t: usize| i * n + t;
    let weight = T::one() / T::of(b as f64);
    let mut terms = PairTerms::new(vecs, batch.tau);
    let mut den = Vec::with_capacity(2 * b);
    for i in 0..b {
        for t1 in 0..n {
            for t2 in (0..n).filter(|&t2| t2 != t1) {
                den.clear();
                den.extend((0..b).filter(|&j| j != i).map(|j| (id(i, t1), id(j, t1))));
                den.extend((0..b).map(|j| (id(i, t1), id(j, t2))));
                terms.add((id(i, t1), id(i, t2)), &den, weight);
            }
        }
    }
    let (value, grads) = terms.finish();
    Ok(LossAndGrad {
        value,
        grad: unflatten(&mut grads.into_iter(), b, n),
        grad_other: None,
    })
}

/// Pooled temporally-distinctive loss: positive is the same-timestamp pair
/// across the two views, negatives are cross-timestamp pairs of the same
/// instance only.
pub fn loss_distinctive_pooled<T: Scalar>(batch: &ContrastiveBatch<T>) -> Result<T> {
    loss_distinctive_pooled_grad(batch).map(|r| r.value)
}

pub fn loss_distinctive_pooled_grad<T: Scalar>(batch: &ContrastiveBatch<T>) -> Result<LossAndGrad<T>> {
    check_tau(batch.tau)?;
    let z_tilde = batch
        .z_tilde
        .as_ref()
        .ok_or_else(|| Error::contract("pooled distinctive loss needs a second augmented view"))?;
    let (b, n) = (batch.batch_size(), batch.num_clips());
    if n < 2 {
        return Err(Error::contract("distinctive loss needs at least 2 clips per instance"));
    }
    if b == 0 || z_tilde.len() != b {
        return Err(Error::contract("views disagree on batch size"));
    }
    ContrastiveBatch::check_rectangular(&batch.z, n)?;
    ContrastiveBatch::check_rectangular(z_tilde, n)?;
    let mut value = T::zero();
    let mut grad = Vec::with_capacity(b);
    let mut grad_tilde = Vec::with_capacity(b);
    let weight = T::one() / T::of(b as f64);
    for (zi, zti) in batch.z.iter().zip(z_tilde) {
        let (v, g, gt) = distinctive_instance(zi, zti, batch.tau, weight, false);
        value += v;
        grad.push(g);
        grad_tilde.push(gt);
    }
    Ok(LossAndGrad {
        value,
        grad,
        grad_other: Some(grad_tilde),
    })
}

/// Unpooled temporally-distinctive loss between local-clip projections and
/// the projections of the aligned temporal slices of the global clip.
///
/// For anchor timestamp `t1` the positive is `(local[t1], slice[t1])`; the
/// denominator sums, over every `t2 != t1`, the misaligned pairs
/// `(local[t1], slice[t2])`, `(local[t1], local[t2])` and
/// `(slice[t1], slice[t2])`.
pub fn loss_distinctive_unpooled<T: Scalar>(
    local_z: &[Vec<Vec<T>>],
    slice_z: &[Vec<Vec<T>>],
    tau: T,
) -> Result<T> {
    loss_distinctive_unpooled_grad(local_z, slice_z, tau).map(|r| r.value)
}

pub fn loss_distinctive_unpooled_grad<T: Scalar>(
    local_z: &[Vec<Vec<T>>],
    slice_z: &[Vec<Vec<T>>],
    tau: T,
) -> Result<LossAndGrad<T>> {
    check_tau(tau)?;
    let b = local_z.len();
    if b == 0 || slice_z.len() != b {
        return Err(Error::contract("local and slice batches differ in size"));
    }
    let n = local_z[0].len();
    if local_z.iter().zip(slice_z).any(|(l, s)| l.len() != s.len() || l.len() != n) {
        return Err(Error::contract("slice count does not match local clip count"));
    }
    if n < 2 {
        return Err(Error::contract("unpooled distinctive loss needs at least 2 timestamps"));
    }
    ContrastiveBatch::check_rectangular(local_z, n)?;
    ContrastiveBatch::check_rectangular(slice_z, n)?;
    let weight = T::one() / T::of(b as f64);
    let mut value = T::zero();
    let mut grad = Vec::with_capacity(b);
    let mut grad_slices = Vec::with_capacity(b);
    for (l, s) in local_z.iter().zip(slice_z) {
        let (v, g, gs) = distinctive_instance(l, s, tau, weight, true);
        value += v;
        grad.push(g);
        grad_slices.push(gs);
    }
    Ok(LossAndGrad {
        value,
        grad,
        grad_other: Some(grad_slices),
    })
}

type InstanceGrads<T> = (T, Vec<Vec<T>>, Vec<Vec<T>>);

/// Shared per-instance body of the two distinctive losses. `with_pair_negatives`
/// adds the `(other[t1], other[t2])` negatives used by the unpooled variant.
fn distinctive_instance<T: Scalar>(
    anchor: &[Vec<T>],
    other: &[Vec<T>],
    tau: T,
    weight: T,
    with_pair_negatives: bool,
) -> InstanceGrads<T> {
    let n = anchor.len();
    let vecs: Vec<&[T]> = anchor.iter().chain(other).map(Vec::as_slice).collect();
    let (a, o) = (|t: usize| t, |t: usize| n + t);
    let mut terms = PairTerms::new(vecs, tau);
    let mut den = Vec::with_capacity(3 * n);
    for t1 in 0..n {
        den.clear();
        for t2 in (0..n).filter(|&t2| t2 != t1) {
            den.push((a(t1), a(t2)));
            den.push((a(t1), o(t2)));
            if with_pair_negatives {
                den.push((o(t1), o(t2)));
            }
        }
        terms.add((a(t1), o(t1)), &den, weight);
    }
    let (value, mut grads) = terms.finish();
    let g_other = grads.split_off(n);
    (value, grads, g_other)
}

/// `-log p[y]` with the probability floored at `1e-12`.
pub fn loss_cross_entropy<T: Scalar>(p: &[T], y: usize) -> Result<T> {
    let py = *p
        .get(y)
        .ok_or_else(|| Error::contract(format!("label {y} out of range for {} classes", p.len())))?;
    Ok(-py.max(T::of(PROB_FLOOR)).ln())
}

/// Cross-entropy from logits via log-sum-exp; returns the loss and its
/// gradient with respect to the logits (`softmax - onehot`).
pub fn cross_entropy_logits<T: Scalar>(logits: &[T], y: usize) -> Result<(T, Vec<T>)> {
    if y >= logits.len() {
        return Err(Error::contract(format!(
            "label {y} out of range for {} classes",
            logits.len()
        )));
    }
    let lse = log_sum_exp(logits);
    let mut grad: Vec<T> = logits.iter().map(|&l| (l - lse).exp()).collect();
    grad[y] -= T::one();
    Ok((lse - logits[y], grad))
}

/// Divergence used to distil the combined teacher prediction into the
/// student.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Divergence {
    /// Sum of squared differences.
    #[default]
    L2,
    /// `KL(p_T || p_S)`.
    Kl,
    /// Jensen-Shannon divergence.
    Js,
}

impl Divergence {
    pub fn as_str(self) -> &'static str {
        match self {
            Divergence::L2 => "l2",
            Divergence::Kl => "kl",
            Divergence::Js => "js",
        }
    }
}

impl std::fmt::Display for Divergence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Divergence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(Divergence::L2),
            "kl" => Ok(Divergence::Kl),
            "js" => Ok(Divergence::Js),
            other => Err(Error::Argument(format!("unknown divergence '{other}'"))),
        }
    }
}

/// L2 distillation loss `sum_c (p_T[c] - p_S[c])^2`.
pub fn loss_distill<T: Scalar>(p_t: &[T], p_s: &[T]) -> Result<T> {
    distill(p_t, p_s, Divergence::L2).map(|(v, _)| v)
}

/// Distillation loss and its gradient with respect to the student
/// probabilities. The teacher side is a constant target.
pub fn distill<T: Scalar>(p_t: &[T], p_s: &[T], divergence: Divergence) -> Result<(T, Vec<T>)> {
    if p_t.len() != p_s.len() {
        return Err(Error::contract(format!(
            "teacher has {} classes, student {}",
            p_t.len(),
            p_s.len()
        )));
    }
    let floor = T::of(PROB_FLOOR);
    let half = T::of(0.5);
    Ok(match divergence {
        Divergence::L2 => {
            let value = p_t.iter().zip(p_s).map(|(&t, &s)| (t - s) * (t - s)).sum();
            let grad = p_t.iter().zip(p_s).map(|(&t, &s)| T::of(2.0) * (s - t)).collect();
            (value, grad)
        }
        Divergence::Kl => {
            let mut value = T::zero();
            let mut grad = Vec::with_capacity(p_s.len());
            for (&t, &s) in p_t.iter().zip(p_s) {
                let s = s.max(floor);
                if t > T::zero() {
                    value += t * (t.max(floor) / s).ln();
                }
                grad.push(-t / s);
            }
            (value, grad)
        }
        Divergence::Js => {
            let mut value = T::zero();
            let mut grad = Vec::with_capacity(p_s.len());
            for (&t, &s) in p_t.iter().zip(p_s) {
                let m = ((t + s) * half).max(floor);
                if t > T::zero() {
                    value += half * t * (t.max(floor) / m).ln();
                }
                if s > T::zero() {
                    value += half * s * (s.max(floor) / m).ln();
                }
                grad.push(half * (s.max(floor) / m).ln());
            }
            (value, grad)
        }
    })
}

/// Chain rule through softmax: gradient on probabilities to gradient on
/// logits.
pub fn softmax_backward<T: Scalar>(p: &[T], d_p: &[T]) -> Vec<T> {
    let inner = dot(p, d_p);
    p.iter().zip(d_p).map(|(&pi, &gi)| pi * (gi - inner)).collect()
}

/// `L_sup + omega * L_unsup`; unlabeled samples pass `None` for `L_sup`.
pub fn loss_total<T: Scalar>(l_sup: Option<T>, l_unsup: T, omega: T) -> Result<T> {
    if !(omega >= T::zero()) {
        return Err(Error::Argument(format!("omega must be non-negative, got {omega}")));
    }
    Ok(l_sup.unwrap_or_else(T::zero) + omega * l_unsup)
}
