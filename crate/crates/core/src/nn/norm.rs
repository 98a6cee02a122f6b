use super::Vol;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const NORM_EPS: f64 = 1e-5;

/// Per-sample group normalisation over `(T, H, W, channels-in-group)` with a
/// per-channel affine transform. Identical in training and evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupNorm<T> {
    pub groups: usize,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct GroupNormCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

impl<T: Scalar> GroupNorm<T> {
    pub fn new(channels: usize, groups: usize) -> Result<Self> {
        if groups == 0 || channels % groups != 0 {
            return Err(Error::contract(format!(
                "{channels} channels cannot be split into {groups} groups"
            )));
        }
        Ok(Self {
            groups,
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            groups: self.groups,
            gamma: vec![T::zero(); self.gamma.len()],
            beta: vec![T::zero(); self.beta.len()],
        }
    }

    pub fn forward(&self, x: &Vol<T>) -> (Vol<T>, GroupNormCache<T>) {
        let c = x.c;
        let cg = c / self.groups;
        let voxels = x.voxels();
        let count = T::of((voxels * cg) as f64);
        let eps = T::of(NORM_EPS);
        let mut mean = vec![T::zero(); self.groups];
        for v in 0..voxels {
            for ch in 0..c {
                mean[ch / cg] += x.data[v * c + ch];
            }
        }
        for m in mean.iter_mut() {
            *m /= count;
        }
        let mut var = vec![T::zero(); self.groups];
        for v in 0..voxels {
            for ch in 0..c {
                let d = x.data[v * c + ch] - mean[ch / cg];
                var[ch / cg] += d * d;
            }
        }
        let inv_std: Vec<T> = var
            .iter()
            .map(|&s| T::one() / (s / count + eps).sqrt())
            .collect();
        let mut out = Vol::zeros(x.t, x.h, x.w, c);
        let mut xhat = vec![T::zero(); x.data.len()];
        for v in 0..voxels {
            for ch in 0..c {
                let i = v * c + ch;
                let g = ch / cg;
                let xh = (x.data[i] - mean[g]) * inv_std[g];
                xhat[i] = xh;
                out.data[i] = self.gamma[ch] * xh + self.beta[ch];
            }
        }
        (out, GroupNormCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &GroupNormCache<T>, dout: &Vol<T>, grad: &mut Self) -> Vol<T> {
        let c = dout.c;
        let cg = c / self.groups;
        let voxels = dout.voxels();
        let count = T::of((voxels * cg) as f64);
        let mut sum_dxhat = vec![T::zero(); self.groups];
        let mut sum_dxhat_xhat = vec![T::zero(); self.groups];
        let mut dxhat = vec![T::zero(); dout.data.len()];
        for v in 0..voxels {
            for ch in 0..c {
                let i = v * c + ch;
                let dy = dout.data[i];
                let xh = cache.xhat[i];
                grad.gamma[ch] += dy * xh;
                grad.beta[ch] += dy;
                let d = dy * self.gamma[ch];
                dxhat[i] = d;
                sum_dxhat[ch / cg] += d;
                sum_dxhat_xhat[ch / cg] += d * xh;
            }
        }
        let mut dx = Vol::zeros(dout.t, dout.h, dout.w, c);
        for v in 0..voxels {
            for ch in 0..c {
                let i = v * c + ch;
                let g = ch / cg;
                dx.data[i] = cache.inv_std[g] / count
                    * (count * dxhat[i] - sum_dxhat[g] - cache.xhat[i] * sum_dxhat_xhat[g]);
            }
        }
        dx
    }
}

/// Batch normalisation over a batch of feature vectors.
///
/// Training mode normalises with batch statistics and updates the running
/// estimates (momentum 0.1, unbiased variance); evaluation mode uses the
/// running estimates only.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm1d<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

/// Biased batch mean and variance of one training-mode pass.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub count: usize,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    xhat: Vec<Vec<T>>,
    inv_std: Vec<T>,
    train: bool,
}

const MOMENTUM: f64 = 0.1;

impl<T: Scalar> BatchNorm1d<T> {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: vec![T::one(); dim],
            beta: vec![T::zero(); dim],
            running_mean: vec![T::zero(); dim],
            running_var: vec![T::one(); dim],
        }
    }

    pub fn zeros_like(&self) -> Self {
        let dim = self.gamma.len();
        Self {
            gamma: vec![T::zero(); dim],
            beta: vec![T::zero(); dim],
            running_mean: vec![T::zero(); dim],
            running_var: vec![T::zero(); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    /// Normalises a batch. Training mode uses batch statistics and returns
    /// them so the caller can fold them into the running estimates with
    /// [`Self::update_running`]; evaluation mode uses the running estimates.
    pub fn forward(&self, rows: &[Vec<T>], train: bool) -> Result<(Vec<Vec<T>>, BatchNormCache<T>, Option<BatchStats<T>>)> {
        let dim = self.dim();
        let eps = T::of(NORM_EPS);
        if !train {
            let inv_std: Vec<T> = self
                .running_var
                .iter()
                .map(|&v| T::one() / (v + eps).sqrt())
                .collect();
            let (out, xhat) = self.affine(rows, &self.running_mean, &inv_std);
            return Ok((out, BatchNormCache { xhat, inv_std, train }, None));
        }
        let n = rows.len();
        if n < 2 {
            return Err(Error::contract(
                "batch normalisation in training mode needs at least 2 rows",
            ));
        }
        let nf = T::of(n as f64);
        let mut mean = vec![T::zero(); dim];
        for r in rows {
            for (m, &v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= nf);
        let mut var = vec![T::zero(); dim];
        for r in rows {
            for ((s, &v), &m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= nf);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (out, xhat) = self.affine(rows, &mean, &inv_std);
        Ok((
            out,
            BatchNormCache { xhat, inv_std, train },
            Some(BatchStats { mean, var, count: n }),
        ))
    }

    pub fn update_running(&mut self, stats: &BatchStats<T>) {
        let m = T::of(MOMENTUM);
        let nf = T::of(stats.count as f64);
        let unbias = nf / (nf - T::one());
        for d in 0..self.dim() {
            self.running_mean[d] = (T::one() - m) * self.running_mean[d] + m * stats.mean[d];
            self.running_var[d] = (T::one() - m) * self.running_var[d] + m * stats.var[d] * unbias;
        }
    }

    fn affine(&self, rows: &[Vec<T>], mean: &[T], inv_std: &[T]) -> (Vec<Vec<T>>, Vec<Vec<T>>) {
        let mut out = Vec::with_capacity(rows.len());
        let mut xhat = Vec::with_capacity(rows.len());
        for r in rows {
            let xh: Vec<T> = r
                .iter()
                .zip(mean)
                .zip(inv_std)
                .map(|((&v, &m), &s)| (v - m) * s)
                .collect();
            out.push(
                xh.iter()
                    .zip(&self.gamma)
                    .zip(&self.beta)
                    .map(|((&x, &g), &b)| g * x + b)
                    .collect(),
            );
            xhat.push(xh);
        }
        (out, xhat)
    }

    pub fn backward(&self, cache: &BatchNormCache<T>, dout: &[Vec<T>], grad: &mut Self) -> Vec<Vec<T>> {
        let dim = self.dim();
        let n = dout.len();
        let nf = T::of(n as f64);
        let mut sum_dxhat = vec![T::zero(); dim];
        let mut sum_dxhat_xhat = vec![T::zero(); dim];
        let mut dxhat = Vec::with_capacity(n);
        for (dy, xh) in dout.iter().zip(&cache.xhat) {
            let mut row = vec![T::zero(); dim];
            for d in 0..dim {
                grad.gamma[d] += dy[d] * xh[d];
                grad.beta[d] += dy[d];
                row[d] = dy[d] * self.gamma[d];
                sum_dxhat[d] += row[d];
                sum_dxhat_xhat[d] += row[d] * xh[d];
            }
            dxhat.push(row);
        }
        if !cache.train {
            return dxhat
                .into_iter()
                .map(|r| r.iter().zip(&cache.inv_std).map(|(&d, &s)| d * s).collect())
                .collect();
        }
        dxhat
            .iter()
            .zip(&cache.xhat)
            .map(|(dr, xr)| {
                (0..dim)
                    .map(|d| {
                        cache.inv_std[d] / nf
                            * (nf * dr[d] - sum_dxhat[d] - xr[d] * sum_dxhat_xhat[d])
                    })
                    .collect()
            })
            .collect()
    }
}
