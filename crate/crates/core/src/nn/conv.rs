use rand::Rng;

use super::{uniform, Vol};
use crate::scalar::{Scalar, Strided, StridedMut};

/// 3x3x3 convolution, stride 1, zero padding 1.
///
/// Weight layout is `[kt][kh][kw][cin][cout]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3d<T> {
    pub cin: usize,
    pub cout: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

const K: usize = 3;

impl<T: Scalar> Conv3d<T> {
    pub fn new<R: Rng + ?Sized>(cin: usize, cout: usize, rng: &mut R) -> Self {
        let fan_in = (K * K * K * cin) as f64;
        Self {
            cin,
            cout,
            weight: uniform(rng, K * K * K * cin * cout, (6.0 / fan_in).sqrt()),
            bias: vec![T::zero(); cout],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            cin: self.cin,
            cout: self.cout,
            weight: vec![T::zero(); self.weight.len()],
            bias: vec![T::zero(); self.bias.len()],
        }
    }

    pub fn forward(&self, x: &Vol<T>) -> Vol<T> {
        assert_eq!(x.c, self.cin, "conv input channels");
        let cout = self.cout;
        let rows = x.voxels();
        let width = K * K * K * self.cin;
        let cols = im2col(x);
        let mut out = Vol::zeros(x.t, x.h, x.w, cout);
        for row in out.data.chunks_exact_mut(cout) {
            row.copy_from_slice(&self.bias);
        }
        T::gemm(
            rows,
            width,
            cout,
            Strided(&cols, width, 1),
            Strided(&self.weight, cout, 1),
            T::one(),
            StridedMut(&mut out.data, cout, 1),
        );
        out
    }

    /// Accumulates parameter gradients into `grad`; returns the input
    /// gradient when `need_dx` is set.
    pub fn backward(&self, x: &Vol<T>, dout: &Vol<T>, grad: &mut Self, need_dx: bool) -> Option<Vol<T>> {
        let cout = self.cout;
        let rows = x.voxels();
        let width = K * K * K * self.cin;
        for drow in dout.data.chunks_exact(cout) {
            for (gb, &d) in grad.bias.iter_mut().zip(drow) {
                *gb += d;
            }
        }
        let cols = im2col(x);
        T::gemm(
            width,
            rows,
            cout,
            Strided(&cols, 1, width),
            Strided(&dout.data, cout, 1),
            T::one(),
            StridedMut(&mut grad.weight, cout, 1),
        );
        if !need_dx {
            return None;
        }
        let mut dcols = cols;
        T::gemm(
            rows,
            cout,
            width,
            Strided(&dout.data, cout, 1),
            Strided(&self.weight, 1, cout),
            T::zero(),
            StridedMut(&mut dcols, width, 1),
        );
        Some(col2im(&dcols, x.t, x.h, x.w, self.cin))
    }
}

/// Visits every (output voxel, kernel tap) pair whose input voxel lies
/// inside the volume, passing the patch offset and the input offset.
fn for_each_tap(tt: usize, hh: usize, ww: usize, cin: usize, mut f: impl FnMut(usize, usize)) {
    let width = K * K * K * cin;
    for t in 0..tt {
        for y in 0..hh {
            for xx in 0..ww {
                let row = ((t * hh + y) * ww + xx) * width;
                for kt in 0..K {
                    let Some(ti) = shifted(t, kt, tt) else { continue };
                    for ky in 0..K {
                        let Some(yi) = shifted(y, ky, hh) else { continue };
                        for kx in 0..K {
                            let Some(xi) = shifted(xx, kx, ww) else { continue };
                            let tap = row + ((kt * K + ky) * K + kx) * cin;
                            f(tap, ((ti * hh + yi) * ww + xi) * cin);
                        }
                    }
                }
            }
        }
    }
}

/// Patch matrix with one row per output voxel and `27 * cin` columns.
fn im2col<T: Scalar>(x: &Vol<T>) -> Vec<T> {
    let cin = x.c;
    let mut cols = vec![T::zero(); x.voxels() * K * K * K * cin];
    for_each_tap(x.t, x.h, x.w, cin, |tap, src| {
        cols[tap..tap + cin].copy_from_slice(&x.data[src..src + cin]);
    });
    cols
}

fn col2im<T: Scalar>(cols: &[T], tt: usize, hh: usize, ww: usize, cin: usize) -> Vol<T> {
    let mut dx = Vol::zeros(tt, hh, ww, cin);
    for_each_tap(tt, hh, ww, cin, |tap, dst| {
        for (d, &g) in dx.data[dst..dst + cin].iter_mut().zip(&cols[tap..tap + cin]) {
            *d += g;
        }
    });
    dx
}

#[inline]
fn shifted(pos: usize, k: usize, len: usize) -> Option<usize> {
    let p = pos + k;
    (p >= 1 && p - 1 < len).then(|| p - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive(conv: &Conv3d<f64>, x: &Vol<f64>) -> Vol<f64> {
        let mut out = Vol::zeros(x.t, x.h, x.w, conv.cout);
        for t in 0..x.t as isize {
            for y in 0..x.h as isize {
                for xx in 0..x.w as isize {
                    for co in 0..conv.cout {
                        let mut acc = conv.bias[co];
                        for kt in -1..=1isize {
                            for ky in -1..=1isize {
                                for kx in -1..=1isize {
                                    let (ti, yi, xi) = (t + kt, y + ky, xx + kx);
                                    if ti < 0 || yi < 0 || xi < 0 || ti >= x.t as isize || yi >= x.h as isize || xi >= x.w as isize {
                                        continue;
                                    }
                                    for ci in 0..conv.cin {
                                        let widx = ((((kt + 1) * 3 + ky + 1) * 3 + kx + 1) as usize * conv.cin + ci) * conv.cout + co;
                                        let xidx = (((ti as usize * x.h) + yi as usize) * x.w + xi as usize) * x.c + ci;
                                        acc += conv.weight[widx] * x.data[xidx];
                                    }
                                }
                            }
                        }
                        let o = (((t as usize * x.h) + y as usize) * x.w + xx as usize) * conv.cout + co;
                        out.data[o] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn matches_naive_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut conv = Conv3d::<f64>::new(2, 3, &mut rng);
        conv.bias = vec![0.1, -0.2, 0.3];
        let mut x = Vol::zeros(3, 4, 5, 2);
        for v in x.data.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let fast = conv.forward(&x);
        let slow = naive(&conv, &x);
        for (a, b) in fast.data.iter().zip(&slow.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let conv = Conv3d::<f64>::new(2, 2, &mut rng);
        let mut x = Vol::zeros(2, 3, 3, 2);
        for v in x.data.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let mut upstream = Vol::zeros(2, 3, 3, 2);
        for v in upstream.data.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let objective = |x: &Vol<f64>| -> f64 {
            conv.forward(x).data.iter().zip(&upstream.data).map(|(a, b)| a * b).sum()
        };
        let mut grad = conv.zeros_like();
        let dx = conv.backward(&x, &upstream, &mut grad, true).unwrap();
        let h = 1e-6;
        for i in 0..x.data.len() {
            let mut xp = x.clone();
            xp.data[i] += h;
            let mut xm = x.clone();
            xm.data[i] -= h;
            let fd = (objective(&xp) - objective(&xm)) / (2.0 * h);
            assert!((fd - dx.data[i]).abs() < 1e-6, "{i}: {fd} vs {}", dx.data[i]);
        }
    }

    #[test]
    fn weight_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let conv = Conv3d::<f64>::new(2, 3, &mut rng);
        let mut x = Vol::zeros(3, 3, 2, 2);
        for v in x.data.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let mut upstream = Vol::zeros(3, 3, 2, 3);
        for v in upstream.data.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let objective = |c: &Conv3d<f64>| -> f64 {
            c.forward(&x).data.iter().zip(&upstream.data).map(|(a, b)| a * b).sum()
        };
        let mut grad = conv.zeros_like();
        assert!(conv.backward(&x, &upstream, &mut grad, false).is_none());
        let h = 1e-6;
        for i in 0..conv.weight.len() {
            let mut cp = conv.clone();
            cp.weight[i] += h;
            let mut cm = conv.clone();
            cm.weight[i] -= h;
            let fd = (objective(&cp) - objective(&cm)) / (2.0 * h);
            assert!((fd - grad.weight[i]).abs() < 1e-6, "{i}: {fd} vs {}", grad.weight[i]);
        }
        for i in 0..conv.bias.len() {
            let want: f64 = upstream.data.iter().skip(i).step_by(3).sum();
            assert!((want - grad.bias[i]).abs() < 1e-12);
        }
    }
}
