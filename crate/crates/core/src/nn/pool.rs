use super::Vol;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub fn relu<T: Scalar>(x: &mut Vol<T>) {
    for v in x.data.iter_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Gradient of ReLU given its *output*.
pub fn relu_backward<T: Scalar>(out: &Vol<T>, dout: &mut Vol<T>) {
    for (d, &o) in dout.data.iter_mut().zip(&out.data) {
        if o <= T::zero() {
            *d = T::zero();
        }
    }
}

/// Non-overlapping average pooling with window `(pt, ph, pw)`.
pub fn avg_pool3d<T: Scalar>(x: &Vol<T>, (pt, ph, pw): (usize, usize, usize)) -> Result<Vol<T>> {
    if x.t % pt != 0 || x.h % ph != 0 || x.w % pw != 0 {
        return Err(Error::contract(format!(
            "pool window {pt}x{ph}x{pw} does not tile volume {}x{}x{}",
            x.t, x.h, x.w
        )));
    }
    let (ot, oh, ow, c) = (x.t / pt, x.h / ph, x.w / pw, x.c);
    let mut out = Vol::zeros(ot, oh, ow, c);
    let scale = T::one() / T::of((pt * ph * pw) as f64);
    for t in 0..x.t {
        for y in 0..x.h {
            for xx in 0..x.w {
                let i = ((t * x.h + y) * x.w + xx) * c;
                let o = (((t / pt) * oh + y / ph) * ow + xx / pw) * c;
                for ch in 0..c {
                    out.data[o + ch] += x.data[i + ch] * scale;
                }
            }
        }
    }
    Ok(out)
}

pub fn avg_pool3d_backward<T: Scalar>(
    input_dims: (usize, usize, usize, usize),
    dout: &Vol<T>,
    (pt, ph, pw): (usize, usize, usize),
) -> Vol<T> {
    let (tt, hh, ww, c) = input_dims;
    let mut dx = Vol::zeros(tt, hh, ww, c);
    let scale = T::one() / T::of((pt * ph * pw) as f64);
    for t in 0..tt {
        for y in 0..hh {
            for xx in 0..ww {
                let i = ((t * hh + y) * ww + xx) * c;
                let o = (((t / pt) * dout.h + y / ph) * dout.w + xx / pw) * c;
                for ch in 0..c {
                    dx.data[i + ch] = dout.data[o + ch] * scale;
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pooling_averages_blocks() {
        let mut x = Vol::<f64>::zeros(2, 2, 2, 1);
        x.data = (0..8).map(|v| v as f64).collect();
        let out = avg_pool3d(&x, (2, 2, 2)).unwrap();
        assert_eq!(out.data, vec![3.5]);
        let out = avg_pool3d(&x, (2, 1, 1)).unwrap();
        assert_eq!(out.data, vec![2.0, 3.0, 4.0, 5.0]);
        assert!(avg_pool3d(&x, (3, 1, 1)).is_err());
    }
}
