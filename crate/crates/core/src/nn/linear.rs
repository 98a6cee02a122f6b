use rand::Rng;

use super::{axpy, uniform};
use crate::scalar::{dot, Scalar};

/// Fully connected layer, weight layout `[input][output]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub input: usize,
    pub output: usize,
    pub weight: Vec<T>,
    pub bias: Option<Vec<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, bias: bool, rng: &mut R) -> Self {
        let bound = (1.0 / input as f64).sqrt();
        Self {
            input,
            output,
            weight: uniform(rng, input * output, bound),
            bias: bias.then(|| uniform(rng, output, bound)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            input: self.input,
            output: self.output,
            weight: vec![T::zero(); self.weight.len()],
            bias: self.bias.as_ref().map(|b| vec![T::zero(); b.len()]),
        }
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.input);
        let mut out = match &self.bias {
            Some(b) => b.clone(),
            None => vec![T::zero(); self.output],
        };
        for (i, &v) in x.iter().enumerate() {
            axpy(v, &self.weight[i * self.output..(i + 1) * self.output], &mut out);
        }
        out
    }

    pub fn backward(&self, x: &[T], dout: &[T], grad: &mut Self) -> Vec<T> {
        if let Some(gb) = grad.bias.as_mut() {
            for (g, &d) in gb.iter_mut().zip(dout) {
                *g += d;
            }
        }
        let mut dx = vec![T::zero(); self.input];
        for (i, &v) in x.iter().enumerate() {
            let span = i * self.output..(i + 1) * self.output;
            axpy(v, dout, &mut grad.weight[span.clone()]);
            dx[i] = dot(&self.weight[span], dout);
        }
        dx
    }
}
