//! Fully connected layer: `y = W x + b`.

use super::Scalar;
use crate::error::{Error, Result};

/// Weight matrix stored row-major `(out_dim, in_dim)` plus a bias vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    in_dim: usize,
    out_dim: usize,
}

impl<T: Scalar> LinearParams<T> {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        assert!(in_dim >= 1 && out_dim >= 1);
        LinearParams {
            weight: vec![T::zero(); in_dim * out_dim],
            bias: vec![T::zero(); out_dim],
            in_dim,
            out_dim,
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut p = Self::zeros(dim, dim);
        for i in 0..dim {
            p.weight[i * dim + i] = T::one();
        }
        p
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrads<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> LinearGrads<T> {
    pub fn zeros_like(p: &LinearParams<T>) -> Self {
        LinearGrads {
            weight: vec![T::zero(); p.weight.len()],
            bias: vec![T::zero(); p.bias.len()],
        }
    }

    pub fn add_assign(&mut self, other: &LinearGrads<T>) {
        for (a, b) in self.weight.iter_mut().zip(&other.weight) {
            *a = *a + *b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a = *a + *b;
        }
    }
}

pub fn linear_forward<T: Scalar>(x: &[T], p: &LinearParams<T>) -> Result<Vec<T>> {
    if x.len() != p.in_dim {
        return Err(Error::shape(
            "linear_forward",
            format!("input dim {} vs expected {}", x.len(), p.in_dim),
        ));
    }
    let mut y = Vec::with_capacity(p.out_dim);
    for o in 0..p.out_dim {
        let row = &p.weight[o * p.in_dim..(o + 1) * p.in_dim];
        let mut acc = p.bias[o];
        for (&w, &v) in row.iter().zip(x) {
            acc = acc + w * v;
        }
        y.push(acc);
    }
    Ok(y)
}

pub fn linear_backward<T: Scalar>(
    grad_out: &[T],
    saved_input: &[T],
    p: &LinearParams<T>,
) -> Result<(Vec<T>, LinearGrads<T>)> {
    if grad_out.len() != p.out_dim || saved_input.len() != p.in_dim {
        return Err(Error::shape(
            "linear_backward",
            format!(
                "grad_out dim {} (expected {}), input dim {} (expected {})",
                grad_out.len(),
                p.out_dim,
                saved_input.len(),
                p.in_dim
            ),
        ));
    }
    let mut grads = LinearGrads::zeros_like(p);
    let mut grad_x = vec![T::zero(); p.in_dim];
    for o in 0..p.out_dim {
        let g = grad_out[o];
        grads.bias[o] = g;
        let row = &p.weight[o * p.in_dim..(o + 1) * p.in_dim];
        let grow = &mut grads.weight[o * p.in_dim..(o + 1) * p.in_dim];
        for i in 0..p.in_dim {
            grow[i] = g * saved_input[i];
            grad_x[i] = grad_x[i] + row[i] * g;
        }
    }
    Ok((grad_x, grads))
}
