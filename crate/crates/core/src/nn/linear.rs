use serde::{Deserialize, Serialize};

use super::{axpy, dot, ParamSet};
use crate::rng::Rng;

/// Affine map `y = x W + b`, with `W` stored row-major as `in_dim x out_dim`.
///
/// Row storage makes one-hot inputs a contiguous row read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    weight: usize,
    bias: Option<usize>,
}

impl Linear {
    pub fn new(params: &mut ParamSet, name: &str, in_dim: usize, out_dim: usize, bias: bool, rng: &mut Rng) -> Self {
        let weight = params.alloc_uniform(&format!("{name}.weight"), in_dim * out_dim, in_dim, rng);
        let bias = bias.then(|| params.alloc_uniform(&format!("{name}.bias"), out_dim, in_dim, rng));
        Self {
            in_dim,
            out_dim,
            weight,
            bias,
        }
    }

    #[inline]
    fn row<'a>(&self, p: &'a [f64], i: usize) -> &'a [f64] {
        let start = self.weight + i * self.out_dim;
        &p[start..start + self.out_dim]
    }

    fn init_output(&self, p: &[f64]) -> Vec<f64> {
        match self.bias {
            Some(b) => p[b..b + self.out_dim].to_vec(),
            None => vec![0.0; self.out_dim],
        }
    }

    pub fn forward(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        let mut y = self.init_output(p);
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                axpy(xi, self.row(p, i), &mut y);
            }
        }
        y
    }

    /// Forward pass for an input given as `(index, value)` pairs.
    pub fn forward_sparse(&self, p: &[f64], x: &[(usize, f64)]) -> Vec<f64> {
        let mut y = self.init_output(p);
        for &(i, xi) in x {
            axpy(xi, self.row(p, i), &mut y);
        }
        y
    }

    /// Weight row `i` without bias: the projection of a one-hot vector by a bias-free map.
    pub fn weight_row(&self, p: &[f64], i: usize) -> Vec<f64> {
        self.row(p, i).to_vec()
    }

    fn accumulate_bias(&self, dy: &[f64], g: &mut [f64]) {
        if let Some(b) = self.bias {
            axpy(1.0, dy, &mut g[b..b + self.out_dim]);
        }
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&self, p: &[f64], x: &[f64], dy: &[f64], g: &mut [f64]) -> Vec<f64> {
        self.accumulate_bias(dy, g);
        let mut dx = vec![0.0; self.in_dim];
        for (i, &xi) in x.iter().enumerate() {
            dx[i] = dot(self.row(p, i), dy);
            if xi != 0.0 {
                let start = self.weight + i * self.out_dim;
                axpy(xi, dy, &mut g[start..start + self.out_dim]);
            }
        }
        dx
    }

    pub fn backward_params_only(&self, x: &[f64], dy: &[f64], g: &mut [f64]) {
        self.accumulate_bias(dy, g);
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                let start = self.weight + i * self.out_dim;
                axpy(xi, dy, &mut g[start..start + self.out_dim]);
            }
        }
    }

    pub fn backward_sparse(&self, x: &[(usize, f64)], dy: &[f64], g: &mut [f64]) {
        self.accumulate_bias(dy, g);
        for &(i, xi) in x {
            let start = self.weight + i * self.out_dim;
            axpy(xi, dy, &mut g[start..start + self.out_dim]);
        }
    }

    /// Single output unit `o` of the forward pass.
    pub fn forward_unit(&self, p: &[f64], x: &[f64], o: usize) -> f64 {
        let mut y = self.bias.map_or(0.0, |b| p[b + o]);
        for (i, &xi) in x.iter().enumerate() {
            y += xi * p[self.weight + i * self.out_dim + o];
        }
        y
    }

    /// Backward pass for a gradient that touches only output unit `o`.
    pub fn backward_unit(&self, p: &[f64], x: &[f64], o: usize, dy: f64, g: &mut [f64]) -> Vec<f64> {
        if let Some(b) = self.bias {
            g[b + o] += dy;
        }
        let mut dx = vec![0.0; self.in_dim];
        for (i, &xi) in x.iter().enumerate() {
            let idx = self.weight + i * self.out_dim + o;
            dx[i] = p[idx] * dy;
            g[idx] += xi * dy;
        }
        dx
    }

    pub fn backward_weight_row(&self, i: usize, dy: &[f64], g: &mut [f64]) {
        let start = self.weight + i * self.out_dim;
        axpy(1.0, dy, &mut g[start..start + self.out_dim]);
    }
}
