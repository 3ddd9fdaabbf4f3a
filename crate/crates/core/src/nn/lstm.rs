use serde::{Deserialize, Serialize};

use super::{sigmoid, Linear, ParamSet};
use crate::rng::Rng;

/// Single-layer LSTM cell; gate order is input, forget, cell, output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lstm {
    pub input_dim: usize,
    pub hidden_dim: usize,
    gates: Linear,
}

/// Activations retained from one step for the backward pass.
#[derive(Clone, Debug)]
pub struct LstmStep {
    input: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    tanh_c: Vec<f64>,
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl Lstm {
    pub fn new(params: &mut ParamSet, name: &str, input_dim: usize, hidden_dim: usize, rng: &mut Rng) -> Self {
        let gates = Linear::new(params, &format!("{name}.gates"), input_dim + hidden_dim, 4 * hidden_dim, true, rng);
        Self {
            input_dim,
            hidden_dim,
            gates,
        }
    }

    pub fn zero_state(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![0.0; self.hidden_dim], vec![0.0; self.hidden_dim])
    }

    pub fn step(&self, p: &[f64], x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> LstmStep {
        let hd = self.hidden_dim;
        let mut input = Vec::with_capacity(self.input_dim + hd);
        input.extend_from_slice(x);
        input.extend_from_slice(h_prev);
        let pre = self.gates.forward(p, &input);
        let i: Vec<f64> = pre[..hd].iter().map(|&v| sigmoid(v)).collect();
        let f: Vec<f64> = pre[hd..2 * hd].iter().map(|&v| sigmoid(v)).collect();
        let g: Vec<f64> = pre[2 * hd..3 * hd].iter().map(|v| v.tanh()).collect();
        let o: Vec<f64> = pre[3 * hd..].iter().map(|&v| sigmoid(v)).collect();
        let c: Vec<f64> = (0..hd).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let h: Vec<f64> = (0..hd).map(|k| o[k] * tanh_c[k]).collect();
        LstmStep {
            input,
            c_prev: c_prev.to_vec(),
            i,
            f,
            g,
            o,
            tanh_c,
            h,
            c,
        }
    }

    /// Backpropagates `(dh, dc)` through one step; returns `(dx, dh_prev, dc_prev)`.
    pub fn backward_step(
        &self,
        p: &[f64],
        step: &LstmStep,
        dh: &[f64],
        dc: &[f64],
        grads: &mut [f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let hd = self.hidden_dim;
        let mut dpre = vec![0.0; 4 * hd];
        let mut dc_prev = vec![0.0; hd];
        for k in 0..hd {
            let do_ = dh[k] * step.tanh_c[k];
            let dc_total = dc[k] + dh[k] * step.o[k] * (1.0 - step.tanh_c[k] * step.tanh_c[k]);
            let di = dc_total * step.g[k];
            let df = dc_total * step.c_prev[k];
            let dg = dc_total * step.i[k];
            dc_prev[k] = dc_total * step.f[k];
            dpre[k] = di * step.i[k] * (1.0 - step.i[k]);
            dpre[hd + k] = df * step.f[k] * (1.0 - step.f[k]);
            dpre[2 * hd + k] = dg * (1.0 - step.g[k] * step.g[k]);
            dpre[3 * hd + k] = do_ * step.o[k] * (1.0 - step.o[k]);
        }
        let dinput = self.gates.backward(p, &step.input, &dpre, grads);
        let dx = dinput[..self.input_dim].to_vec();
        let dh_prev = dinput[self.input_dim..].to_vec();
        (dx, dh_prev, dc_prev)
    }
}
