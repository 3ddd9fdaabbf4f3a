//! Minimal dense layers with hand-written backward passes.
//!
//! All parameters of a model live in one flat [`ParamSet`]; layers hold offsets
//! into it. Gradients are plain `Vec<f64>` buffers with the same layout, which
//! keeps optimizers, gradient checks and checkpointing layer-agnostic.

mod adam;
mod linear;
mod lstm;
mod params;

pub use adam::Adam;
pub use linear::Linear;
pub use lstm::{Lstm, LstmStep};
pub use params::{ParamEntry, ParamSet};

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn add_into(dst: &mut [f64], src: &[f64]) {
    axpy(1.0, src, dst);
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
