//! Decision backbones: maps from a learning state to logits over an action list.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{axpy, dot, Linear, ParamSet};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    pub kind: String,
    pub depth: usize,
    /// Hidden width; must equal the state dimension when given.
    pub width: Option<usize>,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            kind: "mlp_pointer".into(),
            depth: 2,
            width: None,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self, d_m: usize) -> Result<()> {
        if let Some(w) = self.width {
            if w != d_m {
                return Err(Error::Config(format!("backbone width {w} must equal d_m {d_m}")));
            }
        }
        Ok(())
    }
}

/// Activations retained from a backbone forward pass.
#[derive(Clone, Debug)]
pub struct BackboneTrace {
    pub actions: Vec<usize>,
    pub logits: Vec<f64>,
    /// Hidden vectors, backbone specific; the last entry is the scoring feature.
    pub hidden: Vec<Vec<f64>>,
}

impl BackboneTrace {
    pub fn features(&self) -> &[f64] {
        self.hidden.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

pub trait Backbone: Send + Sync + fmt::Debug {
    fn kind(&self) -> &'static str;

    fn n_actions(&self) -> usize;

    /// Parameter-name prefix owned by this backbone.
    fn prefix(&self) -> &str;

    fn forward(&self, p: &[f64], state: &[f64], actions: &[usize]) -> Result<BackboneTrace>;

    /// Accumulates parameter gradients and returns the gradient on the state.
    fn backward(&self, p: &[f64], trace: &BackboneTrace, dlogits: &[f64], grads: &mut [f64]) -> Vec<f64>;
}

/// One learned embedding row per action; logits are inner products with it.
#[derive(Clone, Copy, Debug)]
struct ActionTable {
    offset: usize,
    n: usize,
    dim: usize,
}

impl ActionTable {
    fn new(params: &mut ParamSet, name: &str, n: usize, dim: usize, rng: &mut Rng) -> Self {
        // scaled by the feature width so initial logits are small
        let offset = params.alloc_uniform(&format!("{name}.actions"), n * dim, dim, rng);
        Self { offset, n, dim }
    }

    fn row<'a>(&self, p: &'a [f64], a: usize) -> &'a [f64] {
        let s = self.offset + a * self.dim;
        &p[s..s + self.dim]
    }

    fn check(&self, actions: &[usize]) -> Result<()> {
        if actions.is_empty() {
            return Err(Error::EmptyActionSet);
        }
        if let Some(&a) = actions.iter().find(|&&a| a >= self.n) {
            return Err(Error::OutOfRangeId {
                kind: "action",
                id: a,
                size: self.n,
            });
        }
        Ok(())
    }

    fn score(&self, p: &[f64], features: &[f64], actions: &[usize]) -> Vec<f64> {
        actions.iter().map(|&a| dot(features, self.row(p, a))).collect()
    }

    fn backward(&self, p: &[f64], features: &[f64], actions: &[usize], dlogits: &[f64], grads: &mut [f64]) -> Vec<f64> {
        let mut dfeat = vec![0.0; self.dim];
        for (&a, &d) in actions.iter().zip(dlogits) {
            if d != 0.0 {
                axpy(d, self.row(p, a), &mut dfeat);
                let s = self.offset + a * self.dim;
                axpy(d, features, &mut grads[s..s + self.dim]);
            }
        }
        dfeat
    }
}

/// Residual tanh feed-forward stack with pointer scoring.
#[derive(Debug)]
pub struct MlpPointer {
    prefix: String,
    layers: Vec<Linear>,
    table: ActionTable,
}

impl MlpPointer {
    pub fn new(params: &mut ParamSet, prefix: &str, config: &BackboneConfig, d_m: usize, n_actions: usize, rng: &mut Rng) -> Self {
        let layers = (0..config.depth)
            .map(|l| Linear::new(params, &format!("{prefix}.layer{l}"), d_m, d_m, true, rng))
            .collect();
        let table = ActionTable::new(params, prefix, n_actions, d_m, rng);
        Self {
            prefix: prefix.to_string(),
            layers,
            table,
        }
    }
}

impl Backbone for MlpPointer {
    fn kind(&self) -> &'static str {
        "mlp_pointer"
    }

    fn n_actions(&self) -> usize {
        self.table.n
    }

    fn prefix(&self) -> &str {
        &self.prefix
    }

    fn forward(&self, p: &[f64], state: &[f64], actions: &[usize]) -> Result<BackboneTrace> {
        self.table.check(actions)?;
        // hidden alternates layer input and tanh output: x0, t0, x1, t1, ..., xL
        let mut hidden = Vec::with_capacity(2 * self.layers.len() + 1);
        let mut x = state.to_vec();
        for layer in &self.layers {
            let t: Vec<f64> = layer.forward(p, &x).iter().map(|v| v.tanh()).collect();
            let next: Vec<f64> = x.iter().zip(&t).map(|(a, b)| a + b).collect();
            hidden.push(x);
            hidden.push(t);
            x = next;
        }
        let logits = self.table.score(p, &x, actions);
        hidden.push(x);
        Ok(BackboneTrace {
            actions: actions.to_vec(),
            logits,
            hidden,
        })
    }

    fn backward(&self, p: &[f64], trace: &BackboneTrace, dlogits: &[f64], grads: &mut [f64]) -> Vec<f64> {
        let mut dx = self.table.backward(p, trace.features(), &trace.actions, dlogits, grads);
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let x = &trace.hidden[2 * l];
            let t = &trace.hidden[2 * l + 1];
            let dpre: Vec<f64> = dx.iter().zip(t).map(|(d, t)| d * (1.0 - t * t)).collect();
            let dx_inner = layer.backward(p, x, &dpre, grads);
            for (a, b) in dx.iter_mut().zip(&dx_inner) {
                *a += b;
            }
        }
        dx
    }
}

/// A single affine map with pointer scoring.
#[derive(Debug)]
pub struct LinearPointer {
    prefix: String,
    map: Linear,
    table: ActionTable,
}

impl LinearPointer {
    pub fn new(params: &mut ParamSet, prefix: &str, d_m: usize, n_actions: usize, rng: &mut Rng) -> Self {
        Self {
            prefix: prefix.to_string(),
            map: Linear::new(params, &format!("{prefix}.map"), d_m, d_m, true, rng),
            table: ActionTable::new(params, prefix, n_actions, d_m, rng),
        }
    }
}

impl Backbone for LinearPointer {
    fn kind(&self) -> &'static str {
        "linear"
    }

    fn n_actions(&self) -> usize {
        self.table.n
    }

    fn prefix(&self) -> &str {
        &self.prefix
    }

    fn forward(&self, p: &[f64], state: &[f64], actions: &[usize]) -> Result<BackboneTrace> {
        self.table.check(actions)?;
        let y = self.map.forward(p, state);
        let logits = self.table.score(p, &y, actions);
        Ok(BackboneTrace {
            actions: actions.to_vec(),
            logits,
            hidden: vec![state.to_vec(), y],
        })
    }

    fn backward(&self, p: &[f64], trace: &BackboneTrace, dlogits: &[f64], grads: &mut [f64]) -> Vec<f64> {
        let dy = self.table.backward(p, trace.features(), &trace.actions, dlogits, grads);
        self.map.backward(p, &trace.hidden[0], &dy, grads)
    }
}

pub struct BackboneSpec<'a> {
    pub prefix: &'a str,
    pub config: &'a BackboneConfig,
    pub d_m: usize,
    pub n_actions: usize,
}

pub type BackboneFactory = fn(&mut ParamSet, &BackboneSpec<'_>, &mut Rng) -> Arc<dyn Backbone>;

/// Backbone kinds selectable by name.
pub struct BackboneRegistry {
    factories: BTreeMap<&'static str, BackboneFactory>,
}

impl BackboneRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &'static str, factory: BackboneFactory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    pub fn build(&self, name: &str, params: &mut ParamSet, spec: &BackboneSpec<'_>, rng: &mut Rng) -> Result<Arc<dyn Backbone>> {
        let factory = self.factories.get(name).ok_or_else(|| Error::UnknownStrategy {
            kind: "backbone",
            name: name.to_string(),
        })?;
        Ok(factory(params, spec, rng))
    }
}

impl Default for BackboneRegistry {
    fn default() -> Self {
        let mut reg = Self::empty();
        reg.register("mlp_pointer", |params, spec, rng| {
            Arc::new(MlpPointer::new(params, spec.prefix, spec.config, spec.d_m, spec.n_actions, rng))
        });
        reg.register("linear", |params, spec, rng| {
            Arc::new(LinearPointer::new(params, spec.prefix, spec.d_m, spec.n_actions, rng))
        });
        reg
    }
}
