//! Learning-state encoder.
//!
//! Sets (concepts, candidate questions, learning targets) are encoded with
//! single-head self-attention over one-hot element codes followed by mean
//! pooling; histories with an LSTM over projected `(question, correctness)`
//! records. Per-level states sum linear projections of these encodings with a
//! learned per-level prompt vector.

use serde::{Deserialize, Serialize};

use crate::curriculum::{InteractionRecord, LearningHistory, LearningTarget};
use crate::error::{Error, Result};
use crate::nn::{add_into, axpy, dot, softmax, Linear, Lstm, LstmStep, ParamSet};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub d_a: usize,
    pub d_z: usize,
    pub d_h: usize,
    pub d_m: usize,
    pub heads: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d_a: 64,
            d_z: 64,
            d_h: 128,
            d_m: 256,
            heads: 1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.d_a, self.d_z, self.d_h, self.d_m].contains(&0) {
            return Err(Error::Config("encoder dimensions must be at least 1".into()));
        }
        if self.heads != 1 {
            return Err(Error::Config("only single-head attention is supported".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    High,
    Low,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningState {
    pub level: Level,
    pub vector: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PromptVector {
    pub level: Level,
    pub vector: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ElementRepr {
    pub index: usize,
    /// Attention weights over the set, in set order.
    pub weights: Vec<f64>,
    pub attentive: Vec<f64>,
    /// `[f_o(onehot); attentive]`, length `2 * d_a`.
    pub augmented: Vec<f64>,
}

/// Attention-pooled encoder for sets drawn from a fixed universe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElementEncoder {
    pub universe: usize,
    pub d_a: usize,
    onehot_proj: Linear,
    query: Linear,
    key: Linear,
    value: Linear,
}

/// Forward activations of one set encoding.
#[derive(Clone, Debug)]
pub struct SetTrace {
    items: Vec<usize>,
    queries: Vec<Vec<f64>>,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    attention: Vec<Vec<f64>>,
    pub pooled: Vec<f64>,
}

impl ElementEncoder {
    pub fn new(params: &mut ParamSet, name: &str, universe: usize, d_a: usize, rng: &mut Rng) -> Self {
        Self {
            universe,
            d_a,
            onehot_proj: Linear::new(params, &format!("{name}.onehot"), universe, d_a, true, rng),
            query: Linear::new(params, &format!("{name}.query"), universe, d_a, false, rng),
            key: Linear::new(params, &format!("{name}.key"), universe, d_a, false, rng),
            value: Linear::new(params, &format!("{name}.value"), universe, d_a, false, rng),
        }
    }

    fn check(&self, set: &[usize]) -> Result<()> {
        if set.is_empty() {
            return Err(Error::EmptySet);
        }
        if let Some(&x) = set.iter().find(|&&x| x >= self.universe) {
            return Err(Error::OutOfRangeId {
                kind: "set element",
                id: x,
                size: self.universe,
            });
        }
        Ok(())
    }

    fn attend(&self, query: &[f64], keys: &[Vec<f64>], values: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
        let scale = 1.0 / (self.d_a as f64).sqrt();
        let scores: Vec<f64> = keys.iter().map(|k| dot(query, k) * scale).collect();
        let weights = softmax(&scores);
        let mut out = vec![0.0; self.d_a];
        for (w, v) in weights.iter().zip(values) {
            axpy(*w, v, &mut out);
        }
        (weights, out)
    }

    /// Attentive and augmented representation of `x` attending over `set`.
    pub fn element_repr(&self, p: &[f64], x: usize, set: &[usize]) -> Result<ElementRepr> {
        self.check(set)?;
        if !set.contains(&x) {
            return Err(Error::ElementNotInSet(x));
        }
        let keys: Vec<_> = set.iter().map(|&j| self.key.weight_row(p, j)).collect();
        let values: Vec<_> = set.iter().map(|&j| self.value.weight_row(p, j)).collect();
        let (weights, attentive) = self.attend(&self.query.weight_row(p, x), &keys, &values);
        let mut augmented = self.onehot_proj.forward_sparse(p, &[(x, 1.0)]);
        augmented.extend_from_slice(&attentive);
        Ok(ElementRepr {
            index: x,
            weights,
            attentive,
            augmented,
        })
    }

    /// Mean of the augmented element representations, length `2 * d_a`.
    pub fn encode(&self, p: &[f64], set: &[usize]) -> Result<SetTrace> {
        self.check(set)?;
        let k = set.len() as f64;
        let queries: Vec<_> = set.iter().map(|&j| self.query.weight_row(p, j)).collect();
        let keys: Vec<_> = set.iter().map(|&j| self.key.weight_row(p, j)).collect();
        let values: Vec<_> = set.iter().map(|&j| self.value.weight_row(p, j)).collect();
        let mut pooled = vec![0.0; 2 * self.d_a];
        let mut attention = Vec::with_capacity(set.len());
        for (i, &x) in set.iter().enumerate() {
            let (weights, attentive) = self.attend(&queries[i], &keys, &values);
            let onehot = self.onehot_proj.forward_sparse(p, &[(x, 1.0)]);
            axpy(1.0 / k, &onehot, &mut pooled[..self.d_a]);
            axpy(1.0 / k, &attentive, &mut pooled[self.d_a..]);
            attention.push(weights);
        }
        Ok(SetTrace {
            items: set.to_vec(),
            queries,
            keys,
            values,
            attention,
            pooled,
        })
    }

    pub fn backward(&self, trace: &SetTrace, d_pooled: &[f64], grads: &mut [f64]) {
        let k = trace.items.len() as f64;
        let d_onehot: Vec<f64> = d_pooled[..self.d_a].iter().map(|g| g / k).collect();
        // identical upstream gradient for every element's attentive part
        let u: Vec<f64> = d_pooled[self.d_a..].iter().map(|g| g / k).collect();
        let scale = 1.0 / (self.d_a as f64).sqrt();
        let c: Vec<f64> = trace.values.iter().map(|v| dot(&u, v)).collect();
        let n = trace.items.len();
        let mut dq = vec![vec![0.0; self.d_a]; n];
        let mut dk = vec![vec![0.0; self.d_a]; n];
        let mut weight_mass = vec![0.0; n];
        for i in 0..n {
            let a = &trace.attention[i];
            let mean_c: f64 = a.iter().zip(&c).map(|(ai, ci)| ai * ci).sum();
            for j in 0..n {
                weight_mass[j] += a[j];
                let ds = a[j] * (c[j] - mean_c) * scale;
                if ds != 0.0 {
                    axpy(ds, &trace.keys[j], &mut dq[i]);
                    axpy(ds, &trace.queries[i], &mut dk[j]);
                }
            }
        }
        for (i, &x) in trace.items.iter().enumerate() {
            self.onehot_proj.backward_sparse(&[(x, 1.0)], &d_onehot, grads);
            self.query.backward_weight_row(x, &dq[i], grads);
            self.key.backward_weight_row(x, &dk[i], grads);
            let dv: Vec<f64> = u.iter().map(|g| g * weight_mass[i]).collect();
            self.value.backward_weight_row(x, &dv, grads);
        }
    }
}

/// LSTM over projected `[onehot(q); y]` records, starting from the zero state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEncoder {
    pub n_questions: usize,
    record_proj: Linear,
    lstm: Lstm,
}

/// Forward activations over a record sequence; `state(j)` is `h_j`.
#[derive(Clone, Debug)]
pub struct HistoryTrace {
    inputs: Vec<Vec<(usize, f64)>>,
    steps: Vec<LstmStep>,
    zero: Vec<f64>,
}

impl HistoryTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn state(&self, j: usize) -> &[f64] {
        if j == 0 {
            &self.zero
        } else {
            &self.steps[j - 1].h
        }
    }
}

pub type RecurrentState = (Vec<f64>, Vec<f64>);

impl HistoryEncoder {
    pub fn new(params: &mut ParamSet, n_questions: usize, config: &EncoderConfig, rng: &mut Rng) -> Self {
        Self {
            n_questions,
            record_proj: Linear::new(params, "history.record", n_questions + 1, config.d_z, true, rng),
            lstm: Lstm::new(params, "history.lstm", config.d_z, config.d_h, rng),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.lstm.hidden_dim
    }

    fn record_input(&self, r: &InteractionRecord) -> Result<Vec<(usize, f64)>> {
        if r.question.0 >= self.n_questions {
            return Err(Error::OutOfRangeId {
                kind: "question",
                id: r.question.0,
                size: self.n_questions,
            });
        }
        Ok(vec![(r.question.0, 1.0), (self.n_questions, if r.correct { 1.0 } else { 0.0 })])
    }

    /// Record representation `z_i`.
    pub fn record_repr(&self, p: &[f64], r: &InteractionRecord) -> Result<Vec<f64>> {
        Ok(self.record_proj.forward_sparse(p, &self.record_input(r)?))
    }

    pub fn zero_state(&self) -> RecurrentState {
        self.lstm.zero_state()
    }

    pub fn advance(&self, p: &[f64], state: &RecurrentState, r: &InteractionRecord) -> Result<RecurrentState> {
        let z = self.record_repr(p, r)?;
        let step = self.lstm.step(p, &z, &state.0, &state.1);
        Ok((step.h, step.c))
    }

    /// `h_t` after consuming the whole history; the zero vector for an empty one.
    pub fn encode(&self, p: &[f64], history: &LearningHistory) -> Result<Vec<f64>> {
        let mut state = self.zero_state();
        for r in &history.records {
            state = self.advance(p, &state, r)?;
        }
        Ok(state.0)
    }

    pub fn trace(&self, p: &[f64], records: &[InteractionRecord]) -> Result<HistoryTrace> {
        let (mut h, mut c) = self.zero_state();
        let mut inputs = Vec::with_capacity(records.len());
        let mut steps = Vec::with_capacity(records.len());
        for r in records {
            let x = self.record_input(r)?;
            let z = self.record_proj.forward_sparse(p, &x);
            let step = self.lstm.step(p, &z, &h, &c);
            h = step.h.clone();
            c = step.c.clone();
            inputs.push(x);
            steps.push(step);
        }
        Ok(HistoryTrace {
            inputs,
            steps,
            zero: vec![0.0; self.lstm.hidden_dim],
        })
    }

    /// Backpropagation through time; `d_states[j]` is the external gradient on `h_j`.
    pub fn backward(&self, p: &[f64], trace: &HistoryTrace, d_states: &[Vec<f64>], grads: &mut [f64]) {
        debug_assert_eq!(d_states.len(), trace.len() + 1);
        let hd = self.lstm.hidden_dim;
        let mut dh = vec![0.0; hd];
        let mut dc = vec![0.0; hd];
        for j in (0..trace.len()).rev() {
            add_into(&mut dh, &d_states[j + 1]);
            let (dz, dh_prev, dc_prev) = self.lstm.backward_step(p, &trace.steps[j], &dh, &dc, grads);
            self.record_proj.backward_sparse(&trace.inputs[j], &dz, grads);
            dh = dh_prev;
            dc = dc_prev;
        }
    }
}

/// Linear projections and prompt vectors that assemble per-level states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateFusion {
    pub d_m: usize,
    pub history: Linear,
    pub target: Linear,
    pub concepts: Linear,
    pub candidates: Linear,
    prompt_high: usize,
    prompt_low: usize,
}

impl StateFusion {
    pub fn new(params: &mut ParamSet, config: &EncoderConfig, rng: &mut Rng) -> Self {
        let set_dim = 2 * config.d_a;
        Self {
            d_m: config.d_m,
            history: Linear::new(params, "fuse.history", config.d_h, config.d_m, true, rng),
            target: Linear::new(params, "fuse.target", set_dim, config.d_m, true, rng),
            concepts: Linear::new(params, "fuse.concepts", set_dim, config.d_m, true, rng),
            candidates: Linear::new(params, "fuse.candidates", set_dim, config.d_m, true, rng),
            prompt_high: params.alloc_uniform("prompt.high", config.d_m, config.d_m, rng),
            prompt_low: params.alloc_uniform("prompt.low", config.d_m, config.d_m, rng),
        }
    }

    pub fn prompt_offset(&self, level: Level) -> usize {
        match level {
            Level::High => self.prompt_high,
            Level::Low => self.prompt_low,
        }
    }

    pub fn prompt_vector(&self, p: &[f64], level: Level) -> PromptVector {
        let off = self.prompt_offset(level);
        PromptVector {
            level,
            vector: p[off..off + self.d_m].to_vec(),
        }
    }

    fn set_projection(&self, level: Level) -> &Linear {
        match level {
            Level::High => &self.concepts,
            Level::Low => &self.candidates,
        }
    }

    /// Sums already-projected terms with the level's prompt vector.
    pub fn combine(&self, p: &[f64], level: Level, history: &[f64], target: &[f64], set: &[f64]) -> LearningState {
        let off = self.prompt_offset(level);
        let vector = (0..self.d_m)
            .map(|i| history[i] + target[i] + set[i] + p[off + i])
            .collect();
        LearningState { level, vector }
    }

    /// Full fusion from raw encodings.
    pub fn fuse(&self, p: &[f64], level: Level, h: &[f64], g: &[f64], e: &[f64], prompt: &PromptVector) -> Result<LearningState> {
        let expect = |what, expected: usize, actual: usize| {
            if expected == actual {
                Ok(())
            } else {
                Err(Error::DimensionMismatch { what, expected, actual })
            }
        };
        expect("history encoding", self.history.in_dim, h.len())?;
        expect("target encoding", self.target.in_dim, g.len())?;
        expect("set encoding", self.set_projection(level).in_dim, e.len())?;
        expect("prompt vector", self.d_m, prompt.vector.len())?;
        let hp = self.history.forward(p, h);
        let gp = self.target.forward(p, g);
        let ep = self.set_projection(level).forward(p, e);
        let vector = (0..self.d_m)
            .map(|i| hp[i] + gp[i] + ep[i] + prompt.vector[i])
            .collect();
        Ok(LearningState { level, vector })
    }
}

/// All encoder parameters of one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub concept_set: ElementEncoder,
    pub question_set: ElementEncoder,
    pub history: HistoryEncoder,
    pub fusion: StateFusion,
}

impl Encoder {
    pub fn new(params: &mut ParamSet, config: &EncoderConfig, n_concepts: usize, n_questions: usize, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config: config.clone(),
            concept_set: ElementEncoder::new(params, "concept_set", n_concepts, config.d_a, rng),
            question_set: ElementEncoder::new(params, "question_set", n_questions, config.d_a, rng),
            history: HistoryEncoder::new(params, n_questions, config, rng),
            fusion: StateFusion::new(params, config, rng),
        })
    }

    pub fn encode_concepts(&self, p: &[f64], concepts: &[usize]) -> Result<Vec<f64>> {
        Ok(self.concept_set.encode(p, concepts)?.pooled)
    }

    pub fn encode_questions(&self, p: &[f64], questions: &[usize]) -> Result<Vec<f64>> {
        Ok(self.question_set.encode(p, questions)?.pooled)
    }

    pub fn encode_target(&self, p: &[f64], target: &LearningTarget) -> Result<Vec<f64>> {
        let ids: Vec<usize> = target.questions().iter().map(|q| q.0).collect();
        self.encode_questions(p, &ids)
    }

    pub fn encode_history(&self, p: &[f64], history: &LearningHistory) -> Result<Vec<f64>> {
        self.history.encode(p, history)
    }
}
