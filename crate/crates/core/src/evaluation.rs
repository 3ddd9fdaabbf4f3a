//! Learning-effect measurement, evaluation protocols and sweeps.

use std::fs::{self, File};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{DecisionMode, Recommender};
use crate::rng;
use crate::simulators::{start_episode, Simulator};
use crate::training::{rollout, RewardMode};

/// Normalized improvement `(E_a - E_b) / (E_max - E_b)`.
pub fn learning_effect(e_a: f64, e_b: f64, e_max: f64) -> Result<f64> {
    if e_b >= e_max {
        return Err(Error::AlreadyMastered(e_max as usize));
    }
    Ok((e_a - e_b) / (e_max - e_b))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalProtocol {
    pub budgets: Vec<usize>,
    pub n_students: usize,
    pub coldstart: bool,
    /// Initial history length; defaults to the simulator's.
    pub warmup_len: Option<usize>,
    /// Seed indices; each yields an independent student population.
    pub seeds: Vec<u64>,
    pub mode: DecisionMode,
    /// Base seed the seed indices are mixed with.
    #[serde(skip)]
    pub base_seed: u64,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        Self {
            budgets: vec![10, 30],
            n_students: 500,
            coldstart: false,
            warmup_len: None,
            seeds: vec![0, 1, 2, 3, 4],
            mode: DecisionMode::Greedy,
            base_seed: 0,
        }
    }
}

impl EvalProtocol {
    pub fn validate(&self, max_steps: usize) -> Result<()> {
        if self.n_students == 0 {
            return Err(Error::Config("evaluation.n_students must be at least 1".into()));
        }
        if self.budgets.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("evaluation needs at least one budget and one seed".into()));
        }
        if let Some(&b) = self.budgets.iter().find(|&&b| b > max_steps) {
            return Err(Error::Config(format!(
                "evaluation budget {b} exceeds the simulator step limit {max_steps}"
            )));
        }
        Ok(())
    }

    pub fn effective_warmup(&self, sim: &dyn Simulator) -> usize {
        if self.coldstart {
            0
        } else {
            self.warmup_len.unwrap_or_else(|| sim.default_warmup())
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BudgetResult {
    pub budget: usize,
    pub seed: u64,
    pub n_students: usize,
    pub mean_delta: f64,
    pub std_delta: f64,
    #[serde(skip)]
    pub samples: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub simulator: String,
    pub recommender: String,
    pub rows: Vec<BudgetResult>,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl EvalResult {
    pub fn rows_for(&self, budget: usize) -> impl Iterator<Item = &BudgetResult> {
        self.rows.iter().filter(move |r| r.budget == budget)
    }

    /// Mean and std of the per-seed means at `budget`.
    pub fn summary(&self, budget: usize) -> Option<(f64, f64)> {
        let means: Vec<f64> = self.rows_for(budget).map(|r| r.mean_delta).collect();
        (!means.is_empty()).then(|| mean_std(&means))
    }

    /// Mean over every student of every seed at `budget`.
    pub fn pooled_mean(&self, budget: usize) -> Option<f64> {
        let all: Vec<f64> = self.rows_for(budget).flat_map(|r| r.samples.iter().copied()).collect();
        (!all.is_empty()).then(|| mean_std(&all).0)
    }
}

/// Rolls out every student of every seed once to the largest budget and
/// reads the learning effect at each budget from the same trajectory.
pub fn evaluate(recommender: &dyn Recommender, sim: &dyn Simulator, protocol: &EvalProtocol) -> Result<EvalResult> {
    protocol.validate(sim.max_steps())?;
    let warmup = protocol.effective_warmup(sim);
    let horizon = *protocol.budgets.iter().max().expect("validated non-empty");
    let mut rows = Vec::new();
    for &seed in &protocol.seeds {
        let key = rng::derive_seed(protocol.base_seed, "eval", seed);
        let per_student = (0..protocol.n_students as u64)
            .into_par_iter()
            .map(|i| {
                let start = start_episode(sim, warmup, rng::derive_seed(key, "eval-student", i))?;
                let mut r = rng::stream(key, "eval-rollout", i);
                let traj = rollout(start, recommender, horizon, protocol.mode, RewardMode::Telescoping, &mut r)?;
                protocol
                    .budgets
                    .iter()
                    .map(|&b| traj.delta_at(b))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        for (bi, &budget) in protocol.budgets.iter().enumerate() {
            let samples: Vec<f64> = per_student.iter().map(|d| d[bi]).collect();
            let (mean_delta, std_delta) = mean_std(&samples);
            rows.push(BudgetResult {
                budget,
                seed,
                n_students: protocol.n_students,
                mean_delta,
                std_delta,
                samples,
            });
        }
    }
    Ok(EvalResult {
        simulator: sim.kind().to_string(),
        recommender: recommender.name().to_string(),
        rows,
    })
}

pub const RESULTS_HEADER: [&str; 6] = ["simulator", "budget", "seed", "n_students", "mean_delta", "std_delta"];

pub fn write_results_csv(result: &EvalResult, path: &Path) -> Result<()> {
    create_parent(path)?;
    let mut w = csv::Writer::from_writer(File::create(path)?);
    w.write_record(RESULTS_HEADER)?;
    for r in &result.rows {
        w.write_record([
            result.simulator.clone(),
            r.budget.to_string(),
            r.seed.to_string(),
            r.n_students.to_string(),
            r.mean_delta.to_string(),
            r.std_delta.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "axis", content = "values")]
pub enum SweepAxis {
    /// Concepts selected per step.
    KConcepts(Vec<usize>),
    WarmupLen(Vec<usize>),
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            Self::KConcepts(_) => "k_concepts",
            Self::WarmupLen(_) => "warmup_len",
        }
    }

    pub fn values(&self) -> &[usize] {
        match self {
            Self::KConcepts(v) | Self::WarmupLen(v) => v,
        }
    }

    pub fn default_k() -> Self {
        Self::KConcepts((1..=10).collect())
    }

    pub fn default_warmup() -> Self {
        Self::WarmupLen(vec![0, 5, 10, 15, 20, 25])
    }
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub value: usize,
    pub result: EvalResult,
}

#[derive(Clone, Debug)]
pub struct SweepTable {
    pub axis: &'static str,
    pub rows: Vec<SweepRow>,
}

/// One evaluation per axis value; `factory` receives the concept count for
/// the `k` axis and is called with `None` for the warmup axis.
pub fn sweep(
    factory: &dyn Fn(Option<usize>) -> Result<Arc<dyn Recommender>>,
    sim: &dyn Simulator,
    axis: &SweepAxis,
    protocol: &EvalProtocol,
) -> Result<SweepTable> {
    if axis.values().is_empty() {
        return Err(Error::Config("sweep axis has no values".into()));
    }
    let mut rows = Vec::new();
    for &value in axis.values() {
        let result = match axis {
            SweepAxis::KConcepts(_) => evaluate(factory(Some(value))?.as_ref(), sim, protocol)?,
            SweepAxis::WarmupLen(_) => {
                let p = EvalProtocol {
                    coldstart: false,
                    warmup_len: Some(value),
                    ..protocol.clone()
                };
                evaluate(factory(None)?.as_ref(), sim, &p)?
            }
        };
        rows.push(SweepRow { value, result });
    }
    Ok(SweepTable { axis: axis.name(), rows })
}

pub const SWEEP_HEADER: [&str; 6] = ["axis", "value", "budget", "n_seeds", "mean_delta", "std_delta"];

impl SweepTable {
    pub fn budgets(&self) -> Vec<usize> {
        let mut b: Vec<usize> = self
            .rows
            .iter()
            .flat_map(|r| r.result.rows.iter().map(|x| x.budget))
            .collect();
        b.sort_unstable();
        b.dedup();
        b
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        create_parent(path)?;
        let mut w = csv::Writer::from_writer(File::create(path)?);
        w.write_record(SWEEP_HEADER)?;
        for row in &self.rows {
            for budget in self.budgets() {
                if let Some((mean, std)) = row.result.summary(budget) {
                    let n = row.result.rows_for(budget).count();
                    w.write_record([
                        self.axis.to_string(),
                        row.value.to_string(),
                        budget.to_string(),
                        n.to_string(),
                        mean.to_string(),
                        std.to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// One series per budget: `(axis value, mean over seeds)`.
    pub fn series(&self) -> Vec<(String, Vec<(f64, f64)>)> {
        self.budgets()
            .into_iter()
            .map(|b| {
                let points = self
                    .rows
                    .iter()
                    .filter_map(|r| r.result.summary(b).map(|(m, _)| (r.value as f64, m)))
                    .collect();
                (format!("T={b}"), points)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn learning_effect_examples() {
        assert_eq!(learning_effect(5.0, 2.0, 10.0).unwrap(), 0.375);
        assert_eq!(learning_effect(3.0, 3.0, 10.0).unwrap(), 0.0);
        assert_eq!(learning_effect(10.0, 4.0, 10.0).unwrap(), 1.0);
        assert!(matches!(learning_effect(4.0, 4.0, 4.0), Err(Error::AlreadyMastered(4))));
    }

    #[test]
    fn mean_std_population() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert_eq!(s, 1.0);
        assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
    }

    #[test]
    fn protocol_validation() {
        let p = EvalProtocol::default();
        assert!(p.validate(30).is_ok());
        assert!(p.validate(20).is_err());
        let p = EvalProtocol {
            n_students: 0,
            ..EvalProtocol::default()
        };
        assert!(p.validate(30).is_err());
    }

    #[test]
    fn default_axes_cover_reference_points() {
        assert!(SweepAxis::default_k().values().iter().any(|&k| k > 5));
        let w = SweepAxis::default_warmup();
        assert!(w.values().contains(&0) && w.values().contains(&20));
    }
}
