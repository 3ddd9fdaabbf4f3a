use std::fs::{self, File};
use std::path::PathBuf;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{episode_gradient, returns, rollout, Checkpoint, LossBreakdown, TrainConfig, Trajectory};
use crate::curriculum::CurriculumMap;
use crate::error::{Error, Result};
use crate::nn::{l2_norm, Adam};
use crate::policy::{DecisionMode, HierModel, HierPolicy};
use crate::rng;
use crate::simulators::{start_episode, Simulator};

pub const METRICS_HEADER: [&str; 6] = ["episode", "delta_u", "loss_h", "loss_l", "loss_p", "loss_total"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub delta_u: f64,
    pub loss_h: f64,
    pub loss_l: f64,
    pub loss_p: f64,
    pub loss_total: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainOutputs {
    pub metrics_csv: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
}

pub struct TrainReport {
    pub checkpoint: Checkpoint,
    pub model: HierModel,
    pub metrics: Vec<EpisodeMetrics>,
    pub checkpoints_written: Vec<PathBuf>,
}

/// Per-step baseline carried across batches: `b_t <- decay * b_t + (1 - decay) * batch mean`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub means: Vec<f64>,
}

impl Baseline {
    fn weights(&mut self, returns: &[Vec<f64>], decay: f64) -> Vec<Vec<f64>> {
        let longest = returns.iter().map(Vec::len).max().unwrap_or(0);
        for t in 0..longest {
            let vals: Vec<f64> = returns.iter().filter_map(|r| r.get(t).copied()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            match self.means.get_mut(t) {
                Some(b) => *b = decay * *b + (1.0 - decay) * mean,
                None => self.means.push(mean),
            }
        }
        returns
            .iter()
            .map(|r| r.iter().zip(&self.means).map(|(v, b)| v - b).collect())
            .collect()
    }
}

/// REINFORCE training with Adam over batches of sampled episodes.
///
/// Episode `e` uses a student and rollout stream derived from `(config.seed, e)`,
/// so results do not depend on the number of worker threads.
pub fn train_run(
    config: &TrainConfig,
    model: HierModel,
    sim: &dyn Simulator,
    curriculum: Arc<CurriculumMap>,
    outputs: &TrainOutputs,
    resume: Option<&Checkpoint>,
    mut progress: impl FnMut(&EpisodeMetrics),
) -> Result<TrainReport> {
    config.validate()?;
    let steps = config.steps.unwrap_or_else(|| sim.max_steps());
    if steps > sim.max_steps() {
        return Err(Error::StepLimitExceeded(sim.max_steps()));
    }
    let warmup = config.warmup_len.unwrap_or_else(|| sim.default_warmup());
    let mut model = Arc::new(model);
    let mut adam = Adam::new(model.params.len(), config.learning_rate);
    let mut episode = 0;
    let mut baseline = Baseline::default();
    if let Some(ckpt) = resume {
        ckpt.verify(&curriculum, &model.spec)?;
        Arc::make_mut(&mut model)
            .params
            .load_from(&ckpt.params)
            .map_err(Error::Config)?;
        if let Some(opt) = &ckpt.optimizer {
            adam = opt.clone();
        }
        episode = ckpt.episodes_done;
        baseline = ckpt.baseline.clone();
    }
    let mask = model.trainable_mask();
    let mut writer = match &outputs.metrics_csv {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(File::create(path)?);
            w.write_record(METRICS_HEADER)?;
            Some(w)
        }
        None => None,
    };
    let mut metrics = Vec::new();
    let mut written = Vec::new();

    while episode < config.episodes {
        let end = (episode + config.batch_size).min(config.episodes);
        let batch: Vec<usize> = (episode..end).collect();
        let policy = HierPolicy::new(model.clone(), curriculum.clone())?;
        let trajectories = batch
            .par_iter()
            .map(|&e| {
                let start = start_episode(sim, warmup, rng::derive_seed(config.seed, "episode", e as u64))?;
                let mut r = rng::stream(config.seed, "rollout", e as u64);
                rollout(start, &policy, steps, DecisionMode::Sample, config.reward_mode, &mut r)
            })
            .collect::<Result<Vec<Trajectory>>>()?;
        drop(policy);
        let rets: Vec<Vec<f64>> = trajectories.iter().map(|t| returns(&t.rewards(), config.gamma)).collect();
        let weights = if config.baseline {
            baseline.weights(&rets, config.baseline_decay)
        } else {
            rets.clone()
        };
        let p = model.params.values();
        let results = trajectories
            .par_iter()
            .zip(&weights)
            .map(|(traj, w)| {
                let mut g = vec![0.0; p.len()];
                let loss = episode_gradient(&model, p, traj, w, config.alpha, config.entropy_weight, Some(&mut g))?;
                Ok((g, loss))
            })
            .collect::<Result<Vec<(Vec<f64>, LossBreakdown)>>>()?;

        let mut grad = vec![0.0; p.len()];
        for ((e, traj), (g, loss)) in batch.iter().zip(&trajectories).zip(&results) {
            if !loss.total.is_finite() || g.iter().any(|v| !v.is_finite()) {
                if let Some(dir) = &outputs.checkpoint_dir {
                    let path = dir.join("last_good.json");
                    Checkpoint::new(&model, &curriculum, config, episode, Some(&adam)).with_baseline(&baseline).save(&path)?;
                }
                if let Some(w) = writer.as_mut() {
                    w.flush()?;
                }
                return Err(Error::DivergenceDetected { episode: *e });
            }
            let row = EpisodeMetrics {
                episode: *e,
                delta_u: traj.delta_u,
                loss_h: loss.high,
                loss_l: loss.low,
                loss_p: loss.aux,
                loss_total: loss.total,
            };
            if let Some(w) = writer.as_mut() {
                w.serialize(row)?;
            }
            progress(&row);
            metrics.push(row);
            for (acc, v) in grad.iter_mut().zip(g) {
                *acc += v;
            }
        }
        let scale = 1.0 / batch.len() as f64;
        grad.iter_mut().for_each(|v| *v *= scale);
        if config.clip_norm > 0.0 {
            let norm = l2_norm(&grad);
            if norm > config.clip_norm {
                let s = config.clip_norm / norm;
                grad.iter_mut().for_each(|v| *v *= s);
            }
        }
        adam.update(Arc::make_mut(&mut model).params.values_mut(), &grad, mask.as_deref());
        if let Some(w) = writer.as_mut() {
            w.flush()?;
        }

        let before = episode;
        episode = end;
        if config.checkpoint_every > 0 && episode / config.checkpoint_every > before / config.checkpoint_every {
            if let Some(dir) = &outputs.checkpoint_dir {
                let path = dir.join(format!("episode_{episode:06}.json"));
                Checkpoint::new(&model, &curriculum, config, episode, Some(&adam)).with_baseline(&baseline).save(&path)?;
                written.push(path);
            }
        }
    }

    let model = Arc::try_unwrap(model).unwrap_or_else(|shared| (*shared).clone());
    let checkpoint = Checkpoint::new(&model, &curriculum, config, episode, Some(&adam)).with_baseline(&baseline);
    Ok(TrainReport {
        checkpoint,
        model,
        metrics,
        checkpoints_written: written,
    })
}

/// Trailing mean over `window` values (shorter at the start).
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for i in 0..values.len() {
        sum += values[i];
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}
