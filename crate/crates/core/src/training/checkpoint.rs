use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::run::Baseline;
use super::TrainConfig;
use crate::curriculum::CurriculumMap;
use crate::error::{Error, Result};
use crate::nn::{Adam, ParamSet};
use crate::policy::{HierModel, ModelSpec};

pub const CHECKPOINT_SCHEMA: &str = "hierrec.policy-checkpoint/v1";

/// Position in the episode stream; episode `e` always draws from seeds derived from `(seed, e)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub next_episode: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: String,
    pub config_hash: String,
    pub spec: ModelSpec,
    pub train: TrainConfig,
    pub params: ParamSet,
    pub episodes_done: usize,
    pub rng: RngState,
    pub optimizer: Option<Adam>,
    #[serde(default)]
    pub baseline: Baseline,
}

/// Hash of the curriculum structure and the model layout a checkpoint belongs to.
pub fn config_hash(curriculum: &CurriculumMap, spec: &ModelSpec) -> String {
    let mut hasher = Sha256::new();
    hasher.update((curriculum.n_concepts() as u64).to_le_bytes());
    hasher.update((curriculum.n_questions() as u64).to_le_bytes());
    for (q, c) in curriculum.edges() {
        hasher.update((q.0 as u64).to_le_bytes());
        hasher.update((c.0 as u64).to_le_bytes());
    }
    // initialization seed and backbone freezing change values, not layout
    let mut layout = spec.clone();
    layout.init_seed = 0;
    layout.policy.freeze_backbone = false;
    hasher.update(serde_json::to_vec(&layout).expect("model spec serializes"));
    hex::encode(hasher.finalize())
}

impl Checkpoint {
    pub fn new(model: &HierModel, curriculum: &CurriculumMap, train: &TrainConfig, episodes_done: usize, optimizer: Option<&Adam>) -> Self {
        Self {
            schema_version: CHECKPOINT_SCHEMA.to_string(),
            config_hash: config_hash(curriculum, &model.spec),
            spec: model.spec.clone(),
            train: train.clone(),
            params: model.params.clone(),
            episodes_done,
            rng: RngState {
                seed: train.seed,
                next_episode: episodes_done as u64,
            },
            optimizer: optimizer.cloned(),
            baseline: Baseline::default(),
        }
    }

    pub fn with_baseline(mut self, baseline: &Baseline) -> Self {
        self.baseline = baseline.clone();
        self
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let ckpt: Self = serde_json::from_slice(&fs::read(path)?)?;
        if ckpt.schema_version != CHECKPOINT_SCHEMA {
            return Err(Error::Config(format!(
                "unsupported checkpoint schema {:?} in {}",
                ckpt.schema_version,
                path.display()
            )));
        }
        Ok(ckpt)
    }

    /// Fails with `CheckpointMismatch` unless the checkpoint was trained for this curriculum and layout.
    pub fn verify(&self, curriculum: &CurriculumMap, spec: &ModelSpec) -> Result<()> {
        let expected = config_hash(curriculum, spec);
        let found = config_hash(curriculum, &self.spec);
        if expected != self.config_hash || found != self.config_hash {
            return Err(Error::CheckpointMismatch {
                expected,
                found: self.config_hash.clone(),
            });
        }
        Ok(())
    }

    pub fn model(&self) -> Result<HierModel> {
        HierModel::from_params(self.spec.clone(), &self.params)
    }
}
