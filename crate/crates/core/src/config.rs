//! Experiment configuration files.
//!
//! One TOML file describes a whole experiment. Scalar leaves can be
//! overridden with `section.key=value` strings; unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::evaluation::EvalProtocol;
use crate::policy::{DecisionMode, PolicyConfig};
use crate::simulators::{KssConfig, KtSimConfig, KtTrainConfig};
use crate::training::TrainConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurriculumSource {
    /// One question per concept, sized by `simulator.kss.n_items`.
    #[default]
    Kss,
    Synthetic,
    File,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurriculumSection {
    pub source: CurriculumSource,
    pub n_concepts: usize,
    pub n_questions: usize,
    /// Probability that a synthetic question carries a second concept.
    pub extra_concept_prob: f64,
    /// `question_id,concept_id` CSV for the `file` source.
    pub path: Option<PathBuf>,
}

impl Default for CurriculumSection {
    fn default() -> Self {
        Self {
            source: CurriculumSource::Kss,
            n_concepts: 50,
            n_questions: 600,
            extra_concept_prob: 0.0,
            path: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulatorSection {
    pub kind: String,
    pub kss: KssConfig,
    pub kt: KtSimConfig,
    pub kt_train: KtTrainConfig,
}

impl Default for SimulatorSection {
    fn default() -> Self {
        Self {
            kind: "kss".into(),
            kss: KssConfig::default(),
            kt: KtSimConfig::default(),
            kt_train: KtTrainConfig::default(),
        }
    }
}

/// Synthetic interaction logs produced by random practice on the rule-based simulator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub n_students: usize,
    /// Interactions per student.
    pub steps: usize,
    /// Defaults to `logs/interactions.csv` under the output directory.
    pub logs_path: Option<PathBuf>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            n_students: 5000,
            steps: 50,
            logs_path: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    pub budgets: Vec<usize>,
    pub n_students: usize,
    pub coldstart: bool,
    pub warmup_len: Option<usize>,
    pub seeds: Vec<u64>,
    pub mode: DecisionMode,
    /// Also evaluate the random baseline.
    pub include_random: bool,
    pub sweep_k: Vec<usize>,
    pub sweep_warmup: Vec<usize>,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        let p = EvalProtocol::default();
        Self {
            budgets: p.budgets,
            n_students: p.n_students,
            coldstart: p.coldstart,
            warmup_len: p.warmup_len,
            seeds: p.seeds,
            mode: p.mode,
            include_random: true,
            sweep_k: (1..=10).collect(),
            sweep_warmup: vec![0, 5, 10, 15, 20, 25],
        }
    }
}

impl EvaluationSection {
    pub fn protocol(&self, base_seed: u64) -> EvalProtocol {
        EvalProtocol {
            budgets: self.budgets.clone(),
            n_students: self.n_students,
            coldstart: self.coldstart,
            warmup_len: self.warmup_len,
            seeds: self.seeds.clone(),
            mode: self.mode,
            base_seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub curriculum: CurriculumSection,
    pub simulator: SimulatorSection,
    pub data: DataSection,
    pub encoder: EncoderConfig,
    pub policy: PolicyConfig,
    pub training: TrainConfig,
    pub evaluation: EvaluationSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            curriculum: CurriculumSection::default(),
            simulator: SimulatorSection::default(),
            data: DataSection::default(),
            encoder: EncoderConfig::default(),
            policy: PolicyConfig::default(),
            training: TrainConfig::default(),
            evaluation: EvaluationSection::default(),
        }
    }
}

fn parse_scalar(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key just parsed"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies one `a.b.c=value` override to a parsed document.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{assignment}' is not of the form section.key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key '{key}' has an empty component")));
    }
    let (leaf, parents) = path.split_last().expect("split yields at least one part");
    let mut table = doc;
    for part in parents {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override '{key}': '{part}' is not a section")))?;
    }
    table.insert(leaf.to_string(), parse_scalar(raw.trim()));
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    /// Reads `path`; relative paths inside the file resolve against its directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<(Self, PathBuf)> {
        let text = fs::read_to_string(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
        let config = Self::from_toml_str(&text, overrides)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((config, base))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}
