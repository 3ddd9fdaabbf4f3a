//! Config-driven experiment steps shared by the command-line tool.
//!
//! Every output lands in a fixed layout under the configured output
//! directory: `checkpoints/`, `metrics/`, `results/`, `plots/`, `logs/`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::config::{CurriculumSource, ExperimentConfig};
use crate::curriculum::CurriculumMap;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, sweep, write_results_csv, EvalProtocol, EvalResult, SweepAxis, SweepTable};
use crate::logs::{parse_logs, read_curriculum_csv, read_log_csv, write_log_csv, IdDictionary, RawLogRow};
use crate::plot::write_line_chart;
use crate::policy::{HierModel, ModelSpec, Recommender, RecommenderContext, RecommenderRegistry};
use crate::rng;
use crate::simulators::{KssSimulator, KtModel, KtTrainReport, SimBuildContext, Simulator, SimulatorRegistry};
use crate::training::{moving_average, train_run, Checkpoint, EpisodeMetrics, TrainOutputs};

pub const OUTPUT_DIRS: [&str; 5] = ["checkpoints", "metrics", "results", "plots", "logs"];

pub struct Experiment {
    pub config: ExperimentConfig,
    base_dir: PathBuf,
    pub curriculum: Arc<CurriculumMap>,
    pub questions: IdDictionary,
}

pub struct GenLogsSummary {
    pub path: PathBuf,
    pub students: usize,
    pub rows: usize,
}

pub struct TrainKtSummary {
    pub model_path: PathBuf,
    pub report: KtTrainReport,
    pub sessions: usize,
    pub unknown_questions: usize,
}

pub struct TrainSummary {
    pub checkpoint_path: PathBuf,
    pub metrics_path: PathBuf,
    pub plot_path: PathBuf,
    pub metrics: Vec<EpisodeMetrics>,
}

pub struct EvaluateSummary {
    pub results: Vec<(EvalResult, PathBuf)>,
    pub plot_path: PathBuf,
}

impl Experiment {
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let (config, base) = ExperimentConfig::load(path, overrides)?;
        Self::new(config, base)
    }

    /// Validates every section and builds the curriculum.
    pub fn new(config: ExperimentConfig, base_dir: PathBuf) -> Result<Self> {
        config.encoder.validate()?;
        config.training.validate()?;
        if config.evaluation.n_students == 0 {
            return Err(Error::Config("evaluation.n_students must be at least 1".into()));
        }
        let c = &config.curriculum;
        let (curriculum, questions) = match c.source {
            CurriculumSource::Kss => {
                let map = CurriculumMap::one_to_one(config.simulator.kss.n_items)?;
                let n = map.n_questions();
                (map, IdDictionary::dense(n))
            }
            CurriculumSource::Synthetic => {
                let seed = rng::derive_seed(config.seed, "curriculum", 0);
                let map = CurriculumMap::synthetic(c.n_concepts, c.n_questions, c.extra_concept_prob, seed)?;
                let n = map.n_questions();
                (map, IdDictionary::dense(n))
            }
            CurriculumSource::File => {
                let rel = c
                    .path
                    .as_ref()
                    .ok_or_else(|| Error::Config("curriculum.path is required for the file source".into()))?;
                let loaded = read_curriculum_csv(&resolve(&base_dir, rel))?;
                (loaded.map, loaded.questions)
            }
        };
        let exp = Self {
            config,
            base_dir,
            curriculum: Arc::new(curriculum),
            questions,
        };
        let spec = exp.model_spec();
        HierModel::new(spec)?;
        if !SimulatorRegistry::default().names().contains(&exp.config.simulator.kind.as_str()) {
            return Err(Error::UnknownStrategy {
                kind: "simulator",
                name: exp.config.simulator.kind.clone(),
            });
        }
        Ok(exp)
    }

    pub fn output_dir(&self) -> PathBuf {
        resolve(&self.base_dir, &self.config.output_dir)
    }

    pub fn output_path(&self, dir: &str, name: &str) -> PathBuf {
        self.output_dir().join(dir).join(name)
    }

    pub fn logs_path(&self) -> PathBuf {
        match &self.config.data.logs_path {
            Some(p) => resolve(&self.base_dir, p),
            None => self.output_path("logs", "interactions.csv"),
        }
    }

    pub fn kt_model_path(&self) -> PathBuf {
        match &self.config.simulator.kt.model_path {
            Some(p) => resolve(&self.base_dir, Path::new(p)),
            None => self.output_path("checkpoints", "kt_model.json"),
        }
    }

    pub fn policy_checkpoint_path(&self) -> PathBuf {
        self.output_path("checkpoints", "policy.json")
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            encoder: self.config.encoder.clone(),
            policy: self.config.policy.clone(),
            n_concepts: self.curriculum.n_concepts(),
            n_questions: self.curriculum.n_questions(),
            init_seed: rng::derive_seed(self.config.seed, "init", 0),
        }
    }

    pub fn protocol(&self) -> EvalProtocol {
        self.config
            .evaluation
            .protocol(rng::derive_seed(self.config.seed, "eval", 0))
    }

    fn kss(&self) -> Result<KssSimulator> {
        KssSimulator::new(self.config.simulator.kss.clone(), self.curriculum.clone())
    }

    /// Builds the configured simulator, loading the trained KT model when needed.
    pub fn simulator(&self) -> Result<Arc<dyn Simulator>> {
        let kind = self.config.simulator.kind.as_str();
        let kt_model = if kind == "kt" {
            let model = KtModel::load(&self.kt_model_path())?;
            if model.n_questions() != self.curriculum.n_questions() {
                return Err(Error::Config(format!(
                    "KT model covers {} questions, curriculum has {}",
                    model.n_questions(),
                    self.curriculum.n_questions()
                )));
            }
            Some(Arc::new(model))
        } else {
            None
        };
        SimulatorRegistry::default().build(
            kind,
            &SimBuildContext {
                curriculum: &self.curriculum,
                kss: &self.config.simulator.kss,
                kt: &self.config.simulator.kt,
                kt_model,
            },
        )
    }

    /// Random practice on the rule-based simulator, one session per student.
    pub fn gen_logs(&self) -> Result<GenLogsSummary> {
        let sim = self.kss()?;
        let data = &self.config.data;
        let mut rows = Vec::with_capacity(data.n_students * data.steps);
        for s in 0..data.n_students {
            let seed = rng::derive_seed(self.config.seed, "data", s as u64);
            let targets = sim.sample_targets(&mut rng::stream(seed, "targets", 0));
            let reset = sim.reset(&targets, data.steps, seed)?;
            for (t, r) in reset.history.records.iter().enumerate() {
                rows.push(RawLogRow {
                    student_id: format!("s{s}"),
                    question_id: self.questions.id_of(r.question.0).expect("dense question id").to_string(),
                    correct: u8::from(r.correct),
                    session_id: "0".into(),
                    timestamp: t as i64,
                });
            }
        }
        let path = self.logs_path();
        crate::evaluation::create_parent(&path)?;
        write_log_csv(&path, &rows)?;
        Ok(GenLogsSummary {
            path,
            students: data.n_students,
            rows: rows.len(),
        })
    }

    pub fn train_kt(&self) -> Result<TrainKtSummary> {
        let rows = read_log_csv(&self.logs_path())?;
        let parsed = parse_logs(&rows, &self.questions)?;
        let histories = parsed.histories();
        let mut config = self.config.simulator.kt_train.clone();
        config.seed = rng::derive_seed(self.config.seed, "kt-train", 0);
        let (model, report) = KtModel::train(&histories, self.curriculum.n_questions(), &config)?;
        let model_path = self.kt_model_path();
        crate::evaluation::create_parent(&model_path)?;
        model.save(&model_path)?;
        let report_path = self.output_path("results", "kt_report.json");
        crate::evaluation::create_parent(&report_path)?;
        std::fs::write(&report_path, serde_json::to_vec_pretty(&report)?)?;
        Ok(TrainKtSummary {
            model_path,
            report,
            sessions: histories.len(),
            unknown_questions: parsed.unknown_questions.values().sum(),
        })
    }

    pub fn train(&self, resume: Option<&Path>, progress: impl FnMut(&EpisodeMetrics)) -> Result<TrainSummary> {
        let sim = self.simulator()?;
        let model = HierModel::new(self.model_spec())?;
        let mut config = self.config.training.clone();
        config.seed = rng::derive_seed(self.config.seed, "rollout", 0);
        let resume = resume.map(Checkpoint::load).transpose()?;
        let metrics_path = self.output_path("metrics", "train_metrics.csv");
        let outputs = TrainOutputs {
            metrics_csv: Some(metrics_path.clone()),
            checkpoint_dir: Some(self.output_dir().join("checkpoints")),
        };
        let report = train_run(&config, model, sim.as_ref(), self.curriculum.clone(), &outputs, resume.as_ref(), progress)?;
        let checkpoint_path = self.policy_checkpoint_path();
        report.checkpoint.save(&checkpoint_path)?;
        let plot_path = self.output_path("plots", "learning_curve.svg");
        let deltas: Vec<f64> = report.metrics.iter().map(|m| m.delta_u).collect();
        let window = (deltas.len() / 20).clamp(1, 100);
        let curve = moving_average(&deltas, window)
            .into_iter()
            .zip(&report.metrics)
            .map(|(v, m)| (m.episode as f64, v))
            .collect();
        write_line_chart(
            &plot_path,
            "Training learning effect",
            "episode",
            &format!("moving average of delta_u (window {window})"),
            &[("delta_u".to_string(), curve)],
        )?;
        Ok(TrainSummary {
            checkpoint_path,
            metrics_path,
            plot_path,
            metrics: report.metrics,
        })
    }

    /// Loads a policy checkpoint and checks it belongs to this curriculum and model layout.
    pub fn load_model(&self, checkpoint: Option<&Path>) -> Result<Arc<HierModel>> {
        let path = checkpoint.map_or_else(|| self.policy_checkpoint_path(), Path::to_path_buf);
        let ckpt = Checkpoint::load(&path)?;
        ckpt.verify(&self.curriculum, &self.model_spec())?;
        Ok(Arc::new(ckpt.model()?))
    }

    fn recommender(&self, name: &str, model: Option<Arc<HierModel>>, k: Option<usize>) -> Result<Arc<dyn Recommender>> {
        RecommenderRegistry::default().build(
            name,
            &RecommenderContext {
                curriculum: self.curriculum.clone(),
                model,
                k,
            },
        )
    }

    pub fn evaluate(&self, checkpoint: Option<&Path>) -> Result<EvaluateSummary> {
        let sim = self.simulator()?;
        let model = self.load_model(checkpoint)?;
        let protocol = self.protocol();
        let mut names = vec!["hierarchical"];
        if self.config.evaluation.include_random {
            names.push("random");
        }
        let mut results = Vec::new();
        let mut series = Vec::new();
        for name in names {
            let rec = self.recommender(name, Some(model.clone()), None)?;
            let result = evaluate(rec.as_ref(), sim.as_ref(), &protocol)?;
            let path = self.output_path("results", &format!("eval_{name}.csv"));
            write_results_csv(&result, &path)?;
            let mut budgets = protocol.budgets.clone();
            budgets.sort_unstable();
            let points = budgets
                .iter()
                .filter_map(|&b| result.summary(b).map(|(m, _)| (b as f64, m)))
                .collect();
            series.push((name.to_string(), points));
            results.push((result, path));
        }
        let plot_path = self.output_path("plots", "eval_budgets.svg");
        write_line_chart(&plot_path, "Learning effect by step budget", "steps", "mean delta_u", &series)?;
        Ok(EvaluateSummary { results, plot_path })
    }

    pub fn sweep(&self, checkpoint: Option<&Path>, axes: &[SweepAxis]) -> Result<Vec<(SweepTable, PathBuf, PathBuf)>> {
        let sim = self.simulator()?;
        let model = self.load_model(checkpoint)?;
        let protocol = self.protocol();
        let mut out = Vec::new();
        for axis in axes {
            if let SweepAxis::KConcepts(values) = axis {
                if let Some(&k) = values.iter().find(|&&k| k == 0 || k > self.curriculum.n_concepts()) {
                    return Err(Error::KTooLarge {
                        k,
                        available: self.curriculum.n_concepts(),
                    });
                }
            }
            let factory = |k: Option<usize>| self.recommender("hierarchical", Some(model.clone()), k);
            let table = sweep(&factory, sim.as_ref(), axis, &protocol)?;
            let csv_path = self.output_path("results", &format!("sweep_{}.csv", table.axis));
            table.write_csv(&csv_path)?;
            let plot_path = self.output_path("plots", &format!("sweep_{}.svg", table.axis));
            write_line_chart(&plot_path, &format!("Sweep over {}", table.axis), table.axis, "mean delta_u", &table.series())?;
            out.push((table, csv_path, plot_path));
        }
        Ok(out)
    }

    pub fn sweep_axes(&self) -> (SweepAxis, SweepAxis) {
        (
            SweepAxis::KConcepts(self.config.evaluation.sweep_k.clone()),
            SweepAxis::WarmupLen(self.config.evaluation.sweep_warmup.clone()),
        )
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
