use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hierrec::logs::{parse_logs, read_log_csv, IdDictionary};

const CONFIG: &str = r#"
seed = 1
output_dir = "out"

[curriculum]
source = "kss"

[simulator]
kind = "kss"

[data]
n_students = 10
steps = 20

[encoder]
d_a = 8
d_z = 8
d_h = 16
d_m = 16

[policy]
k = 1

[training]
learning_rate = 1e-3
episodes = 24
batch_size = 8

[evaluation]
budgets = [5, 10, 30]
n_students = 8
seeds = [0, 1]
sweep_k = [1, 2]
sweep_warmup = [0, 5]
"#;

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("exp.toml"), CONFIG).unwrap();
        Self { dir }
    }

    fn config(&self) -> PathBuf {
        self.dir.path().join("exp.toml")
    }

    fn out(&self, rel: &str) -> PathBuf {
        self.dir.path().join("out").join(rel)
    }

    fn run(&self, args: &[&str]) -> Output {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_hierrec"));
        cmd.arg(args[0]).arg("--config").arg(self.config()).args(&args[1..]);
        cmd.output().unwrap()
    }
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn read(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn gen_logs_writes_deterministic_parseable_rows() {
    let f = Fixture::new();
    let o = f.run(&["gen-logs"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let path = f.out("logs/interactions.csv");
    let first = read(&path);
    let text = String::from_utf8(first.clone()).unwrap();
    assert_eq!(text.lines().next(), Some("student_id,question_id,correct,session_id,timestamp"));
    assert_eq!(text.lines().count(), 201);

    assert_eq!(code(&f.run(&["gen-logs"])), 0);
    assert_eq!(read(&path), first);

    let rows = read_log_csv(&path).unwrap();
    let parsed = parse_logs(&rows, &IdDictionary::dense(10)).unwrap();
    assert!(parsed.unknown_questions.is_empty());
    assert_eq!(parsed.sessions.len(), 10);
    let mut rebuilt = Vec::new();
    for s in &parsed.sessions {
        assert_eq!(s.history.len(), 20);
        let original: Vec<_> = rows.iter().filter(|r| r.student_id == s.student_id).collect();
        for (r, rec) in original.iter().zip(&s.history.records) {
            assert_eq!(r.question_id, rec.question.0.to_string());
            assert_eq!(r.correct == 1, rec.correct);
        }
        rebuilt.extend(original);
    }
    assert_eq!(rebuilt.len(), rows.len());
}

#[test]
fn train_evaluate_and_sweep_write_outputs() {
    let f = Fixture::new();
    let o = f.run(&["train"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = fs::read_to_string(f.out("metrics/train_metrics.csv")).unwrap();
    assert_eq!(
        metrics.lines().next(),
        Some("episode,delta_u,loss_h,loss_l,loss_p,loss_total")
    );
    assert_eq!(metrics.lines().count(), 25);
    assert!(f.out("checkpoints/policy.json").exists());
    assert!(f.out("plots/learning_curve.svg").exists());

    let o = f.run(&["evaluate"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["hierarchical", "random"] {
        let text = fs::read_to_string(f.out(&format!("results/eval_{name}.csv"))).unwrap();
        // three budgets for each of two seeds
        assert_eq!(text.lines().count(), 7);
        for budget in [5, 10, 30] {
            assert!(stdout(&o).lines().any(|l| l.starts_with(name) && l.split_whitespace().nth(1) == Some(&budget.to_string())));
        }
    }
    assert!(f.out("plots/eval_budgets.svg").exists());

    let o = f.run(&["sweep", "--axis", "both"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let k = fs::read_to_string(f.out("results/sweep_k_concepts.csv")).unwrap();
    assert_eq!(k.lines().count(), 1 + 2 * 3);
    assert!(f.out("plots/sweep_warmup_len.svg").exists());

    let o = f.run(&["sweep", "--axis", "k", "--set", "evaluation.sweep_k=[11]"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn evaluation_is_reproducible() {
    let f = Fixture::new();
    assert_eq!(code(&f.run(&["train"])), 0);
    assert_eq!(code(&f.run(&["evaluate"])), 0);
    let first = read(&f.out("results/eval_hierarchical.csv"));
    assert_eq!(code(&f.run(&["train"])), 0);
    assert_eq!(code(&f.run(&["evaluate"])), 0);
    assert_eq!(read(&f.out("results/eval_hierarchical.csv")), first);
}

#[test]
fn checkpoints_are_checked_against_the_config() {
    let f = Fixture::new();
    assert_eq!(code(&f.run(&["train", "--set", "policy.freeze_backbone=true"])), 0);
    assert_eq!(code(&f.run(&["evaluate"])), 0);
    let o = f.run(&["evaluate", "--set", "encoder.d_h=12"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("checkpoint"));
    assert_eq!(code(&f.run(&["evaluate", "--set", "policy.backbone.kind=\"linear\""])), 2);
}

#[test]
fn resume_continues_from_a_checkpoint() {
    let f = Fixture::new();
    assert_eq!(code(&f.run(&["train", "--set", "training.episodes=16"])), 0);
    let ckpt = f.dir.path().join("half.json");
    fs::rename(f.out("checkpoints/policy.json"), &ckpt).unwrap();
    let o = f.run(&["train", "--resume", ckpt.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let resumed = read(&f.out("checkpoints/policy.json"));
    assert_eq!(code(&f.run(&["train"])), 0);
    assert_eq!(read(&f.out("checkpoints/policy.json")), resumed);
}

#[test]
fn train_kt_reports_auc() {
    let f = Fixture::new();
    assert_eq!(code(&f.run(&["gen-logs", "--set", "data.n_students=60"])), 0);
    let o = f.run(&["train-kt", "--set", "simulator.kt_train.epochs=1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let line = stdout(&o).lines().find(|l| l.starts_with("held-out AUC:")).unwrap().to_string();
    let value = line.trim_start_matches("held-out AUC: ");
    assert_eq!(value.split('.').nth(1).map(str::len), Some(4), "{line}");
    assert!(f.out("checkpoints/kt_model.json").exists());
    assert!(f.out("results/kt_report.json").exists());
}

#[test]
fn config_errors_exit_with_two() {
    let f = Fixture::new();
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hierrec"));
    let o = cmd.args(["train", "--config"]).arg(f.dir.path().join("missing.toml")).output().unwrap();
    assert_eq!(code(&o), 2);
    assert_eq!(code(&f.run(&["train", "--set", "training.unknown_key=1"])), 2);
    assert_eq!(code(&f.run(&["train", "--set", "training.learning_rate=0.01"])), 2);
    assert_eq!(code(&f.run(&["train", "--set", "no_equals_sign"])), 2);
    assert_eq!(code(&f.run(&["evaluate"])), 2);
    assert_eq!(code(&f.run(&["train-kt"])), 2);
}

#[test]
fn runtime_errors_exit_with_three() {
    let f = Fixture::new();
    fs::create_dir_all(f.out("logs/interactions.csv")).unwrap();
    let o = f.run(&["train-kt"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}
