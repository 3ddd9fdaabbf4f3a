//! End-to-end acceptance run: every criterion prints one PASS/FAIL line.

use std::collections::BTreeSet;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use hierrec::curriculum::{ConceptId, CurriculumMap, LearningHistory, LearningTarget, QuestionId};
use hierrec::encoder::EncoderConfig;
use hierrec::evaluation::{learning_effect, EvalResult};
use hierrec::experiment::Experiment;
use hierrec::policy::{DecisionMode, HierModel, HierPolicy, ModelSpec, PolicyConfig, RandomPolicy, Recommender};
use hierrec::rng;
use hierrec::simulators::{start_episode, KssConfig, KssSimulator, Simulator};
use hierrec::training::{check_gradient, returns, rollout, RewardMode};
use rand::seq::SliceRandom;
use rand::Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit: Duration, detail: String) -> Outcome {
    let detail = format!("{detail}; {:.1}s", elapsed.as_secs_f64());
    ensure(elapsed <= limit, detail)
}

fn small_spec(n_concepts: usize, n_questions: usize, k: usize, init_seed: u64) -> ModelSpec {
    ModelSpec {
        encoder: EncoderConfig {
            d_a: 8,
            d_z: 8,
            d_h: 16,
            d_m: 16,
            heads: 1,
        },
        policy: PolicyConfig {
            k,
            aux_hidden: 8,
            ..PolicyConfig::default()
        },
        n_concepts,
        n_questions,
        init_seed,
    }
}

fn metric_exactness() -> Outcome {
    let start = Instant::now();
    let mut r = rng::from_seed(1);
    let mut max_err = 0.0f64;
    for _ in 0..1000 {
        let e_max = r.gen_range(1.0..60.0f64);
        let e_b = r.gen_range(0.0..e_max);
        let e_a = r.gen_range(0.0..=e_max);
        let oracle = (e_a - e_b) / (e_max - e_b);
        let got = learning_effect(e_a, e_b, e_max).map_err(|e| e.to_string())?;
        max_err = max_err.max((got - oracle).abs());
        let eb = e_b.floor();
        let em = e_max.ceil();
        if learning_effect(eb, eb, em).map_err(|e| e.to_string())? != 0.0
            || learning_effect(em, eb, em).map_err(|e| e.to_string())? != 1.0
        {
            return Err(format!("endpoint case ({eb}, {em}) not exact"));
        }
    }
    within(
        start.elapsed(),
        Duration::from_secs(1),
        format!("max abs error {max_err:.2e} over 1000 triples"),
    )
    .and_then(|d| ensure(max_err <= 1e-12, d))
}

fn telescoping_identity() -> Outcome {
    let start = Instant::now();
    let reference = Arc::new(CurriculumMap::one_to_one(10).map_err(|e| e.to_string())?);
    let kss = KssSimulator::new(KssConfig::default(), reference).map_err(|e| e.to_string())?;
    let random = RandomPolicy::new(10).map_err(|e| e.to_string())?;
    let synthetic = Arc::new(CurriculumMap::synthetic(10, 60, 0.2, 3).map_err(|e| e.to_string())?);
    let kss_synth = KssSimulator::new(
        KssConfig {
            n_items: 60,
            ..KssConfig::default()
        },
        synthetic.clone(),
    )
    .map_err(|e| e.to_string())?;
    let model = Arc::new(HierModel::new(small_spec(10, 60, 2, 4)).map_err(|e| e.to_string())?);
    let hier = HierPolicy::new(model, synthetic).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for e in 0..1000u64 {
        let (sim, rec): (&dyn Simulator, &dyn Recommender) = if e % 2 == 0 {
            (&kss, &random)
        } else {
            (&kss_synth, &hier)
        };
        let ep = start_episode(sim, sim.default_warmup(), rng::derive_seed(7, "episode", e)).map_err(|e| e.to_string())?;
        let t = rollout(
            ep,
            rec,
            sim.max_steps(),
            DecisionMode::Sample,
            RewardMode::Telescoping,
            &mut rng::stream(7, "rollout", e),
        )
        .map_err(|e| e.to_string())?;
        let sum: f64 = t.rewards().iter().sum();
        let oracle = (t.final_mastery as f64 - t.initial_mastery as f64) / (t.max_mastery as f64 - t.initial_mastery as f64);
        worst = worst.max((sum - t.delta_u).abs()).max((oracle - t.delta_u).abs());
    }
    within(
        start.elapsed(),
        Duration::from_secs(60),
        format!("max |sum r - delta_u| {worst:.2e} over 1000 episodes"),
    )
    .and_then(|d| ensure(worst <= 1e-9, d))
}

fn return_recursion() -> Outcome {
    let mut r = rng::from_seed(3);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let gamma = [0.0, 0.5, 0.9, 1.0][i % 4];
        let len = r.gen_range(1..=200);
        let rewards: Vec<f64> = (0..len).map(|_| r.gen_range(-1.0..1.0)).collect();
        let got = returns(&rewards, gamma);
        for t in 0..len {
            let oracle: f64 = (t..len).map(|u| gamma.powi((u - t) as i32) * rewards[u]).sum();
            worst = worst.max((got[t] - oracle).abs());
        }
    }
    ensure(worst <= 1e-9, format!("max abs error {worst:.2e} over 1000 reward vectors"))
}

fn masking_soundness() -> Outcome {
    let curriculum = Arc::new(CurriculumMap::synthetic(12, 90, 0.25, 11).map_err(|e| e.to_string())?);
    let model = Arc::new(HierModel::new(small_spec(12, 90, 1, 5)).map_err(|e| e.to_string())?);
    let mut r = rng::from_seed(13);
    let mut decisions = 0;
    let mut outside_mass = 0.0f64;
    for s in 0..200u64 {
        let k = 1 + (s % 3) as usize;
        let policy = HierPolicy::new(model.clone(), curriculum.clone()).map_err(|e| e.to_string())?.with_k(k);
        let targets = LearningTarget::new((0..8).map(|_| QuestionId(r.gen_range(0..90))), 90).map_err(|e| e.to_string())?;
        let mut session = policy.hier_session(&LearningHistory::new(), &targets).map_err(|e| e.to_string())?;
        for _ in 0..50 {
            let rec = hierrec::policy::RecommenderSession::recommend(&mut session, DecisionMode::Sample, &mut r)
                .map_err(|e| e.to_string())?;
            let high = rec.high.as_ref().ok_or("missing high-level decision")?;
            let low = rec.low.as_ref().ok_or("missing low-level decision")?;
            let concepts: Vec<ConceptId> = high.chosen.iter().map(|&c| ConceptId(c)).collect();
            let oracle: BTreeSet<usize> = concepts
                .iter()
                .flat_map(|&c| curriculum.questions_of(c).iter().map(|q| q.0))
                .collect();
            let support: BTreeSet<usize> = low.distribution.support().iter().copied().collect();
            if support != oracle || support.len() != low.distribution.len() {
                return Err(format!("support {support:?} != Q_t {oracle:?}"));
            }
            let mass: f64 = oracle.iter().map(|&q| low.distribution.prob(q)).sum();
            outside_mass = outside_mass.max((1.0 - mass).abs());
            for q in 0..90 {
                if !oracle.contains(&q) && low.distribution.prob(q) != 0.0 {
                    return Err(format!("question {q} outside Q_t has mass"));
                }
            }
            if !oracle.contains(&rec.question.0) {
                return Err(format!("question {} outside Q_t chosen", rec.question.0));
            }
            hierrec::policy::RecommenderSession::observe(&mut session, rec.question, r.gen_bool(0.5))
                .map_err(|e| e.to_string())?;
            decisions += 1;
        }
    }
    ensure(
        outside_mass <= 1e-12,
        format!("{decisions} decisions, support equals Q_t, max |1 - mass in Q_t| {outside_mass:.1e}"),
    )
}

fn permutation_invariance() -> Outcome {
    let model = HierModel::new(small_spec(60, 60, 1, 6)).map_err(|e| e.to_string())?;
    let p = model.params.values();
    let enc = &model.encoder;
    let mut r = rng::from_seed(17);
    let mut worst = 0.0f64;
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    for size in [1usize, 2, 10, 50] {
        let mut set: Vec<usize> = rand::seq::index::sample(&mut r, 60, size).into_vec();
        let base_q = enc.encode_questions(p, &set).map_err(|e| e.to_string())?;
        let base_c = enc.encode_concepts(p, &set).map_err(|e| e.to_string())?;
        let target = |s: &[usize]| LearningTarget::new(s.iter().map(|&q| QuestionId(q)), 60);
        let base_t = enc
            .encode_target(p, &target(&set).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        for _ in 0..100 {
            set.shuffle(&mut r);
            worst = worst.max(diff(&base_q, &enc.encode_questions(p, &set).map_err(|e| e.to_string())?));
            worst = worst.max(diff(&base_c, &enc.encode_concepts(p, &set).map_err(|e| e.to_string())?));
            let t = enc
                .encode_target(p, &target(&set).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?;
            worst = worst.max(diff(&base_t, &t));
        }
    }
    ensure(worst <= 1e-6, format!("max deviation {worst:.2e} over 100 permutations per size"))
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let curriculum = Arc::new(CurriculumMap::synthetic(3, 6, 0.3, 5).map_err(|e| e.to_string())?);
    let sim = KssSimulator::new(
        KssConfig {
            n_items: 6,
            max_steps: 3,
            warmup_len: 4,
            ..KssConfig::default()
        },
        curriculum.clone(),
    )
    .map_err(|e| e.to_string())?;
    let spec = ModelSpec {
        encoder: EncoderConfig {
            d_a: 4,
            d_z: 4,
            d_h: 8,
            d_m: 8,
            heads: 1,
        },
        policy: PolicyConfig {
            aux_hidden: 4,
            ..PolicyConfig::default()
        },
        n_concepts: 3,
        n_questions: 6,
        init_seed: 9,
    };
    let model = Arc::new(HierModel::new(spec).map_err(|e| e.to_string())?);
    let policy = HierPolicy::new(model.clone(), curriculum).map_err(|e| e.to_string())?;
    let ep = start_episode(&sim, 4, 21).map_err(|e| e.to_string())?;
    let t = rollout(
        ep,
        &policy,
        3,
        DecisionMode::Sample,
        RewardMode::Telescoping,
        &mut rng::from_seed(21),
    )
    .map_err(|e| e.to_string())?;
    // fixed non-zero weights so every loss term contributes
    let w = [0.8, -0.4, 1.3];
    let report = check_gradient(&model, &t, &w, 1.0, 0.0, 1e-4, 1e-3).map_err(|e| e.to_string())?;
    let detail = format!(
        "{}/{} parameters within 1e-3 (max rel error {:.2e})",
        report.n_passed, report.n_params, report.max_rel_error
    );
    within(start.elapsed(), Duration::from_secs(120), detail).and_then(|d| ensure(report.pass_fraction() >= 0.99, d))
}

fn kss_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/kss.toml")
}

fn experiment(out: &Path, extra: &[&str]) -> Result<Experiment, String> {
    let mut overrides = vec![format!("output_dir=\"{}\"", out.display())];
    overrides.extend(extra.iter().map(|s| s.to_string()));
    Experiment::load(&kss_config(), &overrides).map_err(|e| e.to_string())
}

struct KssRun {
    warm: Vec<EvalResult>,
    cold: Vec<EvalResult>,
    train_time: Duration,
    eval_time: Duration,
}

fn kss_run(out: &Path) -> Result<KssRun, String> {
    let exp = experiment(out, &[])?;
    let t0 = Instant::now();
    exp.train(None, |_| {}).map_err(|e| e.to_string())?;
    let train_time = t0.elapsed();
    let t1 = Instant::now();
    let warm = exp.evaluate(None).map_err(|e| e.to_string())?;
    let eval_time = t1.elapsed();
    let cold = experiment(out, &["evaluation.coldstart=true"])?
        .evaluate(None)
        .map_err(|e| e.to_string())?;
    Ok(KssRun {
        warm: warm.results.into_iter().map(|(r, _)| r).collect(),
        cold: cold.results.into_iter().map(|(r, _)| r).collect(),
        train_time,
        eval_time,
    })
}

fn mean_at(results: &[EvalResult], name: &str, budget: usize) -> Result<f64, String> {
    results
        .iter()
        .find(|r| r.recommender == name)
        .and_then(|r| r.summary(budget))
        .map(|(m, _)| m)
        .ok_or_else(|| format!("no {name} result at budget {budget}"))
}

fn end_to_end(run: &KssRun) -> Outcome {
    let exp = experiment(Path::new("unused"), &[])?;
    let c = &exp.config;
    if c.training.episodes != 30_000 || c.evaluation.n_students != 500 || c.evaluation.seeds.len() != 5 {
        return Err("configs/kss.toml does not hold the 30000-episode / 500-student / 5-seed protocol".into());
    }
    let hier = mean_at(&run.warm, "hierarchical", 30)?;
    let random = mean_at(&run.warm, "random", 30)?;
    let detail = format!(
        "delta_u(30) hierarchical {hier:.4}, random {random:.4}, ratio {:.2}; train {:.0}s eval {:.0}s",
        hier / random,
        run.train_time.as_secs_f64(),
        run.eval_time.as_secs_f64()
    );
    let in_time = run.train_time + run.eval_time <= Duration::from_secs(30 * 60);
    ensure(hier >= 0.35 && hier >= 2.0 * random && in_time, detail)
}

fn budget_monotonicity(run: &KssRun) -> Outcome {
    let d10 = mean_at(&run.warm, "hierarchical", 10)?;
    let d30 = mean_at(&run.warm, "hierarchical", 30)?;
    ensure(d30 >= d10, format!("delta_u(10) {d10:.4}, delta_u(30) {d30:.4}"))
}

fn cold_start(run: &KssRun) -> Outcome {
    let hier = mean_at(&run.cold, "hierarchical", 30)?;
    let random = mean_at(&run.cold, "random", 30)?;
    ensure(
        hier - random >= 0.10,
        format!("warmup 0: hierarchical {hier:.4}, random {random:.4}, margin {:.4}", hier - random),
    )
}

fn kt_fidelity(out: &Path) -> Outcome {
    let start = Instant::now();
    let exp = experiment(out, &[])?;
    let logs = exp.gen_logs().map_err(|e| e.to_string())?;
    let kt = exp.train_kt().map_err(|e| e.to_string())?;
    let auc = kt.report.holdout_auc.ok_or("held-out AUC undefined")?;
    let detail = format!(
        "{} sessions ({} rows), held-out AUC {auc:.4}",
        kt.sessions, logs.rows
    );
    within(start.elapsed(), Duration::from_secs(15 * 60), detail).and_then(|d| ensure(auc >= 0.75 && kt.sessions == 5000, d))
}

fn spatial_reduction() -> Outcome {
    let curriculum = Arc::new(CurriculumMap::synthetic(50, 2000, 0.1, 23).map_err(|e| e.to_string())?);
    let bound_per_k = curriculum.max_questions_per_concept();
    let model = Arc::new(HierModel::new(small_spec(50, 2000, 1, 8)).map_err(|e| e.to_string())?);
    let mut r = rng::from_seed(29);
    let mut steps = 0;
    let mut largest = 0;
    for s in 0..100u64 {
        let k = 1 + (s % 3) as usize;
        let policy = HierPolicy::new(model.clone(), curriculum.clone()).map_err(|e| e.to_string())?.with_k(k);
        let targets = LearningTarget::new((0..20).map(|_| QuestionId(r.gen_range(0..2000))), 2000).map_err(|e| e.to_string())?;
        let mut session = policy.hier_session(&LearningHistory::new(), &targets).map_err(|e| e.to_string())?;
        for _ in 0..100 {
            let rec = hierrec::policy::RecommenderSession::recommend(&mut session, DecisionMode::Sample, &mut r)
                .map_err(|e| e.to_string())?;
            if rec.candidates.len() > k * bound_per_k {
                return Err(format!("|Q_t| = {} exceeds {k} x {bound_per_k}", rec.candidates.len()));
            }
            largest = largest.max(rec.candidates.len());
            hierrec::policy::RecommenderSession::observe(&mut session, rec.question, r.gen_bool(0.5))
                .map_err(|e| e.to_string())?;
            steps += 1;
        }
    }
    Ok(format!(
        "{steps} steps, largest |Q_t| {largest} (max questions per concept {bound_per_k}, n = 2000)"
    ))
}

fn determinism(first: &KssRun, second: &KssRun) -> Outcome {
    let mut compared = 0;
    for (a, b) in first.warm.iter().chain(&first.cold).zip(second.warm.iter().chain(&second.cold)) {
        if a.recommender != b.recommender || a.rows.len() != b.rows.len() {
            return Err("result layout differs between runs".into());
        }
        for (x, y) in a.rows.iter().zip(&b.rows) {
            if x.mean_delta.to_bits() != y.mean_delta.to_bits() || x.std_delta.to_bits() != y.std_delta.to_bits() {
                return Err(format!(
                    "{} budget {} seed {}: {} vs {}",
                    a.recommender, x.budget, x.seed, x.mean_delta, y.mean_delta
                ));
            }
            compared += 1;
        }
    }
    ensure(compared > 0, format!("{compared} per-seed means identical across two full runs"))
}

fn run(id: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        Err(e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let (tag, detail) = match &outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("{tag} [{id:>2}] {name}: {detail}");
    outcome.is_ok()
}

fn main() -> ExitCode {
    let mut ok = true;
    ok &= run(1, "metric exactness", metric_exactness);
    ok &= run(2, "telescoping identity", telescoping_identity);
    ok &= run(3, "return recursion", return_recursion);
    ok &= run(4, "masking soundness", masking_soundness);
    ok &= run(5, "permutation invariance", permutation_invariance);
    ok &= run(6, "gradient check", gradient_check);

    let dir = tempfile::tempdir().expect("temporary directory");
    let first = kss_run(&dir.path().join("kss-a"));
    let second = kss_run(&dir.path().join("kss-b"));
    let with = |r: &Result<KssRun, String>, f: &dyn Fn(&KssRun) -> Outcome| r.as_ref().map_err(Clone::clone).and_then(f);
    ok &= run(7, "end-to-end learning on KSS", || with(&first, &end_to_end));
    ok &= run(8, "step-budget monotonicity", || with(&first, &budget_monotonicity));
    ok &= run(9, "cold start", || with(&first, &cold_start));
    ok &= run(10, "KT simulator fidelity", || kt_fidelity(&dir.path().join("kt")));
    ok &= run(11, "spatial-reduction bound", spatial_reduction);
    ok &= run(12, "determinism", || {
        let a = first.as_ref().map_err(Clone::clone)?;
        let b = second.as_ref().map_err(Clone::clone)?;
        determinism(a, b)
    });
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
