use std::sync::Arc;

use hierrec::curriculum::CurriculumMap;
use hierrec::error::Error;
use hierrec::evaluation::{evaluate, learning_effect, mean_std, sweep, write_results_csv, EvalProtocol, SweepAxis};
use hierrec::policy::{DecisionMode, RandomPolicy, Recommender};
use hierrec::simulators::{start_episode, KssConfig, KssSimulator, Simulator};
use proptest::prelude::*;

fn kss() -> KssSimulator {
    KssSimulator::new(KssConfig::default(), Arc::new(CurriculumMap::one_to_one(10).unwrap())).unwrap()
}

fn protocol() -> EvalProtocol {
    EvalProtocol {
        budgets: vec![5, 10, 30],
        n_students: 40,
        seeds: vec![0, 1],
        base_seed: 3,
        ..EvalProtocol::default()
    }
}

#[test]
fn evaluation_is_deterministic_and_shaped() {
    let sim = kss();
    let random = RandomPolicy::new(10).unwrap();
    let a = evaluate(&random, &sim, &protocol()).unwrap();
    let b = evaluate(&random, &sim, &protocol()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.rows.len(), 6);
    for row in &a.rows {
        assert_eq!(row.samples.len(), 40);
        let (m, s) = mean_std(&row.samples);
        assert_eq!((m, s), (row.mean_delta, row.std_delta));
        assert!(row.samples.iter().all(|d| (-1.0..=1.0).contains(d)));
    }
    let other = evaluate(&random, &sim, &EvalProtocol { base_seed: 4, ..protocol() }).unwrap();
    assert_ne!(a, other);
}

#[test]
fn coldstart_starts_from_empty_history() {
    let sim = kss();
    let random = RandomPolicy::new(10).unwrap();
    let cold = EvalProtocol {
        coldstart: true,
        ..protocol()
    };
    assert_eq!(cold.effective_warmup(&sim), 0);
    let explicit = EvalProtocol {
        warmup_len: Some(0),
        ..protocol()
    };
    assert_eq!(evaluate(&random, &sim, &cold).unwrap(), evaluate(&random, &sim, &explicit).unwrap());
}

#[test]
fn budgets_beyond_the_step_limit_are_rejected() {
    let sim = kss();
    let random = RandomPolicy::new(10).unwrap();
    let p = EvalProtocol {
        budgets: vec![31],
        ..protocol()
    };
    assert!(evaluate(&random, &sim, &p).is_err());
}

#[test]
fn results_csv_has_fixed_header() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("results/eval.csv");
    let result = evaluate(&RandomPolicy::new(10).unwrap(), &kss(), &protocol()).unwrap();
    write_results_csv(&result, &path).unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("simulator,budget,seed,n_students,mean_delta,std_delta"));
    assert_eq!(lines.count(), 6);
}

#[test]
fn warmup_sweep_covers_every_value() {
    let sim = kss();
    let factory = |_: Option<usize>| -> hierrec::error::Result<Arc<dyn Recommender>> { Ok(Arc::new(RandomPolicy::new(10)?)) };
    let table = sweep(&factory, &sim, &SweepAxis::WarmupLen(vec![0, 10]), &protocol()).unwrap();
    assert_eq!(table.rows.len(), 2);
    assert_eq!(table.budgets(), vec![5, 10, 30]);
    assert!(sweep(&factory, &sim, &SweepAxis::WarmupLen(vec![]), &protocol()).is_err());
}

#[test]
fn episodes_never_start_mastered() {
    let sim = KssSimulator::new(
        KssConfig {
            init_ability_max: 3.0,
            ..KssConfig::default()
        },
        Arc::new(CurriculumMap::one_to_one(10).unwrap()),
    )
    .unwrap();
    for seed in 0..200 {
        match start_episode(&sim, 20, seed) {
            Ok(start) => assert!(start.initial_mastery < start.targets.len()),
            Err(e) => assert!(matches!(e, Error::AlreadyMastered(_))),
        }
    }
    assert_eq!(DecisionMode::default(), DecisionMode::Greedy);
    assert_eq!(sim.max_steps(), 30);
}

proptest! {
    #[test]
    fn learning_effect_matches_ratio(e_max in 1usize..100, b in 0.0f64..1.0, a in 0.0f64..1.0) {
        let e_b = (b * e_max as f64).floor().min(e_max as f64 - 1.0);
        let e_a = (a * (e_max as f64 + 1.0)).floor().min(e_max as f64);
        let got = learning_effect(e_a, e_b, e_max as f64).unwrap();
        prop_assert!((got - (e_a - e_b) / (e_max as f64 - e_b)).abs() <= 1e-12);
        prop_assert!(got <= 1.0);
        if e_a >= e_b {
            prop_assert!(got >= 0.0);
        }
    }

    #[test]
    fn mastered_start_is_an_error(e_max in 1usize..50, extra in 0usize..5) {
        let e_b = (e_max + extra) as f64;
        prop_assert!(matches!(learning_effect(e_b, e_b, e_max as f64), Err(Error::AlreadyMastered(_))));
    }
}
