use std::sync::Arc;

use hierrec::curriculum::{CurriculumMap, LearningHistory, QuestionId};
use hierrec::rng;
use hierrec::simulators::{auc, irt_prob, KssConfig, KssSimulator, KtModel, KtSimConfig, KtSimulator, KtTrainConfig, Simulator};
use proptest::prelude::*;
use rand::Rng;

fn reference() -> KssSimulator {
    KssSimulator::new(KssConfig::default(), Arc::new(CurriculumMap::one_to_one(10).unwrap())).unwrap()
}

fn kss_histories(n: usize, steps: usize, seed: u64) -> Vec<LearningHistory> {
    let sim = reference();
    (0..n as u64)
        .map(|i| {
            let s = rng::derive_seed(seed, "student", i);
            let targets = sim.sample_targets(&mut rng::from_seed(s));
            sim.reset(&targets, steps, s).unwrap().history
        })
        .collect()
}

#[test]
fn auc_matches_pair_counting() {
    let mut r = rng::from_seed(2);
    let scores: Vec<f64> = (0..300).map(|_| (r.gen_range(0..20) as f64) / 20.0).collect();
    let labels: Vec<bool> = scores.iter().map(|&s| r.gen_bool(0.2 + 0.6 * s)).collect();
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                wins += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    assert!((auc(&scores, &labels).unwrap() - wins / pairs).abs() < 1e-12);
    assert_eq!(auc(&[0.1, 0.9], &[true, true]), None);
}

#[test]
fn kt_model_learns_from_kss_logs() {
    let histories = kss_histories(400, 50, 1);
    let config = KtTrainConfig {
        epochs: 3,
        seed: 4,
        ..KtTrainConfig::default()
    };
    let (model, report) = KtModel::train(&histories, 10, &config).unwrap();
    assert_eq!(report.train_sessions + report.holdout_sessions, 400);
    assert_eq!(report.epoch_losses.len(), 3);
    assert!(report.epoch_losses[2] < report.epoch_losses[0]);
    assert!(report.holdout_auc.unwrap() > 0.6, "{report:?}");

    let (again, _) = KtModel::train(&histories, 10, &config).unwrap();
    assert_eq!(model, again);

    let history = &histories[0];
    let direct = model.predict(history, QuestionId(3));
    assert!((direct - model.prob(&model.state_after(history), QuestionId(3))).abs() < 1e-15);
}

#[test]
fn kt_simulator_replays_deterministically() {
    let histories = kss_histories(60, 20, 2);
    let (model, _) = KtModel::train(&histories, 10, &KtTrainConfig { epochs: 1, ..KtTrainConfig::default() }).unwrap();
    let sim = KtSimulator::new(
        KtSimConfig {
            n_targets: 4,
            max_steps: 15,
            ..KtSimConfig::default()
        },
        Arc::new(model),
    )
    .unwrap();
    let targets = sim.sample_targets(&mut rng::from_seed(3));
    let play = || {
        let mut reset = sim.reset(&targets, 10, 8).unwrap();
        let answers: Vec<bool> = (0..15).map(|i| reset.session.answer(QuestionId(i % 10)).unwrap()).collect();
        (reset.history, answers, reset.session.mastery(&targets))
    };
    assert_eq!(play(), play());
    assert!(play().2 <= 4);
}

#[test]
fn kss_practice_raises_answer_probability() {
    let sim = reference();
    let mut session = sim.session_with_abilities(vec![0.5; 10], 1);
    let before = hierrec::simulators::SimulatorSession::correct_prob(&session, QuestionId(0));
    hierrec::simulators::SimulatorSession::answer(&mut session, QuestionId(0)).unwrap();
    let after = hierrec::simulators::SimulatorSession::correct_prob(&session, QuestionId(0));
    assert!((before - irt_prob(1.0, 1.0, 0.1, 0.5)).abs() < 1e-15);
    assert!((after - irt_prob(1.0, 1.0, 0.1, 1.5)).abs() < 1e-15);
    // concept 1 is gated by concept 0 (ability 1.5 < 2.0), so it grows by the locked gain only
    hierrec::simulators::SimulatorSession::answer(&mut session, QuestionId(1)).unwrap();
    assert!((session.abilities()[1] - 0.6).abs() < 1e-12);
}

proptest! {
    #[test]
    fn kss_mastery_is_monotone(actions in proptest::collection::vec(0usize..10, 1..30), seed in 0u64..200) {
        let sim = reference();
        let targets = sim.sample_targets(&mut rng::from_seed(seed));
        let mut reset = sim.reset(&targets, 5, seed).unwrap();
        let mut last = reset.initial_mastery;
        for q in actions {
            reset.session.answer(QuestionId(q)).unwrap();
            let now = reset.session.mastery(&targets);
            prop_assert!(now >= last);
            prop_assert!(now <= targets.len());
            last = now;
        }
    }
}
