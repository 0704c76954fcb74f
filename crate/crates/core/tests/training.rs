// SPDX-License-Identifier: MIT OR Apache-2.0

use cause_core::models::{FrozenClassifier, ModelDims};
use cause_core::synthdata::{generate_dataset, Example, LabelLexicon, MultimodalInput, TaskSpec};
use cause_core::training::{
    explainer_step, filter_dataset, prepare_items, train_classifier, train_explainer, AblationMode, ClassifierConfig,
    ExplainerConfig, ExplainerOptimizer, LossWeights, StepPlan,
};
use cause_core::CoreError;
use gradcore::AdamConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn quick_classifier(train: &[Example]) -> FrozenClassifier {
    let cfg = ClassifierConfig {
        max_epochs: 4,
        accuracy_floor: 0.0,
        ..ClassifierConfig::default()
    };
    let dims = ModelDims::for_task(&TaskSpec::default()).unwrap();
    train_classifier(dims, train, &cfg).unwrap().0
}

fn setup() -> (LabelLexicon, Vec<Example>, Vec<Example>, FrozenClassifier) {
    let spec = TaskSpec::default();
    let vocab = spec.vocab().unwrap();
    let lexicon = LabelLexicon::from_spec(&spec, &vocab);
    let data = generate_dataset(&spec, 800, 64, 42).unwrap();
    let m = quick_classifier(&data.train);
    (lexicon, data.train, data.test, m)
}

#[test]
fn filtering_follows_classifier_correctness() {
    let (lexicon, _, test, m) = setup();
    let items: Vec<Example> = test[..10].to_vec();
    let preds: Vec<usize> = items.iter().map(|e| m.predict(&e.input).unwrap()).collect();

    let mut agree = items.clone();
    for (e, &p) in agree.iter_mut().zip(&preds) {
        e.gold_label = p;
    }
    let all = filter_dataset(&agree, &m, &lexicon).unwrap();
    assert_eq!(all.len(), 10);
    for (f, &p) in all.iter().zip(&preds) {
        let e = f.explanation.as_ref().expect("correct prediction keeps its explanation");
        assert_eq!(e[0], lexicon.token(p));
        assert_eq!(f.m_prediction, p);
    }

    let mut disagree = items.clone();
    for (e, &p) in disagree.iter_mut().zip(&preds) {
        e.gold_label = (p + 1) % 3;
    }
    let none = filter_dataset(&disagree, &m, &lexicon).unwrap();
    assert_eq!(none.len(), 10);
    assert!(none.iter().all(|f| f.explanation.is_none()));
    for (f, e) in none.iter().zip(&disagree) {
        assert_eq!(f.input, e.input);
    }
}

#[test]
fn full_objective_decreases_on_a_toy_set() {
    let (lexicon, train, _, m) = setup();
    let filtered = filter_dataset(&train[..64], &m, &lexicon).unwrap();
    let cfg = ExplainerConfig {
        steps: Some(100),
        final_lr_fraction: 1.0,
        ..ExplainerConfig::default()
    };
    let spec = TaskSpec::default();
    let eos = spec.vocab().unwrap().eos();
    let run = train_explainer(&m, &filtered, &lexicon, eos, &cfg).unwrap();
    let totals: Vec<f64> = run.history.iter().map(|b| b.total).collect();
    let window = |r: std::ops::Range<usize>| totals[r.clone()].iter().sum::<f64>() / r.len() as f64;
    let windows: Vec<f64> = (0..5).map(|k| window(k * 20..(k + 1) * 20)).collect();
    assert!(windows.windows(2).all(|w| w[1] < w[0]), "windowed totals {windows:?}");
    for b in &run.history {
        assert!((b.total - (b.l_phi + b.l_ts + b.l_iit + b.r_match)).abs() < 1e-9);
        assert!(b.l_phi >= 0.0 && b.l_ts >= 0.0 && b.l_iit >= 0.0 && b.r_match >= 0.0);
    }

    // The same fixed batch, stepped repeatedly, goes down monotonically at a small rate.
    let items = prepare_items(&filtered, &m, &lexicon).unwrap();
    let mut e = run.explainer.clone();
    let mut opt = ExplainerOptimizer::new(AdamConfig {
        lr: 1e-4,
        ..AdamConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let batch: Vec<usize> = (0..16).collect();
    let plan = StepPlan::sample(&batch, e.c2.hidden_width(), 0.2, &mut rng).unwrap();
    let w = LossWeights::default();
    let first = explainer_step(&mut e, &mut opt, m.head(), &items, &plan, AblationMode::FullCause, &w, 1e-4)
        .unwrap()
        .total;
    let mut last = first;
    for _ in 0..20 {
        last = explainer_step(&mut e, &mut opt, m.head(), &items, &plan, AblationMode::FullCause, &w, 1e-4)
            .unwrap()
            .total;
    }
    assert!(last < first, "{last} >= {first}");
}

#[test]
fn non_finite_loss_names_the_component() {
    let (lexicon, train, _, m) = setup();
    let filtered = filter_dataset(&train[..16], &m, &lexicon).unwrap();
    let items = prepare_items(&filtered, &m, &lexicon).unwrap();
    let eos = TaskSpec::default().vocab().unwrap().eos();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut e = cause_core::models::Explainer::new(m.dims(), m.head(), eos, &mut rng);
    e.lm.phi.get_mut("out.b").unwrap().data_mut()[0] = f64::NAN;
    let plan = StepPlan::sample(&(0..16).collect::<Vec<_>>(), e.c2.hidden_width(), 0.2, &mut rng).unwrap();
    let mut opt = ExplainerOptimizer::new(AdamConfig::default());
    let before = e.fingerprint();
    let err = explainer_step(
        &mut e,
        &mut opt,
        m.head(),
        &items,
        &plan,
        AblationMode::FullCause,
        &LossWeights::default(),
        1e-3,
    )
    .unwrap_err();
    assert!(matches!(err, CoreError::NonFiniteLoss("l_phi")), "{err}");
    assert_eq!(e.fingerprint(), before, "no update after a failed step");
}

#[test]
fn default_classifier_reaches_the_accuracy_target() {
    let spec = TaskSpec::default();
    let data = generate_dataset(&spec, 9000, 1000, 42).unwrap();
    let dims = ModelDims::for_task(&spec).unwrap();
    let (m, report) = train_classifier(dims, &data.train, &ClassifierConfig::default()).unwrap();
    let correct = data
        .test
        .iter()
        .filter(|e| m.predict(&e.input).unwrap() == e.gold_label)
        .count();
    assert!(correct >= 900, "test accuracy {correct}/1000");
    assert!(report.val_accuracy >= 0.90);
    assert!(report.epochs_run <= ClassifierConfig::default().max_epochs);
}

#[test]
fn separable_data_is_fit_perfectly() {
    let spec = TaskSpec::default();
    let vocab = spec.vocab().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let text = vocab.encode("the object is red").unwrap();
    let examples: Vec<Example> = (0..600)
        .map(|i| {
            let label = i % 3;
            let mut v: Vec<f64> = (0..spec.v_dim()).map(|_| rng.gen_range(-0.1..0.1)).collect();
            v[label] += 2.0;
            Example {
                input: MultimodalInput {
                    text_tokens: text.clone(),
                    visual_features: v,
                },
                gold_label: label,
                explanation: vec![vocab.eos()],
            }
        })
        .collect();
    let dims = ModelDims::for_task(&spec).unwrap();
    let cfg = ClassifierConfig {
        accuracy_floor: 1.0,
        ..ClassifierConfig::default()
    };
    let (m, report) = train_classifier(dims, &examples, &cfg).unwrap();
    assert_eq!(report.val_accuracy, 1.0);
    assert!(examples.iter().all(|e| m.predict(&e.input).unwrap() == e.gold_label));
}

#[test]
fn unmet_accuracy_floor_is_an_error() {
    let spec = TaskSpec::default();
    let data = generate_dataset(&spec, 300, 30, 3).unwrap();
    let dims = ModelDims::for_task(&spec).unwrap();
    let cfg = ClassifierConfig {
        max_epochs: 1,
        accuracy_floor: 1.01,
        ..ClassifierConfig::default()
    };
    match train_classifier(dims, &data.train, &cfg) {
        Err(CoreError::AccuracyFloor { floor, .. }) => assert_eq!(floor, 1.01),
        other => panic!("expected an accuracy-floor error, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn explainer_training_never_touches_the_classifier() {
    let (lexicon, train, _, m) = setup();
    let before = m.fingerprint();
    let filtered = filter_dataset(&train[..64], &m, &lexicon).unwrap();
    let eos = TaskSpec::default().vocab().unwrap().eos();
    for mode in AblationMode::ALL {
        let cfg = ExplainerConfig {
            mode,
            steps: Some(8),
            ..ExplainerConfig::default()
        };
        train_explainer(&m, &filtered, &lexicon, eos, &cfg).unwrap();
        assert_eq!(m.fingerprint(), before);
    }
}
