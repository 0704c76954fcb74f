// SPDX-License-Identifier: MIT OR Apache-2.0

use cause_core::ccmr::extract_label;
use cause_core::synthdata::{
    derive_label, generate_dataset, read_jsonl, templated_explanation, write_jsonl, DatasetHeader, LabelLexicon, Reason,
    TaskSpec, DATASET_FORMAT_VERSION, MAX_EXPLANATION_LEN,
};

#[test]
fn labels_are_near_uniform_and_derivable() {
    let spec = TaskSpec::default();
    let vocab = spec.vocab().unwrap();
    let data = generate_dataset(&spec, 9000, 1000, 42).unwrap();
    let mut hist = [0usize; 3];
    let mut agree = 0;
    for ex in &data.train {
        hist[ex.gold_label] += 1;
        if derive_label(&spec, &vocab, &ex.input) == Some(ex.gold_label) {
            agree += 1;
        }
    }
    // Feature noise occasionally hides the true attribute value.
    assert!(agree >= 8550, "rule agrees on {agree}/9000");
    for count in hist {
        assert!((count as f64 - 3000.0).abs() <= 300.0, "histogram {hist:?}");
    }
    assert_eq!(data.train.len(), 9000);
    assert_eq!(data.test.len(), 1000);
    for t in &data.test[..50] {
        assert!(data.train.iter().all(|ex| ex.input != t.input));
    }
}

#[test]
fn noiseless_labels_follow_the_rule_exactly() {
    let spec = TaskSpec {
        noise_std: 0.0,
        ..TaskSpec::default()
    };
    let vocab = spec.vocab().unwrap();
    let data = generate_dataset(&spec, 500, 50, 1).unwrap();
    for ex in data.train.iter().chain(&data.test) {
        assert_eq!(derive_label(&spec, &vocab, &ex.input), Some(ex.gold_label));
    }
    assert_eq!(data.train, generate_dataset(&spec, 500, 50, 1).unwrap().train);
}

#[test]
fn explanations_start_with_the_label_and_end_with_eos() {
    let spec = TaskSpec::default();
    let vocab = spec.vocab().unwrap();
    let lexicon = LabelLexicon::from_spec(&spec, &vocab);
    let data = generate_dataset(&spec, 600, 100, 7).unwrap();
    for ex in data.train.iter().chain(&data.test) {
        assert_eq!(ex.explanation[0], lexicon.token(ex.gold_label));
        assert_eq!(*ex.explanation.last().unwrap(), vocab.eos());
        assert!(ex.explanation.len() <= MAX_EXPLANATION_LEN);
        assert_eq!(extract_label(&ex.explanation, &lexicon), Some(ex.gold_label));
    }
}

#[test]
fn label_round_trip_over_every_template() {
    let spec = TaskSpec::default();
    let vocab = spec.vocab().unwrap();
    let lexicon = LabelLexicon::from_spec(&spec, &vocab);
    for label in 0..spec.num_labels() {
        for a in spec.visual.iter().chain(&spec.unobservable) {
            for v in &a.values {
                let reason = Reason {
                    attribute: a.name.clone(),
                    hypothesis_value: v.clone(),
                    visual_value: Some(a.values[0].clone()),
                };
                let seq = templated_explanation(&spec, &vocab, label, &reason).unwrap();
                assert_eq!(extract_label(&seq, &lexicon), Some(label));
            }
        }
    }
}

#[test]
fn entailment_template_reads_as_expected() {
    let spec = TaskSpec::default();
    let vocab = spec.vocab().unwrap();
    let reason = Reason {
        attribute: "color".into(),
        hypothesis_value: "red".into(),
        visual_value: Some("red".into()),
    };
    let seq = templated_explanation(&spec, &vocab, 0, &reason).unwrap();
    assert_eq!(vocab.decode(&seq), "entailment because color red matches <eos>");
}

#[test]
fn visual_features_alone_do_not_determine_the_label() {
    // Multinomial logistic regression on the visual features, full-batch
    // gradient descent.
    let spec = TaskSpec::default();
    let data = generate_dataset(&spec, 9000, 1000, 42).unwrap();
    let (d, k) = (spec.v_dim(), spec.num_labels());
    let mut w = vec![vec![0.0; d + 1]; k];
    let logits = |w: &[Vec<f64>], x: &[f64]| -> Vec<f64> {
        w.iter()
            .map(|r| r[d] + r[..d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    };
    for _ in 0..300 {
        let mut grad = vec![vec![0.0; d + 1]; k];
        for ex in &data.train {
            let x = &ex.input.visual_features;
            let l = logits(&w, x);
            let mx = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = l.iter().map(|v| (v - mx).exp()).sum();
            for c in 0..k {
                let g = (l[c] - mx).exp() / z - if c == ex.gold_label { 1.0 } else { 0.0 };
                for j in 0..d {
                    grad[c][j] += g * x[j];
                }
                grad[c][d] += g;
            }
        }
        for c in 0..k {
            for j in 0..=d {
                w[c][j] -= 0.5 * grad[c][j] / data.train.len() as f64;
            }
        }
    }
    let correct = data
        .test
        .iter()
        .filter(|ex| {
            let l = logits(&w, &ex.input.visual_features);
            let best = (0..k).max_by(|&a, &b| l[a].total_cmp(&l[b])).unwrap();
            best == ex.gold_label
        })
        .count();
    assert!(correct <= 900, "visual-only probe reached {correct}/1000");
}

#[test]
fn jsonl_round_trip_is_exact() {
    let spec = TaskSpec::default();
    let data = generate_dataset(&spec, 40, 30, 5).unwrap();
    let dir = std::env::temp_dir().join(format!("cause-synth-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("train.jsonl");
    let header = DatasetHeader {
        format_version: DATASET_FORMAT_VERSION,
        split: "train".into(),
        seed: 5,
        config_hash: "abc".into(),
        task_spec: spec,
    };
    write_jsonl(&path, &header, &data.train).unwrap();
    let (h, back) = read_jsonl(&path).unwrap();
    assert_eq!(h, header);
    assert_eq!(back, data.train);
    std::fs::remove_dir_all(&dir).unwrap();
}
