use refgen_web::{compare, compare_refexes, length_penalty_curve, only_names_js, AttentionDemo};

#[test]
fn length_penalty_curve_starts_at_one() {
    let curve = length_penalty_curve(0.6, 7);
    assert_eq!(curve.len(), 7);
    assert_eq!(curve[0], 1.0);
    assert!((curve[6] - 2f64.powf(0.6)).abs() < 1e-12);
    assert!(curve.windows(2).all(|w| w[0] < w[1]));
    assert!(length_penalty_curve(0.0, 5).iter().all(|&v| v == 1.0));
}

#[test]
fn comparison_of_a_pronoun_with_a_name() {
    let c = compare("he", "alan shepard");
    assert!(!c.exact_match);
    assert!(c.predicted_is_pronoun && !c.gold_is_pronoun);
    assert_eq!(c.edit_distance, 10);
    let same = compare("Alan  Shepard", "alan shepard");
    assert!(same.exact_match);
    assert_eq!(same.bleu, 100.0);
    let json: serde_json::Value = serde_json::from_str(&compare_refexes("", "it")).unwrap();
    assert_eq!(json["bleu"], 0.0);
    assert_eq!(json["gold_is_pronoun"], true);
}

#[test]
fn only_names_export() {
    assert_eq!(only_names_js("Alan_Shepard"), "alan shepard");
}

#[test]
fn attention_demo_trains_and_traces() {
    let mut demo = AttentionDemo::create(3, "hieratt").unwrap();
    assert!(demo.dev_size() > 0);
    let before = demo.dev_accuracy().unwrap();
    let after = demo.run_epochs(4).unwrap();
    assert!(after >= before);
    let d = demo.decode_index(0).unwrap();
    assert!(!d.steps.is_empty());
    for s in &d.steps {
        let beta = s.trace.beta.unwrap();
        assert!((beta[0] + beta[1] - 1.0).abs() < 1e-12);
        if let Some(a) = &s.trace.alpha_pre {
            assert_eq!(a.len(), d.pre_context.len());
        }
    }
    assert!(AttentionDemo::create(3, "transformer").is_err());
}
