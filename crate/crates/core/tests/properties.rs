use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

use clues_core::entail::{aggregate_logits, predict, scores_to_logits, EntailmentScores, OracleMode, PreparedSymbolic};
use clues_core::explang::{meta_of, parse_explanation, render_explanation, ExplanationMeta, ParseContext};
use clues_core::rules::{enumerate_task_types, sample_ruleset, LabelArity, Rule};
use clues_core::schema::{builtin_schemas, sample_example, SchemaSpec};
use clues_core::seed::task_rng;
use clues_core::taskgen::{assign_label_index, generate_task, GenOptions};

/// A random task frame: schema slice, its labels, and a rule set.
fn frame(type_index: usize, seed: u64) -> Option<(SchemaSpec, Vec<Rule>)> {
    let ttype = enumerate_task_types()[type_index];
    let mut rng = task_rng(seed);
    let schemas = builtin_schemas();
    let eligible: Vec<_> = schemas
        .iter()
        .filter(|s| ttype.label_arity == LabelArity::Binary || s.target_labels.len() >= 3)
        .collect();
    let schema = eligible.choose(&mut rng)?;
    let attrs: Vec<String> = schema.attributes.choose_multiple(&mut rng, 5).map(|a| a.name.clone()).collect();
    let k = match ttype.label_arity {
        LabelArity::Binary => 2,
        LabelArity::Multiclass => rng.gen_range(3..=schema.target_labels.len().min(5)),
    };
    let labels: Vec<String> = schema.target_labels.choose_multiple(&mut rng, k).cloned().collect();
    let rules = sample_ruleset(ttype, schema, &attrs, &labels, &mut rng).ok()?;
    Some((schema.slice(&attrs, &labels).unwrap(), rules))
}

fn scores() -> impl Strategy<Value = EntailmentScores> {
    (0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64).prop_map(|(e, c, n)| EntailmentScores::new(e, c, n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn render_then_parse_is_identity(type_index in 0usize..48, seed in any::<u64>()) {
        if let Some((schema, rules)) = frame(type_index, seed) {
            let ctx = ParseContext::from_schema(&schema);
            for rule in &rules {
                let e = render_explanation(rule);
                let (parsed, meta) = parse_explanation(&e.text, &ctx).unwrap();
                prop_assert_eq!(&parsed, rule);
                prop_assert_eq!(meta, meta_of(rule));
            }
        }
    }

    #[test]
    fn oracle_recovers_unquantified_labels(type_index in 0usize..48, seed in any::<u64>()) {
        if let Some((schema, rules)) = frame(type_index, seed) {
            let rules: Vec<Rule> = rules.into_iter().map(|r| Rule { quantifier: None, ..r }).collect();
            let ctx = ParseContext::from_schema(&schema);
            let explanations: Vec<_> = rules.iter().map(render_explanation).collect();
            let backend = PreparedSymbolic::new(OracleMode::Algorithmic, &explanations, &ctx).unwrap();
            let attrs: Vec<String> = schema.attribute_names().map(String::from).collect();
            let mut rng = task_rng(seed ^ 1);
            for _ in 0..50 {
                let ex = sample_example(&schema, &attrs, &mut rng).unwrap();
                let gold = assign_label_index(&ex, &rules, &schema.target_labels, &mut rng).unwrap();
                prop_assert_eq!(predict(&ex, &explanations, &ctx, &backend).unwrap().label_index, gold);
            }
        }
    }

    #[test]
    fn logits_conserve_mass_and_swap(s in scores(), k in 2usize..7, target in 0usize..7, assign in any::<bool>()) {
        let labels: Vec<String> = (0..k).map(|i| format!("L{i}")).collect();
        let meta = |assign| ExplanationMeta { l_exp: labels[target % k].clone(), assign, quantifier: None };
        let a = scores_to_logits(&s, &meta(assign), &labels).unwrap();
        prop_assert!((a.0.iter().sum::<f64>() - s.total()).abs() < 1e-9);
        let b = scores_to_logits(&EntailmentScores::new(s.p_c, s.p_e, s.p_n), &meta(!assign), &labels).unwrap();
        for (x, y) in a.0.iter().zip(&b.0) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        let mean = aggregate_logits(&[a.clone(), a.clone()]).unwrap();
        for (x, y) in a.0.iter().zip(&mean.0) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn generation_is_seed_deterministic(type_index in 0usize..48, seed in any::<u64>()) {
        let ttype = enumerate_task_types()[type_index];
        let schema = builtin_schemas().into_iter().find(|s| s.name == "bond-relevance").unwrap();
        let a = generate_task("t", ttype, &schema, seed, GenOptions::default()).unwrap();
        let b = generate_task("t", ttype, &schema, seed, GenOptions::default()).unwrap();
        prop_assert!(a.splits.partitions(a.examples.len()));
        prop_assert_eq!(a, b);
    }
}
