use fairens::composition::{fit_arrays, fit_pipeline, parse, validate, Expr, Fitted, Rule, TrainingData, VoteMode};
use fairens::dataset::{stratified_kfold, synth_biased, Dataset};
use fairens::learners::{CartParams, GbtParams, KnnParams, LearnerKind, LearnerSpec, LogisticParams};
use fairens::mitigation::{ceo, CostConstraint, LfrParams, MitigatorSpec, PrejudiceParams};
use fairens::Error;
use ndarray::Array2;
use proptest::prelude::*;

fn tree() -> Expr {
    Expr::Learner(LearnerSpec::default_for(LearnerKind::DecisionTree))
}

#[test]
fn parses_bagged_repair() {
    let e = parse("Bag(Pr(DIR(0.4), tree), 10)").unwrap();
    let expect = Expr::Bag {
        inner: Box::new(Expr::Pre {
            mitigator: MitigatorSpec::Dir { level: 0.4 },
            inner: Box::new(tree()),
        }),
        n: 10,
        bootstrap: true,
    };
    assert_eq!(e, expect);
    assert_eq!(parse("Boost(tree, 1)").unwrap(), Expr::Boost { inner: Box::new(tree()), n: 1 });
}

#[test]
fn parses_named_arguments_and_lists() {
    let e = parse("Stack([tree(max_depth=3), knn(k=7)], gbt, passthrough=true)").unwrap();
    let Expr::Stack { members, passthrough, .. } = &e else { panic!("{e:?}") };
    assert!(*passthrough);
    assert_eq!(members[0], Expr::Learner(LearnerSpec::DecisionTree(CartParams { max_depth: Some(3), min_leaf: 1 })));
    assert_eq!(members[1], Expr::Learner(LearnerSpec::Knn(KnnParams { k: 7 })));
    let v = parse("Vote([PR(eta=100), PR(eta=100)], soft)").unwrap();
    assert!(matches!(v, Expr::Vote { mode: VoteMode::Soft, .. }));
    let l = parse("Pr(LFR(k=5, Ax=0.01, Ay=10, Az=5), tree)").unwrap();
    assert_eq!(l.to_string(), "Pr(LFR(k=5, Ax=0.01, Ay=10, Az=5), tree)");
}

#[test]
fn syntax_errors() {
    assert!(matches!(parse("Bag(tree"), Err(Error::Syntax { offset: 8, .. })));
    assert!(matches!(parse(""), Err(Error::Syntax { .. })));
    assert!(matches!(parse("Bag(tree, 0)"), Err(Error::Syntax { .. })));
    assert!(matches!(parse("Vote([tree])"), Err(Error::Syntax { .. })));
    assert!(matches!(parse("tree extra"), Err(Error::Syntax { .. })));
    assert!(matches!(parse("Pr(CEO, tree)"), Err(Error::Syntax { .. })));
    assert!(matches!(parse("DIR(0.4)"), Err(Error::Syntax { .. })));
    assert!(matches!(parse("tree(depth=3)"), Err(Error::Syntax { .. })));
    assert!(matches!(parse("Forest(tree)"), Err(Error::UnknownName { .. })));
}

fn rule_of(text: &str) -> Option<Rule> {
    validate(&parse(text).unwrap()).err().map(|e| e.rule)
}

#[test]
fn validation_examples() {
    assert_eq!(rule_of("Pr(DIR(1.0), Stack([tree,knn], gbt, passthrough=true))"), None);
    assert_eq!(rule_of("Stack([tree,knn], Pr(DIR(1.0), gbt), passthrough=false)"), Some(Rule::R3));
    assert_eq!(rule_of("Bag(Pr(Reweigh, Pr(DIR(0.4), tree)), 10)"), Some(Rule::R5));
    assert_eq!(rule_of("In(PR, Bag(tree, 10))"), Some(Rule::R1));
    assert_eq!(rule_of("Vote([Post(CEO, tree), knn], soft)"), Some(Rule::R2));
    assert_eq!(rule_of("Vote([Post(CEO, tree), knn], hard)"), None);
    assert_eq!(rule_of("Stack([Pr(Reweigh, tree), knn], Pr(DIR(1), gbt), passthrough=true)"), Some(Rule::R4));
    let err = validate(&parse("Bag(Pr(Reweigh, Pr(DIR(0.4), tree)), 10)").unwrap()).unwrap_err();
    assert_eq!(err.path, "$.inner");
}

#[test]
fn first_rule_in_order_is_reported() {
    // violates R1 and R5
    assert_eq!(rule_of("Pr(Reweigh, In(PR, tree))"), Some(Rule::R1));
    // violates R3 and R4
    assert_eq!(rule_of("Stack([Pr(Reweigh, tree), knn], Pr(DIR(1), gbt))"), Some(Rule::R3));
}

fn arb_learner() -> impl Strategy<Value = LearnerSpec> {
    prop_oneof![
        (prop::option::of(1usize..6), 1usize..4).prop_map(|(d, m)| LearnerSpec::DecisionTree(CartParams { max_depth: d, min_leaf: m })),
        prop::sample::select(vec![0.0, 0.01, 0.5, 2.0])
            .prop_map(|l2| LearnerSpec::LogisticRegression(LogisticParams { l2, ..Default::default() })),
        (1usize..9).prop_map(|k| LearnerSpec::Knn(KnnParams { k })),
        (1usize..60, 1usize..4).prop_map(|(n, d)| LearnerSpec::GradientBoostedTrees(GbtParams { n_rounds: n, learning_rate: 0.1, max_depth: d })),
        (0u8..2).prop_map(|label| LearnerSpec::DummyConstant { label }),
    ]
}

fn arb_mitigator() -> impl Strategy<Value = MitigatorSpec> {
    prop_oneof![
        Just(MitigatorSpec::Reweigh),
        prop::sample::select(vec![0.0, 0.2, 0.4, 1.0]).prop_map(|level| MitigatorSpec::Dir { level }),
        (2usize..20, prop::sample::select(vec![1.0, 5.0, 10.0]))
            .prop_map(|(k, ay)| MitigatorSpec::Lfr(LfrParams { k, ay, ..Default::default() })),
        prop::sample::select(vec![0.0, 1.0, 100.0, 1000.0]).prop_map(|eta| MitigatorSpec::Pr(PrejudiceParams { eta, ..Default::default() })),
        prop::sample::select(vec![CostConstraint::Weighted, CostConstraint::Fpr, CostConstraint::Fnr])
            .prop_map(|cost| MitigatorSpec::Ceo { cost }),
    ]
}

fn arb_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        arb_learner().prop_map(Expr::Learner),
        prop::sample::select(vec![1.0, 100.0])
            .prop_map(|eta| Expr::In { mitigator: MitigatorSpec::Pr(PrejudiceParams { eta, ..Default::default() }), inner: None }),
    ];
    leaf.prop_recursive(3, 24, 3, |inner| {
        prop_oneof![
            (arb_mitigator(), inner.clone()).prop_map(|(m, e)| match m {
                MitigatorSpec::Ceo { .. } => Expr::Post { mitigator: m, inner: Box::new(e) },
                MitigatorSpec::Pr(_) => Expr::In { mitigator: m, inner: Some(Box::new(e)) },
                _ => Expr::Pre { mitigator: m, inner: Box::new(e) },
            }),
            (inner.clone(), 1usize..200, any::<bool>()).prop_map(|(e, n, b)| Expr::Bag { inner: Box::new(e), n, bootstrap: b }),
            (inner.clone(), 1usize..600).prop_map(|(e, n)| Expr::Boost { inner: Box::new(e), n }),
            (prop::collection::vec(inner.clone(), 2..4), any::<bool>())
                .prop_map(|(m, soft)| Expr::Vote { members: m, mode: if soft { VoteMode::Soft } else { VoteMode::Hard } }),
            (prop::collection::vec(inner.clone(), 2..4), inner, any::<bool>())
                .prop_map(|(m, f, p)| Expr::Stack { members: m, final_estimator: Box::new(f), passthrough: p }),
        ]
    })
}

/// Replaces every leaf learner with `spec`.
fn relabel(e: &Expr, spec: &LearnerSpec) -> Expr {
    let r = |x: &Expr| Box::new(relabel(x, spec));
    match e {
        Expr::Learner(_) => Expr::Learner(spec.clone()),
        Expr::Pre { mitigator, inner } => Expr::Pre { mitigator: mitigator.clone(), inner: r(inner) },
        Expr::In { mitigator, inner } => Expr::In { mitigator: mitigator.clone(), inner: inner.as_deref().map(r) },
        Expr::Post { mitigator, inner } => Expr::Post { mitigator: mitigator.clone(), inner: r(inner) },
        Expr::Bag { inner, n, bootstrap } => Expr::Bag { inner: r(inner), n: *n, bootstrap: *bootstrap },
        Expr::Boost { inner, n } => Expr::Boost { inner: r(inner), n: *n },
        Expr::Vote { members, mode } => Expr::Vote { members: members.iter().map(|m| relabel(m, spec)).collect(), mode: *mode },
        Expr::Stack { members, final_estimator, passthrough } => Expr::Stack {
            members: members.iter().map(|m| relabel(m, spec)).collect(),
            final_estimator: r(final_estimator),
            passthrough: *passthrough,
        },
    }
}

proptest! {
    #[test]
    fn display_parses_back(e in arb_expr()) {
        let text = e.to_string();
        prop_assert_eq!(parse(&text).unwrap(), e, "{}", text);
    }

    #[test]
    fn validation_ignores_leaf_learners(e in arb_expr(), spec in arb_learner()) {
        let a = validate(&e).map_err(|x| x.rule);
        let b = validate(&relabel(&e, &spec)).map_err(|x| x.rule);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn post_mitigated_pipelines_have_no_probabilities(e in arb_expr()) {
        if matches!(e, Expr::Post { .. }) {
            prop_assert!(!e.capabilities().supports_proba);
        }
    }
}

fn fixture(seed: u64) -> (Dataset, Vec<usize>, Vec<usize>) {
    let ds = synth_biased(240, 0.8, 0.4, 5, seed).unwrap();
    let plan = stratified_kfold(&ds, 3, seed).unwrap();
    (ds.clone(), plan.train_indices(0), plan.test_indices(0))
}

fn predictions(text: &str, ds: &Dataset, train: &[usize], test: &[usize], seed: u64) -> Vec<u8> {
    let tp = fit_pipeline(&parse(text).unwrap(), ds, train, seed).unwrap();
    let g: Vec<u8> = test.iter().map(|&i| ds.g[i]).collect();
    tp.predict(ds.rows(test).view(), Some(&g)).unwrap()
}

#[test]
fn ensemble_identities() {
    for s in 0..4 {
        let (ds, train, test) = fixture(s);
        for base in ["tree", "logreg", "gbt(n_rounds=10)", "knn", "Pr(DIR(1), tree)"] {
            let p = predictions(base, &ds, &train, &test, s);
            assert_eq!(predictions(&format!("Boost({base}, 1)"), &ds, &train, &test, s), p, "boost {base}");
            assert_eq!(predictions(&format!("Bag({base}, 1, bootstrap=false)"), &ds, &train, &test, s), p, "bag {base}");
            assert_eq!(predictions(&format!("Vote([{base}, {base}, {base}], hard)"), &ds, &train, &test, s), p, "vote {base}");
        }
    }
}

#[test]
fn dummy_under_any_ensemble_is_all_favorable() {
    let (ds, train, test) = fixture(9);
    for text in [
        "Bag(dummy, 5)",
        "Boost(dummy, 3)",
        "Vote([dummy, dummy, dummy], hard)",
        "Vote([dummy, dummy], soft)",
        "Stack([dummy, dummy], dummy)",
        "Pr(Reweigh, Bag(dummy, 4))",
    ] {
        assert!(predictions(text, &ds, &train, &test, 1).iter().all(|&v| v == 1), "{text}");
    }
}

#[test]
fn zero_repair_matches_plain_learner() {
    let (ds, train, test) = fixture(3);
    assert_eq!(predictions("Pr(DIR(0), tree)", &ds, &train, &test, 2), predictions("tree", &ds, &train, &test, 2));
}

#[test]
fn post_over_cost_equal_scores_is_identity() {
    // two perfectly separated clusters: calibration costs are zero for both groups
    let n = 120;
    let y: Vec<u8> = (0..n).map(|i| u8::from(i % 2 == 0)).collect();
    let g: Vec<u8> = (0..n).map(|i| u8::from(i % 4 < 2)).collect();
    let x = Array2::from_shape_fn((n, 2), |(i, j)| if j == 0 { f64::from(y[i]) * 10.0 + (i % 7) as f64 * 0.1 } else { (i % 5) as f64 });
    let data = || TrainingData { x: x.view(), y: &y, g: &g, weights: None, numeric: &[true, true], scale_numeric: false };
    let post = fit_arrays(&parse("Post(CEO, tree)").unwrap(), data(), 4).unwrap();
    let Fitted::Post { model, .. } = &post.root else { panic!() };
    assert_eq!(model.costs, [0.0, 0.0]);
    assert_eq!(model.alpha, [0.0, 0.0]);
    // the oracle agrees the calibration costs are equal
    assert_eq!(ceo::group_cost(&[1.0, 0.0], &[1, 0], CostConstraint::Weighted), 0.0);
    let plain = fit_arrays(&parse("tree").unwrap(), data(), 4).unwrap();
    let xt = Array2::from_shape_fn((20, 2), |(i, j)| if j == 0 { (i % 2) as f64 * 10.0 } else { 1.0 });
    let gt: Vec<u8> = (0..20).map(|i| (i % 3 == 0) as u8).collect();
    assert_eq!(post.predict(xt.view(), Some(&gt)).unwrap(), plain.predict(xt.view(), Some(&gt)).unwrap());
}

#[test]
fn group_required_for_repair_and_post() {
    let (ds, train, test) = fixture(5);
    for text in ["Pr(DIR(0.5), tree)", "Post(CEO, tree)"] {
        let tp = fit_pipeline(&parse(text).unwrap(), &ds, &train, 0).unwrap();
        let err = tp.predict(ds.rows(&test).view(), None).unwrap_err();
        assert!(err.to_string().contains("group"), "{err}");
    }
    let tp = fit_pipeline(&parse("Pr(Reweigh, tree)").unwrap(), &ds, &train, 0).unwrap();
    assert!(tp.predict(ds.rows(&test).view(), None).is_ok());
}

#[test]
fn post_mitigated_pipeline_refuses_probabilities() {
    let (ds, train, test) = fixture(6);
    let tp = fit_pipeline(&parse("Post(CEO, tree)").unwrap(), &ds, &train, 0).unwrap();
    assert!(!tp.capabilities.supports_proba);
    let g: Vec<u8> = test.iter().map(|&i| ds.g[i]).collect();
    assert!(matches!(tp.predict_proba(ds.rows(&test).view(), Some(&g)), Err(Error::Capability(_))));
}

#[test]
fn post_members_work_in_hard_ensembles() {
    let (ds, train, test) = fixture(7);
    for text in [
        "Bag(Post(CEO, tree), 3)",
        "Boost(Post(CEO, tree), 3)",
        "Vote([Post(CEO, tree), Post(CEO, knn), Post(CEO, logreg)], hard)",
        "Stack([Post(CEO, tree), Post(CEO, knn)], gbt(n_rounds=5))",
    ] {
        assert_eq!(predictions(text, &ds, &train, &test, 3).len(), test.len(), "{text}");
    }
}

#[test]
fn samme_weights_are_finite_and_positive() {
    for s in 0..5 {
        let (ds, train, _) = fixture(20 + s);
        let tp = fit_pipeline(&parse("Boost(tree(max_depth=1), 20)").unwrap(), &ds, &train, s).unwrap();
        let Fitted::Boost { alphas, members } = &tp.root else { panic!() };
        assert_eq!(alphas.len(), members.len());
        assert!(alphas.iter().all(|a| a.is_finite() && *a > 0.0));
    }
}

#[test]
fn stacking_meta_width() {
    let (ds, train, test) = fixture(8);
    for (text, pass) in [("Stack([tree, knn, logreg], gbt(n_rounds=5))", false), ("Stack([tree, knn, logreg], gbt(n_rounds=5), passthrough=true)", true)] {
        let tp = fit_pipeline(&parse(text).unwrap(), &ds, &train, 0).unwrap();
        let Fitted::Stack { meta_width, final_estimator, .. } = &tp.root else { panic!() };
        assert_eq!(*meta_width, 3);
        let Fitted::Learner(m) = &**final_estimator else { panic!() };
        assert_eq!(m.meta.n_cols, 3 + if pass { ds.n_cols() } else { 0 });
        let _ = predictions(text, &ds, &train, &test, 0);
    }
}

#[test]
fn soft_vote_over_post_is_rejected_at_fit() {
    let (ds, train, _) = fixture(2);
    let err = fit_pipeline(&parse("Vote([Post(CEO, tree), knn], soft)").unwrap(), &ds, &train, 0).unwrap_err();
    assert!(matches!(err, Error::Feasibility(ref f) if f.rule == Rule::R2));
}

#[test]
fn fitting_is_deterministic() {
    let (ds, train, test) = fixture(11);
    for text in [
        "Bag(Pr(DIR(0.4), tree), 5)",
        "Pr(LFR(k=3, Ax=0.01, Ay=1, Az=10, max_iter=20), logreg)",
        "Post(CEO(cost=fnr), gbt(n_rounds=5))",
        "Stack([PR(eta=10), knn], tree, passthrough=true)",
        "Pr(Reweigh, Boost(tree(max_depth=2), 5))",
    ] {
        let a = predictions(text, &ds, &train, &test, 5);
        let b = predictions(text, &ds, &train, &test, 5);
        assert_eq!(a, b, "{text}");
    }
}
