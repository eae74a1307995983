use std::collections::BTreeSet;

use cal_core::diagnostics::{
    preflight, shuffled_verdict, Thresholds, Verdict, CHECK_COSINE_AUC, CHECK_COSINE_FRACTION, CHECK_PAIRS_PER_ENTITY,
};
use cal_core::eval::auc;
use cal_core::rng::SeededRng;
use cal_core::sampler::sample_eval_negatives;
use cal_core::synth::{generate, Planted, Scenario, ScenarioKind, ScenarioSpec};
use cal_core::types::{unordered, PairIndex, PairSet};

fn scenario(kind: ScenarioKind, n: usize, p: usize, seed: u64) -> Scenario {
    generate(&ScenarioSpec::new(kind, n, 50, p, seed)).unwrap()
}

fn negatives(sc: &Scenario, seed: u64) -> PairSet {
    let n = sc.embeddings.len();
    let index = PairIndex::new(n, sc.positives.iter());
    sample_eval_negatives(&sc.positives, &index, n, 5, 50_000, &mut SeededRng::new(seed)).unwrap()
}

fn cosine_auc(sc: &Scenario, neg: &PairSet) -> f64 {
    let cos = |s: &PairSet| s.iter().map(|(a, b)| sc.embeddings.cosine(a, b)).collect::<Vec<_>>();
    auc(&cos(&sc.positives), &cos(neg)).unwrap()
}

fn check_invariants(sc: &Scenario) {
    for i in 0..sc.embeddings.len() {
        let n: f64 = sc.embeddings.vector(i).iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-5);
    }
    assert_eq!(sc.positives.len(), sc.spec.n_pairs);
    let keys: BTreeSet<_> = sc.positives.iter().map(|(a, b)| unordered(a, b)).collect();
    assert_eq!(keys.len(), sc.positives.len());
    assert!(sc.positives.iter().all(|(a, b)| a != b));
    assert_eq!(sc.graph.edges().len(), sc.positives.len());
}

#[test]
fn every_scenario_is_well_formed_and_reproducible() {
    for kind in [
        ScenarioKind::LatentSignal,
        ScenarioKind::ClusteredPositives,
        ScenarioKind::DegreeConfound,
        ScenarioKind::NoSignal,
    ] {
        let a = scenario(kind, 300, 1500, 7);
        check_invariants(&a);
        let b = scenario(kind, 300, 1500, 7);
        assert_eq!(a.positives, b.positives, "{kind:?}");
        assert_eq!(a.embeddings.vectors().as_slice(), b.embeddings.vectors().as_slice());
        let c = scenario(kind, 300, 1500, 8);
        assert_ne!(a.positives, c.positives);
    }
}

#[test]
fn latent_signal_hides_from_cosine_but_not_from_the_oracle() {
    let sc = scenario(ScenarioKind::LatentSignal, 1000, 10_000, 1);
    let neg = negatives(&sc, 42);
    let cos = cosine_auc(&sc, &neg);
    assert!(cos <= 0.60, "cosine AUC {cos}");
    let oracle = auc(&sc.oracle_scores(&sc.positives).unwrap(), &sc.oracle_scores(&neg).unwrap()).unwrap();
    assert!(oracle >= 0.95, "oracle AUC {oracle}");
}

#[test]
fn no_signal_sits_at_chance_for_cosine() {
    for seed in [1, 2, 3] {
        let sc = scenario(ScenarioKind::NoSignal, 1000, 10_000, seed);
        let a = cosine_auc(&sc, &negatives(&sc, 42));
        assert!((0.45..=0.55).contains(&a), "seed {seed}: {a}");
        assert!(matches!(sc.planted, Planted::None));
        assert!(sc.oracle_scores(&sc.positives).is_none());
    }
}

#[test]
fn clustered_positives_are_mostly_near_duplicates() {
    let sc = scenario(ScenarioKind::ClusteredPositives, 1000, 10_000, 1);
    let frac = sc.positives.iter().filter(|&(a, b)| sc.embeddings.cosine(a, b) > 0.5).count() as f64
        / sc.positives.len() as f64;
    assert!(frac >= 0.9, "{frac}");
    let Planted::Clusters { members, decoys, .. } = &sc.planted else {
        panic!("wrong planted kind");
    };
    let m: BTreeSet<usize> = members.iter().copied().collect();
    assert!(decoys.iter().all(|d| !m.contains(d)));
    assert!(sc.positives.iter().all(|(a, b)| m.contains(&a) && m.contains(&b)));
}

#[test]
fn degree_confound_is_dense_and_hub_heavy() {
    let sc = scenario(ScenarioKind::DegreeConfound, 600, 57_000, 1);
    let ratio = 2.0 * sc.positives.len() as f64 / sc.positives.entities().len() as f64;
    assert!(ratio >= 50.0, "{ratio}");
    let mut deg = sc.graph.degrees().to_vec();
    deg.sort_unstable();
    let top = deg[deg.len() - 60..].iter().map(|&d| d as f64).sum::<f64>() / 60.0;
    let bottom = deg[..60].iter().map(|&d| d as f64).sum::<f64>() / 60.0;
    assert!(top > 2.0 * bottom, "top decile {top}, bottom {bottom}");
}

#[test]
fn preflight_flags_the_matching_failure_mode() {
    let t = Thresholds::default();
    let verdict = |sc: &Scenario, key: &str| {
        let r = preflight(&sc.embeddings, &sc.positives, &sc.graph, &t, 42).unwrap();
        r.verdicts[key].verdict
    };

    let latent = scenario(ScenarioKind::LatentSignal, 1000, 10_000, 1);
    let report = preflight(&latent.embeddings, &latent.positives, &latent.graph, &t, 42).unwrap();
    assert_eq!(report.worst(), Verdict::Pass, "{report:?}");

    let clustered = scenario(ScenarioKind::ClusteredPositives, 1000, 10_000, 1);
    assert_eq!(verdict(&clustered, CHECK_COSINE_FRACTION), Verdict::Warn);
    assert_eq!(verdict(&clustered, CHECK_COSINE_AUC), Verdict::Warn);

    let degree = scenario(ScenarioKind::DegreeConfound, 600, 57_000, 1);
    assert_eq!(verdict(&degree, CHECK_PAIRS_PER_ENTITY), Verdict::Warn);
}

#[test]
fn preflight_is_seeded() {
    let sc = scenario(ScenarioKind::NoSignal, 400, 2000, 5);
    let t = Thresholds::default();
    let a = preflight(&sc.embeddings, &sc.positives, &sc.graph, &t, 1).unwrap();
    let b = preflight(&sc.embeddings, &sc.positives, &sc.graph, &t, 1).unwrap();
    assert_eq!(a, b);
}

#[test]
fn shuffled_verdict_needs_identical_eval_sets() {
    use cal_core::eval::{evaluate_scores, EvalConfig, PairScores};
    use cal_core::types::Role;
    let mut rng = SeededRng::new(3);
    let mut scores = |n: usize| {
        let cosine: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
        PairScores { half: cosine.clone(), both: cosine.clone(), cosine }
    };
    let pos_pairs = PairSet::new((0..20).map(|i| (i, i + 1)).collect(), Role::EvalPositive, 200).unwrap();
    let neg_pairs = PairSet::new((0..100).map(|i| (i, i + 50)).collect(), Role::EvalNegative, 200).unwrap();
    let (pos, neg) = (scores(20), scores(100));
    let base = evaluate_scores(&pos_pairs, &pos, &neg_pairs, &neg, None, &EvalConfig::default()).unwrap();
    let report = |auc: f64, digest: &str| {
        let mut r = base.clone();
        r.overall_auc = auc;
        r.eval_set_digest = digest.to_string();
        r
    };
    let t = Thresholds::default();
    assert!(shuffled_verdict(&report(0.8, "x"), &report(0.5, "y"), &t).is_err());
    assert_eq!(shuffled_verdict(&report(0.8, "x"), &report(0.5, "x"), &t).unwrap().verdict, Verdict::Pass);
    assert_eq!(shuffled_verdict(&report(0.8, "x"), &report(0.78, "x"), &t).unwrap().verdict, Verdict::Warn);
    assert_eq!(shuffled_verdict(&report(0.8, "x"), &report(0.81, "x"), &t).unwrap().verdict, Verdict::Fail);
}
