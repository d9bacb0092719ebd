use mmfuse_core::eval::{
    class_error_rates, cohens_kappa, compare_runs, mean_std, split_fingerprint, ConfusionMatrix, EvalReport,
};
use mmfuse_core::rng::keyed_rng;
use mmfuse_core::Error;
use proptest::prelude::*;
use rand::Rng;

fn labels(n: usize) -> Vec<String> {
    (0..n).map(|k| format!("c{k}")).collect()
}

fn report(name: &str, truth: &[usize], pred: &[usize], n: usize) -> EvalReport {
    let cm = ConfusionMatrix::from_pairs(labels(n), truth, pred).unwrap();
    EvalReport::from_confusion(name, "test", cm).unwrap()
}

/// Recomputes every metric by scanning raw (true, predicted) pairs.
struct Brute {
    accuracy: f64,
    precision: Vec<f64>,
    recall: Vec<f64>,
    f1: Vec<f64>,
    macro_p: f64,
    macro_r: f64,
    macro_f1: f64,
    kappa: f64,
}

fn brute(truth: &[usize], pred: &[usize], c: usize) -> Brute {
    let n = truth.len();
    let correct = truth.iter().zip(pred).filter(|(t, p)| t == p).count();
    let mut precision = Vec::new();
    let mut recall = Vec::new();
    let mut f1 = Vec::new();
    for k in 0..c {
        let tp = truth.iter().zip(pred).filter(|&(&t, &p)| t == k && p == k).count() as u64;
        let fp = truth.iter().zip(pred).filter(|&(&t, &p)| t != k && p == k).count() as u64;
        let fnn = truth.iter().zip(pred).filter(|&(&t, &p)| t == k && p != k).count() as u64;
        let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let r = if tp + fnn == 0 { 0.0 } else { tp as f64 / (tp + fnn) as f64 };
        precision.push(p);
        recall.push(r);
        f1.push(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) });
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / c as f64;
    // κ from marginals counted pair by pair, kept in integers until the final division
    let mut chance: u128 = 0;
    for k in 0..c {
        let a = truth.iter().filter(|&&t| t == k).count() as u128;
        let b = pred.iter().filter(|&&p| p == k).count() as u128;
        chance += a * b;
    }
    let nn = (n * n) as u128;
    let kappa = if chance == nn {
        1.0
    } else {
        ((n * correct) as u128 as f64 - chance as f64) / ((nn - chance) as f64)
    };
    Brute {
        accuracy: correct as f64 / n as f64,
        macro_p: mean(&precision),
        macro_r: mean(&recall),
        macro_f1: mean(&f1),
        precision,
        recall,
        f1,
        kappa,
    }
}

#[test]
fn metrics_match_brute_force_on_random_configurations() {
    let mut rng = keyed_rng(&[0xE7A1]);
    for case in 0..1000 {
        let c = rng.gen_range(2..=9);
        let n = rng.gen_range(1..=300);
        let skew = rng.gen_range(0.0..1.0);
        let truth: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
        let pred: Vec<usize> = truth
            .iter()
            .map(|&t| if rng.gen::<f64>() < skew { t } else { rng.gen_range(0..c) })
            .collect();
        let r = report("r", &truth, &pred, c);
        let b = brute(&truth, &pred, c);
        assert_eq!(r.accuracy, b.accuracy, "case {case}");
        assert_eq!(r.macro_precision, b.macro_p, "case {case}");
        assert_eq!(r.macro_recall, b.macro_r, "case {case}");
        assert_eq!(r.macro_f1, b.macro_f1, "case {case}");
        for k in 0..c {
            assert_eq!(r.per_class[k].precision, b.precision[k]);
            assert_eq!(r.per_class[k].recall, b.recall[k]);
            assert_eq!(r.per_class[k].f1, b.f1[k]);
        }
        assert_eq!(cohens_kappa(&truth, &pred).unwrap(), b.kappa, "case {case}");
        assert_eq!(r.accuracy, r.confusion.trace() as f64 / r.confusion.total() as f64);
    }
}

#[test]
fn perfect_predictions() {
    let t = [0, 1, 2, 2, 1, 0, 3];
    let r = report("p", &t, &t, 4);
    assert_eq!(r.accuracy, 1.0);
    assert!(r.per_class.iter().all(|m| m.f1 == 1.0));
    for i in 0..4 {
        for j in 0..4 {
            assert_eq!(r.confusion.counts[i][j] != 0, i == j);
        }
    }
}

#[test]
fn constant_predictions_on_balanced_pair() {
    let r = report("z", &[0, 0, 1, 1], &[0, 0, 0, 0], 2);
    assert_eq!(r.accuracy, 0.5);
    assert!((r.macro_f1 - 1.0 / 3.0).abs() < 1e-15);
    assert!(r.per_class[1].precision_undefined);
    assert_eq!(r.per_class[1].precision, 0.0);
    assert!(!r.warnings.is_empty());
}

#[test]
fn kappa_cases() {
    // [[20,5],[10,15]]
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (x, y, n) in [(0, 0, 20), (0, 1, 5), (1, 0, 10), (1, 1, 15)] {
        for _ in 0..n {
            a.push(x);
            b.push(y);
        }
    }
    assert_eq!(cohens_kappa(&a, &b).unwrap(), 0.4);
    assert_eq!(cohens_kappa(&[0, 1, 2, 1], &[0, 1, 2, 1]).unwrap(), 1.0);
    assert_eq!(cohens_kappa(&[3, 3, 3], &[3, 3, 3]).unwrap(), 1.0);
    // constant but different: p_o = 0, p_e = 0
    assert_eq!(cohens_kappa(&[0, 0], &[1, 1]).unwrap(), 0.0);
    assert!(matches!(cohens_kappa(&[0], &[0, 1]), Err(Error::Data(_))));

    let mut rng = keyed_rng(&[77]);
    let x: Vec<usize> = (0..20000).map(|_| rng.gen_range(0..4)).collect();
    let y: Vec<usize> = (0..20000).map(|_| rng.gen_range(0..4)).collect();
    assert!(cohens_kappa(&x, &y).unwrap().abs() < 0.02);
}

#[test]
fn error_rates_and_missing_classes() {
    let r = report("e", &[0, 0, 0, 0, 1], &[0, 0, 0, 1, 1], 3);
    let e = class_error_rates(&r);
    assert_eq!(e[0], Some(0.25));
    assert_eq!(e[1], Some(0.0));
    assert_eq!(e[2], None);
}

#[test]
fn report_json_round_trip() {
    let r = report("rt", &[0, 1, 2, 1, 0, 2, 2], &[0, 2, 2, 1, 1, 2, 0], 3);
    let back = EvalReport::from_json(&r.to_json().unwrap()).unwrap();
    assert_eq!(back, r);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("r.json");
    r.save(&p).unwrap();
    assert_eq!(EvalReport::load(&p).unwrap(), r);
    assert!(r.confusion.to_csv().starts_with("true\\predicted,c0,c1,c2\nc0,1,1,0\n"));
}

#[test]
fn paper_fixture_formats() {
    let mut r = report("mBERT + ResNet50", &[0, 1], &[0, 1], 2);
    r.accuracy = 0.8376;
    r.macro_precision = 0.8354;
    r.macro_recall = 0.8398;
    r.macro_f1 = 0.8376;
    let text = r.to_text();
    assert!(text.contains("accuracy 83.76%  precision 83.54%  recall 83.98%  F1 83.76%"), "{text}");
}

fn fixture(name: &str, acc: f64, fr_error: f64) -> EvalReport {
    let mut r = report(name, &[0, 1], &[0, 1], 2);
    r.confusion.labels = vec!["AD".into(), "FR".into()];
    r.accuracy = acc;
    r.macro_f1 = acc;
    r.per_class[1].error_rate = Some(fr_error);
    r
}

#[test]
fn comparison_deltas_on_paper_fixtures() {
    let reports = [
        fixture("multimodal", 0.8376, 0.227),
        fixture("text", 0.7992, 0.284),
        fixture("image", 0.6685, 0.453),
    ];
    let c = compare_runs(&reports, "text").unwrap();
    assert_eq!(format!("{:+.2}", c.rows[0].accuracy_delta_pp), "+3.84");
    let c = compare_runs(&reports, "image").unwrap();
    assert_eq!(format!("{:+.2}", c.rows[0].accuracy_delta_pp), "+16.91");
    let csv = c.class_error_csv();
    assert!(csv.contains("FR,22.70,28.40,45.30"), "{csv}");
    assert!(csv.starts_with("class,multimodal,text,image\n"));
    let svg = c.error_chart_svg();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    assert_eq!(svg.matches("<rect x=").count(), 2 * 3 + 3);
}

#[test]
fn comparison_of_identical_reports_and_seeds() {
    let r = report("a", &[0, 1, 1], &[0, 1, 0], 2);
    let c = compare_runs(std::slice::from_ref(&r), "a").unwrap();
    assert_eq!(c.rows[0].accuracy_delta_pp, 0.0);
    assert_eq!(c.rows[0].macro_f1_delta_pp, 0.0);

    let mut runs = Vec::new();
    for acc in [0.8, 0.82, 0.84] {
        let mut x = r.clone();
        x.name = "mm".into();
        x.accuracy = acc;
        runs.push(x);
    }
    runs.push(r.clone());
    let c = compare_runs(&runs, "a").unwrap();
    assert_eq!(c.rows[0].runs, 3);
    assert!((c.rows[0].accuracy_mean - 0.82).abs() < 1e-12);
    assert!((c.rows[0].accuracy_std - 0.02).abs() < 1e-12);
    let (m, s) = mean_std(&[0.8, 0.82, 0.84]);
    assert!((m - 0.82).abs() < 1e-12 && (s - 0.02).abs() < 1e-12);
}

#[test]
fn mismatched_splits_are_usage_errors() {
    let mut a = report("a", &[0, 1], &[0, 1], 2);
    let mut b = a.clone();
    b.name = "b".into();
    a.split_fingerprint = Some(split_fingerprint("test", &["s1", "s2"]));
    b.split_fingerprint = Some(split_fingerprint("test", &["s1", "s3"]));
    assert!(matches!(compare_runs(&[a.clone(), b.clone()], "a"), Err(Error::Usage(_))));
    b.split_fingerprint = a.split_fingerprint.clone();
    assert!(compare_runs(&[a.clone(), b.clone()], "a").is_ok());
    b.split = "val".into();
    assert!(matches!(compare_runs(&[a.clone(), b], "a"), Err(Error::Usage(_))));
    assert!(matches!(compare_runs(&[a], "zzz"), Err(Error::Usage(_))));
}

proptest! {
    #[test]
    fn kappa_is_bounded(pairs in prop::collection::vec((0usize..5, 0usize..5), 1..200)) {
        let (a, b): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let k = cohens_kappa(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&k), "{}", k);
    }

    #[test]
    fn macro_f1_is_relabeling_invariant(
        pairs in prop::collection::vec((0usize..4, 0usize..4), 1..120),
        perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle(),
    ) {
        let (t, p): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let a = report("a", &t, &p, 4);
        let t2: Vec<usize> = t.iter().map(|&x| perm[x]).collect();
        let p2: Vec<usize> = p.iter().map(|&x| perm[x]).collect();
        let b = report("b", &t2, &p2, 4);
        prop_assert!((a.macro_f1 - b.macro_f1).abs() < 1e-12);
        prop_assert_eq!(a.accuracy, b.accuracy);
    }
}
