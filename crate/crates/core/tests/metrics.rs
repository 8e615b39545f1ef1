use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use signflow::error::Error;
use signflow::metrics::{classification_report, confusion, f1_score, numbered_classes, ConfusionMatrix};

#[test]
fn perfect_predictions_give_diagonal() {
    let labels = vec![0, 1, 2, 2, 1, 0, 3];
    let m = confusion(&labels, &labels, &numbered_classes(4)).unwrap();
    assert_eq!(m.trace(), 7);
    for i in 0..4 {
        for j in 0..4 {
            if i != j {
                assert_eq!(m.counts[i][j], 0);
            }
        }
    }
    let r = classification_report(&m).unwrap();
    assert_eq!(r.accuracy, 1.0);
    assert_eq!(r.macro_f1, 1.0);
    assert!(r.per_class.iter().all(|c| c.precision == 1.0 && c.recall == 1.0 && c.f1 == 1.0));
}

#[test]
fn single_off_diagonal_sample() {
    let m = confusion(&[1], &[0], &numbered_classes(2)).unwrap();
    assert_eq!(m.counts, vec![vec![0, 1], vec![0, 0]]);
}

#[test]
fn input_errors() {
    let names = numbered_classes(3);
    assert!(matches!(confusion(&[0, 1], &[0], &names), Err(Error::LengthMismatch { preds: 2, labels: 1 })));
    assert!(matches!(confusion(&[3], &[0], &names), Err(Error::IndexOutOfRange { index: 3, classes: 3 })));
    assert!(matches!(classification_report(&ConfusionMatrix::new(names)), Err(Error::EmptyMatrix)));
}

fn random_pairs(seed: u64, n: usize, c: usize) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
    let preds = labels
        .iter()
        .map(|&l| if rng.random::<f64>() < 0.6 { l } else { rng.random_range(0..c) })
        .collect();
    (preds, labels)
}

/// Brute-force recount and scalar metric formulas, independent of the matrix type.
fn oracle(preds: &[usize], labels: &[usize], c: usize) -> (Vec<Vec<u64>>, f64, f64, f64, f64) {
    let mut counts = vec![vec![0u64; c]; c];
    for i in 0..c {
        for j in 0..c {
            counts[i][j] = (0..preds.len()).filter(|&k| labels[k] == i && preds[k] == j).count() as u64;
        }
    }
    let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
    for j in 0..c {
        let tp = (0..preds.len()).filter(|&k| labels[k] == j && preds[k] == j).count() as f64;
        let predicted = preds.iter().filter(|&&p| p == j).count() as f64;
        let actual = labels.iter().filter(|&&l| l == j).count() as f64;
        let p = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let r = if actual > 0.0 { tp / actual } else { 0.0 };
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        p_sum += p;
        r_sum += r;
        f_sum += f;
    }
    let acc = (0..preds.len()).filter(|&k| preds[k] == labels[k]).count() as f64 / preds.len() as f64;
    (counts, acc, p_sum / c as f64, r_sum / c as f64, f_sum / c as f64)
}

#[test]
fn matches_brute_force_on_random_cases() {
    for (seed, n, c) in [(1, 200, 5), (2, 1000, 85), (3, 37, 4)] {
        let (preds, labels) = random_pairs(seed, n, c);
        let m = confusion(&preds, &labels, &numbered_classes(c)).unwrap();
        let (counts, acc, p, r, f) = oracle(&preds, &labels, c);
        assert_eq!(m.counts, counts);
        let rep = classification_report(&m).unwrap();
        assert!((rep.accuracy - acc).abs() < 1e-9);
        assert!((rep.macro_precision - p).abs() < 1e-9);
        assert!((rep.macro_recall - r).abs() < 1e-9);
        assert!((rep.macro_f1 - f).abs() < 1e-9);
    }
}

#[test]
fn reported_f1_spot_value() {
    assert_eq!(format!("{:.4}", f1_score(1.0, 0.9091)), "0.9524");
    // 10 of 11 samples recalled, no false positives
    let mut labels = vec![0; 11];
    labels.extend([1; 5]);
    let mut preds = vec![0; 10];
    preds.extend([1; 6]);
    let rep = classification_report(&confusion(&preds, &labels, &numbered_classes(2)).unwrap()).unwrap();
    let c0 = &rep.per_class[0];
    assert_eq!(c0.precision, 1.0);
    assert_eq!(format!("{:.4}", c0.recall), "0.9091");
    assert_eq!(format!("{:.4}", c0.f1), "0.9524");
    assert_eq!(c0.accuracy, c0.recall);
}

#[test]
fn constant_predictor_on_balanced_set() {
    let labels: Vec<usize> = (0..40).map(|i| i % 4).collect();
    let preds = vec![0; 40];
    let rep = classification_report(&confusion(&preds, &labels, &numbered_classes(4)).unwrap()).unwrap();
    assert_eq!(rep.accuracy, 0.25);
    assert_eq!(rep.macro_recall, 0.25);
    assert_eq!(rep.per_class.iter().filter(|c| c.degenerate_precision).count(), 3);
    assert!(rep.table().contains('*'));
}

#[test]
fn macro_f1_is_mean_of_class_f1() {
    let labels = vec![0, 0, 0, 0, 1, 1, 2];
    let preds = vec![0, 1, 1, 1, 1, 1, 0];
    let rep = classification_report(&confusion(&preds, &labels, &numbered_classes(3)).unwrap()).unwrap();
    let alternative = f1_score(rep.macro_precision, rep.macro_recall);
    let mean: f64 = rep.per_class.iter().map(|c| c.f1).sum::<f64>() / 3.0;
    assert!((rep.macro_f1 - mean).abs() < 1e-12);
    assert!((rep.macro_f1 - alternative).abs() > 1e-3);
}

#[test]
fn serializations_carry_the_numbers() {
    let (preds, labels) = random_pairs(4, 30, 3);
    let m = confusion(&preds, &labels, &["a".into(), "b".into(), "c".into()]).unwrap();
    let csv = m.to_csv();
    assert!(csv.starts_with("true\\pred,a,b,c\n"));
    assert_eq!(csv.lines().count(), 4);
    let rep = classification_report(&m).unwrap();
    let back: signflow::metrics::EvalReport = serde_json::from_str(&rep.to_json()).unwrap();
    assert_eq!(back, rep);
    let dir = tempfile::TempDir::new().unwrap();
    let png = dir.path().join("cm.png");
    signflow::metrics::render_heatmap(&m, &png).unwrap();
    let img = image::open(&png).unwrap();
    assert!(img.width() > 3 && img.width() == img.height());
}

proptest! {
    #[test]
    fn sums_trace_and_merge(seed in 0u64..500, n in 1usize..300, c in 1usize..12, cut in 0usize..300) {
        let (preds, labels) = random_pairs(seed, n, c);
        let names = numbered_classes(c);
        let m = confusion(&preds, &labels, &names).unwrap();
        let rep = classification_report(&m).unwrap();
        prop_assert!((rep.accuracy - m.trace() as f64 / n as f64).abs() < 1e-12);
        for j in 0..c {
            prop_assert_eq!(m.row_sum(j), labels.iter().filter(|&&l| l == j).count() as u64);
            prop_assert_eq!(m.col_sum(j), preds.iter().filter(|&&p| p == j).count() as u64);
            prop_assert_eq!(rep.per_class[j].accuracy, rep.per_class[j].recall);
        }
        let k = cut.min(n);
        let mut a = confusion(&preds[..k], &labels[..k], &names).unwrap();
        a.merge(&confusion(&preds[k..], &labels[k..], &names).unwrap()).unwrap();
        prop_assert_eq!(a, m);
    }
}
