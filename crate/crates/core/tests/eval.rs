//! Metric oracles: AUROC against a brute-force all-pairs implementation,
//! confusion-matrix identities, summary statistics, and report rendering.

use cao_locate::eval::{
    compute_auroc, compute_confusion, metrics_from_confusion, parse_report_csv, render_report_csv,
    render_report_text, stage_metrics, summarize, REPORT_CSV_HEADER,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// All-pairs AUROC: P(score_pos > score_neg) + 0.5 P(tie).
fn auroc_brute_force(scores: &[f64], labels: &[usize]) -> f64 {
    let pos: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 1)
        .map(|(&s, _)| s)
        .collect();
    let neg: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 0)
        .map(|(&s, _)| s)
        .collect();
    let mut total = 0.0;
    for &p in &pos {
        for &n in &neg {
            total += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    total / (pos.len() * neg.len()) as f64
}

#[test]
fn auroc_matches_brute_force_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA0C);
    for case in 0..200 {
        let n = rng.gen_range(2..120);
        // quantized scores so ties actually occur
        let levels = rng.gen_range(2..20);
        let scores: Vec<f64> = (0..n)
            .map(|_| rng.gen_range(0..levels) as f64 / levels as f64)
            .collect();
        let mut labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        // force both classes present
        labels[0] = 1;
        if n > 1 {
            labels[1] = 0;
        }
        let fast = compute_auroc(&scores, &labels).unwrap();
        let brute = auroc_brute_force(&scores, &labels);
        assert!(
            (fast - brute).abs() < 1e-12,
            "case {case}: {fast} vs {brute}"
        );
    }
}

#[test]
fn auroc_known_values() {
    // perfect separation
    let auroc = compute_auroc(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]).unwrap();
    assert_eq!(auroc, 1.0);
    // perfectly inverted
    let auroc = compute_auroc(&[0.1, 0.2, 0.8, 0.9], &[1, 1, 0, 0]).unwrap();
    assert_eq!(auroc, 0.0);
    // all scores tied: chance level exactly
    let auroc = compute_auroc(&[0.5, 0.5, 0.5, 0.5], &[1, 1, 0, 0]).unwrap();
    assert_eq!(auroc, 0.5);
}

#[test]
fn auroc_rejects_degenerate_inputs() {
    assert!(compute_auroc(&[], &[]).is_err());
    assert!(compute_auroc(&[0.5], &[1]).is_err()); // one class only
    assert!(compute_auroc(&[0.5, 0.4], &[1]).is_err()); // length mismatch
    assert!(compute_auroc(&[f64::NAN, 0.4], &[1, 0]).is_err());
}

#[test]
fn auroc_is_invariant_under_monotone_transforms() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xB0C);
    for _ in 0..50 {
        let n = rng.gen_range(4..60);
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let mut labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        labels[0] = 1;
        labels[1] = 0;
        let base = compute_auroc(&scores, &labels).unwrap();
        let squashed: Vec<f64> = scores.iter().map(|&s| 1.0 / (1.0 + (-s).exp())).collect();
        let shifted: Vec<f64> = scores.iter().map(|&s| 10.0 * s - 7.0).collect();
        assert!((compute_auroc(&squashed, &labels).unwrap() - base).abs() < 1e-12);
        assert!((compute_auroc(&shifted, &labels).unwrap() - base).abs() < 1e-12);
        // complement symmetry: negate scores and flip labels
        let negated: Vec<f64> = scores.iter().map(|&s| -s).collect();
        let flipped: Vec<usize> = labels.iter().map(|&l| 1 - l).collect();
        assert!((compute_auroc(&negated, &flipped).unwrap() - base).abs() < 1e-12);
    }
}

#[test]
fn confusion_counts_and_metrics() {
    let scores = [0.9, 0.8, 0.6, 0.4, 0.3, 0.1];
    let labels = [1, 0, 1, 1, 0, 0];
    let c = compute_confusion(&scores, &labels, 0.5).unwrap();
    assert_eq!((c.tp, c.fp, c.tn, c.fn_), (2, 1, 2, 1));
    let m = metrics_from_confusion(&c).unwrap();
    assert!((m.accuracy - 4.0 / 6.0).abs() < 1e-15);
    assert!((m.sensitivity.unwrap() - 2.0 / 3.0).abs() < 1e-15);
    assert!((m.specificity.unwrap() - 2.0 / 3.0).abs() < 1e-15);

    assert!(compute_confusion(&scores, &labels, 0.0).is_err());
    assert!(compute_confusion(&scores, &labels, 1.0).is_err());
}

#[test]
fn single_class_metrics_are_none_not_zero() {
    let c = compute_confusion(&[0.9, 0.2], &[1, 1], 0.5).unwrap();
    let m = metrics_from_confusion(&c).unwrap();
    assert_eq!(m.specificity, None);
    assert!(m.sensitivity.is_some());
}

#[test]
fn summarize_mean_and_sample_std() {
    let s = summarize(&[1.0, 2.0, 3.0, 4.0]).unwrap();
    assert!((s.mean - 2.5).abs() < 1e-15);
    let expected_std = (5.0f64 / 3.0).sqrt();
    assert!((s.std - expected_std).abs() < 1e-12);
    let single = summarize(&[7.0]).unwrap();
    assert_eq!((single.mean, single.std), (7.0, 0.0));
    assert!(summarize(&[]).is_err());
}

#[test]
fn stage_metrics_combines_threshold_and_rank_views() {
    let scores = [0.9, 0.8, 0.3, 0.2];
    let labels = [1, 1, 0, 0];
    let m = stage_metrics(&scores, &labels, 0.5).unwrap();
    assert_eq!(m.accuracy, 1.0);
    assert_eq!(m.auroc, 1.0);
    assert_eq!(m.record_level_auroc, None);
}

#[test]
fn report_renderers_reject_empty_input() {
    assert!(render_report_text(&[]).is_err());
    assert!(render_report_csv(&[]).is_err());
}

#[test]
fn report_csv_parser_round_trips_and_rejects_garbage() {
    let text = format!(
        "{REPORT_CSV_HEADER}\nstage1,1d,preprocessed,0.950,0.010,0.900,0.020,0.800,0.030,0.970,0.005\n"
    );
    let rows = parse_report_csv(&text).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].arm, "preprocessed");
    assert!((rows[0].auroc.mean - 0.970).abs() < 1e-12);

    assert!(parse_report_csv("").is_err());
    assert!(parse_report_csv("not,a,header\n").is_err());
    let short = format!("{REPORT_CSV_HEADER}\nstage1,1d,raw,0.5\n");
    assert!(parse_report_csv(&short).is_err());
    let bad_number = format!(
        "{REPORT_CSV_HEADER}\nstage1,1d,raw,zero,0.0,0.0,0.0,0.0,0.0,0.0,0.0\n"
    );
    assert!(parse_report_csv(&bad_number).is_err());
}

proptest! {
    #[test]
    fn auroc_stays_in_unit_interval(
        scores in prop::collection::vec(-1e3..1e3f64, 2..64),
        flips in prop::collection::vec(any::<bool>(), 2..64),
    ) {
        let n = scores.len().min(flips.len());
        let scores = &scores[..n];
        let mut labels: Vec<usize> = flips[..n].iter().map(|&b| usize::from(b)).collect();
        labels[0] = 1;
        if n > 1 {
            labels[n - 1] = 0;
        }
        let auroc = compute_auroc(scores, &labels).unwrap();
        prop_assert!((0.0..=1.0).contains(&auroc));
        let brute = auroc_brute_force(scores, &labels);
        prop_assert!((auroc - brute).abs() < 1e-12);
    }

    #[test]
    fn confusion_partitions_the_sample(
        scores in prop::collection::vec(0.0..1.0f64, 1..64),
        threshold in 0.01..0.99f64,
    ) {
        let labels: Vec<usize> = scores.iter().map(|&s| usize::from(s > 0.6)).collect();
        let c = compute_confusion(&scores, &labels, threshold).unwrap();
        prop_assert_eq!(c.total(), scores.len());
    }
}
