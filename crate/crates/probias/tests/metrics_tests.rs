use probias::metrics::compute_metrics;

fn b(rows: &[&[u8]]) -> Vec<Vec<bool>> {
    rows.iter()
        .map(|r| r.iter().map(|&v| v == 1).collect())
        .collect()
}

#[test]
fn perfect_predictions_score_one() {
    let scores = vec![vec![0.9, 0.1, 0.8], vec![0.2, 0.95, 0.1], vec![0.85, 0.9, 0.05]];
    let gold = b(&[&[1, 0, 1], &[0, 1, 0], &[1, 1, 0]]);
    let m = compute_metrics(&scores, &gold, 0.5, &[2]).unwrap();
    assert_eq!(m.macro_auc, 1.0);
    assert_eq!(m.micro_auc, 1.0);
    assert_eq!(m.macro_f1, 1.0);
    assert_eq!(m.micro_f1, 1.0);
    assert_eq!(m.rare_macro_f1, 1.0);
}

#[test]
fn constant_scores_give_chance_auc() {
    let scores = vec![vec![0.5, 0.5], vec![0.5, 0.5], vec![0.5, 0.5]];
    let gold = b(&[&[1, 0], &[0, 1], &[1, 0]]);
    let m = compute_metrics(&scores, &gold, 0.5, &[]).unwrap();
    // every item ties: mean ranks make the rank statistic exactly 1/2
    assert!((m.macro_auc - 0.5).abs() < 1e-12);
    assert!((m.micro_auc - 0.5).abs() < 1e-12);
}

#[test]
fn input_validation() {
    let gold = b(&[&[1, 0]]);
    assert!(compute_metrics(&[], &[], 0.5, &[]).is_err());
    assert!(compute_metrics(&[vec![0.5]], &gold, 0.5, &[]).is_err());
    assert!(compute_metrics(&[vec![0.5, 0.5], vec![0.1, 0.2]], &gold, 0.5, &[]).is_err());
    // a split with no gold positives cannot be scored
    assert!(compute_metrics(&[vec![0.5, 0.5]], &b(&[&[0, 0]]), 0.5, &[]).is_err());
}

#[test]
fn precision_at_k_is_invariant_under_monotone_score_maps() {
    let scores = vec![
        vec![0.91, 0.12, 0.55, 0.50, 0.07, 0.33],
        vec![0.10, 0.95, 0.61, 0.07, 0.50, 0.41],
        vec![0.66, 0.08, 0.50, 0.44, 0.13, 0.62],
    ];
    let gold = b(&[&[1, 0, 1, 0, 0, 0], &[0, 1, 1, 0, 0, 0], &[1, 0, 1, 0, 0, 0]]);
    let a = compute_metrics(&scores, &gold, 0.5, &[]).unwrap();
    let mapped: Vec<Vec<f64>> = scores
        .iter()
        .map(|r| r.iter().map(|&s| s.sqrt() * 3.0 + 1.0).collect())
        .collect();
    let c = compute_metrics(&mapped, &gold, 2.0, &[]).unwrap();
    assert_eq!(a.precision_at, c.precision_at);
    assert!((a.macro_auc - c.macro_auc).abs() < 1e-12);
    assert!((a.micro_auc - c.micro_auc).abs() < 1e-12);
}

/// Ten documents, six labels, frozen expectations computed with an
/// independent implementation. Label 5 has no gold positives and is
/// skipped by both macro averages; exact 0.50 scores at threshold 0.50
/// count as positive predictions; top-k ties break by label index.
#[test]
fn reference_fixture_matches_frozen_values() {
    let scores = vec![
        vec![0.91, 0.12, 0.55, 0.50, 0.07, 0.33],
        vec![0.84, 0.40, 0.50, 0.50, 0.22, 0.18],
        vec![0.10, 0.95, 0.61, 0.07, 0.50, 0.41],
        vec![0.77, 0.88, 0.12, 0.50, 0.50, 0.29],
        vec![0.66, 0.08, 0.50, 0.44, 0.13, 0.62],
        vec![0.09, 0.73, 0.07, 0.81, 0.36, 0.05],
        vec![0.58, 0.67, 0.45, 0.50, 0.71, 0.50],
        vec![0.30, 0.21, 0.68, 0.12, 0.55, 0.14],
        vec![0.49, 0.56, 0.33, 0.75, 0.09, 0.27],
        vec![0.88, 0.35, 0.50, 0.06, 0.48, 0.71],
    ];
    let gold = b(&[
        &[1, 0, 1, 0, 0, 0],
        &[1, 0, 0, 1, 0, 0],
        &[0, 1, 1, 0, 0, 0],
        &[1, 1, 0, 0, 1, 0],
        &[1, 0, 1, 0, 0, 0],
        &[0, 1, 0, 1, 0, 0],
        &[0, 1, 0, 0, 1, 0],
        &[0, 0, 1, 0, 1, 0],
        &[1, 1, 0, 1, 0, 0],
        &[1, 0, 0, 0, 0, 0],
    ]);
    let m = compute_metrics(&scores, &gold, 0.5, &[2, 3, 4, 5]).unwrap();
    let tol = 1e-9;
    assert!((m.macro_auc - 0.964285714286).abs() < tol, "{}", m.macro_auc);
    assert!((m.micro_auc - 0.946275946276).abs() < tol, "{}", m.micro_auc);
    assert!((m.macro_f1 - 0.831428571429).abs() < tol, "{}", m.macro_f1);
    assert!((m.micro_f1 - 0.784313725490).abs() < tol, "{}", m.micro_f1);
    assert!(
        (m.rare_macro_f1 - 0.774603174603).abs() < tol,
        "{}",
        m.rare_macro_f1
    );
    assert!((m.precision_at[0] - 0.42).abs() < tol, "{}", m.precision_at[0]);
    assert!((m.precision_at[1] - 0.2625).abs() < tol, "{}", m.precision_at[1]);
    assert!((m.precision_at[2] - 0.14).abs() < tol, "{}", m.precision_at[2]);
}
