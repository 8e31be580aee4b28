//! Property tests for the algebraic invariants.

mod common;

use std::collections::HashMap;

use latree::joint::{ClassSummary, SummaryRow};
use latree::model::{LatentTreeModel, Variable};
use latree::report;
use latree::rules;
use latree::DataSet;
use proptest::prelude::*;

fn interior() -> impl Strategy<Value = f64> {
    (0.01f64..0.99).prop_map(|p| p)
}

fn summary_strategy() -> impl Strategy<Value = ClassSummary> {
    (
        0.05f64..0.95,
        prop::collection::vec((interior(), interior()), 1..8),
    )
        .prop_map(|(prior_s, rows)| ClassSummary {
            target_label: String::new(),
            z: "Z".into(),
            target_states: vec![1],
            prior_s,
            prior_not_s: 1.0 - prior_s,
            rows: rows
                .into_iter()
                .enumerate()
                .map(|(i, (p_s, p_not_s))| SummaryRow {
                    symptom: format!("x{i}"),
                    p_s,
                    p_not_s,
                })
                .collect(),
            smoothing: 0.0,
            model_id: String::new(),
        })
}

fn two_node_model(prior: f64, p0: f64, p1: f64) -> LatentTreeModel {
    let vars = vec![Variable::latent("Y", 2), Variable::observed("x", 2)];
    let edges = vec![("Y".into(), "x".into())];
    let mut t = HashMap::new();
    t.insert("Y".into(), vec![1.0 - prior, prior]);
    t.insert("x".into(), vec![1.0 - p0, p0, 1.0 - p1, p1]);
    LatentTreeModel::new(vars, &edges, "Y", t).unwrap()
}

proptest! {
    /// The all-absent record scores 0 - threshold, which must equal the
    /// evidence the absent symptoms carry for the complement class.
    #[test]
    fn threshold_matches_absence_evidence(summary in summary_strategy()) {
        let rule = rules::derive_rule(&summary).unwrap();
        let mut rhs = (summary.prior_s / summary.prior_not_s).log2();
        for row in &summary.rows {
            rhs += ((1.0 - row.p_s) / (1.0 - row.p_not_s)).log2();
        }
        prop_assert!((-rule.threshold - rhs).abs() < 1e-9);
    }

    /// Scores are positive exactly when the symptom is more frequent in the
    /// target class.
    #[test]
    fn score_sign_tracks_conditional_difference(summary in summary_strategy()) {
        let rule = rules::derive_rule(&summary).unwrap();
        for entry in &rule.entries {
            let row = summary.row(&entry.symptom).unwrap();
            if row.p_s > row.p_not_s + 1e-12 {
                prop_assert!(entry.score > 0.0);
            } else if row.p_not_s > row.p_s + 1e-12 {
                prop_assert!(entry.score < 0.0);
            } else {
                prop_assert!(entry.score.abs() < 1e-9);
            }
        }
    }

    /// MI is nonnegative and symmetric in its two arguments.
    #[test]
    fn mi_is_nonnegative_and_symmetric(
        prior in 0.05f64..0.95,
        p0 in 0.01f64..0.99,
        p1 in 0.01f64..0.99,
    ) {
        let m = two_node_model(prior, p0, p1);
        let ab = report::mutual_info(&m, "Y", "x").unwrap();
        let ba = report::mutual_info(&m, "x", "Y").unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() < 1e-12);
    }

    /// Dataset CSV emission re-parses to the same records and weights.
    #[test]
    fn dataset_csv_round_trips(
        rows in prop::collection::vec(
            prop::collection::vec(prop::option::of(0u32..4), 3),
            1..30,
        ),
        weighted in any::<bool>(),
    ) {
        let names: Vec<String> = (0..3).map(|i| format!("v{i}")).collect();
        let weights = weighted.then(|| (1..=rows.len()).map(|i| i as f64).collect::<Vec<_>>());
        let ds = DataSet::from_records(names, rows, weights).unwrap();
        let parsed = DataSet::parse_csv(&ds.to_csv_string(), "mem.csv").unwrap();
        prop_assert_eq!(parsed.variables(), ds.variables());
        prop_assert_eq!(parsed.records(), ds.records());
        for (a, b) in parsed.weights().iter().zip(ds.weights()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}

/// Per-record average log-likelihood of self-sampled data sits within three
/// standard errors of the model's negative entropy.
#[test]
fn sampled_loglik_matches_entropy_rate() {
    let model = common::island_generator();
    let observed = model.observed_names();
    let joint = model.marginal(&observed).unwrap();
    let mut entropy = 0.0;
    let mut second = 0.0;
    for &p in &joint.values {
        if p > 0.0 {
            entropy -= p * p.ln();
            second += p * p.ln() * p.ln();
        }
    }
    let variance = second - entropy * entropy;
    let n = 1000usize;
    let data = model.forward_sample(n, 2024);
    let ll = latree::inference::dataset_loglik(&model, &data).unwrap();
    let avg = ll / n as f64;
    let se = (variance / n as f64).sqrt();
    assert!(
        (avg + entropy).abs() <= 3.0 * se,
        "avg {avg:.5} vs -H {:.5} (3se {:.5})",
        -entropy,
        3.0 * se
    );
}
