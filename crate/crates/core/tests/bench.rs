use std::sync::Arc;

use proptest::prelude::*;

use passgym::agents::{GreedyPolicy, SequencePolicy};
use passgym::bench::{
    generate_suite, geometric_mean_metric, read_suite, run_evaluation, write_report, write_suite, BenchError,
    EvalReport, MetricRow, RowStatus, MANIFEST_FILE,
};
use passgym::env::EnvConfig;
use passgym::graph::{cost_analysis, emit_text};
use passgym::passes::Catalog;

fn row() -> impl Strategy<Value = MetricRow> {
    (2u64..500)
        .prop_flat_map(|i| (Just(i), 0..i, 0..i))
        .prop_map(|(i, r, d)| MetricRow::new(i, r, d))
}

/// Direct definition: product of per-row reduction ratios, n-th root.
fn oracle(rows: &[MetricRow]) -> f64 {
    let ratios: Vec<f64> = rows.iter().map(|m| (m.i - m.r) as f64 / (m.i - m.d) as f64).collect();
    ratios.iter().product::<f64>().powf(1.0 / ratios.len() as f64)
}

proptest! {
    #[test]
    fn metric_matches_product_form(rows in prop::collection::vec(row(), 1..12)) {
        let got = geometric_mean_metric(&rows).unwrap();
        let want = oracle(&rows);
        prop_assert!((got.value - want).abs() <= 1e-9 * want.max(1.0), "{} vs {}", got.value, want);
        prop_assert_eq!(got.included, rows.len());
    }

    #[test]
    fn metric_ignores_order_and_scale(rows in prop::collection::vec(row(), 1..12), k in 1u64..20, rot in 0usize..12) {
        let base = geometric_mean_metric(&rows).unwrap().value;
        let mut turned = rows.clone();
        turned.rotate_left(rot % rows.len());
        let scaled: Vec<MetricRow> = rows.iter().map(|m| MetricRow::new(m.i * k, m.r * k, m.d * k)).collect();
        for other in [turned, scaled] {
            let v = geometric_mean_metric(&other).unwrap().value;
            prop_assert!((v - base).abs() <= 1e-12 * base.max(1.0));
        }
    }
}

#[test]
fn all_excluded_rows_leave_the_metric_undefined() {
    let rows = [MetricRow::new(10, 11, 5), MetricRow::new(10, 9, 10)];
    assert!(matches!(
        geometric_mean_metric(&rows),
        Err(BenchError::MetricUndefined(2))
    ));
}

#[test]
fn suites_are_deterministic_and_round_trip() {
    let a = generate_suite(12, (10, 60), 900_000).unwrap();
    let b = generate_suite(12, (10, 60), 900_000).unwrap();
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.name, y.name);
        assert_eq!(emit_text(&x.graph), emit_text(&y.graph));
    }
    let names: std::collections::BTreeSet<_> = a.iter().map(|x| &x.name).collect();
    assert_eq!(names.len(), a.len());

    let dir = tempfile::tempdir().unwrap();
    write_suite(dir.path(), &a).unwrap();
    let manifest = std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
    let files = std::fs::read_dir(dir.path())
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "mg"))
        .count();
    assert_eq!(manifest.lines().filter(|l| !l.trim().is_empty()).count(), files);
    let back = read_suite(dir.path()).unwrap();
    assert_eq!(back.len(), a.len());
    for (x, y) in a.iter().zip(&back) {
        assert_eq!((&x.name, x.origin, x.seed), (&y.name, y.origin, y.seed));
        assert_eq!(cost_analysis(&x.graph), cost_analysis(&y.graph));
    }
}

#[test]
fn evaluation_report_is_consistent() {
    let cat = Arc::new(Catalog::standard());
    let suite = generate_suite(10, (10, 60), 910_000).unwrap();
    let env = EnvConfig::default();
    let report = run_evaluation(&GreedyPolicy, &suite, &env, cat.clone()).unwrap();
    assert_eq!(report.rows.len(), suite.len());
    for (r, b) in report.rows.iter().zip({
        let mut s = suite.clone();
        s.sort_by(|x, y| x.name.cmp(&y.name));
        s
    }) {
        assert_eq!(r.name, b.name);
        assert_eq!(r.i, cost_analysis(&b.graph).op_count);
        assert_eq!(r.d, cost_analysis(&cat.run_default_pipeline(&b.graph)).op_count);
        let ids: Vec<_> = r.passes.iter().map(|p| cat.id_by_name(p).unwrap()).collect();
        assert_eq!(
            Some(cost_analysis(&cat.run_pipeline(&b.graph, &ids).unwrap()).op_count),
            r.r
        );
        assert_eq!(r.ratio.is_some(), r.status == RowStatus::Ok);
    }

    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("report");
    write_report(&report, &stem).unwrap();
    let json = std::fs::read_to_string(stem.with_extension("json")).unwrap();
    assert_eq!(EvalReport::from_json(&json).unwrap(), report);
    let csv = std::fs::read_to_string(stem.with_extension("csv")).unwrap();
    assert_eq!(csv, report.to_csv().unwrap());
    assert_eq!(csv.lines().count(), report.rows.len() + 2);

    let again = run_evaluation(&GreedyPolicy, &suite, &env, cat.clone()).unwrap();
    assert_eq!(again.to_json(), report.to_json());

    let idle = run_evaluation(
        &SequencePolicy(vec![cat.id_by_name("dce").unwrap().0]),
        &suite,
        &env,
        cat,
    )
    .unwrap();
    assert!(idle.rows.iter().all(|r| r.r <= Some(r.i)));
}
