use proptest::prelude::*;

use coda::harness::{csv_string, parse_csv};
use coda::{IterationRecord, PrimalDualPoint, RunResult, Vector};

fn metric() -> impl Strategy<Value = Option<f64>> {
    prop_oneof![
        Just(None),
        (-1e300f64..1e300).prop_map(Some),
        (-1e-300f64..1e-300).prop_map(Some),
        any::<f64>().prop_filter("finite", |v| v.is_finite()).prop_map(Some),
    ]
}

fn record() -> impl Strategy<Value = IterationRecord> {
    (0u64..1 << 40, metric(), metric(), metric(), metric(), metric(), any::<u64>()).prop_map(
        |(samples_used, objective, grad_norm_sq, stationary_gap_sq, moreau_grad_sq, tracking_err_sq, wall_nanos)| {
            IterationRecord {
                t: 0,
                samples_used,
                objective,
                grad_norm_sq,
                stationary_gap_sq,
                moreau_grad_sq,
                tracking_err_sq,
                wall_nanos,
            }
        },
    )
}

proptest! {
    #[test]
    fn rows_reparse_exactly(seeds in prop::collection::vec((any::<u64>(), prop::collection::vec(record(), 0..6)), 0..4)) {
        let point = PrimalDualPoint::new(Vector::zeros(1), Vector::zeros(1));
        let results: Vec<(u64, RunResult)> = seeds
            .iter()
            .map(|(seed, recs)| {
                let mut r = RunResult::new(point.clone());
                r.records = recs.iter().cloned().enumerate().map(|(t, rec)| IterationRecord { t, ..rec }).collect();
                (*seed, r)
            })
            .collect();
        let refs: Vec<(u64, &RunResult)> = results.iter().map(|(s, r)| (*s, r)).collect();
        let parsed = parse_csv(&csv_string(&refs)).unwrap();

        let mut expected: Vec<(u64, IterationRecord)> =
            results.iter().flat_map(|(s, r)| r.records.iter().map(move |rec| (*s, rec.clone()))).collect();
        expected.sort_by_key(|(s, rec)| (*s, rec.t));
        prop_assert_eq!(parsed, expected);
    }
}
