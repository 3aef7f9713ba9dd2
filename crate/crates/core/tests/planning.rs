use emrm_core::coverage::{
    check_coverage, generate_covering_array, hoeffding_min_samples, plan, uncovered_tuples, weighted_success,
    OutcomeOracle, OutcomeRecord, PlanInput, Problem, TestPoint, TestSet,
};
use proptest::prelude::*;

const INPUT: &str = r#"
factors:
  - name: speed
    kind: !continuous {min: 10.0, max: 30.0, edges: [20.0]}
    monotonicity: SafeLow
  - name: gap
    kind: !continuous {min: 5.0, max: 40.0, edges: [15.0, 25.0]}
    monotonicity: SafeHigh
  - name: surface
    kind: !categorical {modes: [dry, wet]}
spec:
  n_c: 2
  strength: 2
  epsilon: 0.3
  delta: 0.1
  seed: 3
"#;

fn input() -> PlanInput {
    serde_yaml::from_str(INPUT).unwrap()
}

#[test]
fn stub_plan_fills_every_cell_to_the_hoeffding_count() {
    let problem = Problem::new(input()).unwrap();
    let ts = plan(&problem, OutcomeOracle::Stub).unwrap();
    let report = check_coverage(&ts, &problem);
    assert!(report.all_satisfied(), "{report:?}");
    let need = hoeffding_min_samples(0.3, 0.1).unwrap() as usize;
    for cell in problem.tracked_cells() {
        assert!(ts.count_in(&cell) >= need, "{cell}: {}", ts.count_in(&cell));
    }
}

#[test]
fn plans_are_reproducible_and_serialize() {
    let a = plan(&Problem::new(input()).unwrap(), OutcomeOracle::Stub).unwrap();
    let b = plan(&Problem::new(input()).unwrap(), OutcomeOracle::Stub).unwrap();
    assert_eq!(a, b);
    let back: TestSet = serde_yaml::from_str(&serde_yaml::to_string(&a).unwrap()).unwrap();
    assert_eq!(back.points.len(), a.points.len());
    assert_eq!(back.factors, a.factors);
}

#[test]
fn live_plan_records_outcomes_and_estimates() {
    // succeeds whenever the gap is comfortable
    let oracle = |p: &TestPoint| p.values[1].as_real().unwrap() > 15.0;
    let problem = Problem::new(input()).unwrap();
    let ts = plan(&problem, OutcomeOracle::Live(&oracle)).unwrap();
    assert!(check_coverage(&ts, &problem).all_satisfied());
    let records: Vec<OutcomeRecord> = ts
        .points
        .iter()
        .map(|p| OutcomeRecord {
            success: p.outcome.expect("live plan scores every point"),
            proposal: p.proposal,
            prior: p.prior,
        })
        .collect();
    let est = weighted_success(&records).unwrap();
    assert!(est.lo <= est.estimate && est.estimate <= est.hi);
    assert!(est.estimate > 0.2 && est.estimate < 0.95, "{est:?}");
}

#[test]
fn relevance_removes_cells_from_the_plan() {
    let problem = Problem::with_relevance(input(), |v| v[1].as_real().unwrap() >= 15.0).unwrap();
    let ts = plan(&problem, OutcomeOracle::Skip).unwrap();
    assert!(check_coverage(&ts, &problem).all_satisfied());
    assert!(ts.points.iter().all(|p| p.cell.0[1] != 0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn covering_arrays_cover(levels in prop::collection::vec(1usize..=5, 2..=6), t in 2usize..=3, seed in any::<u64>()) {
        prop_assume!(levels.len() >= t);
        let rows = generate_covering_array(&levels, t, seed).unwrap();
        prop_assert!(uncovered_tuples(&levels, t, &rows).is_empty());
        prop_assert!(rows.iter().all(|r| r.iter().zip(&levels).all(|(v, l)| v < l)));
    }
}
