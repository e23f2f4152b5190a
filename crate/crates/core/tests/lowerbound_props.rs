use std::collections::HashSet;

use proptest::prelude::*;
use tvopt::adomplus::{derive_params, run, AdomPlus, AdomPlusState, MultiConsensusMixer, SaddlePoint, StopRule};
use tvopt::dvector::DistVec;
use tvopt::lowerbound::{
    adomplus_ops, build_hard_instance, certify_run, hard_solution, lower_bound_curve, rho,
    rho_inequality_holds, CheckKind, Certifier, SpanOp, SpanTracker, TraceStep,
};
use tvopt::netmodel::GossipSequence;
use tvopt::oracle::reference_minimizer;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn span_bound_and_monotonicity_hold_under_any_interleaving(
        groups in 1usize..11,
        ops in proptest::collection::vec(any::<bool>(), 0..400),
    ) {
        let mut t = SpanTracker::new(3 * groups).unwrap();
        prop_assert!(t.span_bound_holds());
        for compute in ops {
            let before = t.spans().to_vec();
            if compute { t.compute() } else { t.communicate() }
            prop_assert!(t.spans().iter().zip(&before).all(|(a, b)| a >= b));
            prop_assert!(t.span_bound_holds(), "after {} rounds: {:?}", t.rounds(), t.spans());
            let cap = 6 * t.rounds() / (3 * groups) + 1;
            prop_assert!(t.spans().iter().all(|&s| s <= cap));
        }
    }
}

#[test]
fn every_reachable_tracker_state_obeys_the_bound_for_nine_nodes() {
    // Compute is idempotent, so between rounds the only choice is whether a
    // computation happens; enumerate every reachable state for 50 rounds.
    let mut frontier: HashSet<Vec<usize>> = HashSet::from([vec![0; 9]]);
    let mut best = 0;
    for q in 0..50 {
        let mut next = HashSet::new();
        for spans in &frontier {
            for compute in [false, true] {
                let mut t = SpanTracker::from_parts(spans.clone(), q).unwrap();
                assert!(t.span_bound_holds());
                if compute {
                    t.compute();
                    assert!(t.span_bound_holds());
                }
                t.communicate();
                assert!(t.span_bound_holds(), "q = {}: {:?}", q + 1, t.spans());
                best = best.max(*t.spans().iter().max().unwrap());
                next.insert(t.spans().to_vec());
            }
        }
        frontier = next;
        // Over each block of three rounds the maximum grows by at most 2 plus
        // one parity unit.
        assert!(best <= 2 * ((q + 1) / 3) + 1 + 2, "q = {q}, max span {best}");
    }
}

#[test]
fn rho_matches_closed_form_and_numerical_minimizer() {
    assert_eq!(rho(11.0, 2.0), 1.0 / 3.0);
    let inst = build_hard_instance(9.0, 11.0, 2.0, 40).unwrap();
    let numeric = reference_minimizer(&inst.objective, 1e-14).unwrap();
    let exact = hard_solution(11.0, 2.0, 40).unwrap();
    for l in 0..20 {
        assert!((numeric[l] - exact[l]).abs() < 1e-12, "coordinate {l}");
        assert!((exact[l] - (1.0f64 / 3.0).powi(l as i32 + 1)).abs() < 1e-15);
    }
    let near = hard_solution(1.0 + 1e-12, 1.0, 5).unwrap();
    assert!(near.iter().all(|v| v.abs() < 1e-6));
}

#[test]
fn truncated_solution_is_stationary() {
    for kappa in [2.0, 10.0, 100.0] {
        let inst = build_hard_instance(9.0, kappa, 1.0, 200).unwrap();
        let x = DistVec::consensus(inst.n, &inst.solution());
        let g = inst.objective.grad_f(&x).unwrap();
        let total: f64 = g.block_sum().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(total <= 1e-10, "kappa {kappa}: {total:e}");
        let roundoff = 1e-14 * inst.n as f64 * inst.l;
        assert!(total <= 3.0 * inst.n as f64 * inst.l * inst.rho.powi(200) + roundoff);
    }
}

#[test]
fn rho_inequality_holds_on_a_grid() {
    for i in 0..=120 {
        let kappa = 10f64.powf(i as f64 / 20.0) + 1e-9;
        for mu in [1e-3, 1.0, 7.5] {
            assert!(rho_inequality_holds(kappa * mu, mu), "kappa {kappa}, mu {mu}");
        }
    }
}

#[test]
fn exact_curve_dominates_relaxed_curve() {
    for (l, mu) in [(1e5, 1.0), (1e7, 3.0), (100.0, 1.0)] {
        let curve = lower_bound_curve(12.0, l, mu, 400).unwrap();
        assert!(curve.iter().all(|p| p.exact >= p.relaxed));
        assert!(curve.windows(2).all(|w| w[1].exact <= w[0].exact));
    }
    let clamped = lower_bound_curve(12.0, 100.0, 1.0, 5).unwrap();
    assert!(clamped.iter().all(|p| p.relaxed == 0.0));
}

#[test]
fn zero_trace_passes_and_forged_trace_fails() {
    let inst = build_hard_instance(9.0, 20.0, 1.0, 30).unwrap();
    let trace: Vec<TraceStep> = (0..10)
        .map(|k| TraceStep {
            ops: if k == 0 { vec![] } else { adomplus_ops(k - 1, 1) },
            x: DistVec::zeros(9, 30),
        })
        .collect();
    let report = certify_run(&trace, &inst).unwrap();
    assert!(report.passed);
    assert_eq!(report.support_ok.len(), 10);

    let forged = vec![TraceStep { ops: vec![], x: DistVec::consensus(9, &inst.solution()) }];
    let report = certify_run(&forged, &inst).unwrap();
    assert!(!report.passed);
    let v = report.first_violation.unwrap();
    assert_eq!((v.step, v.check), (0, CheckKind::Support));
    assert!(serde_json::to_string(&report.curve).is_ok());
}

#[test]
fn certifier_rejects_skipped_rounds() {
    let inst = build_hard_instance(3.0, 20.0, 1.0, 8).unwrap();
    let mut cert = Certifier::new(&inst).unwrap();
    let x = DistVec::zeros(3, 8);
    cert.observe(&[SpanOp::Compute, SpanOp::Communicate { round: 0 }], &x).unwrap();
    assert!(cert.observe(&[SpanOp::Communicate { round: 2 }], &x).is_err());
}

#[test]
fn adomplus_runs_certify_at_chi_thirty() {
    let inst = build_hard_instance(30.0, 50.0, 1.0, 40).unwrap();
    let seq = GossipSequence::new(&inst.schedule().unwrap()).unwrap();
    let chi = seq.chi().unwrap();
    let p = derive_params(inst.l, inst.mu, chi).unwrap();
    let x_ref = reference_minimizer(&inst.objective, 1e-12).unwrap();
    let sp = SaddlePoint::from_minimizer(&inst.objective, &x_ref, p.nu).unwrap();
    let solver = AdomPlus::new(p, &inst.objective, MultiConsensusMixer::new(&seq, 1).unwrap()).unwrap();
    let mut cert = Certifier::new(&inst).unwrap();
    run(&solver, AdomPlusState::zeros(inst.n, 40), &sp, &StopRule::budget(3000), |s| {
        let ops = if s.k == 0 { vec![] } else { adomplus_ops(s.k - 1, 1) };
        cert.observe(&ops, &s.x).unwrap();
    })
    .unwrap();
    let report = cert.finish().unwrap();
    assert!(report.passed, "{:?}", report.first_violation);
    assert_eq!(report.rounds, 3000);
}
