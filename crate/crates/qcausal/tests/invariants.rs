//! Cross-cutting invariants: property tests for the tensor primitives and
//! structural guarantees of the discovery pipeline.

use std::collections::HashSet;

use num_complex::Complex64;
use proptest::prelude::*;

use qcausal::discovery::discover;
use qcausal::generate::{markovian_process, DagEdge, DagSpec};
use qcausal::io::{procmat_from_str, procmat_to_string};
use qcausal::mat::{ComplexMatrix, SystemShape};
use qcausal::process::{PartySpec, ProcessMatrix, SystemLayout, TraceTarget};

const EPS: f64 = 1e-9;

fn matrix_strategy(side: usize) -> impl Strategy<Value = ComplexMatrix> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), side * side).prop_map(move |entries| {
        ComplexMatrix::new(
            side,
            side,
            entries.into_iter().map(|(re, im)| Complex64::new(re, im)).collect(),
        )
        .unwrap()
    })
}

fn shape_and_matrix() -> impl Strategy<Value = (Vec<usize>, ComplexMatrix)> {
    prop::collection::vec(1usize..4, 2..5).prop_flat_map(|dims| {
        let side: usize = dims.iter().product();
        (Just(dims), matrix_strategy(side))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn partial_trace_preserves_trace((dims, m) in shape_and_matrix(), mask in prop::collection::vec(any::<bool>(), 4)) {
        let shape = SystemShape::new(dims.clone()).unwrap();
        let traced: Vec<usize> = (0..dims.len()).filter(|&k| mask[k % mask.len()]).collect();
        let reduced = m.partial_trace(&shape, &traced).unwrap();
        let diff = (reduced.trace() - m.trace()).norm();
        prop_assert!(diff < 1e-10, "trace changed by {diff}");
    }

    #[test]
    fn kron_trace_multiplies(a in matrix_strategy(3), b in matrix_strategy(2)) {
        let t = a.kron(&b).unwrap().trace();
        prop_assert!((t - a.trace() * b.trace()).norm() < 1e-11);
    }

    #[test]
    fn reorder_preserves_spectrum((dims, m) in shape_and_matrix(), seed in any::<u64>()) {
        let h = m.hermitian_part();
        let shape = SystemShape::new(dims.clone()).unwrap();
        // Seed-derived permutation.
        let mut perm: Vec<usize> = (0..dims.len()).collect();
        let mut state = seed | 1;
        for i in (1..perm.len()).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            perm.swap(i, (state >> 33) as usize % (i + 1));
        }
        let reordered = h.reorder_systems(&shape, &perm).unwrap();
        let before = h.hermitian_eigenvalues().unwrap();
        let after = reordered.hermitian_eigenvalues().unwrap();
        for (x, y) in before.iter().zip(after.iter()) {
            prop_assert!((x - y).abs() < 1e-9, "spectrum changed: {x} vs {y}");
        }
        // Trace and positivity bookkeeping.
        prop_assert!((reordered.trace() - h.trace()).norm() < 1e-11);
    }

    #[test]
    fn approx_equal_is_reflexive_and_symmetric(a in matrix_strategy(3), b in matrix_strategy(3), eps in 0.0f64..0.5) {
        prop_assert!(a.approx_equal(&a, 0.0).unwrap());
        prop_assert_eq!(
            a.approx_equal(&b, eps).unwrap(),
            b.approx_equal(&a, eps).unwrap()
        );
    }

    #[test]
    fn procmat_roundtrip_is_bit_exact(m in matrix_strategy(4)) {
        let layout = SystemLayout::new(vec![PartySpec::new("A", 2, vec![2])]).unwrap();
        let w = ProcessMatrix::new(layout, m).unwrap();
        let text = procmat_to_string(&w);
        let back = procmat_from_str(&text).unwrap();
        prop_assert_eq!(back.matrix().data(), w.matrix().data());
        prop_assert_eq!(back.layout(), w.layout());
    }
}

// ---------------------------------------------------------------------------
// Discovery pipeline invariants on generated processes
// ---------------------------------------------------------------------------

fn fork_truth(seed: u64) -> qcausal::generate::GroundTruth {
    let layout = SystemLayout::new(vec![
        PartySpec::new("A", 2, vec![2, 2]),
        PartySpec::new("B", 2, vec![2]),
        PartySpec::new("C", 2, vec![2]),
    ])
    .unwrap();
    let spec = DagSpec::new(
        layout,
        vec![DagEdge::new("A", 0, "B"), DagEdge::new("A", 1, "C")],
    )
    .unwrap();
    markovian_process(&spec, seed).unwrap()
}

#[test]
fn fork_dag_is_recovered_exactly() {
    for seed in 0..5 {
        let truth = fork_truth(seed);
        let report = discover(&truth.process, EPS).unwrap();
        assert!(report.markovian);
        let edges: HashSet<(String, usize, String)> = report
            .arrows
            .iter()
            .map(|a| (a.source.party.clone(), a.source.subsystem, a.target.clone()))
            .collect();
        let expected: HashSet<(String, usize, String)> = [
            ("A".to_string(), 0, "B".to_string()),
            ("A".to_string(), 1, "C".to_string()),
        ]
        .into_iter()
        .collect();
        assert_eq!(edges, expected);
    }
}

#[test]
fn arrows_respect_the_causal_order() {
    for seed in 0..8 {
        let truth = fork_truth(seed);
        let report = discover(&truth.process, EPS).unwrap();
        let order = report.causal_order.as_ref().unwrap();
        for a in &report.arrows {
            assert!(
                order.strictly_precedes(&a.source.party, &a.target),
                "arrow {a:?} violates the order"
            );
        }
    }
}

#[test]
fn open_subsystems_never_source_arrows() {
    // A DAG whose source party also has an open subsystem.
    let layout = SystemLayout::new(vec![
        PartySpec::new("A", 2, vec![2, 2]),
        PartySpec::new("B", 2, vec![2]),
    ])
    .unwrap();
    let spec = DagSpec::new(layout, vec![DagEdge::new("A", 0, "B")]).unwrap();
    for seed in 0..8 {
        let truth = markovian_process(&spec, seed).unwrap();
        let report = discover(&truth.process, EPS).unwrap();
        let open: HashSet<_> = report.open_subsystems.iter().collect();
        assert!(!open.is_empty());
        for a in &report.arrows {
            assert!(!open.contains(&a.source));
        }
    }
}

#[test]
fn generated_processes_validate_tightly() {
    for seed in 0..6 {
        let truth = fork_truth(seed);
        let report = truth.process.validate(1e-9, 1e-9);
        assert!(report.is_valid(), "{:?}", report.issues);
    }
}

#[test]
fn open_subsystem_removal_order_is_irrelevant() {
    // Both subsystems of A are open; tracing them out in either order gives
    // the same reduced matrix.
    let layout = SystemLayout::new(vec![
        PartySpec::new("A", 2, vec![2, 2]),
        PartySpec::new("B", 2, vec![2]),
    ])
    .unwrap();
    let spec = DagSpec::new(layout, vec![]).unwrap();
    let truth = markovian_process(&spec, 3).unwrap();
    let report = discover(&truth.process, EPS).unwrap();
    assert_eq!(report.open_subsystems.len(), 2);

    let forward = truth
        .process
        .trace_out(&[
            TraceTarget::OutputSubsystem(report.open_subsystems[0].clone()),
            TraceTarget::OutputSubsystem(report.open_subsystems[1].clone()),
        ])
        .unwrap();
    let backward = truth
        .process
        .trace_out(&[
            TraceTarget::OutputSubsystem(report.open_subsystems[1].clone()),
            TraceTarget::OutputSubsystem(report.open_subsystems[0].clone()),
        ])
        .unwrap();
    assert!(forward
        .matrix()
        .approx_equal(backward.matrix(), 0.0)
        .unwrap());
}

#[test]
fn ground_truth_pieces_rebuild_the_process_exactly() {
    for seed in 0..4 {
        let truth = fork_truth(seed);
        let rebuilt = qcausal::discovery::build_test_matrix_with_identities(
            truth.process.layout(),
            &truth.states,
            &truth.channels,
            &truth.identity_outputs,
        )
        .unwrap();
        // Same assembly path, bitwise identical.
        assert_eq!(rebuilt.matrix().data(), truth.process.matrix().data());
    }
}

#[test]
fn stage_operations_compose_like_discover() {
    use qcausal::discovery::{find_arrows, find_open_subsystems, peel_causal_order, CausalOrderResult};

    let truth = fork_truth(2);
    let open = find_open_subsystems(&truth.process, EPS).unwrap();
    assert!(open.is_empty());

    // Two dangling subsystems are both open when tested directly.
    let layout = SystemLayout::new(vec![PartySpec::new("A", 2, vec![2, 2])]).unwrap();
    let spec = DagSpec::new(layout, vec![]).unwrap();
    let dangling = markovian_process(&spec, 1).unwrap();
    let open = find_open_subsystems(&dangling.process, EPS).unwrap();
    assert_eq!(open.len(), 2);

    match peel_causal_order(&truth.process, EPS).unwrap() {
        CausalOrderResult::Ordered(order) => {
            assert_eq!(order.sets().len(), 2);
            let arrows = find_arrows(&truth.process, &order, &[], EPS).unwrap();
            assert_eq!(arrows.len(), 2);
            let report = discover(&truth.process, EPS).unwrap();
            assert_eq!(arrows, report.arrows);
        }
        CausalOrderResult::NotOrdered { .. } => panic!("fork process is causally ordered"),
    }
}

#[test]
fn mixed_dimension_structure_is_recovered() {
    // Non-qubit systems: a qutrit feeding a ququart input, a dim-3 open
    // subsystem, and a skip-level arrow.
    let layout = SystemLayout::new(vec![
        PartySpec::new("A", 3, vec![2, 3]),
        PartySpec::new("B", 4, vec![2, 2]),
        PartySpec::new("C", 2, vec![3]),
    ])
    .unwrap();
    let spec = DagSpec::new(
        layout,
        vec![
            DagEdge::new("A", 0, "B"),
            DagEdge::new("B", 1, "C"),
        ],
    )
    .unwrap();
    for seed in 0..3 {
        let truth = markovian_process(&spec, 40 + seed).unwrap();
        let report = discover(&truth.process, EPS).unwrap();
        assert!(report.markovian, "seed {seed}");
        let edges: HashSet<(String, usize, String)> = report
            .arrows
            .iter()
            .map(|a| (a.source.party.clone(), a.source.subsystem, a.target.clone()))
            .collect();
        let expected: HashSet<(String, usize, String)> = [
            ("A".to_string(), 0, "B".to_string()),
            ("B".to_string(), 1, "C".to_string()),
        ]
        .into_iter()
        .collect();
        assert_eq!(edges, expected, "seed {seed}");
        // A's dim-3 subsystem and B's first subsystem are open.
        let open: HashSet<_> = report.open_subsystems.iter().cloned().collect();
        let expected_open: HashSet<_> = [
            qcausal::SubsystemRef::new("A", 1),
            qcausal::SubsystemRef::new("B", 0),
        ]
        .into_iter()
        .collect();
        assert_eq!(open, expected_open, "seed {seed}");
        let dag = report.dag.as_ref().unwrap();
        assert_eq!(dag.first, vec!["A"]);
        assert_eq!(dag.last, vec!["C"]);
    }
}

#[test]
fn discovery_is_deterministic() {
    let truth = fork_truth(11);
    let a = discover(&truth.process, EPS).unwrap();
    let b = discover(&truth.process, EPS).unwrap();
    assert_eq!(a.to_json_string(), b.to_json_string());
    assert_eq!(a.constraint_tests, b.constraint_tests);
}

#[test]
fn constraint_bound_holds_on_random_dags() {
    use rand_chacha::rand_core::SeedableRng;
    let mut seeds = 0u64;
    for n in 2..=4usize {
        for case in 0..5u64 {
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(777 + seeds);
            seeds += 1;
            // Dense-ish random DAG: every forward pair with probability 1/2.
            use rand::Rng;
            let mut out_count = vec![0usize; n];
            let mut edges = Vec::new();
            for a in 0..n {
                for b in (a + 1)..n {
                    if rng.random::<bool>() {
                        edges.push((a, b));
                    }
                }
            }
            let mut edge_list = Vec::new();
            for &(a, b) in &edges {
                edge_list.push(DagEdge::new(
                    (a + 1).to_string(),
                    out_count[a],
                    (b + 1).to_string(),
                ));
                out_count[a] += 1;
            }
            let parties: Vec<PartySpec> = (0..n)
                .map(|p| PartySpec::new((p + 1).to_string(), 2, vec![2; out_count[p].max(1)]))
                .collect();
            let layout = SystemLayout::new(parties).unwrap();
            let total_subsystems: u64 = layout
                .parties()
                .iter()
                .map(|p| p.output_subdims.len() as u64)
                .sum();
            let spec = DagSpec::new(layout, edge_list).unwrap();
            let truth = markovian_process(&spec, 5_000 + case).unwrap();
            let report = discover(&truth.process, EPS).unwrap();
            let bound = 2 * (n as u64).pow(2) + n as u64 * total_subsystems;
            assert!(
                report.constraint_tests <= bound,
                "n={n}: {} > {bound}",
                report.constraint_tests
            );
        }
    }
}
