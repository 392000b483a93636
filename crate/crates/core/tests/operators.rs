mod common;

use hallsand::ingest::synth_substrate;
use hallsand::operators::{
    leakage_profile, operator_matrix, spectral_radius, OperatorKind, PropagationOperator,
};
use hallsand::sparse::CsrMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn table_strategy() -> impl Strategy<Value = hallsand::ingest::IoTable> {
    (1usize..=25, 0.05f64..0.8, any::<u64>()).prop_map(|(n, d, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        common::random_table(n, d, &mut rng)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn row_sums_follow_normalisation(t in table_strategy()) {
        let leak = common::naive_leakage(&t);
        let out = t.outflows();
        let share = operator_matrix(&t, OperatorKind::RowShare).unwrap();
        let leaky = operator_matrix(&t, OperatorKind::LeakageAdjusted).unwrap();
        for i in 0..t.n() {
            let expect = if out[i] > 0.0 { 1.0 } else { 0.0 };
            prop_assert!((share.row_sum(i) - expect).abs() <= 1e-12);
            prop_assert!((leaky.row_sum(i) - leak[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn leakage_matches_oracle(t in table_strategy()) {
        let lp = leakage_profile(&t).unwrap();
        let naive = common::naive_leakage(&t);
        for (a, b) in lp.leakage.iter().zip(&naive) {
            prop_assert!((a - b).abs() <= 1e-15);
            prop_assert!((0.0..=1.0).contains(a));
        }
    }

    #[test]
    fn radius_matches_dense_eigensolver(t in table_strategy()) {
        for kind in OperatorKind::ALL {
            let op = PropagationOperator::build(&t, kind).unwrap();
            let m = op.matrix().to_dense();
            if op.spectral_radius() == 0.0 {
                // Eigensolvers smear defective zero eigenvalues; check A^n = 0.
                prop_assert!(common::is_nilpotent(&m), "{kind}: zero radius on a non-nilpotent matrix");
            } else {
                let Some(dense) = common::dense_spectral_radius(&m) else { continue };
                prop_assert!((op.spectral_radius() - dense).abs() <= 1e-8, "{kind}: {} vs {dense}", op.spectral_radius());
            }
        }
    }

    #[test]
    fn leakage_radius_bounded_by_share_radius(t in table_strategy()) {
        let share = PropagationOperator::build(&t, OperatorKind::RowShare).unwrap();
        let leak = PropagationOperator::build(&t, OperatorKind::LeakageAdjusted).unwrap();
        prop_assert!(leak.spectral_radius() <= share.spectral_radius() + 1e-9);
        prop_assert!(share.spectral_radius() <= 1.0 + 1e-9);
    }

    #[test]
    fn operators_invariant_to_currency_scale(t in table_strategy(), c in 1e-3f64..1e3) {
        let scaled = t.scaled(c);
        for kind in OperatorKind::ALL {
            let a = operator_matrix(&t, kind).unwrap();
            let b = operator_matrix(&scaled, kind).unwrap();
            prop_assert_eq!(a.nnz(), b.nnz());
            for ((i, j, x), (k, l, y)) in a.triplets().zip(b.triplets()) {
                prop_assert_eq!((i, j), (k, l));
                prop_assert!((x - y).abs() <= 1e-12 * x.max(1.0));
            }
        }
    }

    #[test]
    fn radius_of_random_nonnegative_matrix(
        n in 1usize..=20,
        density in 0.3f64..1.0,
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dense: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| if rng.random::<f64>() < density { rng.random::<f64>() } else { 0.0 }).collect())
            .collect();
        let rho = spectral_radius(&CsrMatrix::from_dense(&dense), 1e-12, 100_000).unwrap();
        if rho == 0.0 {
            prop_assert!(common::is_nilpotent(&dense));
        } else {
            let oracle = common::dense_spectral_radius(&dense);
            prop_assume!(oracle.is_some());
            prop_assert!((rho - oracle.unwrap()).abs() <= 1e-8);
        }
    }
}

#[test]
fn synthetic_mean_leakage_is_calibrated() {
    let t = synth_substrate(200, 0.1, 1).unwrap();
    let mean = leakage_profile(&t).unwrap().mean_leakage;
    assert!((0.3..0.45).contains(&mean), "{mean}");
}

#[test]
fn block_triangular_radius_is_largest_block() {
    // Blocks with radii 0.6 (2-cycle) and 0.9 (self-loop) joined one way.
    let m = CsrMatrix::from_dense(&[
        vec![0.0, 0.6, 0.3],
        vec![0.6, 0.0, 0.0],
        vec![0.0, 0.0, 0.9],
    ]);
    let rho = spectral_radius(&m, 1e-12, 10_000).unwrap();
    assert!((rho - 0.9).abs() < 1e-12);
    let dense = common::dense_spectral_radius(&m.to_dense()).unwrap();
    assert!((rho - dense).abs() < 1e-10);
}
