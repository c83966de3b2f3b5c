use nalgebra::DMatrix;
use proptest::prelude::*;
use tracefda::linalg::{orthonormality_defect, subspace_angle};
use tracefda::reduce::{
    fda, random_pencil, rho_profile, solve_tr, trace_ratio_value, Scaling, TrInit, TrOptions,
};
use tracefda::rng::Seed;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rho_non_increasing_in_k(seed in any::<u64>()) {
        let s = random_pencil(Seed(seed), 12, 6);
        let prof = rho_profile(&s, 6, &TrOptions::default()).unwrap();
        for w in prof.windows(2) {
            prop_assert!(w[1].rho <= w[0].rho + 1e-8 * w[0].rho.max(1.0));
        }
    }

    #[test]
    fn tr_beats_other_orthonormal_bases(seed in any::<u64>(), k in 1usize..5) {
        let s = random_pencil(Seed(seed), 10, 5);
        let pr = solve_tr(&s, k, &TrOptions::default()).unwrap();
        prop_assert!(orthonormality_defect(&pr.v) < 1e-10);
        let mut rng = Seed(seed ^ 7).rng();
        for _ in 0..5 {
            let q = tracefda::linalg::orthonormalize(&tracefda::rng::normal_matrix(&mut rng, 10, k));
            prop_assert!(trace_ratio_value(&q, &s).unwrap() <= pr.rho + 1e-9 * pr.rho.max(1.0));
        }
    }

    #[test]
    fn fda_is_invariant_to_scaling_w(seed in any::<u64>(), c in 0.1f64..10.0) {
        let s = random_pencil(Seed(seed), 8, 4);
        let mut t = s.clone();
        t.w = t.w.scale(c);
        t.s_pooled = t.s_pooled.scale(c);
        let a = fda(&s, 2, Scaling::WOrthonormal).unwrap();
        let b = fda(&t, 2, Scaling::WOrthonormal).unwrap();
        prop_assert!(subspace_angle(&a.orthonormal_basis(), &b.orthonormal_basis()).unwrap() < 1e-6);
    }
}

#[test]
fn warm_and_random_starts_agree() {
    for i in 0..100u64 {
        let s = random_pencil(Seed(1000 + i), 20, 10);
        for k in [2, 5] {
            let warm = solve_tr(&s, k, &TrOptions::default()).unwrap();
            let cold = solve_tr(
                &s,
                k,
                &TrOptions {
                    init: TrInit::Random(i),
                    ..TrOptions::default()
                },
            )
            .unwrap();
            assert!(
                (warm.rho - cold.rho).abs() <= 1e-8 * warm.rho,
                "pencil {i} k {k}"
            );
            if warm.is_unique() {
                assert!(
                    subspace_angle(&warm.v, &cold.v).unwrap() < 1e-5,
                    "pencil {i} k {k}"
                );
            }
        }
    }
}

#[test]
fn tr_solutions_are_not_nested() {
    // distance of span(V_k) from span(V_{k+1})
    let mut d: Vec<f64> = (0..50u64)
        .flat_map(|i| {
            let s = random_pencil(Seed(77).child(i), 20, 10);
            (1..5)
                .map(|k| {
                    let a = solve_tr(&s, k, &TrOptions::default()).unwrap().v;
                    let b = solve_tr(&s, k + 1, &TrOptions::default()).unwrap().v;
                    let resid = &a - &b * (b.transpose() * &a);
                    tracefda::linalg::spectral_norm(&resid)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    d.sort_by(f64::total_cmp);
    let median = d[d.len() / 2];
    assert!(median > 0.01, "median {median}");
}

#[test]
fn fda_solutions_are_nested() {
    let s = random_pencil(Seed(3), 10, 6);
    let a = fda(&s, 2, Scaling::WOrthonormal).unwrap().v;
    let b = fda(&s, 4, Scaling::WOrthonormal).unwrap().v;
    let q = tracefda::linalg::orthonormalize(&b);
    let resid: DMatrix<f64> = &a - &q * (q.transpose() * &a);
    assert!(resid.amax() < 1e-9);
}
