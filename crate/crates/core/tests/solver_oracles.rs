//! Cross-checks the simplex and branch-and-bound against brute-force
//! oracles on randomized small instances, plus solver invariants as
//! property tests.

mod common;

use common::{
    enumerate_milp, point_feasible, random_feasible_lp, random_feasible_milp, seeded,
    vertex_enumerate,
};
use loadshed_core::milp::{check_feasible, solve_lp, solve_milp, BnbConfig, LpStatus};
use proptest::prelude::*;

#[test]
fn lp_matches_vertex_enumeration() {
    let mut rng = seeded(101);
    for case in 0..100 {
        let (lp, x0) = random_feasible_lp(&mut rng);
        let sol = solve_lp(&lp).expect("solve failed");
        assert_eq!(
            sol.status,
            LpStatus::Optimal,
            "case {case}: instance is feasible by construction"
        );
        let oracle = vertex_enumerate(&lp).expect("oracle found no vertex");
        assert!(
            (sol.objective - oracle).abs() <= 1e-7 * (1.0 + oracle.abs()),
            "case {case}: simplex {} vs enumeration {}",
            sol.objective,
            oracle
        );
        assert!(
            check_feasible(&lp, &sol.x) <= 1e-7,
            "case {case}: returned point violates constraints"
        );
        let known: f64 = lp.objective.iter().zip(&x0).map(|(c, v)| c * v).sum();
        assert!(
            sol.objective <= known + 1e-7,
            "case {case}: optimum {} worse than known feasible {known}",
            sol.objective
        );
    }
}

#[test]
fn milp_matches_binary_enumeration() {
    let mut rng = seeded(202);
    for case in 0..50 {
        let mip = random_feasible_milp(&mut rng, 10);
        let sol = solve_milp(&mip, &BnbConfig::default()).expect("solve failed");
        let oracle = enumerate_milp(&mip);
        match oracle {
            Some(obj) => {
                assert_eq!(sol.status, LpStatus::Optimal, "case {case}");
                assert!(
                    (sol.objective - obj).abs() <= 1e-6 * (1.0 + obj.abs()),
                    "case {case}: branch-and-bound {} vs enumeration {obj}",
                    sol.objective
                );
                assert!(
                    check_feasible(&mip.lp, &sol.x) <= 1e-7,
                    "case {case}: incumbent violates constraints"
                );
                for &j in &mip.binaries {
                    assert!(
                        (sol.x[j] - sol.x[j].round()).abs() <= 1e-6,
                        "case {case}: binary {j} fractional: {}",
                        sol.x[j]
                    );
                }
            }
            None => {
                assert_eq!(
                    sol.status,
                    LpStatus::Infeasible,
                    "case {case}: oracle found nothing but solver returned {:?}",
                    sol.status
                );
            }
        }
    }
}

#[test]
fn lp_solve_is_deterministic() {
    let mut rng = seeded(303);
    for _ in 0..10 {
        let (lp, _) = random_feasible_lp(&mut rng);
        let a = solve_lp(&lp).unwrap();
        let b = solve_lp(&lp).unwrap();
        assert_eq!(a.x, b.x, "same instance, different solutions");
        assert_eq!(a.iterations, b.iterations);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(30))]

    #[test]
    fn lp_never_beats_a_known_feasible_point(seed in 0u64..1 << 48) {
        let mut rng = seeded(seed);
        let (lp, x0) = random_feasible_lp(&mut rng);
        let sol = solve_lp(&lp).unwrap();
        prop_assert_eq!(sol.status, LpStatus::Optimal);
        let known: f64 = lp.objective.iter().zip(&x0).map(|(c, v)| c * v).sum();
        prop_assert!(sol.objective <= known + 1e-7);
        prop_assert!(check_feasible(&lp, &sol.x) <= 1e-7);
    }

    #[test]
    fn milp_is_bounded_by_its_relaxation(seed in 0u64..1 << 48) {
        let mut rng = seeded(seed);
        let mip = random_feasible_milp(&mut rng, 6);
        let relax = solve_lp(&mip.lp).unwrap();
        let sol = solve_milp(&mip, &BnbConfig::default()).unwrap();
        if sol.status == LpStatus::Optimal {
            prop_assert!(
                sol.objective >= relax.objective - 1e-7 * (1.0 + relax.objective.abs()),
                "integral optimum {} beats relaxation {}",
                sol.objective,
                relax.objective
            );
            prop_assert!(sol.best_bound <= sol.objective + 1e-9);
        }
    }

    #[test]
    fn returned_points_respect_bounds(seed in 0u64..1 << 48) {
        let mut rng = seeded(seed);
        let (lp, _) = random_feasible_lp(&mut rng);
        let sol = solve_lp(&lp).unwrap();
        for j in 0..lp.num_vars() {
            prop_assert!(sol.x[j] >= lp.lower[j] - 1e-9);
            prop_assert!(sol.x[j] <= lp.upper[j] + 1e-9);
        }
        prop_assert!(point_feasible(&lp, &sol.x));
    }
}
