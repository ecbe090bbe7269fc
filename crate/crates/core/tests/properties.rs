use hcma::boundary::{BoundarySpec, FourierMode, TrigPolynomial};
use hcma::grid::{Grid, ScalarField};
use hcma::io::Snapshot;
use hcma::profile::EpsilonProfile;
use hcma::solver::{newton_solve, NewtonReport, Solution, SolverConfig};
use hcma::verifier::{check_convexity, check_max_principle_q, check_metric_lower_bound, check_upper_bound, Context};
use num_complex::Complex64;
use proptest::prelude::*;

fn boundary(c0: (f64, f64), c1: (f64, f64), k: (i32, i32)) -> BoundarySpec {
    BoundarySpec::new(
        TrigPolynomial::new(vec![FourierMode::new(k.0, k.1, c0.0, c0.1)]),
        TrigPolynomial::new(vec![FourierMode::new(1, 0, c1.0, c1.1)]),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn estimates_hold_on_small_random_boundaries(
        c0 in (-0.004f64..0.004, -0.004f64..0.004),
        c1 in (-0.004f64..0.004, -0.004f64..0.004),
        k in (0i32..2, -1i32..2),
        eps in 1e-3f64..1e-1,
    ) {
        let g = Grid::square(9, 16, 16).unwrap();
        let s = newton_solve(g, &boundary(c0, c1, k), &EpsilonProfile::annulus(eps).unwrap(), &SolverConfig::default(), None).unwrap();
        let ctx = Context::new(&s);
        for r in [check_convexity(&ctx), check_max_principle_q(&ctx), check_metric_lower_bound(&ctx), check_upper_bound(&ctx)] {
            prop_assert!(r.pass, "{:?}", r);
        }
    }

    #[test]
    fn snapshot_round_trip_is_bitwise(
        vals in proptest::collection::vec(proptest::num::f64::ANY, 3 * 4 * 4),
        re in -0.5f64..0.5,
        im in 0.5f64..2.0,
        hist in proptest::collection::vec(0.0f64..1.0, 0..5),
    ) {
        let g = Grid::new(3, 4, 4, Complex64::new(re, im)).unwrap();
        let sol = Solution {
            phi: ScalarField::from_values(g, vals).unwrap(),
            profile: EpsilonProfile::annulus(0.5).unwrap(),
            boundary: boundary((0.001, 0.0), (0.0, 0.002), (1, 1)),
            converged: false,
            iterations: 7,
            final_residual: 0.1,
            report: NewtonReport { residual_history: hist, ..Default::default() },
        };
        let snap = Snapshot { config_toml: "x = 1".into(), solution: sol };
        let bytes = snap.to_bytes();
        let back = Snapshot::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        for (a, b) in back.solution.phi.values.iter().zip(&snap.solution.phi.values) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
