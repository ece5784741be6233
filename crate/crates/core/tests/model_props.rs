use proptest::prelude::*;
use svrg_sdde::linalg::{dot, norm, SymMatrix};
use svrg_sdde::models::{enumerate_full_gradient, enumerate_sigma, LogisticModel, QuadraticModel};
use svrg_sdde::rng::{in_ball, stream, Purpose};
use svrg_sdde::verify::estimate_smoothness;
use svrg_sdde::{DiffusionSpec, Model, ObjectiveModel};

fn models() -> Vec<Model> {
    vec![
        Model::Quadratic(QuadraticModel::generate(3, 200, &[0.5, 1.0, 2.0], 11).unwrap()),
        Model::Quadratic(QuadraticModel::generate(1, 50, &[1.0], 12).unwrap()),
        Model::Logistic(LogisticModel::generate(3, 150, &[1.0, -0.5, 0.25], 0.1, 13).unwrap()),
        Model::Logistic(LogisticModel::generate(2, 80, &[0.0, 0.0], 0.3, 14).unwrap()),
    ]
}

fn point(v: &[f64], d: usize) -> Vec<f64> {
    v[..d].to_vec()
}

fn diff_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn full_gradient_is_component_mean(raw in prop::collection::vec(-3.0f64..3.0, 3)) {
        for m in models() {
            let x = point(&raw, m.dim());
            let mut avg = vec![0.0; m.dim()];
            enumerate_full_gradient(&m, &x, &mut avg);
            let g = m.full_gradient(&x);
            let err = norm(&g.iter().zip(&avg).map(|(a, b)| a - b).collect::<Vec<_>>());
            prop_assert!(err <= 1e-12 * (1.0 + norm(&avg)), "{:?}: {err}", m.kind());
        }
    }

    #[test]
    fn sigma_is_symmetric_in_its_arguments(rx in prop::collection::vec(-3.0f64..3.0, 3), ry in prop::collection::vec(-3.0f64..3.0, 3)) {
        for m in models() {
            let (x, y) = (point(&rx, m.dim()), point(&ry, m.dim()));
            let s = m.sigma(&x, &y);
            let t = m.sigma(&y, &x);
            prop_assert!(s.sub(&t).max_abs() <= 1e-14 * (1.0 + s.max_abs()));
            let d = m.dim();
            for i in 0..d {
                for j in 0..d {
                    prop_assert_eq!(s.get(i, j), s.get(j, i));
                }
            }
            // the override agrees with plain enumeration
            let e = enumerate_sigma(&m, &x, &y);
            prop_assert!(s.sub(&e).max_abs() <= 1e-10 * (1.0 + e.max_abs()));
        }
    }

    #[test]
    fn trace_is_bounded_by_mean_square_difference(rx in prop::collection::vec(-3.0f64..3.0, 3), ry in prop::collection::vec(-3.0f64..3.0, 3)) {
        for m in models() {
            let (x, y) = (point(&rx, m.dim()), point(&ry, m.dim()));
            let n = m.n_components();
            let mean_sq = (0..n)
                .map(|i| diff_sq(&m.component_gradient(i, &x), &m.component_gradient(i, &y)))
                .sum::<f64>() / n as f64;
            let tr = m.sigma(&x, &y).trace();
            prop_assert!(tr <= mean_sq * (1.0 + 1e-12) + 1e-15);
            // Jensen: mean square ≤ √(fourth moment)
            prop_assert!(mean_sq <= m.gradient_diff_fourth_moment(&x, &y).sqrt() * (1.0 + 1e-12) + 1e-15);
        }
    }

    #[test]
    fn logistic_gradient_is_strongly_monotone(rx in prop::collection::vec(-4.0f64..4.0, 3), ry in prop::collection::vec(-4.0f64..4.0, 3)) {
        let m = LogisticModel::generate(3, 120, &[2.0, -1.0, 0.5], 0.2, 3).unwrap();
        let g = m.full_gradient(&rx);
        let h = m.full_gradient(&ry);
        let dg: Vec<f64> = g.iter().zip(&h).map(|(a, b)| a - b).collect();
        let dx: Vec<f64> = rx.iter().zip(&ry).map(|(a, b)| a - b).collect();
        prop_assert!(dot(&dg, &dx) >= 0.2 * dot(&dx, &dx) * (1.0 - 1e-12) - 1e-15);
    }

    #[test]
    fn q_squared_is_sigma_plus_ridge(rx in prop::collection::vec(-3.0f64..3.0, 3), ry in prop::collection::vec(-3.0f64..3.0, 3), eta in 1e-4f64..0.1, k in 1.0f64..20.0) {
        for m in models() {
            let (x, y) = (point(&rx, m.dim()), point(&ry, m.dim()));
            let delta = (eta * k).min(1.0);
            let spec = DiffusionSpec::new(&m, eta, delta).unwrap();
            let q = spec.q_factor(&x, &y).unwrap();
            let q2 = SymMatrix::from_row_major(m.dim(), q.matmul(&q));
            let s = m.sigma(&x, &y);
            let err = q2.sub(&s.add_identity(delta / eta)).frobenius_norm();
            let tol = 1e-10 * (1.0 + s.frobenius_norm() + delta * (m.dim() as f64).sqrt() / eta);
            prop_assert!(err <= tol, "{err} > {tol}");
        }
    }
}

#[test]
fn trace_is_bounded_by_smoothness() {
    let m = QuadraticModel::generate(3, 500, &[0.5, 1.0, 2.0], 21).unwrap();
    let l = estimate_smoothness(&m, 4000, 3.0, 5).unwrap().l_hat;
    let mut rng = stream(77, 0, Purpose::Auxiliary);
    for _ in 0..200 {
        let x = in_ball(&mut rng, 3, 3.0);
        let y = in_ball(&mut rng, 3, 3.0);
        let tr = m.sigma(&x, &y).trace();
        assert!(tr <= l * l * diff_sq(&x, &y) * (1.0 + 1e-6));
    }
}
