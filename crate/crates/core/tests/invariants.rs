//! Property tests over random models.

use fluidhopf::evolution::evolution_matrix;
use fluidhopf::model::FourierTerm;
use fluidhopf::passage::{solve_passage, solve_passage_minus};
use fluidhopf::{
    laplace_passage_table, BoundaryFunction, FamilyKind, FluidModel, GeneratorFamily, GridParams, LaplaceOptions,
    Sign, StateSpace,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn model_strategy() -> impl Strategy<Value = FluidModel> {
    (2usize..=4)
        .prop_flat_map(|m| {
            (
                Just(m),
                1..m,
                proptest::collection::vec(0.5f64..2.0, m),
                proptest::collection::vec(0.0f64..1.0, m * m),
                0.0f64..0.9,
            )
        })
        .prop_map(|(m, up, speeds, off, amp)| {
            let rates = (0..m).map(|i| if i < up { speeds[i] } else { -speeds[i] }).collect();
            let mut q = DMatrix::from_fn(m, m, |i, j| if i == j { 0.0 } else { off[i * m + j] });
            for i in 0..m {
                q[(i, i)] = -q.row(i).sum();
            }
            let k = (1.0 + amp) * (0..m).map(|i| -q[(i, i)]).fold(0.0, f64::max) + 1e-9;
            let family = GeneratorFamily::new(
                FamilyKind::FourierPolynomial {
                    base: q.clone(),
                    fourier: vec![FourierTerm {
                        coefficient: q * amp,
                        frequency: 1.3,
                        phase: 0.4,
                    }],
                    polynomial: vec![],
                },
                k,
            )
            .unwrap();
            FluidModel::new(StateSpace::from_rates(rates).unwrap(), family).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn laplace_entries_are_sub_probabilities(model in model_strategy(), c in 0.3f64..2.0, level in 0.0f64..1.0) {
        let mut o = LaplaceOptions::new(GridParams::new(1e-2, 1e-2));
        o.eta = Some(4.0);
        for sign in [Sign::Plus, Sign::Minus] {
            let t = laplace_passage_table(&model, c, level, sign, &o).unwrap();
            for v in &t.values {
                for i in 0..v.nrows() {
                    prop_assert!(v.row(i).iter().all(|&x| (-1e-12..=1.0 + 1e-12).contains(&x)));
                    prop_assert!(v.row(i).sum() <= 1.0 + 1e-12);
                }
            }
        }
    }

    #[test]
    fn laplace_entries_decrease_in_c(model in model_strategy(), c in 0.3f64..1.5, dc in 0.1f64..1.0) {
        let mut o = LaplaceOptions::new(GridParams::new(1e-2, 1e-2));
        o.eta = Some(4.0);
        o.s_report = Some(1.0);
        let a = laplace_passage_table(&model, c, 0.5, Sign::Plus, &o).unwrap();
        let b = laplace_passage_table(&model, c + dc, 0.5, Sign::Plus, &o).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            prop_assert!(x.iter().zip(y.iter()).all(|(p, q)| *q <= *p + 1e-12));
        }
    }

    #[test]
    fn evolution_rows_are_distributions(model in model_strategy(), s in 0.0f64..3.0, dt in 0.0f64..2.0) {
        let u = evolution_matrix(&model, s, s + dt, 1e-2).unwrap();
        for i in 0..model.m() {
            prop_assert!((u.p.row(i).sum() - 1.0).abs() < 1e-10);
            prop_assert!(u.p.row(i).iter().all(|&x| x >= -1e-12));
        }
    }

    #[test]
    fn down_problem_is_the_mirrored_up_problem(model in model_strategy(), level in 0.0f64..1.0) {
        let target = model.states().minus()[0];
        let g = BoundaryFunction::exp_indicator(Sign::Minus, 1.0, target, 3.0).unwrap();
        let down = solve_passage_minus(&model, &g, level, &GridParams::new(1e-2, 1e-2)).unwrap();
        let mirror = FluidModel::new(model.states().mirrored(), model.generator().clone()).unwrap();
        let g_up = BoundaryFunction::exp_indicator(Sign::Plus, 1.0, target, 3.0).unwrap();
        let up = solve_passage(&mirror, &g_up, level, &GridParams::new(1e-2, 1e-2)).unwrap();
        prop_assert_eq!(down.at_zero, up.at_zero);
        prop_assert_eq!(down.at_level, up.at_level);
    }
}
