//! PDE tables against the constant-generator factorization and closed forms.

use approx::assert_abs_diff_eq;
use fluidhopf::queries::homog_table;
use fluidhopf::verify::constant_model;
use fluidhopf::{
    factorize, homog_crosscheck, homog_passage_matrix, laplace_passage_table, GridParams, LaplaceOptions, Sign,
};

fn opts(h: f64, eta: f64) -> LaplaceOptions {
    let mut o = LaplaceOptions::new(GridParams::new(h, h));
    o.eta = Some(eta);
    o
}

#[test]
fn absorbing_chain_up_table_is_survival_times_discount() {
    let model = constant_model(vec![1.0, -1.0], &[-1.0, 1.0, 0.0, 0.0]);
    let t = laplace_passage_table(&model, 1.0, 1.0, Sign::Plus, &opts(2e-3, 12.0)).unwrap();
    assert_abs_diff_eq!(t.values[0][(0, 0)], (-2.0f64).exp(), epsilon = 2e-3);
    // the absorbing down state never crosses
    assert_eq!(t.values[0][(1, 0)], 0.0);
}

#[test]
fn absorbing_chain_factorization() {
    let model = constant_model(vec![1.0, -1.0], &[-1.0, 1.0, 0.0, 0.0]);
    let f = factorize(&model.eval(0.0), model.states(), 1.0).unwrap();
    assert_abs_diff_eq!(f.pi_plus[(0, 0)], 0.0, epsilon = 1e-14);
    assert_abs_diff_eq!(f.q_plus[(0, 0)], -2.0, epsilon = 1e-12);
    let e = homog_passage_matrix(&f, 1.0, Sign::Plus, Sign::Plus).unwrap();
    assert_abs_diff_eq!(e[(0, 0)], (-2.0f64).exp(), epsilon = 1e-12);
}

#[test]
fn three_state_tables_match_both_directions() {
    let model = constant_model(
        vec![1.0, 2.0, -1.5],
        &[-1.0, 0.4, 0.6, 0.3, -0.8, 0.5, 0.7, 0.2, -0.9],
    );
    for sign in [Sign::Plus, Sign::Minus] {
        let t = laplace_passage_table(&model, 1.3, 0.6, sign, &opts(2e-3, 12.0)).unwrap();
        let exact = homog_table(&model, 1.3, 0.6, sign).unwrap();
        for (k, v) in t.values.iter().enumerate().step_by(250) {
            let dev = (v - &exact).amax();
            assert!(dev < 1e-3, "{sign:?} at s = {}: {dev}", t.s_nodes[k]);
        }
    }
}

#[test]
fn trivial_generator_is_exact() {
    let model = constant_model(vec![1.0, -2.0], &[0.0, 0.0, 0.0, 0.0]);
    let r = homog_crosscheck(&model, 0.5, 1.0, Sign::Plus, &opts(1e-2, 20.0), None).unwrap();
    assert!(r.pass);
    assert!(r.max_deviation < 1e-13, "{}", r.max_deviation);
}

#[test]
fn crosscheck_error_is_first_order() {
    let model = constant_model(vec![1.0, -1.0], &[-1.0, 1.0, 1.0, -1.0]);
    // short report window keeps the truncation bias far below the grid error
    let near = |h| LaplaceOptions {
        s_report: Some(2.0),
        ..opts(h, 20.0)
    };
    let a = homog_crosscheck(&model, 1.0, 1.0, Sign::Plus, &near(4e-3), None).unwrap();
    let b = homog_crosscheck(&model, 1.0, 1.0, Sign::Plus, &near(2e-3), None).unwrap();
    let ratio = a.max_deviation / b.max_deviation;
    assert!((1.8..2.2).contains(&ratio), "{ratio}");
}
