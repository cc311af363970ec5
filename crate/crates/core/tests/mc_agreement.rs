//! Monte Carlo estimates against PDE solves and the factorization.

use fluidhopf::mc::{passage_samples, Discounted};
use fluidhopf::verify::{constant_model, sinusoidal_model};
use fluidhopf::{
    estimate_expectation, factorize, homog_passage_matrix, laplace_passage_table, solve, BoundaryFunction,
    GridParams, LaplaceOptions, PassageQuery, Sampler, Sign,
};

fn query(i0: usize, level: f64, sign: Sign, n: usize) -> PassageQuery {
    PassageQuery {
        s0: 0.0,
        i0,
        level,
        sign,
        n,
        horizon: 30.0,
        seed: 99,
    }
}

#[test]
fn discounted_down_passage_matches_factorization() {
    let model = constant_model(vec![2.0, -1.0], &[-1.5, 1.5, 0.5, -0.5]);
    let f = factorize(&model.eval(0.0), model.states(), 0.8).unwrap();
    let exact = homog_passage_matrix(&f, 0.7, Sign::Minus, Sign::Plus).unwrap()[(0, 0)];
    let e = estimate_expectation(&model, &Discounted { c: 0.8, target: None }, &query(0, 0.7, Sign::Minus, 40_000))
        .unwrap();
    assert!((e.mean - exact).abs() <= 3.0 * e.stderr + e.bias_bound, "{} vs {exact}", e.mean);
}

#[test]
fn sinusoidal_table_matches_mc() {
    let model = sinusoidal_model();
    let mut o = LaplaceOptions::new(GridParams::new(2e-3, 2e-3));
    o.eta = Some(20.0);
    let t = laplace_passage_table(&model, 1.0, 0.5, Sign::Plus, &o).unwrap();
    let g = BoundaryFunction::exp_indicator(Sign::Plus, 1.0, 0, 20.0).unwrap();
    for i0 in 0..2 {
        let e = estimate_expectation(&model, &g, &query(i0, 0.5, Sign::Plus, 40_000)).unwrap();
        let pde = t.values[0][(i0, 0)];
        assert!((pde - e.mean).abs() <= 3.0 * e.stderr + 2e-3, "{i0}: {pde} vs {}", e.mean);
    }
}

#[test]
fn down_crossing_pde_matches_mc() {
    let model = sinusoidal_model();
    let g = BoundaryFunction::exp_indicator(Sign::Minus, 1.0, 1, 20.0).unwrap();
    let f = solve(&model, &g, 0.5, &GridParams::new(2e-3, 2e-3)).unwrap();
    for i0 in 0..2 {
        let e = estimate_expectation(&model, &g, &query(i0, 0.5, Sign::Minus, 40_000)).unwrap();
        let pde = f.at_zero[(0, i0)];
        assert!((pde - e.mean).abs() <= 3.0 * e.stderr + 2e-3, "{i0}: {pde} vs {}", e.mean);
    }
}

#[test]
fn samplers_agree_on_hit_law() {
    let model = sinusoidal_model();
    let q = query(1, 1.0, Sign::Plus, 20_000);
    let count = |s| {
        passage_samples(&model, &q, s)
            .unwrap()
            .iter()
            .filter(|p| p.tau.is_some_and(|t| t < 5.0))
            .count() as f64
            / q.n as f64
    };
    let (a, b) = (count(Sampler::HazardInversion), count(Sampler::Thinning));
    let se = (a * (1.0 - a) / q.n as f64).sqrt();
    assert!((a - b).abs() <= 4.0 * std::f64::consts::SQRT_2 * se, "{a} vs {b}");
}
