//! Laplace-transform passage tables assembled from PDE solves, the
//! cross-check against the homogeneous factorization, and Gaver–Stehfest
//! inversion.

use nalgebra::DMatrix;
use rayon::prelude::*;
use thiserror::Error;

use crate::homog::{factorize, homog_passage_matrix, HomogError};
use crate::model::{FluidModel, Sign};
use crate::passage::{solve, BoundaryFunction, GridParams, PassageError};

/// Stehfest order used by [`invert_laplace`].
pub const STEHFEST_ORDER: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QueryError {
    #[error("discount must be positive and finite, got {0}")]
    InvalidDiscount(f64),
    #[error("the homogeneous cross-check needs a constant generator family")]
    NotConstantFamily,
    #[error("Laplace inversion is ill-conditioned: orders {low} and {high} give {a} and {b}")]
    IllConditioned { low: usize, high: usize, a: f64, b: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Passage(#[from] PassageError),
    #[error(transparent)]
    Homog(#[from] HomogError),
}

/// `E_{s,i}[e^{−c(τ − s)} 1{X_τ = j}]` for every start state `i` and every
/// state `j` of the crossing class.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceTable {
    pub c: f64,
    pub level: f64,
    pub sign: Sign,
    pub s_nodes: Vec<f64>,
    /// Crossing-class states, in the column order of `values`.
    pub targets: Vec<usize>,
    /// One `m × targets.len()` matrix per `s`-node; rows use the original
    /// state order.
    pub values: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceOptions {
    pub grid: GridParams,
    /// Truncation of the boundary data; defaults to `20/c`.
    pub eta: Option<f64>,
    /// Largest reported `s`; defaults to `η/2`, where the truncation bias is
    /// below `e^{−c(η/2 − 1)}`.
    pub s_report: Option<f64>,
    /// Keep every `s_stride`-th grid node.
    pub s_stride: usize,
}

impl LaplaceOptions {
    pub fn new(grid: GridParams) -> Self {
        LaplaceOptions {
            grid,
            eta: None,
            s_report: None,
            s_stride: 1,
        }
    }
}

pub fn laplace_passage_table(
    model: &FluidModel,
    c: f64,
    level: f64,
    sign: Sign,
    opts: &LaplaceOptions,
) -> Result<LaplaceTable, QueryError> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(QueryError::InvalidDiscount(c));
    }
    let eta = opts.eta.unwrap_or_else(|| BoundaryFunction::default_eta(c));
    let targets = model.states().class(sign).to_vec();
    let solves = targets
        .par_iter()
        .map(|&j| {
            let g = BoundaryFunction::exp_indicator(sign, c, j, eta)?;
            solve(model, &g, level, &opts.grid)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let grid = &solves[0].grid;
    let s_hi = opts.s_report.unwrap_or(0.5 * eta);
    let m = model.m();
    let mut s_nodes = Vec::new();
    let mut values = Vec::new();
    for k in (0..=grid.n_s).step_by(opts.s_stride.max(1)) {
        let s = grid.s(k);
        if s > s_hi * (1.0 + 1e-12) {
            break;
        }
        let scale = (c * s).exp();
        let mut v = DMatrix::zeros(m, targets.len());
        for (col, f) in solves.iter().enumerate() {
            for i in 0..m {
                v[(i, col)] = f.at_zero[(k, i)] * scale;
            }
        }
        s_nodes.push(s);
        values.push(v);
    }
    Ok(LaplaceTable {
        c,
        level,
        sign,
        s_nodes,
        targets,
        values,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrosscheckReport {
    pub max_deviation: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// `s`-node where the largest deviation occurred.
    pub worst_s: f64,
    pub nodes_checked: usize,
}

/// Homogeneous passage matrices in table layout: rows in original state
/// order, columns the crossing class.
pub fn homog_table(model: &FluidModel, c: f64, level: f64, sign: Sign) -> Result<DMatrix<f64>, QueryError> {
    let states = model.states();
    let fact = factorize(&model.eval(0.0), states, c)?;
    let same = homog_passage_matrix(&fact, level, sign, sign)?;
    let cross = homog_passage_matrix(&fact, level, sign, sign.flip())?;
    let own = states.class(sign);
    let other = states.class(sign.flip());
    let mut out = DMatrix::zeros(states.len(), own.len());
    for (r, &i) in own.iter().enumerate() {
        out.row_mut(i).copy_from(&same.row(r));
    }
    for (r, &i) in other.iter().enumerate() {
        out.row_mut(i).copy_from(&cross.row(r));
    }
    Ok(out)
}

/// Compares the PDE table with the factorization over every reported
/// `s`-node. `tolerance` defaults to `10·(ds + da)`.
pub fn homog_crosscheck(
    model: &FluidModel,
    c: f64,
    level: f64,
    sign: Sign,
    opts: &LaplaceOptions,
    tolerance: Option<f64>,
) -> Result<CrosscheckReport, QueryError> {
    if !model.generator().is_constant() {
        return Err(QueryError::NotConstantFamily);
    }
    let exact = homog_table(model, c, level, sign)?;
    let table = laplace_passage_table(model, c, level, sign, opts)?;
    let mut max_deviation: f64 = 0.0;
    let mut worst_s = 0.0;
    for (s, v) in table.s_nodes.iter().zip(&table.values) {
        let d = (v - &exact).amax();
        if d > max_deviation {
            max_deviation = d;
            worst_s = *s;
        }
    }
    let tolerance = tolerance.unwrap_or(10.0 * (opts.grid.ds + opts.grid.da));
    Ok(CrosscheckReport {
        max_deviation,
        tolerance,
        pass: max_deviation <= tolerance,
        worst_s,
        nodes_checked: table.s_nodes.len(),
    })
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Gaver–Stehfest weights `V_1..V_n` for even `n`.
pub fn stehfest_weights(n: usize) -> Vec<f64> {
    let h = n / 2;
    (1..=n)
        .map(|k| {
            let mut s = 0.0;
            for j in k.div_ceil(2)..=k.min(h) {
                s += (j as f64).powi(h as i32) * factorial(2 * j)
                    / (factorial(h - j) * factorial(j) * factorial(j - 1) * factorial(k - j) * factorial(2 * j - k));
            }
            if (k + h).is_multiple_of(2) {
                s
            } else {
                -s
            }
        })
        .collect()
}

/// Transform arguments `c_k = k ln 2 / t`, `k = 1..=STEHFEST_ORDER`, at
/// which the samples passed to [`invert_laplace`] must be taken.
pub fn stehfest_nodes(t: f64) -> Vec<f64> {
    let a = std::f64::consts::LN_2 / t;
    (1..=STEHFEST_ORDER).map(|k| k as f64 * a).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InversionTarget {
    /// Invert the samples as given.
    Density,
    /// Invert `samples / c`, the transform of the distribution function.
    Cdf,
}

fn stehfest_sum(samples: &[f64], nodes: &[f64], order: usize, target: InversionTarget, a: f64) -> f64 {
    stehfest_weights(order)
        .iter()
        .zip(samples.iter().zip(nodes))
        .map(|(w, (f, c))| match target {
            InversionTarget::Density => w * f,
            InversionTarget::Cdf => w * f / c,
        })
        .sum::<f64>()
        * a
}

/// Order-12 Gaver–Stehfest inversion at `t` from samples at
/// [`stehfest_nodes`]. The order-10 estimate from the same samples serves
/// as a stability check. Numerically fragile; meant for exploration.
pub fn invert_laplace(samples: &[f64], t: f64, target: InversionTarget) -> Result<f64, QueryError> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(QueryError::InvalidArgument(format!("time must be positive, got {t}")));
    }
    if samples.len() != STEHFEST_ORDER {
        return Err(QueryError::InvalidArgument(format!(
            "need {STEHFEST_ORDER} transform samples, got {}",
            samples.len()
        )));
    }
    let nodes = stehfest_nodes(t);
    let a = std::f64::consts::LN_2 / t;
    let high = stehfest_sum(samples, &nodes, STEHFEST_ORDER, target, a);
    let low = stehfest_sum(samples, &nodes, STEHFEST_ORDER - 2, target, a);
    let scale = high.abs().max(low.abs());
    if scale > 0.0 && (high - low).abs() > 0.1 * scale {
        return Err(QueryError::IllConditioned {
            low: STEHFEST_ORDER - 2,
            high: STEHFEST_ORDER,
            a: low,
            b: high,
        });
    }
    Ok(high)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GeneratorFamily, StateSpace};

    fn constant(rates: Vec<f64>, m: &[f64]) -> FluidModel {
        let n = rates.len();
        FluidModel::new(
            StateSpace::from_rates(rates).unwrap(),
            GeneratorFamily::constant_auto(DMatrix::from_row_slice(n, n, m)).unwrap(),
        )
        .unwrap()
    }

    fn opts(h: f64) -> LaplaceOptions {
        let mut o = LaplaceOptions::new(GridParams::new(h, h));
        o.s_stride = 50;
        o
    }

    #[test]
    fn stehfest_weights_sum_to_zero() {
        let w = stehfest_weights(12);
        assert!(w.iter().sum::<f64>().abs() < 1e-6);
        assert!((w[0] + 1.0 / 60.0).abs() < 1e-15);
    }

    #[test]
    fn point_mass_cdf() {
        let samples: Vec<f64> = stehfest_nodes(2.0).iter().map(|c| (-c).exp()).collect();
        let v = invert_laplace(&samples, 2.0, InversionTarget::Cdf).unwrap();
        assert!((v - 1.0).abs() <= 0.05, "{v}");
    }

    #[test]
    fn exponential_density() {
        let samples: Vec<f64> = stehfest_nodes(1.0).iter().map(|c| 1.0 / (1.0 + c)).collect();
        let v = invert_laplace(&samples, 1.0, InversionTarget::Density).unwrap();
        let e = (-1.0f64).exp();
        assert!((v - e).abs() <= 0.05 * e, "{v}");
    }

    #[test]
    fn zero_transform() {
        assert_eq!(invert_laplace(&[0.0; 12], 3.0, InversionTarget::Density).unwrap(), 0.0);
    }

    #[test]
    fn oscillating_transform_is_rejected() {
        let samples: Vec<f64> = stehfest_nodes(1.0).iter().map(|c| (10.0 * c).sin()).collect();
        assert!(matches!(
            invert_laplace(&samples, 1.0, InversionTarget::Density),
            Err(QueryError::IllConditioned { .. })
        ));
        assert!(invert_laplace(&[1.0; 5], 1.0, InversionTarget::Density).is_err());
    }

    #[test]
    fn frozen_model_is_exact() {
        // without jumps the up state reaches ℓ at time ℓ/v exactly
        let model = constant(vec![1.0, -1.0], &[0.0; 4]);
        let r = homog_crosscheck(&model, 1.0, 1.0, Sign::Plus, &opts(0.01), None).unwrap();
        assert!(r.max_deviation < 1e-12, "{r:?}");
    }

    #[test]
    fn symmetric_model_passes() {
        let model = constant(vec![1.0, -1.0], &[-1.0, 1.0, 1.0, -1.0]);
        let r = homog_crosscheck(&model, 1.0, 1.0, Sign::Plus, &opts(4e-3), None).unwrap();
        assert!(r.pass, "{r:?}");
        let m = homog_crosscheck(&model, 1.0, 1.0, Sign::Minus, &opts(4e-3), None).unwrap();
        assert!(m.pass, "{m:?}");
    }

    #[test]
    fn coarse_grid_fails_at_fixed_tolerance() {
        let model = constant(vec![1.0, -1.0], &[-1.0, 1.0, 1.0, -1.0]);
        let mut o = LaplaceOptions::new(GridParams::new(0.1, 0.1));
        o.s_stride = 1;
        let r = homog_crosscheck(&model, 1.0, 1.0, Sign::Plus, &o, Some(0.01)).unwrap();
        assert!(!r.pass && r.max_deviation > 0.01, "{r:?}");
    }

    #[test]
    fn level_zero_identity_block() {
        let model = constant(vec![1.0, -2.0, 0.5], &[-2.0, 1.0, 1.0, 1.0, -2.0, 1.0, 1.0, 1.0, -2.0]);
        let t = laplace_passage_table(&model, 0.5, 0.0, Sign::Plus, &opts(0.01)).unwrap();
        assert_eq!(t.targets, vec![0, 2]);
        for v in &t.values {
            assert!((v[(0, 0)] - 1.0).abs() < 1e-14);
            assert_eq!(v[(0, 1)], 0.0);
            assert!((v[(2, 1)] - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn table_entries_are_substochastic_and_decrease_in_c() {
        let model = constant(vec![1.0, -1.0], &[-1.0, 1.0, 2.0, -2.0]);
        let a = laplace_passage_table(&model, 0.5, 0.5, Sign::Plus, &opts(0.01)).unwrap();
        let b = laplace_passage_table(&model, 1.0, 0.5, Sign::Plus, &opts(0.01)).unwrap();
        for x in &a.values {
            for i in 0..2 {
                assert!(x.row(i).sum() <= 1.0 + 1e-12);
                assert!(x[(i, 0)] >= 0.0);
            }
        }
        // compare at s = 0 only: the reporting ranges differ with c
        assert!(a.values[0][(1, 0)] >= b.values[0][(1, 0)]);
        assert!(a.values[0][(0, 0)] >= b.values[0][(0, 0)]);
    }

    #[test]
    fn time_varying_family_rejected() {
        use crate::model::{FamilyKind, FourierTerm};
        let q = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]);
        let model = FluidModel::new(
            StateSpace::from_rates(vec![1.0, -1.0]).unwrap(),
            GeneratorFamily::new(
                FamilyKind::FourierPolynomial {
                    base: q.clone(),
                    fourier: vec![FourierTerm {
                        coefficient: q * 0.5,
                        frequency: 1.0,
                        phase: 0.0,
                    }],
                    polynomial: vec![],
                },
                1.5,
            )
            .unwrap(),
        )
        .unwrap();
        assert!(matches!(
            homog_crosscheck(&model, 1.0, 1.0, Sign::Plus, &opts(0.01), None),
            Err(QueryError::NotConstantFamily)
        ));
    }
}
