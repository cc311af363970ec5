//! Transition matrices `U_{s,t}` of the time-inhomogeneous chain.
//!
//! Solves the forward equation `dU_{s,u}/du = U_{s,u} Λ_u`, `U_{s,s} = I`
//! with fixed-step classical Runge–Kutta. The final step is shortened to land
//! exactly on `t`.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::model::FluidModel;

/// Tolerance on entries and row sums of a computed transition matrix.
pub const PROBABILITY_TOL: f64 = 1e-10;
/// Row-sum drift beyond this is reported instead of renormalized.
pub const MAX_ROW_DRIFT: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvolutionError {
    #[error("invalid interval: need 0 <= s <= t, got s = {s}, t = {t}")]
    InvalidInterval { s: f64, t: f64 },
    #[error("step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("row {row} drifted by {drift:e} over [{s}, {t}]; step too coarse or generator invalid")]
    IntegrationError { s: f64, t: f64, row: usize, drift: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionMatrix {
    pub s: f64,
    pub t: f64,
    pub p: DMatrix<f64>,
}

fn rk4_step(model: &FluidModel, u: &DMatrix<f64>, x: f64, h: f64) -> DMatrix<f64> {
    let l0 = model.eval(x);
    let lh = model.eval(x + 0.5 * h);
    let l1 = model.eval(x + h);
    let k1 = u * &l0;
    let k2 = (u + &k1 * (0.5 * h)) * &lh;
    let k3 = (u + &k2 * (0.5 * h)) * &lh;
    let k4 = (u + &k3 * h) * &l1;
    u + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Unprojected RK4 solution; used by the residual diagnostics as well.
fn integrate(model: &FluidModel, s: f64, t: f64, step: f64) -> DMatrix<f64> {
    let m = model.m();
    let mut u = DMatrix::identity(m, m);
    let n_full = ((t - s) / step).floor() as usize;
    for k in 0..n_full {
        u = rk4_step(model, &u, s + k as f64 * step, step);
    }
    let x = s + n_full as f64 * step;
    let rest = t - x;
    if rest > step * 1e-12 {
        u = rk4_step(model, &u, x, rest);
    }
    u
}

pub fn evolution_matrix(
    model: &FluidModel,
    s: f64,
    t: f64,
    step: f64,
) -> Result<EvolutionMatrix, EvolutionError> {
    if !(s >= 0.0 && t >= s) {
        return Err(EvolutionError::InvalidInterval { s, t });
    }
    if !(step > 0.0) {
        return Err(EvolutionError::InvalidStep(step));
    }
    let mut p = integrate(model, s, t, step);
    let m = model.m();
    for i in 0..m {
        let drift = p.row(i).sum() - 1.0;
        if drift.abs() > MAX_ROW_DRIFT {
            return Err(EvolutionError::IntegrationError {
                s,
                t,
                row: i,
                drift,
            });
        }
        for j in 0..m {
            p[(i, j)] = p[(i, j)].clamp(0.0, 1.0);
        }
        let sum = p.row(i).sum();
        if sum > 0.0 {
            p.row_mut(i).scale_mut(1.0 / sum);
        }
    }
    Ok(EvolutionMatrix { s, t, p })
}

/// Max-norm of `U_{s,t} − U_{s,r} U_{r,t}`.
pub fn chapman_kolmogorov_residual(
    model: &FluidModel,
    s: f64,
    r: f64,
    t: f64,
    step: f64,
) -> Result<f64, EvolutionError> {
    if !(s <= r && r <= t) {
        return Err(EvolutionError::InvalidInterval { s, t });
    }
    let whole = evolution_matrix(model, s, t, step)?;
    let left = evolution_matrix(model, s, r, step)?;
    let right = evolution_matrix(model, r, t, step)?;
    Ok((whole.p - left.p * right.p).amax())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FamilyKind, FourierTerm, GeneratorFamily, StateSpace};

    fn constant(m: &[f64]) -> FluidModel {
        FluidModel::new(
            StateSpace::from_rates(vec![1.0, -1.0]).unwrap(),
            GeneratorFamily::constant_auto(DMatrix::from_row_slice(2, 2, m)).unwrap(),
        )
        .unwrap()
    }

    fn sinusoidal() -> FluidModel {
        let q = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]);
        FluidModel::new(
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
        .unwrap()
    }

    #[test]
    fn zero_length_interval_is_identity() {
        let e = evolution_matrix(&sinusoidal(), 0.7, 0.7, 1e-2).unwrap();
        assert_eq!(e.p, DMatrix::identity(2, 2));
    }

    #[test]
    fn symmetric_two_state_closed_form() {
        let e = evolution_matrix(&constant(&[-1.0, 1.0, 1.0, -1.0]), 0.0, 1.0, 1e-3).unwrap();
        let d = (-2.0f64).exp();
        let stay = (1.0 + d) / 2.0;
        let go = (1.0 - d) / 2.0;
        assert!((e.p[(0, 0)] - stay).abs() < 1e-12);
        assert!((e.p[(0, 1)] - go).abs() < 1e-12);
        assert!((e.p[(1, 0)] - go).abs() < 1e-12);
        assert!((e.p[(1, 1)] - stay).abs() < 1e-12);
    }

    #[test]
    fn absorbing_chain_survival() {
        let model = constant(&[-1.0, 1.0, 0.0, 0.0]);
        for &l in &[0.5, 1.0, 2.0] {
            let e = evolution_matrix(&model, 0.3, 0.3 + l, 1e-3).unwrap();
            assert!((e.p[(0, 0)] - (-l).exp()).abs() < 1e-12);
            assert_eq!(e.p[(1, 1)], 1.0);
        }
    }

    #[test]
    fn chapman_kolmogorov_constant() {
        let model = constant(&[-1.0, 1.0, 1.0, -1.0]);
        let r = chapman_kolmogorov_residual(&model, 0.0, 0.37, 1.0, 1e-3).unwrap();
        assert!(r <= 1e-8, "{r}");
        assert_eq!(
            chapman_kolmogorov_residual(&model, 0.5, 0.5, 0.5, 1e-3).unwrap(),
            0.0
        );
    }

    #[test]
    fn chapman_kolmogorov_sinusoidal() {
        let r = chapman_kolmogorov_residual(&sinusoidal(), 0.0, 0.5, 1.0, 1e-3).unwrap();
        assert!(r <= 1e-6, "{r}");
    }

    #[test]
    fn fourth_order_convergence() {
        // r off the step lattice so the two sides take different paths
        let model = sinusoidal();
        let coarse = chapman_kolmogorov_residual(&model, 0.0, 1.0 / 3.0, 2.0, 0.2).unwrap();
        let fine = chapman_kolmogorov_residual(&model, 0.0, 1.0 / 3.0, 2.0, 0.1).unwrap();
        assert!(coarse / fine >= 8.0, "coarse {coarse:e} fine {fine:e}");
    }

    #[test]
    fn rows_are_stochastic() {
        let e = evolution_matrix(&sinusoidal(), 1.0, 6.0, 1e-2).unwrap();
        for i in 0..2 {
            assert!((e.p.row(i).sum() - 1.0).abs() < PROBABILITY_TOL);
            for j in 0..2 {
                assert!((0.0..=1.0).contains(&e.p[(i, j)]));
            }
        }
    }

    #[test]
    fn bad_arguments() {
        let m = sinusoidal();
        assert!(matches!(
            evolution_matrix(&m, 1.0, 0.5, 1e-2),
            Err(EvolutionError::InvalidInterval { .. })
        ));
        assert!(matches!(
            evolution_matrix(&m, 0.0, 0.5, 0.0),
            Err(EvolutionError::InvalidStep(_))
        ));
    }

    #[test]
    fn invalid_generator_is_detected() {
        let model = FluidModel::new(
            StateSpace::from_rates(vec![1.0, -1.0]).unwrap(),
            GeneratorFamily::constant(DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.0, 0.0]), 1.0)
                .unwrap(),
        )
        .unwrap();
        assert!(matches!(
            evolution_matrix(&model, 0.0, 1.0, 1e-2),
            Err(EvolutionError::IntegrationError { row: 0, .. })
        ));
    }
}
