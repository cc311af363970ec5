//! Time-homogeneous Wiener–Hopf factorization.
//!
//! For a constant generator `Λ`, rates `V` and kill rate `c > 0`, finds the
//! unique `Π±`, `Q±` with
//!
//! ```text
//! V⁻¹(Λ − cI) S = S diag(Q+, −Q−),   S = [[I, Π−], [Π+, I]]
//! ```
//!
//! in up-first block order. `Π+` is read off the stable invariant subspace
//! of `M = V⁻¹(Λ − cI)` (ordered real Schur form), then polished by Newton
//! iteration on its Riccati equation. The down side reuses the same code on
//! the mirrored model (`v → −v`, classes swapped).

use nalgebra::DMatrix;
use thiserror::Error;

use crate::linalg::{condition_number, expm, ordered_schur, solve_sylvester};
use crate::model::{block_decompose, ModelError, Sign, StateSpace};

/// Eigenvalues closer than this to the imaginary axis make the split ambiguous.
pub const IMAGINARY_AXIS_GAP: f64 = 1e-10;
pub const MAX_SUBSPACE_CONDITION: f64 = 1e12;
pub const NEWTON_TOL: f64 = 1e-13;
pub const NEWTON_MAX_ITER: usize = 50;
/// Largest factorization residual accepted after refinement.
pub const RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HomogError {
    #[error("kill rate must be positive and finite, got {0}")]
    InvalidKillRate(f64),
    #[error("level must be nonnegative, got {0}")]
    InvalidLevel(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("spectral split failed: {0}")]
    SpectralSplitError(String),
    #[error("invariant subspace basis is singular (condition number {0:e})")]
    SubspaceDefect(f64),
    #[error("Newton refinement stalled at residual {0:e}")]
    NoConvergence(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomogFactorization {
    pub c: f64,
    /// `m− × m+`: discounted law of the up-crossing of level 0 from the down class.
    pub pi_plus: DMatrix<f64>,
    /// `m+ × m−`.
    pub pi_minus: DMatrix<f64>,
    pub q_plus: DMatrix<f64>,
    pub q_minus: DMatrix<f64>,
    pub residual: f64,
}

/// Blocks of `Λ − cI` and the rate vectors for one side of the problem.
struct Side {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
    v_up: Vec<f64>,
    v_down: Vec<f64>,
}

impl Side {
    fn scale_rows(m: &DMatrix<f64>, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] / v[i])
    }

    fn mirrored(&self) -> Side {
        Side {
            a: self.d.clone(),
            b: self.c.clone(),
            c: self.b.clone(),
            d: self.a.clone(),
            v_up: self.v_down.iter().map(|v| -v).collect(),
            v_down: self.v_up.iter().map(|v| -v).collect(),
        }
    }

    fn q_of(&self, pi: &DMatrix<f64>) -> DMatrix<f64> {
        Self::scale_rows(&(&self.a + &self.b * pi), &self.v_up)
    }

    fn riccati(&self, pi: &DMatrix<f64>) -> DMatrix<f64> {
        let q = self.q_of(pi);
        pi * q - Self::scale_rows(&(&self.c + &self.d * pi), &self.v_down)
    }

    fn generator(&self) -> DMatrix<f64> {
        let (p, q) = (self.v_up.len(), self.v_down.len());
        let mut m = DMatrix::zeros(p + q, p + q);
        m.view_mut((0, 0), (p, p)).copy_from(&Self::scale_rows(&self.a, &self.v_up));
        m.view_mut((0, p), (p, q)).copy_from(&Self::scale_rows(&self.b, &self.v_up));
        m.view_mut((p, 0), (q, p)).copy_from(&Self::scale_rows(&self.c, &self.v_down));
        m.view_mut((p, p), (q, q)).copy_from(&Self::scale_rows(&self.d, &self.v_down));
        m
    }

    /// Stable-subspace solution of the up-side Riccati equation.
    fn solve(&self) -> Result<DMatrix<f64>, HomogError> {
        let (p, q) = (self.v_up.len(), self.v_down.len());
        let m = self.generator();
        let eig: Vec<(f64, f64)> = m
            .complex_eigenvalues()
            .iter()
            .map(|z| (z.re, z.im))
            .collect();
        if let Some(z) = eig.iter().find(|z| z.0.abs() < IMAGINARY_AXIS_GAP) {
            return Err(HomogError::SpectralSplitError(format!(
                "eigenvalue {} {:+}i lies on the imaginary axis",
                z.0, z.1
            )));
        }
        let stable = eig.iter().filter(|z| z.0 < 0.0).count();
        if stable != p {
            return Err(HomogError::SpectralSplitError(format!(
                "{stable} stable eigenvalues, expected {p}"
            )));
        }
        let schur = ordered_schur(&m, |re, _| re < 0.0).ok_or_else(|| {
            HomogError::SpectralSplitError("Schur reordering failed".to_string())
        })?;
        if schur.selected != p {
            return Err(HomogError::SpectralSplitError(format!(
                "reordered Schur form has {} stable eigenvalues, expected {p}",
                schur.selected
            )));
        }
        let w1 = schur.z.view((0, 0), (p, p)).into_owned();
        let w2 = schur.z.view((p, 0), (q, p)).into_owned();
        let cond = condition_number(&w1);
        if !(cond <= MAX_SUBSPACE_CONDITION) {
            return Err(HomogError::SubspaceDefect(cond));
        }
        // Π = W2 W1⁻¹, i.e. W1ᵀ Πᵀ = W2ᵀ
        let pi_t = w1
            .transpose()
            .lu()
            .solve(&w2.transpose())
            .ok_or(HomogError::SubspaceDefect(f64::INFINITY))?;
        Ok(self.refine(pi_t.transpose()))
    }

    /// Newton iteration on `R(Π) = Π Q(Π) − V−⁻¹(C + DΠ)`.
    fn refine(&self, mut pi: DMatrix<f64>) -> DMatrix<f64> {
        let dd = Self::scale_rows(&self.d, &self.v_down);
        let bb = Self::scale_rows(&self.b, &self.v_up);
        let mut r = self.riccati(&pi);
        let mut norm = r.amax();
        for _ in 0..NEWTON_MAX_ITER {
            if norm <= NEWTON_TOL {
                break;
            }
            // R(Π + Δ) ≈ R(Π) + (Π V+⁻¹B − V−⁻¹D) Δ + Δ Q(Π)
            let lhs = &pi * &bb - &dd;
            let Some(delta) = solve_sylvester(&lhs, &self.q_of(&pi), &(-&r)) else {
                break;
            };
            let next = &pi + delta;
            let r_next = self.riccati(&next);
            let n_next = r_next.amax();
            if !(n_next < norm) {
                break;
            }
            pi = next;
            r = r_next;
            norm = n_next;
        }
        pi
    }
}

/// Maximum entry of `V⁻¹(Λ − cI) S − S diag(Q+, −Q−)`.
fn residual_blocks(side: &Side, f: &HomogFactorization) -> f64 {
    let (p, q) = (side.v_up.len(), side.v_down.len());
    let m = side.generator();
    let mut s = DMatrix::identity(p + q, p + q);
    s.view_mut((p, 0), (q, p)).copy_from(&f.pi_plus);
    s.view_mut((0, p), (p, q)).copy_from(&f.pi_minus);
    let mut h = DMatrix::zeros(p + q, p + q);
    h.view_mut((0, 0), (p, p)).copy_from(&f.q_plus);
    h.view_mut((p, p), (q, q)).copy_from(&(-&f.q_minus));
    (m * &s - s * h).amax()
}

fn side_of(lambda: &DMatrix<f64>, states: &StateSpace, c: f64) -> Result<Side, HomogError> {
    let blocks = block_decompose(lambda, states)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| states.rate(i)).collect::<Vec<_>>();
    let (p, q) = (states.plus().len(), states.minus().len());
    Ok(Side {
        a: blocks.a - DMatrix::identity(p, p) * c,
        b: blocks.b,
        c: blocks.c,
        d: blocks.d - DMatrix::identity(q, q) * c,
        v_up: pick(states.plus()),
        v_down: pick(states.minus()),
    })
}

fn check_generator(lambda: &DMatrix<f64>) -> Result<(), HomogError> {
    let scale = 1.0 + lambda.amax();
    for i in 0..lambda.nrows() {
        let mut sum = 0.0;
        for j in 0..lambda.ncols() {
            let x = lambda[(i, j)];
            if !x.is_finite() || (i != j && x < 0.0) {
                return Err(ModelError::InvalidGenerator {
                    s: 0.0,
                    reason: format!("entry ({i},{j}) = {x}"),
                }
                .into());
            }
            sum += x;
        }
        if sum.abs() > 1e-12 * scale {
            return Err(ModelError::InvalidGenerator {
                s: 0.0,
                reason: format!("row {i} sums to {sum:e}"),
            }
            .into());
        }
    }
    Ok(())
}

pub fn factorize(
    lambda: &DMatrix<f64>,
    states: &StateSpace,
    c: f64,
) -> Result<HomogFactorization, HomogError> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(HomogError::InvalidKillRate(c));
    }
    let side = side_of(lambda, states, c)?;
    check_generator(lambda)?;
    let mirror = side.mirrored();
    let pi_plus = side.solve()?;
    let pi_minus = mirror.solve()?;
    let q_plus = side.q_of(&pi_plus);
    let q_minus = mirror.q_of(&pi_minus);
    let mut f = HomogFactorization {
        c,
        pi_plus,
        pi_minus,
        q_plus,
        q_minus,
        residual: 0.0,
    };
    f.residual = residual_blocks(&side, &f);
    if !(f.residual <= RESIDUAL_TOL) {
        return Err(HomogError::NoConvergence(f.residual));
    }
    Ok(f)
}

pub fn factorization_residual(
    fact: &HomogFactorization,
    lambda: &DMatrix<f64>,
    states: &StateSpace,
) -> Result<f64, HomogError> {
    let side = side_of(lambda, states, fact.c)?;
    Ok(residual_blocks(&side, fact))
}

/// Discounted passage matrix over level `ℓ` in direction `sign`, started
/// from the class `from`. Rows index `from`, columns the crossing class.
pub fn homog_passage_matrix(
    fact: &HomogFactorization,
    level: f64,
    sign: Sign,
    from: Sign,
) -> Result<DMatrix<f64>, HomogError> {
    if !(level >= 0.0 && level.is_finite()) {
        return Err(HomogError::InvalidLevel(level));
    }
    let (pi, q) = match sign {
        Sign::Plus => (&fact.pi_plus, &fact.q_plus),
        Sign::Minus => (&fact.pi_minus, &fact.q_minus),
    };
    let e = expm(&(q * level));
    Ok(if from == sign { e } else { pi * e })
}
