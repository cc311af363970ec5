//! Dense linear-algebra kernels used by the factorization: an ordered real
//! Schur form (stable block first), a Kronecker Sylvester solver and the
//! matrix exponential.

use nalgebra::linalg::Schur;
use nalgebra::DMatrix;

/// Real Schur form `A = Z T Zᵀ` with the selected eigenvalues in the leading
/// block.
#[derive(Debug, Clone)]
pub struct OrderedSchur {
    pub z: DMatrix<f64>,
    pub t: DMatrix<f64>,
    /// Number of leading columns of `z` spanning the selected invariant subspace.
    pub selected: usize,
    /// Eigenvalues (re, im) in the final diagonal order.
    pub eigenvalues: Vec<(f64, f64)>,
}

/// Diagonal block of a quasi-triangular matrix.
#[derive(Debug, Clone, Copy)]
struct Block {
    start: usize,
    size: usize,
}

fn blocks(t: &DMatrix<f64>) -> Vec<Block> {
    let n = t.nrows();
    let mut out = Vec::new();
    let mut k = 0;
    while k < n {
        if k + 1 < n && t[(k + 1, k)] != 0.0 {
            out.push(Block { start: k, size: 2 });
            k += 2;
        } else {
            out.push(Block { start: k, size: 1 });
            k += 1;
        }
    }
    out
}

fn block_eigenvalues(t: &DMatrix<f64>, b: Block) -> Vec<(f64, f64)> {
    let k = b.start;
    if b.size == 1 {
        return vec![(t[(k, k)], 0.0)];
    }
    let (a, bb, c, d) = (t[(k, k)], t[(k, k + 1)], t[(k + 1, k)], t[(k + 1, k + 1)]);
    let tr = 0.5 * (a + d);
    let disc = 0.25 * (a - d) * (a - d) + bb * c;
    if disc >= 0.0 {
        let r = disc.sqrt();
        vec![(tr + r, 0.0), (tr - r, 0.0)]
    } else {
        let r = (-disc).sqrt();
        vec![(tr, r), (tr, -r)]
    }
}

fn rotate_rows(t: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    for j in 0..t.ncols() {
        let (x, y) = (t[(p, j)], t[(q, j)]);
        t[(p, j)] = c * x + s * y;
        t[(q, j)] = -s * x + c * y;
    }
}

fn rotate_cols(t: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    for i in 0..t.nrows() {
        let (x, y) = (t[(i, p)], t[(i, q)]);
        t[(i, p)] = c * x + s * y;
        t[(i, q)] = -s * x + c * y;
    }
}

/// Cleans the raw Schur output: flushes negligible subdiagonals and splits
/// 2×2 blocks that carry a real eigenvalue pair.
fn standardize(t: &mut DMatrix<f64>, z: &mut DMatrix<f64>) {
    let n = t.nrows();
    for i in 0..n {
        for j in 0..i.saturating_sub(1) {
            t[(i, j)] = 0.0;
        }
    }
    for k in 0..n.saturating_sub(1) {
        let scale = t[(k, k)].abs() + t[(k + 1, k + 1)].abs();
        if t[(k + 1, k)].abs() <= 4.0 * f64::EPSILON * scale.max(f64::MIN_POSITIVE) {
            t[(k + 1, k)] = 0.0;
        }
    }
    let mut k = 0;
    while k + 1 < n {
        if t[(k + 1, k)] == 0.0 {
            k += 1;
            continue;
        }
        if k + 2 < n && t[(k + 2, k + 1)] != 0.0 {
            // malformed chain of subdiagonals; leave to the caller's residual checks
            k += 1;
            continue;
        }
        let (a, b, c, d) = (t[(k, k)], t[(k, k + 1)], t[(k + 1, k)], t[(k + 1, k + 1)]);
        let disc = 0.25 * (a - d) * (a - d) + b * c;
        if disc >= 0.0 {
            let lambda = 0.5 * (a + d) + disc.sqrt().copysign(0.5 * (a - d) + f64::MIN_POSITIVE);
            // eigenvector of the 2×2 block for `lambda`
            let (x, y) = if (lambda - d).hypot(c) >= b.hypot(lambda - a) {
                (lambda - d, c)
            } else {
                (b, lambda - a)
            };
            let r = x.hypot(y);
            let (cs, sn) = (x / r, y / r);
            rotate_rows(t, k, k + 1, cs, sn);
            rotate_cols(t, k, k + 1, cs, sn);
            rotate_cols(z, k, k + 1, cs, sn);
            t[(k + 1, k)] = 0.0;
        }
        k += 2;
    }
}

/// Solves `A X + X B = C` for small dense matrices via the Kronecker form.
pub fn solve_sylvester(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
) -> Option<DMatrix<f64>> {
    let (p, q) = (a.nrows(), b.nrows());
    let n = p * q;
    // vec(AX + XB) = (I_q ⊗ A + Bᵀ ⊗ I_p) vec(X), column-major vec
    let mut k = DMatrix::<f64>::zeros(n, n);
    for col in 0..q {
        for i in 0..p {
            for j in 0..p {
                k[(col * p + i, col * p + j)] += a[(i, j)];
            }
        }
    }
    for r in 0..q {
        for s in 0..q {
            let v = b[(s, r)];
            if v != 0.0 {
                for i in 0..p {
                    k[(r * p + i, s * p + i)] += v;
                }
            }
        }
    }
    let rhs = nalgebra::DVector::from_column_slice(c.as_slice());
    let x = k.lu().solve(&rhs)?;
    if x.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some(DMatrix::from_column_slice(p, q, x.as_slice()))
}

/// Swaps the adjacent diagonal blocks starting at `j` (sizes `p` then `q`).
fn swap_blocks(t: &mut DMatrix<f64>, z: &mut DMatrix<f64>, j: usize, p: usize, q: usize) -> bool {
    let n = p + q;
    let a11 = t.view((j, j), (p, p)).into_owned();
    let a12 = t.view((j, j + p), (p, q)).into_owned();
    let a22 = t.view((j + p, j + p), (q, q)).into_owned();
    // A11 X − X A22 = −A12, so [X; I] spans the A22-invariant subspace
    let Some(x) = solve_sylvester(&a11, &(-&a22), &(-a12)) else {
        return false;
    };
    let mut basis = DMatrix::<f64>::zeros(n, q);
    basis.view_mut((0, 0), (p, q)).copy_from(&x);
    for k in 0..q {
        basis[(p + k, k)] = 1.0;
    }
    // full orthogonal factor of the basis
    let mut full = DMatrix::<f64>::zeros(n, n);
    full.view_mut((0, 0), (n, q)).copy_from(&basis);
    for k in q..n {
        full[(k - q, k)] = 1.0;
    }
    let qr = full.qr();
    let w = qr.q();
    let rows = t.view((j, 0), (n, t.ncols())).into_owned();
    t.view_mut((j, 0), (n, t.ncols())).copy_from(&(w.transpose() * rows));
    let cols = t.view((0, j), (t.nrows(), n)).into_owned();
    t.view_mut((0, j), (t.nrows(), n)).copy_from(&(cols * &w));
    let zc = z.view((0, j), (z.nrows(), n)).into_owned();
    z.view_mut((0, j), (z.nrows(), n)).copy_from(&(zc * &w));
    for r in q..n {
        for c in 0..q {
            t[(j + r, j + c)] = 0.0;
        }
    }
    true
}

/// Computes a real Schur form of `a` and moves every eigenvalue accepted by
/// `select` to the leading block. Conjugate pairs move together.
pub fn ordered_schur<F>(a: &DMatrix<f64>, select: F) -> Option<OrderedSchur>
where
    F: Fn(f64, f64) -> bool,
{
    let (mut z, mut t) = Schur::try_new(a.clone(), f64::EPSILON, 10_000)?.unpack();
    standardize(&mut t, &mut z);
    let mut placed = 0usize;
    loop {
        let next = blocks(&t).into_iter().find(|b| {
            b.start >= placed && {
                let ev = block_eigenvalues(&t, *b);
                select(ev[0].0, ev[0].1)
            }
        });
        let Some(block) = next else { break };
        let mut pos = block.start;
        while pos > placed {
            let prev = blocks(&t).into_iter().find(|b| b.start + b.size == pos)?;
            if !swap_blocks(&mut t, &mut z, prev.start, prev.size, block.size) {
                return None;
            }
            pos = prev.start;
        }
        placed += block.size;
    }
    let bl = blocks(&t);
    let eigenvalues = bl.iter().flat_map(|b| block_eigenvalues(&t, *b)).collect();
    Some(OrderedSchur {
        z,
        t,
        selected: placed,
        eigenvalues,
    })
}

/// 2-norm condition number from the singular values.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Matrix exponential (scaling and squaring with a Padé approximant).
pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_schur(a: &DMatrix<f64>, os: &OrderedSchur) {
        let recon = &os.z * &os.t * os.z.transpose();
        assert!((recon - a).amax() < 1e-10 * (1.0 + a.amax()));
        let orth = os.z.transpose() * &os.z - DMatrix::identity(a.nrows(), a.nrows());
        assert!(orth.amax() < 1e-12);
    }

    #[test]
    fn stable_eigenvalues_move_to_front() {
        let a = DMatrix::from_row_slice(
            4,
            4,
            &[
                3.0, 1.0, 0.2, 0.0, //
                0.0, -1.0, 2.0, 0.5, //
                0.4, 0.0, 2.0, -1.0, //
                0.1, 0.3, 0.0, -4.0,
            ],
        );
        let os = ordered_schur(&a, |re, _| re < 0.0).unwrap();
        check_schur(&a, &os);
        let neg = os.eigenvalues.iter().filter(|e| e.0 < 0.0).count();
        assert_eq!(os.selected, neg);
        for (k, e) in os.eigenvalues.iter().enumerate() {
            assert_eq!(k < os.selected, e.0 < 0.0, "{:?}", os.eigenvalues);
        }
    }

    #[test]
    fn complex_pairs_stay_together() {
        // rotation block with eigenvalues -1 ± 2i plus two unstable reals
        let a = DMatrix::from_row_slice(
            4,
            4,
            &[
                2.0, 0.3, 0.1, 0.2, //
                0.0, 1.0, 0.5, 0.0, //
                0.0, 0.0, -1.0, 2.0, //
                0.0, 0.0, -2.0, -1.0,
            ],
        );
        let q = DMatrix::from_fn(4, 4, |i, j| ((i + 2 * j) as f64).sin());
        let q = q.qr().q();
        let b = &q * &a * q.transpose();
        let os = ordered_schur(&b, |re, _| re < 0.0).unwrap();
        check_schur(&b, &os);
        assert_eq!(os.selected, 2);
        assert!(os.eigenvalues[0].1.abs() > 1.0);
        assert!((os.eigenvalues[0].0 + 1.0).abs() < 1e-10);
    }

    #[test]
    fn sylvester_matches_definition() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 3.0]);
        let b = DMatrix::from_row_slice(3, 3, &[4.0, 0.0, 1.0, 0.5, 5.0, 0.0, 0.0, 0.0, 6.0]);
        let c = DMatrix::from_fn(2, 3, |i, j| (i * 3 + j) as f64 - 1.5);
        let x = solve_sylvester(&a, &b, &c).unwrap();
        assert!((&a * &x + &x * &b - c).amax() < 1e-12);
    }

    #[test]
    fn scalar_exponential() {
        let e = expm(&DMatrix::from_element(1, 1, -3f64.sqrt()));
        assert!((e[(0, 0)] - (-3f64.sqrt()).exp()).abs() < 1e-15);
    }
}
