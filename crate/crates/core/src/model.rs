//! Fluid model: finite state space with signed rates and a time-dependent
//! generator family `s ↦ Λ_s`.
//!
//! The state space is split by the sign of the rate into an up class
//! (`v > 0`) and a down class (`v < 0`). Block decompositions always order
//! the up class first, preserving the original index order inside each class.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use thiserror::Error;

/// Row sums smaller than this are folded back onto the diagonal.
pub const ROW_SUM_RENORM_TOL: f64 = 1e-12;

/// Default time resolution used by [`validate_model`].
pub const DEFAULT_CHECK_RESOLUTION: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid rates: {0}")]
    InvalidRates(String),
    #[error("invalid generator at s = {s}: {reason}")]
    InvalidGenerator { s: f64, reason: String },
    #[error("dimension mismatch: expected {expected}x{expected}, got {rows}x{cols}")]
    DimensionMismatch {
        expected: usize,
        rows: usize,
        cols: usize,
    },
    #[error("invalid family parameters: {0}")]
    InvalidFamily(String),
}

/// Direction of a passage: up-crossings (`Plus`) or down-crossings (`Minus`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn factor(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub fn flip(self) -> Sign {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sign::Plus => f.write_str("plus"),
            Sign::Minus => f.write_str("minus"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    labels: Vec<String>,
    rates: Vec<f64>,
    plus: Vec<usize>,
    minus: Vec<usize>,
}

impl StateSpace {
    pub fn new<S: Into<String>>(
        labels: impl IntoIterator<Item = S>,
        rates: Vec<f64>,
    ) -> Result<Self, ModelError> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.len() != rates.len() {
            return Err(ModelError::InvalidRates(format!(
                "{} labels but {} rates",
                labels.len(),
                rates.len()
            )));
        }
        if rates.len() < 2 {
            return Err(ModelError::InvalidRates(
                "at least two states are required".into(),
            ));
        }
        let mut plus = Vec::new();
        let mut minus = Vec::new();
        for (i, &v) in rates.iter().enumerate() {
            if !v.is_finite() || v == 0.0 {
                return Err(ModelError::InvalidRates(format!(
                    "state {} has rate {v}",
                    labels[i]
                )));
            }
            if v > 0.0 {
                plus.push(i);
            } else {
                minus.push(i);
            }
        }
        if plus.is_empty() || minus.is_empty() {
            return Err(ModelError::InvalidRates(
                "both sign classes must be non-empty".into(),
            ));
        }
        Ok(Self {
            labels,
            rates,
            plus,
            minus,
        })
    }

    /// Unlabelled convenience constructor; states are named `0, 1, ...`.
    pub fn from_rates(rates: Vec<f64>) -> Result<Self, ModelError> {
        let labels: Vec<String> = (0..rates.len()).map(|i| i.to_string()).collect();
        Self::new(labels, rates)
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn rate(&self, i: usize) -> f64 {
        self.rates[i]
    }

    pub fn plus(&self) -> &[usize] {
        &self.plus
    }

    pub fn minus(&self) -> &[usize] {
        &self.minus
    }

    /// States whose rate has the given sign.
    pub fn class(&self, sign: Sign) -> &[usize] {
        match sign {
            Sign::Plus => &self.plus,
            Sign::Minus => &self.minus,
        }
    }

    pub fn sign_of(&self, i: usize) -> Sign {
        if self.rates[i] > 0.0 {
            Sign::Plus
        } else {
            Sign::Minus
        }
    }

    pub fn v_max(&self) -> f64 {
        self.rates.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn v_min(&self) -> f64 {
        self.rates.iter().fold(f64::INFINITY, |acc, v| acc.min(v.abs()))
    }

    /// Permutation putting the up class first: `ordering()[k]` is the
    /// original index of the state at block position `k`.
    pub fn ordering(&self) -> Vec<usize> {
        self.plus.iter().chain(self.minus.iter()).copied().collect()
    }

    /// The same states with every rate negated; up and down classes swap.
    pub fn mirrored(&self) -> StateSpace {
        StateSpace {
            labels: self.labels.clone(),
            rates: self.rates.iter().map(|v| -v).collect(),
            plus: self.minus.clone(),
            minus: self.plus.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FourierTerm {
    pub coefficient: DMatrix<f64>,
    pub frequency: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialTerm {
    pub coefficient: DMatrix<f64>,
    pub degree: u32,
}

pub type GeneratorFn = Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>;

#[derive(Clone)]
pub enum FamilyKind {
    Constant(DMatrix<f64>),
    /// Right-continuous pieces; `starts[0] == 0` and `starts` is increasing.
    PiecewiseConstant {
        starts: Vec<f64>,
        matrices: Vec<DMatrix<f64>>,
    },
    /// `Λ_s = base + Σ sin(ω s + φ)·F_k + Σ s^d·P_k`.
    FourierPolynomial {
        base: DMatrix<f64>,
        fourier: Vec<FourierTerm>,
        polynomial: Vec<PolynomialTerm>,
    },
    /// Library-only callback family.
    Custom { dim: usize, eval: GeneratorFn },
}

impl fmt::Debug for FamilyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FamilyKind::Constant(m) => f.debug_tuple("Constant").field(m).finish(),
            FamilyKind::PiecewiseConstant { starts, matrices } => f
                .debug_struct("PiecewiseConstant")
                .field("starts", starts)
                .field("matrices", matrices)
                .finish(),
            FamilyKind::FourierPolynomial {
                base,
                fourier,
                polynomial,
            } => f
                .debug_struct("FourierPolynomial")
                .field("base", base)
                .field("fourier", fourier)
                .field("polynomial", polynomial)
                .finish(),
            FamilyKind::Custom { dim, .. } => {
                f.debug_struct("Custom").field("dim", dim).finish_non_exhaustive()
            }
        }
    }
}

/// A family of generator matrices together with its declared entry bound `K`.
#[derive(Debug, Clone)]
pub struct GeneratorFamily {
    kind: FamilyKind,
    bound_k: f64,
}

impl GeneratorFamily {
    pub fn new(kind: FamilyKind, bound_k: f64) -> Result<Self, ModelError> {
        if !(bound_k.is_finite() && bound_k >= 0.0) {
            return Err(ModelError::InvalidFamily(format!("bound_K = {bound_k}")));
        }
        let dim = match &kind {
            FamilyKind::Constant(m) => square_dim(m)?,
            FamilyKind::PiecewiseConstant { starts, matrices } => {
                if starts.is_empty() || starts.len() != matrices.len() {
                    return Err(ModelError::InvalidFamily(
                        "piecewise family needs one matrix per breakpoint".into(),
                    ));
                }
                if starts[0] != 0.0 {
                    return Err(ModelError::InvalidFamily(
                        "first breakpoint must be 0".into(),
                    ));
                }
                if starts.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(ModelError::InvalidFamily(
                        "breakpoints must be strictly increasing".into(),
                    ));
                }
                let d = square_dim(&matrices[0])?;
                for m in matrices {
                    expect_dim(m, d)?;
                }
                d
            }
            FamilyKind::FourierPolynomial {
                base,
                fourier,
                polynomial,
            } => {
                let d = square_dim(base)?;
                for t in fourier {
                    expect_dim(&t.coefficient, d)?;
                }
                for t in polynomial {
                    expect_dim(&t.coefficient, d)?;
                }
                d
            }
            FamilyKind::Custom { dim, .. } => *dim,
        };
        if dim < 2 {
            return Err(ModelError::InvalidFamily("need at least two states".into()));
        }
        Ok(Self { kind, bound_k })
    }

    pub fn constant(matrix: DMatrix<f64>, bound_k: f64) -> Result<Self, ModelError> {
        Self::new(FamilyKind::Constant(matrix), bound_k)
    }

    /// Constant family whose bound is the largest absolute entry.
    pub fn constant_auto(matrix: DMatrix<f64>) -> Result<Self, ModelError> {
        let k = matrix.amax();
        Self::constant(matrix, k)
    }

    pub fn kind(&self) -> &FamilyKind {
        &self.kind
    }

    pub fn bound_k(&self) -> f64 {
        self.bound_k
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            FamilyKind::Constant(m) => m.nrows(),
            FamilyKind::PiecewiseConstant { matrices, .. } => matrices[0].nrows(),
            FamilyKind::FourierPolynomial { base, .. } => base.nrows(),
            FamilyKind::Custom { dim, .. } => *dim,
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.kind, FamilyKind::Constant(_))
    }

    /// Piecewise-constant families violate continuity in `s`; reports flag them.
    pub fn is_assumption_relaxed(&self) -> bool {
        matches!(self.kind, FamilyKind::PiecewiseConstant { .. })
    }

    fn raw(&self, s: f64) -> DMatrix<f64> {
        match &self.kind {
            FamilyKind::Constant(m) => m.clone(),
            FamilyKind::PiecewiseConstant { starts, matrices } => {
                matrices[piece_index(starts, s)].clone()
            }
            FamilyKind::FourierPolynomial {
                base,
                fourier,
                polynomial,
            } => {
                let mut out = base.clone();
                for t in fourier {
                    out += &t.coefficient * (t.frequency * s + t.phase).sin();
                }
                for t in polynomial {
                    out += &t.coefficient * s.powi(t.degree as i32);
                }
                out
            }
            FamilyKind::Custom { eval, .. } => eval(s),
        }
    }

    /// Evaluates `Λ_s`. Row sums below [`ROW_SUM_RENORM_TOL`] are folded onto
    /// the diagonal; larger deviations are left for validation to report.
    pub fn eval(&self, s: f64) -> DMatrix<f64> {
        let mut m = self.raw(s);
        renormalize_rows(&mut m);
        m
    }

    /// `−Λ_s(i,i)`, without building the whole matrix where possible.
    pub fn exit_rate(&self, s: f64, i: usize) -> f64 {
        match &self.kind {
            FamilyKind::Constant(m) => -m[(i, i)],
            FamilyKind::PiecewiseConstant { starts, matrices } => {
                -matrices[piece_index(starts, s)][(i, i)]
            }
            FamilyKind::FourierPolynomial {
                base,
                fourier,
                polynomial,
            } => {
                let mut d = base[(i, i)];
                for t in fourier {
                    d += (t.frequency * s + t.phase).sin() * t.coefficient[(i, i)];
                }
                for t in polynomial {
                    d += s.powi(t.degree as i32) * t.coefficient[(i, i)];
                }
                -d
            }
            FamilyKind::Custom { .. } => -self.eval(s)[(i, i)],
        }
    }

    /// Closed-form `∫_{s0}^{s1} −Λ_u(i,i) du` when the family admits one.
    pub fn integrated_exit_rate(&self, i: usize, s0: f64, s1: f64) -> Option<f64> {
        match &self.kind {
            FamilyKind::Constant(m) => Some(-m[(i, i)] * (s1 - s0)),
            FamilyKind::PiecewiseConstant { starts, matrices } => {
                let mut total = 0.0;
                let mut k = piece_index(starts, s0);
                let mut a = s0;
                while a < s1 {
                    let end = starts.get(k + 1).copied().unwrap_or(f64::INFINITY).min(s1);
                    total += -matrices[k][(i, i)] * (end - a);
                    a = end;
                    k += 1;
                }
                Some(total)
            }
            FamilyKind::FourierPolynomial {
                base,
                fourier,
                polynomial,
            } => {
                let mut d = base[(i, i)] * (s1 - s0);
                for t in fourier {
                    let c = t.coefficient[(i, i)];
                    if c == 0.0 {
                        continue;
                    }
                    if t.frequency == 0.0 {
                        d += c * t.phase.sin() * (s1 - s0);
                    } else {
                        d += c
                            * ((t.frequency * s0 + t.phase).cos()
                                - (t.frequency * s1 + t.phase).cos())
                            / t.frequency;
                    }
                }
                for t in polynomial {
                    let c = t.coefficient[(i, i)];
                    let p = t.degree as i32 + 1;
                    d += c * (s1.powi(p) - s0.powi(p)) / p as f64;
                }
                Some(-d)
            }
            FamilyKind::Custom { .. } => None,
        }
    }

    /// Breakpoints of a piecewise family inside `(s0, s1)`.
    pub fn discontinuities(&self, s0: f64, s1: f64) -> Vec<f64> {
        match &self.kind {
            FamilyKind::PiecewiseConstant { starts, .. } => starts
                .iter()
                .copied()
                .filter(|&b| b > s0 && b < s1)
                .collect(),
            _ => Vec::new(),
        }
    }
}

fn square_dim(m: &DMatrix<f64>) -> Result<usize, ModelError> {
    if m.nrows() != m.ncols() {
        return Err(ModelError::DimensionMismatch {
            expected: m.nrows(),
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(m.nrows())
}

fn expect_dim(m: &DMatrix<f64>, d: usize) -> Result<(), ModelError> {
    if m.nrows() != d || m.ncols() != d {
        return Err(ModelError::DimensionMismatch {
            expected: d,
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(())
}

fn piece_index(starts: &[f64], s: f64) -> usize {
    // right-continuous: the last piece whose start is <= s
    starts.partition_point(|&b| b <= s).saturating_sub(1)
}

fn renormalize_rows(m: &mut DMatrix<f64>) {
    for i in 0..m.nrows() {
        let sum: f64 = m.row(i).sum();
        if sum != 0.0 && sum.abs() < ROW_SUM_RENORM_TOL {
            let off: f64 = (0..m.ncols()).filter(|&j| j != i).map(|j| m[(i, j)]).sum();
            m[(i, i)] = -off;
        }
    }
}

/// A validated fluid model.
#[derive(Debug, Clone)]
pub struct FluidModel {
    states: StateSpace,
    generator: GeneratorFamily,
}

impl FluidModel {
    pub fn new(states: StateSpace, generator: GeneratorFamily) -> Result<Self, ModelError> {
        if generator.dim() != states.len() {
            return Err(ModelError::DimensionMismatch {
                expected: states.len(),
                rows: generator.dim(),
                cols: generator.dim(),
            });
        }
        Ok(Self { states, generator })
    }

    /// Builds the model and runs [`validate_model`] over `[0, horizon]`.
    pub fn validated(
        states: StateSpace,
        generator: GeneratorFamily,
        horizon: f64,
        resolution: f64,
    ) -> Result<Self, ModelError> {
        let model = Self::new(states, generator)?;
        validate_model(&model.states, &model.generator, horizon, resolution)?.ensure_valid()?;
        Ok(model)
    }

    pub fn states(&self) -> &StateSpace {
        &self.states
    }

    pub fn generator(&self) -> &GeneratorFamily {
        &self.generator
    }

    pub fn m(&self) -> usize {
        self.states.len()
    }

    pub fn rate(&self, i: usize) -> f64 {
        self.states.rate(i)
    }

    pub fn eval(&self, s: f64) -> DMatrix<f64> {
        self.generator.eval(s)
    }

    pub fn bound_k(&self) -> f64 {
        self.generator.bound_k()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NegativeOffDiagonal { s: f64, i: usize, j: usize, value: f64 },
    RowSum { s: f64, i: usize, sum: f64 },
    BoundExceeded { s: f64, i: usize, j: usize, value: f64, bound: f64 },
    NonFinite { s: f64, i: usize, j: usize },
}

impl Violation {
    pub fn s(&self) -> f64 {
        match *self {
            Violation::NegativeOffDiagonal { s, .. }
            | Violation::RowSum { s, .. }
            | Violation::BoundExceeded { s, .. }
            | Violation::NonFinite { s, .. } => s,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NegativeOffDiagonal { s, i, j, value } => {
                write!(f, "negative off-diagonal Λ({i},{j}) = {value:e} at s = {s}")
            }
            Violation::RowSum { s, i, sum } => {
                write!(f, "row {i} sums to {sum:e} at s = {s}")
            }
            Violation::BoundExceeded {
                s,
                i,
                j,
                value,
                bound,
            } => write!(f, "|Λ({i},{j})| = {value} exceeds K = {bound} at s = {s}"),
            Violation::NonFinite { s, i, j } => write!(f, "Λ({i},{j}) not finite at s = {s}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub assumption_relaxed: bool,
    pub samples: usize,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn ensure_valid(&self) -> Result<(), ModelError> {
        match self.violations.first() {
            None => Ok(()),
            Some(v) => Err(ModelError::InvalidGenerator {
                s: v.s(),
                reason: v.to_string(),
            }),
        }
    }
}

/// Samples the family on `[0, horizon]` at the given resolution and reports
/// every structural violation. Rate problems are caught earlier by
/// [`StateSpace::new`].
pub fn validate_model(
    states: &StateSpace,
    family: &GeneratorFamily,
    horizon: f64,
    resolution: f64,
) -> Result<ValidationReport, ModelError> {
    if !(resolution > 0.0) {
        return Err(ModelError::InvalidFamily(format!(
            "check resolution must be positive, got {resolution}"
        )));
    }
    if family.dim() != states.len() {
        return Err(ModelError::DimensionMismatch {
            expected: states.len(),
            rows: family.dim(),
            cols: family.dim(),
        });
    }
    let n = (horizon.max(0.0) / resolution).ceil() as usize;
    let mut times: Vec<f64> = (0..=n).map(|k| (k as f64 * resolution).min(horizon.max(0.0))).collect();
    // sample both sides of every breakpoint
    for b in family.discontinuities(0.0, horizon) {
        times.push(b);
    }
    let mut report = ValidationReport {
        violations: Vec::new(),
        assumption_relaxed: family.is_assumption_relaxed(),
        samples: times.len(),
    };
    let k = family.bound_k();
    let m = states.len();
    for &s in &times {
        let lam = family.eval(s);
        for i in 0..m {
            let mut sum = 0.0;
            for j in 0..m {
                let x = lam[(i, j)];
                if !x.is_finite() {
                    report.violations.push(Violation::NonFinite { s, i, j });
                    continue;
                }
                sum += x;
                if i != j && x < 0.0 {
                    report
                        .violations
                        .push(Violation::NegativeOffDiagonal { s, i, j, value: x });
                }
                if x.abs() > k * (1.0 + 1e-12) {
                    report.violations.push(Violation::BoundExceeded {
                        s,
                        i,
                        j,
                        value: x.abs(),
                        bound: k,
                    });
                }
            }
            if sum.abs() > ROW_SUM_RENORM_TOL {
                report.violations.push(Violation::RowSum { s, i, sum });
            }
        }
    }
    Ok(report)
}

pub fn eval_generator(family: &GeneratorFamily, s: f64) -> DMatrix<f64> {
    family.eval(s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockDecomposition {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl BlockDecomposition {
    /// Inverse of [`block_decompose`], returning the matrix in the original
    /// state order.
    pub fn reassemble(&self, states: &StateSpace) -> DMatrix<f64> {
        let m = states.len();
        let (p, q) = (states.plus(), states.minus());
        let mut out = DMatrix::zeros(m, m);
        for (r, &i) in p.iter().enumerate() {
            for (c, &j) in p.iter().enumerate() {
                out[(i, j)] = self.a[(r, c)];
            }
            for (c, &j) in q.iter().enumerate() {
                out[(i, j)] = self.b[(r, c)];
            }
        }
        for (r, &i) in q.iter().enumerate() {
            for (c, &j) in p.iter().enumerate() {
                out[(i, j)] = self.c[(r, c)];
            }
            for (c, &j) in q.iter().enumerate() {
                out[(i, j)] = self.d[(r, c)];
            }
        }
        out
    }
}

pub fn block_decompose(
    matrix: &DMatrix<f64>,
    states: &StateSpace,
) -> Result<BlockDecomposition, ModelError> {
    let m = states.len();
    if matrix.nrows() != m || matrix.ncols() != m {
        return Err(ModelError::DimensionMismatch {
            expected: m,
            rows: matrix.nrows(),
            cols: matrix.ncols(),
        });
    }
    let pick = |rows: &[usize], cols: &[usize]| {
        DMatrix::from_fn(rows.len(), cols.len(), |r, c| matrix[(rows[r], cols[c])])
    };
    let (p, q) = (states.plus(), states.minus());
    Ok(BlockDecomposition {
        a: pick(p, p),
        b: pick(p, q),
        c: pick(q, p),
        d: pick(q, q),
    })
}
