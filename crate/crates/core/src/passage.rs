//! Generator-PDE solver for first-passage functionals of the
//! time-inhomogeneous fluid model.
//!
//! For boundary data `g` on the up class, the solver computes
//! `F(s, i, a) = E_{s,i,a}[g(τ, X_τ)]` where `τ` is the first time the level
//! process started at `a` exceeds `ℓ`. Internally the unknown is carried in
//! the distance-to-level coordinate `λ = ℓ − a`, so one backward march in `s`
//! serves every level below `ℓ` at once.
//!
//! The march is the Euler chain approximation "move with the current rate for
//! `ds`, then jump with probabilities `I + ds·Λ`":
//!
//! ```text
//! F(s, i, λ) = Σ_j (I + ds Λ_{s+ds/2})(i, j) F(s + ds, j, λ − v(i) ds)
//! ```
//!
//! with linear interpolation in `λ`. When the characteristic of an up state
//! reaches `λ = 0` inside the step, the boundary value `g` is taken at the
//! exact crossing time. Because `τ ≥ s + λ/v_max`, `F` vanishes identically
//! once `λ ≥ v_max (η − s)`; that region is never touched, which also makes
//! support preservation exact.
//!
//! The down-crossing problem is solved on the mirrored model (`v → −v`).

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::model::{FluidModel, ModelError, Sign, StateSpace};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PassageError {
    #[error("grid error: {0}")]
    GridError(String),
    #[error("domain error: {0}")]
    DomainError(String),
    #[error("level must be nonnegative and finite, got {0}")]
    InvalidLevel(f64),
    #[error("invalid boundary function: {0}")]
    InvalidBoundary(String),
    #[error("boundary function has no s-derivative")]
    DerivativeUnavailable,
    #[error(transparent)]
    Model(#[from] ModelError),
}

type Evaluator = Arc<dyn Fn(f64, usize) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum BoundaryKind {
    Zero,
    /// `e^{−cs} 1{i = target}` times a C¹ cutoff that is 1 on `[0, η − w]`
    /// and 0 from `η` on, with `w = min(1, η)`.
    ExpIndicator { c: f64, target: usize },
    /// Linear interpolation of per-state samples at increasing times `s`.
    /// `values[i]` is ignored for states outside the boundary class.
    Table { s: Vec<f64>, values: Vec<Vec<f64>> },
    Custom {
        value: Evaluator,
        derivative: Option<Evaluator>,
        sup: f64,
        lipschitz: Option<f64>,
    },
}

impl fmt::Debug for BoundaryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundaryKind::Zero => write!(f, "Zero"),
            BoundaryKind::ExpIndicator { c, target } => {
                write!(f, "ExpIndicator {{ c: {c}, target: {target} }}")
            }
            BoundaryKind::Table { s, .. } => write!(f, "Table {{ {} nodes }}", s.len()),
            BoundaryKind::Custom { sup, .. } => write!(f, "Custom {{ sup: {sup} }}"),
        }
    }
}

/// Boundary data `g(s, i)` on one sign class, vanishing for `s ≥ η`.
#[derive(Debug, Clone)]
pub struct BoundaryFunction {
    sign: Sign,
    eta: f64,
    kind: BoundaryKind,
}

fn smoothstep_cutoff(s: f64, eta: f64) -> (f64, f64) {
    let w = eta.min(1.0);
    let x = (s - (eta - w)) / w;
    if x <= 0.0 {
        (1.0, 0.0)
    } else if x >= 1.0 {
        (0.0, 0.0)
    } else {
        (1.0 - x * x * (3.0 - 2.0 * x), -6.0 * x * (1.0 - x) / w)
    }
}

impl BoundaryFunction {
    pub fn zero(sign: Sign, eta: f64) -> Result<Self, PassageError> {
        Self::new(sign, eta, BoundaryKind::Zero)
    }

    /// Discounted indicator of hitting `target`, smoothly truncated at `η`.
    pub fn exp_indicator(sign: Sign, c: f64, target: usize, eta: f64) -> Result<Self, PassageError> {
        if !(c >= 0.0 && c.is_finite()) {
            return Err(PassageError::InvalidBoundary(format!("discount must be >= 0, got {c}")));
        }
        Self::new(sign, eta, BoundaryKind::ExpIndicator { c, target })
    }

    /// Default truncation point for a discount `c`: the neglected mass is
    /// at most `e^{−c(η−1)}`.
    pub fn default_eta(c: f64) -> f64 {
        20.0 / c
    }

    pub fn table(sign: Sign, eta: f64, s: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self, PassageError> {
        if s.is_empty() || s.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(PassageError::InvalidBoundary(
                "table times must be nonempty and strictly increasing".into(),
            ));
        }
        if values.iter().any(|v| !v.is_empty() && v.len() != s.len()) {
            return Err(PassageError::InvalidBoundary(
                "every table column must match the time nodes".into(),
            ));
        }
        if values.iter().flatten().any(|x| !x.is_finite()) {
            return Err(PassageError::InvalidBoundary("table values must be finite".into()));
        }
        Self::new(sign, eta, BoundaryKind::Table { s, values })
    }

    pub fn new(sign: Sign, eta: f64, kind: BoundaryKind) -> Result<Self, PassageError> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(PassageError::InvalidBoundary(format!(
                "support bound must be positive and finite, got {eta}"
            )));
        }
        Ok(BoundaryFunction { sign, eta, kind })
    }

    pub fn sign(&self) -> Sign {
        self.sign
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn kind(&self) -> &BoundaryKind {
        &self.kind
    }

    pub fn is_smooth(&self) -> bool {
        match &self.kind {
            BoundaryKind::Zero | BoundaryKind::ExpIndicator { .. } => true,
            BoundaryKind::Table { .. } => false,
            BoundaryKind::Custom { derivative, .. } => derivative.is_some(),
        }
    }

    pub fn value(&self, s: f64, i: usize) -> f64 {
        if s >= self.eta {
            return 0.0;
        }
        match &self.kind {
            BoundaryKind::Zero => 0.0,
            BoundaryKind::ExpIndicator { c, target } => {
                if i == *target {
                    (-c * s).exp() * smoothstep_cutoff(s, self.eta).0
                } else {
                    0.0
                }
            }
            BoundaryKind::Table { s: nodes, values } => match values.get(i) {
                Some(col) if !col.is_empty() => interp(nodes, col, s),
                _ => 0.0,
            },
            BoundaryKind::Custom { value, .. } => value(s, i),
        }
    }

    pub fn derivative(&self, s: f64, i: usize) -> Option<f64> {
        if s >= self.eta {
            return self.is_smooth().then_some(0.0);
        }
        match &self.kind {
            BoundaryKind::Zero => Some(0.0),
            BoundaryKind::ExpIndicator { c, target } => {
                if i != *target {
                    return Some(0.0);
                }
                let (cut, dcut) = smoothstep_cutoff(s, self.eta);
                let e = (-c * s).exp();
                Some(e * (dcut - c * cut))
            }
            BoundaryKind::Table { .. } => None,
            BoundaryKind::Custom { derivative, .. } => derivative.as_ref().map(|d| d(s, i)),
        }
    }

    /// Upper bound on `sup |g|`.
    pub fn sup_norm(&self) -> f64 {
        match &self.kind {
            BoundaryKind::Zero => 0.0,
            BoundaryKind::ExpIndicator { .. } => 1.0,
            BoundaryKind::Table { values, .. } => values.iter().flatten().fold(0.0, |a, x| a.max(x.abs())),
            BoundaryKind::Custom { sup, .. } => *sup,
        }
    }

    /// Upper bound on the modulus of continuity `w_g(δ)` in `s`.
    pub fn modulus(&self, delta: f64) -> f64 {
        let lip = match &self.kind {
            BoundaryKind::Zero => 0.0,
            BoundaryKind::ExpIndicator { c, .. } => c + 1.5 / self.eta.min(1.0),
            BoundaryKind::Table { s, values } => {
                let mut l: f64 = 0.0;
                for col in values.iter().filter(|c| !c.is_empty()) {
                    for k in 1..s.len() {
                        l = l.max((col[k] - col[k - 1]).abs() / (s[k] - s[k - 1]));
                    }
                    // drop to zero at η
                    if let Some(&last) = col.last() {
                        let gap = self.eta - s[s.len() - 1];
                        if gap > 0.0 {
                            l = l.max(last.abs() / gap);
                        } else if last != 0.0 {
                            l = f64::INFINITY;
                        }
                    }
                }
                l
            }
            BoundaryKind::Custom { lipschitz, .. } => lipschitz.unwrap_or(f64::INFINITY),
        };
        (lip * delta).min(2.0 * self.sup_norm())
    }
}

fn interp(nodes: &[f64], vals: &[f64], s: f64) -> f64 {
    if s <= nodes[0] {
        return vals[0];
    }
    let n = nodes.len();
    if s >= nodes[n - 1] {
        return vals[n - 1];
    }
    let k = nodes.partition_point(|&x| x <= s);
    let (s0, s1) = (nodes[k - 1], nodes[k]);
    let w = (s - s0) / (s1 - s0);
    vals[k - 1] * (1.0 - w) + vals[k] * w
}

/// Grid controls. `a_min` defaults to `min(0, ℓ − v_max η) − 2·da`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridParams {
    pub ds: f64,
    pub da: f64,
    pub a_min: Option<f64>,
    /// Keep every `(s_stride, a_stride)`-th node of the full field.
    pub field_stride: Option<(usize, usize)>,
}

impl GridParams {
    pub fn new(ds: f64, da: f64) -> Self {
        GridParams {
            ds,
            da,
            a_min: None,
            field_stride: None,
        }
    }

    /// `ds = da = 1e-3 · max(1, η)`.
    pub fn default_for(eta: f64) -> Self {
        let h = 1e-3 * eta.max(1.0);
        Self::new(h, h)
    }

    pub fn with_field(mut self, s_stride: usize, a_stride: usize) -> Self {
        self.field_stride = Some((s_stride.max(1), a_stride.max(1)));
        self
    }

    pub fn halved(&self) -> Self {
        GridParams {
            ds: self.ds / 2.0,
            da: self.da / 2.0,
            a_min: self.a_min,
            field_stride: self.field_stride.map(|(s, a)| (2 * s, 2 * a)),
        }
    }
}

/// Uniform `(s, a)` grid. Nodes are `s_k = k·ds` for `k = 0..=n_s` and
/// `a_j = ℓ − j·da` for `j = 0..=n_a`; `da` is shrunk when needed so that
/// `a = 0` is a node.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D {
    pub ds: f64,
    pub da: f64,
    pub n_s: usize,
    pub n_a: usize,
    pub level: f64,
    pub eta: f64,
    /// Index `j` of the node `a = 0`.
    pub zero_index: usize,
}

impl Grid2D {
    pub fn s(&self, k: usize) -> f64 {
        k as f64 * self.ds
    }

    pub fn a(&self, j: usize) -> f64 {
        if j == self.zero_index {
            0.0
        } else {
            self.level - j as f64 * self.da
        }
    }

    pub fn s_max(&self) -> f64 {
        self.s(self.n_s)
    }

    pub fn a_min(&self) -> f64 {
        self.a(self.n_a)
    }

    pub fn s_nodes(&self) -> Vec<f64> {
        (0..=self.n_s).map(|k| self.s(k)).collect()
    }

    fn build(model: &FluidModel, level: f64, eta: f64, p: &GridParams) -> Result<Grid2D, PassageError> {
        if !(level >= 0.0 && level.is_finite()) {
            return Err(PassageError::InvalidLevel(level));
        }
        if !(p.ds > 0.0 && p.da > 0.0 && p.ds.is_finite() && p.da.is_finite()) {
            return Err(PassageError::GridError(format!(
                "steps must be positive, got ds = {}, da = {}",
                p.ds, p.da
            )));
        }
        let v_max = model.states().v_max();
        let k = model.bound_k();
        if p.ds * k > 0.5 {
            return Err(PassageError::GridError(format!(
                "ds = {} exceeds 1/(2K) = {}; the jump step would not be monotone",
                p.ds,
                0.5 / k
            )));
        }
        let da = if level > 0.0 {
            level / (level / p.da).ceil()
        } else {
            p.da
        };
        let reach = v_max * eta;
        let a_min = p.a_min.unwrap_or((level - reach).min(0.0) - 2.0 * da);
        if !(a_min < level) {
            return Err(PassageError::DomainError(format!("a_min = {a_min} is not below the level {level}")));
        }
        if a_min > 0.0 {
            return Err(PassageError::DomainError(format!("a_min = {a_min} leaves a = 0 outside the grid")));
        }
        if level < reach && a_min >= level - reach {
            return Err(PassageError::DomainError(format!(
                "a_min = {a_min} must lie below ℓ − v_max·η = {}",
                level - reach
            )));
        }
        if v_max * p.ds > level - a_min {
            return Err(PassageError::GridError(format!(
                "v_max·ds = {} spans the whole a-range {}",
                v_max * p.ds,
                level - a_min
            )));
        }
        let zero_index = (level / da).round() as usize;
        let n_a = (((level - a_min) / da).ceil() as usize).max(zero_index);
        let n_s = ((eta / p.ds) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        Ok(Grid2D {
            ds: p.ds,
            da,
            n_s,
            n_a,
            level,
            eta,
            zero_index,
        })
    }
}

/// Subsampled copy of the full solution.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredField {
    pub s_stride: usize,
    pub a_stride: usize,
    pub s_index: Vec<usize>,
    pub a_index: Vec<usize>,
    /// `values[(row · m + i) · a_index.len() + col]`.
    values: Vec<f64>,
    m: usize,
}

impl StoredField {
    pub fn value(&self, row: usize, i: usize, col: usize) -> f64 {
        self.values[(row * self.m + i) * self.a_index.len() + col]
    }
}

/// Solution of one passage problem. The two traces `a = ℓ` and `a = 0`
/// are kept at every `s`-node for every state; the full field only when
/// requested through [`GridParams::field_stride`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub grid: Grid2D,
    /// Direction of the passage the solution belongs to.
    pub sign: Sign,
    pub states: StateSpace,
    /// `F(s_k, i, ℓ)` as an `(n_s + 1) × m` matrix.
    pub at_level: DMatrix<f64>,
    /// `F(s_k, i, 0)`.
    pub at_zero: DMatrix<f64>,
    pub field: Option<StoredField>,
    pub g_sup: f64,
    pub g_eta: f64,
}

/// Values over the `s`-grid for a subset of states (original indices).
#[derive(Debug, Clone, PartialEq)]
pub struct StateTable {
    pub s: Vec<f64>,
    pub states: Vec<usize>,
    /// `values[(k, idx)]` belongs to `s[k]` and `states[idx]`.
    pub values: DMatrix<f64>,
}

impl StateTable {
    pub fn column_of(&self, state: usize) -> Option<usize> {
        self.states.iter().position(|&i| i == state)
    }

    pub fn get(&self, k: usize, state: usize) -> Option<f64> {
        self.column_of(state).map(|c| self.values[(k, c)])
    }

    pub fn max_abs(&self) -> f64 {
        self.values.amax()
    }

    /// Turns the table into boundary data on `sign`'s class, interpolating
    /// linearly in `s` and vanishing from `eta` on.
    pub fn to_boundary(&self, sign: Sign, m: usize, eta: f64) -> Result<BoundaryFunction, PassageError> {
        let mut values = vec![Vec::new(); m];
        for (c, &i) in self.states.iter().enumerate() {
            values[i] = self.values.column(c).iter().copied().collect();
        }
        BoundaryFunction::table(sign, eta, self.s.clone(), values)
    }
}

impl GridFunction {
    fn table(&self, from: &DMatrix<f64>, class: &[usize]) -> StateTable {
        StateTable {
            s: self.grid.s_nodes(),
            states: class.to_vec(),
            values: DMatrix::from_fn(from.nrows(), class.len(), |k, c| from[(k, class[c])]),
        }
    }

    fn own_class(&self) -> &[usize] {
        self.states.class(self.sign)
    }

    fn other_class(&self) -> &[usize] {
        self.states.class(self.sign.flip())
    }

    pub fn max_abs(&self) -> f64 {
        self.at_level.amax().max(self.at_zero.amax())
    }
}

/// `J g` on the opposite class: the value at `a = ℓ` (zero distance).
pub fn extract_j(f: &GridFunction) -> StateTable {
    f.table(&f.at_level, f.other_class())
}

/// `P_ℓ g` on the boundary class: the value at `a = 0`.
pub fn extract_p(f: &GridFunction) -> StateTable {
    f.table(&f.at_zero, f.own_class())
}

/// `J P_ℓ g`: opposite-class values at `a = 0`.
pub fn extract_jp(f: &GridFunction) -> StateTable {
    f.table(&f.at_zero, f.other_class())
}

pub fn solve_passage(
    model: &FluidModel,
    g: &BoundaryFunction,
    level: f64,
    params: &GridParams,
) -> Result<GridFunction, PassageError> {
    if g.sign() != Sign::Plus {
        return Err(PassageError::InvalidBoundary(
            "up-crossing problems need boundary data on the up class".into(),
        ));
    }
    march(model, g, level, params, Sign::Plus)
}

pub fn solve_passage_minus(
    model: &FluidModel,
    g: &BoundaryFunction,
    level: f64,
    params: &GridParams,
) -> Result<GridFunction, PassageError> {
    if g.sign() != Sign::Minus {
        return Err(PassageError::InvalidBoundary(
            "down-crossing problems need boundary data on the down class".into(),
        ));
    }
    let mirror = FluidModel::new(model.states().mirrored(), model.generator().clone())?;
    let mut f = march(&mirror, g, level, params, Sign::Minus)?;
    f.states = model.states().clone();
    Ok(f)
}

/// Dispatches on the sign of the boundary data.
pub fn solve(
    model: &FluidModel,
    g: &BoundaryFunction,
    level: f64,
    params: &GridParams,
) -> Result<GridFunction, PassageError> {
    match g.sign() {
        Sign::Plus => solve_passage(model, g, level, params),
        Sign::Minus => solve_passage_minus(model, g, level, params),
    }
}

/// Backward march for an up-crossing problem on `model`; `sign` is only
/// recorded in the result.
fn march(
    model: &FluidModel,
    g: &BoundaryFunction,
    level: f64,
    params: &GridParams,
    sign: Sign,
) -> Result<GridFunction, PassageError> {
    let grid = Grid2D::build(model, level, g.eta(), params)?;
    let states = model.states();
    let m = states.len();
    let (ds, dl) = (grid.ds, grid.da);
    let n_a = grid.n_a;
    let width = n_a + 2;
    let v_max = states.v_max();
    let eta = g.eta();

    // λ-index shift of the foot of each characteristic
    let shifts: Vec<(isize, f64, f64)> = (0..m)
        .map(|i| {
            let v = states.rate(i);
            let q = v.abs() * ds / dl;
            let qi = q.floor();
            let qf = q - qi;
            if v > 0.0 {
                if qf > 0.0 {
                    (-(qi as isize) - 1, 1.0 - qf, v)
                } else {
                    (-(qi as isize), 0.0, v)
                }
            } else {
                (qi as isize, qf, v)
            }
        })
        .collect();
    // number of nodes with λ_j < v_max (η − s_k)
    let active = |k: usize| -> usize {
        let x = v_max * (eta - grid.s(k)) / dl;
        if x <= 0.0 {
            0
        } else {
            (x.ceil() as usize).min(n_a + 1)
        }
    };

    let mut f = vec![0.0; m * width];
    let mut gb = vec![0.0; m * width];
    let mut at_level = DMatrix::zeros(grid.n_s + 1, m);
    let mut at_zero = DMatrix::zeros(grid.n_s + 1, m);
    let mut field = params.field_stride.map(|(ss, sa)| {
        let s_index: Vec<usize> = (0..=grid.n_s).step_by(ss).collect();
        let a_index: Vec<usize> = (0..=n_a).step_by(sa).collect();
        StoredField {
            s_stride: ss,
            a_stride: sa,
            values: vec![0.0; s_index.len() * m * a_index.len()],
            s_index,
            a_index,
            m,
        }
    });
    let mut jump = DMatrix::zeros(m, m);

    for k in (0..grid.n_s).rev() {
        let s = grid.s(k);
        let n_old = active(k + 1);
        let n_new = active(k);
        let lam = model.eval(s + 0.5 * ds);
        for i in 0..m {
            for l in 0..m {
                jump[(i, l)] = ds * lam[(i, l)] + if i == l { 1.0 } else { 0.0 };
            }
        }
        for i in 0..m {
            let row = &mut gb[i * width..i * width + n_old];
            row.fill(0.0);
            for l in 0..m {
                let p = jump[(i, l)];
                if p != 0.0 {
                    let src = &f[l * width..l * width + n_old];
                    for (r, x) in row.iter_mut().zip(src) {
                        *r += p * x;
                    }
                }
            }
        }
        for i in 0..m {
            let (off, w, v) = shifts[i];
            let src = &gb[i * width..(i + 1) * width];
            let dst = &mut f[i * width..i * width + n_new];
            for (j, out) in dst.iter_mut().enumerate() {
                let idx = j as isize + off;
                *out = if idx < 0 {
                    // the up state reaches the level inside this step
                    g.value(s + j as f64 * dl / v, i)
                } else {
                    let idx = idx as usize;
                    if idx + 1 < width {
                        src[idx] * (1.0 - w) + src[idx + 1] * w
                    } else if idx < width {
                        src[idx] * (1.0 - w)
                    } else {
                        0.0
                    }
                };
            }
        }
        for i in 0..m {
            at_level[(k, i)] = f[i * width];
            at_zero[(k, i)] = f[i * width + grid.zero_index];
        }
        if let Some(fd) = field.as_mut() {
            if k % fd.s_stride == 0 {
                let row = k / fd.s_stride;
                let na = fd.a_index.len();
                for i in 0..m {
                    for (c, &j) in fd.a_index.iter().enumerate() {
                        fd.values[(row * m + i) * na + c] = f[i * width + j];
                    }
                }
            }
        }
    }

    Ok(GridFunction {
        grid,
        sign,
        states: states.clone(),
        at_level,
        at_zero,
        field,
        g_sup: g.sup_norm(),
        g_eta: eta,
    })
}

fn class_rate(states: &StateSpace, sign: Sign, i: usize) -> f64 {
    sign.factor() * states.rate(i)
}

/// `(G g)(s, i) = (1/|v(i)|)(∂_s g + Σ_own Λ_s(i,j) g(s,j) + Σ_other Λ_s(i,j) (J g)(s,j))`
/// on the boundary class, evaluated on the `s`-nodes of `j_values`.
pub fn apply_g(
    model: &FluidModel,
    g: &BoundaryFunction,
    j_values: &StateTable,
) -> Result<StateTable, PassageError> {
    if !g.is_smooth() {
        return Err(PassageError::DerivativeUnavailable);
    }
    let states = model.states();
    let sign = g.sign();
    let own = states.class(sign);
    let other = states.class(sign.flip());
    let mut values = DMatrix::zeros(j_values.s.len(), own.len());
    for (k, &s) in j_values.s.iter().enumerate() {
        let lam = model.eval(s);
        for (c, &i) in own.iter().enumerate() {
            let mut acc = g.derivative(s, i).ok_or(PassageError::DerivativeUnavailable)?;
            for &j in own {
                acc += lam[(i, j)] * g.value(s, j);
            }
            for &j in other {
                let jv = j_values
                    .get(k, j)
                    .ok_or_else(|| PassageError::InvalidBoundary(format!("J table lacks state {j}")))?;
                acc += lam[(i, j)] * jv;
            }
            values[(k, c)] = acc / class_rate(states, sign, i);
        }
    }
    Ok(StateTable {
        s: j_values.s.clone(),
        states: own.to_vec(),
        values,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityResidual {
    /// Residual per interior `s`-node (rows `1..n−1` of the grid) and
    /// opposite-class state.
    pub table: StateTable,
    pub max: f64,
}

/// Residual of `∂_s(J g) = −C g − D (J g) + V (J G g)` on the opposite
/// class, with a central difference in `s`. `jg_values` is `J` applied to
/// `G g` (a second solve with boundary data `G g`).
pub fn check_identity_whd(
    model: &FluidModel,
    g: &BoundaryFunction,
    j_values: &StateTable,
    jg_values: &StateTable,
) -> Result<IdentityResidual, PassageError> {
    let states = model.states();
    let sign = g.sign();
    let own = states.class(sign);
    let other = states.class(sign.flip());
    let n = j_values.s.len();
    if jg_values.s.len() != n {
        return Err(PassageError::GridError("J g and J G g live on different grids".into()));
    }
    let rows = n.saturating_sub(2);
    let mut values = DMatrix::zeros(rows, other.len());
    let lookup = |t: &StateTable, k: usize, j: usize| {
        t.get(k, j)
            .ok_or_else(|| PassageError::InvalidBoundary(format!("table lacks state {j}")))
    };
    for k in 1..n.saturating_sub(1) {
        let s = j_values.s[k];
        let h = j_values.s[k + 1] - j_values.s[k - 1];
        let lam = model.eval(s);
        for (c, &i) in other.iter().enumerate() {
            let lhs = (lookup(j_values, k + 1, i)? - lookup(j_values, k - 1, i)?) / h;
            let mut rhs = class_rate(states, sign, i) * lookup(jg_values, k, i)?;
            for &j in own {
                rhs -= lam[(i, j)] * g.value(s, j);
            }
            for &j in other {
                rhs -= lam[(i, j)] * lookup(j_values, k, j)?;
            }
            values[(k - 1, c)] = lhs - rhs;
        }
    }
    let max = values.amax();
    Ok(IdentityResidual {
        table: StateTable {
            s: j_values.s[1..n.saturating_sub(1).max(1)].to_vec(),
            states: other.to_vec(),
            values,
        },
        max,
    })
}

/// Constants of the uniform-continuity estimate
/// `|f(s₂,i,λ₂) − f(s₁,i,λ₁)| ≤ a_λ Δλ + a_s Δs + w_g(Δλ/v_min) + 3 w_g(v_max Δs / v_min)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuityBound {
    pub a_lambda: f64,
    pub a_s: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl ContinuityBound {
    pub fn new(model: &FluidModel, g_sup: f64) -> Self {
        let st = model.states();
        let (v_min, v_max) = (st.v_min(), st.v_max());
        let k = model.bound_k();
        ContinuityBound {
            a_lambda: 2.0 * k * g_sup / v_min,
            a_s: 4.0 * (1.0 + v_max / v_min) * k * g_sup,
            v_min,
            v_max,
        }
    }

    pub fn eval(&self, g: &BoundaryFunction, d_s: f64, d_lambda: f64) -> f64 {
        self.a_lambda * d_lambda
            + self.a_s * d_s
            + g.modulus(d_lambda / self.v_min)
            + 3.0 * g.modulus(self.v_max * d_s / self.v_min)
    }
}

/// Largest change of the stored field between nodes `(s_step, a_step)`
/// stored nodes apart, together with the matching continuity bound.
pub fn modulus_of_continuity(
    model: &FluidModel,
    g: &BoundaryFunction,
    f: &GridFunction,
    s_step: usize,
    a_step: usize,
) -> Option<(f64, f64)> {
    let fd = f.field.as_ref()?;
    let m = f.states.len();
    let (ns, na) = (fd.s_index.len(), fd.a_index.len());
    let mut worst: f64 = 0.0;
    for r in 0..ns.saturating_sub(s_step) {
        for i in 0..m {
            for c in 0..na.saturating_sub(a_step) {
                let x = fd.value(r, i, c);
                worst = worst.max((fd.value(r + s_step, i, c + a_step) - x).abs());
                worst = worst.max((fd.value(r + s_step, i, c) - x).abs());
                worst = worst.max((fd.value(r, i, c + a_step) - x).abs());
            }
        }
    }
    let d_s = (s_step * fd.s_stride) as f64 * f.grid.ds;
    let d_l = (a_step * fd.a_stride) as f64 * f.grid.da;
    let bound = ContinuityBound::new(model, f.g_sup).eval(g, d_s, d_l);
    Some((worst, bound))
}
