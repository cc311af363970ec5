//! Exact-in-law simulation of the time-inhomogeneous chain and its fluid
//! level, and Monte Carlo estimates of first-passage functionals.
//!
//! Holding times are drawn by inverting the cumulative exit hazard
//! `H(r) = ∫_s^{s+r} −Λ_u(i,i) du` against an `Exp(1)` variate. `H` is taken
//! in closed form when the family provides one and by adaptive Simpson
//! quadrature otherwise; the root is found by safeguarded Newton steps.
//! A thinning sampler with majorant `K` is available as an independent
//! cross-check.
//!
//! Replica `r` draws from the ChaCha8 stream `(seed, r)`, and results are
//! reduced in replica order, so estimates do not depend on the thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{FluidModel, Sign};
use crate::passage::{BoundaryFunction, BoundaryKind};
use crate::stats::mean_stderr;

/// Exit rates below this are reported as an invalid generator.
pub const NEGATIVE_RATE_TOL: f64 = 1e-12;
/// Relative tolerance for hazard quadrature and inversion.
pub const HAZARD_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum McError {
    #[error("negative exit rate {rate:e} for state {state} at s = {s}")]
    HazardError { s: f64, state: usize, rate: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Deterministic random stream for replica `replica` under `seed`.
pub fn replica_rng(seed: u64, replica: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replica);
    rng
}

fn exp1<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // 1 − U lies in (0, 1]
    -(1.0 - rng.random::<f64>()).ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub s0: f64,
    pub i0: usize,
    pub horizon: f64,
    pub jump_times: Vec<f64>,
    /// `states[k]` is in force on `[t_k, t_{k+1})`, with `t_0 = s0`.
    pub states: Vec<usize>,
    /// Level at `s0`, at every jump, and at the horizon.
    pub phi: Vec<f64>,
}

impl PathSample {
    /// Segment boundaries `s0, jumps…, horizon`.
    pub fn times(&self) -> Vec<f64> {
        let mut t = Vec::with_capacity(self.jump_times.len() + 2);
        t.push(self.s0);
        t.extend_from_slice(&self.jump_times);
        t.push(self.horizon);
        t
    }

    pub fn state_at(&self, t: f64) -> usize {
        let k = self.jump_times.partition_point(|&x| x <= t);
        self.states[k]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PassageSample {
    /// `None` when the level was not crossed before the horizon.
    pub tau: Option<f64>,
    pub hit_state: Option<usize>,
    pub censored: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
    pub censor_fraction: f64,
    /// Bound on `|g|` beyond the horizon, hence on the censoring bias.
    pub bias_bound: f64,
    pub seed: u64,
}

/// `g(τ, X_τ)` for a finite passage; censored paths contribute zero.
pub trait Payoff: Sync {
    fn value(&self, tau: f64, state: usize) -> f64;
    /// `sup_{t ≥ horizon, j} |g(t, j)|`.
    fn tail_bound(&self, horizon: f64) -> f64;
}

impl Payoff for BoundaryFunction {
    fn value(&self, tau: f64, state: usize) -> f64 {
        BoundaryFunction::value(self, tau, state)
    }

    fn tail_bound(&self, horizon: f64) -> f64 {
        if horizon >= self.eta() {
            return 0.0;
        }
        match self.kind() {
            BoundaryKind::ExpIndicator { c, .. } => (-c * horizon).exp(),
            _ => self.sup_norm(),
        }
    }
}

/// `e^{−cτ} 1{X_τ = target}`, or `e^{−cτ}` for any hit state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Discounted {
    pub c: f64,
    pub target: Option<usize>,
}

impl Payoff for Discounted {
    fn value(&self, tau: f64, state: usize) -> f64 {
        match self.target {
            Some(j) if j != state => 0.0,
            _ => (-self.c * tau).exp(),
        }
    }

    fn tail_bound(&self, horizon: f64) -> f64 {
        (-self.c * horizon).exp()
    }
}

/// Indicator of a passage before the horizon. Its tail bound is the
/// conservative 1 unless the caller knows better.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HitIndicator {
    pub tail: f64,
}

impl Payoff for HitIndicator {
    fn value(&self, _tau: f64, _state: usize) -> f64 {
        1.0
    }

    fn tail_bound(&self, _horizon: f64) -> f64 {
        self.tail
    }
}

fn exit_rate(model: &FluidModel, s: f64, i: usize) -> Result<f64, McError> {
    let q = model.generator().exit_rate(s, i);
    if q < -NEGATIVE_RATE_TOL || !q.is_finite() {
        return Err(McError::HazardError { s, state: i, rate: q });
    }
    Ok(q.max(0.0))
}

#[allow(clippy::too_many_arguments)]
fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let diff = left + right - whole;
    if depth == 0 || diff.abs() <= 15.0 * tol {
        left + right + diff / 15.0
    } else {
        simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}

/// `∫_a^b f` by adaptive Simpson to an absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson(&f, a, b, fa, fm, fb, whole, tol, 40)
}

/// `∫_{s0}^{s1} −Λ_u(i,i) du`.
pub fn hazard(model: &FluidModel, i: usize, s0: f64, s1: f64) -> f64 {
    let gen = model.generator();
    if let Some(h) = gen.integrated_exit_rate(i, s0, s1) {
        return h;
    }
    let scale = gen.bound_k() * (s1 - s0);
    let tol = HAZARD_TOL * scale.max(1e-300);
    let mut total = 0.0;
    let mut a = s0;
    for b in gen.discontinuities(s0, s1).into_iter().chain(std::iter::once(s1)) {
        total += adaptive_simpson(|u| gen.exit_rate(u, i), a, b, tol);
        a = b;
    }
    total
}

/// Time of the next jump out of `i` after `t` given the exponential
/// variate `e`, or `None` if it falls after `t_end`.
fn next_jump(model: &FluidModel, i: usize, t: f64, t_end: f64, e: f64) -> Result<Option<f64>, McError> {
    let q0 = exit_rate(model, t, i)?;
    if model.generator().is_constant() {
        if q0 <= 0.0 {
            return Ok(None);
        }
        let x = t + e / q0;
        return Ok((x <= t_end).then_some(x));
    }
    exit_rate(model, t_end, i)?;
    if hazard(model, i, t, t_end) < e {
        return Ok(None);
    }
    let (mut lo, mut hi) = (t, t_end);
    let mut x = if q0 > 0.0 { (t + e / q0).min(t_end) } else { 0.5 * (t + t_end) };
    for _ in 0..200 {
        let h = hazard(model, i, t, x) - e;
        if h.abs() <= HAZARD_TOL * e.max(1.0) * 1e-2 {
            break;
        }
        if h < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo <= HAZARD_TOL * 1e-2 * x.abs().max(1.0) {
            break;
        }
        let q = exit_rate(model, x, i)?;
        let newton = x - h / q;
        x = if q > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Ok(Some(x))
}

fn destination<R: Rng + ?Sized>(model: &FluidModel, i: usize, t: f64, rng: &mut R) -> usize {
    let lam = model.eval(t);
    let total: f64 = (0..lam.ncols()).filter(|&j| j != i).map(|j| lam[(i, j)].max(0.0)).sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = i;
    for j in 0..lam.ncols() {
        if j == i || lam[(i, j)] <= 0.0 {
            continue;
        }
        acc += lam[(i, j)];
        last = j;
        if u < acc {
            return j;
        }
    }
    last
}

/// Jump mechanism used by the path walker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampler {
    HazardInversion,
    Thinning,
}

fn next_jump_thinning<R: Rng + ?Sized>(
    model: &FluidModel,
    i: usize,
    t: f64,
    t_end: f64,
    rng: &mut R,
) -> Result<Option<f64>, McError> {
    let k = model.bound_k();
    if k <= 0.0 {
        return Ok(None);
    }
    let mut x = t;
    loop {
        x += exp1(rng) / k;
        if x > t_end {
            return Ok(None);
        }
        let q = exit_rate(model, x, i)?;
        if rng.random::<f64>() * k < q {
            return Ok(Some(x));
        }
    }
}

/// Walks the path from `(s0, i0)` with level 0, calling `stop` after each
/// segment `(t0, t1, state, phi0)`; returns early when `stop` says so.
fn walk<R, F>(
    model: &FluidModel,
    s0: f64,
    i0: usize,
    horizon: f64,
    sampler: Sampler,
    rng: &mut R,
    mut segment: F,
) -> Result<(), McError>
where
    R: Rng + ?Sized,
    F: FnMut(f64, f64, usize, f64, bool) -> bool,
{
    let mut t = s0;
    let mut i = i0;
    let mut phi = 0.0;
    loop {
        let next = match sampler {
            Sampler::HazardInversion => {
                let e = exp1(rng);
                next_jump(model, i, t, horizon, e)?
            }
            Sampler::Thinning => next_jump_thinning(model, i, t, horizon, rng)?,
        };
        let end = next.unwrap_or(horizon);
        if segment(t, end, i, phi, next.is_none()) || next.is_none() {
            return Ok(());
        }
        phi += model.rate(i) * (end - t);
        t = end;
        i = destination(model, i, t, rng);
    }
}

fn check_start(model: &FluidModel, s0: f64, i0: usize, horizon: f64) -> Result<(), McError> {
    if !(s0 >= 0.0 && horizon > s0 && horizon.is_finite()) {
        return Err(McError::InvalidArgument(format!(
            "need 0 <= s0 < horizon < ∞, got s0 = {s0}, horizon = {horizon}"
        )));
    }
    if i0 >= model.m() {
        return Err(McError::InvalidArgument(format!("state {i0} out of range")));
    }
    Ok(())
}

pub fn sample_path<R: Rng + ?Sized>(
    model: &FluidModel,
    s0: f64,
    i0: usize,
    horizon: f64,
    rng: &mut R,
) -> Result<PathSample, McError> {
    sample_path_with(model, s0, i0, horizon, Sampler::HazardInversion, rng)
}

pub fn sample_path_with<R: Rng + ?Sized>(
    model: &FluidModel,
    s0: f64,
    i0: usize,
    horizon: f64,
    sampler: Sampler,
    rng: &mut R,
) -> Result<PathSample, McError> {
    check_start(model, s0, i0, horizon)?;
    let mut path = PathSample {
        s0,
        i0,
        horizon,
        jump_times: Vec::new(),
        states: Vec::new(),
        phi: vec![0.0],
    };
    walk(model, s0, i0, horizon, sampler, rng, |t0, t1, i, phi0, last| {
        path.states.push(i);
        path.phi.push(phi0 + model.rate(i) * (t1 - t0));
        if !last {
            path.jump_times.push(t1);
        }
        false
    })?;
    Ok(path)
}

/// First time the segment starting at `phi0` exceeds `level` (plus) or
/// falls below `−level` (minus).
fn crossing(t0: f64, t1: f64, v: f64, phi0: f64, level: f64, sign: Sign) -> Option<f64> {
    let (v, phi0) = (sign.factor() * v, sign.factor() * phi0);
    if v <= 0.0 {
        return None;
    }
    if phi0 >= level {
        return Some(t0);
    }
    let tau = t0 + (level - phi0) / v;
    (tau < t1).then_some(tau)
}

pub fn passage_functional(path: &PathSample, rates: &[f64], level: f64, sign: Sign) -> PassageSample {
    let times = path.times();
    for (k, &i) in path.states.iter().enumerate() {
        if let Some(tau) = crossing(times[k], times[k + 1], rates[i], path.phi[k], level, sign) {
            return PassageSample {
                tau: Some(tau),
                hit_state: Some(i),
                censored: false,
            };
        }
    }
    PassageSample {
        tau: None,
        hit_state: None,
        censored: true,
    }
}

/// Simulates only until the passage (or the horizon).
#[allow(clippy::too_many_arguments)]
pub fn simulate_passage<R: Rng + ?Sized>(
    model: &FluidModel,
    s0: f64,
    i0: usize,
    level: f64,
    sign: Sign,
    horizon: f64,
    sampler: Sampler,
    rng: &mut R,
) -> Result<PassageSample, McError> {
    check_start(model, s0, i0, horizon)?;
    let mut out = PassageSample {
        tau: None,
        hit_state: None,
        censored: true,
    };
    walk(model, s0, i0, horizon, sampler, rng, |t0, t1, i, phi0, _| {
        match crossing(t0, t1, model.rate(i), phi0, level, sign) {
            Some(tau) => {
                out = PassageSample {
                    tau: Some(tau),
                    hit_state: Some(i),
                    censored: false,
                };
                true
            }
            None => false,
        }
    })?;
    Ok(out)
}

/// Censoring horizon `s_max + 20·max(ℓ, 1)/v_min`.
pub fn default_horizon(model: &FluidModel, s_max: f64, level: f64) -> f64 {
    s_max + 20.0 * level.max(1.0) / model.states().v_min()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PassageQuery {
    pub s0: f64,
    pub i0: usize,
    pub level: f64,
    pub sign: Sign,
    pub n: usize,
    pub horizon: f64,
    pub seed: u64,
}

/// Runs `n` replicas and returns the per-replica passage samples in replica
/// order.
pub fn passage_samples(
    model: &FluidModel,
    q: &PassageQuery,
    sampler: Sampler,
) -> Result<Vec<PassageSample>, McError> {
    if !(q.level >= 0.0 && q.level.is_finite()) {
        return Err(McError::InvalidArgument(format!("level must be >= 0, got {}", q.level)));
    }
    check_start(model, q.s0, q.i0, q.horizon)?;
    (0..q.n as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = replica_rng(q.seed, r);
            let p = simulate_passage(model, q.s0, q.i0, q.level, q.sign, q.horizon, sampler, &mut rng)?;
            if let Some(j) = p.hit_state {
                assert_eq!(
                    model.states().sign_of(j),
                    q.sign,
                    "passage landed outside the crossing class"
                );
            }
            Ok(p)
        })
        .collect()
}

pub fn estimate_expectation<P: Payoff + ?Sized>(
    model: &FluidModel,
    g: &P,
    q: &PassageQuery,
) -> Result<Estimate, McError> {
    if q.n < 2 {
        return Err(McError::InvalidArgument(format!("need n >= 2 replicas, got {}", q.n)));
    }
    let samples = passage_samples(model, q, Sampler::HazardInversion)?;
    let values: Vec<f64> = samples
        .iter()
        .map(|p| match (p.tau, p.hit_state) {
            (Some(t), Some(j)) => g.value(t, j),
            _ => 0.0,
        })
        .collect();
    let censored = samples.iter().filter(|p| p.censored).count();
    let (mean, stderr) = mean_stderr(&values);
    Ok(Estimate {
        mean,
        stderr,
        n: q.n,
        censor_fraction: censored as f64 / q.n as f64,
        bias_bound: g.tail_bound(q.horizon),
        seed: q.seed,
    })
}

/// First holding time after `s0` (censored at `horizon` as `+∞`) for each
/// replica.
pub fn holding_times(
    model: &FluidModel,
    s0: f64,
    i0: usize,
    horizon: f64,
    n: usize,
    seed: u64,
    sampler: Sampler,
) -> Result<Vec<f64>, McError> {
    check_start(model, s0, i0, horizon)?;
    (0..n as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = replica_rng(seed, r);
            let p = sample_path_with(model, s0, i0, horizon, sampler, &mut rng)?;
            Ok(p.jump_times.first().map_or(f64::INFINITY, |t| t - s0))
        })
        .collect()
}

/// Second jump time after `s0` (or `+∞` if fewer than two jumps before
/// `horizon`) for each replica.
pub fn second_jump_times(
    model: &FluidModel,
    s0: f64,
    i0: usize,
    horizon: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<f64>, McError> {
    check_start(model, s0, i0, horizon)?;
    (0..n as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = replica_rng(seed, r);
            let p = sample_path(model, s0, i0, horizon, &mut rng)?;
            Ok(p.jump_times.get(1).map_or(f64::INFINITY, |t| t - s0))
        })
        .collect()
}

/// State occupied at time `t` for each replica.
pub fn states_at(model: &FluidModel, s0: f64, i0: usize, t: f64, n: usize, seed: u64) -> Result<Vec<usize>, McError> {
    check_start(model, s0, i0, t)?;
    (0..n as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = replica_rng(seed, r);
            let p = sample_path(model, s0, i0, t, &mut rng)?;
            Ok(*p.states.last().expect("paths have at least one segment"))
        })
        .collect()
}
