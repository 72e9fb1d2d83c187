//! Stiff-capable integration of autonomous ODE systems.
//!
//! [`solve`] is a variable-order (1 to 5), variable-step BDF method in the
//! quasi-constant step size formulation: the solver carries a table of
//! backward differences of the interpolating polynomial, rescales it when the
//! step changes, and solves the implicit corrector with a simplified Newton
//! iteration on `I - c J`, where `J` is a central finite-difference Jacobian.
//! Output on the requested grid comes from the interpolating polynomial of
//! the step that covers each grid time.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::symbolic::{SymbolicError, SystemExpr};

const MAX_ORDER: usize = 5;
const NEWTON_MAXITER: usize = 4;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Highest BDF order the controller may select, in `1..=5`.
    pub max_order: usize,
    /// Initial step; chosen from the local derivative scale when absent.
    pub first_step: Option<f64>,
    /// Upper bound on the step size; unbounded when absent.
    pub max_step: Option<f64>,
    pub max_steps: usize,
    /// States larger than this in magnitude count as a blow-up.
    pub max_abs_state: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            abs_tol: 1e-6,
            rel_tol: 1e-5,
            max_order: MAX_ORDER,
            first_step: None,
            max_step: None,
            max_steps: 200_000,
            max_abs_state: 1e8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("step size underflow at t = {t}")]
    StepSizeUnderflow { t: f64 },
    #[error("non-finite or diverging state at t = {t}")]
    NonFiniteState { t: f64 },
    #[error("maximum number of steps exceeded at t = {t}")]
    MaxStepsExceeded { t: f64 },
    #[error("invalid solver input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Symbolic(#[from] SymbolicError),
}

impl SolveError {
    /// Last time the solution was known to be valid.
    pub fn last_time(&self) -> Option<f64> {
        match self {
            SolveError::StepSizeUnderflow { t }
            | SolveError::NonFiniteState { t }
            | SolveError::MaxStepsExceeded { t } => Some(*t),
            _ => None,
        }
    }
}

/// Solution sampled on a time grid; `values` is row-major `times.len() x dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

/// `n` uniform points from `start` to `end` inclusive.
pub fn linspace(start: f64, end: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![start],
        _ => (0..n)
            .map(|i| start + (end - start) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

fn rms(v: impl Iterator<Item = f64>) -> f64 {
    let mut s = 0.0;
    let mut n = 0usize;
    for x in v {
        s += x * x;
        n += 1;
    }
    (s / n.max(1) as f64).sqrt()
}

/// Central-difference Jacobian `J[i][j] = d f_i / d u_j`, row-major.
/// The step for coordinate `j` is `eps * max(1, |u_j|)`.
pub fn jacobian_fd(sys: &SystemExpr, u: &[f64], eps: f64) -> Result<Vec<f64>, SymbolicError> {
    sys.evaluate(u)?;
    let mut f = |x: &[f64], out: &mut [f64]| sys.evaluate_into(x, out).is_ok();
    jacobian_central(&mut f, u, eps).ok_or(SymbolicError::Domain("jacobian stencil left the domain"))
}

fn jacobian_central<F>(f: &mut F, u: &[f64], eps: f64) -> Option<Vec<f64>>
where
    F: FnMut(&[f64], &mut [f64]) -> bool,
{
    let d = u.len();
    let mut jac = vec![0.0; d * d];
    let mut x = u.to_vec();
    let mut fp = vec![0.0; d];
    let mut fm = vec![0.0; d];
    for j in 0..d {
        let h = eps * u[j].abs().max(1.0);
        x[j] = u[j] + h;
        if !f(&x, &mut fp) {
            return None;
        }
        x[j] = u[j] - h;
        if !f(&x, &mut fm) {
            return None;
        }
        x[j] = u[j];
        for i in 0..d {
            jac[i * d + j] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    Some(jac)
}

/// Integrate `u' = sys(u)` from `u0` at `t_grid[0]` and sample on `t_grid`.
pub fn solve(sys: &SystemExpr, u0: &[f64], t_grid: &[f64], cfg: &SolverConfig) -> Result<Trajectory, SolveError> {
    if u0.len() != sys.dim() {
        return Err(SolveError::InvalidInput(format!(
            "initial condition has {} entries for a {}-dimensional system",
            u0.len(),
            sys.dim()
        )));
    }
    if sys.has_placeholder() {
        return Err(SymbolicError::PlaceholderPresent.into());
    }
    let mut f = |_t: f64, u: &[f64], out: &mut [f64]| sys.evaluate_into(u, out).is_ok();
    solve_fn(&mut f, u0, t_grid, cfg)
}

/// [`solve`] for an arbitrary right-hand side `f(t, u, out) -> ok`.
pub fn solve_fn<F>(f: &mut F, u0: &[f64], t_grid: &[f64], cfg: &SolverConfig) -> Result<Trajectory, SolveError>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> bool,
{
    validate(u0, t_grid, cfg)?;
    let n = u0.len();
    let mut values = Vec::with_capacity(t_grid.len() * n);
    values.extend_from_slice(u0);
    if t_grid.len() == 1 {
        return Ok(Trajectory {
            times: t_grid.to_vec(),
            dim: n,
            values,
        });
    }
    let t_end = *t_grid.last().unwrap();
    let mut solver = Bdf::new(f, t_grid[0], u0, t_end, cfg)?;
    let mut next = 1;
    let mut buf = vec![0.0; n];
    let mut steps = 0usize;
    while next < t_grid.len() {
        if steps >= cfg.max_steps {
            return Err(SolveError::MaxStepsExceeded { t: solver.t });
        }
        solver.step(f)?;
        steps += 1;
        while next < t_grid.len() && t_grid[next] <= solver.t {
            if t_grid[next] == solver.t {
                buf.copy_from_slice(&solver.y);
            } else {
                solver.dense(t_grid[next], &mut buf);
            }
            values.extend_from_slice(&buf);
            next += 1;
        }
    }
    Ok(Trajectory {
        times: t_grid.to_vec(),
        dim: n,
        values,
    })
}

fn validate(u0: &[f64], t_grid: &[f64], cfg: &SolverConfig) -> Result<(), SolveError> {
    if t_grid.is_empty() {
        return Err(SolveError::InvalidInput("empty time grid".into()));
    }
    if t_grid.windows(2).any(|w| !(w[1] > w[0])) || t_grid.iter().any(|t| !t.is_finite()) {
        return Err(SolveError::InvalidInput(
            "time grid must be finite and strictly increasing".into(),
        ));
    }
    if u0.is_empty() || u0.iter().any(|x| !x.is_finite()) {
        return Err(SolveError::InvalidInput("initial condition must be finite".into()));
    }
    if !(cfg.abs_tol > 0.0 && cfg.rel_tol > 0.0) {
        return Err(SolveError::InvalidInput("tolerances must be positive".into()));
    }
    if !(1..=MAX_ORDER).contains(&cfg.max_order) {
        return Err(SolveError::InvalidInput("max_order must be in 1..=5".into()));
    }
    Ok(())
}

/// `R` matrix that maps the difference table for step `h` to step `factor*h`.
fn compute_r(order: usize, factor: f64) -> DMatrix<f64> {
    let mut m = DMatrix::<f64>::zeros(order + 1, order + 1);
    for j in 0..=order {
        m[(0, j)] = 1.0;
    }
    for i in 1..=order {
        for j in 1..=order {
            m[(i, j)] = (i as f64 - 1.0 - factor * j as f64) / i as f64;
        }
    }
    // Cumulative product down the columns.
    for i in 1..=order {
        for j in 0..=order {
            m[(i, j)] *= m[(i - 1, j)];
        }
    }
    m
}

struct Bdf {
    n: usize,
    t: f64,
    y: Vec<f64>,
    t_end: f64,
    h_abs: f64,
    order: usize,
    n_equal_steps: usize,
    /// Rows `0..MAX_ORDER+3` of backward differences, each of length `n`.
    diffs: Vec<Vec<f64>>,
    jac: DMatrix<f64>,
    lu: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
    gamma: [f64; MAX_ORDER + 1],
    error_const: [f64; MAX_ORDER + 2],
    newton_tol: f64,
    cfg: SolverConfig,
}

impl Bdf {
    fn new<F>(f: &mut F, t0: f64, y0: &[f64], t_end: f64, cfg: &SolverConfig) -> Result<Self, SolveError>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> bool,
    {
        let n = y0.len();
        let mut f0 = vec![0.0; n];
        if !f(t0, y0, &mut f0) || f0.iter().any(|x| !x.is_finite()) {
            return Err(SolveError::NonFiniteState { t: t0 });
        }
        let h_abs = match cfg.first_step {
            Some(h) if h > 0.0 => h.min(t_end - t0),
            _ => initial_step(f, t0, y0, &f0, t_end, cfg),
        };
        let mut gamma = [0.0; MAX_ORDER + 1];
        for k in 1..=MAX_ORDER {
            gamma[k] = gamma[k - 1] + 1.0 / k as f64;
        }
        let mut error_const = [0.0; MAX_ORDER + 2];
        for (k, e) in error_const.iter_mut().enumerate() {
            *e = 1.0 / (k + 1) as f64;
        }
        let mut diffs = vec![vec![0.0; n]; MAX_ORDER + 3];
        diffs[0].copy_from_slice(y0);
        for i in 0..n {
            diffs[1][i] = f0[i] * h_abs;
        }
        let jac = fd_jac(f, t0, y0).ok_or(SolveError::NonFiniteState { t: t0 })?;
        Ok(Self {
            n,
            t: t0,
            y: y0.to_vec(),
            t_end,
            h_abs,
            order: 1,
            n_equal_steps: 0,
            diffs,
            jac,
            lu: None,
            gamma,
            error_const,
            newton_tol: (10.0 * f64::EPSILON / cfg.rel_tol).max(0.03f64.min(cfg.rel_tol.sqrt())),
            cfg: *cfg,
        })
    }

    fn change_diffs(&mut self, order: usize, factor: f64) {
        let r = compute_r(order, factor);
        let u = compute_r(order, 1.0);
        let ru = r * u;
        let old: Vec<Vec<f64>> = self.diffs[..=order].to_vec();
        for i in 0..=order {
            for c in 0..self.n {
                let mut s = 0.0;
                for (k, row) in old.iter().enumerate() {
                    s += ru[(k, i)] * row[c];
                }
                self.diffs[i][c] = s;
            }
        }
    }

    fn scale(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .map(|v| self.cfg.abs_tol + self.cfg.rel_tol * v.abs())
            .collect()
    }

    fn step<F>(&mut self, f: &mut F) -> Result<(), SolveError>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> bool,
    {
        let t = self.t;
        let n = self.n;
        let min_step = 10.0 * (next_up(t) - t).abs();
        let mut h_abs = self.h_abs;
        let max_step = self.cfg.max_step.unwrap_or(f64::INFINITY);
        if h_abs > max_step {
            let factor = max_step / h_abs;
            self.change_diffs(self.order, factor);
            h_abs = max_step;
            self.n_equal_steps = 0;
        } else if h_abs < min_step {
            let factor = min_step / h_abs;
            self.change_diffs(self.order, factor);
            h_abs = min_step;
            self.n_equal_steps = 0;
        }
        let order = self.order;
        let mut current_jac = false;

        let (t_new, y_new, d, error_norm, safety, scale) = loop {
            if h_abs < min_step {
                return Err(SolveError::StepSizeUnderflow { t });
            }
            let mut t_new = t + h_abs;
            if t_new > self.t_end {
                t_new = self.t_end;
                let factor = (t_new - t) / h_abs;
                self.change_diffs(order, factor);
                self.n_equal_steps = 0;
                self.lu = None;
            }
            h_abs = t_new - t;

            let mut y_predict = vec![0.0; n];
            for row in &self.diffs[..=order] {
                for (p, v) in y_predict.iter_mut().zip(row) {
                    *p += v;
                }
            }
            let scale = self.scale(&y_predict);
            let alpha = self.gamma[order];
            let mut psi = vec![0.0; n];
            for k in 1..=order {
                for c in 0..n {
                    psi[c] += self.diffs[k][c] * self.gamma[k];
                }
            }
            for p in psi.iter_mut() {
                *p /= alpha;
            }
            let c = h_abs / alpha;

            let mut outcome;
            loop {
                if self.lu.is_none() {
                    let m = DMatrix::<f64>::identity(n, n) - &self.jac * c;
                    self.lu = Some(m.lu());
                }
                outcome = newton(
                    f,
                    t_new,
                    &y_predict,
                    c,
                    &psi,
                    self.lu.as_ref().unwrap(),
                    &scale,
                    self.newton_tol,
                );
                if outcome.is_some() || current_jac {
                    break;
                }
                match fd_jac(f, t_new, &y_predict) {
                    Some(j) => self.jac = j,
                    None => break,
                }
                self.lu = None;
                current_jac = true;
            }

            let Some((n_iter, y_new, d)) = outcome else {
                h_abs *= 0.5;
                self.change_diffs(order, 0.5);
                self.n_equal_steps = 0;
                self.lu = None;
                continue;
            };

            let safety = 0.9 * (2 * NEWTON_MAXITER + 1) as f64 / (2 * NEWTON_MAXITER + n_iter) as f64;
            let scale = self.scale(&y_new);
            let ec = self.error_const[order];
            let error_norm = rms(d.iter().zip(&scale).map(|(di, s)| ec * di / s));
            if error_norm > 1.0 {
                let factor = MIN_FACTOR.max(safety * error_norm.powf(-1.0 / (order as f64 + 1.0)));
                h_abs *= factor;
                self.change_diffs(order, factor);
                self.n_equal_steps = 0;
                continue;
            }
            break (t_new, y_new, d, error_norm, safety, scale);
        };

        if y_new.iter().any(|v| !v.is_finite() || v.abs() > self.cfg.max_abs_state) {
            return Err(SolveError::NonFiniteState { t });
        }

        self.n_equal_steps += 1;
        self.t = t_new;
        self.y = y_new;
        self.h_abs = h_abs;

        // d = D^{k+1} y_n; update the table in place.
        for c in 0..n {
            self.diffs[order + 2][c] = d[c] - self.diffs[order + 1][c];
            self.diffs[order + 1][c] = d[c];
        }
        for i in (0..=order).rev() {
            for c in 0..n {
                self.diffs[i][c] += self.diffs[i + 1][c];
            }
        }

        if self.n_equal_steps < order + 1 {
            return Ok(());
        }

        let error_m_norm = if order > 1 {
            let ec = self.error_const[order - 1];
            rms(self.diffs[order].iter().zip(&scale).map(|(v, s)| ec * v / s))
        } else {
            f64::INFINITY
        };
        let error_p_norm = if order < self.cfg.max_order {
            let ec = self.error_const[order + 1];
            rms(self.diffs[order + 2].iter().zip(&scale).map(|(v, s)| ec * v / s))
        } else {
            f64::INFINITY
        };
        let norms = [error_m_norm, error_norm, error_p_norm];
        let mut best = 0;
        let mut factors = [0.0; 3];
        for (k, e) in norms.iter().enumerate() {
            factors[k] = e.powf(-1.0 / (order + k) as f64);
            if factors[k] > factors[best] {
                best = k;
            }
        }
        let new_order = order + best - 1;
        self.order = new_order;
        let factor = MAX_FACTOR.min(safety * factors[best]);
        self.h_abs *= factor;
        self.change_diffs(new_order, factor);
        self.n_equal_steps = 0;
        self.lu = None;
        Ok(())
    }

    /// Interpolating polynomial of the last step evaluated at `t`.
    fn dense(&self, t: f64, out: &mut [f64]) {
        out.copy_from_slice(&self.diffs[0]);
        let mut p = 1.0;
        for j in 0..self.order {
            let shift = self.t - self.h_abs * j as f64;
            let denom = self.h_abs * (j + 1) as f64;
            p *= (t - shift) / denom;
            for (o, v) in out.iter_mut().zip(&self.diffs[j + 1]) {
                *o += v * p;
            }
        }
    }
}

fn next_up(t: f64) -> f64 {
    if t.is_nan() || t == f64::INFINITY {
        return t;
    }
    if t == 0.0 {
        return f64::from_bits(1);
    }
    let bits = t.to_bits();
    f64::from_bits(if t > 0.0 { bits + 1 } else { bits - 1 })
}

fn fd_jac<F>(f: &mut F, t: f64, y: &[f64]) -> Option<DMatrix<f64>>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> bool,
{
    let n = y.len();
    let mut g = |x: &[f64], out: &mut [f64]| f(t, x, out) && out.iter().all(|v| v.is_finite());
    let j = jacobian_central(&mut g, y, 1e-6)?;
    Some(DMatrix::from_row_slice(n, n, &j))
}

#[allow(clippy::too_many_arguments)]
fn newton<F>(
    f: &mut F,
    t_new: f64,
    y_predict: &[f64],
    c: f64,
    psi: &[f64],
    lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    scale: &[f64],
    tol: f64,
) -> Option<(usize, Vec<f64>, Vec<f64>)>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> bool,
{
    let n = y_predict.len();
    let mut y = y_predict.to_vec();
    let mut d = vec![0.0; n];
    let mut fy = vec![0.0; n];
    let mut dy_norm_old: Option<f64> = None;
    for k in 0..NEWTON_MAXITER {
        if !f(t_new, &y, &mut fy) || fy.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let rhs = DVector::from_iterator(n, (0..n).map(|i| c * fy[i] - psi[i] - d[i]));
        let dy = lu.solve(&rhs)?;
        let dy_norm = rms(dy.iter().zip(scale).map(|(v, s)| v / s));
        let rate = dy_norm_old.map(|old| dy_norm / old);
        if let Some(rate) = rate {
            if rate >= 1.0 || rate.powi((NEWTON_MAXITER - k) as i32) / (1.0 - rate) * dy_norm > tol {
                return None;
            }
        }
        for i in 0..n {
            y[i] += dy[i];
            d[i] += dy[i];
        }
        if dy_norm == 0.0 || rate.is_some_and(|r| r / (1.0 - r) * dy_norm < tol) {
            return Some((k + 1, y, d));
        }
        dy_norm_old = Some(dy_norm);
    }
    None
}

fn initial_step<F>(f: &mut F, t0: f64, y0: &[f64], f0: &[f64], t_end: f64, cfg: &SolverConfig) -> f64
where
    F: FnMut(f64, &[f64], &mut [f64]) -> bool,
{
    let interval = t_end - t0;
    let scale: Vec<f64> = y0.iter().map(|v| cfg.abs_tol + v.abs() * cfg.rel_tol).collect();
    let d0 = rms(y0.iter().zip(&scale).map(|(v, s)| v / s));
    let d1 = rms(f0.iter().zip(&scale).map(|(v, s)| v / s));
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(interval);
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, fv)| y + h0 * fv).collect();
    let mut f1 = vec![0.0; y0.len()];
    let d2 = if f(t0 + h0, &y1, &mut f1) {
        rms(f1.iter().zip(f0).zip(&scale).map(|((a, b), s)| (a - b) / s)) / h0
    } else {
        f64::INFINITY
    };
    let h1 = if d1 <= 1e-15 && d2 <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.5)
    };
    (100.0 * h0)
        .min(h1)
        .min(interval)
        .min(cfg.max_step.unwrap_or(f64::INFINITY))
}

/// Coefficients of the fixed-step BDF-k formula
/// `y_{n+1} + sum_j a_j y_{n-j} = b h f(y_{n+1})`.
fn bdf_coefficients(order: usize) -> (&'static [f64], f64) {
    match order {
        1 => (&[-1.0], 1.0),
        2 => (&[-4.0 / 3.0, 1.0 / 3.0], 2.0 / 3.0),
        3 => (&[-18.0 / 11.0, 9.0 / 11.0, -2.0 / 11.0], 6.0 / 11.0),
        4 => (&[-48.0 / 25.0, 36.0 / 25.0, -16.0 / 25.0, 3.0 / 25.0], 12.0 / 25.0),
        5 => (
            &[
                -300.0 / 137.0,
                300.0 / 137.0,
                -200.0 / 137.0,
                75.0 / 137.0,
                -12.0 / 137.0,
            ],
            60.0 / 137.0,
        ),
        _ => panic!("BDF order must be in 1..=5"),
    }
}

/// Fixed-order, fixed-step BDF-k with a full Newton corrector.
///
/// `start` holds the first `order` states `y_0 .. y_{k-1}` on the grid
/// `t0 + i h`; the result covers `n_steps + 1` grid points starting at
/// `t0`.
pub fn fixed_step_bdf<F>(
    f: &mut F,
    start: &[Vec<f64>],
    t0: f64,
    h: f64,
    n_steps: usize,
    order: usize,
) -> Result<Trajectory, SolveError>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> bool,
{
    let (a, b) = bdf_coefficients(order);
    if start.len() != order {
        return Err(SolveError::InvalidInput(format!(
            "BDF-{order} needs {order} starting values"
        )));
    }
    let n = start[0].len();
    let mut hist: Vec<Vec<f64>> = start.to_vec();
    let mut fy = vec![0.0; n];
    while hist.len() < n_steps + 1 {
        let m = hist.len();
        let t_new = t0 + h * m as f64;
        // Constant part: sum_j a_j y_{n-j}.
        let mut base = vec![0.0; n];
        for (j, aj) in a.iter().enumerate() {
            for c in 0..n {
                base[c] += aj * hist[m - 1 - j][c];
            }
        }
        let mut y = hist[m - 1].clone();
        let mut converged = false;
        for _ in 0..50 {
            if !f(t_new, &y, &mut fy) {
                return Err(SolveError::NonFiniteState {
                    t: t0 + h * (m - 1) as f64,
                });
            }
            let mut g = |x: &[f64], out: &mut [f64]| f(t_new, x, out);
            let jac = jacobian_central(&mut g, &y, 1e-7).ok_or(SolveError::NonFiniteState { t: t_new })?;
            let jm = DMatrix::from_row_slice(n, n, &jac);
            let mat = DMatrix::<f64>::identity(n, n) - jm * (b * h);
            let res = DVector::from_iterator(n, (0..n).map(|c| -(y[c] + base[c] - b * h * fy[c])));
            let dy = mat.lu().solve(&res).ok_or(SolveError::StepSizeUnderflow { t: t_new })?;
            let mut step = 0.0f64;
            for c in 0..n {
                y[c] += dy[c];
                step = step.max(dy[c].abs() / (1.0 + y[c].abs()));
            }
            if step < 1e-15 {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(SolveError::StepSizeUnderflow { t: t_new });
        }
        hist.push(y);
    }
    Ok(Trajectory {
        times: (0..=n_steps).map(|i| t0 + h * i as f64).collect(),
        dim: n,
        values: hist.into_iter().flatten().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ode_dict::family;
    use crate::symbolic::Expr;

    fn decay() -> SystemExpr {
        SystemExpr::new(vec![Expr::neg(Expr::var(0))]).unwrap()
    }

    fn harmonic() -> SystemExpr {
        SystemExpr::new(vec![Expr::var(1), Expr::neg(Expr::var(0))]).unwrap()
    }

    #[test]
    fn exponential_decay() {
        let traj = solve(&decay(), &[1.0], &[0.0, 0.5, 1.0], &SolverConfig::default()).unwrap();
        assert!((traj.row(2)[0] - (-1.0f64).exp()).abs() < 1e-4);
        assert_eq!(traj.row(0), &[1.0]);
    }

    #[test]
    fn harmonic_oscillator_full_period() {
        let tau = 2.0 * std::f64::consts::PI;
        let traj = solve(
            &harmonic(),
            &[1.0, 0.0],
            &linspace(0.0, tau, 50),
            &SolverConfig::default(),
        )
        .unwrap();
        let last = traj.row(49);
        assert!((last[0] - 1.0).abs() < 1e-3 && last[1].abs() < 1e-3, "{last:?}");
    }

    #[test]
    fn stiff_problem_is_cheap() {
        // u' = -1000 (u - cos t) is stiff; explicit methods need h < 2e-3.
        let mut calls = 0usize;
        let mut f = |t: f64, u: &[f64], out: &mut [f64]| {
            calls += 1;
            out[0] = -1000.0 * (u[0] - t.cos());
            true
        };
        let cfg = SolverConfig::default();
        let traj = solve_fn(&mut f, &[0.0], &linspace(0.0, 10.0, 11), &cfg).unwrap();
        // Quasi-steady solution u ~ cos t + sin t / 1000.
        let t = 10.0f64;
        assert!((traj.row(10)[0] - (t.cos() + t.sin() / 1000.0)).abs() < 1e-4);
        assert!(calls < 5000, "{calls} evaluations");
    }

    #[test]
    fn determinism() {
        let sys = family("lorenz3d").unwrap().base_system();
        let grid = linspace(0.0, 6.0, 192);
        let a = solve(&sys, &[1.0, 1.0, 1.0], &grid, &SolverConfig::default()).unwrap();
        let b = solve(&sys, &[1.0, 1.0, 1.0], &grid, &SolverConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dense_output_consistency() {
        let sys = family("thomas").unwrap().base_system();
        let cfg = SolverConfig::default();
        let coarse = linspace(0.0, 6.0, 31);
        let fine = linspace(0.0, 6.0, 301);
        let a = solve(&sys, &[0.5, -1.0, 1.5], &coarse, &cfg).unwrap();
        let b = solve(&sys, &[0.5, -1.0, 1.5], &fine, &cfg).unwrap();
        for i in 0..31 {
            for (x, y) in a.row(i).iter().zip(b.row(i * 10)) {
                let tol = 10.0 * (cfg.abs_tol + cfg.rel_tol * y.abs());
                assert!((x - y).abs() <= tol);
            }
        }
    }

    #[test]
    fn blow_up_is_reported() {
        // u' = u^2 from u0 = 1 blows up at t = 1.
        let sys = SystemExpr::new(vec![Expr::pow(Expr::var(0), 2.0)]).unwrap();
        let err = solve(&sys, &[1.0], &linspace(0.0, 2.0, 5), &SolverConfig::default()).unwrap_err();
        let t = err.last_time().unwrap();
        assert!(t < 1.0 && t > 0.9, "{err}");
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = SolverConfig::default();
        assert!(solve(&decay(), &[1.0, 2.0], &[0.0, 1.0], &cfg).is_err());
        assert!(solve(&decay(), &[1.0], &[0.0, 0.0], &cfg).is_err());
        let bad = SolverConfig { rel_tol: 0.0, ..cfg };
        assert!(solve(&decay(), &[1.0], &[0.0, 1.0], &bad).is_err());
        let ph = SystemExpr::new(vec![Expr::mul(Expr::Placeholder, Expr::var(0))]).unwrap();
        assert!(matches!(
            solve(&ph, &[1.0], &[0.0, 1.0], &cfg),
            Err(SolveError::Symbolic(SymbolicError::PlaceholderPresent))
        ));
    }

    #[test]
    fn max_steps_is_enforced() {
        let cfg = SolverConfig {
            max_steps: 3,
            ..SolverConfig::default()
        };
        let sys = family("lorenz3d").unwrap().base_system();
        assert!(matches!(
            solve(&sys, &[1.0, 1.0, 1.0], &[0.0, 6.0], &cfg),
            Err(SolveError::MaxStepsExceeded { .. })
        ));
    }

    #[test]
    fn jacobian_of_linear_system() {
        // u' = A u with A = [[1, 2], [-3, 0.5]].
        let sys = SystemExpr::new(vec![
            Expr::sum(vec![Expr::var(0), Expr::scaled(2.0, Expr::var(1))]),
            Expr::sum(vec![Expr::scaled(-3.0, Expr::var(0)), Expr::scaled(0.5, Expr::var(1))]),
        ])
        .unwrap();
        let j = jacobian_fd(&sys, &[0.3, -2.0], 1e-6).unwrap();
        for (got, want) in j.iter().zip([1.0, 2.0, -3.0, 0.5]) {
            assert!((got - want).abs() < 1e-6);
        }
    }

    #[test]
    fn jacobian_of_lorenz() {
        let sys = family("lorenz3d").unwrap().base_system();
        let j = jacobian_fd(&sys, &[1.0, 1.0, 1.0], 1e-6).unwrap();
        // Hand-derived at (1, 1, 1): rows (-s, s, 0), (r - z, -1, -x), (y, x, -b).
        let want = [-10.0, 10.0, 0.0, 27.0, -1.0, -1.0, 1.0, 1.0, -8.0 / 3.0];
        for (got, w) in j.iter().zip(want) {
            assert!((got - w).abs() < 1e-6, "{j:?}");
        }
    }

    #[test]
    fn jacobian_step_halving_is_second_order() {
        // f = sin(u1) * u2^3 has non-zero third derivatives.
        let sys = SystemExpr::new(vec![
            Expr::mul(Expr::sin(Expr::var(0)), Expr::pow(Expr::var(1), 3.0)),
            Expr::var(0),
        ])
        .unwrap();
        let u = [0.7, 1.3];
        let exact = [0.7f64.cos() * 1.3f64.powi(3), 0.7f64.sin() * 3.0 * 1.3f64.powi(2)];
        let err = |eps: f64| {
            let j = jacobian_fd(&sys, &u, eps).unwrap();
            ((j[0] - exact[0]).abs(), (j[1] - exact[1]).abs())
        };
        let (a1, b1) = err(1e-2);
        let (a2, b2) = err(5e-3);
        assert!((a1 / a2 - 4.0).abs() < 0.1, "{}", a1 / a2);
        assert!((b1 / b2 - 4.0).abs() < 0.1, "{}", b1 / b2);
    }

    #[test]
    fn jacobian_propagates_domain_errors() {
        let sys = SystemExpr::new(vec![Expr::div(Expr::Const(1.0), Expr::var(0))]).unwrap();
        assert!(jacobian_fd(&sys, &[0.0], 1e-6).is_err());
    }

    #[test]
    fn fixed_step_orders() {
        for order in 1..=5usize {
            let error_at = |steps: usize| {
                let h = 1.0 / steps as f64;
                let start: Vec<Vec<f64>> = (0..order).map(|i| vec![(-(i as f64) * h).exp()]).collect();
                let mut f = |_t: f64, u: &[f64], out: &mut [f64]| {
                    out[0] = -u[0];
                    true
                };
                let traj = fixed_step_bdf(&mut f, &start, 0.0, h, steps, order).unwrap();
                (traj.row(steps)[0] - (-1.0f64).exp()).abs()
            };
            let e1 = error_at(20);
            let e2 = error_at(40);
            let observed = (e1 / e2).log2();
            assert!(observed >= order as f64 - 0.5, "order {order}: observed {observed}");
        }
    }
}
