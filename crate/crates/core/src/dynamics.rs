//! Time evolution of the truncated system `df/dt = U f`.
//!
//! The generator is stiff (diagonal entries grow with `n`), so only
//! L-stable implicit one-step schemes are offered. Each step needs solves
//! with `I - c h U`; those matrices are upper Hessenberg and are factored
//! once per distinct step size.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::LinalgError;
use crate::model::CoefficientModel;
use crate::operators::{assemble, OperatorError, OperatorKind, ShiftedSolver, TruncatedOperator, TruncationPolicy};
use crate::spaces::{compensated_sum, moment_slice, power_norm, SpaceError, StateVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("step size underflow at t={t}: h={h} fell below {min}")]
    StepUnderflow { t: f64, h: f64, min: f64 },
    #[error("state became non-finite at t={t}")]
    NonFinite { t: f64 },
    #[error("initial state has a negative entry f_{index} = {value}")]
    NegativeInitial { index: usize, value: f64 },
    #[error("invalid time span [{0}, {1}]")]
    BadSpan(f64, f64),
    #[error("invalid solver option: {0}")]
    BadOption(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Fourth-order singly diagonally implicit Runge-Kutta, L-stable and
    /// stiffly accurate, with an embedded third-order estimate.
    #[default]
    Sdirk4,
    /// Second order, L-stable, one factorization per step size.
    TrBdf2,
    /// First order with step-doubling error control.
    ImplicitEuler,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
    pub initial_step: Option<f64>,
    pub scheme: Scheme,
    pub policy: TruncationPolicy,
    /// Spacing of the output grid; `None` gives 100 equal intervals.
    pub output_step: Option<f64>,
    /// Order `m` of the `[m]`-norm recorded in the trace.
    pub norm_order: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            rtol: 1e-8,
            atol: 1e-12,
            max_step: 0.5,
            initial_step: None,
            scheme: Scheme::Sdirk4,
            policy: TruncationPolicy::Absorbing,
            output_step: None,
            norm_order: 2.0,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let bad = |s: &str| Err(DynamicsError::BadOption(s.into()));
        if !(self.rtol > 0.0) || !(self.atol >= 0.0) {
            return bad("rtol must be positive and atol nonnegative");
        }
        if !(self.max_step > 0.0) {
            return bad("max_step must be positive");
        }
        if matches!(self.initial_step, Some(h) if !(h > 0.0)) {
            return bad("initial_step must be positive");
        }
        if matches!(self.output_step, Some(h) if !(h > 0.0)) {
            return bad("output_step must be positive");
        }
        if !(self.norm_order >= 0.0) {
            return bad("norm_order must be nonnegative");
        }
        Ok(())
    }

    /// Output times `t0, t0 + dt, ..., t1`, with `t1` always included.
    pub fn output_grid(&self, t0: f64, t1: f64) -> Vec<f64> {
        let dt = self.output_step.unwrap_or((t1 - t0) / 100.0);
        let count = ((t1 - t0) / dt - 1e-9).ceil().max(1.0) as usize;
        let mut grid: Vec<f64> = (0..count).map(|k| t0 + k as f64 * dt).collect();
        grid.push(t1);
        grid
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub factorizations: usize,
    pub min_entry: f64,
}

/// Sampled trajectory of one integration run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationTrace {
    pub truncation: usize,
    pub policy: TruncationPolicy,
    /// States are of `exp(-shift t) f(t)`.
    pub shift: f64,
    pub norm_order: f64,
    pub times: Vec<f64>,
    pub states: Vec<StateVector>,
    pub mass: Vec<f64>,
    pub norm_m: Vec<f64>,
    /// `N g_N f_N`, the rate at which mass leaves through size `N`.
    pub boundary_flux: Vec<f64>,
    /// Time integral of the boundary flux.
    pub leaked_mass: Vec<f64>,
    pub stats: SolverStats,
}

impl SimulationTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

const GAMMA: f64 = 2.0 - std::f64::consts::SQRT_2;

/// Local error constant of TR-BDF2.
fn trbdf2_error_constant() -> f64 {
    (-3.0 * GAMMA * GAMMA + 4.0 * GAMMA - 2.0) / (12.0 * (2.0 - GAMMA))
}

/// Integrator for `dy/dt = (U - shift I) y`, optionally keeping `y`
/// orthogonal to a left eigenvector.
pub struct Evolver {
    op: TruncatedOperator,
    shift: f64,
    /// `(e, h)` with `<h, e> = 1`; after each step `y -= <h, y> e`.
    deflation: Option<(Vec<f64>, Vec<f64>)>,
    opts: SolverOptions,
    cache: Vec<(u64, ShiftedSolver)>,
    last_growth: f64,
    stats: SolverStats,
}

const CACHE_SLOTS: usize = 4;

const SDIRK_GAMMA: f64 = 0.25;
/// Strictly lower part of the SDIRK4 tableau; the diagonal is `SDIRK_GAMMA`.
const SDIRK_A: [[f64; 4]; 5] = [
    [0.0, 0.0, 0.0, 0.0],
    [0.5, 0.0, 0.0, 0.0],
    [17.0 / 50.0, -1.0 / 25.0, 0.0, 0.0],
    [371.0 / 1360.0, -137.0 / 2720.0, 15.0 / 544.0, 0.0],
    [25.0 / 24.0, -49.0 / 48.0, 125.0 / 16.0, -85.0 / 12.0],
];
/// Fourth-order weights minus the embedded third-order weights.
const SDIRK_ERR: [f64; 5] = [-9.0 / 48.0, -81.0 / 96.0, 25.0 / 32.0, 0.0, 0.25];

impl Evolver {
    pub fn new(model: &CoefficientModel, n: usize, shift: f64, opts: &SolverOptions) -> Result<Self, DynamicsError> {
        opts.validate()?;
        let op = assemble(model, n, OperatorKind::Full, opts.policy)?;
        let last_growth = match opts.policy {
            TruncationPolicy::Absorbing => model.g(n),
            _ => 0.0,
        };
        Ok(Evolver {
            op,
            shift,
            deflation: None,
            opts: opts.clone(),
            cache: Vec::new(),
            last_growth,
            stats: SolverStats { min_entry: f64::INFINITY, ..Default::default() },
        })
    }

    pub fn with_deflation(mut self, e: Vec<f64>, h: Vec<f64>) -> Self {
        self.deflation = Some((e, h));
        self
    }

    pub fn operator(&self) -> &TruncatedOperator {
        &self.op
    }

    pub fn stats(&self) -> &SolverStats {
        &self.stats
    }

    fn size(&self) -> usize {
        self.op.size()
    }

    /// `(U - shift) x`.
    fn rhs(&self, x: &[f64], out: &mut [f64]) -> Result<(), DynamicsError> {
        self.op.apply_slice(x, out)?;
        if self.shift != 0.0 {
            for (o, xi) in out.iter_mut().zip(x) {
                *o -= self.shift * xi;
            }
        }
        Ok(())
    }

    /// Factorization of `I - c (U - shift)`.
    fn solver(&mut self, c: f64) -> Result<usize, DynamicsError> {
        let key = c.to_bits();
        if let Some(pos) = self.cache.iter().position(|(k, _)| *k == key) {
            return Ok(pos);
        }
        let s = self.op.shifted_solver(1.0 + c * self.shift, -c)?;
        self.stats.factorizations += 1;
        if self.cache.len() == CACHE_SLOTS {
            self.cache.remove(0);
        }
        self.cache.push((key, s));
        Ok(self.cache.len() - 1)
    }

    fn solve(&mut self, c: f64, b: &mut [f64]) -> Result<(), DynamicsError> {
        let idx = self.solver(c)?;
        self.cache[idx].1.solve_in_place(b)?;
        Ok(())
    }

    fn deflate(&self, y: &mut [f64]) {
        if let Some((e, h)) = &self.deflation {
            let c = compensated_sum(h.iter().zip(y.iter()).map(|(a, b)| a * b));
            for (yi, ei) in y.iter_mut().zip(e) {
                *yi -= c * ei;
            }
        }
    }

    fn error_norm(&self, est: &[f64], y0: &[f64], y1: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..est.len() {
            let sc = self.opts.atol + self.opts.rtol * y0[i].abs().max(y1[i].abs());
            let r = if sc > 0.0 { est[i].abs() / sc } else if est[i] == 0.0 { 0.0 } else { f64::INFINITY };
            worst = worst.max(r);
        }
        worst
    }

    /// One TR-BDF2 step; returns the new state and the error norm.
    fn step_trbdf2(&mut self, y: &[f64], h: f64) -> Result<(Vec<f64>, f64), DynamicsError> {
        let n = self.size();
        let d = 0.5 * GAMMA;
        let dh = d * h;
        let mut f0 = vec![0.0; n];
        self.rhs(y, &mut f0)?;

        let rhs1: Vec<f64> = y.iter().zip(&f0).map(|(yi, fi)| yi + dh * fi).collect();
        let mut z = rhs1.clone();
        self.solve(dh, &mut z)?;
        let f1: Vec<f64> = z.iter().zip(&rhs1).map(|(zi, ri)| (zi - ri) / dh).collect();

        let w = 1.0 / (GAMMA * (2.0 - GAMMA));
        let q = (1.0 - GAMMA) * (1.0 - GAMMA);
        let rhs2: Vec<f64> = z.iter().zip(y).map(|(zi, yi)| w * (zi - q * yi)).collect();
        let mut y1 = rhs2.clone();
        self.solve(dh, &mut y1)?;
        let f2: Vec<f64> = y1.iter().zip(&rhs2).map(|(yi, ri)| (yi - ri) / dh).collect();

        let c = 2.0 * trbdf2_error_constant() * h;
        let mut est: Vec<f64> = (0..n)
            .map(|i| c * ((f2[i] - f1[i]) / (1.0 - GAMMA) - (f1[i] - f0[i]) / GAMMA))
            .collect();
        self.solve(dh, &mut est)?;
        let err = self.error_norm(&est, y, &y1);
        Ok((y1, err))
    }

    /// One SDIRK4 step. Every stage solves with `I - h/4 (U - shift)`.
    fn step_sdirk4(&mut self, y: &[f64], h: f64) -> Result<(Vec<f64>, f64), DynamicsError> {
        let n = self.size();
        let gh = SDIRK_GAMMA * h;
        let mut k: Vec<Vec<f64>> = Vec::with_capacity(5);
        let mut stage = Vec::new();
        for row in SDIRK_A.iter() {
            let mut rhs = y.to_vec();
            for (j, kj) in k.iter().enumerate() {
                let a = row[j] * h;
                for (r, v) in rhs.iter_mut().zip(kj) {
                    *r += a * v;
                }
            }
            stage = rhs.clone();
            self.solve(gh, &mut stage)?;
            let ki: Vec<f64> = stage.iter().zip(&rhs).map(|(s, r)| (s - r) / gh).collect();
            k.push(ki);
        }
        // Stiffly accurate: the last stage is the new state.
        let y1 = stage;
        let mut est = vec![0.0; n];
        for (kj, w) in k.iter().zip(SDIRK_ERR) {
            if w != 0.0 {
                for (e, v) in est.iter_mut().zip(kj) {
                    *e += h * w * v;
                }
            }
        }
        self.solve(gh, &mut est)?;
        let err = self.error_norm(&est, y, &y1);
        Ok((y1, err))
    }

    /// Implicit Euler with step doubling; returns the two-half-step state.
    fn step_euler(&mut self, y: &[f64], h: f64) -> Result<(Vec<f64>, f64), DynamicsError> {
        let mut full = y.to_vec();
        self.solve(h, &mut full)?;
        let mut half = y.to_vec();
        self.solve(0.5 * h, &mut half)?;
        self.solve(0.5 * h, &mut half)?;
        let est: Vec<f64> = half.iter().zip(&full).map(|(a, b)| a - b).collect();
        let err = self.error_norm(&est, y, &half);
        Ok((half, err))
    }

    fn order(&self) -> f64 {
        match self.opts.scheme {
            Scheme::Sdirk4 => 3.0,
            Scheme::TrBdf2 => 2.0,
            Scheme::ImplicitEuler => 1.0,
        }
    }

    fn flux(&self, y: &[f64]) -> f64 {
        let n = self.size();
        n as f64 * self.last_growth * y[n - 1]
    }

    /// Advances `y0` through `times` (ascending, `times[0]` is the start) and
    /// returns the states together with the cumulative leaked mass at each time.
    pub fn run(&mut self, y0: &[f64], times: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<f64>), DynamicsError> {
        if y0.len() != self.size() {
            return Err(OperatorError::DimensionMismatch { expected: self.size(), got: y0.len() }.into());
        }
        if times.is_empty() {
            return Ok((Vec::new(), Vec::new()));
        }
        let t_end = *times.last().expect("nonempty");
        let span = t_end - times[0];
        let min_step = 1e-14 * span.abs().max(1.0);
        let mut y = y0.to_vec();
        self.deflate(&mut y);
        let mut t = times[0];
        let mut leaked = 0.0;
        let mut states = vec![y.clone()];
        let mut leaked_out = vec![0.0];
        let mut h = self
            .opts
            .initial_step
            .unwrap_or_else(|| (1e-3 * span).min(self.opts.max_step))
            .min(self.opts.max_step);
        let safety = 0.9;
        for &target in &times[1..] {
            while t < target {
                let remaining = target - t;
                let last = h >= remaining * (1.0 - 1e-12);
                let step = if last { remaining } else { h };
                if step < min_step {
                    return Err(DynamicsError::StepUnderflow { t, h: step, min: min_step });
                }
                let (mut y1, err) = match self.opts.scheme {
                    Scheme::Sdirk4 => self.step_sdirk4(&y, step)?,
                    Scheme::TrBdf2 => self.step_trbdf2(&y, step)?,
                    Scheme::ImplicitEuler => self.step_euler(&y, step)?,
                };
                let factor = if err == 0.0 { 5.0 } else { (safety * err.powf(-1.0 / (self.order() + 1.0))).clamp(0.2, 5.0) };
                if err <= 1.0 {
                    if y1.iter().any(|v| !v.is_finite()) {
                        return Err(DynamicsError::NonFinite { t: t + step });
                    }
                    self.deflate(&mut y1);
                    leaked += 0.5 * step * (self.flux(&y) + self.flux(&y1));
                    let lo = y1.iter().cloned().fold(f64::INFINITY, f64::min);
                    self.stats.min_entry = self.stats.min_entry.min(lo);
                    self.stats.accepted_steps += 1;
                    y = y1;
                    t = if last { target } else { t + step };
                    // Grow only by a clear margin so that factorizations are reused.
                    if factor > 1.5 && !last {
                        h = (h * factor.min(2.0)).min(self.opts.max_step);
                    } else if factor > 1.5 && last {
                        h = h.max(step);
                    }
                } else {
                    self.stats.rejected_steps += 1;
                    h = step * factor.min(0.9);
                }
            }
            states.push(y.clone());
            leaked_out.push(leaked);
        }
        Ok((states, leaked_out))
    }
}

/// Integrates the truncated system from `f_in` over `[t0, t1]`.
pub fn integrate(
    model: &CoefficientModel,
    f_in: &StateVector,
    t_span: (f64, f64),
    opts: &SolverOptions,
) -> Result<SimulationTrace, DynamicsError> {
    integrate_shifted(model, f_in, t_span, opts, 0.0)
}

/// Integrates `df/dt = (U - shift I) f`, i.e. the trajectory of `exp(-shift t) f(t)`.
pub fn integrate_shifted(
    model: &CoefficientModel,
    f_in: &StateVector,
    t_span: (f64, f64),
    opts: &SolverOptions,
    shift: f64,
) -> Result<SimulationTrace, DynamicsError> {
    let (t0, t1) = t_span;
    if !(t1 > t0) || !t0.is_finite() || !t1.is_finite() {
        return Err(DynamicsError::BadSpan(t0, t1));
    }
    if let Some(i) = f_in.as_slice().iter().position(|v| *v < 0.0) {
        return Err(DynamicsError::NegativeInitial { index: i + 1, value: f_in.as_slice()[i] });
    }
    let n = f_in.len();
    let mut ev = Evolver::new(model, n, shift, opts)?;
    let times = opts.output_grid(t0, t1);
    let (states, leaked) = ev.run(f_in.as_slice(), &times)?;
    let mut stats = ev.stats().clone();
    if stats.accepted_steps == 0 {
        stats.min_entry = f_in.as_slice().iter().cloned().fold(f64::INFINITY, f64::min);
    }
    let g_last = if opts.policy == TruncationPolicy::Absorbing { model.g(n) } else { 0.0 };
    let mass: Vec<f64> = states.iter().map(|s| moment_slice(s, 1.0)).collect();
    let norm_m: Vec<f64> = states.iter().map(|s| power_norm(s, opts.norm_order)).collect();
    let boundary_flux: Vec<f64> = states.iter().map(|s| n as f64 * g_last * s[n - 1]).collect();
    Ok(SimulationTrace {
        truncation: n,
        policy: opts.policy,
        shift,
        norm_order: opts.norm_order,
        times,
        states: states.into_iter().map(StateVector::from_vec_unchecked).collect(),
        mass,
        norm_m,
        boundary_flux,
        leaked_mass: leaked,
        stats,
    })
}

/// Mass production rate predicted by the truncated equations for state `f`.
pub fn mass_rate(model: &CoefficientModel, f: &[f64], policy: TruncationPolicy) -> f64 {
    let n = f.len();
    let bulk = compensated_sum((1..n).map(|i| (model.g(i) - model.d(i)) * f[i - 1]));
    let last = f[n - 1];
    match policy {
        TruncationPolicy::Absorbing => bulk - model.d(n) * last - n as f64 * model.g(n) * last,
        TruncationPolicy::Reflecting => bulk - model.d(n) * last,
        TruncationPolicy::Conservative => bulk + (model.g(n) - model.d(n)) * last,
    }
}

/// Three-point derivative on a nonuniform grid (second order everywhere).
fn nonuniform_derivative(t: &[f64], y: &[f64]) -> Vec<f64> {
    let k = t.len();
    let mut d = vec![0.0; k];
    let three = |i0: usize, at: usize| {
        let (x0, x1, x2) = (t[i0], t[i0 + 1], t[i0 + 2]);
        let x = t[at];
        let l0 = ((x - x1) + (x - x2)) / ((x0 - x1) * (x0 - x2));
        let l1 = ((x - x0) + (x - x2)) / ((x1 - x0) * (x1 - x2));
        let l2 = ((x - x0) + (x - x1)) / ((x2 - x0) * (x2 - x1));
        l0 * y[i0] + l1 * y[i0 + 1] + l2 * y[i0 + 2]
    };
    for (i, di) in d.iter_mut().enumerate() {
        let i0 = i.saturating_sub(1).min(k - 3);
        *di = three(i0, i);
    }
    d
}

/// `max_t |dM/dt - mass_rate(f(t))|` with `dM/dt` from finite differences on
/// the stored grid. For shifted traces the shift term is included.
pub fn mass_balance_residual(trace: &SimulationTrace, model: &CoefficientModel) -> Result<f64, DynamicsError> {
    if trace.len() < 3 {
        return Err(DynamicsError::BadOption("mass balance needs at least 3 grid points".into()));
    }
    let dm = nonuniform_derivative(&trace.times, &trace.mass);
    let mut worst: f64 = 0.0;
    for (i, s) in trace.states.iter().enumerate() {
        let predicted = mass_rate(model, s.as_slice(), trace.policy) - trace.shift * trace.mass[i];
        worst = worst.max((dm[i] - predicted).abs());
    }
    Ok(worst)
}

/// `((exp(tV/n) exp(tF/n))^n) f_in` with dense matrix exponentials.
pub fn trotter_evolve(
    model: &CoefficientModel,
    f_in: &StateVector,
    t: f64,
    n_steps: usize,
    policy: TruncationPolicy,
) -> Result<StateVector, DynamicsError> {
    if n_steps == 0 {
        return Err(DynamicsError::BadOption("n_steps must be at least 1".into()));
    }
    let n = f_in.len();
    let tau = t / n_steps as f64;
    let v = assemble(model, n, OperatorKind::BirthDeath, policy)?.to_dense() * tau;
    let f = assemble(model, n, OperatorKind::Fragmentation, policy)?.to_dense() * tau;
    let step: DMatrix<f64> = v.exp() * f.exp();
    let mut x = DVector::from_column_slice(f_in.as_slice());
    for k in 0..n_steps {
        x = &step * x;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(DynamicsError::NonFinite { t: tau * (k + 1) as f64 });
        }
    }
    Ok(StateVector::from_vec_unchecked(x.as_slice().to_vec()))
}

/// `exp(t Op) f` for a truncated operator, densely.
pub fn expm_apply(op: &TruncatedOperator, f: &StateVector, t: f64) -> Result<StateVector, DynamicsError> {
    if f.len() != op.size() {
        return Err(OperatorError::DimensionMismatch { expected: op.size(), got: f.len() }.into());
    }
    let p = Propagator::new(op, 0.0, t)?;
    Ok(StateVector::from_vec_unchecked(p.apply(f.as_slice())))
}

/// Largest truncation for which a dense propagator is built.
pub const PROPAGATOR_LIMIT: usize = 3000;

/// The exact flow map `exp(dt (U - shift I))` of the truncated system, held densely.
#[derive(Clone, Debug)]
pub struct Propagator {
    dt: f64,
    shift: f64,
    matrix: DMatrix<f64>,
}

impl Propagator {
    pub fn new(op: &TruncatedOperator, shift: f64, dt: f64) -> Result<Self, DynamicsError> {
        if op.size() > PROPAGATOR_LIMIT {
            return Err(DynamicsError::BadOption(format!(
                "dense propagator requested at N={} above the limit {PROPAGATOR_LIMIT}",
                op.size()
            )));
        }
        if !dt.is_finite() {
            return Err(DynamicsError::BadOption(format!("propagator time step {dt}")));
        }
        let mut a = op.to_dense();
        for i in 0..a.nrows() {
            a[(i, i)] -= shift;
        }
        let matrix = (a * dt).exp();
        Ok(Propagator { dt, shift, matrix })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let y = &self.matrix * DVector::from_column_slice(x);
        y.as_slice().to_vec()
    }
}
