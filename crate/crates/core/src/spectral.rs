//! Perron eigenpairs, spectral gaps and convergence in the truncation size.

use nalgebra::Complex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conditions::GrowthConstants;
use crate::linalg::LinalgError;
use crate::model::{CoefficientModel, FragmentationKernel};
use crate::operators::{assemble, OperatorError, OperatorKind, TruncatedOperator, TruncationPolicy};
use crate::spaces::{compensated_sum, moment_slice, pairing, power_norm, power_weight, StateVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("truncation size {got} is below the minimum {min}")]
    TooSmall { got: usize, min: usize },
    #[error("truncation size {got} exceeds the dense eigensolver budget {max}")]
    TooLarge { got: usize, max: usize },
    #[error("eigen-iteration did not converge in {iterations} iterations; last estimates {last_estimates:?}")]
    NonConvergence { iterations: usize, last_estimates: Vec<f64> },
    #[error("eigenvector residual {residual:e} exceeds tolerance {tol:e} ({side})")]
    Residual { side: &'static str, residual: f64, tol: f64 },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("bracket [{lo}, {hi}] does not straddle a sign change of psi - phi")]
    NoSignChange { lo: f64, hi: f64 },
    #[error("dense eigensolver failed: {0}")]
    Eigen(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EigenMethod {
    /// Inverse iteration with Collatz-Wielandt shifts.
    #[default]
    Noda,
    /// Power iteration on `U + sigma I`, `sigma = max theta + 1`.
    ShiftedPower,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerronOptions {
    pub method: EigenMethod,
    pub policy: TruncationPolicy,
    pub max_iterations: usize,
    /// Order of the `[m]`-norm used for the right residual.
    pub norm_order: f64,
    /// Compute the adjoint eigenvector on a larger truncation and restrict it.
    pub adjoint_padding: bool,
    pub max_padding: usize,
    /// Added to the diagonal of `U` before solving.
    pub operator_shift: f64,
}

impl Default for PerronOptions {
    fn default() -> Self {
        PerronOptions {
            method: EigenMethod::Noda,
            policy: TruncationPolicy::Absorbing,
            max_iterations: 500,
            norm_order: 2.0,
            adjoint_padding: true,
            max_padding: 4096,
            operator_shift: 0.0,
        }
    }
}

/// Perron eigenvalue with right and left eigenvectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralTriple {
    pub lambda0: f64,
    /// Right eigenvector, `sum_n n e_n = 1`.
    pub e: StateVector,
    /// Left eigenvector, `<h, e> = 1`.
    pub h: StateVector,
    /// `||U e - lambda0 e||_[m] / ||e||_[m]`.
    pub residual_right: f64,
    /// Weighted sup of `U^T h - lambda0 h` over rows `1..N-1`, relative to that of `h`.
    pub residual_left: f64,
    pub gap: Option<f64>,
    pub truncation: usize,
    pub policy: TruncationPolicy,
    pub method: EigenMethod,
    pub iterations: usize,
    /// Extra sizes used for the adjoint, 0 if unpadded.
    pub adjoint_padding: usize,
    pub adjoint_padding_converged: bool,
}

struct EigenResult {
    lambda: f64,
    x: Vec<f64>,
    iterations: usize,
}

fn normalize_max(x: &mut [f64]) -> f64 {
    let m = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if m > 0.0 {
        for v in x.iter_mut() {
            *v /= m;
        }
    }
    m
}

fn weighted_residual(op: &TruncatedOperator, shift: f64, x: &[f64], lambda: f64, m: f64) -> Result<f64, SpectralError> {
    let mut y = vec![0.0; x.len()];
    op.apply_slice(x, &mut y)?;
    let r: Vec<f64> = y.iter().zip(x).map(|(yi, xi)| yi + shift * xi - lambda * xi).collect();
    Ok(power_norm(&r, m) / power_norm(x, m))
}

/// Noda iteration for the dominant eigenpair of the Metzler matrix `op + shift I`.
fn noda(op: &TruncatedOperator, shift: f64, tol: f64, max_iter: usize, m: f64) -> Result<EigenResult, SpectralError> {
    let n = op.size();
    let mut x = vec![1.0; n];
    let mut ux = vec![0.0; n];
    op.apply_slice(&x, &mut ux)?;
    let mut sigma = ux.iter().fold(f64::NEG_INFINITY, |a, v| a.max(*v)) + shift;
    let mut history = Vec::new();
    let mut lambda;
    for it in 1..=max_iter {
        let mut margin = 1e-13 * sigma.abs().max(1.0);
        let solver = loop {
            match op.shifted_solver(sigma + margin - shift, -1.0) {
                Ok(s) => break s,
                Err(OperatorError::Linalg(LinalgError::Singular(_))) if margin < 1e-3 * sigma.abs().max(1.0) => {
                    margin *= 1e3;
                }
                Err(e) => return Err(e.into()),
            }
        };
        let s = sigma + margin;
        let mut y = x.clone();
        solver.solve_in_place(&mut y)?;
        // (s - A) y = x, so A y = s y - x and the pair (y, lambda) has residual (s - lambda) y - x.
        let yy: f64 = compensated_sum(y.iter().map(|v| v * v));
        let xy: f64 = compensated_sum(x.iter().zip(&y).map(|(a, b)| a * b));
        lambda = s - xy / yy;
        let ymax = y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let floor = 1e-250 * ymax;
        let min_ratio = x
            .iter()
            .zip(&y)
            .filter(|(_, yi)| **yi > floor)
            .map(|(xi, yi)| xi / yi)
            .fold(f64::INFINITY, f64::min);
        let cw_upper = s - min_ratio;
        let r: Vec<f64> = (0..n).map(|i| (s - lambda) * y[i] - x[i]).collect();
        let res = power_norm(&r, m) / power_norm(&y, m);
        history.push(lambda);
        normalize_max(&mut y);
        x = y;
        if res <= tol {
            let true_res = weighted_residual(op, shift, &x, lambda, m)?;
            if true_res <= tol.max(1e-13) {
                return Ok(EigenResult { lambda, x, iterations: it });
            }
        }
        sigma = if cw_upper.is_finite() && cw_upper > lambda { cw_upper } else { lambda };
    }
    let keep = history.len().saturating_sub(10);
    Err(SpectralError::NonConvergence { iterations: max_iter, last_estimates: history[keep..].to_vec() })
}

/// Power iteration on `op + shift I + sigma I` with `sigma = max_n |diag| + 1`.
fn shifted_power(op: &TruncatedOperator, shift: f64, tol: f64, max_iter: usize, m: f64) -> Result<EigenResult, SpectralError> {
    let n = op.size();
    let sigma = op.diagonal().iter().fold(0.0f64, |a, v| a.max((v + shift).abs())) + 1.0;
    let mut x = vec![1.0; n];
    let mut y = vec![0.0; n];
    let mut history = Vec::new();
    for it in 1..=max_iter {
        op.apply_slice(&x, &mut y)?;
        for i in 0..n {
            y[i] += (shift + sigma) * x[i];
        }
        let xy = compensated_sum(x.iter().zip(&y).map(|(a, b)| a * b));
        let xx = compensated_sum(x.iter().map(|v| v * v));
        let lambda = xy / xx - sigma;
        history.push(lambda);
        let r: Vec<f64> = (0..n).map(|i| y[i] - (lambda + sigma) * x[i]).collect();
        let res = power_norm(&r, m) / power_norm(&x, m);
        if res <= tol {
            return Ok(EigenResult { lambda, x, iterations: it });
        }
        normalize_max(&mut y);
        std::mem::swap(&mut x, &mut y);
    }
    let keep = history.len().saturating_sub(10);
    Err(SpectralError::NonConvergence { iterations: max_iter, last_estimates: history[keep..].to_vec() })
}

fn dominant(op: &TruncatedOperator, opts: &PerronOptions, tol: f64) -> Result<EigenResult, SpectralError> {
    match opts.method {
        EigenMethod::Noda => noda(op, opts.operator_shift, tol, opts.max_iterations, opts.norm_order),
        EigenMethod::ShiftedPower => {
            shifted_power(op, opts.operator_shift, tol, opts.max_iterations.saturating_mul(1000), opts.norm_order)
        }
    }
}

/// Left residual on rows `1..N-1` of `U^T`, in the dual weighted sup norm.
fn left_residual(ut: &TruncatedOperator, shift: f64, h: &[f64], lambda: f64, m: f64) -> Result<f64, SpectralError> {
    let n = h.len();
    let mut y = vec![0.0; n];
    ut.apply_slice(h, &mut y)?;
    let mut num: f64 = 0.0;
    let mut den: f64 = 0.0;
    for i in 0..n {
        let w = power_weight(i + 1, m);
        if i + 1 < n {
            num = num.max((y[i] + shift * h[i] - lambda * h[i]).abs() / w);
        }
        den = den.max(h[i].abs() / w);
    }
    Ok(if den > 0.0 { num / den } else { 0.0 })
}

/// Perron eigenpair of the truncated generator at size `n`.
pub fn perron_eigenpair(model: &CoefficientModel, n: usize, tol: f64) -> Result<SpectralTriple, SpectralError> {
    perron_eigenpair_with(model, n, tol, &PerronOptions::default())
}

pub fn perron_eigenpair_with(
    model: &CoefficientModel,
    n: usize,
    tol: f64,
    opts: &PerronOptions,
) -> Result<SpectralTriple, SpectralError> {
    const MIN_N: usize = 16;
    if n < MIN_N {
        return Err(SpectralError::TooSmall { got: n, min: MIN_N });
    }
    let u = assemble(model, n, OperatorKind::Full, opts.policy)?;
    let right = dominant(&u, opts, tol)?;
    let lambda0 = right.lambda;
    let mut e = right.x;
    let mass = moment_slice(&e, 1.0);
    for v in e.iter_mut() {
        *v /= mass;
    }
    let residual_right = weighted_residual(&u, opts.operator_shift, &e, lambda0, opts.norm_order)?;
    if !(residual_right <= tol.max(1e-13)) {
        return Err(SpectralError::Residual { side: "right", residual: residual_right, tol });
    }

    let (mut h, padding, pad_converged) = adjoint_vector(model, n, tol, opts)?;
    let c = compensated_sum(h.iter().zip(&e).map(|(a, b)| a * b));
    for v in h.iter_mut() {
        *v /= c;
    }
    let ut = u.transposed()?;
    let residual_left = left_residual(&ut, opts.operator_shift, &h, lambda0, opts.norm_order)?;
    let left_tol = (1e3 * tol).max(1e-10);
    if !(residual_left <= left_tol) {
        return Err(SpectralError::Residual { side: "left", residual: residual_left, tol: left_tol });
    }
    Ok(SpectralTriple {
        lambda0,
        e: StateVector::from_vec_unchecked(e),
        h: StateVector::from_vec_unchecked(h),
        residual_right,
        residual_left,
        gap: None,
        truncation: n,
        policy: opts.policy,
        method: opts.method,
        iterations: right.iterations,
        adjoint_padding: padding,
        adjoint_padding_converged: pad_converged,
    })
}

fn adjoint_on(model: &CoefficientModel, size: usize, n: usize, tol: f64, opts: &PerronOptions) -> Result<Vec<f64>, SpectralError> {
    let ut = assemble(model, size, OperatorKind::Adjoint, opts.policy)?;
    let mut h = dominant(&ut, opts, tol)?.x;
    h.truncate(n);
    let h1 = h[0];
    if h1 != 0.0 {
        for v in h.iter_mut() {
            *v /= h1;
        }
    }
    Ok(h)
}

/// Left Perron vector restricted to `1..n`, computed on `n + pad` with `pad`
/// doubled until the restriction stops changing.
fn adjoint_vector(model: &CoefficientModel, n: usize, tol: f64, opts: &PerronOptions) -> Result<(Vec<f64>, usize, bool), SpectralError> {
    if !opts.adjoint_padding {
        return Ok((adjoint_on(model, n, n, tol, opts)?, 0, true));
    }
    let limit = model.max_size().unwrap_or(usize::MAX);
    let mut pad = 16usize;
    let mut prev = adjoint_on(model, (n + pad).min(limit), n, tol, opts)?;
    loop {
        let next_pad = pad * 2;
        if next_pad > opts.max_padding || n + pad >= limit {
            return Ok((prev, pad, false));
        }
        let next = adjoint_on(model, (n + next_pad).min(limit), n, tol, opts)?;
        let change = prev
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs() / b.abs().max(f64::MIN_POSITIVE))
            .fold(0.0f64, f64::max);
        if change <= tol.max(1e-13) {
            return Ok((next, next_pad, true));
        }
        prev = next;
        pad = next_pad;
    }
}

/// `g_n = r n` with `d = 0`: the exact pair `(r, h_n = n)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearGrowthPair {
    pub r: f64,
}

impl LinearGrowthPair {
    /// `h = (1, 2, ..., n)`.
    pub fn h(&self, n: usize) -> StateVector {
        StateVector::from_vec_unchecked((1..=n).map(|k| k as f64).collect())
    }
}

pub fn exact_linear_growth(model: &CoefficientModel) -> Option<LinearGrowthPair> {
    const PROBE: usize = 1000;
    let r = model.g(1);
    let limit = model.max_size().unwrap_or(PROBE).min(PROBE);
    for n in 1..=limit {
        let ratio = model.g(n) / n as f64;
        if (ratio - r).abs() > 1e-12 * r.abs().max(1e-300) || model.d(n) != 0.0 {
            return None;
        }
    }
    Some(LinearGrowthPair { r })
}

/// Root of the shattering example's characteristic equation with its eigenvector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example1Solution {
    pub lambda0: f64,
    /// `f_{n, lambda0}` with `f_1 = 1`, `n = 1..len`.
    pub eigenvector: StateVector,
    pub bracket: (f64, f64),
    pub constants: GrowthConstants,
    /// Terms needed by the series at the root.
    pub series_terms: usize,
}

struct PhiEval {
    value: f64,
    terms: usize,
}

/// `phi(lambda)`, summed until the geometric tail bound falls below `1e-14` of the partial sum.
fn phi(model: &CoefficientModel, lambda: f64, c: f64) -> PhiEval {
    let mut sum = 0.0;
    let mut prod = 1.0;
    let mut n = 2usize;
    loop {
        let (a, g) = (model.a(n), model.g(n));
        sum += a * n as f64 / (lambda + a + g) * prod;
        prod *= g / (lambda + g + a);
        // Remaining terms satisfy term_k <= k c^(k-n-1) prod for k > n.
        let k = (n + 1) as f64;
        let tail = prod * (k * (1.0 - c) + c) / ((1.0 - c) * (1.0 - c));
        if tail <= 1e-14 * sum || n > 10_000_000 || prod == 0.0 {
            return PhiEval { value: sum, terms: n - 1 };
        }
        n += 1;
    }
}

pub fn example1_solve(
    model: &CoefficientModel,
    bracket: Option<(f64, f64)>,
    constants: Option<GrowthConstants>,
    len: usize,
) -> Result<Example1Solution, SpectralError> {
    const PROBE: usize = 10_000;
    if !matches!(model.kernel(), FragmentationKernel::MonomerShatter) {
        return Err(SpectralError::Precondition("the kernel must be MonomerShatter".into()));
    }
    if (2..=PROBE).any(|n| model.d(n) != 0.0) {
        return Err(SpectralError::Precondition("death rates must vanish".into()));
    }
    if !(model.g(1) > 0.0) {
        return Err(SpectralError::Precondition("g_1 must be positive".into()));
    }
    let constants = match constants {
        Some(c) => c,
        None => {
            let ratios: Vec<f64> = (2..=PROBE).map(|n| model.g(n) / model.a(n)).collect();
            GrowthConstants {
                gamma: ratios.iter().cloned().fold(f64::INFINITY, f64::min),
                g: ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            }
        }
    };
    let GrowthConstants { gamma, g } = constants;
    if !(gamma > 0.0 && gamma <= g && g.is_finite()) {
        return Err(SpectralError::Precondition(format!("need 0 < gamma <= g, got gamma={gamma}, g={g}")));
    }
    if let Some(n) = (2..=PROBE).find(|&n| {
        let r = model.g(n) / model.a(n);
        r < gamma * (1.0 - 1e-12) || r > g * (1.0 + 1e-12)
    }) {
        return Err(SpectralError::Precondition(format!("gamma a_n <= g_n <= g a_n fails at n={n}")));
    }
    if !(g + 1.0 < (gamma + 1.0).powi(2)) {
        return Err(SpectralError::Precondition(format!(
            "g + 1 < (gamma + 1)^2 fails for gamma={gamma}, g={g}; phi(0) > 1 is not guaranteed"
        )));
    }
    let c = g / (1.0 + g);
    let g1 = model.g(1);
    let f = |lambda: f64| (lambda + g1) / g1 - phi(model, lambda, c).value;

    let (lo, mut hi) = bracket.unwrap_or_else(|| {
        let m = (2..=100).map(|n| model.a(n) * n as f64 / (model.a(n) + model.g(n))).fold(0.0f64, f64::max);
        (0.0, 10.0 * (g1 + m))
    });
    let f_lo = f(lo);
    if !(f_lo < 0.0) {
        return Err(SpectralError::NoSignChange { lo, hi });
    }
    let mut f_hi = f(hi);
    let mut doublings = 0;
    while f_hi <= 0.0 {
        if bracket.is_some() || doublings >= 60 {
            return Err(SpectralError::NoSignChange { lo, hi });
        }
        hi *= 2.0;
        f_hi = f(hi);
        doublings += 1;
    }
    let (mut a, mut b) = (lo, hi);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if f(mid) < 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    let lambda0 = 0.5 * (a + b);
    let terms = phi(model, lambda0, c).terms;

    let mut v = Vec::with_capacity(len.max(1));
    v.push(1.0);
    let mut prod = 1.0;
    for n in 2..=len {
        let (an, gn) = (model.a(n), model.g(n));
        v.push(g1 / (lambda0 + gn + an) * prod);
        prod *= gn / (lambda0 + gn + an);
    }
    Ok(Example1Solution {
        lambda0,
        eigenvector: StateVector::from_vec_unchecked(v),
        bracket: (lo, hi),
        constants,
        series_terms: terms,
    })
}

/// Dense eigenvalue budget.
pub const MAX_DENSE: usize = 1500;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrthogonalityReport {
    pub checked: usize,
    /// Largest `|sum_n n v_n| / sum_n n |v_n|`.
    pub max_ratio: f64,
    pub tol: f64,
    /// Eigenvalues `(re, im)` whose eigenvectors exceed the tolerance.
    pub violations: Vec<(f64, f64)>,
}

impl OrthogonalityReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub truncation: usize,
    pub policy: TruncationPolicy,
    pub lambda0: f64,
    /// The eigenvalue with the next largest real part, `(re, im)`.
    pub lambda1: (f64, f64),
    pub gap: f64,
    pub eigenvalues: Vec<(f64, f64)>,
    /// Present when the model has the exact linear-growth pair.
    pub orthogonality: Option<OrthogonalityReport>,
}

pub const ORTHOGONALITY_TOL: f64 = 1e-8;

/// `lambda0 - max { Re lambda : lambda != lambda0 }` from a dense eigensolve.
pub fn spectral_gap(model: &CoefficientModel, n: usize, policy: TruncationPolicy) -> Result<GapReport, SpectralError> {
    if n > MAX_DENSE {
        return Err(SpectralError::TooLarge { got: n, max: MAX_DENSE });
    }
    if n < 2 {
        return Err(SpectralError::TooSmall { got: n, min: 2 });
    }
    let u = assemble(model, n, OperatorKind::Full, policy)?;
    let dense = u.to_dense();
    let schur = nalgebra::linalg::Schur::try_new(dense, f64::EPSILON, 100 * n * n)
        .ok_or_else(|| SpectralError::Eigen("Schur iteration did not converge".into()))?;
    let mut eig: Vec<(f64, f64)> = schur.complex_eigenvalues().iter().map(|z| (z.re, z.im)).collect();
    eig.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal)));
    let lead = eig
        .iter()
        .enumerate()
        .filter(|(_, z)| z.1 == 0.0)
        .max_by(|a, b| a.1 .0.partial_cmp(&b.1 .0).unwrap_or(std::cmp::Ordering::Equal))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let lambda0 = eig[lead].0;
    let lambda1 = eig
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != lead)
        .map(|(_, z)| *z)
        .max_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal))
        .unwrap_or((f64::NEG_INFINITY, 0.0));

    let orthogonality = if exact_linear_growth(model).is_some() { Some(moment_orthogonality(&u)?) } else { None };
    Ok(GapReport { truncation: n, policy, lambda0, lambda1, gap: lambda0 - lambda1.0, eigenvalues: eig, orthogonality })
}

/// Checks `sum_n n v_n = 0` for every eigenvector but the dominant one.
///
/// Eigenvectors come from a complex Schur form `U = Q T Q*` by back
/// substitution on `T`, so each is an exact eigenvector of a matrix within
/// rounding of `U` even where the eigenvalues themselves are ill-conditioned.
fn moment_orthogonality(u: &TruncatedOperator) -> Result<OrthogonalityReport, SpectralError> {
    let n = u.size();
    let dense = u.to_dense().map(|x| Complex::new(x, 0.0));
    let schur = nalgebra::linalg::Schur::try_new(dense, f64::EPSILON, 100 * n * n)
        .ok_or_else(|| SpectralError::Eigen("complex Schur iteration did not converge".into()))?;
    let (q, t) = schur.unpack();
    let lead = (0..n)
        .max_by(|&i, &j| t[(i, i)].re.partial_cmp(&t[(j, j)].re).unwrap_or(std::cmp::Ordering::Equal))
        .unwrap_or(0);
    let small = f64::EPSILON * t.iter().fold(0.0f64, |a, z| a.max(z.norm())).max(f64::MIN_POSITIVE);
    let mut report = OrthogonalityReport { checked: 0, max_ratio: 0.0, tol: ORTHOGONALITY_TOL, violations: Vec::new() };
    let mut y = vec![Complex::new(0.0, 0.0); n];
    for i in 0..n {
        if i == lead {
            continue;
        }
        let mu = t[(i, i)];
        y.iter_mut().for_each(|z| *z = Complex::new(0.0, 0.0));
        y[i] = Complex::new(1.0, 0.0);
        for k in (0..i).rev() {
            let mut s = -t[(k, i)];
            for j in k + 1..i {
                s -= t[(k, j)] * y[j];
            }
            let mut pivot = t[(k, k)] - mu;
            if pivot.norm() < small {
                pivot = Complex::new(small, 0.0);
            }
            y[k] = s / pivot;
        }
        let mut weighted = Complex::new(0.0, 0.0);
        let mut norm1 = 0.0;
        for r in 0..n {
            let mut v = Complex::new(0.0, 0.0);
            for k in 0..=i {
                v += q[(r, k)] * y[k];
            }
            weighted += v * (r + 1) as f64;
            norm1 += v.norm() * (r + 1) as f64;
        }
        let ratio = weighted.norm() / norm1;
        report.checked += 1;
        report.max_ratio = report.max_ratio.max(ratio);
        if !(ratio <= ORTHOGONALITY_TOL) {
            report.violations.push((mu.re, mu.im));
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub sizes: Vec<usize>,
    pub lambda0: Vec<f64>,
    /// `|lambda0(N_{k+1}) - lambda0(N_k)|`.
    pub increments: Vec<f64>,
    /// Increments below the eigenvalue tolerance count as converged.
    pub increments_decreasing: bool,
}

pub fn truncation_convergence(
    model: &CoefficientModel,
    sizes: &[usize],
    tol: f64,
    opts: &PerronOptions,
) -> Result<ConvergenceReport, SpectralError> {
    if sizes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SpectralError::Precondition("sizes must be strictly ascending".into()));
    }
    let no_pad = PerronOptions { adjoint_padding: false, ..opts.clone() };
    let mut lambdas = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let u = assemble(model, n, OperatorKind::Full, no_pad.policy)?;
        if n < 16 {
            return Err(SpectralError::TooSmall { got: n, min: 16 });
        }
        lambdas.push(dominant(&u, &no_pad, tol)?.lambda);
    }
    let increments: Vec<f64> = lambdas.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let floor = tol * lambdas.iter().fold(1.0f64, |a, l| a.max(l.abs()));
    let increments_decreasing = increments.windows(2).all(|w| w[1] <= w[0] || w[1] <= floor);
    Ok(ConvergenceReport { sizes: sizes.to_vec(), lambda0: lambdas, increments, increments_decreasing })
}

/// `<h, f>`, the coefficient of `e` in the long-time limit of `exp(-lambda0 t) f(t)`.
pub fn projection_constant(triple: &SpectralTriple, f: &StateVector) -> f64 {
    pairing(&triple.h, f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{presets, Rate};

    #[test]
    fn fig1_small_truncation() {
        let t = perron_eigenpair(&presets::fig1(), 100, 1e-11).unwrap();
        assert!((t.lambda0 - 1.0).abs() < 1e-9, "{}", t.lambda0);
        assert!(t.e.as_slice().iter().all(|v| *v > 0.0));
        assert!((moment_slice(t.e.as_slice(), 1.0) - 1.0).abs() < 1e-12);
        assert!((pairing(&t.h, &t.e) - 1.0).abs() < 1e-12);
        let h1 = t.h.get(1);
        for n in 1..100 {
            assert!((t.h.get(n) / h1 - n as f64).abs() < 1e-7 * n as f64, "n={n}");
        }
    }

    #[test]
    fn methods_agree() {
        let m = presets::fig3();
        let noda = perron_eigenpair(&m, 40, 1e-11).unwrap();
        let opts = PerronOptions { method: EigenMethod::ShiftedPower, max_padding: 64, ..Default::default() };
        let power = perron_eigenpair_with(&m, 40, 1e-11, &opts).unwrap();
        assert!((noda.lambda0 - power.lambda0).abs() < 1e-8);
        let diff = noda.e.sub(&power.e).unwrap().max_abs();
        assert!(diff < 1e-7, "{diff}");
    }

    #[test]
    fn shift_invariance() {
        let m = presets::fig2();
        let base = perron_eigenpair(&m, 48, 1e-11).unwrap();
        let opts = PerronOptions { operator_shift: 5.0, ..Default::default() };
        let shifted = perron_eigenpair_with(&m, 48, 1e-11, &opts).unwrap();
        assert!((shifted.lambda0 - base.lambda0 - 5.0).abs() < 1e-9);
        assert!(shifted.e.sub(&base.e).unwrap().max_abs() < 1e-9);
        assert!(shifted.h.sub(&base.h).unwrap().max_abs() < 1e-6 * base.h.max_abs());
    }

    #[test]
    fn zero_generator() {
        let m = CoefficientModel::new("zero", Rate::Zero, Rate::Zero, Rate::Zero, FragmentationKernel::MonomerShatter).unwrap();
        let t = perron_eigenpair(&m, 20, 1e-12).unwrap();
        assert_eq!(t.lambda0, 0.0);
    }

    #[test]
    fn linear_growth_detection() {
        assert_eq!(exact_linear_growth(&presets::fig1()), Some(LinearGrowthPair { r: 1.0 }));
        assert_eq!(exact_linear_growth(&presets::linear_shatter(3.0)), Some(LinearGrowthPair { r: 3.0 }));
        assert_eq!(exact_linear_growth(&presets::quadratic_growth()), None);
        assert_eq!(exact_linear_growth(&presets::fig2()), None);
    }

    #[test]
    fn two_by_two_gap() {
        let m = CoefficientModel::new(
            "toy",
            Rate::Table { values: vec![0.0, 2.0] },
            Rate::Zero,
            Rate::Zero,
            FragmentationKernel::Table { rows: vec![vec![2.0]] },
        )
        .unwrap();
        let g = spectral_gap(&m, 2, TruncationPolicy::Absorbing).unwrap();
        assert!((g.lambda0 - 0.0).abs() < 1e-14);
        assert!((g.gap - 2.0).abs() < 1e-14);
    }

    #[test]
    fn example1_root() {
        let s = example1_solve(&presets::example1(), None, None, 60).unwrap();
        assert!(s.lambda0 > 0.0);
        assert_eq!(s.constants, GrowthConstants { gamma: 1.0, g: 1.0 });
        let bad = example1_solve(&presets::fig2(), None, None, 10);
        assert!(matches!(bad, Err(SpectralError::Precondition(_))));
    }

    #[test]
    fn convergence_increments() {
        let r = truncation_convergence(&presets::fig3(), &[20, 40, 80], 1e-11, &PerronOptions::default()).unwrap();
        assert_eq!(r.increments.len(), 2);
        assert!(matches!(truncation_convergence(&presets::fig3(), &[40, 20], 1e-11, &PerronOptions::default()), Err(SpectralError::Precondition(_))));
    }
}
