//! Truncated matrix realizations of the generator and its parts.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conditions::{self, ConditionId, Verdict};
use crate::linalg::{HessenbergLu, LinalgError};
use crate::model::{CoefficientModel, ModelError};
use crate::spaces::{compensated_sum, NormFlavor, SpaceError, StateVector, WeightTable};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OperatorError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("truncation size must be at least 2, got {0}")]
    TooSmall(usize),
    #[error("operator has size {expected}, vector has size {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("lambda + theta_{n} = {value} <= 0: lambda is outside the resolvent set")]
    NotInResolventSet { n: usize, value: f64 },
    #[error("invalid probe parameters: {0}")]
    InvalidProbe(String),
}

/// Which piece of the generator to realize.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    /// `K`: diagonal `-theta_n`, subdiagonal `g_n`.
    #[serde(rename = "k_subdiagonal")]
    Subdiagonal,
    /// `U = K + D^+ + B`.
    #[serde(rename = "u_full")]
    Full,
    /// `U^T`.
    #[serde(rename = "u_adjoint")]
    Adjoint,
    /// `V = G + D`, the birth-and-death part.
    #[serde(rename = "v_birth_death")]
    BirthDeath,
    /// `F = A + B`, the fragmentation part.
    #[serde(rename = "f_fragmentation")]
    Fragmentation,
}

/// How the infinite system is closed at size `N`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TruncationPolicy {
    /// Growth out of size `N` leaves the system.
    #[default]
    Absorbing,
    /// `g_N := 0`.
    Reflecting,
    /// Growth out of size `N` is returned as an equal amount of mass at
    /// size `N`, so the weighted column sum of column `N` is `g_N - d_N`.
    Conservative,
}

impl std::fmt::Display for TruncationPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TruncationPolicy::Absorbing => "absorbing",
            TruncationPolicy::Reflecting => "reflecting",
            TruncationPolicy::Conservative => "conservative",
        })
    }
}

/// Largest size for which the fragmentation columns are kept in memory.
pub const DENSE_UPPER_LIMIT: usize = 4000;

#[derive(Clone, Debug)]
enum Upper {
    None,
    /// Column `c` (0-based, `c >= 1`) holds rows `0..c` at offset `c(c-1)/2`.
    Packed(Vec<f64>),
    OnTheFly { model: Arc<CoefficientModel>, with_death: bool },
}

/// An `N x N` realization of one of the generator pieces.
///
/// Nonzeros live on the diagonal, the subdiagonal and above, so every
/// non-adjoint kind is upper Hessenberg.
#[derive(Clone, Debug)]
pub struct TruncatedOperator {
    n: usize,
    kind: OperatorKind,
    policy: TruncationPolicy,
    diag: Vec<f64>,
    /// `sub[i]` is the entry at row `i+1`, column `i` (0-based).
    sub: Vec<f64>,
    upper: Upper,
    /// Superdiagonal death inflow when the upper part is absent.
    sup: Vec<f64>,
}

fn last_growth_diagonal(model: &CoefficientModel, n: usize, policy: TruncationPolicy) -> f64 {
    match policy {
        TruncationPolicy::Absorbing => -model.g(n),
        TruncationPolicy::Reflecting => 0.0,
        TruncationPolicy::Conservative => model.g(n) / n as f64,
    }
}

/// Builds the truncation of `kind` at size `n` under `policy`.
pub fn assemble(
    model: &CoefficientModel,
    n: usize,
    kind: OperatorKind,
    policy: TruncationPolicy,
) -> Result<TruncatedOperator, OperatorError> {
    if n < 2 {
        return Err(OperatorError::TooSmall(n));
    }
    let include_growth = matches!(kind, OperatorKind::Subdiagonal | OperatorKind::Full | OperatorKind::Adjoint | OperatorKind::BirthDeath);
    let include_frag_loss = matches!(kind, OperatorKind::Subdiagonal | OperatorKind::Full | OperatorKind::Adjoint | OperatorKind::Fragmentation);
    let include_death = matches!(kind, OperatorKind::Subdiagonal | OperatorKind::Full | OperatorKind::Adjoint | OperatorKind::BirthDeath);
    let include_inflow_b = matches!(kind, OperatorKind::Full | OperatorKind::Adjoint | OperatorKind::Fragmentation);
    let include_inflow_d = matches!(kind, OperatorKind::Full | OperatorKind::Adjoint | OperatorKind::BirthDeath);

    let mut diag = Vec::with_capacity(n);
    for i in 1..=n {
        let mut v = 0.0;
        if include_growth {
            v -= if i == n { -last_growth_diagonal(model, n, policy) } else { model.g(i) };
        }
        if include_frag_loss {
            v -= model.a(i);
        }
        if include_death {
            v -= model.d(i);
        }
        diag.push(v);
    }
    let sub = if include_growth { (1..n).map(|i| model.g(i)).collect() } else { vec![0.0; n - 1] };

    if let Some(max) = model.max_size() {
        if include_inflow_b && model.fragmentation_active() && n > max {
            return Err(ModelError::TableTooShort { n, max }.into());
        }
    }

    let frag = include_inflow_b && model.fragmentation_active();
    let (upper, sup) = if frag {
        let upper = if n <= DENSE_UPPER_LIMIT {
            let mut packed = Vec::with_capacity(n * (n - 1) / 2);
            for c in 1..n {
                let size = c + 1;
                let a = model.a(size);
                let row = model.kernel_row(size)?;
                packed.extend(row.iter().map(|b| a * b));
                if include_inflow_d {
                    *packed.last_mut().expect("column has at least one entry") += model.d(size);
                }
            }
            Upper::Packed(packed)
        } else {
            model.kernel_row(n)?;
            Upper::OnTheFly { model: Arc::new(model.clone()), with_death: include_inflow_d }
        };
        (upper, Vec::new())
    } else if include_inflow_d {
        (Upper::None, (2..=n).map(|i| model.d(i)).collect())
    } else {
        (Upper::None, Vec::new())
    };

    Ok(TruncatedOperator { n, kind, policy, diag, sub, upper, sup })
}

impl TruncatedOperator {
    pub fn size(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn policy(&self) -> TruncationPolicy {
        self.policy
    }

    pub fn is_adjoint(&self) -> bool {
        self.kind == OperatorKind::Adjoint
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    /// Visits the strictly upper part column by column as `(col, entries of rows 0..col)`.
    fn for_each_upper_column(&self, mut visit: impl FnMut(usize, &[f64])) {
        match &self.upper {
            Upper::None => {
                for (c, d) in self.sup.iter().enumerate() {
                    let col = c + 1;
                    if *d != 0.0 {
                        visit_single(col, *d, &mut visit);
                    }
                }
            }
            Upper::Packed(p) => {
                for c in 1..self.n {
                    let off = c * (c - 1) / 2;
                    visit(c, &p[off..off + c]);
                }
            }
            Upper::OnTheFly { model, with_death } => {
                let mut buf = Vec::with_capacity(self.n);
                for c in 1..self.n {
                    let size = c + 1;
                    let a = model.a(size);
                    buf.clear();
                    let row = model.kernel_row(size).expect("rows validated at assembly");
                    buf.extend(row.iter().map(|b| a * b));
                    if *with_death {
                        buf[c - 1] += model.d(size);
                    }
                    visit(c, &buf);
                }
            }
        }
    }

    /// Entry `(row, col)`, 1-based, of the matrix this operator represents.
    pub fn entry(&self, row: usize, col: usize) -> f64 {
        let (r, c) = if self.is_adjoint() { (col - 1, row - 1) } else { (row - 1, col - 1) };
        self.raw_entry(r, c)
    }

    fn raw_entry(&self, r: usize, c: usize) -> f64 {
        if r == c {
            self.diag[r]
        } else if r == c + 1 {
            self.sub[c]
        } else if r > c {
            0.0
        } else {
            match &self.upper {
                Upper::None => {
                    if c == r + 1 {
                        self.sup.get(r).copied().unwrap_or(0.0)
                    } else {
                        0.0
                    }
                }
                Upper::Packed(p) => p[c * (c - 1) / 2 + r],
                Upper::OnTheFly { model, with_death } => {
                    let size = c + 1;
                    let b = model.kernel_row(size).expect("rows validated at assembly")[r];
                    let mut v = model.a(size) * b;
                    if *with_death && r == c - 1 {
                        v += model.d(size);
                    }
                    v
                }
            }
        }
    }

    /// `y = Op x` on raw slices.
    pub fn apply_slice(&self, x: &[f64], y: &mut [f64]) -> Result<(), OperatorError> {
        for v in [x.len(), y.len()] {
            if v != self.n {
                return Err(OperatorError::DimensionMismatch { expected: self.n, got: v });
            }
        }
        for i in 0..self.n {
            y[i] = self.diag[i] * x[i];
        }
        if self.is_adjoint() {
            for i in 0..self.n - 1 {
                y[i] += self.sub[i] * x[i + 1];
            }
            self.for_each_upper_column(|c, col| {
                y[c] += col.iter().zip(&x[..c]).map(|(u, v)| u * v).sum::<f64>();
            });
        } else {
            for i in 0..self.n - 1 {
                y[i + 1] += self.sub[i] * x[i];
            }
            self.for_each_upper_column(|c, col| {
                let xc = x[c];
                if xc != 0.0 {
                    for (yi, u) in y[..c].iter_mut().zip(col) {
                        *yi += u * xc;
                    }
                }
            });
        }
        Ok(())
    }

    pub fn apply(&self, f: &StateVector) -> Result<StateVector, OperatorError> {
        let mut y = vec![0.0; self.n];
        self.apply_slice(f.as_slice(), &mut y)?;
        Ok(StateVector::from_vec_unchecked(y))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            m[(i, i)] = self.diag[i];
        }
        for i in 0..self.n - 1 {
            m[(i + 1, i)] = self.sub[i];
        }
        self.for_each_upper_column(|c, col| {
            for (r, v) in col.iter().enumerate() {
                m[(r, c)] = *v;
            }
        });
        if self.is_adjoint() {
            m.transpose()
        } else {
            m
        }
    }

    /// Row-major `alpha I + beta M`, where `M` is the underlying non-transposed matrix.
    fn shifted_row_major(&self, alpha: f64, beta: f64) -> Vec<f64> {
        let n = self.n;
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            a[i * n + i] = alpha + beta * self.diag[i];
        }
        for i in 0..n - 1 {
            a[(i + 1) * n + i] = beta * self.sub[i];
        }
        self.for_each_upper_column(|c, col| {
            for (r, v) in col.iter().enumerate() {
                a[r * n + c] = beta * v;
            }
        });
        a
    }

    /// Factors `alpha I + beta Op` for repeated solves.
    pub fn shifted_solver(&self, alpha: f64, beta: f64) -> Result<ShiftedSolver, OperatorError> {
        let lu = HessenbergLu::factor(self.n, self.shifted_row_major(alpha, beta))?;
        Ok(ShiftedSolver { lu, transposed: self.is_adjoint() })
    }

    /// The exact transpose of this operator, sharing storage layout.
    pub fn transposed(&self) -> Result<TruncatedOperator, OperatorError> {
        let kind = match self.kind {
            OperatorKind::Full => OperatorKind::Adjoint,
            OperatorKind::Adjoint => OperatorKind::Full,
            other => {
                return Err(OperatorError::InvalidProbe(format!("{other:?} has no adjoint kind")));
            }
        };
        let mut t = self.clone();
        t.kind = kind;
        Ok(t)
    }

    /// True when every off-diagonal entry is nonnegative.
    pub fn is_metzler(&self) -> bool {
        let mut ok = self.sub.iter().all(|v| *v >= 0.0);
        self.for_each_upper_column(|_, col| ok &= col.iter().all(|v| *v >= 0.0));
        ok
    }

    /// `sum_n n * Op[n, col]`, 1-based column.
    pub fn weighted_column_sum(&self, col: usize) -> f64 {
        compensated_sum((1..=self.n).map(|r| r as f64 * self.entry(r, col)))
    }
}

fn visit_single(col: usize, d: f64, visit: &mut impl FnMut(usize, &[f64])) {
    let mut buf = vec![0.0; col];
    buf[col - 1] = d;
    visit(col, &buf);
}

/// A factorization of `alpha I + beta Op`, transpose-aware.
#[derive(Clone, Debug)]
pub struct ShiftedSolver {
    lu: HessenbergLu,
    transposed: bool,
}

impl ShiftedSolver {
    pub fn solve_in_place(&self, b: &mut [f64]) -> Result<(), LinalgError> {
        if self.transposed {
            self.lu.solve_transpose_in_place(b)
        } else {
            self.lu.solve_in_place(b)
        }
    }

    /// Solves with the transpose of the factored matrix.
    pub fn solve_adjoint_in_place(&self, b: &mut [f64]) -> Result<(), LinalgError> {
        if self.transposed {
            self.lu.solve_in_place(b)
        } else {
            self.lu.solve_transpose_in_place(b)
        }
    }
}

/// `u = R(lambda, K) f` on the truncation `1..len f`, by forward recurrence.
///
/// Because `K` is lower bidiagonal the first `len f` components coincide with
/// those of the infinite system whenever `f` is supported in `1..len f`.
pub fn resolvent_k_apply(model: &CoefficientModel, lambda: f64, f: &StateVector) -> Result<StateVector, OperatorError> {
    let mut u = Vec::with_capacity(f.len());
    let mut prev = 0.0;
    for (i, fi) in f.as_slice().iter().enumerate() {
        let n = i + 1;
        let denom = lambda + model.theta(n);
        if !(denom > 0.0) {
            return Err(OperatorError::NotInResolventSet { n, value: denom });
        }
        let g_prev = if n > 1 { model.g(n - 1) } else { 0.0 };
        prev = (fi + g_prev * prev) / denom;
        u.push(prev);
    }
    Ok(StateVector::from_vec_unchecked(u))
}

/// Continues the resolvent recurrence past the support of `f` and returns the
/// weighted norm `sum_n w_n |u_n|` of the infinite-system solution.
///
/// The tail is summed until a term is below `rel_tol` of the running total
/// while decreasing, or until `max_len` sizes are reached; the second value
/// reports whether the tail converged.
pub fn resolvent_k_norm_with_tail(
    model: &CoefficientModel,
    lambda: f64,
    f: &StateVector,
    order: f64,
    flavor: NormFlavor,
    rel_tol: f64,
    max_len: usize,
) -> Result<(f64, bool), OperatorError> {
    let head = resolvent_k_apply(model, lambda, f)?;
    let weights = WeightTable::new(order, flavor, f.len())?;
    let mut total = crate::spaces::CompensatedSum::new();
    for (u, w) in head.as_slice().iter().zip(weights.weights()) {
        total.add(w * u.abs());
    }
    let mut n = f.len();
    let mut u = head.get(n);
    let mut w = weights.weight(n);
    let mut last_term = f64::INFINITY;
    while n < max_len {
        let next = n + 1;
        let denom = lambda + model.theta(next);
        if !(denom > 0.0) {
            return Err(OperatorError::NotInResolventSet { n: next, value: denom });
        }
        u = model.g(n) * u / denom;
        w = match flavor {
            NormFlavor::Power => crate::spaces::power_weight(next, order),
            NormFlavor::Gamma => w * (n as f64 + order) / n as f64,
        };
        let term = w * u.abs();
        total.add(term);
        n = next;
        if term <= rel_tol * total.value() && term <= last_term {
            return Ok((total.value(), true));
        }
        last_term = term;
    }
    Ok((total.value(), false))
}

/// `||R(lambda, K) delta_1||` in the power norm of order `m`, truncated at each of `sizes`.
///
/// A sequence that keeps growing with `N` signals that the resolvent of the
/// infinite system is unbounded in that norm.
pub fn resolvent_norm_sequence(
    model: &CoefficientModel,
    lambda: f64,
    m: f64,
    sizes: &[usize],
) -> Result<Vec<f64>, OperatorError> {
    let largest = sizes.iter().copied().max().unwrap_or(0);
    if largest == 0 {
        return Err(OperatorError::TooSmall(0));
    }
    let u = resolvent_k_apply(model, lambda, &StateVector::delta(largest, 1, 1.0))?;
    Ok(sizes.iter().map(|&n| crate::spaces::power_norm(&u.as_slice()[..n], m)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub lambda: f64,
    pub m: f64,
    pub m_prime: f64,
    pub truncation: usize,
    pub samples: usize,
    pub seed: u64,
    pub max_ratio: f64,
    /// `m' / (m' - m)`.
    pub bound: f64,
    pub within_bound: bool,
    /// Verdict of the precondition on `n (a_n + d_n) / g_n`.
    pub precondition: Verdict,
    /// Samples whose infinite tail had not converged when the cap was hit.
    pub unconverged_tails: usize,
}

/// Options for [`resolvent_bound_probe`].
#[derive(Clone, Debug)]
pub struct ProbeOptions {
    pub truncation: usize,
    pub seed: u64,
    pub tail_tol: f64,
    pub tail_cap: usize,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions { truncation: 500, seed: 0x5eed, tail_tol: 1e-17, tail_cap: 1 << 20 }
    }
}

/// Largest observed `lambda ||R(lambda, K) f||_* / ||f||_*` over random
/// nonnegative `f` supported in `1..N`, where `||.||_*` uses Gamma weights of
/// order `m`.
pub fn resolvent_bound_probe(
    model: &CoefficientModel,
    m: f64,
    m_prime: f64,
    lambda: f64,
    samples: usize,
    opts: &ProbeOptions,
) -> Result<ProbeReport, OperatorError> {
    if !(lambda > 0.0) || samples == 0 || !(m_prime > m) || opts.truncation < 1 {
        return Err(OperatorError::InvalidProbe(format!(
            "need lambda > 0, samples >= 1, m' > m and N >= 1 (lambda={lambda}, samples={samples}, m={m}, m'={m_prime})"
        )));
    }
    let precondition = conditions::evaluate_condition(
        model,
        ConditionId::ResolventGrowthRatio,
        m,
        m_prime,
        &conditions::Window::default(),
    )
    .map(|v| v.verdict)
    .unwrap_or(Verdict::Inconclusive);

    let n = opts.truncation;
    let weights = WeightTable::new(m, NormFlavor::Gamma, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut max_ratio: f64 = 0.0;
    let mut unconverged = 0;
    for _ in 0..samples {
        let support = rng.random_range(1..=n);
        let mut f = vec![0.0; support];
        for x in f.iter_mut() {
            *x = rng.random::<f64>();
        }
        if f.iter().all(|x| *x == 0.0) {
            f[0] = 1.0;
        }
        let fv = StateVector::new(f)?;
        let fnorm = crate::spaces::weighted_norm(fv.as_slice(), &weights.weights()[..support]);
        let (unorm, converged) =
            resolvent_k_norm_with_tail(model, lambda, &fv, m, NormFlavor::Gamma, opts.tail_tol, opts.tail_cap)?;
        if !converged {
            unconverged += 1;
        }
        max_ratio = max_ratio.max(lambda * unorm / fnorm);
    }
    let bound = m_prime / (m_prime - m);
    Ok(ProbeReport {
        lambda,
        m,
        m_prime,
        truncation: n,
        samples,
        seed: opts.seed,
        max_ratio,
        bound,
        within_bound: max_ratio <= bound,
        precondition,
        unconverged_tails: unconverged,
    })
}
