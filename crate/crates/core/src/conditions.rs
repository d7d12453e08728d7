//! Numerical checks of the asymptotic hypotheses on the coefficients.
//!
//! Every condition is a statement about a limit inferior or superior of an
//! explicit sequence. A finite machine cannot certify a limit, so each check
//! samples the sequence on a geometric grid, classifies the trend over the
//! last half of the samples, and returns `Inconclusive` whenever the trend is
//! neither monotone nor settled.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{delta, CoefficientModel, FragmentationKernel, ModelError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConditionError {
    #[error("unknown condition id `{0}`")]
    UnknownCondition(String),
    #[error("window [{lo}, {hi}] yields {points} sample points; at least {MIN_WINDOW_POINTS} are required")]
    WindowTooSmall { lo: usize, hi: usize, points: usize },
    #[error("condition {id} requires m' > m (got m={m}, m'={m_prime})")]
    OrderMismatch { id: ConditionId, m: f64, m_prime: f64 },
    #[error("moment order must be at least {min}, got {m}")]
    OrderTooSmall { m: f64, min: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub const MIN_WINDOW_POINTS: usize = 16;

/// Margin below which a strict inequality is not declared satisfied.
pub const STRICT_MARGIN: f64 = 1e-6;
/// Distance at which an estimated limit is considered equal to a threshold.
pub const SNAP_TOL: f64 = 1e-12;
/// Sequences whose last half stays below this in magnitude are treated as zero.
pub const ZERO_LEVEL: f64 = 1e-10;

const SLOPE_THRESHOLD: f64 = 0.05;
const GROWTH_FACTOR: f64 = 1.2;
const OSCILLATION_FRACTION: f64 = 0.1;

/// Identifier of a hypothesis. Serialized names are the stable contract ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ConditionId {
    /// `liminf (a_n + d_n - g_n ((n+1)^m - n^m) / n^m) >= 0`
    #[serde(rename = "condi1")]
    GrowthDrift,
    /// `liminf n (a_n + d_n) / g_n >= m'`
    #[serde(rename = "condi2")]
    ResolventGrowthRatio,
    /// `liminf (a_n + d_n) = infinity`
    #[serde(rename = "condi3")]
    EffectiveRateUnbounded,
    /// `sum 1/g_n < infinity`
    #[serde(rename = "condi4a")]
    ReciprocalGrowthSummable,
    /// `n / g_n -> 0`
    #[serde(rename = "condi4b")]
    GrowthSuperlinear,
    /// `liminf (a_n + d_n) / g_n > 0`
    #[serde(rename = "riai")]
    AnalyticRatio,
    /// `liminf (a_n / (a_n + d_n)) Delta_n^(m) / n^m > m / m'`
    #[serde(rename = "crucrit_prime")]
    EffectiveMomentDeficit,
    /// `liminf (a_n / theta_n) Delta_n^(m) / n^m > 0`
    #[serde(rename = "crucrit")]
    MomentDeficit,
    /// `g + 1 < (gamma + 1)^2 <= (g + 1)^2` with `gamma a_n <= g_n <= g a_n`
    #[serde(rename = "ggamcond")]
    ShatterConstants,
    /// `limsup Gamma_n < infinity`
    #[serde(rename = "bdp1")]
    BirthDeathDrift,
    /// `g_n <= C n`
    #[serde(rename = "thm3_2a")]
    BirthDeathLinearGrowth,
    /// `limsup d_n / g_n >= 1` and `d_n = O(n^2)`
    #[serde(rename = "thm3_2b")]
    BirthDeathDominantDeath,
    /// `d_n / g_n >= 1 + (m' - 1) / n` eventually
    #[serde(rename = "thm3_2c")]
    BirthDeathDeathMargin,
    /// `g_n <= C n`, growth alone generates a semigroup
    #[serde(rename = "growth_linear")]
    PureGrowthLinear,
    /// `c n^q <= g_n <= C n^q` with `1 < q <= m + 1`, growth alone has no bounded resolvent
    #[serde(rename = "growth_superlinear")]
    PureGrowthSuperlinear,
}

impl ConditionId {
    pub const ALL: [ConditionId; 15] = [
        ConditionId::GrowthDrift,
        ConditionId::ResolventGrowthRatio,
        ConditionId::EffectiveRateUnbounded,
        ConditionId::ReciprocalGrowthSummable,
        ConditionId::GrowthSuperlinear,
        ConditionId::AnalyticRatio,
        ConditionId::EffectiveMomentDeficit,
        ConditionId::MomentDeficit,
        ConditionId::ShatterConstants,
        ConditionId::BirthDeathDrift,
        ConditionId::BirthDeathLinearGrowth,
        ConditionId::BirthDeathDominantDeath,
        ConditionId::BirthDeathDeathMargin,
        ConditionId::PureGrowthLinear,
        ConditionId::PureGrowthSuperlinear,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ConditionId::GrowthDrift => "condi1",
            ConditionId::ResolventGrowthRatio => "condi2",
            ConditionId::EffectiveRateUnbounded => "condi3",
            ConditionId::ReciprocalGrowthSummable => "condi4a",
            ConditionId::GrowthSuperlinear => "condi4b",
            ConditionId::AnalyticRatio => "riai",
            ConditionId::EffectiveMomentDeficit => "crucrit_prime",
            ConditionId::MomentDeficit => "crucrit",
            ConditionId::ShatterConstants => "ggamcond",
            ConditionId::BirthDeathDrift => "bdp1",
            ConditionId::BirthDeathLinearGrowth => "thm3_2a",
            ConditionId::BirthDeathDominantDeath => "thm3_2b",
            ConditionId::BirthDeathDeathMargin => "thm3_2c",
            ConditionId::PureGrowthLinear => "growth_linear",
            ConditionId::PureGrowthSuperlinear => "growth_superlinear",
        }
    }

    fn needs_m_prime(self) -> bool {
        matches!(
            self,
            ConditionId::ResolventGrowthRatio | ConditionId::EffectiveMomentDeficit | ConditionId::BirthDeathDeathMargin
        )
    }
}

impl fmt::Display for ConditionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConditionId {
    type Err = ConditionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ConditionId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| ConditionError::UnknownCondition(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Holds,
    Fails,
    Inconclusive,
}

/// Asymptotic behaviour of a sampled sequence.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trend {
    /// Settled near a finite level; `liminf`/`limsup` are the estimates over the last half.
    Stable { limit: f64, liminf: f64, limsup: f64, monotone: bool },
    ToZero,
    ToPlusInfinity,
    ToMinusInfinity,
    Erratic,
}

impl Trend {
    pub fn limit(&self) -> Option<f64> {
        match *self {
            Trend::Stable { limit, .. } => Some(limit),
            Trend::ToZero => Some(0.0),
            Trend::ToPlusInfinity => Some(f64::INFINITY),
            Trend::ToMinusInfinity => Some(f64::NEG_INFINITY),
            Trend::Erratic => None,
        }
    }

    fn liminf(&self) -> Option<f64> {
        match *self {
            Trend::Stable { liminf, .. } => Some(liminf),
            other => other.limit(),
        }
    }

    fn limsup(&self) -> Option<f64> {
        match *self {
            Trend::Stable { limsup, .. } => Some(limsup),
            other => other.limit(),
        }
    }
}

/// Size range and sample count for the geometric grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub lo: usize,
    pub hi: usize,
    pub samples: usize,
}

impl Default for Window {
    fn default() -> Self {
        Window { lo: 2, hi: 10_000, samples: 200 }
    }
}

impl Window {
    pub fn new(lo: usize, hi: usize) -> Self {
        Window { lo, hi, ..Window::default() }
    }

    /// Distinct sizes spaced geometrically between `lo` and `hi`.
    pub fn points(&self) -> Vec<usize> {
        let lo = self.lo.max(1);
        if self.hi < lo {
            return Vec::new();
        }
        let count = self.samples.max(2);
        let ratio = (self.hi as f64 / lo as f64).ln() / (count - 1) as f64;
        let mut pts: Vec<usize> = (0..count)
            .map(|i| ((lo as f64) * (ratio * i as f64).exp()).round() as usize)
            .map(|n| n.clamp(lo, self.hi))
            .collect();
        pts.push(self.hi);
        pts.sort_unstable();
        pts.dedup();
        pts
    }
}

/// User-supplied constants for the shattering example: `gamma a_n <= g_n <= g a_n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrowthConstants {
    pub gamma: f64,
    pub g: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionVerdict {
    pub condition_id: ConditionId,
    pub verdict: Verdict,
    pub window: (usize, usize),
    /// `(n, s_n)` for the defining sequence.
    pub witness: Vec<(usize, f64)>,
    pub trend: Trend,
    pub estimated_limit: Option<f64>,
    pub threshold: Option<f64>,
    /// Empirical `sup` of the positive part of the growth drift, reported for `condi1` only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega_surrogate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// `(1 + x)^m - 1` without cancellation.
#[inline]
fn pow1p_m1(x: f64, m: f64) -> f64 {
    (m * x.ln_1p()).exp_m1()
}

/// `1 - (1 - 1/n)^m`.
#[inline]
fn death_moment_factor(n: usize, m: f64) -> f64 {
    -pow1p_m1(-1.0 / n as f64, m)
}

/// `((n+1)^m - n^m) / n^m`.
#[inline]
fn growth_moment_factor(n: usize, m: f64) -> f64 {
    pow1p_m1(1.0 / n as f64, m)
}

fn delta_ratio(model: &CoefficientModel, m: f64, n: usize) -> Result<f64, ModelError> {
    if n < 2 || !model.fragmentation_active() {
        return Ok(if n < 2 { 0.0 } else { 1.0 });
    }
    Ok(delta(model.kernel(), m, n)? / crate::model::pow_index(n, m))
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        if num == 0.0 {
            f64::NAN
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    }
}

/// The defining sequence of a condition at size `n`.
fn sequence_value(model: &CoefficientModel, id: ConditionId, m: f64, n: usize) -> Result<f64, ModelError> {
    let (a, g, d) = (model.a(n), model.g(n), model.d(n));
    let eff = a + d;
    Ok(match id {
        ConditionId::GrowthDrift => eff - g * growth_moment_factor(n, m),
        ConditionId::ResolventGrowthRatio => ratio(n as f64 * eff, g),
        ConditionId::EffectiveRateUnbounded => eff,
        ConditionId::ReciprocalGrowthSummable => ratio(1.0, g),
        ConditionId::GrowthSuperlinear => ratio(n as f64, g),
        ConditionId::AnalyticRatio => ratio(eff, g),
        ConditionId::EffectiveMomentDeficit => {
            if a == 0.0 {
                0.0
            } else {
                a / eff * delta_ratio(model, m, n)?
            }
        }
        ConditionId::MomentDeficit => {
            if a == 0.0 {
                0.0
            } else {
                a / model.theta(n) * delta_ratio(model, m, n)?
            }
        }
        ConditionId::ShatterConstants => ratio(g, a),
        ConditionId::BirthDeathDrift => gamma_n(model, m, n),
        ConditionId::BirthDeathLinearGrowth | ConditionId::PureGrowthLinear => g / n as f64,
        ConditionId::BirthDeathDominantDeath => ratio(d, g),
        ConditionId::BirthDeathDeathMargin => n as f64 * (ratio(d, g) - 1.0),
        ConditionId::PureGrowthSuperlinear => g,
    })
}

fn gamma_n(model: &CoefficientModel, m: f64, n: usize) -> f64 {
    model.g(n) * growth_moment_factor(n, m) - model.d(n) * death_moment_factor(n, m)
}

/// Least-squares slope of `ln |v|` against `ln n`.
fn loglog_slope(ns: &[usize], vs: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = ns
        .iter()
        .zip(vs)
        .filter(|(_, v)| v.is_finite() && **v != 0.0)
        .map(|(n, v)| ((*n as f64).ln(), v.abs().ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        None
    } else {
        Some(sxy / sxx)
    }
}

/// Classifies the trend of `vs` (sampled at `ns`) over the last half of the samples.
pub fn classify_trend(ns: &[usize], vs: &[f64]) -> Trend {
    let start = vs.len() / 2;
    let (ns, vs) = (&ns[start..], &vs[start..]);
    if vs.is_empty() || vs.iter().any(|v| v.is_nan()) {
        return Trend::Erratic;
    }
    if let Some(first_inf) = vs.iter().position(|v| v.is_infinite()) {
        let sign = vs[first_inf];
        return if vs[first_inf..].iter().all(|v| *v == sign) {
            if sign > 0.0 {
                Trend::ToPlusInfinity
            } else {
                Trend::ToMinusInfinity
            }
        } else {
            Trend::Erratic
        };
    }
    let last = *vs.last().expect("nonempty");
    let first = vs[0];
    let lo = vs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = vs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lo.abs().max(hi.abs()) <= ZERO_LEVEL {
        return Trend::Stable { limit: 0.0, liminf: 0.0, limsup: 0.0, monotone: true };
    }
    let nondecreasing = vs.windows(2).all(|w| w[1] >= w[0]);
    let nonincreasing = vs.windows(2).all(|w| w[1] <= w[0]);
    let monotone = nondecreasing || nonincreasing;
    let same_sign = lo > 0.0 || hi < 0.0;
    if same_sign {
        if let Some(p) = loglog_slope(ns, vs) {
            let growth = last.abs() / first.abs();
            if p > SLOPE_THRESHOLD && growth > GROWTH_FACTOR {
                return if last > 0.0 { Trend::ToPlusInfinity } else { Trend::ToMinusInfinity };
            }
            if p < -SLOPE_THRESHOLD && growth < 1.0 / GROWTH_FACTOR {
                return Trend::ToZero;
            }
        }
    }
    if monotone {
        return Trend::Stable { limit: last, liminf: last, limsup: last, monotone: true };
    }
    let level = last.abs().max(lo.abs().min(hi.abs()));
    if hi - lo < OSCILLATION_FRACTION * level {
        Trend::Stable { limit: 0.5 * (lo + hi), liminf: lo, limsup: hi, monotone: false }
    } else {
        Trend::Erratic
    }
}

fn tol(c: f64, t: f64) -> f64 {
    t * (1.0 + c.abs())
}

/// `liminf s > c`.
fn strict_lower(trend: &Trend, c: f64) -> Verdict {
    match trend.liminf() {
        None => Verdict::Inconclusive,
        Some(l) if l > c + tol(c, STRICT_MARGIN) => Verdict::Holds,
        Some(l) if l <= c + tol(c, SNAP_TOL) => Verdict::Fails,
        Some(_) => Verdict::Inconclusive,
    }
}

/// `liminf s >= c`.
fn weak_lower(trend: &Trend, c: f64) -> Verdict {
    match trend.liminf() {
        None => Verdict::Inconclusive,
        Some(l) if l >= c - tol(c, SNAP_TOL) => Verdict::Holds,
        Some(l) if l < c - tol(c, STRICT_MARGIN) => Verdict::Fails,
        Some(_) => Verdict::Inconclusive,
    }
}

fn bounded_above(trend: &Trend) -> Verdict {
    match trend {
        Trend::Erratic => Verdict::Inconclusive,
        Trend::ToPlusInfinity => Verdict::Fails,
        _ => Verdict::Holds,
    }
}

fn both(a: Verdict, b: Verdict) -> Verdict {
    match (a, b) {
        (Verdict::Fails, _) | (_, Verdict::Fails) => Verdict::Fails,
        (Verdict::Holds, Verdict::Holds) => Verdict::Holds,
        _ => Verdict::Inconclusive,
    }
}

fn sample(
    model: &CoefficientModel,
    id: ConditionId,
    m: f64,
    window: &Window,
) -> Result<(Vec<usize>, Vec<f64>), ConditionError> {
    let mut w = window.clone();
    if let Some(max) = model.max_size() {
        w.hi = w.hi.min(max);
    }
    let ns = w.points();
    if ns.len() < MIN_WINDOW_POINTS {
        return Err(ConditionError::WindowTooSmall { lo: w.lo, hi: w.hi, points: ns.len() });
    }
    let vs = ns.iter().map(|&n| sequence_value(model, id, m, n)).collect::<Result<Vec<_>, _>>()?;
    Ok((ns, vs))
}

/// Evaluates one hypothesis on the sampled window.
pub fn evaluate_condition(
    model: &CoefficientModel,
    id: ConditionId,
    m: f64,
    m_prime: f64,
    window: &Window,
) -> Result<ConditionVerdict, ConditionError> {
    evaluate_condition_with(model, id, m, m_prime, window, None)
}

/// As [`evaluate_condition`], with the constants needed by `ggamcond`.
pub fn evaluate_condition_with(
    model: &CoefficientModel,
    id: ConditionId,
    m: f64,
    m_prime: f64,
    window: &Window,
    constants: Option<GrowthConstants>,
) -> Result<ConditionVerdict, ConditionError> {
    if !(m >= 0.0) {
        return Err(ConditionError::OrderTooSmall { m, min: 0.0 });
    }
    if id.needs_m_prime() && !(m_prime > m) {
        return Err(ConditionError::OrderMismatch { id, m, m_prime });
    }
    let (ns, vs) = sample(model, id, m, window)?;
    let trend = classify_trend(&ns, &vs);
    let mut threshold = None;
    let mut note = None;
    let mut omega_surrogate = None;
    let mut estimated_limit = trend.limit();

    let verdict = match id {
        ConditionId::GrowthDrift => {
            threshold = Some(0.0);
            omega_surrogate = Some(vs.iter().filter(|v| v.is_finite()).fold(0.0f64, |acc, v| acc.max(-v)));
            weak_lower(&trend, 0.0)
        }
        ConditionId::ResolventGrowthRatio => {
            threshold = Some(m_prime);
            weak_lower(&trend, m_prime)
        }
        ConditionId::EffectiveRateUnbounded => match trend {
            Trend::ToPlusInfinity => Verdict::Holds,
            Trend::Stable { .. } | Trend::ToZero | Trend::ToMinusInfinity => Verdict::Fails,
            Trend::Erratic => Verdict::Inconclusive,
        },
        ConditionId::ReciprocalGrowthSummable => {
            if vs.iter().any(|v| v.is_infinite()) {
                note = Some("g_n vanishes inside the window".into());
                Verdict::Fails
            } else {
                let half = ns.len() / 2;
                match loglog_slope(&ns[half..], &vs[half..]) {
                    Some(p) => {
                        note = Some(format!("1/g_n decays like n^{p:.6}"));
                        estimated_limit = Some(p);
                        threshold = Some(-1.0);
                        if p < -1.0 - SLOPE_THRESHOLD {
                            Verdict::Holds
                        } else if p > -1.0 - tol(1.0, STRICT_MARGIN) {
                            Verdict::Fails
                        } else {
                            Verdict::Inconclusive
                        }
                    }
                    None => Verdict::Inconclusive,
                }
            }
        }
        ConditionId::GrowthSuperlinear => {
            threshold = Some(0.0);
            match trend {
                Trend::ToZero => Verdict::Holds,
                Trend::Stable { limit, .. } if limit.abs() <= ZERO_LEVEL => Verdict::Holds,
                Trend::Stable { .. } | Trend::ToPlusInfinity | Trend::ToMinusInfinity => Verdict::Fails,
                Trend::Erratic => Verdict::Inconclusive,
            }
        }
        ConditionId::AnalyticRatio | ConditionId::MomentDeficit => {
            threshold = Some(0.0);
            strict_lower(&trend, 0.0)
        }
        ConditionId::EffectiveMomentDeficit => {
            threshold = Some(m / m_prime);
            strict_lower(&trend, m / m_prime)
        }
        ConditionId::ShatterConstants => match constants {
            None => {
                note = Some("requires user-supplied constants (gamma, g)".into());
                Verdict::Inconclusive
            }
            Some(GrowthConstants { gamma, g }) => {
                let symbolic = g + 1.0 < (gamma + 1.0).powi(2) && (gamma + 1.0).powi(2) <= (g + 1.0).powi(2);
                let sandwich = ns.iter().zip(&vs).filter(|(n, _)| **n >= 2).all(|(_, r)| {
                    *r >= gamma * (1.0 - SNAP_TOL) && *r <= g * (1.0 + SNAP_TOL)
                });
                let shatter = matches!(model.kernel(), FragmentationKernel::MonomerShatter);
                let no_death = ns.iter().all(|&n| model.d(n) == 0.0);
                note = Some(format!(
                    "g+1 < (gamma+1)^2 <= (g+1)^2: {symbolic}; gamma <= g_n/a_n <= g on window: {sandwich}; monomer shattering without death: {}",
                    shatter && no_death
                ));
                if symbolic && sandwich && shatter && no_death {
                    Verdict::Holds
                } else {
                    Verdict::Fails
                }
            }
        },
        ConditionId::BirthDeathDrift
        | ConditionId::BirthDeathLinearGrowth
        | ConditionId::PureGrowthLinear => bounded_above(&trend),
        ConditionId::BirthDeathDominantDeath => {
            threshold = Some(1.0);
            let ratio_verdict = match trend.limsup() {
                None => Verdict::Inconclusive,
                Some(l) if l >= 1.0 - tol(1.0, SNAP_TOL) => Verdict::Holds,
                Some(l) if l < 1.0 - tol(1.0, STRICT_MARGIN) => Verdict::Fails,
                Some(_) => Verdict::Inconclusive,
            };
            let quad: Vec<f64> = ns.iter().map(|&n| model.d(n) / (n as f64 * n as f64)).collect();
            let quad_verdict = bounded_above(&classify_trend(&ns, &quad));
            note = Some(format!("limsup d_n/g_n >= 1: {ratio_verdict:?}; d_n = O(n^2): {quad_verdict:?}"));
            both(ratio_verdict, quad_verdict)
        }
        ConditionId::BirthDeathDeathMargin => {
            threshold = Some(m_prime - 1.0);
            weak_lower(&trend, m_prime - 1.0)
        }
        ConditionId::PureGrowthSuperlinear => {
            let half = ns.len() / 2;
            if vs[half..].iter().any(|v| !(*v > 0.0)) {
                note = Some("g_n is not positive on the window".into());
                Verdict::Fails
            } else {
                match loglog_slope(&ns[half..], &vs[half..]) {
                    None => Verdict::Inconclusive,
                    Some(q) => {
                        estimated_limit = Some(q);
                        threshold = Some(m + 1.0);
                        let scaled: Vec<f64> =
                            ns.iter().zip(&vs).map(|(&n, g)| g / (n as f64).powf(q)).collect();
                        let comparable = classify_trend(&ns, &scaled);
                        let bounded_both_ways = matches!(comparable, Trend::Stable { limit, .. } if limit > 0.0);
                        note = Some(format!("estimated exponent q = {q:.9}; g_n / n^q trend: {comparable:?}"));
                        if q <= 1.0 + tol(1.0, STRICT_MARGIN) || q > m + 1.0 + tol(m + 1.0, STRICT_MARGIN) {
                            Verdict::Fails
                        } else if q > 1.0 + SLOPE_THRESHOLD && bounded_both_ways {
                            Verdict::Holds
                        } else {
                            Verdict::Inconclusive
                        }
                    }
                }
            }
        }
    };

    Ok(ConditionVerdict {
        condition_id: id,
        verdict,
        window: (ns[0], *ns.last().expect("nonempty window")),
        witness: ns.into_iter().zip(vs).collect(),
        trend,
        estimated_limit,
        threshold,
        omega_surrogate,
        note,
    })
}

/// The sequences entering the moment estimates, evaluated exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticSequences {
    pub n: Vec<usize>,
    /// Normalized by `a_n + d_n`.
    pub lambda: Vec<f64>,
    /// Normalized by `theta_n`.
    pub theta: Vec<f64>,
    /// Birth-and-death drift.
    pub gamma: Vec<f64>,
    /// `Delta_n^(m) / n^m`.
    pub delta_ratio: Vec<f64>,
}

/// `Lambda_n`, `Theta_n`, `Gamma_n` and `Delta_n^(m)/n^m` on the window.
///
/// `Lambda_n` is `NaN` where `a_n + d_n = 0`.
pub fn diagnostic_sequences(model: &CoefficientModel, m: f64, window: &Window) -> Result<DiagnosticSequences, ConditionError> {
    if !(m >= 1.0) {
        return Err(ConditionError::OrderTooSmall { m, min: 1.0 });
    }
    let mut w = window.clone();
    if let Some(max) = model.max_size() {
        w.hi = w.hi.min(max);
    }
    let ns = w.points();
    let mut out = DiagnosticSequences {
        n: Vec::with_capacity(ns.len()),
        lambda: Vec::with_capacity(ns.len()),
        theta: Vec::with_capacity(ns.len()),
        gamma: Vec::with_capacity(ns.len()),
        delta_ratio: Vec::with_capacity(ns.len()),
    };
    for n in ns {
        let (a, g, d) = (model.a(n), model.g(n), model.d(n));
        let dr = delta_ratio(model, m, n)?;
        let gf = growth_moment_factor(n, m);
        let df = death_moment_factor(n, m);
        let combo = |den: f64| if den == 0.0 { f64::NAN } else { (a * dr + d * df - g * gf) / den };
        out.n.push(n);
        out.lambda.push(combo(a + d));
        out.theta.push(combo(model.theta(n)));
        out.gamma.push(g * gf - d * df);
        out.delta_ratio.push(dr);
    }
    Ok(out)
}

/// Every verdict plus the implications they support.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub m: f64,
    pub m_prime: f64,
    pub verdicts: BTreeMap<ConditionId, ConditionVerdict>,
    /// Errors encountered per condition; those conditions are reported inconclusive.
    pub errors: BTreeMap<ConditionId, String>,
    pub claims: Vec<String>,
}

impl ConditionReport {
    pub fn verdict(&self, id: ConditionId) -> Verdict {
        self.verdicts.get(&id).map_or(Verdict::Inconclusive, |v| v.verdict)
    }

    pub fn holds(&self, id: ConditionId) -> bool {
        self.verdict(id) == Verdict::Holds
    }
}

pub fn full_report(model: &CoefficientModel, m: f64, m_prime: f64) -> Result<ConditionReport, ConditionError> {
    full_report_with(model, m, m_prime, &Window::default(), None)
}

pub fn full_report_with(
    model: &CoefficientModel,
    m: f64,
    m_prime: f64,
    window: &Window,
    constants: Option<GrowthConstants>,
) -> Result<ConditionReport, ConditionError> {
    if !(m >= 1.0) {
        return Err(ConditionError::OrderTooSmall { m, min: 1.0 });
    }
    if !(m_prime > m) {
        return Err(ConditionError::OrderMismatch { id: ConditionId::ResolventGrowthRatio, m, m_prime });
    }
    let mut verdicts = BTreeMap::new();
    let mut errors = BTreeMap::new();
    for id in ConditionId::ALL {
        match evaluate_condition_with(model, id, m, m_prime, window, constants) {
            Ok(v) => {
                verdicts.insert(id, v);
            }
            Err(e) => {
                errors.insert(id, e.to_string());
            }
        }
    }
    let mut report = ConditionReport { m, m_prime, verdicts, errors, claims: Vec::new() };
    report.claims = claim_chain(&report);
    Ok(report)
}

fn claim_chain(r: &ConditionReport) -> Vec<String> {
    use ConditionId::*;
    let mut claims = Vec::new();
    let m = r.m;
    let mp = r.m_prime;
    if r.holds(GrowthDrift) {
        claims.push(format!("condi1 holds => K extends to a generator of a quasicontractive positive semigroup on X_{m}"));
    }
    if r.holds(ResolventGrowthRatio) {
        claims.push(format!(
            "condi2 holds (m'={mp}) => condi1 holds, R(lambda,K) is given by the explicit product formula and is bounded by {:.6}/lambda in the star norm",
            mp / (mp - m)
        ));
        if r.holds(EffectiveRateUnbounded) && (r.holds(ReciprocalGrowthSummable) || r.holds(GrowthSuperlinear)) {
            claims.push("condi2 + condi3 + condi4 hold => R(lambda,K) is compact".into());
        }
        if r.holds(EffectiveMomentDeficit) {
            claims.push("condi2 + crucrit_prime hold => K + D+ + B generates a positive semigroup".into());
        }
    }
    if r.holds(AnalyticRatio) {
        claims.push("riai holds => K generates an analytic semigroup".into());
        if r.holds(EffectiveRateUnbounded) {
            claims.push("riai + condi3 hold => the semigroup generated by K is also compact".into());
        }
    }
    if r.holds(MomentDeficit) {
        claims.push(format!(
            "crucrit holds => riai holds and U = A + G + D + B generates a positive analytic semigroup in X_k for every k >= {m}"
        ));
        if r.holds(EffectiveRateUnbounded) {
            claims.push(
                "crucrit + condi3 hold => the semigroup is analytic, compact and irreducible => asynchronous exponential growth expected"
                    .into(),
            );
        }
    }
    if r.holds(BirthDeathLinearGrowth) || r.holds(BirthDeathDominantDeath) || r.holds(BirthDeathDeathMargin) {
        claims.push("a sufficient birth-and-death condition holds => bdp1 holds".into());
    }
    if r.holds(BirthDeathDrift) {
        claims.push("bdp1 holds => the birth-and-death part V extends to a generator of a quasicontractive semigroup".into());
    }
    if r.holds(PureGrowthLinear) {
        claims.push(format!("growth_linear holds => growth alone generates a C0-semigroup in X_{m}"));
    }
    if r.holds(PureGrowthSuperlinear) {
        claims.push(format!(
            "growth_superlinear holds => growth alone has no realization with bounded resolvent in X_{m}: non-generation"
        ));
    }
    claims
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{presets, Rate};

    #[test]
    fn ids_round_trip() {
        for id in ConditionId::ALL {
            assert_eq!(id.as_str().parse::<ConditionId>().unwrap(), id);
            let json = serde_json::to_string(&id).unwrap();
            assert_eq!(json, format!("\"{}\"", id.as_str()));
        }
        assert!(matches!("condi9".parse::<ConditionId>(), Err(ConditionError::UnknownCondition(_))));
    }

    #[test]
    fn geometric_window() {
        let pts = Window::default().points();
        assert_eq!(pts[0], 2);
        assert_eq!(*pts.last().unwrap(), 10_000);
        assert!(pts.len() > 150 && pts.len() <= 201);
        assert!(pts.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn small_window_rejected() {
        let err = evaluate_condition(&presets::fig1(), ConditionId::EffectiveRateUnbounded, 2.0, 3.0, &Window::new(2, 10)).unwrap_err();
        assert!(matches!(err, ConditionError::WindowTooSmall { .. }));
    }

    #[test]
    fn trends() {
        let ns: Vec<usize> = (1..=100).map(|i| i * 10).collect();
        let lin: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
        let inv: Vec<f64> = ns.iter().map(|&n| 1.0 / n as f64).collect();
        let conv: Vec<f64> = ns.iter().map(|&n| 1.0 - 1.0 / n as f64).collect();
        let wild: Vec<f64> = ns.iter().map(|&n| if n % 20 == 0 { 1.0 } else { -1.0 }).collect();
        assert_eq!(classify_trend(&ns, &lin), Trend::ToPlusInfinity);
        assert_eq!(classify_trend(&ns, &inv), Trend::ToZero);
        assert!(matches!(classify_trend(&ns, &conv), Trend::Stable { monotone: true, .. }));
        assert_eq!(classify_trend(&ns, &wild), Trend::Erratic);
    }

    #[test]
    fn strict_inequality_on_the_boundary_fails() {
        let stable = |l: f64| Trend::Stable { limit: l, liminf: l, limsup: l, monotone: true };
        assert_eq!(strict_lower(&stable(0.0), 0.0), Verdict::Fails);
        assert_eq!(strict_lower(&stable(5e-7), 0.0), Verdict::Inconclusive);
        assert_eq!(strict_lower(&stable(0.1), 0.0), Verdict::Holds);
        assert_eq!(weak_lower(&stable(3.0), 3.0), Verdict::Holds);
        assert_eq!(weak_lower(&stable(3.0 - 1e-8), 3.0), Verdict::Inconclusive);
        assert_eq!(weak_lower(&stable(2.0), 3.0), Verdict::Fails);
    }

    #[test]
    fn p_series() {
        let linear = presets::linear_shatter(1.0);
        let v = evaluate_condition(&linear, ConditionId::ReciprocalGrowthSummable, 2.0, 3.0, &Window::default()).unwrap();
        assert_eq!(v.verdict, Verdict::Fails);
        let quad = presets::quadratic_growth();
        let v = evaluate_condition(&quad, ConditionId::ReciprocalGrowthSummable, 2.0, 3.0, &Window::default()).unwrap();
        assert_eq!(v.verdict, Verdict::Holds);
    }

    #[test]
    fn growth_drift_reports_omega_surrogate() {
        let v = evaluate_condition(&presets::fig1(), ConditionId::GrowthDrift, 2.0, 3.0, &Window::default()).unwrap();
        assert_eq!(v.verdict, Verdict::Holds);
        assert!(v.omega_surrogate.unwrap() >= 0.0);
    }

    #[test]
    fn shatter_constants_need_input() {
        let model = presets::example1();
        let v = evaluate_condition(&model, ConditionId::ShatterConstants, 2.0, 3.0, &Window::default()).unwrap();
        assert_eq!(v.verdict, Verdict::Inconclusive);
        let ok = evaluate_condition_with(&model, ConditionId::ShatterConstants, 2.0, 3.0, &Window::default(), Some(GrowthConstants { gamma: 1.0, g: 1.0 })).unwrap();
        assert_eq!(ok.verdict, Verdict::Holds);
        let bad = evaluate_condition_with(&model, ConditionId::ShatterConstants, 2.0, 3.0, &Window::default(), Some(GrowthConstants { gamma: 0.1, g: 1.0 })).unwrap();
        assert_eq!(bad.verdict, Verdict::Fails);
    }

    #[test]
    fn dominant_death() {
        let m = CoefficientModel::new(
            "death",
            Rate::Linear { coeff: 1.0 },
            Rate::Linear { coeff: 1.0 },
            Rate::Linear { coeff: 1.0 },
            FragmentationKernel::UniformBinary,
        )
        .unwrap();
        let v = evaluate_condition(&m, ConditionId::BirthDeathDominantDeath, 2.0, 3.0, &Window::default()).unwrap();
        assert_eq!(v.verdict, Verdict::Holds);
    }

    #[test]
    fn theta_by_hand() {
        let d = diagnostic_sequences(&presets::fig1(), 2.0, &Window { lo: 10, hi: 10_000, samples: 50 }).unwrap();
        assert_eq!(d.n[0], 10);
        assert!((d.theta[0] - 0.53).abs() < 1e-14);
        assert!((d.lambda[0] - d.theta[0] * 30.0 / 20.0).abs() < 1e-14);
    }
}
