//! Truncated sequences in weighted `l^1` spaces.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpaceError {
    #[error("state vectors need at least one entry")]
    Empty,
    #[error("entry f_{index} is not finite: {value}")]
    NonFinite { index: usize, value: f64 },
    #[error("moment order must be nonnegative, got {0}")]
    NegativeOrder(f64),
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
}

/// Weight family for the moment norms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormFlavor {
    /// `w_n = n^m`
    #[default]
    Power,
    /// `w_n = Gamma(n+m) / Gamma(n)`
    Gamma,
}

/// Kahan-Babuska (Neumaier) running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    c: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.c
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    iter.into_iter().collect::<CompensatedSum>().value()
}

/// Weights `w_1, ..., w_N` for one moment order and flavor.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightTable {
    pub order: f64,
    pub flavor: NormFlavor,
    weights: Vec<f64>,
}

impl WeightTable {
    pub fn new(order: f64, flavor: NormFlavor, len: usize) -> Result<Self, SpaceError> {
        if !(order >= 0.0) {
            return Err(SpaceError::NegativeOrder(order));
        }
        let weights = match flavor {
            NormFlavor::Power => (1..=len).map(|n| power_weight(n, order)).collect(),
            NormFlavor::Gamma => {
                let mut w = Vec::with_capacity(len);
                if len > 0 {
                    let mut cur = statrs::function::gamma::gamma(1.0 + order);
                    w.push(cur);
                    for n in 1..len {
                        cur *= (n as f64 + order) / n as f64;
                        w.push(cur);
                    }
                }
                w
            }
        };
        Ok(WeightTable { order, flavor, weights })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `w_n` for `1 <= n <= len`.
    pub fn weight(&self, n: usize) -> f64 {
        self.weights[n - 1]
    }
}

#[inline]
pub(crate) fn power_weight(n: usize, m: f64) -> f64 {
    crate::model::pow_index(n, m)
}

/// A truncated sequence `(f_1, ..., f_N)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    entries: Vec<f64>,
}

impl StateVector {
    pub fn new(entries: Vec<f64>) -> Result<Self, SpaceError> {
        if entries.is_empty() {
            return Err(SpaceError::Empty);
        }
        if let Some(i) = entries.iter().position(|x| !x.is_finite()) {
            return Err(SpaceError::NonFinite { index: i + 1, value: entries[i] });
        }
        Ok(StateVector { entries })
    }

    /// Skips the finiteness scan; for internal arithmetic on already-checked data.
    pub(crate) fn from_vec_unchecked(entries: Vec<f64>) -> Self {
        debug_assert!(!entries.is_empty());
        StateVector { entries }
    }

    pub fn zeros(len: usize) -> Self {
        StateVector { entries: vec![0.0; len.max(1)] }
    }

    pub fn ones(len: usize) -> Self {
        StateVector { entries: vec![1.0; len.max(1)] }
    }

    /// `scale * delta_{n,index}` on a truncation of size `len`.
    pub fn delta(len: usize, index: usize, scale: f64) -> Self {
        assert!((1..=len).contains(&index), "delta index {index} outside 1..={len}");
        let mut v = Self::zeros(len);
        v.entries[index - 1] = scale;
        v
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.entries
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.entries
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.entries
    }

    /// `f_n`, 1-based.
    pub fn get(&self, n: usize) -> f64 {
        self.entries[n - 1]
    }

    pub fn is_nonnegative(&self) -> bool {
        self.entries.iter().all(|x| *x >= 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|x| x.is_finite())
    }

    pub fn scaled(&self, c: f64) -> Self {
        StateVector { entries: self.entries.iter().map(|x| c * x).collect() }
    }

    /// `self + c * other`.
    pub fn axpy(&self, c: f64, other: &StateVector) -> Result<Self, SpaceError> {
        self.check_len(other)?;
        Ok(StateVector { entries: self.entries.iter().zip(&other.entries).map(|(x, y)| x + c * y).collect() })
    }

    pub fn sub(&self, other: &StateVector) -> Result<Self, SpaceError> {
        self.axpy(-1.0, other)
    }

    /// Pads with zeros (or truncates) to `len`.
    pub fn resized(&self, len: usize) -> Self {
        let mut e = self.entries.clone();
        e.resize(len.max(1), 0.0);
        StateVector { entries: e }
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    fn check_len(&self, other: &StateVector) -> Result<(), SpaceError> {
        if self.len() != other.len() {
            Err(SpaceError::DimensionMismatch { left: self.len(), right: other.len() })
        } else {
            Ok(())
        }
    }
}

/// `sum_n w_n |f_n|`.
pub fn norm(f: &StateVector, m: f64, flavor: NormFlavor) -> Result<f64, SpaceError> {
    let table = WeightTable::new(m, flavor, f.len())?;
    Ok(weighted_norm(f.as_slice(), table.weights()))
}

pub fn weighted_norm(f: &[f64], w: &[f64]) -> f64 {
    compensated_sum(f.iter().zip(w).map(|(x, w)| w * x.abs()))
}

/// `sum_n n^m |f_n|` on a raw slice.
pub fn power_norm(f: &[f64], m: f64) -> f64 {
    compensated_sum(f.iter().enumerate().map(|(i, x)| power_weight(i + 1, m) * x.abs()))
}

/// Signed moment `sum_n n^p f_n`.
pub fn moment(f: &StateVector, p: f64) -> Result<f64, SpaceError> {
    if !(p >= 0.0) {
        return Err(SpaceError::NegativeOrder(p));
    }
    Ok(moment_slice(f.as_slice(), p))
}

pub fn moment_slice(f: &[f64], p: f64) -> f64 {
    compensated_sum(f.iter().enumerate().map(|(i, x)| power_weight(i + 1, p) * x))
}

/// `P_N f`, represented at truncation `min(N, len f)`.
pub fn project(f: &StateVector, n: usize) -> StateVector {
    let n = n.max(1).min(f.len());
    StateVector { entries: f.entries[..n].to_vec() }
}

/// Duality pairing `<h, f> = sum_n h_n f_n` over the common prefix.
pub fn pairing(h: &StateVector, f: &StateVector) -> f64 {
    compensated_sum(h.entries.iter().zip(&f.entries).map(|(a, b)| a * b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norms_of_point_masses() {
        let f = StateVector::delta(20, 10, 10.0);
        assert_eq!(norm(&f, 2.0, NormFlavor::Power).unwrap(), 1000.0);
        assert_eq!(norm(&f, 1.0, NormFlavor::Power).unwrap(), 100.0);
        for m in [0.5, 2.0, 3.7] {
            let g = norm(&StateVector::delta(5, 1, 1.0), m, NormFlavor::Gamma).unwrap();
            assert!((g - statrs::function::gamma::gamma(1.0 + m)).abs() < 1e-14);
        }
    }

    #[test]
    fn gamma_weights_match_direct_ratio() {
        let t = WeightTable::new(2.5, NormFlavor::Gamma, 60).unwrap();
        for n in 1..=60 {
            let direct = statrs::function::gamma::ln_gamma(n as f64 + 2.5) - statrs::function::gamma::ln_gamma(n as f64);
            assert!((t.weight(n).ln() - direct).abs() < 1e-11, "n={n}");
        }
    }

    #[test]
    fn moments_are_signed() {
        assert_eq!(moment(&StateVector::delta(12, 10, 10.0), 1.0).unwrap(), 100.0);
        assert_eq!(moment(&StateVector::new(vec![1.0, 1.0, 0.0]).unwrap(), 0.0).unwrap(), 2.0);
        let f = StateVector::new(vec![0.0, 3.0, 0.0, 0.0, -1.0]).unwrap();
        assert_eq!(moment(&f, 2.0).unwrap(), -13.0);
    }

    #[test]
    fn projection() {
        let f = StateVector::new(vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(project(&f, 2).as_slice(), &[1.0, 2.0]);
        assert_eq!(project(&f, 7), f);
        assert_eq!(project(&project(&f, 2), 2), project(&f, 2));
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(StateVector::new(vec![]), Err(SpaceError::Empty));
        assert!(matches!(StateVector::new(vec![1.0, f64::NAN]), Err(SpaceError::NonFinite { index: 2, .. })));
        assert!(norm(&StateVector::ones(3), -1.0, NormFlavor::Power).is_err());
    }

    #[test]
    fn compensated_sum_recovers_cancelled_digits() {
        let xs = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(xs), 2.0);
    }
}
