use serde::{Deserialize, Serialize};

use super::ModelError;

/// Symmetric binary-splitting intensity `psi(i, j)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Psi {
    /// `(i + j)^beta`
    SumPower { beta: f64 },
    /// `(i * j)^beta`
    ProductPower { beta: f64 },
    Constant { value: f64 },
}

impl Psi {
    pub fn eval(&self, i: usize, j: usize) -> f64 {
        let (i, j) = (i as f64, j as f64);
        match *self {
            Psi::SumPower { beta } => (i + j).powf(beta),
            Psi::ProductPower { beta } => (i * j).powf(beta),
            Psi::Constant { value } => value,
        }
    }

    /// `(1/2) sum_{i=1}^{n-1} psi(i, n - i)`, the total splitting rate of an `n`-cluster.
    pub fn half_row_sum(&self, n: usize) -> f64 {
        if n < 2 {
            return 0.0;
        }
        match *self {
            Psi::SumPower { beta } => 0.5 * (n as f64).powf(beta) * (n - 1) as f64,
            Psi::Constant { value } => 0.5 * value * (n - 1) as f64,
            Psi::ProductPower { .. } => 0.5 * (1..n).map(|i| self.eval(i, n - i)).sum::<f64>(),
        }
    }

    pub(crate) fn validate(&self) -> Result<(), ModelError> {
        let ok = match *self {
            Psi::SumPower { beta } | Psi::ProductPower { beta } => beta.is_finite(),
            Psi::Constant { value } => value.is_finite() && value > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(ModelError::InvalidParameter(format!("invalid psi family {self:?}")))
        }
    }
}

/// A rate sequence `n -> r_n`, defined for every `n >= 1`.
///
/// Rates are total functions so that hypothesis checks can probe far past any
/// truncation size. `Table` extends its last entry to all larger `n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Rate {
    Zero,
    Constant { value: f64 },
    /// `coeff * n`
    Linear { coeff: f64 },
    /// `coeff * n^exponent`
    Power { coeff: f64, exponent: f64 },
    /// Total splitting rate induced by a binary intensity, `(1/2) sum psi(i, n-i)`.
    PsiInduced { psi: Psi },
    /// `values[n-1]`, constant beyond the table.
    Table { values: Vec<f64> },
    /// `factor * inner(n)`
    Scaled { factor: f64, inner: Box<Rate> },
}

impl Rate {
    pub fn eval(&self, n: usize) -> f64 {
        debug_assert!(n >= 1);
        let x = n as f64;
        match self {
            Rate::Zero => 0.0,
            Rate::Constant { value } => *value,
            Rate::Linear { coeff } => coeff * x,
            Rate::Power { coeff, exponent } => coeff * x.powf(*exponent),
            Rate::PsiInduced { psi } => psi.half_row_sum(n),
            Rate::Table { values } => values[(n - 1).min(values.len() - 1)],
            Rate::Scaled { factor, inner } => factor * inner.eval(n),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Rate::Zero => true,
            Rate::Constant { value } => *value == 0.0,
            Rate::Linear { coeff } | Rate::Power { coeff, .. } => *coeff == 0.0,
            Rate::Table { values } => values.iter().all(|v| *v == 0.0),
            Rate::PsiInduced { .. } => false,
            Rate::Scaled { factor, inner } => *factor == 0.0 || inner.is_zero(),
        }
    }

    pub(crate) fn validate(&self, which: &'static str) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidParameter(format!("{which}: {msg}")));
        match self {
            Rate::Zero => Ok(()),
            Rate::Constant { value } | Rate::Linear { coeff: value } => {
                if value.is_finite() && *value >= 0.0 {
                    Ok(())
                } else {
                    bad(format!("coefficient must be finite and nonnegative, got {value}"))
                }
            }
            Rate::Power { coeff, exponent } => {
                if coeff.is_finite() && *coeff >= 0.0 && exponent.is_finite() {
                    Ok(())
                } else {
                    bad(format!("bad power family coeff={coeff} exponent={exponent}"))
                }
            }
            Rate::PsiInduced { psi } => psi.validate(),
            Rate::Table { values } => {
                if values.is_empty() {
                    return bad("empty table".into());
                }
                match values.iter().position(|v| !v.is_finite() || *v < 0.0) {
                    Some(i) => bad(format!("entry {} is {}", i + 1, values[i])),
                    None => Ok(()),
                }
            }
            Rate::Scaled { factor, inner } => {
                if factor.is_finite() && *factor >= 0.0 {
                    inner.validate(which)
                } else {
                    bad(format!("scale factor must be finite and nonnegative, got {factor}"))
                }
            }
        }
    }
}
