use serde::{Deserialize, Serialize};

use super::rate::{Psi, Rate};
use super::ModelError;

/// Shape function `h` on `[0, 1]` for homogeneous daughter distributions
/// `b_{k,n} = zeta(n) h(k/n)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    /// `z^beta (1 - z)^beta`
    BetaLike { beta: f64 },
    /// `z^exponent`
    Power { exponent: f64 },
    Uniform,
}

impl Profile {
    pub fn eval(&self, z: f64) -> f64 {
        match *self {
            Profile::BetaLike { beta } => (z * (1.0 - z)).powf(beta),
            Profile::Power { exponent } => z.powf(exponent),
            Profile::Uniform => 1.0,
        }
    }
}

/// Daughter distribution `b_{k,n}`: expected number of size-`k` fragments
/// produced when an `n`-cluster splits, `1 <= k <= n-1`.
///
/// Every variant except `Table` satisfies `sum_k k b_{k,n} = n` by construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum FragmentationKernel {
    /// Every split produces `n` monomers.
    MonomerShatter,
    /// `b_{k,n} = 2/(n-1)`.
    UniformBinary,
    /// `b_{k,n} = zeta(n) h(k/n)` with `zeta(n)` normalized exactly at every `n`.
    HomogeneousProfile { profile: Profile },
    /// `b_{k,n} = psi(k, n-k) / a_n`, `a_n = (1/2) sum_i psi(i, n-i)`.
    BinaryPsi { psi: Psi },
    /// Fragments only at the two ends: `b_{1,2} = 2`, `b_{1,n} = b_{n-1,n} = 1`.
    EndsOnly,
    /// Explicit rows; `rows[n-2][k-1] = b_{k,n}` for `n = 2..=rows.len()+1`.
    Table { rows: Vec<Vec<f64>> },
}

/// A constructed kernel together with the splitting rate it induces, if any.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelBuild {
    pub kernel: FragmentationKernel,
    pub induced_rate: Option<Rate>,
}

impl FragmentationKernel {
    /// Largest parent size the kernel can answer for.
    pub fn max_parent(&self) -> Option<usize> {
        match self {
            FragmentationKernel::Table { rows } => Some(rows.len() + 1),
            _ => None,
        }
    }

    fn check_index(&self, n: usize) -> Result<(), ModelError> {
        if n < 2 {
            return Err(ModelError::IndexOutOfRange { k: 0, n });
        }
        if let Some(max) = self.max_parent() {
            if n > max {
                return Err(ModelError::TableTooShort { n, max });
            }
        }
        Ok(())
    }

    /// `zeta(n) = n / sum_{j=1}^{n-1} j h(j/n)` for homogeneous profiles.
    pub fn zeta(profile: &Profile, n: usize) -> Result<f64, ModelError> {
        let nf = n as f64;
        let s: f64 = (1..n).map(|j| j as f64 * profile.eval(j as f64 / nf)).sum();
        if !(s > 0.0) || !s.is_finite() {
            return Err(ModelError::DegenerateProfile { n });
        }
        Ok(nf / s)
    }

    /// `b_{k,n}`.
    pub fn eval(&self, k: usize, n: usize) -> Result<f64, ModelError> {
        self.check_index(n)?;
        if k == 0 || k >= n {
            return Err(ModelError::IndexOutOfRange { k, n });
        }
        let nf = n as f64;
        Ok(match self {
            FragmentationKernel::MonomerShatter => {
                if k == 1 {
                    nf
                } else {
                    0.0
                }
            }
            FragmentationKernel::UniformBinary => 2.0 / (nf - 1.0),
            FragmentationKernel::HomogeneousProfile { profile } => {
                Self::zeta(profile, n)? * profile.eval(k as f64 / nf)
            }
            FragmentationKernel::BinaryPsi { psi } => psi.eval(k, n - k) / psi.half_row_sum(n),
            FragmentationKernel::EndsOnly => ends_only(k, n),
            FragmentationKernel::Table { rows } => rows[n - 2][k - 1],
        })
    }

    /// The whole row `(b_{1,n}, ..., b_{n-1,n})` in `O(n)`.
    pub fn row(&self, n: usize) -> Result<Vec<f64>, ModelError> {
        self.check_index(n)?;
        let nf = n as f64;
        Ok(match self {
            FragmentationKernel::MonomerShatter => {
                let mut r = vec![0.0; n - 1];
                r[0] = nf;
                r
            }
            FragmentationKernel::UniformBinary => vec![2.0 / (nf - 1.0); n - 1],
            FragmentationKernel::HomogeneousProfile { profile } => {
                let h: Vec<f64> = (1..n).map(|k| profile.eval(k as f64 / nf)).collect();
                let s: f64 = h.iter().enumerate().map(|(i, v)| (i + 1) as f64 * v).sum();
                if !(s > 0.0) || !s.is_finite() {
                    return Err(ModelError::DegenerateProfile { n });
                }
                let zeta = nf / s;
                h.into_iter().map(|v| zeta * v).collect()
            }
            FragmentationKernel::BinaryPsi { psi: Psi::SumPower { .. } } => vec![2.0 / (nf - 1.0); n - 1],
            FragmentationKernel::BinaryPsi { psi } => {
                let raw: Vec<f64> = (1..n).map(|k| psi.eval(k, n - k)).collect();
                let a = 0.5 * raw.iter().sum::<f64>();
                raw.into_iter().map(|v| v / a).collect()
            }
            FragmentationKernel::EndsOnly => (1..n).map(|k| ends_only(k, n)).collect(),
            FragmentationKernel::Table { rows } => {
                let r = &rows[n - 2];
                if r.len() != n - 1 {
                    return Err(ModelError::InvalidParameter(format!(
                        "table row for n={n} has {} entries, expected {}",
                        r.len(),
                        n - 1
                    )));
                }
                r.clone()
            }
        })
    }
}

fn ends_only(k: usize, n: usize) -> f64 {
    if n == 2 {
        2.0
    } else if k == 1 || k == n - 1 {
        1.0
    } else {
        0.0
    }
}

/// `b_{k,n}` for `n >= 2`, `1 <= k <= n-1`.
pub fn kernel_eval(kernel: &FragmentationKernel, k: usize, n: usize) -> Result<f64, ModelError> {
    kernel.eval(k, n)
}

const PROBE_ROWS: usize = 64;

/// Validates a kernel descriptor and returns it with any rate it induces.
pub fn make_kernel(spec: &FragmentationKernel) -> Result<KernelBuild, ModelError> {
    let induced_rate = match spec {
        FragmentationKernel::MonomerShatter
        | FragmentationKernel::UniformBinary
        | FragmentationKernel::EndsOnly => None,
        FragmentationKernel::HomogeneousProfile { profile } => {
            let ok = match *profile {
                Profile::BetaLike { beta } => beta.is_finite(),
                Profile::Power { exponent } => exponent.is_finite(),
                Profile::Uniform => true,
            };
            if !ok {
                return Err(ModelError::InvalidParameter(format!("bad profile {profile:?}")));
            }
            for n in 2..=PROBE_ROWS {
                let row = spec.row(n)?;
                if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(ModelError::InvalidParameter(format!(
                        "profile {profile:?} is negative or not finite at n={n}"
                    )));
                }
            }
            None
        }
        FragmentationKernel::BinaryPsi { psi } => {
            psi.validate()?;
            Some(Rate::PsiInduced { psi: psi.clone() })
        }
        FragmentationKernel::Table { rows } => {
            if rows.is_empty() {
                return Err(ModelError::InvalidParameter("empty kernel table".into()));
            }
            for n in 2..=rows.len() + 1 {
                let row = spec.row(n)?;
                if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(ModelError::InvalidParameter(format!(
                        "kernel table row n={n} has a negative or non-finite entry"
                    )));
                }
                let mass: f64 = row.iter().enumerate().map(|(i, b)| (i + 1) as f64 * b).sum();
                if (mass - n as f64).abs() > MASS_RULE_TOL * n as f64 {
                    return Err(ModelError::MassRuleViolated { n, mass });
                }
            }
            None
        }
    };
    Ok(KernelBuild { kernel: spec.clone(), induced_rate })
}

pub const MASS_RULE_TOL: f64 = 1e-10;

/// Per-`n` residuals of the mass rule `sum_k k b_{k,n} = n`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MassRuleReport {
    pub n_max: usize,
    pub tol: f64,
    /// `(n, |sum_k k b_{k,n} - n| / n)`; rows the kernel cannot evaluate carry `inf`.
    pub residuals: Vec<(usize, f64)>,
    pub max_relative: f64,
    pub violations: Vec<usize>,
}

impl MassRuleReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_mass_rule(kernel: &FragmentationKernel, n_max: usize, tol: f64) -> MassRuleReport {
    let mut residuals = Vec::with_capacity(n_max.saturating_sub(1));
    let mut violations = Vec::new();
    let mut max_relative: f64 = 0.0;
    for n in 2..=n_max {
        let rel = match kernel.row(n) {
            Ok(row) => {
                let mass: f64 = row.iter().enumerate().map(|(i, b)| (i + 1) as f64 * b).sum();
                let negative = row.iter().any(|b| *b < 0.0);
                if negative {
                    f64::INFINITY
                } else {
                    (mass - n as f64).abs() / n as f64
                }
            }
            Err(_) => f64::INFINITY,
        };
        if !(rel <= tol) {
            violations.push(n);
        }
        max_relative = max_relative.max(rel);
        residuals.push((n, rel));
    }
    MassRuleReport { n_max, tol, residuals, max_relative, violations }
}

pub(crate) fn pow_index(k: usize, m: f64) -> f64 {
    if m.fract() == 0.0 && (0.0..=32.0).contains(&m) {
        (k as f64).powi(m as i32)
    } else {
        (k as f64).powf(m)
    }
}

/// `Delta_n^{(m)} = n^m - sum_{k=1}^{n-1} k^m b_{k,n}` for each `n` in `range`.
pub fn delta_sequence(
    kernel: &FragmentationKernel,
    m: f64,
    range: std::ops::RangeInclusive<usize>,
) -> Result<Vec<(usize, f64)>, ModelError> {
    if !(m >= 0.0) {
        return Err(ModelError::InvalidParameter(format!("moment order must be >= 0, got {m}")));
    }
    range.map(|n| delta(kernel, m, n).map(|d| (n, d))).collect()
}

/// A single `Delta_n^{(m)}`.
pub fn delta(kernel: &FragmentationKernel, m: f64, n: usize) -> Result<f64, ModelError> {
    let row = kernel.row(n)?;
    let moment: f64 = row.iter().enumerate().map(|(i, b)| pow_index(i + 1, m) * b).sum();
    Ok(pow_index(n, m) - moment)
}
