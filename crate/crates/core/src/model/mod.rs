//! Coefficient sequences, fragmentation kernels and the death-absorbed
//! effective kernel.

mod kernel;
mod rate;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use kernel::{
    delta, delta_sequence, kernel_eval, make_kernel, validate_mass_rule, FragmentationKernel, KernelBuild,
    MassRuleReport, Profile, MASS_RULE_TOL,
};
pub(crate) use kernel::pow_index;
pub use rate::{Psi, Rate};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("index out of range: k={k}, n={n} (need n >= 2 and 1 <= k <= n-1)")]
    IndexOutOfRange { k: usize, n: usize },
    #[error("kernel table covers parents up to n={max}, queried n={n}")]
    TableTooShort { n: usize, max: usize },
    #[error("degenerate profile: sum_j j h(j/n) vanishes at n={n}")]
    DegenerateProfile { n: usize },
    #[error("kernel violates the mass rule at n={n}: sum_k k b_(k,n) = {mass}")]
    MassRuleViolated { n: usize, mass: f64 },
    #[error("a_n + d_n = 0 at n={n}; the effective kernel is undefined")]
    ZeroEffectiveRate { n: usize },
    #[error("fragmentation rate vanishes at n={n} although the kernel is active")]
    InactiveFragmentation { n: usize },
    #[error("rate {which} is negative or not finite at n={n}: {value}")]
    InvalidRate { which: &'static str, n: usize, value: f64 },
    #[error("{0}")]
    InvalidParameter(String),
}

/// Number of sizes probed when validating rate sequences at construction.
pub const VALIDATION_PROBE: usize = 4096;

/// Serializable description of a model; `fragmentation_rate` may be omitted
/// when the kernel induces its own (binary `psi` kernels).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default)]
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fragmentation_rate: Option<Rate>,
    pub growth_rate: Rate,
    #[serde(default = "zero_rate")]
    pub death_rate: Rate,
    pub kernel: FragmentationKernel,
}

fn zero_rate() -> Rate {
    Rate::Zero
}

/// The rates `a_n`, `g_n`, `d_n` together with a daughter distribution.
///
/// By convention `a_1 = d_1 = 0` regardless of what the rate families return
/// at `n = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientModel {
    pub label: String,
    fragmentation_rate: Rate,
    growth_rate: Rate,
    death_rate: Rate,
    kernel: FragmentationKernel,
}

impl CoefficientModel {
    pub fn new(
        label: impl Into<String>,
        fragmentation_rate: Rate,
        growth_rate: Rate,
        death_rate: Rate,
        kernel: FragmentationKernel,
    ) -> Result<Self, ModelError> {
        fragmentation_rate.validate("a")?;
        growth_rate.validate("g")?;
        death_rate.validate("d")?;
        make_kernel(&kernel)?;
        let model = CoefficientModel {
            label: label.into(),
            fragmentation_rate,
            growth_rate,
            death_rate,
            kernel,
        };
        let probe = model.kernel.max_parent().map_or(VALIDATION_PROBE, |m| m.min(VALIDATION_PROBE));
        let active = model.fragmentation_active();
        for n in 1..=probe {
            for (which, value) in [("a", model.a(n)), ("g", model.g(n)), ("d", model.d(n))] {
                if !value.is_finite() || value < 0.0 {
                    return Err(ModelError::InvalidRate { which, n, value });
                }
            }
            if active && n >= 2 && model.a(n) <= 0.0 {
                return Err(ModelError::InactiveFragmentation { n });
            }
        }
        Ok(model)
    }

    pub fn from_spec(spec: &ModelSpec) -> Result<Self, ModelError> {
        let build = make_kernel(&spec.kernel)?;
        let a = match (&spec.fragmentation_rate, build.induced_rate) {
            (Some(a), None) => a.clone(),
            (None, Some(induced)) => induced,
            (None, None) => {
                return Err(ModelError::InvalidParameter(
                    "fragmentation_rate is required for this kernel".into(),
                ))
            }
            (Some(_), Some(_)) => {
                return Err(ModelError::InvalidParameter(
                    "fragmentation_rate must be omitted for psi kernels, which induce it".into(),
                ))
            }
        };
        Self::new(spec.label.clone(), a, spec.growth_rate.clone(), spec.death_rate.clone(), spec.kernel.clone())
    }

    pub fn to_spec(&self) -> ModelSpec {
        let induced = matches!(self.kernel, FragmentationKernel::BinaryPsi { .. })
            && matches!(self.fragmentation_rate, Rate::PsiInduced { .. });
        ModelSpec {
            label: self.label.clone(),
            fragmentation_rate: if induced { None } else { Some(self.fragmentation_rate.clone()) },
            growth_rate: self.growth_rate.clone(),
            death_rate: self.death_rate.clone(),
            kernel: self.kernel.clone(),
        }
    }

    /// Builds a model from a binary intensity: `a_n` and `b_{k,n}` both come from `psi`.
    pub fn with_psi(label: impl Into<String>, psi: Psi, growth_rate: Rate, death_rate: Rate) -> Result<Self, ModelError> {
        Self::new(
            label,
            Rate::PsiInduced { psi: psi.clone() },
            growth_rate,
            death_rate,
            FragmentationKernel::BinaryPsi { psi },
        )
    }

    pub fn kernel(&self) -> &FragmentationKernel {
        &self.kernel
    }

    pub fn fragmentation_rate(&self) -> &Rate {
        &self.fragmentation_rate
    }

    pub fn growth_rate(&self) -> &Rate {
        &self.growth_rate
    }

    pub fn death_rate(&self) -> &Rate {
        &self.death_rate
    }

    pub fn fragmentation_active(&self) -> bool {
        !self.fragmentation_rate.is_zero()
    }

    /// Largest size for which the kernel is defined, if bounded.
    pub fn max_size(&self) -> Option<usize> {
        self.kernel.max_parent()
    }

    #[inline]
    pub fn a(&self, n: usize) -> f64 {
        if n <= 1 {
            0.0
        } else {
            self.fragmentation_rate.eval(n)
        }
    }

    #[inline]
    pub fn g(&self, n: usize) -> f64 {
        self.growth_rate.eval(n)
    }

    #[inline]
    pub fn d(&self, n: usize) -> f64 {
        if n <= 1 {
            0.0
        } else {
            self.death_rate.eval(n)
        }
    }

    /// Total loss rate `theta_n = a_n + g_n + d_n` (`theta_1 = g_1`).
    #[inline]
    pub fn theta(&self, n: usize) -> f64 {
        self.a(n) + self.g(n) + self.d(n)
    }

    /// `a_n + d_n`, the rate of the death-absorbed fragmentation.
    #[inline]
    pub fn effective_rate(&self, n: usize) -> f64 {
        self.a(n) + self.d(n)
    }

    /// `(b_{1,n}, ..., b_{n-1,n})`, or zeros when fragmentation is switched off.
    pub fn kernel_row(&self, n: usize) -> Result<Vec<f64>, ModelError> {
        if !self.fragmentation_active() {
            return Ok(vec![0.0; n.saturating_sub(1)]);
        }
        self.kernel.row(n)
    }

    /// Returns a copy with every rate multiplied by `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self, ModelError> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(ModelError::InvalidParameter(format!("scale must be positive, got {c}")));
        }
        let scale = |r: &Rate| match r {
            Rate::Zero => Rate::Zero,
            Rate::Constant { value } => Rate::Constant { value: c * value },
            Rate::Linear { coeff } => Rate::Linear { coeff: c * coeff },
            Rate::Power { coeff, exponent } => Rate::Power { coeff: c * coeff, exponent: *exponent },
            other => Rate::Scaled { factor: c, inner: Box::new(other.clone()) },
        };
        Self::new(
            self.label.clone(),
            scale(&self.fragmentation_rate),
            scale(&self.growth_rate),
            scale(&self.death_rate),
            self.kernel.clone(),
        )
    }
}

/// Fragmentation with death folded in: a cluster losing a monomer to death is
/// treated as a split into a single `(n-1)`-fragment.
#[derive(Clone, Debug)]
pub struct EffectiveKernel {
    model: CoefficientModel,
}

impl EffectiveKernel {
    /// `a_n + d_n`.
    pub fn rate(&self, n: usize) -> f64 {
        self.model.effective_rate(n)
    }

    /// `(bb_{1,n}, ..., bb_{n-1,n})`.
    pub fn row(&self, n: usize) -> Result<Vec<f64>, ModelError> {
        if n < 2 {
            return Err(ModelError::IndexOutOfRange { k: 0, n });
        }
        let a = self.model.a(n);
        let d = self.model.d(n);
        let total = a + d;
        if !(total > 0.0) {
            return Err(ModelError::ZeroEffectiveRate { n });
        }
        let mut row = self.model.kernel_row(n)?;
        for b in row.iter_mut() {
            *b = a * *b / total;
        }
        row[n - 2] += d / total;
        Ok(row)
    }

    pub fn eval(&self, k: usize, n: usize) -> Result<f64, ModelError> {
        if n < 2 || k == 0 || k >= n {
            return Err(ModelError::IndexOutOfRange { k, n });
        }
        Ok(self.row(n)?[k - 1])
    }

    /// Mass-loss fraction `d_n / (n (a_n + d_n))`.
    pub fn mass_loss_fraction(&self, n: usize) -> f64 {
        self.model.d(n) / (n as f64 * self.rate(n))
    }
}

pub fn effective_kernel(model: &CoefficientModel) -> Result<EffectiveKernel, ModelError> {
    let probe = model.max_size().map_or(VALIDATION_PROBE, |m| m.min(VALIDATION_PROBE));
    if let Some(n) = (2..=probe).find(|&n| !(model.effective_rate(n) > 0.0)) {
        return Err(ModelError::ZeroEffectiveRate { n });
    }
    Ok(EffectiveKernel { model: model.clone() })
}

/// Ready-made models used throughout the examples and figures.
pub mod presets {
    use super::*;

    /// `a_n = 2n`, `g_n = r n`, `d = 0`, shattering into monomers.
    pub fn linear_shatter(r: f64) -> CoefficientModel {
        CoefficientModel::new(
            format!("linear growth r={r}, a_n=2n, monomer shatter"),
            Rate::Linear { coeff: 2.0 },
            Rate::Linear { coeff: r },
            Rate::Zero,
            FragmentationKernel::MonomerShatter,
        )
        .expect("valid preset")
    }

    /// The first figure configuration: `r = 1`.
    pub fn fig1() -> CoefficientModel {
        let mut m = linear_shatter(1.0);
        m.label = "fig1".into();
        m
    }

    fn psi_model(label: &str, psi: Psi) -> CoefficientModel {
        let beta = 0.1;
        let rate = Rate::Power { coeff: 1.0, exponent: 1.0 + beta };
        CoefficientModel::with_psi(label, psi, rate.clone(), rate).expect("valid preset")
    }

    /// `psi(i,j) = (i+j)^0.1`, `g_n = d_n = n^1.1`.
    pub fn fig2() -> CoefficientModel {
        psi_model("fig2", Psi::SumPower { beta: 0.1 })
    }

    /// `psi(i,j) = (ij)^0.1`, `g_n = d_n = n^1.1`.
    pub fn fig3() -> CoefficientModel {
        psi_model("fig3", Psi::ProductPower { beta: 0.1 })
    }

    /// `a_n = n` for `n >= 2`, `g_n = n`, no death, monomer shattering.
    pub fn example1() -> CoefficientModel {
        CoefficientModel::new(
            "example1",
            Rate::Linear { coeff: 1.0 },
            Rate::Linear { coeff: 1.0 },
            Rate::Zero,
            FragmentationKernel::MonomerShatter,
        )
        .expect("valid preset")
    }

    /// Pure growth `g_n = n^2` with fragmentation and death switched off.
    pub fn quadratic_growth() -> CoefficientModel {
        CoefficientModel::new(
            "quadratic growth",
            Rate::Zero,
            Rate::Power { coeff: 1.0, exponent: 2.0 },
            Rate::Zero,
            FragmentationKernel::MonomerShatter,
        )
        .expect("valid preset")
    }

    /// Pure fragmentation with unit-slope splitting rate.
    pub fn pure_fragmentation(kernel: FragmentationKernel) -> CoefficientModel {
        let a = match &kernel {
            FragmentationKernel::BinaryPsi { psi } => Rate::PsiInduced { psi: psi.clone() },
            _ => Rate::Linear { coeff: 1.0 },
        };
        CoefficientModel::new("pure fragmentation", a, Rate::Zero, Rate::Zero, kernel).expect("valid preset")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conventions_at_one() {
        let m = presets::fig1();
        assert_eq!(m.a(1), 0.0);
        assert_eq!(m.theta(1), m.g(1));
        assert_eq!(m.theta(4), 12.0);
    }

    #[test]
    fn active_kernel_needs_positive_rate() {
        let err = CoefficientModel::new(
            "bad",
            Rate::Table { values: vec![0.0, 1.0, 0.0] },
            Rate::Zero,
            Rate::Zero,
            FragmentationKernel::UniformBinary,
        )
        .unwrap_err();
        assert_eq!(err, ModelError::InactiveFragmentation { n: 3 });
    }

    #[test]
    fn effective_kernel_collapses_without_death() {
        let m = presets::fig3();
        let no_death = CoefficientModel::new(
            "x",
            m.fragmentation_rate().clone(),
            m.growth_rate().clone(),
            Rate::Zero,
            m.kernel().clone(),
        )
        .unwrap();
        let eff = effective_kernel(&no_death).unwrap();
        for n in [2usize, 7, 30] {
            assert_eq!(eff.rate(n), no_death.a(n));
            let b = no_death.kernel_row(n).unwrap();
            for (x, y) in eff.row(n).unwrap().iter().zip(&b) {
                assert!((x - y).abs() <= 1e-15 * y.abs().max(1.0));
            }
        }
    }

    #[test]
    fn effective_kernel_death_branch() {
        let m = CoefficientModel::new(
            "equal",
            Rate::Constant { value: 1.0 },
            Rate::Zero,
            Rate::Constant { value: 1.0 },
            FragmentationKernel::MonomerShatter,
        )
        .unwrap();
        let eff = effective_kernel(&m).unwrap();
        assert_eq!(eff.eval(4, 5).unwrap(), 0.5);
        for n in 2..200 {
            let s: f64 = eff.row(n).unwrap().iter().enumerate().map(|(i, b)| (i + 1) as f64 * b).sum();
            let expect = n as f64 * (1.0 - eff.mass_loss_fraction(n));
            assert!((s - expect).abs() <= 1e-10 * n as f64);
            assert!((s - (n as f64 - 0.5)).abs() <= 1e-10 * n as f64);
        }
    }

    #[test]
    fn effective_kernel_requires_positive_rate() {
        let err = effective_kernel(&presets::quadratic_growth()).unwrap_err();
        assert_eq!(err, ModelError::ZeroEffectiveRate { n: 2 });
    }

    #[test]
    fn spec_round_trip_keeps_induced_rate_implicit() {
        let spec = presets::fig2().to_spec();
        assert!(spec.fragmentation_rate.is_none());
        let back = CoefficientModel::from_spec(&spec).unwrap();
        assert_eq!(back, presets::fig2());
    }

    #[test]
    fn scaling_multiplies_rates() {
        let m = presets::fig2().scaled(3.0).unwrap();
        for n in [2usize, 10, 100] {
            assert!((m.a(n) - 3.0 * presets::fig2().a(n)).abs() < 1e-12 * m.a(n));
            assert!((m.g(n) - 3.0 * presets::fig2().g(n)).abs() < 1e-12 * m.g(n));
        }
    }
}
