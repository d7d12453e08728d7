//! Numerical tools for the discrete growth-decay-fragmentation equation
//!
//! `df_n/dt = g_{n-1} f_{n-1} - theta_n f_n + d_{n+1} f_{n+1} + sum_{i>n} a_i b_{n,i} f_i`
//!
//! truncated at a finite size `N`: kernel construction, hypothesis checks,
//! time integration, Perron eigenpairs and long-time asymptotics.

pub mod aeg;
pub mod conditions;
pub mod config;
pub mod dynamics;
pub mod linalg;
pub mod model;
pub mod operators;
pub mod spaces;
pub mod spectral;

pub use model::{CoefficientModel, FragmentationKernel, ModelError, Psi, Rate};
pub use spaces::{NormFlavor, StateVector};

/// Library version embedded in every output file.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
