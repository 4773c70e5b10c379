//! Surrogate models: cubic RBF (plain and interval-sampled ensemble) and a
//! Gaussian process with expected improvement, plus the integer GA that
//! maximises the latter.

pub mod ga;
pub mod gp;
pub mod rbf;

pub use ga::{ga_maximize, GaConfig};
pub use gp::{expected_improvement, expected_improvement_normal, gp_fit, gp_predict, GpModel};
pub use rbf::{
    rbf_ensemble_fit, rbf_ensemble_stats, rbf_fit, rbf_predict, RbfEnsemble, RbfModel, RbfSystem,
};
