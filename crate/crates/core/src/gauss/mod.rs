//! Gaussian building blocks: univariate tails, Cholesky utilities, orthant
//! probabilities and truncated multivariate normal sampling.

pub mod chol;
pub mod mvn_cdf;
pub mod normal;
pub mod tmvn;

pub use mvn_cdf::{mvn_cdf, mvn_cdf_with, CdfConfig, CdfEstimate, OrthantProblem};
pub use tmvn::{TmvnConfig, TmvnMethod, TruncatedMvn};
