//! Small dense linear algebra and special functions.

mod linalg;
mod matrix;
mod optim;
mod special;

pub use linalg::{
    discrete_lyapunov, floor_eigenvalues, inverse, log_2x2, mat_exp, psd_factor, spectral_radius, symmetric_eigen,
    CholeskyFactor,
};
pub use matrix::Matrix;
pub use optim::{nelder_mead, MinimizeResult, NelderMeadOptions};
pub use special::{chi2_cdf, chi2_quantile, normal_log_density, normal_pdf_cdf, regularized_lower_gamma};
