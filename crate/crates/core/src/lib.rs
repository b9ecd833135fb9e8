//! Robust non-negative matrix factorization with explicit outlier modeling,
//! a differentially-private training mode that perturbs the dictionary
//! gradient's sufficient statistics with Gaussian noise, and a Renyi-DP
//! accountant reporting the overall `(epsilon, delta)` spend.
//!
//! ```
//! use dpnmf::{data, fit, Hyperparams};
//!
//! let (v, _, _) = data::synth_lowrank(10, 40, 2, 7).unwrap();
//! let hp = Hyperparams { outer_iters: 50, eta_h: 5.0, eta_w: 1.0, ..Hyperparams::new(2) };
//! let out = fit(&v, &hp, Some(&v)).unwrap();
//! assert!(out.trajectory.last().unwrap().objective.unwrap() < 0.05);
//! ```

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod accountant;
pub mod data;
pub mod error;
pub mod federation;
pub mod init;
pub mod matrix;
pub mod metrics;
pub mod privacy;
pub mod solver;

pub use accountant::{compose, overall_epsilon, rdp_gaussian, to_dp, PrivacySpend, RdpCurve};
pub use error::{Error, Result};
pub use federation::{run_protocol, AnalystMsg, Channel, CuratorMsg, InProcessChannel, ProtocolRun};
pub use init::{init_outliers, nndsvd};
pub use matrix::{
    loss, project_nonneg, project_unit_ball_columns, soft_threshold, Coefficients, DataMatrix,
    Dictionary, Hyperparams, Outliers,
};
pub use metrics::{masked_rmse, objective_value, top_k_terms};
pub use privacy::{
    fit_dp, gaussian_sigma, perturb_statistics, sensitivity_a, sensitivity_b, NoisyStatistics,
    PrivacyParams, PrivateFit,
};
pub use solver::{fit, fit_with, Constraints, Fit, IterationRecord, Statistics, Trajectory};

pub use ndarray;
