//! The deconvolution model: links, constants, data, variational state,
//! log-joint densities and the ELBO.

pub mod data;
pub mod elbo;
pub mod hyper;
pub mod joint;
pub mod link;
pub mod state;

pub use data::{Dataset, GroundTruth};
pub use elbo::{elbo, log_q, sample_latent, ElboEstimate};
pub use hyper::{Concentration, Hyperparameters};
pub use joint::{linear_predictor, log_joint, log_lik_obs, partial_log_joint, Block, FactorCache};
pub use link::{Domain, Link, ObsFamily};
pub use state::{FactorParams, LatentPoint, LocalParams, Remainder, VariationalState, MU_Q_SCALE};
