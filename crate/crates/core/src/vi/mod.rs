//! Black-box variational inference for the parametric model.

pub mod bbvi;
pub mod cluster;
pub mod estimator;
pub mod fit;
pub mod init;
pub mod schedule;
pub mod update;

pub use bbvi::{bbvi_step, block_gradient, GlobalView};
pub use estimator::{score_gradient, GradientEstimate, GradientEstimatorState, RmsProp};
pub use fit::{fit_parametric, iteration, ConvergenceMonitor, FitMode, FitOptions, FitReport, FitSession, FitWarning};
pub use init::initialize;
pub use schedule::{LearningRateSchedule, Schedules};
pub use update::{update_mu_sigma, GlobalUpdate};
