//! Differential-privacy primitives: Gaussian perturbation with the noisy-SGD
//! calibration, exponential-mechanism selection, loss sensitivity, and a
//! Rényi-DP accountant for DP-SGD.
//!
//! All logarithms are natural.

mod exponential;
mod gaussian;
mod rdp;

pub use exponential::{avg_hinge_sensitivity, exponential_select, selection_probabilities};
pub use gaussian::{calibrate_base_noise, gaussian_perturb, FormulaVariant, NoiseCalibration};
pub use rdp::{calibrate_dpsgd_sigma, rdp_epsilon, RdpCurve, RDP_ORDERS};
