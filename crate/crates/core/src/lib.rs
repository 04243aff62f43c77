//! Semi-private learning of linear halfspaces.
//!
//! A public, unlabelled sample fixes a low-dimensional principal subspace; a
//! private, labelled sample is projected onto it and a linear classifier is
//! trained there under differential privacy, then lifted back.

pub mod data;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod mechanisms;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod spectral;
pub mod synth;

pub use data::{HalfspaceModel, Label, LabeledDataset, PrivacyBudget, PrivacyMode, UnlabeledDataset};
pub use error::{Error, Result};
pub use rng::Rng;
