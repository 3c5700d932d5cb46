//! Bi-level re-weighting of generated training samples.
//!
//! A classifier is trained on a small labeled set plus many generated samples
//! of unknown quality. Generated samples receive no labels; they are tied to
//! their origin through a triplet loss and regularized by a consistency loss,
//! and a weight network decides how much each one counts. The weight network
//! is trained on the gradient of the clean loss taken through the classifier
//! update.
//!
//! Modules:
//! - [`datasim`]: Gaussian-cluster originals and a simulated augmentation whose
//!   failures form an extra class.
//! - [`models`], [`losses`]: networks and objectives as autodiff graphs.
//! - [`trainer`]: the alternating optimizer, baselines, ablations, checkpoints.
//! - [`theory`]: checks of the risk identities, bounds and orderings.
//! - [`io`]: CSV and JSON formats.

pub mod datasim;
pub mod error;
pub mod io;
pub mod losses;
pub mod models;
pub mod rng;
pub mod theory;
pub mod trainer;

pub use error::{Error, Result};
