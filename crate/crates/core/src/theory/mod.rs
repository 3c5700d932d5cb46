//! Verification oracles. Each check returns a [`VerificationReport`] whose
//! verdict can be recomputed from its stored numbers.

mod campaign;
mod orderings;
mod report;
mod risk;
mod separation;
mod trend;

pub use campaign::*;
pub use orderings::*;
pub use report::*;
pub use risk::*;
pub use separation::*;
pub use trend::*;
