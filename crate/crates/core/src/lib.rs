//! Interactive volumetric segmentation primitives.

pub mod volume;
pub mod transforms;
pub mod metrics;
pub mod clicksim;
pub mod baselines;
