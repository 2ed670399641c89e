//! Rectified-flow laboratory: closed-form posterior velocities, Euler
//! sampling, a small trainable velocity network, one-step translation
//! strategies and adversarial fine-tuning on synthetic 2-D domains.

// `!(x > 0.0)` guards are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adversarial;
pub mod analytic;
pub mod data;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod nn;
pub mod numeric;
pub mod sampler;
pub mod translation;

pub use adversarial::{finetune, TrainConfig};
pub use analytic::{GaussianField, GaussianSpec, MixtureField, MixtureSpec};
pub use error::{Error, Result};
pub use metrics::{frechet_distance, structure_score, GaussianSummary};
pub use nn::{DiscParams, NetParams, PretrainConfig};
pub use numeric::{LatentVector, RngState, Timestep};
pub use sampler::{DomainTag, Schedule, Trajectory, VelocityField};
pub use translation::{InversionConfig, Strategy};
