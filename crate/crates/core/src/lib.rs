//! Small-scale denoising diffusion models with a sequence-aware training
//! loss, estimation-gap analysis, and numerical verification of the loss
//! bounds, on 2-D synthetic datasets.

pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod forward;
pub mod gap;
pub mod metrics;
pub mod predictor;
pub mod sampler;
pub mod schedule;
pub mod svg;
pub mod training;

pub use error::{Error, Result};
pub use forward::DataBatch;
pub use schedule::NoiseSchedule;
