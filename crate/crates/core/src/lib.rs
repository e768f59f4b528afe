//! Face-dataset bias analysis, synthetic data generation, enhancement and
//! quality metrics.

pub mod dataset;
pub mod image;
pub mod bias;
pub mod metrics;
pub mod nets;
pub mod skin_gan;
pub mod ergan;
pub mod enhance;
pub mod pipeline;
