//! Feature selection and prediction for longitudinal data with many
//! correlated features: correlation-network screening followed by
//! mixed-effects model trees.

pub mod bench;
pub mod error;
mod linalg;
pub mod corr_net;
pub mod mixed_model;
pub mod model_tree;
pub mod panel_data;
pub mod pipeline;
pub mod simulate;

pub use error::{Error, Result};
