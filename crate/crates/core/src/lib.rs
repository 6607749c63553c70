//! Contrastive pretraining with a GradCAM fitting branch.
//!
//! A MoCo-style encoder pair is trained with an auxiliary low-capacity branch
//! that learns to reproduce the GradCAM of the contrastive objective. At
//! inference the branch output becomes an attention mask for weighted
//! pooling of the final feature map.

pub mod cli;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod model;
pub mod nn;
pub mod params;
pub mod rationale;
pub mod tensor;
pub mod training;
pub mod variants;

pub use error::{Error, Result};
