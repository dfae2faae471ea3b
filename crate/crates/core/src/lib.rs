//! Layout planning with LLMs: a CSS-style layout language, exemplar
//! retrieval, prompt assembly, completion backends, and evaluation metrics
//! for 2D image layouts, 3D indoor scenes, and human keypoints.

pub mod ablation;
pub mod backend;
pub mod bench;
pub mod dsl;
pub mod embed;
pub mod error;
pub mod eval2d;
pub mod eval3d;
pub mod model;
pub mod pipeline;
pub mod prompt;
pub mod records;
pub mod render;
pub mod retrieval;

pub use error::{Error, Result};
