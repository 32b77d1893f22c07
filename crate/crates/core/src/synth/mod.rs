//! Synthetic stereo scenes with exact ground truth.
//!
//! A scene is a rigid stereo rig moving past a static background while one
//! or more planar rigid objects move through the view. Everything is a pure
//! function of (config, seed): the generator produces ground-truth geometry,
//! the renderer produces the pipeline inputs (instance masks, flow fields
//! and perturbed initial reconstructions) in the same formats the real
//! pipeline consumes, and the scorer registers a reconstructed trajectory
//! against the ground truth.
//!
//! Objects are planar patches, so the dense flow fields derived from the
//! known geometry are exact on every mask pixel; non-object pixels carry
//! the flow of the backdrop plane.

mod config;
pub mod fixtures;
mod render;
mod scene;
mod score;

pub use config::{MotionConfig, NoiseConfig, ObjectConfig, SceneConfig};
pub use render::{render_observations, RenderedInputs};
pub use scene::{generate_scene, load_scene, save_scene, ObjectGroundTruth, SceneGroundTruth};
pub use score::{rigid_align, score_trajectory, ScoreReport};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene config: {0}")]
    InvalidConfig(String),
    #[error("could not satisfy the visibility invariant in {attempts} attempts")]
    InfeasibleScene { attempts: usize },
    #[error("trajectory does not match the scene: {0}")]
    FrameMismatch(String),
    #[error("{path}: {message}")]
    ParseError { path: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
