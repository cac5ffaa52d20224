pub mod error;
pub mod geometry;
pub mod real;
pub mod scene;
pub mod seed;
pub mod render;
pub mod spatial;
pub mod metrics;
pub mod embed;
pub mod localize;
pub mod eval;

pub use error::{Error, Result};

/// Double-precision instantiations of the generic core types.
pub type Pose = scene::Pose<f64>;
pub type FloorPlan = scene::FloorPlan<f64>;
pub type FurnishedScene = scene::FurnishedScene<f64>;
pub type Scene3D = scene::Scene3D<f64>;
pub type PanoDepth = render::PanoDepth<f64>;
pub type Embedding = embed::Embedding<f64>;
pub type EncoderParams = embed::EncoderParams<f64>;
pub type GridDatabase = localize::GridDatabase<f64>;
pub type LocalizationResult = localize::LocalizationResult<f64>;

/// Single-precision instantiations.
pub mod single {
    use super::*;

    pub type Pose = scene::Pose<f32>;
    pub type FloorPlan = scene::FloorPlan<f32>;
    pub type FurnishedScene = scene::FurnishedScene<f32>;
    pub type Scene3D = scene::Scene3D<f32>;
    pub type PanoDepth = render::PanoDepth<f32>;
    pub type Embedding = embed::Embedding<f32>;
    pub type EncoderParams = embed::EncoderParams<f32>;
    pub type GridDatabase = localize::GridDatabase<f32>;
    pub type LocalizationResult = localize::LocalizationResult<f32>;
}
