//! Social context-aware re-ranking for character search in video.
//!
//! Gallery detections in a scene are scored against every character query by
//! combining visual similarity with a social context graph built from the
//! scene's most confident detection and a per-scene relation prior.
//!
//! The numeric core is generic over [`Real`] (`f32` or `f64`); the plain type
//! names default to `f64` and `*32` aliases cover single precision.

pub mod com;
pub mod drwm;
pub mod error;
pub mod experiment;
pub mod formats;
pub mod gradcheck;
pub mod graph;
pub mod linear;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod scalar;
pub mod simulator;

pub use error::{Error, Result};
pub use linear::LinearHead;
pub use model::{
    CharacterId, ContextFeatures, Dataset, Dims, GalleryDetection, ModalityMask, Query, RelationType, Scene,
    SocialEdge, SocialGraph,
};
pub use pipeline::{rank_dataset, BalanceStrategy, Mode, RunConfig, RunOutput};
pub use scalar::Real;
pub use simulator::{generate_movie, SimulatorConfig};

pub type Dataset32 = model::Dataset<f32>;
pub type Scene32 = model::Scene<f32>;
pub type LinearHead32 = linear::LinearHead<f32>;
pub type RelationPrior32 = drwm::RelationPrior<f32>;
pub type RunOutput32 = pipeline::RunOutput<f32>;
