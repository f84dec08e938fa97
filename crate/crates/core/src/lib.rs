//! Non-neural core of a grounded scene-understanding system.
//!
//! - [`frames`]: verb frames and caption templates
//! - [`swig`]: SWiG annotation and prediction files
//! - [`geometry`]: boxes, run-length masks, disjointness, point coverage
//! - [`metrics`]: the five SWiG metrics under the three verb settings
//! - [`segmenter`]: box-prompted segmentation backends
//! - [`pipeline`]: scene bundles
//! - [`roi`]: point and region queries
//! - [`numerics`]: ReLU/GELU and a small convergence lab
//! - [`bench`]: per-stage pipeline timing
//!
//! With the default `parallel` feature the batch paths run on rayon;
//! without it they run sequentially with identical results.

pub mod bench;
pub mod frames;
pub mod geometry;
pub mod metrics;
pub mod numerics;
pub mod par;
pub mod pipeline;
pub mod roi;
pub mod segmenter;
pub mod swig;

pub use frames::{FrameLexicon, Role, VerbFrame};
pub use geometry::{BoundingBox, EntityMask, MaskSet, Point, RleMask};
pub use metrics::{EvalConfig, EvalReport, Setting};
pub use pipeline::{GroundedSituation, SceneBundle};
pub use roi::{QueryMode, ResolveResult};
